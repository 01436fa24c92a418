//! The recursive linear-attention cell and bidirectional encoding.

use rand::Rng;

use super::params::{glorot, Bound, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// Parameters of one direction of one layer, bound to a tape.
pub struct CellParams<T: Scalar> {
    pub ln_x: (Var<T>, Var<T>),
    pub ln_h: (Var<T>, Var<T>),
    pub ln_a: (Var<T>, Var<T>),
    pub wq: Var<T>,
    pub wk: Var<T>,
    pub wv: Var<T>,
    pub w1: Var<T>,
    pub b1: Var<T>,
    pub w2: Var<T>,
    pub b2: Var<T>,
}

const NAMES: [&str; 13] = [
    "ln_x.g", "ln_x.b", "ln_h.g", "ln_h.b", "ln_a.g", "ln_a.b", "wq", "wk", "wv", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
];

impl<T: Scalar> CellParams<T> {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, c: usize, rng: &mut R) -> Result<()> {
        for name in NAMES {
            let t = match name {
                "ln_x.g" | "ln_h.g" | "ln_a.g" => Tensor::full(&[c], T::one()),
                "ln_x.b" | "ln_h.b" | "ln_a.b" | "ffn.b2" => Tensor::zeros(&[c]),
                "wq" | "wk" | "wv" => glorot(rng, 2 * c, c, 1.0),
                "ffn.w1" => glorot(rng, c, 2 * c, 1.0),
                "ffn.b1" => Tensor::zeros(&[2 * c]),
                "ffn.w2" => glorot(rng, 2 * c, c, 1.0),
                _ => unreachable!(),
            };
            store.insert(format!("{prefix}.{name}"), t)?;
        }
        Ok(())
    }

    pub fn bind(params: &Bound<T>, prefix: &str) -> Result<Self> {
        let v = |n: &str| params.var(&format!("{prefix}.{n}")).cloned();
        Ok(Self {
            ln_x: (v("ln_x.g")?, v("ln_x.b")?),
            ln_h: (v("ln_h.g")?, v("ln_h.b")?),
            ln_a: (v("ln_a.g")?, v("ln_a.b")?),
            wq: v("wq")?,
            wk: v("wk")?,
            wv: v("wv")?,
            w1: v("ffn.w1")?,
            b1: v("ffn.b1")?,
            w2: v("ffn.w2")?,
            b2: v("ffn.b2")?,
        })
    }
}

fn ln<T: Scalar>(x: &Var<T>, p: &(Var<T>, Var<T>)) -> Result<Var<T>> {
    x.layer_norm(&p.0, &p.1, T::of(LN_EPS))
}

/// `Q'(K'ᵀV)` with `Q' = elu(x W_Q) + 1`, `K' = elu(x W_K) + 1`, `V = x W_V`
/// for `x` of shape `[P, 2C]`. Costs O(P·C²).
pub fn linear_attention<T: Scalar>(x: &Var<T>, wq: &Var<T>, wk: &Var<T>, wv: &Var<T>) -> Result<Var<T>> {
    let q = x.matmul(wq)?.elu().shift(T::one());
    let k = x.matmul(wk)?.elu().shift(T::one());
    let v = x.matmul(wv)?;
    q.matmul(&k.transpose()?.matmul(&v)?)
}

/// One recursion step. Returns `(f_t, h_t)`.
pub fn cell_step<T: Scalar>(x: &Var<T>, h: &Var<T>, pos: &Var<T>, p: &CellParams<T>) -> Result<(Var<T>, Var<T>)> {
    if x.shape() != h.shape() || x.shape() != pos.shape() || x.shape().len() != 2 {
        return Err(Error::shape("cell_step", x.shape(), h.shape()));
    }
    let xn = ln(&x.add(pos)?, &p.ln_x)?;
    let hn = ln(&h.add(pos)?, &p.ln_h)?;
    let cat = Var::concat_last(&[&xn, &hn])?;
    let a = linear_attention(&cat, &p.wq, &p.wk, &p.wv)?;
    let h_next = a.add(&hn)?;
    let hidden = ln(&a.add(&xn)?, &p.ln_a)?.matmul(&p.w1)?.add(&p.b1)?.elu();
    let f = hidden.matmul(&p.w2)?.add(&p.b2)?;
    Ok((f, h_next))
}

/// Runs `fwd` left to right and, when given, `bwd` right to left from zero
/// hidden states, and sums the two feature sequences.
pub fn bidirectional_encode<T: Scalar>(
    xs: &[Var<T>],
    pos: &[Var<T>],
    fwd: &CellParams<T>,
    bwd: Option<&CellParams<T>>,
) -> Result<Vec<Var<T>>> {
    if xs.len() < 2 {
        return Err(Error::invalid(format!("encoding needs at least 2 frames, got {}", xs.len())));
    }
    if pos.len() != xs.len() {
        return Err(Error::invalid("one positional encoding per frame is required"));
    }
    let tape = xs[0].tape();
    let zeros = tape.constant(&Tensor::zeros(xs[0].shape()));
    let mut out = Vec::with_capacity(xs.len());
    let mut h = zeros.clone();
    for (x, p) in xs.iter().zip(pos) {
        let (f, next) = cell_step(x, &h, p, fwd)?;
        out.push(f);
        h = next;
    }
    if let Some(bwd) = bwd {
        let mut h = zeros;
        for t in (0..xs.len()).rev() {
            let (f, next) = cell_step(&xs[t], &h, &pos[t], bwd)?;
            out[t] = out[t].add(&f)?;
            h = next;
        }
    }
    Ok(out)
}
