//! Differentiable primitives recorded on the tape.

use std::rc::Rc;

use super::{numel, strides, Scalar, Var};
use crate::error::{Error, Result};

/// Trailing-dimension broadcast of two shapes.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out_shape`, the flat index of the broadcast source
/// element in `in_shape`. `None` when the shapes are identical.
fn broadcast_map(out_shape: &[usize], in_shape: &[usize]) -> Option<Rc<Vec<usize>>> {
    if out_shape == in_shape {
        return None;
    }
    let rank = out_shape.len();
    let offset = rank - in_shape.len();
    let in_strides = strides(in_shape);
    // stride 0 along broadcast axes
    let eff: Vec<usize> = (0..rank)
        .map(|i| {
            if i < offset || in_shape[i - offset] == 1 {
                0
            } else {
                in_strides[i - offset]
            }
        })
        .collect();
    let n = numel(out_shape);
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        map.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Some(Rc::new(map))
}

fn reduce_to<T: Scalar>(g: Vec<T>, map: &Option<Rc<Vec<usize>>>, in_len: usize) -> Vec<T> {
    match map {
        None => g,
        Some(m) => {
            let mut out = vec![T::zero(); in_len];
            for (gi, &src) in g.iter().zip(m.iter()) {
                out[src] += *gi;
            }
            out
        }
    }
}

#[inline]
fn gather<T: Copy>(data: &[T], map: &Option<Rc<Vec<usize>>>, i: usize) -> T {
    match map {
        None => data[i],
        Some(m) => data[m[i]],
    }
}

/// Elementwise primitive kinds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Ln,
    Sqrt,
    Square,
    Relu,
    Elu,
    Softplus,
    Sigmoid,
}

impl Elementwise {
    fn name(self) -> &'static str {
        match self {
            Elementwise::Add => "add",
            Elementwise::Sub => "sub",
            Elementwise::Mul => "mul",
            Elementwise::Div => "div",
            Elementwise::Neg => "neg",
            Elementwise::Exp => "exp",
            Elementwise::Ln => "ln",
            Elementwise::Sqrt => "sqrt",
            Elementwise::Square => "square",
            Elementwise::Relu => "relu",
            Elementwise::Elu => "elu",
            Elementwise::Softplus => "softplus",
            Elementwise::Sigmoid => "sigmoid",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(
            self,
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul | Elementwise::Div
        )
    }
}

#[inline]
fn elu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Var<T> {
    /// Dispatches an elementwise primitive; `other` is required for binary kinds.
    pub fn elementwise(&self, kind: Elementwise, other: Option<&Var<T>>) -> Result<Var<T>> {
        match (kind.is_binary(), other) {
            (true, Some(b)) => self.binary(kind, b),
            (true, None) => Err(Error::invalid(format!("{} needs two operands", kind.name()))),
            (false, None) => Ok(self.unary(kind)),
            (false, Some(_)) => Err(Error::invalid(format!("{} takes one operand", kind.name()))),
        }
    }

    fn binary(&self, kind: Elementwise, other: &Var<T>) -> Result<Var<T>> {
        let op = kind.name();
        let out_shape = broadcast_shape(&self.shape, &other.shape)
            .ok_or_else(|| Error::shape(op, &self.shape, &other.shape))?;
        let n = numel(&out_shape);
        let map_a = broadcast_map(&out_shape, &self.shape);
        let map_b = broadcast_map(&out_shape, &other.shape);
        let (a, b) = (Rc::clone(&self.value), Rc::clone(&other.value));
        let f: fn(T, T) -> T = match kind {
            Elementwise::Add => |x, y| x + y,
            Elementwise::Sub => |x, y| x - y,
            Elementwise::Mul => |x, y| x * y,
            Elementwise::Div => |x, y| x / y,
            _ => unreachable!(),
        };
        let data: Vec<T> = if map_a.is_none() && map_b.is_none() {
            a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n)
                .map(|i| f(gather(&a, &map_a, i), gather(&b, &map_b, i)))
                .collect()
        };
        let (la, lb) = (a.len(), b.len());
        Ok(self.tape.record(op, &[self, other], out_shape, data, move |g, need| {
            let ga = need[0].then(|| {
                let local: Vec<T> = match kind {
                    Elementwise::Add | Elementwise::Sub => g.to_vec(),
                    Elementwise::Mul => (0..g.len()).map(|i| g[i] * gather(&b, &map_b, i)).collect(),
                    Elementwise::Div => (0..g.len()).map(|i| g[i] / gather(&b, &map_b, i)).collect(),
                    _ => unreachable!(),
                };
                reduce_to(local, &map_a, la)
            });
            let gb = need[1].then(|| {
                let local: Vec<T> = match kind {
                    Elementwise::Add => g.to_vec(),
                    Elementwise::Sub => g.iter().map(|&x| -x).collect(),
                    Elementwise::Mul => (0..g.len()).map(|i| g[i] * gather(&a, &map_a, i)).collect(),
                    Elementwise::Div => (0..g.len())
                        .map(|i| {
                            let bv = gather(&b, &map_b, i);
                            -g[i] * gather(&a, &map_a, i) / (bv * bv)
                        })
                        .collect(),
                    _ => unreachable!(),
                };
                reduce_to(local, &map_b, lb)
            });
            vec![ga, gb]
        }))
    }

    fn unary(&self, kind: Elementwise) -> Var<T> {
        let x = Rc::clone(&self.value);
        let f: fn(T) -> T = match kind {
            Elementwise::Neg => |v: T| -v,
            Elementwise::Exp => |v: T| v.exp(),
            Elementwise::Ln => |v: T| v.ln(),
            Elementwise::Sqrt => |v: T| v.sqrt(),
            Elementwise::Square => |v: T| v * v,
            Elementwise::Relu => |v: T| v.max(T::zero()),
            Elementwise::Elu => elu::<T>,
            Elementwise::Softplus => softplus::<T>,
            Elementwise::Sigmoid => sigmoid::<T>,
            _ => unreachable!(),
        };
        let y = Rc::new(x.iter().map(|&v| f(v)).collect::<Vec<T>>());
        let y_out = y.to_vec();
        self.tape.record(kind.name(), &[self], self.shape.to_vec(), y_out, move |g, _| {
            let two = T::of(2.0);
            let half = T::of(0.5);
            let d: Vec<T> = match kind {
                Elementwise::Neg => g.iter().map(|&v| -v).collect(),
                Elementwise::Exp => g.iter().zip(y.iter()).map(|(&g, &y)| g * y).collect(),
                Elementwise::Ln => g.iter().zip(x.iter()).map(|(&g, &x)| g / x).collect(),
                Elementwise::Sqrt => g.iter().zip(y.iter()).map(|(&g, &y)| g * half / y).collect(),
                Elementwise::Square => g.iter().zip(x.iter()).map(|(&g, &x)| two * g * x).collect(),
                Elementwise::Relu => g
                    .iter()
                    .zip(x.iter())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect(),
                Elementwise::Elu => g
                    .iter()
                    .zip(x.iter().zip(y.iter()))
                    .map(|(&g, (&x, &y))| if x > T::zero() { g } else { g * (y + T::one()) })
                    .collect(),
                Elementwise::Softplus => g.iter().zip(x.iter()).map(|(&g, &x)| g * sigmoid(x)).collect(),
                Elementwise::Sigmoid => g
                    .iter()
                    .zip(y.iter())
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect(),
                _ => unreachable!(),
            };
            vec![Some(d)]
        })
    }

    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(Elementwise::Add, other)
    }

    pub fn sub(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(Elementwise::Sub, other)
    }

    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(Elementwise::Mul, other)
    }

    pub fn div(&self, other: &Var<T>) -> Result<Var<T>> {
        self.binary(Elementwise::Div, other)
    }

    pub fn neg(&self) -> Var<T> {
        self.unary(Elementwise::Neg)
    }

    pub fn exp(&self) -> Var<T> {
        self.unary(Elementwise::Exp)
    }

    pub fn ln(&self) -> Var<T> {
        self.unary(Elementwise::Ln)
    }

    pub fn sqrt(&self) -> Var<T> {
        self.unary(Elementwise::Sqrt)
    }

    pub fn square(&self) -> Var<T> {
        self.unary(Elementwise::Square)
    }

    pub fn relu(&self) -> Var<T> {
        self.unary(Elementwise::Relu)
    }

    pub fn elu(&self) -> Var<T> {
        self.unary(Elementwise::Elu)
    }

    pub fn softplus(&self) -> Var<T> {
        self.unary(Elementwise::Softplus)
    }

    pub fn sigmoid(&self) -> Var<T> {
        self.unary(Elementwise::Sigmoid)
    }

    /// `c * self`
    pub fn scale(&self, c: T) -> Var<T> {
        let data = self.value.iter().map(|&v| v * c).collect();
        self.tape.record("scale", &[self], self.shape.to_vec(), data, move |g, _| {
            vec![Some(g.iter().map(|&v| v * c).collect())]
        })
    }

    /// `self + c`
    pub fn shift(&self, c: T) -> Var<T> {
        let data = self.value.iter().map(|&v| v + c).collect();
        self.tape.record("shift", &[self], self.shape.to_vec(), data, |g, _| {
            vec![Some(g.to_vec())]
        })
    }

    /// Clamp to `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&self, lo: T, hi: T) -> Var<T> {
        let x = Rc::clone(&self.value);
        let data = x.iter().map(|&v| v.max(lo).min(hi)).collect();
        self.tape.record("clamp", &[self], self.shape.to_vec(), data, move |g, _| {
            vec![Some(
                g.iter()
                    .zip(x.iter())
                    .map(|(&g, &x)| if x >= lo && x <= hi { g } else { T::zero() })
                    .collect(),
            )]
        })
    }

    /// Sum of all elements, shape `[]`. Accumulates in f64.
    pub fn sum(&self) -> Var<T> {
        let s: f64 = self.value.iter().map(|v| v.as_f64()).sum();
        let n = self.value.len();
        self.tape.record("sum", &[self], Vec::new(), vec![T::of(s)], move |g, _| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.value.len();
        self.sum().scale(T::of(1.0 / n as f64))
    }

    /// Sum over the last axis, keeping it with extent 1.
    pub fn sum_last(&self) -> Var<T> {
        let c = *self.shape.last().unwrap_or(&1);
        let rows = self.value.len() / c.max(1);
        let data: Vec<T> = (0..rows)
            .map(|r| self.value[r * c..(r + 1) * c].iter().copied().sum())
            .collect();
        let mut shape = self.shape.to_vec();
        if let Some(last) = shape.last_mut() {
            *last = 1;
        }
        self.tape.record("sum_last", &[self], shape, data, move |g, _| {
            let mut out = Vec::with_capacity(rows * c);
            for &gr in g.iter().take(rows) {
                out.extend(std::iter::repeat_n(gr, c));
            }
            vec![Some(out)]
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<T>> {
        if numel(shape) != self.value.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(self
            .tape
            .record("reshape", &[self], shape.to_vec(), self.value.to_vec(), |g, _| {
                vec![Some(g.to_vec())]
            }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<T>> {
        let r = self.shape.len();
        if r < 2 {
            return Err(Error::invalid(format!(
                "transpose needs rank >= 2, got {:?}",
                &*self.shape
            )));
        }
        let (m, n) = (self.shape[r - 2], self.shape[r - 1]);
        let batch = self.value.len() / (m * n);
        let data = transpose_blocks(&self.value, batch, m, n);
        let mut shape = self.shape.to_vec();
        shape.swap(r - 2, r - 1);
        Ok(self.tape.record("transpose", &[self], shape, data, move |g, _| {
            vec![Some(transpose_blocks(g, batch, n, m))]
        }))
    }

    /// Matrix product with trailing-dimension broadcasting of batch axes.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        let (sa, sb) = (&self.shape, &other.shape);
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let n = sb[sb.len() - 1];
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let batch_shape = broadcast_shape(ba, bb).ok_or_else(|| Error::shape("matmul", sa, sb))?;
        let nb = numel(&batch_shape);
        let map_a = broadcast_map(&batch_shape, ba);
        let map_b = broadcast_map(&batch_shape, bb);
        let (a, b) = (Rc::clone(&self.value), Rc::clone(&other.value));
        let mut data = vec![T::zero(); nb * m * n];
        for bi in 0..nb {
            let ia = map_a.as_ref().map_or(bi, |mp| mp[bi]);
            let ib = map_b.as_ref().map_or(bi, |mp| mp[bi]);
            gemm(
                &a[ia * m * k..(ia + 1) * m * k],
                &b[ib * k * n..(ib + 1) * k * n],
                &mut data[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = batch_shape.clone();
        shape.extend_from_slice(&[m, n]);
        let (la, lb) = (a.len(), b.len());
        Ok(self.tape.record("matmul", &[self, other], shape, data, move |g, need| {
            let mut ga = need[0].then(|| vec![T::zero(); la]);
            let mut gb = need[1].then(|| vec![T::zero(); lb]);
            for bi in 0..nb {
                let ia = map_a.as_ref().map_or(bi, |mp| mp[bi]);
                let ib = map_b.as_ref().map_or(bi, |mp| mp[bi]);
                let gblk = &g[bi * m * n..(bi + 1) * m * n];
                if let Some(ga) = ga.as_mut() {
                    // ga += g · bᵀ
                    let bblk = &b[ib * k * n..(ib + 1) * k * n];
                    let out = &mut ga[ia * m * k..(ia + 1) * m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = T::zero();
                            for j in 0..n {
                                s += gblk[i * n + j] * bblk[p * n + j];
                            }
                            out[i * k + p] += s;
                        }
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    // gb += aᵀ · g
                    let ablk = &a[ia * m * k..(ia + 1) * m * k];
                    let out = &mut gb[ib * k * n..(ib + 1) * k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = ablk[i * k + p];
                            if av == T::zero() {
                                continue;
                            }
                            let row = &mut out[p * n..(p + 1) * n];
                            for (o, &gv) in row.iter_mut().zip(&gblk[i * n..(i + 1) * n]) {
                                *o += av * gv;
                            }
                        }
                    }
                }
            }
            vec![ga, gb]
        }))
    }

    /// Concatenation along the last axis.
    pub fn concat_last(parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let lead = &first.shape[..first.shape.len() - 1];
        let rows = numel(lead);
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape.last().unwrap()).collect();
        for p in parts {
            if &p.shape[..p.shape.len() - 1] != lead {
                return Err(Error::shape("concat", &first.shape, &p.shape));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.value[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let tape = first.tape.clone();
        Ok(tape.record("concat", parts, shape, data, move |g, need| {
            let mut offset = 0;
            let mut out = Vec::with_capacity(widths.len());
            for (pi, &w) in widths.iter().enumerate() {
                if need[pi] {
                    let mut gp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    out.push(Some(gp));
                } else {
                    out.push(None);
                }
                offset += w;
            }
            out
        }))
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack(parts: &[&Var<T>]) -> Result<Var<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        for p in parts {
            if p.shape != first.shape {
                return Err(Error::shape("stack", &first.shape, &p.shape));
            }
        }
        let n = first.value.len();
        let mut data = Vec::with_capacity(n * parts.len());
        for p in parts {
            data.extend_from_slice(&p.value);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        let count = parts.len();
        let tape = first.tape.clone();
        Ok(tape.record("stack", parts, shape, data, move |g, need| {
            (0..count)
                .map(|i| need[i].then(|| g[i * n..(i + 1) * n].to_vec()))
                .collect()
        }))
    }

    /// Slice `index` of the leading axis.
    pub fn select(&self, index: usize) -> Result<Var<T>> {
        let lead = *self
            .shape
            .first()
            .ok_or_else(|| Error::invalid("select on a scalar"))?;
        if index >= lead {
            return Err(Error::invalid(format!(
                "select index {index} out of range for shape {:?}",
                &*self.shape
            )));
        }
        let inner = self.shape[1..].to_vec();
        let n = numel(&inner);
        let total = self.value.len();
        let data = self.value[index * n..(index + 1) * n].to_vec();
        Ok(self.tape.record("select", &[self], inner, data, move |g, _| {
            let mut out = vec![T::zero(); total];
            out[index * n..(index + 1) * n].copy_from_slice(g);
            vec![Some(out)]
        }))
    }

    /// `out[i] = self[src[i]]`; the adjoint scatters.
    pub(crate) fn gather_flat(&self, src: Rc<Vec<usize>>, shape: Vec<usize>) -> Result<Var<T>> {
        if numel(&shape) != src.len() {
            return Err(Error::invalid("gather: index map does not match output shape"));
        }
        let data = src.iter().map(|&i| self.value[i]).collect();
        let n_in = self.value.len();
        Ok(self.tape.record("gather", &[self], shape, data, move |g, _| {
            let mut out = vec![T::zero(); n_in];
            for (&gv, &i) in g.iter().zip(src.iter()) {
                out[i] += gv;
            }
            vec![Some(out)]
        }))
    }

    /// Layer normalization over the last axis followed by `gamma * x + beta`.
    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        let c = *self.shape.last().unwrap_or(&0);
        if c == 0 || self.shape.is_empty() {
            return Err(Error::invalid("layer_norm needs a non-empty last axis"));
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::shape("layer_norm", &self.shape, gamma.shape()));
        }
        if eps <= T::zero() {
            return Err(Error::invalid("layer_norm eps must be positive"));
        }
        let rows = self.value.len() / c;
        let cf = T::of(c as f64);
        let mut xhat = vec![T::zero(); rows * c];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * c];
        let (gm, bt) = (Rc::clone(&gamma.value), Rc::clone(&beta.value));
        for r in 0..rows {
            let row = &self.value[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = gm[j] * h + bt[j];
            }
        }
        Ok(self.tape.record(
            "layer_norm",
            &[self, gamma, beta],
            self.shape.to_vec(),
            out,
            move |g, need| {
                let mut gx = need[0].then(|| vec![T::zero(); rows * c]);
                let mut gg = need[1].then(|| vec![T::zero(); c]);
                let mut gb = need[2].then(|| vec![T::zero(); c]);
                for r in 0..rows {
                    let gr = &g[r * c..(r + 1) * c];
                    let hr = &xhat[r * c..(r + 1) * c];
                    if let Some(gg) = gg.as_mut() {
                        for j in 0..c {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                    if let Some(gb) = gb.as_mut() {
                        for j in 0..c {
                            gb[j] += gr[j];
                        }
                    }
                    if let Some(gx) = gx.as_mut() {
                        let mut mean_d = T::zero();
                        let mut mean_dh = T::zero();
                        for j in 0..c {
                            let d = gr[j] * gm[j];
                            mean_d += d;
                            mean_dh += d * hr[j];
                        }
                        mean_d = mean_d / cf;
                        mean_dh = mean_dh / cf;
                        for j in 0..c {
                            let d = gr[j] * gm[j];
                            gx[r * c + j] = inv_std[r] * (d - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
                vec![gx, gg, gb]
            },
        ))
    }
}

fn transpose_blocks<T: Scalar>(src: &[T], batch: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for b in 0..batch {
        let (s, d) = (&src[b * m * n..(b + 1) * m * n], &mut out[b * m * n..(b + 1) * m * n]);
        for i in 0..m {
            for j in 0..n {
                d[j * m + i] = s[i * n + j];
            }
        }
    }
    out
}

/// `out = a · b` for row-major `a: m×k`, `b: k×n`.
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn var(tape: &Tape<f64>, shape: &[usize], data: &[f64]) -> Var<f64> {
        tape.param(&Tensor::new(shape, data.to_vec()).unwrap())
    }

    #[test]
    fn add_and_relu_examples() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(&Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        let r = tape.constant(&Tensor::new(&[3], vec![-2.0, 0.0, 3.0]).unwrap());
        assert_eq!(r.relu().data(), &[0.0, 0.0, 3.0]);
    }

    #[test]
    fn elu_values() {
        let tape = Tape::<f64>::new();
        let x = var(&tape, &[2], &[0.0, -1.0]);
        let y = x.elu();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - ((-1.0f64).exp() - 1.0)).abs() < 1e-12);
        assert!((y.data()[1] + 0.6321).abs() < 1e-4);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let tape = Tape::<f32>::new();
        let a = tape.constant(&Tensor::zeros(&[2, 3]));
        let b = tape.constant(&Tensor::zeros(&[4]));
        let err = a.mul(&b).unwrap_err().to_string();
        assert!(err.contains("mul") && err.contains("[2, 3]") && err.contains("[4]"), "{err}");
        let err = a.matmul(&b.reshape(&[4, 1]).unwrap()).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[4, 1, 3], &[5, 1]), Some(vec![4, 5, 3]));
        assert_eq!(broadcast_shape(&[3], &[2, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shape(&[2], &[3]), None);
        assert_eq!(broadcast_shape(&[], &[2, 2]), Some(vec![2, 2]));
    }

    #[test]
    fn broadcast_gradient_reduces() {
        let tape = Tape::<f64>::new();
        let a = var(&tape, &[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = var(&tape, &[3], &[1.0, 1.0, 1.0]);
        let loss = a.mul(&b).unwrap().sum();
        let g = loss.backward().unwrap();
        assert_eq!(g.get(&b).unwrap(), &[5.0, 7.0, 9.0]);
        assert_eq!(g.get(&a).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn matmul_identity_and_orthogonal() {
        let tape = Tape::<f32>::new();
        let eye = tape.constant(&Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = tape.constant(&Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(eye.matmul(&m).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
        let r = tape.constant(&Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
        let c = tape.constant(&Tensor::new(&[2, 1], vec![0.0, 1.0]).unwrap());
        let p = r.matmul(&c).unwrap();
        assert_eq!(p.shape(), &[1, 1]);
        assert_eq!(p.data(), &[0.0]);
    }

    #[test]
    fn batched_matmul_broadcasts_rhs() {
        let tape = Tape::<f64>::new();
        let a = var(&tape, &[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = var(&tape, &[2, 1], &[10.0, 1.0]);
        let y = a.matmul(&b).unwrap();
        assert_eq!(y.shape(), &[2, 1, 1]);
        assert_eq!(y.data(), &[12.0, 34.0]);
        let g = y.sum().backward().unwrap();
        assert_eq!(g.get(&b).unwrap(), &[4.0, 6.0]);
    }

    #[test]
    fn layer_norm_examples() {
        let tape = Tape::<f64>::new();
        let gamma = tape.constant(&Tensor::full(&[4], 1.0));
        let beta = tape.constant(&Tensor::zeros(&[4]));
        let x = var(&tape, &[4], &[1.0, 1.0, 1.0, 1.0]);
        let y = x.layer_norm(&gamma, &beta, 1e-5).unwrap();
        assert!(y.data().iter().all(|v| v.abs() < 1e-12));

        let gamma = tape.constant(&Tensor::full(&[2], 1.0));
        let beta = tape.constant(&Tensor::zeros(&[2]));
        let x = var(&tape, &[2], &[0.0, 2.0]);
        let y = x.layer_norm(&gamma, &beta, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_rejects_empty_channel_axis() {
        let tape = Tape::<f64>::new();
        let x = tape.scalar(1.0);
        let g = tape.scalar(1.0);
        assert!(x.layer_norm(&g, &g, 1e-5).is_err());
    }

    #[test]
    fn concat_select_stack_roundtrip() {
        let tape = Tape::<f64>::new();
        let a = var(&tape, &[2, 1], &[1.0, 2.0]);
        let b = var(&tape, &[2, 2], &[3.0, 4.0, 5.0, 6.0]);
        let c = Var::concat_last(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let s = Var::stack(&[&b, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.select(1).unwrap().data(), b.data());
        let loss = c.mul(&c).unwrap().sum();
        let g = loss.backward().unwrap();
        assert_eq!(g.get(&a).unwrap(), &[2.0, 4.0]);
    }
}
