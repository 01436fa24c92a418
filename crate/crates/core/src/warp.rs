//! Spatial sampling, displacement composition, scaling-and-squaring
//! integration of stationary velocity fields, and Jacobian statistics.
//!
//! Fields are stored component-major: a 2-D field on an `H×W` grid is a
//! tensor of shape `[2, H, W]`, and component `k` displaces along tensor axis
//! `k`. A displacement `u` maps `x ↦ x + u(x)`; warping an image `I` by `u`
//! yields `I(x + u(x))`. Coordinates falling outside the grid are clamped to
//! the border for both sampling and difference stencils.

use std::path::Path;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ndt, numel, Scalar, Tape, Tensor, Var};

/// Default number of squaring steps (δ = 2⁻⁷).
pub const DEFAULT_STEPS: u32 = 7;

macro_rules! field_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name<T: Scalar = f32>(Tensor<T>);

        impl<T: Scalar> $name<T> {
            /// Wraps a `[rank, spatial...]` tensor.
            pub fn new(t: Tensor<T>) -> Result<Self> {
                check_field_shape(t.shape())?;
                Ok(Self(t))
            }

            pub fn zeros(spatial: &[usize]) -> Self {
                let mut shape = vec![spatial.len()];
                shape.extend_from_slice(spatial);
                Self(Tensor::zeros(&shape))
            }

            pub fn tensor(&self) -> &Tensor<T> {
                &self.0
            }

            pub fn into_tensor(self) -> Tensor<T> {
                self.0
            }

            pub fn spatial(&self) -> &[usize] {
                &self.0.shape()[1..]
            }

            pub fn rank(&self) -> usize {
                self.0.shape()[0]
            }

            /// Vector at flat spatial index `s`.
            pub fn vector(&self, s: usize) -> Vec<T> {
                let n = numel(self.spatial());
                (0..self.rank()).map(|k| self.0.data()[k * n + s]).collect()
            }

            pub fn scale(&self, c: T) -> Self {
                Self(self.0.map(|x| x * c))
            }
        }
    };
}

field_type!(
    /// Stationary velocity field in grid cells.
    VelocityField
);
field_type!(
    /// Displacement `u` with `φ(x) = x + u(x)`; the identity is `u ≡ 0`.
    DisplacementField
);

impl<T: Scalar> VelocityField<T> {
    pub fn negate(&self) -> Self {
        self.scale(-T::one())
    }
}

fn check_field_shape(shape: &[usize]) -> Result<()> {
    match shape {
        [2, _, _] | [3, _, _, _] => Ok(()),
        _ => Err(Error::invalid(format!(
            "field must have shape [2,H,W] or [3,H,W,D], got {shape:?}"
        ))),
    }
}

/// Fraction of non-positive Jacobian determinants and mean `||J| - 1|`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    pub frac_nonpos: f64,
    pub mean_abs_dev: f64,
}

/// Sidecar metadata written next to field files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMeta {
    pub kind: FieldKind,
    #[serde(rename = "N")]
    pub steps: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Displacement,
    Velocity,
}

/// Writes `tensor` as NDT1 plus a `.json` sidecar with the field kind.
pub fn write_field<T: Scalar>(path: &Path, tensor: &Tensor<T>, meta: &FieldMeta) -> Result<()> {
    ndt::write(path, tensor)?;
    let side = path.with_extension("json");
    let text = serde_json::to_string(meta)?;
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))
}

pub fn read_field_meta(path: &Path) -> Result<FieldMeta> {
    let side = path.with_extension("json");
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// interpolation kernels

/// Clamped linear-interpolation footprint along one axis.
#[derive(Clone, Copy)]
struct Axis<T> {
    i0: usize,
    i1: usize,
    w: T,
    inside: bool,
}

#[inline]
fn axis<T: Scalar>(pos: T, n: usize) -> Axis<T> {
    if n == 1 {
        return Axis {
            i0: 0,
            i1: 0,
            w: T::zero(),
            inside: false,
        };
    }
    let max = T::of((n - 1) as f64);
    let inside = pos >= T::zero() && pos <= max;
    let p = pos.max(T::zero()).min(max);
    let mut i0 = p.floor().to_usize().unwrap_or(0);
    if i0 >= n - 1 {
        i0 = n - 2;
    }
    Axis {
        i0,
        i1: i0 + 1,
        w: p - T::of(i0 as f64),
        inside,
    }
}

/// Bilinear / trilinear sampling of a `[channels, spatial...]` image at
/// `x + u(x)`. `spatial` has length 2 or 3.
fn sample_forward<T: Scalar>(img: &[T], field: &[T], spatial: &[usize]) -> Vec<T> {
    let n = numel(spatial);
    let channels = img.len() / n;
    let mut out = vec![T::zero(); img.len()];
    match *spatial {
        [h, w] => {
            for i in 0..h {
                for j in 0..w {
                    let s = i * w + j;
                    let ay = axis(T::of(i as f64) + field[s], h);
                    let ax = axis(T::of(j as f64) + field[n + s], w);
                    let (wy, wx) = (ay.w, ax.w);
                    for c in 0..channels {
                        let im = &img[c * n..(c + 1) * n];
                        let a = im[ay.i0 * w + ax.i0];
                        let b = im[ay.i0 * w + ax.i1];
                        let cc = im[ay.i1 * w + ax.i0];
                        let d = im[ay.i1 * w + ax.i1];
                        out[c * n + s] = (T::one() - wy) * ((T::one() - wx) * a + wx * b)
                            + wy * ((T::one() - wx) * cc + wx * d);
                    }
                }
            }
        }
        [d0, d1, d2] => {
            for i in 0..d0 {
                for j in 0..d1 {
                    for k in 0..d2 {
                        let s = (i * d1 + j) * d2 + k;
                        let az = axis(T::of(i as f64) + field[s], d0);
                        let ay = axis(T::of(j as f64) + field[n + s], d1);
                        let ax = axis(T::of(k as f64) + field[2 * n + s], d2);
                        for c in 0..channels {
                            let im = &img[c * n..(c + 1) * n];
                            let mut acc = T::zero();
                            for (zi, wz) in [(az.i0, T::one() - az.w), (az.i1, az.w)] {
                                for (yi, wy) in [(ay.i0, T::one() - ay.w), (ay.i1, ay.w)] {
                                    for (xi, wx) in [(ax.i0, T::one() - ax.w), (ax.i1, ax.w)] {
                                        acc += wz * wy * wx * im[(zi * d1 + yi) * d2 + xi];
                                    }
                                }
                            }
                            out[c * n + s] = acc;
                        }
                    }
                }
            }
        }
        _ => unreachable!("spatial rank checked by caller"),
    }
    out
}

#[allow(clippy::type_complexity)]
fn sample_backward<T: Scalar>(
    img: &[T],
    field: &[T],
    spatial: &[usize],
    g: &[T],
    need_img: bool,
    need_field: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let n = numel(spatial);
    let channels = img.len() / n;
    let mut gi = need_img.then(|| vec![T::zero(); img.len()]);
    let mut gf = need_field.then(|| vec![T::zero(); field.len()]);
    let one = T::one();
    match *spatial {
        [h, w] => {
            for i in 0..h {
                for j in 0..w {
                    let s = i * w + j;
                    let ay = axis(T::of(i as f64) + field[s], h);
                    let ax = axis(T::of(j as f64) + field[n + s], w);
                    let (wy, wx) = (ay.w, ax.w);
                    let (c00, c01, c10, c11) = (
                        ay.i0 * w + ax.i0,
                        ay.i0 * w + ax.i1,
                        ay.i1 * w + ax.i0,
                        ay.i1 * w + ax.i1,
                    );
                    let (mut dy, mut dx) = (T::zero(), T::zero());
                    for c in 0..channels {
                        let go = g[c * n + s];
                        if go == T::zero() {
                            continue;
                        }
                        if let Some(gi) = gi.as_mut() {
                            let base = c * n;
                            gi[base + c00] += go * (one - wy) * (one - wx);
                            gi[base + c01] += go * (one - wy) * wx;
                            gi[base + c10] += go * wy * (one - wx);
                            gi[base + c11] += go * wy * wx;
                        }
                        if need_field {
                            let im = &img[c * n..(c + 1) * n];
                            let (a, b, cc, d) = (im[c00], im[c01], im[c10], im[c11]);
                            dy += go * ((one - wx) * (cc - a) + wx * (d - b));
                            dx += go * ((one - wy) * (b - a) + wy * (d - cc));
                        }
                    }
                    if let Some(gf) = gf.as_mut() {
                        if ay.inside {
                            gf[s] += dy;
                        }
                        if ax.inside {
                            gf[n + s] += dx;
                        }
                    }
                }
            }
        }
        [d0, d1, d2] => {
            for i in 0..d0 {
                for j in 0..d1 {
                    for k in 0..d2 {
                        let s = (i * d1 + j) * d2 + k;
                        let ax3 = [
                            axis(T::of(i as f64) + field[s], d0),
                            axis(T::of(j as f64) + field[n + s], d1),
                            axis(T::of(k as f64) + field[2 * n + s], d2),
                        ];
                        let mut dpos = [T::zero(); 3];
                        for c in 0..channels {
                            let go = g[c * n + s];
                            if go == T::zero() {
                                continue;
                            }
                            let im = &img[c * n..(c + 1) * n];
                            for cz in 0..2 {
                                for cy in 0..2 {
                                    for cx in 0..2 {
                                        let idx = |a: &Axis<T>, bit: usize| if bit == 0 { a.i0 } else { a.i1 };
                                        let wgt = |a: &Axis<T>, bit: usize| if bit == 0 { one - a.w } else { a.w };
                                        let dw = |bit: usize| if bit == 0 { -one } else { one };
                                        let off = (idx(&ax3[0], cz) * d1 + idx(&ax3[1], cy)) * d2 + idx(&ax3[2], cx);
                                        let (w0, w1, w2) = (wgt(&ax3[0], cz), wgt(&ax3[1], cy), wgt(&ax3[2], cx));
                                        if let Some(gi) = gi.as_mut() {
                                            gi[c * n + off] += go * w0 * w1 * w2;
                                        }
                                        if need_field {
                                            let v = go * im[off];
                                            dpos[0] += v * dw(cz) * w1 * w2;
                                            dpos[1] += v * w0 * dw(cy) * w2;
                                            dpos[2] += v * w0 * w1 * dw(cx);
                                        }
                                    }
                                }
                            }
                        }
                        if let Some(gf) = gf.as_mut() {
                            for a in 0..3 {
                                if ax3[a].inside {
                                    gf[a * n + s] += dpos[a];
                                }
                            }
                        }
                    }
                }
            }
        }
        _ => unreachable!("spatial rank checked by caller"),
    }
    (gi, gf)
}

fn check_sample_shapes(image: &[usize], field: &[usize]) -> Result<Vec<usize>> {
    check_field_shape(field).map_err(|_| Error::shape("sample", image, field))?;
    let spatial = &field[1..];
    let ok = image == spatial || (image.len() == spatial.len() + 1 && &image[1..] == spatial);
    if !ok {
        return Err(Error::shape("sample", image, field));
    }
    Ok(spatial.to_vec())
}

// ---------------------------------------------------------------------------
// differentiable operations

/// Warps `image` (`[spatial...]` or `[channels, spatial...]`) by the
/// displacement `field` with clamped linear interpolation. Differentiable
/// with respect to both inputs.
pub fn sample_var<T: Scalar>(image: &Var<T>, field: &Var<T>) -> Result<Var<T>> {
    let spatial = check_sample_shapes(image.shape(), field.shape())?;
    let img = Rc::clone(&image.value);
    let fld = Rc::clone(&field.value);
    let data = sample_forward(&img, &fld, &spatial);
    Ok(image.tape().record(
        "sample",
        &[image, field],
        image.shape().to_vec(),
        data,
        move |g, need| {
            let (gi, gf) = sample_backward(&img, &fld, &spatial, g, need[0], need[1]);
            vec![gi, gf]
        },
    ))
}

/// `φ_f ∘ φ_g`: returns `u_g + u_f ∘ (id + u_g)`.
pub fn compose_var<T: Scalar>(f: &Var<T>, g: &Var<T>) -> Result<Var<T>> {
    if f.shape() != g.shape() {
        return Err(Error::shape("compose", f.shape(), g.shape()));
    }
    g.add(&sample_var(f, g)?)
}

/// Scaling and squaring: `u = v / 2^steps`, then `u ← u ∘ u` `steps` times.
pub fn integrate_var<T: Scalar>(v: &Var<T>, steps: u32) -> Result<Var<T>> {
    check_field_shape(v.shape())?;
    if steps == 0 {
        return Err(Error::invalid("integrate_velocity needs at least one squaring step"));
    }
    let mut u = v.scale(T::of(0.5f64.powi(steps as i32)));
    for _ in 0..steps {
        u = compose_var(&u, &u)?;
    }
    Ok(u)
}

// ---------------------------------------------------------------------------
// plain-value operations

/// Warps `image` by `field` (see [`sample_var`]).
pub fn sample<T: Scalar>(image: &Tensor<T>, field: &DisplacementField<T>) -> Result<Tensor<T>> {
    let spatial = check_sample_shapes(image.shape(), field.tensor().shape())?;
    let data = sample_forward(image.data(), field.tensor().data(), &spatial);
    Tensor::new(image.shape(), data)
}

/// Nearest-neighbour warp of an integer label image stored as floats.
pub fn sample_nearest<T: Scalar>(labels: &Tensor<T>, field: &DisplacementField<T>) -> Result<Tensor<T>> {
    let spatial = check_sample_shapes(labels.shape(), field.tensor().shape())?;
    let n = numel(&spatial);
    let channels = labels.len() / n;
    let fd = field.tensor().data();
    let strides = crate::tensor::strides(&spatial);
    let mut out = vec![T::zero(); labels.len()];
    let mut idx = vec![0usize; spatial.len()];
    for s in 0..n {
        let mut rem = s;
        for (a, st) in strides.iter().enumerate() {
            idx[a] = rem / st;
            rem %= st;
        }
        let mut src = 0;
        for a in 0..spatial.len() {
            let p = (T::of(idx[a] as f64) + fd[a * n + s]).round();
            let p = p.max(T::zero()).min(T::of((spatial[a] - 1) as f64));
            src += p.to_usize().unwrap_or(0) * strides[a];
        }
        for c in 0..channels {
            out[c * n + s] = labels.data()[c * n + src];
        }
    }
    Tensor::new(labels.shape(), out)
}

/// `φ_f ∘ φ_g` (see [`compose_var`]).
pub fn compose<T: Scalar>(f: &DisplacementField<T>, g: &DisplacementField<T>) -> Result<DisplacementField<T>> {
    if f.tensor().shape() != g.tensor().shape() {
        return Err(Error::shape("compose", f.tensor().shape(), g.tensor().shape()));
    }
    let spatial = g.spatial().to_vec();
    let warped = sample_forward(f.tensor().data(), g.tensor().data(), &spatial);
    let data = g.tensor().data().iter().zip(&warped).map(|(&a, &b)| a + b).collect();
    DisplacementField::new(Tensor::new(g.tensor().shape(), data)?)
}

/// Integrates a stationary velocity field by scaling and squaring.
pub fn integrate_velocity<T: Scalar>(v: &VelocityField<T>, steps: u32) -> Result<DisplacementField<T>> {
    if steps == 0 {
        return Err(Error::invalid("integrate_velocity needs at least one squaring step"));
    }
    let mut u = DisplacementField(v.tensor().map(|x| x * T::of(0.5f64.powi(steps as i32))));
    for _ in 0..steps {
        u = compose(&u, &u)?;
    }
    Ok(u)
}

/// Runs [`integrate_var`] on a throwaway tape; handy for checking that the
/// tape path and the plain path agree.
pub fn integrate_on_tape<T: Scalar>(v: &VelocityField<T>, steps: u32) -> Result<DisplacementField<T>> {
    let tape = Tape::new();
    let u = integrate_var(&tape.constant(v.tensor()), steps)?;
    DisplacementField::new(u.to_tensor())
}

// ---------------------------------------------------------------------------
// Jacobian analytics

/// Derivative of component plane `plane` along `axis` at flat index `s`:
/// central differences inside, one-sided at the borders.
fn partial<T: Scalar>(plane: &[T], spatial: &[usize], strides: &[usize], idx: &[usize], axis: usize, s: usize) -> f64 {
    let n = spatial[axis];
    let st = strides[axis];
    let i = idx[axis];
    let v = |off: usize| plane[off].as_f64();
    if i == 0 {
        v(s + st) - v(s)
    } else if i == n - 1 {
        v(s) - v(s - st)
    } else {
        0.5 * (v(s + st) - v(s - st))
    }
}

/// Per-cell determinant of `I + ∇u`.
pub fn jacobian_determinant<T: Scalar>(u: &DisplacementField<T>) -> Result<Tensor<f64>> {
    let spatial = u.spatial().to_vec();
    if spatial.iter().any(|&d| d < 3) {
        return Err(Error::invalid(format!(
            "jacobian needs at least 3 cells per axis, got {spatial:?}"
        )));
    }
    let rank = spatial.len();
    let n = numel(&spatial);
    let strides = crate::tensor::strides(&spatial);
    let data = u.tensor().data();
    let mut det = vec![0.0f64; n];
    let mut idx = vec![0usize; rank];
    for (s, out) in det.iter_mut().enumerate() {
        let mut rem = s;
        for (a, st) in strides.iter().enumerate() {
            idx[a] = rem / st;
            rem %= st;
        }
        let mut j = [[0.0f64; 3]; 3];
        for (c, row) in j.iter_mut().enumerate().take(rank) {
            let plane = &data[c * n..(c + 1) * n];
            for (a, cell) in row.iter_mut().enumerate().take(rank) {
                *cell = partial(plane, &spatial, &strides, &idx, a, s) + if a == c { 1.0 } else { 0.0 };
            }
        }
        *out = if rank == 2 {
            j[0][0] * j[1][1] - j[0][1] * j[1][0]
        } else {
            j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
                + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0])
        };
    }
    Tensor::new(&spatial, det)
}

/// Statistics of `det(I + ∇u)`; with `interior_only` the border cells are
/// excluded.
pub fn jacobian_stats<T: Scalar>(u: &DisplacementField<T>, interior_only: bool) -> Result<JacobianStats> {
    let det = jacobian_determinant(u)?;
    let spatial = det.shape().to_vec();
    let strides = crate::tensor::strides(&spatial);
    let (mut nonpos, mut dev, mut count) = (0usize, 0.0f64, 0usize);
    for (s, &d) in det.data().iter().enumerate() {
        if interior_only {
            let mut rem = s;
            let mut border = false;
            for (a, st) in strides.iter().enumerate() {
                let i = rem / st;
                rem %= st;
                border |= i == 0 || i == spatial[a] - 1;
            }
            if border {
                continue;
            }
        }
        count += 1;
        if d <= 0.0 {
            nonpos += 1;
        }
        dev += (d - 1.0).abs();
    }
    Ok(JacobianStats {
        frac_nonpos: nonpos as f64 / count as f64,
        mean_abs_dev: dev / count as f64,
    })
}
