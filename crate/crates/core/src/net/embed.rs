//! Patch layout, patch embedding and positional encoding.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{numel, strides, Scalar, Tensor, Var};

/// Index maps between a `p`-patch grid and pixel layout.
#[derive(Clone, Debug)]
pub struct PatchGrid {
    spatial: Vec<usize>,
    patch: usize,
    patches: usize,
    /// `(patch, local)` → flat pixel index.
    to_pixel: Rc<Vec<usize>>,
    /// Flat index of each of the `3^rank` clamped neighbours of every pixel.
    neighbors: Rc<Vec<usize>>,
}

impl PatchGrid {
    pub fn new(spatial: &[usize], patch: usize) -> Result<Self> {
        if !(spatial.len() == 2 || spatial.len() == 3) {
            return Err(Error::invalid(format!("frames must be 2-D or 3-D, got {spatial:?}")));
        }
        if patch == 0 {
            return Err(Error::invalid("patch size must be positive"));
        }
        for &d in spatial {
            if d % patch != 0 {
                return Err(Error::invalid(format!(
                    "patch size {patch} does not divide spatial extent {d}"
                )));
            }
        }
        let rank = spatial.len();
        let counts: Vec<usize> = spatial.iter().map(|d| d / patch).collect();
        let patches = numel(&counts);
        let local = patch.pow(rank as u32);
        let st = strides(spatial);
        let cst = strides(&counts);
        let lst = strides(&vec![patch; rank]);
        let mut to_pixel = Vec::with_capacity(patches * local);
        for pi in 0..patches {
            for li in 0..local {
                let mut flat = 0;
                for a in 0..rank {
                    let g = (pi / cst[a]) % counts[a];
                    let l = (li / lst[a]) % patch;
                    flat += (g * patch + l) * st[a];
                }
                to_pixel.push(flat);
            }
        }
        let n = numel(spatial);
        let offsets = 3usize.pow(rank as u32);
        let mut neighbors = Vec::with_capacity(n * offsets);
        let mut idx = vec![0usize; rank];
        for s in 0..n {
            let mut rem = s;
            for a in 0..rank {
                idx[a] = rem / st[a];
                rem %= st[a];
            }
            for o in 0..offsets {
                let mut flat = 0;
                let mut code = o;
                for a in (0..rank).rev() {
                    let d = (code % 3) as isize - 1;
                    code /= 3;
                    let i = (idx[a] as isize + d).clamp(0, spatial[a] as isize - 1) as usize;
                    flat += i * st[a];
                }
                neighbors.push(flat);
            }
        }
        Ok(Self {
            spatial: spatial.to_vec(),
            patch,
            patches,
            to_pixel: Rc::new(to_pixel),
            neighbors: Rc::new(neighbors),
        })
    }

    pub fn spatial(&self) -> &[usize] {
        &self.spatial
    }

    pub fn rank(&self) -> usize {
        self.spatial.len()
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    /// Number of patches `P`.
    pub fn patches(&self) -> usize {
        self.patches
    }

    /// Pixels per patch, `p^rank`.
    pub fn local(&self) -> usize {
        self.patch.pow(self.rank() as u32)
    }

    pub fn pixels(&self) -> usize {
        numel(&self.spatial)
    }

    pub(crate) fn neighbors(&self) -> Rc<Vec<usize>> {
        Rc::clone(&self.neighbors)
    }

    /// `[T, spatial...]` (or `[spatial...]`) → `[T, P, p^rank]`.
    pub fn patchify<T: Scalar>(&self, frames: &Var<T>) -> Result<Var<T>> {
        let sh = frames.shape();
        let t = if sh == self.spatial.as_slice() {
            1
        } else if sh.len() == self.spatial.len() + 1 && sh[1..] == self.spatial[..] {
            sh[0]
        } else {
            return Err(Error::shape("patchify", sh, &self.spatial));
        };
        let n = self.pixels();
        let map: Vec<usize> = (0..t)
            .flat_map(|ti| self.to_pixel.iter().map(move |&p| ti * n + p))
            .collect();
        frames.gather_flat(Rc::new(map), vec![t, self.patches, self.local()])
    }

    /// `[P, k·p^rank]` with per-patch blocks `[k, local]` → `[k, spatial...]`.
    pub fn unpatchify<T: Scalar>(&self, x: &Var<T>, k: usize) -> Result<Var<T>> {
        let local = self.local();
        if x.shape() != [self.patches, k * local] {
            return Err(Error::shape("unpatchify", x.shape(), &[self.patches, k * local]));
        }
        let n = self.pixels();
        let mut map = vec![0usize; k * n];
        for pi in 0..self.patches {
            for li in 0..local {
                let pix = self.to_pixel[pi * local + li];
                for c in 0..k {
                    map[c * n + pix] = pi * k * local + c * local + li;
                }
            }
        }
        let mut shape = vec![k];
        shape.extend_from_slice(&self.spatial);
        x.gather_flat(Rc::new(map), shape)
    }
}

/// Linear projection of each flattened patch: `[.., P, p^rank] → [.., P, C]`.
pub fn patch_embed<T: Scalar>(patches: &Var<T>, w: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    patches.matmul(w)?.add(b)
}

/// Sinusoidal temporal table `p̃os_t` for one time index: even channels
/// `sin(t·n^{−2k/C})`, odd channels `cos(t·n^{−2k/C})`.
pub fn temporal_encoding<T: Scalar>(t: usize, channels: usize, n: f64) -> Result<Tensor<T>> {
    if !channels.is_multiple_of(2) {
        return Err(Error::invalid(format!("positional encoding needs even channels, got {channels}")));
    }
    if n <= 1.0 {
        return Err(Error::invalid(format!("positional scale must exceed 1, got {n}")));
    }
    Ok(Tensor::from_fn(&[channels], |i| {
        let k = i / 2;
        let arg = t as f64 * n.powf(-2.0 * k as f64 / channels as f64);
        T::of(if i % 2 == 0 { arg.sin() } else { arg.cos() })
    }))
}

/// `pos_t = ṗos ⊙ p̃os_t`, shape `[P, C]`.
pub fn positional_encoding<T: Scalar>(spatial: &Var<T>, t: usize, n: f64) -> Result<Var<T>> {
    let c = *spatial.shape().last().unwrap_or(&0);
    let table = temporal_encoding(t, c, n)?;
    spatial.mul(&spatial.tape().constant(&table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn patch_counts() {
        let g = PatchGrid::new(&[16, 16], 8).unwrap();
        assert_eq!(g.patches(), 4);
        assert_eq!(g.patches() * g.local(), g.pixels());
        let err = PatchGrid::new(&[16, 12], 8).unwrap_err().to_string();
        assert!(err.contains('8') && err.contains("12"));
    }

    #[test]
    fn patch_order_is_row_major() {
        let g = PatchGrid::new(&[4, 4], 2).unwrap();
        let tape = Tape::<f64>::new();
        let img = tape.constant(&Tensor::from_fn(&[4, 4], |s| s as f64));
        let p = g.patchify(&img).unwrap();
        assert_eq!(p.shape(), [1, 4, 4]);
        assert_eq!(&p.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&p.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn unpatchify_inverts_patchify() {
        for spatial in [vec![8, 8], vec![4, 4, 4]] {
            let g = PatchGrid::new(&spatial, 2).unwrap();
            let tape = Tape::<f64>::new();
            let n = g.pixels();
            let img = tape.constant(&Tensor::from_fn(&spatial, |s| (s as f64).sin()));
            let p = g.patchify(&img).unwrap().reshape(&[g.patches(), g.local()]).unwrap();
            let back = g.unpatchify(&p, 1).unwrap();
            assert_eq!(back.data(), img.data());
            assert_eq!(back.len(), n);
        }
    }

    #[test]
    fn zero_frame_embeds_to_bias() {
        let g = PatchGrid::new(&[16, 16], 8).unwrap();
        let tape = Tape::<f64>::new();
        let frame = tape.constant(&Tensor::zeros(&[16, 16]));
        let w = tape.constant(&Tensor::from_fn(&[64, 3], |s| s as f64 * 0.01));
        let b = tape.constant(&Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        let e = patch_embed(&g.patchify(&frame).unwrap(), &w, &b).unwrap();
        assert_eq!(e.shape(), [1, 4, 3]);
        for row in e.data().chunks(3) {
            assert_eq!(row, [0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn orthonormal_round_trip() {
        // Householder reflection: symmetric and orthogonal.
        let (k, n) = (64, 64);
        let v: Vec<f64> = (0..k).map(|i| (i as f64 * 0.37).cos()).collect();
        let vv: f64 = v.iter().map(|x| x * x).sum();
        let q = Tensor::from_fn(&[k, n], |s| {
            let (i, j) = (s / n, s % n);
            (if i == j { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[j] / vv
        });
        let g = PatchGrid::new(&[16, 16], 8).unwrap();
        let tape = Tape::<f64>::new();
        let frame = tape.constant(&Tensor::from_fn(&[16, 16], |s| (s as f64 * 0.11).sin()));
        let w = tape.constant(&q);
        let zero = tape.constant(&Tensor::zeros(&[n]));
        let e = patch_embed(&g.patchify(&frame).unwrap(), &w, &zero).unwrap();
        let back = e.reshape(&[4, n]).unwrap().matmul(&w.transpose().unwrap()).unwrap();
        let img = g.unpatchify(&back, 1).unwrap();
        let diff = img.data().iter().zip(frame.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-5);
    }

    #[test]
    fn temporal_table_values() {
        let t0 = temporal_encoding::<f64>(0, 8, 1e4).unwrap();
        for (i, v) in t0.data().iter().enumerate() {
            assert_eq!(*v, if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        let t1 = temporal_encoding::<f64>(1, 8, 1e4).unwrap();
        assert!((t1.data()[0] - 0.8415).abs() < 1e-4);
        assert!(t1.data().iter().all(|v| v.abs() <= 1.0));
        assert!(temporal_encoding::<f64>(0, 7, 1e4).is_err());
        // lowest frequency is k = C/2 − 1; one full period apart the rows agree there
        let c = 8;
        let k = c / 2 - 1;
        let freq = 1e4f64.powf(-2.0 * k as f64 / c as f64);
        let period = (2.0 * std::f64::consts::PI / freq).round() as usize;
        let a = temporal_encoding::<f64>(3, c, 1e4).unwrap();
        let b = temporal_encoding::<f64>(3 + period, c, 1e4).unwrap();
        let i = 2 * k;
        assert!((a.data()[i] - b.data()[i]).abs() < 0.05);
        assert!((a.data()[i + 1] - b.data()[i + 1]).abs() < 0.05);
    }
}
