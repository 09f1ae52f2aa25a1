//! Weighted Euclidean distance transform of binary masks.
//!
//! Exact squared distances come from the separable lower-envelope algorithm
//! of Felzenszwalb and Huttenlocher, applied once per axis with the physical
//! voxel spacing.

use ndarray::{Array3, ArrayView3, Axis};

use crate::error::{validation, Result};

/// Distance (mm) from every inside voxel to the nearest background voxel,
/// scaled so the maximum inside value equals `inside_weight`. Background
/// voxels map to 0 and an all-zero mask maps to all zeros. A mask without
/// any background voxel maps to `inside_weight` everywhere.
///
/// `spacing` is `[dz, dy, dx]` for a `(z, y, x)` volume. Voxels beyond the
/// volume boundary are not treated as background.
pub fn distance_transform(mask: ArrayView3<u8>, spacing: [f64; 3], inside_weight: f64) -> Result<Array3<f64>> {
    if !(inside_weight > 0.0 && inside_weight.is_finite()) {
        return validation(format!("inside_weight must be positive, got {inside_weight}"));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return validation("distance transform spacing must be positive");
    }
    if mask.iter().any(|&v| v > 1) {
        return validation("distance transform requires a binary mask");
    }

    let mut sq = mask.mapv(|v| if v == 1 { f64::INFINITY } else { 0.0 });
    if !sq.iter().any(|v| v.is_infinite()) {
        return Ok(Array3::zeros(mask.dim()));
    }
    if sq.iter().all(|v| v.is_infinite()) {
        return Ok(Array3::from_elem(mask.dim(), inside_weight));
    }

    let mut envelope = Envelope::default();
    for (axis, &step) in spacing.iter().enumerate() {
        let n = sq.len_of(Axis(axis));
        let mut line = vec![0.0; n];
        let mut out = vec![0.0; n];
        for mut lane in sq.lanes_mut(Axis(axis)) {
            line.iter_mut().zip(lane.iter()).for_each(|(d, s)| *d = *s);
            envelope.transform(&line, step, &mut out);
            lane.iter_mut().zip(out.iter()).for_each(|(d, s)| *d = *s);
        }
    }

    let max_sq = sq.iter().copied().fold(0.0_f64, f64::max);
    let max = max_sq.sqrt();
    Ok(sq.mapv(|d| if d > 0.0 { inside_weight * d.sqrt() / max } else { 0.0 }))
}

/// Scratch buffers for the 1D squared-distance transform.
#[derive(Default)]
struct Envelope {
    vertices: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    /// `out[q] = min_p ((q - p)·step)^2 + f[p]`, skipping infinite `f[p]`.
    fn transform(&mut self, f: &[f64], step: f64, out: &mut [f64]) {
        self.vertices.clear();
        self.bounds.clear();
        let pos = |i: usize| i as f64 * step;
        for q in 0..f.len() {
            if f[q].is_infinite() {
                continue;
            }
            let xq = pos(q);
            let left = loop {
                let Some(&p) = self.vertices.last() else {
                    break f64::NEG_INFINITY;
                };
                let xp = pos(p);
                let s = ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp));
                if s <= *self.bounds.last().expect("bounds track vertices") {
                    self.vertices.pop();
                    self.bounds.pop();
                } else {
                    break s;
                }
            };
            self.vertices.push(q);
            self.bounds.push(left);
        }
        if self.vertices.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let xq = pos(q);
            while k + 1 < self.vertices.len() && self.bounds[k + 1] < xq {
                k += 1;
            }
            let p = self.vertices[k];
            let d = xq - pos(p);
            *o = d * d + f[p];
        }
    }
}
