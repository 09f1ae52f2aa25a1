//! Loss fixtures with reference values, for cross-implementation parity.

use std::fmt::Write as _;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::objective::{adj_loss_tensor, adversarial_loss, l1_tensor, total_objective, AdjKernel, LossWeights};

pub const GOLDEN_MAGIC: &str = "SPGOLDEN1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoldenExpected {
    pub adj: f64,
    pub l1: f64,
    pub adv: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenFixture {
    pub magic: String,
    pub dims: [usize; 3],
    pub pred: Vec<f64>,
    pub target: Vec<f64>,
    pub d_real: f64,
    pub d_fake: f64,
    pub weights: LossWeights,
    pub expected: GoldenExpected,
}

impl GoldenFixture {
    /// Compute the reference losses for the given inputs.
    pub fn compute(
        dims: [usize; 3],
        pred: Vec<f64>,
        target: Vec<f64>,
        d_real: f64,
        d_fake: f64,
        weights: LossWeights,
        kernel: &AdjKernel,
    ) -> Result<Self> {
        let shape = (dims[0], dims[1], dims[2]);
        let p = Array3::from_shape_vec(shape, pred.clone()).map_err(|e| crate::Error::Validation(e.to_string()))?;
        let t = Array3::from_shape_vec(shape, target.clone()).map_err(|e| crate::Error::Validation(e.to_string()))?;
        let (adj, _) = adj_loss_tensor(p.view(), kernel, weights.adjacency_threshold);
        let (l1, _) = l1_tensor(p.view(), t.view())?;
        let adv = adversarial_loss(d_real, d_fake);
        Ok(Self {
            magic: GOLDEN_MAGIC.into(),
            dims,
            pred,
            target,
            d_real,
            d_fake,
            weights,
            expected: GoldenExpected {
                adj,
                l1,
                adv,
                total: total_objective(adv, l1, adj, &weights),
            },
        })
    }

    /// JSON text with every real printed to 17 significant digits.
    pub fn to_json(&self) -> String {
        let num = |v: f64| format!("{v:.16e}");
        let list = |vs: &[f64]| vs.iter().map(|&v| num(v)).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        writeln!(s, "{{").unwrap();
        writeln!(s, "  \"magic\": \"{}\",", self.magic).unwrap();
        writeln!(s, "  \"dims\": [{}, {}, {}],", self.dims[0], self.dims[1], self.dims[2]).unwrap();
        writeln!(s, "  \"pred\": [{}],", list(&self.pred)).unwrap();
        writeln!(s, "  \"target\": [{}],", list(&self.target)).unwrap();
        writeln!(s, "  \"d_real\": {},", num(self.d_real)).unwrap();
        writeln!(s, "  \"d_fake\": {},", num(self.d_fake)).unwrap();
        writeln!(
            s,
            "  \"weights\": {{\"alpha\": {}, \"beta\": {}, \"threshold\": {}}},",
            num(self.weights.alpha),
            num(self.weights.beta),
            num(self.weights.adjacency_threshold)
        )
        .unwrap();
        let e = &self.expected;
        writeln!(
            s,
            "  \"expected\": {{\"adj\": {}, \"l1\": {}, \"adv\": {}, \"total\": {}}}",
            num(e.adj),
            num(e.l1),
            num(e.adv),
            num(e.total)
        )
        .unwrap();
        s.push_str("}\n");
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: Self = serde_json::from_str(text)?;
        if f.magic != GOLDEN_MAGIC {
            return Err(crate::Error::Header(format!("expected magic {GOLDEN_MAGIC}, got {}", f.magic)));
        }
        let n: usize = f.dims.iter().product();
        if f.pred.len() != n || f.target.len() != n {
            return validation(format!("fixture lists do not match dims {:?}", f.dims));
        }
        Ok(f)
    }
}

/// `n` fixtures on the compact plan shape; the first is all zeros.
pub fn generate_fixtures(n: usize, seed: u64, dims: [usize; 3], kernel: &AdjKernel, weights: LossWeights) -> Result<Vec<GoldenFixture>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = dims.iter().product();
    (0..n)
        .map(|i| {
            if i == 0 {
                return GoldenFixture::compute(dims, vec![0.0; len], vec![0.0; len], 0.5, 0.5, weights, kernel);
            }
            let density = rng.gen_range(0.02..0.6);
            let pred: Vec<f64> = (0..len)
                .map(|_| if rng.gen_bool(density) { rng.gen::<f64>() } else { 0.0 })
                .collect();
            let target: Vec<f64> = (0..len).map(|_| if rng.gen_bool(0.08) { 1.0 } else { 0.0 }).collect();
            let d_real = rng.gen_range(0.01..0.99);
            let d_fake = rng.gen_range(0.01..0.99);
            GoldenFixture::compute(dims, pred, target, d_real, d_fake, weights, kernel)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let fx = generate_fixtures(4, 9, [10, 13, 14], &AdjKernel::default(), LossWeights::default()).unwrap();
        assert!(fx[0].expected == GoldenExpected { adj: 0.0, l1: 0.0, adv: adversarial_loss(0.5, 0.5), total: fx[0].expected.total });
        for f in &fx {
            let text = f.to_json();
            assert!(text.contains("e"));
            let back = GoldenFixture::from_json(&text).unwrap();
            assert_eq!(&back, f);
        }
    }

    #[test]
    fn rejects_wrong_magic_and_length() {
        let f = &generate_fixtures(2, 1, [2, 2, 2], &AdjKernel::default(), LossWeights::default()).unwrap()[1];
        let bad = f.to_json().replace(GOLDEN_MAGIC, "NOPE");
        assert!(GoldenFixture::from_json(&bad).is_err());
        let mut short = f.clone();
        short.pred.pop();
        assert!(GoldenFixture::from_json(&short.to_json()).is_err());
    }
}
