//! Token-wise two-layer MLP on kept tokens.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::nn::{apply_inplace, gelu, join, LayerNorm, Linear, Parameters};
use crate::sparsify::{gather_tokens, scatter_tokens, FeatureMap};
use crate::stca::SparsificationMap;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub channels: usize,
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl MlpParams {
    pub fn init<R: Rng + ?Sized>(channels: usize, expansion: usize, rng: &mut R) -> Self {
        Self {
            channels,
            norm: LayerNorm::new(channels),
            fc1: Linear::init(channels, expansion * channels, 1.0, rng),
            fc2: Linear::init(expansion * channels, channels, 0.5, rng),
        }
    }
}

impl Parameters for MlpParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.norm.visit(&join(prefix, "norm"), f);
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [f64])) {
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// `x + fc2(gelu(fc1(norm(x))))` on token rows.
fn residual_mlp(p: &MlpParams, tokens: &[f64], ops: &mut u64) -> Result<Vec<f64>> {
    let h = p.norm.forward(tokens, ops);
    let mut h = p.fc1.forward(&h, ops)?;
    apply_inplace(&mut h, gelu, ops);
    let h = p.fc2.forward(&h, ops)?;
    *ops += tokens.len() as u64;
    Ok(tokens.iter().zip(&h).map(|(a, b)| a + b).collect())
}

pub fn sparse_mlp(x: &FeatureMap, map: &SparsificationMap, p: &MlpParams, ops: &mut u64) -> Result<FeatureMap> {
    if x.channels() != p.channels {
        return Err(shape_err!("sparse MLP expects {} channels, got {}", p.channels, x.channels()));
    }
    let ts = gather_tokens(x, map)?;
    if ts.is_empty() {
        return Ok(x.clone());
    }
    let out = residual_mlp(p, ts.values(), ops)?;
    scatter_tokens(&ts.with_values(p.channels, out)?, x)
}

pub fn dense_mlp(x: &FeatureMap, p: &MlpParams, ops: &mut u64) -> Result<FeatureMap> {
    if x.channels() != p.channels {
        return Err(shape_err!("MLP expects {} channels, got {}", p.channels, x.channels()));
    }
    let out = residual_mlp(p, &x.to_tokens(), ops)?;
    FeatureMap::from_tokens(p.channels, x.rows(), x.cols(), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (FeatureMap, MlpParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = MlpParams::init(5, 4, &mut rng);
        let x = FeatureMap::from_fn(5, 3, 4, |_, _, _| rng.random_range(-2.0..2.0));
        (x, p)
    }

    #[test]
    fn discarded_everywhere_is_identity() {
        let (x, p) = setup();
        let mut ops = 0;
        assert_eq!(sparse_mlp(&x, &SparsificationMap::all(3, 4, false), &p, &mut ops).unwrap(), x);
    }

    #[test]
    fn zero_second_layer_is_identity() {
        let (x, mut p) = setup();
        p.fc2 = Linear::zeros(20, 5);
        let mut ops = 0;
        assert_eq!(sparse_mlp(&x, &SparsificationMap::all(3, 4, true), &p, &mut ops).unwrap(), x);
    }

    #[test]
    fn kept_positions_match_dense_reference() {
        let (x, p) = setup();
        let map = SparsificationMap {
            keep: Grid::from_fn(3, 4, |r, c| (r * 4 + c) % 3 != 1),
            threshold: 0.0,
            beta: None,
        };
        let mut ops = 0;
        let sparse = sparse_mlp(&x, &map, &p, &mut ops).unwrap();
        let dense = dense_mlp(&x, &p, &mut ops).unwrap();
        for (r, c, &k) in map.keep.iter_indexed() {
            for ch in 0..5 {
                let want = if k { dense.at(ch, r, c) } else { x.at(ch, r, c) };
                assert_eq!(sparse.at(ch, r, c).to_bits(), want.to_bits());
            }
        }
    }
}
