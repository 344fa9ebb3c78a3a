//! Finite-dimensional function spaces for the per-step allocation rules.
//!
//! Features are functions of the normalized moneyness `m_j = S_j / S0_j`.
//! Feature 0 is always the constant 1.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market_sim::PathSet;

pub type FeatureFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Feature {
    Constant,
    /// `m_asset^power`
    Power {
        asset: usize,
        power: i32,
    },
    /// `(ln m_asset)^power`
    LogPower {
        asset: usize,
        power: i32,
    },
    /// Called with the moneyness vector followed by any untraded factors.
    Custom(FeatureFn),
}

#[derive(Clone)]
pub struct BasisSet {
    descriptor: String,
    reference: Vec<f64>,
    features: Vec<Feature>,
}

impl BasisSet {
    /// `{1} ∪ {m_j^p : j < d, 1 ≤ p ≤ degree}`.
    pub fn poly(degree: usize, reference: &[f64]) -> Self {
        let mut features = vec![Feature::Constant];
        for asset in 0..reference.len() {
            for power in 1..=degree as i32 {
                features.push(Feature::Power { asset, power });
            }
        }
        Self {
            descriptor: format!("poly:{degree}"),
            reference: reference.to_vec(),
            features,
        }
    }

    /// `{1} ∪ {(ln m_j)^p : j < d, 1 ≤ p ≤ degree}`.
    pub fn log_poly(degree: usize, reference: &[f64]) -> Self {
        let mut features = vec![Feature::Constant];
        for asset in 0..reference.len() {
            for power in 1..=degree as i32 {
                features.push(Feature::LogPower { asset, power });
            }
        }
        Self {
            descriptor: format!("custom:logpoly{degree}"),
            reference: reference.to_vec(),
            features,
        }
    }

    /// User-supplied features appended after the constant.
    pub fn custom(name: &str, reference: &[f64], extra: Vec<FeatureFn>) -> Self {
        let mut features = vec![Feature::Constant];
        features.extend(extra.into_iter().map(Feature::Custom));
        Self {
            descriptor: format!("custom:{name}"),
            reference: reference.to_vec(),
            features,
        }
    }

    /// Parses `poly:<degree>` or one of the built-in `custom:` names
    /// (`custom:logpoly<degree>`).
    pub fn from_descriptor(descriptor: &str, reference: &[f64]) -> Result<Self> {
        let d = descriptor.trim();
        let bad = || Error::Parse(format!("unknown basis descriptor `{d}`"));
        if let Some(deg) = d.strip_prefix("poly:") {
            let deg: usize = deg.trim().parse().map_err(|_| bad())?;
            return Ok(Self::poly(deg, reference));
        }
        if let Some(name) = d.strip_prefix("custom:") {
            if let Some(deg) = name.strip_prefix("logpoly") {
                let deg: usize = deg.parse().map_err(|_| bad())?;
                return Ok(Self::log_poly(deg, reference));
            }
        }
        Err(bad())
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    /// Number of basis functions `R`.
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Writes `(f_1(Z), …, f_R(Z))` into `out`.
    pub fn evaluate_into(&self, state: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.reference.len();
        if state.len() < d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: state.len(),
            });
        }
        let mut scratch: Vec<f64> = Vec::new();
        for (r, (f, slot)) in self.features.iter().zip(out.iter_mut()).enumerate() {
            let value =
                match f {
                    Feature::Constant => 1.0,
                    Feature::Power { asset, power } => (state[*asset] / self.reference[*asset]).powi(*power),
                    Feature::LogPower { asset, power } => (state[*asset] / self.reference[*asset]).ln().powi(*power),
                    Feature::Custom(func) => {
                        if scratch.is_empty() {
                            scratch.extend(state.iter().enumerate().map(|(j, s)| {
                                if j < d {
                                    s / self.reference[j]
                                } else {
                                    *s
                                }
                            }));
                        }
                        func(&scratch)
                    }
                };
            if !value.is_finite() {
                return Err(Error::NonFiniteFeature { feature: r, value });
            }
            *slot = value;
        }
        Ok(())
    }
}

pub fn evaluate(basis: &BasisSet, state: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; basis.len()];
    basis.evaluate_into(state, &mut out)?;
    Ok(out)
}

impl fmt::Debug for BasisSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasisSet")
            .field("descriptor", &self.descriptor)
            .field("reference", &self.reference)
            .field("len", &self.features.len())
            .finish()
    }
}

impl PartialEq for BasisSet {
    fn eq(&self, other: &Self) -> bool {
        self.descriptor == other.descriptor && self.reference == other.reference
    }
}

/// Basis values on simulated states, one `[N][R]` block per rebalance time
/// `k = 1..K−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_paths: usize,
    width: usize,
    blocks: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Flat `[N][R]` block at time `k ∈ 1..K`.
    pub fn step(&self, k: usize) -> &[f64] {
        &self.blocks[k - 1]
    }

    pub fn row(&self, k: usize, path: usize) -> &[f64] {
        &self.step(k)[path * self.width..(path + 1) * self.width]
    }
}

pub fn precompute(basis: &BasisSet, paths: &PathSet) -> Result<FeatureMatrix> {
    let n = paths.n_paths();
    let width = basis.len();
    let blocks = (1..paths.n_steps())
        .map(|k| {
            let mut block = vec![0.0; n * width];
            block
                .par_chunks_mut(width)
                .enumerate()
                .try_for_each(|(i, row)| basis.evaluate_into(paths.state(i, k), row))?;
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        n_paths: n,
        width,
        blocks,
    })
}

/// Per-column affine map `f ↦ (f − mean) / scale`. Column 0 is left alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    /// Fits column means and population standard deviations. A column whose
    /// spread is negligible relative to its level is mapped to zero.
    pub fn fit(block: &[f64], width: usize) -> Self {
        let n = (block.len() / width) as f64;
        let mut mean = vec![0.0; width];
        let mut scale = vec![1.0; width];
        for r in 1..width {
            let m = block.iter().skip(r).step_by(width).sum::<f64>() / n;
            let var = block
                .iter()
                .skip(r)
                .step_by(width)
                .map(|x| (x - m) * (x - m))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            mean[r] = m;
            scale[r] = if sd > 1e-10 * m.abs().max(1.0) {
                sd
            } else {
                f64::INFINITY
            };
        }
        Self { mean, scale }
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((x, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale).skip(1) {
            *x = (*x - m) / s;
        }
    }

    pub fn apply_block(&self, block: &mut [f64]) {
        let width = self.mean.len();
        block.chunks_exact_mut(width).for_each(|row| self.apply(row));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_sim::{simulate_gbm, MarketParams, SimConfig};

    #[test]
    fn evaluate_examples() {
        let b = BasisSet::poly(2, &[1.0]);
        assert_eq!(evaluate(&b, &[1.0]).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(evaluate(&b, &[0.5]).unwrap(), vec![1.0, 0.5, 0.25]);
        let c = BasisSet::poly(0, &[1.0]);
        assert_eq!(evaluate(&c, &[3.7]).unwrap(), vec![1.0]);
        let scaled = BasisSet::poly(1, &[2.0]);
        assert_eq!(evaluate(&scaled, &[1.0]).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let b = BasisSet::log_poly(1, &[1.0]);
        assert!(matches!(
            evaluate(&b, &[0.0]),
            Err(Error::NonFiniteFeature { feature: 1, .. })
        ));
        let b = BasisSet::poly(2, &[1.0]);
        assert!(evaluate(&b, &[f64::NAN]).is_err());
    }

    #[test]
    fn descriptor_round_trip() {
        for d in ["poly:0", "poly:3", "custom:logpoly2"] {
            assert_eq!(BasisSet::from_descriptor(d, &[1.0]).unwrap().descriptor(), d);
        }
        assert!(BasisSet::from_descriptor("spline:3", &[1.0]).is_err());
        assert!(BasisSet::from_descriptor("custom:whatever", &[1.0]).is_err());
        assert_eq!(BasisSet::poly(2, &[1.0, 1.0]).len(), 5);
    }

    #[test]
    fn custom_features_see_moneyness() {
        let b = BasisSet::custom("kink", &[2.0], vec![Arc::new(|m: &[f64]| (m[0] - 1.0).max(0.0))]);
        assert_eq!(evaluate(&b, &[3.0]).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn precompute_agrees_with_pointwise_evaluation() {
        let p = MarketParams::single(0.1, 0.2, 0.0, 1.0, 1.0, 6).unwrap();
        let paths = simulate_gbm(&p, &SimConfig::new(200, 1)).unwrap();
        let b = BasisSet::poly(2, &[1.0]);
        let fm = precompute(&b, &paths).unwrap();
        for k in 1..6 {
            for i in 0..200 {
                assert_eq!(fm.row(k, i), evaluate(&b, paths.state(i, k)).unwrap().as_slice());
            }
            let ones: f64 = fm.step(k).iter().step_by(3).sum();
            assert_eq!(ones, 200.0);
        }
        let fm1 = precompute(&BasisSet::poly(1, &[1.0]), &paths).unwrap();
        assert_eq!(fm1.width(), 2);
    }

    #[test]
    fn standardization_centers_and_scales() {
        let block = vec![1.0, 1.0, 1.0, 3.0];
        let s = Standardization::fit(&block, 2);
        assert_eq!(s.mean, vec![0.0, 2.0]);
        assert_eq!(s.scale, vec![1.0, 1.0]);
        let mut b = block.clone();
        s.apply_block(&mut b);
        assert_eq!(b, vec![1.0, -1.0, 1.0, 1.0]);

        let flat = vec![1.0, 5.0, 1.0, 5.0];
        let s = Standardization::fit(&flat, 2);
        let mut b = flat.clone();
        s.apply_block(&mut b);
        assert_eq!(b, vec![1.0, 0.0, 1.0, 0.0]);
    }
}
