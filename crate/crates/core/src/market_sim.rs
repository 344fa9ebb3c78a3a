//! Geometric Brownian motion market and exact-step path simulation.
//!
//! Prices are discounted by the constant short rate, so the simulated state
//! `Z_k` is the vector of discounted prices at `t_k = k T / K`. Each step uses
//! the exact lognormal transition, so there is no time-discretization bias in
//! the paths themselves.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Recorded in run metadata so a run can be reproduced on another machine.
pub const RNG_ALGORITHM: &str =
    "ChaCha8Rng (rand_chacha 0.9) seeded by seed_from_u64(seed); stream = path index (antithetic pairs share stream path/2)";

const MAX_CONDITION_NUMBER: f64 = 1e14;

#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams {
    mu: Vec<f64>,
    sigma: DMatrix<f64>,
    rate: f64,
    s0: Vec<f64>,
    horizon: f64,
    steps: usize,
    untraded_factors: usize,
    market_price_of_risk: Vec<f64>,
}

impl MarketParams {
    /// `sigma` is the d×d volatility matrix, row i giving the loadings of
    /// asset i on the d Brownian drivers.
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>, rate: f64, s0: Vec<f64>, horizon: f64, steps: usize) -> Result<Self> {
        let d = mu.len();
        if d == 0 {
            return Err(Error::InvalidParams("need at least one asset".into()));
        }
        if sigma.nrows() != d || sigma.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sigma.nrows().max(sigma.ncols()),
            });
        }
        if s0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: s0.len(),
            });
        }
        if steps == 0 {
            return Err(Error::InvalidParams("K must be at least 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParams(format!("horizon must be positive, got {horizon}")));
        }
        if s0.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParams("initial prices must be positive".into()));
        }
        if !rate.is_finite() || mu.iter().chain(sigma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("non-finite coefficient".into()));
        }
        let market_price_of_risk = solve_market_price_of_risk(&mu, &sigma, rate)?;
        Ok(Self {
            mu,
            sigma,
            rate,
            s0,
            horizon,
            steps,
            untraded_factors: 0,
            market_price_of_risk,
        })
    }

    /// Single-asset market.
    pub fn single(mu: f64, sigma: f64, rate: f64, s0: f64, horizon: f64, steps: usize) -> Result<Self> {
        Self::new(
            vec![mu],
            DMatrix::from_element(1, 1, sigma),
            rate,
            vec![s0],
            horizon,
            steps,
        )
    }

    /// Declares additional non-traded state variables. No dynamics exist for
    /// them yet; simulation rejects such markets, but the layout accepts them.
    pub fn with_untraded_factors(mut self, n: usize) -> Self {
        self.untraded_factors = n;
        self
    }

    pub fn assets(&self) -> usize {
        self.mu.len()
    }

    pub fn state_dim(&self) -> usize {
        self.mu.len() + self.untraded_factors
    }

    pub fn untraded_factors(&self) -> usize {
        self.untraded_factors
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn s0(&self) -> &[f64] {
        &self.s0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Rebalance time `t_k`.
    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }

    /// Cached `σ⁻¹(μ − r·1)`.
    pub fn lambda(&self) -> &[f64] {
        &self.market_price_of_risk
    }

    pub fn lambda_norm_sq(&self) -> f64 {
        self.market_price_of_risk.iter().map(|l| l * l).sum()
    }

    /// `σσᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.sigma * self.sigma.transpose()
    }

    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        let mut p = Self::new(
            self.mu.clone(),
            self.sigma.clone(),
            self.rate,
            self.s0.clone(),
            self.horizon,
            steps,
        )?;
        p.untraded_factors = self.untraded_factors;
        Ok(p)
    }
}

fn solve_market_price_of_risk(mu: &[f64], sigma: &DMatrix<f64>, rate: f64) -> Result<Vec<f64>> {
    let sv = sigma.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > 0.0) || !(max / min <= MAX_CONDITION_NUMBER) {
        return Err(Error::SingularSigma);
    }
    let excess = DVector::from_iterator(mu.len(), mu.iter().map(|m| m - rate));
    let lambda = sigma.clone().lu().solve(&excess).ok_or(Error::SingularSigma)?;
    if lambda.iter().any(|l| !l.is_finite()) {
        return Err(Error::SingularSigma);
    }
    Ok(lambda.iter().copied().collect())
}

/// `σ⁻¹(μ − r·1)`.
pub fn market_price_of_risk(params: &MarketParams) -> Vec<f64> {
    params.lambda().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            antithetic: false,
        }
    }

    pub fn antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }
}

/// Immutable N × (K+1) grid of simulated states with the matching price
/// increments.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    n_paths: usize,
    n_steps: usize,
    state_dim: usize,
    assets: usize,
    /// `[N][K+1][state_dim]`
    states: Vec<f64>,
    /// `[N][K][assets]`, slot `k` holds `S_{k+1} − S_k`.
    increments: Vec<f64>,
}

impl PathSet {
    /// Builds a path set from raw states laid out `[N][K+1][state_dim]`; the
    /// first `assets` state coordinates are the traded discounted prices.
    pub fn from_states(
        n_paths: usize,
        n_steps: usize,
        state_dim: usize,
        assets: usize,
        states: Vec<f64>,
    ) -> Result<Self> {
        if n_paths == 0 || n_steps == 0 || assets == 0 || state_dim < assets {
            return Err(Error::InvalidParams(format!(
                "bad path set shape N={n_paths} K={n_steps} n={state_dim} d={assets}"
            )));
        }
        let expected = n_paths * (n_steps + 1) * state_dim;
        if states.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: states.len(),
            });
        }
        for row in states.chunks_exact(state_dim) {
            if row[..assets].iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::InvalidParams("prices must be positive and finite".into()));
            }
        }
        let mut increments = Vec::with_capacity(n_paths * n_steps * assets);
        for path in states.chunks_exact((n_steps + 1) * state_dim) {
            for k in 0..n_steps {
                let prev = &path[k * state_dim..k * state_dim + assets];
                let next = &path[(k + 1) * state_dim..(k + 1) * state_dim + assets];
                increments.extend(next.iter().zip(prev).map(|(b, a)| b - a));
            }
        }
        Ok(Self {
            n_paths,
            n_steps,
            state_dim,
            assets,
            states,
            increments,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn assets(&self) -> usize {
        self.assets
    }

    /// State vector `Z^i_k`, `k ∈ 0..=K`.
    pub fn state(&self, path: usize, k: usize) -> &[f64] {
        let start = (path * (self.n_steps + 1) + k) * self.state_dim;
        &self.states[start..start + self.state_dim]
    }

    /// Traded prices `S^i_k`.
    pub fn prices(&self, path: usize, k: usize) -> &[f64] {
        &self.state(path, k)[..self.assets]
    }

    /// `ΔS^i_k = S^i_k − S^i_{k−1}` for `k ∈ 1..=K`.
    pub fn increment(&self, path: usize, k: usize) -> &[f64] {
        assert!(
            k >= 1 && k <= self.n_steps,
            "increment index {k} out of 1..={}",
            self.n_steps
        );
        let start = (path * self.n_steps + k - 1) * self.assets;
        &self.increments[start..start + self.assets]
    }

    pub fn terminal_state(&self, path: usize) -> &[f64] {
        self.state(path, self.n_steps)
    }

    /// CSV export, header `path,step,asset,price`, prices to 12 significant
    /// digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "path,step,asset,price")?;
        for i in 0..self.n_paths {
            for k in 0..=self.n_steps {
                for (j, s) in self.prices(i, k).iter().enumerate() {
                    writeln!(out, "{i},{k},{j},{s:.11e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Simulates discounted GBM prices with exact lognormal steps.
///
/// Path `i` draws from its own ChaCha stream, so the result does not depend
/// on how rayon schedules the work.
pub fn simulate_gbm(params: &MarketParams, cfg: &SimConfig) -> Result<PathSet> {
    if cfg.n_paths < 2 {
        return Err(Error::InvalidParams(format!(
            "need at least 2 paths, got {}",
            cfg.n_paths
        )));
    }
    if params.untraded_factors() > 0 {
        return Err(Error::NotImplemented("dynamics for untraded state factors".into()));
    }
    let d = params.assets();
    let k_steps = params.steps();
    let dt = params.dt();
    let sqrt_dt = dt.sqrt();
    let cov = params.covariance();
    let drift: Vec<f64> = (0..d)
        .map(|j| (params.mu()[j] - params.rate() - 0.5 * cov[(j, j)]) * dt)
        .collect();
    let sigma = params.sigma();
    let log_s0: Vec<f64> = params.s0().iter().map(|s| s.ln()).collect();

    let row = (k_steps + 1) * d;
    let mut states = vec![0.0; cfg.n_paths * row];
    states.par_chunks_mut(row).enumerate().for_each(|(i, path)| {
        let (stream, sign) = if cfg.antithetic {
            ((i / 2) as u64, if i % 2 == 1 { -1.0 } else { 1.0 })
        } else {
            (i as u64, 1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let mut log_s = log_s0.clone();
        let mut xi = vec![0.0; d];
        path[..d].copy_from_slice(params.s0());
        for k in 1..=k_steps {
            for x in xi.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = sign * z;
            }
            for j in 0..d {
                let shock: f64 = (0..d).map(|a| sigma[(j, a)] * xi[a]).sum();
                log_s[j] += drift[j] + sqrt_dt * shock;
                path[k * d + j] = log_s[j].exp();
            }
        }
    });
    PathSet::from_states(cfg.n_paths, k_steps, d, d, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn market_price_of_risk_examples() {
        let p = MarketParams::single(0.1, 0.2, 0.0, 1.0, 1.0, 50).unwrap();
        assert_abs_diff_eq!(market_price_of_risk(&p)[0], 0.5, epsilon = 1e-15);

        let p = MarketParams::single(0.05, 0.3, 0.05, 1.0, 1.0, 10).unwrap();
        assert_eq!(market_price_of_risk(&p), vec![0.0]);

        let p = MarketParams::new(vec![0.1, 0.2], DMatrix::identity(2, 2), 0.0, vec![1.0, 1.0], 1.0, 5).unwrap();
        assert_eq!(market_price_of_risk(&p), vec![0.1, 0.2]);
    }

    #[test]
    fn rejects_invalid_markets() {
        let singular = DMatrix::from_row_slice(2, 2, &[0.2, 0.2, 0.2, 0.2]);
        assert!(matches!(
            MarketParams::new(vec![0.1, 0.1], singular, 0.0, vec![1.0, 1.0], 1.0, 5),
            Err(Error::SingularSigma)
        ));
        assert!(matches!(
            MarketParams::single(0.1, 0.0, 0.0, 1.0, 1.0, 5),
            Err(Error::SingularSigma)
        ));
        assert!(MarketParams::single(0.1, 0.2, 0.0, 1.0, 1.0, 0).is_err());
        assert!(MarketParams::single(0.1, 0.2, 0.0, -1.0, 1.0, 5).is_err());
        assert!(MarketParams::single(0.1, 0.2, 0.0, 1.0, 0.0, 5).is_err());
        let p = MarketParams::single(0.1, 0.2, 0.0, 1.0, 1.0, 5).unwrap();
        assert!(simulate_gbm(&p, &SimConfig::new(1, 0)).is_err());
        assert!(matches!(
            simulate_gbm(&p.clone().with_untraded_factors(1), &SimConfig::new(4, 0)),
            Err(Error::NotImplemented(_))
        ));
    }

    #[test]
    fn zero_excess_drift_is_a_martingale() {
        let p = MarketParams::single(0.03, 0.2, 0.03, 1.0, 1.0, 10).unwrap();
        let paths = simulate_gbm(&p, &SimConfig::new(100_000, 7)).unwrap();
        let terminal: Vec<f64> = (0..paths.n_paths()).map(|i| paths.prices(i, 10)[0]).collect();
        let (m, v) = mean_var(&terminal);
        let se = (v / terminal.len() as f64).sqrt();
        assert!((m - 1.0).abs() < 3.0 * se, "mean {m} se {se}");
    }

    #[test]
    fn vanishing_volatility_grows_deterministically() {
        let p = MarketParams::single(0.1, 1e-12, 0.0, 1.0, 1.0, 50).unwrap();
        let paths = simulate_gbm(&p, &SimConfig::new(100, 3)).unwrap();
        for i in 0..100 {
            assert_abs_diff_eq!(paths.prices(i, 50)[0], 0.1f64.exp(), epsilon = 1e-6);
        }
    }

    #[test]
    fn terminal_log_variance_matches_single_step_oracle() {
        let p = MarketParams::single(0.1, 0.2, 0.0, 1.0, 1.0, 50).unwrap();
        let n = 100_000;
        let paths = simulate_gbm(&p, &SimConfig::new(n, 11)).unwrap();
        let logs: Vec<f64> = (0..n).map(|i| paths.prices(i, 50)[0].ln()).collect();
        let (_, v) = mean_var(&logs);
        // Var of a sample variance of Gaussian data: 2σ⁴/(n−1).
        let se = (2.0 * 0.04f64.powi(2) / (n as f64 - 1.0)).sqrt();
        assert!((v - 0.04).abs() < 3.0 * se, "var {v}");

        // Oracle: one exact step of length T drawn independently.
        let one = p.with_steps(1).unwrap();
        let direct = simulate_gbm(&one, &SimConfig::new(n, 12)).unwrap();
        let logs1: Vec<f64> = (0..n).map(|i| direct.prices(i, 1)[0].ln()).collect();
        let (m1, v1) = mean_var(&logs1);
        let (m50, _) = mean_var(&logs);
        assert!((m1 - m50).abs() < 4.0 * (0.08f64 / n as f64).sqrt());
        assert!((v1 - v).abs() < 4.0 * se * 2f64.sqrt());
    }

    #[test]
    fn one_step_log_increments_have_exact_moments() {
        let p = MarketParams::single(0.1, 0.3, 0.02, 2.0, 0.5, 5).unwrap();
        let n = 100_000;
        let paths = simulate_gbm(&p, &SimConfig::new(n, 5)).unwrap();
        let dt = p.dt();
        let want_mean = (0.1 - 0.02 - 0.5 * 0.09) * dt;
        let want_var = 0.09 * dt;
        for k in 1..=5 {
            let r: Vec<f64> = (0..n)
                .map(|i| (paths.prices(i, k)[0] / paths.prices(i, k - 1)[0]).ln())
                .collect();
            let (m, v) = mean_var(&r);
            assert!((m - want_mean).abs() < 4.0 * (want_var / n as f64).sqrt());
            let se_v = (2.0 * want_var * want_var / (n as f64 - 1.0)).sqrt();
            assert!((v - want_var).abs() < 4.0 * se_v);
        }
    }

    #[test]
    fn antithetic_pairs_average_to_drift() {
        let p = MarketParams::single(0.1, 0.2, 0.0, 1.0, 1.0, 8).unwrap();
        let paths = simulate_gbm(&p, &SimConfig::new(64, 9).antithetic(true)).unwrap();
        let drift = (0.1 - 0.5 * 0.04) * p.dt();
        for m in 0..32 {
            for k in 1..=8 {
                let a = (paths.prices(2 * m, k)[0] / paths.prices(2 * m, k - 1)[0]).ln();
                let b = (paths.prices(2 * m + 1, k)[0] / paths.prices(2 * m + 1, k - 1)[0]).ln();
                assert_abs_diff_eq!(0.5 * (a + b), drift, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_and_consistent() {
        let p = MarketParams::new(
            vec![0.1, 0.05],
            DMatrix::from_row_slice(2, 2, &[0.2, 0.0, 0.1, 0.15]),
            0.01,
            vec![1.0, 2.0],
            1.0,
            12,
        )
        .unwrap();
        let cfg = SimConfig::new(500, 42);
        let a = simulate_gbm(&p, &cfg).unwrap();
        let b = simulate_gbm(&p, &cfg).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| simulate_gbm(&p, &cfg).unwrap());
        assert_eq!(a, c);
        for i in 0..500 {
            for k in 1..=12 {
                for j in 0..2 {
                    assert!(a.prices(i, k)[j] > 0.0);
                    assert_eq!(a.increment(i, k)[j], a.prices(i, k)[j] - a.prices(i, k - 1)[j]);
                }
            }
        }
    }

    #[test]
    fn csv_export_layout() {
        let paths = PathSet::from_states(2, 1, 1, 1, vec![1.0, 1.25, 1.0, 0.8]).unwrap();
        let mut buf = Vec::new();
        paths.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,step,asset,price");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[2], "0,1,0,1.25000000000e0");
    }
}
