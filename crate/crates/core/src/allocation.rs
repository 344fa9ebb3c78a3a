//! Backward-induction learning of exponential-utility hedging rules and
//! their forward application to simulated paths.
//!
//! Working from the last rebalance date to the first, step `k` chooses the
//! rule `h_k(Z_{k−1})` in the span of the basis that minimizes the sample mean
//! of `exp(−γ h_k·ΔS_k + E)`, where the carried exponent `E` holds the gains
//! of the rules already learned for later dates and the claim. Step 1 sees a
//! single initial state and so learns a constant. Under exponential utility
//! none of this depends on wealth, and no wealth appears anywhere below.
//!
//! Rules for `k ≥ 2` are parametrized in dollars: the share count on asset
//! `j` is `Σ_r c_{jr} f̃_r(Z_{k−1}) / S^j_{k−1}` with standardized features
//! `f̃`. The exact GBM Merton rule is a constant dollar amount and therefore
//! lies in every basis.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::analytic::TheoreticalStrategy;
use crate::basis::{precompute, BasisSet, Standardization};
use crate::claims::{payoff, Claim};
use crate::error::{Error, Result};
use crate::market_sim::PathSet;
use crate::optimizer::{minimize, ObjectiveData, OptimResult, OptimStatus, SolverOptions};

/// A rule giving share holdings over each rebalance interval.
pub trait Strategy: Sync {
    fn assets(&self) -> usize;

    fn steps(&self) -> usize;

    /// Claim received at the horizon.
    fn claim(&self) -> &Claim;

    /// Shares held over `(t_{k−1}, t_k]` when the state at `t_{k−1}` is
    /// `state`.
    fn holdings(&self, k: usize, state: &[f64], out: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRule {
    /// `[d][R]`
    pub coefficients: Vec<f64>,
    pub transform: Standardization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub status: OptimStatus,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub objective_value: f64,
}

impl StepDiagnostics {
    fn from_result(step: usize, r: &OptimResult) -> Self {
        Self {
            step,
            status: r.status,
            iterations: r.iterations,
            gradient_norm: r.gradient_norm,
            objective_value: r.objective_value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyTable {
    /// Shares held over the first interval.
    pub h1: Vec<f64>,
    /// Rules for `k = 2..=K`, stored at index `k − 2`.
    pub rules: Vec<StepRule>,
    pub basis: BasisSet,
    pub claim: Claim,
    pub gamma: f64,
    /// `log Ψ̃₁` at the optimum.
    pub log_psi1: f64,
    /// Certainty equivalent estimate `(1/γ) log Ψ̃₁`.
    pub b0: f64,
    /// Diagnostics for `k = 1..=K`, ascending.
    pub diagnostics: Vec<StepDiagnostics>,
    pub smoothing: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LearnOptions {
    pub solver: SolverOptions,
    /// Exponential smoothing weight applied to the coefficient sequence
    /// after learning. Off when `None`.
    pub smoothing: Option<f64>,
}

/// `ΔS^i_k / S^i_{k−1}`, `[N][d]`.
fn relative_increments(paths: &PathSet, k: usize) -> Vec<f64> {
    let d = paths.assets();
    let mut out = vec![0.0; paths.n_paths() * d];
    out.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        let prev = paths.prices(i, k - 1);
        for ((x, dz), s) in row.iter_mut().zip(paths.increment(i, k)).zip(prev) {
            *x = dz / s;
        }
    });
    out
}

fn check_outcome(step: usize, res: &OptimResult) -> Result<()> {
    match res.status {
        OptimStatus::Converged | OptimStatus::Regularized => Ok(()),
        OptimStatus::Unbounded => Err(Error::UnboundedStep { step }),
        OptimStatus::MaxIter => Err(Error::NotConverged {
            step,
            iterations: res.iterations,
        }),
    }
}

/// Learns a strategy for an agent who receives `claim` at the horizon.
pub fn learn(
    paths: &PathSet,
    claim: &Claim,
    basis: &BasisSet,
    gamma: f64,
    opts: &LearnOptions,
) -> Result<StrategyTable> {
    let n = paths.n_paths();
    let k_steps = paths.n_steps();
    let d = paths.assets();
    if basis.reference().len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: basis.reference().len(),
        });
    }
    if n < 2 {
        return Err(Error::DegenerateData("need at least two paths".into()));
    }
    let s0 = paths.prices(0, 0).to_vec();
    if (1..n).any(|i| paths.state(i, 0) != paths.state(0, 0)) {
        return Err(Error::DegenerateData("initial states differ across paths".into()));
    }

    let state_dim = paths.state_dim();
    let mut carry = (0..n)
        .map(|i| payoff(claim, paths.terminal_state(i), state_dim).map(|v| -gamma * v))
        .collect::<Result<Vec<_>>>()?;
    if carry.iter().any(|c| !c.is_finite()) {
        return Err(Error::DegenerateData(
            "claim is not finite on the sampled states".into(),
        ));
    }

    let width = basis.len();
    let features = precompute(basis, paths)?;
    let mut rules = Vec::with_capacity(k_steps.saturating_sub(1));
    let mut diagnostics = Vec::with_capacity(k_steps);
    let mut warm: Option<Vec<f64>> = None;

    for k in (2..=k_steps).rev() {
        let mut block = features.step(k - 1).to_vec();
        let transform = Standardization::fit(&block, width);
        transform.apply_block(&mut block);
        let x = relative_increments(paths, k);
        let data = ObjectiveData::new(&block, width, &x, d, &carry, gamma)?;
        let res = minimize(&data, &opts.solver, warm.as_deref())?;
        check_outcome(k, &res)?;
        let gains: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| data.gain(i, &res.coefficients))
            .collect();
        carry.iter_mut().zip(&gains).for_each(|(e, g)| *e -= gamma * g);
        diagnostics.push(StepDiagnostics::from_result(k, &res));
        warm = Some(res.coefficients.clone());
        rules.push(StepRule {
            coefficients: res.coefficients,
            transform,
        });
    }
    rules.reverse();

    let ones = vec![1.0; n];
    let x = relative_increments(paths, 1);
    let data = ObjectiveData::new(&ones, 1, &x, d, &carry, gamma)?;
    let init: Option<Vec<f64>> = warm.map(|w| w.chunks_exact(width).map(|c| c[0]).collect());
    let res = minimize(&data, &opts.solver, init.as_deref())?;
    check_outcome(1, &res)?;
    diagnostics.push(StepDiagnostics::from_result(1, &res));
    diagnostics.reverse();

    let h1 = res.coefficients.iter().zip(&s0).map(|(c, s)| c / s).collect();
    let mut table = StrategyTable {
        h1,
        rules,
        basis: basis.clone(),
        claim: claim.clone(),
        gamma,
        log_psi1: res.log_objective,
        b0: res.log_objective / gamma,
        diagnostics,
        smoothing: None,
    };
    if let Some(alpha) = opts.smoothing {
        table.smooth(alpha)?;
    }
    Ok(table)
}

impl StrategyTable {
    pub fn assets(&self) -> usize {
        self.h1.len()
    }

    pub fn steps(&self) -> usize {
        self.rules.len() + 1
    }

    /// Dollar amounts held over `(t_{k−1}, t_k]` for `k ≥ 2`.
    pub fn dollars(&self, k: usize, state: &[f64], out: &mut [f64]) -> Result<()> {
        let rule = &self.rules[k - 2];
        let width = self.basis.len();
        let mut f = vec![0.0; width];
        self.basis.evaluate_into(state, &mut f)?;
        rule.transform.apply(&mut f);
        for (o, c) in out.iter_mut().zip(rule.coefficients.chunks_exact(width)) {
            *o = c.iter().zip(&f).map(|(a, b)| a * b).sum();
        }
        Ok(())
    }

    /// Rewrites every rule in raw-feature coordinates and replaces the
    /// coefficient sequence by its exponential moving average over `k`.
    /// `b0` keeps the value learned before smoothing.
    pub fn smooth(&mut self, alpha: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "smoothing weight must be in (0, 1], got {alpha}"
            )));
        }
        let width = self.basis.len();
        let mut prev: Option<Vec<f64>> = None;
        for rule in &mut self.rules {
            let mut raw = rule.coefficients.clone();
            for c in raw.chunks_exact_mut(width) {
                for r in 1..width {
                    let slope = c[r] / rule.transform.scale[r];
                    c[0] -= slope * rule.transform.mean[r];
                    c[r] = slope;
                }
            }
            if let Some(p) = &prev {
                raw.iter_mut()
                    .zip(p)
                    .for_each(|(x, q)| *x = alpha * *x + (1.0 - alpha) * q);
            }
            rule.coefficients = raw.clone();
            rule.transform = Standardization::identity(width);
            prev = Some(raw);
        }
        self.smoothing = Some(alpha);
        Ok(())
    }
}

impl Strategy for StrategyTable {
    fn assets(&self) -> usize {
        self.h1.len()
    }

    fn steps(&self) -> usize {
        self.rules.len() + 1
    }

    fn claim(&self) -> &Claim {
        &self.claim
    }

    fn holdings(&self, k: usize, state: &[f64], out: &mut [f64]) -> Result<()> {
        if k == 1 {
            out.copy_from_slice(&self.h1);
            return Ok(());
        }
        self.dollars(k, state, out)?;
        for (o, s) in out.iter_mut().zip(state) {
            *o /= s;
        }
        Ok(())
    }
}

impl Strategy for TheoreticalStrategy {
    fn assets(&self) -> usize {
        self.params().assets()
    }

    fn steps(&self) -> usize {
        self.params().steps()
    }

    fn claim(&self) -> &Claim {
        TheoreticalStrategy::claim(self)
    }

    fn holdings(&self, k: usize, state: &[f64], out: &mut [f64]) -> Result<()> {
        self.hedge_into(state, self.params().time(k - 1), out)
    }
}

/// Holds nothing and receives the configured claim.
#[derive(Debug, Clone)]
pub struct NoTrading {
    pub assets: usize,
    pub steps: usize,
    pub claim: Claim,
}

impl Strategy for NoTrading {
    fn assets(&self) -> usize {
        self.assets
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn claim(&self) -> &Claim {
        &self.claim
    }

    fn holdings(&self, _k: usize, _state: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    }
}

/// Terminal P&L per path: trading gains plus the claim received.
pub fn apply(strategy: &dyn Strategy, paths: &PathSet) -> Result<Vec<f64>> {
    let d = paths.assets();
    if strategy.assets() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: strategy.assets(),
        });
    }
    if strategy.steps() != paths.n_steps() {
        return Err(Error::DimensionMismatch {
            expected: paths.n_steps(),
            got: strategy.steps(),
        });
    }
    let claim = strategy.claim();
    (0..paths.n_paths())
        .into_par_iter()
        .map(|i| {
            let mut h = vec![0.0; d];
            let mut pnl = 0.0;
            for k in 1..=paths.n_steps() {
                strategy.holdings(k, paths.state(i, k - 1), &mut h)?;
                pnl += h.iter().zip(paths.increment(i, k)).map(|(a, b)| a * b).sum::<f64>();
            }
            Ok(pnl + payoff(claim, paths.terminal_state(i), paths.state_dim())?)
        })
        .collect()
}

const CSV_VERSION: &str = "# exphedge strategy table v1";

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| fmt17(*x)).collect::<Vec<_>>().join(";")
}

impl StrategyTable {
    /// Versioned CSV with `#`-prefixed metadata. Numbers carry 17
    /// significant digits, so a written table reads back identically.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let width = self.basis.len();
        writeln!(out, "{CSV_VERSION}")?;
        writeln!(out, "# basis = {}", self.basis.descriptor())?;
        writeln!(out, "# reference = {}", fmt_list(self.basis.reference()))?;
        writeln!(out, "# assets = {}", self.assets())?;
        writeln!(out, "# steps = {}", self.steps())?;
        writeln!(out, "# gamma = {}", fmt17(self.gamma))?;
        writeln!(out, "# claim = {}", self.claim)?;
        writeln!(out, "# log_psi1 = {}", fmt17(self.log_psi1))?;
        writeln!(out, "# b0 = {}", fmt17(self.b0))?;
        match self.smoothing {
            Some(a) => writeln!(out, "# smoothing = {}", fmt17(a))?,
            None => writeln!(out, "# smoothing = none")?,
        }
        for (idx, rule) in self.rules.iter().enumerate() {
            for r in 0..width {
                writeln!(
                    out,
                    "# transform,{},{},{},{}",
                    idx + 2,
                    r,
                    fmt17(rule.transform.mean[r]),
                    fmt17(rule.transform.scale[r])
                )?;
            }
        }
        for d in &self.diagnostics {
            writeln!(
                out,
                "# diag,{},{},{},{},{}",
                d.step,
                d.status.as_str(),
                d.iterations,
                fmt17(d.gradient_norm),
                fmt17(d.objective_value)
            )?;
        }
        writeln!(out, "step,asset,feature,coefficient")?;
        for (j, h) in self.h1.iter().enumerate() {
            writeln!(out, "1,{j},0,{}", fmt17(*h))?;
        }
        for (idx, rule) in self.rules.iter().enumerate() {
            for (j, row) in rule.coefficients.chunks_exact(width).enumerate() {
                for (r, c) in row.iter().enumerate() {
                    writeln!(out, "{},{j},{r},{}", idx + 2, fmt17(*c))?;
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |msg: String| Error::Parse(format!("strategy table: {msg}"));
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("strategy table: bad number `{s}`")))
        };
        let int = |s: &str| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("strategy table: bad integer `{s}`")))
        };

        let mut lines = input.lines();
        let first = lines.next().transpose()?.unwrap_or_default();
        if first.trim() != CSV_VERSION {
            return Err(bad(format!("unsupported header `{first}`")));
        }
        let mut meta = std::collections::HashMap::new();
        let mut transforms = Vec::new();
        let mut diags = Vec::new();
        let mut rows = Vec::new();
        let mut in_body = false;
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(t) = rest.strip_prefix("transform,") {
                    transforms.push(t.split(',').map(str::to_owned).collect::<Vec<_>>());
                } else if let Some(t) = rest.strip_prefix("diag,") {
                    diags.push(t.split(',').map(str::to_owned).collect::<Vec<_>>());
                } else if let Some((k, v)) = rest.split_once('=') {
                    meta.insert(k.trim().to_owned(), v.trim().to_owned());
                }
                continue;
            }
            if !in_body {
                if line != "step,asset,feature,coefficient" {
                    return Err(bad(format!("unexpected line `{line}`")));
                }
                in_body = true;
                continue;
            }
            rows.push(line.split(',').map(str::to_owned).collect::<Vec<_>>());
        }
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("missing `{k}`")));

        let reference = get("reference")?.split(';').map(num).collect::<Result<Vec<_>>>()?;
        let basis = BasisSet::from_descriptor(get("basis")?, &reference)?;
        let assets = int(get("assets")?)?;
        let steps = int(get("steps")?)?;
        if assets != reference.len() || steps == 0 {
            return Err(bad("inconsistent dimensions".into()));
        }
        let width = basis.len();
        let claim: Claim = get("claim")?.parse()?;
        let smoothing = match get("smoothing")?.as_str() {
            "none" => None,
            s => Some(num(s)?),
        };

        let mut rules: Vec<StepRule> = (2..=steps)
            .map(|_| StepRule {
                coefficients: vec![f64::NAN; assets * width],
                transform: Standardization {
                    mean: vec![f64::NAN; width],
                    scale: vec![f64::NAN; width],
                },
            })
            .collect();
        for t in &transforms {
            if t.len() != 4 {
                return Err(bad("malformed transform line".into()));
            }
            let (k, r) = (int(&t[0])?, int(&t[1])?);
            if k < 2 || k > steps || r >= width {
                return Err(bad(format!("transform index ({k},{r}) out of range")));
            }
            rules[k - 2].transform.mean[r] = num(&t[2])?;
            rules[k - 2].transform.scale[r] = num(&t[3])?;
        }
        let mut h1 = vec![f64::NAN; assets];
        for row in &rows {
            if row.len() != 4 {
                return Err(bad("malformed coefficient row".into()));
            }
            let (k, j, r, c) = (int(&row[0])?, int(&row[1])?, int(&row[2])?, num(&row[3])?);
            if k == 0 || k > steps || j >= assets || r >= width || (k == 1 && r != 0) {
                return Err(bad(format!("coefficient index ({k},{j},{r}) out of range")));
            }
            if k == 1 {
                h1[j] = c;
            } else {
                rules[k - 2].coefficients[j * width + r] = c;
            }
        }
        let complete = h1.iter().all(|x| !x.is_nan())
            && rules.iter().all(|r| {
                r.coefficients.iter().all(|x| !x.is_nan())
                    && r.transform.mean.iter().chain(&r.transform.scale).all(|x| !x.is_nan())
            });
        if !complete {
            return Err(bad("missing coefficients or transforms".into()));
        }
        let diagnostics = diags
            .iter()
            .map(|d| {
                if d.len() != 5 {
                    return Err(bad("malformed diag line".into()));
                }
                Ok(StepDiagnostics {
                    step: int(&d[0])?,
                    status: d[1].parse()?,
                    iterations: int(&d[2])?,
                    gradient_norm: num(&d[3])?,
                    objective_value: num(&d[4])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(StrategyTable {
            h1,
            rules,
            basis,
            claim,
            gamma: num(get("gamma")?)?,
            log_psi1: num(get("log_psi1")?)?,
            b0: num(get("b0")?)?,
            diagnostics,
            smoothing,
        })
    }
}
