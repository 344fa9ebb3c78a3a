//! End-to-end experiment driver: simulate, learn, evaluate learned and
//! closed-form strategies, price, report, and write plot-ready CSVs.
//!
//! Configuration is a line-based `key = value` file with `#` comments. Every
//! run writes the fully resolved configuration back next to its artifacts.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;

use crate::allocation::{apply, learn, LearnOptions, Strategy, StrategyTable};
use crate::analytic::{bs_price_indifference_oracle, theoretical_hedge, TheoreticalStrategy};
use crate::basis::BasisSet;
use crate::claims::Claim;
use crate::error::{Error, Result};
use crate::market_sim::{simulate_gbm, MarketParams, PathSet, SimConfig, RNG_ALGORITHM};
use crate::optimizer::SolverOptions;
use crate::pricing::{analytic_indifference_price, learned_indifference_price, price_from_expected_utilities, Side};
use crate::risk::{self, log_mean_exp_loss, write_report_csv, RiskReport};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mu: Vec<f64>,
    /// Row-major d×d.
    pub sigma: Vec<f64>,
    pub rate: f64,
    pub s0: Vec<f64>,
    pub horizon: f64,
    pub steps: usize,
    pub claim: String,
    pub basis: String,
    /// Risk aversion used for learning and pricing.
    pub gamma: f64,
    /// Risk aversions at which expected utilities are reported.
    pub report_gammas: Vec<f64>,
    pub levels: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub eval_seed: Option<u64>,
    pub antithetic: bool,
    pub smoothing: Option<f64>,
    pub in_sample: bool,
    pub output: PathBuf,
    pub hedge_path: usize,
    pub solver: SolverOptions,
    pub converge_n: Vec<usize>,
    pub converge_seeds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mu: vec![0.1],
            sigma: vec![0.2],
            rate: 0.0,
            s0: vec![1.0],
            horizon: 1.0,
            steps: 50,
            claim: "put:1.0".into(),
            basis: "poly:2".into(),
            gamma: 1.0,
            report_gammas: risk::DEFAULT_GAMMAS.to_vec(),
            levels: risk::DEFAULT_LEVELS.to_vec(),
            n_paths: 100_000,
            seed: 1,
            eval_seed: None,
            antithetic: false,
            smoothing: None,
            in_sample: false,
            output: PathBuf::from("out"),
            hedge_path: 0,
            solver: SolverOptions::default(),
            converge_n: vec![1_000, 10_000, 100_000],
            converge_seeds: 5,
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad value `{s}` for `{key}`")))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (key, v) = (key.trim(), value.trim());
            match key {
                "mu" => c.mu = parse_list(key, v)?,
                "sigma" => c.sigma = parse_list(key, v)?,
                "r" => c.rate = parse_one(key, v)?,
                "s0" => c.s0 = parse_list(key, v)?,
                "T" => c.horizon = parse_one(key, v)?,
                "K" => c.steps = parse_one(key, v)?,
                "claim" => c.claim = v.to_owned(),
                "basis" => c.basis = v.to_owned(),
                "gamma" => c.gamma = parse_one(key, v)?,
                "gammas" => c.report_gammas = parse_list(key, v)?,
                "levels" => c.levels = parse_list(key, v)?,
                "N" => c.n_paths = parse_one(key, v)?,
                "seed" => c.seed = parse_one(key, v)?,
                "eval_seed" => c.eval_seed = Some(parse_one(key, v)?),
                "antithetic" => c.antithetic = parse_one(key, v)?,
                "smoothing" => {
                    c.smoothing = match v {
                        "none" | "off" => None,
                        _ => Some(parse_one(key, v)?),
                    }
                }
                "in_sample" => c.in_sample = parse_one(key, v)?,
                "output" => c.output = PathBuf::from(v),
                "hedge_path" => c.hedge_path = parse_one(key, v)?,
                "tol_g" => c.solver.tol_g = parse_one(key, v)?,
                "tol_x" => c.solver.tol_x = parse_one(key, v)?,
                "max_iter" => c.solver.max_iter = parse_one(key, v)?,
                "coeff_cap" => c.solver.coeff_cap = parse_one(key, v)?,
                "ridge" => c.solver.ridge = parse_one(key, v)?,
                "converge_n" => c.converge_n = parse_list(key, v)?,
                "converge_seeds" => c.converge_seeds = parse_one(key, v)?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval_seed.unwrap_or(self.seed.wrapping_add(1))
    }

    fn validate(&self) -> Result<()> {
        self.market()?;
        self.claim()?;
        self.basis_set()?;
        if !(self.gamma > 0.0) || self.report_gammas.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::Config("risk aversions must be positive".into()));
        }
        if self.levels.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
            return Err(Error::Config("confidence levels must lie in (0, 1)".into()));
        }
        if self.n_paths < 2 {
            return Err(Error::Config("N must be at least 2".into()));
        }
        if self.hedge_path >= self.n_paths {
            return Err(Error::Config("hedge_path must be a valid path index".into()));
        }
        if let Some(a) = self.smoothing {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config("smoothing must lie in (0, 1]".into()));
            }
        }
        if self.converge_n.iter().any(|n| *n < 2) || self.converge_seeds == 0 {
            return Err(Error::Config(
                "convergence study needs N ≥ 2 and at least one seed".into(),
            ));
        }
        Ok(())
    }

    pub fn market(&self) -> Result<MarketParams> {
        let d = self.mu.len();
        if self.sigma.len() != d * d {
            return Err(Error::Config(format!(
                "sigma needs {} entries for {d} assets, got {}",
                d * d,
                self.sigma.len()
            )));
        }
        MarketParams::new(
            self.mu.clone(),
            DMatrix::from_row_slice(d, d, &self.sigma),
            self.rate,
            self.s0.clone(),
            self.horizon,
            self.steps,
        )
        .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn claim(&self) -> Result<Claim> {
        self.claim.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn basis_set(&self) -> Result<BasisSet> {
        BasisSet::from_descriptor(&self.basis, &self.s0).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn learn_options(&self) -> LearnOptions {
        LearnOptions {
            solver: self.solver,
            smoothing: self.smoothing,
        }
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let s_ = &mut s;
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s_, "{k} = {v}");
        };
        kv("mu", join(&self.mu));
        kv("sigma", join(&self.sigma));
        kv("r", self.rate.to_string());
        kv("s0", join(&self.s0));
        kv("T", self.horizon.to_string());
        kv("K", self.steps.to_string());
        kv("claim", self.claim.clone());
        kv("basis", self.basis.clone());
        kv("gamma", self.gamma.to_string());
        kv("gammas", join(&self.report_gammas));
        kv("levels", join(&self.levels));
        kv("N", self.n_paths.to_string());
        kv("seed", self.seed.to_string());
        kv("eval_seed", self.eval_seed().to_string());
        kv("antithetic", self.antithetic.to_string());
        kv(
            "smoothing",
            self.smoothing.map_or_else(|| "none".to_owned(), |a| a.to_string()),
        );
        kv("in_sample", self.in_sample.to_string());
        kv("output", self.output.display().to_string());
        kv("hedge_path", self.hedge_path.to_string());
        kv("tol_g", self.solver.tol_g.to_string());
        kv("tol_x", self.solver.tol_x.to_string());
        kv("max_iter", self.solver.max_iter.to_string());
        kv("coeff_cap", self.solver.coeff_cap.to_string());
        kv("ridge", self.solver.ridge.to_string());
        kv("converge_n", join(&self.converge_n));
        kv("converge_seeds", self.converge_seeds.to_string());
        s
    }

    fn sim_config(&self, n_paths: usize, seed: u64) -> SimConfig {
        SimConfig::new(n_paths, seed).antithetic(self.antithetic)
    }
}

/// Files staged in a scratch directory and moved into place only once
/// every stage has succeeded.
struct Staging {
    dir: PathBuf,
    target: PathBuf,
    files: Vec<String>,
}

impl Staging {
    fn new(target: &Path) -> Result<Self> {
        let name = target
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let parent = target
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .unwrap_or(Path::new("."));
        fs::create_dir_all(parent)?;
        let dir = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            target: target.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let file = fs::File::create(self.dir.join(name))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_owned());
        Ok(())
    }

    fn commit(mut self) -> Result<()> {
        fs::create_dir_all(&self.target)?;
        for f in std::mem::take(&mut self.files) {
            fs::rename(self.dir.join(&f), self.target.join(&f))?;
        }
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) | Error::Stage { .. } => e,
        other => other.in_stage(stage),
    })
}

/// One evaluated portfolio.
#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub pnl: Vec<f64>,
    pub report: RiskReport,
}

#[derive(Debug, Clone)]
pub struct Prices {
    pub b0_merton_learned: f64,
    pub b0_claim_learned: f64,
    pub indifference_learned: f64,
    pub b0_merton_analytic: f64,
    pub b0_claim_analytic: f64,
    pub indifference_analytic: f64,
    pub oracle: f64,
    pub from_utilities_learned: f64,
    pub from_utilities_true: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub cases: Vec<CaseResult>,
    pub prices: Prices,
    pub merton: StrategyTable,
    pub claim_table: StrategyTable,
}

fn expected_utility(pnl: &[f64], gamma: f64) -> Result<f64> {
    Ok(-log_mean_exp_loss(pnl, gamma)?.exp())
}

/// Runs the full pipeline and writes the artifacts to `config.output`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    let started = Instant::now();
    config.validate()?;
    let params = config.market()?;
    let claim = config.claim()?;
    let basis = config.basis_set()?;
    let opts = config.learn_options();

    let train = staged(
        "simulate",
        simulate_gbm(&params, &config.sim_config(config.n_paths, config.seed)),
    )?;
    let merton = staged("learn merton", learn(&train, &Claim::Zero, &basis, config.gamma, &opts))?;
    let claim_table = if claim.is_zero() {
        merton.clone()
    } else {
        staged("learn claim", learn(&train, &claim, &basis, config.gamma, &opts))?
    };

    let eval_owned;
    let eval: &PathSet = if config.in_sample {
        &train
    } else {
        eval_owned = staged(
            "simulate evaluation paths",
            simulate_gbm(&params, &config.sim_config(config.n_paths, config.eval_seed())),
        )?;
        &eval_owned
    };

    let true_merton = staged(
        "closed form",
        TheoreticalStrategy::new(params.clone(), config.gamma, Claim::Zero),
    )?;
    let true_claim = staged(
        "closed form",
        TheoreticalStrategy::new(params.clone(), config.gamma, claim.clone()),
    )?;
    let mut strategies: Vec<(&str, &dyn Strategy)> = vec![("learned_merton", &merton)];
    if !claim.is_zero() {
        strategies.push(("learned_claim", &claim_table));
    }
    strategies.push(("true_merton", &true_merton));
    if !claim.is_zero() {
        strategies.push(("true_claim", &true_claim));
    }
    let cases = strategies
        .iter()
        .map(|(name, s)| {
            let pnl = staged("apply", apply(*s, eval))?;
            let report = staged("report", risk::report(&pnl, &config.report_gammas, &config.levels))?;
            Ok(CaseResult {
                name: (*name).to_owned(),
                pnl,
                report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let case = |name: &str| cases.iter().find(|c| c.name == name).map(|c| c.pnl.as_slice());
    let learned_claim_pnl = case("learned_claim").or(case("learned_merton")).unwrap();
    let true_claim_pnl = case("true_claim").or(case("true_merton")).unwrap();

    let analytic = staged(
        "price",
        analytic_indifference_price(&params, config.gamma, &claim, Side::Buyer),
    )?;
    let prices = staged(
        "price",
        (|| {
            Ok(Prices {
                b0_merton_learned: merton.b0,
                b0_claim_learned: claim_table.b0,
                indifference_learned: merton.b0 - claim_table.b0,
                b0_merton_analytic: analytic.ce_merton,
                b0_claim_analytic: analytic.ce_claim,
                indifference_analytic: analytic.indifference_price,
                oracle: bs_price_indifference_oracle(&params, &claim)?,
                from_utilities_learned: price_from_expected_utilities(
                    expected_utility(case("learned_merton").unwrap(), config.gamma)?,
                    expected_utility(learned_claim_pnl, config.gamma)?,
                    config.gamma,
                )?,
                from_utilities_true: price_from_expected_utilities(
                    expected_utility(case("true_merton").unwrap(), config.gamma)?,
                    expected_utility(true_claim_pnl, config.gamma)?,
                    config.gamma,
                )?,
            })
        })(),
    )?;

    let hedge_rows = staged(
        "hedge path",
        (1..=params.steps())
            .map(|k| {
                let state = eval.state(config.hedge_path, k - 1);
                let mut learned = vec![0.0; params.assets()];
                claim_table.holdings(k, state, &mut learned)?;
                let theory = theoretical_hedge(&params, config.gamma, &claim, state, params.time(k - 1))?;
                Ok((k, state.to_vec(), learned, theory))
            })
            .collect::<Result<Vec<_>>>(),
    )?;

    let mut out = Staging::new(&config.output)?;
    out.write("report.csv", |w| {
        let rows: Vec<(String, RiskReport)> = cases.iter().map(|c| (c.name.clone(), c.report.clone())).collect();
        write_report_csv(&rows, w)
    })?;
    for c in &cases {
        out.write(&format!("pnl_{}.csv", c.name), |w| {
            writeln!(w, "path,pnl")?;
            for (i, x) in c.pnl.iter().enumerate() {
                writeln!(w, "{i},{x:.12e}")?;
            }
            Ok(())
        })?;
    }
    out.write("hedge_path.csv", |w| {
        writeln!(w, "step,time,asset,price,learned_shares,theoretical_shares")?;
        for (k, state, learned, theory) in &hedge_rows {
            for j in 0..learned.len() {
                writeln!(
                    w,
                    "{k},{:.12e},{j},{:.12e},{:.12e},{:.12e}",
                    params.time(k - 1),
                    state[j],
                    learned[j],
                    theory[j]
                )?;
            }
        }
        Ok(())
    })?;
    out.write("strategy.csv", |w| claim_table.write_csv(w))?;
    if !claim.is_zero() {
        out.write("strategy_merton.csv", |w| merton.write_csv(w))?;
    }
    out.write("prices.csv", |w| write_prices(&prices, w))?;
    out.write("config.txt", |w| w.write_all(config.to_config_string().as_bytes()))?;
    out.write("meta.txt", |w| {
        writeln!(w, "rng = {RNG_ALGORITHM}")?;
        writeln!(w, "seed = {}", config.seed)?;
        writeln!(w, "eval_seed = {}", config.eval_seed())?;
        writeln!(
            w,
            "evaluation = {}",
            if config.in_sample { "in-sample (training paths)" } else { "out-of-sample (fresh paths)" }
        )?;
        writeln!(w, "paths = {}", config.n_paths)?;
        writeln!(w, "steps = {}", params.steps())?;
        writeln!(w, "basis = {} (R = {})", basis.descriptor(), basis.len())?;
        writeln!(w, "feature_normalization = moneyness S/S0; per-step standardization of non-constant features")?;
        writeln!(
            w,
            "solver = damped Newton on log objective; tol_g = {}, tol_x = {}, max_iter = {}, coeff_cap = {}, ridge = {}",
            config.solver.tol_g, config.solver.tol_x, config.solver.max_iter, config.solver.coeff_cap, config.solver.ridge
        )?;
        writeln!(w, "quantile = {}", risk::QUANTILE_CONVENTION)?;
        writeln!(w, "utility_scale = E[-exp(-gamma X)] without 1/gamma")?;
        writeln!(w, "claim_premium = excluded from reported P&L")?;
        writeln!(w, "price_side = buyer of `{}`", claim)?;
        for (name, t) in [("merton", &merton), ("claim", &claim_table)] {
            let max_iter = t.diagnostics.iter().map(|d| d.iterations).max().unwrap_or(0);
            let regularized = t
                .diagnostics
                .iter()
                .filter(|d| d.status == crate::optimizer::OptimStatus::Regularized)
                .count();
            writeln!(w, "learn_{name} = max_iterations {max_iter}, regularized_steps {regularized}")?;
        }
        writeln!(w, "wall_time_seconds = {:.3}", started.elapsed().as_secs_f64())
    })?;
    out.commit()?;

    Ok(RunSummary {
        cases,
        prices,
        merton,
        claim_table,
    })
}

pub fn write_prices<W: Write + ?Sized>(p: &Prices, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "quantity,value")?;
    let rows = [
        ("b0_merton_learned", p.b0_merton_learned),
        ("b0_claim_learned", p.b0_claim_learned),
        ("indifference_price_learned", p.indifference_learned),
        ("b0_merton_analytic", p.b0_merton_analytic),
        ("b0_claim_analytic", p.b0_claim_analytic),
        ("indifference_price_analytic", p.indifference_analytic),
        ("bs_oracle_price", p.oracle),
        ("price_from_utilities_learned", p.from_utilities_learned),
        ("price_from_utilities_true", p.from_utilities_true),
    ];
    for (k, v) in rows {
        writeln!(w, "{k},{v:.12e}")?;
    }
    Ok(())
}

/// Learned buyer's indifference price of the configured claim on the
/// training paths, with the closed-form value alongside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceEstimate {
    pub n_paths: usize,
    pub seed: u64,
    pub b0_merton: f64,
    pub b0_claim: f64,
    pub learned: f64,
    pub oracle: f64,
}

pub fn estimate_price(config: &RunConfig, n_paths: usize, seed: u64) -> Result<PriceEstimate> {
    let params = config.market()?;
    let claim = config.claim()?;
    let basis = config.basis_set()?;
    let paths = staged("simulate", simulate_gbm(&params, &config.sim_config(n_paths, seed)))?;
    let learned = staged(
        "learn",
        learned_indifference_price(
            &params,
            &paths,
            seed,
            &claim,
            Side::Buyer,
            &basis,
            config.gamma,
            &config.learn_options(),
        ),
    )?;
    Ok(PriceEstimate {
        n_paths,
        seed,
        b0_merton: learned.result.ce_merton,
        b0_claim: learned.result.ce_claim,
        learned: learned.result.indifference_price,
        oracle: staged("price", bs_price_indifference_oracle(&params, &claim))?,
    })
}

/// Writes `prices.csv` and the resolved config for the pricing-only
/// pipeline.
pub fn price(config: &RunConfig) -> Result<PriceEstimate> {
    let est = estimate_price(config, config.n_paths, config.seed)?;
    let mut out = Staging::new(&config.output)?;
    out.write("prices.csv", |w| {
        writeln!(w, "quantity,value")?;
        writeln!(w, "b0_merton_learned,{:.12e}", est.b0_merton)?;
        writeln!(w, "b0_claim_learned,{:.12e}", est.b0_claim)?;
        writeln!(w, "indifference_price_learned,{:.12e}", est.learned)?;
        writeln!(w, "bs_oracle_price,{:.12e}", est.oracle)
    })?;
    out.write("config.txt", |w| w.write_all(config.to_config_string().as_bytes()))?;
    out.commit()?;
    Ok(est)
}

/// Writes the training paths to `paths.csv`.
pub fn simulate(config: &RunConfig) -> Result<PathSet> {
    let params = config.market()?;
    let paths = staged(
        "simulate",
        simulate_gbm(&params, &config.sim_config(config.n_paths, config.seed)),
    )?;
    let mut out = Staging::new(&config.output)?;
    out.write("paths.csv", |w| paths.write_csv(w))?;
    out.write("config.txt", |w| w.write_all(config.to_config_string().as_bytes()))?;
    out.commit()?;
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n_paths: usize,
    pub seed: u64,
    pub learned: f64,
    pub oracle: f64,
    pub abs_error: f64,
}

/// Learned price error against the closed form for every `(N, seed)` with
/// `N ∈ converge_n` and seeds `seed, seed+1, …`.
pub fn convergence_study(config: &RunConfig) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::with_capacity(config.converge_n.len() * config.converge_seeds);
    for &n in &config.converge_n {
        for s in 0..config.converge_seeds {
            let seed = config.seed.wrapping_add(s as u64);
            let est = estimate_price(config, n, seed)?;
            rows.push(ConvergenceRow {
                n_paths: n,
                seed,
                learned: est.learned,
                oracle: est.oracle,
                abs_error: (est.learned - est.oracle).abs(),
            });
        }
    }
    Ok(rows)
}

pub fn write_convergence_csv<W: Write>(rows: &[ConvergenceRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "n,seed,learned_price,oracle_price,abs_error")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.12e},{:.12e},{:.12e}",
            r.n_paths, r.seed, r.learned, r.oracle, r.abs_error
        )?;
    }
    Ok(())
}

/// Runs the convergence study and writes `convergence.csv`.
pub fn converge(config: &RunConfig) -> Result<Vec<ConvergenceRow>> {
    let rows = convergence_study(config)?;
    let mut out = Staging::new(&config.output)?;
    out.write("convergence.csv", |w| write_convergence_csv(&rows, w))?;
    out.write("config.txt", |w| w.write_all(config.to_config_string().as_bytes()))?;
    out.commit()?;
    Ok(rows)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median absolute error per sample size, ascending in `N`.
pub fn median_errors(rows: &[ConvergenceRow]) -> Vec<(usize, f64)> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n_paths).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let errs: Vec<f64> = rows.iter().filter(|r| r.n_paths == n).map(|r| r.abs_error).collect();
            (n, median(&errs))
        })
        .collect()
}

/// Least-squares slope of `log err` against `log N`.
pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_experiment() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        let p = c.market().unwrap();
        assert_eq!(p.steps(), 50);
        assert_eq!(p.lambda(), &[0.5]);
        assert_eq!(c.eval_seed(), 2);
    }

    #[test]
    fn parses_keys_and_comments() {
        let c = RunConfig::parse(
            "# market\nmu = 0.1, 0.05\nsigma = 0.2, 0, 0, 0.3 # diagonal\ns0 = 1, 1\nN = 500\nclaim = -put:1.0\n\
             smoothing = 0.5\nin_sample = true\ntol_g = 1e-9\nconverge_n = 100, 200\n",
        )
        .unwrap();
        assert_eq!(c.mu, vec![0.1, 0.05]);
        assert_eq!(c.market().unwrap().assets(), 2);
        assert_eq!(c.claim().unwrap(), Claim::put(1.0).negated());
        assert_eq!(c.smoothing, Some(0.5));
        assert!(c.in_sample);
        assert_eq!(c.solver.tol_g, 1e-9);
        assert_eq!(c.converge_n, vec![100, 200]);
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            "bogus = 1",
            "N = many",
            "N = 1",
            "sigma = 0.2, 0.1",
            "claim = swap:1",
            "basis = spline:2",
            "K = 0",
            "levels = 1.5",
            "no equals sign",
        ] {
            let err = RunConfig::parse(bad).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{bad}: {err}");
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::parse("N = 321\nseed = 9\nsmoothing = 0.25\nclaim = call:1.1\n").unwrap();
        let text = c.to_config_string();
        assert!(text.contains("eval_seed = 10"));
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(back.to_config_string(), text);
        assert_eq!(back.eval_seed(), c.eval_seed());
    }

    #[test]
    fn slope_and_median_helpers() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let pts = [(100, 1.0), (10_000, 0.1)];
        assert!((loglog_slope(&pts) + 0.5).abs() < 1e-12);
    }
}
