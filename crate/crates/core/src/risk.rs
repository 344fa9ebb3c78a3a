//! Summary statistics of a terminal P&L sample: moments, expected
//! exponential utilities, value-at-risk and conditional value-at-risk.
//!
//! VaR at confidence `c` is the lower-tail P&L quantile, taken as the order
//! statistic of rank `⌈(1−c)n⌉` without interpolation, so losses show up as
//! negative numbers. CVaR is the mean of all observations at or below it.
//! Expected utilities are `E[−exp(−γX)]` with no `1/γ` factor.

use std::io::Write;

use crate::error::{Error, Result};

pub const DEFAULT_GAMMAS: [f64; 3] = [0.25, 1.0, 4.0];
pub const DEFAULT_LEVELS: [f64; 2] = [0.99, 0.90];

/// Recorded in run metadata.
pub const QUANTILE_CONVENTION: &str = "lower order statistic at rank ceil((1-c)n), no interpolation";

#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    /// `(γ, E[−exp(−γX)])`
    pub utilities: Vec<(f64, f64)>,
    /// `(c, VaR_c)`
    pub var: Vec<(f64, f64)>,
    /// `(c, CVaR_c)`
    pub cvar: Vec<(f64, f64)>,
}

impl RiskReport {
    pub fn utility(&self, gamma: f64) -> Option<f64> {
        self.utilities.iter().find(|(g, _)| *g == gamma).map(|(_, u)| *u)
    }

    pub fn value_at_risk(&self, level: f64) -> Option<f64> {
        self.var.iter().find(|(c, _)| *c == level).map(|(_, v)| *v)
    }

    pub fn conditional_value_at_risk(&self, level: f64) -> Option<f64> {
        self.cvar.iter().find(|(c, _)| *c == level).map(|(_, v)| *v)
    }
}

/// 1-based rank of the lower-tail order statistic for confidence `c`.
pub fn tail_rank(n: usize, level: f64) -> usize {
    // Guard against (1 − 0.99)·1000 = 10.000000000000009.
    let raw = (1.0 - level) * n as f64;
    ((raw - 1e-9).ceil() as usize).clamp(1, n)
}

pub fn report(pnl: &[f64], gammas: &[f64], levels: &[f64]) -> Result<RiskReport> {
    let n = pnl.len();
    if n < 2 {
        return Err(Error::EmptySample(2));
    }
    if let Some(bad) = levels.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
        return Err(Error::InvalidInput(format!("confidence level {bad} outside (0, 1)")));
    }
    let nf = n as f64;
    let mean = pnl.iter().sum::<f64>() / nf;
    let std = (pnl.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0)).sqrt();
    let utilities = gammas
        .iter()
        .map(|&g| (g, -pnl.iter().map(|x| (-g * x).exp()).sum::<f64>() / nf))
        .collect();

    let mut sorted = pnl.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut var = Vec::with_capacity(levels.len());
    let mut cvar = Vec::with_capacity(levels.len());
    for &c in levels {
        let q = sorted[tail_rank(n, c) - 1];
        let tail: Vec<f64> = sorted.iter().copied().take_while(|x| *x <= q).collect();
        var.push((c, q));
        cvar.push((c, tail.iter().sum::<f64>() / tail.len() as f64));
    }
    Ok(RiskReport {
        n,
        mean,
        std,
        utilities,
        var,
        cvar,
    })
}

/// `log E[exp(−γX)]` over the sample, computed with a max shift.
pub fn log_mean_exp_loss(pnl: &[f64], gamma: f64) -> Result<f64> {
    if pnl.is_empty() {
        return Err(Error::EmptySample(1));
    }
    let shift = pnl.iter().map(|x| -gamma * x).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = pnl.iter().map(|x| (-gamma * x - shift).exp()).sum();
    Ok(shift + (sum / pnl.len() as f64).ln())
}

fn pct(level: f64) -> String {
    format!("{}", (level * 100.0).round() as i64)
}

/// Writes one row per case. Columns: `case,mean,std,u1..,var<c>..,cvar<c>..`
/// with utilities and levels in report order.
pub fn write_report_csv<W: Write>(rows: &[(String, RiskReport)], mut out: W) -> std::io::Result<()> {
    let Some((_, first)) = rows.first() else {
        return Ok(());
    };
    let mut header = vec!["case".to_owned(), "mean".to_owned(), "std".to_owned()];
    header.extend((1..=first.utilities.len()).map(|i| format!("u{i}")));
    header.extend(first.var.iter().map(|(c, _)| format!("var{}", pct(*c))));
    header.extend(first.cvar.iter().map(|(c, _)| format!("cvar{}", pct(*c))));
    writeln!(out, "{}", header.join(","))?;
    for (case, r) in rows {
        let mut cols = vec![case.clone(), format!("{:.10}", r.mean), format!("{:.10}", r.std)];
        cols.extend(r.utilities.iter().map(|(_, u)| format!("{u:.10}")));
        cols.extend(r.var.iter().map(|(_, v)| format!("{v:.10}")));
        cols.extend(r.cvar.iter().map(|(_, v)| format!("{v:.10}")));
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}
