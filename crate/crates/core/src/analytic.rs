//! Closed-form results for the complete GBM market: Merton's exponential
//! utility portfolio, Black–Scholes prices and deltas, the optimal hedge and
//! certainty-equivalent values.
//!
//! Claims are written on *discounted* prices, which are `Q`-martingales, so
//! their risk-neutral values are Black–Scholes values at zero rate.

use nalgebra::DVector;
use statrs::function::erf::erfc;

use crate::claims::Claim;
use crate::error::{Error, Result};
use crate::market_sim::MarketParams;

/// Standard normal CDF, `½ erfc(−x/√2)`.
///
/// `statrs`' `erfc` uses the Boost rational approximations, accurate to a
/// few ulps over the whole real line, so tails keep full relative precision.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsQuote {
    pub price: f64,
    pub delta: f64,
    pub spot: f64,
    pub strike: f64,
    pub vol: f64,
    pub rate: f64,
    pub maturity: f64,
}

fn check_inputs(spot: f64, strike: f64, vol: f64, rate: f64, maturity: f64) -> Result<()> {
    let positive = [spot, strike, vol, maturity];
    if positive.iter().any(|x| !(*x > 0.0 && x.is_finite())) || !rate.is_finite() {
        return Err(Error::InvalidInput(format!(
            "Black-Scholes needs positive spot/strike/vol/maturity, got ({spot}, {strike}, {vol}, {rate}, {maturity})"
        )));
    }
    Ok(())
}

fn d1_d2(spot: f64, strike: f64, vol: f64, rate: f64, maturity: f64) -> (f64, f64) {
    let sd = vol * maturity.sqrt();
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * maturity) / sd;
    (d1, d1 - sd)
}

pub fn bs_put(spot: f64, strike: f64, vol: f64, rate: f64, maturity: f64) -> Result<BsQuote> {
    check_inputs(spot, strike, vol, rate, maturity)?;
    let (d1, d2) = d1_d2(spot, strike, vol, rate, maturity);
    let df = (-rate * maturity).exp();
    Ok(BsQuote {
        price: strike * df * norm_cdf(-d2) - spot * norm_cdf(-d1),
        delta: -norm_cdf(-d1),
        spot,
        strike,
        vol,
        rate,
        maturity,
    })
}

pub fn bs_call(spot: f64, strike: f64, vol: f64, rate: f64, maturity: f64) -> Result<BsQuote> {
    check_inputs(spot, strike, vol, rate, maturity)?;
    let (d1, d2) = d1_d2(spot, strike, vol, rate, maturity);
    let df = (-rate * maturity).exp();
    Ok(BsQuote {
        price: spot * norm_cdf(d1) - strike * df * norm_cdf(d2),
        delta: norm_cdf(d1),
        spot,
        strike,
        vol,
        rate,
        maturity,
    })
}

/// Merton's exponential-utility holding in shares:
/// `Σ_i ((σσᵀ)⁻¹)_{ij}(μ_i − r) / (γ S_j)`.
pub fn merton_holding(params: &MarketParams, gamma: f64, spot: &[f64]) -> Result<Vec<f64>> {
    let d = params.assets();
    if spot.len() < d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: spot.len(),
        });
    }
    let dollars = merton_dollars(params, gamma)?;
    Ok(dollars.iter().zip(spot).map(|(a, s)| a / s).collect())
}

/// Constant dollar amount per asset held by the Merton portfolio.
pub fn merton_dollars(params: &MarketParams, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "risk aversion must be positive, got {gamma}"
        )));
    }
    let d = params.assets();
    let excess = DVector::from_iterator(d, params.mu().iter().map(|m| m - params.rate()));
    let weights = params
        .covariance()
        .cholesky()
        .ok_or(Error::SingularSigma)?
        .solve(&excess);
    Ok(weights.iter().map(|w| w / gamma).collect())
}

/// `½‖λ‖²(t − T)`.
pub fn merton_certainty_equivalent(params: &MarketParams, t: f64) -> Result<f64> {
    if !(0.0..=params.horizon()).contains(&t) {
        return Err(Error::InvalidInput(format!(
            "time {t} outside [0, {}]",
            params.horizon()
        )));
    }
    Ok(0.5 * params.lambda_norm_sq() * (t - params.horizon()))
}

fn first_asset_vol(params: &MarketParams) -> f64 {
    params.covariance()[(0, 0)].sqrt()
}

/// Risk-neutral value and delta (in the first asset) of the received claim
/// with `tau` years left.
fn claim_value_delta(params: &MarketParams, claim: &Claim, spot: f64, tau: f64) -> Result<(f64, f64)> {
    match claim {
        Claim::Zero => Ok((0.0, 0.0)),
        Claim::Negated(c) => {
            let (v, d) = claim_value_delta(params, c, spot, tau)?;
            Ok((-v, -d))
        }
        Claim::Put(k) | Claim::Call(k) if tau <= 0.0 || *k == 0.0 => {
            let is_put = matches!(claim, Claim::Put(_));
            let (v, d) = if is_put {
                ((k - spot).max(0.0), if spot < *k { -1.0 } else { 0.0 })
            } else {
                ((spot - k).max(0.0), if spot > *k { 1.0 } else { 0.0 })
            };
            Ok((v, d))
        }
        Claim::Put(k) => {
            let q = bs_put(spot, *k, first_asset_vol(params), 0.0, tau)?;
            Ok((q.price, q.delta))
        }
        Claim::Call(k) => {
            let q = bs_call(spot, *k, first_asset_vol(params), 0.0, tau)?;
            Ok((q.price, q.delta))
        }
        Claim::Table { name, .. } => Err(Error::NotImplemented(format!(
            "closed-form hedge for custom claim `{name}`"
        ))),
    }
}

/// Optimal holding `Ĥ_t = Ĥ⁰_t + H^B_t` for an agent who receives `claim` at
/// the horizon; `H^B` is minus the replicating holding of the claim.
pub fn theoretical_hedge(params: &MarketParams, gamma: f64, claim: &Claim, state: &[f64], t: f64) -> Result<Vec<f64>> {
    let mut h = merton_holding(params, gamma, state)?;
    if !claim.is_zero() {
        let tau = params.horizon() - t;
        let (_, delta) = claim_value_delta(params, claim, state[0], tau)?;
        h[0] -= delta;
    }
    Ok(h)
}

/// `E_Q[Φ]`. In the complete GBM market this is the indifference price for
/// every risk aversion, and also the Davis price.
pub fn bs_price_indifference_oracle(params: &MarketParams, claim: &Claim) -> Result<f64> {
    if params.untraded_factors() > 0 {
        return Err(Error::NotImplemented(
            "risk-neutral pricing in an incomplete market".into(),
        ));
    }
    claim_value_delta(params, claim, params.s0()[0], params.horizon()).map(|(v, _)| v)
}

/// The closed-form optimal strategy, usable wherever a learned strategy is.
#[derive(Debug, Clone)]
pub struct TheoreticalStrategy {
    params: MarketParams,
    gamma: f64,
    claim: Claim,
    dollars: Vec<f64>,
}

impl TheoreticalStrategy {
    pub fn new(params: MarketParams, gamma: f64, claim: Claim) -> Result<Self> {
        let dollars = merton_dollars(&params, gamma)?;
        Ok(Self {
            params,
            gamma,
            claim,
            dollars,
        })
    }

    pub fn params(&self) -> &MarketParams {
        &self.params
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn claim(&self) -> &Claim {
        &self.claim
    }

    /// Same as [`theoretical_hedge`] with the Merton part precomputed.
    pub fn hedge_into(&self, state: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        for ((o, a), s) in out.iter_mut().zip(&self.dollars).zip(state) {
            *o = a / s;
        }
        if !self.claim.is_zero() {
            let (_, delta) = claim_value_delta(&self.params, &self.claim, state[0], self.params.horizon() - t)?;
            out[0] -= delta;
        }
        Ok(())
    }
}
