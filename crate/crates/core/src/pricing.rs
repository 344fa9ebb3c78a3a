//! Certainty equivalents and exponential-utility indifference prices.
//!
//! All certainty equivalents here use the convention of
//! [`crate::allocation::StrategyTable::b0`]: `B₀ = (1/γ) log Ψ̃₁`, where the
//! optimal expected utility is `−exp(γ B₀)`. Lower is better; Merton's value
//! is `−½‖λ‖²T`.

use crate::allocation::{learn, LearnOptions, StrategyTable};
use crate::analytic::{bs_price_indifference_oracle, merton_certainty_equivalent};
use crate::basis::BasisSet;
use crate::claims::Claim;
use crate::error::{Error, Result};
use crate::market_sim::{MarketParams, PathSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Pays the price now, receives the claim at the horizon.
    Buyer,
    /// Receives the price now, delivers the claim at the horizon.
    Seller,
}

impl Side {
    /// The claim received by an agent on this side of a trade in `claim`.
    pub fn received(self, claim: &Claim) -> Claim {
        match self {
            Side::Buyer => claim.clone(),
            Side::Seller => claim.clone().negated(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Buyer => "buyer",
            Side::Seller => "seller",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Learned { n_paths: usize, seed: u64, basis: String },
    Analytic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertaintyEquivalent {
    pub value: f64,
    pub gamma: f64,
    pub market: MarketParams,
    pub provenance: Provenance,
}

impl CertaintyEquivalent {
    pub fn from_table(table: &StrategyTable, market: &MarketParams, provenance: Provenance) -> Self {
        Self {
            value: table.b0,
            gamma: table.gamma,
            market: market.clone(),
            provenance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricingResult {
    pub ce_claim: f64,
    pub ce_merton: f64,
    pub indifference_price: f64,
    pub side: Side,
    pub gamma: f64,
    pub provenance: Provenance,
}

/// Indifference price from two certainty equivalents: `ce_claim` for the
/// position actually held by `side` and `ce_merton` for no claim.
pub fn indifference_price(
    ce_claim: &CertaintyEquivalent,
    ce_merton: &CertaintyEquivalent,
    side: Side,
) -> Result<PricingResult> {
    if ce_claim.gamma != ce_merton.gamma || ce_claim.market != ce_merton.market {
        return Err(Error::MixedProvenance);
    }
    let price = match side {
        Side::Seller => ce_claim.value - ce_merton.value,
        Side::Buyer => ce_merton.value - ce_claim.value,
    };
    Ok(PricingResult {
        ce_claim: ce_claim.value,
        ce_merton: ce_merton.value,
        indifference_price: price,
        side,
        gamma: ce_claim.gamma,
        provenance: ce_claim.provenance.clone(),
    })
}

/// Buyer's price from the expected utilities `E[−exp(−γX)]` of the Merton
/// and claim portfolios: `(1/γ)(log(−u_merton) − log(−u_claim))`.
pub fn price_from_expected_utilities(u_merton: f64, u_claim: f64, gamma: f64) -> Result<f64> {
    for u in [u_merton, u_claim] {
        if !(u < 0.0) {
            return Err(Error::NonNegativeUtility(u));
        }
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!(
            "risk aversion must be positive, got {gamma}"
        )));
    }
    Ok(((-u_merton).ln() - (-u_claim).ln()) / gamma)
}

/// Closed-form certainty equivalent at `t = 0` for an agent receiving
/// `received` in the complete GBM market: `−½‖λ‖²T − E_Q[Φ]`.
pub fn analytic_certainty_equivalent(
    params: &MarketParams,
    gamma: f64,
    received: &Claim,
) -> Result<CertaintyEquivalent> {
    let value = merton_certainty_equivalent(params, 0.0)? - bs_price_indifference_oracle(params, received)?;
    Ok(CertaintyEquivalent {
        value,
        gamma,
        market: params.clone(),
        provenance: Provenance::Analytic,
    })
}

pub fn analytic_indifference_price(
    params: &MarketParams,
    gamma: f64,
    claim: &Claim,
    side: Side,
) -> Result<PricingResult> {
    let with = analytic_certainty_equivalent(params, gamma, &side.received(claim))?;
    let without = analytic_certainty_equivalent(params, gamma, &Claim::Zero)?;
    indifference_price(&with, &without, side)
}

/// Learned strategies for the Merton problem and for the position in
/// `claim`, both fitted on the same paths.
#[derive(Debug, Clone)]
pub struct LearnedPricing {
    pub merton: StrategyTable,
    pub position: StrategyTable,
    pub result: PricingResult,
}

#[allow(clippy::too_many_arguments)]
pub fn learned_indifference_price(
    params: &MarketParams,
    paths: &PathSet,
    seed: u64,
    claim: &Claim,
    side: Side,
    basis: &BasisSet,
    gamma: f64,
    opts: &LearnOptions,
) -> Result<LearnedPricing> {
    let provenance = Provenance::Learned {
        n_paths: paths.n_paths(),
        seed,
        basis: basis.descriptor().to_owned(),
    };
    let merton = learn(paths, &Claim::Zero, basis, gamma, opts)?;
    let position = learn(paths, &side.received(claim), basis, gamma, opts)?;
    let result = indifference_price(
        &CertaintyEquivalent::from_table(&position, params, provenance.clone()),
        &CertaintyEquivalent::from_table(&merton, params, provenance),
        side,
    )?;
    Ok(LearnedPricing {
        merton,
        position,
        result,
    })
}

/// Davis (marginal utility) price. Only the complete GBM market is
/// supported, where it equals the risk-neutral expectation.
pub fn davis_price_complete(params: &MarketParams, claim: &Claim) -> Result<f64> {
    if params.untraded_factors() > 0 {
        return Err(Error::NotImplemented(
            "Davis price in an incomplete market requires the minimal entropy martingale measure".into(),
        ));
    }
    bs_price_indifference_oracle(params, claim)
}
