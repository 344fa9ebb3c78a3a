//! Terminal claims `Φ(Z_T)`.
//!
//! A claim's payoff is the cash the agent *receives* at the horizon. A
//! liability is written as `negated(...)`, e.g. `-put:1.0`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type PayoffFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Claim {
    Zero,
    /// `max(strike − S¹_T, 0)` on the first traded asset.
    Put(f64),
    /// `max(S¹_T − strike, 0)` on the first traded asset.
    Call(f64),
    Negated(Box<Claim>),
    /// Arbitrary bounded payoff on the terminal state.
    Table {
        name: String,
        payoff: PayoffFn,
    },
}

impl Claim {
    pub fn put(strike: f64) -> Self {
        Claim::Put(strike)
    }

    pub fn call(strike: f64) -> Self {
        Claim::Call(strike)
    }

    pub fn negated(self) -> Self {
        Claim::Negated(Box::new(self))
    }

    pub fn custom(name: impl Into<String>, payoff: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Claim::Table {
            name: name.into(),
            payoff: Arc::new(payoff),
        }
    }

    /// True if the payoff is zero in every state.
    pub fn is_zero(&self) -> bool {
        match self {
            Claim::Zero => true,
            Claim::Negated(c) => c.is_zero(),
            _ => false,
        }
    }

    fn eval(&self, state: &[f64]) -> f64 {
        match self {
            Claim::Zero => 0.0,
            Claim::Put(k) => (k - state[0]).max(0.0),
            Claim::Call(k) => (state[0] - k).max(0.0),
            Claim::Negated(c) => -c.eval(state),
            Claim::Table { payoff, .. } => payoff(state),
        }
    }
}

/// Payoff received for the given terminal state. `state_dim` is the market's
/// state dimension.
pub fn payoff(claim: &Claim, terminal_state: &[f64], state_dim: usize) -> Result<f64> {
    if terminal_state.len() != state_dim {
        return Err(Error::DimensionMismatch {
            expected: state_dim,
            got: terminal_state.len(),
        });
    }
    Ok(claim.eval(terminal_state))
}

impl fmt::Debug for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Claim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Claim::Zero => write!(f, "zero"),
            Claim::Put(k) => write!(f, "put:{k}"),
            Claim::Call(k) => write!(f, "call:{k}"),
            Claim::Negated(c) => write!(f, "-{c}"),
            Claim::Table { name, .. } => write!(f, "table:{name}"),
        }
    }
}

impl PartialEq for Claim {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Claim::Zero, Claim::Zero) => true,
            (Claim::Put(a), Claim::Put(b)) | (Claim::Call(a), Claim::Call(b)) => a == b,
            (Claim::Negated(a), Claim::Negated(b)) => a == b,
            (Claim::Table { payoff: a, .. }, Claim::Table { payoff: b, .. }) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl FromStr for Claim {
    type Err = Error;

    /// Accepts `zero`, `put:<strike>`, `call:<strike>` and any of those
    /// prefixed by `-` (repeatable).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix('-') {
            return Ok(rest.parse::<Claim>()?.negated());
        }
        if s == "zero" {
            return Ok(Claim::Zero);
        }
        let (kind, strike) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("unrecognized claim `{s}`")))?;
        let strike: f64 = strike
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad strike in claim `{s}`")))?;
        if !(strike.is_finite() && strike >= 0.0) {
            return Err(Error::Parse(format!("strike must be finite and non-negative in `{s}`")));
        }
        match kind.trim() {
            "put" => Ok(Claim::Put(strike)),
            "call" => Ok(Claim::Call(strike)),
            other => Err(Error::Parse(format!("unknown claim kind `{other}`"))),
        }
    }
}
