//! Lookup-table activation approximations.
//!
//! The PL-side aggregation kernel evaluates sigmoid/tanh through an indexed
//! table rather than computing transcendentals; this module models that table:
//! uniformly spaced nodes over a fixed domain, linear interpolation between
//! bracketing entries, clamping outside the domain.
//!
//! Defaults used throughout the crate: 1025 entries over `[-8, 8]`, which a
//! dense scan bounds below 1e-3 absolute error for both functions.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LutError {
    #[error("invalid LUT domain: lo={lo}, hi={hi}")]
    InvalidDomain { lo: f64, hi: f64 },
    #[error("LUT needs at least 2 entries, got {0}")]
    TooFewEntries(usize),
    #[error("LUT entries not monotone nondecreasing at index {0}")]
    NotMonotone(usize),
    #[error("LUT midpoint at x=0 is {got}, expected {expected}")]
    BadMidpoint { got: f64, expected: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LutKind {
    Sigmoid,
    Tanh,
}

impl LutKind {
    pub fn exact(&self, x: f64) -> f64 {
        match self {
            LutKind::Sigmoid => crate::gru::sigmoid(x),
            LutKind::Tanh => x.tanh(),
        }
    }
}

/// Sampled activation function with linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationLut {
    pub kind: LutKind,
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub entries: Vec<f64>,
}

pub const DEFAULT_LUT_ENTRIES: usize = 1025;
pub const DEFAULT_LUT_DOMAIN: (f64, f64) = (-8.0, 8.0);

/// Sample `kind` at `n_entries` uniformly spaced nodes over `[lo, hi]`.
pub fn build_lut(kind: LutKind, domain: (f64, f64), n_entries: usize) -> Result<ActivationLut, LutError> {
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(LutError::InvalidDomain { lo, hi });
    }
    if n_entries < 2 {
        return Err(LutError::TooFewEntries(n_entries));
    }
    let step = (hi - lo) / (n_entries - 1) as f64;
    let entries = (0..n_entries).map(|i| kind.exact(lo + i as f64 * step)).collect();
    Ok(ActivationLut {
        kind,
        domain_lo: lo,
        domain_hi: hi,
        entries,
    })
}

impl ActivationLut {
    /// Default table for the given function: 1025 entries over `[-8, 8]`.
    pub fn default_for(kind: LutKind) -> Self {
        build_lut(kind, DEFAULT_LUT_DOMAIN, DEFAULT_LUT_ENTRIES).expect("default LUT parameters are valid")
    }

    pub fn n_entries(&self) -> usize {
        self.entries.len()
    }

    /// Evaluate by linear interpolation; inputs outside the domain clamp to
    /// the boundary entries, which makes this a total function.
    pub fn eval(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        if x <= self.domain_lo {
            return self.entries[0];
        }
        if x >= self.domain_hi {
            return *self.entries.last().expect("LUT has >= 2 entries");
        }
        let n = self.entries.len();
        let step = (self.domain_hi - self.domain_lo) / (n - 1) as f64;
        let pos = (x - self.domain_lo) / step;
        let idx = (pos.floor() as usize).min(n - 2);
        let frac = pos - idx as f64;
        self.entries[idx] + frac * (self.entries[idx + 1] - self.entries[idx])
    }

    /// Structural invariants: enough entries, ordered domain, monotone
    /// nondecreasing entries (both modeled functions are monotone), and the
    /// exact function value when zero lands on a grid node.
    pub fn validate(&self) -> Result<(), LutError> {
        if self.entries.len() < 2 {
            return Err(LutError::TooFewEntries(self.entries.len()));
        }
        if !(self.domain_lo.is_finite() && self.domain_hi.is_finite()) || self.domain_lo >= self.domain_hi {
            return Err(LutError::InvalidDomain {
                lo: self.domain_lo,
                hi: self.domain_hi,
            });
        }
        for (i, w) in self.entries.windows(2).enumerate() {
            if w[1] < w[0] {
                return Err(LutError::NotMonotone(i + 1));
            }
        }
        // Check the zero grid node if one exists.
        let n = self.entries.len();
        let step = (self.domain_hi - self.domain_lo) / (n - 1) as f64;
        let pos = -self.domain_lo / step;
        if pos >= 0.0 && pos.fract() == 0.0 && (pos as usize) < n {
            let got = self.entries[pos as usize];
            let expected = match self.kind {
                LutKind::Sigmoid => 0.5,
                LutKind::Tanh => 0.0,
            };
            if got != expected {
                return Err(LutError::BadMidpoint { got, expected });
            }
        }
        Ok(())
    }
}
