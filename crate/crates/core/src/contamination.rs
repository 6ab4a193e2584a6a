//! Replacement and additive outliers, isolated or in patches.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::SampledSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutlierMode {
    /// `(1 - V_m) Y_m + V_m Z_m`.
    Replacement,
    /// `Y_m + V_m W_m`.
    Additive,
}

/// Law of the outlier values `Z_m` (replacement) or shifts `W_m` (additive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OutlierValue {
    Constant { xi: f64 },
    /// i.i.d. normal values.
    Normal { mean: f64, sd: f64 },
}

impl OutlierValue {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            OutlierValue::Constant { xi } => xi,
            OutlierValue::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
        }
    }
}

/// Temporal structure of the outlier indicators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Temporal {
    /// i.i.d. Bernoulli(γ) indicators.
    Isolated,
    /// `V_m = max(B_{m-l}, …, B_m)` with i.i.d. Bernoulli(ε) `B`.
    Patchy { l: usize, epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierConfig {
    pub gamma: f64,
    pub mode: OutlierMode,
    pub value: OutlierValue,
    pub temporal: Temporal,
}

impl OutlierConfig {
    pub fn none() -> Self {
        Self::additive(0.0, 0.0)
    }

    /// Isolated additive outliers of constant size `xi` with probability `gamma`.
    pub fn additive(xi: f64, gamma: f64) -> Self {
        Self {
            gamma,
            mode: OutlierMode::Additive,
            value: OutlierValue::Constant { xi },
            temporal: Temporal::Isolated,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "contamination probability must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if let Temporal::Patchy { l, epsilon } = self.temporal {
            if l < 1 || !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Config(format!(
                    "patchy outliers need l >= 1 and epsilon in [0, 1], got l={l}, epsilon={epsilon}"
                )));
            }
        }
        if let OutlierValue::Normal { sd, .. } = self.value {
            if !(sd >= 0.0) {
                return Err(Error::Config(format!("outlier sd must be non-negative, got {sd}")));
            }
        }
        Ok(())
    }

    /// Whether this configuration can never produce an outlier.
    pub fn is_clean(&self) -> bool {
        match self.temporal {
            Temporal::Isolated => self.gamma == 0.0,
            Temporal::Patchy { epsilon, .. } => epsilon == 0.0,
        }
    }
}

/// Patchy indicator sequence; indices before `l` only look at the draws that exist.
pub fn patchy_indicator<R: Rng + ?Sized>(n: usize, epsilon: f64, l: usize, rng: &mut R) -> Vec<bool> {
    let b: Vec<bool> = (0..n).map(|_| rng.random_bool(epsilon.clamp(0.0, 1.0))).collect();
    let mut out = vec![false; n];
    // index of the last success seen so far
    let mut last: Option<usize> = None;
    for m in 0..n {
        if b[m] {
            last = Some(m);
        }
        out[m] = matches!(last, Some(j) if m - j <= l);
    }
    out
}

/// Outlier indicators for a series of length `n`.
pub fn indicators<R: Rng + ?Sized>(n: usize, cfg: &OutlierConfig, rng: &mut R) -> Vec<bool> {
    match cfg.temporal {
        Temporal::Isolated => (0..n).map(|_| rng.random_bool(cfg.gamma)).collect(),
        Temporal::Patchy { l, epsilon } => patchy_indicator(n, epsilon, l, rng),
    }
}

/// Contaminates a series. Indicators and outlier values are drawn before any
/// observation is read, so they are independent of the series.
pub fn contaminate<R: Rng + ?Sized>(
    series: &SampledSeries,
    cfg: &OutlierConfig,
    rng: &mut R,
) -> Result<SampledSeries> {
    Ok(contaminate_with_flags(series, cfg, rng)?.0)
}

/// As [`contaminate`], also returning the indicator sequence.
pub fn contaminate_with_flags<R: Rng + ?Sized>(
    series: &SampledSeries,
    cfg: &OutlierConfig,
    rng: &mut R,
) -> Result<(SampledSeries, Vec<bool>)> {
    cfg.validate()?;
    let n = series.len();
    let flags = indicators(n, cfg, rng);
    let draws: Vec<f64> = (0..n).map(|_| cfg.value.draw(rng)).collect();
    let mut out = series.clone();
    for m in 0..n {
        if flags[m] {
            out.values[m] = match cfg.mode {
                OutlierMode::Replacement => draws[m],
                OutlierMode::Additive => series.values[m] + draws[m],
            };
        }
    }
    out.meta.contaminated = true;
    Ok((out, flags))
}
