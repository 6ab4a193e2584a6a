//! Gaussian quasi-maximum-likelihood for the sampled state space, via the Kalman filter.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aux_ar;
use crate::error::{Error, Result};
use crate::indirect::ThetaEstimate;
use crate::levy::SampledSeries;
use crate::linalg;
use crate::model::{self, DriverScale, FamilyKind, ModelFamily, ThetaParam};
use crate::optim::{self, BoxBounds, OptimizerConfig};
use crate::rng::{SeedKey, StreamRole};

/// Added to the innovation variance; the sampled process carries no observation noise.
pub const INNOVATION_JITTER: f64 = 1e-12;

/// Negative log-likelihood assigned to infeasible parameters, before the squared
/// violation is added. Far above any attainable negative log-likelihood.
pub const QMLE_PENALTY: f64 = 1e12;

/// Filter state before observation `m` is seen.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub x_pred: DVector<f64>,
    pub p_pred: DMatrix<f64>,
    pub loglik_acc: f64,
}

/// Gaussian quasi log-likelihood of the innovations of `series` under `ϑ`.
pub fn kalman_quasi_loglik(theta: &ThetaParam, family: &ModelFamily, series: &SampledSeries) -> Result<f64> {
    kalman_quasi_loglik_raw(&theta.values, family, series)
}

pub fn kalman_quasi_loglik_raw(theta: &[f64], family: &ModelFamily, series: &SampledSeries) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::SeriesTooShort { needed: 1, got: 0 });
    }
    let spec = model::build_state_space_raw(theta, family)?;
    model::check_stationarity(&spec)?
        .then_some(())
        .ok_or(Error::NotStationary {
            max_real: spec.spectral_abscissa()?,
        })?;
    let sigma = model::stationary_state_cov(&spec)?;
    let f = linalg::expm(&(&spec.a * series.h));
    let q = {
        let m = &sigma - &f * &sigma * f.transpose();
        (&m + m.transpose()) * 0.5
    };
    let c = &spec.c;
    let mut st = KalmanState {
        x_pred: DVector::zeros(spec.p),
        p_pred: sigma,
        loglik_acc: 0.0,
    };
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    // Σ ν²/S and Σ ln S, for profiling out a nuisance driver scale
    let (mut quad, mut logdet) = (0.0, 0.0);
    for (m, &y) in series.values.iter().enumerate() {
        let pc = &st.p_pred * c;
        let s = c.dot(&pc) + INNOVATION_JITTER;
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Numerical(format!("innovation variance {s} at step {m}")));
        }
        let nu = y - c.dot(&st.x_pred);
        st.loglik_acc -= 0.5 * (ln2pi + s.ln() + nu * nu / s);
        quad += nu * nu / s;
        logdet += s.ln();
        let x_upd = &st.x_pred + &pc * (nu / s);
        let p_upd = &st.p_pred - &pc * pc.transpose() / s;
        st.x_pred = &f * x_upd;
        let p = &f * p_upd * f.transpose() + &q;
        st.p_pred = (&p + p.transpose()) * 0.5;
    }
    if !st.loglik_acc.is_finite() {
        return Err(Error::NonFinite("Kalman filter diverged".into()));
    }
    match family.scale {
        DriverScale::Known => Ok(st.loglik_acc),
        DriverScale::Nuisance => {
            // innovation variances scale with σ_L²; maximize over that factor
            let n = series.len() as f64;
            let factor = quad / n;
            if !(factor > 0.0) {
                return Err(Error::Numerical("zero innovation sum of squares".into()));
            }
            Ok(-0.5 * (n * ln2pi + logdet + n * factor.ln() + n))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmleConfig {
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub replication: u64,
}

impl Default for QmleConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            lower: None,
            upper: None,
            master_seed: 0,
            replication: 0,
        }
    }
}

impl QmleConfig {
    pub fn bounds(&self, family: &ModelFamily) -> Result<BoxBounds> {
        let (lo, up) = match (&self.lower, &self.upper) {
            (Some(l), Some(u)) => (l.clone(), u.clone()),
            _ => family.default_box().ok_or_else(|| {
                Error::Config(format!("family {} needs an explicit parameter box", family.name()))
            })?,
        };
        if lo.len() != family.dim() {
            return Err(Error::DimensionMismatch {
                expected: family.dim(),
                got: lo.len(),
            });
        }
        BoxBounds::new(lo, up)
    }
}

fn negative_loglik(theta: &[f64], family: &ModelFamily, series: &SampledSeries) -> f64 {
    let violation = model::build_state_space_raw(theta, family)
        .and_then(|spec| model::constraint_violation(&spec, series.h));
    match violation {
        Ok(v) if v > 0.0 => QMLE_PENALTY + v * v,
        Err(_) => QMLE_PENALTY + 1.0,
        Ok(_) => match kalman_quasi_loglik_raw(theta, family, series) {
            Ok(l) => -l,
            Err(_) => QMLE_PENALTY + 1.0,
        },
    }
}

/// Maximizes the quasi log-likelihood over the box.
pub fn qmle_estimate(series: &SampledSeries, family: &ModelFamily, cfg: &QmleConfig) -> Result<ThetaEstimate> {
    if series.len() < 2 {
        return Err(Error::SeriesTooShort {
            needed: 2,
            got: series.len(),
        });
    }
    family.validate_scale()?;
    let bounds = cfg.bounds(family)?;
    let start = match family.kind {
        FamilyKind::Car1 => {
            let p1 = aux_ar::ls_estimate(series, 1)?.pis[0];
            if p1 > 0.0 && p1 < 1.0 {
                bounds.clip(&[p1.ln() / series.h])
            } else {
                bounds.clip(&[0.5 * (bounds.lower[0] + bounds.upper[0])])
            }
        }
        _ => bounds
            .lower
            .iter()
            .zip(&bounds.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect(),
    };
    let mut rng = SeedKey::new(cfg.master_seed, cfg.replication).stream(StreamRole::Optimizer);
    let res = optim::minimize_box(
        |x| negative_loglik(x, family, series),
        &start,
        &bounds,
        &cfg.optimizer,
        &mut rng,
    )?;
    let feasible = res.fval < QMLE_PENALTY;
    Ok(ThetaEstimate {
        theta_hat: ThetaParam::new(res.x, bounds.lower.clone(), bounds.upper.clone())?,
        objective: res.fval,
        pi_hat: None,
        evals: res.evals,
        converged: res.converged && feasible,
        on_boundary: res.on_boundary,
        cov: None,
    })
}
