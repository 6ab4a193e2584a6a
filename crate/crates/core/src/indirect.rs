//! The indirect estimator: match the auxiliary AR(r) fit of the data with the
//! least-squares fit of paths simulated from one frozen driver draw.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aux_ar::{self, AuxParam};
use crate::error::{Error, Result};
use crate::gm::{self, GmConfig, PsiSpec, ScaleEquation, WeightSpec};
use crate::levy::{self, DriverCache, DriverConfig, SampledSeries};
use crate::linalg;
use crate::model::{self, FamilyKind, ModelFamily, ThetaParam};
use crate::optim::{self, BoxBounds, OptimizerConfig};
use crate::rng::{SeedKey, StreamRole};

/// Objective value at parameters violating stationarity or identifiability,
/// before the squared violation is added.
pub const INFEASIBLE_PENALTY: f64 = 1e6;

/// Estimator used on the observed series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataLeg {
    #[default]
    Gm,
    Ls,
}

/// How `π(ϑ)` is evaluated inside the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMode {
    /// LS fit of a path simulated from the cached driver draw.
    #[default]
    Simulated,
    /// Exact Yule–Walker link, no simulation noise.
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndirectConfig {
    pub r: usize,
    pub s: usize,
    /// Row-major `(r+1)×(r+1)` weighting matrix; identity when absent.
    #[serde(default)]
    pub omega: Option<Vec<Vec<f64>>>,
    pub sim_driver: DriverConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub gm: GmConfig,
    #[serde(default)]
    pub data_leg: DataLeg,
    #[serde(default)]
    pub mode: LinkMode,
    /// Parameter box; the family default when absent.
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub replication: u64,
}

impl IndirectConfig {
    pub fn new(r: usize, s: usize, sim_driver: DriverConfig) -> Self {
        Self {
            r,
            s,
            omega: None,
            sim_driver,
            optimizer: OptimizerConfig::default(),
            gm: GmConfig::default(),
            data_leg: DataLeg::Gm,
            mode: LinkMode::Simulated,
            lower: None,
            upper: None,
            master_seed: 0,
            replication: 0,
        }
    }

    pub fn with_seed(mut self, master_seed: u64, replication: u64) -> Self {
        self.master_seed = master_seed;
        self.replication = replication;
        self
    }

    pub fn validate(&self, family: &ModelFamily) -> Result<()> {
        if self.r < aux_ar::min_order(family.order()) {
            return Err(Error::Config(format!(
                "auxiliary order r = {} is below 2p - 1 = {}",
                self.r,
                aux_ar::min_order(family.order())
            )));
        }
        if self.s < 1 {
            return Err(Error::Config("simulation multiplier s must be at least 1".into()));
        }
        family.validate_scale()?;
        self.omega_matrix()?;
        self.sim_driver.validate()?;
        self.optimizer.validate()?;
        self.gm.validate()?;
        self.bounds(family)?;
        Ok(())
    }

    /// Ω, checked for symmetry and positive definiteness.
    pub fn omega_matrix(&self) -> Result<DMatrix<f64>> {
        let d = self.r + 1;
        let Some(rows) = &self.omega else {
            return Ok(DMatrix::identity(d, d));
        };
        if rows.len() != d || rows.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: rows.len(),
            });
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
            return Err(Error::Config("weighting matrix must be symmetric".into()));
        }
        if m.clone().cholesky().is_none() {
            return Err(Error::Config("weighting matrix must be positive definite".into()));
        }
        Ok(m)
    }

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

/// Result of one estimation run.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub theta_hat: ThetaParam,
    /// Objective value at `theta_hat` (for the QMLE, the negative quasi log-likelihood).
    pub objective: f64,
    /// Auxiliary fit of the data, when the estimator uses one.
    pub pi_hat: Option<AuxParam>,
    pub evals: usize,
    /// Data-leg fit and optimizer both converged.
    pub converged: bool,
    pub on_boundary: bool,
    pub cov: Option<DMatrix<f64>>,
}

impl ThetaEstimate {
    /// Counted as a failed replication: non-convergence or an optimum on the box boundary.
    pub fn failed(&self) -> bool {
        !self.converged || self.on_boundary
    }
}

/// `dᵀ Ω d`.
pub fn quadratic_form(d: &DVector<f64>, omega: &DMatrix<f64>) -> f64 {
    (d.transpose() * omega * d)[(0, 0)]
}

/// The objective `ℒ(ϑ) = [π̂ - π̂^S(ϑ)]ᵀ Ω [π̂ - π̂^S(ϑ)]` with its data fixed.
pub struct IndirectObjective<'a> {
    family: &'a ModelFamily,
    h: f64,
    r: usize,
    /// Leading block of Ω over the matched components.
    omega: DMatrix<f64>,
    target: DVector<f64>,
    cache: Option<&'a DriverCache>,
}

impl<'a> IndirectObjective<'a> {
    /// `cache` is required in simulated mode and ignored in analytic mode.
    pub fn new(
        family: &'a ModelFamily,
        h: f64,
        pi_hat: &AuxParam,
        cfg: &IndirectConfig,
        cache: Option<&'a DriverCache>,
    ) -> Result<Self> {
        if pi_hat.order() != cfg.r {
            return Err(Error::DimensionMismatch {
                expected: cfg.r,
                got: pi_hat.order(),
            });
        }
        let cache = match cfg.mode {
            LinkMode::Analytic => None,
            LinkMode::Simulated => Some(cache.ok_or_else(|| {
                Error::Config("simulated mode needs a driver cache".into())
            })?),
        };
        let k = family.matched_aux_dim(cfg.r);
        Ok(Self {
            family,
            h,
            r: cfg.r,
            omega: cfg.omega_matrix()?.view((0, 0), (k, k)).into_owned(),
            target: pi_hat.to_vector().rows(0, k).into_owned(),
            cache,
        })
    }

    /// `π̂^S(ϑ)`, or the reason it cannot be formed together with a constraint violation.
    pub fn simulated_aux(&self, theta: &[f64]) -> std::result::Result<AuxParam, f64> {
        let spec = model::build_state_space_raw(theta, self.family).map_err(|_| 1.0)?;
        let violation = model::constraint_violation(&spec, self.h).map_err(|_| 1.0)?;
        if violation > 0.0 {
            return Err(violation);
        }
        match self.cache {
            None => aux_ar::link_from_spec(&spec, self.h, self.r).map_err(|_| 1.0),
            Some(cache) => {
                let path = levy::simulate_with_cache(&spec, self.h, cache).map_err(|_| 1.0)?;
                aux_ar::ls_estimate_values(&path, self.r).map_err(|_| 1.0)
            }
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match self.simulated_aux(theta) {
            Ok(aux) => {
                let k = self.target.len();
                quadratic_form(&(&self.target - aux.to_vector().rows(0, k)), &self.omega)
            }
            Err(v) => INFEASIBLE_PENALTY + v * v,
        }
    }
}

/// Evaluates the indirect objective at one parameter.
pub fn indirect_objective(
    theta: &ThetaParam,
    pi_hat: &AuxParam,
    family: &ModelFamily,
    h: f64,
    cfg: &IndirectConfig,
    levy_cache: Option<&DriverCache>,
) -> Result<f64> {
    Ok(IndirectObjective::new(family, h, pi_hat, cfg, levy_cache)?.value(&theta.values))
}

/// The driver draw shared by all objective evaluations of one run.
pub fn simulation_cache(family: &ModelFamily, n: usize, h: f64, cfg: &IndirectConfig) -> Result<DriverCache> {
    let mut rng = SeedKey::new(cfg.master_seed, cfg.replication).stream(StreamRole::Simulation);
    DriverCache::generate(family.order(), cfg.s * n, h, &cfg.sim_driver, &mut rng)
}

/// Auxiliary fit of the observed series by the configured data leg.
pub fn data_leg_estimate(series: &SampledSeries, cfg: &IndirectConfig) -> Result<(AuxParam, bool)> {
    match cfg.data_leg {
        DataLeg::Ls => Ok((aux_ar::ls_estimate(series, cfg.r)?, true)),
        DataLeg::Gm => {
            let est = gm::gm_estimate(series, cfg.r, &cfg.gm)?;
            Ok((est.aux, est.converged))
        }
    }
}

/// Start for the simplex: `ln(π̂₁)/h` for CARMA(1,0) (the AR(1) moment match),
/// the box center otherwise.
pub fn starting_point(family: &ModelFamily, pi_hat: &AuxParam, h: f64, bounds: &BoxBounds) -> Vec<f64> {
    let center: Vec<f64> = bounds
        .lower
        .iter()
        .zip(&bounds.upper)
        .map(|(l, u)| 0.5 * (l + u))
        .collect();
    match family.kind {
        FamilyKind::Car1 => {
            let p1 = pi_hat.pis[0];
            if p1 > 0.0 && p1 < 1.0 {
                bounds.clip(&[p1.ln() / h])
            } else {
                center
            }
        }
        _ => center,
    }
}

/// Indirect estimate from an already computed auxiliary fit of `n` observations.
pub fn indirect_estimate_from_aux(
    pi_hat: &AuxParam,
    n: usize,
    h: f64,
    family: &ModelFamily,
    cfg: &IndirectConfig,
) -> Result<ThetaEstimate> {
    cfg.validate(family)?;
    let bounds = cfg.bounds(family)?;
    let cache = match cfg.mode {
        LinkMode::Simulated => Some(simulation_cache(family, n, h, cfg)?),
        LinkMode::Analytic => None,
    };
    let objective = IndirectObjective::new(family, h, pi_hat, cfg, cache.as_ref())?;
    let start = starting_point(family, pi_hat, h, &bounds);
    let mut rng = SeedKey::new(cfg.master_seed, cfg.replication).stream(StreamRole::Optimizer);
    let res = optim::minimize_box(|x| objective.value(x), &start, &bounds, &cfg.optimizer, &mut rng)?;
    Ok(ThetaEstimate {
        theta_hat: ThetaParam::new(res.x, bounds.lower.clone(), bounds.upper.clone())?,
        objective: res.fval,
        pi_hat: Some(pi_hat.clone()),
        evals: res.evals,
        converged: res.converged,
        on_boundary: res.on_boundary,
        cov: None,
    })
}

/// Indirect estimate of `ϑ` from a series.
pub fn indirect_estimate(series: &SampledSeries, family: &ModelFamily, cfg: &IndirectConfig) -> Result<ThetaEstimate> {
    if series.len() <= cfg.r + 1 {
        return Err(Error::SeriesTooShort {
            needed: cfg.r + 2,
            got: series.len(),
        });
    }
    let (pi_hat, leg_converged) = data_leg_estimate(series, cfg)?;
    let mut est = indirect_estimate_from_aux(&pi_hat, series.len(), series.h, family, cfg)?;
    est.converged &= leg_converged;
    Ok(est)
}

/// `∇_ϑ π(ϑ)` by central differences of the exact link, step `1e-5 (1 + |ϑ_i|)`.
pub fn link_gradient(theta: &[f64], family: &ModelFamily, h: f64, r: usize) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let mut g = DMatrix::zeros(r + 1, d);
    for i in 0..d {
        let step = 1e-5 * (1.0 + theta[i].abs());
        let mut up = theta.to_vec();
        let mut dn = theta.to_vec();
        up[i] += step;
        dn[i] -= step;
        let fu = aux_ar::link_from_spec(&model::build_state_space_raw(&up, family)?, h, r)?.to_vector();
        let fd = aux_ar::link_from_spec(&model::build_state_space_raw(&dn, family)?, h, r)?.to_vector();
        g.set_column(i, &((fu - fd) / (2.0 * step)));
    }
    Ok(g)
}

/// Bartlett lag `⌊4 (n/100)^{2/9}⌋`.
pub fn bartlett_lag(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// Long-run covariance of a vector sequence with Bartlett weights.
pub fn long_run_cov(terms: &[DVector<f64>], lag: usize) -> DMatrix<f64> {
    let m = terms.len();
    let d = terms.first().map_or(0, |t| t.len());
    let mean = gm::mean_of(terms, d);
    let centered: Vec<DVector<f64>> = terms.iter().map(|t| t - &mean).collect();
    let autocov = |l: usize| {
        let mut acc = DMatrix::zeros(d, d);
        for k in l..m {
            acc += &centered[k] * centered[k - l].transpose();
        }
        acc / m as f64
    };
    let mut out = autocov(0);
    for l in 1..=lag.min(m.saturating_sub(1)) {
        let w = 1.0 - l as f64 / (lag as f64 + 1.0);
        let g = autocov(l);
        out += (&g + g.transpose()) * w;
    }
    out
}

/// Estimating-function sandwich `J⁻¹ I J⁻ᵀ` for `√n (π̂ - π)`.
fn aux_sandwich(
    x: &[f64],
    aux: &AuxParam,
    psi: &PsiSpec,
    c_ref: f64,
    weight: &WeightSpec,
    scale: f64,
    eq: ScaleEquation,
) -> Result<DMatrix<f64>> {
    let d = aux.order() + 1;
    let base = aux.to_vector();
    let mean_at = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let a = AuxParam::from_vector(v)?;
        let terms = gm::estimating_terms_at(x, &a, psi, c_ref, weight, scale, eq);
        Ok(gm::mean_of(&terms, d))
    };
    let mut jac = DMatrix::zeros(d, d);
    for i in 0..d {
        let step = 1e-5 * (1.0 + base[i].abs());
        let mut up = base.clone();
        let mut dn = base.clone();
        up[i] += step;
        dn[i] -= step;
        jac.set_column(i, &((mean_at(&up)? - mean_at(&dn)?) / (2.0 * step)));
    }
    let terms = gm::estimating_terms_at(x, aux, psi, c_ref, weight, scale, eq);
    let info = long_run_cov(&terms, bartlett_lag(x.len()));
    let jinv = jac
        .try_inverse()
        .ok_or_else(|| Error::Singular("estimating-equation Jacobian".into()))?;
    Ok(&jinv * info * jinv.transpose())
}

/// `Ξ = J⁻¹ ∇πᵀ Ω [Ξ_D + Ξ_S/s] Ω ∇π J⁻¹ / n` with `J = ∇πᵀ Ω ∇π`.
///
/// `s = None` drops the simulation term.
pub fn sandwich_from_parts(
    grad: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    xi_d: &DMatrix<f64>,
    xi_s: &DMatrix<f64>,
    s: Option<f64>,
    n: usize,
) -> Result<DMatrix<f64>> {
    let j = grad.transpose() * omega * grad;
    let cond = linalg::spd_condition(&j);
    if !(cond < linalg::MAX_CONDITION) {
        return Err(Error::Singular(format!(
            "link gradient is rank deficient (condition number {cond:.3e})"
        )));
    }
    let jinv = linalg::inverse(&j, "link-gradient information")?;
    let mid = match s {
        Some(s) => xi_d + xi_s / s,
        None => xi_d.clone(),
    };
    let info = grad.transpose() * omega * mid * omega * grad;
    Ok(&jinv * info * &jinv / n as f64)
}

/// Sandwich covariance of the indirect estimate at `theta_hat`.
pub fn asymptotic_cov(
    theta_hat: &ThetaParam,
    family: &ModelFamily,
    cfg: &IndirectConfig,
    series: &SampledSeries,
) -> Result<DMatrix<f64>> {
    let n = series.len();
    let h = series.h;
    let grad = link_gradient(&theta_hat.values, family, h, cfg.r)?;
    let x = &series.values;
    let xi_d = match cfg.data_leg {
        DataLeg::Gm => {
            let est = gm::gm_estimate(series, cfg.r, &cfg.gm)?;
            aux_sandwich(x, &est.aux, &est.psi, est.c_ref, &est.weight, est.regressor_scale, est.scale_equation)?
        }
        DataLeg::Ls => {
            let aux = aux_ar::ls_estimate(series, cfg.r)?;
            aux_sandwich(x, &aux, &PsiSpec::identity(), 1.0, &WeightSpec::none(), 1.0, ScaleEquation::Unweighted)?
        }
    };
    let spec = model::build_state_space(theta_hat, family)?;
    let cache = simulation_cache(family, n, h, cfg)?;
    let path = levy::simulate_with_cache(&spec, h, &cache)?;
    let aux_s = aux_ar::ls_estimate_values(&path, cfg.r)?;
    let xi_s = aux_sandwich(&path, &aux_s, &PsiSpec::identity(), 1.0, &WeightSpec::none(), 1.0, ScaleEquation::Unweighted)?;
    let k = family.matched_aux_dim(cfg.r);
    let block = |m: &DMatrix<f64>| m.view((0, 0), (k, k)).into_owned();
    sandwich_from_parts(
        &grad.rows(0, k).into_owned(),
        &block(&cfg.omega_matrix()?),
        &block(&xi_d),
        &block(&xi_s),
        Some(cfg.s as f64),
        n,
    )
}
