//! Fast self-checks run by the `validate` command.

use std::fmt;

use crate::aux_ar;
use crate::error::Result;
use crate::experiment::{run_experiment, ConfigFile};
use crate::gm::{self, GmConfig, PsiSpec};
use crate::indirect::{self, IndirectConfig, LinkMode};
use crate::levy::{simulate_carma_path, DriverConfig};
use crate::linalg;
use crate::model::{self, ModelFamily};
use crate::qmle;
use crate::rng::{stream, StreamRole};

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, res: Result<(bool, String)>) -> CheckOutcome {
    match res {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

const CARMA31_THETA0: [f64; 5] = [-1.0, -2.0, -2.0, 0.0, 1.0];

fn lyapunov() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (theta, fam) in [(vec![-2.0], ModelFamily::car1()), (CARMA31_THETA0.to_vec(), ModelFamily::carma31())] {
        let spec = model::build_state_space_raw(&theta, &fam)?;
        let sigma = model::stationary_state_cov(&spec)?;
        let q = model::noise_input_cov(&spec);
        let rel = linalg::lyapunov_residual(&spec.a, &sigma, &q) / q.norm();
        worst = worst.max(rel);
    }
    Ok((worst < 1e-10, format!("max relative residual {worst:.2e}")))
}

fn car1_link() -> Result<(bool, String)> {
    let th = model::ThetaParam::unbounded(vec![-2.0]);
    let a = aux_ar::link_function(&th, &ModelFamily::car1(), 1.0, 3)?;
    let err = (a.pis[0] - (-2.0f64).exp()).abs().max(a.pis[1].abs()).max(a.pis[2].abs());
    Ok((err <= 1e-10, format!("max deviation {err:.2e}")))
}

fn gm_is_ls() -> Result<(bool, String)> {
    let spec = model::build_state_space_raw(&CARMA31_THETA0, &ModelFamily::carma31())?;
    let s = simulate_carma_path(&spec, 1000, 1.0, &DriverConfig::brownian(1.0), &mut stream(3, 0, StreamRole::Auxiliary))?;
    let g = gm::gm_estimate(&s, 5, &GmConfig::least_squares())?;
    let l = aux_ar::ls_estimate(&s, 5)?;
    let err = (g.aux.to_vector() - l.to_vector()).amax();
    Ok((err <= 1e-8, format!("max |GM - LS| {err:.2e}")))
}

fn analytic_recovery() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for (theta, fam, r) in [(vec![-2.0], ModelFamily::car1(), 1), (CARMA31_THETA0.to_vec(), ModelFamily::carma31(), 5)] {
        let pi = aux_ar::link_function(&model::ThetaParam::unbounded(theta.clone()), &fam, 1.0, r)?;
        let mut cfg = IndirectConfig::new(r, 1, DriverConfig::brownian(1.0));
        cfg.mode = LinkMode::Analytic;
        let est = indirect::indirect_estimate_from_aux(&pi, 1000, 1.0, &fam, &cfg)?;
        let err = est
            .theta_hat
            .values
            .iter()
            .zip(&theta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }
    Ok((worst <= 1e-6, format!("max |theta_hat - theta0| {worst:.2e}")))
}

fn omega_scaling() -> Result<(bool, String)> {
    let fam = ModelFamily::car1();
    let spec = model::build_state_space_raw(&[-2.0], &fam)?;
    let s = simulate_carma_path(&spec, 1000, 1.0, &DriverConfig::brownian(1.0), &mut stream(5, 0, StreamRole::Auxiliary))?;
    let base = IndirectConfig::new(1, 5, DriverConfig::brownian(1.0)).with_seed(5, 0);
    let mut scaled = base.clone();
    scaled.omega = Some(vec![vec![7.5, 0.0], vec![0.0, 7.5]]);
    let a = indirect::indirect_estimate(&s, &fam, &base)?;
    let b = indirect::indirect_estimate(&s, &fam, &scaled)?;
    let d = (a.theta_hat.values[0] - b.theta_hat.values[0]).abs();
    Ok((d <= 1e-6, format!("argmin shift {d:.2e}")))
}

fn psi_properties() -> Result<(bool, String)> {
    let mut bad = 0;
    for psi in [PsiSpec::huber(4.0), PsiSpec::bisquare(4.0)] {
        for i in 0..=400 {
            let u = -10.0 + 0.05 * i as f64;
            let v = psi.psi(u);
            if (v + psi.psi(-u)).abs() > 0.0 || v.abs() > 4.0 {
                bad += 1;
            }
            if matches!(psi.kind, gm::PsiKind::Bisquare) && u.abs() >= 4.0 && v != 0.0 {
                bad += 1;
            }
        }
    }
    Ok((bad == 0, format!("{bad} violations on the grid")))
}

fn kalman_ar1() -> Result<(bool, String)> {
    let fam = ModelFamily::car1();
    let spec = model::build_state_space_raw(&[-2.0], &fam)?;
    let s = simulate_carma_path(&spec, 500, 1.0, &DriverConfig::brownian(1.0), &mut stream(6, 0, StreamRole::Auxiliary))?;
    let mut worst: f64 = 0.0;
    for th in [-2.0f64, -0.5] {
        let k = qmle::kalman_quasi_loglik_raw(&[th], &fam, &s)?;
        let pi = th.exp();
        let g0 = 1.0 / (-2.0 * th);
        let s2 = g0 * (1.0 - pi * pi);
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let x = &s.values;
        let mut l = -0.5 * (ln2pi + g0.ln() + x[0] * x[0] / g0);
        for m in 1..x.len() {
            let e = x[m] - pi * x[m - 1];
            l -= 0.5 * (ln2pi + s2.ln() + e * e / s2);
        }
        worst = worst.max((k - l).abs());
    }
    Ok((worst <= 1e-8, format!("max loglik difference {worst:.2e}")))
}

const TINY: &str = r#"
[model]
family = "car1"
theta0 = [-1.0]
scale = "nuisance"
[driver]
kind = "brownian"
sigma_l2 = 1.0
[outliers]
gamma = 0.05
mode = "replacement"
value = { kind = "constant", xi = 5.0 }
temporal = { kind = "isolated" }
[estimators]
list = ["indirect", "qmle"]
r = 1
s = 2
[run]
n = 300
replications = 4
master_seed = 99
name = "determinism"
"#;

fn determinism() -> Result<(bool, String)> {
    let spec = ConfigFile::parse(TINY)?.expand()?.remove(0);
    let a = run_experiment(&spec, 1)?.table.to_csv_string();
    let b = run_experiment(&spec, 1)?.table.to_csv_string();
    let c = run_experiment(&spec, 3)?.table.to_csv_string();
    Ok((a == b && a == c, format!("repeat equal: {}, 1 vs 3 threads equal: {}", a == b, a == c)))
}

/// Runs every check.
pub fn run_property_checks() -> Vec<CheckOutcome> {
    vec![
        outcome("lyapunov_residual", lyapunov()),
        outcome("car1_link", car1_link()),
        outcome("gm_reduces_to_ls", gm_is_ls()),
        outcome("analytic_recovery", analytic_recovery()),
        outcome("omega_scaling", omega_scaling()),
        outcome("psi_properties", psi_properties()),
        outcome("kalman_ar1", kalman_ar1()),
        outcome("seed_and_thread_determinism", determinism()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for c in run_property_checks() {
            assert!(c.passed, "{c}");
        }
    }
}
