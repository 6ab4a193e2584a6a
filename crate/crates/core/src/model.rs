//! Parametric CARMA model families: state-space construction, stationarity and
//! sampling-identifiability checks, stationary state covariance and the exact
//! autocovariance function.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalues with real part above this are treated as non-stationary.
pub const STATIONARITY_TOL: f64 = -1e-8;

/// A point of the parameter space together with the box that defines it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaParam {
    pub values: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ThetaParam {
    pub fn new(values: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::InvalidParameter("parameter vector is empty".into()));
        }
        if lower.len() != n || upper.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: lower.len().min(upper.len()),
            });
        }
        for i in 0..n {
            if !(lower[i] <= upper[i]) {
                return Err(Error::InvalidParameter(format!(
                    "lower bound {} exceeds upper bound {} in component {i}",
                    lower[i], upper[i]
                )));
            }
            if !(lower[i] <= values[i] && values[i] <= upper[i]) {
                return Err(Error::InvalidParameter(format!(
                    "component {i} = {} lies outside [{}, {}]",
                    values[i], lower[i], upper[i]
                )));
            }
        }
        Ok(Self {
            values,
            lower,
            upper,
        })
    }

    /// Unbounded point, for callers that only need the values.
    pub fn unbounded(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            values,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Same box, different point.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.lower.clone(), self.upper.clone())
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }
}

/// AR and MA coefficients produced by a family for one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    /// `a_1, …, a_p` of `z^p + a_1 z^{p-1} + … + a_p`.
    pub ar: Vec<f64>,
    /// Observation vector in state order, `(c_q, …, c_0, 0, …, 0)`.
    pub c: Vec<f64>,
}

type CoefficientMap = dyn Fn(&[f64]) -> Result<Coefficients> + Send + Sync;

/// Map from a parameter vector to CARMA coefficients.
#[derive(Clone)]
pub enum FamilyKind {
    /// CARMA(1,0): `A = ϑ`, `c = 1`.
    Car1,
    /// CARMA(3,1): last row of `A` is `(ϑ₁, ϑ₂, ϑ₃)`, `c = (ϑ₄, ϑ₅, 0)`.
    Carma31,
    /// User-supplied smooth map with AR order `p` and parameter dimension `dim`.
    Custom {
        name: String,
        p: usize,
        dim: usize,
        map: Arc<CoefficientMap>,
    },
}

impl fmt::Debug for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyKind::Car1 => write!(f, "Car1"),
            FamilyKind::Carma31 => write!(f, "Carma31"),
            FamilyKind::Custom { name, p, dim, .. } => {
                write!(f, "Custom({name}, p={p}, dim={dim})")
            }
        }
    }
}

/// Whether the driving-noise variance is part of what the estimators may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverScale {
    /// `σ_L²` is known; the residual scale carries information about `ϑ`.
    #[default]
    Known,
    /// `σ_L²` is an unknown nuisance: the indirect objective ignores the residual
    /// scale and the quasi-likelihood is profiled over it.
    Nuisance,
}

/// A parametric CARMA family with a driving-noise variance.
#[derive(Debug, Clone)]
pub struct ModelFamily {
    pub kind: FamilyKind,
    pub sigma_l2: f64,
    pub scale: DriverScale,
}

impl ModelFamily {
    pub fn car1() -> Self {
        Self {
            kind: FamilyKind::Car1,
            sigma_l2: 1.0,
            scale: DriverScale::Known,
        }
    }

    pub fn carma31() -> Self {
        Self {
            kind: FamilyKind::Carma31,
            sigma_l2: 1.0,
            scale: DriverScale::Known,
        }
    }

    pub fn custom<F>(name: impl Into<String>, p: usize, dim: usize, map: F) -> Self
    where
        F: Fn(&[f64]) -> Result<Coefficients> + Send + Sync + 'static,
    {
        Self {
            kind: FamilyKind::Custom {
                name: name.into(),
                p,
                dim,
                map: Arc::new(map),
            },
            sigma_l2: 1.0,
            scale: DriverScale::Known,
        }
    }

    pub fn with_sigma_l2(mut self, sigma_l2: f64) -> Self {
        self.sigma_l2 = sigma_l2;
        self
    }

    pub fn with_scale(mut self, scale: DriverScale) -> Self {
        self.scale = scale;
        self
    }

    /// Rejects a nuisance driver scale for families whose parameter already fixes the output scale.
    pub fn validate_scale(&self) -> Result<()> {
        if self.scale == DriverScale::Nuisance && matches!(self.kind, FamilyKind::Carma31) {
            return Err(Error::Config(
                "carma31 scales its output through c; a nuisance driver scale is not identified".into(),
            ));
        }
        Ok(())
    }

    /// Number of auxiliary components `(π₁, …, π_r[, σ])` the estimators match.
    pub fn matched_aux_dim(&self, r: usize) -> usize {
        match self.scale {
            DriverScale::Known => r + 1,
            DriverScale::Nuisance => r,
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            FamilyKind::Car1 => "car1".into(),
            FamilyKind::Carma31 => "carma31".into(),
            FamilyKind::Custom { name, .. } => name.clone(),
        }
    }

    /// AR order `p`.
    pub fn order(&self) -> usize {
        match &self.kind {
            FamilyKind::Car1 => 1,
            FamilyKind::Carma31 => 3,
            FamilyKind::Custom { p, .. } => *p,
        }
    }

    /// Parameter dimension `N(Θ)`.
    pub fn dim(&self) -> usize {
        match &self.kind {
            FamilyKind::Car1 => 1,
            FamilyKind::Carma31 => 5,
            FamilyKind::Custom { dim, .. } => *dim,
        }
    }

    /// Default parameter box: `[-10, -0.01]` for CARMA(1,0); for CARMA(3,1)
    /// `ϑ₁..ϑ₃ ∈ [-5, -0.05]`, `ϑ₄ ∈ [-3, 3]`, `ϑ₅ ∈ [0.05, 3]`. Custom families have none.
    pub fn default_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.kind {
            FamilyKind::Car1 => Some((vec![-10.0], vec![-0.01])),
            FamilyKind::Carma31 => Some((
                vec![-5.0, -5.0, -5.0, -3.0, 0.05],
                vec![-0.05, -0.05, -0.05, 3.0, 3.0],
            )),
            FamilyKind::Custom { .. } => None,
        }
    }

    pub fn coefficients(&self, theta: &[f64]) -> Result<Coefficients> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        match &self.kind {
            FamilyKind::Car1 => Ok(Coefficients {
                ar: vec![-theta[0]],
                c: vec![1.0],
            }),
            FamilyKind::Carma31 => Ok(Coefficients {
                ar: vec![-theta[2], -theta[1], -theta[0]],
                c: vec![theta[3], theta[4], 0.0],
            }),
            FamilyKind::Custom { map, .. } => map(theta),
        }
    }
}

/// Companion-form state space of one CARMA model.
#[derive(Debug, Clone, PartialEq)]
pub struct CarmaSpec {
    pub p: usize,
    /// `a_1, …, a_p`.
    pub ar: Vec<f64>,
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub sigma_l2: f64,
    /// Effective MA order.
    pub q: usize,
}

impl CarmaSpec {
    /// Builds the spec from AR coefficients `a_1..a_p` and the state-order observation vector.
    pub fn from_coefficients(ar: &[f64], c: &[f64], sigma_l2: f64) -> Result<Self> {
        let p = ar.len();
        if p == 0 {
            return Err(Error::InvalidParameter("AR order must be positive".into()));
        }
        if c.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: c.len(),
            });
        }
        if ar.iter().chain(c).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("CARMA coefficients".into()));
        }
        if ar[p - 1] == 0.0 {
            return Err(Error::InvalidParameter("a_p must be non-zero".into()));
        }
        let q = match c.iter().rposition(|&v| v != 0.0) {
            Some(j) => j,
            None => return Err(Error::InvalidParameter("observation vector c is zero".into())),
        };
        if !(sigma_l2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "driving-noise variance must be positive, got {sigma_l2}"
            )));
        }
        let mut a = DMatrix::zeros(p, p);
        for i in 0..p - 1 {
            a[(i, i + 1)] = 1.0;
        }
        for j in 0..p {
            a[(p - 1, j)] = -ar[p - 1 - j];
        }
        Ok(Self {
            p,
            ar: ar.to_vec(),
            a,
            c: DVector::from_column_slice(c),
            sigma_l2,
            q,
        })
    }

    pub fn eigenvalues(&self) -> Result<Vec<Complex<f64>>> {
        if self.p == 1 {
            return Ok(vec![Complex::new(self.a[(0, 0)], 0.0)]);
        }
        let schur = nalgebra::linalg::Schur::try_new(self.a.clone(), f64::EPSILON, 10_000)
            .ok_or(Error::EigenFailure)?;
        let eig = schur.complex_eigenvalues();
        if eig.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::EigenFailure);
        }
        Ok(eig.iter().copied().collect())
    }

    /// Largest real part of the spectrum.
    pub fn spectral_abscissa(&self) -> Result<f64> {
        Ok(self
            .eigenvalues()?
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// `e_p`, the input vector of the state equation.
    pub fn input_vector(&self) -> DVector<f64> {
        let mut e = DVector::zeros(self.p);
        e[self.p - 1] = 1.0;
        e
    }
}

/// Builds `A_ϑ` and `c_ϑ` for a parameter of the family.
pub fn build_state_space(theta: &ThetaParam, family: &ModelFamily) -> Result<CarmaSpec> {
    build_state_space_raw(&theta.values, family)
}

/// As [`build_state_space`] for a bare parameter slice (no box).
pub fn build_state_space_raw(theta: &[f64], family: &ModelFamily) -> Result<CarmaSpec> {
    let coef = family.coefficients(theta)?;
    if coef.ar.len() != family.order() {
        return Err(Error::DimensionMismatch {
            expected: family.order(),
            got: coef.ar.len(),
        });
    }
    CarmaSpec::from_coefficients(&coef.ar, &coef.c, family.sigma_l2)
}

/// True iff every eigenvalue of `A` has real part below the stationarity tolerance.
pub fn check_stationarity(spec: &CarmaSpec) -> Result<bool> {
    Ok(spec.spectral_abscissa()? < STATIONARITY_TOL)
}

/// True iff every eigenvalue satisfies `-π/h < Im(λ) < π/h`.
pub fn check_sampling_identifiability(spec: &CarmaSpec, h: f64) -> Result<bool> {
    let bound = std::f64::consts::PI / h;
    Ok(spec.eigenvalues()?.iter().all(|z| z.im.abs() < bound))
}

/// Amount by which a spec violates stationarity / identifiability (0 when admissible).
pub fn constraint_violation(spec: &CarmaSpec, h: f64) -> Result<f64> {
    let eig = spec.eigenvalues()?;
    let bound = std::f64::consts::PI / h;
    let mut v = 0.0;
    for z in &eig {
        v += (z.re - STATIONARITY_TOL).max(0.0);
        v += (z.im.abs() - bound).max(0.0);
    }
    Ok(v)
}

/// Checks both assumptions and returns a descriptive error when one fails.
pub fn ensure_admissible(spec: &CarmaSpec, h: f64) -> Result<()> {
    let eig = spec.eigenvalues()?;
    let max_real = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if !(max_real < STATIONARITY_TOL) {
        return Err(Error::NotStationary { max_real });
    }
    let max_imag = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if !(max_imag < std::f64::consts::PI / h) {
        return Err(Error::NotIdentifiable { h, max_imag });
    }
    Ok(())
}

/// Stationary state covariance `Σ_ϑ`, the solution of `AΣ + ΣAᵀ = -σ_L² e_p e_pᵀ`.
pub fn stationary_state_cov(spec: &CarmaSpec) -> Result<DMatrix<f64>> {
    let max_real = spec.spectral_abscissa()?;
    if !(max_real < STATIONARITY_TOL) {
        return Err(Error::NotStationary { max_real });
    }
    let q = noise_input_cov(spec);
    linalg::lyapunov_continuous(&spec.a, &q)
}

/// `σ_L² e_p e_pᵀ`.
pub fn noise_input_cov(spec: &CarmaSpec) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(spec.p, spec.p);
    q[(spec.p - 1, spec.p - 1)] = spec.sigma_l2;
    q
}

/// `γ_ϑ(t) = c_ϑᵀ e^{A_ϑ t} Σ_ϑ c_ϑ` for `t ≥ 0`.
pub fn autocovariance(spec: &CarmaSpec, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lag time must be non-negative, got {t}"
        )));
    }
    let sigma = stationary_state_cov(spec)?;
    let e = linalg::expm(&(&spec.a * t));
    Ok(spec.c.dot(&(e * sigma * &spec.c)))
}

/// Exact autocovariances on the sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AcfTable {
    pub h: f64,
    /// `γ(0), γ(h), …, γ(max_lag·h)`.
    pub values: Vec<f64>,
}

impl AcfTable {
    /// Computes `γ(kh)` for `k = 0..=max_lag` by propagating `Σ c` with `e^{Ah}`.
    pub fn compute(spec: &CarmaSpec, h: f64, max_lag: usize) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling step must be positive, got {h}"
            )));
        }
        let sigma = stationary_state_cov(spec)?;
        let step = linalg::expm(&(&spec.a * h));
        let mut v = sigma * &spec.c;
        let mut values = Vec::with_capacity(max_lag + 1);
        for _ in 0..=max_lag {
            values.push(spec.c.dot(&v));
            v = &step * v;
        }
        if !(values[0] > 0.0) {
            return Err(Error::Numerical(format!(
                "non-positive variance γ(0) = {}",
                values[0]
            )));
        }
        Ok(Self { h, values })
    }

    /// `r × r` Toeplitz matrix `[γ(|i-j|h)]`.
    pub fn toeplitz(&self, r: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, r, |i, j| self.values[i.abs_diff(j)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn carma31_theta0() -> Vec<f64> {
        vec![-1.0, -2.0, -2.0, 0.0, 1.0]
    }

    #[test]
    fn car1_state_space() {
        let spec = build_state_space_raw(&[-2.0], &ModelFamily::car1()).unwrap();
        assert_eq!(spec.a, DMatrix::from_element(1, 1, -2.0));
        assert_eq!(spec.c, DVector::from_element(1, 1.0));
        assert_eq!(spec.q, 0);
        let spec = build_state_space_raw(&[-1.0], &ModelFamily::car1()).unwrap();
        assert_eq!(spec.a[(0, 0)], -1.0);
    }

    #[test]
    fn carma31_state_space() {
        let spec = build_state_space_raw(&carma31_theta0(), &ModelFamily::carma31()).unwrap();
        let expected =
            DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0, -2.0, -2.0]);
        assert_eq!(spec.a, expected);
        assert_eq!(spec.c.as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(spec.q, 1);
        assert_eq!(spec.ar, vec![2.0, 2.0, 1.0]);
    }

    #[test]
    fn dimension_and_degeneracy_errors() {
        assert!(matches!(
            build_state_space_raw(&[-1.0, 2.0], &ModelFamily::car1()),
            Err(Error::DimensionMismatch { .. })
        ));
        // a_p = 0
        assert!(build_state_space_raw(&[0.0, -2.0, -2.0, 0.0, 1.0], &ModelFamily::carma31()).is_err());
        // c = 0
        assert!(build_state_space_raw(&[-1.0, -2.0, -2.0, 0.0, 0.0], &ModelFamily::carma31()).is_err());
    }

    #[test]
    fn stationarity_checks() {
        let s = CarmaSpec::from_coefficients(&[2.0], &[1.0], 1.0).unwrap();
        assert!(check_stationarity(&s).unwrap());
        let s = CarmaSpec::from_coefficients(&[-0.5], &[1.0], 1.0).unwrap();
        assert!(!check_stationarity(&s).unwrap());
        let s = build_state_space_raw(&carma31_theta0(), &ModelFamily::carma31()).unwrap();
        assert!(check_stationarity(&s).unwrap());
    }

    #[test]
    fn carma31_roots_match_polynomial() {
        // z^3 + 2z^2 + 2z + 1 = (z + 1)(z^2 + z + 1)
        let s = build_state_space_raw(&carma31_theta0(), &ModelFamily::carma31()).unwrap();
        let mut eig = s.eigenvalues().unwrap();
        eig.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        let r3 = 3f64.sqrt() / 2.0;
        assert_relative_eq!(eig[0].re, -0.5, epsilon = 1e-12);
        assert_relative_eq!(eig[0].im, -r3, epsilon = 1e-12);
        assert_relative_eq!(eig[1].re, -1.0, epsilon = 1e-12);
        assert_relative_eq!(eig[2].im, r3, epsilon = 1e-12);
    }

    #[test]
    fn identifiability_checks() {
        let s = CarmaSpec::from_coefficients(&[2.0], &[1.0], 1.0).unwrap();
        assert!(check_sampling_identifiability(&s, 1.0).unwrap());
        // (z+1)^2 + 16 = z^2 + 2z + 17 has roots -1 ± 4i
        let s = CarmaSpec::from_coefficients(&[2.0, 17.0], &[1.0, 0.0], 1.0).unwrap();
        assert!(check_stationarity(&s).unwrap());
        assert!(!check_sampling_identifiability(&s, 1.0).unwrap());
        let s = build_state_space_raw(&carma31_theta0(), &ModelFamily::carma31()).unwrap();
        assert!(check_sampling_identifiability(&s, 1.0).unwrap());
    }

    #[test]
    fn scalar_state_covariance() {
        let s = CarmaSpec::from_coefficients(&[2.0], &[1.0], 1.0).unwrap();
        assert_relative_eq!(stationary_state_cov(&s).unwrap()[(0, 0)], 0.25, epsilon = 1e-14);
        let s = CarmaSpec::from_coefficients(&[0.5], &[1.0], 1.0).unwrap();
        assert_relative_eq!(stationary_state_cov(&s).unwrap()[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn non_stationary_cov_is_rejected() {
        let s = CarmaSpec::from_coefficients(&[-0.5], &[1.0], 1.0).unwrap();
        assert!(matches!(
            stationary_state_cov(&s),
            Err(Error::NotStationary { .. })
        ));
    }

    #[test]
    fn car1_autocovariance_closed_form() {
        let s = CarmaSpec::from_coefficients(&[2.0], &[1.0], 1.0).unwrap();
        assert_relative_eq!(autocovariance(&s, 0.0).unwrap(), 0.25, epsilon = 1e-14);
        assert_relative_eq!(
            autocovariance(&s, 1.0).unwrap(),
            0.25 * (-2.0f64).exp(),
            epsilon = 1e-14
        );
        assert!(autocovariance(&s, -1.0).is_err());
    }

    #[test]
    fn acf_table_agrees_with_expm_route() {
        let s = build_state_space_raw(&carma31_theta0(), &ModelFamily::carma31()).unwrap();
        let t = AcfTable::compute(&s, 1.0, 6).unwrap();
        for (k, g) in t.values.iter().enumerate() {
            assert_relative_eq!(*g, autocovariance(&s, k as f64).unwrap(), epsilon = 1e-13);
        }
        assert!(t.toeplitz(5).clone().cholesky().is_some());
    }

    #[test]
    fn custom_family_maps_through_closure() {
        let fam = ModelFamily::custom("car2", 2, 2, |t| {
            Ok(Coefficients {
                ar: vec![t[0], t[1]],
                c: vec![1.0, 0.0],
            })
        });
        let s = build_state_space_raw(&[3.0, 2.0], &fam).unwrap();
        assert_eq!(s.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -3.0]));
        assert!(check_stationarity(&s).unwrap());
    }

    #[test]
    fn theta_param_validates_box() {
        assert!(ThetaParam::new(vec![-2.0], vec![-5.0], vec![-0.1]).is_ok());
        assert!(ThetaParam::new(vec![0.0], vec![-5.0], vec![-0.1]).is_err());
        assert!(ThetaParam::new(vec![], vec![], vec![]).is_err());
        assert!(ThetaParam::new(vec![-1.0], vec![-5.0, 0.0], vec![-0.1]).is_err());
    }
}
