//! The auxiliary AR(r) layer: the link function π(ϑ), sample autocovariances
//! and the least-squares estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::levy::SampledSeries;
use crate::linalg;
use crate::model::{self, AcfTable, CarmaSpec, ModelFamily, ThetaParam};

/// Auxiliary AR(r) parameter `(π₁, …, π_r, σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxParam {
    pub pis: Vec<f64>,
    /// Residual scale; zero only for exact (noise-free) fits.
    pub sigma: f64,
}

impl AuxParam {
    pub fn new(pis: Vec<f64>, sigma: f64) -> Result<Self> {
        if pis.is_empty() {
            return Err(Error::InvalidParameter("AR order must be at least 1".into()));
        }
        if !(sigma >= 0.0) || pis.iter().any(|v| !v.is_finite()) || !sigma.is_finite() {
            return Err(Error::NonFinite(format!("auxiliary parameter {pis:?}, {sigma}")));
        }
        Ok(Self { pis, sigma })
    }

    pub fn order(&self) -> usize {
        self.pis.len()
    }

    /// `(π₁, …, π_r, σ)` as one vector.
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.pis.len() + 1,
            self.pis.iter().copied().chain(std::iter::once(self.sigma)),
        )
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        let r = v.len() - 1;
        Self::new(v.rows(0, r).iter().copied().collect(), v[r])
    }
}

/// Smallest admissible auxiliary order for AR order `p`.
pub fn min_order(p: usize) -> usize {
    2 * p - 1
}

/// Link function `π(ϑ)` from the exact autocovariances of the sampled process.
pub fn link_function(theta: &ThetaParam, family: &ModelFamily, h: f64, r: usize) -> Result<AuxParam> {
    let spec = model::build_state_space(theta, family)?;
    link_from_spec(&spec, h, r)
}

/// Link function for an already built state space.
pub fn link_from_spec(spec: &CarmaSpec, h: f64, r: usize) -> Result<AuxParam> {
    if r < min_order(spec.p) {
        return Err(Error::InvalidParameter(format!(
            "auxiliary order r = {r} is below 2p - 1 = {}",
            min_order(spec.p)
        )));
    }
    model::ensure_admissible(spec, h)?;
    let acf = AcfTable::compute(spec, h, r)?;
    link_from_acf(&acf, r)
}

/// Solves the Yule–Walker system built from `γ(0), …, γ(rh)`.
pub fn link_from_acf(acf: &AcfTable, r: usize) -> Result<AuxParam> {
    if acf.values.len() < r + 1 {
        return Err(Error::DimensionMismatch {
            expected: r + 1,
            got: acf.values.len(),
        });
    }
    let gamma = acf.toeplitz(r);
    let rhs = DVector::from_column_slice(&acf.values[1..=r]);
    let pis = linalg::solve_spd_guarded(&gamma, &rhs, "Yule-Walker system")?;
    let sigma2 = acf.values[0] - pis.dot(&rhs);
    AuxParam::new(pis.iter().copied().collect(), sigma2.max(0.0).sqrt())
}

/// `(1/(n-r)) Σ_{k=1}^{n-r} Y_{(k+l)h} Y_{(k+j)h}`, without mean correction.
pub fn sample_autocov(series: &SampledSeries, l: usize, j: usize, r: usize) -> Result<f64> {
    let x = &series.values;
    let n = x.len();
    if n <= r {
        return Err(Error::SeriesTooShort { needed: r, got: n });
    }
    if l > r || j > r {
        return Err(Error::InvalidParameter(format!(
            "lag indices ({l}, {j}) must not exceed r = {r}"
        )));
    }
    let m = n - r;
    let s: f64 = (0..m).map(|k| x[k + l] * x[k + j]).sum();
    Ok(s / m as f64)
}

/// All products `γ̂(l, j)` for `0 ≤ l ≤ j ≤ r` in one pass.
fn lag_products(x: &[f64], r: usize) -> DMatrix<f64> {
    let m = x.len() - r;
    let mut acc = DMatrix::<f64>::zeros(r + 1, r + 1);
    for k in 0..m {
        let w = &x[k..=k + r];
        for l in 0..=r {
            let wl = w[l];
            for j in l..=r {
                acc[(l, j)] += wl * w[j];
            }
        }
    }
    acc /= m as f64;
    for l in 0..=r {
        for j in 0..l {
            acc[(l, j)] = acc[(j, l)];
        }
    }
    acc
}

/// Normal equations of the AR(r) regression in terms of `γ̂(l, j)`.
///
/// Regressor `i` (lag `i+1`) of the row ending at `Y_{k+r}` is `Y_{k+r-1-i}`.
fn normal_equations(x: &[f64], r: usize) -> (DMatrix<f64>, DVector<f64>) {
    let g = lag_products(x, r);
    let gram = DMatrix::from_fn(r, r, |i, j| g[(r - 1 - i, r - 1 - j)]);
    let rhs = DVector::from_fn(r, |i, _| g[(r, r - 1 - i)]);
    (gram, rhs)
}

/// Residuals `Y_{k+r} - Σ_i π_i Y_{k+r-i}` for `k = 1..=n-r`.
pub fn residuals(x: &[f64], pis: &[f64]) -> Vec<f64> {
    let r = pis.len();
    (r..x.len())
        .map(|t| x[t] - pis.iter().enumerate().map(|(i, p)| p * x[t - 1 - i]).sum::<f64>())
        .collect()
}

/// Least-squares estimate of the auxiliary AR(r) parameter.
pub fn ls_estimate(series: &SampledSeries, r: usize) -> Result<AuxParam> {
    ls_estimate_values(&series.values, r)
}

/// As [`ls_estimate`] on a bare slice.
pub fn ls_estimate_values(x: &[f64], r: usize) -> Result<AuxParam> {
    if r == 0 {
        return Err(Error::InvalidParameter("AR order must be at least 1".into()));
    }
    if x.len() <= r + 1 {
        return Err(Error::SeriesTooShort {
            needed: r + 1,
            got: x.len(),
        });
    }
    let (gram, rhs) = normal_equations(x, r);
    let pis = linalg::solve_spd_guarded(&gram, &rhs, "least-squares normal equations")?;
    let pis: Vec<f64> = pis.iter().copied().collect();
    let res = residuals(x, &pis);
    let sigma2 = res.iter().map(|e| e * e).sum::<f64>() / res.len() as f64;
    AuxParam::new(pis, sigma2.sqrt())
}
