//! Robust GM-estimation of the auxiliary AR(r) parameter.
//!
//! Mallows-type estimator `φ(y, u) = w(y) ψ(u)` solved by iteratively
//! reweighted least squares: a few Huber sweeps followed by redescending
//! bisquare sweeps, with the residual scale re-solved from the χ-equation
//! `mean χ(u²) = 0`, `χ(x²) = ψ²(x) - E ψ²(Z)`, after every sweep.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aux_ar::{self, AuxParam};
use crate::error::{Error, Result};
use crate::levy::SampledSeries;
use crate::linalg;

/// Consistency factor turning a median absolute deviation into a normal-scale estimate.
pub const MAD_CONSISTENCY: f64 = 1.482_602_218_505_602;

/// Huber `ψ_k(u) = sign(u) min(|u|, k)`.
pub fn huber_psi(u: f64, k: f64) -> f64 {
    u.signum() * u.abs().min(k)
}

/// Tukey bisquare `ψ(u) = u (1 - u²/k²)²` on `|u| ≤ k`, zero elsewhere.
pub fn bisquare_psi(u: f64, k: f64) -> f64 {
    if u.abs() <= k {
        let t = 1.0 - (u / k) * (u / k);
        u * t * t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiKind {
    /// `ψ(u) = u`; reproduces least squares.
    Identity,
    Huber,
    Bisquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiSpec {
    pub kind: PsiKind,
    #[serde(default = "default_k")]
    pub k: f64,
}

fn default_k() -> f64 {
    4.0
}

impl PsiSpec {
    pub fn huber(k: f64) -> Self {
        Self {
            kind: PsiKind::Huber,
            k,
        }
    }

    pub fn bisquare(k: f64) -> Self {
        Self {
            kind: PsiKind::Bisquare,
            k,
        }
    }

    pub fn identity() -> Self {
        Self {
            kind: PsiKind::Identity,
            k: f64::INFINITY,
        }
    }

    pub fn psi(&self, u: f64) -> f64 {
        match self.kind {
            PsiKind::Identity => u,
            PsiKind::Huber => huber_psi(u, self.k),
            PsiKind::Bisquare => bisquare_psi(u, self.k),
        }
    }

    /// `ψ(u)/u`, continuously extended by `ψ'(0) = 1` at the origin.
    pub fn ratio(&self, u: f64) -> f64 {
        match self.kind {
            PsiKind::Identity => 1.0,
            PsiKind::Huber => {
                let a = u.abs();
                if a <= self.k {
                    1.0
                } else {
                    self.k / a
                }
            }
            PsiKind::Bisquare => {
                if u.abs() <= self.k {
                    let t = 1.0 - (u / self.k) * (u / self.k);
                    t * t
                } else {
                    0.0
                }
            }
        }
    }

    /// `ψ'(u)`.
    pub fn derivative(&self, u: f64) -> f64 {
        match self.kind {
            PsiKind::Identity => 1.0,
            PsiKind::Huber => {
                if u.abs() <= self.k {
                    1.0
                } else {
                    0.0
                }
            }
            PsiKind::Bisquare => {
                if u.abs() <= self.k {
                    let s = (u / self.k) * (u / self.k);
                    (1.0 - s) * (1.0 - 5.0 * s)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != PsiKind::Identity && !(self.k > 0.0) {
            return Err(Error::Config(format!("tuning constant must be positive, got {}", self.k)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    /// `w ≡ 1`.
    None,
    /// `w(t) = ψ_k(t)/t`.
    Huber,
    /// `w(t) = (1 - t²/k²)²` on `t < k`.
    Bisquare,
}

/// Mallows weight on the standardized regressor norm.
///
/// The norm is `‖y‖ / (s √r)`, where `s` is the MAD scale of the series and `r`
/// the AR order, i.e. the root mean square of the standardized regressors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub kind: WeightKind,
    #[serde(default = "default_k")]
    pub k: f64,
}

impl WeightSpec {
    pub fn none() -> Self {
        Self {
            kind: WeightKind::None,
            k: f64::INFINITY,
        }
    }

    pub fn weight(&self, t: f64) -> f64 {
        match self.kind {
            WeightKind::None => 1.0,
            WeightKind::Huber => PsiSpec::huber(self.k).ratio(t),
            WeightKind::Bisquare => PsiSpec::bisquare(self.k).ratio(t),
        }
    }
}

/// Mallows `φ(y, u) = w(‖y‖) ψ(u)` for an already standardized regressor `y`.
pub fn mallows_phi(y: &[f64], u: f64, weight: &WeightSpec, psi: &PsiSpec) -> f64 {
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    weight.weight(norm) * psi.psi(u)
}

/// Reference law of `Z` in `χ(x²) = ψ²(x) - E ψ²(Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiReference {
    #[default]
    StandardNormal,
}

/// `E ψ²(Z)` for `Z ~ N(0, 1)`.
pub fn chi_centering(psi: &PsiSpec, reference: ChiReference) -> f64 {
    match reference {
        ChiReference::StandardNormal => match psi.kind {
            PsiKind::Identity => 1.0,
            _ => {
                let f = |z: f64| {
                    let v = psi.psi(z);
                    v * v * (-0.5 * z * z).exp()
                };
                // integrand is smooth on each piece; 2∫_0^∞ by symmetry
                let knot = psi.k.min(40.0);
                let total = simpson(f, 0.0, knot, 4000) + simpson(f, knot, 40.0, 4000);
                2.0 * total / (2.0 * std::f64::consts::PI).sqrt()
            }
        },
    }
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `χ(x²) = ψ²(√x²) - c_ref`.
pub fn chi_fn(x2: f64, psi: &PsiSpec, c_ref: f64) -> f64 {
    if psi.kind == PsiKind::Identity {
        return x2 - c_ref;
    }
    let v = psi.psi(x2.max(0.0).sqrt());
    v * v - c_ref
}

/// One block of IRLS sweeps with a fixed ψ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmStage {
    pub psi: PsiSpec,
    pub iterations: usize,
    /// Stop the block once the relative parameter change drops below the tolerance.
    pub stop_early: bool,
}

/// Form of the scale equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleEquation {
    /// `Σ χ(u_k²) = 0`.
    Unweighted,
    /// `Σ w(y_k) χ(u_k²) = 0`, so rows with outlying regressors do not inflate σ.
    #[default]
    Weighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmConfig {
    pub stages: Vec<GmStage>,
    pub weight: WeightSpec,
    pub tol: f64,
    #[serde(default)]
    pub chi_reference: ChiReference,
    #[serde(default)]
    pub scale_equation: ScaleEquation,
}

impl Default for GmConfig {
    /// 6 Huber sweeps (k = 4), then up to 50 bisquare sweeps (k = 4), bisquare
    /// regressor weights (k = 4), tolerance 1e-6.
    fn default() -> Self {
        Self {
            stages: vec![
                GmStage {
                    psi: PsiSpec::huber(4.0),
                    iterations: 6,
                    stop_early: false,
                },
                GmStage {
                    psi: PsiSpec::bisquare(4.0),
                    iterations: 50,
                    stop_early: true,
                },
            ],
            weight: WeightSpec {
                kind: WeightKind::Bisquare,
                k: 4.0,
            },
            tol: 1e-6,
            chi_reference: ChiReference::StandardNormal,
            scale_equation: ScaleEquation::Weighted,
        }
    }
}

impl GmConfig {
    /// `φ(y, u) = u`, `χ(x) = x - 1`: the least-squares special case.
    pub fn least_squares() -> Self {
        Self {
            stages: vec![GmStage {
                psi: PsiSpec::identity(),
                iterations: 50,
                stop_early: true,
            }],
            weight: WeightSpec::none(),
            tol: 1e-12,
            chi_reference: ChiReference::StandardNormal,
            scale_equation: ScaleEquation::Unweighted,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("GM configuration needs at least one stage".into()));
        }
        for s in &self.stages {
            s.psi.validate()?;
            if s.iterations < 1 {
                return Err(Error::Config("GM stage iteration counts must be >= 1".into()));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config("GM tolerance must be positive".into()));
        }
        Ok(())
    }

    /// ψ of the final stage, which defines the estimating equations at the solution.
    pub fn final_psi(&self) -> PsiSpec {
        self.stages.last().map(|s| s.psi).unwrap_or(PsiSpec::identity())
    }
}

/// GM fit with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GmEstimate {
    pub aux: AuxParam,
    pub converged: bool,
    pub iterations: usize,
    /// Robust scale used to standardize regressors.
    pub regressor_scale: f64,
    /// ψ and centering constant of the final stage.
    pub psi: PsiSpec,
    pub c_ref: f64,
    pub weight: WeightSpec,
    pub scale_equation: ScaleEquation,
    /// The χ-equation had no root in the last sweep and the residual MAD was used instead.
    pub scale_fallback: bool,
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    v.sort_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Normal-consistent median absolute deviation about the median.
pub fn mad(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut v = x.to_vec();
    let med = median(&mut v);
    let mut dev: Vec<f64> = x.iter().map(|a| (a - med).abs()).collect();
    MAD_CONSISTENCY * median(&mut dev)
}

/// Regression design: row `k` has target `x[k+r]` and regressors `x[k+r-1], …, x[k]`.
struct Design<'a> {
    x: &'a [f64],
    r: usize,
    /// Mallows weight per row.
    w: Vec<f64>,
}

impl<'a> Design<'a> {
    fn new(x: &'a [f64], r: usize, scale: f64, weight: &WeightSpec) -> Self {
        let norm_scale = scale * (r as f64).sqrt();
        let w = (r..x.len())
            .map(|t| {
                let n2: f64 = (1..=r).map(|i| x[t - i] * x[t - i]).sum();
                weight.weight(n2.sqrt() / norm_scale)
            })
            .collect();
        Self { x, r, w }
    }

    fn rows(&self) -> usize {
        self.x.len() - self.r
    }

    /// Row weights of the scale equation.
    fn scale_weights(&self, eq: ScaleEquation) -> Vec<f64> {
        match eq {
            ScaleEquation::Unweighted => vec![1.0; self.rows()],
            ScaleEquation::Weighted => self.w.clone(),
        }
    }

    fn regressors(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        let t = k + self.r;
        (1..=self.r).map(move |i| self.x[t - i])
    }

    fn target(&self, k: usize) -> f64 {
        self.x[k + self.r]
    }

    /// Weighted least squares with row weights `ω`.
    fn weighted_ls(&self, omega: &[f64]) -> Result<Vec<f64>> {
        let r = self.r;
        let mut a = DMatrix::<f64>::zeros(r, r);
        let mut b = DVector::<f64>::zeros(r);
        let mut y = vec![0.0; r];
        for k in 0..self.rows() {
            let wk = omega[k];
            if wk == 0.0 {
                continue;
            }
            for (slot, v) in y.iter_mut().zip(self.regressors(k)) {
                *slot = v;
            }
            let tk = self.target(k);
            for i in 0..r {
                let wy = wk * y[i];
                b[i] += wy * tk;
                for j in i..r {
                    a[(i, j)] += wy * y[j];
                }
            }
        }
        for i in 0..r {
            for j in 0..i {
                a[(i, j)] = a[(j, i)];
            }
        }
        if a.iter().all(|v| *v == 0.0) {
            return Err(Error::Singular(
                "all GM weights vanished (redescending collapse)".into(),
            ));
        }
        let sol = linalg::solve_spd_guarded(&a, &b, "weighted GM normal equations")?;
        Ok(sol.iter().copied().collect())
    }
}

/// Solves `Σ w_k ψ²(e_k/σ) / Σ w_k = c_ref` for the scale, taking the root on
/// the decreasing branch nearest to `start`. `None` when the equation has no
/// root, which happens for redescending ψ once too many residuals are gross.
fn solve_scale(res: &[f64], w: &[f64], psi: &PsiSpec, c_ref: f64, start: f64) -> Result<Option<f64>> {
    let m: f64 = w.iter().sum();
    if !(m > 0.0) {
        return Ok(None);
    }
    if psi.kind == PsiKind::Identity {
        let s2 = res.iter().zip(w).map(|(e, wk)| wk * e * e).sum::<f64>() / m / c_ref;
        return Ok(Some(s2.sqrt()));
    }
    let g = |s: f64| {
        res.iter()
            .zip(w)
            .map(|(e, wk)| {
                let v = psi.psi(e / s);
                wk * v * v
            })
            .sum::<f64>()
            / m
            - c_ref
    };
    let dg = |s: f64| {
        // d/ds ψ²(e/s) = -2 ψ(u) ψ'(u) u / s
        res.iter()
            .zip(w)
            .map(|(e, wk)| {
                let u = e / s;
                -2.0 * wk * psi.psi(u) * psi.derivative(u) * u / s
            })
            .sum::<f64>()
            / m
    };
    if !(start > 0.0) || !start.is_finite() {
        return Err(Error::Numerical(format!("invalid scale start {start}")));
    }
    // the positive region of g can be narrow, so bracket with small steps
    const STEP: f64 = 1.05;
    const MAX_STEPS: usize = 400;
    let (mut lo, mut hi);
    if g(start) > 0.0 {
        lo = start;
        hi = start;
        let mut tries = 0;
        while g(hi) > 0.0 {
            lo = hi;
            hi *= STEP;
            tries += 1;
            if tries > MAX_STEPS {
                return Ok(None);
            }
        }
    } else {
        hi = start;
        lo = start;
        let mut tries = 0;
        loop {
            lo /= STEP;
            if g(lo) > 0.0 {
                break;
            }
            hi = lo;
            tries += 1;
            if tries > MAX_STEPS {
                return Ok(None);
            }
        }
    }
    // g(lo) > 0 >= g(hi); safeguarded Newton
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gs = g(s);
        if gs > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        if (hi - lo) <= 1e-14 * hi {
            break;
        }
        let d = dg(s);
        let newton = if d != 0.0 { s - gs / d } else { f64::NAN };
        s = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if gs == 0.0 {
            break;
        }
    }
    Ok(Some(s))
}

/// MAD of the residuals of rows with positive scale weight.
fn fallback_scale(res: &[f64], w: &[f64]) -> f64 {
    let kept: Vec<f64> = res.iter().zip(w).filter(|(_, wk)| **wk > 0.0).map(|(e, _)| *e).collect();
    if kept.is_empty() {
        mad(res)
    } else {
        mad(&kept)
    }
}

/// GM estimate of the auxiliary AR(r) parameter.
pub fn gm_estimate(series: &SampledSeries, r: usize, cfg: &GmConfig) -> Result<GmEstimate> {
    gm_estimate_values(&series.values, r, cfg)
}

/// As [`gm_estimate`] on a bare slice.
pub fn gm_estimate_values(x: &[f64], r: usize, cfg: &GmConfig) -> Result<GmEstimate> {
    cfg.validate()?;
    if r == 0 {
        return Err(Error::InvalidParameter("AR order must be at least 1".into()));
    }
    if x.len() <= r + 1 {
        return Err(Error::SeriesTooShort {
            needed: r + 1,
            got: x.len(),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("observation {i}")));
    }
    let scale = mad(x);
    if !(scale > 0.0) {
        return Err(Error::Singular(
            "zero-variance regressors (series has zero MAD)".into(),
        ));
    }
    let design = Design::new(x, r, scale, &cfg.weight);
    let sw = design.scale_weights(cfg.scale_equation);
    let init = aux_ar::ls_estimate_values(x, r)?;
    let mut pis = init.pis.clone();
    let mut res = aux_ar::residuals(x, &pis);
    let mut sigma = mad(&res);
    if !(sigma > 0.0) {
        sigma = init.sigma;
    }
    let final_psi = cfg.final_psi();
    let final_c_ref = chi_centering(&final_psi, cfg.chi_reference);
    if !(sigma > 0.0) {
        // exact fit: every estimating equation holds trivially
        return Ok(GmEstimate {
            aux: init,
            converged: true,
            iterations: 0,
            regressor_scale: scale,
            psi: final_psi,
            c_ref: final_c_ref,
            weight: cfg.weight,
            scale_equation: cfg.scale_equation,
            scale_fallback: false,
        });
    }

    let mut iterations = 0;
    let mut converged = !cfg.stages.iter().any(|s| s.stop_early);
    let mut omega = vec![0.0; design.rows()];
    let mut last_fallback = false;
    for stage in &cfg.stages {
        let c_ref = chi_centering(&stage.psi, cfg.chi_reference);
        let mut stage_converged = false;
        for _ in 0..stage.iterations {
            iterations += 1;
            for (k, o) in omega.iter_mut().enumerate() {
                *o = design.w[k] * stage.psi.ratio(res[k] / sigma);
            }
            let new_pis = design.weighted_ls(&omega)?;
            let new_res = aux_ar::residuals(x, &new_pis);
            let new_sigma = match solve_scale(&new_res, &sw, &stage.psi, c_ref, sigma)? {
                Some(v) => {
                    last_fallback = false;
                    v
                }
                None => {
                    last_fallback = true;
                    fallback_scale(&new_res, &sw)
                }
            };
            if !(new_sigma > 0.0) {
                return Err(Error::Numerical("residual scale collapsed to zero".into()));
            }
            let diff2: f64 = new_pis
                .iter()
                .zip(&pis)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                + (new_sigma - sigma).powi(2);
            let norm2: f64 = new_pis.iter().map(|a| a * a).sum::<f64>() + new_sigma * new_sigma;
            pis = new_pis;
            res = new_res;
            sigma = new_sigma;
            if stage.stop_early && diff2.sqrt() <= cfg.tol * norm2.sqrt().max(f64::MIN_POSITIVE) {
                stage_converged = true;
                break;
            }
        }
        if stage.stop_early {
            converged = stage_converged;
        }
    }
    Ok(GmEstimate {
        aux: AuxParam::new(pis, sigma)?,
        converged,
        iterations,
        regressor_scale: scale,
        psi: final_psi,
        c_ref: final_c_ref,
        weight: cfg.weight,
        scale_equation: cfg.scale_equation,
        scale_fallback: last_fallback,
    })
}

/// Per-row estimating-function values `Ψ_k = (φ(y_k, u_k) y_k, χ(u_k²))`.
pub fn estimating_terms(x: &[f64], est: &GmEstimate) -> Vec<DVector<f64>> {
    estimating_terms_at(x, &est.aux, &est.psi, est.c_ref, &est.weight, est.regressor_scale, est.scale_equation)
}

/// `Ψ_k` at an arbitrary auxiliary parameter.
pub fn estimating_terms_at(
    x: &[f64],
    aux: &AuxParam,
    psi: &PsiSpec,
    c_ref: f64,
    weight: &WeightSpec,
    regressor_scale: f64,
    scale_equation: ScaleEquation,
) -> Vec<DVector<f64>> {
    let r = aux.order();
    let design = Design::new(x, r, regressor_scale, weight);
    let res = aux_ar::residuals(x, &aux.pis);
    (0..design.rows())
        .map(|k| {
            let u = res[k] / aux.sigma;
            let phi = design.w[k] * psi.psi(u);
            let mut v = DVector::zeros(r + 1);
            for (i, y) in design.regressors(k).enumerate() {
                v[i] = phi * y;
            }
            v[r] = match scale_equation {
                ScaleEquation::Unweighted => chi_fn(u * u, psi, c_ref),
                ScaleEquation::Weighted => design.w[k] * chi_fn(u * u, psi, c_ref),
            };
            v
        })
        .collect()
}

/// Sample mean of the estimating functions (the empirical GM equations).
pub fn estimating_equations(x: &[f64], est: &GmEstimate) -> DVector<f64> {
    mean_of(&estimating_terms(x, est), est.aux.order() + 1)
}

pub(crate) fn mean_of(terms: &[DVector<f64>], dim: usize) -> DVector<f64> {
    let mut acc = DVector::zeros(dim);
    for t in terms {
        acc += t;
    }
    acc / terms.len().max(1) as f64
}
