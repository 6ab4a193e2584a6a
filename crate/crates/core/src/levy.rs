//! Driving Lévy noise (Brownian motion, NIG) and simulation of sampled CARMA paths.
//!
//! Randomness is drawn once into a [`DriverCache`] and then mapped through the
//! state-space recursion of a given model. The indirect estimator keeps one
//! cache fixed while it varies the parameter, which makes its objective a
//! deterministic function of the parameter.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, InverseGaussian, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, CarmaSpec};

/// Default number of fine-grid subintervals per sampling step for NIG drivers.
pub const DEFAULT_FINE_GRID_FACTOR: usize = 10;

/// Upper bound on the burn-in (in sampling steps) for non-Gaussian drivers.
pub const NIG_BURN_IN_MAX_STEPS: usize = 2000;

/// Burn-in length is `BURN_IN_SCALE / (ρ h)` steps, `ρ` the smallest decay rate.
const BURN_IN_SCALE: f64 = 200.0;

/// Parameters of the normal inverse Gaussian law of `L(t) - L(t-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NigParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub mu: f64,
}

impl NigParams {
    pub fn new(alpha: f64, beta: f64, delta: f64, mu: f64) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            delta,
            mu,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters used in the reference experiments: zero mean, variance ≈ 1.
    pub fn reference() -> Self {
        Self {
            alpha: 3.0,
            beta: 1.0,
            delta: 2.5145,
            mu: -0.8890,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.delta, self.mu]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.alpha > self.beta.abs()) || !(self.delta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "NIG parameters need alpha > |beta| and delta > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    fn gamma(&self) -> f64 {
        (self.alpha * self.alpha - self.beta * self.beta).sqrt()
    }

    /// `μ + δβ/√(α²-β²)`.
    pub fn mean(&self) -> f64 {
        self.mu + self.delta * self.beta / self.gamma()
    }

    /// `δα²/(α²-β²)^{3/2}`.
    pub fn variance(&self) -> f64 {
        let g2 = self.alpha * self.alpha - self.beta * self.beta;
        self.delta * self.alpha * self.alpha / g2.powf(1.5)
    }

    /// Law of an increment over a time span `dt` (δ and μ scale linearly).
    pub fn over(&self, dt: f64) -> Self {
        Self {
            delta: self.delta * dt,
            mu: self.mu * dt,
            ..*self
        }
    }
}

/// NIG sampler built as a normal variance-mean mixture with inverse-Gaussian mixing.
#[derive(Debug, Clone, Copy)]
pub struct NigSampler {
    params: NigParams,
    mixing: InverseGaussian<f64>,
}

impl NigSampler {
    pub fn new(params: NigParams) -> Result<Self> {
        params.validate()?;
        let mixing = InverseGaussian::new(params.delta / params.gamma(), params.delta * params.delta)
            .map_err(|e| Error::InvalidParameter(format!("inverse Gaussian mixing law: {e}")))?;
        Ok(Self { params, mixing })
    }

    pub fn params(&self) -> &NigParams {
        &self.params
    }
}

impl Distribution<f64> for NigSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z = loop {
            let z = self.mixing.sample(rng);
            if z > 0.0 && z.is_finite() {
                break z;
            }
        };
        let n: f64 = rng.sample(StandardNormal);
        self.params.mu + self.params.beta * z + z.sqrt() * n
    }
}

/// One NIG draw.
pub fn nig_increment<R: Rng + ?Sized>(params: &NigParams, rng: &mut R) -> Result<f64> {
    Ok(NigSampler::new(*params)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverKind {
    Brownian,
    Nig,
}

impl std::fmt::Display for DriverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DriverKind::Brownian => write!(f, "brownian"),
            DriverKind::Nig => write!(f, "nig"),
        }
    }
}

/// Law of the driving Lévy process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    pub kind: DriverKind,
    /// Variance of `L_1`.
    pub sigma_l2: f64,
    #[serde(default)]
    pub nig: Option<NigParams>,
    #[serde(default = "default_fine_grid")]
    pub fine_grid_factor: usize,
}

fn default_fine_grid() -> usize {
    DEFAULT_FINE_GRID_FACTOR
}

impl DriverConfig {
    pub fn brownian(sigma_l2: f64) -> Self {
        Self {
            kind: DriverKind::Brownian,
            sigma_l2,
            nig: None,
            fine_grid_factor: DEFAULT_FINE_GRID_FACTOR,
        }
    }

    pub fn nig(params: NigParams) -> Self {
        Self {
            kind: DriverKind::Nig,
            sigma_l2: params.variance(),
            nig: Some(params),
            fine_grid_factor: DEFAULT_FINE_GRID_FACTOR,
        }
    }

    pub fn with_fine_grid(mut self, factor: usize) -> Self {
        self.fine_grid_factor = factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.fine_grid_factor < 1 {
            return Err(Error::Config("fine_grid_factor must be at least 1".into()));
        }
        match self.kind {
            DriverKind::Brownian => {
                if !(self.sigma_l2 >= 0.0) || !self.sigma_l2.is_finite() {
                    return Err(Error::Config(format!(
                        "Brownian variance must be non-negative, got {}",
                        self.sigma_l2
                    )));
                }
            }
            DriverKind::Nig => {
                let p = self
                    .nig
                    .ok_or_else(|| Error::Config("NIG driver needs NIG parameters".into()))?;
                p.validate()?;
                if (p.variance() - self.sigma_l2).abs() > 1e-3 {
                    return Err(Error::Config(format!(
                        "NIG implied variance {} differs from sigma_l2 {}",
                        p.variance(),
                        self.sigma_l2
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Provenance of a series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub driver: Option<DriverKind>,
    pub seed: Option<u64>,
    pub contaminated: bool,
}

/// Equidistant observations `Y_h, …, Y_{nh}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSeries {
    pub h: f64,
    pub values: Vec<f64>,
    pub meta: SeriesMeta,
}

impl SampledSeries {
    pub fn new(h: f64, values: Vec<f64>) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling step must be positive, got {h}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("observation {i}")));
        }
        Ok(Self {
            h,
            values,
            meta: SeriesMeta::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Writes `t,value` rows with `t = m h`, `m = 1..=n`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,value")?;
        for (m, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", (m + 1) as f64 * self.h, v)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a series from a CSV. The column is `value`, else `observed`, else the last one.
    pub fn read_csv(path: &Path, h: f64) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)?;
        let headers = rdr.headers()?.clone();
        let col = ["value", "observed"]
            .iter()
            .find_map(|name| headers.iter().position(|c| c.trim() == *name))
            .unwrap_or(headers.len() - 1);
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = rec
                .get(col)
                .ok_or_else(|| Error::Io(format!("missing column {col}")))?;
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|e| Error::Io(format!("bad value {field:?}: {e}")))?;
            values.push(v);
        }
        Self::new(h, values)
    }
}

/// Pre-drawn randomness of a driving path, independent of the model parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum DriverCache {
    /// Standard normal vectors: one for the initial state, one per sampling step.
    Gaussian {
        p: usize,
        n: usize,
        sigma_l2: f64,
        initial: Vec<f64>,
        steps: Vec<f64>,
    },
    /// NIG increments on a fine grid, for a burn-in segment and the sampled segment.
    Nig {
        n: usize,
        fine: usize,
        burn_in: Vec<f64>,
        increments: Vec<f64>,
    },
}

impl DriverCache {
    /// Draws the randomness for `n` sampling steps of a `p`-dimensional state.
    pub fn generate<R: Rng + ?Sized>(
        p: usize,
        n: usize,
        h: f64,
        driver: &DriverConfig,
        rng: &mut R,
    ) -> Result<Self> {
        driver.validate()?;
        match driver.kind {
            DriverKind::Brownian => {
                let mut draw = |len: usize| -> Vec<f64> {
                    (0..len).map(|_| rng.sample(StandardNormal)).collect()
                };
                let initial = draw(p);
                let steps = draw(n * p);
                Ok(DriverCache::Gaussian {
                    p,
                    n,
                    sigma_l2: driver.sigma_l2,
                    initial,
                    steps,
                })
            }
            DriverKind::Nig => {
                let params = driver.nig.expect("validated");
                let fine = driver.fine_grid_factor;
                let sampler = NigSampler::new(params.over(h / fine as f64))?;
                let burn_in: Vec<f64> = (0..NIG_BURN_IN_MAX_STEPS * fine)
                    .map(|_| sampler.sample(rng))
                    .collect();
                let increments: Vec<f64> = (0..n * fine).map(|_| sampler.sample(rng)).collect();
                Ok(DriverCache::Nig {
                    n,
                    fine,
                    burn_in,
                    increments,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            DriverCache::Gaussian { n, .. } | DriverCache::Nig { n, .. } => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Aggregates adjacent fine-grid NIG increments in groups of `by`.
    ///
    /// NIG laws are closed under convolution, so this yields an exact draw of the
    /// coarser grid driven by the same underlying path.
    pub fn coarsen(&self, by: usize) -> Result<Self> {
        match self {
            DriverCache::Nig {
                n,
                fine,
                burn_in,
                increments,
            } if by >= 1 && fine % by == 0 => {
                let agg = |v: &[f64]| v.chunks(by).map(|c| c.iter().sum()).collect::<Vec<f64>>();
                Ok(DriverCache::Nig {
                    n: *n,
                    fine: fine / by,
                    burn_in: agg(burn_in),
                    increments: agg(increments),
                })
            }
            _ => Err(Error::InvalidParameter(
                "only NIG caches with a divisible fine grid can be coarsened".into(),
            )),
        }
    }
}

/// `Σ_h = Σ_ϑ - e^{Ah} Σ_ϑ e^{Aᵀh}`, the covariance of the state noise over one step.
pub fn brownian_state_noise_cov(spec: &CarmaSpec, h: f64) -> Result<DMatrix<f64>> {
    let sigma = model::stationary_state_cov(spec)?;
    Ok(noise_cov_from(&sigma, &linalg::expm(&(&spec.a * h))))
}

fn noise_cov_from(sigma: &DMatrix<f64>, step: &DMatrix<f64>) -> DMatrix<f64> {
    let m = sigma - step * sigma * step.transpose();
    (&m + m.transpose()) * 0.5
}

/// Dense row-major copy for the inner loops.
fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

#[inline]
fn mat_vec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let p = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * p..(i + 1) * p];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Maps a driver cache through the sampled state recursion of `spec`.
///
/// Returns `Y_h, …, Y_{nh}` where `n` is the cache length.
pub fn simulate_with_cache(spec: &CarmaSpec, h: f64, cache: &DriverCache) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling step must be positive, got {h}"
        )));
    }
    model::ensure_admissible(spec, h).or_else(|e| match e {
        // aliasing only matters for estimation, not for simulation
        Error::NotIdentifiable { .. } => Ok(()),
        other => Err(other),
    })?;
    let p = spec.p;
    let step = linalg::expm(&(&spec.a * h));
    let step_rm = row_major(&step);
    let c: Vec<f64> = spec.c.iter().copied().collect();
    let mut x = vec![0.0; p];
    let mut tmp = vec![0.0; p];
    let out = match cache {
        DriverCache::Gaussian {
            p: cp,
            n,
            sigma_l2,
            initial,
            steps,
        } => {
            if *cp != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: *cp,
                });
            }
            let scale = sigma_l2 / spec.sigma_l2;
            let sigma = model::stationary_state_cov(spec)? * scale;
            let noise = noise_cov_from(&sigma, &step);
            let l0 = row_major(&linalg::psd_factor(&sigma));
            let lh = row_major(&linalg::psd_factor(&noise));
            mat_vec(&l0, initial, &mut x);
            let mut out = Vec::with_capacity(*n);
            for z in steps.chunks_exact(p) {
                mat_vec(&step_rm, &x, &mut tmp);
                // lower-triangular factor times z
                for i in 0..p {
                    let row = &lh[i * p..i * p + p];
                    let mut acc = tmp[i];
                    for j in 0..p {
                        acc += row[j] * z[j];
                    }
                    x[i] = acc;
                }
                out.push(c.iter().zip(&x).map(|(a, b)| a * b).sum());
            }
            out
        }
        DriverCache::Nig {
            n,
            fine,
            burn_in,
            increments,
        } => {
            let dt = h / *fine as f64;
            let e = spec.input_vector();
            // kernel for the j-th subinterval, evaluated at its midpoint: e^{A(h - (j+1/2)dt)} e_p
            let half = linalg::expm(&(&spec.a * (0.5 * dt))) * &e;
            let sub = linalg::expm(&(&spec.a * dt));
            let mut kernels = vec![DVector::zeros(p); *fine];
            kernels[*fine - 1] = half;
            for j in (0..*fine - 1).rev() {
                kernels[j] = &sub * &kernels[j + 1];
            }
            let kern: Vec<f64> = kernels.iter().flat_map(|k| k.iter().copied()).collect();
            let rho = -spec.spectral_abscissa()?;
            let wanted = (BURN_IN_SCALE / (rho * h)).ceil();
            let available = burn_in.len() / fine;
            let burn_steps = if wanted.is_finite() {
                (wanted as usize).min(available)
            } else {
                available
            };
            let advance = |x: &mut Vec<f64>, tmp: &mut Vec<f64>, incs: &[f64]| {
                mat_vec(&step_rm, x, tmp);
                for (j, dl) in incs.iter().enumerate() {
                    let k = &kern[j * p..j * p + p];
                    for i in 0..p {
                        tmp[i] += k[i] * dl;
                    }
                }
                std::mem::swap(x, tmp);
            };
            let burn = &burn_in[(available - burn_steps) * fine..available * fine];
            for incs in burn.chunks_exact(*fine) {
                advance(&mut x, &mut tmp, incs);
            }
            let mut out = Vec::with_capacity(*n);
            for incs in increments.chunks_exact(*fine) {
                advance(&mut x, &mut tmp, incs);
                out.push(c.iter().zip(&x).map(|(a, b)| a * b).sum());
            }
            out
        }
    };
    if let Some(i) = out.iter().position(|v: &f64| !v.is_finite()) {
        return Err(Error::NonFinite(format!("simulated observation {i}")));
    }
    Ok(out)
}

/// Simulates `n` observations of a stationary CARMA process on the grid `h`.
pub fn simulate_carma_path<R: Rng + ?Sized>(
    spec: &CarmaSpec,
    n: usize,
    h: f64,
    driver: &DriverConfig,
    rng: &mut R,
) -> Result<SampledSeries> {
    if n == 0 {
        return Err(Error::InvalidParameter("path length must be positive".into()));
    }
    let cache = DriverCache::generate(spec.p, n, h, driver, rng)?;
    let values = simulate_with_cache(spec, h, &cache)?;
    let mut series = SampledSeries::new(h, values)?;
    series.meta.driver = Some(driver.kind);
    Ok(series)
}
