//! Derivative-free Nelder–Mead minimization on a box.
//!
//! Points outside the box are evaluated at their projection onto the box plus a
//! quadratic penalty in the distance, so the simplex can straddle the boundary.
//! After the first run the search is restarted from the best point with a
//! freshly jittered simplex.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Evaluation budget per simplex run.
    pub max_evals: usize,
    /// Extra runs started from the incumbent.
    pub restarts: usize,
    /// Simplex diameter, relative to the box width, below which a run stops.
    pub xtol: f64,
    /// Initial simplex edge as a fraction of the box width.
    pub initial_step: f64,
    /// Uniform jitter of restart points as a fraction of the box width.
    pub jitter: f64,
    /// Weight of the squared out-of-box distance.
    pub box_penalty: f64,
    /// Relative distance to a bound under which a solution counts as on the boundary.
    pub boundary_tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            restarts: 3,
            xtol: 1e-9,
            initial_step: 0.1,
            jitter: 0.02,
            box_penalty: 1e4,
            boundary_tol: 1e-6,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_evals < 10 {
            return Err(Error::Config("optimizer max_evals must be at least 10".into()));
        }
        if !(self.xtol > 0.0) || !(self.initial_step > 0.0) || !(self.jitter >= 0.0) {
            return Err(Error::Config("optimizer tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    /// Minimizer, always inside the box.
    pub x: Vec<f64>,
    pub fval: f64,
    pub evals: usize,
    /// Every simplex run met the diameter tolerance within its budget.
    pub converged: bool,
    /// Some coordinate lies within `boundary_tol` of a bound.
    pub on_boundary: bool,
}

/// Box `[lower, upper]` with finite bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::Config(format!("invalid box side [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| v.clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    /// Squared distance to the box in width-relative units.
    fn outside2(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let d = (self.lower[i] - v).max(v - self.upper[i]).max(0.0) / self.width(i);
                d * d
            })
            .sum()
    }

    pub fn on_boundary(&self, x: &[f64], tol: f64) -> bool {
        x.iter().enumerate().any(|(i, v)| {
            let w = self.width(i);
            (v - self.lower[i]) <= tol * w || (self.upper[i] - v) <= tol * w
        })
    }
}

struct Counted<'f, F> {
    f: &'f mut F,
    bounds: &'f BoxBounds,
    penalty: f64,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<'_, F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let inside = self.bounds.clip(x);
        let v = (self.f)(&inside);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        v + self.penalty * self.bounds.outside2(x)
    }
}

/// One simplex run from `x0`. Returns (best point, value, converged).
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    obj: &mut Counted<'_, F>,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> (Vec<f64>, f64, bool) {
    let d = x0.len();
    let budget = obj.evals + cfg.max_evals;
    let widths: Vec<f64> = (0..d).map(|i| obj.bounds.width(i)).collect();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(d + 1);
    simplex.push(x0.to_vec());
    for i in 0..d {
        let mut v = x0.to_vec();
        let step = cfg.initial_step * widths[i];
        // step towards the interior when the start sits near the upper bound
        v[i] += if x0[i] + step <= obj.bounds.upper[i] { step } else { -step };
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|x| obj.eval(x)).collect();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    loop {
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();

        let diam = simplex[1..]
            .iter()
            .flat_map(|x| x.iter().enumerate().map(|(i, v)| (v - simplex[0][i]).abs() / widths[i]))
            .fold(0.0, f64::max);
        if diam <= cfg.xtol {
            return (simplex[0].clone(), fv[0], true);
        }
        if obj.evals >= budget {
            return (simplex[0].clone(), fv[0], false);
        }

        let mut centroid = vec![0.0; d];
        for x in &simplex[..d] {
            for i in 0..d {
                centroid[i] += x[i] / d as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            (0..d)
                .map(|i| centroid[i] + t * (simplex[d][i] - centroid[i]))
                .collect()
        };
        let xr = along(-alpha);
        let fr = obj.eval(&xr);
        if fr < fv[0] {
            let xe = along(-gamma);
            let fe = obj.eval(&xe);
            if fe < fr {
                simplex[d] = xe;
                fv[d] = fe;
            } else {
                simplex[d] = xr;
                fv[d] = fr;
            }
            continue;
        }
        if fr < fv[d - 1] {
            simplex[d] = xr;
            fv[d] = fr;
            continue;
        }
        // outside contraction towards the reflected point, inside otherwise
        let (xc, fc) = if fr < fv[d] {
            let xc = along(-rho);
            let fc = obj.eval(&xc);
            (xc, fc)
        } else {
            let xc = along(rho);
            let fc = obj.eval(&xc);
            (xc, fc)
        };
        if fc < fv[d].min(fr) {
            simplex[d] = xc;
            fv[d] = fc;
            continue;
        }
        for k in 1..=d {
            let shrunk: Vec<f64> = (0..d)
                .map(|i| simplex[0][i] + sigma * (simplex[k][i] - simplex[0][i]))
                .collect();
            fv[k] = obj.eval(&shrunk);
            simplex[k] = shrunk;
        }
    }
}

/// Minimizes `f` over the box starting from `x0` (clipped into the box).
pub fn minimize_box<F, R>(
    mut f: F,
    x0: &[f64],
    bounds: &BoxBounds,
    cfg: &OptimizerConfig,
    rng: &mut R,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    if x0.len() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            expected: bounds.dim(),
            got: x0.len(),
        });
    }
    let mut obj = Counted {
        f: &mut f,
        bounds,
        penalty: cfg.box_penalty,
        evals: 0,
    };
    let start = bounds.clip(x0);
    let (mut best, mut best_f, mut converged) = nelder_mead(&mut obj, &start, cfg);
    for _ in 0..cfg.restarts {
        let jittered: Vec<f64> = best
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let w = bounds.width(i);
                v + cfg.jitter * w * (2.0 * rng.random::<f64>() - 1.0)
            })
            .collect();
        let (x, fx, conv) = nelder_mead(&mut obj, &bounds.clip(&jittered), cfg);
        converged = conv;
        if fx <= best_f {
            best = x;
            best_f = fx;
        }
    }
    let x = bounds.clip(&best);
    let evals = obj.evals + 1;
    let fval = f(&x);
    Ok(OptimResult {
        on_boundary: bounds.on_boundary(&x, cfg.boundary_tol),
        x,
        fval,
        evals,
        converged,
    })
}
