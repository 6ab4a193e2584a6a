//! Configuration-driven Monte Carlo runner.
//!
//! A config file has the sections `[model]`, `[driver]`, `[outliers]`,
//! `[estimators]` and `[run]`, plus an optional list of `[[scenarios]]` that
//! override the model parameter, the outliers, `n`, `r` or the driver. Each
//! scenario expands into one [`ExperimentSpec`].

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aux_ar;
use crate::contamination::{self, OutlierConfig};
use crate::error::{Error, Result};
use crate::gm::{self, GmConfig};
use crate::indirect::{self, DataLeg, IndirectConfig};
use crate::levy::{self, DriverConfig, SampledSeries};
use crate::model::{self, DriverScale, ModelFamily, ThetaParam};
use crate::optim::OptimizerConfig;
use crate::qmle::{self, QmleConfig};
use crate::report::ReportTable;
use crate::rng::{SeedKey, StreamRole};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "CARMA_INDIRECT_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    Car1,
    Carma31,
}

impl FamilyName {
    pub fn family(self, scale: DriverScale, sigma_l2: f64) -> ModelFamily {
        let f = match self {
            FamilyName::Car1 => ModelFamily::car1(),
            FamilyName::Carma31 => ModelFamily::carma31(),
        };
        f.with_scale(scale).with_sigma_l2(sigma_l2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// GM data leg, least-squares simulation leg.
    Indirect,
    Qmle,
    /// Indirect estimator with a least-squares data leg.
    Ls,
    /// The GM fit of the auxiliary AR(r) parameter alone.
    Gm,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Indirect => "indirect",
            EstimatorKind::Qmle => "qmle",
            EstimatorKind::Ls => "ls",
            EstimatorKind::Gm => "gm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: FamilyName,
    pub theta0: Vec<f64>,
    #[serde(default = "one")]
    pub h: f64,
    #[serde(default)]
    pub scale: DriverScale,
    #[serde(default)]
    pub lower: Option<Vec<f64>>,
    #[serde(default)]
    pub upper: Option<Vec<f64>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    pub list: Vec<EstimatorKind>,
    pub r: usize,
    #[serde(default = "default_s")]
    pub s: usize,
    #[serde(default)]
    pub omega: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub gm: GmConfig,
}

fn default_s() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n: usize,
    pub replications: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Subtract the sample mean of the observed series before estimation.
    #[serde(default)]
    pub demean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverride {
    pub name: String,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub outliers: Option<OutlierConfig>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub r: Option<usize>,
    #[serde(default)]
    pub driver: Option<DriverConfig>,
}

/// Parsed config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: ModelSection,
    pub driver: DriverConfig,
    #[serde(default = "OutlierConfig::none")]
    pub outliers: OutlierConfig,
    pub estimators: EstimatorSection,
    pub run: RunSection,
    #[serde(default)]
    pub scenarios: Vec<ScenarioOverride>,
}

impl ConfigFile {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("JSON config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("TOML config: {e}")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// One spec per scenario, or a single spec when no scenarios are listed.
    pub fn expand(&self) -> Result<Vec<ExperimentSpec>> {
        let base_name = self.run.name.clone().unwrap_or_else(|| "experiment".into());
        let base = ExperimentSpec {
            name: base_name.clone(),
            family: self.model.family,
            scale: self.model.scale,
            theta0: self.model.theta0.clone(),
            h: self.model.h,
            n: self.run.n,
            driver: self.driver,
            outliers: self.outliers,
            r: self.estimators.r,
            s: self.estimators.s,
            estimators: self.estimators.list.clone(),
            omega: self.estimators.omega.clone(),
            optimizer: self.estimators.optimizer,
            gm: self.estimators.gm.clone(),
            lower: self.model.lower.clone(),
            upper: self.model.upper.clone(),
            replications: self.run.replications,
            master_seed: self.run.master_seed,
            out_dir: self.run.out_dir.clone(),
            demean: self.run.demean,
        };
        let specs: Vec<ExperimentSpec> = if self.scenarios.is_empty() {
            vec![base]
        } else {
            self.scenarios
                .iter()
                .map(|sc| {
                    let mut s = base.clone();
                    s.name = format!("{base_name}_{}", sc.name);
                    if let Some(t) = &sc.theta0 {
                        s.theta0 = t.clone();
                    }
                    if let Some(o) = sc.outliers {
                        s.outliers = o;
                    }
                    if let Some(n) = sc.n {
                        s.n = n;
                    }
                    if let Some(r) = sc.r {
                        s.r = r;
                    }
                    if let Some(d) = sc.driver {
                        s.driver = d;
                    }
                    s
                })
                .collect()
        };
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    }
}

/// One fully specified Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub family: FamilyName,
    pub scale: DriverScale,
    pub theta0: Vec<f64>,
    pub h: f64,
    pub n: usize,
    /// Driver of the observed path; the simulation leg uses the same law.
    pub driver: DriverConfig,
    pub outliers: OutlierConfig,
    pub r: usize,
    pub s: usize,
    pub estimators: Vec<EstimatorKind>,
    pub omega: Option<Vec<Vec<f64>>>,
    pub optimizer: OptimizerConfig,
    pub gm: GmConfig,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub replications: usize,
    pub master_seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Estimators see the observed series minus its sample mean.
    pub demean: bool,
}

impl ExperimentSpec {
    pub fn model_family(&self) -> ModelFamily {
        self.family.family(self.scale, self.driver.sigma_l2)
    }

    pub fn theta0_param(&self) -> ThetaParam {
        ThetaParam::unbounded(self.theta0.clone())
    }

    pub fn indirect_config(&self, data_leg: DataLeg, replication: u64) -> IndirectConfig {
        let mut cfg = IndirectConfig::new(self.r, self.s, self.driver).with_seed(self.master_seed, replication);
        cfg.omega = self.omega.clone();
        cfg.optimizer = self.optimizer;
        cfg.gm = self.gm.clone();
        cfg.data_leg = data_leg;
        cfg.lower = self.lower.clone();
        cfg.upper = self.upper.clone();
        cfg
    }

    pub fn qmle_config(&self, replication: u64) -> QmleConfig {
        QmleConfig {
            optimizer: self.optimizer,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            master_seed: self.master_seed,
            replication,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Config(format!("sampling step must be positive, got {}", self.h)));
        }
        if self.n <= self.r + 1 {
            return Err(Error::Config(format!("n = {} is too short for r = {}", self.n, self.r)));
        }
        let family = self.model_family();
        if self.theta0.len() != family.dim() {
            return Err(Error::DimensionMismatch {
                expected: family.dim(),
                got: self.theta0.len(),
            });
        }
        let spec = model::build_state_space_raw(&self.theta0, &family)?;
        model::ensure_admissible(&spec, self.h)?;
        self.driver.validate()?;
        self.outliers.validate()?;
        if self.estimators.iter().any(|e| *e != EstimatorKind::Qmle) {
            self.indirect_config(DataLeg::Gm, 0).validate(&family)?;
        }
        if self.estimators.contains(&EstimatorKind::Qmle) {
            family.validate_scale()?;
            self.qmle_config(0).bounds(&family)?;
        }
        Ok(())
    }

    /// Component labels and true values reported for `kind`.
    pub fn components(&self, kind: EstimatorKind) -> Result<Vec<(String, f64)>> {
        match kind {
            EstimatorKind::Gm => {
                let link = aux_ar::link_function(&self.theta0_param(), &self.model_family(), self.h, self.r)?;
                let mut out: Vec<(String, f64)> = link
                    .pis
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (format!("pi_{}", i + 1), *v))
                    .collect();
                out.push(("sigma".into(), link.sigma));
                Ok(out)
            }
            _ => Ok(self
                .theta0
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("theta_{}", i + 1), *v))
                .collect()),
        }
    }
}

/// What one estimator produced in one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutcome {
    pub estimator: EstimatorKind,
    /// Estimate, when the estimator returned one (failed or not).
    pub values: Option<Vec<f64>>,
    pub failed: bool,
    pub error: Option<String>,
}

/// Everything recorded about one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationTrace {
    pub replication: usize,
    pub outcomes: Vec<EstimatorOutcome>,
}

/// Clean and observed path of one replication, with outlier positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    pub h: f64,
    pub clean: Vec<f64>,
    pub observed: Vec<f64>,
    pub outliers: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub table: ReportTable,
    pub traces: Vec<ReplicationTrace>,
    /// Path of replication 0.
    pub first_path: PathTrace,
    pub elapsed: Duration,
}

/// Simulates and contaminates the observed path of one replication.
pub fn simulate_replication(spec: &ExperimentSpec, replication: u64) -> Result<PathTrace> {
    let key = SeedKey::new(spec.master_seed, replication);
    let family = spec.model_family();
    let cs = model::build_state_space_raw(&spec.theta0, &family)?;
    let clean = levy::simulate_carma_path(&cs, spec.n, spec.h, &spec.driver, &mut key.stream(StreamRole::Data))?;
    let (observed, outliers) = if spec.outliers.is_clean() {
        (clean.values.clone(), vec![false; spec.n])
    } else {
        let (s, f) = contamination::contaminate_with_flags(&clean, &spec.outliers, &mut key.stream(StreamRole::Contamination))?;
        (s.values, f)
    };
    Ok(PathTrace {
        h: spec.h,
        clean: clean.values,
        observed,
        outliers,
    })
}

fn run_estimator(spec: &ExperimentSpec, kind: EstimatorKind, series: &SampledSeries, replication: u64) -> EstimatorOutcome {
    let family = spec.model_family();
    let res: Result<(Vec<f64>, bool)> = match kind {
        EstimatorKind::Indirect | EstimatorKind::Ls => {
            let leg = if kind == EstimatorKind::Ls { DataLeg::Ls } else { DataLeg::Gm };
            indirect::indirect_estimate(series, &family, &spec.indirect_config(leg, replication))
                .map(|e| (e.theta_hat.values.clone(), e.failed()))
        }
        EstimatorKind::Qmle => qmle::qmle_estimate(series, &family, &spec.qmle_config(replication))
            .map(|e| (e.theta_hat.values.clone(), e.failed())),
        EstimatorKind::Gm => gm::gm_estimate(series, spec.r, &spec.gm)
            .map(|e| (e.aux.to_vector().iter().copied().collect(), !e.converged)),
    };
    match res {
        Ok((values, failed)) => EstimatorOutcome {
            estimator: kind,
            values: Some(values),
            failed,
            error: None,
        },
        Err(e) => EstimatorOutcome {
            estimator: kind,
            values: None,
            failed: true,
            error: Some(e.to_string()),
        },
    }
}

fn run_replication(spec: &ExperimentSpec, replication: usize) -> (ReplicationTrace, Option<PathTrace>) {
    let rep = replication as u64;
    let outcomes = match simulate_replication(spec, rep) {
        Ok(path) => {
            let mut values = path.observed.clone();
            if spec.demean {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                values.iter_mut().for_each(|v| *v -= mean);
            }
            let mut series = SampledSeries::new(spec.h, values).expect("simulated path is finite");
            series.meta.seed = Some(spec.master_seed);
            let outcomes = spec
                .estimators
                .iter()
                .map(|&k| run_estimator(spec, k, &series, rep))
                .collect();
            return (
                ReplicationTrace { replication, outcomes },
                (replication == 0).then_some(path),
            );
        }
        Err(e) => spec
            .estimators
            .iter()
            .map(|&k| EstimatorOutcome {
                estimator: k,
                values: None,
                failed: true,
                error: Some(format!("simulation: {e}")),
            })
            .collect(),
    };
    (ReplicationTrace { replication, outcomes }, None)
}

/// Worker count from [`THREADS_ENV`], else the number of available cores.
pub fn default_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs all replications on `threads` workers and aggregates them in replication order.
pub fn run_experiment(spec: &ExperimentSpec, threads: usize) -> Result<ExperimentResult> {
    spec.validate()?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let runs: Vec<(ReplicationTrace, Option<PathTrace>)> =
        pool.install(|| (0..spec.replications).into_par_iter().map(|k| run_replication(spec, k)).collect());
    let mut traces = Vec::with_capacity(runs.len());
    let mut first_path = None;
    for (t, p) in runs {
        if p.is_some() {
            first_path = p;
        }
        traces.push(t);
    }
    let first_path = match first_path {
        Some(p) => p,
        None => simulate_replication(spec, 0)?,
    };
    let table = ReportTable::aggregate(spec, &traces)?;
    Ok(ExperimentResult {
        spec: spec.clone(),
        table,
        traces,
        first_path,
        elapsed: started.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAR1: &str = r#"
[model]
family = "car1"
theta0 = [-2.0]
scale = "nuisance"

[driver]
kind = "brownian"
sigma_l2 = 1.0

[estimators]
list = ["ls", "gm"]
r = 1
s = 2

[run]
n = 200
replications = 3
master_seed = 11
name = "t"

[[scenarios]]
name = "clean"

[[scenarios]]
name = "xi5"
theta0 = [-1.0]
outliers = { gamma = 0.1, mode = "replacement", value = { kind = "constant", xi = 5.0 }, temporal = { kind = "isolated" } }
"#;

    #[test]
    fn scenarios_expand_with_overrides() {
        let cfg = ConfigFile::parse(CAR1).unwrap();
        let specs = cfg.expand().unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].name, "t_clean");
        assert!(specs[0].outliers.is_clean());
        assert_eq!(specs[1].theta0, vec![-1.0]);
        assert_eq!(specs[1].outliers.gamma, 0.1);
    }

    #[test]
    fn json_config_is_accepted() {
        let cfg = ConfigFile::parse(CAR1).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ConfigFile::parse(&json).unwrap(), cfg);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = ConfigFile::parse(CAR1).unwrap().expand().unwrap().remove(0);
        spec.replications = 0;
        assert!(spec.validate().is_err());
        spec.replications = 1;
        spec.theta0 = vec![0.5];
        assert!(spec.validate().is_err());
        spec.theta0 = vec![-1.0, 2.0];
        assert!(spec.validate().is_err());
    }

    #[test]
    fn failures_and_successes_add_up() {
        let spec = ConfigFile::parse(CAR1).unwrap().expand().unwrap().remove(1);
        let res = run_experiment(&spec, 1).unwrap();
        for row in &res.table.rows {
            assert_eq!(row.successes + row.failures, row.replications);
        }
        assert_eq!(res.traces.len(), 3);
        assert!(res.first_path.outliers.iter().any(|&f| f));
    }

    #[test]
    fn demeaning_removes_a_constant_shift() {
        let mut clean = ConfigFile::parse(CAR1).unwrap().expand().unwrap().remove(0);
        clean.estimators = vec![EstimatorKind::Ls];
        clean.demean = true;
        let mut shifted = clean.clone();
        shifted.outliers = OutlierConfig::additive(3.0, 1.0);
        let a = run_experiment(&clean, 1).unwrap();
        let b = run_experiment(&shifted, 1).unwrap();
        for (ta, tb) in a.traces.iter().zip(&b.traces) {
            let (x, y) = (ta.outcomes[0].values.as_ref().unwrap(), tb.outcomes[0].values.as_ref().unwrap());
            assert!((x[0] - y[0]).abs() < 1e-6, "{} vs {}", x[0], y[0]);
        }
        shifted.demean = false;
        let c = run_experiment(&shifted, 1).unwrap();
        assert_ne!(c.table.to_csv_string(), a.table.to_csv_string());
    }
}
