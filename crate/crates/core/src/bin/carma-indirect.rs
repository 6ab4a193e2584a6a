use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use carma_indirect::experiment::{self, ConfigFile, EstimatorKind, ExperimentSpec, FamilyName, THREADS_ENV};
use carma_indirect::gm::{self, GmConfig};
use carma_indirect::indirect::{self, DataLeg, IndirectConfig};
use carma_indirect::levy::{DriverConfig, NigParams, SampledSeries};
use carma_indirect::model::DriverScale;
use carma_indirect::qmle::{self, QmleConfig};
use carma_indirect::report::{self, fmt_g6};
use carma_indirect::validation;

#[derive(Parser)]
#[command(name = "carma-indirect", version, about = "Robust indirect inference for sampled CARMA processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo experiments of a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; defaults to the environment variable, then all cores.
        #[arg(long, env = THREADS_ENV)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the replication count.
        #[arg(long)]
        replications: Option<usize>,
        /// Skip the plot-data files.
        #[arg(long)]
        no_plots: bool,
    },
    /// Simulate and contaminate the paths of a config file without estimating.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in property checks.
    Validate,
    /// Estimate from a CSV series (column `value`, else `observed`, else the last one).
    Estimate {
        series: PathBuf,
        #[arg(long, value_enum)]
        family: FamilyArg,
        #[arg(long, value_enum, default_value = "indirect")]
        estimator: EstimatorArg,
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 20)]
        s: usize,
        #[arg(long, default_value_t = 1.0)]
        h: f64,
        #[arg(long, value_enum, default_value = "brownian")]
        driver: DriverArg,
        #[arg(long, value_enum, default_value = "known")]
        scale: ScaleArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also print the sandwich covariance of an indirect estimate.
        #[arg(long)]
        cov: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Car1,
    Carma31,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Indirect,
    Qmle,
    Ls,
    Gm,
}

#[derive(Clone, Copy, ValueEnum)]
enum DriverArg {
    Brownian,
    Nig,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Known,
    Nuisance,
}

fn load_specs(config: &Path, seed: Option<u64>, replications: Option<usize>) -> carma_indirect::Result<Vec<ExperimentSpec>> {
    let mut specs = ConfigFile::load(config)?.expand()?;
    for s in &mut specs {
        if let Some(seed) = seed {
            s.master_seed = seed;
        }
        if let Some(r) = replications {
            s.replications = r;
        }
        s.validate()?;
    }
    Ok(specs)
}

fn out_dir(spec: &ExperimentSpec, cli: &Option<PathBuf>) -> PathBuf {
    cli.clone()
        .or_else(|| spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(
    config: &Path,
    seed: Option<u64>,
    threads: Option<usize>,
    out: &Option<PathBuf>,
    replications: Option<usize>,
    no_plots: bool,
) -> carma_indirect::Result<()> {
    let threads = threads.filter(|&k| k > 0).unwrap_or_else(experiment::default_threads);
    for spec in load_specs(config, seed, replications)? {
        let res = experiment::run_experiment(&spec, threads)?;
        let dir = out_dir(&spec, out);
        let csv = dir.join(format!("{}.csv", spec.name));
        report::emit_csv(&res.table, &csv)?;
        if !no_plots {
            report::emit_plots(&res, &dir)?;
        }
        println!(
            "# {} (n = {}, r = {}, s = {}, {} replications, {:.1} s) -> {}",
            spec.name,
            spec.n,
            spec.r,
            spec.s,
            spec.replications,
            res.elapsed.as_secs_f64(),
            csv.display()
        );
        print!("{}", res.table.to_csv_string());
    }
    Ok(())
}

fn simulate(config: &Path, seed: Option<u64>, out: &Option<PathBuf>) -> carma_indirect::Result<()> {
    for spec in load_specs(config, seed, None)? {
        let dir = out_dir(&spec, out);
        std::fs::create_dir_all(&dir)?;
        for k in 0..spec.replications {
            let p = experiment::simulate_replication(&spec, k as u64)?;
            let mut body = String::from("t,clean,observed,outlier\n");
            for m in 0..p.clean.len() {
                body.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt_g6((m + 1) as f64 * p.h),
                    p.clean[m],
                    p.observed[m],
                    p.outliers[m] as u8
                ));
            }
            std::fs::write(dir.join(format!("{}_rep{k}.csv", spec.name)), body)?;
        }
        println!("# {}: {} paths written to {}", spec.name, spec.replications, dir.display());
    }
    Ok(())
}

fn validate() -> bool {
    let mut ok = true;
    for c in validation::run_property_checks() {
        println!("{c}");
        ok &= c.passed;
    }
    ok
}

#[allow(clippy::too_many_arguments)]
fn estimate(
    path: &Path,
    family: FamilyArg,
    estimator: EstimatorArg,
    r: usize,
    s: usize,
    h: f64,
    driver: DriverArg,
    scale: ScaleArg,
    seed: u64,
    cov: bool,
) -> carma_indirect::Result<()> {
    let series = SampledSeries::read_csv(path, h)?;
    let driver = match driver {
        DriverArg::Brownian => DriverConfig::brownian(1.0),
        DriverArg::Nig => DriverConfig::nig(NigParams::reference()),
    };
    let scale = match scale {
        ScaleArg::Known => DriverScale::Known,
        ScaleArg::Nuisance => DriverScale::Nuisance,
    };
    let name = match family {
        FamilyArg::Car1 => FamilyName::Car1,
        FamilyArg::Carma31 => FamilyName::Carma31,
    };
    let fam = name.family(scale, driver.sigma_l2);
    let kind = match estimator {
        EstimatorArg::Indirect => EstimatorKind::Indirect,
        EstimatorArg::Qmle => EstimatorKind::Qmle,
        EstimatorArg::Ls => EstimatorKind::Ls,
        EstimatorArg::Gm => EstimatorKind::Gm,
    };
    match kind {
        EstimatorKind::Gm => {
            let e = gm::gm_estimate(&series, r, &GmConfig::default())?;
            println!("pi = {:?}", e.aux.pis);
            println!("sigma = {}", e.aux.sigma);
            println!("converged = {}", e.converged);
        }
        EstimatorKind::Qmle => {
            let cfg = QmleConfig {
                master_seed: seed,
                ..QmleConfig::default()
            };
            let e = qmle::qmle_estimate(&series, &fam, &cfg)?;
            println!("theta = {:?}", e.theta_hat.values);
            println!("neg_loglik = {}", e.objective);
            println!("failed = {}", e.failed());
        }
        EstimatorKind::Indirect | EstimatorKind::Ls => {
            let mut cfg = IndirectConfig::new(r, s, driver).with_seed(seed, 0);
            if kind == EstimatorKind::Ls {
                cfg.data_leg = DataLeg::Ls;
            }
            let e = indirect::indirect_estimate(&series, &fam, &cfg)?;
            println!("theta = {:?}", e.theta_hat.values);
            println!("objective = {}", e.objective);
            println!("failed = {}", e.failed());
            if cov {
                let c = indirect::asymptotic_cov(&e.theta_hat, &fam, &cfg, &series)?;
                println!("cov = {c}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run {
            config,
            seed,
            threads,
            out,
            replications,
            no_plots,
        } => run(config, *seed, *threads, out, *replications, *no_plots),
        Command::Simulate { config, seed, out } => simulate(config, *seed, out),
        Command::Validate => {
            return if validate() { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
        Command::Estimate {
            series,
            family,
            estimator,
            r,
            s,
            h,
            driver,
            scale,
            seed,
            cov,
        } => estimate(series, *family, *estimator, *r, *s, *h, *driver, *scale, *seed, *cov),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
