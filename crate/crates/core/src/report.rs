//! Aggregated Monte Carlo tables, their CSV form and plot-ready data files.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::experiment::{EstimatorKind, ExperimentResult, ExperimentSpec, ReplicationTrace};

pub const CSV_HEADER: &str = "estimator,component,true_value,mean,bias,var,failures,replications";

/// One estimator × component line of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub estimator: EstimatorKind,
    pub component: String,
    pub true_value: f64,
    /// Mean over successful replications; NaN when there are none.
    pub mean: f64,
    pub bias: f64,
    /// Sample variance (denominator `k - 1`) over the `k` successes; zero for `k < 2`.
    pub var: f64,
    pub successes: usize,
    pub failures: usize,
    pub replications: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    /// Rows in estimator order of the spec, then component order.
    pub fn aggregate(spec: &ExperimentSpec, traces: &[ReplicationTrace]) -> Result<Self> {
        let mut rows = Vec::new();
        for (e, &kind) in spec.estimators.iter().enumerate() {
            let comps = spec.components(kind)?;
            let ok: Vec<&Vec<f64>> = traces
                .iter()
                .filter_map(|t| {
                    let o = &t.outcomes[e];
                    if o.failed { None } else { o.values.as_ref() }
                })
                .collect();
            let failures = traces.len() - ok.len();
            for (j, (name, truth)) in comps.into_iter().enumerate() {
                let xs: Vec<f64> = ok.iter().map(|v| v[j]).collect();
                let (mean, var) = mean_var(&xs);
                rows.push(ReportRow {
                    estimator: kind,
                    component: name,
                    true_value: truth,
                    mean,
                    bias: mean - truth,
                    var,
                    successes: xs.len(),
                    failures,
                    replications: traces.len(),
                });
            }
        }
        Ok(Self { rows })
    }

    pub fn row(&self, estimator: EstimatorKind, component: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.component == component)
    }

    pub fn rows_for(&self, estimator: EstimatorKind) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(move |r| r.estimator == estimator)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.estimator.label(),
                r.component,
                fmt_g6(r.true_value),
                fmt_g6(r.mean),
                fmt_g6(r.bias),
                fmt_g6(r.var),
                r.failures,
                r.replications
            );
        }
        s
    }
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let k = xs.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / k as f64;
    let var = if k < 2 {
        0.0
    } else {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64
    };
    (mean, var)
}

/// `printf("%.6g")`, independent of the locale.
pub fn fmt_g6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes the table as CSV.
pub fn emit_csv(table: &ReportTable, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(table.to_csv_string().as_bytes())?;
    f.flush()?;
    Ok(())
}

/// Type-7 quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-replication estimates and biases, one line per estimator × replication × component.
pub fn estimates_csv(result: &ExperimentResult) -> Result<String> {
    let spec = &result.spec;
    let mut s = String::from("estimator,replication,component,estimate,bias,failed\n");
    for (e, &kind) in spec.estimators.iter().enumerate() {
        let comps = spec.components(kind)?;
        for t in &result.traces {
            let o = &t.outcomes[e];
            for (j, (name, truth)) in comps.iter().enumerate() {
                let (est, bias) = match &o.values {
                    Some(v) => (fmt_g6(v[j]), fmt_g6(v[j] - truth)),
                    None => ("NaN".into(), "NaN".into()),
                };
                let _ = writeln!(s, "{},{},{},{},{},{}", kind.label(), t.replication, name, est, bias, o.failed as u8);
            }
        }
    }
    Ok(s)
}

/// Five-number summaries of the biases of successful replications.
pub fn boxplot_csv(result: &ExperimentResult) -> Result<String> {
    let spec = &result.spec;
    let mut s = String::from("estimator,component,count,min,q1,median,q3,max\n");
    for (e, &kind) in spec.estimators.iter().enumerate() {
        for (j, (name, truth)) in spec.components(kind)?.iter().enumerate() {
            let mut b: Vec<f64> = result
                .traces
                .iter()
                .filter_map(|t| {
                    let o = &t.outcomes[e];
                    if o.failed { None } else { o.values.as_ref().map(|v| v[j] - truth) }
                })
                .collect();
            b.sort_by(f64::total_cmp);
            let cells: Vec<String> = if b.is_empty() {
                vec!["NaN".into(); 5]
            } else {
                [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&p| fmt_g6(quantile(&b, p))).collect()
            };
            let _ = writeln!(s, "{},{},{},{}", kind.label(), name, b.len(), cells.join(","));
        }
    }
    Ok(s)
}

/// Clean and observed path of replication 0 with outliers marked.
pub fn path_csv(result: &ExperimentResult) -> String {
    let p = &result.first_path;
    let mut s = String::from("t,clean,observed,outlier\n");
    for m in 0..p.clean.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_g6((m + 1) as f64 * p.h),
            fmt_g6(p.clean[m]),
            fmt_g6(p.observed[m]),
            p.outliers[m] as u8
        );
    }
    s
}

/// Writes `<name>_estimates.csv`, `<name>_boxplot.csv` and `<name>_path.csv` into `dir`.
pub fn emit_plots(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let name = &result.spec.name;
    let files = [
        (format!("{name}_estimates.csv"), estimates_csv(result)?),
        (format!("{name}_boxplot.csv"), boxplot_csv(result)?),
        (format!("{name}_path.csv"), path_csv(result)),
    ];
    let mut out = Vec::new();
    for (file, body) in files {
        let path = dir.join(file);
        std::fs::write(&path, body)?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g6_formatting() {
        assert_eq!(fmt_g6(-2.11874321), "-2.11874");
        assert_eq!(fmt_g6(0.1008), "0.1008");
        assert_eq!(fmt_g6(1.0), "1");
        assert_eq!(fmt_g6(0.0), "0");
        assert_eq!(fmt_g6(1234567.0), "1.23457e+06");
        assert_eq!(fmt_g6(0.0000123456789), "1.23457e-05");
        assert_eq!(fmt_g6(0.000123456789), "0.000123457");
        assert_eq!(fmt_g6(999999.5), "1e+06");
        assert_eq!(fmt_g6(f64::NAN), "NaN");
    }

    #[test]
    fn empty_table_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        emit_csv(&ReportTable::default(), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn single_row_round_trips() {
        let t = ReportTable {
            rows: vec![ReportRow {
                estimator: EstimatorKind::Ls,
                component: "theta_1".into(),
                true_value: -2.0,
                mean: -2.1187,
                bias: -2.1187 - -2.0,
                var: 0.1008,
                successes: 1,
                failures: 0,
                replications: 1,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        emit_csv(&t, &p).unwrap();
        let mut rdr = csv::Reader::from_path(&p).unwrap();
        let recs: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        assert_eq!(recs.len(), 1);
        assert_eq!(&recs[0][0], "ls");
        let mean: f64 = recs[0][3].parse().unwrap();
        let bias: f64 = recs[0][4].parse().unwrap();
        assert!((mean - -2.1187).abs() < 1e-9 && (bias - -0.1187).abs() < 1e-9);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }
}
