//! Error metrics and the seeded benchmark sweep.
//!
//! A sweep runs every method on every `(N, n_l, theta_max, seed)` cell of a
//! grid. Runs execute on a rayon pool; records come back in grid order
//! (`N`, then `n_l`, then `theta_max`, then seed, then method).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::baselines::{local_solve, LocalOptions};
use crate::polycost::assemble_cost;
use crate::precondition::quaternion_signs;
use crate::problem::{generate_synthetic, InstanceConfig, MeasurementGraph};
use crate::quat::{quaternion_distance, UnitQuaternion};
use crate::sbsos::{solve_fredriksson, solve_sbsos, PipelineOptions, SolveReport, Verdict};
use crate::{Error, Result};

pub const QUARTILE_NOTE: &str = "# quartile method: inclusive (linear interpolation)";

/// `(1/N) sum_i min(|q_i - t_i|, |q_i + t_i|)` over gauge-fixed lists.
pub fn mean_quaternion_norm_error(estimate: &[UnitQuaternion], truth: &[UnitQuaternion]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::InvalidArgument(format!("{} estimates for {} true orientations", estimate.len(), truth.len())));
    }
    if estimate.is_empty() {
        return Err(Error::InvalidArgument("no orientations".into()));
    }
    Ok(estimate.iter().zip(truth).map(|(a, b)| quaternion_distance(a, b)).sum::<f64>() / estimate.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sbsos,
    Fredriksson,
    Local,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Sbsos => "sbsos",
            Method::Fredriksson => "fredriksson",
            Method::Local => "local",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub n: Vec<usize>,
    pub n_l: Vec<usize>,
    /// Radians.
    pub theta_max: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if self.n.is_empty() || self.n_l.is_empty() || self.theta_max.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return Err(Error::InvalidArgument("every grid axis needs at least one value".into()));
        }
        for &n in &self.n {
            for &n_l in &self.n_l {
                for &theta_max in &self.theta_max {
                    InstanceConfig { n, n_loops: n_l, theta_max, seed: 0 }.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Instance configurations in grid order.
    pub fn configs(&self) -> Vec<InstanceConfig> {
        let mut out = Vec::new();
        for &n in &self.n {
            for &n_loops in &self.n_l {
                for &theta_max in &self.theta_max {
                    for &seed in &self.seeds {
                        out.push(InstanceConfig { n, n_loops, theta_max, seed });
                    }
                }
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let g: Grid = serde_json::from_str(&fs::read_to_string(path)?)?;
        g.validate()?;
        Ok(g)
    }
}

/// JSON has no NaN; serde_json writes it as `null`.
fn nan_if_null<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_l: usize,
    pub theta_max: f64,
    pub seed: u64,
    #[serde(deserialize_with = "nan_if_null")]
    pub cost: f64,
    /// Lower bound; NaN for the local method.
    #[serde(deserialize_with = "nan_if_null")]
    pub t_star: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub gap_rel: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub mean_quat_err: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub wall_ms: f64,
    /// Certificate verdict, or `converged` / `not-converged` for the local
    /// method, or `error`.
    pub verdict: String,
}

impl RunRecord {
    fn new(method: Method, cfg: &InstanceConfig) -> Self {
        Self {
            method,
            n: cfg.n,
            n_l: cfg.n_loops,
            theta_max: cfg.theta_max,
            seed: cfg.seed,
            cost: f64::NAN,
            t_star: f64::NAN,
            gap_rel: f64::NAN,
            mean_quat_err: f64::NAN,
            wall_ms: f64::NAN,
            verdict: "error".into(),
        }
    }

    /// Copy with the timing column cleared, for byte comparisons.
    pub fn without_timing(&self) -> Self {
        Self { wall_ms: 0.0, ..self.clone() }
    }
}

fn from_report(mut rec: RunRecord, rep: &SolveReport, truth: &[UnitQuaternion]) -> Result<RunRecord> {
    let c = &rep.certificate;
    rec.cost = c.cost;
    rec.t_star = c.t_star;
    rec.gap_rel = c.gap_rel;
    rec.wall_ms = c.wall_time_ms;
    rec.verdict = c.verdict.as_str().into();
    if c.verdict != Verdict::SolverFailure {
        let est: Vec<UnitQuaternion> = c.per_vertex_quaternions.iter().map(|q| UnitQuaternion::try_from(*q)).collect::<Result<_>>()?;
        rec.mean_quat_err = mean_quaternion_norm_error(&est, truth)?;
    }
    Ok(rec)
}

/// Local optimization from the chained initialization.
fn run_local(mut rec: RunRecord, g: &MeasurementGraph, truth: &[UnitQuaternion], opts: &LocalOptions) -> Result<RunRecord> {
    let start = Instant::now();
    let sel = quaternion_signs(g)?;
    let cost = assemble_cost(g, &sel.signs)?;
    let r = local_solve(&cost, &sel.chained, opts)?;
    rec.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    rec.cost = r.cost;
    rec.mean_quat_err = mean_quaternion_norm_error(&r.quaternions, truth)?;
    rec.verdict = if r.converged { "converged" } else { "not-converged" }.into();
    Ok(rec)
}

/// Runs one method on one instance; failures become `error` records.
pub fn run_one(method: Method, cfg: &InstanceConfig, opts: &PipelineOptions) -> RunRecord {
    let rec = RunRecord::new(method, cfg);
    let attempt = || -> Result<RunRecord> {
        let g = generate_synthetic(cfg)?;
        let truth = g.truth().expect("synthetic instances carry ground truth").to_vec();
        match method {
            Method::Sbsos => from_report(rec.clone(), &solve_sbsos(&g, opts)?, &truth),
            Method::Fredriksson => from_report(rec.clone(), &solve_fredriksson(&g, opts)?, &truth),
            Method::Local => run_local(rec.clone(), &g, &truth, &opts.extract.local),
        }
    };
    attempt().unwrap_or(rec)
}

/// Runs the whole grid on `workers` threads (0 picks rayon's default).
pub fn run_sweep(grid: &Grid, workers: usize, opts: &PipelineOptions) -> Result<Vec<RunRecord>> {
    grid.validate()?;
    let jobs: Vec<(InstanceConfig, Method)> =
        grid.configs().into_iter().flat_map(|c| grid.methods.iter().map(move |&m| (c, m))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(|(c, m)| run_one(*m, c, opts)).collect()))
}

/// True unless some SBSOS record is not certified.
pub fn all_sbsos_certified(records: &[RunRecord]) -> bool {
    records
        .iter()
        .filter(|r| r.method == Method::Sbsos)
        .all(|r| r.verdict == Verdict::CertifiedOptimal.as_str())
}

pub fn write_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Inclusive quartile: linear interpolation at position `p (n - 1)` of the
/// sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub method: Method,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_l: usize,
    pub theta_max: f64,
    pub runs: usize,
    pub certified: usize,
    pub cost_mean: f64,
    pub cost_q1: f64,
    pub cost_q3: f64,
    pub err_mean: f64,
    pub err_q1: f64,
    pub err_q3: f64,
    pub wall_ms_mean: f64,
    pub wall_ms_q1: f64,
    pub wall_ms_q3: f64,
}

/// Mean and quartiles of one column over the finite values.
fn stats(values: impl Iterator<Item = f64>) -> (f64, f64, f64) {
    let mut v: Vec<f64> = values.filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    (v.iter().sum::<f64>() / v.len() as f64, quantile(&v, 0.25), quantile(&v, 0.75))
}

/// One row per `(method, N, n_l, theta_max)` in grid order.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut keys = Vec::new();
    let mut groups: BTreeMap<usize, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.method, r.n, r.n_l, r.theta_max.to_bits());
        let idx = keys.iter().position(|k| *k == key).unwrap_or_else(|| {
            keys.push(key);
            keys.len() - 1
        });
        groups.entry(idx).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let (cost_mean, cost_q1, cost_q3) = stats(rs.iter().map(|r| r.cost));
            let (err_mean, err_q1, err_q3) = stats(rs.iter().map(|r| r.mean_quat_err));
            let (wall_ms_mean, wall_ms_q1, wall_ms_q3) = stats(rs.iter().map(|r| r.wall_ms));
            SummaryRow {
                method: rs[0].method,
                n: rs[0].n,
                n_l: rs[0].n_l,
                theta_max: rs[0].theta_max,
                runs: rs.len(),
                certified: rs.iter().filter(|r| r.verdict == Verdict::CertifiedOptimal.as_str()).count(),
                cost_mean,
                cost_q1,
                cost_q3,
                err_mean,
                err_q1,
                err_q3,
                wall_ms_mean,
                wall_ms_q1,
                wall_ms_q3,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    writeln!(out, "{QUARTILE_NOTE}")?;
    let mut w = csv::Writer::from_writer(out);
    for row in summarize(records) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `runs.csv`, `runs.json` and `summary.csv` into `dir`.
pub fn write_outputs(records: &[RunRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(records, fs::File::create(dir.join("runs.csv"))?)?;
    fs::write(dir.join("runs.json"), serde_json::to_string_pretty(records)?)?;
    write_summary(records, fs::File::create(dir.join("summary.csv"))?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn error_metric_examples() {
        let mut rng = crate::rng::seeded(2);
        let truth: Vec<_> = (0..5).map(|_| crate::quat::random_rotation(&mut rng)).collect();
        assert_eq!(mean_quaternion_norm_error(&truth, &truth).unwrap(), 0.0);
        let neg: Vec<_> = truth.iter().map(|q| -*q).collect();
        assert_eq!(mean_quaternion_norm_error(&neg, &truth).unwrap(), 0.0);
        let id = UnitQuaternion::IDENTITY;
        let turned = UnitQuaternion::from_axis_angle(&nalgebra::Vector3::z(), PI / 2.0).unwrap();
        let e = mean_quaternion_norm_error(&[id, turned], &[id, id]).unwrap();
        assert!((e - (PI / 8.0).sin()).abs() < 1e-15);
        assert!((e - 0.38268).abs() < 1e-5);
        assert!(mean_quaternion_norm_error(&[id], &[id, id]).is_err());
    }

    #[test]
    fn inclusive_quartiles() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 0.75), 3.25);
        assert_eq!(quantile(&[5.0], 0.25), 5.0);
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.25), 3.25);
        assert_eq!(quantile(&v, 0.75), 7.75);
    }

    #[test]
    fn grid_validation() {
        let grid = Grid { n: vec![4], n_l: vec![4], theta_max: vec![0.1], seeds: vec![0], methods: vec![Method::Local] };
        assert!(grid.validate().is_err());
        let json = r#"{"n":[4],"n_l":[1],"theta_max":[0.1],"seeds":[0,1],"methods":["local","sbsos"]}"#;
        let g: Grid = serde_json::from_str(json).unwrap();
        assert!(g.validate().is_ok());
        assert_eq!(g.configs().len(), 2);
    }

    #[test]
    fn sweep_order_and_determinism() {
        let grid = Grid {
            n: vec![3, 4],
            n_l: vec![0, 1],
            theta_max: vec![0.1 * PI, 0.5 * PI],
            seeds: vec![0, 1],
            methods: vec![Method::Sbsos, Method::Local],
        };
        let opts = PipelineOptions::default();
        let a = run_sweep(&grid, 3, &opts).unwrap();
        let b = run_sweep(&grid, 1, &opts).unwrap();
        assert_eq!(a.len(), 2 * 2 * 2 * 2 * 2);
        let keys: Vec<_> = a.iter().map(|r| (r.n, r.n_l, r.theta_max.to_bits(), r.seed, r.method)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        let bytes = |rs: &[RunRecord]| {
            let mut buf = Vec::new();
            write_csv(&rs.iter().map(RunRecord::without_timing).collect::<Vec<_>>(), &mut buf).unwrap();
            buf
        };
        assert_eq!(bytes(&a), bytes(&b));
        assert!(all_sbsos_certified(&a), "{a:?}");
        let mut buf = Vec::new();
        write_summary(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(QUARTILE_NOTE));
        assert_eq!(text.lines().count(), 2 + 16);
        let mut buf = Vec::new();
        write_csv(&a[..1], &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("method,N,n_l,theta_max,seed,cost,t_star,gap_rel,mean_quat_err,wall_ms,verdict\n"));
    }
}
