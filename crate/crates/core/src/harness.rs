//! Seeded experiment sweeps: config parsing, CSV traces and summaries,
//! point-cloud snapshots and trace comparison.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::load_geometry;
use crate::error::{Error, Result};
use crate::joint::{mix_seed, run, JointConfig, RunTrace};
use crate::scenario::{LayoutConfig, Scenario};
use crate::scene::{load_scene, random_scene, save_scene, RoomSpec, ScattererField};
use crate::scma::{load_codebook, validate_codebook, Codebook};

pub const TRACE_SCHEMA: &str = "jcas-trace/1";
pub const SUMMARY_SCHEMA: &str = "jcas-summary/1";
/// Environment variable that replaces the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "JCAS_OUTPUT_DIR";

const TAG_TRIAL: u64 = 0x5EED;
const TAG_SCENE: u64 = 11;
const TAG_LAYOUT: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[serde(rename = "ebn0_db")]
    EbN0Db,
    NUsers,
    Mu,
    Packets,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::EbN0Db => "ebn0_db",
            SweepAxis::NUsers => "n_users",
            SweepAxis::Mu => "mu",
            SweepAxis::Packets => "packets",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// The simulated system; files override the generated defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub users: usize,
    pub ores: usize,
    /// OREs per user.
    pub d_v: usize,
    /// Codewords per user.
    pub codewords: usize,
    /// Scene sparsity used for random scenes and as the receiver prior.
    pub sparsity: f64,
    pub codebook: Option<PathBuf>,
    pub scene: Option<PathBuf>,
    pub geometry: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            users: 6,
            ores: 4,
            d_v: 2,
            codewords: 4,
            sparsity: 0.015,
            codebook: None,
            scene: None,
            geometry: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Record wall-clock times; off keeps reruns byte-identical.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub layout: LayoutConfig,
    #[serde(default)]
    pub joint: JointConfig,
    pub sweep: Sweep,
}

fn default_trials() -> usize {
    20
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config; relative file paths inside it resolve against the
    /// config's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let mut cfg = ExperimentConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.scenario.codebook, &mut cfg.scenario.scene, &mut cfg.scenario.geometry]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.sweep.values.is_empty() {
            return Err(Error::Config("sweep has no values".into()));
        }
        let s = &self.scenario;
        if !(s.sparsity > 0.0 && s.sparsity <= 1.0) {
            return Err(Error::Sparsity(s.sparsity));
        }
        for &v in &self.sweep.values {
            if !v.is_finite() {
                return Err(Error::Config(format!("sweep value {v}")));
            }
            let integral = v >= 0.0 && v.fract() == 0.0;
            match self.sweep.axis {
                SweepAxis::NUsers if !(integral && v >= 1.0) => {
                    return Err(Error::Config(format!("n_users value {v} is not a positive integer")))
                }
                SweepAxis::Packets if !integral => {
                    return Err(Error::Config(format!("packets value {v} is not a non-negative integer")))
                }
                SweepAxis::Mu if !(0.0..1.0).contains(&v) => {
                    return Err(Error::Config(format!("mu value {v} outside [0, 1)")))
                }
                _ => {}
            }
        }
        self.joint.validate()
    }

    /// Output directory after the environment override.
    pub fn resolved_output(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }
}

/// Seed of one trial: a pure function of the master seed, the sweep value
/// and the trial index.
pub fn child_seed(master: u64, value: f64, trial: usize) -> u64 {
    mix_seed(mix_seed(master, TAG_TRIAL, value.to_bits()), TAG_TRIAL, trial as u64)
}

/// Everything one trial needs, built from the config at one sweep value.
pub struct TrialSetup {
    pub codebook: Codebook,
    pub scenario: Scenario,
    pub scene: ScattererField,
    pub joint: JointConfig,
}

/// Applies the sweep value and builds the trial's system.
pub fn setup_trial(cfg: &ExperimentConfig, value: f64, trial: usize) -> Result<TrialSetup> {
    let seed = child_seed(cfg.seed, value, trial);
    let mut sc = cfg.scenario.clone();
    let mut joint = cfg.joint.clone();
    match cfg.sweep.axis {
        SweepAxis::EbN0Db => joint.ebn0_db = value,
        SweepAxis::Mu => joint.mu = value,
        SweepAxis::Packets => joint.packets = value as usize,
        SweepAxis::NUsers => sc.users = value as usize,
    }
    joint.sparsity.get_or_insert(sc.sparsity);

    let codebook = match &sc.codebook {
        Some(p) => {
            let cb = load_codebook(p)?;
            if cb.user_count() != sc.users {
                return Err(Error::Config(format!(
                    "codebook {} has {} users, sweep point needs {}",
                    p.display(),
                    cb.user_count(),
                    sc.users
                )));
            }
            cb
        }
        None if (sc.users, sc.ores, sc.d_v, sc.codewords) == (6, 4, 2, 4) => Codebook::bundled(),
        None => Codebook::generate(sc.users, sc.ores, sc.d_v, sc.codewords)?,
    };

    let (room, scene) = match &sc.scene {
        Some(p) => load_scene(p, None)?,
        None => {
            let room = RoomSpec::standard();
            let scene = random_scene(&room, sc.sparsity, mix_seed(seed, TAG_SCENE, 0))?;
            (room, scene)
        }
    };
    let scenario = match &sc.geometry {
        Some(p) => {
            let geom = load_geometry(p, &room)?;
            if geom.user_count() != sc.users {
                return Err(Error::Config(format!(
                    "geometry {} places {} users, sweep point needs {}",
                    p.display(),
                    geom.user_count(),
                    sc.users
                )));
            }
            Scenario::from_geometry(room, geom, codebook.ore_count(), &cfg.layout)?
        }
        None => Scenario::standard(room, sc.users, codebook.ore_count(), &cfg.layout, mix_seed(seed, TAG_LAYOUT, 0))?,
    };
    Ok(TrialSetup {
        codebook,
        scenario,
        scene,
        joint,
    })
}

/// Runs one trial end to end.
pub fn run_trial(cfg: &ExperimentConfig, value: f64, trial: usize) -> Result<RunTrace> {
    let t = setup_trial(cfg, value, trial)?;
    run(&t.scene, &t.scenario, &t.codebook, &t.joint, child_seed(cfg.seed, value, trial))
}

#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub value: f64,
    pub completed: usize,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub points: Vec<PointOutcome>,
}

impl ExperimentReport {
    pub fn failed(&self) -> bool {
        self.points.iter().any(|p| !p.errors.is_empty())
    }
}

/// Runs every (sweep value, trial) pair, in parallel, and writes
/// `trace.csv`, `summary.csv` and one `xhat_<axis>_<value>.txt` point cloud
/// per sweep value (per-voxel median of the final estimates over trials).
/// A failing point is reported and the rest still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_in(cfg, cfg.resolved_output())
}

/// [`run_experiment`] writing to `out` regardless of config and environment.
pub fn run_experiment_in(cfg: &ExperimentConfig, out: PathBuf) -> Result<ExperimentReport> {
    cfg.validate()?;
    fs::create_dir_all(&out).map_err(|e| Error::file(&out, e))?;
    let tasks: Vec<(usize, f64, usize)> = cfg
        .sweep
        .values
        .iter()
        .enumerate()
        .flat_map(|(i, &v)| (0..cfg.trials).map(move |t| (i, v, t)))
        .collect();
    let results: Vec<Result<RunTrace>> = tasks.par_iter().map(|&(_, v, t)| run_trial(cfg, v, t)).collect();

    let axis = cfg.sweep.axis.name();
    let trace_path = out.join("trace.csv");
    let mut trace = String::new();
    trace.push_str(&format!("# schema: {TRACE_SCHEMA}\n"));
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "axis",
        "value",
        "trial",
        "k",
        "mse",
        "ser",
        "ser_post_feedback",
        "gate",
        "ks_used",
        "wall_ms",
    ])?;
    let mut points = Vec::new();
    let mut summary_rows = Vec::new();
    for (i, &value) in cfg.sweep.values.iter().enumerate() {
        let mut outcome = PointOutcome {
            value,
            completed: 0,
            errors: Vec::new(),
        };
        let mut ok: Vec<&RunTrace> = Vec::new();
        for ((pi, _, trial), res) in tasks.iter().zip(&results) {
            if *pi != i {
                continue;
            }
            match res {
                Ok(tr) => {
                    for p in &tr.packets {
                        w.serialize((
                            axis,
                            value,
                            trial,
                            p.k,
                            p.mse,
                            p.ser,
                            p.ser_post_feedback,
                            u8::from(p.gate),
                            p.ks_used,
                            if cfg.timing { p.wall_ms } else { 0.0 },
                        ))?;
                    }
                    outcome.completed += 1;
                    ok.push(tr);
                }
                Err(e) => outcome.errors.push(format!("{axis} = {value}, trial {trial}: {e}")),
            }
        }
        summary_rows.extend(summarize(axis, value, &ok));
        if let Some(first) = ok.first() {
            let n = first.final_x().len();
            let median: Vec<f64> = (0..n)
                .map(|j| quantile(&mut ok.iter().map(|t| t.final_x()[j]).collect::<Vec<_>>(), 0.5))
                .collect();
            let room = setup_room(cfg)?;
            if room.voxel_count() == n {
                let name = format!("xhat_{axis}_{}.txt", value_label(value));
                save_scene(out.join(name), &room, &ScattererField::clamped(median))?;
            }
        }
        points.push(outcome);
    }
    trace.push_str(std::str::from_utf8(&w.into_inner().map_err(|e| Error::Io(e.into_error()))?).unwrap_or(""));
    fs::write(&trace_path, trace).map_err(|e| Error::file(&trace_path, e))?;

    let summary_path = out.join("summary.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &summary_rows {
        w.serialize(r)?;
    }
    let mut summary = format!("# schema: {SUMMARY_SCHEMA}\n");
    summary.push_str(std::str::from_utf8(&w.into_inner().map_err(|e| Error::Io(e.into_error()))?).unwrap_or(""));
    fs::write(&summary_path, summary).map_err(|e| Error::file(&summary_path, e))?;

    let errors: Vec<&String> = points.iter().flat_map(|p| &p.errors).collect();
    if !errors.is_empty() {
        let path = out.join("errors.txt");
        let body: String = errors.iter().map(|e| format!("{e}\n")).collect();
        fs::write(&path, body).map_err(|e| Error::file(&path, e))?;
    }
    Ok(ExperimentReport { output_dir: out, points })
}

fn setup_room(cfg: &ExperimentConfig) -> Result<RoomSpec> {
    match &cfg.scenario.scene {
        Some(p) => Ok(load_scene(p, None)?.0),
        None => Ok(RoomSpec::standard()),
    }
}

fn value_label(v: f64) -> String {
    format!("{v}").replace('-', "m").replace('.', "p")
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "axis",
    "value",
    "k",
    "trials",
    "mse_median",
    "mse_iqr",
    "ser_median",
    "ser_iqr",
    "ser_post_feedback_median",
    "ser_post_feedback_iqr",
    "gate_fraction",
];

#[derive(Debug, Clone, Serialize)]
struct SummaryRow {
    axis: &'static str,
    value: f64,
    k: usize,
    trials: usize,
    mse_median: f64,
    mse_iqr: f64,
    ser_median: f64,
    ser_iqr: f64,
    ser_post_feedback_median: f64,
    ser_post_feedback_iqr: f64,
    gate_fraction: f64,
}

fn summarize(axis: &'static str, value: f64, traces: &[&RunTrace]) -> Vec<SummaryRow> {
    let len = traces.iter().map(|t| t.packets.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let col = |f: &dyn Fn(&crate::joint::PacketRecord) -> f64| -> Vec<f64> {
                traces.iter().map(|t| f(&t.packets[i])).collect()
            };
            let (mse_m, mse_i) = median_iqr(col(&|p| p.mse));
            let (ser_m, ser_i) = median_iqr(col(&|p| p.ser));
            let (post_m, post_i) = median_iqr(col(&|p| p.ser_post_feedback));
            let gates = col(&|p| f64::from(u8::from(p.gate)));
            SummaryRow {
                axis,
                value,
                k: traces[0].packets[i].k,
                trials: traces.len(),
                mse_median: mse_m,
                mse_iqr: mse_i,
                ser_median: ser_m,
                ser_iqr: ser_i,
                ser_post_feedback_median: post_m,
                ser_post_feedback_iqr: post_i,
                gate_fraction: gates.iter().sum::<f64>() / gates.len() as f64,
            }
        })
        .collect()
}

/// Linear-interpolation quantile of the finite entries; NaN when none.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Median and interquartile range.
pub fn median_iqr(mut values: Vec<f64>) -> (f64, f64) {
    let m = quantile(&mut values, 0.5);
    (m, quantile(&mut values, 0.75) - quantile(&mut values, 0.25))
}

/// A CSV table with an optional leading `# schema:` line.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub schema: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut schema = None;
        let mut body = text;
        if let Some(rest) = text.strip_prefix("# schema:") {
            let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
            schema = Some(line.trim().to_string());
            body = tail;
        }
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|x| x.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { schema, header, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Table::parse(&text)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric column; unparsable cells become NaN.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[i].parse().unwrap_or(f64::NAN)).collect())
    }
}

/// Per-column relative tolerances; columns not listed use `default`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub default: f64,
    pub columns: BTreeMap<String, f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            default: 0.0,
            columns: BTreeMap::from([("wall_ms".to_string(), f64::INFINITY)]),
        }
    }
}

impl Tolerances {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn for_column(&self, name: &str) -> f64 {
        self.columns.get(name).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColumnReport {
    pub name: String,
    /// Largest `|a − b| / max(|a|, |b|)` over rows (0 for equal cells).
    pub max_rel_diff: f64,
    /// Row of the largest difference.
    pub worst_row: Option<usize>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub columns: Vec<ColumnReport>,
}

impl CompareReport {
    pub fn pass(&self) -> bool {
        self.columns.iter().all(|c| c.pass)
    }
}

impl std::fmt::Display for CompareReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.columns {
            writeln!(
                f,
                "{:<24} max_rel_diff {:>12.4e}  tol {:>10.3e}  {}{}",
                c.name,
                c.max_rel_diff,
                c.tolerance,
                if c.pass { "pass" } else { "FAIL" },
                c.worst_row.map(|r| format!(" (row {r})")).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

fn rel_diff(a: &str, b: &str) -> f64 {
    if a == b {
        return 0.0;
    }
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) if x.is_nan() && y.is_nan() => 0.0,
        (Ok(x), Ok(y)) if x == y => 0.0,
        (Ok(x), Ok(y)) => {
            let d = (x - y).abs() / x.abs().max(y.abs());
            if d.is_nan() {
                f64::INFINITY
            } else {
                d
            }
        }
        _ => f64::INFINITY,
    }
}

/// Compares two tables column by column.
pub fn compare_tables(a: &Table, b: &Table, tol: &Tolerances) -> Result<CompareReport> {
    if a.schema != b.schema {
        return Err(Error::Config(format!("schema {:?} vs {:?}", a.schema, b.schema)));
    }
    if a.header != b.header {
        return Err(Error::Config(format!("columns {:?} vs {:?}", a.header, b.header)));
    }
    if a.rows.len() != b.rows.len() {
        return Err(Error::Config(format!("{} rows vs {}", a.rows.len(), b.rows.len())));
    }
    let columns = a
        .header
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut worst = (0.0, None);
            for (r, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
                let d = rel_diff(&ra[i], &rb[i]);
                if d > worst.0 {
                    worst = (d, Some(r));
                }
            }
            let tolerance = tol.for_column(name);
            ColumnReport {
                name: name.clone(),
                max_rel_diff: worst.0,
                worst_row: worst.1,
                tolerance,
                pass: worst.0 <= tolerance,
            }
        })
        .collect();
    Ok(CompareReport { columns })
}

pub fn compare_traces(a: impl AsRef<Path>, b: impl AsRef<Path>, tol: &Tolerances) -> Result<CompareReport> {
    compare_tables(&Table::load(a)?, &Table::load(b)?, tol)
}

/// File kinds accepted by [`validate_file`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Codebook,
    Scene,
    Geometry,
}

/// Loads and checks a file; returns a one-line description.
pub fn validate_file(kind: FileKind, path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    match kind {
        FileKind::Codebook => {
            let cb = load_codebook(path)?;
            validate_codebook(&cb)?;
            Ok(format!(
                "codebook: {} users, {} OREs, {} codewords, d_v = {}, d_f = {}",
                cb.user_count(),
                cb.ore_count(),
                cb.codeword_count(),
                cb.d_v(),
                cb.d_f()
            ))
        }
        FileKind::Scene => {
            let (room, field) = load_scene(path, None)?;
            Ok(format!(
                "scene: {} voxels, {} occupied (sparsity {:.4})",
                room.voxel_count(),
                field.nonzero_count(),
                field.nonzero_count() as f64 / field.len() as f64
            ))
        }
        FileKind::Geometry => {
            let room = RoomSpec::standard();
            let geom = load_geometry(path, &room)?;
            Ok(format!(
                "geometry: {} users, {} AP antennas, {} IRS elements",
                geom.user_count(),
                geom.antenna_count(),
                geom.irs_count()
            ))
        }
    }
}
