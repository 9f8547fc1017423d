//! JSON scenarios, output files and parameter sweeps.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::Utc;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Bond, BondEnd, BondId, MetricGraph, Terminal, VertexId};
use crate::grid::{analytic_free_gaussian_envelope, build_grids, packet_field, PacketParams, WaveField};
use crate::stencil::CouplingScheme;
use crate::stepper::{
    run, AssembleError, BoundaryCondition, BoundaryTags, RunError, RunResult, SimConfig, StepError,
};

pub const DEFAULT_MEASURE_TIME: f64 = 1.1;
pub const DEFAULT_SERIES_INTERVAL: f64 = 0.01;

/// Bundled scenario files, by name.
pub const BUNDLED: [(&str, &str); 4] = [
    ("star3_fig2", include_str!("../scenarios/star3_fig2.json")),
    ("star3_kirchhoff", include_str!("../scenarios/star3_kirchhoff.json")),
    ("tree_r0", include_str!("../scenarios/tree_r0.json")),
    ("line_oracle", include_str!("../scenarios/line_oracle.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub graph: GraphConfig,
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub boundaries: BoundaryConfig,
    pub packet: PacketParams,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transparency_checks: Vec<TransparencyCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_oracle: Option<FreeOracleConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub bonds: Vec<BondConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BondConfig {
    pub id: BondId,
    pub alpha: f64,
    pub length: f64,
    #[serde(default)]
    pub origin: f64,
    pub a: Terminal,
    pub b: Terminal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub dx: f64,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub scheme: CouplingScheme,
    /// Time between rows of the norm series.
    #[serde(default = "default_series_interval")]
    pub series_interval: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
}

fn default_series_interval() -> f64 {
    DEFAULT_SERIES_INTERVAL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(default = "default_condition")]
    pub default: BoundaryCondition,
    #[serde(default)]
    pub ends: Vec<EndOverride>,
}

fn default_condition() -> BoundaryCondition {
    BoundaryCondition::Transparent { v_ext: 0.0 }
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        BoundaryConfig { default: default_condition(), ends: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndOverride {
    pub bond: BondId,
    pub end: BondEnd,
    pub condition: BoundaryCondition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    #[serde(default)]
    pub incoming_bond: Option<BondId>,
    #[serde(default = "default_measure_time")]
    pub time: f64,
}

fn default_measure_time() -> f64 {
    DEFAULT_MEASURE_TIME
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        MeasurementConfig { incoming_bond: None, time: DEFAULT_MEASURE_TIME }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransparencyCheck {
    pub vertex: VertexId,
    pub incoming: BondId,
}

/// Compares the packet bond against free whole-line motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreeOracleConfig {
    pub envelope_time: f64,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// A validated scenario ready to run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub graph: MetricGraph,
    pub sim: SimConfig,
}

pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let config: ScenarioConfig = serde_json::from_str(text)?;
    Scenario::from_config(config)
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self, ConfigError> {
        let graph = MetricGraph::from_bonds(
            config
                .graph
                .bonds
                .iter()
                .map(|b| Bond {
                    id: b.id,
                    alpha: b.alpha,
                    length: b.length,
                    origin: b.origin,
                    a: b.a,
                    b: b.b,
                })
                .collect(),
        );
        let mut problems: Vec<String> = graph.validate().iter().map(ToString::to_string).collect();

        let s = &config.simulation;
        let mut boundaries = BoundaryTags::uniform(config.boundaries.default.clone());
        for o in &config.boundaries.ends {
            match graph.bond(o.bond) {
                None => problems.push(format!("boundary override names unknown bond {}", o.bond)),
                Some(b) => {
                    if let Terminal::Vertex(v) = b.terminal(o.end) {
                        if graph.vertex(v).is_some_and(|v| v.degree() > 1) {
                            problems.push(format!(
                                "boundary override on bond {} end {} which sits at vertex {v}",
                                o.bond, o.end
                            ));
                        }
                    }
                }
            }
            boundaries = boundaries.with(o.bond, o.end, o.condition.clone());
        }
        let conditions = std::iter::once(&config.boundaries.default)
            .chain(config.boundaries.ends.iter().map(|o| &o.condition));
        for cond in conditions {
            match cond {
                BoundaryCondition::Transparent { v_ext } if !v_ext.is_finite() => {
                    problems.push(format!("exterior potential {v_ext} is not finite"))
                }
                BoundaryCondition::VertexTbc { alpha_in, alphas_out }
                    if (!(*alpha_in > 0.0) || alphas_out.is_empty() || alphas_out.iter().any(|a| !(*a > 0.0))) => {
                        problems.push("reduced vertex weights must be positive and non-empty".to_string());
                    }
                _ => {}
            }
        }

        if !(s.series_interval > 0.0 && s.series_interval.is_finite()) {
            problems.push(format!("series_interval must be positive, got {}", s.series_interval));
        }
        let series_every = if s.dt > 0.0 && s.series_interval > 0.0 {
            ((s.series_interval / s.dt).round() as usize).max(1)
        } else {
            1
        };
        let sim = SimConfig {
            dx: s.dx,
            dt: s.dt,
            t_end: s.t_end,
            boundaries,
            scheme: s.scheme,
            series_every,
            snapshot_times: s.snapshot_times.clone(),
            incoming_bond: config.measurement.incoming_bond,
            measure_time: config.measurement.time,
        };
        problems.extend(sim.validate());

        let p = &config.packet;
        if graph.bond(p.bond).is_none() {
            problems.push(format!("packet bond {} is not part of the graph", p.bond));
        }
        if !(p.sigma > 0.0 && p.sigma.is_finite()) {
            problems.push(format!("packet sigma must be positive, got {}", p.sigma));
        }
        if !(p.x0.is_finite() && p.k0.is_finite()) {
            problems.push("packet centre and wavenumber must be finite".to_string());
        }
        if let Some(b) = config.measurement.incoming_bond {
            if graph.bond(b).is_none() {
                problems.push(format!("measurement bond {b} is not part of the graph"));
            }
        }
        for c in &config.transparency_checks {
            if let Err(e) = graph.sum_rule_residual(c.vertex, c.incoming) {
                problems.push(format!("transparency check at vertex {}: {e}", c.vertex));
            }
        }
        if let Some(o) = &config.free_oracle {
            if graph.bonds.len() != 1 {
                problems.push("free_oracle needs a single-bond graph".to_string());
            }
            if !(o.envelope_time >= 0.0 && o.envelope_time <= s.t_end) {
                problems.push(format!("free_oracle envelope_time {} is outside the run", o.envelope_time));
            }
        }

        if problems.is_empty() {
            Ok(Scenario { config, graph, sim })
        } else {
            Err(ConfigError::Invalid(problems))
        }
    }

    /// Replaces the measurement time, extending the run if needed.
    pub fn with_measure_time(&self, t: f64) -> Result<Self, ConfigError> {
        let mut config = self.config.clone();
        config.measurement.time = t;
        config.simulation.t_end = config.simulation.t_end.max(t);
        Scenario::from_config(config)
    }

    /// Initial field: the packet on its bond, plus any support warning.
    pub fn initial_field(&self) -> Result<(WaveField, Option<String>), RunError> {
        let grids = build_grids(&self.graph, self.sim.dx)?;
        let (field, warning) = packet_field(&self.graph, &grids, &self.config.packet)?;
        Ok((field, warning.map(|w| w.to_string())))
    }
}

/// A sweepable scalar of the config, addressed as `bond.<id>.alpha`,
/// `bond.<id>.length` or `packet.<x0|k0|sigma>`.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamPath {
    BondAlpha(BondId),
    BondLength(BondId),
    PacketX0,
    PacketK0,
    PacketSigma,
}

impl ParamPath {
    pub fn parse(path: &str) -> Result<Self, String> {
        let parts: Vec<&str> = path.split('.').collect();
        match parts.as_slice() {
            ["bond", id, field] => {
                let id = id.parse::<u32>().map(BondId).map_err(|_| format!("bad bond id in {path}"))?;
                match *field {
                    "alpha" => Ok(ParamPath::BondAlpha(id)),
                    "length" => Ok(ParamPath::BondLength(id)),
                    _ => Err(format!("unknown bond field in {path}")),
                }
            }
            ["packet", "x0"] => Ok(ParamPath::PacketX0),
            ["packet", "k0"] => Ok(ParamPath::PacketK0),
            ["packet", "sigma"] => Ok(ParamPath::PacketSigma),
            _ => Err(format!("unknown parameter path {path}")),
        }
    }

    /// Column name in the sweep table.
    pub fn label(&self) -> String {
        match self {
            ParamPath::BondAlpha(id) => format!("alpha{id}"),
            ParamPath::BondLength(id) => format!("length{id}"),
            ParamPath::PacketX0 => "x0".to_string(),
            ParamPath::PacketK0 => "k0".to_string(),
            ParamPath::PacketSigma => "sigma".to_string(),
        }
    }

    pub fn apply(&self, config: &mut ScenarioConfig, value: f64) -> Result<(), String> {
        match self {
            ParamPath::BondAlpha(id) | ParamPath::BondLength(id) => {
                let bond = config
                    .graph
                    .bonds
                    .iter_mut()
                    .find(|b| b.id == *id)
                    .ok_or_else(|| format!("bond {id} is not part of the graph"))?;
                if matches!(self, ParamPath::BondAlpha(_)) {
                    bond.alpha = value;
                } else {
                    bond.length = value;
                }
            }
            ParamPath::PacketX0 => config.packet.x0 = value,
            ParamPath::PacketK0 => config.packet.k0 = value,
            ParamPath::PacketSigma => config.packet.sigma = value,
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    ConfigError,
    GuardViolation,
    SolverFailure,
    IoError,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::IoError => 1,
            Status::ConfigError => 2,
            Status::GuardViolation => 3,
            Status::SolverFailure => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("run failed: {0}")]
    Run(#[from] RunError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ScenarioError {
    pub fn status(&self) -> Status {
        match self {
            ScenarioError::Config(_) => Status::ConfigError,
            ScenarioError::Io(_) => Status::IoError,
            ScenarioError::Run(e) => run_status(e),
        }
    }
}

fn run_status(e: &RunError) -> Status {
    match e {
        RunError::Config(_) | RunError::Grid(_) | RunError::FieldMismatch => Status::ConfigError,
        RunError::Assemble(AssembleError::Solver(_)) => Status::SolverFailure,
        RunError::Assemble(_) => Status::ConfigError,
        RunError::Guard(_) | RunError::Step(StepError::NonFinite { .. }) => Status::GuardViolation,
        RunError::Step(_) => Status::SolverFailure,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MeasurementRecord {
    pub t: f64,
    #[serde(rename = "R")]
    pub reflection: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRecord {
    pub vertex: VertexId,
    pub incoming: BondId,
    pub sum_rule_residual: f64,
    pub plane_wave_reflection: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleRecord {
    pub envelope_time: f64,
    /// Max-norm difference between `|psi|^2` and the free envelope.
    pub envelope_error: f64,
    /// Total norm left at the end of the run.
    pub residual_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnapshotRecord {
    pub t: f64,
    pub path: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub scenario: String,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub config: ScenarioConfig,
    pub outputs: Vec<String>,
    pub snapshots: Vec<SnapshotRecord>,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub transparency_checks: Vec<CheckRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub free_oracle: Option<OracleRecord>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub struct ScenarioReport {
    pub result: RunResult,
    pub manifest: RunManifest,
}

pub fn transparency_records(scenario: &Scenario) -> Vec<CheckRecord> {
    scenario
        .config
        .transparency_checks
        .iter()
        .filter_map(|c| {
            Some(CheckRecord {
                vertex: c.vertex,
                incoming: c.incoming,
                sum_rule_residual: scenario.graph.sum_rule_residual(c.vertex, c.incoming).ok()?,
                plane_wave_reflection: scenario.graph.plane_wave_reflection(c.vertex, c.incoming).ok()?,
            })
        })
        .collect()
}

/// Max-norm error of `|psi|^2` against the free envelope at the snapshot
/// closest to `t`, plus the final total norm.
pub fn free_oracle_record(scenario: &Scenario, result: &RunResult, t: f64) -> Option<OracleRecord> {
    let idx = scenario.graph.bond_index(scenario.config.packet.bond)?;
    let snap = result
        .snapshots
        .iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))?;
    let grid = &result.grids[idx];
    let envelope_error = grid
        .coordinates()
        .zip(&snap.segments[idx])
        .map(|(x, z)| (z.norm_sqr() - analytic_free_gaussian_envelope(x, snap.t, &scenario.config.packet)).abs())
        .fold(0.0, f64::max);
    Some(OracleRecord {
        envelope_time: snap.t,
        envelope_error,
        residual_norm: *result.series.total.last()?,
    })
}

fn fmt_f64(buf: &mut ryu::Buffer, v: f64) -> &str {
    buf.format(v)
}

pub fn write_timeseries(path: &Path, result: &RunResult) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut header = vec!["t".to_string()];
    header.extend(result.bonds.iter().map(|b| format!("N{b}")));
    header.push("Ntotal".to_string());
    header.push("R".to_string());
    writeln!(w, "{}", header.join(","))?;
    let mut buf = ryu::Buffer::new();
    let s = &result.series;
    for k in 0..s.len() {
        write!(w, "{}", fmt_f64(&mut buf, s.times[k]))?;
        for n in &s.bond_norms[k] {
            write!(w, ",{}", fmt_f64(&mut buf, *n))?;
        }
        write!(w, ",{}", fmt_f64(&mut buf, s.total[k]))?;
        writeln!(w, ",{}", fmt_f64(&mut buf, s.reflection[k]))?;
    }
    w.flush()
}

pub fn write_snapshot(path: &Path, field: &WaveField, result: &RunResult) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "bond,x,re,im,abs2")?;
    let mut buf = ryu::Buffer::new();
    for (grid, seg) in result.grids.iter().zip(&field.segments) {
        for (x, z) in grid.coordinates().zip(seg) {
            write!(w, "{},{}", grid.bond, fmt_f64(&mut buf, x))?;
            write!(w, ",{}", fmt_f64(&mut buf, z.re))?;
            write!(w, ",{}", fmt_f64(&mut buf, z.im))?;
            writeln!(w, ",{}", fmt_f64(&mut buf, z.norm_sqr()))?;
        }
    }
    w.flush()
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    fs::write(path, text + "\n")
}

fn now() -> String {
    Utc::now().to_rfc3339()
}

fn display_path(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Runs a scenario and writes `timeseries.csv`, one `snapshot_<k>.csv` per
/// snapshot and `manifest.json` into `out`. The manifest is written once,
/// also when the run fails.
pub fn run_scenario(scenario: &Scenario, out: &Path) -> Result<ScenarioReport, ScenarioError> {
    fs::create_dir_all(out)?;
    let started = now();
    let mut manifest = RunManifest {
        scenario: scenario.config.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        started,
        finished: String::new(),
        status: Status::Ok,
        reason: None,
        config: scenario.config.clone(),
        outputs: Vec::new(),
        snapshots: Vec::new(),
        steps: 0,
        measurement: None,
        transparency_checks: transparency_records(scenario),
        free_oracle: None,
        warnings: Vec::new(),
    };
    let manifest_path = out.join("manifest.json");

    let outcome = execute(scenario, out, &mut manifest);
    manifest.finished = now();
    if let Err(e) = &outcome {
        manifest.status = e.status();
        manifest.reason = Some(e.to_string());
        log::error!("scenario {} failed: {e}", scenario.config.name);
    }
    manifest.outputs.push(display_path(&manifest_path));
    write_json(&manifest_path, &manifest)?;
    outcome.map(|result| ScenarioReport { result, manifest })
}

fn execute(scenario: &Scenario, out: &Path, manifest: &mut RunManifest) -> Result<RunResult, ScenarioError> {
    let (initial, warning) = scenario.initial_field()?;
    if let Some(w) = warning {
        log::warn!("{w}");
        manifest.warnings.push(w);
    }
    log::info!(
        "running {} for {} steps",
        scenario.config.name,
        scenario.sim.step_count()
    );
    let result = run(&scenario.graph, &scenario.sim, initial)?;
    manifest.steps = result.steps;
    manifest.measurement = result
        .measurement
        .as_ref()
        .map(|m| MeasurementRecord { t: m.t, reflection: m.reflection });
    if let Some(o) = &scenario.config.free_oracle {
        manifest.free_oracle = free_oracle_record(scenario, &result, o.envelope_time);
    }

    let ts = out.join("timeseries.csv");
    write_timeseries(&ts, &result)?;
    manifest.outputs.push(display_path(&ts));
    for (k, snap) in result.snapshots.iter().enumerate() {
        let p = out.join(format!("snapshot_{k:03}.csv"));
        write_snapshot(&p, snap, &result)?;
        manifest.outputs.push(display_path(&p));
        manifest.snapshots.push(SnapshotRecord { t: snap.t, path: display_path(&p) });
    }
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepSpec {
    pub param: String,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
    pub measure_time: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<ParamPath, ConfigError> {
        let mut problems = Vec::new();
        let path = ParamPath::parse(&self.param).map_err(|e| problems.push(e)).ok();
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            problems.push(format!("sweep needs min < max, got [{}, {}]", self.min, self.max));
        }
        if self.steps < 2 {
            problems.push(format!("sweep needs at least 2 steps, got {}", self.steps));
        }
        if !(self.measure_time > 0.0 && self.measure_time.is_finite()) {
            problems.push(format!("measurement time {} is invalid", self.measure_time));
        }
        match path {
            Some(p) if problems.is_empty() => Ok(p),
            _ => Err(ConfigError::Invalid(problems)),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let h = (self.max - self.min) / (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| if i + 1 == self.steps { self.max } else { self.min + i as f64 * h })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    #[serde(rename = "R")]
    pub reflection: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTable {
    pub spec: SweepSpec,
    pub label: String,
    pub rows: Vec<SweepRow>,
    /// Index of the smallest finite `R`.
    pub argmin: Option<usize>,
}

impl SweepTable {
    pub fn argmin_row(&self) -> Option<&SweepRow> {
        self.argmin.map(|i| &self.rows[i])
    }
}

fn sweep_point(base: &ScenarioConfig, path: &ParamPath, value: f64, t: f64) -> Result<f64, String> {
    let mut config = base.clone();
    path.apply(&mut config, value)?;
    config.simulation.t_end = t;
    config.simulation.snapshot_times.clear();
    config.simulation.series_interval = t;
    config.measurement.time = t;
    config.free_oracle = None;
    let scenario = Scenario::from_config(config).map_err(|e| e.to_string())?;
    let (initial, _) = scenario.initial_field().map_err(|e| e.to_string())?;
    let result = run(&scenario.graph, &scenario.sim, initial).map_err(|e| e.to_string())?;
    result
        .measurement
        .map(|m| m.reflection)
        .ok_or_else(|| "measurement time not reached".to_string())
}

/// One independent run per grid value, in parallel. Failed runs keep their
/// row with `R = NaN` and the reason.
pub fn run_sweep(spec: &SweepSpec, base: &Scenario) -> Result<SweepTable, ConfigError> {
    let path = spec.validate()?;
    let rows: Vec<SweepRow> = spec
        .values()
        .into_par_iter()
        .map(|value| match sweep_point(&base.config, &path, value, spec.measure_time) {
            Ok(r) => SweepRow { value, reflection: r, error: None },
            Err(e) => {
                log::warn!("sweep point {value} failed: {e}");
                SweepRow { value, reflection: f64::NAN, error: Some(e) }
            }
        })
        .collect();
    let argmin = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.reflection.is_finite())
        .min_by(|a, b| a.1.reflection.total_cmp(&b.1.reflection))
        .map(|(i, _)| i);
    Ok(SweepTable { spec: spec.clone(), label: path.label(), rows, argmin })
}

#[derive(Serialize)]
struct SweepManifest<'a> {
    scenario: &'a str,
    version: &'a str,
    started: String,
    finished: String,
    status: Status,
    table: &'a SweepTable,
    outputs: Vec<String>,
}

/// Writes `sweep.csv` (`<label>,R`) and `sweep_manifest.json`.
pub fn write_sweep(
    table: &SweepTable,
    base: &Scenario,
    started: String,
    out: &Path,
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let csv = out.join("sweep.csv");
    let mut w = BufWriter::new(fs::File::create(&csv)?);
    writeln!(w, "{},R", table.label)?;
    let mut buf = ryu::Buffer::new();
    for row in &table.rows {
        write!(w, "{}", fmt_f64(&mut buf, row.value))?;
        writeln!(w, ",{}", fmt_f64(&mut buf, row.reflection))?;
    }
    w.flush()?;
    let manifest = out.join("sweep_manifest.json");
    write_json(
        &manifest,
        &SweepManifest {
            scenario: &base.config.name,
            version: env!("CARGO_PKG_VERSION"),
            started,
            finished: now(),
            status: Status::Ok,
            table,
            outputs: vec![display_path(&csv), display_path(&manifest)],
        },
    )?;
    Ok(vec![csv, manifest])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2() -> Scenario {
        parse_config(bundled("star3_fig2").unwrap()).unwrap()
    }

    fn invalid(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(ConfigError::Invalid(p)) => p,
            other => panic!("expected violations, got {:?}", other.map(|s| s.config.name)),
        }
    }

    #[test]
    fn bundled_scenarios_parse() {
        for (name, text) in BUNDLED {
            let s = parse_config(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(s.config.name, name);
        }
    }

    #[test]
    fn fig2_scenario_contents() {
        let s = fig2();
        let alphas: Vec<f64> = s.graph.bonds.iter().map(|b| b.alpha).collect();
        assert!((alphas[0] - 1.0 / (1.0f64 / 20.0 + 1.0 / 50.0).sqrt()).abs() < 1e-15);
        assert!((alphas[1] - 20f64.sqrt()).abs() < 1e-15);
        assert!((alphas[2] - 50f64.sqrt()).abs() < 1e-15);
        assert_eq!((s.sim.dx, s.sim.dt), (0.016, 5e-5));
        assert_eq!(s.sim.measure_time, 1.1);
        assert_eq!(s.sim.series_every, 200);
        assert_eq!(s.graph.sum_rule_residual(VertexId(0), BondId(1)).map(|r| r < 1e-15), Ok(true));
    }

    #[test]
    fn tree_scenario_satisfies_every_sum_rule() {
        let s = parse_config(bundled("tree_r0").unwrap()).unwrap();
        assert_eq!(s.graph.bonds.len(), 8);
        assert_eq!(s.graph.vertices.len(), 3);
        let records = transparency_records(&s);
        assert_eq!(records.len(), 3);
        for r in records {
            assert!(r.sum_rule_residual < 1e-12, "{r:?}");
            assert!(r.plane_wave_reflection.abs() < 1e-12);
        }
    }

    #[test]
    fn negative_alpha_is_a_violation() {
        let text = bundled("star3_fig2").unwrap().replacen("3.7796447300922718", "-1", 1);
        let problems = invalid(&text);
        assert!(problems.iter().any(|p| p.contains("nonpositive alpha")), "{problems:?}");
    }

    #[test]
    fn unknown_and_missing_keys_are_rejected() {
        let text = bundled("star3_fig2").unwrap().replacen("\"dx\"", "\"dx\": 0.1, \"mesh\"", 1);
        assert!(matches!(parse_config(&text), Err(ConfigError::Json(_))));
        let text = bundled("star3_fig2").unwrap().replacen("\"t_end\": 2.2,", "", 1);
        assert!(matches!(parse_config(&text), Err(ConfigError::Json(_))));
        assert!(matches!(parse_config("{"), Err(ConfigError::Json(_))));
    }

    #[test]
    fn several_violations_are_collected() {
        let mut config = fig2().config;
        config.simulation.dt = 0.0;
        config.packet.bond = BondId(9);
        config.measurement.incoming_bond = Some(BondId(7));
        config.boundaries.ends.push(EndOverride {
            bond: BondId(2),
            end: BondEnd::A,
            condition: BoundaryCondition::Dirichlet,
        });
        let Err(ConfigError::Invalid(problems)) = Scenario::from_config(config) else { panic!() };
        assert!(problems.iter().any(|p| p.contains("dt must be positive")));
        assert!(problems.iter().any(|p| p.contains("packet bond 9")));
        assert!(problems.iter().any(|p| p.contains("measurement bond 7")));
        assert!(problems.iter().any(|p| p.contains("sits at vertex 0")));
    }

    #[test]
    fn measure_time_override_extends_the_run() {
        let s = fig2().with_measure_time(3.0).unwrap();
        assert_eq!(s.sim.measure_time, 3.0);
        assert_eq!(s.sim.t_end, 3.0);
        let s = fig2().with_measure_time(0.5).unwrap();
        assert_eq!(s.sim.t_end, 2.2);
    }

    #[test]
    fn parameter_paths() {
        assert_eq!(ParamPath::parse("bond.1.alpha"), Ok(ParamPath::BondAlpha(BondId(1))));
        assert_eq!(ParamPath::parse("bond.3.length"), Ok(ParamPath::BondLength(BondId(3))));
        assert_eq!(ParamPath::parse("packet.k0"), Ok(ParamPath::PacketK0));
        assert!(ParamPath::parse("bond.x.alpha").is_err());
        assert!(ParamPath::parse("simulation.dt").is_err());
        assert_eq!(ParamPath::BondAlpha(BondId(1)).label(), "alpha1");

        let mut config = fig2().config;
        ParamPath::BondAlpha(BondId(2)).apply(&mut config, 2.5).unwrap();
        assert_eq!(config.graph.bonds[1].alpha, 2.5);
        assert!(ParamPath::BondAlpha(BondId(5)).apply(&mut config, 1.0).is_err());
    }

    #[test]
    fn sweep_grid() {
        let spec = SweepSpec { param: "bond.1.alpha".into(), min: 1.0, max: 8.0, steps: 29, measure_time: 1.1 };
        let values = spec.values();
        assert_eq!(values.len(), 29);
        assert_eq!((values[0], values[28]), (1.0, 8.0));
        assert!((values[11] - 3.75).abs() < 1e-15);
        let two = SweepSpec { steps: 2, ..spec.clone() };
        assert_eq!(two.values(), vec![1.0, 8.0]);
        let bad = SweepSpec { steps: 1, min: 2.0, max: 1.0, ..spec };
        let Err(ConfigError::Invalid(p)) = bad.validate() else { panic!() };
        assert_eq!(p.len(), 2);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(Status::Ok.exit_code(), 0);
        assert_eq!(Status::ConfigError.exit_code(), 2);
        assert_eq!(Status::GuardViolation.exit_code(), 3);
        assert_eq!(Status::SolverFailure.exit_code(), 4);
    }
}
