//! Crank-Nicolson time stepping of the coupled multi-bond field.

mod assembly;
mod solver;

pub use assembly::{
    assemble, AssembleError, BoundaryCondition, BoundaryTags, RowClass, SparseRow, SystemMatrix,
    TransparentEnd,
};
pub use solver::SolverError;

use num_complex::Complex64;
use thiserror::Error;

use crate::boundary::{Side, TbcHistory};
use crate::graph::{BondId, MetricGraph};
use crate::grid::{build_grids, BondGrid, GridError, WaveField};
use crate::observables::{bond_norms, reflection_r, NormSeries};
use crate::stencil::CouplingScheme;

/// Largest `|psi|` at a transparent end, relative to `max |psi|`, accepted in
/// the initial data.
pub const SUPPORT_TOLERANCE: f64 = crate::grid::PACKET_EDGE_TOLERANCE;

/// Relative growth of the total norm over its initial value that counts as
/// an instability.
pub const NORM_GROWTH_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dx: f64,
    pub dt: f64,
    pub t_end: f64,
    pub boundaries: BoundaryTags,
    pub scheme: CouplingScheme,
    /// Record the norm series every this many steps (the last step is always
    /// recorded).
    pub series_every: usize,
    pub snapshot_times: Vec<f64>,
    /// Bond whose partial norm defines `R`; the first bond when unset.
    pub incoming_bond: Option<BondId>,
    pub measure_time: f64,
}

impl SimConfig {
    pub fn new(dx: f64, dt: f64, t_end: f64) -> Self {
        SimConfig {
            dx,
            dt,
            t_end,
            boundaries: BoundaryTags::uniform(BoundaryCondition::Transparent { v_ext: 0.0 }),
            scheme: CouplingScheme::default(),
            series_every: 1,
            snapshot_times: Vec::new(),
            incoming_bond: None,
            measure_time: 1.1,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            out.push(format!("dx must be positive, got {}", self.dx));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            out.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0 && self.t_end >= self.dt) {
            out.push(format!("t_end must be at least dt, got {}", self.t_end));
        }
        if self.series_every == 0 {
            out.push("series interval must be at least one step".to_string());
        }
        for t in &self.snapshot_times {
            if !(t.is_finite() && *t >= 0.0) {
                out.push(format!("snapshot time {t} is invalid"));
            }
        }
        if !self.measure_time.is_finite() || self.measure_time < 0.0 {
            out.push(format!("measurement time {} is invalid", self.measure_time));
        }
        out
    }

    pub fn step_count(&self) -> usize {
        self.steps_to(self.t_end).max(1)
    }

    pub fn steps_to(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StepError {
    #[error("non-finite values after step {step}")]
    NonFinite { step: usize },
    #[error("{got} boundary histories for {expected} transparent ends")]
    HistoryMismatch { expected: usize, got: usize },
    #[error("field does not match the system dimension")]
    FieldMismatch,
}

#[derive(Debug, Error, PartialEq)]
pub enum GuardViolation {
    #[error("initial data is not supported inside the domain: |psi| = {value:e} at bond {bond} end {end} (limit {limit:e})")]
    Support { bond: BondId, end: crate::graph::BondEnd, value: f64, limit: f64 },
    #[error("total norm grew by a factor {ratio} by step {step}")]
    NormGrowth { step: usize, ratio: f64 },
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid simulation settings: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Assemble(#[from] AssembleError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Guard(#[from] GuardViolation),
    #[error("initial field does not match the grids")]
    FieldMismatch,
}

fn flatten(field: &WaveField, system: &SystemMatrix) -> Vec<Complex64> {
    let mut x = Vec::with_capacity(system.dim());
    for seg in &field.segments {
        x.extend_from_slice(seg);
    }
    x
}

/// Histories for every transparent end, seeded with the current boundary values.
pub fn new_histories(system: &SystemMatrix, field: &WaveField, capacity: usize) -> Vec<TbcHistory> {
    let x = flatten(field, system);
    system
        .transparent_ends
        .iter()
        .map(|e| TbcHistory::new(e.node, e.spec.v_ext, field.t, x[e.node], capacity))
        .collect()
}

/// Advances the field by one time step and appends the new boundary values
/// to `histories`.
pub fn step(
    system: &SystemMatrix,
    field: &WaveField,
    histories: &mut [TbcHistory],
) -> Result<WaveField, StepError> {
    if histories.len() != system.transparent_ends.len() {
        return Err(StepError::HistoryMismatch {
            expected: system.transparent_ends.len(),
            got: histories.len(),
        });
    }
    if field.segments.len() != system.sizes.len()
        || field.segments.iter().zip(&system.sizes).any(|(s, &n)| s.len() != n)
    {
        return Err(StepError::FieldMismatch);
    }
    let dt = system.dt;
    let old = flatten(field, system);
    let known: Vec<Complex64> = histories.iter_mut().map(|h| h.known_sum()).collect();

    let mut rhs = vec![Complex64::new(0.0, 0.0); system.dim()];
    for (r, row) in system.rows.iter().enumerate() {
        let mut v = Complex64::new(0.0, 0.0);
        for &(col, a) in &row.prev {
            v += a * old[col];
        }
        if let Some(h) = row.tbc {
            v += system.transparent_ends[h].row.history_rhs(&histories[h], dt, known[h]);
        }
        rhs[r] = v;
    }

    let x = system.factor.solve(&rhs);
    let step_index = histories.first().map_or((field.t / dt).round() as usize, |h| h.len()) ;
    if x.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(StepError::NonFinite { step: step_index });
    }
    for ((h, end), s) in histories.iter_mut().zip(&system.transparent_ends).zip(known) {
        h.record(x[end.node], dt, s);
    }

    let segments = system
        .offsets
        .iter()
        .zip(&system.sizes)
        .map(|(&off, &n)| x[off..off + n].to_vec())
        .collect();
    Ok(WaveField { segments, t: field.t + dt })
}

/// Owns the state of one run and advances it step by step.
pub struct Simulation {
    pub grids: Vec<BondGrid>,
    t0: f64,
    pub system: SystemMatrix,
    histories: Vec<TbcHistory>,
    field: WaveField,
    steps: usize,
}

impl Simulation {
    /// Assembles the system and checks that the initial data vanishes at
    /// every open transparent end.
    pub fn new(graph: &MetricGraph, config: &SimConfig, initial: WaveField) -> Result<Self, RunError> {
        let problems = config.validate();
        if !problems.is_empty() {
            return Err(RunError::Config(problems));
        }
        let grids = build_grids(graph, config.dx)?;
        if !initial.matches(&grids) {
            return Err(RunError::FieldMismatch);
        }
        let system = assemble(graph, &grids, config)?;

        let peak = initial.max_abs();
        let limit = SUPPORT_TOLERANCE * peak;
        let x = flatten(&initial, &system);
        // a reduced vertex stands in for bonds that the packet may already
        // touch, so only true open ends are checked
        for end in system.transparent_ends.iter().filter(|e| e.spec.side != Side::VertexReduced) {
            let value = x[end.node].norm();
            if value > limit {
                return Err(GuardViolation::Support { bond: end.bond, end: end.end, value, limit }.into());
            }
        }

        let histories = new_histories(&system, &initial, config.step_count());
        Ok(Simulation { grids, t0: initial.t, system, histories, field: initial, steps: 0 })
    }

    pub fn field(&self) -> &WaveField {
        &self.field
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn histories(&self) -> &[TbcHistory] {
        &self.histories
    }

    pub fn step(&mut self) -> Result<&WaveField, StepError> {
        let next = step(&self.system, &self.field, &mut self.histories).map_err(|e| match e {
            StepError::NonFinite { .. } => StepError::NonFinite { step: self.steps + 1 },
            other => other,
        })?;
        self.field = next;
        self.steps += 1;
        // avoid drift from summing dt
        self.field.t = self.t0 + self.steps as f64 * self.system.dt;
        Ok(&self.field)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub t: f64,
    pub reflection: f64,
    pub bond_norms: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub bonds: Vec<BondId>,
    pub grids: Vec<BondGrid>,
    pub series: NormSeries,
    pub snapshots: Vec<WaveField>,
    pub final_field: WaveField,
    pub steps: usize,
    /// `R` at the configured measurement time, when the run reaches it.
    pub measurement: Option<Measurement>,
}

/// Runs from `initial` to `config.t_end`, sampling norms and snapshots.
pub fn run(graph: &MetricGraph, config: &SimConfig, initial: WaveField) -> Result<RunResult, RunError> {
    let mut sim = Simulation::new(graph, config, initial)?;
    let incoming = match config.incoming_bond {
        Some(id) => graph
            .bond_index(id)
            .ok_or_else(|| RunError::Config(vec![format!("incoming bond {id} is not part of the graph")]))?,
        None => 0,
    };
    let total_steps = config.step_count();
    let measure_step = config.steps_to(config.measure_time);
    let mut snapshot_steps: Vec<usize> = config
        .snapshot_times
        .iter()
        .map(|&t| config.steps_to(t))
        .filter(|&s| s <= total_steps)
        .collect();
    snapshot_steps.sort_unstable();
    snapshot_steps.dedup();

    let mut series = NormSeries::default();
    let mut snapshots = Vec::new();
    let mut measurement = None;
    let mut initial_total = 0.0;

    for k in 0..=total_steps {
        if k > 0 {
            sim.step()?;
        }
        let field = sim.field();
        let sample = k % config.series_every == 0 || k == total_steps;
        let measure = k == measure_step;
        if sample || measure {
            let norms = bond_norms(field, &sim.grids).expect("field matches grids");
            let total: f64 = norms.iter().sum();
            if k == 0 {
                initial_total = total;
            } else if total > initial_total * (1.0 + NORM_GROWTH_TOLERANCE) + f64::MIN_POSITIVE {
                return Err(GuardViolation::NormGrowth { step: k, ratio: total / initial_total }.into());
            }
            if measure {
                measurement = Some(Measurement {
                    t: field.t,
                    reflection: reflection_r(&norms, incoming).unwrap_or(f64::NAN),
                    bond_norms: norms.clone(),
                });
            }
            if sample {
                series.push(field.t, norms, incoming);
            }
        }
        if snapshot_steps.binary_search(&k).is_ok() {
            snapshots.push(field.clone());
        }
    }

    Ok(RunResult {
        bonds: graph.bonds.iter().map(|b| b.id).collect(),
        grids: sim.grids.clone(),
        series,
        snapshots,
        final_field: sim.field().clone(),
        steps: sim.steps_taken(),
        measurement,
    })
}
