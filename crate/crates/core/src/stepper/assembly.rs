use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::solver::{Factorization, SolverError};
use super::SimConfig;
use crate::boundary::{tbc_row, vertex_tbc_row, BoundaryRow, Side, TbcEnd};
use crate::graph::{BondEnd, BondId, MetricGraph, Terminal, VertexId};
use crate::grid::BondGrid;
use crate::stencil::{end_nodes, CouplingScheme};

/// Condition imposed at an open bond end (or a degree-one vertex).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryCondition {
    /// `psi = 0`.
    Dirichlet,
    /// Exact exterior half-line with constant potential `v_ext`.
    Transparent {
        #[serde(default)]
        v_ext: f64,
    },
    /// Star vertex eliminated in favour of a scaled transparent condition.
    VertexTbc { alpha_in: f64, alphas_out: Vec<f64> },
}

impl BoundaryCondition {
    pub fn is_transparent(&self) -> bool {
        !matches!(self, BoundaryCondition::Dirichlet)
    }
}

/// Default condition for every open end plus per-end overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryTags {
    pub default: BoundaryCondition,
    pub overrides: BTreeMap<(BondId, BondEnd), BoundaryCondition>,
}

impl BoundaryTags {
    pub fn uniform(default: BoundaryCondition) -> Self {
        BoundaryTags { default, overrides: BTreeMap::new() }
    }

    pub fn with(mut self, bond: BondId, end: BondEnd, condition: BoundaryCondition) -> Self {
        self.overrides.insert((bond, end), condition);
        self
    }

    pub fn get(&self, bond: BondId, end: BondEnd) -> &BoundaryCondition {
        self.overrides.get(&(bond, end)).unwrap_or(&self.default)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowClass {
    Interior { bond: usize, node: usize },
    Continuity { vertex: VertexId },
    Kirchhoff { vertex: VertexId },
    Dirichlet { bond: BondId, end: BondEnd },
    Transparent { bond: BondId, end: BondEnd },
}

impl fmt::Display for RowClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowClass::Interior { bond, node } => write!(f, "interior row (bond index {bond}, node {node})"),
            RowClass::Continuity { vertex } => write!(f, "continuity row at vertex {vertex}"),
            RowClass::Kirchhoff { vertex } => write!(f, "Kirchhoff row at vertex {vertex}"),
            RowClass::Dirichlet { bond, end } => write!(f, "Dirichlet row at bond {bond} end {end}"),
            RowClass::Transparent { bond, end } => write!(f, "transparent row at bond {bond} end {end}"),
        }
    }
}

/// One equation of `A psi^{n+1} = B psi^n + h^n`.
#[derive(Clone, Debug)]
pub struct SparseRow {
    pub class: RowClass,
    /// Entries of `A`.
    pub lhs: Vec<(usize, Complex64)>,
    /// Entries of `B`.
    pub prev: Vec<(usize, Complex64)>,
    /// Index into [`SystemMatrix::transparent_ends`] when the row draws on a
    /// boundary history.
    pub tbc: Option<usize>,
}

/// A transparent end wired into the system.
#[derive(Clone, Debug)]
pub struct TransparentEnd {
    pub bond: BondId,
    pub end: BondEnd,
    /// Global index of the boundary node.
    pub node: usize,
    pub row: BoundaryRow,
    pub spec: TbcEnd,
}

/// The constant linear system of one Crank-Nicolson step and its factorization.
///
/// Unknowns are the grid values of every bond, concatenated in bond order;
/// nodes at a vertex stay distinct per bond and are tied by continuity rows.
#[derive(Debug)]
pub struct SystemMatrix {
    pub rows: Vec<SparseRow>,
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
    pub dt: f64,
    pub scheme: CouplingScheme,
    pub transparent_ends: Vec<TransparentEnd>,
    pub(crate) factor: Factorization,
}

impl SystemMatrix {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn count(&self, pred: impl Fn(&RowClass) -> bool) -> usize {
        self.rows.iter().filter(|r| pred(&r.class)).count()
    }

    /// Dense copy of `A`, for inspection in tests.
    pub fn dense_lhs(&self) -> Vec<Vec<Complex64>> {
        let n = self.dim();
        let mut m = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in &row.lhs {
                m[r][c] += v;
            }
        }
        m
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AssembleError {
    #[error("{0} grids for {1} bonds")]
    GridCount(usize, usize),
    #[error("bond {0} needs at least 3 nodes")]
    TooFewNodes(BondId),
    #[error("invalid weights for the reduced vertex condition at bond {bond} end {end}")]
    InvalidReducedWeights { bond: BondId, end: BondEnd },
    #[error("no equation for unknown {0}; the graph does not validate")]
    Unassigned(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Assembles and factorizes the step system.
///
/// Interior nodes carry `(i/dt)(psi^{n+1} - psi^n) = -(1/4) D2 (psi^{n+1} + psi^n)`.
/// A vertex of degree `d >= 2` contributes `d - 1` weighted continuity rows
/// and one weighted Kirchhoff row; open ends and degree-one vertices take
/// their condition from `config.boundaries`.
pub fn assemble(
    graph: &MetricGraph,
    grids: &[BondGrid],
    config: &SimConfig,
) -> Result<SystemMatrix, AssembleError> {
    if grids.len() != graph.bonds.len() {
        return Err(AssembleError::GridCount(grids.len(), graph.bonds.len()));
    }
    let dt = config.dt;
    let scheme = config.scheme;
    let i = Complex64::i();

    let mut offsets = Vec::with_capacity(grids.len());
    let mut total = 0usize;
    for (bond, g) in graph.bonds.iter().zip(grids) {
        if g.n < 3 {
            return Err(AssembleError::TooFewNodes(bond.id));
        }
        offsets.push(total);
        total += g.n;
    }
    let sizes: Vec<usize> = grids.iter().map(|g| g.n).collect();

    let mut rows: Vec<Option<SparseRow>> = vec![None; total];

    for (b, g) in grids.iter().enumerate() {
        let off = offsets[b];
        let inv = 1.0 / (g.dx * g.dx);
        let diag_new = i / dt - c(0.5 * inv);
        let side_new = c(0.25 * inv);
        let diag_old = i / dt + c(0.5 * inv);
        let side_old = c(-0.25 * inv);
        for node in 1..g.n - 1 {
            let k = off + node;
            rows[k] = Some(SparseRow {
                class: RowClass::Interior { bond: b, node },
                lhs: vec![(k - 1, side_new), (k, diag_new), (k + 1, side_new)],
                prev: vec![(k - 1, side_old), (k, diag_old), (k + 1, side_old)],
                tbc: None,
            });
        }
    }

    let global = |b: usize, end: BondEnd| -> [usize; 3] {
        end_nodes(sizes[b], end).map(|k| offsets[b] + k)
    };

    // Ends handled as boundaries: open terminals and degree-one vertices.
    let mut boundary_ends: Vec<(usize, BondEnd)> = Vec::new();
    for (b, bond) in graph.bonds.iter().enumerate() {
        for end in [BondEnd::A, BondEnd::B] {
            match bond.terminal(end) {
                Terminal::Open => boundary_ends.push((b, end)),
                Terminal::Vertex(v) => {
                    if graph.vertex(v).is_none_or(|vx| vx.degree() == 1) {
                        boundary_ends.push((b, end));
                    }
                }
            }
        }
    }

    for vertex in graph.vertices.iter().filter(|v| v.degree() >= 2) {
        let members: Vec<(usize, BondEnd)> = vertex
            .incidence
            .iter()
            .filter_map(|&(id, end)| graph.bond_index(id).map(|b| (b, end)))
            .collect();
        let (b0, e0) = members[0];
        let first = global(b0, e0);

        let mut lhs = Vec::new();
        let mut prev = Vec::new();
        for &(b, end) in &members {
            let w = 1.0 / graph.bonds[b].alpha;
            let dx = grids[b].dx;
            let [e, i1, i2] = global(b, end);
            match scheme {
                CouplingScheme::OneSided => {
                    lhs.push((e, c(w * 3.0 / (2.0 * dx))));
                    lhs.push((i1, c(-w * 4.0 / (2.0 * dx))));
                    lhs.push((i2, c(w / (2.0 * dx))));
                }
                CouplingScheme::HalfCell => {
                    lhs.push((e, w * (c(0.5 / dx) - i * (dx / dt))));
                    lhs.push((i1, c(-w * 0.5 / dx)));
                    prev.push((e, w * (c(-0.5 / dx) - i * (dx / dt))));
                    prev.push((i1, c(w * 0.5 / dx)));
                }
            }
        }
        rows[first[0]] = Some(SparseRow {
            class: RowClass::Kirchhoff { vertex: vertex.id },
            lhs,
            prev,
            tbc: None,
        });

        let a0 = graph.bonds[b0].alpha;
        for &(b, end) in &members[1..] {
            let [e, _, _] = global(b, end);
            rows[e] = Some(SparseRow {
                class: RowClass::Continuity { vertex: vertex.id },
                lhs: vec![(first[0], c(a0)), (e, c(-graph.bonds[b].alpha))],
                prev: Vec::new(),
                tbc: None,
            });
        }
    }

    let mut transparent_ends = Vec::new();
    for (b, end) in boundary_ends {
        let bond = &graph.bonds[b];
        let nodes = global(b, end);
        let condition = config.boundaries.get(bond.id, end);
        let (spec, row) = match condition {
            BoundaryCondition::Dirichlet => {
                rows[nodes[0]] = Some(SparseRow {
                    class: RowClass::Dirichlet { bond: bond.id, end },
                    lhs: vec![(nodes[0], c(1.0))],
                    prev: Vec::new(),
                    tbc: None,
                });
                continue;
            }
            BoundaryCondition::Transparent { v_ext } => {
                let spec = TbcEnd::line(Side::for_end(end), *v_ext);
                let row = tbc_row(&spec, dt, grids[b].dx, scheme);
                (spec, row)
            }
            BoundaryCondition::VertexTbc { alpha_in, alphas_out } => {
                let valid = *alpha_in > 0.0
                    && !alphas_out.is_empty()
                    && alphas_out.iter().chain([alpha_in]).all(|a| *a > 0.0 && a.is_finite());
                if !valid {
                    return Err(AssembleError::InvalidReducedWeights { bond: bond.id, end });
                }
                let row = vertex_tbc_row(*alpha_in, alphas_out, dt, grids[b].dx, scheme);
                let spec = TbcEnd {
                    side: Side::VertexReduced,
                    v_ext: 0.0,
                    scale: crate::graph::transparency_factor(*alpha_in, alphas_out),
                };
                (spec, row)
            }
        };
        let lhs = nodes.iter().zip(row.new_level).filter(|(_, v)| *v != c(0.0)).map(|(&k, v)| (k, v)).collect();
        let prev = nodes.iter().zip(row.old_level).filter(|(_, v)| *v != c(0.0)).map(|(&k, v)| (k, v)).collect();
        rows[nodes[0]] = Some(SparseRow {
            class: RowClass::Transparent { bond: bond.id, end },
            lhs,
            prev,
            tbc: Some(transparent_ends.len()),
        });
        transparent_ends.push(TransparentEnd { bond: bond.id, end, node: nodes[0], row, spec });
    }

    let rows: Vec<SparseRow> = rows
        .into_iter()
        .enumerate()
        .map(|(k, r)| r.ok_or(AssembleError::Unassigned(k)))
        .collect::<Result<_, _>>()?;

    let factor = Factorization::new(&rows, &offsets, &sizes)?;
    Ok(SystemMatrix {
        rows,
        offsets,
        sizes,
        dt,
        scheme,
        transparent_ends,
        factor,
    })
}
