//! Metric graphs: bonds with weights joined at vertices.
//!
//! Each bond carries a local coordinate running over `[0, length]`; the
//! user-facing coordinate of a point is `origin + local`. Bond end `A` sits at
//! local coordinate 0 and end `B` at `length`. Derivatives at a bond end are
//! always taken in the outward direction (pointing away from the bond
//! interior), so the weighted Kirchhoff condition reads
//! `sum_b (1/alpha_b) d_out psi_b = 0` for any topology.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BondId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VertexId(pub u32);

impl fmt::Display for BondId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Which end of a bond: `A` at local coordinate 0, `B` at `length`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondEnd {
    A,
    B,
}

impl fmt::Display for BondEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BondEnd::A => f.write_str("a"),
            BondEnd::B => f.write_str("b"),
        }
    }
}

/// What a bond end is attached to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    Vertex(VertexId),
    /// Truncation point of a semi-infinite bond (or a closed wall); the
    /// boundary condition is chosen by the simulation config.
    Open,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bond {
    pub id: BondId,
    pub alpha: f64,
    pub length: f64,
    /// User-facing coordinate of the `A` end.
    pub origin: f64,
    pub a: Terminal,
    pub b: Terminal,
}

impl Bond {
    pub fn terminal(&self, end: BondEnd) -> Terminal {
        match end {
            BondEnd::A => self.a,
            BondEnd::B => self.b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vertex {
    pub id: VertexId,
    pub incidence: Vec<(BondId, BondEnd)>,
}

impl Vertex {
    pub fn degree(&self) -> usize {
        self.incidence.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricGraph {
    pub bonds: Vec<Bond>,
    pub vertices: Vec<Vertex>,
}

/// A broken invariant found by [`MetricGraph::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Empty,
    NonpositiveAlpha(BondId),
    NonpositiveLength(BondId),
    NonfiniteOrigin(BondId),
    DuplicateBond(BondId),
    DuplicateVertex(VertexId),
    EmptyIncidence(VertexId),
    UnknownBond { vertex: VertexId, bond: BondId },
    UnknownVertex { bond: BondId, end: BondEnd, vertex: VertexId },
    /// The vertex lists a bond end whose terminal points elsewhere.
    IncidenceMismatch { vertex: VertexId, bond: BondId, end: BondEnd },
    /// The bond end points at a vertex that does not list it.
    UnlistedEnd { bond: BondId, end: BondEnd, vertex: VertexId },
    DuplicateIncidence { bond: BondId, end: BondEnd },
    Disconnected,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "graph has no bonds"),
            Violation::NonpositiveAlpha(b) => write!(f, "nonpositive alpha on bond {b}"),
            Violation::NonpositiveLength(b) => write!(f, "nonpositive length on bond {b}"),
            Violation::NonfiniteOrigin(b) => write!(f, "nonfinite origin on bond {b}"),
            Violation::DuplicateBond(b) => write!(f, "duplicate bond id {b}"),
            Violation::DuplicateVertex(v) => write!(f, "duplicate vertex id {v}"),
            Violation::EmptyIncidence(v) => write!(f, "empty incidence list at vertex {v}"),
            Violation::UnknownBond { vertex, bond } => {
                write!(f, "vertex {vertex} references unknown bond {bond}")
            }
            Violation::UnknownVertex { bond, end, vertex } => {
                write!(f, "bond {bond} end {end} references unknown vertex {vertex}")
            }
            Violation::IncidenceMismatch { vertex, bond, end } => {
                write!(f, "vertex {vertex} lists bond {bond} end {end}, which is not attached to it")
            }
            Violation::UnlistedEnd { bond, end, vertex } => {
                write!(f, "bond {bond} end {end} is attached to vertex {vertex} but not listed there")
            }
            Violation::DuplicateIncidence { bond, end } => {
                write!(f, "bond {bond} end {end} appears in more than one incidence entry")
            }
            Violation::Disconnected => write!(f, "disconnected"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
    #[error("unknown bond {0}")]
    UnknownBond(BondId),
    #[error("bond {bond} is not incident to vertex {vertex}")]
    NotIncident { vertex: VertexId, bond: BondId },
    #[error("vertex {0} has no outgoing bonds")]
    NoOutgoing(VertexId),
    #[error("outgoing weight list is empty")]
    EmptyOutgoing,
    #[error("weights must be positive and finite, got {0}")]
    NonpositiveAlpha(f64),
}

impl MetricGraph {
    /// Builds a graph whose vertex incidence lists are derived from the bond
    /// terminals. Vertices come out sorted by id; incidence follows bond order.
    pub fn from_bonds(bonds: Vec<Bond>) -> Self {
        let mut incidence: BTreeMap<VertexId, Vec<(BondId, BondEnd)>> = BTreeMap::new();
        for bond in &bonds {
            for end in [BondEnd::A, BondEnd::B] {
                if let Terminal::Vertex(v) = bond.terminal(end) {
                    incidence.entry(v).or_default().push((bond.id, end));
                }
            }
        }
        let vertices = incidence
            .into_iter()
            .map(|(id, incidence)| Vertex { id, incidence })
            .collect();
        MetricGraph { bonds, vertices }
    }

    pub fn bond(&self, id: BondId) -> Option<&Bond> {
        self.bonds.iter().find(|b| b.id == id)
    }

    pub fn bond_index(&self, id: BondId) -> Option<usize> {
        self.bonds.iter().position(|b| b.id == id)
    }

    pub fn vertex(&self, id: VertexId) -> Option<&Vertex> {
        self.vertices.iter().find(|v| v.id == id)
    }

    /// Returns every broken invariant; an empty list means the graph is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.bonds.is_empty() {
            out.push(Violation::Empty);
            return out;
        }

        let mut bond_ids = HashSet::new();
        for bond in &self.bonds {
            if !bond_ids.insert(bond.id) {
                out.push(Violation::DuplicateBond(bond.id));
            }
            if !(bond.alpha > 0.0 && bond.alpha.is_finite()) {
                out.push(Violation::NonpositiveAlpha(bond.id));
            }
            if !(bond.length > 0.0 && bond.length.is_finite()) {
                out.push(Violation::NonpositiveLength(bond.id));
            }
            if !bond.origin.is_finite() {
                out.push(Violation::NonfiniteOrigin(bond.id));
            }
        }

        let mut vertex_ids = HashSet::new();
        let mut seen_ends: HashSet<(BondId, BondEnd)> = HashSet::new();
        for vertex in &self.vertices {
            if !vertex_ids.insert(vertex.id) {
                out.push(Violation::DuplicateVertex(vertex.id));
            }
            if vertex.incidence.is_empty() {
                out.push(Violation::EmptyIncidence(vertex.id));
            }
            for &(bond_id, end) in &vertex.incidence {
                if !seen_ends.insert((bond_id, end)) {
                    out.push(Violation::DuplicateIncidence { bond: bond_id, end });
                }
                match self.bond(bond_id) {
                    None => out.push(Violation::UnknownBond { vertex: vertex.id, bond: bond_id }),
                    Some(bond) => {
                        if bond.terminal(end) != Terminal::Vertex(vertex.id) {
                            out.push(Violation::IncidenceMismatch {
                                vertex: vertex.id,
                                bond: bond_id,
                                end,
                            });
                        }
                    }
                }
            }
        }

        for bond in &self.bonds {
            for end in [BondEnd::A, BondEnd::B] {
                if let Terminal::Vertex(v) = bond.terminal(end) {
                    match self.vertex(v) {
                        None => out.push(Violation::UnknownVertex { bond: bond.id, end, vertex: v }),
                        Some(vertex) => {
                            if !vertex.incidence.contains(&(bond.id, end)) {
                                out.push(Violation::UnlistedEnd { bond: bond.id, end, vertex: v });
                            }
                        }
                    }
                }
            }
        }

        if !self.is_connected() {
            out.push(Violation::Disconnected);
        }
        out
    }

    /// Connectivity over bonds, where two bonds touch when a vertex lists both.
    fn is_connected(&self) -> bool {
        let index: HashMap<BondId, usize> =
            self.bonds.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let mut neighbours = vec![Vec::new(); self.bonds.len()];
        for vertex in &self.vertices {
            let members: Vec<usize> = vertex
                .incidence
                .iter()
                .filter_map(|(b, _)| index.get(b).copied())
                .collect();
            for w in members.windows(2) {
                neighbours[w[0]].push(w[1]);
                neighbours[w[1]].push(w[0]);
            }
        }
        let mut seen = vec![false; self.bonds.len()];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &neighbours[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Vertex adjacency matrix, rows and columns in `self.vertices` order.
    /// Open ends are not vertices and do not appear.
    pub fn adjacency_matrix(&self) -> Vec<Vec<u8>> {
        let n = self.vertices.len();
        let pos: HashMap<VertexId, usize> =
            self.vertices.iter().enumerate().map(|(i, v)| (v.id, i)).collect();
        let mut c = vec![vec![0u8; n]; n];
        for bond in &self.bonds {
            if let (Terminal::Vertex(va), Terminal::Vertex(vb)) = (bond.a, bond.b) {
                if let (Some(&i), Some(&j)) = (pos.get(&va), pos.get(&vb)) {
                    c[i][j] = 1;
                    c[j][i] = 1;
                }
            }
        }
        c
    }

    /// Incoming weight and the weights of every other incident bond end.
    fn split_weights(&self, vertex: VertexId, incoming: BondId) -> Result<(f64, Vec<f64>), GraphError> {
        let v = self.vertex(vertex).ok_or(GraphError::UnknownVertex(vertex))?;
        let in_bond = self.bond(incoming).ok_or(GraphError::UnknownBond(incoming))?;
        let skip = v
            .incidence
            .iter()
            .position(|(b, _)| *b == incoming)
            .ok_or(GraphError::NotIncident { vertex, bond: incoming })?;
        let mut outgoing = Vec::with_capacity(v.degree().saturating_sub(1));
        for (i, (b, _)) in v.incidence.iter().enumerate() {
            if i == skip {
                continue;
            }
            let bond = self.bond(*b).ok_or(GraphError::UnknownBond(*b))?;
            outgoing.push(bond.alpha);
        }
        Ok((in_bond.alpha, outgoing))
    }

    /// `|alpha_in^-2 - sum_out alpha_out^-2|`; zero exactly when the vertex is
    /// transparent for waves arriving on `incoming`.
    pub fn sum_rule_residual(&self, vertex: VertexId, incoming: BondId) -> Result<f64, GraphError> {
        let (a_in, out) = self.split_weights(vertex, incoming)?;
        let sum: f64 = out.iter().map(|a| a.powi(-2)).sum();
        Ok((a_in.powi(-2) - sum).abs())
    }

    /// `A = alpha_in^2 * sum_out alpha_out^-2`, the factor multiplying the
    /// Dirichlet-to-Neumann map once the outgoing bonds are eliminated.
    pub fn transparency_factor(&self, vertex: VertexId, incoming: BondId) -> Result<f64, GraphError> {
        let (a_in, out) = self.split_weights(vertex, incoming)?;
        if out.is_empty() {
            return Err(GraphError::NoOutgoing(vertex));
        }
        Ok(transparency_factor(a_in, &out))
    }

    /// Plane-wave back-scattering amplitude `r = (1 - A) / (1 + A)` for a wave
    /// arriving on `incoming`. Independent of the wavenumber.
    pub fn plane_wave_reflection(&self, vertex: VertexId, incoming: BondId) -> Result<f64, GraphError> {
        let a = self.transparency_factor(vertex, incoming)?;
        Ok(reflection_from_factor(a))
    }
}

pub fn transparency_factor(alpha_in: f64, alphas_out: &[f64]) -> f64 {
    alpha_in * alpha_in * alphas_out.iter().map(|a| a.powi(-2)).sum::<f64>()
}

pub fn reflection_from_factor(a: f64) -> f64 {
    (1.0 - a) / (1.0 + a)
}

/// The incoming weight that makes a vertex reflectionless given its outgoing
/// weights: `(sum alpha_j^-2)^(-1/2)`.
pub fn transparency_alpha(outgoing: &[f64]) -> Result<f64, GraphError> {
    if outgoing.is_empty() {
        return Err(GraphError::EmptyOutgoing);
    }
    if let Some(&bad) = outgoing.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
        return Err(GraphError::NonpositiveAlpha(bad));
    }
    Ok(outgoing.iter().map(|a| a.powi(-2)).sum::<f64>().powf(-0.5))
}
