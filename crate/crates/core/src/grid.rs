//! Uniform per-bond grids, wave fields and Gaussian wave packets.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BondEnd, BondId, MetricGraph, Terminal};
use crate::observables::bond_norm;

/// Uniform mesh on one bond. Node `i` sits at user coordinate `x0 + i * dx`.
#[derive(Clone, Debug, PartialEq)]
pub struct BondGrid {
    pub bond: BondId,
    pub x0: f64,
    pub dx: f64,
    pub n: usize,
}

impl BondGrid {
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn length(&self) -> f64 {
        (self.n - 1) as f64 * self.dx
    }

    pub fn coordinates(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.x(i))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid spacing must be positive and finite, got {0}")]
    InvalidSpacing(f64),
    #[error("bond {bond} of length {length} holds fewer than 3 nodes at dx = {dx}")]
    TooCoarse { bond: BondId, length: f64, dx: f64 },
    #[error("packet bond {0} is not part of the graph")]
    UnknownBond(BondId),
    #[error("packet width must be positive, got {0}")]
    InvalidWidth(f64),
}

/// One grid per bond, in bond order. The node count is `round(L/dx) + 1` and
/// the spacing is re-derived as `L/(n-1)` so both ends land exactly on the
/// bond ends.
pub fn build_grids(graph: &MetricGraph, dx: f64) -> Result<Vec<BondGrid>, GridError> {
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(GridError::InvalidSpacing(dx));
    }
    graph
        .bonds
        .iter()
        .map(|bond| {
            let cells = (bond.length / dx).round();
            if cells < 2.0 {
                return Err(GridError::TooCoarse { bond: bond.id, length: bond.length, dx });
            }
            let n = cells as usize + 1;
            Ok(BondGrid { bond: bond.id, x0: bond.origin, dx: bond.length / cells, n })
        })
        .collect()
}

/// Complex samples of the wave function on every bond grid.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveField {
    pub segments: Vec<Vec<Complex64>>,
    pub t: f64,
}

impl WaveField {
    pub fn zeros(grids: &[BondGrid]) -> Self {
        WaveField {
            segments: grids.iter().map(|g| vec![Complex64::new(0.0, 0.0); g.n]).collect(),
            t: 0.0,
        }
    }

    pub fn matches(&self, grids: &[BondGrid]) -> bool {
        self.segments.len() == grids.len()
            && self.segments.iter().zip(grids).all(|(s, g)| s.len() == g.n)
    }

    pub fn is_finite(&self) -> bool {
        self.segments.iter().flatten().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.segments.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Gaussian packet `(2 pi sigma^2)^(-1/4) exp(i k0 x - (x - x0)^2 / (4 sigma^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketParams {
    pub bond: BondId,
    pub x0: f64,
    pub k0: f64,
    pub sigma: f64,
    /// Rescale the samples so their discrete norm is exactly 1.
    #[serde(default)]
    pub normalize: bool,
}

/// Largest `|psi|` at a grid end, relative to the packet peak, before the
/// packet is flagged as not supported inside the grid.
pub const PACKET_EDGE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SupportWarning {
    pub bond: BondId,
    pub left: f64,
    pub right: f64,
    pub limit: f64,
}

impl std::fmt::Display for SupportWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "packet on bond {} is not negligible at the open grid ends (|psi| = {:e}, {:e}; limit {:e})",
            self.bond, self.left, self.right, self.limit
        )
    }
}

pub fn gaussian(x: f64, params: &PacketParams) -> Complex64 {
    let s2 = params.sigma * params.sigma;
    let amp = (2.0 * PI * s2).powf(-0.25);
    let d = x - params.x0;
    Complex64::from_polar(amp * (-d * d / (4.0 * s2)).exp(), params.k0 * x)
}

/// Samples the packet on one grid. The warning is set when either end value
/// exceeds [`PACKET_EDGE_TOLERANCE`] times the largest sample.
pub fn gaussian_packet(
    grid: &BondGrid,
    params: &PacketParams,
) -> Result<(Vec<Complex64>, Option<SupportWarning>), GridError> {
    if !(params.sigma > 0.0 && params.sigma.is_finite()) {
        return Err(GridError::InvalidWidth(params.sigma));
    }
    let mut values: Vec<Complex64> = grid.coordinates().map(|x| gaussian(x, params)).collect();
    if params.normalize {
        let norm = bond_norm(&values, grid).unwrap_or(0.0);
        if norm > 0.0 {
            let scale = norm.sqrt().recip();
            values.iter_mut().for_each(|z| *z *= scale);
        }
    }
    let left = values[0].norm();
    let right = values[grid.n - 1].norm();
    let limit = PACKET_EDGE_TOLERANCE * values.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let warning = (left > limit || right > limit).then_some({
        SupportWarning { bond: grid.bond, left, right, limit }
    });
    Ok((values, warning))
}

/// Field with the packet on its bond and zeros elsewhere, except at the
/// vertex nodes of neighbouring bonds, which take the weighted-continuity
/// value.
pub fn packet_field(
    graph: &MetricGraph,
    grids: &[BondGrid],
    params: &PacketParams,
) -> Result<(WaveField, Option<SupportWarning>), GridError> {
    let idx = graph.bond_index(params.bond).ok_or(GridError::UnknownBond(params.bond))?;
    let mut field = WaveField::zeros(grids);
    let (values, warning) = gaussian_packet(&grids[idx], params)?;
    let bond = &graph.bonds[idx];
    // ends inside the graph are not truncation points
    let at_vertex = |end: BondEnd| match bond.terminal(end) {
        Terminal::Vertex(v) => graph.vertex(v).is_some_and(|v| v.degree() > 1),
        Terminal::Open => false,
    };
    let warning = warning.and_then(|mut w| {
        if at_vertex(BondEnd::A) {
            w.left = 0.0;
        }
        if at_vertex(BondEnd::B) {
            w.right = 0.0;
        }
        (w.left > w.limit || w.right > w.limit).then_some(w)
    });
    let n = values.len();
    // copy the packet's vertex values onto the other incident bonds so the
    // initial data already satisfies weighted continuity
    for end in [BondEnd::A, BondEnd::B] {
        let Terminal::Vertex(vid) = bond.terminal(end) else { continue };
        let Some(vertex) = graph.vertex(vid) else { continue };
        if vertex.degree() < 2 {
            continue;
        }
        let own = values[if end == BondEnd::A { 0 } else { n - 1 }] * bond.alpha;
        for &(other, other_end) in &vertex.incidence {
            if (other, other_end) == (bond.id, end) {
                continue;
            }
            let j = graph.bond_index(other).ok_or(GridError::UnknownBond(other))?;
            let node = if other_end == BondEnd::A { 0 } else { grids[j].n - 1 };
            field.segments[j][node] = own / graph.bonds[j].alpha;
        }
    }
    field.segments[idx] = values;
    Ok((field, warning))
}

/// `|psi(x, t)|^2` of the freely evolving packet on the whole line: a normal
/// density with mean `x0 + k0 t` and variance `sigma^2 + t^2 / (4 sigma^2)`.
pub fn analytic_free_gaussian_envelope(x: f64, t: f64, params: &PacketParams) -> f64 {
    let s2 = params.sigma * params.sigma;
    let var = s2 + t * t / (4.0 * s2);
    let d = x - params.x0 - params.k0 * t;
    (-d * d / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::graph::Terminal;

    fn paper_packet() -> PacketParams {
        PacketParams { bond: BondId(1), x0: -5.0, k0: 5.0, sigma: 1.0, normalize: false }
    }

    fn line(length: f64, origin: f64) -> MetricGraph {
        MetricGraph::from_bonds(vec![bond(1, 1.0, length, origin, Terminal::Open, Terminal::Open)])
    }

    fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let inner: f64 = (1..n).map(|i| f(a + i as f64 * h)).sum();
        h * (inner + 0.5 * (f(a) + f(b)))
    }

    #[test]
    fn grid_node_counts() {
        let grids = build_grids(&line(15.0, 0.0), 0.016).unwrap();
        // 15 / 0.016 = 937.5 rounds to 938 cells
        assert_eq!(grids[0].n, 939);
        assert!((grids[0].length() - 15.0).abs() < 1e-12 * 15.0);

        let grids = build_grids(&line(1.0, 0.0), 0.5).unwrap();
        let xs: Vec<f64> = grids[0].coordinates().collect();
        assert_eq!(xs, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_errors() {
        let g = line(1.0, 0.0);
        assert_eq!(build_grids(&g, 0.0), Err(GridError::InvalidSpacing(0.0)));
        assert_eq!(build_grids(&g, -0.1), Err(GridError::InvalidSpacing(-0.1)));
        assert!(matches!(build_grids(&g, 2.0), Err(GridError::TooCoarse { .. })));
    }

    #[test]
    fn packet_peak_modulus() {
        let grid = BondGrid { bond: BondId(1), x0: -15.0, dx: 0.5, n: 61 };
        let (values, _) = gaussian_packet(&grid, &paper_packet()).unwrap();
        // node 20 sits at x = -5
        assert_eq!(grid.x(20), -5.0);
        assert!((values[20].norm() - (2.0 * PI).powf(-0.25)).abs() < 1e-15);
    }

    #[test]
    fn packet_norm_on_incoming_bond() {
        let grids = build_grids(&line(15.0, -15.0), 0.016).unwrap();
        let (values, warning) = gaussian_packet(&grids[0], &paper_packet()).unwrap();
        let oracle = trapezoid(|x| analytic_free_gaussian_envelope(x, 0.0, &paper_packet()), -40.0, 30.0, 700_000);
        assert!((oracle - 1.0).abs() < 1e-12);
        let norm = bond_norm(&values, &grids[0]).unwrap();
        assert!((norm - 1.0).abs() < 1e-6, "{norm}");
        // the right end is the vertex at x = 0
        assert!(warning.unwrap().right > 1e-3);
    }

    #[test]
    fn packet_norm_error_decreases_with_dx() {
        let errs: Vec<f64> = [0.064, 0.032, 0.016]
            .iter()
            .map(|&dx| {
                let grids = build_grids(&line(15.0, -15.0), dx).unwrap();
                let (values, _) = gaussian_packet(&grids[0], &paper_packet()).unwrap();
                (bond_norm(&values, &grids[0]).unwrap() - 1.0).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    }

    #[test]
    fn normalize_flag_gives_unit_discrete_norm() {
        let grids = build_grids(&line(8.0, -8.0), 0.1).unwrap();
        let p = PacketParams { normalize: true, ..paper_packet() };
        let (values, _) = gaussian_packet(&grids[0], &p).unwrap();
        assert!((bond_norm(&values, &grids[0]).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn resting_packet_is_symmetric() {
        let grid = BondGrid { bond: BondId(1), x0: -12.0, dx: 0.1, n: 241 };
        let p = PacketParams { bond: BondId(1), x0: 0.0, k0: 0.0, sigma: 1.0, normalize: false };
        let (values, warning) = gaussian_packet(&grid, &p).unwrap();
        for i in 0..grid.n {
            assert!((values[i] - values[grid.n - 1 - i]).norm() < 1e-15);
        }
        assert!(warning.is_none());
    }

    #[test]
    fn packet_rejects_bad_width() {
        let grid = BondGrid { bond: BondId(1), x0: 0.0, dx: 0.1, n: 11 };
        let p = PacketParams { sigma: 0.0, ..paper_packet() };
        assert_eq!(gaussian_packet(&grid, &p), Err(GridError::InvalidWidth(0.0)));
    }

    #[test]
    fn envelope_at_zero_time_is_packet_modulus() {
        let p = paper_packet();
        for x in [-7.0, -5.0, -4.2, 0.0] {
            assert!((analytic_free_gaussian_envelope(x, 0.0, &p) - gaussian(x, &p).norm_sqr()).abs() < 1e-15);
        }
    }

    #[test]
    fn envelope_moments() {
        let p = paper_packet();
        for &t in &[0.0, 0.5, 1.1, 2.0, 4.0] {
            let mass = trapezoid(|x| analytic_free_gaussian_envelope(x, t, &p), -60.0, 60.0, 120_000);
            assert!((mass - 1.0).abs() < 1e-10, "t={t}: {mass}");
        }
        let mean = trapezoid(|x| x * analytic_free_gaussian_envelope(x, 1.1, &p), -60.0, 60.0, 120_000);
        assert!((mean - 0.5).abs() < 1e-10);
        let q = PacketParams { x0: 0.0, k0: 0.0, ..p };
        let var = trapezoid(|x| x * x * analytic_free_gaussian_envelope(x, 2.0, &q), -60.0, 60.0, 120_000);
        assert!((var - 2.0).abs() < 1e-10);
    }
}
