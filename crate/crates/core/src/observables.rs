//! Norms, reflection coefficient, probability currents and vertex residuals.

use num_complex::Complex64;
use thiserror::Error;

use crate::graph::{BondId, MetricGraph, VertexId};
use crate::grid::{BondGrid, WaveField};
use crate::stencil::{self, CouplingScheme};

#[derive(Debug, Error, PartialEq)]
pub enum ObservableError {
    #[error("segment has {got} samples but the grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
    #[error("total norm is zero")]
    ZeroNorm,
    #[error("bond {0} is not part of the field")]
    UnknownBond(BondId),
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
}

/// Trapezoid-rule integral of `|psi|^2` over one bond.
pub fn bond_norm(segment: &[Complex64], grid: &BondGrid) -> Result<f64, ObservableError> {
    if segment.len() != grid.n {
        return Err(ObservableError::LengthMismatch { expected: grid.n, got: segment.len() });
    }
    let n = segment.len();
    let inner: f64 = segment[1..n - 1].iter().map(|z| z.norm_sqr()).sum();
    Ok(grid.dx * (inner + 0.5 * (segment[0].norm_sqr() + segment[n - 1].norm_sqr())))
}

pub fn bond_norms(field: &WaveField, grids: &[BondGrid]) -> Result<Vec<f64>, ObservableError> {
    field.segments.iter().zip(grids).map(|(s, g)| bond_norm(s, g)).collect()
}

/// `N_incoming / sum_j N_j`.
pub fn reflection_r(norms: &[f64], incoming: usize) -> Result<f64, ObservableError> {
    let total: f64 = norms.iter().sum();
    if total <= 0.0 {
        return Err(ObservableError::ZeroNorm);
    }
    let n_in = *norms.get(incoming).ok_or(ObservableError::UnknownBond(BondId(incoming as u32)))?;
    Ok((n_in / total).clamp(0.0, 1.0))
}

/// `Im(conj(psi) d_x psi)` at a node, with second-order differences.
pub fn probability_current(segment: &[Complex64], grid: &BondGrid, node: usize) -> f64 {
    let d = stencil::gradient(segment, grid.dx, node);
    (segment[node].conj() * d).im
}

/// Sampled norm history of a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormSeries {
    pub times: Vec<f64>,
    /// `bond_norms[k][j]` is the norm of bond `j` at `times[k]`.
    pub bond_norms: Vec<Vec<f64>>,
    pub total: Vec<f64>,
    /// `NaN` where the total norm vanishes.
    pub reflection: Vec<f64>,
}

impl NormSeries {
    pub fn push(&mut self, t: f64, norms: Vec<f64>, incoming: usize) {
        let total = norms.iter().sum();
        let r = reflection_r(&norms, incoming).unwrap_or(f64::NAN);
        self.times.push(t);
        self.bond_norms.push(norms);
        self.total.push(total);
        self.reflection.push(r);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Norm of bond `j` over time.
    pub fn bond(&self, j: usize) -> Vec<f64> {
        self.bond_norms.iter().map(|row| row[j]).collect()
    }
}

/// Which discrete flux to evaluate in [`vertex_flux_residual`]; must match the
/// scheme used to assemble the system for the residual to vanish.
#[derive(Clone, Copy, Debug)]
pub enum FluxStencil<'a> {
    OneSided,
    HalfCell { previous: &'a WaveField, dt: f64 },
}

impl<'a> FluxStencil<'a> {
    pub fn for_scheme(scheme: CouplingScheme, previous: &'a WaveField, dt: f64) -> Self {
        match scheme {
            CouplingScheme::OneSided => FluxStencil::OneSided,
            CouplingScheme::HalfCell => FluxStencil::HalfCell { previous, dt },
        }
    }
}

/// `|sum_b (1/alpha_b) d_out psi_b|` over the bonds incident to `vertex`,
/// together with the largest single term (useful as a scale).
pub fn vertex_flux_terms(
    field: &WaveField,
    grids: &[BondGrid],
    graph: &MetricGraph,
    vertex: VertexId,
    stencil: FluxStencil<'_>,
) -> Result<(f64, f64), ObservableError> {
    let v = graph.vertex(vertex).ok_or(ObservableError::UnknownVertex(vertex))?;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut scale = 0.0f64;
    for &(bond_id, end) in &v.incidence {
        let j = graph.bond_index(bond_id).ok_or(ObservableError::UnknownBond(bond_id))?;
        let seg = &field.segments[j];
        let dx = grids[j].dx;
        let d = match stencil {
            FluxStencil::OneSided => stencil::outward_one_sided(seg, dx, end),
            FluxStencil::HalfCell { previous, dt } => {
                stencil::outward_half_cell(seg, &previous.segments[j], dx, dt, end)
            }
        };
        scale = scale.max(d.norm());
        sum += d / graph.bonds[j].alpha;
    }
    Ok((sum.norm(), scale))
}

pub fn vertex_flux_residual(
    field: &WaveField,
    grids: &[BondGrid],
    graph: &MetricGraph,
    vertex: VertexId,
    stencil: FluxStencil<'_>,
) -> Result<f64, ObservableError> {
    vertex_flux_terms(field, grids, graph, vertex, stencil).map(|(r, _)| r)
}

/// Largest `|alpha_a psi_a - alpha_b psi_b|` over all vertices of degree ≥ 2.
pub fn continuity_residual(field: &WaveField, grids: &[BondGrid], graph: &MetricGraph) -> f64 {
    let mut worst = 0.0f64;
    for v in &graph.vertices {
        let values: Vec<Complex64> = v
            .incidence
            .iter()
            .filter_map(|&(b, end)| {
                let j = graph.bond_index(b)?;
                let [e, _, _] = stencil::end_nodes(grids[j].n, end);
                Some(field.segments[j][e] * graph.bonds[j].alpha)
            })
            .collect();
        for w in values.windows(2) {
            worst = worst.max((w[0] - w[1]).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::*;
    use crate::grid::{build_grids, gaussian_packet, PacketParams};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn norm_examples() {
        let grid = BondGrid { bond: BondId(1), x0: 0.0, dx: 0.25, n: 9 };
        assert_eq!(bond_norm(&[c(0.0, 0.0); 9], &grid).unwrap(), 0.0);
        let ones: Vec<Complex64> = (0..9).map(|i| Complex64::from_polar(1.0, i as f64)).collect();
        assert!((bond_norm(&ones, &grid).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(
            bond_norm(&ones[..5], &grid),
            Err(ObservableError::LengthMismatch { expected: 9, got: 5 })
        );
    }

    #[test]
    fn paper_packet_norm() {
        let g = star(&[1.0, 1.0, 1.0], 15.0);
        let grids = build_grids(&g, 0.016).unwrap();
        let p = PacketParams { bond: BondId(1), x0: -5.0, k0: 5.0, sigma: 1.0, normalize: false };
        let (values, _) = gaussian_packet(&grids[0], &p).unwrap();
        assert!((bond_norm(&values, &grids[0]).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn reflection_examples() {
        assert_eq!(reflection_r(&[1.0, 0.0, 0.0], 0).unwrap(), 1.0);
        assert_eq!(reflection_r(&[0.0, 0.3, 0.7], 0).unwrap(), 0.0);
        assert_eq!(reflection_r(&[0.0, 0.0], 0), Err(ObservableError::ZeroNorm));
    }

    #[test]
    fn current_examples() {
        let grid = BondGrid { bond: BondId(1), x0: -2.0, dx: 0.01, n: 401 };
        let real: Vec<Complex64> = grid.coordinates().map(|x| c((x * 3.0).sin(), 0.0)).collect();
        for node in [0, 17, 400] {
            assert_eq!(probability_current(&real, &grid, node), 0.0);
        }
        let wave: Vec<Complex64> = grid.coordinates().map(|x| Complex64::from_polar(1.0, 5.0 * x)).collect();
        for node in [0, 200, 400] {
            let j = probability_current(&wave, &grid, node);
            assert!((j - 5.0).abs() < 125.0 * 1e-4, "node {node}: {j}");
        }
        let p = PacketParams { bond: BondId(1), x0: 0.0, k0: 5.0, sigma: 1.0, normalize: false };
        let (packet, _) = gaussian_packet(&grid, &p).unwrap();
        let j = probability_current(&packet, &grid, 200);
        let expected = 5.0 * packet[200].norm_sqr();
        assert!((j - expected).abs() < 0.1 * expected);
    }

    #[test]
    fn flux_residual_examples() {
        let g = star(&[1.0, 1.0, 1.0], 1.0);
        let grids = build_grids(&g, 0.1).unwrap();
        let zero = WaveField::zeros(&grids);
        assert_eq!(vertex_flux_residual(&zero, &grids, &g, VertexId(0), FluxStencil::OneSided).unwrap(), 0.0);
        let mut f = zero.clone();
        for (j, seg) in f.segments.iter_mut().enumerate() {
            for (i, z) in seg.iter_mut().enumerate() {
                *z = c(((i * 7 + j * 3) % 5) as f64, (i % 3) as f64);
            }
        }
        assert!(vertex_flux_residual(&f, &grids, &g, VertexId(0), FluxStencil::OneSided).unwrap() > 0.0);
        let half = FluxStencil::HalfCell { previous: &zero, dt: 1e-3 };
        assert!(vertex_flux_residual(&f, &grids, &g, VertexId(0), half).unwrap() > 0.0);
        assert!(vertex_flux_residual(&f, &grids, &g, VertexId(4), half).is_err());
    }
}
