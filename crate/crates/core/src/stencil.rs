//! Discrete outward derivatives at bond ends, shared by the vertex rows, the
//! boundary rows and the flux diagnostics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::graph::BondEnd;

/// How the outward derivative at a bond end enters vertex and boundary rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingScheme {
    /// Half-cell balance at the end node, time-centred like the interior
    /// rows: `(psi_0 - psi_1)/dx - i dx d_t psi_0` at `t + dt/2`. Second
    /// order, and it makes the Crank-Nicolson step exactly norm preserving
    /// on closed graphs.
    #[default]
    HalfCell,
    /// Three-point one-sided difference `(3 psi_0 - 4 psi_1 + psi_2)/(2 dx)`
    /// applied to the new time level only.
    OneSided,
}

/// Node indices `[end, first inward, second inward]` for a bond end.
pub fn end_nodes(n: usize, end: BondEnd) -> [usize; 3] {
    match end {
        BondEnd::A => [0, 1, 2],
        BondEnd::B => [n - 1, n - 2, n - 3],
    }
}

/// Second-order one-sided outward derivative.
pub fn outward_one_sided(segment: &[Complex64], dx: f64, end: BondEnd) -> Complex64 {
    let [e, i1, i2] = end_nodes(segment.len(), end);
    (3.0 * segment[e] - 4.0 * segment[i1] + segment[i2]) / (2.0 * dx)
}

/// Half-cell outward flux between two time levels, `dt` apart.
pub fn outward_half_cell(
    current: &[Complex64],
    previous: &[Complex64],
    dx: f64,
    dt: f64,
    end: BondEnd,
) -> Complex64 {
    let [e, i1, _] = end_nodes(current.len(), end);
    let i = Complex64::i();
    0.5 * (current[e] - current[i1] + previous[e] - previous[i1]) / dx
        - i * dx * (current[e] - previous[e]) / dt
}

/// Centred first derivative in the `+x` direction, one-sided at the ends.
pub fn gradient(segment: &[Complex64], dx: f64, node: usize) -> Complex64 {
    let n = segment.len();
    if node == 0 {
        -outward_one_sided(segment, dx, BondEnd::A)
    } else if node == n - 1 {
        outward_one_sided(segment, dx, BondEnd::B)
    } else {
        (segment[node + 1] - segment[node - 1]) / (2.0 * dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sided_is_exact_on_quadratics() {
        let dx = 0.1;
        let f = |x: f64| Complex64::new(2.0 * x * x - x + 3.0, x * x);
        let df = |x: f64| Complex64::new(4.0 * x - 1.0, 2.0 * x);
        let seg: Vec<Complex64> = (0..6).map(|i| f(i as f64 * dx)).collect();
        // outward at A is -d/dx
        assert!((outward_one_sided(&seg, dx, BondEnd::A) + df(0.0)).norm() < 1e-12);
        assert!((outward_one_sided(&seg, dx, BondEnd::B) - df(0.5)).norm() < 1e-12);
        assert!((gradient(&seg, dx, 2) - df(0.2)).norm() < 1e-12);
    }
}
