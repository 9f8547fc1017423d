//! Direct solver for the step system.
//!
//! Interior rows of a bond only touch that bond's neighbouring nodes, so
//! the system is block tridiagonal apart from the two end nodes of every
//! bond. The interior blocks are factorized once (Thomas algorithm) and the
//! end unknowns are found from the small dense Schur complement
//! `S = A_EE - A_EI A_II^-1 A_IE`, which is LU-factorized once as well.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;
use thiserror::Error;

use super::assembly::{RowClass, SparseRow};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("{0} couples nodes outside its bond's tridiagonal band")]
    NotTridiagonal(RowClass),
    #[error("expected {expected} vertex/boundary rows, found {got}")]
    CouplingCount { expected: usize, got: usize },
    #[error("singular system at {0}")]
    Singular(RowClass),
}

const PIVOT_TOLERANCE: f64 = 1e-13;

#[derive(Debug)]
struct BondBlock {
    off: usize,
    n: usize,
    sub: Vec<Complex64>,
    sup_mod: Vec<Complex64>,
    inv_pivot: Vec<Complex64>,
    w_a: Vec<Complex64>,
    w_b: Vec<Complex64>,
}

impl BondBlock {
    fn m(&self) -> usize {
        self.n - 2
    }

    /// Overwrites `d` with `A_II^-1 d`.
    fn solve_in_place(&self, d: &mut [Complex64]) {
        let m = self.m();
        d[0] *= self.inv_pivot[0];
        for j in 1..m {
            d[j] = (d[j] - self.sub[j] * d[j - 1]) * self.inv_pivot[j];
        }
        for j in (0..m - 1).rev() {
            d[j] -= self.sup_mod[j] * d[j + 1];
        }
    }
}

#[derive(Debug)]
pub(crate) struct Factorization {
    blocks: Vec<BondBlock>,
    /// Row index of each Schur-complement row.
    coupling_rows: Vec<usize>,
    /// Interior entries of each coupling row.
    coupling_interior: Vec<Vec<(usize, Complex64)>>,
    row_scale: Vec<f64>,
    schur: LU<Complex64, Dyn, Dyn>,
}

fn locate(offsets: &[usize], col: usize) -> (usize, usize) {
    let b = offsets.partition_point(|&o| o <= col) - 1;
    (b, col - offsets[b])
}

impl Factorization {
    pub(crate) fn new(rows: &[SparseRow], offsets: &[usize], sizes: &[usize]) -> Result<Self, SolverError> {
        let nb = sizes.len();
        let mut diag: Vec<Vec<Complex64>> = sizes.iter().map(|&n| vec![Complex64::default(); n - 2]).collect();
        let mut sub = diag.clone();
        let mut sup = diag.clone();
        let mut couple_a = vec![Complex64::default(); nb];
        let mut couple_b = vec![Complex64::default(); nb];
        let mut interior_class: Vec<Vec<Option<RowClass>>> = sizes.iter().map(|&n| vec![None; n - 2]).collect();
        let mut coupling_rows = Vec::new();

        for (r, row) in rows.iter().enumerate() {
            let RowClass::Interior { bond, node } = row.class else {
                coupling_rows.push(r);
                continue;
            };
            let (off, n) = (offsets[bond], sizes[bond]);
            let j = node - 1;
            interior_class[bond][j] = Some(row.class);
            for &(col, v) in &row.lhs {
                if col + 1 == off + node {
                    if node == 1 {
                        couple_a[bond] += v;
                    } else {
                        sub[bond][j] += v;
                    }
                } else if col == off + node {
                    diag[bond][j] += v;
                } else if col == off + node + 1 {
                    if node == n - 2 {
                        couple_b[bond] += v;
                    } else {
                        sup[bond][j] += v;
                    }
                } else {
                    return Err(SolverError::NotTridiagonal(row.class));
                }
            }
        }

        let mut blocks = Vec::with_capacity(nb);
        for b in 0..nb {
            let n = sizes[b];
            let m = n - 2;
            let mut inv_pivot = vec![Complex64::default(); m];
            let mut sup_mod = vec![Complex64::default(); m];
            for j in 0..m {
                let class = interior_class[b][j].ok_or(SolverError::CouplingCount {
                    expected: 2 * nb,
                    got: coupling_rows.len(),
                })?;
                let pivot = if j == 0 { diag[b][0] } else { diag[b][j] - sub[b][j] * sup_mod[j - 1] };
                let scale = diag[b][j].norm() + sub[b][j].norm() + sup[b][j].norm();
                if pivot.norm() <= PIVOT_TOLERANCE * scale {
                    return Err(SolverError::Singular(class));
                }
                inv_pivot[j] = pivot.inv();
                sup_mod[j] = sup[b][j] * inv_pivot[j];
            }
            let mut block = BondBlock {
                off: offsets[b],
                n,
                sub: std::mem::take(&mut sub[b]),
                sup_mod,
                inv_pivot,
                w_a: vec![Complex64::default(); m],
                w_b: vec![Complex64::default(); m],
            };
            let mut w = vec![Complex64::default(); m];
            w[0] = couple_a[b];
            block.solve_in_place(&mut w);
            block.w_a = w;
            let mut w = vec![Complex64::default(); m];
            w[m - 1] += couple_b[b];
            block.solve_in_place(&mut w);
            block.w_b = w;
            blocks.push(block);
        }

        if coupling_rows.len() != 2 * nb {
            return Err(SolverError::CouplingCount { expected: 2 * nb, got: coupling_rows.len() });
        }

        let ne = 2 * nb;
        let mut s = DMatrix::<Complex64>::zeros(ne, ne);
        let mut coupling_interior = Vec::with_capacity(ne);
        for (rho, &r) in coupling_rows.iter().enumerate() {
            let mut interior = Vec::new();
            for &(col, v) in &rows[r].lhs {
                let (b, node) = locate(offsets, col);
                let n = sizes[b];
                if node == 0 {
                    s[(rho, 2 * b)] += v;
                } else if node == n - 1 {
                    s[(rho, 2 * b + 1)] += v;
                } else {
                    let j = node - 1;
                    s[(rho, 2 * b)] -= v * blocks[b].w_a[j];
                    s[(rho, 2 * b + 1)] -= v * blocks[b].w_b[j];
                    interior.push((col, v));
                }
            }
            coupling_interior.push(interior);
        }

        // equilibrate rows before factorizing; vertex rows mix O(1) and O(1/dx) scales
        let mut row_scale = vec![1.0; ne];
        for rho in 0..ne {
            let max = s.row(rho).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if max == 0.0 {
                return Err(SolverError::Singular(rows[coupling_rows[rho]].class));
            }
            row_scale[rho] = 1.0 / max;
            for col in 0..ne {
                s[(rho, col)] *= row_scale[rho];
            }
        }

        let schur = s.lu();
        let u = schur.u();
        if let Some(k) = (0..ne).find(|&k| u[(k, k)].norm() <= PIVOT_TOLERANCE) {
            let mut order = DVector::<f64>::from_iterator(ne, (0..ne).map(|i| i as f64));
            schur.p().permute_rows(&mut order);
            let rho = order[k] as usize;
            return Err(SolverError::Singular(rows[coupling_rows[rho]].class));
        }

        Ok(Factorization { blocks, coupling_rows, coupling_interior, row_scale, schur })
    }

    /// Solves `A x = rhs`.
    pub(crate) fn solve(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let mut x = rhs.to_vec();
        for block in &self.blocks {
            block.solve_in_place(&mut x[block.off + 1..block.off + block.n - 1]);
        }
        let ne = self.coupling_rows.len();
        let mut g = DVector::<Complex64>::zeros(ne);
        for rho in 0..ne {
            let mut v = rhs[self.coupling_rows[rho]];
            for &(col, a) in &self.coupling_interior[rho] {
                v -= a * x[col];
            }
            g[rho] = v * self.row_scale[rho];
        }
        self.schur.solve_mut(&mut g);
        for (b, block) in self.blocks.iter().enumerate() {
            let (xa, xb) = (g[2 * b], g[2 * b + 1]);
            x[block.off] = xa;
            x[block.off + block.n - 1] = xb;
            let interior = &mut x[block.off + 1..block.off + block.n - 1];
            for ((xi, wa), wb) in interior.iter_mut().zip(&block.w_a).zip(&block.w_b) {
                *xi -= wa * xa + wb * xb;
            }
        }
        x
    }
}
