//! Transparent boundary conditions.
//!
//! At an open end the exterior half-line is eliminated through its
//! Dirichlet-to-Neumann map. Written with the outward derivative, every end
//! (left, right, or a bond that adjoins an eliminated star vertex) satisfies
//!
//! ```text
//! d_out psi(t) = -A * sqrt(2/pi) e^{-i pi/4} e^{-i V t} d/dt int_0^t f(tau) / sqrt(t - tau) dtau,
//! f(tau) = psi(tau) e^{i V tau}
//! ```
//!
//! with `A = 1` for a plain line end and `A = alpha_in^2 sum_out alpha_out^-2`
//! for the reduced vertex condition. The convolution is discretised by
//! integrating `f'` (piecewise constant between time levels) exactly against
//! the singular kernel, which gives the weights `b_m = sqrt(m+1) - sqrt(m)`.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;
use thiserror::Error;

use crate::graph::{transparency_factor, BondEnd};
use crate::stencil::CouplingScheme;

/// Convolution weight `b_m = sqrt(m+1) - sqrt(m)`, evaluated without
/// cancellation.
pub fn tbc_kernel(m: usize) -> f64 {
    let m = m as f64;
    1.0 / ((m + 1.0).sqrt() + m.sqrt())
}

/// `sqrt(2/pi) e^{-i pi/4}`.
pub fn dtn_prefactor() -> Complex64 {
    Complex64::from_polar((2.0 / PI).sqrt(), -FRAC_PI_4)
}

#[derive(Debug, Error, PartialEq)]
pub enum BoundaryError {
    #[error("boundary history is empty")]
    EmptyHistory,
}

/// Which kind of end a transparent row closes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Side {
    /// Domain lies to the right (`x` increasing inward).
    Left,
    /// Domain lies to the left.
    Right,
    /// The end of an incoming bond whose star vertex has been eliminated.
    VertexReduced,
}

impl Side {
    pub fn for_end(end: BondEnd) -> Self {
        match end {
            BondEnd::A => Side::Left,
            BondEnd::B => Side::Right,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TbcEnd {
    pub side: Side,
    /// Constant exterior potential.
    pub v_ext: f64,
    /// Multiplier `A` on the Dirichlet-to-Neumann map; 1 for a plain end.
    pub scale: f64,
}

impl TbcEnd {
    pub fn line(side: Side, v_ext: f64) -> Self {
        TbcEnd { side, v_ext, scale: 1.0 }
    }
}

/// Matrix row closing a transparent end, in terms of the end node and the
/// two nodes next to it (`[end, first inward, second inward]`).
///
/// The right-hand side at step `n -> n+1` is
/// `weight * gain * e^{-i V t_{n+1}} (2/sqrt(dt)) (f_n - S_{n+1})`, minus
/// `weight * gain * e^{-i V t_n} D_n` when `centred` is set, where `S_{n+1}`
/// is the known part of the convolution and `D_n` the full convolution at
/// the previous level (see [`TbcHistory`]).
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryRow {
    pub new_level: [Complex64; 3],
    pub old_level: [Complex64; 3],
    pub gain: Complex64,
    pub weight: f64,
    pub centred: bool,
    pub v_ext: f64,
}

impl BoundaryRow {
    pub fn history_rhs(&self, history: &TbcHistory, dt: f64, known_sum: Complex64) -> Complex64 {
        let n = history.len() - 1;
        let t_next = history.time(n + 1, dt);
        let phase_next = Complex64::from_polar(1.0, -self.v_ext * t_next);
        let f_n = history.values[n];
        let mut rhs = self.weight * self.gain * phase_next * (2.0 / dt.sqrt()) * (f_n - known_sum);
        if self.centred {
            let phase_now = Complex64::from_polar(1.0, -self.v_ext * history.time(n, dt));
            rhs -= self.weight * self.gain * phase_now * history.last_dtn;
        }
        rhs
    }
}

/// Boundary row for a line end, using the same derivative scheme as the
/// vertex rows.
pub fn tbc_row(end: &TbcEnd, dt: f64, dx: f64, scheme: CouplingScheme) -> BoundaryRow {
    let gain = end.scale * dtn_prefactor();
    let implicit = gain * (2.0 / dt.sqrt());
    let zero = Complex64::new(0.0, 0.0);
    let i = Complex64::i();
    match scheme {
        CouplingScheme::OneSided => BoundaryRow {
            new_level: [
                Complex64::new(3.0 / (2.0 * dx), 0.0) + implicit,
                Complex64::new(-4.0 / (2.0 * dx), 0.0),
                Complex64::new(1.0 / (2.0 * dx), 0.0),
            ],
            old_level: [zero; 3],
            gain,
            weight: 1.0,
            centred: false,
            v_ext: end.v_ext,
        },
        CouplingScheme::HalfCell => BoundaryRow {
            new_level: [
                Complex64::new(0.5 / dx, 0.0) - i * (dx / dt) + 0.5 * implicit,
                Complex64::new(-0.5 / dx, 0.0),
                zero,
            ],
            old_level: [
                Complex64::new(-0.5 / dx, 0.0) - i * (dx / dt),
                Complex64::new(0.5 / dx, 0.0),
                zero,
            ],
            gain,
            weight: 0.5,
            centred: true,
            v_ext: end.v_ext,
        },
    }
}

/// Reduced condition at the vertex end of an incoming bond: the outgoing
/// bonds are replaced by the line map scaled with
/// `A = alpha_in^2 sum_out alpha_out^-2`.
pub fn vertex_tbc_row(
    alpha_in: f64,
    alphas_out: &[f64],
    dt: f64,
    dx: f64,
    scheme: CouplingScheme,
) -> BoundaryRow {
    let end = TbcEnd {
        side: Side::VertexReduced,
        v_ext: 0.0,
        scale: transparency_factor(alpha_in, alphas_out),
    };
    tbc_row(&end, dt, dx, scheme)
}

/// Past boundary values `f_k = psi(x_b, t_k) e^{i V t_k}` of one transparent
/// end, plus the cached convolution at the newest level.
#[derive(Clone, Debug)]
pub struct TbcHistory {
    /// Global index of the boundary node.
    pub node: usize,
    pub v_ext: f64,
    pub t0: f64,
    values: Vec<Complex64>,
    diff_re: Vec<f64>,
    diff_im: Vec<f64>,
    /// `kernel_rev[i] = b_{M - i}` with `M = kernel_rev.len() - 1`.
    kernel_rev: Vec<f64>,
    last_dtn: Complex64,
}

impl TbcHistory {
    /// Starts a history at `t0` from the boundary value `psi0`.
    pub fn new(node: usize, v_ext: f64, t0: f64, psi0: Complex64, capacity: usize) -> Self {
        let mut h = TbcHistory {
            node,
            v_ext,
            t0,
            values: Vec::with_capacity(capacity + 1),
            diff_re: Vec::with_capacity(capacity),
            diff_im: Vec::with_capacity(capacity),
            kernel_rev: Vec::new(),
            last_dtn: Complex64::new(0.0, 0.0),
        };
        h.values.push(psi0 * Complex64::from_polar(1.0, v_ext * t0));
        h.reserve_kernel(capacity.max(16));
        h
    }

    /// Builds a history from raw values `f_0..f_n` (already phase-adjusted).
    pub fn from_values(values: &[Complex64]) -> Self {
        let mut h = TbcHistory::new(0, 0.0, 0.0, values.first().copied().unwrap_or_default(), values.len());
        if values.is_empty() {
            h.values.clear();
            return h;
        }
        for w in values.windows(2) {
            let d = w[1] - w[0];
            h.diff_re.push(d.re);
            h.diff_im.push(d.im);
            h.values.push(w[1]);
        }
        h
    }

    fn reserve_kernel(&mut self, m: usize) {
        if self.kernel_rev.len() > m {
            return;
        }
        self.kernel_rev = (0..=m).rev().map(tbc_kernel).collect();
    }

    /// Number of stored values `f_0..f_n`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn time(&self, k: usize, dt: f64) -> f64 {
        self.t0 + k as f64 * dt
    }

    /// Convolution `sum_k (f_k - f_{k-1}) b_{n - k + shift}` over the stored
    /// differences.
    fn weighted_sum(&self, shift: usize) -> Complex64 {
        let n = self.diff_re.len();
        if n == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let m = self.kernel_rev.len() - 1;
        // b_{n-1-j+shift} for j = 0..n
        let start = m + 1 - n - shift;
        let kernel = &self.kernel_rev[start..start + n];
        let mut re = 0.0;
        let mut im = 0.0;
        for ((dr, di), b) in self.diff_re.iter().zip(&self.diff_im).zip(kernel) {
            re += dr * b;
            im += di * b;
        }
        Complex64::new(re, im)
    }

    /// Known part of the next convolution, `S_{n+1} = sum_{k=1}^{n} (f_k - f_{k-1}) b_{n+1-k}`.
    pub fn known_sum(&mut self) -> Complex64 {
        let need = self.diff_re.len() + 1;
        if need + 1 > self.kernel_rev.len() {
            self.reserve_kernel(2 * need);
        }
        self.weighted_sum(1)
    }

    /// Appends `psi(t_{n+1})` and updates the cached convolution using the
    /// `known_sum` that was used to build the step.
    pub fn record(&mut self, psi: Complex64, dt: f64, known_sum: Complex64) {
        let k = self.values.len();
        let f = psi * Complex64::from_polar(1.0, self.v_ext * self.time(k, dt));
        let d = f - self.values[k - 1];
        self.diff_re.push(d.re);
        self.diff_im.push(d.im);
        self.values.push(f);
        self.last_dtn = (2.0 / dt.sqrt()) * (known_sum + d);
    }

    /// Cached `D_n`, the discrete half-derivative at the newest level.
    pub fn last_dtn(&self) -> Complex64 {
        self.last_dtn
    }
}

/// Approximates `d/dt int_0^{t_n} f(tau) (t_n - tau)^{-1/2} dtau` by
/// `(2/sqrt(dt)) sum_{k=1}^{n} (f_k - f_{k-1}) b_{n-k}`.
pub fn dtn_convolution(history: &TbcHistory, dt: f64) -> Result<Complex64, BoundaryError> {
    if history.is_empty() {
        return Err(BoundaryError::EmptyHistory);
    }
    let mut h = history.clone();
    h.reserve_kernel(h.diff_re.len() + 1);
    Ok((2.0 / dt.sqrt()) * h.weighted_sum(0))
}
