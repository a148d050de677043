//! Random Schrödinger operator `H_β = 2 diag(β) - W`, its Green matrix, and
//! the pinned u-field.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hier_graph::WeightedGraph;

/// Tolerance on [`relative_identity_deviation`] certified when building a
/// [`SchrodingerState`].
pub const INVERSION_TOLERANCE: f64 = 1e-10;

/// `H(i,i) = 2 β_i`, `H(i,j) = -W_ij`.
pub fn assemble_h(g: &WeightedGraph, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
    if beta.len() != g.len() {
        return Err(Error::DimensionMismatch { expected: g.len(), got: beta.len() });
    }
    let mut h = -g.weights().clone();
    for (i, b) in beta.iter().enumerate() {
        h[(i, i)] = 2.0 * b;
    }
    Ok(h)
}

/// Inverse of a symmetric positive definite `H`, certified by Cholesky.
///
/// Entry positivity is a property of connected graphs and is checked by
/// [`u_field`] and [`SchrodingerState`], not here.
pub fn green_matrix(h: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !h.is_square() {
        return Err(Error::DimensionMismatch { expected: h.nrows(), got: h.ncols() });
    }
    let chol = h.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let g = chol.inverse();
    // Cholesky inversion is symmetric up to rounding; make it exact.
    Ok((&g + g.transpose()) * 0.5)
}

/// `max_ij |(G H - I)_ij|`.
pub fn identity_deviation(g: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    let mut prod = g * h;
    for i in 0..prod.nrows() {
        prod[(i, i)] -= 1.0;
    }
    prod.amax()
}

/// `max |G H - I|` divided by `max(1, max|G| · max|H|)`, the scale of the
/// products that enter each entry. Draws with tiny `γ` have huge `G` and
/// lose absolute accuracy in the product alone.
pub fn relative_identity_deviation(g: &DMatrix<f64>, h: &DMatrix<f64>) -> f64 {
    identity_deviation(g, h) / (g.amax() * h.amax()).max(1.0)
}

/// `u_i = ln G(i0, i) - ln G(i0, i0)`; exactly zero at the pinning vertex.
pub fn u_field(g: &DMatrix<f64>, i0: usize) -> Result<DVector<f64>> {
    if i0 >= g.nrows() {
        return Err(Error::OutOfRange { what: "pinning vertex", value: i0.to_string() });
    }
    let pin = g[(i0, i0)];
    let mut u = DVector::zeros(g.nrows());
    for i in 0..g.nrows() {
        let v = g[(i0, i)];
        if !(v > 0.0) {
            return Err(Error::NonPositiveGreen { i: i0, j: i, value: v });
        }
        if i != i0 {
            u[i] = v.ln() - pin.ln();
        }
    }
    Ok(u)
}

/// Rebuilds the potential from a pinned u-field and `γ = 1 / (2 G(i0,i0))`:
/// `2 β_i = Σ_j W_ij e^{u_j - u_i} + 1{i = i0} 2γ`.
pub fn beta_from_u(g: &WeightedGraph, u: &DVector<f64>, gamma: f64, i0: usize) -> Result<DVector<f64>> {
    if u.len() != g.len() {
        return Err(Error::DimensionMismatch { expected: g.len(), got: u.len() });
    }
    if i0 >= g.len() {
        return Err(Error::OutOfRange { what: "pinning vertex", value: i0.to_string() });
    }
    if u[i0] != 0.0 {
        return Err(Error::InvalidParameter(format!("u at pinning vertex is {}", u[i0])));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let w = g.weights();
    let beta = DVector::from_fn(g.len(), |i, _| {
        let flux: f64 = (0..g.len()).map(|j| w[(i, j)] * (u[j] - u[i]).exp()).sum();
        let pin = if i == i0 { 2.0 * gamma } else { 0.0 };
        0.5 * (flux + pin)
    });
    Ok(beta)
}

/// Path expansion of `G(i,j)` truncated at paths of length `max_len`.
///
/// Runs `s ← D⁻¹ e_j + D⁻¹ W s` for `max_len` steps starting from
/// `s = D⁻¹ e_j`, with `D = diag(2β)`.
pub fn walk_expansion_truncated(
    g: &WeightedGraph,
    beta: &DVector<f64>,
    i: usize,
    j: usize,
    max_len: usize,
) -> Result<f64> {
    let n = g.len();
    if beta.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: beta.len() });
    }
    if i >= n || j >= n {
        return Err(Error::OutOfRange { what: "vertex", value: format!("({i}, {j})") });
    }
    let radius = walk_spectral_radius(g, beta)?;
    if radius >= 1.0 {
        return Err(Error::Divergent(radius));
    }
    let inv_d = beta.map(|b| 1.0 / (2.0 * b));
    let mut source = DVector::zeros(n);
    source[j] = inv_d[j];
    let mut s = source.clone();
    for _ in 0..max_len {
        s = &source + (g.weights() * &s).component_mul(&inv_d);
    }
    Ok(s[i])
}

/// Spectral radius of `D⁻¹ W`, computed on the similar matrix `D^{-1/2} W D^{-1/2}`.
pub fn walk_spectral_radius(g: &WeightedGraph, beta: &DVector<f64>) -> Result<f64> {
    if beta.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::InvalidParameter("beta must be strictly positive".into()));
    }
    let scale = beta.map(|b| (2.0 * b).sqrt().recip());
    let n = g.len();
    let m = DMatrix::from_fn(n, n, |a, b| scale[a] * g.weight(a, b) * scale[b]);
    let eig = m.symmetric_eigenvalues();
    Ok(eig.iter().fold(0.0f64, |acc, e| acc.max(e.abs())))
}

/// Natural log of the spanning-tree polynomial `D(W,u) = Σ_T Π W_ij e^{u_i+u_j}`.
///
/// Computed as a principal cofactor of the Laplacian with conductances
/// `W_ij e^{u_i+u_j}`, deleting the pinning vertex when the graph has one and
/// vertex 0 otherwise.
pub fn log_spanning_tree_polynomial(g: &WeightedGraph, u: &DVector<f64>) -> Result<f64> {
    if u.len() != g.len() {
        return Err(Error::DimensionMismatch { expected: g.len(), got: u.len() });
    }
    let removed = g.pinning().unwrap_or(0);
    let mut buf = Vec::new();
    log_cofactor(g.weights(), u.as_slice(), removed, &mut buf).ok_or(Error::Disconnected)
}

/// `D(W,u)`; see [`log_spanning_tree_polynomial`].
pub fn spanning_tree_polynomial(g: &WeightedGraph, u: &DVector<f64>) -> Result<f64> {
    log_spanning_tree_polynomial(g, u).map(f64::exp)
}

/// Log-determinant of the Laplacian minor with row/column `removed` deleted.
///
/// `buf` is scratch space reused across calls. Returns `None` when the minor
/// is singular, i.e. the conductance graph is disconnected.
pub(crate) fn log_cofactor(w: &DMatrix<f64>, u: &[f64], removed: usize, buf: &mut Vec<f64>) -> Option<f64> {
    let n = w.nrows();
    if n == 1 {
        return Some(0.0);
    }
    let m = n - 1;
    buf.clear();
    buf.resize(m * m, 0.0);
    let idx = |a: usize| if a < removed { a } else { a + 1 };
    let eu: Vec<f64> = u.iter().map(|x| x.exp()).collect();
    for a in 0..m {
        let va = idx(a);
        let mut diag = 0.0;
        for vb in 0..n {
            if vb != va {
                diag += w[(va, vb)] * eu[va] * eu[vb];
            }
        }
        buf[a * m + a] = diag;
        for b in 0..a {
            let vb = idx(b);
            let c = -w[(va, vb)] * eu[va] * eu[vb];
            buf[a * m + b] = c;
            buf[b * m + a] = c;
        }
    }
    cholesky_logdet(buf, m)
}

/// In-place Cholesky of a row-major `m × m` SPD matrix; returns `ln det`.
fn cholesky_logdet(a: &mut [f64], m: usize) -> Option<f64> {
    let mut logdet = 0.0;
    for j in 0..m {
        let mut d = a[j * m + j];
        for k in 0..j {
            d -= a[j * m + k] * a[j * m + k];
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        a[j * m + j] = d;
        logdet += 2.0 * d.ln();
        for i in (j + 1)..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / d;
        }
    }
    Some(logdet)
}

/// A graph with its potential, operator, Green matrix and pinned u-field.
#[derive(Debug, Clone)]
pub struct SchrodingerState {
    graph: WeightedGraph,
    beta: DVector<f64>,
    h: DMatrix<f64>,
    g: DMatrix<f64>,
    pinned_u: Option<DVector<f64>>,
}

impl SchrodingerState {
    /// Assembles `H`, inverts it and certifies the relative `|GH - I| < 1e-10`
    /// and `G > 0`.
    pub fn new(graph: WeightedGraph, beta: DVector<f64>) -> Result<Self> {
        if beta.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::InvalidParameter("beta must be strictly positive".into()));
        }
        let h = assemble_h(&graph, &beta)?;
        let g = green_matrix(&h)?;
        let dev = relative_identity_deviation(&g, &h);
        if dev > INVERSION_TOLERANCE {
            return Err(Error::CorruptedState(format!("relative |GH - I| = {dev:e}")));
        }
        if let Some((idx, v)) = g.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            let n = g.nrows();
            return Err(Error::NonPositiveGreen { i: idx % n, j: idx / n, value: *v });
        }
        let pinned_u = graph.pinning().map(|i0| u_field(&g, i0)).transpose()?;
        Ok(Self { graph, beta, h, g, pinned_u })
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn beta(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn green(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// u-field at the graph's pinning vertex, if it has one.
    pub fn pinned_u(&self) -> Option<&DVector<f64>> {
        self.pinned_u.as_ref()
    }

    /// `γ = 1 / (2 G(i0, i0))` at the pinning vertex.
    pub fn gamma(&self) -> Option<f64> {
        self.graph.pinning().map(|i0| 0.5 / self.g[(i0, i0)])
    }
}
