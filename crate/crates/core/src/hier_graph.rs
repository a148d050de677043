//! Dyson hierarchical lattice, its wired finite balls, and general weighted graphs.
//!
//! Sites of the hierarchical lattice carry 1-based labels `1, 2, 3, ...`. A
//! [`WeightedGraph`] stores its vertices as 0-based matrix indices; the level
//! graph of [`build_level_graph`] puts site `k` at index `k - 1` and the wired
//! boundary vertex `δ_n` last, at index `2^n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest level for which full-matrix objects are materialized.
pub const MAX_MATRIX_LEVEL: u32 = 14;

/// Inverse temperature, decay parameter and level of a hierarchical model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HierParams {
    wbar: f64,
    rho: f64,
    level: u32,
}

impl HierParams {
    pub fn new(wbar: f64, rho: f64, level: u32) -> Result<Self> {
        if !(wbar.is_finite() && wbar > 0.0) {
            return Err(Error::InvalidParameter(format!("wbar must be positive, got {wbar}")));
        }
        if !(rho.is_finite() && rho > 1.0) {
            return Err(Error::InvalidParameter(format!("rho must exceed 1, got {rho}")));
        }
        if level > 62 {
            return Err(Error::InvalidParameter(format!("level {level} too large")));
        }
        Ok(Self { wbar, rho, level })
    }

    pub fn wbar(&self) -> f64 {
        self.wbar
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn with_level(&self, level: u32) -> Self {
        Self { level, ..*self }
    }

    pub fn with_wbar(&self, wbar: f64) -> Result<Self> {
        Self::new(wbar, self.rho, self.level)
    }

    /// `d_s = 2 ln 2 / ln ρ`; equals 2 exactly at ρ = 2.
    pub fn spectral_dimension(&self) -> f64 {
        2.0 * std::f64::consts::LN_2 / self.rho.ln()
    }

    /// Number of lattice sites `2^n` in the ball `Λ_n`.
    pub fn num_sites(&self) -> usize {
        1usize << self.level
    }
}

/// Ultrametric block distance between two 1-based sites.
///
/// The smallest `n` such that both sites lie in one block `(k 2^n, (k+1) 2^n]`.
pub fn hier_distance(i: u64, j: u64) -> u32 {
    debug_assert!(i >= 1 && j >= 1, "sites are 1-based");
    let x = (i - 1) ^ (j - 1);
    u64::BITS - x.leading_zeros()
}

/// Coupling `W̄ (2ρ)^{-d(i,j)}` between two distinct sites.
pub fn hier_weight(i: u64, j: u64, params: &HierParams) -> Result<f64> {
    if i == j || i == 0 || j == 0 {
        return Err(Error::InvalidPair { i, j });
    }
    let d = hier_distance(i, j) as i32;
    Ok(params.wbar * (2.0 * params.rho).powi(-d))
}

/// Weight from a site of `Λ_n` to the wired boundary vertex `δ_n`.
///
/// Equals the exterior tail sum `Σ_{j ∉ Λ_n} W_ij = W̄ ρ^{-n} / (2(ρ-1))`,
/// which does not depend on the site.
pub fn wired_boundary_weight(i: u64, params: &HierParams) -> Result<f64> {
    let n = params.level;
    if i == 0 || i > (1u64 << n) {
        return Err(Error::OutOfRange { what: "site", value: i.to_string() });
    }
    Ok(params.wbar * params.rho.powi(-(n as i32)) / (2.0 * (params.rho - 1.0)))
}

/// Block swap `g_n`: exchanges `[1, 2^n]` with `[2^n + 1, 2^{n+1}]`.
pub fn block_swap(n: u32, i: u64) -> u64 {
    let half = 1u64 << n;
    if i <= half {
        i + half
    } else if i <= 2 * half {
        i - half
    } else {
        i
    }
}

/// A finite weighted graph with optional boundary weights and pinning vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    weights: DMatrix<f64>,
    boundary: Option<DVector<f64>>,
    pinning: Option<usize>,
}

impl WeightedGraph {
    /// Validates symmetry, zero diagonal, nonnegativity and connectivity.
    pub fn new(
        weights: DMatrix<f64>,
        boundary: Option<DVector<f64>>,
        pinning: Option<usize>,
    ) -> Result<Self> {
        let g = Self::new_unchecked_connectivity(weights, boundary, pinning)?;
        if !g.is_connected() {
            return Err(Error::Disconnected);
        }
        Ok(g)
    }

    fn new_unchecked_connectivity(
        weights: DMatrix<f64>,
        boundary: Option<DVector<f64>>,
        pinning: Option<usize>,
    ) -> Result<Self> {
        let n = weights.nrows();
        if n == 0 {
            return Err(Error::InvalidWeights("graph has no vertices".into()));
        }
        if weights.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: weights.ncols() });
        }
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(Error::InvalidWeights(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let w = weights[(i, j)];
                if !(w.is_finite() && w >= 0.0) {
                    return Err(Error::InvalidWeights(format!("W[{i},{j}] = {w}")));
                }
                if w != weights[(j, i)] {
                    return Err(Error::InvalidWeights(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        if let Some(eta) = &boundary {
            if eta.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: eta.len() });
            }
            if let Some(bad) = eta.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
                return Err(Error::InvalidWeights(format!("boundary weight {bad}")));
            }
        }
        if let Some(p) = pinning {
            if p >= n {
                return Err(Error::OutOfRange { what: "pinning vertex", value: p.to_string() });
            }
        }
        Ok(Self { weights, boundary, pinning })
    }

    /// Complete graph on `n` vertices with every weight equal to `w`.
    pub fn complete(n: usize, w: f64) -> Result<Self> {
        let mut m = DMatrix::from_element(n, n, w);
        m.fill_diagonal(0.0);
        Self::new(m, None, None)
    }

    pub fn len(&self) -> usize {
        self.weights.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn boundary(&self) -> Option<&DVector<f64>> {
        self.boundary.as_ref()
    }

    pub fn pinning(&self) -> Option<usize> {
        self.pinning
    }

    pub fn with_pinning(mut self, pinning: usize) -> Result<Self> {
        if pinning >= self.len() {
            return Err(Error::OutOfRange { what: "pinning vertex", value: pinning.to_string() });
        }
        self.pinning = Some(pinning);
        Ok(self)
    }

    /// Total conductance `Σ_j W_ij` at vertex `i` (boundary excluded).
    pub fn degree(&self, i: usize) -> f64 {
        self.weights.row(i).sum()
    }

    /// Connectivity of the positive-weight graph; vertices with positive
    /// boundary weight are joined through a virtual exterior vertex.
    pub fn is_connected(&self) -> bool {
        let n = self.len();
        let has_exterior = self
            .boundary
            .as_ref()
            .is_some_and(|eta| eta.iter().any(|&e| e > 0.0));
        let total = n + usize::from(has_exterior);
        let mut seen = vec![false; total];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            let visit = |u: usize, seen: &mut Vec<bool>, stack: &mut Vec<usize>| {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            };
            if v == n {
                let eta = self.boundary.as_ref().expect("exterior implies boundary");
                for (u, &e) in eta.iter().enumerate() {
                    if e > 0.0 {
                        visit(u, &mut seen, &mut stack);
                    }
                }
                continue;
            }
            for u in 0..n {
                if self.weights[(v, u)] > 0.0 {
                    visit(u, &mut seen, &mut stack);
                }
            }
            if has_exterior && self.boundary.as_ref().unwrap()[v] > 0.0 {
                visit(n, &mut seen, &mut stack);
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Whether every outside vertex sees all members of `subset` with the
    /// same weight (and, when boundary weights exist, they agree on `subset`).
    pub fn is_indistinguishable(&self, subset: &[usize]) -> Result<bool> {
        check_subset(self.len(), subset)?;
        let first = subset[0];
        for k in 0..self.len() {
            if subset.contains(&k) {
                continue;
            }
            let w = self.weights[(k, first)];
            if subset.iter().any(|&i| self.weights[(k, i)] != w) {
                return Ok(false);
            }
        }
        if let Some(eta) = &self.boundary {
            if subset.iter().any(|&i| eta[i] != eta[first]) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

pub(crate) fn check_subset(n: usize, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::InvalidSubset("empty subset".into()));
    }
    for (a, &i) in subset.iter().enumerate() {
        if i >= n {
            return Err(Error::InvalidSubset(format!("vertex {i} out of range")));
        }
        if subset[..a].contains(&i) {
            return Err(Error::InvalidSubset(format!("duplicate vertex {i}")));
        }
    }
    Ok(())
}

/// Wired ball `Λ̃_n = {1..2^n} ∪ {δ_n}` with hierarchical couplings.
///
/// Index `k - 1` holds site `k`; index `2^n` holds `δ_n`, which is also the
/// pinning vertex.
pub fn build_level_graph(params: &HierParams) -> Result<WeightedGraph> {
    if params.level > MAX_MATRIX_LEVEL {
        return Err(Error::InvalidParameter(format!(
            "level {} exceeds the dense-matrix cap {MAX_MATRIX_LEVEL}",
            params.level
        )));
    }
    let sites = params.num_sites();
    let n = sites + 1;
    let boundary = wired_boundary_weight(1, params)?;
    let mut w = DMatrix::zeros(n, n);
    for a in 0..sites {
        for b in 0..a {
            let v = hier_weight(a as u64 + 1, b as u64 + 1, params)?;
            w[(a, b)] = v;
            w[(b, a)] = v;
        }
        w[(a, sites)] = boundary;
        w[(sites, a)] = boundary;
    }
    WeightedGraph::new(w, None, Some(sites))
}

/// Matrix index of the boundary vertex `δ_n` in [`build_level_graph`].
pub fn boundary_index(level: u32) -> usize {
    1usize << level
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(wbar: f64, rho: f64, n: u32) -> HierParams {
        HierParams::new(wbar, rho, n).unwrap()
    }

    #[test]
    fn distance_examples() {
        assert_eq!(hier_distance(1, 1), 0);
        assert_eq!(hier_distance(1, 3), 2);
        assert_eq!(hier_distance(1, 9), 4);
        assert_eq!(hier_distance(2, 7), 3);
        assert_eq!(hier_distance(1, 2), 1);
        assert_eq!(hier_distance(3, 4), 1);
        assert_eq!(hier_distance(2, 3), 2);
    }

    #[test]
    fn weight_examples() {
        assert_eq!(hier_weight(2, 7, &p(1.0, 2.0, 0)).unwrap(), 1.0 / 64.0);
        assert_eq!(hier_weight(1, 2, &p(1.0, 2.0, 0)).unwrap(), 0.25);
        assert_eq!(hier_weight(1, 3, &p(2.0, 2.0, 0)).unwrap(), 0.125);
        assert!(matches!(hier_weight(4, 4, &p(1.0, 2.0, 0)), Err(Error::InvalidPair { .. })));
    }

    #[test]
    fn params_validation() {
        assert!(HierParams::new(0.0, 2.0, 0).is_err());
        assert!(HierParams::new(1.0, 1.0, 0).is_err());
        assert!((p(1.0, 2.0, 0).spectral_dimension() - 2.0).abs() < 1e-15);
        assert!(p(1.0, 4.0, 0).spectral_dimension() > 0.0);
    }

    #[test]
    fn wired_weight_examples() {
        assert_eq!(wired_boundary_weight(1, &p(1.0, 2.0, 0)).unwrap(), 0.5);
        assert_eq!(wired_boundary_weight(3, &p(1.0, 2.0, 2)).unwrap(), 0.125);
        assert!(wired_boundary_weight(5, &p(1.0, 2.0, 2)).is_err());
        assert!(wired_boundary_weight(0, &p(1.0, 2.0, 2)).is_err());
    }

    #[test]
    fn wired_weight_matches_partial_tail_sums() {
        for &(wbar, rho, n, i) in &[(1.0, 2.0, 0u32, 1u64), (1.0, 2.0, 3, 5), (0.7, 3.0, 2, 4), (2.0, 1.5, 1, 2)] {
            let params = p(wbar, rho, n);
            let exact = wired_boundary_weight(i, &params).unwrap();
            // Exterior sites at distance d = n+1..=n+m number 2^{d-1}.
            let mut partial = 0.0;
            let mut prev = 0.0;
            for m in 1..=40u32 {
                let d = n + m;
                partial += (1u64 << (d - 1)) as f64 * wbar * (2.0 * rho).powi(-(d as i32));
                assert!(partial >= prev);
                prev = partial;
                let remainder = exact - partial;
                // geometric tail beyond distance n + m
                let tail = wbar * rho.powi(-((n + m) as i32)) / (2.0 * (rho - 1.0));
                assert!((remainder - tail).abs() <= 1e-14 * exact, "m={m}: {remainder} vs {tail}");
            }
            // Brute force over every exterior site within distance n + 12.
            let brute: f64 = ((1u64 << n) + 1..=(1u64 << (n + 12)))
                .map(|j| hier_weight(i, j, &params).unwrap())
                .sum();
            let covered = n + 12;
            let tail = wbar * rho.powi(-(covered as i32)) / (2.0 * (rho - 1.0));
            assert!((exact - brute - tail).abs() <= 1e-12 * exact);
        }
    }

    #[test]
    fn level_graph_examples() {
        let g0 = build_level_graph(&p(1.0, 2.0, 0)).unwrap();
        assert_eq!(g0.len(), 2);
        assert_eq!(g0.weight(0, 1), 0.5);
        assert_eq!(g0.pinning(), Some(1));

        let g1 = build_level_graph(&p(1.0, 2.0, 1)).unwrap();
        assert_eq!(g1.weight(0, 1), 0.25);
        assert_eq!(g1.weight(0, 2), 0.25);
        assert_eq!(g1.weight(1, 2), 0.25);

        let g2 = build_level_graph(&p(1.0, 2.0, 2)).unwrap();
        assert_eq!(g2.weight(0, 1), 0.25);
        assert_eq!(g2.weight(2, 3), 0.25);
        assert_eq!(g2.weight(0, 2), 1.0 / 16.0);
        assert_eq!(g2.weight(0, 3), 1.0 / 16.0);
        for i in 0..4 {
            assert_eq!(g2.weight(i, 4), 0.125);
        }
    }

    #[test]
    fn indistinguishable_examples() {
        let g1 = build_level_graph(&p(1.0, 2.0, 1)).unwrap();
        assert!(g1.is_indistinguishable(&[0, 1]).unwrap());
        let g2 = build_level_graph(&p(1.0, 2.0, 2)).unwrap();
        assert!(!g2.is_indistinguishable(&[0, 2]).unwrap());
        assert!(g2.is_indistinguishable(&[0, 1]).unwrap());
        assert!(g2.is_indistinguishable(&[2, 3]).unwrap());
        assert!(matches!(g2.is_indistinguishable(&[]), Err(Error::InvalidSubset(_))));
    }

    #[test]
    fn sibling_pairs_always_indistinguishable() {
        for n in 1..=5 {
            for &rho in &[1.5, 2.0, 4.0] {
                let g = build_level_graph(&p(0.8, rho, n)).unwrap();
                for k in 0..(1usize << (n - 1)) {
                    assert!(g.is_indistinguishable(&[2 * k, 2 * k + 1]).unwrap());
                }
            }
        }
    }

    #[test]
    fn boundary_weights_enter_indistinguishability() {
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.5, 1.0, 0.0, 0.5, 0.5, 0.5, 0.0]);
        let eta = DVector::from_vec(vec![0.2, 0.3, 0.0]);
        let g = WeightedGraph::new(w.clone(), Some(eta), None).unwrap();
        assert!(!g.is_indistinguishable(&[0, 1]).unwrap());
        let g = WeightedGraph::new(w, Some(DVector::from_vec(vec![0.2, 0.2, 0.0])), None).unwrap();
        assert!(g.is_indistinguishable(&[0, 1]).unwrap());
    }

    #[test]
    fn graph_validation() {
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(WeightedGraph::new(asym, None, None).is_err());
        let disc = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(WeightedGraph::new(disc.clone(), None, None), Err(Error::Disconnected));
        // A boundary link to the isolated vertex reconnects it through the exterior.
        let eta = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        assert!(WeightedGraph::new(disc, Some(eta), None).is_ok());
    }

    proptest! {
        #[test]
        fn ultrametric(i in 1u64..=(1 << 20), j in 1u64..=(1 << 20), k in 1u64..=(1 << 20)) {
            let (dij, djk, dik) = (hier_distance(i, j), hier_distance(j, k), hier_distance(i, k));
            prop_assert!(dik <= dij.max(djk));
            prop_assert_eq!(dij, hier_distance(j, i));
        }

        #[test]
        fn block_swap_is_an_automorphism(n in 0u32..8, i in 1u64..600, j in 1u64..600) {
            prop_assume!(i != j);
            let params = p(1.3, 2.5, 0);
            let (gi, gj) = (block_swap(n, i), block_swap(n, j));
            prop_assert_eq!(block_swap(n, gi), i);
            prop_assert_eq!(hier_weight(gi, gj, &params).unwrap(), hier_weight(i, j, &params).unwrap());
        }
    }
}
