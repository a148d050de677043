//! Exact reduction of an indistinguishable vertex set to one vertex, and the
//! inverse sampler for pairs.
//!
//! Reduced graphs keep vertex order: the members of `U` merge into the
//! position of the smallest one and the others are deleted.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hier_graph::{check_subset, WeightedGraph};
use crate::rng::{RngStream, SimRng};
use crate::schrodinger::{assemble_h, green_matrix};
use crate::stats::{Moments, TestReport, SE_THRESHOLD};

/// Relative tolerance when recognising a reduced operator from its inverse.
pub const FORM_TOLERANCE: f64 = 1e-8;

/// Splitting of reduced vertex `parent` into the fine pair `children`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSplit {
    parent: usize,
    children: (usize, usize),
    intra_weight: f64,
}

impl PairSplit {
    /// `children.0 < children.1`; `parent` must equal `children.0`, the
    /// merged vertex's position after reduction.
    pub fn new(parent: usize, children: (usize, usize), intra_weight: f64) -> Result<Self> {
        if children.0 >= children.1 {
            return Err(Error::InvalidSubset(format!("children {children:?} must be increasing")));
        }
        if parent != children.0 {
            return Err(Error::InvalidSubset(format!("parent {parent} does not sit at {}", children.0)));
        }
        if !(intra_weight > 0.0 && intra_weight.is_finite()) {
            return Err(Error::InvalidParameter(format!("intra weight {intra_weight}")));
        }
        Ok(Self { parent, children, intra_weight })
    }

    /// The split of `children` in `g`, checked for indistinguishability.
    pub fn in_graph(g: &WeightedGraph, children: (usize, usize)) -> Result<Self> {
        let (a, b) = (children.0.min(children.1), children.0.max(children.1));
        if !g.is_indistinguishable(&[a, b])? {
            return Err(Error::NotIndistinguishable(vec![a, b]));
        }
        Self::new(a, (a, b), g.weight(a, b))
    }

    pub fn parent(&self) -> usize {
        self.parent
    }

    pub fn children(&self) -> (usize, usize) {
        self.children
    }

    pub fn intra_weight(&self) -> f64 {
        self.intra_weight
    }
}

/// Auxiliary randomness of one pair split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitDraw {
    /// χ²₁ variable `t = 4β̌ - 2β'_u - 4w`.
    pub t: f64,
    /// Sign of `β₁ - β₂`.
    pub eps: i8,
    pub beta_check: f64,
}

/// Fine index → reduced index when `subset` merges into its smallest member.
pub fn reduction_map(n: usize, subset: &[usize]) -> Result<Vec<usize>> {
    check_subset(n, subset)?;
    let keep = *subset.iter().min().expect("nonempty");
    let mut map = vec![0; n];
    let mut next = 0;
    for (i, m) in map.iter_mut().enumerate() {
        if subset.contains(&i) && i != keep {
            continue;
        }
        *m = next;
        next += 1;
    }
    for &i in subset {
        map[i] = map[keep];
    }
    Ok(map)
}

fn require_indistinguishable(g: &WeightedGraph, subset: &[usize]) -> Result<()> {
    if !g.is_indistinguishable(subset)? {
        let mut s = subset.to_vec();
        s.sort_unstable();
        return Err(Error::NotIndistinguishable(s));
    }
    Ok(())
}

/// Graph with `subset` merged: weights to the merged vertex and boundary
/// weights add up; everything else is unchanged.
pub fn reduced_weights(g: &WeightedGraph, subset: &[usize]) -> Result<WeightedGraph> {
    require_indistinguishable(g, subset)?;
    let n = g.len();
    let map = reduction_map(n, subset)?;
    let m = n - subset.len() + 1;
    let mut w = DMatrix::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            if map[i] != map[j] {
                w[(map[i], map[j])] += g.weight(i, j);
            }
        }
    }
    // Pairs with both ends outside U were added once; pairs touching U were
    // summed over U on one side only, as intended.
    let boundary = g.boundary().map(|eta| {
        let mut e = DVector::zeros(m);
        for i in 0..n {
            e[map[i]] += eta[i];
        }
        e
    });
    let pinning = g.pinning().map(|p| map[p]);
    let w = symmetrize_sums(w);
    WeightedGraph::new(w, boundary, pinning)
}

fn symmetrize_sums(mut w: DMatrix<f64>) -> DMatrix<f64> {
    // sums taken in (i,j) and (j,i) order can differ in the last bit
    for i in 0..w.nrows() {
        for j in 0..i {
            let v = w[(i, j)];
            w[(j, i)] = v;
        }
    }
    w
}

/// Averages rows and columns of `green` over `subset` without checking the
/// graph: `G'(u,u) = |U|⁻² Σ G(i,j)`, `G'(k,u) = |U|⁻¹ Σ G(k,i)`.
pub fn average_subset(green: &DMatrix<f64>, subset: &[usize]) -> Result<DMatrix<f64>> {
    if !green.is_square() {
        return Err(Error::DimensionMismatch { expected: green.nrows(), got: green.ncols() });
    }
    let n = green.nrows();
    let map = reduction_map(n, subset)?;
    let m = n - subset.len() + 1;
    let u = map[subset[0]];
    let mut out = DMatrix::zeros(m, m);
    for i in 0..n {
        for j in 0..n {
            let s = (if map[i] == u { subset.len() as f64 } else { 1.0 }) * (if map[j] == u { subset.len() as f64 } else { 1.0 });
            out[(map[i], map[j])] += green[(i, j)] / s;
        }
    }
    Ok(symmetrize_sums(out))
}

/// Coarse-grained Green matrix of `g` over an indistinguishable `subset`.
pub fn coarse_grain_g(g: &WeightedGraph, green: &DMatrix<f64>, subset: &[usize]) -> Result<DMatrix<f64>> {
    if green.nrows() != g.len() {
        return Err(Error::DimensionMismatch { expected: g.len(), got: green.nrows() });
    }
    require_indistinguishable(g, subset)?;
    average_subset(green, subset)
}

/// `β'` with `1/(2β') = ¼ (2β₁ + 2β₂ + 2w) / (4β₁β₂ - w²)`.
pub fn coarse_grain_pair(beta1: f64, beta2: f64, w: f64) -> Result<f64> {
    let det = 4.0 * beta1 * beta2 - w * w;
    if !(det > 0.0 && beta1 > 0.0 && beta2 > 0.0) {
        return Err(Error::CorruptedState(format!("4β₁β₂ - w² = {det:e} for β = ({beta1}, {beta2}), w = {w}")));
    }
    Ok(2.0 * det / (2.0 * beta1 + 2.0 * beta2 + 2.0 * w))
}

/// Reduced potential of the pair `subset` in `g`.
pub fn coarse_grain_beta(beta: &DVector<f64>, g: &WeightedGraph, subset: [usize; 2]) -> Result<f64> {
    if beta.len() != g.len() {
        return Err(Error::DimensionMismatch { expected: g.len(), got: beta.len() });
    }
    check_subset(g.len(), &subset)?;
    coarse_grain_pair(beta[subset[0]], beta[subset[1]], g.weight(subset[0], subset[1]))
}

/// Deterministic pair split for a given `t ≥ 0` and sign.
///
/// The smaller child is computed from the product `β₁β₂ = (2β̌β' + w²)/4`
/// so that it keeps full relative precision when `t` is large.
pub fn split_from_draw(beta_prime: f64, w: f64, t: f64, eps: i8) -> Result<(f64, f64, SplitDraw)> {
    if !(beta_prime > 0.0 && beta_prime.is_finite()) {
        return Err(Error::InvalidParameter(format!("reduced potential {beta_prime}")));
    }
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::InvalidParameter(format!("intra weight {w}")));
    }
    if !(t >= 0.0 && t.is_finite()) || (eps != 1 && eps != -1) {
        return Err(Error::InvalidParameter(format!("split draw t = {t}, eps = {eps}")));
    }
    let beta_check = (t + 2.0 * beta_prime + 4.0 * w) / 4.0;
    let sum = 2.0 * beta_check - w;
    let gap = (t * beta_check).sqrt();
    let big = 0.5 * (sum + gap);
    let small = (2.0 * beta_check * beta_prime + w * w) / (2.0 * (sum + gap));
    let (b1, b2) = if eps > 0 { (big, small) } else { (small, big) };
    Ok((b1, b2, SplitDraw { t, eps, beta_check }))
}

/// Samples the fine pair given its reduced potential and intra weight.
pub fn fine_grain_pair<R: Rng + ?Sized>(beta_prime: f64, w: f64, rng: &mut R) -> Result<(f64, f64, SplitDraw)> {
    let t: f64 = ChiSquared::new(1.0).expect("one degree of freedom").sample(rng);
    let eps = if rng.random::<bool>() { 1 } else { -1 };
    split_from_draw(beta_prime, w, t, eps)
}

/// `e^{u_c} / e^{u'}` for both children: `2 (Ĝ1)_c / Σ Ĝ1` with
/// `Ĝ = [[2β₁, -w], [-w, 2β₂]]⁻¹`. The two factors average to one.
pub fn child_mass_factors(beta1: f64, beta2: f64, w: f64) -> (f64, f64) {
    let a = 2.0 * beta2 + w;
    let b = 2.0 * beta1 + w;
    let s = a + b;
    (2.0 * a / s, 2.0 * b / s)
}

/// Output of [`fine_grain_g`].
#[derive(Debug, Clone, PartialEq)]
pub struct FineGrained {
    pub green: DMatrix<f64>,
    pub beta: (f64, f64),
    pub beta_prime: f64,
    pub draw: SplitDraw,
}

/// Reads `β'_u = H'(u,u) / 2` from a reduced Green matrix, after checking
/// that its inverse has the reduced graph's off-diagonal `-W'`.
pub fn reduced_potential_from_green(gp: &DMatrix<f64>, reduced: &WeightedGraph, u: usize) -> Result<f64> {
    if gp.nrows() != reduced.len() || !gp.is_square() {
        return Err(Error::DimensionMismatch { expected: reduced.len(), got: gp.nrows() });
    }
    let hp = gp
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InconsistentReduced("reduced Green matrix is not positive definite".into()))?
        .inverse();
    let scale = hp.amax();
    for i in 0..hp.nrows() {
        for j in 0..hp.ncols() {
            if i != j && (hp[(i, j)] + reduced.weight(i, j)).abs() > FORM_TOLERANCE * scale {
                return Err(Error::InconsistentReduced(format!(
                    "H'({i},{j}) = {} but -W' = {}",
                    hp[(i, j)],
                    -reduced.weight(i, j)
                )));
            }
        }
    }
    let bp = 0.5 * hp[(u, u)];
    if !(bp > 0.0) {
        return Err(Error::InconsistentReduced(format!("β'_u = {bp}")));
    }
    Ok(bp)
}

/// Fine Green matrix from the reduced one and a sampled pair split.
///
/// Entries away from the pair are copied. The pair block is
/// `Ĝ + κ (Ĝ1)(Ĝ1)ᵀ` with `κ = β'² G'(u,u) - β'/2`, which makes its
/// average equal `G'(u,u)`; the pair's rows to any outside `k` are
/// `2 G'(u,k)` split in proportion to `Ĝ1`. `beta_prime` is recomputed from
/// `gp` when not supplied, which inverts `gp` and loses digits when it is
/// ill-conditioned; pass it whenever the reduced potentials are known.
pub fn fine_grain_g(
    gp: &DMatrix<f64>,
    g_fine: &WeightedGraph,
    split: &PairSplit,
    beta_prime: Option<f64>,
    rng: &mut SimRng,
) -> Result<FineGrained> {
    let (a, b) = split.children;
    if g_fine.len() != gp.nrows() + 1 || !gp.is_square() {
        return Err(Error::DimensionMismatch { expected: g_fine.len() - 1, got: gp.nrows() });
    }
    require_indistinguishable(g_fine, &[a, b])?;
    if g_fine.weight(a, b) != split.intra_weight {
        return Err(Error::InvalidParameter(format!(
            "split weight {} differs from graph weight {}",
            split.intra_weight,
            g_fine.weight(a, b)
        )));
    }
    let u = split.parent;
    let bp = match beta_prime {
        Some(bp) => bp,
        None => reduced_potential_from_green(gp, &reduced_weights(g_fine, &[a, b])?, u)?,
    };
    let w = split.intra_weight;
    let (b1, b2, draw) = fine_grain_pair(bp, w, rng)?;
    let green = assemble_fine_green(gp, g_fine.len(), (a, b), u, (b1, b2), w, bp)?;
    Ok(FineGrained { green, beta: (b1, b2), beta_prime: bp, draw })
}

fn assemble_fine_green(
    gp: &DMatrix<f64>,
    n: usize,
    (a, b): (usize, usize),
    u: usize,
    (b1, b2): (f64, f64),
    w: f64,
    bp: f64,
) -> Result<DMatrix<f64>> {
    let map = reduction_map(n, &[a, b])?;
    let det = 4.0 * b1 * b2 - w * w;
    let ghat = Matrix2::new(2.0 * b2, w, w, 2.0 * b1) / det;
    let g1 = Vector2::new(ghat[(0, 0)] + ghat[(0, 1)], ghat[(1, 0)] + ghat[(1, 1)]);
    let kappa = bp * bp * gp[(u, u)] - 0.5 * bp;
    let block = ghat + kappa * g1 * g1.transpose();
    let share = [g1[0] / (g1[0] + g1[1]), g1[1] / (g1[0] + g1[1])];
    let pair = [a, b];
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let pi = pair.iter().position(|&c| c == i);
            let pj = pair.iter().position(|&c| c == j);
            let v = match (pi, pj) {
                (Some(x), Some(y)) => block[(x, y)],
                (Some(x), None) => 2.0 * gp[(u, map[j])] * share[x],
                (None, Some(y)) => 2.0 * gp[(map[i], u)] * share[y],
                (None, None) => gp[(map[i], map[j])],
            };
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// `G'` in the basis where the merged vertex carries the normalised
/// indicator `1_U / √|U|`: row and column `u` of the averaged matrix are
/// scaled by `√|U|`.
pub fn orthonormal_reduced_green(gp: &DMatrix<f64>, u: usize, size: usize) -> DMatrix<f64> {
    let r = (size as f64).sqrt();
    let mut out = gp.clone();
    for k in 0..out.nrows() {
        out[(u, k)] *= r;
        out[(k, u)] *= r;
    }
    out
}

/// `v̂_u = Σ_{k∈U} v_k / √|U|`, other coordinates carried over.
pub fn orthonormal_reduce_vector(v: &DVector<f64>, subset: &[usize]) -> Result<DVector<f64>> {
    let map = reduction_map(v.len(), subset)?;
    let m = v.len() - subset.len() + 1;
    let r = (subset.len() as f64).sqrt();
    let mut out = DVector::zeros(m);
    for i in 0..v.len() {
        out[map[i]] += if subset.contains(&i) { v[i] / r } else { v[i] };
    }
    Ok(out)
}

/// Holds a reduced state fixed and compares the Monte Carlo mean of
/// `e^{-⟨λ,Gη⟩ - ½⟨λ,Gλ⟩}` over `n` fine-grainings with the reduced-side
/// value `e^{-⟨λ̂,G'η̂⟩ - ½⟨λ̂,G'λ̂⟩}`.
///
/// Cases where the left side is deterministic pass with a floating slack of
/// `1e-12` relative. The identity is exact only for `λ` constant on the pair:
/// the left side's conditional mean is even and strictly convex in
/// `λ_a - λ_b`, so other `λ` fail once `η` or `λ` reach the merged vertex.
pub fn verify_exponential_martingale(
    g_fine: &WeightedGraph,
    split: &PairSplit,
    reduced_beta: &DVector<f64>,
    lambda: &DVector<f64>,
    eta: &DVector<f64>,
    n: usize,
    stream: RngStream,
) -> Result<TestReport> {
    let (a, b) = split.children;
    let nf = g_fine.len();
    if lambda.len() != nf || eta.len() != nf {
        return Err(Error::DimensionMismatch { expected: nf, got: lambda.len().min(eta.len()) });
    }
    if lambda.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::OutOfRange { what: "lambda component", value: format!("{lambda:?}") });
    }
    if eta[a] != eta[b] {
        return Err(Error::InvalidParameter(format!("eta differs on the pair: {} vs {}", eta[a], eta[b])));
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let reduced = reduced_weights(g_fine, &[a, b])?;
    let hp = assemble_h(&reduced, reduced_beta)?;
    let gp = green_matrix(&hp)?;
    let u = split.parent;
    let bp = reduced_beta[u];
    let go = orthonormal_reduced_green(&gp, u, 2);
    let lh = orthonormal_reduce_vector(lambda, &[a, b])?;
    let eh = orthonormal_reduce_vector(eta, &[a, b])?;
    let rhs = (-lh.dot(&(&go * &eh)) - 0.5 * lh.dot(&(&go * &lh))).exp();

    const CHUNK: usize = 1024;
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<Moments> {
            let mut rng = stream.substream(c as u64).rng();
            let count = CHUNK.min(n - c * CHUNK);
            let mut m = Moments::default();
            for _ in 0..count {
                let fg = fine_grain_g(&gp, g_fine, split, Some(bp), &mut rng)?;
                let ge = &fg.green * eta;
                let gl = &fg.green * lambda;
                m.push((-lambda.dot(&ge) - 0.5 * lambda.dot(&gl)).exp());
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let est = parts.iter().fold(Moments::default(), |acc, m| acc.merge(m)).estimate();
    let dev = (est.mean - rhs).abs();
    let threshold = SE_THRESHOLD * est.se + 1e-12 * rhs.abs();
    Ok(TestReport::new("exponential martingale", dev, threshold, n, est.se)
        .with("estimate", est.mean)
        .with("closed_form", rhs))
}
