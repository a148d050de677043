//! Estimators, goodness-of-fit tests and verdict records.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::cascade::{grow_replicates, CascadeRealization, DEFAULT_MAX_LEVEL, MASS_TOLERANCE};
use crate::error::{Error, Result};
use crate::hier_graph::{build_level_graph, HierParams};
use crate::quad;
use crate::rng::RngStream;
use crate::schrodinger::log_spanning_tree_polynomial;

/// Pass threshold, in standard errors, for every mean comparison.
pub const SE_THRESHOLD: f64 = 3.0;

/// Significance level of every Kolmogorov–Smirnov verdict.
pub const KS_ALPHA: f64 = 1e-3;

/// Mergeable count / mean / sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let mean = self.mean + d * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        Moments { n, mean, m2 }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> MeanEstimate {
        MeanEstimate { mean: self.mean, se: (self.variance() / self.n.max(1) as f64).sqrt(), n: self.n as usize }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// A sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanEstimate {
    /// Mean and standard error of independent draws.
    pub fn from_iid(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(values.iter().copied().collect::<Moments>().estimate())
    }

    /// Batch-means estimate for a correlated sequence, using ⌊√n⌋ batches
    /// (at most 1000) of equal length.
    pub fn from_batches(values: &[f64]) -> Result<Self> {
        let batches = batch_means(values, default_batches(values.len()))?;
        let mut est = Self::from_iid(&batches)?;
        est.mean = mean(values);
        est.n = values.len();
        Ok(est)
    }
}

pub(crate) fn default_batches(n: usize) -> usize {
    ((n as f64).sqrt() as usize).clamp(1, 1000)
}

/// Means of `count` consecutive equal-length batches; trailing remainder
/// values are folded into the last batch.
pub fn batch_means(values: &[f64], count: usize) -> Result<Vec<f64>> {
    if values.is_empty() || count == 0 {
        return Err(Error::EmptyInput);
    }
    let count = count.min(values.len());
    let size = values.len() / count;
    Ok((0..count)
        .map(|b| {
            let end = if b + 1 == count { values.len() } else { (b + 1) * size };
            mean(&values[b * size..end])
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// A named statistical verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub n_samples: usize,
    pub standard_error: f64,
    pub passed: bool,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl TestReport {
    /// Passes iff `statistic <= threshold`.
    pub fn new(name: impl Into<String>, statistic: f64, threshold: f64, n_samples: usize, standard_error: f64) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold,
            n_samples,
            standard_error,
            passed: statistic <= threshold,
            metadata: BTreeMap::new(),
        }
    }

    /// `|estimate - target| <= 3 SE`.
    pub fn mean_match(name: impl Into<String>, est: &MeanEstimate, target: f64) -> Self {
        Self::new(name, (est.mean - target).abs(), SE_THRESHOLD * est.se, est.n, est.se)
            .with("estimate", est.mean)
            .with("target", target)
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    /// Conjunction of several reports under one name.
    pub fn all(name: impl Into<String>, parts: &[TestReport]) -> Self {
        let worst = parts
            .iter()
            .map(|r| if r.threshold > 0.0 { r.statistic / r.threshold } else if r.statistic > 0.0 { f64::INFINITY } else { 0.0 })
            .fold(0.0, f64::max);
        let n = parts.iter().map(|r| r.n_samples).sum();
        let mut rep = Self::new(name, worst, 1.0, n, 0.0);
        rep.passed = parts.iter().all(|r| r.passed);
        for r in parts {
            rep.metadata.insert(r.name.clone(), if r.passed { "pass".into() } else { "FAIL".into() });
        }
        rep
    }
}

/// Asymptotic Kolmogorov quantile `√(-½ ln(α/2))`.
pub fn kolmogorov_quantile(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

fn sorted(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidParameter("NaN sample".into()));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample statistic `sup_x |F_n(x) - F(x)|`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    let v = sorted(samples)?;
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let f = cdf(v[i]);
        d = d.max(f - i as f64 / n).max((j + 1) as f64 / n - f);
        i = j + 1;
    }
    Ok(d)
}

/// One-sample KS verdict at the 0.1% level.
pub fn ks_test(name: impl Into<String>, samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<TestReport> {
    let d = ks_statistic(samples, cdf)?;
    let n = samples.len();
    let threshold = kolmogorov_quantile(KS_ALPHA) / (n as f64).sqrt();
    Ok(TestReport::new(name, d, threshold, n, 0.0).with("alpha", KS_ALPHA))
}

/// Two-sample statistic `sup_x |F_a(x) - F_b(x)|`.
pub fn two_sample_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    let a = sorted(a)?;
    let b = sorted(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// Two-sample KS verdict at the 0.1% level.
pub fn two_sample_test(name: impl Into<String>, a: &[f64], b: &[f64]) -> Result<TestReport> {
    let d = two_sample_statistic(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let threshold = kolmogorov_quantile(KS_ALPHA) * ((na + nb) / (na * nb)).sqrt();
    Ok(TestReport::new(name, d, threshold, a.len() + b.len(), 0.0).with("alpha", KS_ALPHA))
}

/// Worst standardized deviation of child means from their parents; passes
/// when every child is within 3 SE.
pub fn paired_martingale_test(name: impl Into<String>, parents: &[f64], children: &[MeanEstimate]) -> Result<TestReport> {
    if parents.is_empty() {
        return Err(Error::EmptyInput);
    }
    if parents.len() != children.len() {
        return Err(Error::DimensionMismatch { expected: parents.len(), got: children.len() });
    }
    let mut worst: f64 = 0.0;
    let mut worst_se = 0.0;
    for (p, c) in parents.iter().zip(children) {
        let dev = (c.mean - p).abs();
        let z = if dev == 0.0 { 0.0 } else if c.se > 0.0 { dev / c.se } else { f64::INFINITY };
        if z >= worst {
            worst = z;
            worst_se = c.se;
        }
    }
    let n = children.iter().map(|c| c.n).sum();
    Ok(TestReport::new(name, worst, SE_THRESHOLD, n, worst_se).with("pairs", parents.len()))
}

/// Compares `Ê[e^{su}]` with `Ê[e^{(1-s)u}]` using the SE of the paired
/// difference.
pub fn ward_identity_test(u_samples: &[f64], s: f64) -> Result<TestReport> {
    if u_samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::OutOfRange { what: "Ward exponent", value: s.to_string() });
    }
    let diff: Moments = u_samples.iter().map(|u| (s * u).exp() - ((1.0 - s) * u).exp()).collect();
    let est = diff.estimate();
    Ok(TestReport::new(format!("ward s={s}"), est.mean.abs(), SE_THRESHOLD * est.se, est.n, est.se)
        .with("difference", est.mean))
}

/// CDF of the inverse Gaussian law with the given mean and shape.
pub fn inverse_gaussian_cdf(x: f64, mean: f64, shape: f64) -> f64 {
    if !(x > 0.0) {
        return 0.0;
    }
    let phi = Normal::standard();
    let r = (shape / x).sqrt();
    let first = phi.cdf(r * (x / mean - 1.0));
    let second = (2.0 * shape / mean).exp() * phi.cdf(-r * (x / mean + 1.0));
    (first + if second.is_finite() { second } else { 0.0 }).min(1.0)
}

/// Shape of the total-mass law: `W̄ / (2(ρ - 1))`.
pub fn total_mass_shape(params: &HierParams) -> f64 {
    params.wbar() / (2.0 * (params.rho() - 1.0))
}

/// Unnormalized density of `x = e^{u_1}` on the level-0 ball, evaluated
/// straight from the generic pinned u-density of the two-vertex graph.
pub fn root_mass_log_density(params: &HierParams, x: f64) -> Result<f64> {
    let g = build_level_graph(&params.with_level(0))?;
    let u = nalgebra::DVector::from_vec(vec![x.ln(), 0.0]);
    let w = g.weight(0, 1);
    let log_d = log_spanning_tree_polynomial(&g, &u)?;
    let log_u_density = -u[0] - w * (u[0].cosh() - 1.0) + 0.5 * log_d;
    Ok(log_u_density - x.ln())
}

/// Quadrature CDF of the root mass law.
pub fn root_mass_cdf_quadrature(params: &HierParams, x: f64) -> Result<f64> {
    root_mass_log_density(params, 1.0)?;
    let f = |t: f64| if t > 0.0 { root_mass_log_density(params, t).map(f64::exp).unwrap_or(0.0) } else { 0.0 };
    let total = quad::integrate_to_infinity(f, 0.0, 1e-13);
    if !(x > 0.0) {
        return Ok(0.0);
    }
    Ok(quad::integrate(f, 0.0, x, 1e-13) / total)
}

/// Confirms that the closed-form inverse Gaussian CDF agrees with quadrature
/// of the root density; returns the worst absolute gap.
pub fn pin_total_mass_law(params: &HierParams) -> Result<f64> {
    let shape = total_mass_shape(params);
    let mut worst: f64 = 0.0;
    for q in [0.05, 0.2, 0.5, 0.8, 1.0, 1.3, 2.0, 4.0] {
        let gap = (root_mass_cdf_quadrature(params, q)? - inverse_gaussian_cdf(q, 1.0, shape)).abs();
        worst = worst.max(gap);
    }
    if worst > 1e-7 {
        return Err(Error::InvalidParameter(format!("total-mass law does not match its quadrature pin (gap {worst:e})")));
    }
    Ok(worst)
}

/// KS against `IG(1, W̄/(2(ρ-1)))` plus `E[mass] = 1`.
pub fn total_mass_test(samples: &[f64], params: &HierParams) -> Result<TestReport> {
    const MIN_SAMPLES: usize = 10_000;
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples { required: MIN_SAMPLES, got: samples.len() });
    }
    let pin_gap = pin_total_mass_law(params)?;
    let shape = total_mass_shape(params);
    let ks = ks_test("total mass KS", samples, |x| inverse_gaussian_cdf(x, 1.0, shape))?;
    let m = TestReport::mean_match("total mass mean", &MeanEstimate::from_iid(samples)?, 1.0);
    Ok(TestReport::all("total mass law", &[ks, m])
        .with("shape", shape)
        .with("quadrature_gap", format!("{pin_gap:e}")))
}

/// Piecewise-constant density `e^{u^{(n)}_i}` on the dyadic cells of depth `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub depth: u32,
    pub density: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn cell_width(&self) -> f64 {
        (-(self.depth as f64)).exp2()
    }

    pub fn cell_mass(&self, k: usize) -> f64 {
        self.density[k] * self.cell_width()
    }

    /// Mass of cells `range` (0-based).
    pub fn mass_of_cells(&self, range: std::ops::Range<usize>) -> f64 {
        self.density[range].iter().sum::<f64>() * self.cell_width()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass_of_cells(0..self.density.len())
    }

    /// Left endpoint of cell `k` (0-based).
    pub fn left(&self, k: usize) -> f64 {
        k as f64 * self.cell_width()
    }
}

/// The measure `m_n` of a realization; checks positivity and that its total
/// mass equals the root mass.
pub fn measure_density(r: &CascadeRealization, n: u32) -> Result<EmpiricalMeasure> {
    let rec = r.level(n)?;
    let m = EmpiricalMeasure { depth: n, density: rec.density() };
    if m.density.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::CorruptedState(format!("non-positive density at depth {n}")));
    }
    let root = r.total_mass();
    let gap = ((m.total_mass() - root) / root).abs();
    if gap > MASS_TOLERANCE {
        return Err(Error::CorruptedState(format!("depth {n} mass differs from the root by {gap:e}")));
    }
    Ok(m)
}

/// Stability of `Ê[mass^{-p}]`: the estimate on the first half of the sample
/// must lie within 3 SE of the estimate on the whole.
pub fn negative_moment_check(samples: &[f64], p: f64) -> Result<TestReport> {
    if samples.len() < 4 {
        return Err(Error::InsufficientSamples { required: 4, got: samples.len() });
    }
    if samples.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::InvalidParameter("masses must be positive".into()));
    }
    let inv: Vec<f64> = samples.iter().map(|x| x.powf(-p)).collect();
    let half = MeanEstimate::from_iid(&inv[..inv.len() / 2])?;
    let full = MeanEstimate::from_iid(&inv)?;
    let finite = full.mean.is_finite() && full.se.is_finite();
    let mut rep = TestReport::new(format!("negative moment p={p}"), (half.mean - full.mean).abs(), SE_THRESHOLD * half.se, inv.len(), full.se)
        .with("estimate", full.mean)
        .with("half_sample_estimate", half.mean);
    rep.passed &= finite;
    Ok(rep)
}

/// `Ê[e^{s u^{(n)}_1}]` at one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentPoint {
    pub level: u32,
    pub mean: f64,
    pub se: f64,
}

/// Fractional moments of the leftmost site along the growth, with the
/// paired level-to-level differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalMomentCurve {
    pub s: f64,
    pub points: Vec<MomentPoint>,
    /// Estimates of `e^{s u^{(n+1)}_1} - e^{s u^{(n)}_1}` from the same realizations.
    pub steps: Vec<MeanEstimate>,
}

impl FractionalMomentCurve {
    /// Passes when no step increases by more than 3 SE.
    pub fn decay_report(&self) -> TestReport {
        let parts: Vec<TestReport> = self
            .steps
            .iter()
            .enumerate()
            .map(|(n, d)| TestReport::new(format!("step {n}->{}", n + 1), d.mean.max(0.0), SE_THRESHOLD * d.se, d.n, d.se))
            .collect();
        TestReport::all(format!("fractional moment decay s={}", self.s), &parts)
    }
}

/// Fractional moment curve for `n = 0..=n_max` over `count` cascades.
pub fn fractional_moment_curve(params: &HierParams, s: f64, n_max: u32, count: usize, stream: RngStream) -> Result<FractionalMomentCurve> {
    if !(s > 0.0 && s < 0.5) {
        return Err(Error::OutOfRange { what: "fractional exponent", value: s.to_string() });
    }
    if n_max > DEFAULT_MAX_LEVEL {
        return Err(Error::MaxLevel(DEFAULT_MAX_LEVEL));
    }
    if count < 2 {
        return Err(Error::InsufficientSamples { required: 2, got: count });
    }
    let rows: Vec<Vec<f64>> = grow_replicates(*params, n_max, count, stream)?
        .iter()
        .map(|r| r.levels().iter().map(|rec| (s * rec.u[0]).exp()).collect())
        .collect();
    let points = (0..=n_max as usize)
        .map(|n| {
            let e = rows.iter().map(|row| row[n]).collect::<Moments>().estimate();
            MomentPoint { level: n as u32, mean: e.mean, se: e.se }
        })
        .collect();
    let steps = (0..n_max as usize).map(|n| rows.iter().map(|row| row[n + 1] - row[n]).collect::<Moments>().estimate()).collect();
    Ok(FractionalMomentCurve { s, points, steps })
}

/// Classification emitted by [`singularity_diagnostic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularityLabel {
    SingularConsistent,
    DensityConsistent,
    Inconclusive,
}

impl std::fmt::Display for SingularityLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SingularConsistent => "singular-consistent",
            Self::DensityConsistent => "density-consistent",
            Self::Inconclusive => "inconclusive",
        })
    }
}

/// Knobs of the singularity probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularityConfig {
    /// Cells with `φ` below this count toward the low-density fraction.
    pub floor: f64,
    /// Slopes within `±dead_band` per level are inconclusive.
    pub dead_band: f64,
    pub min_depth: u32,
}

impl Default for SingularityConfig {
    fn default() -> Self {
        Self { floor: 1e-3, dead_band: 0.02, min_depth: 12 }
    }
}

/// Distribution of `ln φ^{(n)}` over the cells of one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelQuantiles {
    pub level: u32,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
    pub fraction_below_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityReport {
    pub levels: Vec<LevelQuantiles>,
    /// Least-squares slope of the median of `ln φ^{(n)}` against `n`.
    pub slope: f64,
    pub label: SingularityLabel,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Probe on per-level `ln φ` arrays (level `n` holding `2^n` cells).
pub fn singularity_from_log_density(levels: &[Vec<f64>], config: &SingularityConfig) -> Result<SingularityReport> {
    if levels.is_empty() || levels.iter().any(|l| l.is_empty()) {
        return Err(Error::EmptyInput);
    }
    let depth = (levels.len() - 1) as u32;
    if depth < config.min_depth {
        return Err(Error::InsufficientDepth { required: config.min_depth, available: depth });
    }
    let ln_floor = config.floor.ln();
    let rows: Vec<LevelQuantiles> = levels
        .iter()
        .enumerate()
        .map(|(n, l)| -> Result<LevelQuantiles> {
            let v = sorted(l)?;
            let below = v.partition_point(|x| *x < ln_floor);
            Ok(LevelQuantiles {
                level: n as u32,
                q05: quantile(&v, 0.05),
                q25: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q75: quantile(&v, 0.75),
                q95: quantile(&v, 0.95),
                fraction_below_floor: below as f64 / v.len() as f64,
            })
        })
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = rows.iter().map(|r| r.level as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let label = if slope < -config.dead_band {
        SingularityLabel::SingularConsistent
    } else if slope > config.dead_band {
        SingularityLabel::DensityConsistent
    } else {
        SingularityLabel::Inconclusive
    };
    Ok(SingularityReport { levels: rows, slope, label })
}

/// Numerical probe of the deep measure: quantiles of `ln φ^{(n)}`, the
/// low-density fraction, and a label from the median's slope.
pub fn singularity_diagnostic(r: &CascadeRealization, config: &SingularityConfig) -> Result<SingularityReport> {
    let levels: Vec<Vec<f64>> = r.levels().iter().map(|rec| rec.u.clone()).collect();
    singularity_from_log_density(&levels, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.3).collect();
        let whole: Moments = xs.iter().copied().collect();
        let a: Moments = xs[..40].iter().copied().collect();
        let b: Moments = xs[40..].iter().copied().collect();
        let merged = a.merge(&b);
        assert_eq!(whole.n, merged.n);
        assert!((whole.mean - merged.mean).abs() < 1e-12);
        assert!((whole.m2 - merged.m2).abs() < 1e-9);
    }

    #[test]
    fn batch_means_of_constant() {
        let est = MeanEstimate::from_batches(&vec![1.0; 5000]).unwrap();
        assert_eq!(est.mean, 1.0);
        assert_eq!(est.se, 0.0);
        assert_eq!(batch_means(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap(), vec![1.5, 4.0]);
    }

    #[test]
    fn empty_inputs_error() {
        assert_eq!(ks_statistic(&[], |x| x), Err(Error::EmptyInput));
        assert_eq!(two_sample_statistic(&[], &[1.0]), Err(Error::EmptyInput));
        assert!(paired_martingale_test("p", &[], &[]).is_err());
    }

    #[test]
    fn identical_sets_have_zero_two_sample_distance() {
        let a = [0.3, 0.1, 0.7, 0.7, 0.2];
        assert_eq!(two_sample_statistic(&a, &a).unwrap(), 0.0);
        assert_eq!(two_sample_statistic(&[0.0, 1.0], &[2.0, 3.0]).unwrap(), 1.0);
    }

    #[test]
    fn ks_by_hand() {
        // F_n jumps to 1/2 at 0.25 and to 1 at 0.75 against the uniform CDF
        let d = ks_statistic(&[0.25, 0.75], |x| x).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
        assert!((kolmogorov_quantile(1e-3) - 1.949_5).abs() < 1e-4);
    }

    #[test]
    fn uniform_calibration() {
        let mut rng = RngStream::new(11, 0).rng();
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let rep = ks_test("uniform", &xs, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!(rep.passed, "{rep:?}");
        let ys: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>().powf(1.1)).collect();
        assert!(!ks_test("skewed", &ys, |x| x.clamp(0.0, 1.0)).unwrap().passed);
    }

    #[test]
    fn paired_exact_pairs() {
        let c = MeanEstimate { mean: 2.0, se: 0.0, n: 10 };
        let rep = paired_martingale_test("exact", &[2.0, 2.0], &[c, c]).unwrap();
        assert_eq!(rep.statistic, 0.0);
        assert!(rep.passed);
        let off = MeanEstimate { mean: 2.5, se: 0.1, n: 10 };
        assert!(!paired_martingale_test("off", &[2.0], &[off]).unwrap().passed);
    }

    #[test]
    fn ward_half_is_exactly_zero() {
        let rep = ward_identity_test(&[0.3, -1.2, 2.0], 0.5).unwrap();
        assert_eq!(rep.statistic, 0.0);
        assert!(rep.passed);
        let one = ward_identity_test(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(one.statistic, 0.0);
        assert!(ward_identity_test(&[0.0], 0.0).is_err());
    }

    #[test]
    fn ig_cdf_against_quadrature_of_its_density() {
        for (mu, lam) in [(1.0, 0.5), (1.0, 3.0), (2.0, 1.0)] {
            let pdf = |x: f64| {
                if x > 0.0 {
                    (lam / (2.0 * std::f64::consts::PI * x.powi(3))).sqrt() * (-lam * (x - mu).powi(2) / (2.0 * mu * mu * x)).exp()
                } else {
                    0.0
                }
            };
            for x in [0.1, 0.7, 1.0, 2.5] {
                let q = quad::integrate(pdf, 0.0, x, 1e-13);
                assert!((q - inverse_gaussian_cdf(x, mu, lam)).abs() < 1e-9, "mu={mu} lam={lam} x={x}");
            }
        }
    }

    #[test]
    fn total_mass_law_pins() {
        for (wbar, rho) in [(1.0, 2.0), (0.1, 2.0), (2.0, 4.0), (1.0, 1.5)] {
            let p = HierParams::new(wbar, rho, 0).unwrap();
            assert!(pin_total_mass_law(&p).unwrap() < 1e-8);
        }
    }

    #[test]
    fn wrong_shape_would_not_pin() {
        // the other common reading, shape W̄/(ρ-1), disagrees with quadrature
        let p = HierParams::new(1.0, 2.0, 0).unwrap();
        let gap = (root_mass_cdf_quadrature(&p, 0.5).unwrap() - inverse_gaussian_cdf(0.5, 1.0, 1.0)).abs();
        assert!(gap > 1e-2);
    }

    #[test]
    fn total_mass_needs_samples() {
        let p = HierParams::new(1.0, 2.0, 0).unwrap();
        assert_eq!(
            total_mass_test(&[1.0; 10], &p),
            Err(Error::InsufficientSamples { required: 10_000, got: 10 })
        );
    }


    #[test]
    fn measure_conservation_and_shape() {
        let p = HierParams::new(1.0, 2.0, 0).unwrap();
        let mut r = CascadeRealization::init_root(p, RngStream::new(51, 0)).unwrap();
        r.grow_to(10).unwrap();
        let m0 = measure_density(&r, 0).unwrap();
        assert_eq!(m0.density.len(), 1);
        assert_eq!(m0.total_mass(), r.total_mass());
        for n in 1..10u32 {
            let a = measure_density(&r, n).unwrap();
            let b = measure_density(&r, n + 1).unwrap();
            assert_eq!(b.density.len(), 1 << (n + 1));
            let ha = a.mass_of_cells(0..a.density.len() / 2);
            let hb = b.mass_of_cells(0..b.density.len() / 2);
            assert!((ha - hb).abs() < 1e-12 * ha);
        }
        assert!(matches!(measure_density(&r, 11), Err(Error::InsufficientDepth { .. })));
    }

    #[test]
    fn mean_total_mass_over_realizations() {
        let p = HierParams::new(1.0, 2.0, 0).unwrap();
        let rs = grow_replicates(p, 2, 100_000, RngStream::new(52, 0)).unwrap();
        let masses: Vec<f64> = rs.iter().map(|r| measure_density(r, 2).unwrap().total_mass()).collect();
        let rep = total_mass_test(&masses, &p).unwrap();
        assert!(rep.passed, "{rep:?}");
        // E[1/X] = 1 + 1/λ for mean-one inverse Gaussian
        let inv = MeanEstimate::from_iid(&masses.iter().map(|x| 1.0 / x).collect::<Vec<_>>()).unwrap();
        let lam = total_mass_shape(&p);
        assert!((inv.mean - (1.0 + 1.0 / lam)).abs() < 3.0 * inv.se, "{inv:?}");
        let neg = negative_moment_check(&masses, 1.0).unwrap();
        assert!(neg.passed, "{neg:?}");
    }

    #[test]
    fn fractional_curve_root_matches_quadrature() {
        let p = HierParams::new(0.1, 2.0, 0).unwrap();
        let s = 0.3;
        let curve = fractional_moment_curve(&p, s, 3, 20_000, RngStream::new(53, 0)).unwrap();
        let f = |x: f64| if x > 0.0 { root_mass_log_density(&p, x).map(f64::exp).unwrap_or(0.0) } else { 0.0 };
        let norm = quad::integrate_to_infinity(f, 0.0, 1e-13);
        let moment = quad::integrate_to_infinity(|x| f(x) * x.powf(s), 0.0, 1e-13) / norm;
        let root = curve.points[0];
        assert!((root.mean - moment).abs() < 3.0 * root.se, "{root:?} vs {moment}");
        assert!(curve.points.iter().all(|pt| pt.mean > 0.0));
        assert!(curve.decay_report().passed, "{:?}", curve.decay_report());
        assert!(fractional_moment_curve(&p, 0.6, 3, 10, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn singularity_probe() {
        let flat: Vec<Vec<f64>> = (0..13).map(|n| vec![0.0; 1 << n]).collect();
        let rep = singularity_from_log_density(&flat, &SingularityConfig::default()).unwrap();
        assert_eq!(rep.slope, 0.0);
        assert_eq!(rep.label, SingularityLabel::Inconclusive);
        let falling: Vec<Vec<f64>> = (0..13).map(|n| vec![-0.5 * n as f64; 1 << n]).collect();
        let rep = singularity_from_log_density(&falling, &SingularityConfig::default()).unwrap();
        assert!((rep.slope + 0.5).abs() < 1e-12);
        assert_eq!(rep.label, SingularityLabel::SingularConsistent);
        assert!(singularity_from_log_density(&flat[..5], &SingularityConfig::default()).is_err());

        let p = HierParams::new(0.1, 2.0, 0).unwrap();
        let mut r = CascadeRealization::init_root(p, RngStream::new(54, 0)).unwrap();
        r.grow_to(14).unwrap();
        let rep = singularity_diagnostic(&r, &SingularityConfig::default()).unwrap();
        assert_eq!(rep.levels.len(), 15);
        // the probe leaves the realization's conservation intact
        r.check_invariants().unwrap();
        assert_eq!(serde_json::to_string(&rep.label).unwrap(), format!("\"{}\"", rep.label));
    }

    proptest! {
        #[test]
        fn ks_statistic_bounded(xs in prop::collection::vec(0.0f64..1.0, 1..200)) {
            let d = ks_statistic(&xs, |x| x).unwrap();
            prop_assert!(d > 0.0 && d <= 1.0);
        }

        #[test]
        fn two_sample_symmetric(a in prop::collection::vec(-5.0f64..5.0, 1..100), b in prop::collection::vec(-5.0f64..5.0, 1..100)) {
            prop_assert_eq!(two_sample_statistic(&a, &b).unwrap(), two_sample_statistic(&b, &a).unwrap());
        }
    }
}
