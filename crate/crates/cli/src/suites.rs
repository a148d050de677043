use dyson_cascade::cascade::{CascadeBetaSampler, CascadeRealization, MASS_TOLERANCE};
use dyson_cascade::graining::{
    coarse_grain_pair, fine_grain_g, fine_grain_pair, reduced_weights, reduction_map, verify_exponential_martingale, PairSplit,
};
use dyson_cascade::hier_graph::{boundary_index, build_level_graph};
use dyson_cascade::samplers::{laplace_closed_form, laplace_mc_parallel, sample_gamma_half, ChainBetaSampler, McmcConfig, MigParams, UFieldChain};
use dyson_cascade::schrodinger::{assemble_h, beta_from_u, identity_deviation, relative_identity_deviation, SchrodingerState};
use dyson_cascade::stats::{paired_martingale_test, total_mass_test, two_sample_test, ward_identity_test, MeanEstimate};
use dyson_cascade::{HierParams, Result, RngStream, TestReport};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::config::{RunConfig, Suite};
use crate::realization_file::RealizationFile;

/// Bound on `max |G H - I|` after fine-graining a Green matrix.
pub const GREEN_TOLERANCE: f64 = 1e-8;
/// Bound on the relative error of a coarse/fine pair round trip.
pub const ROUND_TRIP_TOLERANCE: f64 = 1e-12;
/// Bound on the gap between the ratio-path u-field and a full inversion.
pub const VALIDATION_TOLERANCE: f64 = 1e-8;

/// Parameters of level `n` of a cascade rooted at `params`.
pub fn level_params(params: &HierParams, n: u32) -> Result<HierParams> {
    HierParams::new(params.wbar() * (0.5 * params.rho()).powi(n as i32), params.rho(), n)
}

/// Five fixed λ on `Λ̃_n` (sites then `δ`).
pub fn laplace_lambdas(n: u32) -> Vec<DVector<f64>> {
    let sites = 1usize << n;
    let m = sites + 1;
    let graded = DVector::from_fn(m, |i, _| if i < sites { 0.2 * (i + 1) as f64 } else { 0.7 });
    vec![
        DVector::from_fn(m, |i, _| if i == 0 { 1.0 } else { 0.0 }),
        DVector::from_element(m, 0.5),
        DVector::from_fn(m, |i, _| if i == sites { 2.0 } else { 0.0 }),
        DVector::from_fn(m, |i, _| if i < sites { 0.3 } else { 0.0 }),
        graded,
    ]
}

/// Which sampler feeds the Laplace-transform comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplaceRoute {
    Mcmc,
    Cascade,
}

/// Monte Carlo `E[e^{-⟨λ,β⟩}]` on `Λ̃_n` against the closed form, for the
/// five [`laplace_lambdas`].
pub fn laplace_suite(params: &HierParams, n: u32, route: LaplaceRoute, draws: usize, chains: usize, stream: RngStream) -> Result<Vec<TestReport>> {
    let lp = level_params(params, n)?;
    let g = build_level_graph(&lp)?;
    let lambdas = laplace_lambdas(n);
    let est = match route {
        LaplaceRoute::Mcmc => {
            let cfg = McmcConfig::default();
            laplace_mc_parallel(|_| ChainBetaSampler::new(&g, boundary_index(n), cfg), &lambdas, draws, chains, stream)?
        }
        LaplaceRoute::Cascade => laplace_mc_parallel(|_| CascadeBetaSampler::new(*params, n), &lambdas, draws, chains, stream)?,
    };
    let mig = MigParams::new(g);
    let label = match route {
        LaplaceRoute::Mcmc => "mcmc",
        LaplaceRoute::Cascade => "cascade",
    };
    lambdas
        .iter()
        .zip(&est)
        .enumerate()
        .map(|(k, (lam, e))| Ok(TestReport::mean_match(format!("laplace L{n} {label} lambda#{}", k + 1), e, laplace_closed_form(&mig, lam)?)))
        .collect()
}

/// `(β_1, u_1)` at level `n` of `count` independent cascades; cascade `k`
/// uses `stream.substream(k)`.
pub fn leftmost_site(params: &HierParams, n: u32, count: usize, stream: RngStream) -> Result<Vec<(f64, f64)>> {
    (0..count)
        .into_par_iter()
        .map(|k| {
            let mut r = CascadeRealization::init_root(*params, stream.substream(k as u64))?;
            r.grow_to(n)?;
            let rec = r.level(n)?;
            Ok((rec.beta[0], rec.u[0]))
        })
        .collect()
}

/// `Ê[e^{s u}] = Ê[e^{(1-s) u}]` for the leftmost site at level `n`.
pub fn ward_suite(params: &HierParams, n: u32, s: f64, count: usize, stream: RngStream) -> Result<TestReport> {
    let u: Vec<f64> = leftmost_site(params, n, count, stream)?.into_iter().map(|(_, u)| u).collect();
    Ok(ward_identity_test(&u, s)?.with("level", n))
}

/// Fixed parents at level `n`, each regrown `regrowths` times: the mean of
/// `e^{u}` over a child must match the parent's `e^{u}`.
pub fn martingale_suite(params: &HierParams, n: u32, parents: usize, regrowths: usize, stream: RngStream) -> Result<TestReport> {
    let fixed: Vec<CascadeRealization> = (0..parents)
        .into_par_iter()
        .map(|j| {
            let mut r = CascadeRealization::init_root(*params, stream.substream2(0, j as u64))?;
            r.grow_to(n)?;
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let sites = 1usize << n;
    let mut parent_values = Vec::with_capacity(parents);
    let mut child_means = Vec::with_capacity(parents);
    for (j, r) in fixed.iter().enumerate() {
        let k = j % sites;
        // alternate between left and right children
        let child = 2 * k + (j / sites) % 2;
        let values: Vec<f64> = (0..regrowths)
            .into_par_iter()
            .map(|t| Ok(r.fine_grain_level(n, stream.substream2(1 + j as u64, t as u64))?.u[child].exp()))
            .collect::<Result<_>>()?;
        parent_values.push(r.level(n)?.u[k].exp());
        child_means.push(MeanEstimate::from_iid(&values)?);
    }
    paired_martingale_test(format!("one-step martingale L{n}->L{}", n + 1), &parent_values, &child_means)
}

/// `coarse_grain_pair ∘ fine_grain_pair` on `count` random `(β', w)` with
/// both log-uniform over `[1e-2, 1e2]` and `[1e-2, 1e1]`.
pub fn pair_round_trip(count: usize, stream: RngStream) -> Result<TestReport> {
    const CHUNK: usize = 4096;
    let worst = (0..count.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| -> Result<f64> {
            let mut rng = stream.substream(c as u64).rng();
            let mut worst: f64 = 0.0;
            for _ in 0..CHUNK.min(count - c * CHUNK) {
                let bp = 10f64.powf(rng.random_range(-2.0..2.0));
                let w = 10f64.powf(rng.random_range(-2.0..1.0));
                let (b1, b2, _) = fine_grain_pair(bp, w, &mut rng)?;
                worst = worst.max(((coarse_grain_pair(b1, b2, w)? - bp) / bp).abs());
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(TestReport::new("coarse/fine pair round trip", worst, ROUND_TRIP_TOLERANCE, count, 0.0))
}

/// Worst-case figures of [`green_reconstruction`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GreenReconstruction {
    pub max_deviation: f64,
    pub max_relative_deviation: f64,
    /// Entries away from the split pair that differ from the reduced matrix.
    pub off_pair_mismatches: usize,
}

/// Splits one pair of `gp` (the Green matrix on `g_fine` with `pair`
/// merged) and returns the fine Green matrix and potentials.
fn split_step(
    gp: &DMatrix<f64>,
    beta: &[f64],
    g_fine: &dyson_cascade::WeightedGraph,
    pair: (usize, usize),
    rng: &mut dyson_cascade::SimRng,
    out: &mut GreenReconstruction,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let split = PairSplit::in_graph(g_fine, pair)?;
    let map = reduction_map(g_fine.len(), &[pair.0, pair.1])?;
    let fg = fine_grain_g(gp, g_fine, &split, Some(beta[map[pair.0]]), rng)?;
    let fine_beta: Vec<f64> = (0..g_fine.len())
        .map(|i| if i == pair.0 { fg.beta.0 } else if i == pair.1 { fg.beta.1 } else { beta[map[i]] })
        .collect();
    for i in 0..g_fine.len() {
        for j in 0..g_fine.len() {
            let inside = [i, j].iter().any(|v| *v == pair.0 || *v == pair.1);
            if !inside && fg.green[(i, j)] != gp[(map[i], map[j])] {
                out.off_pair_mismatches += 1;
            }
        }
    }
    let h = assemble_h(g_fine, &DVector::from_column_slice(&fine_beta))?;
    out.max_deviation = out.max_deviation.max(identity_deviation(&fg.green, &h));
    out.max_relative_deviation = out.max_relative_deviation.max(relative_identity_deviation(&fg.green, &h));
    Ok((fg.green, fine_beta))
}

/// Fine-grains the `Λ̃_1` Green matrix of `r` into `Λ̃_2`, one pair at a
/// time. Returns the figures and the final Green matrix and potentials.
pub fn reconstruct_to_level2(r: &CascadeRealization, rng: &mut dyson_cascade::SimRng) -> Result<(GreenReconstruction, DMatrix<f64>, Vec<f64>)> {
    let g1 = build_level_graph(&r.level_params(1)?)?;
    let g2 = build_level_graph(&level_params(r.params(), 2)?)?;
    let g_mid = reduced_weights(&g2, &[2, 3])?;
    let state = SchrodingerState::new(g1, r.full_beta(1)?)?;
    let mut out = GreenReconstruction::default();
    let beta: Vec<f64> = state.beta().iter().copied().collect();
    let (gm, bm) = split_step(state.green(), &beta, &g_mid, (0, 1), rng, &mut out)?;
    let (g, b) = split_step(&gm, &bm, &g2, (2, 3), rng, &mut out)?;
    Ok((out, g, b))
}

/// [`reconstruct_to_level2`] over `count` cascades, worst case kept.
pub fn green_reconstruction(params: &HierParams, count: usize, stream: RngStream) -> Result<GreenReconstruction> {
    let parts: Vec<GreenReconstruction> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut r = CascadeRealization::init_root(*params, stream.substream2(0, k as u64))?;
            r.grow_to(1)?;
            Ok(reconstruct_to_level2(&r, &mut stream.substream2(1, k as u64).rng())?.0)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().fold(GreenReconstruction::default(), |a, b| GreenReconstruction {
        max_deviation: a.max_deviation.max(b.max_deviation),
        max_relative_deviation: a.max_relative_deviation.max(b.max_relative_deviation),
        off_pair_mismatches: a.off_pair_mismatches + b.off_pair_mismatches,
    }))
}

pub fn green_reports(rec: &GreenReconstruction, count: usize) -> Vec<TestReport> {
    vec![
        TestReport::new("green reconstruction |GH - I|", rec.max_deviation, GREEN_TOLERANCE, count, 0.0)
            .with("max_relative_deviation", format!("{:e}", rec.max_relative_deviation)),
        TestReport::new("green reconstruction off-pair entries", rec.off_pair_mismatches as f64, 0.0, count, 0.0),
    ]
}

/// Grows one cascade to `n`, re-checks its invariants and compares the
/// stored u-fields with full inversions up to level `validate_to`.
pub fn realization_checks(params: &HierParams, n: u32, validate_to: u32, stream: RngStream) -> Result<Vec<TestReport>> {
    let mut r = CascadeRealization::init_root(*params, stream)?;
    r.grow_to(n)?;
    let summary = r.check_invariants()?;
    let mut worst: f64 = 0.0;
    for level in 0..=validate_to.min(n) {
        worst = worst.max(r.validate_level(level)?);
    }
    Ok(vec![
        TestReport::new(format!("mass conservation to L{n}"), summary.max_cell_drift.max(summary.max_mass_rel), MASS_TOLERANCE, 1, 0.0)
            .with("max_beta_rel", format!("{:e}", summary.max_beta_rel)),
        TestReport::new(format!("u-field vs full inversion to L{}", validate_to.min(n)), worst, VALIDATION_TOLERANCE, 1, 0.0),
    ])
}

/// `(λ, η)` settings on `Λ̃_1`, all with `λ` constant on the split pair
/// (the identity fails otherwise).
pub fn exp_martingale_settings() -> Vec<(&'static str, [f64; 3], [f64; 3])> {
    vec![
        ("lambda=0", [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]),
        ("lambda off pair", [0.0, 0.0, 1.5], [0.0, 0.0, 1.0]),
        ("lambda=(1,1,0), eta=0", [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]),
        ("lambda=(0.5,0.5,0.3), eta on pair", [0.5, 0.5, 0.3], [1.0, 1.0, 0.0]),
        ("lambda=(2,2,0), eta on boundary", [2.0, 2.0, 0.0], [0.0, 0.0, 1.0]),
    ]
}

/// Exponential martingale over one split of a cascade root into `Λ̃_1`.
pub fn exp_martingale_suite(params: &HierParams, draws: usize, stream: RngStream) -> Result<Vec<TestReport>> {
    let root = CascadeRealization::init_root(*params, stream.substream(0))?;
    let reduced_beta = root.full_beta(0)?;
    let g_fine = build_level_graph(&level_params(params, 1)?)?;
    let split = PairSplit::in_graph(&g_fine, (0, 1))?;
    exp_martingale_settings()
        .into_iter()
        .enumerate()
        .map(|(k, (name, lam, eta))| {
            let rep = verify_exponential_martingale(
                &g_fine,
                &split,
                &reduced_beta,
                &DVector::from_row_slice(&lam),
                &DVector::from_row_slice(&eta),
                draws,
                stream.substream(1 + k as u64),
            )?;
            Ok(TestReport { name: format!("exponential martingale {name}"), ..rep })
        })
        .collect()
}

/// Root masses of `count` cascades against the inverse Gaussian law.
pub fn total_mass_suite(params: &HierParams, count: usize, stream: RngStream) -> Result<TestReport> {
    let masses: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|k| Ok(CascadeRealization::init_root(*params, stream.substream(k as u64))?.total_mass()))
        .collect::<Result<_>>()?;
    total_mass_test(&masses, params)
}

/// Two-sample tests of `β_1` and `e^{u_1}` at level `n` between a Metropolis
/// sampler of the wired model and grown cascades.
pub fn coupling_suite(params: &HierParams, n: u32, count: usize, chains: usize, stream: RngStream) -> Result<Vec<TestReport>> {
    let lp = level_params(params, n)?;
    let g = build_level_graph(&lp)?;
    let i0 = boundary_index(n);
    let cfg = McmcConfig { thinning: 20, ..McmcConfig::default() };
    let per_chain = count.div_ceil(chains);
    let mcmc: Vec<(f64, f64)> = (0..chains)
        .into_par_iter()
        .map(|c| -> Result<Vec<(f64, f64)>> {
            let mut chain = UFieldChain::new(&g, i0, cfg)?;
            let mut rng = stream.substream2(0, c as u64).rng();
            (0..per_chain)
                .map(|_| {
                    let u = chain.next_state(&mut rng);
                    let beta = beta_from_u(&g, &u, sample_gamma_half(&mut rng), i0)?;
                    Ok((beta[0], u[0].exp()))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .take(count)
        .collect();
    let cascade: Vec<(f64, f64)> = leftmost_site(params, n, count, stream.substream(1))?.into_iter().map(|(b, u)| (b, u.exp())).collect();
    let split = |v: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) { v.iter().copied().unzip() };
    let (mb, mu) = split(&mcmc);
    let (cb, cu) = split(&cascade);
    Ok(vec![
        two_sample_test(format!("coupling L{n} beta_1"), &mb, &cb)?,
        two_sample_test(format!("coupling L{n} e^u_1"), &mu, &cu)?,
    ])
}

/// Loads a stored realization through the full invariant check.
pub fn stored_realization_check(path: &std::path::Path) -> std::result::Result<TestReport, crate::error::CliError> {
    let r = RealizationFile::read(path)?.into_realization()?;
    let s = r.check_invariants()?;
    Ok(TestReport::new(format!("stored realization {}", path.display()), s.max_cell_drift.max(s.max_mass_rel), MASS_TOLERANCE, 1, 0.0)
        .with("depth", r.depth()))
}

const LAPLACE_CHAINS: usize = 8;
const COUPLING_CHAINS: usize = 8;
const MARTINGALE_PARENTS: usize = 20;
const GREEN_REPLICATES: usize = 1000;
const MIN_TOTAL_MASS: usize = 10_000;
const LAPLACE_MIN_DRAWS: usize = 1000;
const VALIDATE_TO: u32 = 8;
/// Regrowth is linear in the number of sites, so parents stay shallow.
const DEFAULT_MARTINGALE_LEVEL: u32 = 6;
/// Deepest level used by the matrix-based suites at default sizes.
const SMALL_LEVEL: u32 = 2;

/// Runs one suite at the sizes implied by `cfg`.
pub fn run_suite(suite: Suite, cfg: &RunConfig) -> std::result::Result<Vec<TestReport>, crate::error::CliError> {
    let params = cfg.params()?;
    let stream = RngStream::new(cfg.seed, 0).substream(suite.tag());
    let n = cfg.replicates;
    let reports = match suite {
        Suite::Laplace => {
            let draws = n.max(LAPLACE_MIN_DRAWS * LAPLACE_CHAINS);
            let mut out = Vec::new();
            for level in 0..=SMALL_LEVEL {
                out.extend(laplace_suite(&params, level, LaplaceRoute::Mcmc, draws, LAPLACE_CHAINS, stream.substream2(0, level as u64))?);
            }
            out.extend(laplace_suite(&params, SMALL_LEVEL, LaplaceRoute::Cascade, draws, LAPLACE_CHAINS, stream.substream(1))?);
            out
        }
        Suite::Ward => vec![ward_suite(&params, cfg.level, cfg.ward_s, n, stream)?],
        Suite::Martingale => vec![martingale_suite(&params, cfg.level.min(DEFAULT_MARTINGALE_LEVEL), MARTINGALE_PARENTS, n, stream)?],
        Suite::CoarseFine => {
            let mut out = vec![pair_round_trip(n, stream.substream(0))?];
            let count = n.min(GREEN_REPLICATES);
            out.extend(green_reports(&green_reconstruction(&params, count, stream.substream(1))?, count));
            out.extend(realization_checks(&params, cfg.level, VALIDATE_TO, stream.substream(2))?);
            if let Some(path) = &cfg.realization {
                out.push(stored_realization_check(path)?);
            }
            out
        }
        Suite::ExpMartingale => exp_martingale_suite(&params, n, stream)?,
        Suite::TotalMass => vec![total_mass_suite(&params, n.max(MIN_TOTAL_MASS), stream)?],
        Suite::Coupling => {
            let mut out = Vec::new();
            for level in 1..=cfg.level.clamp(1, 3) {
                out.extend(coupling_suite(&params, level, n, COUPLING_CHAINS, stream.substream(level as u64))?);
            }
            out
        }
    };
    Ok(reports)
}
