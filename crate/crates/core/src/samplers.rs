//! Samplers for the β- and u-fields on arbitrary finite graphs, and the
//! closed-form Laplace transform they are checked against.
//!
//! The u-field sampler is a single-site Metropolis chain. It is only a
//! cross-check; the exact sampler on the hierarchical lattice is the cascade.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hier_graph::WeightedGraph;
use crate::rng::{RngStream, SimRng};
use crate::schrodinger::{beta_from_u, log_cofactor};
use crate::stats::{batch_means, default_batches, MeanEstimate};

/// Draw with density `e^{-t} / √(π t)`.
pub fn sample_gamma_half<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Gamma::new(0.5, 1.0).expect("valid Gamma parameters").sample(rng)
}

/// Parameters of the multivariate inverse Gaussian law `ν^{W,θ,η}` with
/// `θ ≡ 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MigParams {
    graph: WeightedGraph,
    eta: DVector<f64>,
}

impl MigParams {
    /// Boundary weights are taken from the graph; absent boundary means `η = 0`.
    pub fn new(graph: WeightedGraph) -> Self {
        let eta = graph.boundary().cloned().unwrap_or_else(|| DVector::zeros(graph.len()));
        Self { graph, eta }
    }

    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn theta(&self) -> DVector<f64> {
        DVector::from_element(self.graph.len(), 1.0)
    }
}

/// `E[e^{-⟨λ,β⟩}]`, summing edges once each.
pub fn laplace_closed_form(p: &MigParams, lambda: &DVector<f64>) -> Result<f64> {
    let n = p.graph.len();
    if lambda.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: lambda.len() });
    }
    if let Some(bad) = lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::OutOfRange { what: "lambda component", value: bad.to_string() });
    }
    let r: Vec<f64> = lambda.iter().map(|l| (1.0 + l).sqrt()).collect();
    let w = p.graph.weights();
    let mut log = 0.0;
    for i in 0..n {
        for j in 0..i {
            if w[(i, j)] > 0.0 {
                log -= w[(i, j)] * (r[i] * r[j] - 1.0);
            }
        }
        log -= p.eta[i] * (r[i] - 1.0);
        log -= r[i].ln();
    }
    Ok(log.exp())
}

/// Metropolis tuning and output spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcConfig {
    /// Sweeps discarded while the proposal scales adapt.
    pub burn_in: usize,
    /// Sweeps between returned states.
    pub thinning: usize,
    pub initial_step: f64,
    /// Target acceptance band used during burn-in.
    pub acceptance: (f64, f64),
    /// Sweeps between scale adjustments during burn-in.
    pub tune_every: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { burn_in: 10_000, thinning: 10, initial_step: 1.0, acceptance: (0.3, 0.5), tune_every: 100 }
    }
}

/// Extends a graph with boundary weights by one exterior vertex carrying them.
fn with_exterior(g: &WeightedGraph) -> Result<(DMatrix<f64>, Option<usize>)> {
    match g.boundary() {
        Some(eta) if eta.iter().any(|e| *e > 0.0) => {
            let n = g.len();
            let mut w = DMatrix::zeros(n + 1, n + 1);
            w.view_mut((0, 0), (n, n)).copy_from(g.weights());
            for i in 0..n {
                w[(i, n)] = eta[i];
                w[(n, i)] = eta[i];
            }
            Ok((w, Some(n)))
        }
        _ => Ok((g.weights().clone(), None)),
    }
}

/// Single-site Gaussian-proposal Metropolis chain for the pinned u-field
/// with log-density `-Σu - Σ_{i<j} W_ij (cosh(u_i - u_j) - 1) + ½ ln D(W,u)`.
///
/// Boundary weights become links to one extra exterior vertex, which is free
/// like the others; the returned field is restricted to the original vertices.
#[derive(Debug, Clone)]
pub struct UFieldChain {
    w: DMatrix<f64>,
    n_graph: usize,
    i0: usize,
    u: Vec<f64>,
    step: Vec<f64>,
    log_d: f64,
    buf: Vec<f64>,
    accepted: Vec<u32>,
    proposed: Vec<u32>,
    config: McmcConfig,
    tuned: bool,
}

impl UFieldChain {
    pub fn new(g: &WeightedGraph, i0: usize, config: McmcConfig) -> Result<Self> {
        if i0 >= g.len() {
            return Err(Error::OutOfRange { what: "pinning vertex", value: i0.to_string() });
        }
        if config.thinning == 0 || config.tune_every == 0 || !(config.initial_step > 0.0) {
            return Err(Error::InvalidParameter(format!("{config:?}")));
        }
        let (w, _) = with_exterior(g)?;
        let n = w.nrows();
        let u = vec![0.0; n];
        let mut buf = Vec::new();
        let log_d = log_cofactor(&w, &u, i0, &mut buf).ok_or(Error::Disconnected)?;
        Ok(Self {
            w,
            n_graph: g.len(),
            i0,
            u,
            step: vec![config.initial_step; n],
            log_d,
            buf,
            accepted: vec![0; n],
            proposed: vec![0; n],
            config,
            tuned: false,
        })
    }

    /// One Metropolis update of every free coordinate in index order.
    pub fn sweep(&mut self, rng: &mut SimRng) {
        let n = self.u.len();
        for i in 0..n {
            if i == self.i0 {
                continue;
            }
            let old = self.u[i];
            let z: f64 = StandardNormal.sample(rng);
            let new = old + self.step[i] * z;
            let mut delta = -(new - old);
            for j in 0..n {
                let wij = self.w[(i, j)];
                if wij > 0.0 {
                    delta -= wij * ((new - self.u[j]).cosh() - (old - self.u[j]).cosh());
                }
            }
            self.u[i] = new;
            let accept = match log_cofactor(&self.w, &self.u, self.i0, &mut self.buf) {
                Some(log_d) => {
                    let log_ratio = delta + 0.5 * (log_d - self.log_d);
                    let ok = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
                    if ok {
                        self.log_d = log_d;
                    }
                    ok
                }
                None => false,
            };
            if !accept {
                self.u[i] = old;
            }
            self.proposed[i] += 1;
            self.accepted[i] += accept as u32;
        }
    }

    /// Runs the burn-in, rescaling each coordinate's step toward the
    /// acceptance band. Idempotent.
    pub fn burn_in(&mut self, rng: &mut SimRng) {
        if self.tuned {
            return;
        }
        let (lo, hi) = self.config.acceptance;
        for s in 1..=self.config.burn_in {
            self.sweep(rng);
            if s % self.config.tune_every == 0 {
                for i in 0..self.u.len() {
                    if self.proposed[i] == 0 {
                        continue;
                    }
                    let rate = self.accepted[i] as f64 / self.proposed[i] as f64;
                    if rate < lo {
                        self.step[i] *= 0.8;
                    } else if rate > hi {
                        self.step[i] *= 1.25;
                    }
                    self.accepted[i] = 0;
                    self.proposed[i] = 0;
                }
            }
        }
        self.accepted.iter_mut().for_each(|a| *a = 0);
        self.proposed.iter_mut().for_each(|p| *p = 0);
        self.tuned = true;
    }

    /// Advances `thinning` sweeps (after burn-in) and returns the u-field on
    /// the original vertices.
    pub fn next_state(&mut self, rng: &mut SimRng) -> DVector<f64> {
        self.burn_in(rng);
        for _ in 0..self.config.thinning {
            self.sweep(rng);
        }
        self.current()
    }

    pub fn current(&self) -> DVector<f64> {
        DVector::from_fn(self.n_graph, |i, _| self.u[i] - self.u[self.i0])
    }

    /// Post-burn-in acceptance rate over all free coordinates.
    pub fn acceptance_rate(&self) -> f64 {
        let p: u32 = self.proposed.iter().sum();
        if p == 0 {
            0.0
        } else {
            self.accepted.iter().sum::<u32>() as f64 / p as f64
        }
    }

    pub fn steps(&self) -> &[f64] {
        &self.step
    }
}

/// One approximate draw from the pinned u-field law after `sweeps` sweeps,
/// of which the configured burn-in count tune the proposals.
pub fn sample_u_mcmc(g: &WeightedGraph, i0: usize, sweeps: usize, config: McmcConfig, rng: &mut SimRng) -> Result<DVector<f64>> {
    if sweeps < config.burn_in {
        return Err(Error::InsufficientSamples { required: config.burn_in, got: sweeps });
    }
    let mut chain = UFieldChain::new(g, i0, config)?;
    chain.burn_in(rng);
    for _ in config.burn_in..sweeps {
        chain.sweep(rng);
    }
    Ok(chain.current())
}

/// `β` from an MCMC u-field and an independent `γ ~ Gamma(½)`.
pub fn sample_beta_direct(g: &WeightedGraph, i0: usize, sweeps: usize, config: McmcConfig, rng: &mut SimRng) -> Result<DVector<f64>> {
    reject_boundary(g)?;
    let u = sample_u_mcmc(g, i0, sweeps, config, rng)?;
    let gamma = sample_gamma_half(rng);
    beta_from_u(g, &u, gamma, i0)
}

fn reject_boundary(g: &WeightedGraph) -> Result<()> {
    if g.boundary().is_some_and(|eta| eta.iter().any(|e| *e > 0.0)) {
        return Err(Error::InvalidParameter("direct β sampling takes graphs without boundary weights".into()));
    }
    Ok(())
}

/// Anything that produces successive β-field draws.
pub trait BetaSampler {
    fn draw(&mut self, rng: &mut SimRng) -> Result<DVector<f64>>;
}

/// Successive thinned states of one u-chain, each paired with a fresh `γ`.
#[derive(Debug, Clone)]
pub struct ChainBetaSampler {
    graph: WeightedGraph,
    chain: UFieldChain,
}

impl ChainBetaSampler {
    pub fn new(g: &WeightedGraph, i0: usize, config: McmcConfig) -> Result<Self> {
        reject_boundary(g)?;
        Ok(Self { graph: g.clone(), chain: UFieldChain::new(g, i0, config)? })
    }

    pub fn chain(&self) -> &UFieldChain {
        &self.chain
    }
}

impl BetaSampler for ChainBetaSampler {
    fn draw(&mut self, rng: &mut SimRng) -> Result<DVector<f64>> {
        let u = self.chain.next_state(rng);
        let gamma = sample_gamma_half(rng);
        beta_from_u(&self.graph, &u, gamma, self.chain.i0)
    }
}

/// Mean and SE of `e^{-⟨λ,β⟩}` for each λ over `n` draws of one sampler.
///
/// SEs use batch means so correlated chains are handled.
pub fn laplace_mc<S: BetaSampler + ?Sized>(sampler: &mut S, lambdas: &[DVector<f64>], n: usize, rng: &mut SimRng) -> Result<Vec<MeanEstimate>> {
    const MIN_DRAWS: usize = 1000;
    if n < MIN_DRAWS {
        return Err(Error::InsufficientSamples { required: MIN_DRAWS, got: n });
    }
    let mut values = vec![Vec::with_capacity(n); lambdas.len()];
    for _ in 0..n {
        let beta = sampler.draw(rng)?;
        for (lam, out) in lambdas.iter().zip(values.iter_mut()) {
            if lam.len() != beta.len() {
                return Err(Error::DimensionMismatch { expected: beta.len(), got: lam.len() });
            }
            out.push((-lam.dot(&beta)).exp());
        }
    }
    values.iter().map(|v| MeanEstimate::from_batches(v)).collect()
}

/// [`laplace_mc`] over `chains` independent samplers run in parallel, each
/// on `stream.substream(chain)`. Results do not depend on the thread count.
pub fn laplace_mc_parallel<S, F>(make: F, lambdas: &[DVector<f64>], n: usize, chains: usize, stream: RngStream) -> Result<Vec<MeanEstimate>>
where
    S: BetaSampler,
    F: Fn(usize) -> Result<S> + Sync,
{
    if chains == 0 {
        return Err(Error::InvalidParameter("at least one chain".into()));
    }
    let per_chain = n.div_ceil(chains);
    let batches = (default_batches(n) / chains).max(1);
    let parts: Vec<Vec<(f64, Vec<f64>)>> = (0..chains)
        .into_par_iter()
        .map(|c| -> Result<Vec<(f64, Vec<f64>)>> {
            let mut sampler = make(c)?;
            let mut rng = stream.substream(c as u64).rng();
            let mut values = vec![Vec::with_capacity(per_chain); lambdas.len()];
            for _ in 0..per_chain {
                let beta = sampler.draw(&mut rng)?;
                for (lam, out) in lambdas.iter().zip(values.iter_mut()) {
                    out.push((-lam.dot(&beta)).exp());
                }
            }
            values
                .iter()
                .map(|v| Ok((v.iter().sum::<f64>(), batch_means(v, batches)?)))
                .collect()
        })
        .collect::<Result<_>>()?;
    (0..lambdas.len())
        .map(|k| {
            let total: f64 = parts.iter().map(|p| p[k].0).sum();
            let all_batches: Vec<f64> = parts.iter().flat_map(|p| p[k].1.iter().copied()).collect();
            let mut est = MeanEstimate::from_iid(&all_batches)?;
            est.mean = total / (per_chain * chains) as f64;
            est.n = per_chain * chains;
            Ok(est)
        })
        .collect()
}
