//! Adaptive parallel-tempering Metropolis-within-Gibbs sampler.
//!
//! `L` chains run the same block-wise random-walk Metropolis kernel against
//! increasingly flattened versions of the target: chain `l` accepts a block
//! proposal with probability `min{1, [target ratio]^beta_l}` where
//! `1 = beta_0 > beta_1 > ... > beta_{L-1} > 0`. After every sweep one
//! adjacent pair is proposed for a state swap, which lets mode discoveries at
//! hot temperatures percolate down to the cold chain that targets the actual
//! posterior.
//!
//! Three things adapt with a diminishing stepsize `(g+1)^-nu`:
//! per-(block, temperature) proposal log-scales driven toward fixed
//! acceptance targets, per-(block, temperature) covariance estimates driven
//! toward the local target covariance, and the log-spacings of the reciprocal
//! inverse-temperatures driven toward a fixed swap rate.
//!
//! The engine is generic over [`Target`], which supplies an unnormalised log
//! density in unconstrained space (any change-of-variables Jacobian folded
//! in) and the mapping back to natural coordinates for recording draws.
//! [`run`] wires the earthquake posterior into the engine.

use crate::model::{self, Dataset, PriorConfig, WaveConstants};
use crate::reparam::{self, TransformedParams};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

/// Unnormalised log target over a block-structured unconstrained space.
pub trait Target: Sync {
    /// Dimension of each Metropolis block.
    fn block_dims(&self) -> Vec<usize>;
    /// Log density at `x` (unconstrained coordinates, Jacobian included).
    /// Non-finite values mark zero-probability regions; proposals there are
    /// rejected.
    fn log_density(&self, x: &[f64]) -> f64;
    /// Natural-space coordinates recorded in the output draws.
    fn to_natural(&self, x: &[f64]) -> Vec<f64>;

    fn dim(&self) -> usize {
        self.block_dims().iter().sum()
    }
}

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("chain initialisation failed: {0}")]
    Init(String),
}

/// Sampler settings. Defaults follow the operational setup: 50000 iterations
/// with the first 25000 discarded, 10 temperatures, block acceptance targets
/// (0.23, 0.41, 0.41), swap target 0.41 and adaptation exponent 0.6.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub temperatures: usize,
    /// Target Metropolis acceptance rate per block.
    pub target_accept: Vec<f64>,
    /// Adaptation stepsize exponent `nu`; stepsizes are `(g+1)^-nu`.
    pub adapt_exponent: f64,
    /// Target acceptance rate of adjacent-state swaps.
    pub target_swap: f64,
    pub seed: u64,
    /// Sweep the temperature chains concurrently. Output is bit-identical to
    /// the sequential schedule: every chain owns its RNG stream.
    pub parallel: bool,
    /// Keep the per-iteration telemetry (acceptance probabilities, swap
    /// events, ladder). Disable for very long runs where only draws matter.
    pub record_telemetry: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            iterations: 50_000,
            burn_in: 25_000,
            temperatures: 10,
            target_accept: vec![0.23, 0.41, 0.41],
            adapt_exponent: 0.6,
            target_swap: 0.41,
            seed: 0,
            parallel: true,
            record_telemetry: true,
        }
    }
}

impl SamplerConfig {
    fn validate(&self, n_blocks: usize) -> Result<(), SamplerError> {
        if self.burn_in == 0 || self.burn_in >= self.iterations {
            return Err(SamplerError::InvalidConfig(format!(
                "burn-in {} must satisfy 0 < burn_in < iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.temperatures == 0 {
            return Err(SamplerError::InvalidConfig("need at least one temperature".into()));
        }
        if self.target_accept.len() != n_blocks {
            return Err(SamplerError::InvalidConfig(format!(
                "{} acceptance targets for {} blocks",
                self.target_accept.len(),
                n_blocks
            )));
        }
        if self.target_accept.iter().any(|t| !(0.0 < *t && *t < 1.0)) {
            return Err(SamplerError::InvalidConfig("acceptance targets must lie in (0,1)".into()));
        }
        if !(self.adapt_exponent > 0.5 && self.adapt_exponent <= 1.0) {
            return Err(SamplerError::InvalidConfig(format!(
                "adaptation exponent {} outside (0.5, 1]",
                self.adapt_exponent
            )));
        }
        if !(0.0 < self.target_swap && self.target_swap < 1.0) {
            return Err(SamplerError::InvalidConfig("swap target must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// The inverse-temperature ladder. `betas[0] = 1` always; the remaining
/// levels are derived from the log-spacings via
/// `1/beta_{l+1} = 1/beta_l + exp(rho_l)`, which keeps the ladder strictly
/// decreasing no matter what the adaptation does to `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperLadder {
    betas: Vec<f64>,
    rhos: Vec<f64>,
}

impl TemperLadder {
    /// Ladder of `levels` temperatures with all log-spacings at the standard
    /// initial value 1.
    pub fn new(levels: usize) -> Self {
        Self::from_rhos(vec![1.0; levels.saturating_sub(1)])
    }

    pub fn from_rhos(rhos: Vec<f64>) -> Self {
        let mut ladder = Self {
            betas: vec![1.0; rhos.len() + 1],
            rhos,
        };
        ladder.recompute();
        ladder
    }

    fn recompute(&mut self) {
        self.betas[0] = 1.0;
        let mut reciprocal = 1.0;
        for (l, rho) in self.rhos.iter().enumerate() {
            reciprocal += rho.exp();
            self.betas[l + 1] = 1.0 / reciprocal;
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn rhos(&self) -> &[f64] {
        &self.rhos
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Nudges the log-spacing of the attempted pair toward the swap target
    /// and rebuilds the ladder.
    pub fn adapt(&mut self, pair: usize, stepsize: f64, omega: f64, target_swap: f64) {
        self.rhos[pair] += stepsize * (omega - target_swap);
        self.recompute();
    }

    pub fn is_monotone(&self) -> bool {
        self.betas[0] == 1.0
            && self.betas.windows(2).all(|w| w[0] > w[1])
            && *self.betas.last().unwrap() > 0.0
    }
}

/// Per-(block, temperature) adaptation state: proposal log-scale `s`, running
/// covariance estimate `R`, running mean, and the Cholesky factor of the
/// regularised covariance used to draw proposal steps. The proposal
/// covariance is `exp(s) * R`.
#[derive(Debug, Clone)]
pub struct AdaptState {
    dim: usize,
    log_scale: f64,
    cov: Vec<f64>,
    mean: Vec<f64>,
    chol: Vec<f64>,
}

/// Diagonal floor added to `R` before factorisation, guarding degenerate
/// covariance estimates early in the run.
const COV_FLOOR: f64 = 1e-12;

fn cholesky(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    Some(l)
}

impl AdaptState {
    /// Fresh state with diagonal covariance `cov_diag`, the given log-scale
    /// and the running mean at the chain's starting block coordinates.
    pub fn new(cov_diag: &[f64], log_scale: f64, start: &[f64]) -> Self {
        let dim = cov_diag.len();
        assert_eq!(start.len(), dim);
        let mut cov = vec![0.0; dim * dim];
        for (i, v) in cov_diag.iter().enumerate() {
            cov[i * dim + i] = *v;
        }
        let mut state = Self {
            dim,
            log_scale,
            cov,
            mean: start.to_vec(),
            chol: vec![0.0; dim * dim],
        };
        state.refresh_chol();
        state
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    fn refresh_chol(&mut self) {
        let mut floor = COV_FLOOR;
        loop {
            let mut reg = self.cov.clone();
            for i in 0..self.dim {
                reg[i * self.dim + i] += floor;
            }
            if let Some(l) = cholesky(&reg, self.dim) {
                self.chol = l;
                return;
            }
            floor *= 100.0;
            if floor > 1.0 {
                // Covariance estimate is numerically broken; fall back to a
                // small isotropic proposal rather than aborting the chain.
                self.chol = vec![0.0; self.dim * self.dim];
                for i in 0..self.dim {
                    self.chol[i * self.dim + i] = 1e-3;
                }
                return;
            }
        }
    }

    /// Draws a proposal step `eps ~ N(0, exp(s) R)` into `out`.
    pub fn sample_step(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let scale = (self.log_scale / 2.0).exp();
        for i in (0..self.dim).rev() {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.chol[i * self.dim + j] * out[j];
            }
            out[i] = scale * acc;
        }
    }
}

/// One adaptation update after a block step at iteration `g`:
/// the log-scale moves by `(g+1)^-nu (xi - target)`, the covariance and mean
/// follow the convex recursions evaluated at the post-decision block
/// coordinates, and the proposal factor is refreshed.
pub fn adapt_update(
    adapt: &mut AdaptState,
    xi: f64,
    block_position: &[f64],
    g: usize,
    nu: f64,
    target_accept: f64,
) {
    let step = (g as f64 + 1.0).powf(-nu);
    adapt.log_scale += step * (xi - target_accept);
    let dim = adapt.dim;
    for i in 0..dim {
        let di = block_position[i] - adapt.mean[i];
        for j in 0..dim {
            let dj = block_position[j] - adapt.mean[j];
            adapt.cov[i * dim + j] = (1.0 - step) * adapt.cov[i * dim + j] + step * di * dj;
        }
    }
    for i in 0..dim {
        adapt.mean[i] = (1.0 - step) * adapt.mean[i] + step * block_position[i];
    }
    adapt.refresh_chol();
}

/// One chain's current unconstrained position and its cached log density.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub position: Vec<f64>,
    pub log_density: f64,
}

/// One tempered random-walk Metropolis update of a single block.
///
/// Proposes `x' = x + eps` on the block coordinates, accepts with probability
/// `min{1, exp(beta * (log_density(x') - log_density(x)))}` and returns the
/// acceptance along with the acceptance probability `xi` that feeds the
/// adaptation (0 when the proposal lands on a non-finite density).
pub fn mwg_block_step<T: Target + ?Sized>(
    target: &T,
    chain: &mut ChainState,
    scratch: &mut Vec<f64>,
    block: std::ops::Range<usize>,
    adapt: &AdaptState,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> (bool, f64) {
    scratch.clear();
    scratch.extend_from_slice(&chain.position);
    let mut step = vec![0.0; block.len()];
    adapt.sample_step(rng, &mut step);
    for (offset, delta) in block.clone().zip(step.iter()) {
        scratch[offset] += delta;
    }
    let proposed = target.log_density(scratch);
    let xi = if proposed.is_finite() {
        (beta * (proposed - chain.log_density)).min(0.0).exp()
    } else {
        0.0
    };
    let u: f64 = rng.random();
    let accepted = u < xi;
    if accepted {
        chain.position.copy_from_slice(scratch);
        chain.log_density = proposed;
    }
    (accepted, xi)
}

/// Acceptance probability of swapping the states at levels `j` (colder) and
/// `j + 1`: `min{1, [p(x_{j+1}) / p(x_j)]^(beta_j - beta_{j+1})}` on the
/// untempered log densities.
pub fn swap_probability(beta_cold: f64, beta_hot: f64, lp_cold: f64, lp_hot: f64) -> f64 {
    ((beta_cold - beta_hot) * (lp_hot - lp_cold)).min(0.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapEvent {
    /// Colder level of the attempted pair.
    pub pair: usize,
    pub probability: f64,
    pub accepted: bool,
}

/// One adjacent-pair swap attempt followed by the ladder adaptation. States
/// move between temperature levels; adaptation statistics stay put.
pub fn swap_step(
    chains: &mut [ChainState],
    ladder: &mut TemperLadder,
    g: usize,
    nu: f64,
    target_swap: f64,
    rng: &mut ChaCha8Rng,
) -> SwapEvent {
    let pair = rng.random_range(0..chains.len() - 1);
    let betas = ladder.betas();
    let omega = swap_probability(
        betas[pair],
        betas[pair + 1],
        chains[pair].log_density,
        chains[pair + 1].log_density,
    );
    let u: f64 = rng.random();
    let accepted = u < omega;
    if accepted {
        chains.swap(pair, pair + 1);
    }
    let step = (g as f64 + 1.0).powf(-nu);
    ladder.adapt(pair, step, omega, target_swap);
    SwapEvent {
        pair,
        probability: omega,
        accepted,
    }
}

/// Per-iteration telemetry: coldest-chain block acceptance probabilities, the
/// swap attempt (absent for single-temperature runs) and the ladder after the
/// iteration's adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTelemetry {
    pub iteration: usize,
    pub block_xi: Vec<f64>,
    pub swap: Option<SwapEvent>,
    pub betas: Vec<f64>,
}

/// Sampler result: post-burn-in natural-space draws of the coldest chain plus
/// acceptance/swap telemetry, the final ladder and the seed that produced it.
#[derive(Debug, Clone)]
pub struct SamplerOutput {
    pub draws: Vec<Vec<f64>>,
    pub telemetry: Vec<IterationTelemetry>,
    pub ladder: TemperLadder,
    pub seed: u64,
}

impl SamplerOutput {
    /// Mean acceptance probability of `block` on the coldest chain over the
    /// trailing `window` iterations.
    pub fn block_acceptance_rate(&self, block: usize, window: usize) -> f64 {
        let tail = self.telemetry.len().saturating_sub(window);
        let slice = &self.telemetry[tail..];
        slice.iter().map(|t| t.block_xi[block]).sum::<f64>() / slice.len().max(1) as f64
    }

    /// Mean swap acceptance probability over the trailing `window`
    /// iterations.
    pub fn swap_acceptance_rate(&self, window: usize) -> f64 {
        let tail = self.telemetry.len().saturating_sub(window);
        let probs: Vec<f64> = self.telemetry[tail..]
            .iter()
            .filter_map(|t| t.swap.map(|s| s.probability))
            .collect();
        probs.iter().sum::<f64>() / probs.len().max(1) as f64
    }

    /// Column `index` of the draws as its own vector.
    pub fn column(&self, index: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[index]).collect()
    }
}

/// Starting configuration for [`run_target`]: one unconstrained position per
/// temperature, the initial proposal covariance diagonal per block and the
/// shared initial log-scale.
#[derive(Debug, Clone)]
pub struct ChainInit {
    pub positions: Vec<Vec<f64>>,
    pub cov_diag: Vec<Vec<f64>>,
    pub log_scale: f64,
}

const STREAM_SWEEP: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_SWAP: u64 = 2;

fn stream_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | index);
    rng
}

struct Worker {
    chain: ChainState,
    adapts: Vec<AdaptState>,
    rng: ChaCha8Rng,
    scratch: Vec<f64>,
    xi: Vec<f64>,
}

impl Worker {
    fn sweep<T: Target + ?Sized>(
        &mut self,
        target: &T,
        blocks: &[std::ops::Range<usize>],
        beta: f64,
        g: usize,
        nu: f64,
        target_accept: &[f64],
    ) {
        for (k, block) in blocks.iter().enumerate() {
            let (_, xi) = mwg_block_step(
                target,
                &mut self.chain,
                &mut self.scratch,
                block.clone(),
                &self.adapts[k],
                beta,
                &mut self.rng,
            );
            adapt_update(
                &mut self.adapts[k],
                xi,
                &self.chain.position[block.clone()],
                g,
                nu,
                target_accept[k],
            );
            self.xi[k] = xi;
        }
    }
}

/// Runs the sampler against an arbitrary [`Target`]. Fixed seeds give
/// bit-identical output regardless of `cfg.parallel`.
pub fn run_target<T: Target + ?Sized>(
    target: &T,
    init: &ChainInit,
    cfg: &SamplerConfig,
) -> Result<SamplerOutput, SamplerError> {
    let dims = target.block_dims();
    cfg.validate(dims.len())?;
    let total: usize = dims.iter().sum();
    let mut blocks = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for d in &dims {
        blocks.push(offset..offset + d);
        offset += d;
    }

    if init.positions.len() != cfg.temperatures {
        return Err(SamplerError::Init(format!(
            "{} starting positions for {} temperatures",
            init.positions.len(),
            cfg.temperatures
        )));
    }
    if init.cov_diag.len() != dims.len()
        || init.cov_diag.iter().zip(&dims).any(|(c, d)| c.len() != *d)
    {
        return Err(SamplerError::Init("covariance diagonal shape mismatch".into()));
    }

    let mut workers = Vec::with_capacity(cfg.temperatures);
    for (l, pos) in init.positions.iter().enumerate() {
        if pos.len() != total {
            return Err(SamplerError::Init(format!(
                "chain {l} has dimension {} instead of {total}",
                pos.len()
            )));
        }
        let log_density = target.log_density(pos);
        if !log_density.is_finite() {
            return Err(SamplerError::Init(format!(
                "chain {l} starts at a point with non-finite log density"
            )));
        }
        let adapts = blocks
            .iter()
            .enumerate()
            .map(|(k, b)| AdaptState::new(&init.cov_diag[k], init.log_scale, &pos[b.clone()]))
            .collect();
        workers.push(Worker {
            chain: ChainState {
                position: pos.clone(),
                log_density,
            },
            adapts,
            rng: stream_rng(cfg.seed, STREAM_SWEEP, l as u64),
            scratch: Vec::with_capacity(total),
            xi: vec![0.0; dims.len()],
        });
    }

    let mut ladder = TemperLadder::new(cfg.temperatures);
    let mut swap_rng = stream_rng(cfg.seed, STREAM_SWAP, 0);
    let mut draws = Vec::with_capacity(cfg.iterations - cfg.burn_in);
    let mut telemetry = if cfg.record_telemetry {
        Vec::with_capacity(cfg.iterations)
    } else {
        Vec::new()
    };

    for g in 1..=cfg.iterations {
        let betas = ladder.betas().to_vec();
        if cfg.parallel && cfg.temperatures > 1 {
            workers
                .par_iter_mut()
                .zip(betas.par_iter())
                .for_each(|(w, beta)| {
                    w.sweep(target, &blocks, *beta, g, cfg.adapt_exponent, &cfg.target_accept);
                });
        } else {
            for (w, beta) in workers.iter_mut().zip(betas.iter()) {
                w.sweep(target, &blocks, *beta, g, cfg.adapt_exponent, &cfg.target_accept);
            }
        }

        let swap = if cfg.temperatures > 1 {
            // Temporarily detach the chain states so the swap can reorder
            // them without touching the level-bound adaptation state.
            let mut states: Vec<ChainState> = workers
                .iter_mut()
                .map(|w| std::mem::replace(&mut w.chain, ChainState { position: Vec::new(), log_density: 0.0 }))
                .collect();
            let event = swap_step(
                &mut states,
                &mut ladder,
                g,
                cfg.adapt_exponent,
                cfg.target_swap,
                &mut swap_rng,
            );
            for (w, s) in workers.iter_mut().zip(states) {
                w.chain = s;
            }
            Some(event)
        } else {
            None
        };

        debug_assert!(ladder.is_monotone());

        if cfg.record_telemetry {
            telemetry.push(IterationTelemetry {
                iteration: g,
                block_xi: workers[0].xi.clone(),
                swap,
                betas: ladder.betas().to_vec(),
            });
        }
        if g > cfg.burn_in {
            draws.push(target.to_natural(&workers[0].chain.position));
        }
    }

    Ok(SamplerOutput {
        draws,
        telemetry,
        ladder,
        seed: cfg.seed,
    })
}

/// The earthquake posterior as a sampler target: three blocks
/// (lat, lon, depth, t0), (alpha), (pi) in unconstrained coordinates, log
/// density = log posterior + log |Jacobian|.
pub struct PosteriorTarget<'a> {
    pub data: &'a Dataset,
    pub prior: &'a PriorConfig,
    pub constants: &'a WaveConstants,
}

impl Target for PosteriorTarget<'_> {
    fn block_dims(&self) -> Vec<usize> {
        vec![4, 1, 1]
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let t = TransformedParams::from_flat(x);
        let phi = reparam::to_natural(&t);
        let lp = model::log_posterior(&phi, self.data, self.prior, self.constants);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let total = lp + reparam::log_abs_jacobian_total(&t);
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }

    fn to_natural(&self, x: &[f64]) -> Vec<f64> {
        let phi = reparam::to_natural(&TransformedParams::from_flat(x));
        vec![
            phi.theta.epicentre.lat(),
            phi.theta.epicentre.lon(),
            phi.theta.depth_km,
            phi.theta.origin_time_s,
            phi.alpha,
            phi.pi,
        ]
    }
}

/// Draws the starting state of every temperature chain: epicentre uniform on
/// a 2-degree box around the detection location, depth uniform on [5, 100],
/// origin time uniform on a 20-second window centred on the detection time,
/// wave weight and cure fraction uniform on (0, 1); everything mapped to
/// unconstrained space. Proposal covariances start at diag(0.1, 0.1, 10, 1)
/// for the source block and 0.1 for the scalar blocks, log-scales at 0.1.
pub fn init_chains(
    data: &Dataset,
    _prior: &PriorConfig,
    cfg: &SamplerConfig,
) -> Result<ChainInit, SamplerError> {
    let z_star = data.detection_location();
    let t_star = data.detection_time_s();
    let mut positions = Vec::with_capacity(cfg.temperatures);
    for l in 0..cfg.temperatures {
        let mut rng = stream_rng(cfg.seed, STREAM_INIT, l as u64);
        let lat = (z_star.lat() + rng.random::<f64>() * 2.0 - 1.0).clamp(-89.999_999, 89.999_999);
        let lon_raw = z_star.lon() + rng.random::<f64>() * 2.0 - 1.0;
        let mut lon = crate::geo::GeoPoint::new(0.0, lon_raw)
            .map_err(|e| SamplerError::Init(e.to_string()))?
            .lon();
        if lon >= 180.0 {
            lon = 179.999_999;
        }
        let depth = (5.0 + rng.random::<f64>() * 95.0).clamp(5.0 + 1e-9, 100.0 - 1e-9);
        let t0 = (t_star - 10.0 + rng.random::<f64>() * 20.0).max(1e-3);
        let alpha = rng.random::<f64>().clamp(1e-9, 1.0 - 1e-9);
        let pi = rng.random::<f64>().clamp(1e-9, 1.0 - 1e-9);
        let phi = model::ModelParams {
            theta: model::EarthquakeParams {
                epicentre: crate::geo::GeoPoint::new(lat, lon)
                    .map_err(|e| SamplerError::Init(e.to_string()))?,
                depth_km: depth,
                origin_time_s: t0,
            },
            alpha,
            pi,
        };
        let x = reparam::to_unconstrained(&phi).map_err(|e| SamplerError::Init(e.to_string()))?;
        positions.push(x.to_flat().to_vec());
    }
    Ok(ChainInit {
        positions,
        cov_diag: vec![vec![0.1, 0.1, 10.0, 1.0], vec![0.1], vec![0.1]],
        log_scale: 0.1,
    })
}

/// Fits the model: initialises the chains from the dataset and runs the
/// tempered sampler against the posterior.
pub fn run(
    data: &Dataset,
    prior: &PriorConfig,
    constants: &WaveConstants,
    cfg: &SamplerConfig,
) -> Result<SamplerOutput, SamplerError> {
    let target = PosteriorTarget {
        data,
        prior,
        constants,
    };
    let init = init_chains(data, prior, cfg)?;
    run_target(&target, &init, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::model::{EarthquakeParams, ModelParams, SmartphoneRecord};
    use crate::numeric;
    use approx::assert_abs_diff_eq;

    /// Standard normal in one block; no transform, no Jacobian.
    struct StdNormal;

    impl Target for StdNormal {
        fn block_dims(&self) -> Vec<usize> {
            vec![1]
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            -0.5 * x[0] * x[0]
        }
        fn to_natural(&self, x: &[f64]) -> Vec<f64> {
            x.to_vec()
        }
    }

    struct Shifted<T>(T, f64);

    impl<T: Target> Target for Shifted<T> {
        fn block_dims(&self) -> Vec<usize> {
            self.0.block_dims()
        }
        fn log_density(&self, x: &[f64]) -> f64 {
            self.0.log_density(x) + self.1
        }
        fn to_natural(&self, x: &[f64]) -> Vec<f64> {
            self.0.to_natural(x)
        }
    }

    fn scalar_init(levels: usize, start: f64) -> ChainInit {
        ChainInit {
            positions: vec![vec![start]; levels],
            cov_diag: vec![vec![1.0]],
            log_scale: 0.1,
        }
    }

    fn toy_config(levels: usize) -> SamplerConfig {
        SamplerConfig {
            iterations: 4_000,
            burn_in: 1_000,
            temperatures: levels,
            target_accept: vec![0.41],
            parallel: false,
            seed: 42,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn ladder_telescopes() {
        let ladder = TemperLadder::from_rhos(vec![0.0; 9]);
        for (l, beta) in ladder.betas().iter().enumerate() {
            assert_abs_diff_eq!(*beta, 1.0 / (l as f64 + 1.0), epsilon = 1e-15);
        }
        let default = TemperLadder::new(10);
        assert_eq!(default.betas()[0], 1.0);
        assert_abs_diff_eq!(
            default.betas()[1],
            1.0 / (1.0 + std::f64::consts::E),
            epsilon = 1e-15
        );
        assert!(default.is_monotone());
    }

    #[test]
    fn swap_probability_hand_values() {
        // Posterior ratio 0.5 at spacing 0.1: 0.5^0.1.
        let omega = swap_probability(0.8, 0.7, 0.0, 0.5f64.ln());
        assert_abs_diff_eq!(omega, 0.5f64.powf(0.1), epsilon = 1e-12);
        assert_abs_diff_eq!(omega, 0.93303, epsilon = 1e-5);
        // Equal states swap with probability one.
        assert_eq!(swap_probability(0.9, 0.5, -3.0, -3.0), 1.0);
    }

    #[test]
    fn adapt_recursion_matches_hand_rolled_loop() {
        let start = [1.0, -2.0];
        let mut adapt = AdaptState::new(&[0.5, 0.25], 0.1, &start);
        // Independent straight-loop recursion.
        let nu = 0.6;
        let target = 0.3;
        let mut s = 0.1;
        let mut r = [[0.5, 0.0], [0.0, 0.25]];
        let mut mu = [1.0, -2.0];
        let xs = [[0.9, -1.5], [1.4, -2.2], [0.7, -1.9], [1.1, -2.1]];
        let xis = [0.8, 0.1, 0.4, 0.9];
        for (g, (x, xi)) in xs.iter().zip(xis.iter()).enumerate() {
            let g1 = g + 1;
            adapt_update(&mut adapt, *xi, x, g1, nu, target);
            let step = (g1 as f64 + 1.0).powf(-nu);
            s += step * (xi - target);
            for i in 0..2 {
                for j in 0..2 {
                    r[i][j] = (1.0 - step) * r[i][j] + step * (x[i] - mu[i]) * (x[j] - mu[j]);
                }
            }
            for i in 0..2 {
                mu[i] = (1.0 - step) * mu[i] + step * x[i];
            }
        }
        assert_abs_diff_eq!(adapt.log_scale(), s, epsilon = 1e-14);
        for i in 0..2 {
            assert_abs_diff_eq!(adapt.mean()[i], mu[i], epsilon = 1e-14);
            for j in 0..2 {
                assert_abs_diff_eq!(adapt.cov()[i * 2 + j], r[i][j], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn adapt_scale_moves_with_the_sign_of_the_innovation() {
        let mut adapt = AdaptState::new(&[1.0], 0.1, &[0.0]);
        adapt_update(&mut adapt, 0.41, &[0.0], 1, 0.6, 0.41);
        assert_abs_diff_eq!(adapt.log_scale(), 0.1);
        adapt_update(&mut adapt, 0.9, &[0.0], 2, 0.6, 0.41);
        assert!(adapt.log_scale() > 0.1);
        let wide = adapt.log_scale();
        adapt_update(&mut adapt, 0.0, &[0.0], 3, 0.6, 0.41);
        assert!(adapt.log_scale() < wide);
    }

    #[test]
    fn constant_position_shrinks_covariance() {
        let mut adapt = AdaptState::new(&[0.5], 0.1, &[2.0]);
        let mut expected = 0.5;
        for g in 1..=1000 {
            adapt_update(&mut adapt, 0.41, &[2.0], g, 0.6, 0.41);
            let step = (g as f64 + 1.0).powf(-0.6);
            expected *= 1.0 - step;
        }
        assert_abs_diff_eq!(adapt.cov()[0], expected, epsilon = 1e-15);
        assert!(adapt.cov()[0] < 0.01);
    }

    #[test]
    fn near_zero_proposal_accepts_with_probability_one() {
        let target = StdNormal;
        let mut chain = ChainState {
            position: vec![0.7],
            log_density: target.log_density(&[0.7]),
        };
        let adapt = AdaptState::new(&[0.0], 0.0, &[0.7]);
        let mut scratch = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (_, xi) = mwg_block_step(
                &target,
                &mut chain,
                &mut scratch,
                0..1,
                &adapt,
                1.0,
                &mut rng,
            );
            assert!(xi > 0.999, "xi = {xi}");
        }
    }

    #[test]
    fn non_finite_proposals_are_rejected_with_zero_xi() {
        struct HalfLine;
        impl Target for HalfLine {
            fn block_dims(&self) -> Vec<usize> {
                vec![1]
            }
            fn log_density(&self, x: &[f64]) -> f64 {
                if x[0] < 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -x[0]
                }
            }
            fn to_natural(&self, x: &[f64]) -> Vec<f64> {
                x.to_vec()
            }
        }
        let target = HalfLine;
        let mut chain = ChainState {
            position: vec![0.01],
            log_density: target.log_density(&[0.01]),
        };
        let adapt = AdaptState::new(&[25.0], 0.0, &[0.01]);
        let mut scratch = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut saw_rejection = false;
        for _ in 0..50 {
            let before = chain.position[0];
            let (accepted, xi) = mwg_block_step(
                &target,
                &mut chain,
                &mut scratch,
                0..1,
                &adapt,
                1.0,
                &mut rng,
            );
            if xi == 0.0 {
                saw_rejection = true;
                assert!(!accepted);
                assert_eq!(chain.position[0], before);
            }
            assert!(chain.position[0] >= 0.0);
        }
        assert!(saw_rejection);
    }

    #[test]
    fn standard_normal_toy_target_recovers_the_mean() {
        let target = StdNormal;
        let cfg = SamplerConfig {
            iterations: 105_000,
            burn_in: 5_000,
            temperatures: 1,
            target_accept: vec![0.41],
            parallel: false,
            record_telemetry: false,
            seed: 17,
            ..SamplerConfig::default()
        };
        let out = run_target(&target, &scalar_init(1, 0.3), &cfg).unwrap();
        let xs = out.column(0);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let diag = crate::summary::diagnostics(&xs);
        let ess = diag.ess.unwrap();
        let se = (1.0 / ess).sqrt();
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}, ess {ess}");
        // And the scale adaptation has settled near its target.
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!((var - 1.0).abs() < 0.1, "variance {var}");
    }

    #[test]
    fn fixed_seed_is_bit_identical_and_parallel_matches_sequential() {
        let data = small_dataset();
        let prior = PriorConfig::for_detection(data.detection_location());
        let constants = WaveConstants::default();
        let cfg = SamplerConfig {
            iterations: 400,
            burn_in: 100,
            temperatures: 4,
            seed: 5,
            parallel: false,
            ..SamplerConfig::default()
        };
        let a = run(&data, &prior, &constants, &cfg).unwrap();
        let b = run(&data, &prior, &constants, &cfg).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.telemetry, b.telemetry);

        let par_cfg = SamplerConfig {
            parallel: true,
            ..cfg
        };
        let c = run(&data, &prior, &constants, &par_cfg).unwrap();
        assert_eq!(a.draws, c.draws);
        assert_eq!(a.telemetry, c.telemetry);
    }

    #[test]
    fn acceptance_is_invariant_to_constant_density_shifts() {
        // The acceptance probability uses only log-density differences, so a
        // shifted target produces the same per-step probabilities up to
        // rounding and statistically identical chains. (Bit-identity is not
        // expected: one-ULP rounding of the shifted values feeds back through
        // the adaptation.)
        let base = StdNormal;
        let shifted = Shifted(StdNormal, 1_234.5);
        let cfg = toy_config(3);
        let a = run_target(&base, &scalar_init(3, 0.0), &cfg).unwrap();
        let b = run_target(&shifted, &scalar_init(3, 0.0), &cfg).unwrap();
        for (ta, tb) in a.telemetry.iter().take(5).zip(b.telemetry.iter()) {
            assert_abs_diff_eq!(ta.block_xi[0], tb.block_xi[0], epsilon = 1e-9);
        }
        let mean = |out: &SamplerOutput| {
            out.draws.iter().map(|d| d[0]).sum::<f64>() / out.draws.len() as f64
        };
        assert_abs_diff_eq!(mean(&a), mean(&b), epsilon = 0.15);
    }

    #[test]
    fn stepsize_sequence_is_decreasing() {
        let nu = 0.6;
        let steps: Vec<f64> = (1..50).map(|g| (g as f64 + 1.0).powf(-nu)).collect();
        assert!(steps.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn swap_moves_states_and_leaves_level_adaptation_alone() {
        // Hotter state has the higher density, so the swap always accepts.
        let mut chains = vec![
            ChainState {
                position: vec![1.0],
                log_density: -5.0,
            },
            ChainState {
                position: vec![2.0],
                log_density: -1.0,
            },
        ];
        let mut ladder = TemperLadder::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let event = swap_step(&mut chains, &mut ladder, 1, 0.6, 0.41, &mut rng);
        assert_eq!(event.pair, 0);
        assert_eq!(event.probability, 1.0);
        assert!(event.accepted);
        assert_eq!(chains[0].position, vec![2.0]);
        assert_eq!(chains[1].position, vec![1.0]);
        // The ladder spacing moved toward the target.
        assert_abs_diff_eq!(
            ladder.rhos()[0],
            1.0 + 2.0f64.powf(-0.6) * (1.0 - 0.41),
            epsilon = 1e-12
        );
        assert!(ladder.is_monotone());
    }

    fn small_dataset() -> Dataset {
        let t_star = 70.0;
        let phi = ModelParams {
            theta: EarthquakeParams {
                epicentre: GeoPoint::new(0.0, 0.0).unwrap(),
                depth_km: 12.0,
                origin_time_s: 10.0,
            },
            alpha: 0.3,
            pi: 0.5,
        };
        let c = WaveConstants::default();
        let mut records = Vec::new();
        for (i, (lat, lon)) in [(0.2, 0.1), (0.4, -0.3), (-0.3, 0.2), (0.6, 0.5), (-0.1, -0.6)]
            .iter()
            .enumerate()
        {
            let z = GeoPoint::new(*lat, *lon).unwrap();
            let (mu_p, mu_s) = model::wave_means(&phi.theta, z, &c);
            let (y, triggered) = if i % 2 == 0 {
                ((if i % 4 == 0 { mu_p } else { mu_s }) + 0.4, true)
            } else {
                (t_star, false)
            };
            records.push(SmartphoneRecord {
                location: z,
                observed_time_s: y.min(t_star),
                triggered: triggered && y < t_star,
            });
        }
        Dataset::new(records, GeoPoint::new(0.1, 0.05).unwrap(), t_star).unwrap()
    }

    #[test]
    fn init_chains_is_deterministic_and_interior() {
        let data = small_dataset();
        let prior = PriorConfig::for_detection(data.detection_location());
        let cfg = SamplerConfig {
            seed: 21,
            ..SamplerConfig::default()
        };
        let a = init_chains(&data, &prior, &cfg).unwrap();
        let b = init_chains(&data, &prior, &cfg).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.positions.len(), 10);
        for pos in &a.positions {
            let phi = reparam::to_natural(&TransformedParams::from_flat(pos));
            assert!((phi.theta.epicentre.lat() - data.detection_location().lat()).abs() <= 1.0);
            assert!((5.0..=100.0).contains(&phi.theta.depth_km));
            assert!(phi.theta.origin_time_s > 0.0);
            assert!((0.0..=1.0).contains(&phi.alpha));
            assert!((0.0..=1.0).contains(&phi.pi));
            // All coordinates finite in unconstrained space.
            assert!(pos.iter().all(|v| v.is_finite()));
        }
        // The running means start at the chain positions.
        let target = PosteriorTarget {
            data: &data,
            prior: &prior,
            constants: &WaveConstants::default(),
        };
        let out_init = &a.positions[0];
        let adapt = AdaptState::new(&a.cov_diag[0], a.log_scale, &out_init[0..4]);
        assert_eq!(adapt.mean(), &out_init[0..4]);
        assert!(target.log_density(out_init).is_finite());
    }

    #[test]
    fn ladder_stays_monotone_through_a_run() {
        let data = small_dataset();
        let prior = PriorConfig::for_detection(data.detection_location());
        let cfg = SamplerConfig {
            iterations: 300,
            burn_in: 50,
            temperatures: 6,
            seed: 3,
            parallel: false,
            ..SamplerConfig::default()
        };
        let out = run(&data, &prior, &WaveConstants::default(), &cfg).unwrap();
        for t in &out.telemetry {
            assert!(t.betas[0] == 1.0);
            assert!(t.betas.windows(2).all(|w| w[0] > w[1]));
            assert!(*t.betas.last().unwrap() > 0.0);
        }
        assert_eq!(out.draws.len(), 250);
    }

    #[test]
    fn saturated_positions_never_poison_the_density() {
        // Positions deep in the transform's saturation region must come back
        // as rejectable values (hugely negative or -inf), never NaN.
        let data = small_dataset();
        let prior = PriorConfig::for_detection(data.detection_location());
        let constants = WaveConstants::default();
        let target = PosteriorTarget {
            data: &data,
            prior: &prior,
            constants: &constants,
        };
        for x in [
            [0.0, 0.0, 0.0, 800.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, -800.0, 0.0, 0.0],
            [900.0, -900.0, 900.0, 1.0, -900.0, 900.0],
        ] {
            let v = target.log_density(&x);
            assert!(!v.is_nan());
            assert!(v < -500.0, "log density {v} at {x:?} should be far below any real state");
        }
        assert!(!numeric::logsumexp2(f64::NEG_INFINITY, f64::NEG_INFINITY).is_nan());
    }
}
