//! Chain lifecycle: run configuration, multiple-start initialization, the
//! main MCMC loop with burn-in/thinning and optional tempered transitions,
//! and multi-chain parallelism.

pub mod archive;

pub use archive::{config_hash, AcceptanceCount, ArchiveMeta, ChainArchive};

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, BasisSystem};
use crate::error::{Error, Result};
use crate::model::{
    build_designs, log_likelihood_conditional, Dataset, ModelDims, ModelState, ObsDesign,
};
use crate::priors::{sample_prior, Hyperparameters};
use crate::rng::{chain_rng, ChainRng, Stage};
use crate::sampler::{
    build_blocks, stage1_block_names, stage2_block_names, standard_block_names, sweep, FitArtifacts,
    FitContext, UpdateBlock,
};
use crate::tempering::{build_ladder, tempered_transition, TemperatureLadder};

/// Tempered-transition schedule settings.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TemperingConfig {
    pub n_rungs: usize,
    pub beta_max: f64,
    /// A tempered move is attempted every `tempered_every`-th iteration.
    pub tempered_every: usize,
}

impl Default for TemperingConfig {
    fn default() -> Self {
        TemperingConfig {
            n_rungs: 4,
            beta_max: 2.0,
            tempered_every: 10,
        }
    }
}

/// Full run configuration, readable from TOML or JSON.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RunConfig {
    /// Number of latent features K.
    pub n_features: usize,
    /// Number of eigen-directions M.
    pub n_eigen: usize,
    pub basis: BasisSpec,
    pub hyper: Hyperparameters,
    /// Multiple-start candidates and per-candidate iteration budgets.
    pub n_try1: usize,
    pub n_try2: usize,
    pub n_mcmc1: usize,
    pub n_mcmc2: usize,
    /// Fraction of a warm-up chain whose tail is averaged for scoring.
    pub score_tail_fraction: f64,
    pub total_iterations: usize,
    pub burn_in_fraction: f64,
    pub thin: usize,
    pub seed: u64,
    pub tempering: Option<TemperingConfig>,
    pub orthogonal_phi: bool,
    /// Optional override of the main-loop update blocks, by registry name.
    pub blocks: Option<Vec<String>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            n_features: 2,
            n_eigen: 3,
            basis: BasisSpec::cubic_unit(4),
            hyper: Hyperparameters::default(),
            n_try1: 1,
            n_try2: 1,
            n_mcmc1: 200,
            n_mcmc2: 200,
            score_tail_fraction: 0.2,
            total_iterations: 1000,
            burn_in_fraction: 0.5,
            thin: 1,
            seed: 0,
            tempering: None,
            orthogonal_phi: false,
            blocks: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_iterations == 0 {
            return Err(Error::Config("total_iterations must be positive".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::Config("burn_in_fraction must lie in [0, 1)".into()));
        }
        if !(self.score_tail_fraction > 0.0 && self.score_tail_fraction <= 1.0) {
            return Err(Error::Config("score_tail_fraction must lie in (0, 1]".into()));
        }
        if self.n_try1 == 0 || self.n_try2 == 0 {
            return Err(Error::Config("n_try1 and n_try2 must be at least 1".into()));
        }
        if self.n_mcmc1 == 0 || self.n_mcmc2 == 0 {
            return Err(Error::Config("n_mcmc1 and n_mcmc2 must be at least 1".into()));
        }
        self.hyper.validate(self.n_features)?;
        if let Some(t) = &self.tempering {
            if t.tempered_every == 0 {
                return Err(Error::Config("tempered_every must be at least 1".into()));
            }
            build_ladder(t.n_rungs, t.beta_max)?;
        }
        if let Some(names) = &self.blocks {
            build_blocks(names)?;
        }
        Ok(())
    }

    pub fn dims(&self, n_basis: usize, n_obs: usize) -> Result<ModelDims> {
        ModelDims::new(self.n_features, n_basis, self.n_eigen, n_obs)
    }
}

/// Mean of the trailing `tail_fraction` of a score trace; this is the
/// multiple-start selection score.
pub fn tail_mean(trace: &[f64], tail_fraction: f64) -> f64 {
    let len = trace.len();
    let tail = ((len as f64 * tail_fraction).ceil() as usize).clamp(1, len);
    let slice = &trace[len - tail..];
    slice.iter().sum::<f64>() / tail as f64
}

/// Index of the best-scoring candidate (first one wins ties).
pub fn argmax_score(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let _ = scores[best];
    best
}

fn run_short_chain(
    state: &mut ModelState,
    ctx: &FitContext,
    blocks: &[Box<dyn UpdateBlock>],
    iterations: usize,
    rng: &mut ChainRng,
) -> Result<Vec<f64>> {
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let report = sweep(state, ctx, blocks, rng)?;
        trace.push(report.log_likelihood);
    }
    Ok(trace)
}

/// Ridge-projected basis coefficients of each observation, the feature
/// vectors used to seed candidate memberships.
fn observation_coefficients(designs: &[ObsDesign]) -> Vec<nalgebra::DVector<f64>> {
    designs
        .iter()
        .map(|d| {
            let p = d.ss.nrows();
            let mut a = d.ss.clone();
            let ridge = 1e-8 * a.trace().max(1e-12);
            for j in 0..p {
                a[(j, j)] += ridge;
            }
            nalgebra::Cholesky::new(a)
                .map(|c| c.solve(&d.sy))
                .unwrap_or_else(|| nalgebra::DVector::zeros(p))
        })
        .collect()
}

/// Randomized k-means (k-means++ seeding, a few Lloyd rounds) over the
/// observation coefficients. Returns the cluster index of each observation.
fn kmeans_assignment(
    coeffs: &[nalgebra::DVector<f64>],
    k: usize,
    rng: &mut ChainRng,
) -> Vec<usize> {
    use rand::Rng;
    let n = coeffs.len();
    let mut centers: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(k);
    centers.push(coeffs[rng.gen_range(0..n)].clone());
    while centers.len() < k {
        // k-means++: sample proportional to squared distance to the nearest
        // chosen center.
        let d2: Vec<f64> = coeffs
            .iter()
            .map(|c| {
                centers
                    .iter()
                    .map(|ctr| (c - ctr).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            centers.push(coeffs[rng.gen_range(0..n)].clone());
            continue;
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if u < w {
                pick = i;
                break;
            }
            u -= w;
        }
        centers.push(coeffs[pick].clone());
    }
    let mut assignment = vec![0usize; n];
    for _ in 0..15 {
        for (i, c) in coeffs.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, ctr) in centers.iter().enumerate() {
                let d = (c - ctr).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            assignment[i] = best;
        }
        for (j, center) in centers.iter_mut().enumerate() {
            let members: Vec<&nalgebra::DVector<f64>> = coeffs
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == j)
                .map(|(c, _)| c)
                .collect();
            if members.is_empty() {
                *center = coeffs[rng.gen_range(0..n)].clone();
            } else {
                let mut mean = nalgebra::DVector::zeros(center.len());
                for m in &members {
                    mean += *m;
                }
                *center = mean / members.len() as f64;
            }
        }
    }
    assignment
}

/// Data-driven membership seed for one stage-1 candidate: a randomized
/// clustering of the observation coefficients, softened toward the simplex
/// interior. Membership conditionals become extremely tight once the noise
/// level adapts, so the warm start has to supply essentially the right
/// assignment; prior-random memberships cannot be repaired later at any
/// proposal scale.
fn seed_memberships(
    state: &mut ModelState,
    designs: &[ObsDesign],
    rng: &mut ChainRng,
) {
    use rand::Rng;
    let k = state.dims().n_features;
    if k == 1 || designs.is_empty() {
        return;
    }
    let coeffs = observation_coefficients(designs);
    let assignment = kmeans_assignment(&coeffs, k, rng);
    let softness = 0.1 + 0.3 * rng.gen::<f64>();
    for (i, &cluster) in assignment.iter().enumerate() {
        let noise = crate::stats::sample_dirichlet(&vec![1.0; k], rng);
        for j in 0..k {
            let vertex = if j == cluster { 1.0 } else { 0.0 };
            state.z[(i, j)] = (1.0 - softness) * vertex + softness * noise[j];
        }
    }
    crate::model::clamp_simplex_rows(&mut state.z);
}

/// Two-stage multiple-start initialization.
///
/// Stage 1 runs `n_try1` short chains updating only the mean, membership,
/// and noise blocks, with the covariance coefficients and latent scores
/// pinned at zero; candidates are scored by the mean log-likelihood over the
/// trailing fraction of the chain. Stage 2 freezes the winner's (nu, z) and
/// runs `n_try2` short chains over the remaining blocks, returning the
/// end state of the best-scoring candidate.
pub fn multiple_start(
    data: &Dataset,
    designs: &[ObsDesign],
    basis: &BasisSystem,
    artifacts: &FitArtifacts,
    config: &RunConfig,
    chain_id: u64,
) -> Result<ModelState> {
    data.validate()?;
    config.validate()?;
    let dims = config.dims(basis.n_basis(), data.len())?;
    let ctx = FitContext::new(designs, &config.hyper, artifacts);

    let stage1_blocks = build_blocks(&stage1_block_names())?;
    let mut best1: Option<(f64, ModelState)> = None;
    for t in 0..config.n_try1 {
        let mut rng = chain_rng(config.seed, chain_id, Stage::Start1, t as u64);
        let mut state = sample_prior(&config.hyper, dims, basis, &mut rng)?;
        for slice in state.phi.iter_mut() {
            slice.fill(0.0);
        }
        state.chi.fill(0.0);
        seed_memberships(&mut state, designs, &mut rng);
        let trace = run_short_chain(&mut state, &ctx, &stage1_blocks, config.n_mcmc1, &mut rng)?;
        let score = tail_mean(&trace, config.score_tail_fraction);
        if best1.as_ref().is_none_or(|(s, _)| score > *s) {
            best1 = Some((score, state));
        }
    }
    let (_, winner) = best1.expect("n_try1 >= 1 validated");

    // Stage 2 restarts the shrinkage hierarchy and latent scores at random
    // from their priors with (nu, z) pinned to the winner, keeping the
    // winner's adapted noise level. The eigen coefficients start at zero:
    // their first conditional draw then regresses the residuals on the
    // random scores, so candidates explore data-supported covariance
    // directions instead of falling wherever an unconditioned prior draw of
    // the coefficients lands.
    let stage2_blocks = build_blocks(&stage2_block_names(config.orthogonal_phi))?;
    let mut best2: Option<(f64, ModelState)> = None;
    for t in 0..config.n_try2 {
        let mut rng = chain_rng(config.seed, chain_id, Stage::Start2, t as u64);
        let mut state = sample_prior(&config.hyper, dims, basis, &mut rng)?;
        state.nu = winner.nu.clone();
        state.z = winner.z.clone();
        state.sigma2 = winner.sigma2;
        for slice in state.phi.iter_mut() {
            slice.fill(0.0);
        }
        let trace = run_short_chain(&mut state, &ctx, &stage2_blocks, config.n_mcmc2, &mut rng)?;
        let score = tail_mean(&trace, config.score_tail_fraction);
        if best2.as_ref().is_none_or(|(s, _)| score > *s) {
            best2 = Some((score, state));
        }
    }
    Ok(best2.expect("n_try2 >= 1 validated").1)
}

fn accumulate(acceptance: &mut BTreeMap<String, AcceptanceCount>, key: &str, accepted: bool) {
    let entry = acceptance.entry(key.to_string()).or_default();
    entry.attempts += 1;
    if accepted {
        entry.accepted += 1;
    }
}

/// Run the main chain from an initial state, applying burn-in, thinning, and
/// the optional tempered-transition schedule. Deterministic under a fixed
/// (seed, chain_id).
pub fn run_chain(
    data: &Dataset,
    designs: &[ObsDesign],
    basis: &BasisSystem,
    artifacts: &FitArtifacts,
    config: &RunConfig,
    init: ModelState,
    chain_id: u64,
) -> Result<ChainArchive> {
    data.validate()?;
    config.validate()?;
    let dims = config.dims(basis.n_basis(), data.len())?;
    if init.dims() != dims {
        return Err(Error::DimensionMismatch(
            "initial state does not match configured dimensions".into(),
        ));
    }
    let started = Instant::now();
    let ctx = FitContext::new(designs, &config.hyper, artifacts);
    let block_names: Vec<String> = match &config.blocks {
        Some(names) => names.clone(),
        None => standard_block_names(config.orthogonal_phi)
            .into_iter()
            .map(String::from)
            .collect(),
    };
    let blocks = build_blocks(&block_names)?;
    let ladder: Option<(TemperatureLadder, usize)> = match &config.tempering {
        Some(t) => Some((build_ladder(t.n_rungs, t.beta_max)?, t.tempered_every)),
        None => None,
    };

    let mut rng = chain_rng(config.seed, chain_id, Stage::Main, 0);
    let mut state = init;
    let total = config.total_iterations;
    let burn = (total as f64 * config.burn_in_fraction).floor() as usize;
    let mut draws = Vec::new();
    let mut loglik = Vec::new();
    let mut iterations = Vec::new();
    let mut acceptance: BTreeMap<String, AcceptanceCount> = BTreeMap::new();

    for it in 0..total {
        let tempered_now = ladder
            .as_ref()
            .is_some_and(|(_, every)| (it + 1) % every == 0);
        let ll = if let (true, Some((ladder, _))) = (tempered_now, ladder.as_ref()) {
            let outcome = tempered_transition(&mut state, &ctx, &blocks, ladder, &mut rng)?;
            accumulate(&mut acceptance, "tempered", outcome.accepted);
            log_likelihood_conditional(&state, designs)?
        } else {
            let report = sweep(&mut state, &ctx, &blocks, &mut rng)?;
            for (key, acc) in &report.accepted {
                accumulate(&mut acceptance, key, *acc);
            }
            report.log_likelihood
        };
        if it >= burn && (it - burn + 1).is_multiple_of(config.thin) {
            draws.push(state.clone());
            loglik.push(ll);
            iterations.push(it as u64 + 1);
        }
    }

    let meta = ArchiveMeta {
        config: config.clone(),
        config_hash: config_hash(config),
        chain_id,
        acceptance,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok(ChainArchive {
        dims,
        draws,
        loglik,
        iterations,
        meta,
    })
}

/// Initialize (multiple start) and run one chain.
pub fn fit_chain(
    data: &Dataset,
    basis: &BasisSystem,
    config: &RunConfig,
    chain_id: u64,
) -> Result<ChainArchive> {
    let designs = build_designs(basis, data)?;
    let artifacts = FitArtifacts::new(basis);
    let init = multiple_start(data, &designs, basis, &artifacts, config, chain_id)?;
    run_chain(data, &designs, basis, &artifacts, config, init, chain_id)
}

/// Run several chains concurrently on independent RNG streams. Failures are
/// reported per chain without aborting siblings; results are ordered by
/// chain id.
pub fn run_parallel_chains(
    data: &Dataset,
    basis: &BasisSystem,
    config: &RunConfig,
    n_chains: usize,
) -> Vec<Result<ChainArchive>> {
    let designs = match build_designs(basis, data) {
        Ok(d) => d,
        Err(e) => return vec![Err(e)],
    };
    let artifacts = FitArtifacts::new(basis);
    (0..n_chains as u64)
        .into_par_iter()
        .map(|chain_id| {
            multiple_start(data, &designs, basis, &artifacts, config, chain_id)
                .and_then(|init| {
                    run_chain(data, &designs, basis, &artifacts, config, init, chain_id)
                })
                .map_err(|e| Error::ChainFailed {
                    chain: chain_id as usize,
                    source: Box::new(e),
                })
        })
        .collect()
}
