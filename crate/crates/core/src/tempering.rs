//! Tempered transitions: a geometric temperature ladder, likelihood-tempered
//! sweeps, and the composite up-then-down move accepted as one
//! Metropolis-Hastings step. Only the likelihood is tempered; prior-only
//! blocks are untouched by the exponent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_likelihood_conditional, ModelState};
use crate::rng::ChainRng;
use crate::sampler::{sweep, FitContext, SweepReport, UpdateBlock};

/// Geometric ladder 1 = beta_0 < beta_1 < ... < beta_{N_t} = beta_max
/// (all rungs equal one when beta_max = 1).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TemperatureLadder {
    pub betas: Vec<f64>,
}

/// Build the ladder with beta_h = beta_max^(h / N_t).
pub fn build_ladder(n_rungs: usize, beta_max: f64) -> Result<TemperatureLadder> {
    if n_rungs < 1 {
        return Err(Error::Config("ladder needs at least one rung".into()));
    }
    if !(beta_max >= 1.0) {
        return Err(Error::InvalidLadder(beta_max));
    }
    let betas = (0..=n_rungs)
        .map(|h| beta_max.powf(h as f64 / n_rungs as f64))
        .collect();
    Ok(TemperatureLadder { betas })
}

impl TemperatureLadder {
    pub fn n_rungs(&self) -> usize {
        self.betas.len() - 1
    }
}

/// One sweep under the tempered likelihood with exponent `beta`. At beta = 1
/// this is bit-identical to an untempered sweep.
pub fn tempered_sweep(
    state: &mut ModelState,
    ctx: &FitContext,
    blocks: &[Box<dyn UpdateBlock>],
    beta: f64,
    rng: &mut ChainRng,
) -> Result<SweepReport> {
    if !(beta > 0.0) {
        return Err(Error::Config(format!("tempering exponent must be positive, got {beta}")));
    }
    let tempered_ctx = (*ctx).tempered(beta);
    sweep(state, &tempered_ctx, blocks, rng)
}

/// Result of one tempered transition attempt.
#[derive(Clone, Debug)]
pub struct TemperedOutcome {
    pub accepted: bool,
    pub log_ratio: f64,
}

/// Run the up ladder (beta_1 .. beta_{N_t}), then down (beta_{N_t} .. beta_1),
/// and accept the endpoint with the product of tempered-likelihood ratios.
/// On rejection the input state is left untouched.
pub fn tempered_transition(
    state: &mut ModelState,
    ctx: &FitContext,
    blocks: &[Box<dyn UpdateBlock>],
    ladder: &TemperatureLadder,
    rng: &mut ChainRng,
) -> Result<TemperedOutcome> {
    use rand::Rng;
    let n_t = ladder.n_rungs();
    let betas = &ladder.betas;
    let mut candidate = state.clone();
    let mut log_ratio = 0.0;

    // Up pass: before each transition with beta_{h+1}, the current state is
    // Theta_h and contributes [p_{h+1}/p_h](Theta_h).
    for h in 0..n_t {
        let ll = log_likelihood_conditional(&candidate, ctx.designs)?;
        log_ratio += (betas[h + 1] - betas[h]) * ll;
        tempered_sweep(&mut candidate, ctx, blocks, betas[h + 1], rng)?;
    }
    // Down pass: transitions reuse beta_{N_t}, then beta_{N_t-1}, ..., beta_1;
    // after each, the new state Theta_{N_t+s} contributes the ratio of the
    // next-lower to the current rung.
    for s in 1..=n_t {
        tempered_sweep(&mut candidate, ctx, blocks, betas[n_t + 1 - s], rng)?;
        let ll = log_likelihood_conditional(&candidate, ctx.designs)?;
        log_ratio += (betas[n_t - s] - betas[n_t + 1 - s]) * ll;
    }

    let accepted = rng.gen::<f64>().ln() < log_ratio;
    if accepted {
        *state = candidate;
    }
    Ok(TemperedOutcome {
        accepted,
        log_ratio,
    })
}
