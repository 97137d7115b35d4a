//! Metropolis-within-Gibbs machinery.
//!
//! Each parameter block is an [`UpdateBlock`] strategy registered under a
//! stable name. A sweep is the fixed ordered application of a block list;
//! block lists are assembled from the registry at runtime, which is how the
//! multiple-start stages, the orthogonal-phi variant, and restricted test
//! kernels select their update sets.

pub mod blocks;
pub mod truncnorm;

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::basis::{gram_matrix, penalty_matrix, BasisSystem, GramMatrix, PenaltyMatrix};
use crate::error::{Error, Result};
use crate::model::{log_likelihood_conditional, ModelState, ObsDesign};
use crate::priors::Hyperparameters;
use crate::rng::ChainRng;

/// Basis-derived matrices reused across sweeps.
#[derive(Clone, Debug)]
pub struct FitArtifacts {
    pub penalty: PenaltyMatrix,
    /// Rank of the penalty (P - 1 for the intrinsic first-order random walk).
    pub penalty_rank: usize,
    pub gram: GramMatrix,
}

impl FitArtifacts {
    pub fn new(basis: &BasisSystem) -> Self {
        let penalty = penalty_matrix(basis);
        let penalty_rank = rank_of(&penalty.values);
        let max_degree = basis
            .components()
            .iter()
            .map(|c| c.degree())
            .max()
            .unwrap_or(0);
        let gram = gram_matrix(basis, max_degree + 2);
        FitArtifacts {
            penalty,
            penalty_rank,
            gram,
        }
    }
}

fn rank_of(m: &DMatrix<f64>) -> usize {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .filter(|&&l| l > 1e-10)
        .count()
}

/// Everything a block update needs besides the state itself.
#[derive(Clone, Copy)]
pub struct FitContext<'a> {
    pub designs: &'a [ObsDesign],
    pub hyper: &'a Hyperparameters,
    pub artifacts: &'a FitArtifacts,
    /// Likelihood tempering exponent; 1.0 for untempered sweeps.
    pub beta: f64,
}

impl<'a> FitContext<'a> {
    pub fn new(
        designs: &'a [ObsDesign],
        hyper: &'a Hyperparameters,
        artifacts: &'a FitArtifacts,
    ) -> Self {
        FitContext {
            designs,
            hyper,
            artifacts,
            beta: 1.0,
        }
    }

    pub fn tempered(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// Outcome of one sweep: acceptance flags for every MH block (keys use
/// 1-based indices: `a1[k]`, `a2[k]`, `z[i]`, `pi`, `alpha3`) and the
/// conditional log-likelihood of the post-sweep state.
#[derive(Clone, Debug, Default)]
pub struct SweepReport {
    pub accepted: BTreeMap<String, bool>,
    pub log_likelihood: f64,
}

/// One named parameter-block update strategy.
pub trait UpdateBlock: Send + Sync {
    fn name(&self) -> &'static str;
    fn apply(
        &self,
        state: &mut ModelState,
        ctx: &FitContext,
        rng: &mut ChainRng,
        report: &mut SweepReport,
    ) -> Result<()>;
}

macro_rules! silent_block {
    ($ty:ident, $name:literal, $func:path) => {
        struct $ty;
        impl UpdateBlock for $ty {
            fn name(&self) -> &'static str {
                $name
            }
            fn apply(
                &self,
                state: &mut ModelState,
                ctx: &FitContext,
                rng: &mut ChainRng,
                _report: &mut SweepReport,
            ) -> Result<()> {
                $func(state, ctx, rng)
            }
        }
    };
}

silent_block!(PhiBlock, "phi", blocks::update_phi);
silent_block!(PhiOrthogonalBlock, "phi_orthogonal", blocks::update_phi_orthogonal);
silent_block!(DeltaBlock, "delta", blocks::update_delta);
silent_block!(GammaBlock, "gamma", blocks::update_gamma);
silent_block!(NuBlock, "nu", blocks::update_nu);
silent_block!(TauBlock, "tau", blocks::update_tau);
silent_block!(ChiBlock, "chi", blocks::update_chi);
silent_block!(Sigma2Block, "sigma2", blocks::update_sigma2);

struct A1A2Block;
impl UpdateBlock for A1A2Block {
    fn name(&self) -> &'static str {
        "a1_a2"
    }
    fn apply(
        &self,
        state: &mut ModelState,
        ctx: &FitContext,
        rng: &mut ChainRng,
        report: &mut SweepReport,
    ) -> Result<()> {
        let flags = blocks::update_a1_a2(state, ctx, rng)?;
        for (k, (acc1, acc2)) in flags.into_iter().enumerate() {
            report.accepted.insert(format!("a1[{}]", k + 1), acc1);
            report.accepted.insert(format!("a2[{}]", k + 1), acc2);
        }
        Ok(())
    }
}

struct ZBlock;
impl UpdateBlock for ZBlock {
    fn name(&self) -> &'static str {
        "z"
    }
    fn apply(
        &self,
        state: &mut ModelState,
        ctx: &FitContext,
        rng: &mut ChainRng,
        report: &mut SweepReport,
    ) -> Result<()> {
        let flags = blocks::update_z(state, ctx, rng)?;
        for (i, acc) in flags.into_iter().enumerate() {
            report.accepted.insert(format!("z[{}]", i + 1), acc);
        }
        Ok(())
    }
}

struct PiAlpha3Block;
impl UpdateBlock for PiAlpha3Block {
    fn name(&self) -> &'static str {
        "pi_alpha3"
    }
    fn apply(
        &self,
        state: &mut ModelState,
        ctx: &FitContext,
        rng: &mut ChainRng,
        report: &mut SweepReport,
    ) -> Result<()> {
        let (acc_pi, acc_a3) = blocks::update_pi_alpha3(state, ctx, rng)?;
        report.accepted.insert("pi".into(), acc_pi);
        report.accepted.insert("alpha3".into(), acc_a3);
        Ok(())
    }
}

/// Look up a block strategy by its registered name.
pub fn block_by_name(name: &str) -> Result<Box<dyn UpdateBlock>> {
    Ok(match name {
        "phi" => Box::new(PhiBlock),
        "phi_orthogonal" => Box::new(PhiOrthogonalBlock),
        "delta" => Box::new(DeltaBlock),
        "gamma" => Box::new(GammaBlock),
        "a1_a2" => Box::new(A1A2Block),
        "nu" => Box::new(NuBlock),
        "tau" => Box::new(TauBlock),
        "z" => Box::new(ZBlock),
        "pi_alpha3" => Box::new(PiAlpha3Block),
        "chi" => Box::new(ChiBlock),
        "sigma2" => Box::new(Sigma2Block),
        other => {
            return Err(Error::Config(format!(
                "unknown update block {other:?}; known blocks: {}",
                REGISTERED_BLOCKS.join(", ")
            )))
        }
    })
}

/// Names of every registered block.
pub const REGISTERED_BLOCKS: [&str; 11] = [
    "phi",
    "phi_orthogonal",
    "delta",
    "gamma",
    "a1_a2",
    "nu",
    "tau",
    "z",
    "pi_alpha3",
    "chi",
    "sigma2",
];

/// Fixed sweep order of the full sampler: covariance block first, then its
/// hyperpriors, means, allocations, latent scores, noise last.
pub fn standard_block_names(orthogonal_phi: bool) -> Vec<&'static str> {
    vec![
        if orthogonal_phi { "phi_orthogonal" } else { "phi" },
        "delta",
        "gamma",
        "a1_a2",
        "nu",
        "tau",
        "z",
        "pi_alpha3",
        "chi",
        "sigma2",
    ]
}

/// Stage-1 multiple-start blocks: means, memberships, noise, and their
/// hyperpriors, with the covariance block pinned at zero.
pub fn stage1_block_names() -> Vec<&'static str> {
    vec!["nu", "tau", "z", "pi_alpha3", "sigma2"]
}

/// Stage-2 multiple-start blocks: everything except the frozen nu and z.
pub fn stage2_block_names(orthogonal_phi: bool) -> Vec<&'static str> {
    vec![
        if orthogonal_phi { "phi_orthogonal" } else { "phi" },
        "delta",
        "gamma",
        "a1_a2",
        "tau",
        "pi_alpha3",
        "chi",
        "sigma2",
    ]
}

/// Instantiate a block sequence from names.
pub fn build_blocks<S: AsRef<str>>(names: &[S]) -> Result<Vec<Box<dyn UpdateBlock>>> {
    names.iter().map(|n| block_by_name(n.as_ref())).collect()
}

/// Apply one full sweep of the given blocks and report acceptances plus the
/// post-sweep conditional log-likelihood.
pub fn sweep(
    state: &mut ModelState,
    ctx: &FitContext,
    blocks: &[Box<dyn UpdateBlock>],
    rng: &mut ChainRng,
) -> Result<SweepReport> {
    let mut report = SweepReport::default();
    for block in blocks {
        block.apply(state, ctx, rng, &mut report)?;
    }
    report.log_likelihood = log_likelihood_conditional(state, ctx.designs)?;
    Ok(report)
}
