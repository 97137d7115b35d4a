//! Shared harness for sampler correctness tests: small test problems, the
//! conditional-consistency check (log full conditional minus log joint must
//! be constant in the block), and ensemble grid-posterior total-variation
//! checks for the Metropolis-Hastings blocks.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use funmix_core::basis::{self, BasisSystem};
use funmix_core::model::{
    build_designs, log_likelihood_conditional, Dataset, ModelDims, ModelState, ObsDesign,
    Observation,
};
use funmix_core::priors::{log_prior_with_penalty, sample_prior, Hyperparameters};
use funmix_core::rng::{stream_rng, ChainRng};
use funmix_core::sampler::{FitArtifacts, FitContext};
use funmix_core::simgen::{draw_truth, synthesize, SimSpec};

/// A small fully materialized inference problem.
pub struct Problem {
    pub basis: BasisSystem,
    pub artifacts: FitArtifacts,
    pub data: Dataset,
    pub designs: Vec<ObsDesign>,
    pub hyper: Hyperparameters,
    pub state: ModelState,
    pub dims: ModelDims,
}

impl Problem {
    pub fn ctx(&self) -> FitContext<'_> {
        FitContext::new(&self.designs, &self.hyper, &self.artifacts)
    }

    /// Log joint with tempered likelihood: log prior + beta * log lik.
    pub fn log_joint(&self, state: &ModelState, beta: f64) -> f64 {
        let prior = log_prior_with_penalty(state, &self.hyper, &self.artifacts.penalty).unwrap();
        let lik = log_likelihood_conditional(state, &self.designs).unwrap();
        prior + beta * lik
    }
}

/// Build a problem of the given dimensions with data generated from a prior
/// draw, so every scale is mutually consistent.
pub fn make_problem(
    n_features: usize,
    n_basis: usize,
    n_eigen: usize,
    n_obs: usize,
    n_points: usize,
    seed: u64,
) -> Problem {
    let degree = 2usize;
    let n_knots = n_basis
        .checked_sub(degree + 1)
        .expect("n_basis must be at least degree + 1");
    let basis = basis::build_bspline_basis(
        degree,
        &basis::equally_spaced_knots(n_knots, (0.0, 1.0)),
        (0.0, 1.0),
    )
    .unwrap();
    let artifacts = FitArtifacts::new(&basis);
    let hyper = Hyperparameters::default();
    let dims = ModelDims::new(n_features, n_basis, n_eigen, n_obs).unwrap();
    let mut rng = stream_rng(seed, &[100]);
    let mut state = sample_prior(&hyper, dims, &basis, &mut rng).unwrap();
    // Keep the noise and smoothing scales away from the heavy prior tails,
    // and memberships away from the vertices, so direct (jitter-free)
    // factorizations in the oracles stay well posed.
    state.sigma2 = state.sigma2.clamp(0.05, 2.0);
    for k in 0..n_features {
        state.tau[k] = state.tau[k].clamp(0.1, 10.0);
    }
    for i in 0..n_obs {
        for k in 0..n_features {
            state.z[(i, k)] = 0.5 * state.z[(i, k)] + 0.5 / n_features as f64;
        }
    }

    // One observation per sample path on a shared uniform grid, values from
    // the conditional model.
    use rand_distr::{Distribution, StandardNormal};
    let points: Vec<f64> = (0..n_points)
        .map(|l| l as f64 / (n_points.max(2) as f64 - 1.0))
        .collect();
    let grid = DMatrix::from_iterator(n_points, 1, points.iter().copied());
    let design = basis.evaluate(&grid).unwrap();
    let mut observations = Vec::with_capacity(n_obs);
    for i in 0..n_obs {
        let mean = design.values.transpose() * state.mean_coeff(i);
        let values = DVector::from_fn(n_points, |l, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            mean[l] + state.sigma2.sqrt() * z
        });
        observations.push(Observation {
            points: grid.clone(),
            values,
        });
    }
    let data = Dataset { observations };
    let designs = build_designs(&basis, &data).unwrap();
    Problem {
        basis,
        artifacts,
        data,
        designs,
        hyper,
        state,
        dims,
    }
}

/// A Study-1-like planted problem: truth plus synthesized data.
pub fn planted_problem(n_obs: usize, seed: u64) -> (Problem, ModelState) {
    let spec = SimSpec::study1(n_obs, seed);
    let basis = spec.basis.build().unwrap();
    let mut rng = stream_rng(seed, &[7]);
    let truth = draw_truth(&spec, &basis, &mut rng).unwrap();
    let data = synthesize(&truth, &spec, &basis, &mut rng).unwrap();
    let designs = build_designs(&basis, &data).unwrap();
    let artifacts = FitArtifacts::new(&basis);
    let hyper = Hyperparameters::default();
    let dims = ModelDims::new(spec.n_features, basis.n_basis(), spec.n_eigen, n_obs).unwrap();
    let mut rng2 = stream_rng(seed, &[8]);
    let state = sample_prior(&hyper, dims, &basis, &mut rng2).unwrap();
    (
        Problem {
            basis,
            artifacts,
            data,
            designs,
            hyper,
            state,
            dims,
        },
        truth,
    )
}

/// Variance of (log conditional - log joint) over block perturbations; the
/// primary anti-derivation-bug statistic. `evaluate` receives a fresh state
/// clone and a generator, writes a random block value into the state, and
/// returns the log conditional density of that value.
pub fn consistency_variance<F>(
    problem: &Problem,
    beta: f64,
    n_samples: usize,
    seed: u64,
    mut evaluate: F,
) -> f64
where
    F: FnMut(&mut ModelState, &mut ChainRng) -> f64,
{
    let mut rng = stream_rng(seed, &[55]);
    let mut diffs = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut state = problem.state.clone();
        let log_q = evaluate(&mut state, &mut rng);
        let log_joint = problem.log_joint(&state, beta);
        diffs.push(log_q - log_joint);
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)
}

/// A normalized discrete target on a uniform grid of cell midpoints.
pub struct GridTarget {
    pub lo: f64,
    pub hi: f64,
    pub mids: Vec<f64>,
    pub cell_prob: Vec<f64>,
}

impl GridTarget {
    /// Normalize an unnormalized log-density over `n_cells` uniform cells.
    pub fn new<F: Fn(f64) -> f64>(lo: f64, hi: f64, n_cells: usize, log_density: F) -> Self {
        let h = (hi - lo) / n_cells as f64;
        let mids: Vec<f64> = (0..n_cells).map(|c| lo + (c as f64 + 0.5) * h).collect();
        let logs: Vec<f64> = mids.iter().map(|&t| log_density(t)).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        let sum: f64 = probs.iter().sum();
        for p in probs.iter_mut() {
            *p /= sum;
        }
        GridTarget {
            lo,
            hi,
            mids,
            cell_prob: probs,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.mids.len()
    }

    fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.n_cells() as f64
    }

    /// Draw a point from the discretized target (cell by probability,
    /// uniform within the cell).
    pub fn sample(&self, rng: &mut ChainRng) -> f64 {
        use rand::Rng;
        let mut u: f64 = rng.gen();
        let mut cell = self.n_cells() - 1;
        for (c, &p) in self.cell_prob.iter().enumerate() {
            if u < p {
                cell = c;
                break;
            }
            u -= p;
        }
        let h = self.cell_width();
        self.lo + (cell as f64 + rng.gen::<f64>()) * h
    }

    pub fn cell_of(&self, x: f64) -> usize {
        let h = self.cell_width();
        (((x - self.lo) / h).floor() as isize).clamp(0, self.n_cells() as isize - 1) as usize
    }

    /// Aggregate the fine cells into `n_bins` contiguous near-equal-mass
    /// macro bins; returns the fine-to-macro map and macro probabilities.
    pub fn equal_mass_bins(&self, n_bins: usize) -> (Vec<usize>, Vec<f64>) {
        let mut assignment = vec![0usize; self.n_cells()];
        let mut probs = vec![0.0; n_bins];
        let mut acc = 0.0;
        let mut bin = 0usize;
        for c in 0..self.n_cells() {
            if acc > (bin + 1) as f64 / n_bins as f64 && bin + 1 < n_bins {
                bin += 1;
            }
            assignment[c] = bin;
            probs[bin] += self.cell_prob[c];
            acc += self.cell_prob[c];
        }
        (assignment, probs)
    }
}

/// Ensemble grid-posterior TV check: `n_replicas` chains are initialized iid
/// from the discretized target, advanced `steps` kernel applications, and the
/// endpoint distribution is compared to the target in total variation over
/// near-equal-mass macro bins. A kernel that preserves the target keeps the
/// TV at sampling-noise level.
pub fn ensemble_tv<K>(
    target: &GridTarget,
    n_replicas: usize,
    steps: usize,
    n_bins: usize,
    seed: u64,
    mut kernel: K,
) -> f64
where
    K: FnMut(f64, &mut ChainRng) -> f64,
{
    let (assignment, expected) = target.equal_mass_bins(n_bins);
    let mut counts = vec![0.0f64; n_bins];
    let mut rng = stream_rng(seed, &[77]);
    for _ in 0..n_replicas {
        let mut x = target.sample(&mut rng);
        for _ in 0..steps {
            x = kernel(x, &mut rng);
        }
        counts[assignment[target.cell_of(x)]] += 1.0;
    }
    let n = n_replicas as f64;
    0.5 * counts
        .iter()
        .zip(&expected)
        .map(|(&c, &e)| (c / n - e).abs())
        .sum::<f64>()
}

/// Batch-means standard error of the mean of a (possibly autocorrelated)
/// scalar chain.
pub fn batch_mean_se(chain: &[f64], n_batches: usize) -> (f64, f64) {
    let n = chain.len();
    let batch = n / n_batches;
    assert!(batch >= 2, "chain too short for {n_batches} batches");
    let used = batch * n_batches;
    let mean = chain[..used].iter().sum::<f64>() / used as f64;
    let mut var_between = 0.0;
    for b in 0..n_batches {
        let m = chain[b * batch..(b + 1) * batch].iter().sum::<f64>() / batch as f64;
        var_between += (m - mean) * (m - mean);
    }
    var_between /= (n_batches - 1) as f64;
    (mean, (var_between / n_batches as f64).sqrt())
}

/// Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(sorted: &[f64], cdf: F) -> f64 {
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i as f64 + 1.0) / n - f).abs());
    }
    d
}

/// Approximate KS p-value (asymptotic series).
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let lambda = (n as f64).sqrt() * d;
    let mut p = 0.0;
    for j in 1..101 {
        let jf = j as f64;
        p += 2.0 * (-1.0f64).powi(j as i32 + 1) * (-2.0 * jf * jf * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}
