//! Synthetic data generation for the two benchmark designs and custom
//! configurations: latent parameter draws with eigen coefficients confined
//! to the complement of the mean span, Dirichlet-mixture memberships, and
//! observation synthesis from the sampling model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::{penalty_matrix, BasisSpec, BasisSystem};
use crate::error::{Error, Result};
use crate::model::{clamp_simplex_rows, Dataset, ModelDims, ModelState, Observation};
use crate::rng::ChainRng;

/// One component of the membership mixture: a block share of the
/// observations drawn from Dir(concentration).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ZMixtureComponent {
    pub weight: f64,
    pub concentration: Vec<f64>,
}

/// Benchmark presets.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub enum Study {
    /// Two features, cubic splines with P = 8, M = 3, sigma2 = 0.001;
    /// eigen coefficients drawn in the complement of the mean span.
    Study1,
    /// Three features with direct Gaussian eigen coefficients of decaying
    /// scale (1, 0.5, 0.2).
    Study2,
    Custom,
}

/// Simulation design.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SimSpec {
    pub study: Study,
    pub n_obs: usize,
    pub n_points: usize,
    pub n_features: usize,
    pub n_eigen: usize,
    pub basis: BasisSpec,
    pub sigma2: f64,
    /// Mean coefficient centers, one row per feature (empty rows mean zero).
    pub nu_means: Vec<Vec<f64>>,
    /// Per-eigen-direction scale of the coefficient draws.
    pub phi_scales: Vec<f64>,
    /// Draw eigen coefficients in the orthogonal complement of the mean
    /// span (as in the two-feature benchmark) instead of directly.
    pub orthogonal_phi_draws: bool,
    pub z_mixture: Vec<ZMixtureComponent>,
    /// Assign mixture blocks deterministically by floor(weight * N)
    /// (default); set for stochastic component assignment instead.
    pub stochastic_mixture_assignment: bool,
    pub seed: u64,
}

fn arithmetic_row(first: f64, step: f64, len: usize) -> Vec<f64> {
    (0..len).map(|i| first + step * i as f64).collect()
}

impl SimSpec {
    /// The two-feature benchmark: N observations of 100 points each.
    pub fn study1(n_obs: usize, seed: u64) -> Self {
        SimSpec {
            study: Study::Study1,
            n_obs,
            n_points: 100,
            n_features: 2,
            n_eigen: 3,
            basis: BasisSpec::cubic_unit(4),
            sigma2: 0.001,
            nu_means: vec![arithmetic_row(6.0, -2.0, 8), arithmetic_row(-8.0, 2.0, 8)],
            phi_scales: vec![2.25, 1.0, 0.49],
            orthogonal_phi_draws: true,
            z_mixture: vec![
                ZMixtureComponent {
                    weight: 0.3,
                    concentration: vec![10.0, 1.0],
                },
                ZMixtureComponent {
                    weight: 0.3,
                    concentration: vec![1.0, 10.0],
                },
                ZMixtureComponent {
                    weight: 0.4,
                    concentration: vec![1.0, 1.0],
                },
            ],
            stochastic_mixture_assignment: false,
            seed,
        }
    }

    /// The three-feature benchmark used for feature-count selection.
    pub fn study2(n_obs: usize, seed: u64) -> Self {
        SimSpec {
            study: Study::Study2,
            n_obs,
            n_points: 100,
            n_features: 3,
            n_eigen: 3,
            basis: BasisSpec::cubic_unit(4),
            sigma2: 0.001,
            nu_means: vec![
                arithmetic_row(6.0, -2.0, 8),
                arithmetic_row(-8.0, 2.0, 8),
                vec![0.0; 8],
            ],
            phi_scales: vec![1.0, 0.5, 0.2],
            orthogonal_phi_draws: false,
            z_mixture: vec![
                ZMixtureComponent {
                    weight: 0.2,
                    concentration: vec![10.0, 1.0, 1.0],
                },
                ZMixtureComponent {
                    weight: 0.2,
                    concentration: vec![1.0, 10.0, 1.0],
                },
                ZMixtureComponent {
                    weight: 0.2,
                    concentration: vec![1.0, 1.0, 10.0],
                },
                ZMixtureComponent {
                    weight: 0.4,
                    concentration: vec![1.0, 1.0, 1.0],
                },
            ],
            stochastic_mixture_assignment: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs == 0 || self.n_points == 0 {
            return Err(Error::Config("n_obs and n_points must be positive".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Config("sigma2 must be positive".into()));
        }
        if self.phi_scales.len() != self.n_eigen {
            return Err(Error::Config(format!(
                "phi_scales has {} entries, expected n_eigen = {}",
                self.phi_scales.len(),
                self.n_eigen
            )));
        }
        let weight_sum: f64 = self.z_mixture.iter().map(|c| c.weight).sum();
        if self.z_mixture.is_empty() || (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "membership mixture weights must sum to one".into(),
            ));
        }
        if self
            .z_mixture
            .iter()
            .any(|c| c.concentration.len() != self.n_features)
        {
            return Err(Error::Config(
                "mixture concentrations must have K entries".into(),
            ));
        }
        Ok(())
    }
}

/// Orthonormal basis of the orthogonal complement of the row span of `rows`
/// in R^P, via Gram-Schmidt against the span.
fn orthogonal_complement(rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = rows.ncols();
    let k = rows.nrows();
    if k >= p {
        return Err(Error::Config(format!(
            "no orthogonal complement: {k} mean vectors in R^{p}"
        )));
    }
    // Orthonormalize the span.
    let mut span: Vec<DVector<f64>> = Vec::new();
    for i in 0..k {
        let mut v = rows.row(i).transpose();
        for u in &span {
            let c = u.dot(&v);
            v -= c * u;
        }
        let norm = v.norm();
        if norm > 1e-12 {
            span.push(v / norm);
        }
    }
    // Complete with standard basis vectors.
    let mut comp: Vec<DVector<f64>> = Vec::new();
    for j in 0..p {
        if comp.len() == p - span.len() {
            break;
        }
        let mut v = DVector::zeros(p);
        v[j] = 1.0;
        for u in span.iter().chain(comp.iter()) {
            let c = u.dot(&v);
            v -= c * u;
        }
        let norm = v.norm();
        if norm > 1e-8 {
            comp.push(v / norm);
        }
    }
    let cols = comp.len();
    let mut out = DMatrix::zeros(p, cols);
    for (j, v) in comp.iter().enumerate() {
        out.set_column(j, v);
    }
    Ok(out)
}

/// Draw the latent truth. Mean coefficients are drawn around the configured
/// centers with covariance 4 P regularized on the penalty's null space (an
/// independent N(0, 4) component along the constant direction); eigen
/// coefficients are drawn either inside the orthogonal complement of the
/// mean span or directly as isotropic Gaussians, per the spec.
pub fn draw_truth(spec: &SimSpec, basis: &BasisSystem, rng: &mut ChainRng) -> Result<ModelState> {
    spec.validate()?;
    let p = basis.n_basis();
    let (k, m, n) = (spec.n_features, spec.n_eigen, spec.n_obs);
    let dims = ModelDims::new(k, p, m, n)?;
    let mut state = ModelState::zeros(dims);
    state.sigma2 = spec.sigma2;

    // nu_k ~ N(center_k, 4 P), with the null-space (constant) direction given
    // an independent N(0, 4) component so the draw is proper.
    let penalty = penalty_matrix(basis);
    let eig = penalty.values.clone().symmetric_eigen();
    for kk in 0..k {
        let center = spec
            .nu_means
            .get(kk)
            .filter(|c| !c.is_empty())
            .cloned()
            .unwrap_or_else(|| vec![0.0; p]);
        if center.len() != p {
            return Err(Error::Config(format!(
                "nu center for feature {} has {} entries, basis has {p}",
                kk + 1,
                center.len()
            )));
        }
        let mut nu_k = DVector::from_vec(center);
        for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            if lambda > 1e-10 {
                nu_k += eig.eigenvectors.column(idx) * (z * (4.0 * lambda).sqrt());
            } else {
                nu_k += eig.eigenvectors.column(idx) * (z * 2.0);
            }
        }
        state.nu.set_row(kk, &nu_k.transpose());
    }

    // Eigen coefficients.
    if spec.orthogonal_phi_draws {
        let complement = orthogonal_complement(&state.nu)?;
        let q_dim = complement.ncols();
        for kk in 0..k {
            for mm in 0..m {
                let scale = spec.phi_scales[mm].sqrt();
                let q = DVector::from_fn(q_dim, |_, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                });
                state.phi[kk].set_column(mm, &(&complement * q));
            }
        }
    } else {
        for kk in 0..k {
            for mm in 0..m {
                let scale = spec.phi_scales[mm].sqrt();
                let col = DVector::from_fn(p, |_, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                });
                state.phi[kk].set_column(mm, &col);
            }
        }
    }

    // Latent scores.
    for i in 0..n {
        for mm in 0..m {
            state.chi[(i, mm)] = StandardNormal.sample(rng);
        }
    }

    // Membership mixture: deterministic block sizes floor(weight * N) with
    // the remainder assigned to the last component, or stochastic component
    // choice when configured.
    let mut component_of = vec![spec.z_mixture.len() - 1; n];
    if spec.stochastic_mixture_assignment {
        for slot in component_of.iter_mut() {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (c, comp) in spec.z_mixture.iter().enumerate() {
                acc += comp.weight;
                if u < acc {
                    *slot = c;
                    break;
                }
            }
        }
    } else {
        let mut start = 0usize;
        for (c, comp) in spec.z_mixture.iter().enumerate() {
            let count = if c + 1 == spec.z_mixture.len() {
                n - start
            } else {
                ((comp.weight * n as f64).floor() as usize).min(n - start)
            };
            for slot in component_of.iter_mut().skip(start).take(count) {
                *slot = c;
            }
            start += count;
        }
    }
    for i in 0..n {
        let conc = &spec.z_mixture[component_of[i]].concentration;
        if k == 1 {
            state.z[(i, 0)] = 1.0;
            continue;
        }
        for (kk, v) in crate::stats::sample_dirichlet(conc, rng).into_iter().enumerate() {
            state.z[(i, kk)] = v;
        }
    }
    clamp_simplex_rows(&mut state.z);

    // Population-level parameters are not part of the data-generating draw;
    // leave pi uniform, alpha3 and the shrinkage scales at their shells.
    Ok(state)
}

/// Generate observations from the truth: per observation an equally spaced
/// grid of n_points and Y = model mean + N(0, sigma2) noise.
pub fn synthesize(
    truth: &ModelState,
    spec: &SimSpec,
    basis: &BasisSystem,
    rng: &mut ChainRng,
) -> Result<Dataset> {
    if basis.dimension() != 1 {
        return Err(Error::Config(
            "observation synthesis uses one-dimensional grids".into(),
        ));
    }
    let (lo, hi) = basis.domain()[0];
    let n_points = spec.n_points;
    let points: Vec<f64> = if n_points == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        (0..n_points)
            .map(|l| lo + (hi - lo) * l as f64 / (n_points as f64 - 1.0))
            .collect()
    };
    let grid = DMatrix::from_iterator(n_points, 1, points.iter().copied());
    let design = basis.evaluate(&grid)?;
    let noise_sd = spec.sigma2.sqrt();
    let mut observations = Vec::with_capacity(truth.dims().n_obs);
    for i in 0..truth.dims().n_obs {
        let w = truth.mean_coeff(i);
        let mean = design.values.transpose() * w;
        let values = DVector::from_fn(n_points, |l, _| {
            let z: f64 = StandardNormal.sample(rng);
            mean[l] + noise_sd * z
        });
        observations.push(Observation {
            points: grid.clone(),
            values,
        });
    }
    Ok(Dataset { observations })
}

/// Truth file: everything needed to score a fit against the generating
/// parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthFile {
    pub spec: SimSpec,
    pub state: ModelState,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn study1_phi_is_orthogonal_to_means() {
        let spec = SimSpec::study1(10, 3);
        let basis = spec.basis.build().unwrap();
        let mut rng = stream_rng(spec.seed, &[0]);
        let truth = draw_truth(&spec, &basis, &mut rng).unwrap();
        for k in 0..2 {
            for m in 0..3 {
                for j in 0..2 {
                    let dot = truth.phi[k].column(m).dot(&truth.nu.row(j).transpose());
                    assert!(dot.abs() < 1e-10, "phi[{k}][{m}] . nu[{j}] = {dot}");
                }
            }
        }
    }

    #[test]
    fn study1_q_scale_variance() {
        // Empirical variance of the first-direction coefficients, projected
        // back onto the complement, is close to 2.25.
        let spec = SimSpec::study1(1, 5);
        let basis = spec.basis.build().unwrap();
        let mut rng = stream_rng(11, &[1]);
        let n_draws = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut count = 0usize;
        for _ in 0..n_draws {
            let truth = draw_truth(&spec, &basis, &mut rng).unwrap();
            let complement = orthogonal_complement(&truth.nu).unwrap();
            let q = complement.transpose() * truth.phi[0].column(0);
            for v in q.iter() {
                sum += v;
                sumsq += v * v;
                count += 1;
            }
        }
        let nf = count as f64;
        let mean = sum / nf;
        let var = sumsq / nf - mean * mean;
        // 3 standard errors of a chi-square based variance estimate.
        let se = 2.25 * (2.0 / nf).sqrt();
        assert!((var - 2.25).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn mixture_proportions_match_block_shares() {
        let mut spec = SimSpec::study1(10_000, 7);
        spec.stochastic_mixture_assignment = false;
        let basis = spec.basis.build().unwrap();
        let mut rng = stream_rng(spec.seed, &[2]);
        let truth = draw_truth(&spec, &basis, &mut rng).unwrap();
        // First 30% of rows come from Dir(10, 1): their mean z_1 is 10/11.
        let first_block: f64 =
            (0..3000).map(|i| truth.z[(i, 0)]).sum::<f64>() / 3000.0;
        assert!((first_block - 10.0 / 11.0).abs() < 0.02, "{first_block}");
        // Middle 30% from Dir(1, 10).
        let second_block: f64 =
            (3000..6000).map(|i| truth.z[(i, 0)]).sum::<f64>() / 3000.0;
        assert!((second_block - 1.0 / 11.0).abs() < 0.02, "{second_block}");
    }

    #[test]
    fn stochastic_assignment_hits_expected_share() {
        let mut spec = SimSpec::study1(10_000, 9);
        spec.stochastic_mixture_assignment = true;
        // With stochastic assignment the expected fraction of strongly
        // feature-1 rows is 0.3 (component 1) within binomial noise.
        let basis = spec.basis.build().unwrap();
        let mut rng = stream_rng(spec.seed, &[3]);
        let truth = draw_truth(&spec, &basis, &mut rng).unwrap();
        let high = (0..10_000).filter(|&i| truth.z[(i, 0)] > 0.8).count() as f64 / 10_000.0;
        // Component 1 contributes ~0.69 of its mass above 0.8, component 3
        // another ~0.2 of 0.4; a loose window around 0.28 suffices.
        assert!(high > 0.2 && high < 0.4, "{high}");
    }

    #[test]
    fn synthesis_noise_and_determinism() {
        let spec = SimSpec::study1(20, 13);
        let basis = spec.basis.build().unwrap();
        let mut rng = stream_rng(spec.seed, &[4]);
        let truth = draw_truth(&spec, &basis, &mut rng).unwrap();

        // sigma2 -> 0 reproduces the mean exactly.
        let mut exact_spec = spec.clone();
        exact_spec.sigma2 = 1e-30;
        let mut rng_a = stream_rng(1, &[5]);
        let data = synthesize(&truth, &exact_spec, &basis, &mut rng_a).unwrap();
        let design = basis.evaluate(&data.observations[0].points).unwrap();
        let mean = design.values.transpose() * truth.mean_coeff(0);
        assert!((&data.observations[0].values - &mean).abs().max() < 1e-16 * mean.abs().max() + 1e-12);

        // Residual variance approaches sigma2.
        let mut big_spec = spec.clone();
        big_spec.n_points = 800;
        let mut rng_b = stream_rng(2, &[6]);
        let noisy = synthesize(&truth, &big_spec, &basis, &mut rng_b).unwrap();
        let mut ss = 0.0;
        let mut count = 0usize;
        for (i, obs) in noisy.observations.iter().enumerate() {
            let design = basis.evaluate(&obs.points).unwrap();
            let mean = design.values.transpose() * truth.mean_coeff(i);
            for l in 0..obs.values.len() {
                let r = obs.values[l] - mean[l];
                ss += r * r;
                count += 1;
            }
        }
        let var = ss / count as f64;
        assert!((var - spec.sigma2).abs() < 0.1 * spec.sigma2, "var {var}");

        // Same seed, same data.
        let mut rng_c1 = stream_rng(3, &[7]);
        let mut rng_c2 = stream_rng(3, &[7]);
        let d1 = synthesize(&truth, &spec, &basis, &mut rng_c1).unwrap();
        let d2 = synthesize(&truth, &spec, &basis, &mut rng_c2).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn too_many_features_for_complement() {
        let mut spec = SimSpec::study1(5, 1);
        spec.n_features = 8;
        spec.nu_means = vec![vec![]; 8];
        spec.z_mixture = vec![ZMixtureComponent {
            weight: 1.0,
            concentration: vec![1.0; 8],
        }];
        let basis = spec.basis.build().unwrap();
        let mut rng = stream_rng(1, &[8]);
        assert!(draw_truth(&spec, &basis, &mut rng).is_err());
    }

    #[test]
    fn scale_ordering_is_monotone_in_spec() {
        let spec = SimSpec::study1(5, 1);
        assert!(spec.phi_scales.windows(2).all(|w| w[0] > w[1]));
        let spec2 = SimSpec::study2(5, 1);
        assert!(spec2.phi_scales.windows(2).all(|w| w[0] > w[1]));
    }
}
