//! Observation model: conditional and chi-integrated marginal likelihoods,
//! feature mean and covariance functions, per-observation moments.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::basis::{BasisSystem, DesignMatrix};
use crate::error::{Error, Result};
use crate::stats::LN_2PI;

use super::{Dataset, FeatureCovariance, ModelState};

/// Per-observation design together with the sufficient statistics used by the
/// sampler: the basis Gram S S', the projected data S y, and y'y. With these,
/// every likelihood quantity reduces to P-dimensional quadratic forms and the
/// sweep cost no longer depends on the number of evaluation points.
#[derive(Clone, Debug)]
pub struct ObsDesign {
    /// P x n_i basis values.
    pub s: DMatrix<f64>,
    /// S S' (P x P).
    pub ss: DMatrix<f64>,
    /// S y (P).
    pub sy: DVector<f64>,
    /// y'y.
    pub yty: f64,
    /// Number of evaluation points n_i.
    pub n_points: usize,
}

impl ObsDesign {
    pub fn new(design: &DesignMatrix, values: &DVector<f64>) -> Result<Self> {
        if design.values.ncols() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} columns, observation has {} values",
                design.values.ncols(),
                values.len()
            )));
        }
        let s = design.values.clone();
        Ok(ObsDesign {
            ss: &s * s.transpose(),
            sy: &s * values,
            yty: values.dot(values),
            n_points: values.len(),
            s,
        })
    }

    /// Residual sum of squares ||y - S' w||^2 for mean coefficients w.
    pub fn rss(&self, w: &DVector<f64>) -> f64 {
        // Guard against cancellation leaving a tiny negative value.
        (self.yty - 2.0 * w.dot(&self.sy) + (w.transpose() * &self.ss * w)[(0, 0)]).max(0.0)
    }
}

/// Build per-observation designs for a dataset.
pub fn build_designs(basis: &BasisSystem, data: &Dataset) -> Result<Vec<ObsDesign>> {
    data.observations
        .iter()
        .map(|obs| {
            let design = basis.evaluate(&obs.points)?;
            ObsDesign::new(&design, &obs.values)
        })
        .collect()
}

/// Conditional log-likelihood sum_i sum_l log N(y_il; mean_il, sigma2).
pub fn log_likelihood_conditional(
    state: &ModelState,
    designs: &[ObsDesign],
) -> Result<f64> {
    if !(state.sigma2 > 0.0) {
        return Err(Error::InvalidState("sigma2 must be positive".into()));
    }
    let mut total = 0.0;
    for (i, d) in designs.iter().enumerate() {
        let w = state.mean_coeff(i);
        let rss = d.rss(&w);
        total += -0.5 * d.n_points as f64 * (LN_2PI + state.sigma2.ln())
            - rss / (2.0 * state.sigma2);
    }
    if !total.is_finite() {
        return Err(Error::InvalidState("non-finite log-likelihood".into()));
    }
    Ok(total)
}

/// Marginal log-likelihood with the latent scores integrated out:
/// Y_i ~ N(sum_k z_ik S' nu_k, V_i + sigma2 I).
pub fn log_likelihood_marginal(
    state: &ModelState,
    data: &Dataset,
    designs: &[ObsDesign],
) -> Result<f64> {
    if !(state.sigma2 > 0.0) {
        return Err(Error::InvalidState("sigma2 must be positive".into()));
    }
    let dims = state.dims();
    let cov = FeatureCovariance::from_state(state);
    let mut total = 0.0;
    for (i, (obs, d)) in data.observations.iter().zip(designs).enumerate() {
        let mut mean_coeff = DVector::zeros(dims.n_basis);
        for k in 0..dims.n_features {
            mean_coeff += state.z[(i, k)] * state.nu.row(k).transpose();
        }
        let mu = d.s.transpose() * &mean_coeff;
        let mut a = DMatrix::zeros(dims.n_basis, dims.n_basis);
        for k in 0..dims.n_features {
            for k2 in 0..dims.n_features {
                a += state.z[(i, k)] * state.z[(i, k2)] * &cov.blocks[k][k2];
            }
        }
        let mut sigma = d.s.transpose() * &a * &d.s;
        for j in 0..d.n_points {
            sigma[(j, j)] += state.sigma2;
        }
        let resid = &obs.values - &mu;
        total += ln_mvn_pdf(&resid, sigma)?;
    }
    Ok(total)
}

/// Multivariate normal log-density of a zero-mean residual with the given
/// covariance; adds one round of jitter when the factorization fails.
fn ln_mvn_pdf(resid: &DVector<f64>, mut cov: DMatrix<f64>) -> Result<f64> {
    let n = resid.len();
    let chol = match Cholesky::new(cov.clone()) {
        Some(c) => c,
        None => {
            let jitter = 1e-10 * cov.trace() / n as f64;
            for j in 0..n {
                cov[(j, j)] += jitter;
            }
            Cholesky::new(cov).ok_or(Error::NotPositiveDefinite { jittered: true })?
        }
    };
    let half_log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
    let solved = chol.solve(resid);
    Ok(-0.5 * n as f64 * LN_2PI - half_log_det - 0.5 * resid.dot(&solved))
}

/// Feature mean function nu_k' B(t) tabulated on a grid.
pub fn mean_function(
    state: &ModelState,
    basis: &BasisSystem,
    k: usize,
    grid: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    if k >= state.nu.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "feature index {k} out of range"
        )));
    }
    let design = basis.evaluate(grid)?;
    Ok(design.values.transpose() * state.nu.row(k).transpose())
}

/// Cross-covariance function C^(k,k')(s,t) = B'(s) Sigma_kk' B(t) tabulated
/// on a pair of grids.
pub fn covariance_function(
    state: &ModelState,
    basis: &BasisSystem,
    k: usize,
    k2: usize,
    grid_s: &DMatrix<f64>,
    grid_t: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let kmax = state.nu.nrows();
    if k >= kmax || k2 >= kmax {
        return Err(Error::DimensionMismatch(format!(
            "feature index ({k}, {k2}) out of range"
        )));
    }
    let ds = basis.evaluate(grid_s)?;
    let dt = basis.evaluate(grid_t)?;
    let sigma = &state.phi[k] * state.phi[k2].transpose();
    Ok(ds.values.transpose() * sigma * dt.values)
}

/// Per-observation moments (mu_i, Sigma_i) of the chi-integrated model.
pub fn observation_moments(
    state: &ModelState,
    i: usize,
    design: &ObsDesign,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let dims = state.dims();
    if i >= state.z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "observation index {i} out of range"
        )));
    }
    let mut mean_coeff = DVector::zeros(dims.n_basis);
    let mut a = DMatrix::zeros(dims.n_basis, dims.n_basis);
    for k in 0..dims.n_features {
        mean_coeff += state.z[(i, k)] * state.nu.row(k).transpose();
        for k2 in 0..dims.n_features {
            a += state.z[(i, k)] * state.z[(i, k2)] * (&state.phi[k] * state.phi[k2].transpose());
        }
    }
    let mu = design.s.transpose() * mean_coeff;
    let mut sigma = design.s.transpose() * a * &design.s;
    for j in 0..design.n_points {
        sigma[(j, j)] += state.sigma2;
    }
    Ok((mu, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis;
    use crate::model::{ModelDims, Observation};
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy_basis() -> BasisSystem {
        basis::build_bspline_basis(1, &[0.5], (0.0, 1.0)).unwrap()
    }

    fn point_grid(points: &[f64]) -> DMatrix<f64> {
        DMatrix::from_iterator(points.len(), 1, points.iter().copied())
    }

    #[test]
    fn single_point_exact_fit() {
        let basis = toy_basis();
        let dims = ModelDims::new(1, 3, 1, 1).unwrap();
        let mut state = ModelState::zeros(dims);
        state.z = DMatrix::from_element(1, 1, 1.0);
        state.pi = DVector::from_element(1, 1.0);
        // nu chosen so that the mean at t = 0 equals y = 2.
        state.nu[(0, 0)] = 2.0;
        let data = Dataset {
            observations: vec![Observation {
                points: point_grid(&[0.0]),
                values: DVector::from_vec(vec![2.0]),
            }],
        };
        let designs = build_designs(&basis, &data).unwrap();
        let ll = log_likelihood_conditional(&state, &designs).unwrap();
        assert!((ll - (-0.5 * LN_2PI)).abs() < 1e-12);
    }

    #[test]
    fn gaussian_regression_hand_value() {
        // K=1, z=1, chi=0: plain Gaussian regression on 3 points.
        let basis = toy_basis();
        let dims = ModelDims::new(1, 3, 1, 1).unwrap();
        let mut state = ModelState::zeros(dims);
        state.z = DMatrix::from_element(1, 1, 1.0);
        state.pi = DVector::from_element(1, 1.0);
        state.nu = DMatrix::from_row_slice(1, 3, &[1.0, 0.5, -0.25]);
        state.sigma2 = 0.3;
        let points = [0.0, 0.4, 1.0];
        let values = DVector::from_vec(vec![0.9, 0.8, -0.2]);
        let data = Dataset {
            observations: vec![Observation {
                points: point_grid(&points),
                values: values.clone(),
            }],
        };
        let designs = build_designs(&basis, &data).unwrap();
        // Hand computation: mean at each point via explicit basis values.
        let mut expect = 0.0;
        for (l, &t) in points.iter().enumerate() {
            let b = basis.eval_point(&[t]).unwrap();
            let mean = state.nu.row(0).transpose().dot(&b);
            let d: f64 = values[l] - mean;
            expect += -0.5 * (LN_2PI + 0.3f64.ln()) - d * d / 0.6;
        }
        let got = log_likelihood_conditional(&state, &designs).unwrap();
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn doubling_sigma2_at_zero_residual() {
        let basis = toy_basis();
        let dims = ModelDims::new(1, 3, 1, 1).unwrap();
        let mut state = ModelState::zeros(dims);
        state.z = DMatrix::from_element(1, 1, 1.0);
        state.pi = DVector::from_element(1, 1.0);
        let data = Dataset {
            observations: vec![Observation {
                points: point_grid(&[0.2, 0.7]),
                values: DVector::zeros(2),
            }],
        };
        let designs = build_designs(&basis, &data).unwrap();
        let ll1 = log_likelihood_conditional(&state, &designs).unwrap();
        state.sigma2 = 2.0;
        let ll2 = log_likelihood_conditional(&state, &designs).unwrap();
        assert!((ll2 - ll1 - (-1.0 * 2.0f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn marginal_equals_conditional_when_phi_zero() {
        let basis = toy_basis();
        let dims = ModelDims::new(2, 3, 2, 2).unwrap();
        let mut state = ModelState::zeros(dims);
        state.nu = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, 0.3, 0.2, 0.1]);
        state.sigma2 = 0.5;
        let data = Dataset {
            observations: vec![
                Observation {
                    points: point_grid(&[0.1, 0.6]),
                    values: DVector::from_vec(vec![0.4, -0.3]),
                },
                Observation {
                    points: point_grid(&[0.5]),
                    values: DVector::from_vec(vec![0.1]),
                },
            ],
        };
        let designs = build_designs(&basis, &data).unwrap();
        let marginal = log_likelihood_marginal(&state, &data, &designs).unwrap();
        let conditional = log_likelihood_conditional(&state, &designs).unwrap();
        assert!((marginal - conditional).abs() < 1e-10);
    }

    #[test]
    fn marginal_monte_carlo_oracle() {
        // Average of exp(conditional) over prior chi draws approaches the
        // marginal on a one-observation, two-point problem.
        let basis = toy_basis();
        let dims = ModelDims::new(1, 3, 2, 1).unwrap();
        let mut state = ModelState::zeros(dims);
        state.z = DMatrix::from_element(1, 1, 1.0);
        state.pi = DVector::from_element(1, 1.0);
        state.nu = DMatrix::from_row_slice(1, 3, &[0.2, -0.1, 0.4]);
        state.phi[0] = DMatrix::from_row_slice(3, 2, &[0.5, -0.2, 0.1, 0.3, -0.4, 0.2]);
        state.sigma2 = 0.4;
        let data = Dataset {
            observations: vec![Observation {
                points: point_grid(&[0.25, 0.8]),
                values: DVector::from_vec(vec![0.3, -0.1]),
            }],
        };
        let designs = build_designs(&basis, &data).unwrap();
        let marginal = log_likelihood_marginal(&state, &data, &designs).unwrap();

        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(42);
        let n_draws = 100_000;
        let mut log_terms = Vec::with_capacity(n_draws);
        let mut mc_state = state.clone();
        for _ in 0..n_draws {
            for m in 0..2 {
                mc_state.chi[(0, m)] = StandardNormal.sample(&mut rng);
            }
            log_terms.push(log_likelihood_conditional(&mc_state, &designs).unwrap());
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (log_terms.iter().map(|&l| (l - max).exp()).sum::<f64>()
            / n_draws as f64)
            .ln();
        assert!(
            (lse - marginal).abs() < (1.02f64).ln(),
            "MC {lse} vs marginal {marginal}"
        );
    }

    #[test]
    fn convexity_collapse_onto_single_feature() {
        // K=2 with z_i = (1, 0): V_i depends only on Sigma_11.
        let basis = toy_basis();
        let dims = ModelDims::new(2, 3, 1, 1).unwrap();
        let mut state = ModelState::zeros(dims);
        state.z[(0, 0)] = 1.0 - 1e-15;
        state.z[(0, 1)] = 1e-15;
        state.phi[0] = DMatrix::from_column_slice(3, 1, &[0.7, -0.3, 0.5]);
        state.phi[1] = DMatrix::from_column_slice(3, 1, &[100.0, 100.0, 100.0]);
        state.sigma2 = 0.25;
        let data = Dataset {
            observations: vec![Observation {
                points: point_grid(&[0.3, 0.9]),
                values: DVector::from_vec(vec![0.0, 0.0]),
            }],
        };
        let designs = build_designs(&basis, &data).unwrap();
        let with_big_phi2 = log_likelihood_marginal(&state, &data, &designs).unwrap();
        state.phi[1] = DMatrix::zeros(3, 1);
        let with_zero_phi2 = log_likelihood_marginal(&state, &data, &designs).unwrap();
        assert!((with_big_phi2 - with_zero_phi2).abs() < 1e-6);
    }

    #[test]
    fn mean_function_dot_product_oracle() {
        let basis = toy_basis();
        let dims = ModelDims::new(1, 3, 1, 1).unwrap();
        let mut state = ModelState::zeros(dims);
        state.nu = DMatrix::from_row_slice(1, 3, &[0.3, -1.2, 2.2]);
        let grid = point_grid(&[0.0, 0.2, 0.5, 0.8, 1.0]);
        let got = mean_function(&state, &basis, 0, &grid).unwrap();
        for (j, &t) in [0.0, 0.2, 0.5, 0.8, 1.0].iter().enumerate() {
            let b = basis.eval_point(&[t]).unwrap();
            assert!((got[j] - state.nu.row(0).transpose().dot(&b)).abs() < 1e-14);
        }
        // nu = e_1 reproduces the first basis function.
        state.nu = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let got = mean_function(&state, &basis, 0, &grid).unwrap();
        assert!((got[0] - 1.0).abs() < 1e-14);
        assert!(mean_function(&state, &basis, 3, &grid).is_err());
    }

    #[test]
    fn covariance_rank_one_outer_product() {
        let basis = toy_basis();
        let dims = ModelDims::new(1, 3, 1, 1).unwrap();
        let mut state = ModelState::zeros(dims);
        state.phi[0] = DMatrix::from_column_slice(3, 1, &[0.4, -0.6, 0.9]);
        let grid = point_grid(&[0.1, 0.5, 0.9]);
        let c = covariance_function(&state, &basis, 0, 0, &grid, &grid).unwrap();
        let design = basis.evaluate(&grid).unwrap();
        let g = design.values.transpose() * state.phi[0].column(0);
        let outer = &g * g.transpose();
        assert!((&c - &outer).abs().max() < 1e-14);
        // Diagonal non-negative, matrix symmetric PSD.
        for j in 0..3 {
            assert!(c[(j, j)] >= 0.0);
        }
    }

    #[test]
    fn observation_moments_block_assembly_oracle() {
        use rand::Rng;
        let basis = toy_basis();
        let dims = ModelDims::new(2, 3, 2, 1).unwrap();
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(9);
        let mut state = ModelState::zeros(dims);
        state.nu = DMatrix::from_fn(2, 3, |_, _| rng.gen::<f64>() - 0.5);
        for k in 0..2 {
            state.phi[k] = DMatrix::from_fn(3, 2, |_, _| rng.gen::<f64>() - 0.5);
        }
        state.z = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        state.sigma2 = 0.1;
        let points = [0.15, 0.45, 0.75];
        let grid = point_grid(&points);
        let data = Dataset {
            observations: vec![Observation {
                points: grid.clone(),
                values: DVector::zeros(3),
            }],
        };
        let designs = build_designs(&basis, &data).unwrap();
        let (mu, sigma) = observation_moments(&state, 0, &designs[0]).unwrap();
        // Brute-force assembly from covariance_function blocks.
        let mut expect_cov = DMatrix::zeros(3, 3);
        for k in 0..2 {
            for k2 in 0..2 {
                let block = covariance_function(&state, &basis, k, k2, &grid, &grid).unwrap();
                expect_cov += state.z[(0, k)] * state.z[(0, k2)] * block;
            }
        }
        for j in 0..3 {
            expect_cov[(j, j)] += state.sigma2;
        }
        assert!((&sigma - &expect_cov).abs().max() < 1e-10);
        let mut expect_mu = DVector::zeros(3);
        for k in 0..2 {
            expect_mu += state.z[(0, k)] * mean_function(&state, &basis, k, &grid).unwrap();
        }
        assert!((&mu - &expect_mu).abs().max() < 1e-12);
    }

    #[test]
    fn rescaling_transformation_leaves_likelihood_invariant() {
        // The K=2 non-identifiability: z*_1 = z_1/2, z*_2 = z_2 + z_1/2,
        // nu*_1 = 2 nu_1 - nu_2, phi*_1m = 2 phi_1m - phi_2m.
        use rand::Rng;
        let basis = toy_basis();
        let dims = ModelDims::new(2, 3, 2, 3).unwrap();
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(11);
        let mut state = ModelState::zeros(dims);
        state.nu = DMatrix::from_fn(2, 3, |_, _| rng.gen::<f64>() - 0.5);
        for k in 0..2 {
            state.phi[k] = DMatrix::from_fn(3, 2, |_, _| rng.gen::<f64>() - 0.5);
        }
        state.chi = DMatrix::from_fn(3, 2, |_, _| rng.gen::<f64>() - 0.5);
        for i in 0..3 {
            let z1 = 0.2 + 0.6 * rng.gen::<f64>();
            state.z[(i, 0)] = z1;
            state.z[(i, 1)] = 1.0 - z1;
        }
        state.sigma2 = 0.2;
        let mut data = Dataset { observations: vec![] };
        for i in 0..3 {
            let points = [0.1 + 0.1 * i as f64, 0.5, 0.85];
            data.observations.push(Observation {
                points: point_grid(&points),
                values: DVector::from_vec(vec![rng.gen(), rng.gen(), rng.gen()]),
            });
        }
        let designs = build_designs(&basis, &data).unwrap();
        let before = log_likelihood_conditional(&state, &designs).unwrap();

        let mut rescaled = state.clone();
        for i in 0..3 {
            rescaled.z[(i, 0)] = 0.5 * state.z[(i, 0)];
            rescaled.z[(i, 1)] = state.z[(i, 1)] + 0.5 * state.z[(i, 0)];
        }
        rescaled.nu.set_row(0, &(2.0 * state.nu.row(0) - state.nu.row(1)));
        rescaled.phi[0] = 2.0 * &state.phi[0] - &state.phi[1];
        let after = log_likelihood_conditional(&rescaled, &designs).unwrap();
        assert!((before - after).abs() < 1e-10);
    }

    #[test]
    fn marginal_variance_matches_monte_carlo() {
        // Var over chi draws of the fitted value matches V_i diagonal.
        let basis = toy_basis();
        let dims = ModelDims::new(1, 3, 2, 1).unwrap();
        let mut state = ModelState::zeros(dims);
        state.z = DMatrix::from_element(1, 1, 1.0);
        state.pi = DVector::from_element(1, 1.0);
        state.phi[0] = DMatrix::from_row_slice(3, 2, &[0.5, -0.2, 0.1, 0.3, -0.4, 0.2]);
        state.sigma2 = 1e-12;
        let grid = point_grid(&[0.3]);
        let data = Dataset {
            observations: vec![Observation {
                points: grid,
                values: DVector::zeros(1),
            }],
        };
        let designs = build_designs(&basis, &data).unwrap();
        let (_, sigma) = observation_moments(&state, 0, &designs[0]).unwrap();
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(3);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let mut s = state.clone();
            for m in 0..2 {
                s.chi[(0, m)] = StandardNormal.sample(&mut rng);
            }
            let w = s.mean_coeff(0);
            let fitted = designs[0].s.transpose() * w;
            sum += fitted[0];
            sumsq += fitted[0] * fitted[0];
        }
        let var = sumsq / n as f64 - (sum / n as f64).powi(2);
        let rel = (var - sigma[(0, 0)]).abs() / sigma[(0, 0)];
        assert!(rel < 0.05, "relative error {rel}");
    }
}
