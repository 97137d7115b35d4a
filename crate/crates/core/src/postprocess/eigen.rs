//! Eigenpairs of the feature covariance operator from one posterior draw,
//! via weighted-grid discretization: assemble the K R' x K R' block
//! covariance, symmetrize, whiten by the quadrature weights, eigendecompose,
//! and back-transform the eigenvectors.

use nalgebra::{DMatrix, DVector};

use crate::basis::quad::trapezoid_weights;
use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::model::{uniform_grid, ModelState};

/// Eigenvalues and tabulated eigenfunctions of the covariance operator,
/// scaled so that C^(k,k')(s,t) = sum_p lambda_p Psi_p^(k)(s) Psi_p^(k')(t).
#[derive(Clone, Debug)]
pub struct EigenSystem {
    /// Non-increasing, non-negative.
    pub eigenvalues: Vec<f64>,
    /// Entry p is an R' x K matrix: column k holds the k-th component of
    /// Psi_p tabulated on the grid.
    pub eigenfunctions: Vec<DMatrix<f64>>,
    /// Evaluation grid (R' x d) shared by every component.
    pub grid: DMatrix<f64>,
    /// Quadrature weights on the grid.
    pub weights: Vec<f64>,
}

/// Relative eigenvalue floor: directions below `floor * lambda_1` are
/// numerical noise and are dropped.
const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Default discretization for one-dimensional domains: 4 P equally spaced
/// points per component with trapezoid quadrature weights.
pub fn default_eigen_grid(basis: &BasisSystem) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if basis.dimension() != 1 {
        return Err(Error::Config(
            "default eigen grid is defined for one-dimensional domains; supply an explicit grid"
                .into(),
        ));
    }
    let points = uniform_grid(basis, 4 * basis.n_basis());
    let weights = trapezoid_weights(&points);
    let grid = DMatrix::from_iterator(points.len(), 1, points);
    Ok((grid, weights))
}

/// Decompose the covariance structure of one draw on a weighted grid.
pub fn eigen_decompose(
    state: &ModelState,
    basis: &BasisSystem,
    grid: &DMatrix<f64>,
    weights: &[f64],
) -> Result<EigenSystem> {
    let dims = state.dims();
    let k = dims.n_features;
    let r = grid.nrows();
    if weights.len() != r {
        return Err(Error::DimensionMismatch(format!(
            "{r} grid points but {} weights",
            weights.len()
        )));
    }
    let design = basis.evaluate(grid)?;
    // Tabulated block covariance: block (a, b) = S' phi_a phi_b' S.
    let tabs: Vec<DMatrix<f64>> = (0..k)
        .map(|a| design.values.transpose() * &state.phi[a])
        .collect();
    let mut cov = DMatrix::zeros(k * r, k * r);
    for a in 0..k {
        for b in 0..k {
            let block = &tabs[a] * tabs[b].transpose();
            cov.view_mut((a * r, b * r), (r, r)).copy_from(&block);
        }
    }
    // Symmetrize against accumulation asymmetry.
    let cov = (&cov + cov.transpose()) * 0.5;

    let w_sqrt = DVector::from_iterator(k * r, (0..k * r).map(|i| weights[i % r].sqrt()));
    let mut white = cov;
    for i in 0..k * r {
        for j in 0..k * r {
            white[(i, j)] *= w_sqrt[i] * w_sqrt[j];
        }
    }
    let eig = white.symmetric_eigen();

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let lambda1 = eig.eigenvalues[order[0]];
    let max_rank = dims.n_eigen.min(dims.n_features * dims.n_basis);
    let mut eigenvalues = Vec::new();
    let mut eigenfunctions = Vec::new();
    for &idx in order.iter().take(max_rank) {
        let lambda = eig.eigenvalues[idx];
        if !(lambda > EIGENVALUE_FLOOR * lambda1.max(0.0)) || lambda <= 0.0 {
            break;
        }
        let v = eig.eigenvectors.column(idx);
        let mut psi = DMatrix::zeros(r, k);
        for a in 0..k {
            for j in 0..r {
                psi[(j, a)] = v[a * r + j] / w_sqrt[a * r + j];
            }
        }
        eigenvalues.push(lambda);
        eigenfunctions.push(psi);
    }
    Ok(EigenSystem {
        eigenvalues,
        eigenfunctions,
        grid: grid.clone(),
        weights: weights.to_vec(),
    })
}

impl EigenSystem {
    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// Reconstruct the tabulated covariance block (k, k') from the kept
    /// eigenpairs.
    pub fn reconstruct_block(&self, a: usize, b: usize) -> DMatrix<f64> {
        let r = self.grid.nrows();
        let mut out = DMatrix::zeros(r, r);
        for (lambda, psi) in self.eigenvalues.iter().zip(&self.eigenfunctions) {
            out += *lambda * psi.column(a) * psi.column(b).transpose();
        }
        out
    }

    /// Gram matrix of the eigenfunctions under the quadrature-weighted inner
    /// product; identity when orthonormal.
    pub fn orthonormality_gram(&self) -> DMatrix<f64> {
        let n = self.eigenvalues.len();
        let r = self.grid.nrows();
        let k = self.eigenfunctions.first().map_or(0, |f| f.ncols());
        let mut g = DMatrix::zeros(n, n);
        for p in 0..n {
            for q in 0..n {
                let mut acc = 0.0;
                for a in 0..k {
                    for j in 0..r {
                        acc += self.weights[j]
                            * self.eigenfunctions[p][(j, a)]
                            * self.eigenfunctions[q][(j, a)];
                    }
                }
                g[(p, q)] = acc;
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis;
    use crate::model::ModelDims;

    #[test]
    fn rank_one_matches_direct_quadrature() {
        let basis =
            basis::build_bspline_basis(3, &basis::equally_spaced_knots(4, (0.0, 1.0)), (0.0, 1.0))
                .unwrap();
        let dims = ModelDims::new(1, 8, 1, 1).unwrap();
        let mut state = ModelState::zeros(dims);
        for (p, v) in [0.4, -0.8, 1.2, 0.3, -0.5, 0.9, -0.2, 0.6].iter().enumerate() {
            state.phi[0][(p, 0)] = *v;
        }
        let (grid, weights) = default_eigen_grid(&basis).unwrap();
        let sys = eigen_decompose(&state, &basis, &grid, &weights).unwrap();
        assert_eq!(sys.eigenvalues.len(), 1);
        // lambda_1 = integral of (phi' B)^2 under the same trapezoid rule.
        let design = basis.evaluate(&grid).unwrap();
        let g = design.values.transpose() * state.phi[0].column(0);
        let direct: f64 = g
            .iter()
            .zip(&weights)
            .map(|(&v, &w)| w * v * v)
            .sum();
        assert!((sys.eigenvalues[0] - direct).abs() < 1e-8 * direct.max(1.0));
        // Psi_1 is proportional to phi' B, normalized under the weights.
        let norm: f64 = direct.sqrt();
        for j in 0..grid.nrows() {
            let expect = g[j] / norm;
            let got = sys.eigenfunctions[0][(j, 0)];
            assert!(
                (got - expect).abs().min((got + expect).abs()) < 1e-8,
                "j={j}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn zero_phi_gives_empty_system() {
        let basis = basis::build_bspline_basis(2, &[0.5], (0.0, 1.0)).unwrap();
        let dims = ModelDims::new(2, 4, 2, 1).unwrap();
        let state = ModelState::zeros(dims);
        let (grid, weights) = default_eigen_grid(&basis).unwrap();
        let sys = eigen_decompose(&state, &basis, &grid, &weights).unwrap();
        assert!(sys.is_empty());
    }
}
