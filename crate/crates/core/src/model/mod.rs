//! Model state and observation model for functional mixed membership.
//!
//! Each of N sample paths is a convex combination (with simplex weights z_i)
//! of K latent functional features. Feature means are nu_k' B(t) and the
//! covariance structure comes from M shared eigen-directions with basis
//! coefficients phi_km, loaded per path by latent standard normal scores
//! chi_im.

mod io;
mod likelihood;

pub use io::{
    fmt_f64, read_dataset_csv, read_dataset_jsonl, write_dataset_csv, write_dataset_jsonl,
};
pub use likelihood::{
    build_designs, covariance_function, log_likelihood_conditional, log_likelihood_marginal,
    mean_function, observation_moments, ObsDesign,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSystem;
use crate::error::{Error, Result};

/// Lower clamp for membership weights; the Dirichlet density is undefined at
/// the simplex boundary.
pub const Z_CLAMP: f64 = 1e-10;

/// One functional observation: an evaluation grid (n_i x d) and the observed
/// values at those points.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub points: DMatrix<f64>,
    pub values: DVector<f64>,
}

/// N observed sample paths.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn total_points(&self) -> usize {
        self.observations.iter().map(|o| o.values.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyData);
        }
        for (i, obs) in self.observations.iter().enumerate() {
            if obs.values.is_empty() {
                return Err(Error::DataFormat(format!("observation {i} has no points")));
            }
            if obs.points.nrows() != obs.values.len() {
                return Err(Error::DataFormat(format!(
                    "observation {i}: {} grid points but {} values",
                    obs.points.nrows(),
                    obs.values.len()
                )));
            }
            if obs.values.iter().any(|v| !v.is_finite())
                || obs.points.iter().any(|v| !v.is_finite())
            {
                return Err(Error::DataFormat(format!(
                    "observation {i} contains non-finite entries"
                )));
            }
        }
        Ok(())
    }
}

/// Core model dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Number of latent features K.
    pub n_features: usize,
    /// Basis size P.
    pub n_basis: usize,
    /// Number of eigen-directions M <= K * P.
    pub n_eigen: usize,
    /// Number of observations N.
    pub n_obs: usize,
}

impl ModelDims {
    pub fn new(n_features: usize, n_basis: usize, n_eigen: usize, n_obs: usize) -> Result<Self> {
        if n_features == 0 || n_basis == 0 || n_eigen == 0 {
            return Err(Error::InvalidState(
                "model dimensions must be positive".into(),
            ));
        }
        if n_eigen > n_features * n_basis {
            return Err(Error::InvalidState(format!(
                "n_eigen = {} exceeds the saturated count K*P = {}",
                n_eigen,
                n_features * n_basis
            )));
        }
        Ok(ModelDims {
            n_features,
            n_basis,
            n_eigen,
            n_obs,
        })
    }
}

/// One full parameter configuration of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// K x P feature mean coefficients; row k is nu_k.
    pub nu: DMatrix<f64>,
    /// Eigen-direction coefficients, stored as K slices of P x M so that
    /// column updates in the sampler touch contiguous memory.
    pub phi: Vec<DMatrix<f64>>,
    /// N x M latent scores.
    pub chi: DMatrix<f64>,
    /// N x K membership weights; each row lies in the open unit simplex.
    pub z: DMatrix<f64>,
    /// Population membership proportions (K-simplex).
    pub pi: DVector<f64>,
    /// Dirichlet concentration scale for the memberships.
    pub alpha3: f64,
    /// Observation noise variance.
    pub sigma2: f64,
    /// M x K multiplicative gamma increments delta_mk.
    pub delta: DMatrix<f64>,
    /// Local precisions gamma_kpm, stored as K slices of P x M.
    pub gamma: Vec<DMatrix<f64>>,
    /// Shape parameters of the first-layer increments, per feature.
    pub a1: DVector<f64>,
    /// Shape parameters of the later increments, per feature.
    pub a2: DVector<f64>,
    /// Random-walk smoothing precisions per feature.
    pub tau: DVector<f64>,
}

impl ModelState {
    pub fn dims(&self) -> ModelDims {
        ModelDims {
            n_features: self.nu.nrows(),
            n_basis: self.nu.ncols(),
            n_eigen: self.chi.ncols(),
            n_obs: self.chi.nrows(),
        }
    }

    /// Zero-valued state with unit scales, used as a shell before sampling.
    pub fn zeros(dims: ModelDims) -> Self {
        let (k, p, m, n) = (dims.n_features, dims.n_basis, dims.n_eigen, dims.n_obs);
        ModelState {
            nu: DMatrix::zeros(k, p),
            phi: vec![DMatrix::zeros(p, m); k],
            chi: DMatrix::zeros(n, m),
            z: DMatrix::from_element(n, k, 1.0 / k as f64),
            pi: DVector::from_element(k, 1.0 / k as f64),
            alpha3: 1.0,
            sigma2: 1.0,
            delta: DMatrix::from_element(m, k, 1.0),
            gamma: vec![DMatrix::from_element(p, m, 1.0); k],
            a1: DVector::from_element(k, 1.0),
            a2: DVector::from_element(k, 1.0),
            tau: DVector::from_element(k, 1.0),
        }
    }

    /// Cumulative product tau~_mk = prod_{n<=m} delta_nk, computed on demand.
    pub fn tau_tilde(&self) -> DMatrix<f64> {
        let (m, k) = self.delta.shape();
        let mut out = DMatrix::zeros(m, k);
        for kk in 0..k {
            let mut acc = 1.0;
            for mm in 0..m {
                acc *= self.delta[(mm, kk)];
                out[(mm, kk)] = acc;
            }
        }
        out
    }

    /// Mean coefficient vector w_i = sum_k z_ik (nu_k + sum_m chi_im phi_km),
    /// so that the fitted mean for observation i is S_i' w_i.
    pub fn mean_coeff(&self, i: usize) -> DVector<f64> {
        let dims = self.dims();
        let mut w = DVector::zeros(dims.n_basis);
        for k in 0..dims.n_features {
            let zik = self.z[(i, k)];
            w += zik * self.nu.row(k).transpose();
            for m in 0..dims.n_eigen {
                w += zik * self.chi[(i, m)] * self.phi[k].column(m);
            }
        }
        w
    }

    /// Clamp membership rows away from the simplex boundary and renormalize.
    pub fn clamp_memberships(&mut self) {
        clamp_simplex_rows(&mut self.z);
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        let (k, p, m, n) = (dims.n_features, dims.n_basis, dims.n_eigen, dims.n_obs);
        if self.phi.len() != k || self.gamma.len() != k {
            return Err(Error::InvalidState("phi/gamma slice count != K".into()));
        }
        for slice in self.phi.iter().chain(self.gamma.iter()) {
            if slice.shape() != (p, m) {
                return Err(Error::InvalidState("phi/gamma slice shape != P x M".into()));
            }
        }
        if self.z.shape() != (n, k) || self.delta.shape() != (m, k) {
            return Err(Error::InvalidState("z or delta has wrong shape".into()));
        }
        if !(self.sigma2 > 0.0) || !(self.alpha3 > 0.0) {
            return Err(Error::InvalidState("sigma2 and alpha3 must be positive".into()));
        }
        if self.delta.iter().any(|&v| !(v > 0.0))
            || self.gamma.iter().any(|g| g.iter().any(|&v| !(v > 0.0)))
            || self.a1.iter().any(|&v| !(v > 0.0))
            || self.a2.iter().any(|&v| !(v > 0.0))
            || self.tau.iter().any(|&v| !(v > 0.0))
        {
            return Err(Error::InvalidState(
                "scale parameters must be strictly positive".into(),
            ));
        }
        for i in 0..n {
            let row_sum: f64 = self.z.row(i).iter().sum();
            if (row_sum - 1.0).abs() > 1e-8 || self.z.row(i).iter().any(|&v| v <= 0.0 || v >= 1.0)
            {
                return Err(Error::InvalidState(format!(
                    "membership row {i} is not in the open simplex"
                )));
            }
        }
        let pi_sum: f64 = self.pi.iter().sum();
        if (pi_sum - 1.0).abs() > 1e-8 || self.pi.iter().any(|&v| v <= 0.0) {
            return Err(Error::InvalidState("pi is not in the simplex".into()));
        }
        let finite = self.nu.iter().all(|v| v.is_finite())
            && self.phi.iter().all(|s| s.iter().all(|v| v.is_finite()))
            && self.chi.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidState("non-finite coefficients".into()));
        }
        Ok(())
    }
}

/// Clamp each row to [Z_CLAMP, 1 - Z_CLAMP] and renormalize to sum one.
pub fn clamp_simplex_rows(z: &mut DMatrix<f64>) {
    for i in 0..z.nrows() {
        let mut sum = 0.0;
        for j in 0..z.ncols() {
            let v = z[(i, j)].clamp(Z_CLAMP, 1.0 - Z_CLAMP);
            z[(i, j)] = v;
            sum += v;
        }
        for j in 0..z.ncols() {
            z[(i, j)] /= sum;
        }
    }
}

/// Block covariance structure of the latent features: block (k, k') is
/// Sigma_kk' = sum_m phi_km phi_k'm'.
#[derive(Clone, Debug)]
pub struct FeatureCovariance {
    pub blocks: Vec<Vec<DMatrix<f64>>>,
}

impl FeatureCovariance {
    pub fn from_state(state: &ModelState) -> Self {
        let k = state.nu.nrows();
        let mut blocks = Vec::with_capacity(k);
        for a in 0..k {
            let mut row = Vec::with_capacity(k);
            for b in 0..k {
                row.push(&state.phi[a] * state.phi[b].transpose());
            }
            blocks.push(row);
        }
        FeatureCovariance { blocks }
    }

    /// Assemble the full KP x KP matrix.
    pub fn full(&self) -> DMatrix<f64> {
        let k = self.blocks.len();
        let p = self.blocks[0][0].nrows();
        let mut out = DMatrix::zeros(k * p, k * p);
        for a in 0..k {
            for b in 0..k {
                out.view_mut((a * p, b * p), (p, p)).copy_from(&self.blocks[a][b]);
            }
        }
        out
    }
}

/// Grid of equally spaced points over a one-dimensional basis domain.
pub fn uniform_grid(basis: &BasisSystem, n: usize) -> Vec<f64> {
    let (lo, hi) = basis.domain()[0];
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n as f64 - 1.0))
        .collect()
}
