//! Basis systems spanning the model subspace: univariate B-splines, tensor
//! products for multi-dimensional domains, design matrices, the Gram matrix
//! of the L2 inner product, and the first-order random-walk penalty.

mod bspline;
pub mod quad;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use bspline::{equally_spaced_knots, BSpline1d};

use crate::error::{Error, Result};

/// Tensor bases beyond this dimension are rejected: basis counts grow
/// multiplicatively and the model becomes impractical past 3-4 dimensions.
pub const MAX_TENSOR_DIM: usize = 4;

/// A (possibly tensor-product) basis over a box domain. Immutable after
/// construction and safe to share across threads.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisSystem {
    dims: Vec<BSpline1d>,
    n_basis: usize,
}

/// Basis evaluations at a set of grid points: column j holds B(t_j).
#[derive(Clone, Debug)]
pub struct DesignMatrix {
    /// P x n matrix of basis values.
    pub values: DMatrix<f64>,
    /// n x d matrix of evaluation points.
    pub grid: DMatrix<f64>,
}

/// Symmetric positive semidefinite penalty matrix of the first-order random
/// walk prior on basis coefficients.
#[derive(Clone, Debug)]
pub struct PenaltyMatrix {
    pub values: DMatrix<f64>,
}

/// Gram matrix of the basis under the L2 inner product on the domain.
#[derive(Clone, Debug)]
pub struct GramMatrix {
    pub values: DMatrix<f64>,
}

/// Build a univariate B-spline basis with clamped boundary knots.
pub fn build_bspline_basis(
    degree: usize,
    interior_knots: &[f64],
    domain: (f64, f64),
) -> Result<BasisSystem> {
    let spline = BSpline1d::new(degree, interior_knots, domain)?;
    let n_basis = spline.n_basis();
    Ok(BasisSystem {
        dims: vec![spline],
        n_basis,
    })
}

/// Combine per-dimension bases into a tensor-product basis. Basis index
/// ordering is row-major over dimensions, consistent with Kronecker products
/// of the per-dimension quantities.
pub fn build_tensor_basis(per_dim: Vec<BasisSystem>) -> Result<BasisSystem> {
    let dims: Vec<BSpline1d> = per_dim.into_iter().flat_map(|b| b.dims).collect();
    if dims.is_empty() {
        return Err(Error::UnsupportedDimension(0));
    }
    if dims.len() > MAX_TENSOR_DIM {
        return Err(Error::UnsupportedDimension(dims.len()));
    }
    let n_basis = dims.iter().map(|d| d.n_basis()).product();
    Ok(BasisSystem { dims, n_basis })
}

impl BasisSystem {
    pub fn dimension(&self) -> usize {
        self.dims.len()
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn components(&self) -> &[BSpline1d] {
        &self.dims
    }

    /// Box domain as per-dimension intervals.
    pub fn domain(&self) -> Vec<(f64, f64)> {
        self.dims.iter().map(|d| d.domain()).collect()
    }

    /// Basis vector B(t) at one point (length-d slice).
    pub fn eval_point(&self, point: &[f64]) -> Result<DVector<f64>> {
        if point.len() != self.dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "point has {} coordinates, basis domain has {}",
                point.len(),
                self.dims.len()
            )));
        }
        let mut out = DVector::from_element(1, 1.0);
        for (spline, &coord) in self.dims.iter().zip(point) {
            let vals = spline.eval(coord).map_err(|_| Error::OutsideDomain {
                point: point.to_vec(),
            })?;
            let prev = out;
            let mut next = DVector::zeros(prev.len() * vals.len());
            for (i, &a) in prev.iter().enumerate() {
                for (j, &b) in vals.iter().enumerate() {
                    next[i * vals.len() + j] = a * b;
                }
            }
            out = next;
        }
        Ok(out)
    }

    /// Evaluate the basis at every row of `grid` (n x d).
    pub fn evaluate(&self, grid: &DMatrix<f64>) -> Result<DesignMatrix> {
        if grid.ncols() != self.dims.len() {
            return Err(Error::DimensionMismatch(format!(
                "grid has {} columns, basis domain has {} dimensions",
                grid.ncols(),
                self.dims.len()
            )));
        }
        let n = grid.nrows();
        let mut values = DMatrix::zeros(self.n_basis, n);
        let mut point = vec![0.0; grid.ncols()];
        for j in 0..n {
            for (d, coord) in point.iter_mut().enumerate() {
                *coord = grid[(j, d)];
            }
            values.set_column(j, &self.eval_point(&point)?);
        }
        Ok(DesignMatrix {
            values,
            grid: grid.clone(),
        })
    }

    /// Convenience evaluation for one-dimensional domains.
    pub fn evaluate_1d(&self, points: &[f64]) -> Result<DesignMatrix> {
        let grid = DMatrix::from_iterator(points.len(), 1, points.iter().copied());
        self.evaluate(&grid)
    }
}

/// First-order random-walk penalty. In one dimension this is the tridiagonal
/// matrix with diagonal (1, 2, ..., 2, 1) and off-diagonals -1, so that
/// v' P v = sum of squared differences of adjacent coefficients. Tensor bases
/// use the Kronecker sum of per-dimension penalties weighted by the Gram
/// matrices of the complementary factors.
pub fn penalty_matrix(basis: &BasisSystem) -> PenaltyMatrix {
    if basis.dimension() == 1 {
        return PenaltyMatrix {
            values: rw1_penalty(basis.n_basis()),
        };
    }
    let grams: Vec<DMatrix<f64>> = basis
        .dims
        .iter()
        .map(|s| gram_1d(s, s.degree() + 2))
        .collect();
    let penalties: Vec<DMatrix<f64>> = basis.dims.iter().map(|s| rw1_penalty(s.n_basis())).collect();
    let mut total = DMatrix::zeros(basis.n_basis(), basis.n_basis());
    for d in 0..basis.dims.len() {
        let mut factor = DMatrix::from_element(1, 1, 1.0);
        for (j, spline) in basis.dims.iter().enumerate() {
            let block = if j == d { &penalties[j] } else { &grams[j] };
            factor = factor.kronecker(block);
            let _ = spline;
        }
        total += factor;
    }
    PenaltyMatrix { values: total }
}

fn rw1_penalty(p: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    if p == 1 {
        return m;
    }
    for i in 0..p {
        m[(i, i)] = if i == 0 || i == p - 1 { 1.0 } else { 2.0 };
        if i + 1 < p {
            m[(i, i + 1)] = -1.0;
            m[(i + 1, i)] = -1.0;
        }
    }
    m
}

/// Gram matrix of the basis, integrated exactly with Gauss-Legendre rules per
/// knot span. Tensor bases factorize into Kronecker products.
pub fn gram_matrix(basis: &BasisSystem, quadrature_order: usize) -> GramMatrix {
    let mut total = DMatrix::from_element(1, 1, 1.0);
    for spline in &basis.dims {
        total = total.kronecker(&gram_1d(spline, quadrature_order));
    }
    GramMatrix { values: total }
}

fn gram_1d(spline: &BSpline1d, quadrature_order: usize) -> DMatrix<f64> {
    let p = spline.n_basis();
    let order = quadrature_order.max(spline.degree() + 1);
    let mut g = DMatrix::zeros(p, p);
    for (a, b) in spline.spans() {
        let (nodes, weights) = quad::scaled_rule(order, a, b);
        for (&t, &w) in nodes.iter().zip(&weights) {
            let vals = spline.eval(t).expect("quadrature node inside domain");
            for i in 0..p {
                if vals[i] == 0.0 {
                    continue;
                }
                for j in i..p {
                    g[(i, j)] += w * vals[i] * vals[j];
                }
            }
        }
    }
    // Fill the strict lower triangle from the upper one.
    for i in 0..p {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

/// Basis configuration as read from run and simulation config files.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BasisSpec {
    pub dims: Vec<BasisDimSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BasisDimSpec {
    pub degree: usize,
    /// Explicit interior knots; takes precedence over `n_knots`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knots: Option<Vec<f64>>,
    /// Number of equally spaced interior knots.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_knots: Option<usize>,
    pub domain: (f64, f64),
}

impl BasisSpec {
    /// Cubic B-splines with `n_knots` equally spaced interior knots on [0, 1].
    pub fn cubic_unit(n_knots: usize) -> Self {
        BasisSpec {
            dims: vec![BasisDimSpec {
                degree: 3,
                knots: None,
                n_knots: Some(n_knots),
                domain: (0.0, 1.0),
            }],
        }
    }

    pub fn build(&self) -> Result<BasisSystem> {
        if self.dims.is_empty() {
            return Err(Error::Config("basis spec has no dimensions".into()));
        }
        let mut parts = Vec::with_capacity(self.dims.len());
        for dim in &self.dims {
            let knots = match (&dim.knots, dim.n_knots) {
                (Some(k), _) => k.clone(),
                (None, Some(n)) => equally_spaced_knots(n, dim.domain),
                (None, None) => Vec::new(),
            };
            parts.push(build_bspline_basis(dim.degree, &knots, dim.domain)?);
        }
        build_tensor_basis(parts)
    }
}
