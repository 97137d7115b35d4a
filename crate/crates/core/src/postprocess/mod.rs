//! Posterior post-processing: the membership rescale transformation for
//! two-feature models, covariance eigenstructure, pointwise and simultaneous
//! credible bands, and plot-ready function summaries.

mod eigen;

pub use eigen::{default_eigen_grid, eigen_decompose, EigenSystem};

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSystem;
use crate::error::{Error, Result};
use crate::model::fmt_f64;
use crate::model::ModelState;
use crate::orchestration::ChainArchive;

/// Rescale the membership matrix of a two-feature draw so that at least one
/// observation lies entirely in each feature, applying the compensating
/// linear transformation to the mean and eigen coefficients. The conditional
/// likelihood is invariant under this transformation.
pub fn membership_rescale(state: &ModelState) -> Result<ModelState> {
    let dims = state.dims();
    if dims.n_features != 2 {
        return Err(Error::RescaleDegenerate(format!(
            "rescaling is defined for two features, model has {}",
            dims.n_features
        )));
    }
    let n = dims.n_obs;
    if n == 0 {
        return Err(Error::RescaleDegenerate("no observations".into()));
    }
    let argmax_col = |col: usize| {
        let mut best = 0;
        for i in 1..n {
            if state.z[(i, col)] > state.z[(best, col)] {
                best = i;
            }
        }
        best
    };
    let row0 = argmax_col(0);
    let row1 = argmax_col(1);
    if row0 == row1 {
        return Err(Error::RescaleDegenerate(
            "both column maxima at the same observation".into(),
        ));
    }
    let t = DMatrix::from_row_slice(
        2,
        2,
        &[
            state.z[(row0, 0)],
            state.z[(row0, 1)],
            state.z[(row1, 0)],
            state.z[(row1, 1)],
        ],
    );
    let det = t[(0, 0)] * t[(1, 1)] - t[(0, 1)] * t[(1, 0)];
    if det.abs() < 1e-12 {
        return Err(Error::RescaleDegenerate("transform matrix is singular".into()));
    }
    let t_inv = DMatrix::from_row_slice(
        2,
        2,
        &[
            t[(1, 1)] / det,
            -t[(0, 1)] / det,
            -t[(1, 0)] / det,
            t[(0, 0)] / det,
        ],
    );
    let mut out = state.clone();
    out.z = &state.z * &t_inv;
    out.nu = &t * &state.nu;
    let m = dims.n_eigen;
    for mm in 0..m {
        // Column mm across features transforms as T * [phi_1m'; phi_2m'].
        let old0 = state.phi[0].column(mm).into_owned();
        let old1 = state.phi[1].column(mm).into_owned();
        out.phi[0].set_column(mm, &(t[(0, 0)] * &old0 + t[(0, 1)] * &old1));
        out.phi[1].set_column(mm, &(t[(1, 0)] * &old0 + t[(1, 1)] * &old1));
    }
    Ok(out)
}

/// Outcome of rescaling one draw inside a pipeline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RescaleOutcome {
    Applied,
    /// Draw passed through unmodified (degenerate transform or K != 2).
    PassedThrough(String),
}

/// Apply the rescale when possible, otherwise pass the draw through flagged.
pub fn rescale_or_passthrough(state: &ModelState) -> (ModelState, RescaleOutcome) {
    match membership_rescale(state) {
        Ok(s) => (s, RescaleOutcome::Applied),
        Err(e) => (state.clone(), RescaleOutcome::PassedThrough(e.to_string())),
    }
}

/// Simultaneous credible band over a grid of points.
#[derive(Clone, Debug)]
pub struct CredibleBand {
    /// Evaluation points (one row of coordinates per point).
    pub grid: Vec<Vec<f64>>,
    /// Pointwise mean of the draws.
    pub center: DVector<f64>,
    /// Pointwise standard deviation of the draws.
    pub sd: DVector<f64>,
    /// (1 - alpha) quantile of the max standardized deviation.
    pub m_alpha: f64,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Build the simultaneous band from function draws tabulated on a common
/// grid. Points with zero sampling variation are excluded from the max
/// statistic; if every point is degenerate the band is undefined.
pub fn simultaneous_band(
    grid: Vec<Vec<f64>>,
    draws: &[DVector<f64>],
    alpha: f64,
) -> Result<CredibleBand> {
    let n = draws.len();
    if n < 2 {
        return Err(Error::DegenerateBand(format!(
            "need at least 2 draws, got {n}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let r = draws[0].len();
    if grid.len() != r || draws.iter().any(|d| d.len() != r) {
        return Err(Error::DimensionMismatch(
            "draws and grid must share a common length".into(),
        ));
    }
    let nf = n as f64;
    let mut center: DVector<f64> = DVector::zeros(r);
    for d in draws {
        center += d;
    }
    center /= nf;
    let mut sd: DVector<f64> = DVector::zeros(r);
    for d in draws {
        for j in 0..r {
            let dev = d[j] - center[j];
            sd[j] += dev * dev;
        }
    }
    for j in 0..r {
        sd[j] = (sd[j] / (nf - 1.0)).sqrt();
    }
    let active: Vec<usize> = (0..r).filter(|&j| sd[j] > 0.0).collect();
    if active.is_empty() {
        return Err(Error::DegenerateBand(
            "all grid points have zero sampling variation".into(),
        ));
    }
    let mut max_devs: Vec<f64> = draws
        .iter()
        .map(|d| {
            active
                .iter()
                .map(|&j| ((d[j] - center[j]) / sd[j]).abs())
                .fold(0.0f64, f64::max)
        })
        .collect();
    max_devs.sort_by(|a, b| a.partial_cmp(b).expect("finite deviations"));
    // Exactly the ceil((1-alpha) * N)-th order statistic.
    let rank = (((1.0 - alpha) * nf).ceil() as usize).clamp(1, n);
    let m_alpha = max_devs[rank - 1];
    let lower = &center - &sd * m_alpha;
    let upper = &center + &sd * m_alpha;
    Ok(CredibleBand {
        grid,
        center,
        sd,
        m_alpha,
        lower,
        upper,
    })
}

/// Nearest-rank empirical quantile per grid point.
pub fn pointwise_quantile(draws: &[DVector<f64>], q: f64) -> DVector<f64> {
    let n = draws.len();
    let r = draws[0].len();
    let rank = (((q * n as f64).ceil() as usize).clamp(1, n)) - 1;
    let mut out = DVector::zeros(r);
    let mut col = vec![0.0; n];
    for j in 0..r {
        for (i, d) in draws.iter().enumerate() {
            col[i] = d[j];
        }
        col.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
        out[j] = col[rank];
    }
    out
}

/// A function of the model state to summarize across posterior draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// Feature mean mu^(k) (0-based index).
    Mean(usize),
    /// Covariance surface C^(k,k') tabulated on grid x grid.
    Covariance(usize, usize),
}

impl Target {
    pub fn label(&self) -> String {
        match self {
            Target::Mean(k) => format!("mu{}", k + 1),
            Target::Covariance(k, k2) => format!("cov{}{}", k + 1, k2 + 1),
        }
    }

    /// Parse labels of the form `mu1` or `cov12`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(num) = s.strip_prefix("mu") {
            let k: usize = num
                .parse()
                .map_err(|_| Error::Config(format!("bad target {s:?}")))?;
            if k == 0 {
                return Err(Error::Config(format!("bad target {s:?}: indices are 1-based")));
            }
            return Ok(Target::Mean(k - 1));
        }
        if let Some(num) = s.strip_prefix("cov") {
            let digits: Vec<u32> = num.chars().filter_map(|c| c.to_digit(10)).collect();
            if digits.len() == num.chars().count() && digits.len() == 2 && digits[0] > 0 && digits[1] > 0
            {
                return Ok(Target::Covariance(digits[0] as usize - 1, digits[1] as usize - 1));
            }
        }
        Err(Error::Config(format!(
            "bad target {s:?}; expected mu<k> or cov<k><k'>"
        )))
    }
}

/// Summary of one target function across an archive.
#[derive(Clone, Debug)]
pub struct FunctionSummary {
    pub target: Target,
    /// One coordinate row per summarized point (length 1 for means, 2 for
    /// covariance surfaces).
    pub points: Vec<Vec<f64>>,
    pub median: DVector<f64>,
    pub lo_pt: DVector<f64>,
    pub hi_pt: DVector<f64>,
    pub lo_sim: DVector<f64>,
    pub hi_sim: DVector<f64>,
    /// Draws that could not be rescaled and were passed through unmodified.
    pub rescale_passthroughs: usize,
}

/// Tabulate a target for one draw.
fn tabulate(
    state: &ModelState,
    basis: &BasisSystem,
    grid: &DMatrix<f64>,
    target: Target,
) -> Result<DVector<f64>> {
    match target {
        Target::Mean(k) => crate::model::mean_function(state, basis, k, grid),
        Target::Covariance(k, k2) => {
            let c = crate::model::covariance_function(state, basis, k, k2, grid, grid)?;
            let r = c.nrows();
            Ok(DVector::from_fn(r * r, |idx, _| c[(idx / r, idx % r)]))
        }
    }
}

/// Point estimate (pointwise posterior median) with pointwise and
/// simultaneous (1 - alpha) bands for the requested targets. When `rescale`
/// is set and the model has two features, every draw is rescaled first;
/// draws with a degenerate transform pass through unmodified and are
/// counted.
pub fn summarize_functions(
    archive: &ChainArchive,
    basis: &BasisSystem,
    grid: &DMatrix<f64>,
    targets: &[Target],
    alpha: f64,
    rescale: bool,
) -> Result<Vec<FunctionSummary>> {
    if archive.draws.is_empty() {
        return Err(Error::EmptyData);
    }
    let apply_rescale = rescale && archive.dims.n_features == 2;
    let mut passthroughs = 0usize;
    let prepared: Vec<ModelState> = archive
        .draws
        .iter()
        .map(|d| {
            if apply_rescale {
                let (s, outcome) = rescale_or_passthrough(d);
                if matches!(outcome, RescaleOutcome::PassedThrough(_)) {
                    passthroughs += 1;
                }
                s
            } else {
                d.clone()
            }
        })
        .collect();

    let mut out = Vec::with_capacity(targets.len());
    for &target in targets {
        let tabs: Vec<DVector<f64>> = prepared
            .iter()
            .map(|s| tabulate(s, basis, grid, target))
            .collect::<Result<_>>()?;
        let points: Vec<Vec<f64>> = match target {
            Target::Mean(_) => (0..grid.nrows())
                .map(|j| grid.row(j).iter().copied().collect())
                .collect(),
            Target::Covariance(..) => {
                let r = grid.nrows();
                let mut pts = Vec::with_capacity(r * r);
                for a in 0..r {
                    for b in 0..r {
                        let mut row: Vec<f64> = grid.row(a).iter().copied().collect();
                        row.extend(grid.row(b).iter().copied());
                        pts.push(row);
                    }
                }
                pts
            }
        };
        let median = pointwise_quantile(&tabs, 0.5);
        let lo_pt = pointwise_quantile(&tabs, alpha / 2.0);
        let hi_pt = pointwise_quantile(&tabs, 1.0 - alpha / 2.0);
        let (lo_sim, hi_sim) = if tabs.len() >= 2 {
            match simultaneous_band(points.clone(), &tabs, alpha) {
                Ok(band) => (band.lower, band.upper),
                // Degenerate sampling variation: fall back to the pointwise
                // band (e.g. single-mode archives in smoke tests).
                Err(Error::DegenerateBand(_)) => (lo_pt.clone(), hi_pt.clone()),
                Err(e) => return Err(e),
            }
        } else {
            (lo_pt.clone(), hi_pt.clone())
        };
        out.push(FunctionSummary {
            target,
            points,
            median,
            lo_pt,
            hi_pt,
            lo_sim,
            hi_sim,
            rescale_passthroughs: passthroughs,
        });
    }
    Ok(out)
}

impl FunctionSummary {
    /// Write the summary as CSV: `t,median,lo_pt,hi_pt,lo_sim,hi_sim` for
    /// means, with a leading `s` column added for covariance surfaces.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let coord_cols = self.points.first().map_or(1, |p| p.len());
        match coord_cols {
            1 => writeln!(w, "t,median,lo_pt,hi_pt,lo_sim,hi_sim")?,
            2 => writeln!(w, "s,t,median,lo_pt,hi_pt,lo_sim,hi_sim")?,
            _ => {
                let coords: Vec<String> = (1..=coord_cols).map(|i| format!("t{i}")).collect();
                writeln!(w, "{},median,lo_pt,hi_pt,lo_sim,hi_sim", coords.join(","))?
            }
        }
        for j in 0..self.median.len() {
            let mut row: Vec<String> = self.points[j].iter().map(|&v| fmt_f64(v)).collect();
            row.push(fmt_f64(self.median[j]));
            row.push(fmt_f64(self.lo_pt[j]));
            row.push(fmt_f64(self.hi_pt[j]));
            row.push(fmt_f64(self.lo_sim[j]));
            row.push(fmt_f64(self.hi_sim[j]));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Write eigenvalues as `index,eigenvalue` CSV.
pub fn write_eigenvalues_csv<W: Write>(sys: &EigenSystem, mut w: W) -> Result<()> {
    writeln!(w, "index,eigenvalue")?;
    for (i, lambda) in sys.eigenvalues.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, fmt_f64(*lambda))?;
    }
    Ok(())
}
