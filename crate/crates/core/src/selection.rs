//! Information criteria, elbow diagnostics, and recovery metrics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{fmt_f64, Dataset, FeatureCovariance, ModelDims, ObsDesign};
use crate::orchestration::ChainArchive;
use crate::stats::ln_normal_pdf;

/// Model-complexity count used by AIC and BIC:
/// d = (N + P) K + 2 M K P + 4 K + (N + K) M + 2.
pub fn parameter_count(dims: ModelDims) -> usize {
    let (k, p, m, n) = (dims.n_features, dims.n_basis, dims.n_eigen, dims.n_obs);
    (n + p) * k + 2 * m * k * p + 4 * k + (n + k) * m + 2
}

/// Criteria evaluated for one candidate feature count.
#[derive(Clone, Debug, PartialEq)]
pub struct CriteriaReport {
    pub n_features: usize,
    pub d: usize,
    pub aic: f64,
    pub bic: f64,
    pub dic: f64,
    pub mean_loglik: f64,
}

/// Plug-in AIC and BIC from the posterior mean of each observation's fitted
/// mean function and the posterior mean of sigma2:
/// BIC = 2 log P - d log(total points), AIC = -2 log P + 2 d.
/// The selection rule is largest BIC, smallest AIC.
pub fn compute_bic_aic(
    archive: &ChainArchive,
    data: &Dataset,
    designs: &[ObsDesign],
) -> Result<(f64, f64)> {
    if archive.draws.is_empty() {
        return Err(Error::EmptyData);
    }
    let n_draws = archive.draws.len() as f64;
    let mut mean_sigma2 = 0.0;
    let mut fitted: Vec<DVector<f64>> = designs
        .iter()
        .map(|d| DVector::zeros(d.n_points))
        .collect();
    for draw in &archive.draws {
        mean_sigma2 += draw.sigma2;
        for (i, d) in designs.iter().enumerate() {
            let w = draw.mean_coeff(i);
            fitted[i] += d.s.transpose() * w;
        }
    }
    mean_sigma2 /= n_draws;
    let mut log_p = 0.0;
    let mut total_points = 0usize;
    for (i, obs) in data.observations.iter().enumerate() {
        let mean = &fitted[i] / n_draws;
        for l in 0..obs.values.len() {
            log_p += ln_normal_pdf(obs.values[l], mean[l], mean_sigma2);
        }
        total_points += obs.values.len();
    }
    let d = parameter_count(archive.dims) as f64;
    let bic = 2.0 * log_p - d * (total_points as f64).ln();
    let aic = -2.0 * log_p + 2.0 * d;
    Ok((bic, aic))
}

/// Per-point log-density of the chi-integrated model under one draw:
/// y_ij ~ N(sum_k z_ik nu_k' B_ij, V_i(t_ij, t_ij) + sigma2).
fn per_point_marginal_logdensities(
    draw: &crate::model::ModelState,
    data: &Dataset,
    designs: &[ObsDesign],
) -> Vec<f64> {
    let dims = draw.dims();
    let cov = FeatureCovariance::from_state(draw);
    let mut out = Vec::with_capacity(data.total_points());
    for (i, (obs, d)) in data.observations.iter().zip(designs).enumerate() {
        let mut mean_coeff = DVector::zeros(dims.n_basis);
        let mut a = DMatrix::zeros(dims.n_basis, dims.n_basis);
        for k in 0..dims.n_features {
            mean_coeff += draw.z[(i, k)] * draw.nu.row(k).transpose();
            for k2 in 0..dims.n_features {
                a += draw.z[(i, k)] * draw.z[(i, k2)] * &cov.blocks[k][k2];
            }
        }
        for l in 0..obs.values.len() {
            let b = d.s.column(l);
            let mean = b.dot(&mean_coeff);
            let var = (b.transpose() * &a * b)[(0, 0)] + draw.sigma2;
            out.push(ln_normal_pdf(obs.values[l], mean, var));
        }
    }
    out
}

/// Modified deviance information criterion,
/// DIC = -4 E[log f(Y|Theta) | Y] + 2 log f_hat(Y),
/// with per-point densities averaged across draws in log space.
pub fn compute_dic(archive: &ChainArchive, data: &Dataset, designs: &[ObsDesign]) -> Result<f64> {
    if archive.draws.is_empty() {
        return Err(Error::EmptyData);
    }
    let n_draws = archive.draws.len();
    let n_points = data.total_points();
    // log densities per (draw, point)
    let mut expectation_term = 0.0;
    let mut running_lse: Vec<f64> = vec![f64::NEG_INFINITY; n_points];
    for draw in &archive.draws {
        let lds = per_point_marginal_logdensities(draw, data, designs);
        expectation_term += lds.iter().sum::<f64>();
        for (slot, &ld) in running_lse.iter_mut().zip(&lds) {
            // Streaming log-sum-exp.
            let (hi, lo) = if *slot >= ld { (*slot, ld) } else { (ld, *slot) };
            *slot = if hi == f64::NEG_INFINITY {
                lo
            } else {
                hi + (1.0 + (lo - hi).exp()).ln()
            };
        }
    }
    expectation_term /= n_draws as f64;
    let log_f_hat: f64 = running_lse
        .iter()
        .map(|&lse| lse - (n_draws as f64).ln())
        .sum();
    Ok(-4.0 * expectation_term + 2.0 * log_f_hat)
}

/// Full criteria row for one archive.
pub fn criteria_report(
    archive: &ChainArchive,
    data: &Dataset,
    designs: &[ObsDesign],
) -> Result<CriteriaReport> {
    let (bic, aic) = compute_bic_aic(archive, data, designs)?;
    let dic = compute_dic(archive, data, designs)?;
    let mean_loglik = archive.loglik.iter().sum::<f64>() / archive.loglik.len() as f64;
    Ok(CriteriaReport {
        n_features: archive.dims.n_features,
        d: parameter_count(archive.dims),
        aic,
        bic,
        dic,
        mean_loglik,
    })
}

/// Elbow scan outcome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ElbowOutcome {
    /// Suggested number of features.
    Elbow(usize),
    /// Mean log-likelihood is (numerically) linear in K: no curvature point.
    NoElbow,
}

/// Suggest K at the point of maximum drop in log-likelihood improvement
/// (discrete curvature of mean log-likelihood versus K); ties resolve to the
/// smaller K. Reports sorted by ascending K are required.
pub fn elbow_scan(reports: &[CriteriaReport]) -> Result<ElbowOutcome> {
    if reports.len() < 3 {
        return Err(Error::Config(format!(
            "elbow scan needs at least 3 candidate feature counts, got {}",
            reports.len()
        )));
    }
    if reports.windows(2).any(|w| w[0].n_features >= w[1].n_features) {
        return Err(Error::Config("reports must be sorted by ascending K".into()));
    }
    let ll: Vec<f64> = reports.iter().map(|r| r.mean_loglik).collect();
    let scale = ll.iter().map(|v| v.abs()).fold(1.0f64, f64::max);
    // Drop in improvement at each interior candidate.
    let mut best: Option<(f64, usize)> = None;
    let mut all_zero = true;
    for j in 1..ll.len() - 1 {
        let drop = (ll[j] - ll[j - 1]) - (ll[j + 1] - ll[j]);
        if drop.abs() > 1e-12 * scale {
            all_zero = false;
        }
        let better = match best {
            None => true,
            Some((b, _)) => drop > b,
        };
        if better {
            best = Some((drop, reports[j].n_features));
        }
    }
    if all_zero {
        return Ok(ElbowOutcome::NoElbow);
    }
    Ok(ElbowOutcome::Elbow(best.expect("interior point exists").1))
}

/// Relative mean integrated square error (percent):
/// integral (f - f_hat)^2 / integral f^2 * 100, with trapezoid quadrature on
/// the shared grid.
pub fn r_mise(truth: &DVector<f64>, estimate: &DVector<f64>, weights: &[f64]) -> Result<f64> {
    if truth.len() != estimate.len() || truth.len() != weights.len() {
        return Err(Error::DimensionMismatch(
            "truth, estimate and weights must share a length".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..truth.len() {
        let d = truth[j] - estimate[j];
        num += weights[j] * d * d;
        den += weights[j] * truth[j] * truth[j];
    }
    if den <= 0.0 {
        return Err(Error::UndefinedMetric(
            "true function has zero norm on the grid".into(),
        ));
    }
    Ok(num / den * 100.0)
}

/// Root-mean-square error over all membership entries.
pub fn z_rmse(z_true: &DMatrix<f64>, z_est: &DMatrix<f64>) -> Result<f64> {
    if z_true.shape() != z_est.shape() {
        return Err(Error::DimensionMismatch(format!(
            "membership shapes differ: {:?} vs {:?}",
            z_true.shape(),
            z_est.shape()
        )));
    }
    let n = (z_true.nrows() * z_true.ncols()) as f64;
    let sq: f64 = z_true
        .iter()
        .zip(z_est.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok((sq / n).sqrt())
}

/// Recovery metrics of one archive against the generating truth.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// (target label, R-MISE percent) for every mean and covariance target.
    pub r_mise: Vec<(String, f64)>,
    pub z_rmse: f64,
    /// Estimated-feature index assigned to each true feature.
    pub permutation: Vec<usize>,
    /// Draws whose membership rescale was degenerate and passed through.
    pub rescale_passthroughs: usize,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for sub in permutations(n - 1) {
        for pos in 0..n {
            let mut p: Vec<usize> = sub.iter().map(|&v| if v >= pos { v + 1 } else { v }).collect();
            p.insert(0, pos);
            out.push(p);
        }
    }
    out
}

/// Score fit quality against a known truth: posterior-median mean and
/// covariance functions versus the generating functions (R-MISE on a shared
/// uniform grid) and elementwise-median memberships versus the true ones
/// (RMSE). Feature labels are exchangeable, so the estimated features are
/// aligned to the truth by the permutation minimizing the total mean-function
/// integrated squared error before any metric is reported.
pub fn evaluate_against_truth(
    archive: &ChainArchive,
    truth: &crate::model::ModelState,
    basis: &crate::basis::BasisSystem,
    n_grid: usize,
    rescale: bool,
) -> Result<EvalReport> {
    use crate::basis::quad::trapezoid_weights;
    use crate::model::{covariance_function, mean_function, uniform_grid};
    use crate::postprocess::{pointwise_quantile, rescale_or_passthrough, RescaleOutcome};

    if archive.draws.is_empty() {
        return Err(Error::EmptyData);
    }
    let k = archive.dims.n_features;
    if truth.dims().n_features != k {
        return Err(Error::DimensionMismatch(
            "truth and archive disagree on the number of features".into(),
        ));
    }
    let points = uniform_grid(basis, n_grid);
    let weights = trapezoid_weights(&points);
    let grid = DMatrix::from_iterator(n_grid, 1, points.iter().copied());
    let surface_weights: Vec<f64> = (0..n_grid * n_grid)
        .map(|idx| weights[idx / n_grid] * weights[idx % n_grid])
        .collect();

    let apply_rescale = rescale && k == 2;
    let mut passthroughs = 0usize;
    let prepared: Vec<crate::model::ModelState> = archive
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

    // Posterior-median tabulations per estimated feature.
    let mut est_means = Vec::with_capacity(k);
    for kk in 0..k {
        let draws: Vec<DVector<f64>> = prepared
            .iter()
            .map(|s| mean_function(s, basis, kk, &grid))
            .collect::<Result<_>>()?;
        est_means.push(pointwise_quantile(&draws, 0.5));
    }
    let mut est_covs = vec![vec![DVector::zeros(0); k]; k];
    for a in 0..k {
        for b in a..k {
            let draws: Vec<DVector<f64>> = prepared
                .iter()
                .map(|s| {
                    let c = covariance_function(s, basis, a, b, &grid, &grid)?;
                    Ok(DVector::from_fn(n_grid * n_grid, |idx, _| {
                        c[(idx / n_grid, idx % n_grid)]
                    }))
                })
                .collect::<Result<_>>()?;
            est_covs[a][b] = pointwise_quantile(&draws, 0.5);
        }
    }
    let z_draws: Vec<DVector<f64>> = prepared
        .iter()
        .map(|s| {
            DVector::from_fn(s.z.nrows() * k, |idx, _| s.z[(idx / k, idx % k)])
        })
        .collect();
    let z_median_flat = pointwise_quantile(&z_draws, 0.5);
    let n_obs = archive.dims.n_obs;
    let z_median = DMatrix::from_fn(n_obs, k, |i, j| z_median_flat[i * k + j]);

    // Truth tabulations.
    let truth_means: Vec<DVector<f64>> = (0..k)
        .map(|kk| mean_function(truth, basis, kk, &grid))
        .collect::<Result<_>>()?;

    // Align labels by total mean-function squared error.
    let mut best_perm = (0..k).collect::<Vec<_>>();
    let mut best_score = f64::INFINITY;
    for perm in permutations(k) {
        let mut score = 0.0;
        for kk in 0..k {
            let diff = &truth_means[kk] - &est_means[perm[kk]];
            score += diff
                .iter()
                .zip(&weights)
                .map(|(&d, &w)| w * d * d)
                .sum::<f64>();
        }
        if score < best_score {
            best_score = score;
            best_perm = perm;
        }
    }

    let mut r_mise_rows = Vec::new();
    for kk in 0..k {
        let val = r_mise(&truth_means[kk], &est_means[best_perm[kk]], &weights)?;
        r_mise_rows.push((format!("mu{}", kk + 1), val));
    }
    for a in 0..k {
        for b in a..k {
            let truth_cov = covariance_function(truth, basis, a, b, &grid, &grid)?;
            let truth_flat = DVector::from_fn(n_grid * n_grid, |idx, _| {
                truth_cov[(idx / n_grid, idx % n_grid)]
            });
            let (pa, pb) = (best_perm[a], best_perm[b]);
            let est = if pa <= pb {
                est_covs[pa][pb].clone()
            } else {
                // C^(a,b) = C^(b,a) transposed on the grid.
                let src = &est_covs[pb][pa];
                DVector::from_fn(n_grid * n_grid, |idx, _| {
                    src[(idx % n_grid) * n_grid + idx / n_grid]
                })
            };
            let val = r_mise(&truth_flat, &est, &surface_weights)?;
            r_mise_rows.push((format!("cov{}{}", a + 1, b + 1), val));
        }
    }
    let mut z_aligned = DMatrix::zeros(n_obs, k);
    for kk in 0..k {
        z_aligned.set_column(kk, &z_median.column(best_perm[kk]));
    }
    let z_err = z_rmse(&truth.z, &z_aligned)?;

    Ok(EvalReport {
        r_mise: r_mise_rows,
        z_rmse: z_err,
        permutation: best_perm,
        rescale_passthroughs: passthroughs,
    })
}

/// CSV rows `K,d,AIC,BIC,DIC,mean_loglik`.
pub fn write_criteria_csv<W: Write>(reports: &[CriteriaReport], mut w: W) -> Result<()> {
    writeln!(w, "K,d,AIC,BIC,DIC,mean_loglik")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.n_features,
            r.d,
            fmt_f64(r.aic),
            fmt_f64(r.bic),
            fmt_f64(r.dic),
            fmt_f64(r.mean_loglik)
        )?;
    }
    Ok(())
}
