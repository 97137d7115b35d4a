//! Parameter-block updates for the Metropolis-within-Gibbs sweep.
//!
//! Gaussian and gamma blocks are exact conjugate updates; the membership
//! rows, population proportions, concentration scale, and the two shrinkage
//! shape parameters use Metropolis-Hastings. Every data-dependent precision
//! and rate is scaled by the likelihood tempering exponent `beta` from the
//! [`FitContext`], so the same code serves untempered (beta = 1) and
//! tempered sweeps.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::rng::ChainRng;
use crate::stats;

use super::truncnorm;
use super::FitContext;

/// Proposals with any simplex component below this are rejected outright;
/// the Dirichlet density is undefined at the boundary.
pub const SIMPLEX_FLOOR: f64 = 1e-12;

/// Draw from N(P^{-1} rhs, P^{-1}) given the precision matrix P, climbing a
/// jitter ladder if the factorization fails.
pub fn sample_gaussian_from_precision(
    mut precision: DMatrix<f64>,
    rhs: &DVector<f64>,
    rng: &mut ChainRng,
) -> Result<DVector<f64>> {
    let p = precision.nrows();
    let scale = precision.trace().abs().max(f64::MIN_POSITIVE) / p as f64;
    let mut chol: Option<Cholesky<f64, nalgebra::Dyn>> = Cholesky::new(precision.clone());
    if chol.is_none() {
        for eps in [1e-10, 1e-8, 1e-6] {
            for j in 0..p {
                precision[(j, j)] += eps * scale;
            }
            chol = Cholesky::new(precision.clone());
            if chol.is_some() {
                break;
            }
        }
    }
    let chol = chol.ok_or(Error::NotPositiveDefinite { jittered: true })?;
    let mean = chol.solve(rhs);
    let z = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
    let lt = chol.l().transpose();
    let noise = lt
        .solve_upper_triangular(&z)
        .ok_or(Error::NotPositiveDefinite { jittered: true })?;
    Ok(mean + noise)
}

/// Gaussian log-density parameterized by its precision matrix.
pub fn ln_gaussian_precision_pdf(
    x: &DVector<f64>,
    mean: &DVector<f64>,
    precision: &DMatrix<f64>,
) -> f64 {
    let chol = Cholesky::new(precision.clone()).expect("precision must be PD");
    let half_log_det: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
    let d = x - mean;
    let quad = (d.transpose() * precision * &d)[(0, 0)];
    -0.5 * x.len() as f64 * stats::LN_2PI + half_log_det - 0.5 * quad
}

fn add_scaled(acc: &mut DMatrix<f64>, m: &DMatrix<f64>, s: f64) {
    acc.zip_apply(m, |a, b| *a += s * b);
}

/// Mean coefficient vectors w_i for all observations.
fn mean_coeffs(state: &ModelState) -> Vec<DVector<f64>> {
    (0..state.dims().n_obs).map(|i| state.mean_coeff(i)).collect()
}

/// Gaussian full-conditional moments of the eigen-direction column
/// phi_{jm}: precision D_jm^{-1} + (beta/sigma2) sum_i z_ij^2 chi_im^2 S S',
/// right-hand side (beta/sigma2) sum_i z_ij chi_im S(y - S'v_i) with v_i the
/// mean coefficients excluding this column's contribution.
pub fn phi_conditional(
    state: &ModelState,
    ctx: &FitContext,
    w: &[DVector<f64>],
    j: usize,
    m: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let dims = state.dims();
    let p = dims.n_basis;
    let beta_over_s2 = ctx.beta / state.sigma2;
    let tau_tilde = state.tau_tilde();
    let mut precision = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let phi_col = state.phi[j].column(m).into_owned();
    for (i, d) in ctx.designs.iter().enumerate() {
        let zij = state.z[(i, j)];
        let chim = state.chi[(i, m)];
        let c = zij * chim;
        if c == 0.0 {
            continue;
        }
        add_scaled(&mut precision, &d.ss, beta_over_s2 * c * c);
        let v = &w[i] - c * &phi_col;
        let su = &d.sy - &d.ss * v;
        rhs.axpy(beta_over_s2 * c, &su, 1.0);
    }
    for pp in 0..p {
        precision[(pp, pp)] += state.gamma[j][(pp, m)] * tau_tilde[(m, j)];
    }
    (precision, rhs)
}

/// Gibbs update of every phi_{jm}, sequentially with the freshest values.
pub fn update_phi(state: &mut ModelState, ctx: &FitContext, rng: &mut ChainRng) -> Result<()> {
    let dims = state.dims();
    let mut w = mean_coeffs(state);
    for j in 0..dims.n_features {
        for m in 0..dims.n_eigen {
            let (precision, rhs) = phi_conditional(state, ctx, &w, j, m);
            let new_col = sample_gaussian_from_precision(precision, &rhs, rng)?;
            let delta_col = &new_col - state.phi[j].column(m);
            for (i, wi) in w.iter_mut().enumerate() {
                wi.axpy(state.z[(i, j)] * state.chi[(i, m)], &delta_col, 1.0);
            }
            state.phi[j].set_column(m, &new_col);
        }
    }
    Ok(())
}

/// Condition a Gaussian draw (or mean) with precision factor `chol` on the
/// linear constraints L' x = -c: x -> x - M L (L' M L)^{-1} (L' x + c) with
/// M the covariance. Applying this affine map to an unconstrained draw
/// yields a draw from the constrained conditional.
pub fn constrain_to_subspace(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    value: &DVector<f64>,
    l_mat: &DMatrix<f64>,
    cons: &DVector<f64>,
) -> Result<DVector<f64>> {
    let ml = chol.solve(l_mat);
    let s = l_mat.transpose() * &ml;
    let s_chol = Cholesky::new(s).ok_or(Error::ConstraintSingular)?;
    let viol = l_mat.transpose() * value + cons;
    Ok(value - &ml * s_chol.solve(&viol))
}

/// Variant of the phi update that keeps the columns of Phi mutually
/// orthogonal under the basis inner product <Phi_p, Phi_q> = sum_k
/// phi_kp' G phi_kq. The unconstrained conditional draw is projected onto
/// the constraint manifold (conditioning by Kriging).
pub fn update_phi_orthogonal(
    state: &mut ModelState,
    ctx: &FitContext,
    rng: &mut ChainRng,
) -> Result<()> {
    let dims = state.dims();
    let gram = &ctx.artifacts.gram.values;
    let mut w = mean_coeffs(state);
    for j in 0..dims.n_features {
        for m in 0..dims.n_eigen {
            let (precision, rhs) = phi_conditional(state, ctx, &w, j, m);
            let chol = Cholesky::new(precision.clone())
                .ok_or(Error::NotPositiveDefinite { jittered: false })?;
            let mean = chol.solve(&rhs);
            let z = DVector::from_fn(dims.n_basis, |_, _| StandardNormal.sample(rng));
            let noise = chol
                .l()
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or(Error::NotPositiveDefinite { jittered: false })?;
            let unconstrained = &mean + noise;

            // Active constraints against the other columns q != m.
            let mut cols: Vec<DVector<f64>> = Vec::new();
            let mut cons: Vec<f64> = Vec::new();
            for q in 0..dims.n_eigen {
                if q == m {
                    continue;
                }
                let l_col = gram * state.phi[j].column(q);
                let mut c_q = 0.0;
                for k in 0..dims.n_features {
                    if k == j {
                        continue;
                    }
                    c_q += (state.phi[k].column(m).transpose()
                        * gram
                        * state.phi[k].column(q))[(0, 0)];
                }
                let col_scale = l_col.amax();
                if col_scale < 1e-12 {
                    if c_q.abs() >= 1e-10 {
                        return Err(Error::ConstraintSingular);
                    }
                    continue; // vacuous constraint
                }
                cols.push(l_col);
                cons.push(c_q);
            }
            let new_col = if cols.is_empty() {
                unconstrained
            } else {
                let nc = cols.len();
                let mut l_mat = DMatrix::zeros(dims.n_basis, nc);
                for (q, col) in cols.iter().enumerate() {
                    l_mat.set_column(q, col);
                }
                constrain_to_subspace(&chol, &unconstrained, &l_mat, &DVector::from_vec(cons))?
            };
            let delta_col = &new_col - state.phi[j].column(m);
            for (i, wi) in w.iter_mut().enumerate() {
                wi.axpy(state.z[(i, j)] * state.chi[(i, m)], &delta_col, 1.0);
            }
            state.phi[j].set_column(m, &new_col);
        }
    }
    Ok(())
}

/// Gamma conditional parameters (shape, rate) of delta_{ik} (0-based index
/// `i0`), holding the other increments fixed.
pub fn delta_conditional(state: &ModelState, i0: usize, k: usize) -> (f64, f64) {
    let dims = state.dims();
    let (p, m) = (dims.n_basis, dims.n_eigen);
    let shape_base = if i0 == 0 {
        state.a1[k]
    } else {
        state.a2[k]
    };
    let shape = shape_base + (p * (m - i0)) as f64 / 2.0;
    let mut rate = 1.0;
    for mm in i0..m {
        // Product of the increments up to mm, excluding position i0.
        let mut prod = 1.0;
        for j in 0..=mm {
            if j != i0 {
                prod *= state.delta[(j, k)];
            }
        }
        let mut acc = 0.0;
        for pp in 0..p {
            acc += state.gamma[k][(pp, mm)] * state.phi[k][(pp, mm)].powi(2);
        }
        rate += 0.5 * prod * acc;
    }
    (shape, rate)
}

pub fn update_delta(state: &mut ModelState, _ctx: &FitContext, rng: &mut ChainRng) -> Result<()> {
    let dims = state.dims();
    for k in 0..dims.n_features {
        for i0 in 0..dims.n_eigen {
            let (shape, rate) = delta_conditional(state, i0, k);
            let draw = if i0 == 0 {
                Gamma::new(shape, 1.0 / rate)
                    .map_err(|e| Error::InvalidState(format!("delta conditional: {e}")))?
                    .sample(rng)
            } else {
                // Prior truncation to [1, +inf) carries into the conditional.
                stats::sample_truncated_gamma(shape, rate, 1.0, rng)
            };
            state.delta[(i0, k)] = draw.max(f64::MIN_POSITIVE);
        }
    }
    Ok(())
}

/// Gamma conditional parameters (shape, rate) of the local precision
/// gamma_{kpm}.
pub fn gamma_conditional(
    state: &ModelState,
    nu_gamma: f64,
    k: usize,
    p: usize,
    m: usize,
) -> (f64, f64) {
    let tau_tilde = state.tau_tilde();
    let phi2 = state.phi[k][(p, m)].powi(2);
    ((nu_gamma + 1.0) / 2.0, (phi2 * tau_tilde[(m, k)] + nu_gamma) / 2.0)
}

pub fn update_gamma(state: &mut ModelState, ctx: &FitContext, rng: &mut ChainRng) -> Result<()> {
    let dims = state.dims();
    let nu_g = ctx.hyper.nu_gamma;
    let tau_tilde = state.tau_tilde();
    for k in 0..dims.n_features {
        for pp in 0..dims.n_basis {
            for mm in 0..dims.n_eigen {
                let phi2 = state.phi[k][(pp, mm)].powi(2);
                let shape = (nu_g + 1.0) / 2.0;
                let rate = (phi2 * tau_tilde[(mm, k)] + nu_g) / 2.0;
                let draw = Gamma::new(shape, 1.0 / rate)
                    .map_err(|e| Error::InvalidState(format!("gamma conditional: {e}")))?
                    .sample(rng);
                state.gamma[k][(pp, mm)] = draw.max(f64::MIN_POSITIVE);
            }
        }
    }
    Ok(())
}

/// Unnormalized log target of a_1k given delta_1k.
pub fn a1_log_target(a: f64, delta_1k: f64, alpha1: f64, beta1: f64) -> f64 {
    if a <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -stats::ln_gamma(a) + (a - 1.0) * delta_1k.ln() + (alpha1 - 1.0) * a.ln() - a * beta1
}

/// Unnormalized log target of a_2k given delta_{2k..Mk}. Each increment
/// likelihood is a gamma density truncated to [1, +inf), so the target
/// carries a -log Q(a, 1) normalizer per increment.
pub fn a2_log_target(a: f64, delta_tail: &[f64], alpha2: f64, beta2: f64) -> f64 {
    if a <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let m1 = delta_tail.len() as f64;
    let sum_log: f64 = delta_tail.iter().map(|d| d.ln()).sum();
    -m1 * (stats::ln_gamma(a) + stats::ln_gamma_q(a, 1.0)) + (a - 1.0) * sum_log
        + (alpha2 - 1.0) * a.ln()
        - a * beta2
}

/// Truncated-normal random-walk MH for the shrinkage shape parameters.
/// Returns per-feature (a1 accepted, a2 accepted).
pub fn update_a1_a2(
    state: &mut ModelState,
    ctx: &FitContext,
    rng: &mut ChainRng,
) -> Result<Vec<(bool, bool)>> {
    let dims = state.dims();
    let h = ctx.hyper;
    let s1 = (h.eps1 / h.beta1).sqrt();
    let s2 = (h.eps2 / h.beta2).sqrt();
    let mut flags = Vec::with_capacity(dims.n_features);
    for k in 0..dims.n_features {
        let cur1 = state.a1[k];
        let prop1 = truncnorm::sample_positive(cur1, s1, rng);
        let log_ratio = a1_log_target(prop1, state.delta[(0, k)], h.alpha1, h.beta1)
            - a1_log_target(cur1, state.delta[(0, k)], h.alpha1, h.beta1)
            + truncnorm::log_proposal_ratio(cur1, prop1, s1);
        let acc1 = rng.gen::<f64>().ln() < log_ratio;
        if acc1 {
            state.a1[k] = prop1;
        }

        let delta_tail: Vec<f64> = (1..dims.n_eigen).map(|j| state.delta[(j, k)]).collect();
        let cur2 = state.a2[k];
        let prop2 = truncnorm::sample_positive(cur2, s2, rng);
        let log_ratio = a2_log_target(prop2, &delta_tail, h.alpha2, h.beta2)
            - a2_log_target(cur2, &delta_tail, h.alpha2, h.beta2)
            + truncnorm::log_proposal_ratio(cur2, prop2, s2);
        let acc2 = rng.gen::<f64>().ln() < log_ratio;
        if acc2 {
            state.a2[k] = prop2;
        }
        flags.push((acc1, acc2));
    }
    Ok(flags)
}

/// Per-observation membership log target (terms depending on z_i only):
/// Dirichlet prior kernel plus the tempered data misfit.
fn z_log_target(
    z: &[f64],
    feat_coeffs: &[DVector<f64>],
    design: Option<&crate::model::ObsDesign>,
    conc: &[f64],
    beta_over_2s2: f64,
) -> f64 {
    let prior: f64 = z
        .iter()
        .zip(conc)
        .map(|(&zk, &ck)| (ck - 1.0) * zk.ln())
        .sum();
    let Some(design) = design else {
        return prior;
    };
    let mut w = DVector::zeros(feat_coeffs[0].len());
    for (k, u) in feat_coeffs.iter().enumerate() {
        w.axpy(z[k], u, 1.0);
    }
    prior - beta_over_2s2 * design.rss(&w)
}

/// Dirichlet random-walk MH over membership rows. Returns per-observation
/// acceptance flags.
pub fn update_z(
    state: &mut ModelState,
    ctx: &FitContext,
    rng: &mut ChainRng,
) -> Result<Vec<bool>> {
    let dims = state.dims();
    let (k, n) = (dims.n_features, dims.n_obs);
    if k == 1 {
        return Ok(vec![true; n]);
    }
    let a_z = ctx.hyper.a_z;
    let conc_prior: Vec<f64> = state.pi.iter().map(|&p| state.alpha3 * p).collect();
    let beta_over_2s2 = ctx.beta / (2.0 * state.sigma2);
    let mut flags = Vec::with_capacity(n);
    for i in 0..n {
        // Per-feature coefficient vectors u_k = nu_k + sum_m chi_im phi_km.
        let feat_coeffs: Vec<DVector<f64>> = (0..k)
            .map(|kk| {
                let mut u = state.nu.row(kk).transpose();
                for m in 0..dims.n_eigen {
                    u.axpy(state.chi[(i, m)], &state.phi[kk].column(m).into_owned(), 1.0);
                }
                u
            })
            .collect();
        let cur: Vec<f64> = state.z.row(i).iter().copied().collect();
        let fwd_conc: Vec<f64> = cur.iter().map(|&v| a_z * v).collect();
        let proposal = stats::sample_dirichlet(&fwd_conc, rng);
        if proposal.iter().any(|&v| v < SIMPLEX_FLOOR) {
            flags.push(false);
            continue;
        }
        let rev_conc: Vec<f64> = proposal.iter().map(|&v| a_z * v).collect();
        let design = ctx.designs.get(i);
        let log_ratio = z_log_target(&proposal, &feat_coeffs, design, &conc_prior, beta_over_2s2)
            - z_log_target(&cur, &feat_coeffs, design, &conc_prior, beta_over_2s2)
            + stats::ln_dirichlet_pdf(&cur, &rev_conc)
            - stats::ln_dirichlet_pdf(&proposal, &fwd_conc);
        let accept = rng.gen::<f64>().ln() < log_ratio;
        if accept {
            for (kk, &v) in proposal.iter().enumerate() {
                state.z[(i, kk)] = v;
            }
        }
        flags.push(accept);
    }
    Ok(flags)
}

/// Sum over observations of the membership Dirichlet log-density under the
/// given concentration scale and proportions; the data term of both the pi
/// and alpha3 targets, with the multivariate Beta normalizer evaluated via
/// log-gamma.
pub fn membership_log_lik(state: &ModelState, alpha3: f64, pi: &[f64]) -> f64 {
    let conc: Vec<f64> = pi.iter().map(|&p| alpha3 * p).collect();
    (0..state.dims().n_obs)
        .map(|i| {
            let row: Vec<f64> = state.z.row(i).iter().copied().collect();
            stats::ln_dirichlet_pdf(&row, &conc)
        })
        .sum()
}

/// Dirichlet random-walk MH for the population proportions pi. A prior-only
/// target, unaffected by likelihood tempering.
pub fn update_pi(state: &mut ModelState, ctx: &FitContext, rng: &mut ChainRng) -> Result<bool> {
    let k = state.dims().n_features;
    if k == 1 {
        return Ok(true);
    }
    let h = ctx.hyper;
    let c = h.c_vec(k);
    let cur_pi: Vec<f64> = state.pi.iter().copied().collect();
    let fwd_conc: Vec<f64> = cur_pi.iter().map(|&v| h.a_pi * v).collect();
    let proposal = stats::sample_dirichlet(&fwd_conc, rng);
    let accept = if proposal.iter().any(|&v| v < SIMPLEX_FLOOR) {
        false
    } else {
        let rev_conc: Vec<f64> = proposal.iter().map(|&v| h.a_pi * v).collect();
        let log_ratio = stats::ln_dirichlet_pdf(&proposal, &c)
            + membership_log_lik(state, state.alpha3, &proposal)
            - stats::ln_dirichlet_pdf(&cur_pi, &c)
            - membership_log_lik(state, state.alpha3, &cur_pi)
            + stats::ln_dirichlet_pdf(&cur_pi, &rev_conc)
            - stats::ln_dirichlet_pdf(&proposal, &fwd_conc);
        rng.gen::<f64>().ln() < log_ratio
    };
    if accept {
        for (kk, &v) in proposal.iter().enumerate() {
            state.pi[kk] = v;
        }
    }
    Ok(accept)
}

/// Truncated-normal random-walk MH for the membership concentration scale
/// alpha3. A prior-only target, unaffected by likelihood tempering.
pub fn update_alpha3(state: &mut ModelState, ctx: &FitContext, rng: &mut ChainRng) -> Result<bool> {
    let k = state.dims().n_features;
    if k == 1 {
        return Ok(true);
    }
    let h = ctx.hyper;
    let pi_now: Vec<f64> = state.pi.iter().copied().collect();
    let cur = state.alpha3;
    let prop = truncnorm::sample_positive(cur, h.sigma_alpha3, rng);
    let log_ratio = -h.b * prop + membership_log_lik(state, prop, &pi_now)
        - (-h.b * cur + membership_log_lik(state, cur, &pi_now))
        + truncnorm::log_proposal_ratio(cur, prop, h.sigma_alpha3);
    let accept = rng.gen::<f64>().ln() < log_ratio;
    if accept {
        state.alpha3 = prop;
    }
    Ok(accept)
}

/// Joint MH updates of pi then alpha3.
pub fn update_pi_alpha3(
    state: &mut ModelState,
    ctx: &FitContext,
    rng: &mut ChainRng,
) -> Result<(bool, bool)> {
    let acc_pi = update_pi(state, ctx, rng)?;
    let acc_a3 = update_alpha3(state, ctx, rng)?;
    Ok((acc_pi, acc_a3))
}

/// Gaussian full-conditional moments of nu_j: precision tau_j P +
/// (beta/sigma2) sum_i z_ij^2 S S', right-hand side from the residuals with
/// nu_j's own contribution removed.
pub fn nu_conditional(
    state: &ModelState,
    ctx: &FitContext,
    w: &[DVector<f64>],
    j: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let dims = state.dims();
    let p = dims.n_basis;
    let beta_over_s2 = ctx.beta / state.sigma2;
    let mut precision = ctx.artifacts.penalty.values.clone() * state.tau[j];
    let mut rhs = DVector::zeros(p);
    let nu_j = state.nu.row(j).transpose();
    for (i, d) in ctx.designs.iter().enumerate() {
        let zij = state.z[(i, j)];
        if zij == 0.0 {
            continue;
        }
        add_scaled(&mut precision, &d.ss, beta_over_s2 * zij * zij);
        let v = &w[i] - zij * &nu_j;
        let su = &d.sy - &d.ss * v;
        rhs.axpy(beta_over_s2 * zij, &su, 1.0);
    }
    (precision, rhs)
}

pub fn update_nu(state: &mut ModelState, ctx: &FitContext, rng: &mut ChainRng) -> Result<()> {
    let dims = state.dims();
    let mut w = mean_coeffs(state);
    for j in 0..dims.n_features {
        let (precision, rhs) = nu_conditional(state, ctx, &w, j);
        let new_nu = sample_gaussian_from_precision(precision, &rhs, rng)?;
        let delta_nu = &new_nu - state.nu.row(j).transpose();
        for (i, wi) in w.iter_mut().enumerate() {
            wi.axpy(state.z[(i, j)], &delta_nu, 1.0);
        }
        state.nu.set_row(j, &new_nu.transpose());
    }
    Ok(())
}

/// Gamma conditional of the smoothing precision tau_k. The shape uses the
/// penalty rank (P - 1 for the intrinsic first-order random walk), matching
/// the rank-deficient normalization of the prior density.
pub fn tau_conditional(state: &ModelState, ctx: &FitContext, k: usize) -> (f64, f64) {
    let nu_k = state.nu.row(k).transpose();
    let quad = (nu_k.transpose() * &ctx.artifacts.penalty.values * &nu_k)[(0, 0)];
    let shape = ctx.hyper.alpha_tau + ctx.artifacts.penalty_rank as f64 / 2.0;
    let rate = ctx.hyper.beta_tau + 0.5 * quad;
    (shape, rate)
}

pub fn update_tau(state: &mut ModelState, ctx: &FitContext, rng: &mut ChainRng) -> Result<()> {
    for k in 0..state.dims().n_features {
        let (shape, rate) = tau_conditional(state, ctx, k);
        let draw = Gamma::new(shape, 1.0 / rate)
            .map_err(|e| Error::InvalidState(format!("tau conditional: {e}")))?
            .sample(rng);
        state.tau[k] = draw.max(f64::MIN_POSITIVE);
    }
    Ok(())
}

/// Inverse-gamma conditional of sigma2; under tempering both the shape
/// increment and the residual rate scale by beta.
pub fn sigma2_conditional(state: &ModelState, ctx: &FitContext) -> (f64, f64) {
    let total_points: usize = ctx.designs.iter().map(|d| d.n_points).sum();
    let mut rss = 0.0;
    for (i, d) in ctx.designs.iter().enumerate() {
        rss += d.rss(&state.mean_coeff(i));
    }
    let shape = ctx.hyper.alpha0 + ctx.beta * total_points as f64 / 2.0;
    let rate = ctx.hyper.beta0 + ctx.beta * 0.5 * rss;
    (shape, rate)
}

pub fn update_sigma2(state: &mut ModelState, ctx: &FitContext, rng: &mut ChainRng) -> Result<()> {
    let (shape, rate) = sigma2_conditional(state, ctx);
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::InvalidState(format!("sigma2 conditional: {e}")))?
        .sample(rng);
    state.sigma2 = (1.0 / g).max(f64::MIN_POSITIVE);
    Ok(())
}

/// Scalar Gaussian conditional of chi_im: precision 1 + (beta/sigma2)
/// sum_l (sum_k z_ik phi_km' B)^2.
pub fn chi_conditional(
    state: &ModelState,
    ctx: &FitContext,
    w: &[DVector<f64>],
    i: usize,
    m: usize,
) -> (f64, f64) {
    let dims = state.dims();
    let beta_over_s2 = ctx.beta / state.sigma2;
    let d = &ctx.designs[i];
    let mut a = DVector::zeros(dims.n_basis);
    for k in 0..dims.n_features {
        a.axpy(state.z[(i, k)], &state.phi[k].column(m).into_owned(), 1.0);
    }
    let t = &d.ss * &a;
    let quad = a.dot(&t);
    let precision = 1.0 + beta_over_s2 * quad;
    let rhs = beta_over_s2 * (a.dot(&d.sy) - t.dot(&w[i]) + state.chi[(i, m)] * quad);
    (precision, rhs)
}

pub fn update_chi(state: &mut ModelState, ctx: &FitContext, rng: &mut ChainRng) -> Result<()> {
    let dims = state.dims();
    let mut w = mean_coeffs(state);
    for i in 0..dims.n_obs {
        for m in 0..dims.n_eigen {
            let (precision, rhs) = chi_conditional(state, ctx, &w, i, m);
            let mean = rhs / precision;
            let z: f64 = StandardNormal.sample(rng);
            let new_chi = mean + z / precision.sqrt();
            let delta_chi = new_chi - state.chi[(i, m)];
            if delta_chi != 0.0 {
                let mut a = DVector::zeros(dims.n_basis);
                for k in 0..dims.n_features {
                    a.axpy(state.z[(i, k)], &state.phi[k].column(m).into_owned(), 1.0);
                }
                w[i].axpy(delta_chi, &a, 1.0);
            }
            state.chi[(i, m)] = new_chi;
        }
    }
    Ok(())
}
