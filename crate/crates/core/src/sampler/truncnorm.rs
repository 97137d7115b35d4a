//! Normal distribution truncated to (0, +inf): inverse-CDF sampling with
//! log-domain handling when nearly all untruncated mass sits below zero, and
//! the CDF ratio needed by Metropolis-Hastings proposal corrections.

use rand::Rng;

use crate::rng::ChainRng;
use crate::stats::{normal_cdf, normal_log_cdf, normal_quantile, normal_quantile_from_log};

/// Draw from N(mean, sd^2) truncated to (0, +inf).
pub fn sample_positive(mean: f64, sd: f64, rng: &mut ChainRng) -> f64 {
    debug_assert!(sd > 0.0);
    let alpha = -mean / sd; // standardized truncation point
    let u: f64 = rng.gen();
    let x = if alpha < 5.0 {
        let p_lo = normal_cdf(alpha);
        let p = (p_lo + u * (1.0 - p_lo)).clamp(p_lo, 1.0 - 1e-16);
        mean + sd * normal_quantile(p.max(1e-300))
    } else {
        // The surviving mass is a far upper tail of the untruncated normal;
        // work with log survival probabilities to avoid underflow.
        let log_s_alpha = normal_log_cdf(-alpha);
        let log_s = (1.0 - u).max(1e-300).ln() + log_s_alpha;
        mean + sd * (-normal_quantile_from_log(log_s))
    };
    x.max(f64::MIN_POSITIVE)
}

/// log[Q(current | proposed) / Q(proposed | current)] for the truncated
/// normal random walk on (0, +inf): the Gaussian kernels cancel, leaving
/// log Phi(current/sd) - log Phi(proposed/sd).
pub fn log_proposal_ratio(current: f64, proposed: f64, sd: f64) -> f64 {
    normal_log_cdf(current / sd) - normal_log_cdf(proposed / sd)
}
