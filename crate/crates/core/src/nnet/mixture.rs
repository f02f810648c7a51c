//! Output heads: Gaussian mixture over the lead time, and a bucketed heatmap.

use serde::{Deserialize, Serialize};

/// Smallest standard deviation the mixture head can emit, seconds.
pub const SIGMA_FLOOR: f64 = 1e-3;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Width of the heatmap training target, in buckets.
pub const HEATMAP_TARGET_SIGMA_BUCKETS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointEstimate {
    /// Mixture expectation `sum_i h_i * mu_i`.
    #[default]
    Expectation,
    /// Mean of the highest-weight component.
    TopComponent,
    /// Median of the mixture restricted to `[0, delta_max]`, the point that
    /// minimizes expected absolute error.
    Median,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub h: Vec<f64>,
}

impl GmmParams {
    pub fn components(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapParams {
    /// Probability of each bucket; bucket `i` is centered at `i / r` seconds.
    pub probs: Vec<f64>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of `softplus`, for initialization.
pub(crate) fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn log_softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let lse = log_sum_exp(logits);
    out.clear();
    out.extend(logits.iter().map(|l| l - lse));
}

/// Standard deviation from the raw head output.
pub(crate) fn sigma_from_raw(raw: f64, delta_max: f64) -> f64 {
    (softplus(raw) + SIGMA_FLOOR).min(delta_max)
}

/// `log N(x; mu, sigma)`.
fn log_normal(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    -0.5 * z * z - sigma.ln() - LN_SQRT_2PI
}

/// Log-likelihood of `tau` under the mixture, evaluated with log-sum-exp.
pub fn gmm_loglik(params: &GmmParams, tau: f64) -> f64 {
    let terms: Vec<f64> = params
        .h
        .iter()
        .zip(&params.mu)
        .zip(&params.sigma)
        .map(|((&h, &mu), &sigma)| h.ln() + log_normal(tau, mu, sigma))
        .collect();
    log_sum_exp(&terms)
}

/// Splits a raw `3T` output row into mixture parameters.
pub fn decode_gmm(raw: &[f64], components: usize, delta_max: f64) -> GmmParams {
    let (mu, rest) = raw.split_at(components);
    let (sig, logits) = rest.split_at(components);
    let mut log_h = Vec::new();
    log_softmax_into(logits, &mut log_h);
    GmmParams {
        mu: mu.to_vec(),
        sigma: sig.iter().map(|&s| sigma_from_raw(s, delta_max)).collect(),
        h: log_h.iter().map(|l| l.exp()).collect(),
    }
}

/// Negative log-likelihood of `tau` from a raw output row; writes the gradient
/// with respect to the raw outputs, scaled by `scale`, into `grad`.
pub(crate) fn gmm_nll_grad(
    raw: &[f64],
    tau: f64,
    components: usize,
    delta_max: f64,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let t = components;
    let (mu, rest) = raw.split_at(t);
    let (sig_raw, logits) = rest.split_at(t);
    let mut log_h = Vec::with_capacity(t);
    log_softmax_into(logits, &mut log_h);
    let sigma: Vec<f64> = sig_raw.iter().map(|&s| sigma_from_raw(s, delta_max)).collect();
    let log_terms: Vec<f64> = (0..t)
        .map(|i| log_h[i] + log_normal(tau, mu[i], sigma[i]))
        .collect();
    let lse = log_sum_exp(&log_terms);
    if let Some(grad) = grad {
        for i in 0..t {
            let resp = (log_terms[i] - lse).exp();
            let diff = tau - mu[i];
            let s2 = sigma[i] * sigma[i];
            grad[i] = -scale * resp * diff / s2;
            let clamped = softplus(sig_raw[i]) + SIGMA_FLOOR > delta_max;
            grad[t + i] = if clamped {
                0.0
            } else {
                let d_sigma = -resp * (diff * diff / (s2 * sigma[i]) - 1.0 / sigma[i]);
                scale * d_sigma * sigmoid(sig_raw[i])
            };
            grad[2 * t + i] = scale * (log_h[i].exp() - resp);
        }
    }
    -lse
}

pub fn n_heatmap_buckets(delta_max: f64, buckets_per_second: usize) -> usize {
    (2.0 * delta_max * buckets_per_second as f64).round().max(1.0) as usize
}

/// Discretized Gaussian centered at `tau` (sigma of two buckets), renormalized
/// over the bucket range.
pub fn heatmap_target(n_buckets: usize, buckets_per_second: usize, tau: f64) -> Vec<f64> {
    let r = buckets_per_second as f64;
    let sigma = HEATMAP_TARGET_SIGMA_BUCKETS / r;
    let logs: Vec<f64> = (0..n_buckets)
        .map(|i| {
            let z = (i as f64 / r - tau) / sigma;
            -0.5 * z * z
        })
        .collect();
    let lse = log_sum_exp(&logs);
    logs.iter().map(|l| (l - lse).exp()).collect()
}

pub fn decode_heatmap(raw: &[f64]) -> HeatmapParams {
    let mut log_p = Vec::new();
    log_softmax_into(raw, &mut log_p);
    HeatmapParams {
        probs: log_p.iter().map(|l| l.exp()).collect(),
    }
}

/// Cross-entropy between the predicted histogram and the Gaussian target.
pub fn heatmap_loss(params: &HeatmapParams, tau: f64, buckets_per_second: usize) -> f64 {
    let target = heatmap_target(params.probs.len(), buckets_per_second, tau);
    -target
        .iter()
        .zip(&params.probs)
        .map(|(q, p)| q * p.max(f64::MIN_POSITIVE).ln())
        .sum::<f64>()
}

pub(crate) fn heatmap_loss_grad(
    raw: &[f64],
    tau: f64,
    buckets_per_second: usize,
    scale: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    let target = heatmap_target(raw.len(), buckets_per_second, tau);
    let mut log_p = Vec::with_capacity(raw.len());
    log_softmax_into(raw, &mut log_p);
    if let Some(grad) = grad {
        for i in 0..raw.len() {
            grad[i] = scale * (log_p[i].exp() - target[i]);
        }
    }
    -target.iter().zip(&log_p).map(|(q, lp)| q * lp).sum::<f64>()
}

pub fn gmm_point_estimate(params: &GmmParams, rule: PointEstimate, delta_max: f64) -> f64 {
    let value = match rule {
        PointEstimate::Expectation => params.h.iter().zip(&params.mu).map(|(h, m)| h * m).sum(),
        PointEstimate::TopComponent => {
            let best = params
                .h
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &h)| if h > acc.1 { (i, h) } else { acc });
            params.mu[best.0]
        }
        PointEstimate::Median => gmm_median(params, delta_max),
    };
    value.clamp(0.0, delta_max)
}

/// Mixture CDF at `x`.
pub fn gmm_cdf(params: &GmmParams, x: f64) -> f64 {
    params
        .h
        .iter()
        .zip(&params.mu)
        .zip(&params.sigma)
        .map(|((&h, &mu), &sigma)| h * 0.5 * libm::erfc((mu - x) / (sigma * std::f64::consts::SQRT_2)))
        .sum()
}

const MEDIAN_ITERATIONS: usize = 48;

fn gmm_median(params: &GmmParams, delta_max: f64) -> f64 {
    if gmm_cdf(params, 0.0) >= 0.5 {
        return 0.0;
    }
    if gmm_cdf(params, delta_max) <= 0.5 {
        return delta_max;
    }
    let (mut lo, mut hi) = (0.0, delta_max);
    for _ in 0..MEDIAN_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        if gmm_cdf(params, mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn heatmap_point_estimate(params: &HeatmapParams, buckets_per_second: usize, delta_max: f64) -> f64 {
    let best = params
        .probs
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
    (best.0 as f64 / buckets_per_second as f64).clamp(0.0, delta_max)
}
