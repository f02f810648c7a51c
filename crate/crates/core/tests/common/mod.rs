//! Random fixtures and brute-force reference implementations shared by the
//! integration tests. The references are written from the definitions, not
//! from the library code, so they avoid its shortcuts (binary searches,
//! bounded frame ranges, incremental counters).
#![allow(dead_code)]

use leadtime::corpus::{Utterance, UtteranceTrack};
use leadtime::dsp::FrameGrid;
use leadtime::labels::{compute_tau, LabelTrack};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const SHIFT: f64 = 0.05;

/// A time that is either exactly frame-aligned or at least 1e-4 s away from
/// every frame start, so tie handling is never at the mercy of rounding.
fn random_time(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let k_lo = (lo / SHIFT).ceil() as i64;
    let k_hi = (hi / SHIFT).floor() as i64;
    let k = rng.gen_range(k_lo..=k_hi.max(k_lo));
    if rng.gen_bool(0.3) {
        k as f64 * SHIFT
    } else {
        (k as f64 + rng.gen_range(0.01..0.99)) * SHIFT
    }
}

/// Alternating non-overlapping utterances for two speakers, with occasional
/// overlaps and same-speaker continuations, over `duration` seconds.
pub fn random_tracks(rng: &mut ChaCha8Rng, duration: f64) -> (UtteranceTrack, UtteranceTrack) {
    let mut spans: [Vec<(f64, f64)>; 2] = [Vec::new(), Vec::new()];
    let mut t = rng.gen_range(0.0..2.0);
    let mut who = rng.gen_range(0..2usize);
    while t < duration - 0.5 {
        let start = random_time(rng, t, t + 0.3);
        let len = rng.gen_range(0.5..4.0);
        let end = random_time(rng, start + 0.2, start + len);
        let last_end = spans[who].last().map_or(f64::NEG_INFINITY, |s| s.1);
        if start > last_end + 1e-4 {
            spans[who].push((start, end));
        }
        // Mostly hand over; sometimes overlap or keep the floor.
        let r = rng.gen::<f64>();
        t = if r < 0.15 { start + (end - start) * 0.5 } else { end + rng.gen_range(0.0..2.5) };
        if r < 0.8 {
            who = 1 - who;
        }
    }
    let to_track = |v: &[(f64, f64)]| {
        UtteranceTrack::from_utterances(
            v.iter()
                .map(|&(start, end)| Utterance { start, end, words: 0..0 })
                .collect(),
        )
    };
    (to_track(&spans[0]), to_track(&spans[1]))
}

pub fn random_labels(rng: &mut ChaCha8Rng, n_frames: usize, delta_max: f64) -> LabelTrack {
    let grid = FrameGrid::standard(n_frames);
    let (target, current) = random_tracks(rng, grid.duration());
    compute_tau(&target, &current, &grid, delta_max).unwrap()
}

/// Predictions mixing exact bucket edges, the endpoints, noisy truth and uniform noise.
pub fn random_predictions(rng: &mut ChaCha8Rng, labels: &LabelTrack, r: usize) -> Vec<f64> {
    let d = labels.delta_max;
    labels
        .tau
        .iter()
        .map(|&tau| match rng.gen_range(0..5) {
            0 => rng.gen_range(0..=(d * r as f64) as usize) as f64 / r as f64,
            1 => if rng.gen_bool(0.5) { 0.0 } else { d },
            2 => (tau + rng.gen_range(-0.3..0.3)).clamp(0.0, d),
            _ => rng.gen_range(0.0..=d),
        })
        .collect()
}

/// Reference lead time straight from the definition.
pub fn tau_reference(target: &UtteranceTrack, grid: &FrameGrid, delta_max: f64) -> Vec<f64> {
    (0..grid.n_frames)
        .map(|f| {
            let x = f as f64 * grid.frame_shift;
            let speaking = target.utterances.iter().any(|u| u.start <= x && x < u.end);
            if speaking {
                return 0.0;
            }
            let next = target
                .initiations
                .iter()
                .filter(|&&i| i > x)
                .fold(f64::INFINITY, |a, &b| a.min(b));
            (next - x).min(delta_max)
        })
        .collect()
}

/// Reference loss mask: frame is in if it lies in any `[I - 2 delta_max, I + 1]`.
pub fn mask_reference(initiations: &[f64], grid: &FrameGrid, delta_max: f64) -> Vec<bool> {
    (0..grid.n_frames)
        .map(|f| {
            let x = f as f64 * grid.frame_shift;
            initiations
                .iter()
                .any(|&i| x >= i - 2.0 * delta_max - 1e-9 && x <= i + 1.0 + 1e-9)
        })
        .collect()
}

/// Is `v` in the bucket whose lower (toward-zero) edge is `k / r`?
pub fn in_bucket(v: f64, k: i64, r: usize) -> bool {
    let r = r as f64;
    let eps = 1e-9 / r;
    if k > 0 || (k == 0 && v >= 0.0) {
        v >= k as f64 / r - eps && v < (k + 1) as f64 / r - eps
    } else {
        v <= k as f64 / r + eps && v > (k - 1) as f64 / r + eps
    }
}

/// `(sum, count)` per bucket index, scanning every frame for every bucket.
pub type Sums = Vec<(i64, f64, u64)>;

pub fn mae_pred_reference(pred: &[f64], tau: &[f64], r: usize, delta_max: f64) -> Sums {
    let k_max = (delta_max * r as f64).round() as i64;
    let mut out = Vec::new();
    for k in 0..=k_max {
        let (mut sum, mut n) = (0.0, 0u64);
        for (p, t) in pred.iter().zip(tau) {
            if in_bucket(*p, k, r) {
                sum += (t - p).abs();
                n += 1;
            }
        }
        if n > 0 {
            out.push((k, sum, n));
        }
    }
    out
}

/// MAE-True and mean prediction per true-lead-time bucket. A frame `x` counts
/// toward initiation `I` when it lies strictly between the current speaker's
/// initiations around `I`; after `I` the truth is 0.
pub fn mae_true_reference(pred: &[f64], labels: &LabelTrack, r: usize) -> (Sums, Sums) {
    let k_max = (labels.delta_max * r as f64).round() as i64;
    let shift = labels.grid.frame_shift;
    let (mut err, mut mean) = (Vec::new(), Vec::new());
    for k in -(r as i64)..=k_max {
        let (mut se, mut sp, mut n) = (0.0, 0.0, 0u64);
        for &init in &labels.target_initiations {
            let prev = labels
                .current_initiations
                .iter()
                .filter(|&&c| c < init)
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let next = labels
                .current_initiations
                .iter()
                .filter(|&&c| c > init)
                .fold(f64::INFINITY, |a, &b| a.min(b));
            for f in 0..pred.len() {
                let x = f as f64 * shift;
                if x <= prev || x >= next || !in_bucket(init - x, k, r) {
                    continue;
                }
                let truth = if init - x <= 1e-9 { 0.0 } else { labels.tau[f] };
                se += (truth - pred[f]).abs();
                sp += pred[f];
                n += 1;
            }
        }
        if n > 0 {
            err.push((k, se, n));
            mean.push((k, sp, n));
        }
    }
    (err, mean)
}

/// Mean of per-bucket means over buckets with values in `[lo, hi]`.
pub fn macro_reference(sums: &Sums, lo: f64, hi: f64, r: usize) -> Option<f64> {
    let means: Vec<f64> = sums
        .iter()
        .filter(|(k, _, _)| {
            let v = *k as f64 / r as f64;
            v >= lo - 1e-12 && v <= hi + 1e-12
        })
        .map(|(_, s, n)| s / *n as f64)
        .collect();
    (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
}

/// Adds `b` into `a` bucket by bucket.
pub fn pool(a: &mut Sums, b: &Sums) {
    for &(k, s, n) in b {
        match a.iter_mut().find(|e| e.0 == k) {
            Some(e) => {
                e.1 += s;
                e.2 += n;
            }
            None => a.push((k, s, n)),
        }
    }
    a.sort_by_key(|e| e.0);
}

/// Reference silence baseline: at every frame, look back over the whole window.
pub fn silence_reference(rmse: &[f64], threshold: f64, delta_max: f64) -> Vec<f64> {
    // More than 0.7 s of inactivity at 50 ms per frame: 0.7 / 0.05 + 1 frames.
    let needed = 15;
    (0..rmse.len())
        .map(|t| {
            let quiet = t + 1 >= needed && rmse[t + 1 - needed..=t].iter().all(|&v| v <= threshold);
            if quiet {
                0.0
            } else {
                delta_max
            }
        })
        .collect()
}

/// Central-difference check of `grad` against `loss`; returns the worst relative error.
pub fn worst_relative_error(
    n: usize,
    eps: f64,
    floor: f64,
    mut loss_at: impl FnMut(usize, f64) -> f64,
    analytic: impl Fn(usize) -> f64,
) -> (f64, usize) {
    let mut worst = (0.0, 0);
    for i in 0..n {
        let numeric = (loss_at(i, eps) - loss_at(i, -eps)) / (2.0 * eps);
        let a = analytic(i);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    worst
}
