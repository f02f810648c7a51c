//! MAE-Pred, MAE-True and their macro averages.
//!
//! Values are quantized toward zero into `buckets_per_second` buckets and
//! keyed by integer bucket index `k`, whose value is `k / buckets_per_second`.
//! Accumulators pool raw `(sum, count)` pairs so segments merge exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelTrack;
use crate::TIME_EPS;

/// Guards bucket edges against representation error such as `0.75 - 1e-16`.
const QUANT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_buckets")]
    pub buckets_per_second: usize,
    #[serde(default = "default_delta_max")]
    pub delta_max: f64,
    /// Inclusive `(lo, hi)` range of true lead times averaged into MMAE-True.
    #[serde(default = "default_true_range")]
    pub true_range: (f64, f64),
    /// Inclusive `(lo, hi)` range of predictions averaged into MMAE-Pred.
    #[serde(default = "default_pred_range")]
    pub pred_range: (f64, f64),
}

fn default_buckets() -> usize {
    16
}
fn default_delta_max() -> f64 {
    crate::labels::DEFAULT_DELTA_MAX
}
fn default_true_range() -> (f64, f64) {
    (-0.5, 1.0)
}
fn default_pred_range() -> (f64, f64) {
    (0.0, 1.0)
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            buckets_per_second: default_buckets(),
            delta_max: default_delta_max(),
            true_range: default_true_range(),
            pred_range: default_pred_range(),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        let (tl, th) = self.true_range;
        let (pl, ph) = self.pred_range;
        if self.buckets_per_second == 0 || !(self.delta_max > 0.0) {
            return Err(Error::Config("metrics: buckets_per_second and delta_max must be positive".into()));
        }
        if !(tl <= th && tl >= -1.0 && th <= self.delta_max && pl <= ph && pl >= 0.0 && ph <= self.delta_max) {
            return Err(Error::Config("metrics: ranges must be ordered and inside the metric domain".into()));
        }
        Ok(())
    }

    fn r(&self) -> f64 {
        self.buckets_per_second as f64
    }

    /// Largest bucket index, the one holding `delta_max`.
    pub fn max_bucket(&self) -> i64 {
        bucket_index(self.delta_max, self.buckets_per_second)
    }
}

/// Bucket index of `v`, truncating toward zero.
pub fn bucket_index(v: f64, buckets_per_second: usize) -> i64 {
    let scaled = v * buckets_per_second as f64;
    if v >= 0.0 {
        (scaled + QUANT_EPS).floor() as i64
    } else {
        -((-scaled + QUANT_EPS).floor() as i64)
    }
}

/// `floor(v * r) / r` for non-negative `v`, mirrored for negative `v`.
pub fn quantize(v: f64, buckets_per_second: usize) -> f64 {
    bucket_index(v, buckets_per_second) as f64 / buckets_per_second as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub sum: f64,
    pub count: u64,
}

impl BucketStat {
    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

/// Per-bucket `(sum, count)`; absent keys are unoccupied buckets.
pub type BucketMap = BTreeMap<i64, BucketStat>;

fn add(map: &mut BucketMap, k: i64, v: f64) {
    let e = map.entry(k).or_default();
    e.sum += v;
    e.count += 1;
}

fn merge_into(into: &mut BucketMap, from: &BucketMap) {
    for (&k, s) in from {
        let e = into.entry(k).or_default();
        e.sum += s.sum;
        e.count += s.count;
    }
}

/// Absolute errors grouped by quantized prediction.
pub fn mae_pred(tau_hat: &[f64], tau: &[f64], buckets_per_second: usize) -> Result<BucketMap> {
    if tau_hat.len() != tau.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            tau_hat.len(),
            tau.len()
        )));
    }
    let mut map = BucketMap::new();
    for (&p, &t) in tau_hat.iter().zip(tau) {
        add(&mut map, bucket_index(p, buckets_per_second), (t - p).abs());
    }
    Ok(map)
}

/// Per-bucket sums for MAE-True and for the mean prediction at each true lead time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrueBuckets {
    pub error: BucketMap,
    pub prediction: BucketMap,
}

/// Errors grouped by quantized time to each target initiation, `t = I - x`.
///
/// Frame `x` counts for initiation `I` when `t` quantizes into `[-1, delta_max]`
/// and `x` lies strictly between the current speaker's initiations bracketing
/// `I`. After the initiation (`I - x <= 0`) the truth is taken as 0.
pub fn mae_true(tau_hat: &[f64], labels: &LabelTrack, buckets_per_second: usize) -> Result<TrueBuckets> {
    let grid = &labels.grid;
    if tau_hat.len() != grid.n_frames || labels.tau.len() != grid.n_frames {
        return Err(Error::Validation(format!(
            "{} predictions for {} frames",
            tau_hat.len(),
            grid.n_frames
        )));
    }
    let r = buckets_per_second as f64;
    let k_min = -(buckets_per_second as i64);
    let k_max = bucket_index(labels.delta_max, buckets_per_second);
    let mut out = TrueBuckets::default();
    if grid.n_frames == 0 {
        return Ok(out);
    }
    let last = grid.n_frames - 1;
    let current = &labels.current_initiations;
    for &init in &labels.target_initiations {
        let prev = current
            .iter()
            .copied()
            .filter(|&c| c < init)
            .fold(f64::NEG_INFINITY, f64::max);
        let next = current.iter().copied().find(|&c| c > init).unwrap_or(f64::INFINITY);
        // Frames whose time to `init` can quantize into [-1, delta_max].
        let lo_time = init - (k_max + 1) as f64 / r;
        let hi_time = init + (1 - k_min) as f64 / r;
        let first = (lo_time / grid.frame_shift).floor().max(0.0);
        let end = (hi_time / grid.frame_shift).ceil();
        if end < 0.0 || first > last as f64 {
            continue;
        }
        for f in first as usize..=(end as usize).min(last) {
            let x = grid.time(f);
            if !(x > prev + TIME_EPS && x < next - TIME_EPS) {
                continue;
            }
            let t = init - x;
            let k = bucket_index(t, buckets_per_second);
            if k < k_min || k > k_max {
                continue;
            }
            let truth = if t <= TIME_EPS { 0.0 } else { labels.tau[f] };
            add(&mut out.error, k, (truth - tau_hat[f]).abs());
            add(&mut out.prediction, k, tau_hat[f]);
        }
    }
    Ok(out)
}

/// How MMAE-Pred was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredRule {
    /// Mean over occupied buckets in the configured range.
    Range,
    /// Mean of MAE-Pred(0) and MAE-Pred(delta_max), for predictors that only
    /// ever output those two values.
    Endpoints,
}

/// Mean of the per-bucket means over occupied buckets with values in `[lo, hi]`.
pub fn macro_mean(map: &BucketMap, lo: f64, hi: f64, buckets_per_second: usize, metric: &'static str) -> Result<f64> {
    let r = buckets_per_second as f64;
    let k_lo = (lo * r - QUANT_EPS).ceil() as i64;
    let k_hi = (hi * r + QUANT_EPS).floor() as i64;
    let means: Vec<f64> = map.range(k_lo..=k_hi).map(|(_, s)| s.mean()).collect();
    if means.is_empty() {
        return Err(Error::NoPopulatedBuckets { metric, lo, hi });
    }
    Ok(means.iter().sum::<f64>() / means.len() as f64)
}

/// Collects metric sums over any number of segments.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricAccumulator {
    pub config: MetricsConfig,
    pub pred: BucketMap,
    pub truth: TrueBuckets,
    /// Frames seen by MAE-Pred.
    pub frames: u64,
}

impl MetricAccumulator {
    pub fn new(config: MetricsConfig) -> Self {
        MetricAccumulator {
            config,
            pred: BucketMap::new(),
            truth: TrueBuckets::default(),
            frames: 0,
        }
    }

    pub fn add_segment(&mut self, tau_hat: &[f64], labels: &LabelTrack) -> Result<()> {
        let r = self.config.buckets_per_second;
        if let Some(bad) = tau_hat.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite prediction {bad}")));
        }
        let pred = mae_pred(tau_hat, &labels.tau, r)?;
        let truth = mae_true(tau_hat, labels, r)?;
        merge_into(&mut self.pred, &pred);
        merge_into(&mut self.truth.error, &truth.error);
        merge_into(&mut self.truth.prediction, &truth.prediction);
        self.frames += tau_hat.len() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        merge_into(&mut self.pred, &other.pred);
        merge_into(&mut self.truth.error, &other.truth.error);
        merge_into(&mut self.truth.prediction, &other.truth.prediction);
        self.frames += other.frames;
    }

    pub fn report(&self, rule: PredRule) -> Result<MetricReport> {
        let cfg = &self.config;
        cfg.validate()?;
        let r = cfg.buckets_per_second;
        let (tl, th) = cfg.true_range;
        let mmae_true = macro_mean(&self.truth.error, tl, th, r, "MAE-True")?;
        let mmae_pred = match rule {
            PredRule::Range => macro_mean(&self.pred, cfg.pred_range.0, cfg.pred_range.1, r, "MAE-Pred")?,
            PredRule::Endpoints => {
                let ends: Vec<f64> = [0, cfg.max_bucket()]
                    .iter()
                    .filter_map(|k| self.pred.get(k).map(BucketStat::mean))
                    .collect();
                if ends.is_empty() {
                    return Err(Error::NoPopulatedBuckets {
                        metric: "MAE-Pred",
                        lo: 0.0,
                        hi: cfg.delta_max,
                    });
                }
                ends.iter().sum::<f64>() / ends.len() as f64
            }
        };
        let rows = |map: &BucketMap| -> Vec<BucketRow> {
            map.iter()
                .map(|(&k, s)| BucketRow {
                    bucket_value: k as f64 / cfg.r(),
                    value: s.mean(),
                    count: s.count,
                })
                .collect()
        };
        Ok(MetricReport {
            buckets_per_second: r,
            delta_max: cfg.delta_max,
            frames: self.frames,
            mae_pred: rows(&self.pred),
            mae_true: rows(&self.truth.error),
            mean_pred_at_true: rows(&self.truth.prediction),
            mmae_true,
            mmae_pred,
            mmae: mmae_true + mmae_pred,
            mmae_pred_rule: rule,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket_value: f64,
    /// Mean absolute error, or mean prediction for `mean_pred_at_true`.
    pub value: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub buckets_per_second: usize,
    pub delta_max: f64,
    pub frames: u64,
    pub mae_pred: Vec<BucketRow>,
    pub mae_true: Vec<BucketRow>,
    pub mean_pred_at_true: Vec<BucketRow>,
    pub mmae_true: f64,
    pub mmae_pred: f64,
    pub mmae: f64,
    pub mmae_pred_rule: PredRule,
}

/// The scalar part of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mmae_true: f64,
    pub mmae_pred: f64,
    pub mmae: f64,
    pub mmae_pred_rule: PredRule,
    pub frames: u64,
    pub buckets_per_second: usize,
    pub delta_max: f64,
}

pub const CSV_HEADER: &str = "metric,bucket_value,mae,count";

impl MetricReport {
    pub fn summary(&self) -> MetricSummary {
        MetricSummary {
            mmae_true: self.mmae_true,
            mmae_pred: self.mmae_pred,
            mmae: self.mmae,
            mmae_pred_rule: self.mmae_pred_rule,
            frames: self.frames,
            buckets_per_second: self.buckets_per_second,
            delta_max: self.delta_max,
        }
    }

    /// One row per bucket. `mean_pred_at_true` rows carry the mean prediction
    /// in the `mae` column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for (name, rows) in [
            ("mae_pred", &self.mae_pred),
            ("mae_true", &self.mae_true),
            ("mean_pred_at_true", &self.mean_pred_at_true),
        ] {
            for row in rows {
                writeln!(out, "{name},{},{},{}", row.bucket_value, row.value, row.count).expect("string write");
            }
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{stem}.csv"));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))
    }
}

/// Curve rows read back from a report CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportCurves {
    pub mae_pred: Vec<BucketRow>,
    pub mae_true: Vec<BucketRow>,
    pub mean_pred_at_true: Vec<BucketRow>,
}

pub fn parse_report_csv(text: &str, path: &Path) -> Result<ReportCurves> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header \"{CSV_HEADER}\""))),
    }
    let mut curves = ReportCurves::default();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(parse_err(i + 1, format!("expected 4 fields, found {}", fields.len())));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| parse_err(i + 1, format!("bad number \"{s}\": {e}")))
        };
        let row = BucketRow {
            bucket_value: num(fields[1])?,
            value: num(fields[2])?,
            count: fields[3]
                .trim()
                .parse()
                .map_err(|e| parse_err(i + 1, format!("bad count \"{}\": {e}", fields[3])))?,
        };
        match fields[0] {
            "mae_pred" => curves.mae_pred.push(row),
            "mae_true" => curves.mae_true.push(row),
            "mean_pred_at_true" => curves.mean_pred_at_true.push(row),
            other => return Err(parse_err(i + 1, format!("unknown metric \"{other}\""))),
        }
    }
    Ok(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FrameGrid;

    fn track(n: usize, tau: Vec<f64>, targets: Vec<f64>, current: Vec<f64>) -> LabelTrack {
        LabelTrack {
            grid: FrameGrid::standard(n),
            loss_mask: vec![true; n],
            target_speaking: tau.iter().map(|&t| t == 0.0).collect(),
            tau,
            target_initiations: targets,
            current_initiations: current,
            delta_max: 2.0,
        }
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(0.10, 16), 0.0625);
        assert_eq!(quantize(0.0, 16), 0.0);
        assert_eq!(quantize(-0.30, 16), -0.25);
        assert_eq!(quantize(0.75 - 1e-15, 16), 0.75);
        assert_eq!(quantize(2.0, 16), 2.0);
    }

    #[test]
    fn mae_pred_example() {
        let m = mae_pred(&[0.0625, 0.0625, 0.125], &[0.0, 0.125, 0.125], 16).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[&1].mean(), 0.0625);
        assert_eq!(m[&2].mean(), 0.0);
    }

    #[test]
    fn constant_predictor_single_bucket() {
        let tau = [0.0, 0.5, 2.0, 1.0];
        let m = mae_pred(&[2.0; 4], &tau, 16).unwrap();
        assert_eq!(m.keys().copied().collect::<Vec<_>>(), vec![32]);
        assert!((m[&32].mean() - (2.0 + 1.5 + 0.0 + 1.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn lone_initiation_spans_delta_plus_one() {
        let n = 400;
        let init = 10.0;
        let tau: Vec<f64> = (0..n)
            .map(|f| {
                let x = f as f64 * 0.05;
                if x >= init && x < 13.0 { 0.0 } else if x < init { (init - x).min(2.0) } else { 2.0 }
            })
            .collect();
        let labels = track(n, tau.clone(), vec![init], vec![]);
        let tb = mae_true(&tau, &labels, 16).unwrap();
        let keys: Vec<i64> = tb.error.keys().copied().collect();
        assert_eq!(*keys.first().unwrap(), -16);
        assert_eq!(*keys.last().unwrap(), 32);
        assert!(tb.error.values().all(|s| s.sum == 0.0));
    }

    #[test]
    fn current_initiation_cuts_region() {
        let n = 400;
        let tau = vec![1.0; n];
        let labels = track(n, tau.clone(), vec![10.0], vec![9.5]);
        let tb = mae_true(&tau, &labels, 16).unwrap();
        assert!(tb.error.keys().all(|&k| k as f64 / 16.0 <= 0.5));
    }

    #[test]
    fn macro_means() {
        let mut m = BucketMap::new();
        add(&mut m, 2, 0.4);
        add(&mut m, 5, 0.8);
        add(&mut m, 40, 9.0);
        assert!((macro_mean(&m, 0.0, 1.0, 16, "x").unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(macro_mean(&m, 0.125, 0.125, 16, "x").unwrap(), 0.4);
        let err = macro_mean(&m, 0.5, 0.6, 16, "MAE-Pred").unwrap_err();
        assert!(err.to_string().contains("no populated buckets"));
    }

    #[test]
    fn endpoint_rule() {
        let mut acc = MetricAccumulator::new(MetricsConfig::default());
        add(&mut acc.pred, 0, 0.9);
        add(&mut acc.pred, 32, 0.3);
        add(&mut acc.truth.error, 0, 1.0);
        let rep = acc.report(PredRule::Endpoints).unwrap();
        assert!((rep.mmae_pred - 0.6).abs() < 1e-15);
        assert_eq!(rep.mmae, rep.mmae_true + rep.mmae_pred);
        assert_eq!(rep.mmae_pred_rule, PredRule::Endpoints);
    }

    #[test]
    fn csv_round_trip() {
        let mut acc = MetricAccumulator::new(MetricsConfig::default());
        add(&mut acc.pred, 3, 0.25);
        add(&mut acc.truth.error, -2, 0.5);
        add(&mut acc.truth.prediction, -2, 0.1);
        let rep = acc.report(PredRule::Range).unwrap();
        let curves = parse_report_csv(&rep.to_csv(), Path::new("r.csv")).unwrap();
        assert_eq!(curves.mae_pred, rep.mae_pred);
        assert_eq!(curves.mae_true, rep.mae_true);
        assert_eq!(curves.mean_pred_at_true, rep.mean_pred_at_true);
        let err = parse_report_csv("metric,bucket_value,mae,count\nmae_pred,x,1,1\n", Path::new("r.csv")).unwrap_err();
        assert!(err.to_string().starts_with("r.csv:2:"), "{err}");
    }
}
