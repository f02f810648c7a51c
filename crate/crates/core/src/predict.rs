//! Per-frame lead-time predictors: the trained model, the silence baseline and
//! a ground-truth oracle used to check the evaluation pipeline.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dsp::{FrameGrid, FrameSeries, DEFAULT_VAD_THRESHOLD};
use crate::error::{Error, Result};
use crate::labels::LabelTrack;
use crate::nnet::{FeatureStreams, Model, ModelInput};
use crate::TIME_EPS;

pub const DEFAULT_SILENCE_GAP: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorOutput {
    pub grid: FrameGrid,
    pub tau_hat: Vec<f64>,
}

impl PredictorOutput {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_time,tau_hat\n");
        for (t, v) in self.tau_hat.iter().enumerate() {
            writeln!(out, "{},{}", self.grid.time(t), v).expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SilenceConfig {
    /// Frames with RMS energy at or below this are inactive.
    pub threshold: f64,
    /// Predict an imminent initiation once inactivity lasts strictly longer than this.
    pub gap: f64,
    pub delta_max: f64,
}

impl Default for SilenceConfig {
    fn default() -> Self {
        SilenceConfig {
            threshold: DEFAULT_VAD_THRESHOLD,
            gap: DEFAULT_SILENCE_GAP,
            delta_max: crate::labels::DEFAULT_DELTA_MAX,
        }
    }
}

impl SilenceConfig {
    /// Consecutive inactive frames needed: the smallest run spanning more than `gap`.
    pub fn required_frames(&self, frame_shift: f64) -> usize {
        (self.gap / frame_shift + TIME_EPS).floor() as usize + 1
    }
}

/// Streaming form of the silence baseline.
#[derive(Debug, Clone)]
pub struct SilenceDetector {
    config: SilenceConfig,
    required: usize,
    run: usize,
}

impl SilenceDetector {
    pub fn new(config: SilenceConfig, frame_shift: f64) -> Self {
        SilenceDetector {
            config,
            required: config.required_frames(frame_shift),
            run: 0,
        }
    }

    pub fn push(&mut self, rmse: f64) -> f64 {
        if rmse > self.config.threshold {
            self.run = 0;
        } else {
            self.run += 1;
        }
        if self.run >= self.required {
            0.0
        } else {
            self.config.delta_max
        }
    }
}

/// 0 after a long enough run of inactive frames, `delta_max` otherwise.
pub fn silence_baseline(rmse: &FrameSeries, config: &SilenceConfig) -> Result<PredictorOutput> {
    if !(config.threshold > 0.0) || !(config.gap > 0.0) || !(config.delta_max > 0.0) {
        return Err(Error::Config("silence baseline: threshold, gap and delta_max must be positive".into()));
    }
    let mut detector = SilenceDetector::new(*config, rmse.grid.frame_shift);
    Ok(PredictorOutput {
        grid: rmse.grid,
        tau_hat: rmse.values.column(0).iter().map(|&v| detector.push(v)).collect(),
    })
}

/// Point estimates of a trained model.
pub fn model_predict(model: &Model, streams: &FeatureStreams) -> Result<PredictorOutput> {
    let input = ModelInput::assemble(&model.config, streams)?;
    Ok(PredictorOutput {
        grid: streams.grid,
        tau_hat: model.predict(&input)?,
    })
}

/// Returns the labels themselves.
pub fn oracle_predict(labels: &LabelTrack) -> PredictorOutput {
    PredictorOutput {
        grid: labels.grid,
        tau_hat: labels.tau.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn series(values: &[f64]) -> FrameSeries {
        let grid = FrameGrid::standard(values.len());
        FrameSeries::new(grid, vec!["rmse".into()], Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap())
            .unwrap()
    }

    #[test]
    fn fifteen_frames_needed() {
        assert_eq!(SilenceConfig::default().required_frames(0.05), 15);
    }

    #[test]
    fn silence_of_point_eight_seconds() {
        let out = silence_baseline(&series(&[0.005; 16]), &SilenceConfig::default()).unwrap();
        let first_zero = out.tau_hat.iter().position(|&v| v == 0.0).unwrap();
        assert_eq!(first_zero, 14);
        assert!(out.tau_hat[..14].iter().all(|&v| v == 2.0));
        assert!(out.tau_hat[14..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loud_track_never_fires() {
        let out = silence_baseline(&series(&[0.5; 40]), &SilenceConfig::default()).unwrap();
        assert!(out.tau_hat.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn short_gap_does_not_fire() {
        let mut v = vec![0.5; 10];
        v.extend([0.0; 13]);
        v.extend([0.5; 10]);
        let out = silence_baseline(&series(&v), &SilenceConfig::default()).unwrap();
        assert!(out.tau_hat.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn threshold_is_inclusive_for_silence() {
        let out = silence_baseline(&series(&[0.01; 15]), &SilenceConfig::default()).unwrap();
        assert_eq!(out.tau_hat[14], 0.0);
    }

    #[test]
    fn csv_layout() {
        let out = PredictorOutput {
            grid: FrameGrid::standard(2),
            tau_hat: vec![2.0, 0.5],
        };
        assert_eq!(out.to_csv(), "frame_time,tau_hat\n0,2\n0.05,0.5\n");
    }
}
