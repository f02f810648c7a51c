//! Frame-level acoustic features on a fixed hop/window grid.
//!
//! Frame `t` covers samples `[t * shift, t * shift + window)`; samples past the
//! end of the waveform read as zero, so every feature computed on one waveform
//! has the same number of frames.

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};

pub const DEFAULT_FRAME_SHIFT: f64 = 0.05;
pub const DEFAULT_WINDOW_LEN: f64 = 0.10;

/// RMS threshold separating voice activity from silence on the normalized scale.
pub const DEFAULT_VAD_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGrid {
    pub frame_shift: f64,
    pub window_len: f64,
    pub n_frames: usize,
}

impl FrameGrid {
    pub fn new(frame_shift: f64, window_len: f64, n_frames: usize) -> Result<Self> {
        if !(frame_shift > 0.0) || !(window_len >= frame_shift) {
            return Err(Error::Precondition(format!(
                "frame grid needs shift > 0 and window >= shift (shift {frame_shift}, window {window_len})"
            )));
        }
        Ok(FrameGrid {
            frame_shift,
            window_len,
            n_frames,
        })
    }

    /// The default 50 ms / 100 ms grid with `n_frames` frames.
    pub fn standard(n_frames: usize) -> Self {
        FrameGrid {
            frame_shift: DEFAULT_FRAME_SHIFT,
            window_len: DEFAULT_WINDOW_LEN,
            n_frames,
        }
    }

    /// Grid covering a waveform: `floor((n_samples - 1) / hop) + 1` frames.
    pub fn for_samples(n_samples: usize, sample_rate: u32, frame_shift: f64, window_len: f64) -> Result<Self> {
        let mut grid = FrameGrid::new(frame_shift, window_len, 0)?;
        if n_samples > 0 {
            let hop = frame_shift * sample_rate as f64;
            grid.n_frames = ((n_samples - 1) as f64 / hop + 1e-9).floor() as usize + 1;
        }
        Ok(grid)
    }

    /// Start time of frame `t` in seconds.
    pub fn time(&self, t: usize) -> f64 {
        t as f64 * self.frame_shift
    }

    pub fn duration(&self) -> f64 {
        self.n_frames as f64 * self.frame_shift
    }

    /// Same shift and window, but `n_frames` frames.
    pub fn with_frames(&self, n_frames: usize) -> Self {
        FrameGrid { n_frames, ..*self }
    }

    pub fn aligned_with(&self, other: &FrameGrid) -> bool {
        self.n_frames == other.n_frames && (self.frame_shift - other.frame_shift).abs() < 1e-12
    }

    fn hop_samples(&self, sample_rate: u32) -> f64 {
        self.frame_shift * sample_rate as f64
    }

    fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_len * sample_rate as f64).round() as usize
    }
}

/// Per-frame feature matrix, `n_frames x names.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSeries {
    pub grid: FrameGrid,
    pub names: Vec<String>,
    pub values: Array2<f64>,
}

impl FrameSeries {
    pub fn new(grid: FrameGrid, names: Vec<String>, values: Array2<f64>) -> Result<Self> {
        if values.nrows() != grid.n_frames || values.ncols() != names.len() {
            return Err(Error::Validation(format!(
                "frame series shape {:?} does not match {} frames x {} names",
                values.dim(),
                grid.n_frames,
                names.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("frame series contains NaN/Inf".into()));
        }
        Ok(FrameSeries { grid, names, values })
    }

    fn single(grid: FrameGrid, name: &str, column: Vec<f64>) -> Self {
        let values = Array2::from_shape_vec((column.len(), 1), column).expect("column shape");
        FrameSeries {
            grid,
            names: vec![name.to_string()],
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).to_vec()
    }

    /// Concatenates feature columns of series on the same grid.
    pub fn concat(parts: &[&FrameSeries]) -> Result<FrameSeries> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Precondition("concat of zero series".into()))?;
        if let Some(bad) = parts.iter().find(|p| !p.grid.aligned_with(&first.grid)) {
            return Err(Error::Validation(format!(
                "grid mismatch: {} frames vs {} frames",
                bad.grid.n_frames, first.grid.n_frames
            )));
        }
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        let names = parts.iter().flat_map(|p| p.names.iter().cloned()).collect();
        Ok(FrameSeries {
            grid: first.grid,
            names,
            values,
        })
    }

    /// Rows `[start, start + len)`, clamped to the available frames.
    pub fn slice_frames(&self, start: usize, len: usize) -> FrameSeries {
        let start = start.min(self.grid.n_frames);
        let end = (start + len).min(self.grid.n_frames);
        FrameSeries {
            grid: self.grid.with_frames(end - start),
            names: self.names.clone(),
            values: self.values.slice(s![start..end, ..]).to_owned(),
        }
    }
}

/// Zero-padded analysis window for frame `t`.
fn frame_window(waveform: &[f32], sample_rate: u32, grid: &FrameGrid, t: usize, buf: &mut Vec<f64>) {
    let start = (t as f64 * grid.hop_samples(sample_rate)).round() as usize;
    let len = grid.window_samples(sample_rate);
    buf.clear();
    buf.extend((start..start + len).map(|i| waveform.get(i).copied().unwrap_or(0.0) as f64));
}

pub fn rmse(waveform: &[f32], sample_rate: u32, grid: &FrameGrid) -> FrameSeries {
    let mut buf = Vec::new();
    let column = (0..grid.n_frames)
        .map(|t| {
            frame_window(waveform, sample_rate, grid, t, &mut buf);
            let energy: f64 = buf.iter().map(|x| x * x).sum();
            (energy / buf.len().max(1) as f64).sqrt()
        })
        .collect();
    FrameSeries::single(*grid, "rmse", column)
}

/// Search band and voicing thresholds shared by the two pitch trackers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PitchConfig {
    pub min_hz: f64,
    pub max_hz: f64,
    /// Minimum normalized autocorrelation peak for a voiced frame.
    pub voicing_threshold: f64,
    /// Cumulative-mean-normalized difference threshold for YIN.
    pub yin_threshold: f64,
}

impl Default for PitchConfig {
    fn default() -> Self {
        PitchConfig {
            min_hz: 60.0,
            max_hz: 400.0,
            voicing_threshold: 0.3,
            yin_threshold: 0.15,
        }
    }
}

impl PitchConfig {
    fn lag_range(&self, sample_rate: u32) -> (usize, usize) {
        let sr = sample_rate as f64;
        let min_lag = (sr / self.max_hz).floor().max(1.0) as usize;
        let max_lag = (sr / self.min_hz).ceil() as usize;
        (min_lag, max_lag)
    }
}

/// Windows whose mean square is below this are treated as digital silence.
const SILENT_ENERGY: f64 = 1e-12;

/// Vertex offset of the parabola through three equally spaced points, in `[-0.5, 0.5]`.
fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom.abs() < 1e-15 {
        0.0
    } else {
        (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
    }
}

/// Normalized-autocorrelation pitch in Hz; 0 for unvoiced frames.
pub fn pitch(waveform: &[f32], sample_rate: u32, grid: &FrameGrid, config: &PitchConfig) -> FrameSeries {
    let (min_lag, max_lag) = config.lag_range(sample_rate);
    let mut buf = Vec::new();
    let mut corr = Vec::new();
    let column = (0..grid.n_frames)
        .map(|t| {
            frame_window(waveform, sample_rate, grid, t, &mut buf);
            autocorrelation_pitch(&buf, sample_rate, min_lag, max_lag, config, &mut corr)
        })
        .collect();
    FrameSeries::single(*grid, "pitch", column)
}

fn autocorrelation_pitch(
    x: &[f64],
    sample_rate: u32,
    min_lag: usize,
    max_lag: usize,
    config: &PitchConfig,
    corr: &mut Vec<f64>,
) -> f64 {
    let n = x.len();
    if x.iter().map(|v| v * v).sum::<f64>() / (n.max(1) as f64) < SILENT_ENERGY {
        return 0.0;
    }
    let max_lag = max_lag.min(n.saturating_sub(2));
    if min_lag + 1 >= max_lag {
        return 0.0;
    }
    // Prefix sums of x^2 give both energy terms of the normalizer.
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v * v);
    }
    corr.clear();
    corr.resize(max_lag + 2, 0.0);
    for lag in min_lag.saturating_sub(1)..=(max_lag + 1).min(n - 1) {
        let m = n - lag;
        let dot: f64 = x[..m].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
        let e0 = prefix[m];
        let e1 = prefix[n] - prefix[lag];
        let denom = (e0 * e1).sqrt();
        corr[lag] = if denom > 0.0 { dot / denom } else { 0.0 };
    }
    let (best_lag, best) = (min_lag..=max_lag)
        .map(|l| (l, corr[l]))
        .fold((0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
    if best < config.voicing_threshold {
        return 0.0;
    }
    // Prefer the shortest-lag local peak close to the global maximum (avoids
    // picking a multiple of the true period).
    let chosen = (min_lag..=max_lag)
        .find(|&l| corr[l] >= 0.95 * best && corr[l] >= corr[l - 1] && corr[l] >= corr[l + 1])
        .unwrap_or(best_lag);
    let delta = parabolic_offset(corr[chosen - 1], corr[chosen], corr[chosen + 1]);
    sample_rate as f64 / (chosen as f64 + delta)
}

/// YIN fundamental frequency in Hz; 0 when no dip falls below the threshold.
pub fn yin_f0(waveform: &[f32], sample_rate: u32, grid: &FrameGrid, config: &PitchConfig) -> FrameSeries {
    let (min_lag, max_lag) = config.lag_range(sample_rate);
    let mut buf = Vec::new();
    let mut diff = Vec::new();
    let column = (0..grid.n_frames)
        .map(|t| {
            frame_window(waveform, sample_rate, grid, t, &mut buf);
            yin_frame(&buf, sample_rate, min_lag, max_lag, config.yin_threshold, &mut diff)
        })
        .collect();
    FrameSeries::single(*grid, "f0", column)
}

fn yin_frame(
    x: &[f64],
    sample_rate: u32,
    min_lag: usize,
    max_lag: usize,
    threshold: f64,
    diff: &mut Vec<f64>,
) -> f64 {
    let n = x.len();
    if x.iter().map(|v| v * v).sum::<f64>() / (n.max(1) as f64) < SILENT_ENERGY {
        return 0.0;
    }
    // Fixed integration window so every lag sums the same number of terms.
    let max_lag = max_lag.min(n / 2);
    if min_lag + 1 >= max_lag {
        return 0.0;
    }
    let w = n - max_lag - 1;
    diff.clear();
    diff.resize(max_lag + 2, 0.0);
    for lag in 1..=max_lag + 1 {
        diff[lag] = x[..w]
            .iter()
            .zip(&x[lag..lag + w])
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
    }
    // Cumulative mean normalized difference, in place.
    diff[0] = 1.0;
    let mut running = 0.0;
    for lag in 1..=max_lag + 1 {
        running += diff[lag];
        diff[lag] = if running > 0.0 {
            diff[lag] * lag as f64 / running
        } else {
            1.0
        };
    }
    let Some(mut lag) = (min_lag..=max_lag).find(|&l| diff[l] < threshold) else {
        return 0.0;
    };
    while lag < max_lag && diff[lag + 1] < diff[lag] {
        lag += 1;
    }
    let delta = parabolic_offset(diff[lag - 1], diff[lag], diff[lag + 1]);
    sample_rate as f64 / (lag as f64 + delta)
}

/// `rmse > threshold` per frame.
pub fn voice_activity(rmse: &FrameSeries, threshold: f64) -> Result<Vec<bool>> {
    if !(threshold > 0.0) {
        return Err(Error::Precondition(format!(
            "voice activity threshold must be positive, got {threshold}"
        )));
    }
    Ok(rmse.values.column(0).iter().map(|&v| v > threshold).collect())
}

/// RMSE, pitch and YIN f0 for one channel as a three-column series.
pub fn prosodic_features(waveform: &[f32], sample_rate: u32, grid: &FrameGrid, config: &PitchConfig) -> FrameSeries {
    let r = rmse(waveform, sample_rate, grid);
    let p = pitch(waveform, sample_rate, grid, config);
    let f = yin_f0(waveform, sample_rate, grid, config);
    FrameSeries::concat(&[&r, &p, &f]).expect("same grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tone(freqs: &[(f64, f64)], sr: u32, seconds: f64) -> Vec<f32> {
        let n = (seconds * sr as f64) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / sr as f64;
                freqs
                    .iter()
                    .map(|&(f, a)| a * (2.0 * PI * f * t).sin())
                    .sum::<f64>() as f32
            })
            .collect()
    }

    fn grid_for(x: &[f32], sr: u32) -> FrameGrid {
        FrameGrid::for_samples(x.len(), sr, DEFAULT_FRAME_SHIFT, DEFAULT_WINDOW_LEN).unwrap()
    }

    /// Frames whose window lies fully inside the signal.
    fn interior(grid: &FrameGrid) -> std::ops::Range<usize> {
        0..grid.n_frames - 2
    }

    #[test]
    fn frame_count_formula() {
        let g = FrameGrid::for_samples(480_000, 8000, 0.05, 0.1).unwrap();
        assert_eq!(g.n_frames, 1200);
        let g = FrameGrid::for_samples(401, 8000, 0.05, 0.1).unwrap();
        assert_eq!(g.n_frames, 2);
        let g = FrameGrid::for_samples(400, 8000, 0.05, 0.1).unwrap();
        assert_eq!(g.n_frames, 1);
        assert!(FrameGrid::new(0.1, 0.05, 3).is_err());
    }

    #[test]
    fn rmse_of_constant_and_zero() {
        let x = vec![0.5f32; 8000];
        let g = grid_for(&x, 8000);
        let r = rmse(&x, 8000, &g);
        for t in interior(&g) {
            assert!((r.values[[t, 0]] - 0.5).abs() < 1e-7);
        }
        let z = vec![0.0f32; 8000];
        assert!(rmse(&z, 8000, &g).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rmse_of_sine_is_one_over_root_two() {
        // 100 Hz at 8 kHz: the 100 ms window spans exactly ten periods.
        let x = tone(&[(100.0, 1.0)], 8000, 1.0);
        let g = grid_for(&x, 8000);
        let r = rmse(&x, 8000, &g);
        for t in interior(&g) {
            assert!((r.values[[t, 0]] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3);
        }
    }

    #[test]
    fn final_window_is_zero_padded() {
        let x = vec![1.0f32; 1000];
        let g = grid_for(&x, 8000);
        let r = rmse(&x, 8000, &g);
        // Last frame starts at sample 800: 200 ones then 600 zeros.
        let last = r.values[[g.n_frames - 1, 0]];
        assert!((last - (200.0f64 / 800.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn pitch_of_200hz_sine() {
        let x = tone(&[(200.0, 0.5)], 8000, 1.0);
        let g = grid_for(&x, 8000);
        let p = pitch(&x, 8000, &g, &PitchConfig::default());
        for t in interior(&g) {
            assert!((p.values[[t, 0]] - 200.0).abs() < 2.0, "{}", p.values[[t, 0]]);
        }
    }

    #[test]
    fn pitch_of_noise_is_mostly_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f32> = (0..16000).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let g = grid_for(&x, 8000);
        let p = pitch(&x, 8000, &g, &PitchConfig::default());
        let unvoiced = p.values.iter().filter(|&&v| v == 0.0).count();
        assert!(unvoiced as f64 >= 0.9 * g.n_frames as f64, "{unvoiced}/{}", g.n_frames);
    }

    #[test]
    fn silence_gives_zero_pitch_and_f0() {
        let x = vec![0.0f32; 8000];
        let g = grid_for(&x, 8000);
        let cfg = PitchConfig::default();
        assert!(pitch(&x, 8000, &g, &cfg).values.iter().all(|&v| v == 0.0));
        assert!(yin_f0(&x, 8000, &g, &cfg).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn yin_of_220hz_sine() {
        let x = tone(&[(220.0, 0.5)], 16000, 1.0);
        let g = grid_for(&x, 16000);
        let f = yin_f0(&x, 16000, &g, &PitchConfig::default());
        for t in interior(&g) {
            assert!((f.values[[t, 0]] - 220.0).abs() < 1.0, "{}", f.values[[t, 0]]);
        }
    }

    #[test]
    fn yin_no_octave_error_with_weak_harmonic() {
        let x = tone(&[(150.0, 0.5), (300.0, 0.15)], 16000, 1.0);
        let g = grid_for(&x, 16000);
        let f = yin_f0(&x, 16000, &g, &PitchConfig::default());
        for t in interior(&g) {
            assert!((f.values[[t, 0]] - 150.0).abs() < 2.0, "{}", f.values[[t, 0]]);
        }
    }

    #[test]
    fn voice_activity_threshold() {
        let g = FrameGrid::standard(3);
        let r = FrameSeries::single(g, "rmse", vec![0.005, 0.02, 0.009]);
        assert_eq!(voice_activity(&r, 0.01).unwrap(), vec![false, true, false]);
        let z = FrameSeries::single(g, "rmse", vec![0.0; 3]);
        assert_eq!(voice_activity(&z, 0.01).unwrap(), vec![false; 3]);
        assert!(voice_activity(&r, 0.0).is_err());
    }

    #[test]
    fn concat_rejects_grid_mismatch() {
        let a = FrameSeries::single(FrameGrid::standard(3), "a", vec![0.0; 3]);
        let b = FrameSeries::single(FrameGrid::standard(4), "b", vec![0.0; 4]);
        assert!(FrameSeries::concat(&[&a, &b]).is_err());
    }
}
