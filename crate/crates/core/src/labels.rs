//! Ground-truth lead time, loss masks and segment sampling.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueTracks, Speaker, UtteranceTrack};
use crate::dsp::FrameGrid;
use crate::error::{Error, Result};
use crate::TIME_EPS;

pub const DEFAULT_DELTA_MAX: f64 = 2.0;
pub const SEGMENT_LEN: f64 = 60.0;
pub const EVAL_STRIDE: f64 = 20.0;
/// Window after segment start that must hold the first target initiation.
pub const FIRST_INITIATION_WINDOW: (f64, f64) = (5.0, 10.0);
/// Seconds after an initiation still inside the loss window.
pub const MASK_TAIL: f64 = 1.0;
const MAX_SAMPLING_RETRIES: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelTrack {
    pub grid: FrameGrid,
    pub tau: Vec<f64>,
    pub loss_mask: Vec<bool>,
    pub target_speaking: Vec<bool>,
    pub target_initiations: Vec<f64>,
    pub current_initiations: Vec<f64>,
    pub delta_max: f64,
}

/// Lead time per frame: 0 while the target talks, otherwise the time to the
/// target's next initiation clamped to `delta_max` (or `delta_max` when none).
///
/// Times in both tracks are relative to frame 0 of `grid`.
pub fn compute_tau(
    target: &UtteranceTrack,
    current: &UtteranceTrack,
    grid: &FrameGrid,
    delta_max: f64,
) -> Result<LabelTrack> {
    if !(delta_max > 0.0) {
        return Err(Error::Precondition(format!(
            "delta_max must be positive, got {delta_max}"
        )));
    }
    let mut tau = Vec::with_capacity(grid.n_frames);
    let mut target_speaking = Vec::with_capacity(grid.n_frames);
    for t in 0..grid.n_frames {
        let x = grid.time(t);
        let speaking = target.is_speaking(x);
        target_speaking.push(speaking);
        tau.push(if speaking {
            0.0
        } else {
            target
                .next_initiation_after(x)
                .map_or(delta_max, |i| (i - x).min(delta_max))
        });
    }
    let mut track = LabelTrack {
        grid: *grid,
        tau,
        loss_mask: Vec::new(),
        target_speaking,
        target_initiations: target.initiations.clone(),
        current_initiations: current.initiations.clone(),
        delta_max,
    };
    track.loss_mask = compute_loss_mask(&track);
    Ok(track)
}

/// Frames inside `[I - 2 * delta_max, I + 1]` for any target initiation `I`.
pub fn compute_loss_mask(track: &LabelTrack) -> Vec<bool> {
    let grid = &track.grid;
    let mut mask = vec![false; grid.n_frames];
    for &init in &track.target_initiations {
        let lo = init - 2.0 * track.delta_max;
        let hi = init + MASK_TAIL;
        let first = ((lo - TIME_EPS) / grid.frame_shift).ceil().max(0.0) as usize;
        let last = ((hi + TIME_EPS) / grid.frame_shift).floor();
        if last < 0.0 {
            continue;
        }
        let last = (last as usize).min(grid.n_frames.saturating_sub(1));
        for m in mask.iter_mut().take(last + 1).skip(first) {
            *m = true;
        }
    }
    mask
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub dialogue_id: String,
    pub start: f64,
    pub end: f64,
    pub target_speaker: Speaker,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn current_speaker(&self) -> Speaker {
        self.target_speaker.other()
    }
}

/// Whether a segment starting at `start` has its first target initiation in
/// `[start + 5, start + 10]`.
pub fn qualifies(target_initiations: &[f64], start: f64) -> bool {
    let idx = target_initiations.partition_point(|&i| i < start - TIME_EPS);
    target_initiations.get(idx).is_some_and(|&first| {
        first >= start + FIRST_INITIATION_WINDOW.0 - TIME_EPS
            && first <= start + FIRST_INITIATION_WINDOW.1 + TIME_EPS
    })
}

/// Draws `n` training segments of 60 s. Each draw picks a dialogue and a target
/// speaker uniformly, then rejection-samples a start time (snapped to
/// `frame_shift`) until the first-initiation condition holds. Dialogues that
/// never qualify are skipped with a warning.
pub fn sample_train_segments(
    corpus: &[DialogueTracks],
    n: usize,
    seed: u64,
    frame_shift: f64,
) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut hopeless = vec![false; corpus.len()];
    let mut warned = vec![false; corpus.len()];
    if corpus.is_empty() {
        return out;
    }
    while out.len() < n {
        if hopeless.iter().all(|&h| h) {
            warn!("no dialogue yields a qualifying training segment; returning {} of {n}", out.len());
            break;
        }
        let d = rng.gen_range(0..corpus.len());
        let dialogue = &corpus[d];
        if hopeless[d] {
            continue;
        }
        if dialogue.duration + TIME_EPS < SEGMENT_LEN
            || (dialogue.a.initiations.is_empty() && dialogue.b.initiations.is_empty())
        {
            hopeless[d] = true;
            if !std::mem::replace(&mut warned[d], true) {
                warn!(
                    "skipping dialogue {}: too short or no initiations for training segments",
                    dialogue.id
                );
            }
            continue;
        }
        let span = ((dialogue.duration - SEGMENT_LEN) / frame_shift + TIME_EPS).floor() as u64;
        let found = (0..MAX_SAMPLING_RETRIES).find_map(|_| {
            let target = if rng.gen_bool(0.5) { Speaker::A } else { Speaker::B };
            let start = rng.gen_range(0..=span) as f64 * frame_shift;
            qualifies(&dialogue.track(target).initiations, start).then_some((target, start))
        });
        match found {
            Some((target_speaker, start)) => out.push(Segment {
                dialogue_id: dialogue.id.clone(),
                start,
                end: start + SEGMENT_LEN,
                target_speaker,
            }),
            None => {
                // A definitive check keeps a dialogue in play when retries were unlucky.
                let any = [Speaker::A, Speaker::B].iter().any(|&s| {
                    (0..=span).any(|k| qualifies(&dialogue.track(s).initiations, k as f64 * frame_shift))
                });
                if !any {
                    hopeless[d] = true;
                    if !std::mem::replace(&mut warned[d], true) {
                        warn!("skipping dialogue {}: no qualifying training window", dialogue.id);
                    }
                }
            }
        }
    }
    out
}

/// 60 s evaluation segments every 20 s (the tail ones truncated at the end of
/// the dialogue), each with a target speaker drawn from `seed`.
pub fn eval_segments(corpus: &[DialogueTracks], seed: u64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for dialogue in corpus {
        let mut k = 0u32;
        loop {
            let start = k as f64 * EVAL_STRIDE;
            if start >= dialogue.duration - TIME_EPS {
                break;
            }
            let target_speaker = if rng.gen_bool(0.5) { Speaker::A } else { Speaker::B };
            out.push(Segment {
                dialogue_id: dialogue.id.clone(),
                start,
                end: (start + SEGMENT_LEN).min(dialogue.duration),
                target_speaker,
            });
            k += 1;
        }
    }
    out
}

pub fn write_segments(path: &Path, segments: &[Segment]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for seg in segments {
        let line = serde_json::to_string(seg).expect("segments always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_segments(path: &Path) -> Result<Vec<Segment>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
