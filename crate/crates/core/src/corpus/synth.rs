//! Synthetic two-party dialogues with a controlled turn-taking cue.
//!
//! Each speaker talks in turns made of voiced chunks (harmonic tones following a
//! pitch contour) separated by short pauses. A turn ends with a pitch fall; the
//! other speaker then initiates one of `cue_offsets` seconds after the silence
//! onset. Pauses inside a turn end on a level or slightly rising contour and are
//! followed by the same speaker resuming.

use std::f64::consts::PI;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use ndarray::Array2;

use super::{DialogueRecord, Speaker, WordToken};
use crate::dsp::{rmse, FrameGrid, DEFAULT_FRAME_SHIFT, DEFAULT_WINDOW_LEN};
use crate::embeddings::{EmbeddingDump, WordEntry};
use crate::error::{Error, Result};

/// Shortest voiced chunk the generator emits, in seconds.
const MIN_CHUNK: f64 = 0.6;
const WORD_GAP: f64 = 0.02;
const RAMP: f64 = 0.015;

/// Parameters of a synthetic corpus. Every field except `n_dialogues` and
/// `duration` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_dialogues: usize,
    /// Seconds per dialogue.
    pub duration: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate: u32,
    /// Standard deviation of the additive Gaussian noise on both channels.
    #[serde(default = "default_noise")]
    pub noise_level: f64,
    /// Delays between a turn-final silence onset and the other speaker's initiation.
    #[serde(default = "default_offsets")]
    pub cue_offsets: Vec<f64>,
    /// Relative frequency of each cue offset; empty means uniform.
    #[serde(default)]
    pub cue_weights: Vec<f64>,
    /// Length of the falling contour at the end of each turn, seconds.
    #[serde(default = "default_pitch_fall")]
    pub pitch_fall: f64,
    /// Final pitch as a fraction of the speaker's base pitch.
    #[serde(default = "default_fall_ratio")]
    pub fall_ratio: f64,
    #[serde(default = "default_chunks")]
    pub chunks_per_turn: [usize; 2],
    #[serde(default = "default_chunk_len")]
    pub chunk_len: [f64; 2],
    #[serde(default = "default_pause_len")]
    pub pause_len: [f64; 2],
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
    #[serde(default = "default_f0")]
    pub f0_range: [f64; 2],
    #[serde(default = "default_wps")]
    pub words_per_second: f64,
    /// Window for the responding speaker's first initiation.
    #[serde(default = "default_first")]
    pub first_initiation: [f64; 2],
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
    /// When set, `synth` also writes pseudo embedding dumps of these sizes.
    #[serde(default)]
    pub pseudo_embeddings: Option<PseudoEmbeddingSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoEmbeddingSpec {
    pub acoustic_dim: usize,
    pub word_dim: usize,
}

fn default_sample_rate() -> u32 {
    8000
}
fn default_noise() -> f64 {
    0.002
}
fn default_offsets() -> Vec<f64> {
    vec![0.8]
}
fn default_pitch_fall() -> f64 {
    0.4
}
fn default_fall_ratio() -> f64 {
    0.6
}
fn default_chunks() -> [usize; 2] {
    [1, 3]
}
fn default_chunk_len() -> [f64; 2] {
    [1.0, 2.5]
}
fn default_pause_len() -> [f64; 2] {
    [0.3, 1.2]
}
fn default_amplitude() -> [f64; 2] {
    [0.1, 0.4]
}
fn default_f0() -> [f64; 2] {
    [100.0, 220.0]
}
fn default_wps() -> f64 {
    3.0
}
fn default_first() -> [f64; 2] {
    [5.5, 9.5]
}
fn default_prefix() -> String {
    "synth".into()
}

impl SynthSpec {
    pub fn new(n_dialogues: usize, duration: f64) -> Self {
        SynthSpec {
            n_dialogues,
            duration,
            sample_rate: default_sample_rate(),
            noise_level: default_noise(),
            cue_offsets: default_offsets(),
            cue_weights: Vec::new(),
            pitch_fall: default_pitch_fall(),
            fall_ratio: default_fall_ratio(),
            chunks_per_turn: default_chunks(),
            chunk_len: default_chunk_len(),
            pause_len: default_pause_len(),
            amplitude: default_amplitude(),
            f0_range: default_f0(),
            words_per_second: default_wps(),
            first_initiation: default_first(),
            id_prefix: default_prefix(),
            pseudo_embeddings: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synth spec: {msg}")));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", self.duration));
        }
        if self.sample_rate < 800 {
            return bad(format!("sample_rate {} too low", self.sample_rate));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return bad(format!("noise_level {} outside [0, 1)", self.noise_level));
        }
        if self.cue_offsets.is_empty() || self.cue_offsets.iter().any(|&o| !(o > 0.0)) {
            return bad("cue_offsets must be non-empty and positive".into());
        }
        if !self.cue_weights.is_empty()
            && (self.cue_weights.len() != self.cue_offsets.len()
                || self.cue_weights.iter().any(|&w| !(w >= 0.0))
                || self.cue_weights.iter().sum::<f64>() <= 0.0)
        {
            return bad("cue_weights must match cue_offsets and be non-negative".into());
        }
        let ranges = [
            ("chunk_len", self.chunk_len),
            ("pause_len", self.pause_len),
            ("amplitude", self.amplitude),
            ("f0_range", self.f0_range),
            ("first_initiation", self.first_initiation),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo <= hi && lo >= 0.0) {
                return bad(format!("{name} must satisfy 0 <= lo <= hi"));
            }
        }
        if self.chunk_len[0] < MIN_CHUNK {
            return bad(format!("chunk_len lower bound must be at least {MIN_CHUNK}"));
        }
        if self.amplitude[1] > 0.9 {
            return bad("amplitude upper bound must be at most 0.9".into());
        }
        if self.chunks_per_turn[0] == 0 || self.chunks_per_turn[0] > self.chunks_per_turn[1] {
            return bad("chunks_per_turn must satisfy 1 <= lo <= hi".into());
        }
        if self.f0_range[1] * 3.0 >= self.sample_rate as f64 / 2.0 || self.f0_range[0] <= 0.0 {
            return bad("f0_range must be positive with third harmonic below Nyquist".into());
        }
        if !(self.pitch_fall >= 0.0) || !(self.fall_ratio > 0.0) || !(self.words_per_second > 0.0)
        {
            return bad("pitch_fall, fall_ratio and words_per_second must be positive".into());
        }
        Ok(())
    }
}

/// One voiced stretch of a speaker.
#[derive(Debug, Clone)]
struct Chunk {
    speaker: Speaker,
    start: f64,
    end: f64,
    f0: f64,
    amplitude: f64,
    turn_final: bool,
}

pub fn synthesize_corpus(spec: &SynthSpec, seed: u64) -> Result<Vec<DialogueRecord>> {
    spec.validate()?;
    (0..spec.n_dialogues)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            Ok(synthesize_dialogue(
                spec,
                format!("{}{i:04}", spec.id_prefix),
                &mut rng,
            ))
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn synthesize_dialogue(spec: &SynthSpec, id: String, rng: &mut ChaCha8Rng) -> DialogueRecord {
    let offsets = if spec.cue_weights.is_empty() {
        WeightedIndex::new(vec![1.0; spec.cue_offsets.len()])
    } else {
        WeightedIndex::new(&spec.cue_weights)
    }
    .expect("weights validated");

    let opener = if rng.gen_bool(0.5) { Speaker::A } else { Speaker::B };
    let base_f0 = [uniform(rng, spec.f0_range), uniform(rng, spec.f0_range)];
    let f0_of = |s: Speaker| base_f0[s as usize];

    let mut chunks = Vec::new();

    // Opening turn sized so the responder first initiates inside `first_initiation`.
    let lead_in = rng.gen_range(0.3..1.0);
    let first = uniform(rng, spec.first_initiation).max(lead_in + MIN_CHUNK + 1.0);
    let offset = spec.cue_offsets[offsets.sample(rng)];
    let opening_end = (first - offset).max(lead_in + MIN_CHUNK);
    fill_turn(spec, rng, opener, lead_in, opening_end, f0_of(opener), &mut chunks);

    let mut speaker = opener.other();
    let mut t = opening_end + offset;
    while t < spec.duration {
        let n = rng.gen_range(spec.chunks_per_turn[0]..=spec.chunks_per_turn[1]);
        let mut end = t;
        let mut spans = Vec::with_capacity(n);
        for k in 0..n {
            if k > 0 {
                end += uniform(rng, spec.pause_len).max(super::DEFAULT_MERGE_GAP + 0.05);
            }
            let len = uniform(rng, spec.chunk_len);
            spans.push((end, end + len));
            end += len;
        }
        push_turn(spec, rng, speaker, &spans, f0_of(speaker), &mut chunks);
        t = end + spec.cue_offsets[offsets.sample(rng)];
        speaker = speaker.other();
    }

    render(spec, id, &chunks, rng)
}

/// Splits `[start, end]` into voiced chunks separated by pauses.
fn fill_turn(
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
    speaker: Speaker,
    start: f64,
    end: f64,
    f0: f64,
    out: &mut Vec<Chunk>,
) {
    let mut spans = Vec::new();
    let mut t = start;
    loop {
        let len = uniform(rng, spec.chunk_len);
        let pause = uniform(rng, spec.pause_len).max(super::DEFAULT_MERGE_GAP + 0.05);
        if t + len + pause + MIN_CHUNK > end {
            spans.push((t, end));
            break;
        }
        spans.push((t, t + len));
        t += len + pause;
    }
    push_turn(spec, rng, speaker, &spans, f0, out);
}

fn push_turn(
    spec: &SynthSpec,
    rng: &mut ChaCha8Rng,
    speaker: Speaker,
    spans: &[(f64, f64)],
    f0: f64,
    out: &mut Vec<Chunk>,
) {
    for (k, &(start, end)) in spans.iter().enumerate() {
        out.push(Chunk {
            speaker,
            start,
            end,
            f0: f0 * rng.gen_range(0.9..1.1),
            amplitude: uniform(rng, spec.amplitude),
            turn_final: k + 1 == spans.len(),
        });
    }
}

/// Pitch at `t` seconds into a chunk of length `len`.
fn contour(spec: &SynthSpec, chunk: &Chunk, t: f64) -> f64 {
    let len = chunk.end - chunk.start;
    if chunk.turn_final {
        let fall_start = (len - spec.pitch_fall).max(0.0);
        if t <= fall_start || spec.pitch_fall == 0.0 {
            chunk.f0
        } else {
            let frac = ((t - fall_start) / (len - fall_start)).min(1.0);
            chunk.f0 * (1.0 - (1.0 - spec.fall_ratio) * frac)
        }
    } else {
        // Level, with a slight continuation rise over the last 0.3 s.
        let rise_start = (len - 0.3).max(0.0);
        if t <= rise_start {
            chunk.f0
        } else {
            chunk.f0 * (1.0 + 0.1 * (t - rise_start) / (len - rise_start))
        }
    }
}

fn render(spec: &SynthSpec, id: String, chunks: &[Chunk], rng: &mut ChaCha8Rng) -> DialogueRecord {
    let sr = spec.sample_rate as f64;
    let n = (spec.duration * sr).round() as usize;
    let mut channels = [vec![0.0f64; n], vec![0.0f64; n]];
    let mut transcripts: [Vec<WordToken>; 2] = [Vec::new(), Vec::new()];
    let mut word_counter = [0usize; 2];

    for chunk in chunks {
        if chunk.start >= spec.duration {
            continue;
        }
        let ch = chunk.speaker as usize;
        let first = (chunk.start * sr).ceil() as usize;
        let last = ((chunk.end * sr).ceil() as usize).min(n);
        let len = chunk.end - chunk.start;
        let mut phase = 0.0f64;
        for i in first..last {
            let t = i as f64 / sr - chunk.start;
            let env = (t / RAMP).min((len - t) / RAMP).clamp(0.0, 1.0);
            phase += 2.0 * PI * contour(spec, chunk, t) / sr;
            let tone = (phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin()) / 1.75;
            channels[ch][i] += chunk.amplitude * env * tone;
        }

        let n_words = ((len * spec.words_per_second).round() as usize).max(1);
        let step = len / n_words as f64;
        for j in 0..n_words {
            let s = chunk.start + j as f64 * step;
            let e = if j + 1 == n_words {
                chunk.end
            } else {
                s + step - WORD_GAP
            };
            if e > spec.duration {
                break;
            }
            transcripts[ch].push(WordToken::new(format!("w{}", word_counter[ch]), s, e));
            word_counter[ch] += 1;
        }
    }

    let noise = Normal::new(0.0, spec.noise_level.max(f64::MIN_POSITIVE)).expect("valid std");
    let [a, b] = channels.map(|mut ch| {
        for x in ch.iter_mut() {
            if spec.noise_level > 0.0 {
                *x += noise.sample(rng);
            }
        }
        ch.into_iter().map(quantize_pcm16).collect::<Vec<f32>>()
    });
    let [ta, tb] = transcripts;
    DialogueRecord {
        id,
        sample_rate: spec.sample_rate,
        channel_a: a,
        channel_b: b,
        transcript_a: ta,
        transcript_b: tb,
    }
}

/// Deterministic stand-ins for extractor output: per channel, an acoustic
/// dump (a fixed random projection of log frame energy plus noise) and a word
/// dump (one seeded random vector per distinct word text).
pub fn pseudo_dumps(
    record: &DialogueRecord,
    spec: &PseudoEmbeddingSpec,
    seed: u64,
) -> Result<Vec<(Speaker, EmbeddingDump, EmbeddingDump)>> {
    let shift = DEFAULT_FRAME_SHIFT;
    let normal = Normal::new(0.0, 1.0).expect("valid std");
    let mut proj_rng = ChaCha8Rng::seed_from_u64(seed);
    let projection: Vec<[f64; 2]> = (0..spec.acoustic_dim)
        .map(|_| [normal.sample(&mut proj_rng), normal.sample(&mut proj_rng)])
        .collect();
    let mut out = Vec::with_capacity(2);
    for (k, speaker) in [Speaker::A, Speaker::B].into_iter().enumerate() {
        let wave = record.channel(speaker);
        let n_rows = (record.duration() / shift - 1e-9).ceil().max(0.0) as usize;
        let grid = FrameGrid::new(shift, DEFAULT_WINDOW_LEN, n_rows)?;
        let energy = rmse(wave, record.sample_rate, &grid);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
        noise_rng.set_stream(2 + k as u64);
        let acoustic = Array2::from_shape_fn((n_rows, spec.acoustic_dim), |(t, j)| {
            let e = energy.values[[t, 0]];
            let feats = [(e + 1e-4).log10() + 2.0, 10.0 * e];
            (projection[j][0] * feats[0] + projection[j][1] * feats[1]) as f32
        })
        .mapv(|v| v + 0.1 * normal.sample(&mut noise_rng) as f32);
        let mut words = Vec::new();
        let mut rows = Vec::new();
        for (i, tok) in record.transcript(speaker).iter().enumerate() {
            if tok.is_vocal_noise {
                continue;
            }
            let mut h = seed;
            for b in tok.text.bytes() {
                h = h.wrapping_mul(0x100_0000_01b3).wrapping_add(b as u64);
            }
            let mut word_rng = ChaCha8Rng::seed_from_u64(h);
            rows.extend((0..spec.word_dim).map(|_| normal.sample(&mut word_rng) as f32));
            words.push(WordEntry {
                word_index: i as u32,
                end_time: tok.end as f32,
            });
        }
        let word_vectors =
            Array2::from_shape_vec((words.len(), spec.word_dim), rows).expect("one row per word");
        out.push((
            speaker,
            EmbeddingDump::acoustic(acoustic, shift as f32)?,
            EmbeddingDump::word(words, word_vectors)?,
        ));
    }
    Ok(out)
}

/// Snaps a sample onto the 16-bit PCM grid so saved corpora reload bit-exactly.
fn quantize_pcm16(x: f64) -> f32 {
    ((x * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0) as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{segment_utterances, DEFAULT_MERGE_GAP};

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec::new(2, 60.0);
        let a = synthesize_corpus(&spec, 7).unwrap();
        let b = synthesize_corpus(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synthesize_corpus(&spec, 8).unwrap());
        for rec in &a {
            rec.validate().unwrap();
            assert_eq!(rec.duration(), 60.0);
        }
    }

    #[test]
    fn pseudo_dumps_are_valid_and_deterministic() {
        let mut spec = SynthSpec::new(1, 12.0);
        spec.pseudo_embeddings = Some(PseudoEmbeddingSpec {
            acoustic_dim: 4,
            word_dim: 3,
        });
        let rec = &synthesize_corpus(&spec, 5).unwrap()[0];
        let pe = spec.pseudo_embeddings.as_ref().unwrap();
        let a = pseudo_dumps(rec, pe, 9).unwrap();
        assert_eq!(a, pseudo_dumps(rec, pe, 9).unwrap());
        for (speaker, acoustic, word) in &a {
            assert_eq!(acoustic.vectors.dim(), (240, 4));
            assert_eq!(word.count(), rec.transcript(*speaker).len());
            let back = EmbeddingDump::from_bytes(&word.to_bytes()).unwrap();
            assert_eq!(&back, word);
        }
    }

    #[test]
    fn empty_corpus() {
        assert!(synthesize_corpus(&SynthSpec::new(0, 60.0), 1).unwrap().is_empty());
    }

    #[test]
    fn rejects_non_positive_duration() {
        assert!(synthesize_corpus(&SynthSpec::new(1, 0.0), 1).is_err());
        assert!(synthesize_corpus(&SynthSpec::new(1, -3.0), 1).is_err());
    }

    #[test]
    fn transitions_follow_cue_offset() {
        let spec = SynthSpec::new(4, 60.0);
        for rec in synthesize_corpus(&spec, 11).unwrap() {
            for target in [Speaker::A, Speaker::B] {
                let tgt = segment_utterances(rec.transcript(target), DEFAULT_MERGE_GAP);
                let cur = segment_utterances(rec.transcript(target.other()), DEFAULT_MERGE_GAP);
                let mut transitions = 0;
                for &init in &tgt.initiations {
                    let own_last = tgt
                        .utterances
                        .iter()
                        .filter(|u| u.end <= init)
                        .map(|u| u.end)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let other_last = cur
                        .utterances
                        .iter()
                        .filter(|u| u.end <= init)
                        .map(|u| u.end)
                        .fold(f64::NEG_INFINITY, f64::max);
                    if other_last > own_last {
                        transitions += 1;
                        assert!((init - other_last - 0.8).abs() < 1e-9, "{init} vs {other_last}");
                    }
                }
                assert!(transitions > 0);
            }
        }
    }

    #[test]
    fn responder_first_initiation_in_window() {
        let spec = SynthSpec::new(6, 60.0);
        for rec in synthesize_corpus(&spec, 3).unwrap() {
            let a = segment_utterances(&rec.transcript_a, DEFAULT_MERGE_GAP);
            let b = segment_utterances(&rec.transcript_b, DEFAULT_MERGE_GAP);
            let later = a.initiations[0].max(b.initiations[0]);
            assert!((5.5 - 1e-9..=9.5 + 1e-9).contains(&later), "{later}");
        }
    }
}
