//! Dialogue ingestion: two-channel audio plus per-speaker word transcripts.
//!
//! On disk a dialogue `id` is three files: `id.wav` (16-bit PCM, channel 0 is
//! speaker A, channel 1 is speaker B) and `id.a.jsonl` / `id.b.jsonl` holding
//! one word object per line.

mod synth;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TIME_EPS;

pub use synth::{pseudo_dumps, synthesize_corpus, PseudoEmbeddingSpec, SynthSpec};

/// Default gap below which consecutive words of one speaker form one utterance.
pub const DEFAULT_MERGE_GAP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Speaker {
    A,
    B,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::A => Speaker::B,
            Speaker::B => Speaker::A,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Speaker::A => "a",
            Speaker::B => "b",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::A => f.write_str("A"),
            Speaker::B => f.write_str("B"),
        }
    }
}

/// One transcribed word; `is_vocal_noise` marks laughter and similar tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordToken {
    #[serde(rename = "w")]
    pub text: String,
    #[serde(rename = "s")]
    pub start: f64,
    #[serde(rename = "e")]
    pub end: f64,
    #[serde(rename = "noise", default)]
    pub is_vocal_noise: bool,
}

impl WordToken {
    pub fn new(text: impl Into<String>, start: f64, end: f64) -> Self {
        WordToken {
            text: text.into(),
            start,
            end,
            is_vocal_noise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialogueRecord {
    pub id: String,
    pub sample_rate: u32,
    pub channel_a: Vec<f32>,
    pub channel_b: Vec<f32>,
    pub transcript_a: Vec<WordToken>,
    pub transcript_b: Vec<WordToken>,
}

impl DialogueRecord {
    pub fn duration(&self) -> f64 {
        self.channel_a.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, speaker: Speaker) -> &[f32] {
        match speaker {
            Speaker::A => &self.channel_a,
            Speaker::B => &self.channel_b,
        }
    }

    pub fn transcript(&self, speaker: Speaker) -> &[WordToken] {
        match speaker {
            Speaker::A => &self.transcript_a,
            Speaker::B => &self.transcript_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::Validation(format!(
                "dialogue {}: sample rate must be positive",
                self.id
            )));
        }
        if self.channel_a.len() != self.channel_b.len() {
            return Err(Error::Validation(format!(
                "dialogue {}: channel lengths differ ({} vs {})",
                self.id,
                self.channel_a.len(),
                self.channel_b.len()
            )));
        }
        if let Some(x) = self
            .channel_a
            .iter()
            .chain(&self.channel_b)
            .find(|x| !x.is_finite() || x.abs() > 1.0)
        {
            return Err(Error::Validation(format!(
                "dialogue {}: sample {x} outside [-1, 1]",
                self.id
            )));
        }
        let duration = self.duration();
        for speaker in [Speaker::A, Speaker::B] {
            validate_transcript(self.transcript(speaker), duration).map_err(|msg| {
                Error::Validation(format!("dialogue {} speaker {speaker}: {msg}", self.id))
            })?;
        }
        Ok(())
    }
}

fn validate_transcript(tokens: &[WordToken], duration: f64) -> std::result::Result<(), String> {
    let mut prev_end = f64::NEG_INFINITY;
    for (i, tok) in tokens.iter().enumerate() {
        if tok.text.is_empty() {
            return Err(format!("word {i} has empty text"));
        }
        if !(tok.start.is_finite() && tok.end.is_finite()) || tok.start >= tok.end {
            return Err(format!(
                "word {i} ({}) has end {} not after start {}",
                tok.text, tok.end, tok.start
            ));
        }
        if tok.start < -TIME_EPS || tok.end > duration + TIME_EPS {
            return Err(format!(
                "word {i} ({}) [{}, {}] outside dialogue [0, {duration}]",
                tok.text, tok.start, tok.end
            ));
        }
        if tok.start < prev_end - TIME_EPS {
            return Err(format!(
                "word {i} ({}) starts at {} before previous word ends at {prev_end}",
                tok.text, tok.start
            ));
        }
        prev_end = tok.end;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub start: f64,
    pub end: f64,
    /// Indices into the speaker's token list.
    pub words: Range<usize>,
}

/// Utterances of one speaker. `initiations[k]` is the start of utterance `k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UtteranceTrack {
    pub utterances: Vec<Utterance>,
    pub initiations: Vec<f64>,
}

impl UtteranceTrack {
    pub fn from_utterances(utterances: Vec<Utterance>) -> Self {
        let initiations = utterances.iter().map(|u| u.start).collect();
        UtteranceTrack {
            utterances,
            initiations,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Whether time `t` falls inside an utterance (`start <= t < end`).
    pub fn is_speaking(&self, t: f64) -> bool {
        let idx = self.utterances.partition_point(|u| u.start <= t + TIME_EPS);
        idx > 0 && t < self.utterances[idx - 1].end - TIME_EPS
    }

    /// First initiation strictly after `t`.
    pub fn next_initiation_after(&self, t: f64) -> Option<f64> {
        let idx = self.initiations.partition_point(|&i| i <= t + TIME_EPS);
        self.initiations.get(idx).copied()
    }

    /// First initiation at or after `t`.
    pub fn first_initiation_from(&self, t: f64) -> Option<f64> {
        let idx = self.initiations.partition_point(|&i| i < t - TIME_EPS);
        self.initiations.get(idx).copied()
    }

    /// The same track with every time moved by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> UtteranceTrack {
        let utterances = self
            .utterances
            .iter()
            .map(|u| Utterance {
                start: u.start + offset,
                end: u.end + offset,
                words: u.words.clone(),
            })
            .collect();
        UtteranceTrack::from_utterances(utterances)
    }
}

/// Groups one speaker's words into utterances: a gap shorter than `merge_gap`
/// continues the current utterance, anything longer starts a new one.
pub fn segment_utterances(tokens: &[WordToken], merge_gap: f64) -> UtteranceTrack {
    let mut utterances: Vec<Utterance> = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        match utterances.last_mut() {
            Some(u) if tok.start - u.end < merge_gap => {
                u.end = u.end.max(tok.end);
                u.words.end = i + 1;
            }
            _ => utterances.push(Utterance {
                start: tok.start,
                end: tok.end,
                words: i..i + 1,
            }),
        }
    }
    UtteranceTrack::from_utterances(utterances)
}

/// Utterance tracks for both speakers of a dialogue, without the audio.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogueTracks {
    pub id: String,
    pub duration: f64,
    pub a: UtteranceTrack,
    pub b: UtteranceTrack,
}

impl DialogueTracks {
    pub fn from_record(record: &DialogueRecord, merge_gap: f64) -> Self {
        DialogueTracks {
            id: record.id.clone(),
            duration: record.duration(),
            a: segment_utterances(&record.transcript_a, merge_gap),
            b: segment_utterances(&record.transcript_b, merge_gap),
        }
    }

    pub fn track(&self, speaker: Speaker) -> &UtteranceTrack {
        match speaker {
            Speaker::A => &self.a,
            Speaker::B => &self.b,
        }
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<WordToken>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tokens = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tok: WordToken = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        tokens.push(tok);
    }
    Ok(tokens)
}

pub fn write_transcript(path: &Path, tokens: &[WordToken]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for tok in tokens {
        let line = serde_json::to_string(tok).expect("word tokens always serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dialogue(
    audio_path: &Path,
    transcript_path_a: &Path,
    transcript_path_b: &Path,
) -> Result<DialogueRecord> {
    let wav_err = |source| Error::Wav {
        path: audio_path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(audio_path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.channels != 2 {
        return Err(Error::Validation(format!(
            "{}: expected 2 channels, found {}",
            audio_path.display(),
            spec.channels
        )));
    }
    if spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Validation(format!(
            "{}: expected 16-bit integer PCM",
            audio_path.display()
        )));
    }
    let n = reader.len() as usize / 2;
    let mut channel_a = Vec::with_capacity(n);
    let mut channel_b = Vec::with_capacity(n);
    for (i, s) in reader.samples::<i16>().enumerate() {
        let x = s.map_err(wav_err)? as f32 / 32768.0;
        if i % 2 == 0 {
            channel_a.push(x);
        } else {
            channel_b.push(x);
        }
    }
    let id = audio_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let record = DialogueRecord {
        id,
        sample_rate: spec.sample_rate,
        channel_a,
        channel_b,
        transcript_a: read_transcript(transcript_path_a)?,
        transcript_b: read_transcript(transcript_path_b)?,
    };
    record.validate()?;
    Ok(record)
}

/// Paths of the three files making up dialogue `id` inside `dir`.
pub fn dialogue_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{id}.wav")),
        dir.join(format!("{id}.a.jsonl")),
        dir.join(format!("{id}.b.jsonl")),
    )
}

pub fn load_dialogue_from_dir(dir: &Path, id: &str) -> Result<DialogueRecord> {
    let (wav, a, b) = dialogue_paths(dir, id);
    load_dialogue(&wav, &a, &b)
}

fn to_pcm16(x: f32) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn save_dialogue(record: &DialogueRecord, dir: &Path) -> Result<()> {
    record.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (wav, a, b) = dialogue_paths(dir, &record.id);
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: record.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: wav.clone(),
        source,
    };
    let mut writer = hound::WavWriter::create(&wav, spec).map_err(wav_err)?;
    for (&l, &r) in record.channel_a.iter().zip(&record.channel_b) {
        writer.write_sample(to_pcm16(l)).map_err(wav_err)?;
        writer.write_sample(to_pcm16(r)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)?;
    write_transcript(&a, &record.transcript_a)?;
    write_transcript(&b, &record.transcript_b)
}

/// Dialogue ids in `dir`, i.e. the stems of all `*.wav` files, sorted.
pub fn list_dialogues(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == "wav") {
            if let Some(stem) = path.file_stem() {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}
