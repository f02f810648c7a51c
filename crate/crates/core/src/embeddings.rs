//! Precomputed neural embeddings and their alignment to the frame grid.
//!
//! Dump layout (little-endian):
//!
//! ```text
//! "ILDE" | u32 version = 1 | u8 kind (0 acoustic, 1 word) | u32 dim | u32 count | f32 frame_shift
//! acoustic: count * dim f32, row-major
//! word:     count * (u32 word_index, f32 end_time, dim f32)
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::dsp::{FrameGrid, DEFAULT_FRAME_SHIFT};
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 4] = b"ILDE";
pub const DUMP_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4 + 4;

/// Slack for comparing f32 dump times with f64 frame times.
const ALIGN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingKind {
    Acoustic,
    Word,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordEntry {
    pub word_index: u32,
    pub end_time: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    pub kind: EmbeddingKind,
    pub dim: usize,
    /// Seconds between acoustic rows; unused for word dumps.
    pub frame_shift: f32,
    /// `count x dim`.
    pub vectors: Array2<f32>,
    /// One entry per row for word dumps, empty for acoustic dumps.
    pub words: Vec<WordEntry>,
}

impl EmbeddingDump {
    pub fn acoustic(vectors: Array2<f32>, frame_shift: f32) -> Result<Self> {
        let dump = EmbeddingDump {
            kind: EmbeddingKind::Acoustic,
            dim: vectors.ncols(),
            frame_shift,
            vectors,
            words: Vec::new(),
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn word(words: Vec<WordEntry>, vectors: Array2<f32>) -> Result<Self> {
        let dump = EmbeddingDump {
            kind: EmbeddingKind::Word,
            dim: vectors.ncols(),
            frame_shift: 0.0,
            vectors,
            words,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn count(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.vectors.ncols() != self.dim {
            return Err(Error::Dump(format!(
                "dimension {} inconsistent with vectors {:?}",
                self.dim,
                self.vectors.dim()
            )));
        }
        if self.vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dump("vectors contain NaN/Inf".into()));
        }
        match self.kind {
            EmbeddingKind::Acoustic => {
                if (self.frame_shift as f64 - DEFAULT_FRAME_SHIFT).abs() > 1e-6 {
                    return Err(Error::Dump(format!(
                        "acoustic frame shift {} is not {DEFAULT_FRAME_SHIFT} s",
                        self.frame_shift
                    )));
                }
            }
            EmbeddingKind::Word => {
                if self.words.len() != self.count() {
                    return Err(Error::Dump(format!(
                        "{} word entries for {} vectors",
                        self.words.len(),
                        self.count()
                    )));
                }
                if self.words.iter().any(|w| !w.end_time.is_finite()) {
                    return Err(Error::Dump("word end time is NaN/Inf".into()));
                }
                if let Some(i) = self.words.windows(2).position(|w| w[1].end_time < w[0].end_time) {
                    return Err(Error::Dump(format!(
                        "word end times not sorted at record {}",
                        i + 1
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.vectors.len() * 4 + self.words.len() * 8);
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&DUMP_VERSION.to_le_bytes());
        out.push(match self.kind {
            EmbeddingKind::Acoustic => 0,
            EmbeddingKind::Word => 1,
        });
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&self.frame_shift.to_le_bytes());
        for (i, row) in self.vectors.rows().into_iter().enumerate() {
            if self.kind == EmbeddingKind::Word {
                out.extend_from_slice(&self.words[i].word_index.to_le_bytes());
                out.extend_from_slice(&self.words[i].end_time.to_le_bytes());
            }
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Dump(format!(
                "size mismatch: {} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..4] != DUMP_MAGIC {
            return Err(Error::Dump("bad magic, expected ILDE".into()));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let f32_at = |at: usize| f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != DUMP_VERSION {
            return Err(Error::Dump(format!("unsupported version {version}")));
        }
        let kind = match bytes[8] {
            0 => EmbeddingKind::Acoustic,
            1 => EmbeddingKind::Word,
            k => return Err(Error::Dump(format!("unknown kind {k}"))),
        };
        let dim = u32_at(9) as usize;
        let count = u32_at(13) as usize;
        let frame_shift = f32_at(17);
        let record = match kind {
            EmbeddingKind::Acoustic => dim * 4,
            EmbeddingKind::Word => 8 + dim * 4,
        };
        let expected = HEADER_LEN + count * record;
        if bytes.len() != expected {
            return Err(Error::Dump(format!(
                "size mismatch: header promises {expected} bytes, file has {}",
                bytes.len()
            )));
        }
        let mut vectors = Array2::zeros((count, dim));
        let mut words = Vec::new();
        for i in 0..count {
            let mut at = HEADER_LEN + i * record;
            if kind == EmbeddingKind::Word {
                words.push(WordEntry {
                    word_index: u32_at(at),
                    end_time: f32_at(at + 4),
                });
                at += 8;
            }
            for j in 0..dim {
                vectors[[i, j]] = f32_at(at + 4 * j);
            }
        }
        let dump = EmbeddingDump {
            kind,
            dim,
            frame_shift,
            vectors,
            words,
        };
        dump.validate()?;
        Ok(dump)
    }
}

pub fn read_dump(path: &Path) -> Result<EmbeddingDump> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingDump::from_bytes(&bytes).map_err(|e| match e {
        Error::Dump(msg) => Error::Dump(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_dump(path: &Path, dump: &EmbeddingDump) -> Result<()> {
    dump.validate()?;
    fs::write(path, dump.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Embedding streams resampled onto a frame grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedEmbeddings {
    pub grid: FrameGrid,
    pub acoustic: Option<Array2<f32>>,
    pub word: Option<Array2<f32>>,
}

impl AlignedEmbeddings {
    pub fn empty(grid: FrameGrid) -> Self {
        AlignedEmbeddings {
            grid,
            acoustic: None,
            word: None,
        }
    }

    /// Combines two alignments on the same grid; streams in `other` win.
    pub fn merge(mut self, other: AlignedEmbeddings) -> Result<Self> {
        if !self.grid.aligned_with(&other.grid) {
            return Err(Error::Validation("cannot merge embeddings on different grids".into()));
        }
        if other.acoustic.is_some() {
            self.acoustic = other.acoustic;
        }
        if other.word.is_some() {
            self.word = other.word;
        }
        Ok(self)
    }

    /// Rows `[start, start + len)` of every stream.
    pub fn slice_frames(&self, start: usize, len: usize) -> AlignedEmbeddings {
        let start = start.min(self.grid.n_frames);
        let end = (start + len).min(self.grid.n_frames);
        let cut = |m: &Array2<f32>| m.slice(ndarray::s![start..end, ..]).to_owned();
        AlignedEmbeddings {
            grid: self.grid.with_frames(end - start),
            acoustic: self.acoustic.as_ref().map(cut),
            word: self.word.as_ref().map(cut),
        }
    }
}

pub fn align(dump: &EmbeddingDump, grid: &FrameGrid) -> AlignedEmbeddings {
    align_from(dump, grid, 0.0)
}

/// Aligns `dump` onto `grid` whose frame 0 sits at `offset` seconds of the dump's
/// timeline. Frame `t` only ever sees embeddings available at its own time.
pub fn align_from(dump: &EmbeddingDump, grid: &FrameGrid, offset: f64) -> AlignedEmbeddings {
    let mut out = Array2::<f32>::zeros((grid.n_frames, dump.dim));
    let mut copy_row = |t: usize, row: ArrayView1<f32>| out.row_mut(t).assign(&row);
    match dump.kind {
        EmbeddingKind::Acoustic => {
            let shift = dump.frame_shift as f64;
            for t in 0..grid.n_frames {
                let time = offset + grid.time(t);
                if time < -ALIGN_EPS || dump.count() == 0 {
                    continue;
                }
                let idx = (((time + ALIGN_EPS) / shift).floor().max(0.0) as usize).min(dump.count() - 1);
                copy_row(t, dump.vectors.row(idx));
            }
        }
        EmbeddingKind::Word => {
            let mut next = 0;
            for t in 0..grid.n_frames {
                let time = offset + grid.time(t);
                while next < dump.words.len() && dump.words[next].end_time as f64 <= time + ALIGN_EPS {
                    next += 1;
                }
                if next > 0 {
                    copy_row(t, dump.vectors.row(next - 1));
                }
            }
        }
    }
    let mut aligned = AlignedEmbeddings::empty(*grid);
    match dump.kind {
        EmbeddingKind::Acoustic => aligned.acoustic = Some(out),
        EmbeddingKind::Word => aligned.word = Some(out),
    }
    aligned
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acoustic_dump(n: usize, dim: usize) -> EmbeddingDump {
        let vectors = Array2::from_shape_fn((n, dim), |(i, j)| (i * 10 + j) as f32);
        EmbeddingDump::acoustic(vectors, 0.05).unwrap()
    }

    fn word_dump(ends: &[f32], dim: usize) -> EmbeddingDump {
        let words = ends
            .iter()
            .enumerate()
            .map(|(i, &e)| WordEntry {
                word_index: i as u32,
                end_time: e,
            })
            .collect();
        let vectors = Array2::from_shape_fn((ends.len(), dim), |(i, _)| i as f32 + 1.0);
        EmbeddingDump::word(words, vectors).unwrap()
    }

    #[test]
    fn acoustic_round_trip() {
        let dump = acoustic_dump(100, 512);
        let back = EmbeddingDump::from_bytes(&dump.to_bytes()).unwrap();
        assert_eq!(back.count(), 100);
        assert_eq!(back.dim, 512);
        assert_eq!(back, dump);
    }

    #[test]
    fn word_round_trip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ilde");
        let dump = word_dump(&[0.4, 1.0, 2.5], 6);
        write_dump(&path, &dump).unwrap();
        assert_eq!(read_dump(&path).unwrap(), dump);
    }

    #[test]
    fn truncated_payload_is_size_mismatch() {
        let bytes = acoustic_dump(10, 4).to_bytes();
        let err = EmbeddingDump::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = acoustic_dump(2, 2).to_bytes();
        bytes[0] = b'X';
        assert!(EmbeddingDump::from_bytes(&bytes).unwrap_err().to_string().contains("magic"));
        let mut bytes = acoustic_dump(2, 2).to_bytes();
        bytes[4] = 2;
        assert!(EmbeddingDump::from_bytes(&bytes).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn nan_vector_rejected() {
        let mut bytes = acoustic_dump(2, 2).to_bytes();
        let at = HEADER_LEN;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(EmbeddingDump::from_bytes(&bytes).is_err());
    }

    #[test]
    fn unsorted_word_dump_rejected() {
        let dump = EmbeddingDump {
            kind: EmbeddingKind::Word,
            dim: 2,
            frame_shift: 0.0,
            vectors: Array2::zeros((2, 2)),
            words: vec![
                WordEntry { word_index: 0, end_time: 2.0 },
                WordEntry { word_index: 1, end_time: 1.0 },
            ],
        };
        let err = EmbeddingDump::from_bytes(&dump.to_bytes()).unwrap_err();
        assert!(err.to_string().contains("not sorted"), "{err}");
    }

    #[test]
    fn word_vector_available_from_end_time() {
        let dump = word_dump(&[1.0], 3);
        let aligned = align(&dump, &FrameGrid::standard(30));
        let w = aligned.word.unwrap();
        assert!(w.row(19).iter().all(|&v| v == 0.0));
        assert!(w.row(20).iter().all(|&v| v == 1.0));
        assert!(w.row(21).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn no_words_gives_zero_matrix() {
        let dump = EmbeddingDump::word(Vec::new(), Array2::zeros((0, 4))).unwrap();
        let w = align(&dump, &FrameGrid::standard(10)).word.unwrap();
        assert_eq!(w.dim(), (10, 4));
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn acoustic_identity_and_tail_repeat() {
        let dump = acoustic_dump(5, 2);
        let a = align(&dump, &FrameGrid::standard(8)).acoustic.unwrap();
        for t in 0..5 {
            assert_eq!(a.row(t), dump.vectors.row(t));
        }
        for t in 5..8 {
            assert_eq!(a.row(t), dump.vectors.row(4));
        }
    }

    #[test]
    fn offset_alignment_matches_slicing() {
        let dump = acoustic_dump(50, 3);
        let full = align(&dump, &FrameGrid::standard(50));
        let part = align_from(&dump, &FrameGrid::standard(20), 1.0);
        assert_eq!(part, full.slice_frames(20, 20));
    }
}
