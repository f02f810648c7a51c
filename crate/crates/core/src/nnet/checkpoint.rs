//! Binary checkpoint format, little-endian:
//!
//! ```text
//! "ILCK" | u32 version | u32 config_len | config JSON
//! u32 n_sections, then per section:
//!   u32 name_len | name | u32 ndim | u32 dims[ndim] | f32 data[prod(dims)]
//! ```
//!
//! Sections are the model parameters followed by the four input
//! normalization vectors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{InputNorm, Model};
use super::params::Tensor;
use super::ModelConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ILCK";
const CHECKPOINT_VERSION: u32 = 1;
const NORM_SECTIONS: [&str; 4] = ["norm.audio_shift", "norm.audio_scale", "norm.word_shift", "norm.word_scale"];

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint(model: &Model, out: &mut impl Write) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).map_err(|e| bad(e.to_string()))?;
    buf.extend_from_slice(&(config.len() as u32).to_le_bytes());
    buf.extend_from_slice(&config);
    let norm = &model.norm;
    let norm_data = [&norm.audio_shift, &norm.audio_scale, &norm.word_shift, &norm.word_scale];
    let n_sections = model.params.tensors.len() + NORM_SECTIONS.len();
    buf.extend_from_slice(&(n_sections as u32).to_le_bytes());
    let mut section = |name: &str, shape: &[usize], data: &[f64]| {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    for t in &model.params.tensors {
        section(&t.name, &t.shape, &t.data);
    }
    for (name, data) in NORM_SECTIONS.iter().zip(norm_data) {
        section(name, &[data.len()], data);
    }
    out.write_all(&buf).map_err(|e| bad(format!("write failed: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad("truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<Model> {
    let mut bytes = Vec::new();
    input
        .read_to_end(&mut bytes)
        .map_err(|e| bad(format!("read failed: {e}")))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic, not a checkpoint"));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let config_len = cur.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(cur.take(config_len)?).map_err(|e| bad(format!("bad config: {e}")))?;
    let mut model = Model::zeros(config)?;
    let n_sections = cur.u32()? as usize;
    let expected = model.params.tensors.len() + NORM_SECTIONS.len();
    if n_sections != expected {
        return Err(bad(format!("expected {expected} sections, found {n_sections}")));
    }
    let mut sections = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec()).map_err(|_| bad("section name is not UTF-8"))?;
        let ndim = cur.u32()? as usize;
        let shape = (0..ndim).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let data = cur
            .take(count.checked_mul(4).ok_or_else(|| bad("section too large"))?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect::<Vec<_>>();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("section {name} contains non-finite values")));
        }
        sections.push(Tensor { name, shape, data });
    }
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes after last section"));
    }
    let n_params = model.params.tensors.len();
    for (slot, got) in model.params.tensors.iter_mut().zip(&sections) {
        if slot.name != got.name || slot.shape != got.shape {
            return Err(bad(format!(
                "section {} {:?} does not match expected {} {:?}",
                got.name, got.shape, slot.name, slot.shape
            )));
        }
        slot.data.clone_from(&got.data);
    }
    let norm_dims = [
        model.config.audio_input_dim(),
        model.config.audio_input_dim(),
        model.config.word_input_dim(),
        model.config.word_input_dim(),
    ];
    let mut norm_vecs = Vec::new();
    for ((name, dim), got) in NORM_SECTIONS.iter().zip(norm_dims).zip(&sections[n_params..]) {
        if got.name != *name || got.shape != [dim] {
            return Err(bad(format!("section {} {:?} does not match expected {name} [{dim}]", got.name, got.shape)));
        }
        norm_vecs.push(got.data.clone());
    }
    let mut it = norm_vecs.into_iter();
    model.norm = InputNorm {
        audio_shift: it.next().expect("four norm sections"),
        audio_scale: it.next().expect("four norm sections"),
        word_shift: it.next().expect("four norm sections"),
        word_scale: it.next().expect("four norm sections"),
    };
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let mut cfg = ModelConfig::new("WGR".parse().unwrap());
        cfg.hidden = 5;
        cfg.acoustic_dim = 3;
        cfg.word_dim = 4;
        let mut m = Model::new(cfg, 11).unwrap();
        m.norm.audio_shift[1] = 0.25;
        m.norm.word_scale[2] = 3.0;
        m
    }

    #[test]
    fn round_trip_equals_f32_rounding() {
        let m = model();
        let mut bytes = Vec::new();
        write_checkpoint(&m, &mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"ILCK");
        let back = read_checkpoint(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m.rounded_f32());
        let mut again = Vec::new();
        write_checkpoint(&back, &mut again).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = Vec::new();
        write_checkpoint(&model(), &mut bytes).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(read_checkpoint(&mut bad_magic.as_slice()).unwrap_err().to_string().contains("magic"));
        let truncated = &bytes[..bytes.len() - 3];
        assert!(read_checkpoint(&mut &truncated[..]).unwrap_err().to_string().contains("truncated"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let m = model();
        let mut other = m.clone();
        other.config.hidden = 6;
        let mut bytes = Vec::new();
        // Parameters of a hidden=5 model under a hidden=6 header.
        let mut header = Vec::new();
        write_checkpoint(&Model::zeros(other.config.clone()).unwrap(), &mut header).unwrap();
        write_checkpoint(&m, &mut bytes).unwrap();
        let cfg_len = |b: &[u8]| u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let mut spliced = header[..12 + cfg_len(&header)].to_vec();
        spliced.extend_from_slice(&bytes[12 + cfg_len(&bytes)..]);
        let err = read_checkpoint(&mut spliced.as_slice()).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");
    }
}
