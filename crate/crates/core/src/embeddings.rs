//! Embedding dumps: a JSON header line, then one binary row per video
//! (`video_id: u64`, `class_id: u32`, `D x f32`, all little-endian), then the
//! `K x D` class text embeddings as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpHeader {
    pub count: usize,
    pub dim: usize,
    pub class_names: Vec<String>,
    pub checkpoint_hash: String,
    pub config_hash: String,
    pub seed: u64,
    pub text_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    pub header: DumpHeader,
    pub video_ids: Vec<u64>,
    pub class_ids: Vec<u32>,
    pub embeddings: Vec<Vec<f32>>,
    pub text_embeddings: Vec<Vec<f32>>,
}

fn integrity(msg: impl Into<String>) -> Error {
    Error::Integrity(msg.into())
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(integrity("embedding dump is truncated"));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

fn read_f32s(buf: &mut &[u8], n: usize) -> Result<Vec<f32>> {
    Ok(take(buf, n * 4)?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

impl EmbeddingDump {
    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        let n = self.embeddings.len();
        if h.count != n || self.video_ids.len() != n || self.class_ids.len() != n {
            return Err(Error::data("row count differs from header count"));
        }
        if self.text_embeddings.len() != h.text_rows {
            return Err(Error::data("text row count differs from header"));
        }
        if self.embeddings.iter().chain(&self.text_embeddings).any(|r| r.len() != h.dim) {
            return Err(Error::data("row width differs from header dim"));
        }
        if self.class_ids.iter().any(|&c| c as usize >= h.class_names.len()) {
            return Err(Error::data("class id outside the header's class list"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = serde_json::to_vec(&self.header)?;
        out.push(b'\n');
        for i in 0..self.header.count {
            out.extend_from_slice(&self.video_ids[i].to_le_bytes());
            out.extend_from_slice(&self.class_ids[i].to_le_bytes());
            for v in &self.embeddings[i] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for row in &self.text_embeddings {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| integrity("embedding dump header missing"))?;
        let header: DumpHeader =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| integrity(format!("embedding dump header: {e}")))?;
        let mut buf = &bytes[nl + 1..];
        let (mut video_ids, mut class_ids, mut embeddings) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..header.count {
            video_ids.push(u64::from_le_bytes(take(&mut buf, 8)?.try_into().expect("8 bytes")));
            class_ids.push(u32::from_le_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes")));
            embeddings.push(read_f32s(&mut buf, header.dim)?);
        }
        let text_embeddings = (0..header.text_rows)
            .map(|_| read_f32s(&mut buf, header.dim))
            .collect::<Result<_>>()?;
        if !buf.is_empty() {
            return Err(integrity("trailing bytes after the embedding dump"));
        }
        let dump = Self {
            header,
            video_ids,
            class_ids,
            embeddings,
            text_embeddings,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
