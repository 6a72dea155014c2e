//! Checkpoint container: 8-byte magic, u32 little-endian header length, JSON
//! header (config, vocabulary hash, metadata, tensor directory), then the
//! tensor payloads as row-major little-endian f32 in directory order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::config::EncoderConfig;
use super::params::ParamSet;

const MAGIC: &[u8; 8] = b"RPCK0001";

/// Metadata carried alongside the tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointExtras {
    /// True when the banks were trained with relation-aware prompts; transfer
    /// strategies that derive qi tokens from the qq/qa banks require this.
    pub pretrained_relations: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneInfo>,
}

/// Fine-tuning provenance stored in a fine-tuned checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneInfo {
    pub strategy: String,
    pub classifier: String,
    pub selected_lr: f64,
    pub shots: usize,
    pub intent_names: Vec<String>,
}

/// Adam moments for every parameter slot, in slot order, plus the shared
/// step count.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub step: u64,
    pub moments: Vec<(Vec<f32>, Vec<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub vocab_hash: String,
    pub params: ParamSet<f32>,
    /// Named side tensors (strategy state, frozen encoder copies).
    pub extra: Vec<(String, Matrix<f32>)>,
    pub extras: CheckpointExtras,
    pub optimizer: Option<OptimizerSnapshot>,
}

impl Checkpoint {
    pub fn extra_tensor(&self, name: &str) -> Option<&Matrix<f32>> {
        self.extra.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: EncoderConfig,
    vocab_hash: String,
    extras: CheckpointExtras,
    optimizer_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

fn push_f32_le(out: &mut Vec<u8>, data: &[f32]) {
    for &x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let slots = ckpt.params.slots();
    if let Some(opt) = &ckpt.optimizer {
        if opt.moments.len() != slots.len() {
            return Err(Error::data(format!(
                "optimizer snapshot has {} moment pairs for {} parameter tensors",
                opt.moments.len(),
                slots.len()
            )));
        }
    }

    let mut tensors = Vec::new();
    for s in &slots {
        tensors.push(TensorEntry {
            name: format!("param.{}", s.name),
            rows: s.rows,
            cols: s.cols,
        });
    }
    for (name, m) in &ckpt.extra {
        tensors.push(TensorEntry {
            name: format!("extra.{name}"),
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if ckpt.optimizer.is_some() {
        for s in &slots {
            tensors.push(TensorEntry {
                name: format!("adam.m.{}", s.name),
                rows: s.rows,
                cols: s.cols,
            });
            tensors.push(TensorEntry {
                name: format!("adam.v.{}", s.name),
                rows: s.rows,
                cols: s.cols,
            });
        }
    }

    let header = Header {
        format_version: 1,
        config: ckpt.config.clone(),
        vocab_hash: ckpt.vocab_hash.clone(),
        extras: ckpt.extras.clone(),
        optimizer_step: ckpt.optimizer.as_ref().map(|o| o.step),
        tensors,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::data(format!("checkpoint header: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for s in &slots {
        push_f32_le(&mut out, s.data);
    }
    for (_, m) in &ckpt.extra {
        push_f32_le(&mut out, m.data());
    }
    if let Some(opt) = &ckpt.optimizer {
        for (m, v) in &opt.moments {
            push_f32_le(&mut out, m);
            push_f32_le(&mut out, v);
        }
    }
    std::fs::write(path, &out).map_err(|e| Error::io(path, e))
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a Path,
}

impl<'a> BlobReader<'a> {
    fn take_f32(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let need = n * 4;
        if self.offset + need > self.bytes.len() {
            return Err(Error::data(format!(
                "{}: truncated payload while reading {what}",
                self.path.display()
            )));
        }
        let out = self.bytes[self.offset..self.offset + need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        self.offset += need;
        Ok(out)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::data(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)".into()));
    }
    let header_len = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
    if 12 + header_len > bytes.len() {
        return Err(bad("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| bad(format!("invalid header: {e}")))?;
    if header.format_version != 1 {
        return Err(bad(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }
    header.config.validate()?;

    let mut params: ParamSet<f32> = ParamSet::zeros(&header.config);
    let mut reader = BlobReader {
        bytes: &bytes,
        offset: 12 + header_len,
        path,
    };

    let mut entries = header.tensors.iter();
    for slot in params.slots_mut() {
        let entry = entries
            .next()
            .ok_or_else(|| bad(format!("missing tensor param.{}", slot.name)))?;
        let expect = format!("param.{}", slot.name);
        if entry.name != expect || (entry.rows, entry.cols) != (slot.rows, slot.cols) {
            return Err(bad(format!(
                "tensor directory mismatch: found {} ({}x{}), expected {expect} ({}x{})",
                entry.name, entry.rows, entry.cols, slot.rows, slot.cols
            )));
        }
        let data = reader.take_f32(slot.rows * slot.cols, &entry.name)?;
        slot.data.copy_from_slice(&data);
    }

    let mut extra = Vec::new();
    let mut rest = entries.peekable();
    while let Some(entry) = rest.peek() {
        match entry.name.strip_prefix("extra.") {
            Some(name) => {
                let data = reader.take_f32(entry.rows * entry.cols, &entry.name)?;
                extra.push((
                    name.to_string(),
                    Matrix::from_vec(entry.rows, entry.cols, data),
                ));
                rest.next();
            }
            None => break,
        }
    }

    let optimizer = match header.optimizer_step {
        None => None,
        Some(step) => {
            let mut moments = Vec::new();
            for slot in params.slots() {
                let m_entry = rest
                    .next()
                    .ok_or_else(|| bad(format!("missing adam.m.{}", slot.name)))?;
                let v_entry = rest
                    .next()
                    .ok_or_else(|| bad(format!("missing adam.v.{}", slot.name)))?;
                if m_entry.name != format!("adam.m.{}", slot.name)
                    || v_entry.name != format!("adam.v.{}", slot.name)
                    || (m_entry.rows, m_entry.cols) != (slot.rows, slot.cols)
                    || (v_entry.rows, v_entry.cols) != (slot.rows, slot.cols)
                {
                    return Err(bad(format!(
                        "optimizer directory mismatch at {}",
                        slot.name
                    )));
                }
                let m = reader.take_f32(slot.rows * slot.cols, &m_entry.name)?;
                let v = reader.take_f32(slot.rows * slot.cols, &v_entry.name)?;
                moments.push((m, v));
            }
            Some(OptimizerSnapshot { step, moments })
        }
    };
    if let Some(entry) = rest.next() {
        return Err(bad(format!("unexpected tensor {}", entry.name)));
    }
    if reader.offset != bytes.len() {
        return Err(bad(format!(
            "{} trailing bytes after payload",
            bytes.len() - reader.offset
        )));
    }

    Ok(Checkpoint {
        config: header.config,
        vocab_hash: header.vocab_hash,
        params,
        extra,
        extras: header.extras,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Pcg32;

    fn tiny_config(tie: bool) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 16,
            hidden_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 12,
            max_len: 12,
            num_relation_tokens: 3,
            dropout_rate: 0.0,
            tie_mlm_weights: tie,
        }
    }

    fn sample_checkpoint(tie: bool, with_opt: bool) -> Checkpoint {
        let config = tiny_config(tie);
        let params: ParamSet<f32> = ParamSet::init(&config, 99);
        let mut rng = Pcg32::seeded(7);
        let mut frozen = Matrix::zeros(3, 8);
        for v in frozen.data_mut() {
            *v = rng.normal() as f32;
        }
        let optimizer = with_opt.then(|| OptimizerSnapshot {
            step: 42,
            moments: params
                .slots()
                .iter()
                .map(|s| {
                    let m: Vec<f32> = s.data.iter().map(|x| x * 0.5).collect();
                    let v: Vec<f32> = s.data.iter().map(|x| x * x).collect();
                    (m, v)
                })
                .collect(),
        });
        Checkpoint {
            config,
            vocab_hash: "ab12".repeat(16),
            params,
            extra: vec![("frozen.bank_qq".into(), frozen)],
            extras: CheckpointExtras {
                pretrained_relations: true,
                finetune: Some(FinetuneInfo {
                    strategy: "query_adapt".into(),
                    classifier: "prompt".into(),
                    selected_lr: 4e-5,
                    shots: 5,
                    intent_names: vec!["refund".into(), "shipping".into()],
                }),
            },
            optimizer,
        }
    }

    #[test]
    fn round_trip_preserves_everything_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        for (tie, with_opt) in [(true, true), (true, false), (false, true)] {
            let path = dir.path().join(format!("ck_{tie}_{with_opt}.bin"));
            let ckpt = sample_checkpoint(tie, with_opt);
            save_checkpoint(&path, &ckpt).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(loaded, ckpt);

            let path2 = dir.path().join("resave.bin");
            save_checkpoint(&path2, &loaded).unwrap();
            assert_eq!(
                std::fs::read(&path).unwrap(),
                std::fs::read(&path2).unwrap(),
                "resave must be byte-identical"
            );
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTMAGIC0000").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.bin");
        save_checkpoint(&path, &sample_checkpoint(true, false)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trail.bin");
        save_checkpoint(&path, &sample_checkpoint(true, false)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn shape_mismatch_against_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shape.bin");
        let mut ckpt = sample_checkpoint(true, false);
        save_checkpoint(&path, &ckpt).unwrap();
        // rewrite with a config that disagrees with the stored shapes
        ckpt.config.hidden_dim = 4;
        let bytes = std::fs::read(&path).unwrap();
        let header_len =
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize;
        let mut header: serde_json::Value =
            serde_json::from_slice(&bytes[12..12 + header_len]).unwrap();
        header["config"]["hidden_dim"] = serde_json::json!(4);
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(new_header.len() as u32).to_le_bytes());
        out.extend_from_slice(&new_header);
        out.extend_from_slice(&bytes[12 + header_len..]);
        std::fs::write(&path, &out).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("mismatch"), "{err}");
    }
}
