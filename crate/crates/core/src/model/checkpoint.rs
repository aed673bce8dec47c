//! Model checkpoints.
//!
//! Format: a JSON envelope
//! `{format_version, metadata, vocab, arrays, checksum}` where each array
//! carries its shape, dtype `"f64"` and base64 of the little-endian bytes.
//! The checksum is the hex SHA-256 of the canonically serialized `arrays`
//! section, so any bit flip in the data is detected on load. Round-trips
//! are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::model::math::Matrix;
use crate::model::{ModelDims, ModelParams, VoterNet};

pub const FORMAT_VERSION: u32 = 1;

/// Which stage of the pipeline produced the checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Base,
    Finetuned,
    Soft,
    Hard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub round: u32,
    pub seed: u64,
    pub config_hash: String,
    pub dims: ModelDims,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayRecord {
    shape: Vec<usize>,
    dtype: String,
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    metadata: CheckpointMeta,
    vocab: Vec<String>,
    arrays: BTreeMap<String, ArrayRecord>,
    checksum: String,
}

fn encode_array(shape: Vec<usize>, data: &[f64]) -> ArrayRecord {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    ArrayRecord {
        shape,
        dtype: "f64".into(),
        data: BASE64.encode(bytes),
    }
}

fn decode_array(name: &str, record: &ArrayRecord, expect: &[usize]) -> Result<Vec<f64>> {
    if record.dtype != "f64" {
        return Err(Error::Checkpoint(format!(
            "array {name}: unsupported dtype {:?}",
            record.dtype
        )));
    }
    if record.shape != expect {
        return Err(Error::Checkpoint(format!(
            "array {name}: shape {:?} does not match expected {expect:?}",
            record.shape
        )));
    }
    let bytes = BASE64
        .decode(&record.data)
        .map_err(|e| Error::Checkpoint(format!("array {name}: bad base64: {e}")))?;
    if bytes.len() % 8 != 0 || bytes.len() / 8 != expect.iter().product::<usize>() {
        return Err(Error::Checkpoint(format!(
            "array {name}: data length {} does not match shape {expect:?}",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn arrays_of(params: &ModelParams) -> BTreeMap<String, ArrayRecord> {
    let mut arrays = BTreeMap::new();
    arrays.insert(
        "embeddings".to_string(),
        encode_array(
            vec![params.embeddings.rows(), params.embeddings.cols()],
            params.embeddings.data(),
        ),
    );
    arrays.insert(
        "mlm_w".to_string(),
        encode_array(vec![params.mlm_w.rows(), params.mlm_w.cols()], params.mlm_w.data()),
    );
    arrays.insert(
        "mlm_b".to_string(),
        encode_array(vec![params.mlm_b.len()], &params.mlm_b),
    );
    for (i, v) in params.voters.iter().enumerate() {
        arrays.insert(
            format!("voter{i}.w1"),
            encode_array(vec![v.w1.rows(), v.w1.cols()], v.w1.data()),
        );
        arrays.insert(format!("voter{i}.b1"), encode_array(vec![v.b1.len()], &v.b1));
        arrays.insert(
            format!("voter{i}.w2"),
            encode_array(vec![v.w2.rows(), v.w2.cols()], v.w2.data()),
        );
        arrays.insert(format!("voter{i}.b2"), encode_array(vec![v.b2.len()], &v.b2));
    }
    arrays
}

fn checksum_of(arrays: &BTreeMap<String, ArrayRecord>) -> String {
    let canonical = serde_json::to_string(arrays).expect("in-memory serialization");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content digest of a parameter set, independent of any file. Two parameter
/// sets have equal digests iff every block is bit-identical.
pub fn params_digest(params: &ModelParams) -> String {
    let mut hasher = Sha256::new();
    for (name, block) in params.named_blocks() {
        hasher.update(name.as_bytes());
        for v in block {
            hasher.update(v.to_le_bytes());
        }
    }
    hex_string(&hasher.finalize())
}

pub fn save_checkpoint(
    params: &ModelParams,
    vocab: &Vocab,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    let arrays = arrays_of(params);
    let envelope = Envelope {
        format_version: FORMAT_VERSION,
        metadata: meta.clone(),
        vocab: vocab.tokens().to_vec(),
        checksum: checksum_of(&arrays),
        arrays,
    };
    let json = serde_json::to_string(&envelope).expect("in-memory serialization");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Vocab, CheckpointMeta)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let envelope: Envelope = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if envelope.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            envelope.format_version
        )));
    }
    if checksum_of(&envelope.arrays) != envelope.checksum {
        return Err(Error::Checkpoint(format!(
            "{}: checksum mismatch, file is corrupt",
            path.display()
        )));
    }

    let dims = envelope.metadata.dims;
    dims.validate()?;
    let vocab = Vocab::from_id_order(envelope.vocab)?;
    if vocab.len() != dims.vocab {
        return Err(Error::Checkpoint(format!(
            "vocab length {} does not match dims.vocab {}",
            vocab.len(),
            dims.vocab
        )));
    }

    let get = |name: &str, expect: &[usize]| -> Result<Vec<f64>> {
        let record = envelope
            .arrays
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
        decode_array(name, record, expect)
    };

    let embeddings = Matrix::from_vec(
        dims.vocab,
        dims.embed,
        get("embeddings", &[dims.vocab, dims.embed])?,
    );
    let mlm_w = Matrix::from_vec(dims.vocab, dims.embed, get("mlm_w", &[dims.vocab, dims.embed])?);
    let mlm_b = get("mlm_b", &[dims.vocab])?;
    let mut voters = Vec::with_capacity(dims.voters);
    for i in 0..dims.voters {
        let h = dims.hidden_of(i);
        voters.push(VoterNet {
            w1: Matrix::from_vec(h, dims.embed, get(&format!("voter{i}.w1"), &[h, dims.embed])?),
            b1: get(&format!("voter{i}.b1"), &[h])?,
            w2: Matrix::from_vec(dims.classes, h, get(&format!("voter{i}.w2"), &[dims.classes, h])?),
            b2: get(&format!("voter{i}.b2"), &[dims.classes])?,
        });
    }

    Ok((
        ModelParams {
            dims,
            embeddings,
            mlm_w,
            mlm_b,
            voters,
        },
        vocab,
        envelope.metadata,
    ))
}
