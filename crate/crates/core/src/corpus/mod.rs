//! Data ingestion: documents, labels, BIO tag sequences, vocabulary, and the
//! JSONL dataset format shared by every stage of the pipeline.
//!
//! JSONL records look like
//! `{"id": "a", "lang": "en", "tokens": ["good", "book"], "label": 1}`
//! with an optional `"tags"` array for BIO-annotated data. Tokens are
//! whitespace-pretokenized surface forms; no subword segmentation happens
//! anywhere.

mod entity;
mod mask;
mod resample;
mod synth;

pub use entity::{build_entity_corpus, extract_entity_surface_forms, read_translation_table};
pub use mask::{mask_tokens, MaskedBatch};
pub use resample::balanced_resample;
pub use synth::{generate_synthetic_task, write_synthetic_task, SynthSpec, SynthTask};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One unlabeled text: id, language tag, and whitespace-pretokenized tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub lang: String,
    pub tokens: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, lang: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let doc = Document {
            id: id.into(),
            lang: lang.into(),
            tokens,
        };
        if doc.tokens.is_empty() {
            return Err(Error::InvalidData(format!("document {}: empty tokens", doc.id)));
        }
        if doc.lang.is_empty() {
            return Err(Error::InvalidData(format!("document {}: empty lang", doc.id)));
        }
        Ok(doc)
    }
}

/// A document paired with a class label in `[0, C)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub doc: Document,
    pub label: usize,
}

/// A validated BIO tag sequence: every tag is `O`, `B-<type>` or `I-<type>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BioSequence {
    tags: Vec<String>,
}

/// The decomposition of a single BIO tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BioTag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

impl BioSequence {
    pub fn parse(tags: Vec<String>) -> Result<Self> {
        for tag in &tags {
            parse_bio_tag(tag)?;
        }
        Ok(BioSequence { tags })
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Iterates the parsed form of each tag.
    pub fn iter_tags(&self) -> impl Iterator<Item = BioTag<'_>> {
        self.tags
            .iter()
            .map(|t| parse_bio_tag(t).expect("validated at construction"))
    }
}

fn parse_bio_tag(tag: &str) -> Result<BioTag<'_>> {
    if tag == "O" {
        return Ok(BioTag::Outside);
    }
    if let Some(ty) = tag.strip_prefix("B-") {
        if !ty.is_empty() {
            return Ok(BioTag::Begin(ty));
        }
    }
    if let Some(ty) = tag.strip_prefix("I-") {
        if !ty.is_empty() {
            return Ok(BioTag::Inside(ty));
        }
    }
    Err(Error::InvalidData(format!("unparseable BIO tag {tag:?}")))
}

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const MASK_TOKEN: &str = "[MASK]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const MASK_ID: u32 = 2;

const RESERVED: [&str; 3] = [PAD_TOKEN, UNK_TOKEN, MASK_TOKEN];

/// Token-to-id map with the three reserved ids fixed at 0, 1, 2.
///
/// Regular tokens are assigned dense ids in lexicographic order after the
/// reserved block. A surface token equal to a reserved literal (e.g. a
/// document containing the string `[MASK]`) maps to the reserved id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, u32>,
    id_to_token: Vec<String>,
}

impl Vocab {
    /// Builds the union vocabulary over any number of corpora.
    pub fn build(corpora: &[&[Document]]) -> Vocab {
        let mut tokens: Vec<&str> = corpora
            .iter()
            .flat_map(|c| c.iter())
            .flat_map(|d| d.tokens.iter())
            .map(String::as_str)
            .filter(|t| !RESERVED.contains(t))
            .collect();
        tokens.sort_unstable();
        tokens.dedup();
        Vocab::from_regular_tokens(tokens.into_iter().map(str::to_owned))
    }

    /// Reconstructs a vocabulary from a checkpoint's full id-ordered token list.
    pub fn from_id_order(all_tokens: Vec<String>) -> Result<Vocab> {
        if all_tokens.len() < RESERVED.len()
            || all_tokens[..RESERVED.len()] != RESERVED.map(str::to_owned)
        {
            return Err(Error::InvalidData(
                "vocabulary must start with [PAD], [UNK], [MASK]".into(),
            ));
        }
        let mut token_to_id = BTreeMap::new();
        for (id, tok) in all_tokens.iter().enumerate() {
            if token_to_id.insert(tok.clone(), id as u32).is_some() {
                return Err(Error::InvalidData(format!("duplicate vocab token {tok:?}")));
            }
        }
        Ok(Vocab {
            token_to_id,
            id_to_token: all_tokens,
        })
    }

    fn from_regular_tokens(tokens: impl Iterator<Item = String>) -> Vocab {
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the reserved block is always present
    }

    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Encodes a document's tokens; unknown tokens map to `[UNK]`.
    pub fn encode(&self, doc: &Document) -> Vec<u32> {
        doc.tokens.iter().map(|t| self.id(t)).collect()
    }
}

pub fn is_reserved_id(id: u32) -> bool {
    id < RESERVED.len() as u32
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    lang: String,
    tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<Vec<String>>,
}

fn read_records(path: &Path) -> Result<Vec<(usize, RawRecord)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(line)
            .map_err(|e| Error::malformed(path, idx + 1, e.to_string()))?;
        if record.tokens.is_empty() {
            return Err(Error::malformed(path, idx + 1, "empty tokens"));
        }
        if record.lang.is_empty() {
            return Err(Error::malformed(path, idx + 1, "empty lang"));
        }
        out.push((idx + 1, record));
    }
    Ok(out)
}

/// Loads a classification dataset; every record must carry a label in
/// `[0, n_classes)`. Order is preserved; duplicate ids are accepted.
pub fn load_labeled(path: &Path, n_classes: usize) -> Result<Vec<LabeledExample>> {
    read_records(path)?
        .into_iter()
        .map(|(line, r)| {
            let label = r
                .label
                .ok_or_else(|| Error::malformed(path, line, "missing label"))?;
            if label < 0 || label as usize >= n_classes {
                return Err(Error::malformed(
                    path,
                    line,
                    format!("label {label} out of range for {n_classes} classes"),
                ));
            }
            Ok(LabeledExample {
                doc: Document {
                    id: r.id,
                    lang: r.lang,
                    tokens: r.tokens,
                },
                label: label as usize,
            })
        })
        .collect()
}

/// Loads a BIO-annotated dataset; tags must parse and align with tokens.
pub fn load_bio(path: &Path) -> Result<Vec<(Document, BioSequence)>> {
    read_records(path)?
        .into_iter()
        .map(|(line, r)| {
            let tags = r
                .tags
                .ok_or_else(|| Error::malformed(path, line, "missing tags"))?;
            if tags.len() != r.tokens.len() {
                return Err(Error::malformed(
                    path,
                    line,
                    format!("{} tags for {} tokens", tags.len(), r.tokens.len()),
                ));
            }
            let seq = BioSequence::parse(tags)
                .map_err(|e| Error::malformed(path, line, e.to_string()))?;
            Ok((
                Document {
                    id: r.id,
                    lang: r.lang,
                    tokens: r.tokens,
                },
                seq,
            ))
        })
        .collect()
}

/// Loads an unlabeled dataset; `label`/`tags` fields are ignored if present.
pub fn load_unlabeled(path: &Path) -> Result<Vec<Document>> {
    Ok(read_records(path)?
        .into_iter()
        .map(|(_, r)| Document {
            id: r.id,
            lang: r.lang,
            tokens: r.tokens,
        })
        .collect())
}

/// Writes documents as JSONL, one record per line, optionally with labels.
pub fn write_jsonl(path: &Path, docs: &[Document], labels: Option<&[usize]>) -> Result<()> {
    if let Some(labels) = labels {
        assert_eq!(labels.len(), docs.len(), "labels must align with docs");
    }
    let mut buf = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        let record = RawRecord {
            id: doc.id.clone(),
            lang: doc.lang.clone(),
            tokens: doc.tokens.clone(),
            label: labels.map(|l| l[i] as i64),
            tags: None,
        };
        serde_json::to_writer(&mut buf, &record).expect("in-memory serialization");
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}
