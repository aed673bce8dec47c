//! Entity-driven corpus construction for the task-fitting stage.
//!
//! Entities found in the annotated source data are translated through a
//! user-supplied table, and target-language sentences containing any
//! translated entity are collected as task-related unlabeled text.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::corpus::{BioSequence, BioTag, Document};
use crate::error::{Error, Result};

/// Collects the surface forms of all annotated entities.
///
/// Each maximal `B-X (I-X)*` span contributes its space-joined tokens; an
/// `I-` tag without a compatible open span does not start one here (this is
/// extraction, not scoring repair). Duplicates collapse.
pub fn extract_entity_surface_forms(
    data: &[(Document, BioSequence)],
) -> Result<BTreeSet<String>> {
    let mut forms = BTreeSet::new();
    for (doc, seq) in data {
        if doc.tokens.len() != seq.len() {
            return Err(Error::InvalidData(format!(
                "document {}: {} tags for {} tokens",
                doc.id,
                seq.len(),
                doc.tokens.len()
            )));
        }
        let mut open: Option<(String, usize)> = None;
        for (i, tag) in seq.iter_tags().enumerate() {
            match tag {
                BioTag::Begin(ty) => {
                    if let Some((_, start)) = open.take() {
                        forms.insert(doc.tokens[start..i].join(" "));
                    }
                    open = Some((ty.to_string(), i));
                }
                BioTag::Inside(ty) => match &open {
                    Some((open_ty, _)) if open_ty == ty => {}
                    _ => {
                        // Orphan I- closes whatever was open and is skipped.
                        if let Some((_, start)) = open.take() {
                            forms.insert(doc.tokens[start..i].join(" "));
                        }
                    }
                },
                BioTag::Outside => {
                    if let Some((_, start)) = open.take() {
                        forms.insert(doc.tokens[start..i].join(" "));
                    }
                }
            }
        }
        if let Some((_, start)) = open {
            forms.insert(doc.tokens[start..].join(" "));
        }
    }
    Ok(forms)
}

/// Reads a two-column TSV translation table (source form, target form).
pub fn read_translation_table(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.splitn(2, '\t');
        let (src, tgt) = match (cols.next(), cols.next()) {
            (Some(s), Some(t)) if !s.is_empty() && !t.is_empty() => (s, t),
            _ => {
                return Err(Error::malformed(
                    path,
                    idx + 1,
                    "expected two tab-separated columns",
                ))
            }
        };
        table.insert(src.to_string(), tgt.to_string());
    }
    Ok(table)
}

/// Selects target-language documents that contain a translated entity as a
/// contiguous, case-sensitive token subsequence. At most `cap` documents are
/// returned in first-match order. Entities missing from the table are
/// skipped; an empty result is allowed.
pub fn build_entity_corpus(
    entities: &BTreeSet<String>,
    translation_table: &BTreeMap<String, String>,
    target_corpus: &[Document],
    cap: usize,
) -> Vec<Document> {
    let patterns: Vec<Vec<&str>> = entities
        .iter()
        .filter_map(|e| translation_table.get(e))
        .map(|t| t.split_whitespace().collect::<Vec<_>>())
        .filter(|p| !p.is_empty())
        .collect();
    if patterns.is_empty() || cap == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for doc in target_corpus {
        if patterns.iter().any(|p| contains_subsequence(&doc.tokens, p)) {
            out.push(doc.clone());
            if out.len() == cap {
                break;
            }
        }
    }
    out
}

fn contains_subsequence(tokens: &[String], pattern: &[&str]) -> bool {
    if pattern.len() > tokens.len() {
        return false;
    }
    tokens
        .windows(pattern.len())
        .any(|w| w.iter().zip(pattern).all(|(a, b)| a == b))
}
