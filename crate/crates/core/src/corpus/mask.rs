//! Masking for continued masked-language-model training.

use rand::seq::index::sample;

use crate::corpus::{is_reserved_id, Document, Vocab, MASK_ID};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// One masked sequence: the corrupted input plus (position, original id)
/// targets. Every target position holds `[MASK]` in the input and no target
/// id is a reserved token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedBatch {
    pub input_ids: Vec<u32>,
    pub targets: Vec<(usize, u32)>,
}

/// Masks `⌈rate·len⌉` positions chosen uniformly without replacement.
///
/// Replacement is mask-only (no random/keep corruption). Positions holding a
/// reserved id are ineligible; if fewer eligible positions exist than the
/// quota, all of them are masked.
pub fn mask_tokens(doc: &Document, vocab: &Vocab, rate: f64, seed: u64) -> Result<MaskedBatch> {
    if doc.tokens.is_empty() {
        return Err(Error::InvalidData(format!(
            "document {}: cannot mask an empty document",
            doc.id
        )));
    }
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidData(format!(
            "mask rate must lie in (0,1), got {rate}"
        )));
    }
    let ids = vocab.encode(doc);
    let eligible: Vec<usize> = (0..ids.len())
        .filter(|&i| !is_reserved_id(ids[i]))
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidData(format!(
            "document {}: no maskable tokens",
            doc.id
        )));
    }
    let quota = (rate * ids.len() as f64).ceil() as usize;
    let k = quota.min(eligible.len());
    let mut rng = seeded_rng(seed);
    let mut chosen: Vec<usize> = sample(&mut rng, eligible.len(), k)
        .into_iter()
        .map(|j| eligible[j])
        .collect();
    chosen.sort_unstable();

    let mut input_ids = ids;
    let mut targets = Vec::with_capacity(k);
    for pos in chosen {
        targets.push((pos, input_ids[pos]));
        input_ids[pos] = MASK_ID;
    }
    Ok(MaskedBatch { input_ids, targets })
}
