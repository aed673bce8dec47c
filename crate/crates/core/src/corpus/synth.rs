//! Synthetic bilingual classification tasks.
//!
//! Two disjoint vocabularies are related by a hidden 1:1 dictionary. Each
//! class owns a block of signal tokens; documents mix signal and noise
//! tokens and the label is the class whose signal dominates. The unlabeled
//! bilingual corpus used for task fitting contains a fraction of
//! code-switched tokens (a token replaced by its dictionary counterpart),
//! standing in for the shared entity anchors that tie languages together in
//! real corpora — without them nothing at this scale could align the two
//! embedding spaces.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{write_jsonl, Document, LabeledExample};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

/// Parameters of a generated task.
#[derive(Clone, Debug)]
pub struct SynthSpec {
    /// Tokens per language.
    pub vocab_per_lang: usize,
    pub n_classes: usize,
    pub n_labeled_src: usize,
    pub n_unlabeled_tgt: usize,
    pub n_test_tgt: usize,
    /// Size of the unlabeled bilingual task-fitting corpus.
    pub n_btf: usize,
    /// Probability that a sampled token is a class-signal token, in (0, 1].
    pub signal_strength: f64,
    /// Fraction of documents whose signal tokens form a near-tie between the
    /// label and a rival class (majority of exactly one). Near-tie documents
    /// are genuinely ambiguous, which keeps model confidences informative.
    pub class_confusion: f64,
    /// Signal tokens owned by each class.
    pub signal_per_class: usize,
    /// Inclusive document length range.
    pub doc_len: (usize, usize),
    /// Per-token probability of code-switching inside the bilingual corpus.
    pub anchor_rate: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// A small default task; fields are public and meant to be adjusted.
    pub fn new(seed: u64) -> Self {
        SynthSpec {
            vocab_per_lang: 200,
            n_classes: 2,
            n_labeled_src: 500,
            n_unlabeled_tgt: 2000,
            n_test_tgt: 500,
            n_btf: 2000,
            signal_strength: 0.6,
            class_confusion: 0.3,
            signal_per_class: 25,
            doc_len: (6, 12),
            anchor_rate: 0.35,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_per_lang", self.vocab_per_lang),
            ("n_classes", self.n_classes),
            ("n_labeled_src", self.n_labeled_src),
            ("n_unlabeled_tgt", self.n_unlabeled_tgt),
            ("n_test_tgt", self.n_test_tgt),
            ("n_btf", self.n_btf),
            ("signal_per_class", self.signal_per_class),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidData(format!("synthetic spec: {name} must be > 0")));
            }
        }
        if !(self.signal_strength > 0.0 && self.signal_strength <= 1.0) {
            return Err(Error::InvalidData(format!(
                "synthetic spec: signal strength must lie in (0,1], got {}",
                self.signal_strength
            )));
        }
        if !(0.0..0.5).contains(&self.class_confusion) {
            return Err(Error::InvalidData(format!(
                "synthetic spec: class confusion must lie in [0,0.5), got {}",
                self.class_confusion
            )));
        }
        if self.n_classes * self.signal_per_class > self.vocab_per_lang {
            return Err(Error::InvalidData(
                "synthetic spec: signal tokens exceed the per-language vocabulary".into(),
            ));
        }
        if self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return Err(Error::InvalidData(format!(
                "synthetic spec: bad document length range {:?}",
                self.doc_len
            )));
        }
        if !(0.0..=1.0).contains(&self.anchor_rate) {
            return Err(Error::InvalidData(format!(
                "synthetic spec: anchor rate must lie in [0,1], got {}",
                self.anchor_rate
            )));
        }
        Ok(())
    }
}

/// A generated task: the four datasets plus the hidden dictionary.
#[derive(Clone, Debug)]
pub struct SynthTask {
    pub labeled_src: Vec<LabeledExample>,
    pub unlabeled_tgt: Vec<Document>,
    pub test_tgt: Vec<LabeledExample>,
    pub btf_corpus: Vec<Document>,
    /// (source token, target token) pairs covering the whole vocabulary.
    pub dictionary: Vec<(String, String)>,
}

struct TokenTables {
    src: Vec<String>,
    tgt: Vec<String>,
    /// tgt index for each src index.
    src_to_tgt: Vec<usize>,
    /// Per class, the src vocabulary indices of its signal tokens.
    signal: Vec<Vec<usize>>,
    noise: Vec<usize>,
}

impl TokenTables {
    fn build(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> TokenTables {
        let v = spec.vocab_per_lang;
        let width = (v as f64).log10().ceil().max(3.0) as usize;
        let src: Vec<String> = (0..v).map(|i| format!("src_{i:0width$}")).collect();
        let tgt: Vec<String> = (0..v).map(|i| format!("tgt_{i:0width$}")).collect();
        let mut src_to_tgt: Vec<usize> = (0..v).collect();
        src_to_tgt.shuffle(rng);
        let signal: Vec<Vec<usize>> = (0..spec.n_classes)
            .map(|c| (c * spec.signal_per_class..(c + 1) * spec.signal_per_class).collect())
            .collect();
        let noise: Vec<usize> = (spec.n_classes * spec.signal_per_class..v).collect();
        TokenTables {
            src,
            tgt,
            src_to_tgt,
            signal,
            noise,
        }
    }

    fn token(&self, lang: Lang, src_index: usize) -> &str {
        match lang {
            Lang::Src => &self.src[src_index],
            Lang::Tgt => &self.tgt[self.src_to_tgt[src_index]],
        }
    }

    fn translated(&self, lang: Lang, src_index: usize) -> &str {
        self.token(lang.other(), src_index)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Lang {
    Src,
    Tgt,
}

impl Lang {
    fn tag(self) -> &'static str {
        match self {
            Lang::Src => "src",
            Lang::Tgt => "tgt",
        }
    }

    fn other(self) -> Lang {
        match self {
            Lang::Src => Lang::Tgt,
            Lang::Tgt => Lang::Src,
        }
    }
}

/// Samples a document for class `label` as src-vocabulary indices.
///
/// The number of signal tokens follows per-token Bernoulli(signal_strength)
/// draws with a floor of one. A clean document draws every signal token from
/// the label's set; a near-tie document (probability `class_confusion`)
/// splits an odd number of signal tokens `k+1` vs `k` between the label and
/// one rival class. Labels are therefore always the strict signal majority.
fn sample_indices(spec: &SynthSpec, tables: &TokenTables, label: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let len = rng.gen_range(spec.doc_len.0..=spec.doc_len.1);
    let ambiguous = spec.n_classes > 1 && rng.gen_range(0.0..1.0) < spec.class_confusion;
    let mut n_signal = (0..len)
        .filter(|_| tables.noise.is_empty() || rng.gen_range(0.0..1.0) < spec.signal_strength)
        .count()
        .max(1);
    if ambiguous {
        // A majority of exactly one needs an odd count of at least three.
        n_signal = n_signal.clamp(3, len.max(3));
        if n_signal % 2 == 0 {
            n_signal -= 1;
        }
    }
    n_signal = n_signal.min(len);

    let mut class_of_slot = vec![label; n_signal];
    if ambiguous && n_signal >= 3 {
        let rival = {
            let r = rng.gen_range(0..spec.n_classes - 1);
            if r >= label {
                r + 1
            } else {
                r
            }
        };
        for slot in class_of_slot.iter_mut().take(n_signal / 2) {
            *slot = rival;
        }
    }

    let mut indices: Vec<usize> = class_of_slot
        .iter()
        .map(|&class| {
            let signal = &tables.signal[class];
            signal[rng.gen_range(0..signal.len())]
        })
        .collect();
    indices.extend(
        (n_signal..len).map(|_| tables.noise[rng.gen_range(0..tables.noise.len())]),
    );
    indices.shuffle(rng);
    indices
}

fn render(tables: &TokenTables, lang: Lang, indices: &[usize]) -> Vec<String> {
    indices.iter().map(|&i| tables.token(lang, i).to_string()).collect()
}

/// Generates the task deterministically from the spec and its seed.
pub fn generate_synthetic_task(spec: &SynthSpec) -> Result<SynthTask> {
    spec.validate()?;
    let mut table_rng = seeded_rng(derive_seed(spec.seed, "synth-tables"));
    let tables = TokenTables::build(spec, &mut table_rng);

    let mut rng = seeded_rng(derive_seed(spec.seed, "synth-docs"));
    let mut labeled_src = Vec::with_capacity(spec.n_labeled_src);
    for i in 0..spec.n_labeled_src {
        let label = i % spec.n_classes;
        let indices = sample_indices(spec, &tables, label, &mut rng);
        labeled_src.push(LabeledExample {
            doc: Document::new(
                format!("src-train-{i:05}"),
                Lang::Src.tag(),
                render(&tables, Lang::Src, &indices),
            )?,
            label,
        });
    }

    let mut unlabeled_tgt = Vec::with_capacity(spec.n_unlabeled_tgt);
    for i in 0..spec.n_unlabeled_tgt {
        let label = rng.gen_range(0..spec.n_classes);
        let indices = sample_indices(spec, &tables, label, &mut rng);
        unlabeled_tgt.push(Document::new(
            format!("tgt-unlab-{i:05}"),
            Lang::Tgt.tag(),
            render(&tables, Lang::Tgt, &indices),
        )?);
    }

    let mut test_tgt = Vec::with_capacity(spec.n_test_tgt);
    for i in 0..spec.n_test_tgt {
        let label = i % spec.n_classes;
        let indices = sample_indices(spec, &tables, label, &mut rng);
        test_tgt.push(LabeledExample {
            doc: Document::new(
                format!("tgt-test-{i:05}"),
                Lang::Tgt.tag(),
                render(&tables, Lang::Tgt, &indices),
            )?,
            label,
        });
    }

    let mut btf_corpus = Vec::with_capacity(spec.n_btf);
    for i in 0..spec.n_btf {
        let label = rng.gen_range(0..spec.n_classes);
        let lang = if i % 2 == 0 { Lang::Src } else { Lang::Tgt };
        let indices = sample_indices(spec, &tables, label, &mut rng);
        let tokens = indices
            .iter()
            .map(|&idx| {
                if rng.gen_range(0.0..1.0) < spec.anchor_rate {
                    tables.translated(lang, idx).to_string()
                } else {
                    tables.token(lang, idx).to_string()
                }
            })
            .collect();
        btf_corpus.push(Document::new(format!("btf-{i:05}"), lang.tag(), tokens)?);
    }

    let dictionary = (0..spec.vocab_per_lang)
        .map(|i| (tables.src[i].clone(), tables.tgt[tables.src_to_tgt[i]].clone()))
        .collect();

    Ok(SynthTask {
        labeled_src,
        unlabeled_tgt,
        test_tgt,
        btf_corpus,
        dictionary,
    })
}

/// Writes the four datasets plus `dictionary.tsv` into `dir`.
pub fn write_synthetic_task(task: &SynthTask, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (docs, labels): (Vec<Document>, Vec<usize>) = task
        .labeled_src
        .iter()
        .map(|e| (e.doc.clone(), e.label))
        .unzip();
    write_jsonl(&dir.join("source_train.jsonl"), &docs, Some(&labels))?;
    write_jsonl(&dir.join("target_unlabeled.jsonl"), &task.unlabeled_tgt, None)?;
    let (docs, labels): (Vec<Document>, Vec<usize>) = task
        .test_tgt
        .iter()
        .map(|e| (e.doc.clone(), e.label))
        .unzip();
    write_jsonl(&dir.join("target_test.jsonl"), &docs, Some(&labels))?;
    write_jsonl(&dir.join("btf_corpus.jsonl"), &task.btf_corpus, None)?;

    let path = dir.join("dictionary.tsv");
    let mut buf = String::new();
    for (s, t) in &task.dictionary {
        buf.push_str(s);
        buf.push('\t');
        buf.push_str(t);
        buf.push('\n');
    }
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    #[test]
    fn respects_requested_sizes() {
        let mut spec = SynthSpec::new(3);
        spec.vocab_per_lang = 40;
        spec.signal_per_class = 8;
        spec.n_labeled_src = 17;
        spec.n_unlabeled_tgt = 9;
        spec.n_test_tgt = 5;
        spec.n_btf = 11;
        let task = generate_synthetic_task(&spec).unwrap();
        assert_eq!(task.labeled_src.len(), 17);
        assert_eq!(task.unlabeled_tgt.len(), 9);
        assert_eq!(task.test_tgt.len(), 5);
        assert_eq!(task.btf_corpus.len(), 11);
        assert_eq!(task.dictionary.len(), 40);
    }

    #[test]
    fn single_labeled_example_is_emitted() {
        let mut spec = SynthSpec::new(1);
        spec.vocab_per_lang = 20;
        spec.signal_per_class = 4;
        spec.n_labeled_src = 1;
        spec.n_unlabeled_tgt = 1;
        spec.n_test_tgt = 1;
        spec.n_btf = 1;
        let task = generate_synthetic_task(&spec).unwrap();
        assert_eq!(task.labeled_src.len(), 1);
    }

    #[test]
    fn vocabularies_are_disjoint_and_dictionary_is_a_bijection() {
        let mut spec = SynthSpec::new(5);
        spec.vocab_per_lang = 30;
        spec.signal_per_class = 5;
        let task = generate_synthetic_task(&spec).unwrap();
        let src: BTreeSet<_> = task.dictionary.iter().map(|(s, _)| s.clone()).collect();
        let tgt: BTreeSet<_> = task.dictionary.iter().map(|(_, t)| t.clone()).collect();
        assert_eq!(src.len(), 30);
        assert_eq!(tgt.len(), 30);
        assert!(src.is_disjoint(&tgt));
        for e in &task.labeled_src {
            for tok in &e.doc.tokens {
                assert!(src.contains(tok));
            }
        }
        for d in &task.unlabeled_tgt {
            for tok in &d.tokens {
                assert!(tgt.contains(tok));
            }
        }
    }

    #[test]
    fn labels_follow_majority_signal() {
        let mut spec = SynthSpec::new(11);
        spec.vocab_per_lang = 60;
        spec.signal_per_class = 10;
        spec.n_classes = 3;
        let task = generate_synthetic_task(&spec).unwrap();
        // Recover each class's signal set from the generator's layout.
        let dict: BTreeMap<&str, &str> = task
            .dictionary
            .iter()
            .map(|(s, t)| (s.as_str(), t.as_str()))
            .collect();
        let class_of = |src_tok: &str| -> Option<usize> {
            let idx: usize = src_tok[4..].parse().unwrap();
            if idx < 30 {
                Some(idx / 10)
            } else {
                None
            }
        };
        for e in &task.labeled_src {
            let mut counts = [0usize; 3];
            for tok in &e.doc.tokens {
                if let Some(c) = class_of(tok) {
                    counts[c] += 1;
                }
            }
            let max = *counts.iter().max().unwrap();
            assert!(counts[e.label] == max && max > 0);
            assert_eq!(counts.iter().filter(|&&c| c == max).count(), 1);
        }
        // Same property for target test docs via the inverse dictionary.
        let inv: BTreeMap<&str, &str> = dict.iter().map(|(s, t)| (*t, *s)).collect();
        for e in &task.test_tgt {
            let mut counts = [0usize; 3];
            for tok in &e.doc.tokens {
                if let Some(c) = class_of(inv[tok.as_str()]) {
                    counts[c] += 1;
                }
            }
            assert!(counts[e.label] == *counts.iter().max().unwrap());
        }
    }

    #[test]
    fn byte_identical_files_for_identical_spec_and_seed() {
        let mut spec = SynthSpec::new(21);
        spec.vocab_per_lang = 30;
        spec.signal_per_class = 5;
        spec.n_labeled_src = 20;
        spec.n_unlabeled_tgt = 20;
        spec.n_test_tgt = 10;
        spec.n_btf = 20;
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        write_synthetic_task(&generate_synthetic_task(&spec).unwrap(), dir_a.path()).unwrap();
        write_synthetic_task(&generate_synthetic_task(&spec).unwrap(), dir_b.path()).unwrap();
        for name in [
            "source_train.jsonl",
            "target_unlabeled.jsonl",
            "target_test.jsonl",
            "btf_corpus.jsonl",
            "dictionary.tsv",
        ] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = SynthSpec::new(1);
        spec.signal_strength = 0.0;
        assert!(generate_synthetic_task(&spec).is_err());
        let mut spec = SynthSpec::new(1);
        spec.signal_strength = 1.2;
        assert!(generate_synthetic_task(&spec).is_err());
        let mut spec = SynthSpec::new(1);
        spec.n_labeled_src = 0;
        assert!(generate_synthetic_task(&spec).is_err());
        let mut spec = SynthSpec::new(1);
        spec.vocab_per_lang = 10;
        spec.signal_per_class = 6;
        assert!(generate_synthetic_task(&spec).is_err());
    }
}
