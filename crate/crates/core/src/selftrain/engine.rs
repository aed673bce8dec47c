//! The round engine: schedules task fitting, source fine-tuning, and the
//! soft/hard self-training rounds, maintaining the run directory, the
//! manifest, and the restore semantics.
//!
//! Restore rules per round: the student restarts from the base checkpoint's
//! encoder with freshly seeded voter heads; the teacher for round 1 is the
//! source-fine-tuned model and afterwards the previous round's hard-trained
//! student. Hard fine-tuning continues from the soft-trained student.

use std::fs;
use std::path::{Path, PathBuf};

use crate::corpus::{load_labeled, load_unlabeled, Document, LabeledExample, Vocab};
use crate::error::{Error, Result};
use crate::eval::{accuracy, Report};
use crate::model::{
    load_checkpoint, save_checkpoint, CheckpointMeta, ModelParams, Stage,
};
use crate::model::AdamHyper;
use crate::rng::derive_seed;
use crate::selftrain::config::{AlphaPolicy, PipelineConfig};
use crate::selftrain::manifest::{
    now_unix_ms, MetricRow, PhaseRecord, PhaseTiming, RemovalRecord, RoundAlpha, RoundSizes,
    RunManifest,
};
use crate::selftrain::policy::{
    filter_consistent_source, generate_pseudo_labels, predict_labels, predict_records,
};
use crate::selftrain::train::{distill_soft, finetune_hard, finetune_source, run_btf, TrainOpts};
use crate::thresholding::{default_min_recalled, select_alpha, threshold_curve};

/// Mutable state threaded through the self-training rounds.
pub struct RoundState {
    /// Post-task-fitting parameters: the restore point for every round.
    pub base: ModelParams,
    pub teacher: ModelParams,
    /// 1-based index of the next round.
    pub round: u32,
    /// Surviving labeled source set (consistency removal is permanent).
    pub source: Vec<LabeledExample>,
    /// α chosen in each completed round.
    pub alphas: Vec<f64>,
}

/// What a finished pipeline hands back.
#[derive(Debug)]
pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub manifest: RunManifest,
    pub final_test_accuracy: Option<f64>,
}

struct LoadedData {
    source: Vec<LabeledExample>,
    unlabeled: Vec<Document>,
    test: Option<Vec<LabeledExample>>,
    btf_src: Vec<Document>,
    btf_tgt: Vec<Document>,
}

fn load_data(cfg: &PipelineConfig) -> Result<LoadedData> {
    let source = match &cfg.train_source {
        Some(p) => load_labeled(Path::new(p), cfg.n_classes)?,
        None => Vec::new(),
    };
    let unlabeled = match &cfg.unlabeled_target {
        Some(p) => load_unlabeled(Path::new(p))?,
        None => Vec::new(),
    };
    let test = match &cfg.test_target {
        Some(p) => Some(load_labeled(Path::new(p), cfg.n_classes)?),
        None => None,
    };
    let (btf_src, btf_tgt) = match &cfg.btf_corpus {
        Some(p) => {
            let docs = load_unlabeled(Path::new(p))?;
            let mut src = Vec::new();
            let mut tgt = Vec::new();
            for d in docs {
                if d.lang == cfg.source_lang {
                    src.push(d);
                } else if d.lang == cfg.target_lang {
                    tgt.push(d);
                } else {
                    return Err(Error::InvalidData(format!(
                        "task-fitting corpus document {} has language {:?}, expected {:?} or {:?}",
                        d.id, d.lang, cfg.source_lang, cfg.target_lang
                    )));
                }
            }
            (src, tgt)
        }
        None => (Vec::new(), Vec::new()),
    };
    Ok(LoadedData {
        source,
        unlabeled,
        test,
        btf_src,
        btf_tgt,
    })
}

/// Validates the config and every configured data file without touching any
/// run directory or checkpoint; returns a human-readable summary.
pub fn dry_run(cfg: &PipelineConfig) -> Result<String> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let mut out = String::new();
    out.push_str(&format!("config hash      {}\n", cfg.hash()));
    out.push_str(&format!("labeled source   {}\n", data.source.len()));
    out.push_str(&format!("unlabeled target {}\n", data.unlabeled.len()));
    out.push_str(&format!(
        "target test      {}\n",
        data.test.as_ref().map(|t| t.len()).unwrap_or(0)
    ));
    out.push_str(&format!(
        "task-fitting     {} {} / {} {}\n",
        data.btf_src.len(),
        cfg.source_lang,
        data.btf_tgt.len(),
        cfg.target_lang
    ));
    out.push_str(&format!("schedule         {}\n", schedule_string(cfg.rounds)));
    Ok(out)
}

fn schedule_string(rounds: f64) -> String {
    let mut phases = Vec::new();
    for r in 1..=(rounds.floor() as u32) {
        phases.push(format!("soft{r}"));
        phases.push(format!("hard{r}"));
    }
    if rounds.fract() > 0.0 {
        phases.push(format!("soft{}", rounds.floor() as u32 + 1));
    }
    phases.join("-")
}

/// Exclusive lock on a run directory for the duration of a run.
struct RunLock {
    path: PathBuf,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<RunLock> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::InvalidData(
                format!("run directory {} is locked by another run", dir.display()),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

struct RunContext {
    cfg: PipelineConfig,
    run_dir: PathBuf,
    vocab: Vocab,
    manifest: RunManifest,
    test: Option<(Vec<Document>, Vec<usize>)>,
    _lock: RunLock,
}

impl RunContext {
    fn manifest_path(&self) -> PathBuf {
        self.run_dir.join("manifest.json")
    }

    fn flush(&self) -> Result<()> {
        self.manifest.write(&self.manifest_path())
    }

    fn time_phase(&mut self, name: &str, start_ms: u64) {
        self.manifest.timings.insert(
            name.to_string(),
            PhaseTiming {
                start_unix_ms: start_ms,
                end_unix_ms: now_unix_ms(),
            },
        );
    }

    fn record_phase(
        &mut self,
        name: &str,
        round: u32,
        params: &ModelParams,
        stage: Stage,
        file: &str,
        final_loss: Option<f64>,
    ) -> Result<()> {
        let meta = CheckpointMeta {
            stage,
            round,
            seed: self.cfg.seed,
            config_hash: self.manifest.config_hash.clone(),
            dims: params.dims,
        };
        save_checkpoint(params, &self.vocab, &meta, &self.run_dir.join(file))?;
        self.manifest.phases.push(PhaseRecord {
            name: name.to_string(),
            round,
            checkpoint: file.to_string(),
            final_loss,
        });
        Ok(())
    }

    fn record_test_metric(&mut self, phase: &str, round: u32, params: &ModelParams) -> Result<Option<f64>> {
        let Some((docs, golds)) = &self.test else {
            return Ok(None);
        };
        let preds = predict_labels(params, &self.vocab, docs)?;
        let value = accuracy(&preds, golds)?;
        self.manifest.metrics.push(MetricRow {
            phase: phase.to_string(),
            round,
            dataset: "target_test".into(),
            metric: "accuracy".into(),
            value,
        });
        Ok(Some(value))
    }

    fn warn(&mut self, msg: String) {
        eprintln!("warning: {msg}");
        self.manifest.warnings.push(msg);
    }

    fn opts(&self, kind: Phase, round: u32) -> TrainOpts {
        let cfg = &self.cfg;
        let hyper = AdamHyper {
            weight_decay: cfg.weight_decay,
            ..AdamHyper::default()
        };
        let (epochs, lr, freeze, tag) = match kind {
            Phase::Finetune => (
                cfg.finetune_epochs,
                cfg.finetune_lr,
                cfg.freeze_embeddings,
                "finetune".to_string(),
            ),
            Phase::Soft => (
                cfg.soft_epochs,
                cfg.soft_lr,
                cfg.freeze_embeddings,
                format!("soft-round-{round}"),
            ),
            Phase::Hard => (
                cfg.hard_epochs,
                cfg.hard_lr,
                cfg.freeze_embeddings,
                format!("hard-round-{round}"),
            ),
        };
        TrainOpts {
            epochs,
            lr,
            batch_size: cfg.batch_size,
            hyper,
            warmup: cfg.warmup,
            freeze_embeddings: freeze,
            seed: derive_seed(cfg.seed, &tag),
        }
    }
}

#[derive(Clone, Copy)]
enum Phase {
    Finetune,
    Soft,
    Hard,
}

fn prepare_run_dir(cfg: &PipelineConfig, run_dir: &Path) -> Result<RunLock> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let lock = RunLock::acquire(run_dir)?;
    let snapshot = run_dir.join("config.resolved");
    fs::write(&snapshot, cfg.render_flat()).map_err(|e| Error::io(&snapshot, e))?;
    Ok(lock)
}

/// Resolves the base model: an explicit checkpoint wins, then task fitting,
/// otherwise a fresh initialization. Returns the params, vocabulary, and
/// the final task-fitting loss when fitting ran.
fn resolve_base(
    cfg: &PipelineConfig,
    data: &LoadedData,
) -> Result<(ModelParams, Vocab, Option<f64>)> {
    if let Some(path) = &cfg.base_checkpoint {
        let (params, vocab, _meta) = load_checkpoint(Path::new(path))?;
        let expected = cfg.dims(vocab.len());
        if params.dims != expected {
            return Err(Error::InvalidConfig(format!(
                "base checkpoint dims {:?} do not match config dims {:?}",
                params.dims, expected
            )));
        }
        return Ok((params, vocab, None));
    }
    let vocab = Vocab::build(&[
        &data
            .source
            .iter()
            .map(|e| e.doc.clone())
            .collect::<Vec<_>>(),
        &data.unlabeled,
        &data.btf_src,
        &data.btf_tgt,
    ]);
    let mut params = ModelParams::init(cfg.dims(vocab.len()), derive_seed(cfg.seed, "init"))?;
    if !cfg.btf_enabled {
        return Ok((params, vocab, None));
    }
    let opts = TrainOpts {
        epochs: cfg.btf_epochs,
        lr: cfg.btf_lr,
        batch_size: cfg.batch_size,
        hyper: AdamHyper {
            weight_decay: cfg.weight_decay,
            ..AdamHyper::default()
        },
        warmup: cfg.warmup,
        freeze_embeddings: false,
        seed: derive_seed(cfg.seed, "btf"),
    };
    let losses = run_btf(
        &mut params,
        &vocab,
        &data.btf_src,
        &data.btf_tgt,
        cfg.mask_rate,
        &opts,
    )?;
    Ok((params, vocab, losses.last().copied()))
}

fn encode_labeled(vocab: &Vocab, data: &[LabeledExample]) -> Vec<(Vec<u32>, usize)> {
    data.iter()
        .map(|e| (vocab.encode(&e.doc), e.label))
        .collect()
}

/// Restores the student for a round: base encoder plus fresh voter heads.
/// The heads are re-seeded per round because the base checkpoint predates
/// any task head.
pub fn restore_student(base: &ModelParams, seed: u64, round: u32) -> ModelParams {
    let mut student = base.clone();
    student.reinit_voters(derive_seed(seed, &format!("voters-round-{round}")));
    student
}

/// One soft-distillation phase on the restored student.
fn soft_phase(
    ctx: &mut RunContext,
    state: &RoundState,
    unlabeled_ids: &[Vec<u32>],
    round: u32,
) -> Result<(ModelParams, Option<f64>)> {
    let start = now_unix_ms();
    let mut student = restore_student(&state.base, ctx.cfg.seed, round);
    let losses = distill_soft(
        &state.teacher,
        &mut student,
        unlabeled_ids,
        ctx.cfg.soft_target,
        &ctx.opts(Phase::Soft, round),
    )?;
    let file = format!("round{round}-soft.ckpt");
    ctx.record_phase("soft", round, &student, Stage::Soft, &file, losses.last().copied())?;
    ctx.record_test_metric("soft", round, &student)?;
    ctx.time_phase(&format!("round{round}-soft"), start);
    ctx.flush()?;
    Ok((student, losses.last().copied()))
}

/// One full round: soft distillation, α selection, pseudo-labeling plus
/// consistency filtering, and hard fine-tuning that continues from the
/// soft-trained student. The hard-trained student becomes the next teacher.
fn run_round(
    ctx: &mut RunContext,
    state: &mut RoundState,
    unlabeled_docs: &[Document],
    unlabeled_ids: &[Vec<u32>],
) -> Result<()> {
    let round = state.round;
    let (mut student, _) = soft_phase(ctx, state, unlabeled_ids, round)?;

    // α on labeled source records from the soft-trained student.
    let start = now_unix_ms();
    let (alpha, auto) = match ctx.cfg.alpha {
        AlphaPolicy::Fixed(a) => (a, false),
        AlphaPolicy::Auto => {
            let docs: Vec<Document> = state.source.iter().map(|e| e.doc.clone()).collect();
            let golds: Vec<usize> = state.source.iter().map(|e| e.label).collect();
            let records = predict_records(&student, &ctx.vocab, &docs, Some(&golds))?;
            // Thresholds below the confidence floor 1/C are vacuous (the
            // argmax probability can never be smaller), and the constant
            // curve segment they produce would fake a curvature maximum at
            // the floor. Selection runs on the informative part of the grid.
            let conf_floor = 1.0 / ctx.cfg.n_classes as f64;
            let informative: Vec<f64> = ctx
                .cfg
                .grid
                .iter()
                .copied()
                .filter(|t| *t >= conf_floor - 1e-12)
                .collect();
            let grid = if informative.len() >= 3 {
                informative
            } else {
                ctx.cfg.grid.clone()
            };
            let curve = threshold_curve(&records, &grid)?;
            let floor = ctx
                .cfg
                .min_recalled
                .unwrap_or_else(|| default_min_recalled(records.len()));
            (select_alpha(&curve, floor)?, true)
        }
    };
    state.alphas.push(alpha);
    ctx.manifest.alphas.push(RoundAlpha { round, alpha, auto });

    let pseudo = generate_pseudo_labels(&student, &ctx.vocab, unlabeled_docs, alpha)?;
    let outcome = filter_consistent_source(
        &student,
        &ctx.vocab,
        &state.source,
        alpha,
        ctx.cfg.consistency,
    )?;
    if pseudo.items.is_empty() && outcome.kept.is_empty() {
        return Err(Error::InvalidData(format!(
            "round {round}: no training data at α={alpha} \
             (0 pseudo-labels, 0 consistent source samples); the threshold is too high"
        )));
    }
    if pseudo.items.is_empty() {
        ctx.warn(format!(
            "round {round}: pseudo-label set is empty at α={alpha}; \
             continuing on consistent source data alone"
        ));
    }
    if outcome.kept.is_empty() {
        ctx.warn(format!(
            "round {round}: consistent source set is empty at α={alpha}; \
             continuing on pseudo-labeled data alone"
        ));
    }
    ctx.manifest.set_sizes.push(RoundSizes {
        round,
        pseudo_labeled: pseudo.items.len(),
        consistent_source: outcome.kept.len(),
        removed_source: outcome.removed_ids.len(),
    });
    ctx.manifest.removed_source_ids.push(RemovalRecord {
        round,
        ids: outcome.removed_ids,
    });
    state.source = outcome.kept;

    // Hard fine-tuning on consistent source ∪ pseudo-labeled target.
    let mut union = encode_labeled(&ctx.vocab, &state.source);
    union.extend(
        pseudo
            .items
            .iter()
            .map(|(doc, label)| (ctx.vocab.encode(doc), *label)),
    );
    let losses = finetune_hard(&mut student, &union, &ctx.opts(Phase::Hard, round))?;
    let file = format!("round{round}-hard.ckpt");
    ctx.record_phase("hard", round, &student, Stage::Hard, &file, losses.last().copied())?;
    ctx.record_test_metric("hard", round, &student)?;
    ctx.time_phase(&format!("round{round}-hard"), start);
    ctx.flush()?;

    state.teacher = student;
    state.round += 1;
    Ok(())
}

/// Runs the whole pipeline into `run_dir`: optional task fitting, source
/// fine-tuning, ⌊N⌋ full rounds, and a trailing soft phase when N ends in .5.
pub fn run_pipeline(cfg: &PipelineConfig, run_dir: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    if cfg.train_source.is_none() {
        return Err(Error::InvalidConfig("train_source is required".into()));
    }
    if cfg.unlabeled_target.is_none() {
        return Err(Error::InvalidConfig("unlabeled_target is required".into()));
    }
    let data = load_data(cfg)?;
    if data.source.is_empty() {
        return Err(Error::InvalidData("labeled source set is empty".into()));
    }
    if data.unlabeled.is_empty() {
        return Err(Error::InvalidData("unlabeled target set is empty".into()));
    }

    let lock = prepare_run_dir(cfg, run_dir)?;
    let start = now_unix_ms();
    let (base, vocab, btf_loss) = resolve_base(cfg, &data)?;
    let mut ctx = RunContext {
        cfg: cfg.clone(),
        run_dir: run_dir.to_path_buf(),
        vocab,
        manifest: RunManifest::new(cfg.hash(), cfg.seed),
        test: data.test.as_ref().map(|t| {
            (
                t.iter().map(|e| e.doc.clone()).collect(),
                t.iter().map(|e| e.label).collect(),
            )
        }),
        _lock: lock,
    };
    ctx.record_phase("base", 0, &base, Stage::Base, "base.ckpt", btf_loss)?;
    ctx.time_phase("base", start);
    ctx.flush()?;

    // Source fine-tuning produces the first teacher.
    let start = now_unix_ms();
    let mut teacher = base.clone();
    let source_encoded = encode_labeled(&ctx.vocab, &data.source);
    let losses = finetune_source(&mut teacher, &source_encoded, &ctx.opts(Phase::Finetune, 0))?;
    ctx.record_phase(
        "finetuned",
        0,
        &teacher,
        Stage::Finetuned,
        "finetuned.ckpt",
        losses.last().copied(),
    )?;
    ctx.record_test_metric("finetuned", 0, &teacher)?;
    ctx.time_phase("finetuned", start);
    ctx.flush()?;

    let unlabeled_ids: Vec<Vec<u32>> = data.unlabeled.iter().map(|d| ctx.vocab.encode(d)).collect();
    let mut state = RoundState {
        base,
        teacher,
        round: 1,
        source: data.source,
        alphas: Vec::new(),
    };

    let full_rounds = cfg.rounds.floor() as u32;
    for _ in 0..full_rounds {
        run_round(&mut ctx, &mut state, &data.unlabeled, &unlabeled_ids)?;
    }

    let (final_params, final_stage) = if cfg.rounds.fract() > 0.0 {
        let (student, _) = soft_phase(&mut ctx, &state, &unlabeled_ids, full_rounds + 1)?;
        (student, Stage::Soft)
    } else {
        (state.teacher.clone(), Stage::Hard)
    };

    // The final model is the last trained student.
    let meta = CheckpointMeta {
        stage: final_stage,
        round: state.round.saturating_sub(if cfg.rounds.fract() > 0.0 { 0 } else { 1 }),
        seed: cfg.seed,
        config_hash: ctx.manifest.config_hash.clone(),
        dims: final_params.dims,
    };
    let final_path = run_dir.join("final.ckpt");
    save_checkpoint(&final_params, &ctx.vocab, &meta, &final_path)?;
    let final_test_accuracy = ctx
        .manifest
        .metrics
        .iter()
        .rev()
        .find(|m| m.dataset == "target_test")
        .map(|m| m.value);

    let report = Report {
        rows: ctx.manifest.metrics.clone(),
    };
    let report_path = run_dir.join("report.csv");
    fs::write(&report_path, report.to_csv()).map_err(|e| Error::io(&report_path, e))?;
    ctx.flush()?;

    Ok(PipelineOutcome {
        run_dir: run_dir.to_path_buf(),
        final_checkpoint: final_path,
        manifest: ctx.manifest,
        final_test_accuracy,
    })
}

/// Runs only the task-fitting stage, producing the base checkpoint that a
/// later `selftrain` run consumes. Returns the checkpoint path.
pub fn run_btf_stage(cfg: &PipelineConfig, run_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    if cfg.btf_corpus.is_none() {
        return Err(Error::InvalidConfig("btf_corpus is required".into()));
    }
    let mut cfg = cfg.clone();
    cfg.btf_enabled = true;
    cfg.base_checkpoint = None;
    let data = load_data(&cfg)?;
    let lock = prepare_run_dir(&cfg, run_dir)?;
    let start = now_unix_ms();
    let (base, vocab, btf_loss) = resolve_base(&cfg, &data)?;
    let mut ctx = RunContext {
        cfg: cfg.clone(),
        run_dir: run_dir.to_path_buf(),
        vocab,
        manifest: RunManifest::new(cfg.hash(), cfg.seed),
        test: None,
        _lock: lock,
    };
    ctx.record_phase("base", 0, &base, Stage::Base, "base.ckpt", btf_loss)?;
    ctx.time_phase("base", start);
    ctx.flush()?;
    Ok(run_dir.join("base.ckpt"))
}

/// Runs only source fine-tuning, from the configured base checkpoint when
/// present or a fresh initialization otherwise. Returns the checkpoint path.
pub fn run_finetune_stage(cfg: &PipelineConfig, run_dir: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    if cfg.train_source.is_none() {
        return Err(Error::InvalidConfig("train_source is required".into()));
    }
    let mut cfg = cfg.clone();
    if cfg.base_checkpoint.is_none() {
        cfg.btf_enabled = false;
    }
    let data = load_data(&cfg)?;
    if data.source.is_empty() {
        return Err(Error::InvalidData("labeled source set is empty".into()));
    }
    let lock = prepare_run_dir(&cfg, run_dir)?;
    let start = now_unix_ms();
    let (base, vocab, _) = resolve_base(&cfg, &data)?;
    let mut ctx = RunContext {
        cfg: cfg.clone(),
        run_dir: run_dir.to_path_buf(),
        vocab,
        manifest: RunManifest::new(cfg.hash(), cfg.seed),
        test: data.test.as_ref().map(|t| {
            (
                t.iter().map(|e| e.doc.clone()).collect(),
                t.iter().map(|e| e.label).collect(),
            )
        }),
        _lock: lock,
    };
    ctx.record_phase("base", 0, &base, Stage::Base, "base.ckpt", None)?;
    let mut model = base;
    let source_encoded = encode_labeled(&ctx.vocab, &data.source);
    let losses = finetune_source(&mut model, &source_encoded, &ctx.opts(Phase::Finetune, 0))?;
    ctx.record_phase(
        "finetuned",
        0,
        &model,
        Stage::Finetuned,
        "finetuned.ckpt",
        losses.last().copied(),
    )?;
    ctx.record_test_metric("finetuned", 0, &model)?;
    ctx.time_phase("finetuned", start);
    let report = Report {
        rows: ctx.manifest.metrics.clone(),
    };
    let report_path = run_dir.join("report.csv");
    fs::write(&report_path, report.to_csv()).map_err(|e| Error::io(&report_path, e))?;
    ctx.flush()?;
    Ok(run_dir.join("finetuned.ckpt"))
}
