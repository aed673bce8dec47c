//! Temporary tuning probe; run manually with --ignored --nocapture.

use xlift::corpus::{generate_synthetic_task, write_synthetic_task, SynthSpec};
use xlift::selftrain::{run_pipeline, PipelineConfig};

fn task_dir(seed: u64) -> tempfile::TempDir {
    let mut spec = SynthSpec::new(seed);
    spec.signal_strength = 0.4;
    spec.class_confusion = 0.0;
    spec.doc_len = (3, 8);
    let task = generate_synthetic_task(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_task(&task, dir.path()).unwrap();
    dir
}

fn config_for(data_dir: &std::path::Path, seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.train_source = Some(data_dir.join("source_train.jsonl").display().to_string());
    cfg.unlabeled_target = Some(data_dir.join("target_unlabeled.jsonl").display().to_string());
    cfg.test_target = Some(data_dir.join("target_test.jsonl").display().to_string());
    cfg.btf_corpus = Some(data_dir.join("btf_corpus.jsonl").display().to_string());
    cfg.freeze_embeddings = false;
    cfg.finetune_epochs = 10;
    cfg.finetune_lr = 0.02;
    cfg.soft_epochs = 12;
    cfg.soft_lr = 0.025;
    cfg.hard_epochs = 8;
    cfg.hard_lr = 0.02;
    cfg.seed = seed;
    cfg
}

#[test]
#[ignore]
fn probe_variants() {
    let variants: Vec<(&str, Box<dyn Fn(&mut PipelineConfig)>)> = vec![
        ("A hard8/.02", Box::new(|_c: &mut PipelineConfig| {})),
        (
            "B hard5/.015",
            Box::new(|c: &mut PipelineConfig| {
                c.hard_epochs = 5;
                c.hard_lr = 0.015;
            }),
        ),
        (
            "C hard12/.03",
            Box::new(|c: &mut PipelineConfig| {
                c.hard_epochs = 12;
                c.hard_lr = 0.03;
            }),
        ),
        (
            "D soft16/.03",
            Box::new(|c: &mut PipelineConfig| {
                c.soft_epochs = 16;
                c.soft_lr = 0.03;
            }),
        ),
        (
            "E d=24",
            Box::new(|c: &mut PipelineConfig| {
                c.embed_dim = 24;
            }),
        ),
    ];
    for (name, tweak) in &variants {
        let mut gains = Vec::new();
        let mut monotone = 0;
        let mut lines = Vec::new();
        for seed in [1u64, 2, 3, 4, 5] {
            let data = task_dir(seed);
            let run = tempfile::tempdir().unwrap();
            let mut cfg = config_for(data.path(), seed);
            tweak(&mut cfg);
            let out = run_pipeline(&cfg, &run.path().join("r")).unwrap();
            let series: Vec<f64> = out.manifest.metrics.iter().map(|r| r.value).collect();
            let alpha = out.manifest.alphas[0].alpha;
            gains.push(series.last().unwrap() - series[0]);
            if series.windows(2).all(|w| w[1] >= w[0]) {
                monotone += 1;
            }
            lines.push(format!("  seed {seed}: {series:?} a={alpha}"));
        }
        let mean_gain = gains.iter().sum::<f64>() / gains.len() as f64;
        println!(
            "variant {name}: mean gain {:.4} min {:.4} monotone {monotone}/5",
            mean_gain,
            gains.iter().cloned().fold(f64::INFINITY, f64::min)
        );
        for l in lines {
            println!("{l}");
        }
    }
}
