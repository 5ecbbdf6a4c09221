use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semctx::ingest::io::{load_dataset, save_dataset};
use semctx::network::{load_checkpoint, save_checkpoint, LabelSpace};
use semctx::{validate_dataset, ClassCatalog, Dataset, Error, LabelMap, LabeledImage, UNLABELED};

use semctx_cli::commands::{
    cmd_build_hierarchy, cmd_eval, cmd_gen_synth, cmd_infill, cmd_train, CHECKPOINT_FILE, CONFUSION_FILE, DELTA_FILE, FREQUENCY_FILE,
    HIERARCHY_FILE, INFILLED_DIR, METRICS_FILE, PREDICTIONS_DIR, REPORT_FILE,
};
use semctx_cli::config::{ExperimentConfig, HierarchyMode, Strategy};
use semctx_cli::synth::SynthSpec;
use semctx_cli::CliError;

/// Every file under `dir`, keyed by relative path.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn small_synth(root: &Path, seed: u64) -> ExperimentConfig {
    let spec = SynthSpec {
        seed,
        images: 16,
        ..SynthSpec::default()
    };
    cmd_gen_synth(&spec, 4, &root.join("data")).unwrap();
    let mut cfg = ExperimentConfig::new(seed, root.join("data/train"), root.join("out"));
    cfg.test_dataset = Some(root.join("data/test"));
    cfg.hierarchy_builder.roi = "33".into();
    cfg.train.patch_size = 32;
    cfg.train.batch_size = 8;
    cfg.train.lr0 = 0.02;
    cfg.train.baseline_iters = 20;
    cfg.train.sequential_iters = [5, 5, 5, 5];
    cfg.train.hierarchical_iters = [10, 10];
    cfg.train.report_interval = 1;
    cfg
}

/// Random pixels and independent, uniformly random labels.
fn noise_dataset(seed: u64, images: usize, size: usize, classes: u16, labelled: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let imgs = (0..images)
        .map(|i| {
            let labels = (0..size * size)
                .map(|_| if rng.gen_bool(labelled) { rng.gen_range(0..classes) } else { UNLABELED })
                .collect();
            let pixels = (0..size * size * 3).map(|_| rng.gen()).collect();
            LabeledImage::new(format!("n{i:02}"), size, size, pixels, LabelMap::new(size, size, labels).unwrap(), None).unwrap()
        })
        .collect();
    let names = (0..classes).map(|c| format!("c{c}")).collect();
    validate_dataset(imgs, ClassCatalog::from_names(names).unwrap()).unwrap()
}

#[test]
fn gen_synth_is_byte_identical_for_equal_seeds() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = SynthSpec {
        seed: 4,
        images: 6,
        ..SynthSpec::default()
    };
    cmd_gen_synth(&spec, 2, a.path()).unwrap();
    cmd_gen_synth(&spec, 2, b.path()).unwrap();
    cmd_gen_synth(&SynthSpec { seed: 5, ..spec }, 2, c.path()).unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));
    assert_ne!(tree(a.path()), tree(c.path()));
}

#[test]
fn build_hierarchy_writes_sorted_frequencies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synth(dir.path(), 1);
    let build = cmd_build_hierarchy(&cfg).unwrap();
    assert!(cfg.out.join(HIERARCHY_FILE).exists());
    let csv = fs::read_to_string(cfg.out.join(FREQUENCY_FILE)).unwrap();
    let counts: Vec<u64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(counts.len(), build.hierarchy.num_subclasses());
    assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(counts.iter().sum::<u64>() as usize, build.samples.len());
}

#[test]
fn scene_name_mode_needs_scene_names() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&dir.path().join("data"), &noise_dataset(2, 3, 24, 3, 1.0)).unwrap();
    let mut cfg = ExperimentConfig::new(2, dir.path().join("data"), dir.path().join("out"));
    cfg.hierarchy_builder.mode = HierarchyMode::SceneName;
    cfg.hierarchy_builder.pixels_per_cell = 16;
    let err = cmd_build_hierarchy(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Core(Error::MissingSceneName { .. })), "{err}");
    assert_eq!(err.exit_code(), std::process::ExitCode::from(2));
}

#[test]
fn scene_name_mode_on_synthetic_scenes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_synth(dir.path(), 3);
    cfg.hierarchy_builder.mode = HierarchyMode::SceneName;
    let build = cmd_build_hierarchy(&cfg).unwrap();
    // four common classes in two scenes each, plus the rare class
    assert_eq!(build.hierarchy.num_subclasses(), 9);
}

#[test]
fn baseline_trains_without_a_hierarchy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synth(dir.path(), 5);
    let t = cmd_train(&cfg).unwrap();
    assert_eq!(t.model.steps(), 20);
    assert!(cfg.out.join(CHECKPOINT_FILE).exists());
    assert!(!cfg.out.join(HIERARCHY_FILE).exists());
}

#[test]
fn subclass_strategies_need_the_hierarchy_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_synth(dir.path(), 6);
    cfg.train.strategy = Strategy::Sequential;
    assert!(matches!(cmd_train(&cfg), Err(CliError::Usage(_))));

    cmd_build_hierarchy(&cfg).unwrap();
    let t = cmd_train(&cfg).unwrap();
    assert_eq!(t.model.label_space(), LabelSpace::Class);
    assert!(t.model.hierarchy_id().is_some());
}

#[test]
fn hierarchical_report_has_both_loss_columns() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_synth(dir.path(), 7);
    cfg.train.strategy = Strategy::Hierarchical;
    cmd_build_hierarchy(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let csv = fs::read_to_string(cfg.out.join(REPORT_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "stage,iteration,lr,total,subclass_ce,class_ce");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| !r[4].is_empty() && !r[5].is_empty()));
}

#[test]
fn divergence_exits_numerically_and_keeps_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_synth(dir.path(), 8);
    cfg.train.lr0 = 1e8;
    let err = cmd_train(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), std::process::ExitCode::from(3), "{err}");
    assert!(fs::read_to_string(cfg.out.join(REPORT_FILE)).unwrap().lines().count() >= 2);
    assert!(!cfg.out.join(CHECKPOINT_FILE).exists());
}

#[test]
fn eval_is_repeatable_and_compares() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_synth(dir.path(), 9);
    cmd_train(&cfg).unwrap();
    let ckpt = cfg.out.join(CHECKPOINT_FILE);
    let first = cmd_eval(&cfg, &ckpt, None).unwrap();
    let metrics = fs::read(cfg.out.join(METRICS_FILE)).unwrap();
    let confusion = fs::read(cfg.out.join(CONFUSION_FILE)).unwrap();
    let second = cmd_eval(&cfg, &ckpt, Some(&ckpt)).unwrap();
    assert_eq!(first.accuracy, second.accuracy);
    assert_eq!(metrics, fs::read(cfg.out.join(METRICS_FILE)).unwrap());
    assert_eq!(confusion, fs::read(cfg.out.join(CONFUSION_FILE)).unwrap());
    assert_eq!(second.compared, Some(first.accuracy));
    // a checkpoint against itself changes nothing
    let delta = fs::read_to_string(cfg.out.join(DELTA_FILE)).unwrap();
    assert!(delta.lines().skip(1).all(|l| l.ends_with(",0")), "{delta}");
    assert_eq!(fs::read_dir(cfg.out.join(PREDICTIONS_DIR)).unwrap().count(), 4);
}

#[test]
fn replaced_head_scores_at_chance() {
    // Labels are independent of the pixels, so any fixed predictor hits each
    // pixel with probability 1/L; the count is binomial.
    let dir = tempfile::tempdir().unwrap();
    let classes = 4;
    save_dataset(&dir.path().join("data"), &noise_dataset(10, 12, 32, classes, 1.0)).unwrap();
    let mut cfg = ExperimentConfig::new(10, dir.path().join("data"), dir.path().join("out"));
    cfg.hierarchy_builder.pixels_per_cell = 16;
    cfg.train.patch_size = 32;
    cfg.train.baseline_iters = 5;
    cmd_train(&cfg).unwrap();

    let mut model = load_checkpoint(&cfg.out.join(CHECKPOINT_FILE)).unwrap();
    model.replace_head(classes as usize, LabelSpace::Class, 99).unwrap();
    let fresh = dir.path().join("fresh.json");
    save_checkpoint(&fresh, &model).unwrap();
    let e = cmd_eval(&cfg, &fresh, None).unwrap();
    let n = e.confusion.counted() as f64;
    let chance = 1.0 / classes as f64;
    assert!((e.accuracy.per_pixel - chance).abs() <= 3.0 / n.sqrt(), "{} vs {chance} over {n} pixels", e.accuracy.per_pixel);
}

#[test]
fn eval_rejects_a_checkpoint_for_another_catalog() {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&dir.path().join("three"), &noise_dataset(11, 4, 32, 3, 1.0)).unwrap();
    save_dataset(&dir.path().join("five"), &noise_dataset(12, 4, 32, 5, 1.0)).unwrap();
    let mut cfg = ExperimentConfig::new(11, dir.path().join("three"), dir.path().join("out"));
    cfg.hierarchy_builder.pixels_per_cell = 16;
    cfg.train.patch_size = 32;
    cfg.train.baseline_iters = 2;
    cmd_train(&cfg).unwrap();
    cfg.test_dataset = Some(dir.path().join("five"));
    let err = cmd_eval(&cfg, &cfg.out.join(CHECKPOINT_FILE), None).unwrap_err();
    assert!(matches!(err, CliError::Core(Error::CatalogMismatch { .. })), "{err}");
}

fn infill_run(labelled: f64) -> (Dataset, Dataset, Vec<String>) {
    let dir = tempfile::tempdir().unwrap();
    let ds = noise_dataset(13, 4, 32, 3, labelled);
    save_dataset(&dir.path().join("data"), &ds).unwrap();
    let mut cfg = ExperimentConfig::new(13, dir.path().join("data"), dir.path().join("out"));
    cfg.hierarchy_builder.pixels_per_cell = 16;
    cfg.train.patch_size = 32;
    cfg.train.baseline_iters = 3;
    cmd_train(&cfg).unwrap();
    let filled = cmd_infill(&cfg, &cfg.out.join(CHECKPOINT_FILE)).unwrap();
    let after = load_dataset(&cfg.out.join(INFILLED_DIR)).unwrap();
    (load_dataset(&cfg.dataset).unwrap(), after, filled)
}

#[test]
fn infill_leaves_fully_labelled_data_alone() {
    let (before, after, filled) = infill_run(1.0);
    assert!(filled.is_empty());
    for (a, b) in before.images().iter().zip(after.images()) {
        assert_eq!(a, b);
    }
}

#[test]
fn infill_completes_half_labelled_data() {
    let (before, after, filled) = infill_run(0.5);
    assert_eq!(filled.len(), before.len());
    for (a, b) in before.images().iter().zip(after.images()) {
        assert_eq!(b.labels().labeled_fraction(), 1.0);
        assert_eq!(a.pixels(), b.pixels());
        for (x, y) in a.labels().as_slice().iter().zip(b.labels().as_slice()) {
            assert!(*x == UNLABELED || x == y);
        }
    }
}
