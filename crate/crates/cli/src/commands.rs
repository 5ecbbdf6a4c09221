//! The subcommands, callable as library functions.

use std::fs;
use std::path::{Path, PathBuf};

use semctx::eval::{accuracy, delta_csv, per_class_delta, predict_label_map, Accuracy, ClassAverage, ConfusionMatrix, DenseLabeler};
use semctx::hierarchy::file::{frequency_csv, hierarchy_digest, read_hierarchy, read_samples, write_hierarchy, write_samples};
use semctx::hierarchy::{build_aggregation_matrix, build_labelmap_hierarchy, build_scene_name_hierarchy, infill_unlabeled, largest_rare_count, partition_classes};
use semctx::ingest::io::{load_dataset, save_dataset, write_label_map};
use semctx::ingest::{augment_dataset, class_counts, collect_samples};
use semctx::network::{default_architecture, load_checkpoint, save_checkpoint, LabelSpace, Model};
use semctx::rng::derive_seed;
use semctx::schedule::{baseline_schedule, hierarchical_schedule, run_schedule, sequential_schedule, RunOptions, ScheduleReport};
use semctx::{Dataset, Error, LabelHierarchy, TrainingSample};

use crate::config::{ExperimentConfig, HierarchyMode, Strategy};
use crate::error::CliError;
use crate::synth::{generate_synthetic, generate_synthetic_split, SynthSpec};

pub const HIERARCHY_FILE: &str = "hierarchy.json";
pub const FREQUENCY_FILE: &str = "subclass_frequency.csv";
pub const SAMPLES_FILE: &str = "samples.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const REPORT_FILE: &str = "report.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const DELTA_FILE: &str = "delta.csv";
pub const PREDICTIONS_DIR: &str = "predictions";
pub const INFILLED_DIR: &str = "infilled";

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

/// Writes `<out>/train` and `<out>/test`; the test split uses a derived seed.
pub fn cmd_gen_synth(spec: &SynthSpec, test_images: usize, out: &Path) -> Result<(), CliError> {
    generate_synthetic(spec, &out.join("train"))?;
    if test_images > 0 {
        let test = SynthSpec {
            images: test_images,
            seed: derive_seed(spec.seed, "test-split", 0),
            ..spec.clone()
        };
        // Same colours as the training split.
        generate_synthetic_split(&test, spec.seed, &out.join("test"))?;
    }
    Ok(())
}

/// The (optionally augmented) training set and its grid samples. The catalog
/// counts are replaced by per-class sample counts.
pub fn training_data(cfg: &ExperimentConfig) -> Result<(Dataset, Vec<TrainingSample>), CliError> {
    let mut ds = load_dataset(&cfg.dataset)?;
    if cfg.augment.enabled {
        ds = augment_dataset(&ds, &cfg.augmentation())?;
    }
    let samples = collect_samples(&ds, cfg.hierarchy_builder.pixels_per_cell)?;
    let counts = class_counts(&samples, ds.num_classes());
    let catalog = ds.catalog().with_counts(counts)?;
    Ok((ds.with_catalog(catalog)?, samples))
}

#[derive(Clone, Debug)]
pub struct BuildSummary {
    pub hierarchy: LabelHierarchy,
    pub samples: Vec<TrainingSample>,
    pub cluster_counts: Option<Vec<usize>>,
}

pub fn cmd_build_hierarchy(cfg: &ExperimentConfig) -> Result<BuildSummary, CliError> {
    cfg.validate()?;
    let (ds, mut samples) = training_data(cfg)?;
    let partition = partition_classes(ds.catalog(), cfg.hierarchy_builder.rho)?;
    let (hierarchy, cluster_counts) = match cfg.hierarchy_builder.mode {
        HierarchyMode::SceneName => (build_scene_name_hierarchy(&mut samples, &ds, &partition)?, None),
        HierarchyMode::LabelCluster => {
            let n_star = largest_rare_count(&samples, &partition);
            let build = build_labelmap_hierarchy(&mut samples, &ds, &partition, cfg.roi()?, n_star, derive_seed(cfg.seed, "hierarchy", 0))?;
            (build.hierarchy, Some(build.cluster_counts))
        }
    };
    ensure_dir(&cfg.out)?;
    write_hierarchy(&cfg.out.join(HIERARCHY_FILE), &hierarchy)?;
    write(&cfg.out.join(FREQUENCY_FILE), &frequency_csv(&hierarchy, &samples))?;
    write_samples(&cfg.out.join(SAMPLES_FILE), &ds, &samples)?;
    Ok(BuildSummary {
        hierarchy,
        samples,
        cluster_counts,
    })
}

/// Training ran to completion; the checkpoint and report are on disk.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub model: Model,
    pub report: ScheduleReport,
}

fn samples_path(hierarchy_path: &Path) -> PathBuf {
    hierarchy_path.with_file_name(SAMPLES_FILE)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let hyper = cfg.hyperparameters()?;
    let t = &cfg.train;
    let (ds, mut samples) = training_data(cfg)?;

    let (hierarchy, hierarchy_id) = match t.strategy {
        Strategy::Baseline => (LabelHierarchy::identity(ds.num_classes()), None),
        Strategy::Sequential | Strategy::Hierarchical => {
            let path = cfg.hierarchy_path();
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "{} not found; run build-hierarchy first",
                    path.display()
                )));
            }
            let h = read_hierarchy(&path)?;
            if h.num_classes() != ds.num_classes() {
                return Err(Error::CatalogMismatch {
                    expected: ds.num_classes(),
                    found: h.num_classes(),
                }
                .into());
            }
            samples = read_samples(&samples_path(&path), &ds)?;
            let id = hierarchy_digest(&h);
            (h, Some(id))
        }
    };

    let (n_out, space, stages) = match t.strategy {
        Strategy::Baseline => (ds.num_classes(), LabelSpace::Class, baseline_schedule(t.baseline_iters)),
        Strategy::Sequential => (
            hierarchy.num_subclasses(),
            LabelSpace::Subclass,
            sequential_schedule(t.include_step3, t.sequential_iters),
        ),
        Strategy::Hierarchical => (
            hierarchy.num_subclasses(),
            LabelSpace::Subclass,
            hierarchical_schedule(&build_aggregation_matrix(&hierarchy), t.hierarchical_iters),
        ),
    };
    let mut model = Model::new(t.patch_size, &default_architecture(), n_out, space, derive_seed(cfg.seed, "model", 0))?;
    model.set_hierarchy_id(hierarchy_id);

    let options = RunOptions {
        report_interval: t.report_interval,
        early_stop: t.early_stop,
    };
    ensure_dir(&cfg.out)?;
    let result = run_schedule(&mut model, &stages, &ds, &samples, &hierarchy, &hyper, cfg.seed, options);
    match result {
        Ok(report) => {
            write(&cfg.out.join(REPORT_FILE), &report.to_csv())?;
            save_checkpoint(&cfg.out.join(CHECKPOINT_FILE), &model)?;
            Ok(TrainSummary { model, report })
        }
        Err(failure) => {
            write(&cfg.out.join(REPORT_FILE), &failure.report.to_csv())?;
            Err(failure.error.into())
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub accuracy: Accuracy,
    pub confusion: ConfusionMatrix,
    pub compared: Option<Accuracy>,
}

fn confusion_for(model: &Model, ds: &Dataset, stride: usize, predictions: Option<&Path>) -> Result<ConfusionMatrix, CliError> {
    let classes = model
        .num_class_outputs()
        .ok_or_else(|| CliError::Usage("checkpoint does not predict original classes".into()))?;
    if classes != ds.num_classes() {
        return Err(Error::CatalogMismatch {
            expected: ds.num_classes(),
            found: classes,
        }
        .into());
    }
    let mut conf = ConfusionMatrix::new(classes);
    for img in ds.images() {
        let pred = predict_label_map(model, img, stride)?;
        conf.add(img.labels(), &pred)?;
        if let Some(dir) = predictions {
            write_label_map(&dir.join(format!("{}.png", img.id)), &pred)?;
        }
    }
    Ok(conf)
}

fn metrics_csv(acc: &Accuracy, conf: &ConfusionMatrix) -> String {
    format!(
        "metric,value\nper_pixel,{}\nper_class,{}\ncounted,{}\nignored,{}\n",
        acc.per_pixel,
        acc.per_class,
        conf.counted(),
        conf.ignored
    )
}

/// Scores `checkpoint` on the test split. With `compare`, also writes the
/// per-class recall change from `compare` to `checkpoint`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, compare: Option<&Path>) -> Result<EvalSummary, CliError> {
    cfg.validate()?;
    let model = load_checkpoint(checkpoint)?;
    let ds = load_dataset(cfg.test_dataset.as_ref().unwrap_or(&cfg.dataset))?;
    let average = if cfg.eval.all_classes {
        ClassAverage::AllClasses
    } else {
        ClassAverage::PresentOnly
    };
    let pred_dir = cfg.out.join(PREDICTIONS_DIR);
    ensure_dir(&pred_dir)?;
    let conf = confusion_for(&model, &ds, cfg.eval.stride, Some(&pred_dir))?;
    let acc = accuracy(&conf, average)?;
    write(&cfg.out.join(METRICS_FILE), &metrics_csv(&acc, &conf))?;
    write(&cfg.out.join(CONFUSION_FILE), &conf.to_csv(ds.catalog().names()))?;

    let compared = match compare {
        Some(other) => {
            let reference = load_checkpoint(other)?;
            let conf_ref = confusion_for(&reference, &ds, cfg.eval.stride, None)?;
            let deltas = per_class_delta(&conf_ref, &conf)?;
            write(&cfg.out.join(DELTA_FILE), &delta_csv(&deltas, ds.catalog().names()))?;
            Some(accuracy(&conf_ref, average)?)
        }
        None => None,
    };
    Ok(EvalSummary {
        accuracy: acc,
        confusion: conf,
        compared,
    })
}

/// Copies the training set to `<out>/infilled`, filling unlabelled pixels of
/// sparsely labelled images with the checkpoint's predictions.
pub fn cmd_infill(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Vec<String>, CliError> {
    cfg.validate()?;
    let model = load_checkpoint(checkpoint)?;
    let ds = load_dataset(&cfg.dataset)?;
    let labeler = DenseLabeler {
        model: &model,
        stride: cfg.eval.stride,
    };
    let outcome = infill_unlabeled(&ds, &labeler, cfg.hierarchy_builder.infill_threshold)?;
    save_dataset(&cfg.out.join(INFILLED_DIR), &outcome.dataset)?;
    Ok(outcome.filled)
}
