//! Staged fine-tuning: head actions, freeze masks and the training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::data::{AggregationMatrix, Dataset, Hyperparameters, LabelHierarchy, TrainingSample};
use crate::error::{Error, Result};
use crate::ingest::extract_patch;
use crate::network::{LabelSpace, LossMode, Model, StepLoss, Target};
use crate::rng::{derive_seed, rng_for};

#[derive(Clone, Debug, PartialEq)]
pub enum FreezeMask {
    /// Only the head trains.
    HeadOnly,
    AllTrainable,
    /// One flag per backbone layer, then one for the head.
    Custom(Vec<bool>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadAction {
    Keep,
    /// Fresh head sized for the label space (subclass count or class count).
    Replace(LabelSpace),
    /// Put an aggregation layer on top of the subclass head.
    AddHierarchy(AggregationMatrix),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageLoss {
    Plain,
    Hierarchical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub name: String,
    pub label_space: LabelSpace,
    pub freeze_mask: FreezeMask,
    pub head_action: HeadAction,
    pub w_trainable: bool,
    pub iterations: u64,
    pub loss: StageLoss,
}

impl Stage {
    fn new(name: &str, label_space: LabelSpace, freeze_mask: FreezeMask, head_action: HeadAction, iterations: u64) -> Self {
        Self {
            name: name.into(),
            label_space,
            freeze_mask,
            head_action,
            w_trainable: false,
            iterations,
            loss: StageLoss::Plain,
        }
    }
}

/// Subclass head-only, subclass full, optional class head-only, class full.
/// Without the third step the class head is replaced at the start of the
/// final stage instead.
pub fn sequential_schedule(include_step3: bool, iters: [u64; 4]) -> Vec<Stage> {
    use FreezeMask::*;
    use LabelSpace::*;
    let mut stages = vec![
        Stage::new("subclass-head", Subclass, HeadOnly, HeadAction::Replace(Subclass), iters[0]),
        Stage::new("subclass-all", Subclass, AllTrainable, HeadAction::Keep, iters[1]),
    ];
    if include_step3 {
        stages.push(Stage::new("class-head", Class, HeadOnly, HeadAction::Replace(Class), iters[2]));
        stages.push(Stage::new("class-all", Class, AllTrainable, HeadAction::Keep, iters[3]));
    } else {
        stages.push(Stage::new("class-all", Class, AllTrainable, HeadAction::Replace(Class), iters[3]));
    }
    stages
}

/// Joint subclass and class loss through `W`: first with `W` fixed, then with
/// `W` trained along with everything else.
pub fn hierarchical_schedule(w: &AggregationMatrix, iters: [u64; 2]) -> Vec<Stage> {
    let mut fixed = Stage::new(
        "joint-fixed-w",
        LabelSpace::Subclass,
        FreezeMask::AllTrainable,
        HeadAction::AddHierarchy(w.clone()),
        iters[0],
    );
    fixed.loss = StageLoss::Hierarchical;
    let mut free = Stage::new("joint-trained-w", LabelSpace::Subclass, FreezeMask::AllTrainable, HeadAction::Keep, iters[1]);
    free.loss = StageLoss::Hierarchical;
    free.w_trainable = true;
    vec![fixed, free]
}

/// The control arm: class labels only, everything trainable.
pub fn baseline_schedule(iterations: u64) -> Vec<Stage> {
    vec![Stage::new("class", LabelSpace::Class, FreezeMask::AllTrainable, HeadAction::Keep, iterations)]
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub stage: String,
    pub iteration: u64,
    pub lr: f64,
    pub total: f64,
    pub subclass_ce: Option<f64>,
    pub class_ce: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScheduleReport {
    pub rows: Vec<LossRow>,
    /// Iterations actually run per stage, in stage order.
    pub iterations_run: Vec<u64>,
}

impl ScheduleReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut out = String::from("stage,iteration,lr,total,subclass_ce,class_ce\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.stage, r.iteration, r.lr, r.total, opt(r.subclass_ce), opt(r.class_ce));
        }
        out
    }

    pub fn rows_for<'a>(&'a self, stage: &'a str) -> impl Iterator<Item = &'a LossRow> + 'a {
        self.rows.iter().filter(move |r| r.stage == stage)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    /// Record the loss every this many iterations (and at each stage's last).
    pub report_interval: u64,
    /// Stop a stage once the 100-iteration moving average improves by less
    /// than 0.1% over the previous window.
    pub early_stop: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            report_interval: 10,
            early_stop: true,
        }
    }
}

const EARLY_STOP_WINDOW: usize = 100;
const EARLY_STOP_MIN_GAIN: f64 = 1e-3;

/// A failed run with the losses recorded before the failure.
#[derive(Debug)]
pub struct ScheduleFailure {
    pub error: Error,
    pub report: ScheduleReport,
}

fn prepare_stage(model: &mut Model, stage: &Stage, index: usize, hierarchy: &LabelHierarchy, seed: u64) -> Result<()> {
    match &stage.head_action {
        HeadAction::Keep => {}
        HeadAction::Replace(space) => {
            let n_out = match space {
                LabelSpace::Subclass => hierarchy.num_subclasses(),
                LabelSpace::Class => hierarchy.num_classes(),
            };
            model.replace_head(n_out, *space, derive_seed(seed, "stage-head", index as u64))?;
        }
        HeadAction::AddHierarchy(w) => model.add_hierarchy_head(w.clone())?,
    }
    if model.label_space() != stage.label_space {
        return Err(Error::InvalidArgument(format!(
            "stage `{}` trains {:?} labels but the head is a {:?} head",
            stage.name,
            stage.label_space,
            model.label_space()
        )));
    }
    let mask = match &stage.freeze_mask {
        FreezeMask::HeadOnly => (0..model.mask_len()).map(|i| i + 1 == model.mask_len()).collect(),
        FreezeMask::AllTrainable => vec![true; model.mask_len()],
        FreezeMask::Custom(m) => m.clone(),
    };
    model.set_trainable(&mask)?;
    if model.aggregation().is_some() {
        model.set_w_trainable(stage.w_trainable)?;
    } else if stage.w_trainable {
        return Err(Error::InvalidArgument(format!("stage `{}` trains W but the model has none", stage.name)));
    }
    Ok(())
}

fn moving_average_stalled(losses: &[f64]) -> bool {
    let n = losses.len();
    if n < 2 * EARLY_STOP_WINDOW || n % EARLY_STOP_WINDOW != 0 {
        return false;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let prev = mean(&losses[n - 2 * EARLY_STOP_WINDOW..n - EARLY_STOP_WINDOW]);
    let cur = mean(&losses[n - EARLY_STOP_WINDOW..]);
    (prev - cur) < EARLY_STOP_MIN_GAIN * prev.abs()
}

/// Runs `stages` in order on `model`. Each stage walks the samples in its own
/// seeded random order, reshuffling at every pass. Learning rates restart at
/// every stage.
pub fn run_schedule(
    model: &mut Model,
    stages: &[Stage],
    ds: &Dataset,
    samples: &[TrainingSample],
    hierarchy: &LabelHierarchy,
    hyper: &Hyperparameters,
    seed: u64,
    options: RunOptions,
) -> std::result::Result<ScheduleReport, ScheduleFailure> {
    let mut report = ScheduleReport::default();
    let fail = |error: Error, report: ScheduleReport| ScheduleFailure { error, report };
    if let Err(e) = hyper.validate() {
        return Err(fail(e, report));
    }
    if hyper.patch_size != model.input_size() {
        return Err(fail(
            Error::InvalidArgument(format!("patch size {} but the model takes {}", hyper.patch_size, model.input_size())),
            report,
        ));
    }
    let means: Vec<[f64; 3]> = ds.images().iter().map(|img| img.channel_mean()).collect();

    for (index, stage) in stages.iter().enumerate() {
        if let Err(e) = prepare_stage(model, stage, index, hierarchy, seed) {
            return Err(fail(e, report));
        }
        if stage.iterations == 0 {
            report.iterations_run.push(0);
            continue;
        }
        if samples.is_empty() {
            return Err(fail(Error::InvalidArgument("no training samples".into()), report));
        }
        if stage.label_space == LabelSpace::Subclass && samples.iter().any(|s| s.subclass_label.is_none()) {
            return Err(fail(Error::InvalidArgument(format!("stage `{}` needs subclass labels", stage.name)), report));
        }
        let mode = match stage.loss {
            StageLoss::Plain => LossMode::Plain,
            StageLoss::Hierarchical => LossMode::Hierarchical { alpha: hyper.alpha },
        };

        let mut rng = rng_for(seed, "stage", index as u64);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let mut cursor = 0;
        let mut history = Vec::new();
        let mut ran = 0;
        for iter in 0..stage.iterations {
            let mut inputs = Vec::with_capacity(hyper.batch_size);
            let mut targets = Vec::with_capacity(hyper.batch_size);
            for _ in 0..hyper.batch_size {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let s = &samples[order[cursor]];
                cursor += 1;
                inputs.push(extract_patch(ds.image(s.image), s.center, hyper.patch_size, means[s.image]).pixels);
                targets.push(Target {
                    class: s.class_label,
                    subclass: s.subclass_label,
                });
            }
            let lr = hyper.learning_rate(iter);
            let loss: StepLoss = match model.train_step(&inputs, &targets, mode, hyper.beta, lr) {
                Ok(l) => l,
                Err(Error::NumericalAbort { .. }) => {
                    let error = Error::NumericalAbort {
                        stage: Some(stage.name.clone()),
                        iteration: iter,
                    };
                    report.iterations_run.push(ran);
                    return Err(fail(error, report));
                }
                Err(e) => {
                    report.iterations_run.push(ran);
                    return Err(fail(e, report));
                }
            };
            ran += 1;
            history.push(loss.total);
            let last = iter + 1 == stage.iterations;
            let stop = options.early_stop && moving_average_stalled(&history);
            if iter % options.report_interval.max(1) == 0 || last || stop {
                report.rows.push(LossRow {
                    stage: stage.name.clone(),
                    iteration: iter,
                    lr,
                    total: loss.total,
                    subclass_ce: loss.subclass_ce,
                    class_ce: loss.class_ce,
                });
            }
            if stop {
                break;
            }
        }
        report.iterations_run.push(ran);
    }
    Ok(report)
}
