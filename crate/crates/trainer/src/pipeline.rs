//! Whole-stage runs with per-epoch logging.

use std::time::Instant;

use nets::{ModelParams, TeacherStudentPair};
use phantom::Split;
use tensorgrad::Real;

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::Result;
use crate::eval::evaluate;
use crate::metrics::{MetricsReport, MetricsRow, Scores};
use crate::stage1::{pretrain_stage1, Stage1Outcome};
use crate::stage2::{Stage2Trainer, StepReport};

pub fn run_stage1<T: Real>(cfg: &TrainConfig, data: &Dataset) -> Result<(Stage1Outcome<T>, MetricsReport)> {
    let start = Instant::now();
    let outcome = pretrain_stage1::<T>(cfg, data)?;
    let mut report = MetricsReport::new(cfg.organs);
    for (e, &loss) in outcome.epoch_losses.iter().enumerate() {
        report.rows.push(MetricsRow {
            epoch: e + 1,
            split: "train".into(),
            loss_gcl: Some(loss),
            ..Default::default()
        });
    }
    report.wall_clock.push(("stage1".into(), start.elapsed().as_secs_f64()));
    Ok((outcome, report))
}

#[derive(Debug, Clone)]
pub struct Stage2Outcome<T> {
    /// The pair the test row was scored on (see `select_best_val`).
    pub pair: TeacherStudentPair<T>,
    /// Epoch `pair` comes from.
    pub epoch: usize,
    pub report: MetricsReport,
    pub steps: Vec<StepReport>,
    pub test: Scores,
}

/// Parameters scored at evaluation time: the student unless `eval_teacher` is set.
pub fn eval_params<'a, T>(cfg: &TrainConfig, pair: &'a TeacherStudentPair<T>) -> &'a ModelParams<T> {
    if cfg.eval_teacher {
        &pair.teacher
    } else {
        &pair.student
    }
}

/// Every Stage II epoch with a train row (epoch means of the loss terms, λ3 of the
/// last step) and a validation row, then a final test row.
pub fn run_stage2<T: Real>(
    cfg: &TrainConfig,
    data: &Dataset,
    pretrained: Option<&ModelParams<f32>>,
) -> Result<Stage2Outcome<T>> {
    let start = Instant::now();
    let mut trainer = Stage2Trainer::<T>::new(cfg, data, pretrained)?;
    let mut report = MetricsReport::new(cfg.organs);
    let mut steps = Vec::new();
    let has_val = !data.indices(Split::Val).is_empty();
    let mut last_epoch = 0;
    let mut best: Option<(f64, usize, TeacherStudentPair<T>)> = None;
    'epochs: for epoch in 1..=cfg.stage2_epochs {
        let batches = trainer.epoch_batches();
        let first = steps.len();
        for batch in &batches {
            if trainer.steps_done() >= trainer.total_steps() {
                break;
            }
            steps.push(trainer.step(data, batch, epoch)?);
        }
        let epoch_steps = &steps[first..];
        if epoch_steps.is_empty() {
            break 'epochs;
        }
        last_epoch = epoch;
        let mean = |f: fn(&StepReport) -> f64| epoch_steps.iter().map(f).sum::<f64>() / epoch_steps.len() as f64;
        report.rows.push(MetricsRow {
            epoch,
            split: "train".into(),
            loss_seg: Some(mean(|s| s.loss_seg)),
            loss_cons: Some(mean(|s| s.loss_cons)),
            loss_lcl: Some(mean(|s| s.loss_lcl)),
            lambda3: epoch_steps.last().map(|s| s.lambda3),
            ..Default::default()
        });
        if has_val {
            let scores = evaluate(eval_params(cfg, &trainer.pair), data, Split::Val, cfg.organs)?;
            if cfg.select_best_val && best.as_ref().map_or(true, |b| scores.dice_mean > b.0) {
                best = Some((scores.dice_mean, epoch, trainer.pair.clone()));
            }
            report.rows.push(MetricsRow {
                epoch,
                split: "val".into(),
                scores: Some(scores),
                ..Default::default()
            });
        }
    }
    let (epoch, pair) = match best {
        Some((_, epoch, pair)) => (epoch, pair),
        None => (last_epoch, trainer.pair),
    };
    let test = evaluate(eval_params(cfg, &pair), data, Split::Test, cfg.organs)?;
    report.rows.push(MetricsRow {
        epoch,
        split: "test".into(),
        scores: Some(test.clone()),
        ..Default::default()
    });
    report.wall_clock.push(("stage2".into(), start.elapsed().as_secs_f64()));
    Ok(Stage2Outcome {
        pair,
        epoch,
        report,
        steps,
        test,
    })
}
