//! Mini-batch training with early stopping on validation MAE.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{evaluate, mean_std, Metrics};
use super::optim::{clip_global_norm, Adam, AdamConfig};
use crate::binder::Binder;
use crate::data::{splitmix64, Dataset, NormStats, SeriesBatch, Split};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::stack::ParamCount;
use crate::tensor::Graph;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective over the epoch's mini-batches.
    pub train_loss: f64,
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 = initialization).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub steps: u64,
    /// Steps that sampled Gaussian weights.
    pub open_steps: u64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub report: TrainReport,
    pub elapsed: Duration,
}

fn val_mae(model: &Model, val: Option<&SeriesBatch>, stats: &NormStats) -> Result<Option<f64>> {
    match val {
        Some(v) if v.num_eval() > 0 => Ok(Some(evaluate(&model.predict(v)?, v, stats)?.mae)),
        _ => Ok(None),
    }
}

/// Trains a freshly initialized model. Without validation cells the last
/// epoch is kept.
pub fn train(
    cfg: &RunConfig,
    train: &SeriesBatch,
    val: Option<&SeriesBatch>,
    stats: &NormStats,
) -> Result<TrainOutcome> {
    let start = Instant::now();
    cfg.validate()?;
    let mut model = Model::init(cfg.model_config(train.num_features()), cfg.seed)?;
    let bayesian = model.is_bayesian();
    let schedule = model.config.schedule;
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: cfg.adam_eps,
    });
    let n = train.num_samples();
    let n_batches = n.div_ceil(cfg.batch_size).max(1);
    let mut order: Vec<usize> = (0..n).collect();

    let mut best = model.clone();
    let mut best_mae = val_mae(&model, val, stats)?;
    let mut report = TrainReport {
        epochs: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
        steps: 0,
        open_steps: 0,
    };
    let mut since_best = 0usize;
    for epoch in 1..=cfg.epochs {
        if n == 0 {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ (epoch as u64) << 32));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            report.steps += 1;
            let step = report.steps;
            let mb = train.select(chunk);
            let open = bayesian && schedule.is_open(step);
            let (loss, mut grads) = {
                let g = Graph::new();
                let p = if open {
                    Binder::open(&g, &model.params, splitmix64(cfg.seed ^ step.rotate_left(17)))
                } else {
                    Binder::frozen(&g, &model.params)
                };
                let fwd = model.forward(&p, &mb, n_batches)?;
                let loss = fwd.loss.item();
                if !loss.is_finite() {
                    return Err(Error::Numerical(format!(
                        "training loss became {loss} at epoch {epoch}, step {step}"
                    )));
                }
                (loss, g.backward(fwd.loss)?.by_name())
            };
            if let Some((name, _)) = grads.iter().find(|(_, a)| !a.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for {name} at epoch {epoch}, step {step}"
                )));
            }
            report.open_steps += open as u64;
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(&mut model.params, &grads)?;
            loss_sum += loss;
        }
        let mae = val_mae(&model, val, stats)?;
        let train_loss = loss_sum / n_batches as f64;
        log::info!(
            "epoch {epoch}: loss {train_loss:.6}{}",
            mae.map_or(String::new(), |m| format!(", val MAE {m:.6}"))
        );
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_mae: mae,
        });
        match (mae, best_mae) {
            (Some(m), Some(b)) if m >= b => {
                since_best += 1;
                if since_best >= cfg.patience {
                    report.stopped_early = true;
                    break;
                }
            }
            (Some(m), _) => {
                best_mae = Some(m);
                best = model.clone();
                report.best_epoch = epoch;
                since_best = 0;
            }
            (None, _) => {
                best = model.clone();
                report.best_epoch = epoch;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        report,
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
    pub training: TrainReport,
    pub validation: Option<Metrics>,
    pub test: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub folds: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mre_mean: f64,
    pub mre_std: f64,
    pub mae_norm_mean: f64,
    pub mre_norm_mean: f64,
}

impl Aggregate {
    pub fn from_folds(folds: &[FoldReport]) -> Option<Aggregate> {
        let tests: Vec<&Metrics> = folds.iter().filter_map(|f| f.test.as_ref()).collect();
        if tests.is_empty() {
            return None;
        }
        let pick = |f: fn(&Metrics) -> f64| tests.iter().map(|m| f(m)).collect::<Vec<_>>();
        let (mae_mean, mae_std) = mean_std(&pick(|m| m.mae));
        let (mre_mean, mre_std) = mean_std(&pick(|m| m.mre));
        Some(Aggregate {
            folds: tests.len(),
            mae_mean,
            mae_std,
            mre_mean,
            mre_std,
            mae_norm_mean: mean_std(&pick(|m| m.mae_norm)).0,
            mre_norm_mean: mean_std(&pick(|m| m.mre_norm)).0,
        })
    }
}

/// Everything a run produces apart from parameters and timing; equal
/// configurations and seeds give equal reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: RunConfig,
    pub data_seed: u64,
    pub mask_fraction: f64,
    pub parameters: ParamCount,
    pub folds: Vec<FoldReport>,
    pub aggregate: Option<Aggregate>,
}

fn score(model: &Model, batch: &SeriesBatch, stats: &NormStats) -> Result<Option<Metrics>> {
    if batch.num_eval() == 0 {
        return Ok(None);
    }
    evaluate(&model.predict(batch)?, batch, stats).map(Some)
}

/// Trains on `train`, keeps the best validation epoch and scores both
/// held-out splits.
pub fn run_fold(
    cfg: &RunConfig,
    fold: usize,
    data: &Dataset,
) -> Result<(Model, FoldReport, Duration)> {
    let train_b = data.subset(Split::Train);
    let val_b = data.subset(Split::Val);
    let test_b = data.subset(Split::Test);
    let val = (val_b.num_samples() > 0).then_some(&val_b);
    let out = train(cfg, &train_b, val, &data.stats)?;
    let report = FoldReport {
        fold,
        train_samples: train_b.num_samples(),
        val_samples: val_b.num_samples(),
        test_samples: test_b.num_samples(),
        validation: score(&out.model, &val_b, &data.stats)?,
        test: score(&out.model, &test_b, &data.stats)?,
        training: out.report,
    };
    Ok((out.model, report, out.elapsed))
}

/// One training run on the dataset's own split.
pub fn run(cfg: &RunConfig, data: &Dataset) -> Result<(Model, MetricsReport, Duration)> {
    let (model, fold, elapsed) = run_fold(cfg, 0, data)?;
    let folds = vec![fold];
    let report = MetricsReport {
        config: cfg.clone(),
        data_seed: data.seed,
        mask_fraction: data.mask_fraction,
        parameters: model.parameter_count(),
        aggregate: Aggregate::from_folds(&folds),
        folds,
    };
    Ok((model, report, elapsed))
}
