//! Adam, the warm-up + half-cosine schedule, and the epoch loop.

mod adam;
mod schedule;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamHyper, AdamState};
pub use schedule::lr_at;

use crate::error::{MilError, Result};
use crate::metrics::{ConfusionMatrix, EvalReport};
use crate::mfs::PromptBank;
use crate::model::{case_loss_on_tape, Bag, CasePrediction, MilModel, ModelConfig};
use crate::numerics::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Train / validation / test fractions for case-level splitting.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            lr_max: 1e-3,
            lr_min: 1e-8,
            epochs: 100,
            warmup_epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            split: [0.6, 0.2, 0.2],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MilError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.warmup_epochs > 0 && self.warmup_epochs < self.epochs) {
            return bad(format!(
                "need 0 < warmup_epochs ({}) < epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if !(self.lr_min.is_finite() && self.lr_max.is_finite() && 0.0 <= self.lr_min && self.lr_min <= self.lr_max) {
            return bad(format!("need 0 <= lr_min ({}) <= lr_max ({})", self.lr_min, self.lr_max));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} = {b} outside [0, 1)"));
            }
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return bad("adam_eps must be positive".into());
        }
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must lie in [0, 1] and sum to 1", self.split));
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    /// 1-based.
    pub epoch: usize,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    pub train_loss: f64,
    pub val_weighted_acc: Option<f64>,
}

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_weighted_acc\n");
    for r in rows {
        let val = r.val_weighted_acc.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{:e},{},{}", r.epoch, r.lr, r.train_loss, val);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_weighted_acc: f64,
    pub params: BTreeMap<String, Tensor>,
}

/// Everything needed to continue a run exactly where it stopped. The
/// shuffle generator is re-derived from the seed per epoch, so no RNG
/// stream position has to be stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub adam: AdamState,
    pub params: BTreeMap<String, Tensor>,
    pub best: Option<BestSnapshot>,
    pub history: Vec<HistoryRow>,
}

/// Result of a full run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-validation parameters (last epoch when there is no validation set).
    pub best_model: MilModel,
    pub final_model: MilModel,
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub history: Vec<HistoryRow>,
}

fn snapshot(model: &MilModel) -> BTreeMap<String, Tensor> {
    model.params.iter().map(|(n, s)| (n.to_string(), s.value.clone())).collect()
}

fn restore(model: &mut MilModel, values: &BTreeMap<String, Tensor>) -> Result<()> {
    if values.len() != model.params.len() {
        return Err(MilError::Config(format!(
            "snapshot has {} tensors, model has {}",
            values.len(),
            model.params.len()
        )));
    }
    for (name, v) in values {
        model.params.set_value(name, v.clone())?;
    }
    Ok(())
}

pub struct Trainer<'a> {
    model: MilModel,
    cfg: TrainConfig,
    state: TrainState,
    train: &'a [Bag],
    val: &'a [Bag],
    bank: Option<&'a PromptBank>,
}

impl<'a> Trainer<'a> {
    /// Fresh run; parameters are initialised from `cfg.seed`.
    pub fn new(
        model_cfg: ModelConfig,
        cfg: TrainConfig,
        train: &'a [Bag],
        val: &'a [Bag],
        bank: Option<&'a PromptBank>,
    ) -> Result<Self> {
        let model = MilModel::new(model_cfg, cfg.seed)?;
        let state = TrainState {
            seed: cfg.seed,
            epoch: 0,
            adam: AdamState::default(),
            params: snapshot(&model),
            best: None,
            history: Vec::new(),
        };
        Self::resume(model.config, cfg, state, train, val, bank)
    }

    pub fn resume(
        model_cfg: ModelConfig,
        cfg: TrainConfig,
        state: TrainState,
        train: &'a [Bag],
        val: &'a [Bag],
        bank: Option<&'a PromptBank>,
    ) -> Result<Self> {
        cfg.validate()?;
        if state.seed != cfg.seed {
            return Err(MilError::Config(format!(
                "state was produced with seed {}, config has {}",
                state.seed, cfg.seed
            )));
        }
        if state.epoch > cfg.epochs {
            return Err(MilError::Config(format!(
                "state is at epoch {} but the run has {} epochs",
                state.epoch, cfg.epochs
            )));
        }
        if train.is_empty() {
            return Err(MilError::Input("training set is empty".into()));
        }
        if model_cfg.uses_prompts() && bank.is_none() {
            return Err(MilError::Config("model uses prompts but no prompt bank was given".into()));
        }
        for bag in train.iter().chain(val) {
            bag.validate(&model_cfg)?;
        }
        let mut model = MilModel {
            params: crate::model::init_params(&model_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?,
            config: model_cfg,
        };
        restore(&mut model, &state.params)?;
        Ok(Trainer {
            model,
            cfg,
            state,
            train,
            val,
            bank,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn model(&self) -> &MilModel {
        &self.model
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.cfg.epochs
    }

    /// Case order for epoch `e` (0-based): stream `e` of the seed.
    fn order(&self, e: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(e as u64 + 1);
        let mut idx: Vec<usize> = (0..self.train.len()).collect();
        idx.shuffle(&mut rng);
        idx
    }

    pub fn run_epoch(&mut self) -> Result<HistoryRow> {
        if self.is_done() {
            return Err(MilError::Config("all epochs already completed".into()));
        }
        let e = self.state.epoch;
        let order = self.order(e);
        let n_batches = order.len().div_ceil(self.cfg.batch_size);
        let hyper = self.cfg.hyper();
        let mut loss_sum = 0.0;
        self.model.params.zero_grads();
        for (b, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let bag = &self.train[i];
                let mut t = Tape::new();
                let (loss, parts, _) = case_loss_on_tape(&mut t, bag, &self.model.params, &self.model.config, self.bank, None)?;
                if !parts.total.is_finite() {
                    return Err(MilError::NonFinite(format!("loss of case {} in epoch {}", bag.case_id, e + 1)));
                }
                loss_sum += parts.total;
                let scaled = t.scale(loss, scale);
                t.backward(scaled, &mut self.model.params)?;
            }
            let lr = lr_at(e as f64 + b as f64 / n_batches as f64, &self.cfg)?;
            adam_step(&mut self.model.params, &mut self.state.adam, lr, hyper)
                .map_err(|err| MilError::NonFinite(format!("epoch {}, batch {}: {err}", e + 1, b + 1)))?;
        }

        let val_acc = if self.val.is_empty() {
            None
        } else {
            let names: Vec<String> = (0..self.model.config.n_classes).map(|c| c.to_string()).collect();
            Some(evaluate(&self.model, self.val, self.bank, &names)?.0.weighted_accuracy)
        };
        let row = HistoryRow {
            epoch: e + 1,
            lr: lr_at(e as f64, &self.cfg)?,
            train_loss: loss_sum / self.train.len() as f64,
            val_weighted_acc: val_acc,
        };
        if let Some(acc) = val_acc {
            // Strictly better only: ties keep the earlier epoch.
            if self.state.best.as_ref().is_none_or(|b| acc > b.val_weighted_acc) {
                self.state.best = Some(BestSnapshot {
                    epoch: e + 1,
                    val_weighted_acc: acc,
                    params: snapshot(&self.model),
                });
            }
        }
        log::info!(
            "epoch {:>3}  lr {:.3e}  loss {:.5}  val {}",
            row.epoch,
            row.lr,
            row.train_loss,
            val_acc.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        );
        self.state.epoch += 1;
        self.state.params = snapshot(&self.model);
        self.state.history.push(row.clone());
        Ok(row)
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        while !self.is_done() {
            self.run_epoch()?;
        }
        self.finish()
    }

    pub fn finish(self) -> Result<TrainOutcome> {
        let mut best_model = self.model.clone();
        let (best_epoch, best_val) = match &self.state.best {
            Some(b) => {
                restore(&mut best_model, &b.params)?;
                (b.epoch, Some(b.val_weighted_acc))
            }
            None => (self.state.epoch, None),
        };
        Ok(TrainOutcome {
            best_model,
            final_model: self.model,
            best_epoch,
            best_val,
            history: self.state.history,
        })
    }
}

pub fn train(
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    train: &[Bag],
    val: &[Bag],
    bank: Option<&PromptBank>,
) -> Result<TrainOutcome> {
    Trainer::new(model_cfg, cfg, train, val, bank)?.run()
}

/// Predicts every bag and tallies the confusion matrix.
pub fn evaluate(
    model: &MilModel,
    bags: &[Bag],
    bank: Option<&PromptBank>,
    class_names: &[String],
) -> Result<(EvalReport, Vec<CasePrediction>)> {
    let mut cm = ConfusionMatrix::new(model.config.n_classes);
    let mut preds = Vec::with_capacity(bags.len());
    for bag in bags {
        let p = model.predict(bag, bank)?;
        cm.record(bag.label, p.predicted_class)?;
        preds.push(p);
    }
    Ok((EvalReport::new(cm, class_names)?, preds))
}
