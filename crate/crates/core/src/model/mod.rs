//! Case-level MIL model: bag intake, CLS token, stacked transformer stages
//! with optional mixture-of-attention-experts and prompt-driven token
//! selection, plus pooling baselines.

mod baseline;
mod transmil;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MilError, Result};
use crate::losses::{LossBreakdown, PplForm};
use crate::mfs::{MfsConfig, PromptBank, PROJECTION_PARAM};
use crate::moae::{self, AttentionKind, MoaeConfig, RoutingMask};
use crate::numerics::{random_normal, ParamStore, Tape, Tensor, Var};

pub use baseline::baseline_aggregate;
pub use transmil::{encode_bag, forward_case};

/// How instance tokens are aggregated into a case prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// CLS token through transformer stages.
    #[default]
    Transformer,
    Mean,
    Max,
    /// Gated attention pooling.
    Abmil,
}

impl std::str::FromStr for Aggregator {
    type Err = MilError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Aggregator::Transformer),
            "mean" => Ok(Aggregator::Mean),
            "max" => Ok(Aggregator::Max),
            "abmil" => Ok(Aggregator::Abmil),
            other => Err(MilError::Config(format!("unknown aggregator {other:?}"))),
        }
    }
}

/// Missing fields in a config file take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_model: usize,
    pub d_prompt: usize,
    pub n_stages: usize,
    pub n_classes: usize,
    pub ffn_hidden: usize,
    pub moae: MoaeConfig,
    pub mfs: MfsConfig,
    pub use_moae: bool,
    pub use_mfs: bool,
    pub use_ppl: bool,
    #[serde(default)]
    pub aggregator: Aggregator,
    #[serde(default)]
    pub ppl_form: PplForm,
    #[serde(default = "default_abmil_hidden")]
    pub abmil_hidden: usize,
}

fn default_abmil_hidden() -> usize {
    128
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_in: 512,
            d_model: 512,
            d_prompt: 768,
            n_stages: 2,
            n_classes: 6,
            ffn_hidden: 1024,
            moae: MoaeConfig::default(),
            mfs: MfsConfig::default(),
            use_moae: true,
            use_mfs: true,
            use_ppl: true,
            aggregator: Aggregator::Transformer,
            ppl_form: PplForm::NegLog,
            abmil_hidden: default_abmil_hidden(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MilError::Config(m));
        for (name, v) in [
            ("d_in", self.d_in),
            ("d_model", self.d_model),
            ("d_prompt", self.d_prompt),
            ("n_stages", self.n_stages),
            ("ffn_hidden", self.ffn_hidden),
            ("abmil_hidden", self.abmil_hidden),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2".into());
        }
        if self.moae.d_model != self.d_model {
            return bad(format!(
                "moae.d_model ({}) differs from d_model ({})",
                self.moae.d_model, self.d_model
            ));
        }
        self.moae.validate()?;
        self.mfs.validate(self.n_stages)
    }

    pub fn attention_kind(&self) -> AttentionKind {
        if self.use_moae {
            AttentionKind::Moae
        } else {
            AttentionKind::MultiHead
        }
    }

    /// Whether the model carries a prompt projection.
    pub fn uses_prompts(&self) -> bool {
        self.aggregator == Aggregator::Transformer && (self.use_mfs || self.use_ppl)
    }

    /// Baseline with every module disabled.
    pub fn ablated(&self, use_mfs: bool, use_moae: bool, use_ppl: bool) -> Self {
        ModelConfig {
            use_mfs,
            use_moae,
            use_ppl,
            ..self.clone()
        }
    }
}

/// One case: a bag of precomputed instance embeddings with a case label.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub case_id: String,
    /// `n × d_in`.
    pub instances: Tensor,
    pub label: usize,
    /// Ground-truth signal instances, synthetic data only.
    pub signal_mask: Option<Vec<bool>>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.instances.shape().len() != 2 || self.instances.rows() == 0 {
            return Err(MilError::Input(format!("case {} has no instances", self.case_id)));
        }
        if self.instances.cols() != cfg.d_in {
            return Err(MilError::Shape {
                op: "bag instances",
                left: self.instances.shape().to_vec(),
                right: vec![self.instances.rows(), cfg.d_in],
            });
        }
        if self.label >= cfg.n_classes {
            return Err(MilError::Input(format!(
                "case {} has label {} but only {} classes",
                self.case_id, self.label, cfg.n_classes
            )));
        }
        if let Some(mask) = &self.signal_mask {
            if mask.len() != self.len() {
                return Err(MilError::Input(format!(
                    "case {} signal mask has {} entries for {} instances",
                    self.case_id,
                    mask.len(),
                    self.len()
                )));
            }
        }
        Ok(())
    }

    /// The same case with its instances reordered: row `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Bag {
        let mut rows = Vec::with_capacity(self.len());
        for &p in perm {
            rows.push(self.instances.row_slice(p).to_vec());
        }
        Bag {
            case_id: self.case_id.clone(),
            instances: Tensor::from_rows(&rows).expect("same width"),
            label: self.label,
            signal_mask: self
                .signal_mask
                .as_ref()
                .map(|m| perm.iter().map(|&p| m[p]).collect()),
        }
    }
}

/// CLS state plus instance tokens entering the first stage.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub cls: Tensor,
    pub tokens: Tensor,
    pub alive: Vec<bool>,
}

impl TokenSequence {
    /// Sequence length including CLS.
    pub fn len(&self) -> usize {
        self.tokens.rows() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CasePrediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
    /// Final-stage activation score per instance (0 for pruned instances).
    pub per_instance_scores: Vec<f64>,
    pub kept_mask: Vec<bool>,
    /// Selection threshold applied at each stage (empty without selection).
    pub stage_thresholds: Vec<f64>,
}

/// Non-differentiable choices made during a forward pass. Replaying them
/// makes the loss a smooth function of the parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Decisions {
    /// Per stage, the routed-head selection (MoAE stages only).
    pub routing: Vec<Option<RoutingMask>>,
    /// Per stage, the instance keep mask after selection.
    pub kept: Vec<Vec<bool>>,
}

/// Tape handles and decisions of one forward pass.
#[derive(Debug)]
pub struct CaseForward {
    pub logits: Var,
    /// Final instance tokens that survived selection (`m × d_model`).
    pub selected_tokens: Option<Var>,
    /// Projected prompts (`C × d_model`) when the model uses prompts.
    pub prompts: Option<Var>,
    pub prediction: CasePrediction,
    pub decisions: Decisions,
}

pub(crate) fn prediction_from_logits(logits: &[f64]) -> (Vec<f64>, usize) {
    let mut probs = logits.to_vec();
    crate::numerics::softmax_in_place(&mut probs);
    let predicted = crate::numerics::argmax(logits);
    (probs, predicted)
}

pub fn stage_prefix(stage: usize) -> String {
    format!("stage{stage}")
}

/// Creates every trainable tensor the configuration needs.
pub fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let mut p = ParamStore::new();
    let d = cfg.d_model;
    p.insert("input.weight", random_normal(rng, cfg.d_in, d, 1.0 / (cfg.d_in as f64).sqrt()))?;
    p.insert("input.bias", Tensor::zeros(&[1, d]))?;
    p.insert("head.weight", random_normal(rng, d, cfg.n_classes, 1.0 / (d as f64).sqrt()))?;
    p.insert("head.bias", Tensor::zeros(&[1, cfg.n_classes]))?;
    match cfg.aggregator {
        Aggregator::Mean | Aggregator::Max => {}
        Aggregator::Abmil => {
            let std = 1.0 / (d as f64).sqrt();
            p.insert("abmil.v", random_normal(rng, d, cfg.abmil_hidden, std))?;
            p.insert("abmil.u", random_normal(rng, d, cfg.abmil_hidden, std))?;
            p.insert("abmil.w", random_normal(rng, cfg.abmil_hidden, 1, 1.0 / (cfg.abmil_hidden as f64).sqrt()))?;
        }
        Aggregator::Transformer => {
            p.insert("cls", random_normal(rng, 1, d, 1.0))?;
            for stage in 0..cfg.n_stages {
                let pre = stage_prefix(stage);
                moae::init_params(&mut p, &format!("{pre}.attn"), &cfg.moae, cfg.attention_kind(), rng)?;
                for ln in ["ln1", "ln2"] {
                    p.insert(format!("{pre}.{ln}.gain"), Tensor::filled(&[1, d], 1.0))?;
                    p.insert(format!("{pre}.{ln}.bias"), Tensor::zeros(&[1, d]))?;
                }
                p.insert(format!("{pre}.ffn.w1"), random_normal(rng, d, cfg.ffn_hidden, 1.0 / (d as f64).sqrt()))?;
                p.insert(format!("{pre}.ffn.b1"), Tensor::zeros(&[1, cfg.ffn_hidden]))?;
                p.insert(
                    format!("{pre}.ffn.w2"),
                    random_normal(rng, cfg.ffn_hidden, d, 1.0 / (cfg.ffn_hidden as f64).sqrt()),
                )?;
                p.insert(format!("{pre}.ffn.b2"), Tensor::zeros(&[1, d]))?;
            }
            if cfg.uses_prompts() {
                p.insert(
                    PROJECTION_PARAM,
                    random_normal(rng, cfg.d_prompt, d, 1.0 / (cfg.d_prompt as f64).sqrt()),
                )?;
            }
        }
    }
    Ok(p)
}

/// Forward pass on the tape for any aggregator.
pub fn forward_on_tape(
    t: &mut Tape,
    bag: &Bag,
    params: &ParamStore,
    cfg: &ModelConfig,
    bank: Option<&PromptBank>,
    frozen: Option<&Decisions>,
) -> Result<CaseForward> {
    bag.validate(cfg)?;
    match cfg.aggregator {
        Aggregator::Transformer => transmil::forward_on_tape(t, bag, params, cfg, bank, frozen),
        kind => baseline::forward_on_tape(t, bag, params, kind),
    }
}

/// Case loss on the tape: cross-entropy plus, when enabled, the prototype
/// term over the final selected tokens.
pub fn case_loss_on_tape(
    t: &mut Tape,
    bag: &Bag,
    params: &ParamStore,
    cfg: &ModelConfig,
    bank: Option<&PromptBank>,
    frozen: Option<&Decisions>,
) -> Result<(Var, LossBreakdown, CaseForward)> {
    let fwd = forward_on_tape(t, bag, params, cfg, bank, frozen)?;
    let ce = crate::losses::ce_loss_on_tape(t, fwd.logits, bag.label)?;
    let ppl = if cfg.use_ppl && cfg.aggregator == Aggregator::Transformer {
        let tokens = fwd.selected_tokens.ok_or_else(|| MilError::Input("no selected tokens".into()))?;
        let prompts = fwd.prompts.ok_or_else(|| MilError::Config("prototype loss needs a prompt bank".into()))?;
        Some(crate::losses::ppl_loss_on_tape(t, tokens, prompts, bag.label, &cfg.mfs, cfg.ppl_form)?)
    } else {
        None
    };
    let (total, breakdown) = crate::losses::total_loss_on_tape(t, ce, ppl)?;
    Ok((total, breakdown, fwd))
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MilModel {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl MilModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, &mut rng)?;
        Ok(MilModel { config, params })
    }

    pub fn predict(&self, bag: &Bag, bank: Option<&PromptBank>) -> Result<CasePrediction> {
        let mut t = Tape::new();
        Ok(forward_on_tape(&mut t, bag, &self.params, &self.config, bank, None)?.prediction)
    }
}

#[cfg(test)]
mod tests;
