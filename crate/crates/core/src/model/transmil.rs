use crate::error::{MilError, Result};
use crate::mfs::{self, PromptBank};
use crate::moae::attention_forward_on_tape;
use crate::numerics::{ParamStore, Tape, Var};

use super::{
    prediction_from_logits, stage_prefix, Aggregator, Bag, CaseForward, CasePrediction, Decisions, ModelConfig,
    TokenSequence,
};

fn project_instances(t: &mut Tape, bag: &Bag, params: &ParamStore) -> Result<Var> {
    let x = t.leaf(bag.instances.clone());
    let w = t.param(params, "input.weight")?;
    let b = t.param(params, "input.bias")?;
    let xw = t.matmul(x, w)?;
    t.add_row(xw, b)
}

/// Projects the instances into token space and prepends the CLS vector.
pub fn encode_bag(bag: &Bag, params: &ParamStore, cfg: &ModelConfig) -> Result<TokenSequence> {
    bag.validate(cfg)?;
    let mut t = Tape::new();
    let tokens = project_instances(&mut t, bag, params)?;
    Ok(TokenSequence {
        cls: params.value("cls")?.clone(),
        tokens: t.value(tokens).clone(),
        alive: vec![true; bag.len()],
    })
}

/// Runs the case through the model and returns its prediction.
pub fn forward_case(bag: &Bag, params: &ParamStore, cfg: &ModelConfig, bank: Option<&PromptBank>) -> Result<CasePrediction> {
    let mut t = Tape::new();
    Ok(super::forward_on_tape(&mut t, bag, params, cfg, bank, None)?.prediction)
}

fn layer_norm(t: &mut Tape, x: Var, params: &ParamStore, prefix: &str) -> Result<Var> {
    let n = t.layer_norm_rows(x);
    let g = t.param(params, &format!("{prefix}.gain"))?;
    let b = t.param(params, &format!("{prefix}.bias"))?;
    let scaled = t.mul_row(n, g)?;
    t.add_row(scaled, b)
}

fn feed_forward(t: &mut Tape, x: Var, params: &ParamStore, prefix: &str) -> Result<Var> {
    let w1 = t.param(params, &format!("{prefix}.w1"))?;
    let b1 = t.param(params, &format!("{prefix}.b1"))?;
    let w2 = t.param(params, &format!("{prefix}.w2"))?;
    let b2 = t.param(params, &format!("{prefix}.b2"))?;
    let h = t.matmul(x, w1)?;
    let h = t.add_row(h, b1)?;
    let h = t.gelu(h);
    let y = t.matmul(h, w2)?;
    t.add_row(y, b2)
}

pub(super) fn forward_on_tape(
    t: &mut Tape,
    bag: &Bag,
    params: &ParamStore,
    cfg: &ModelConfig,
    bank: Option<&PromptBank>,
    frozen: Option<&Decisions>,
) -> Result<CaseForward> {
    debug_assert_eq!(cfg.aggregator, Aggregator::Transformer);
    let n = bag.len();
    if let Some(f) = frozen {
        if f.routing.len() != cfg.n_stages || (cfg.use_mfs && f.kept.len() != cfg.n_stages) {
            return Err(MilError::Input("frozen decisions do not match the stage count".into()));
        }
    }
    let prompts = if cfg.uses_prompts() {
        let bank = bank.ok_or_else(|| MilError::Config("model needs a prompt bank".into()))?;
        if bank.n_classes() != cfg.n_classes || bank.d_prompt() != cfg.d_prompt {
            return Err(MilError::Config(format!(
                "prompt bank is {}×{} but the model expects {}×{}",
                bank.n_classes(),
                bank.d_prompt(),
                cfg.n_classes,
                cfg.d_prompt
            )));
        }
        Some(bank.project_on_tape(t, params)?)
    } else {
        None
    };

    let tokens = project_instances(t, bag, params)?;
    let cls = t.param(params, "cls")?;
    let mut h = t.concat_rows(&[cls, tokens])?;
    // Index 0 is CLS and is never pruned.
    let mut alive = vec![true; n + 1];
    let mut decisions = Decisions::default();
    let mut scores = vec![0.0; n];
    let mut thresholds = Vec::new();

    for stage in 0..cfg.n_stages {
        let pre = stage_prefix(stage);
        let frozen_routing = frozen.and_then(|f| f.routing[stage].as_ref());
        let (attn, routing) = attention_forward_on_tape(
            t,
            h,
            params,
            &format!("{pre}.attn"),
            &cfg.moae,
            cfg.attention_kind(),
            &alive,
            frozen_routing,
        )?;
        decisions.routing.push(routing);
        let res = t.add(h, attn)?;
        h = layer_norm(t, res, params, &format!("{pre}.ln1"))?;
        let ff = feed_forward(t, h, params, &format!("{pre}.ffn"))?;
        let res = t.add(h, ff)?;
        h = layer_norm(t, res, params, &format!("{pre}.ln2"))?;

        if cfg.use_mfs {
            let prompts = t.value(prompts.expect("prompts exist when selecting")).clone();
            let inst_rows: Vec<usize> = (1..=n).collect();
            let inst = t.gather_rows(h, &inst_rows)?;
            let sel = mfs::select(
                t.value(inst),
                &alive[1..],
                &prompts,
                cfg.mfs.beta_schedule[stage],
                &cfg.mfs,
            )?;
            let kept = match frozen {
                Some(f) => f.kept[stage].clone(),
                None => sel.kept,
            };
            if kept.len() != n || !kept.iter().any(|&k| k) {
                return Err(MilError::Input("invalid frozen keep mask".into()));
            }
            alive[1..].copy_from_slice(&kept);
            scores = sel.scores;
            thresholds.push(sel.threshold);
            decisions.kept.push(kept);
        }
    }

    if !cfg.use_mfs {
        if let Some(p) = prompts {
            // Report scores without pruning.
            let inst_rows: Vec<usize> = (1..=n).collect();
            let inst = t.gather_rows(h, &inst_rows)?;
            let prompts = t.value(p).clone();
            scores = mfs::activation_scores(t.value(inst), &alive[1..], &prompts, &cfg.mfs)?;
        }
    }

    let kept_rows: Vec<usize> = (1..=n).filter(|&i| alive[i]).collect();
    let selected_tokens = Some(t.gather_rows(h, &kept_rows)?);
    let cls_out = t.gather_rows(h, &[0])?;
    let w = t.param(params, "head.weight")?;
    let b = t.param(params, "head.bias")?;
    let logits = t.matmul(cls_out, w)?;
    let logits = t.add_row(logits, b)?;

    let logit_values = t.value(logits).data().to_vec();
    if !logit_values.iter().all(|v| v.is_finite()) {
        return Err(MilError::NonFinite(format!("logits of case {}", bag.case_id)));
    }
    let (probabilities, predicted_class) = prediction_from_logits(&logit_values);
    Ok(CaseForward {
        logits,
        selected_tokens,
        prompts,
        prediction: CasePrediction {
            logits: logit_values,
            probabilities,
            predicted_class,
            per_instance_scores: scores,
            kept_mask: alive[1..].to_vec(),
            stage_thresholds: thresholds,
        },
        decisions,
    })
}
