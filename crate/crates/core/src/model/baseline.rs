use crate::error::{MilError, Result};
use crate::numerics::{ParamStore, Tape};

use super::{prediction_from_logits, Aggregator, Bag, CaseForward, CasePrediction, Decisions, ModelConfig};

/// Pools projected instance features (mean, max or gated attention) and
/// classifies the pooled vector.
pub fn baseline_aggregate(bag: &Bag, params: &ParamStore, cfg: &ModelConfig) -> Result<CasePrediction> {
    if cfg.aggregator == Aggregator::Transformer {
        return Err(MilError::Config("baseline_aggregate needs a mean, max or abmil aggregator".into()));
    }
    bag.validate(cfg)?;
    let mut t = Tape::new();
    Ok(forward_on_tape(&mut t, bag, params, cfg.aggregator)?.prediction)
}

pub(super) fn forward_on_tape(
    t: &mut Tape,
    bag: &Bag,
    params: &ParamStore,
    kind: Aggregator,
) -> Result<CaseForward> {
    let n = bag.len();
    let x = t.leaf(bag.instances.clone());
    let w = t.param(params, "input.weight")?;
    let b = t.param(params, "input.bias")?;
    let h = t.matmul(x, w)?;
    let h = t.add_row(h, b)?;

    let (pooled, weights) = match kind {
        Aggregator::Mean => (t.mean_rows(h), vec![1.0 / n as f64; n]),
        Aggregator::Max => {
            let pooled = t.max_rows(h);
            // Share of feature dimensions each instance wins.
            let hv = t.value(h);
            let mut wins = vec![0.0; n];
            for j in 0..hv.cols() {
                let mut best = 0;
                for i in 1..n {
                    if hv.get(i, j) > hv.get(best, j) {
                        best = i;
                    }
                }
                wins[best] += 1.0 / hv.cols() as f64;
            }
            (pooled, wins)
        }
        Aggregator::Abmil => {
            let v = t.param(params, "abmil.v")?;
            let u = t.param(params, "abmil.u")?;
            let wa = t.param(params, "abmil.w")?;
            let hv = t.matmul(h, v)?;
            let tanh = t.tanh(hv);
            let hu = t.matmul(h, u)?;
            let gate = t.sigmoid(hu);
            let gated = t.hadamard(tanh, gate)?;
            let logits = t.matmul(gated, wa)?;
            let logits = t.transpose(logits)?;
            let attn = t.softmax_rows(logits);
            let pooled = t.matmul(attn, h)?;
            let weights = t.value(attn).data().to_vec();
            (pooled, weights)
        }
        Aggregator::Transformer => unreachable!("handled by the transformer path"),
    };

    let hw = t.param(params, "head.weight")?;
    let hb = t.param(params, "head.bias")?;
    let logits = t.matmul(pooled, hw)?;
    let logits = t.add_row(logits, hb)?;
    let logit_values = t.value(logits).data().to_vec();
    if !logit_values.iter().all(|v| v.is_finite()) {
        return Err(MilError::NonFinite(format!("logits of case {}", bag.case_id)));
    }
    let (probabilities, predicted_class) = prediction_from_logits(&logit_values);
    Ok(CaseForward {
        logits,
        selected_tokens: None,
        prompts: None,
        prediction: CasePrediction {
            logits: logit_values,
            probabilities,
            predicted_class,
            per_instance_scores: weights,
            kept_mask: vec![true; n],
            stage_thresholds: Vec::new(),
        },
        decisions: Decisions::default(),
    })
}
