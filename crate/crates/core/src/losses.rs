//! Cross-entropy, prompt-prototype loss and their sum.

use serde::{Deserialize, Serialize};

use crate::error::{MilError, Result};
use crate::mfs::{similarity_on_tape, MfsConfig};
use crate::numerics::{Tape, Tensor, Var};

/// How the prototype term turns the positive-pair probability into a loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PplForm {
    /// Mean negative log-probability of the true-class prompt.
    #[default]
    NegLog,
    /// Mean probability of the true-class prompt, taken literally. Minimizing
    /// it pushes tokens away from their prototype; kept for comparison runs.
    Probability,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ppl: f64,
    pub total: f64,
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(MilError::Input(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// `−log softmax(logits)[label]` for a `1 × C` logit row.
pub fn ce_loss_on_tape(t: &mut Tape, logits: Var, label: usize) -> Result<Var> {
    check_label(label, t.value(logits).cols())?;
    let ls = t.log_softmax_rows(logits);
    let picked = t.pick(ls, 0, label);
    Ok(t.scale(picked, -1.0))
}

pub fn ce_loss(logits: &[f64], label: usize) -> Result<f64> {
    let mut t = Tape::new();
    let l = t.leaf(Tensor::row(logits));
    let loss = ce_loss_on_tape(&mut t, l, label)?;
    Ok(t.value(loss).item())
}

/// Prototype loss of the selected tokens (`m × d_model`) against projected
/// prompts (`C × d_model`), averaged over the `m` tokens.
pub fn ppl_loss_on_tape(
    t: &mut Tape,
    tokens: Var,
    prompts: Var,
    label: usize,
    mfs: &MfsConfig,
    form: PplForm,
) -> Result<Var> {
    check_label(label, t.value(prompts).rows())?;
    let sims = similarity_on_tape(t, tokens, prompts, mfs)?;
    let per_class = match form {
        PplForm::NegLog => t.log_softmax_rows(sims),
        PplForm::Probability => t.softmax_rows(sims),
    };
    let col = t.slice_cols(per_class, label, 1)?;
    let mean = t.mean_rows(col);
    Ok(match form {
        PplForm::NegLog => t.scale(mean, -1.0),
        PplForm::Probability => mean,
    })
}

pub fn ppl_loss(tokens: &Tensor, prompts: &Tensor, label: usize, mfs: &MfsConfig, form: PplForm) -> Result<f64> {
    if tokens.is_empty() || tokens.rows() == 0 {
        return Err(MilError::Input("prototype loss needs at least one token".into()));
    }
    let mut t = Tape::new();
    let x = t.leaf(tokens.clone());
    let p = t.leaf(prompts.clone());
    let loss = ppl_loss_on_tape(&mut t, x, p, label, mfs, form)?;
    Ok(t.value(loss).item())
}

/// Sums cross-entropy and (when `ppl` is `Some`) the prototype term.
pub fn total_loss_on_tape(t: &mut Tape, ce: Var, ppl: Option<Var>) -> Result<(Var, LossBreakdown)> {
    let ce_v = t.value(ce).item();
    let (total, ppl_v) = match ppl {
        Some(p) => {
            let v = t.value(p).item();
            (t.add(ce, p)?, v)
        }
        None => (ce, 0.0),
    };
    let breakdown = LossBreakdown {
        ce: ce_v,
        ppl: ppl_v,
        total: t.value(total).item(),
    };
    if !(breakdown.total.is_finite()) {
        return Err(MilError::NonFinite(format!("loss {breakdown:?}")));
    }
    Ok((total, breakdown))
}
