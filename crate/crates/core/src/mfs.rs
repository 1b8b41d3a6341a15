//! Knowledge-prompt driven token selection.
//!
//! Each alive instance token is compared with every class prompt (projected
//! into token space). A token's activation score is its largest
//! softmax-over-classes probability. Tokens scoring below `β × mean score`
//! of the alive set are dropped; β grows from stage to stage.

use serde::{Deserialize, Serialize};

use crate::error::{MilError, Result};
use crate::numerics::{softmax_in_place, ParamStore, Tape, Tensor, Var};

pub const PROJECTION_PARAM: &str = "prompt.projection";

/// Knowledge text of one class. Embeddings come from an external text encoder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptEntry {
    pub class_name: String,
    pub definition: String,
    pub signs: String,
}

impl PromptEntry {
    /// The `{Cls, definition, signs}` text handed to the text encoder.
    pub fn prompt_text(&self) -> String {
        format!("{}, {}, {}", self.class_name, self.definition, self.signs)
    }
}

/// One prompt per class with its frozen sentence embedding (`C × d_prompt`).
#[derive(Clone, Debug, PartialEq)]
pub struct PromptBank {
    entries: Vec<PromptEntry>,
    embeddings: Tensor,
}

impl PromptBank {
    pub fn new(entries: Vec<PromptEntry>, embeddings: Tensor) -> Result<Self> {
        if entries.is_empty() {
            return Err(MilError::Config("prompt bank is empty".into()));
        }
        if embeddings.shape().len() != 2 || embeddings.rows() != entries.len() {
            return Err(MilError::Shape {
                op: "prompt bank",
                left: embeddings.shape().to_vec(),
                right: vec![entries.len()],
            });
        }
        if !embeddings.is_finite() {
            return Err(MilError::NonFinite("prompt embeddings".into()));
        }
        Ok(PromptBank { entries, embeddings })
    }

    pub fn entries(&self) -> &[PromptEntry] {
        &self.entries
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn n_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn d_prompt(&self) -> usize {
        self.embeddings.cols()
    }

    /// Prompt embeddings mapped into token space: `C × d_model`.
    pub fn project_on_tape(&self, t: &mut Tape, store: &ParamStore) -> Result<Var> {
        let e = t.leaf(self.embeddings.clone());
        let p = t.param(store, PROJECTION_PARAM)?;
        t.matmul(e, p)
    }

    pub fn project(&self, store: &ParamStore) -> Result<Tensor> {
        self.embeddings.matmul(store.value(PROJECTION_PARAM)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Dot,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfsConfig {
    /// One β per stage, nondecreasing.
    pub beta_schedule: Vec<f64>,
    #[serde(default)]
    pub similarity: Similarity,
    /// Similarities are divided by this before the class softmax.
    #[serde(default = "one")]
    pub temperature: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for MfsConfig {
    fn default() -> Self {
        MfsConfig {
            beta_schedule: vec![0.7, 1.0],
            similarity: Similarity::Dot,
            temperature: 1.0,
        }
    }
}

impl MfsConfig {
    pub fn validate(&self, n_stages: usize) -> Result<()> {
        if self.beta_schedule.len() != n_stages {
            return Err(MilError::Config(format!(
                "beta_schedule has {} entries for {n_stages} stages",
                self.beta_schedule.len()
            )));
        }
        if self.beta_schedule.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(MilError::Config("beta values must be finite and nonnegative".into()));
        }
        if self.beta_schedule.windows(2).any(|w| w[1] < w[0]) {
            return Err(MilError::Config("beta_schedule must be nondecreasing".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(MilError::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Token-to-prompt similarity logits (`m × C`) on the tape.
pub fn similarity_on_tape(t: &mut Tape, tokens: Var, prompts: Var, cfg: &MfsConfig) -> Result<Var> {
    let (x, p) = match cfg.similarity {
        Similarity::Dot => (tokens, prompts),
        Similarity::Cosine => (t.l2_normalize_rows(tokens), t.l2_normalize_rows(prompts)),
    };
    let s = t.matmul_nt(x, p)?;
    Ok(if cfg.temperature == 1.0 {
        s
    } else {
        t.scale(s, 1.0 / cfg.temperature)
    })
}

fn similarity(tokens: &Tensor, prompts: &Tensor, cfg: &MfsConfig) -> Result<Tensor> {
    let mut t = Tape::new();
    let x = t.leaf(tokens.clone());
    let p = t.leaf(prompts.clone());
    let s = similarity_on_tape(&mut t, x, p, cfg)?;
    Ok(t.value(s).clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    /// Activation score per token; 0 for tokens that were already dead.
    pub scores: Vec<f64>,
    pub threshold: f64,
    pub kept: Vec<bool>,
}

/// Max-over-classes softmax probability of each alive token against the
/// projected prompts (`C × d_model`).
pub fn activation_scores(tokens: &Tensor, alive: &[bool], prompts: &Tensor, cfg: &MfsConfig) -> Result<Vec<f64>> {
    if prompts.rows() == 0 || prompts.is_empty() {
        return Err(MilError::Config("prompt bank is empty".into()));
    }
    if alive.len() != tokens.rows() {
        return Err(MilError::Input(format!(
            "alive mask has {} entries for {} tokens",
            alive.len(),
            tokens.rows()
        )));
    }
    if !alive.iter().any(|&a| a) {
        return Err(MilError::Input("no alive tokens to score".into()));
    }
    let sims = similarity(tokens, prompts, cfg)?;
    Ok((0..tokens.rows())
        .map(|i| {
            if !alive[i] {
                return 0.0;
            }
            let mut row = sims.row_slice(i).to_vec();
            softmax_in_place(&mut row);
            row.into_iter().fold(0.0, f64::max)
        })
        .collect())
}

/// `beta × mean(scores of alive tokens)`.
pub fn adaptive_threshold(scores: &[f64], alive: &[bool], beta: f64) -> Result<f64> {
    let alive_scores: Vec<f64> = scores
        .iter()
        .zip(alive)
        .filter(|(_, &a)| a)
        .map(|(&s, _)| s)
        .collect();
    if alive_scores.is_empty() {
        return Err(MilError::Input("threshold over an empty alive set".into()));
    }
    // Offsetting by the minimum makes the mean of equal scores exact, so
    // β = 1 on a uniform bag keeps every token.
    let min = alive_scores.iter().copied().fold(f64::INFINITY, f64::min);
    let excess: f64 = alive_scores.iter().map(|s| s - min).sum();
    Ok(beta * (min + excess / alive_scores.len() as f64))
}

/// Keeps alive tokens scoring at least `threshold`; if none qualifies, the
/// best-scoring alive token (lowest index on ties) is kept alone.
pub fn select_tokens(scores: &[f64], alive: &[bool], threshold: f64) -> Vec<bool> {
    let mut kept: Vec<bool> = scores
        .iter()
        .zip(alive)
        .map(|(&s, &a)| a && s >= threshold)
        .collect();
    if !kept.iter().any(|&k| k) {
        let mut best: Option<usize> = None;
        for (i, (&s, &a)) in scores.iter().zip(alive).enumerate() {
            if a && best.is_none_or(|b| s > scores[b]) {
                best = Some(i);
            }
        }
        if let Some(b) = best {
            kept[b] = true;
        }
    }
    kept
}

/// Scores, thresholds and prunes one stage's tokens.
pub fn select(tokens: &Tensor, alive: &[bool], prompts: &Tensor, beta: f64, cfg: &MfsConfig) -> Result<SelectionResult> {
    let scores = activation_scores(tokens, alive, prompts, cfg)?;
    let threshold = adaptive_threshold(&scores, alive, beta)?;
    let kept = select_tokens(&scores, alive, threshold);
    Ok(SelectionResult {
        scores,
        threshold,
        kept,
    })
}
