//! Mixture-of-attention-experts: attention heads act as experts, each token
//! weights the always-on shared heads by a shared router and activates its
//! Top-K routed heads by a second router.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MilError, Result};
use crate::numerics::{random_normal, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MoaeConfig {
    pub d_model: usize,
    pub heads: usize,
    pub shared_heads: usize,
    pub top_k: usize,
    /// Weight on the shared-head gates.
    pub alpha_shared: f64,
    /// Weight on the routed-head gates.
    pub alpha_routed: f64,
    /// Learn both alphas through a softplus parameterization.
    #[serde(default)]
    pub trainable_alphas: bool,
}

impl Default for MoaeConfig {
    fn default() -> Self {
        MoaeConfig {
            d_model: 512,
            heads: 8,
            shared_heads: 2,
            top_k: 2,
            alpha_shared: 1.0,
            alpha_routed: 1.0,
            trainable_alphas: false,
        }
    }
}

impl MoaeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MilError::Config(m));
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            ));
        }
        if self.shared_heads >= self.heads {
            return bad(format!(
                "shared_heads ({}) must be below heads ({})",
                self.shared_heads, self.heads
            ));
        }
        if self.top_k == 0 || self.top_k > self.routed_heads() {
            return bad(format!(
                "top_k ({}) must lie in 1..={}",
                self.top_k,
                self.routed_heads()
            ));
        }
        if !(self.alpha_shared >= 0.0 && self.alpha_routed >= 0.0) {
            return bad("alphas must be nonnegative".into());
        }
        if self.trainable_alphas && (self.alpha_shared == 0.0 || self.alpha_routed == 0.0) {
            return bad("trainable alphas need positive initial values".into());
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn routed_heads(&self) -> usize {
        self.heads - self.shared_heads
    }
}

/// Per-token routed-head selection, `n × (heads − shared_heads)`.
pub type RoutingMask = Vec<Vec<bool>>;

/// Gate values for a token sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct GateVector {
    /// `n × heads`; shared heads first, then routed heads.
    pub gates: Tensor,
    pub routing: RoutingMask,
}

impl GateVector {
    pub fn nonzero_per_token(&self) -> Vec<usize> {
        (0..self.gates.rows())
            .map(|i| self.gates.row_slice(i).iter().filter(|&&g| g != 0.0).count())
            .collect()
    }
}

/// Attention flavour of a transformer stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionKind {
    /// Every head with gate 1.
    MultiHead,
    Moae,
}

/// Indices of the `k` largest entries; the lower index wins ties.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps lower indices first among equal values.
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.truncate(k);
    order.sort_unstable();
    order
}

fn routing_from_logits(logits: &Tensor, k: usize) -> RoutingMask {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row_slice(i);
            let mut keep = vec![false; row.len()];
            for j in top_k_indices(row, k) {
                keep[j] = true;
            }
            keep
        })
        .collect()
}

pub fn wo_name(prefix: &str, head: usize) -> String {
    format!("{prefix}.wo.{head}")
}

/// Registers the parameters of one attention block under `prefix`.
pub fn init_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &MoaeConfig,
    kind: AttentionKind,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.d_model;
    let std = 1.0 / (d as f64).sqrt();
    for w in ["wq", "wk", "wv"] {
        store.insert(format!("{prefix}.{w}"), random_normal(rng, d, d, std))?;
    }
    for h in 0..cfg.heads {
        store.insert(wo_name(prefix, h), random_normal(rng, cfg.d_head(), d, std))?;
    }
    if kind == AttentionKind::Moae {
        if cfg.shared_heads > 0 {
            store.insert(
                format!("{prefix}.router_shared"),
                random_normal(rng, d, cfg.shared_heads, std),
            )?;
        }
        store.insert(
            format!("{prefix}.router_routed"),
            random_normal(rng, d, cfg.routed_heads(), std),
        )?;
        if cfg.trainable_alphas {
            store.insert(
                format!("{prefix}.alpha_shared_raw"),
                Tensor::scalar(inverse_softplus(cfg.alpha_shared)),
            )?;
            store.insert(
                format!("{prefix}.alpha_routed_raw"),
                Tensor::scalar(inverse_softplus(cfg.alpha_routed)),
            )?;
        }
    }
    Ok(())
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Gate nodes on the tape.
#[derive(Clone, Debug)]
pub struct GateVars {
    /// `n × shared_heads`, absent when there are no shared heads.
    pub shared: Option<Var>,
    /// `n × routed_heads`, zero outside each token's Top-K set.
    pub routed: Var,
    pub routing: RoutingMask,
}

fn trainable_alpha(t: &mut Tape, store: &ParamStore, prefix: &str, which: &str, cfg: &MoaeConfig) -> Result<Option<Var>> {
    if !cfg.trainable_alphas {
        return Ok(None);
    }
    let raw = t.param(store, &format!("{prefix}.alpha_{which}_raw"))?;
    Ok(Some(t.softplus(raw)))
}

fn apply_alpha(t: &mut Tape, x: Var, a: Option<Var>, fixed: f64) -> Result<Var> {
    match a {
        Some(a) => t.scale_by(x, a),
        None if fixed == 1.0 => Ok(x),
        None => Ok(t.scale(x, fixed)),
    }
}

/// Computes the router gates for `tokens` (`n × d_model`).
///
/// With `frozen` set, the Top-K selection is replayed instead of recomputed.
pub fn router_gates_on_tape(
    t: &mut Tape,
    tokens: Var,
    store: &ParamStore,
    prefix: &str,
    cfg: &MoaeConfig,
    frozen: Option<&RoutingMask>,
) -> Result<GateVars> {
    let n = t.value(tokens).rows();
    let shared = if cfg.shared_heads > 0 {
        let ws = t.param(store, &format!("{prefix}.router_shared"))?;
        let logits = t.matmul(tokens, ws)?;
        let probs = t.softmax_rows(logits);
        let a = trainable_alpha(t, store, prefix, "shared", cfg)?;
        Some(apply_alpha(t, probs, a, cfg.alpha_shared)?)
    } else {
        None
    };

    let wr = t.param(store, &format!("{prefix}.router_routed"))?;
    let logits = t.matmul(tokens, wr)?;
    let routing = match frozen {
        Some(mask) => {
            if mask.len() != n || mask.iter().any(|m| m.len() != cfg.routed_heads()) {
                return Err(MilError::Input("frozen routing mask has the wrong shape".into()));
            }
            mask.clone()
        }
        None => routing_from_logits(t.value(logits), cfg.top_k),
    };
    let probs = t.softmax_rows(logits);
    let mask_data: Vec<f64> = routing
        .iter()
        .flatten()
        .map(|&k| if k { 1.0 } else { 0.0 })
        .collect();
    let kept = t.mul_const(probs, Tensor::matrix(n, cfg.routed_heads(), mask_data)?)?;
    let a = trainable_alpha(t, store, prefix, "routed", cfg)?;
    let routed = apply_alpha(t, kept, a, cfg.alpha_routed)?;
    Ok(GateVars {
        shared,
        routed,
        routing,
    })
}

/// Tape-free router evaluation.
pub fn router_gates(tokens: &Tensor, store: &ParamStore, prefix: &str, cfg: &MoaeConfig) -> Result<GateVector> {
    cfg.validate()?;
    check_tokens(tokens, cfg)?;
    let mut t = Tape::new();
    let x = t.leaf(tokens.clone());
    let g = router_gates_on_tape(&mut t, x, store, prefix, cfg, None)?;
    let n = tokens.rows();
    let mut gates = Tensor::zeros(&[n, cfg.heads]);
    for i in 0..n {
        let row = gates.row_slice_mut(i);
        if let Some(s) = g.shared {
            row[..cfg.shared_heads].copy_from_slice(t.value(s).row_slice(i));
        }
        row[cfg.shared_heads..].copy_from_slice(t.value(g.routed).row_slice(i));
    }
    Ok(GateVector {
        gates,
        routing: g.routing,
    })
}

fn check_tokens(tokens: &Tensor, cfg: &MoaeConfig) -> Result<()> {
    if tokens.shape().len() != 2 || tokens.cols() != cfg.d_model {
        return Err(MilError::Shape {
            op: "attention input",
            left: tokens.shape().to_vec(),
            right: vec![tokens.rows(), cfg.d_model],
        });
    }
    Ok(())
}

/// Scaled dot-product attention of one head over projected `q`, `k`, `v`
/// (each `n × d_model`). Keys with `key_alive[j] == false` are excluded.
pub fn attention_head_on_tape(
    t: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    head: usize,
    d_head: usize,
    key_alive: &[bool],
) -> Result<Var> {
    let start = head * d_head;
    let qh = t.slice_cols(q, start, d_head)?;
    let kh = t.slice_cols(k, start, d_head)?;
    let vh = t.slice_cols(v, start, d_head)?;
    let scores = t.matmul_nt(qh, kh)?;
    let scores = t.scale(scores, 1.0 / (d_head as f64).sqrt());
    let weights = t.masked_softmax_rows(scores, key_alive)?;
    t.matmul(weights, vh)
}

/// Output `H^i` of head `head` (`n × d_head`) for the given tokens.
pub fn attention_head(
    tokens: &Tensor,
    store: &ParamStore,
    prefix: &str,
    cfg: &MoaeConfig,
    head: usize,
    key_alive: &[bool],
) -> Result<Tensor> {
    if head >= cfg.heads {
        return Err(MilError::Input(format!("head {head} out of range ({} heads)", cfg.heads)));
    }
    check_tokens(tokens, cfg)?;
    let mut t = Tape::new();
    let x = t.leaf(tokens.clone());
    let (q, k, v) = project_qkv(&mut t, x, store, prefix)?;
    let out = attention_head_on_tape(&mut t, q, k, v, head, cfg.d_head(), key_alive)?;
    Ok(t.value(out).clone())
}

fn project_qkv(t: &mut Tape, x: Var, store: &ParamStore, prefix: &str) -> Result<(Var, Var, Var)> {
    let mut proj = |w: &str| -> Result<Var> {
        let w = t.param(store, &format!("{prefix}.{w}"))?;
        t.matmul(x, w)
    };
    Ok((proj("wq")?, proj("wk")?, proj("wv")?))
}

/// Attention block output (before residual and normalization) plus the
/// routing decisions taken, if any.
#[allow(clippy::too_many_arguments)]
pub fn attention_forward_on_tape(
    t: &mut Tape,
    x: Var,
    store: &ParamStore,
    prefix: &str,
    cfg: &MoaeConfig,
    kind: AttentionKind,
    key_alive: &[bool],
    frozen: Option<&RoutingMask>,
) -> Result<(Var, Option<RoutingMask>)> {
    let (q, k, v) = project_qkv(t, x, store, prefix)?;
    let gates = match kind {
        AttentionKind::Moae => Some(router_gates_on_tape(t, x, store, prefix, cfg, frozen)?),
        AttentionKind::MultiHead => None,
    };
    let mut acc: Option<Var> = None;
    for head in 0..cfg.heads {
        if let Some(g) = &gates {
            // Skip heads no token routes to: their contribution is exactly 0.
            if head >= cfg.shared_heads
                && !g.routing.iter().any(|r| r[head - cfg.shared_heads])
            {
                continue;
            }
        }
        let h = attention_head_on_tape(t, q, k, v, head, cfg.d_head(), key_alive)?;
        let wo = t.param(store, &wo_name(prefix, head))?;
        let mut out = t.matmul(h, wo)?;
        if let Some(g) = &gates {
            let col = if head < cfg.shared_heads {
                t.slice_cols(g.shared.expect("shared gates"), head, 1)?
            } else {
                t.slice_cols(g.routed, head - cfg.shared_heads, 1)?
            };
            out = t.scale_rows(out, col)?;
        }
        acc = Some(match acc {
            Some(a) => t.add(a, out)?,
            None => out,
        });
    }
    let out = acc.expect("at least one head is active");
    Ok((out, gates.map(|g| g.routing)))
}

/// Gated mixture of head outputs, `n × d_model`.
pub fn moae_forward(tokens: &Tensor, store: &ParamStore, prefix: &str, cfg: &MoaeConfig, key_alive: &[bool]) -> Result<Tensor> {
    cfg.validate()?;
    check_tokens(tokens, cfg)?;
    let mut t = Tape::new();
    let x = t.leaf(tokens.clone());
    let (out, _) = attention_forward_on_tape(&mut t, x, store, prefix, cfg, AttentionKind::Moae, key_alive, None)?;
    Ok(t.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(d: usize, h: usize, hs: usize, k: usize) -> MoaeConfig {
        MoaeConfig {
            d_model: d,
            heads: h,
            shared_heads: hs,
            top_k: k,
            alpha_shared: 1.0,
            alpha_routed: 1.0,
            trainable_alphas: false,
        }
    }

    fn params(c: &MoaeConfig, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_params(&mut store, "a", c, AttentionKind::Moae, &mut rng).unwrap();
        store
    }

    #[test]
    fn config_invariants() {
        assert!(cfg(8, 4, 1, 2).validate().is_ok());
        assert!(cfg(8, 3, 1, 1).validate().is_err());
        assert!(cfg(8, 4, 4, 1).validate().is_err());
        assert!(cfg(8, 4, 1, 4).validate().is_err());
        assert!(cfg(8, 4, 1, 0).validate().is_err());
        let mut c = cfg(8, 4, 1, 1);
        c.alpha_routed = -1.0;
        assert!(c.validate().is_err());
        assert!(MoaeConfig::default().validate().is_ok());
    }

    #[test]
    fn top_k_ties_prefer_lower_index() {
        assert_eq!(top_k_indices(&[1.0, 3.0, 3.0, 0.0], 1), vec![1]);
        assert_eq!(top_k_indices(&[2.0, 2.0, 2.0], 2), vec![0, 1]);
        assert_eq!(top_k_indices(&[0.0, 5.0, 1.0], 2), vec![1, 2]);
    }

    #[test]
    fn zero_routed_alpha_disables_routing() {
        let mut c = cfg(2, 2, 1, 1);
        c.alpha_routed = 0.0;
        let store = params(&c, 1);
        let g = router_gates(&Tensor::row(&[0.4, -1.0]), &store, "a", &c).unwrap();
        assert_eq!(g.gates.get(0, 1), 0.0);
        assert_eq!(g.gates.get(0, 0), 1.0);
    }

    #[test]
    fn full_top_k_keeps_every_routed_head() {
        let c = cfg(3, 3, 1, 2);
        let store = params(&c, 2);
        let g = router_gates(&Tensor::row(&[0.3, 0.2, -0.5]), &store, "a", &c).unwrap();
        let routed = &g.gates.row_slice(0)[1..];
        assert!(routed.iter().all(|&v| v > 0.0));
        assert!((routed.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn top_one_keeps_larger_logit() {
        let c = cfg(3, 3, 1, 1);
        let mut store = params(&c, 3);
        let wr = Tensor::from_rows(&[vec![2.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        store.set_value("a.router_routed", wr).unwrap();
        let g = router_gates(&Tensor::row(&[1.0, 0.0, 0.0]), &store, "a", &c).unwrap();
        let routed = &g.gates.row_slice(0)[1..];
        assert!((routed[0] - 0.73106).abs() < 1e-5);
        assert_eq!(routed[1], 0.0);
        assert_eq!(g.routing, vec![vec![true, false]]);
    }

    fn set_identity_qkv(store: &mut ParamStore, d: usize) {
        for w in ["wq", "wk", "wv"] {
            store.set_value(&format!("a.{w}"), Tensor::identity(d)).unwrap();
        }
    }

    #[test]
    fn single_token_attends_to_itself() {
        let c = cfg(4, 2, 1, 1);
        let mut store = params(&c, 4);
        set_identity_qkv(&mut store, 4);
        let x = Tensor::row(&[0.5, -1.0, 2.0, 3.0]);
        let h1 = attention_head(&x, &store, "a", &c, 1, &[true]).unwrap();
        assert_eq!(h1.data(), &[2.0, 3.0]);
    }

    #[test]
    fn identical_tokens_split_attention_evenly() {
        let c = cfg(2, 1, 0, 1);
        let mut store = params(&c, 5);
        set_identity_qkv(&mut store, 2);
        // Values differ only through V; identical keys force weights [0.5, 0.5].
        store
            .set_value("a.wv", Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap())
            .unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let h = attention_head(&x, &store, "a", &c, 0, &[true, true]).unwrap();
        assert_eq!(h.row_slice(0), &[1.0, 2.0]);
        assert_eq!(h.row_slice(1), &[1.0, 2.0]);
    }

    #[test]
    fn hand_computed_two_token_head() {
        // Q = K = V = X (identity projections), d_head = 2.
        // scores = X Xᵀ / sqrt(2): [[1, 0], [0, 4]] / sqrt(2).
        let c = cfg(2, 1, 0, 1);
        let mut store = params(&c, 6);
        set_identity_qkv(&mut store, 2);
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let h = attention_head(&x, &store, "a", &c, 0, &[true, true]).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let w0 = [s.exp() / (s.exp() + 1.0), 1.0 / (s.exp() + 1.0)];
        let w1 = [1.0 / (1.0 + (4.0 * s).exp()), (4.0 * s).exp() / (1.0 + (4.0 * s).exp())];
        let expected = [w0[0], 2.0 * w0[1], w1[0], 2.0 * w1[1]];
        for (a, b) in h.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dead_keys_are_ignored() {
        let c = cfg(2, 1, 0, 1);
        let mut store = params(&c, 7);
        set_identity_qkv(&mut store, 2);
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![5.0, 5.0]]).unwrap();
        let h = attention_head(&x, &store, "a", &c, 0, &[true, false]).unwrap();
        assert_eq!(h.row_slice(0), &[1.0, 0.0]);
        assert_eq!(h.row_slice(1), &[1.0, 0.0]);
        assert!(attention_head(&x, &store, "a", &c, 0, &[false, false]).is_err());
    }

    #[test]
    fn zero_alphas_give_zero_output() {
        let mut c = cfg(4, 2, 1, 1);
        c.alpha_shared = 0.0;
        c.alpha_routed = 0.0;
        let store = params(&c, 8);
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![-1.0, 0.5, 0.0, 2.0]]).unwrap();
        let y = moae_forward(&x, &store, "a", &c, &[true, true]).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_shared_head_is_vanilla_attention() {
        // heads = shared_heads = 1 is not a valid config; a zero routed
        // alpha leaves the single shared head.
        let mut c = cfg(4, 2, 1, 1);
        c.alpha_routed = 0.0;
        let store = params(&c, 9);
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![-1.0, 0.5, 0.0, 2.0]]).unwrap();
        let y = moae_forward(&x, &store, "a", &c, &[true, true]).unwrap();
        let h0 = attention_head(&x, &store, "a", &c, 0, &[true, true]).unwrap();
        let expected = h0.matmul(store.value("a.wo.0").unwrap()).unwrap();
        assert!(y.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn trainable_alphas_pass_grad_check() {
        let mut c = cfg(4, 4, 1, 2);
        c.trainable_alphas = true;
        c.alpha_shared = 0.8;
        c.alpha_routed = 1.3;
        let mut store = params(&c, 10);
        let x = Tensor::from_rows(&[vec![0.1, 0.2, 0.3, 0.4], vec![-1.0, 0.5, 0.0, 2.0], vec![0.7, -0.2, 1.1, 0.3]]).unwrap();
        let mut tape = Tape::new();
        let leaf = tape.leaf(x.clone());
        let (_, routing) = attention_forward_on_tape(&mut tape, leaf, &store, "a", &c, AttentionKind::Moae, &[true; 3], None).unwrap();
        let routing = routing.unwrap();
        let report = grad_check(&mut store, &GradCheckConfig::default(), |p, t| {
            let leaf = t.leaf(x.clone());
            let (y, _) = attention_forward_on_tape(t, leaf, p, "a", &c, AttentionKind::Moae, &[true; 3], Some(&routing))?;
            let sq = t.hadamard(y, y)?;
            Ok(t.sum_all(sq))
        })
        .unwrap();
        assert!(report.passed, "{report:?}");
        let sp = store.value("a.alpha_routed_raw").unwrap().item();
        assert!(((1.0 + sp.exp()).ln() - 1.3).abs() < 1e-12);
    }
}
