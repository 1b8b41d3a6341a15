#![allow(dead_code)]

use milkit::moae::{self, AttentionKind, MoaeConfig};
use milkit::numerics::random_normal;
use milkit::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PREFIX: &str = "attn";

pub fn moae_setup(cfg: &MoaeConfig, n: usize, seed: u64) -> (ParamStore, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    moae::init_params(&mut store, PREFIX, cfg, AttentionKind::Moae, &mut rng).unwrap();
    let tokens = random_normal(&mut rng, n, cfg.d_model, 1.0);
    (store, tokens)
}

fn mat(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect()
}

fn mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Fully dense gated mixture of heads with plain loops: every routed head
/// contributes, every key is visible.
pub fn dense_mixture(tokens: &Tensor, store: &ParamStore, cfg: &MoaeConfig) -> Vec<Vec<f64>> {
    let x = mat(tokens);
    let p = |name: &str| mat(store.value(&format!("{PREFIX}.{name}")).unwrap());
    let (q, k, v) = (mul(&x, &p("wq")), mul(&x, &p("wk")), mul(&x, &p("wv")));
    let shared = if cfg.shared_heads > 0 { mul(&x, &p("router_shared")) } else { vec![vec![]; x.len()] };
    let routed = mul(&x, &p("router_routed"));
    let n = x.len();
    let dh = cfg.d_head();
    let mut out = vec![vec![0.0; cfg.d_model]; n];
    for i in 0..n {
        let mut gates: Vec<f64> = softmax(&shared[i]).iter().map(|g| cfg.alpha_shared * g).collect();
        if cfg.shared_heads == 0 {
            gates.clear();
        }
        gates.extend(softmax(&routed[i]).iter().map(|g| cfg.alpha_routed * g));
        for (h, &g) in gates.iter().enumerate() {
            let cols = h * dh..(h + 1) * dh;
            let logits: Vec<f64> = (0..n)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let w = softmax(&logits);
            let head: Vec<f64> = cols.clone().map(|c| (0..n).map(|j| w[j] * v[j][c]).sum()).collect();
            let wo = p(&format!("wo.{h}"));
            for c in 0..cfg.d_model {
                out[i][c] += g * head.iter().zip(&wo).map(|(a, row)| a * row[c]).sum::<f64>();
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &Tensor, b: &[Vec<f64>]) -> f64 {
    (0..a.rows())
        .flat_map(|i| a.row_slice(i).iter().zip(&b[i]).map(|(x, y)| (x - y).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}
