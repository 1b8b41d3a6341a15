use super::*;
use crate::mfs::PromptEntry;
use crate::numerics::{grad_check, GradCheckConfig};

pub(crate) fn small_config() -> ModelConfig {
    ModelConfig {
        d_in: 6,
        d_model: 8,
        d_prompt: 5,
        n_stages: 2,
        n_classes: 3,
        ffn_hidden: 16,
        moae: MoaeConfig {
            d_model: 8,
            heads: 4,
            shared_heads: 1,
            top_k: 2,
            ..MoaeConfig::default()
        },
        abmil_hidden: 4,
        ..ModelConfig::default()
    }
}

fn bank(cfg: &ModelConfig, seed: u64) -> PromptBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = (0..cfg.n_classes)
        .map(|c| PromptEntry {
            class_name: format!("class{c}"),
            definition: String::new(),
            signs: String::new(),
        })
        .collect();
    PromptBank::new(entries, random_normal(&mut rng, cfg.n_classes, cfg.d_prompt, 1.0)).unwrap()
}

fn bag(cfg: &ModelConfig, n: usize, seed: u64) -> Bag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Bag {
        case_id: format!("case{seed}"),
        instances: random_normal(&mut rng, n, cfg.d_in, 1.0),
        label: (seed as usize) % cfg.n_classes,
        signal_mask: None,
    }
}

#[test]
fn encode_bag_shapes() {
    let cfg = small_config();
    let model = MilModel::new(cfg.clone(), 1).unwrap();
    let one = encode_bag(&bag(&cfg, 1, 1), &model.params, &cfg).unwrap();
    assert_eq!(one.len(), 2);
    let seq = encode_bag(&bag(&cfg, 5, 2), &model.params, &cfg).unwrap();
    assert_eq!(seq.tokens.shape(), &[5, 8]);
    assert_eq!(seq.cls.shape(), &[1, 8]);
    assert_eq!(seq.alive, vec![true; 5]);

    let mut params = model.params.clone();
    params.set_value("input.weight", Tensor::zeros(&[6, 8])).unwrap();
    let zero = Bag {
        instances: Tensor::zeros(&[1, 6]),
        ..bag(&cfg, 1, 3)
    };
    let seq = encode_bag(&zero, &params, &cfg).unwrap();
    assert!(seq.tokens.data().iter().all(|&v| v == 0.0));
}

#[test]
fn rejects_bad_bags() {
    let cfg = small_config();
    let model = MilModel::new(cfg.clone(), 1).unwrap();
    let mut b = bag(&cfg, 3, 1);
    b.label = 7;
    assert!(model.predict(&b, Some(&bank(&cfg, 0))).is_err());
    let wide = Bag {
        instances: Tensor::zeros(&[2, 7]),
        ..bag(&cfg, 2, 2)
    };
    assert!(matches!(encode_bag(&wide, &model.params, &cfg), Err(MilError::Shape { .. })));
}

#[test]
fn predictions_are_distributions() {
    let cfg = small_config();
    let model = MilModel::new(cfg.clone(), 4).unwrap();
    let p = model.predict(&bag(&cfg, 5, 4), Some(&bank(&cfg, 4))).unwrap();
    assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(p.predicted_class, crate::numerics::argmax(&p.logits));
    assert_eq!(p.per_instance_scores.len(), 5);
    assert_eq!(p.stage_thresholds.len(), 2);
    assert!(p.kept_mask.iter().any(|&k| k));
}

#[test]
fn identical_instances_score_identically() {
    let cfg = small_config();
    let model = MilModel::new(cfg.clone(), 5).unwrap();
    let row = bag(&cfg, 1, 5).instances.row_slice(0).to_vec();
    let b = Bag {
        instances: Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap(),
        ..bag(&cfg, 1, 5)
    };
    let p = model.predict(&b, Some(&bank(&cfg, 5))).unwrap();
    assert!(p.per_instance_scores.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(p.kept_mask, vec![true; 3]);
}

#[test]
fn permutation_invariance() {
    let cfg = small_config();
    let model = MilModel::new(cfg.clone(), 6).unwrap();
    let pb = bank(&cfg, 6);
    let b = bag(&cfg, 6, 6);
    let perm = [4, 0, 5, 2, 1, 3];
    let p = model.predict(&b, Some(&pb)).unwrap();
    let q = model.predict(&b.permuted(&perm), Some(&pb)).unwrap();
    for (a, c) in p.logits.iter().zip(&q.logits) {
        assert!((a - c).abs() < 1e-9);
    }
    for (i, &src) in perm.iter().enumerate() {
        assert!((q.per_instance_scores[i] - p.per_instance_scores[src]).abs() < 1e-9);
        assert_eq!(q.kept_mask[i], p.kept_mask[src]);
    }
}

#[test]
fn ablated_model_has_no_router_or_prompt_parameters() {
    let cfg = small_config().ablated(false, false, false);
    let model = MilModel::new(cfg.clone(), 7).unwrap();
    assert!(model.params.names().all(|n| !n.contains("router") && !n.starts_with("prompt")));
    // Runs without a prompt bank.
    let p = model.predict(&bag(&cfg, 3, 7), None).unwrap();
    assert_eq!(p.kept_mask, vec![true; 3]);
    assert!(p.stage_thresholds.is_empty());

    let full = MilModel::new(small_config(), 7).unwrap();
    assert!(full.params.contains("stage0.attn.router_routed"));
    assert!(full.params.contains(PROJECTION_PARAM));
}

#[test]
fn classification_survives_aggressive_pruning() {
    let mut cfg = small_config();
    cfg.mfs.beta_schedule = vec![10.0, 10.0];
    let model = MilModel::new(cfg.clone(), 8).unwrap();
    let p = model.predict(&bag(&cfg, 7, 8), Some(&bank(&cfg, 8))).unwrap();
    assert_eq!(p.kept_mask.iter().filter(|&&k| k).count(), 1);
    assert!(p.logits.iter().all(|v| v.is_finite()));
}

#[test]
fn replaying_decisions_reproduces_the_loss() {
    let cfg = small_config();
    let model = MilModel::new(cfg.clone(), 9).unwrap();
    let pb = bank(&cfg, 9);
    let b = bag(&cfg, 4, 9);
    let mut t = Tape::new();
    let (_, first, fwd) = case_loss_on_tape(&mut t, &b, &model.params, &cfg, Some(&pb), None).unwrap();
    let mut t2 = Tape::new();
    let (_, replay, fwd2) =
        case_loss_on_tape(&mut t2, &b, &model.params, &cfg, Some(&pb), Some(&fwd.decisions)).unwrap();
    assert_eq!(first, replay);
    assert_eq!(fwd.decisions, fwd2.decisions);
    assert!(first.ppl > 0.0 && first.ce > 0.0);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let cfg = small_config();
    let mut model = MilModel::new(cfg.clone(), 10).unwrap();
    let pb = bank(&cfg, 10);
    let b = bag(&cfg, 3, 10);
    let mut t = Tape::new();
    let (_, _, fwd) = case_loss_on_tape(&mut t, &b, &model.params, &cfg, Some(&pb), None).unwrap();
    let frozen = fwd.decisions;
    let report = grad_check(&mut model.params, &GradCheckConfig::default(), |p, t| {
        Ok(case_loss_on_tape(t, &b, p, &cfg, Some(&pb), Some(&frozen))?.0)
    })
    .unwrap();
    assert!(report.passed, "{report:?}");
}

fn pooling_config(kind: Aggregator) -> (ModelConfig, ParamStore) {
    let cfg = ModelConfig {
        d_in: 2,
        d_model: 2,
        n_classes: 2,
        aggregator: kind,
        moae: MoaeConfig {
            d_model: 2,
            heads: 2,
            shared_heads: 1,
            top_k: 1,
            ..MoaeConfig::default()
        },
        abmil_hidden: 3,
        ..ModelConfig::default()
    };
    let mut params = MilModel::new(cfg.clone(), 11).unwrap().params;
    params.set_value("input.weight", Tensor::identity(2)).unwrap();
    params.set_value("head.weight", Tensor::identity(2)).unwrap();
    (cfg, params)
}

fn two_instance_bag() -> Bag {
    Bag {
        case_id: "pair".into(),
        instances: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
        label: 0,
        signal_mask: None,
    }
}

#[test]
fn mean_and_max_pooling_by_hand() {
    let (cfg, params) = pooling_config(Aggregator::Mean);
    let p = baseline_aggregate(&two_instance_bag(), &params, &cfg).unwrap();
    assert_eq!(p.logits, vec![0.5, 0.5]);
    let (cfg, params) = pooling_config(Aggregator::Max);
    let p = baseline_aggregate(&two_instance_bag(), &params, &cfg).unwrap();
    assert_eq!(p.logits, vec![1.0, 1.0]);
}

#[test]
fn single_instance_pools_to_itself() {
    let single = Bag {
        instances: Tensor::row(&[0.3, -0.7]),
        ..two_instance_bag()
    };
    for kind in [Aggregator::Mean, Aggregator::Max, Aggregator::Abmil] {
        let (cfg, params) = pooling_config(kind);
        let p = baseline_aggregate(&single, &params, &cfg).unwrap();
        assert!((p.logits[0] - 0.3).abs() < 1e-15 && (p.logits[1] + 0.7).abs() < 1e-15, "{kind:?}");
    }
}

#[test]
fn uniform_gated_attention_is_mean_pooling() {
    let (cfg, mut params) = pooling_config(Aggregator::Abmil);
    params.set_value("abmil.w", Tensor::zeros(&[3, 1])).unwrap();
    let bag = Bag {
        instances: Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.25, 0.0]]).unwrap(),
        ..two_instance_bag()
    };
    let abmil = baseline_aggregate(&bag, &params, &cfg).unwrap();
    let (mcfg, mparams) = pooling_config(Aggregator::Mean);
    let mean = baseline_aggregate(&bag, &mparams, &mcfg).unwrap();
    for (a, b) in abmil.logits.iter().zip(&mean.logits) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(baseline_aggregate(&bag, &params, &small_config()).is_err());
}

#[test]
fn baseline_gradients_check() {
    for kind in [Aggregator::Mean, Aggregator::Max, Aggregator::Abmil] {
        let cfg = ModelConfig {
            aggregator: kind,
            ..small_config()
        };
        let mut model = MilModel::new(cfg.clone(), 12).unwrap();
        let b = bag(&cfg, 4, 12);
        let report = grad_check(&mut model.params, &GradCheckConfig::default(), |p, t| {
            Ok(case_loss_on_tape(t, &b, p, &cfg, None, None)?.0)
        })
        .unwrap();
        assert!(report.passed, "{kind:?}: {report:?}");
    }
}
