use milkit::mfs::{adaptive_threshold, select_tokens};
use proptest::prelude::*;

fn kept(scores: &[f64], alive: &[bool], beta: f64) -> Vec<bool> {
    let t = adaptive_threshold(scores, alive, beta).unwrap();
    select_tokens(scores, alive, t)
}

fn argmax_alive(scores: &[f64], alive: &[bool]) -> usize {
    let mut best = None;
    for (i, (&s, &a)) in scores.iter().zip(alive).enumerate() {
        if a && best.is_none_or(|b: usize| s > scores[b]) {
            best = Some(i);
        }
    }
    best.unwrap()
}

fn case() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (1usize..20).prop_flat_map(|n| {
        (
            prop::collection::vec(1e-3f64..=1.0, n),
            prop::collection::vec(any::<bool>(), n),
            0..n,
        )
            .prop_map(|(s, mut a, force)| {
                a[force] = true;
                (s, a)
            })
    })
}

proptest! {
    #[test]
    fn monotone_in_beta((scores, alive) in case(), b1 in 0.0f64..3.0, b2 in 0.0f64..3.0) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let k_lo = kept(&scores, &alive, lo);
        let k_hi = kept(&scores, &alive, hi);
        let fallback = argmax_alive(&scores, &alive);
        for i in 0..scores.len() {
            prop_assert!(!k_hi[i] || k_lo[i] || i == fallback);
        }
    }

    #[test]
    fn never_empty_and_within_alive((scores, alive) in case(), beta in 0.0f64..20.0) {
        let k = kept(&scores, &alive, beta);
        prop_assert!(k.iter().any(|&x| x));
        prop_assert!(k.iter().zip(&alive).all(|(&k, &a)| !k || a));
    }

    #[test]
    fn nested_stages((scores, alive) in case(), mut betas in prop::collection::vec(0.0f64..2.0, 1..5)) {
        betas.sort_by(f64::total_cmp);
        let mut current = alive;
        for beta in betas {
            let next = kept(&scores, &current, beta);
            prop_assert!(next.iter().zip(&current).all(|(&n, &c)| !n || c));
            current = next;
        }
    }
}

#[test]
fn fallback_on_large_beta() {
    let k = kept(&[0.2, 0.9, 0.9, 0.1], &[true; 4], 10.0);
    assert_eq!(k, vec![false, true, false, false]);
}
