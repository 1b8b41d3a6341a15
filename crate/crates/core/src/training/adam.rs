use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MilError, Result};
use crate::numerics::{ParamStore, Tensor};

/// First and second moments per parameter plus the step counter.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One bias-corrected Adam update using the accumulated gradients, which
/// are zeroed afterwards. Nothing is modified if any gradient is non-finite.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState, lr: f64, h: AdamHyper) -> Result<()> {
    for (name, slot) in params.iter() {
        if let Some(i) = slot.grad.data().iter().position(|g| !g.is_finite()) {
            return Err(MilError::NonFinite(format!(
                "gradient of {name} at index {i} is {}",
                slot.grad.data()[i]
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    for (name, slot) in params.iter_mut() {
        let m = state.m.entry(name.to_string()).or_insert_with(|| Tensor::zeros(slot.value.shape()));
        let v = state.v.entry(name.to_string()).or_insert_with(|| Tensor::zeros(slot.value.shape()));
        let (md, vd) = (m.data_mut(), v.data_mut());
        let values = slot.value.data_mut();
        for (i, &g) in slot.grad.data().iter().enumerate() {
            md[i] = h.beta1 * md[i] + (1.0 - h.beta1) * g;
            vd[i] = h.beta2 * vd[i] + (1.0 - h.beta2) * g * g;
            values[i] -= lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + h.eps);
        }
    }
    params.zero_grads();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const H: AdamHyper = AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 };

    fn store(v: f64, g: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::filled(&[1, 3], v)).unwrap();
        p.accumulate_grad("w", &Tensor::filled(&[1, 3], g));
        p
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut p = store(0.5, 0.0);
        let mut s = AdamState::default();
        adam_step(&mut p, &mut s, 1e-3, H).unwrap();
        assert_eq!(p.value("w").unwrap().data(), &[0.5; 3]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_about_lr() {
        let g = 0.37;
        let mut p = store(1.0, g);
        let mut s = AdamState::default();
        adam_step(&mut p, &mut s, 1e-3, H).unwrap();
        let expected = 1.0 - 1e-3 * g / (g + 1e-8);
        for &v in p.value("w").unwrap().data() {
            assert!((v - expected).abs() < 1e-15);
            assert!((v - (1.0 - 1e-3)).abs() < 1e-10);
        }
        assert_eq!(p.grad("w").unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = store(1.0, f64::NAN);
        let mut s = AdamState::default();
        let e = adam_step(&mut p, &mut s, 1e-3, H).unwrap_err().to_string();
        assert!(e.contains('w'), "{e}");
        assert_eq!(s.step, 0);
        assert_eq!(p.value("w").unwrap().data(), &[1.0; 3]);
    }
}
