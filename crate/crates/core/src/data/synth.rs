//! Synthetic bags with known signal instances.
//!
//! Each class owns a prototype direction. Abnormal-class bags mix a few
//! signal instances drawn around their class prototype with background
//! instances shared by all classes; normal bags are background only. Class
//! prompts are a fixed random linear image of the prototypes plus noise, so
//! a model has to learn the map from prompt space to token space.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::BagDataset;
use crate::error::{MilError, Result};
use crate::mfs::{PromptBank, PromptEntry};
use crate::model::Bag;
use crate::numerics::Tensor;

const DEFAULT_CLASSES: [(&str, &str, &str); 6] = [
    (
        "DA",
        "duodenal atresia, congenital absence or closure of part of the duodenal lumen",
        "dilated stomach and proximal duodenum, polyhydramnios",
    ),
    (
        "Gastroschisis",
        "full-thickness paraumbilical abdominal wall defect with free-floating bowel",
        "bowel loops outside the abdomen without a covering membrane",
    ),
    (
        "Omphalocele",
        "midline abdominal wall defect with herniated viscera covered by a membrane",
        "membrane-covered mass at the umbilical cord insertion",
    ),
    (
        "RA",
        "renal agenesis, absence of one or both kidneys",
        "empty renal fossa, absent renal artery, oligohydramnios when bilateral",
    ),
    (
        "MCDK",
        "multicystic dysplastic kidney, nonfunctioning kidney replaced by cysts",
        "multiple non-communicating cysts of varying size without normal parenchyma",
    ),
    (
        "Normal",
        "no structural abdominal anomaly",
        "intact abdominal wall, normal stomach, bowel and kidneys",
    ),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub d_in: usize,
    pub d_prompt: usize,
    pub cases_per_class: usize,
    /// Inclusive bag-size range.
    pub bag_size: (usize, usize),
    /// Range of the share of signal instances in abnormal bags.
    pub signal_fraction: (f64, f64),
    /// Norm of every class prototype.
    pub prototype_scale: f64,
    /// Spread of signal instances around their prototype.
    pub noise_std: f64,
    /// Spread of background instances around the origin.
    pub background_std: f64,
    /// Noise added to the prompt embeddings.
    pub prompt_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 6,
            d_in: 512,
            d_prompt: 768,
            cases_per_class: 100,
            bag_size: (4, 16),
            signal_fraction: (0.2, 0.5),
            prototype_scale: 4.0,
            noise_std: 0.5,
            background_std: 1.0,
            prompt_noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MilError::Config(m.to_string()));
        if self.n_classes < 2 {
            return bad("synthetic data needs at least 2 classes");
        }
        if self.d_in == 0 || self.d_prompt == 0 || self.cases_per_class == 0 {
            return bad("dimensions and cases_per_class must be positive");
        }
        if self.bag_size.0 == 0 || self.bag_size.0 > self.bag_size.1 {
            return bad("bag_size must satisfy 1 <= lo <= hi");
        }
        let (flo, fhi) = self.signal_fraction;
        if !(flo > 0.0 && flo <= fhi && fhi <= 1.0) {
            return bad("signal_fraction must satisfy 0 < lo <= hi <= 1");
        }
        for v in [self.prototype_scale, self.noise_std, self.background_std, self.prompt_noise] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("scales and noise levels must be finite and nonnegative");
            }
        }
        Ok(())
    }

    /// The last class is the all-background "Normal" class.
    pub fn normal_class(&self) -> usize {
        self.n_classes - 1
    }

    pub fn class_names(&self) -> Vec<String> {
        if self.n_classes == DEFAULT_CLASSES.len() {
            DEFAULT_CLASSES.iter().map(|c| c.0.to_string()).collect()
        } else {
            let mut names: Vec<String> = (0..self.n_classes - 1).map(|c| format!("Anomaly{c}")).collect();
            names.push("Normal".into());
            names
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub dataset: BagDataset,
    pub prompts: PromptBank,
    /// Class prototypes, `C × d_in`.
    pub prototypes: Tensor,
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite std")
}

/// Random directions scaled to `scale`, orthogonalized when `C ≤ d`.
fn prototypes(rng: &mut ChaCha8Rng, c: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    let unit = normal(1.0);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(c);
    for _ in 0..c {
        let mut v: Vec<f64> = (0..d).map(|_| unit.sample(rng)).collect();
        if out.len() < d {
            for u in &out {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        out.push(v);
    }
    out.into_iter()
        .map(|v| v.into_iter().map(|a| a * scale).collect())
        .collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.n_classes;
    let protos = prototypes(&mut rng, c, cfg.d_in, cfg.prototype_scale);

    // Fixed prompt-space map: d_prompt × d_in.
    let map_dist = normal(1.0 / (cfg.d_in as f64).sqrt());
    let map: Vec<f64> = (0..cfg.d_prompt * cfg.d_in).map(|_| map_dist.sample(&mut rng)).collect();
    let prompt_noise = normal(cfg.prompt_noise);
    let mut prompt_data = Vec::with_capacity(c * cfg.d_prompt);
    for proto in &protos {
        for r in 0..cfg.d_prompt {
            let row = &map[r * cfg.d_in..(r + 1) * cfg.d_in];
            let v: f64 = row.iter().zip(proto).map(|(a, b)| a * b).sum::<f64>() + prompt_noise.sample(&mut rng);
            // Stored as f32 on disk; round now so saved banks reload exactly.
            prompt_data.push(f64::from(v as f32));
        }
    }
    let names = cfg.class_names();
    let entries = names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let (definition, signs) = if c == DEFAULT_CLASSES.len() {
                (DEFAULT_CLASSES[i].1.to_string(), DEFAULT_CLASSES[i].2.to_string())
            } else {
                (format!("synthetic class {name}"), String::new())
            };
            PromptEntry {
                class_name: name.clone(),
                definition,
                signs,
            }
        })
        .collect();
    let prompts = PromptBank::new(entries, Tensor::matrix(c, cfg.d_prompt, prompt_data)?)?;

    let signal_noise = normal(cfg.noise_std);
    let background = normal(cfg.background_std);
    let mut bags = Vec::with_capacity(c * cfg.cases_per_class);
    for (label, (name, proto)) in names.iter().zip(&protos).enumerate() {
        for k in 0..cfg.cases_per_class {
            let n = rng.random_range(cfg.bag_size.0..=cfg.bag_size.1);
            let n_signal = if label == cfg.normal_class() {
                0
            } else {
                let f = rng.random_range(cfg.signal_fraction.0..=cfg.signal_fraction.1);
                ((f * n as f64).ceil() as usize).clamp(1, n)
            };
            let mut mask = vec![false; n];
            for i in sample(&mut rng, n, n_signal) {
                mask[i] = true;
            }
            let mut data = Vec::with_capacity(n * cfg.d_in);
            for &is_signal in &mask {
                for &mu in proto {
                    let v = if is_signal {
                        mu + signal_noise.sample(&mut rng)
                    } else {
                        background.sample(&mut rng)
                    };
                    data.push(f64::from(v as f32));
                }
            }
            bags.push(Bag {
                case_id: format!("{name}-{k:04}"),
                instances: Tensor::matrix(n, cfg.d_in, data)?,
                label,
                signal_mask: Some(mask),
            });
        }
    }
    let proto_data = protos.into_iter().flatten().collect();
    Ok(SyntheticData {
        dataset: BagDataset::from_bags(names, &bags)?,
        prompts,
        prototypes: Tensor::matrix(c, cfg.d_in, proto_data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            d_in: 16,
            d_prompt: 12,
            cases_per_class: 5,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn counts_match_config() {
        let data = generate_synthetic(&small()).unwrap();
        let ds = &data.dataset;
        assert_eq!(ds.len(), 30);
        for c in 0..6 {
            assert_eq!(ds.cases().iter().filter(|r| r.label == c).count(), 5);
        }
        assert!(ds.cases().iter().all(|r| (4..=16).contains(&r.n)));
        assert_eq!(data.prompts.embeddings().shape(), &[6, 12]);
        assert_eq!(ds.class_names()[0], "DA");
        assert_eq!(data.prompts.entries()[5].class_name, "Normal");
    }

    #[test]
    fn full_signal_fraction() {
        let cfg = SynthConfig {
            signal_fraction: (1.0, 1.0),
            ..small()
        };
        let data = generate_synthetic(&cfg).unwrap();
        for bag in data.dataset.bags() {
            let mask = bag.signal_mask.unwrap();
            if bag.label == cfg.normal_class() {
                assert!(mask.iter().all(|&m| !m));
            } else {
                assert!(mask.iter().all(|&m| m));
            }
        }
    }

    #[test]
    fn noiseless_signal_equals_prototype() {
        let cfg = SynthConfig {
            noise_std: 0.0,
            background_std: 0.0,
            ..small()
        };
        let data = generate_synthetic(&cfg).unwrap();
        for bag in data.dataset.bags() {
            let proto = data.prototypes.row_slice(bag.label);
            for (i, &s) in bag.signal_mask.as_ref().unwrap().iter().enumerate() {
                let row = bag.instances.row_slice(i);
                if s {
                    for (a, b) in row.iter().zip(proto) {
                        assert_eq!(*a, f64::from(*b as f32));
                    }
                } else {
                    assert!(row.iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn infeasible_configs() {
        let cfg = SynthConfig {
            bag_size: (5, 4),
            ..small()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(MilError::Config(_))));
        let cfg = SynthConfig {
            signal_fraction: (0.0, 0.5),
            ..small()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn prototypes_are_orthogonal() {
        let data = generate_synthetic(&small()).unwrap();
        let p = &data.prototypes;
        for a in 0..6 {
            for b in 0..6 {
                let dot: f64 = p.row_slice(a).iter().zip(p.row_slice(b)).map(|(x, y)| x * y).sum();
                let expected = if a == b { 16.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-9);
            }
        }
    }
}
