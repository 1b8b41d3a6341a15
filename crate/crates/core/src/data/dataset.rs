//! On-disk bag datasets: `header.json`, `manifest.jsonl`, `embeddings.f32`
//! and an optional `masks.jsonl` of ground-truth signal instances.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::blob::{decode_f32_matrix, encode_f32_matrix};
use crate::error::{MilError, Result};
use crate::model::Bag;
use crate::numerics::Tensor;

pub const HEADER_FILE: &str = "header.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.f32";
pub const MASKS_FILE: &str = "masks.jsonl";
const FORMAT_NAME: &str = "milkit-bags";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub n_total: usize,
    pub n_cases: usize,
    pub class_names: Vec<String>,
    pub embeddings_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseRecord {
    pub case_id: String,
    pub label: usize,
    pub n: usize,
    pub row_offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskRecord {
    case_id: String,
    mask: Vec<bool>,
}

/// Cases over one shared embedding blob, immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct BagDataset {
    dim: usize,
    class_names: Vec<String>,
    cases: Vec<CaseRecord>,
    embeddings: Vec<f32>,
    masks: Option<Vec<Vec<bool>>>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

impl BagDataset {
    /// Builds a dataset from explicit records; rows are validated.
    pub fn new(
        dim: usize,
        class_names: Vec<String>,
        cases: Vec<CaseRecord>,
        embeddings: Vec<f32>,
        masks: Option<Vec<Vec<bool>>>,
    ) -> Result<Self> {
        let ds = BagDataset {
            dim,
            class_names,
            cases,
            embeddings,
            masks,
        };
        ds.validate().map_err(MilError::Input)?;
        Ok(ds)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.dim == 0 {
            return Err("embedding dimension must be positive".into());
        }
        if self.class_names.is_empty() {
            return Err("no class names".into());
        }
        if !self.embeddings.len().is_multiple_of(self.dim) {
            return Err(format!(
                "embedding blob length {} is not a multiple of dim {}",
                self.embeddings.len(),
                self.dim
            ));
        }
        let n_total = self.embeddings.len() / self.dim;
        let mut seen = HashSet::new();
        let mut next_free = 0;
        for (i, c) in self.cases.iter().enumerate() {
            if !seen.insert(c.case_id.as_str()) {
                return Err(format!("duplicate case id {}", c.case_id));
            }
            if c.n == 0 {
                return Err(format!("case {} has no instances", c.case_id));
            }
            if c.label >= self.class_names.len() {
                return Err(format!(
                    "case {} label {} exceeds {} classes",
                    c.case_id,
                    c.label,
                    self.class_names.len()
                ));
            }
            if c.row_offset < next_free {
                return Err(format!(
                    "case {} (record {}) row_offset {} overlaps rows ending at {}",
                    c.case_id, i, c.row_offset, next_free
                ));
            }
            next_free = c.row_offset + c.n;
            if next_free > n_total {
                return Err(format!(
                    "case {} rows {}..{} exceed the {} embedding rows",
                    c.case_id, c.row_offset, next_free, n_total
                ));
            }
        }
        if let Some(masks) = &self.masks {
            if masks.len() != self.cases.len() {
                return Err(format!("{} masks for {} cases", masks.len(), self.cases.len()));
            }
            for (m, c) in masks.iter().zip(&self.cases) {
                if m.len() != c.n {
                    return Err(format!("mask of case {} has {} entries, expected {}", c.case_id, m.len(), c.n));
                }
            }
        }
        Ok(())
    }

    /// Packs bags contiguously in the given order.
    pub fn from_bags(class_names: Vec<String>, bags: &[Bag]) -> Result<Self> {
        let dim = bags
            .first()
            .map(|b| b.instances.cols())
            .ok_or_else(|| MilError::Input("no bags".into()))?;
        let mut cases = Vec::with_capacity(bags.len());
        let mut embeddings = Vec::new();
        let with_masks = bags.iter().any(|b| b.signal_mask.is_some());
        let mut masks = Vec::new();
        for b in bags {
            if b.instances.cols() != dim {
                return Err(MilError::Shape {
                    op: "dataset bags",
                    left: b.instances.shape().to_vec(),
                    right: vec![b.len(), dim],
                });
            }
            cases.push(CaseRecord {
                case_id: b.case_id.clone(),
                label: b.label,
                n: b.len(),
                row_offset: embeddings.len() / dim,
            });
            embeddings.extend(b.instances.data().iter().map(|&v| v as f32));
            if with_masks {
                masks.push(b.signal_mask.clone().unwrap_or_else(|| vec![false; b.len()]));
            }
        }
        BagDataset::new(dim, class_names, cases, embeddings, with_masks.then_some(masks))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn cases(&self) -> &[CaseRecord] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn n_total(&self) -> usize {
        self.embeddings.len() / self.dim
    }

    pub fn has_masks(&self) -> bool {
        self.masks.is_some()
    }

    pub fn case_index(&self, case_id: &str) -> Option<usize> {
        self.cases.iter().position(|c| c.case_id == case_id)
    }

    /// Materializes case `i` as a bag of `f64` instances.
    pub fn bag(&self, i: usize) -> Bag {
        let c = &self.cases[i];
        let start = c.row_offset * self.dim;
        let data = self.embeddings[start..start + c.n * self.dim]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        Bag {
            case_id: c.case_id.clone(),
            instances: Tensor::matrix(c.n, self.dim, data).expect("validated rows"),
            label: c.label,
            signal_mask: self.masks.as_ref().map(|m| m[i].clone()),
        }
    }

    pub fn bags(&self) -> Vec<Bag> {
        (0..self.len()).map(|i| self.bag(i)).collect()
    }

    /// Bags for the given case ids, in that order.
    pub fn bags_by_id(&self, ids: &[String]) -> Result<Vec<Bag>> {
        ids.iter()
            .map(|id| {
                self.case_index(id)
                    .map(|i| self.bag(i))
                    .ok_or_else(|| MilError::Input(format!("unknown case id {id}")))
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| MilError::io(dir, e))?;
        let blob = encode_f32_matrix(self.n_total(), self.dim, &self.embeddings)?;
        let header = DatasetHeader {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            dim: self.dim,
            n_total: self.n_total(),
            n_cases: self.cases.len(),
            class_names: self.class_names.clone(),
            embeddings_sha256: sha256_hex(&blob),
        };
        let mut manifest = String::new();
        for c in &self.cases {
            manifest.push_str(&serde_json::to_string(c)?);
            manifest.push('\n');
        }
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(|e| MilError::io(p, e))
        };
        write(HEADER_FILE, (serde_json::to_string_pretty(&header)? + "\n").as_bytes())?;
        write(MANIFEST_FILE, manifest.as_bytes())?;
        write(EMBEDDINGS_FILE, &blob)?;
        if let Some(masks) = &self.masks {
            let mut out = String::new();
            for (m, c) in masks.iter().zip(&self.cases) {
                let rec = MaskRecord {
                    case_id: c.case_id.clone(),
                    mask: m.clone(),
                };
                out.push_str(&serde_json::to_string(&rec)?);
                out.push('\n');
            }
            write(MASKS_FILE, out.as_bytes())?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let header_path = dir.join(HEADER_FILE);
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(MilError::format(dir, "missing manifest (manifest.jsonl)"));
        }
        let header_text = fs::read_to_string(&header_path).map_err(|e| MilError::io(&header_path, e))?;
        let header: DatasetHeader = serde_json::from_str(&header_text)
            .map_err(|e| MilError::format(&header_path, format!("corrupt header: {e}")))?;
        if header.format != FORMAT_NAME || header.version != FORMAT_VERSION {
            return Err(MilError::format(
                &header_path,
                format!(
                    "unsupported format {} v{} (expected {FORMAT_NAME} v{FORMAT_VERSION})",
                    header.format, header.version
                ),
            ));
        }

        let cases: Vec<CaseRecord> = read_jsonl(&manifest_path)?;
        if cases.len() != header.n_cases {
            return Err(MilError::format(
                &manifest_path,
                format!("{} records but header declares {}", cases.len(), header.n_cases),
            ));
        }

        let emb_path = dir.join(EMBEDDINGS_FILE);
        let blob = fs::read(&emb_path).map_err(|e| MilError::io(&emb_path, e))?;
        if sha256_hex(&blob) != header.embeddings_sha256 {
            return Err(MilError::format(&emb_path, "checksum does not match header.json"));
        }
        let (rows, cols, embeddings) = decode_f32_matrix(&blob, &emb_path)?;
        if cols != header.dim || rows != header.n_total {
            return Err(MilError::format(
                &emb_path,
                format!(
                    "blob is {rows}×{cols} but header declares {}×{}",
                    header.n_total, header.dim
                ),
            ));
        }

        let masks_path = dir.join(MASKS_FILE);
        let masks = if masks_path.is_file() {
            let records: Vec<MaskRecord> = read_jsonl(&masks_path)?;
            if records.len() != cases.len() || records.iter().zip(&cases).any(|(m, c)| m.case_id != c.case_id) {
                return Err(MilError::format(&masks_path, "mask records do not follow the manifest order"));
            }
            Some(records.into_iter().map(|r| r.mask).collect())
        } else {
            None
        };

        BagDataset::new(cols, header.class_names, cases, embeddings, masks)
            .map_err(|e| MilError::format(&manifest_path, e.to_string()))
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| MilError::io(path, e))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for (lineno, line) in text.split_inclusive('\n').enumerate() {
        let trimmed = line.trim_end_matches('\n');
        if !trimmed.trim().is_empty() {
            let rec = serde_json::from_str(trimmed).map_err(|e| {
                MilError::format(
                    path,
                    format!("line {} (byte {}): {e}", lineno + 1, offset + e.column().saturating_sub(1)),
                )
            })?;
            out.push(rec);
        }
        offset += line.len();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> BagDataset {
        BagDataset::new(
            2,
            vec!["a".into(), "b".into()],
            vec![
                CaseRecord {
                    case_id: "x".into(),
                    label: 0,
                    n: 1,
                    row_offset: 0,
                },
                CaseRecord {
                    case_id: "y".into(),
                    label: 1,
                    n: 2,
                    row_offset: 1,
                },
            ],
            vec![0.5, -1.0, 2.0, 3.0, 0.25, 0.125],
            None,
        )
        .unwrap()
    }

    #[test]
    fn exact_values_after_load() {
        let dir = tempfile::tempdir().unwrap();
        fixture().save(dir.path()).unwrap();
        let ds = BagDataset::load(dir.path()).unwrap();
        assert_eq!(ds, fixture());
        let y = ds.bag(1);
        assert_eq!(y.instances.data(), &[2.0, 3.0, 0.25, 0.125]);
        assert_eq!(y.label, 1);
        assert_eq!(ds.bag(0).instances.data(), &[0.5, -1.0]);
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let msg = BagDataset::load(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("missing manifest"), "{msg}");
    }

    #[test]
    fn rejects_overlapping_offsets() {
        let mut cases = fixture().cases().to_vec();
        cases[1].row_offset = 0;
        let err = BagDataset::new(2, vec!["a".into(), "b".into()], cases, vec![0.0; 6], None).unwrap_err();
        assert!(err.to_string().contains("overlaps"), "{err}");
    }

    #[test]
    fn corrupt_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        fixture().save(dir.path()).unwrap();
        let emb = dir.path().join(EMBEDDINGS_FILE);
        let mut bytes = fs::read(&emb).unwrap();
        bytes[20] ^= 0x40;
        fs::write(&emb, &bytes).unwrap();
        let msg = BagDataset::load(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("checksum"), "{msg}");

        fixture().save(dir.path()).unwrap();
        let man = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&man).unwrap().replace("\"n\":2", "\"n\":\"two\"");
        fs::write(&man, text).unwrap();
        let msg = BagDataset::load(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("byte"), "{msg}");

        fixture().save(dir.path()).unwrap();
        fs::write(dir.path().join(HEADER_FILE), "{not json").unwrap();
        let msg = BagDataset::load(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("corrupt header"), "{msg}");
    }

    #[test]
    fn masks_round_trip() {
        let mut bags = fixture().bags();
        bags[1].signal_mask = Some(vec![true, false]);
        let ds = BagDataset::from_bags(vec!["a".into(), "b".into()], &bags).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = BagDataset::load(dir.path()).unwrap();
        assert_eq!(back.bag(1).signal_mask, Some(vec![true, false]));
        assert_eq!(back.bag(0).signal_mask, Some(vec![false]));
    }
}
