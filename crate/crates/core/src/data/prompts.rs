//! Prompt bank files: `prompts.json` metadata and a `prompts.f32` matrix of
//! sentence embeddings (`C × d_prompt`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::blob::{read_f32_matrix, write_f32_matrix};
use crate::error::{MilError, Result};
use crate::mfs::{PromptBank, PromptEntry};
use crate::numerics::Tensor;

pub const PROMPTS_FILE: &str = "prompts.json";
pub const PROMPT_EMBEDDINGS_FILE: &str = "prompts.f32";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptsMeta {
    n_classes: usize,
    d_prompt: usize,
    classes: Vec<PromptEntry>,
}

pub fn save_prompt_bank(bank: &PromptBank, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MilError::io(dir, e))?;
    let meta = PromptsMeta {
        n_classes: bank.n_classes(),
        d_prompt: bank.d_prompt(),
        classes: bank.entries().to_vec(),
    };
    let path = dir.join(PROMPTS_FILE);
    fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(|e| MilError::io(&path, e))?;
    let data: Vec<f32> = bank.embeddings().data().iter().map(|&v| v as f32).collect();
    write_f32_matrix(&dir.join(PROMPT_EMBEDDINGS_FILE), bank.n_classes(), bank.d_prompt(), &data)
}

pub fn load_prompt_bank(dir: &Path) -> Result<PromptBank> {
    let path = dir.join(PROMPTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| MilError::io(&path, e))?;
    let meta: PromptsMeta =
        serde_json::from_str(&text).map_err(|e| MilError::format(&path, format!("corrupt prompt metadata: {e}")))?;
    let emb_path = dir.join(PROMPT_EMBEDDINGS_FILE);
    let (rows, cols, data) = read_f32_matrix(&emb_path)?;
    if rows != meta.n_classes || cols != meta.d_prompt || meta.classes.len() != meta.n_classes {
        return Err(MilError::format(
            &emb_path,
            format!(
                "embeddings are {rows}×{cols}, metadata declares {}×{} with {} classes",
                meta.n_classes,
                meta.d_prompt,
                meta.classes.len()
            ),
        ));
    }
    let t = Tensor::matrix(rows, cols, data.into_iter().map(f64::from).collect())?;
    PromptBank::new(meta.classes, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let entries = vec![
            PromptEntry {
                class_name: "A".into(),
                definition: "first".into(),
                signs: "s1".into(),
            },
            PromptEntry {
                class_name: "B".into(),
                definition: "second".into(),
                signs: "s2".into(),
            },
        ];
        let bank = PromptBank::new(entries, Tensor::matrix(2, 3, vec![0.5, 1.0, -2.0, 0.0, 0.25, 8.0]).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_prompt_bank(&bank, dir.path()).unwrap();
        assert_eq!(load_prompt_bank(dir.path()).unwrap(), bank);
        let json = fs::read_to_string(dir.path().join(PROMPTS_FILE)).unwrap();
        assert!(json.contains("\"definition\": \"first\""));
    }

    #[test]
    fn mismatched_dimensions() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(PROMPTS_FILE),
            r#"{"n_classes": 2, "d_prompt": 4, "classes": []}"#,
        )
        .unwrap();
        write_f32_matrix(&dir.path().join(PROMPT_EMBEDDINGS_FILE), 2, 3, &[0.0; 6]).unwrap();
        assert!(load_prompt_bank(dir.path()).is_err());
    }
}
