use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use milkit::checkpoint::Checkpoint;
use milkit::data::{load_prompt_bank, stratified_split, BagDataset, PROMPTS_FILE};
use milkit::model::Bag;
use milkit::{MilError, PromptBank};
use serde::Serialize;

/// Bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    let config = e.chain().any(|c| {
        c.is::<UsageError>() || matches!(c.downcast_ref::<MilError>(), Some(MilError::Config(_)))
    });
    if config {
        2
    } else {
        1
    }
}

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("{what} directory {} does not exist", path.display())));
    }
    Ok(())
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} file {} does not exist", path.display())));
    }
    Ok(())
}

/// Creates `dir`, refusing a non-empty existing directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(usage(format!("{} exists and is not a directory", dir.display())));
        }
        let non_empty = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(usage(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn load_dataset(dir: &Path) -> Result<(BagDataset, Option<PromptBank>)> {
    require_dir(dir, "data")?;
    let ds = BagDataset::load(dir).with_context(|| format!("loading dataset from {}", dir.display()))?;
    let bank = if dir.join(PROMPTS_FILE).exists() {
        Some(load_prompt_bank(dir).with_context(|| format!("loading prompt bank from {}", dir.display()))?)
    } else {
        None
    };
    Ok((ds, bank))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require_file(path, "checkpoint")?;
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

/// Dataset + prompt bank, checked against the checkpoint.
pub fn load_for_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<(BagDataset, Option<PromptBank>)> {
    let (ds, bank) = load_dataset(dir)?;
    ckpt.check_compatible(ds.dim(), ds.class_names(), bank.as_ref().map(|b| b.d_prompt()))?;
    let bank = if ckpt.config.uses_prompts() { bank } else { None };
    Ok((ds, bank))
}

/// Bags of a named split, recomputed from the checkpoint's seed and fractions.
pub fn split_bags(ckpt: &Checkpoint, ds: &BagDataset, split: &str) -> Result<Vec<Bag>> {
    if split == "all" {
        return Ok(ds.bags());
    }
    let s = stratified_split(ds, ckpt.meta.split, ckpt.meta.seed)?;
    let ids = s
        .get(split)
        .map_err(|_| usage(format!("unknown split {split:?} (expected train, val, test or all)")))?;
    if ids.is_empty() {
        return Err(usage(format!("split {split:?} is empty")));
    }
    Ok(ds.bags_by_id(ids)?)
}

/// Logs a resolved configuration block as pretty JSON.
pub fn log_resolved<T: Serialize>(what: &str, value: &T) -> Result<String> {
    let json = serde_json::to_string_pretty(value)?;
    log::info!("resolved {what}:\n{json}");
    Ok(json)
}

pub fn default_out(ckpt: &Path, name: &str) -> PathBuf {
    ckpt.parent().unwrap_or(Path::new(".")).join(name)
}
