use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use milkit::checkpoint::{Checkpoint, TrainingMeta};
use milkit::data::stratified_split;
use milkit::training::{history_csv, Trainer};
use milkit::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::common::{load_dataset, log_resolved, prepare_out_dir, require_file, usage};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const SPLIT_FILE: &str = "split.json";

/// Contents of `--config`; missing sections and fields take defaults.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Dataset directory (with prompts.json unless all prompt modules are off).
    #[arg(long)]
    data: PathBuf,
    /// JSON file with `model` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoint, history and resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Disable knowledge-driven token selection.
    #[arg(long)]
    no_mfs: bool,
    /// Use plain multi-head attention instead of the expert mixture.
    #[arg(long)]
    no_moae: bool,
    /// Drop the prototype loss term.
    #[arg(long)]
    no_ppl: bool,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

pub fn run(a: Args) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            require_file(path, "config")?;
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<RunConfig>(&text)
                .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    cfg.model.use_mfs &= !a.no_mfs;
    cfg.model.use_moae &= !a.no_moae;
    cfg.model.use_ppl &= !a.no_ppl;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    let resolved = log_resolved("run config", &cfg)?;
    cfg.model.validate()?;
    cfg.train.validate()?;

    let (ds, bank) = load_dataset(&a.data)?;
    if ds.dim() != cfg.model.d_in {
        return Err(usage(format!(
            "config/data mismatch in d_in: config has {}, data has {}",
            cfg.model.d_in,
            ds.dim()
        )));
    }
    if ds.n_classes() != cfg.model.n_classes {
        return Err(usage(format!(
            "config/data mismatch in n_classes: config has {}, data has {}",
            cfg.model.n_classes,
            ds.n_classes()
        )));
    }
    let bank = if cfg.model.uses_prompts() {
        let bank = bank.ok_or_else(|| {
            usage(format!(
                "{} has no prompt bank, which token selection and the prototype loss need",
                a.data.display()
            ))
        })?;
        if bank.d_prompt() != cfg.model.d_prompt {
            return Err(usage(format!(
                "config/data mismatch in d_prompt: config has {}, prompt bank has {}",
                cfg.model.d_prompt,
                bank.d_prompt()
            )));
        }
        Some(bank)
    } else {
        None
    };

    prepare_out_dir(&a.out, a.force)?;
    let split = stratified_split(&ds, cfg.train.split, cfg.train.seed)?;
    for w in &split.warnings {
        log::warn!("{w}");
    }
    let train_bags = ds.bags_by_id(&split.train)?;
    let val_bags = ds.bags_by_id(&split.val)?;
    log::info!(
        "split: {} train, {} val, {} test cases",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let outcome = Trainer::new(cfg.model.clone(), cfg.train.clone(), &train_bags, &val_bags, bank.as_ref())?.run()?;
    let meta = TrainingMeta {
        seed: cfg.train.seed,
        epoch: outcome.best_epoch,
        val_weighted_accuracy: outcome.best_val,
        split: cfg.train.split,
    };
    let ckpt = Checkpoint::new(&outcome.best_model, ds.class_names().to_vec(), meta)?;
    ckpt.save(&a.out.join(CHECKPOINT_FILE))?;
    let write = |name: &str, body: String| {
        let p = a.out.join(name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    };
    write(HISTORY_FILE, history_csv(&outcome.history))?;
    write(CONFIG_FILE, resolved + "\n")?;
    write(
        SPLIT_FILE,
        serde_json::to_string_pretty(&serde_json::json!({
            "train": split.train,
            "val": split.val,
            "test": split.test,
        }))? + "\n",
    )?;
    match outcome.best_val {
        Some(v) => println!(
            "best validation balanced accuracy {v:.4} at epoch {}; checkpoint {}",
            outcome.best_epoch,
            a.out.join(CHECKPOINT_FILE).display()
        ),
        None => println!(
            "no validation cases; kept epoch {}; checkpoint {}",
            outcome.best_epoch,
            a.out.join(CHECKPOINT_FILE).display()
        ),
    }
    Ok(())
}
