use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use milkit::report::{render_table, write_metrics_csv};
use milkit::training::evaluate;

use crate::common::{default_out, load_checkpoint, load_for_checkpoint, log_resolved, split_bags};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, val, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Report directory (default: eval_<split> next to the checkpoint).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(a: Args) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    log_resolved("model config", &ckpt.config)?;
    log::info!("split {:?}, seed {}, fractions {:?}", a.split, ckpt.meta.seed, ckpt.meta.split);
    let (ds, bank) = load_for_checkpoint(&ckpt, &a.data)?;
    let bags = split_bags(&ckpt, &ds, &a.split)?;
    let model = ckpt.model();
    let (report, preds) = evaluate(&model, &bags, bank.as_ref(), &ckpt.class_names)?;

    let out = a.out.unwrap_or_else(|| default_out(&a.model, &format!("eval_{}", a.split)));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_metrics_csv(&report, &out.join("metrics.csv"))?;
    let mut csv = String::from("case_id,label,predicted");
    for name in &ckpt.class_names {
        let _ = write!(csv, ",p_{name}");
    }
    csv.push('\n');
    for (bag, p) in bags.iter().zip(&preds) {
        let _ = write!(
            csv,
            "{},{},{}",
            bag.case_id, ckpt.class_names[bag.label], ckpt.class_names[p.predicted_class]
        );
        for q in &p.probabilities {
            let _ = write!(csv, ",{q:.6}");
        }
        csv.push('\n');
    }
    let pred_path = out.join("predictions.csv");
    fs::write(&pred_path, csv).with_context(|| format!("writing {}", pred_path.display()))?;

    println!("{} cases from split {:?}", bags.len(), a.split);
    print!("{}", render_table(&report));
    println!("reports written to {}", out.display());
    Ok(())
}
