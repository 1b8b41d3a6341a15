use std::path::PathBuf;

use anyhow::Result;
use milkit::report::CaseReport;

use crate::common::{default_out, load_checkpoint, load_for_checkpoint, log_resolved, usage};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Case id as listed in the dataset manifest.
    #[arg(long = "case")]
    case_id: String,
    /// Report directory (default: inspect next to the checkpoint).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn nearest_ids<'a>(target: &str, ids: impl Iterator<Item = &'a str>, n: usize) -> Vec<&'a str> {
    let mut scored: Vec<(usize, &str)> = ids.map(|id| (strsim::levenshtein(target, id), id)).collect();
    scored.sort();
    scored.into_iter().take(n).map(|(_, id)| id).collect()
}

pub fn run(a: Args) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    log_resolved("model config", &ckpt.config)?;
    let (ds, bank) = load_for_checkpoint(&ckpt, &a.data)?;
    let Some(index) = ds.case_index(&a.case_id) else {
        let near = nearest_ids(&a.case_id, ds.cases().iter().map(|c| c.case_id.as_str()), 5);
        return Err(usage(format!(
            "unknown case id {:?}; nearest ids: {}",
            a.case_id,
            near.join(", ")
        )));
    };
    let bag = ds.bag(index);
    let pred = ckpt.model().predict(&bag, bank.as_ref())?;
    let report = CaseReport::new(&bag.case_id, bag.label, &pred, &ckpt.class_names)?;

    let out = a.out.unwrap_or_else(|| default_out(&a.model, "inspect"));
    let stem: String = bag
        .case_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    report.write(&out, &stem)?;

    println!("case {} ({} instances)", report.case_id, report.scores.len());
    println!("  label {}, predicted {}", report.label, report.predicted);
    for (name, p) in &report.probabilities {
        println!("  p({name}) = {p:.4}");
    }
    if let Some(t) = report.threshold {
        println!("  final threshold {t:.6}");
    }
    println!("  instance  score     kept");
    for (i, (s, k)) in report.scores.iter().zip(&report.kept).enumerate() {
        println!("  {i:>8}  {s:.6}  {}", if *k { "yes" } else { "no" });
    }
    println!("reports written to {}", out.display());
    Ok(())
}
