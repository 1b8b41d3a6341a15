use std::path::PathBuf;

use anyhow::{Context, Result};
use milkit::data::{generate_synthetic, save_prompt_bank, SynthConfig};

use crate::common::{log_resolved, prepare_out_dir};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Output directory for the dataset and prompt bank.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    cases_per_class: usize,
    /// Instance embedding width.
    #[arg(long, default_value_t = 512)]
    dim: usize,
    /// Prompt embedding width.
    #[arg(long, default_value_t = 768)]
    prompt_dim: usize,
    #[arg(long, default_value_t = 4)]
    bag_min: usize,
    #[arg(long, default_value_t = 16)]
    bag_max: usize,
    #[arg(long, default_value_t = 0.2)]
    signal_min: f64,
    #[arg(long, default_value_t = 0.5)]
    signal_max: f64,
    #[arg(long, default_value_t = 4.0)]
    prototype_scale: f64,
    /// Spread of signal instances around their class prototype.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    /// Spread of background instances.
    #[arg(long, default_value_t = 1.0)]
    background: f64,
    #[arg(long, default_value_t = 0.05)]
    prompt_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

pub fn run(a: Args) -> Result<()> {
    let cfg = SynthConfig {
        n_classes: a.classes,
        d_in: a.dim,
        d_prompt: a.prompt_dim,
        cases_per_class: a.cases_per_class,
        bag_size: (a.bag_min, a.bag_max),
        signal_fraction: (a.signal_min, a.signal_max),
        prototype_scale: a.prototype_scale,
        noise_std: a.noise,
        background_std: a.background,
        prompt_noise: a.prompt_noise,
        seed: a.seed,
    };
    log_resolved("synth config", &cfg)?;
    cfg.validate()?;
    prepare_out_dir(&a.out, a.force)?;
    let data = generate_synthetic(&cfg)?;
    data.dataset
        .save(&a.out)
        .with_context(|| format!("writing dataset to {}", a.out.display()))?;
    save_prompt_bank(&data.prompts, &a.out)?;
    println!(
        "wrote {} cases ({} instances, dim {}) in {} classes to {}",
        data.dataset.len(),
        data.dataset.n_total(),
        data.dataset.dim(),
        data.dataset.n_classes(),
        a.out.display()
    );
    for (c, name) in data.dataset.class_names().iter().enumerate() {
        let n = data.dataset.cases().iter().filter(|r| r.label == c).count();
        println!("  {name:<14} {n}");
    }
    Ok(())
}
