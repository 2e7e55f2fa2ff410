use std::fs;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;

use bast_harness::experiment::{self, AttackPlan};
use bast_harness::synth;
use bast_harness::{idx, ExperimentConfig};

#[derive(Parser)]
#[command(name = "bast", version, about = "Ensemble adversarial attacks on small classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set epsilon=8/255`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also settable through BAST_OUTPUT_DIR.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Comma separated strategy list.
    #[arg(long)]
    strategies: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    eval_size: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic digit splits as IDX files.
    GenData(Common),
    /// Train the model roster and save the weights.
    Train(Common),
    /// Attack the evaluation set with saved models.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Use the m:n sweep grid instead of the strategy list.
        #[arg(long)]
        sweep: bool,
    },
    /// Score stored adversarial images and write the reports.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sweep: bool,
    },
    /// Train, attack and evaluate.
    Run(Common),
    /// Train, then run BAST over the m:n grid.
    Sweep(Common),
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply_env();
        let mut sets = self.overrides.clone();
        if let Some(seed) = self.seed {
            sets.push(format!("seed={seed}"));
        }
        if let Some(dir) = &self.output_dir {
            sets.push(format!("output_dir={}", dir.display()));
        }
        if let Some(s) = &self.strategies {
            sets.push(format!("strategies={s}"));
        }
        if let Some(e) = &self.epsilon {
            sets.push(format!("epsilon={e}"));
        }
        if let Some(n) = self.eval_size {
            sets.push(format!("eval_size={n}"));
        }
        for s in &sets {
            cfg.apply_override(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn plans(cfg: &ExperimentConfig, sweep: bool) -> Vec<AttackPlan> {
    if sweep {
        AttackPlan::sweep(cfg)
    } else {
        AttackPlan::strategies(cfg)
    }
}

fn gen_data(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let dir = cfg.output_dir.join("data");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let (train, test) = experiment::synthetic_splits(cfg);
    for (name, synth_cfg) in [("train", train), ("test", test)] {
        let (images, labels) = synth::generate(&synth_cfg);
        let img = dir.join(format!("{name}-images-idx3-ubyte"));
        let lab = dir.join(format!("{name}-labels-idx1-ubyte"));
        fs::write(&img, idx::encode_images(&images)).with_context(|| img.display().to_string())?;
        fs::write(&lab, idx::encode_labels(&labels)).with_context(|| lab.display().to_string())?;
        println!("{}: {} images", img.display(), images.count);
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::GenData(common) => gen_data(&common.load()?)?,
        Command::Train(common) => {
            let cfg = common.load()?;
            experiment::train_stage(&cfg)?;
            println!("models written to {}", cfg.output_dir.join("models").display());
        }
        Command::Attack { common, sweep } => {
            let cfg = common.load()?;
            let models = experiment::load_models(&cfg)?;
            let (eval, _) = experiment::attack_stage(&cfg, &models, &plans(&cfg, sweep))?;
            println!("attacked {} images into {}", eval.len(), cfg.output_dir.display());
        }
        Command::Evaluate { common, sweep } => {
            let cfg = common.load()?;
            let models = experiment::load_models(&cfg)?;
            let (_, test) = experiment::load_data(&cfg)?;
            let eval = experiment::load_eval_set(&cfg, &test)?;
            let plans = plans(&cfg, sweep);
            let adversarial = plans
                .iter()
                .map(|p| experiment::load_adversarial(&cfg, p, test.image_shape()))
                .collect::<Result<Vec<_>, _>>()?;
            experiment::evaluate_stage(&cfg, &models, &eval, &plans, &adversarial)?;
            print!("{}", fs::read_to_string(cfg.output_dir.join("report.md"))?);
        }
        Command::Run(common) => run(common, false)?,
        Command::Sweep(common) => run(common, true)?,
    }
    Ok(())
}

fn run(common: Common, sweep: bool) -> anyhow::Result<()> {
    let cfg = common.load()?;
    let summary = experiment::run_experiment(&cfg, &plans(&cfg, sweep))?;
    info!("evaluated {} images", summary.eval.len());
    print!("{}", fs::read_to_string(cfg.output_dir.join("report.md"))?);
    Ok(())
}
