use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndc_dpsgd::scenario::{
    self, emit_bound_plan, emit_channel, load_scenario, run_plan_stage, BoundPlan, DataSource, Manifest,
    ScenarioConfig, Stage, SweepConfig,
};

#[derive(Parser)]
#[command(
    name = "ndc-dpsgd",
    version,
    about = "D-PSGD over wireless links: rates, training, bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Choose transmission rates for each (λ_target, ε) cell.
    Optimize(Common),
    /// Optimize and train one cell (the [sweep] section is ignored unless
    /// --lambda-target or --epsilon is given).
    Train(Common),
    /// Optimize and train every cell of the sweep grid.
    Sweep(Common),
    /// Write the convergence bound over a λ grid.
    Bound(Common),
    /// Dump the channel capacity matrix for each ε.
    Channel(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training and data seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides [output] dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated λ targets; replaces the sweep list.
    #[arg(long, value_name = "LIST", value_delimiter = ',', num_args = 1)]
    lambda_target: Option<Vec<f64>>,
    /// Comma-separated path-loss indices; replaces the sweep list.
    #[arg(long, value_name = "LIST", value_delimiter = ',', num_args = 1)]
    epsilon: Option<Vec<f64>>,
}

impl Common {
    fn scenario(&self, keep_sweep: bool) -> Result<ScenarioConfig> {
        let path = self.config.as_ref().context("--config is required for this command")?;
        let mut c = load_scenario(path)?;
        if !keep_sweep && self.lambda_target.is_none() && self.epsilon.is_none() {
            c.sweep = None;
        }
        if self.lambda_target.is_some() || self.epsilon.is_some() {
            let current = c.sweep.clone().unwrap_or(SweepConfig {
                lambda_targets: vec![c.optimizer.lambda_target],
                epsilons: vec![c.radio.path_loss_index],
            });
            c.sweep = Some(SweepConfig {
                lambda_targets: self.lambda_target.clone().unwrap_or(current.lambda_targets),
                epsilons: self.epsilon.clone().unwrap_or(current.epsilons),
            });
        }
        if let Some(seed) = self.seed {
            c.training.seed = seed;
            if let DataSource::Synthetic { seed: s, .. } = &mut c.data {
                *s = seed;
            }
        }
        if let Some(out) = &self.out {
            c.output_dir = out.clone();
        }
        c.validate()?;
        Ok(c)
    }

    fn out_dir(&self, config: Option<&ScenarioConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| config.map(|c| c.output_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("results"))
    }
}

fn print_summary(report: &scenario::PlanReport) {
    println!("lambda_target  epsilon  status      lambda    t_com_s     final_acc  t_threshold_s");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    for c in &report.cells {
        let s = &c.summary;
        println!(
            "{:<13}  {:<7}  {:<10}  {:<8}  {:<10}  {:<9}  {}",
            s.lambda_target,
            s.epsilon,
            format!("{:?}", s.status).to_lowercase(),
            show(s.lambda),
            show(s.t_com_s),
            show(s.final_accuracy),
            show(s.time_to_threshold_s),
        );
    }
}

fn plan(args: &Common, stage: Stage, keep_sweep: bool, command: &str) -> Result<()> {
    let config = args.scenario(keep_sweep)?;
    let report = run_plan_stage(&config, stage, command)?;
    print_summary(&report);
    println!(
        "wrote {} files to {}",
        report.files.len() + 1,
        config.output_dir.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Optimize(args) => plan(args, Stage::Rates, true, "optimize"),
        Command::Train(args) => plan(args, Stage::Full, false, "train"),
        Command::Sweep(args) => {
            let c = args.scenario(true)?;
            if c.sweep.is_none() {
                bail!("no sweep lists: add a [sweep] section or pass --lambda-target / --epsilon");
            }
            plan(args, Stage::Full, true, "sweep")
        }
        Command::Bound(args) => {
            let config = args.config.as_ref().map(|_| args.scenario(true)).transpose()?;
            let out = args.out_dir(config.as_ref());
            let plan = config.as_ref().map_or_else(BoundPlan::default, |c| c.bound);
            let rows = emit_bound_plan(&plan, &out.join("bound.csv"))?;
            Manifest::new("bound", config.as_ref(), vec!["bound.csv".into()])?.write(&out)?;
            println!(
                "wrote {} bound points to {}",
                rows.len(),
                out.join("bound.csv").display()
            );
            Ok(())
        }
        Command::Channel(args) => {
            let config = args.scenario(true)?;
            let out = args.out_dir(Some(&config));
            let mut eps: Vec<f64> = Vec::new();
            for (_, e) in config.cells() {
                if !eps.contains(&e) {
                    eps.push(e);
                }
            }
            let mut files = Vec::new();
            for e in eps {
                let name = format!("channel_eps{e}.csv");
                emit_channel(&config.layout, &config.radio.with_path_loss_index(e), &out.join(&name))?;
                files.push(name);
            }
            Manifest::new("channel", Some(&config), files.clone())?.write(&out)?;
            println!("wrote {} to {}", files.join(", "), out.display());
            Ok(())
        }
    }
}
