use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prevalens::evaluation::Metric;
use prevalens::pipeline::{demo_config, report_dir, run_experiment, ClassifierKind, ExperimentConfig, RunOutcome};

#[derive(Parser)]
#[command(name = "prevalens", version, about = "Class-prevalence estimation benchmark")]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, quantify and evaluate as configured.
    Run(Box<RunArgs>),
    /// Print the error table for a results directory.
    Report { dir: PathBuf },
    /// Synthetic smoke test with oracle and mlp classifiers.
    Demo {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "prevalens-demo")]
        out: PathBuf,
    },
}

/// Each flag overrides the key of the same name in `--config`.
#[derive(Args, Default)]
struct RunArgs {
    /// key: value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `synthetic` or a TSV corpus path.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    test_data: Option<String>,
    #[arg(long)]
    test_fraction: Option<String>,
    #[arg(long)]
    n_docs: Option<String>,
    #[arg(long)]
    n_test: Option<String>,
    #[arg(long)]
    separation: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    train_prevalence: Option<String>,
    #[arg(long)]
    test_prevalence: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,
    #[arg(long)]
    hash_dim: Option<String>,
    /// binary, tf or logtf.
    #[arg(long)]
    weighting: Option<String>,
    /// Training fraction of the labelled data.
    #[arg(long)]
    split: Option<String>,
    /// mlp, mnb, lstm or oracle.
    #[arg(long)]
    classifier: Option<String>,
    /// Comma separated subset of cc,acc,pcc,pacc,emq,quanet.
    #[arg(long)]
    quantifiers: Option<String>,
    /// Comma separated prevalences, or `default`.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    sample_size: Option<String>,
    /// Comma separated seeds, one full run each.
    #[arg(long)]
    seeds: Option<String>,
    /// desk or paper.
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    oracle_tpr: Option<String>,
    #[arg(long)]
    oracle_fpr: Option<String>,
    #[arg(long)]
    mnb_alpha: Option<String>,
    #[arg(long)]
    mnb_alpha_sweep: Option<String>,
    /// auto, mnb or classifier.
    #[arg(long)]
    emq_base: Option<String>,
    #[arg(long)]
    clf_max_iter: Option<String>,
    #[arg(long)]
    clf_patience: Option<String>,
    #[arg(long)]
    quanet_max_iter: Option<String>,
    #[arg(long)]
    quanet_patience: Option<String>,
    #[arg(long)]
    quanet_sample_size: Option<String>,
    #[arg(long)]
    quanet_length_spread: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let pairs: [(&'static str, &Option<String>); 32] = [
            ("data", &self.data),
            ("test_data", &self.test_data),
            ("test_fraction", &self.test_fraction),
            ("n_docs", &self.n_docs),
            ("n_test", &self.n_test),
            ("separation", &self.separation),
            ("dim", &self.dim),
            ("train_prevalence", &self.train_prevalence),
            ("test_prevalence", &self.test_prevalence),
            ("data_seed", &self.data_seed),
            ("hash_dim", &self.hash_dim),
            ("weighting", &self.weighting),
            ("split", &self.split),
            ("classifier", &self.classifier),
            ("quantifiers", &self.quantifiers),
            ("grid", &self.grid),
            ("trials", &self.trials),
            ("sample_size", &self.sample_size),
            ("seeds", &self.seeds),
            ("scale", &self.scale),
            ("oracle_tpr", &self.oracle_tpr),
            ("oracle_fpr", &self.oracle_fpr),
            ("mnb_alpha", &self.mnb_alpha),
            ("mnb_alpha_sweep", &self.mnb_alpha_sweep),
            ("emq_base", &self.emq_base),
            ("clf_max_iter", &self.clf_max_iter),
            ("clf_patience", &self.clf_patience),
            ("quanet_max_iter", &self.quanet_max_iter),
            ("quanet_patience", &self.quanet_patience),
            ("quanet_sample_size", &self.quanet_sample_size),
            ("quanet_length_spread", &self.quanet_length_spread),
            ("out", &self.out),
        ];
        pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_deref().map(|v| (k, v)))
            .collect()
    }

    fn config(&self) -> prevalens::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}

fn print_summary(outcome: &RunOutcome) {
    print!("{}", outcome.report.render());
}

fn run(args: &RunArgs, quiet: bool) -> Result<(), String> {
    let cfg = args.config().map_err(|e| format!("[config] {e}"))?;
    let outcome = run_experiment(&cfg, quiet).map_err(|e| e.to_string())?;
    print_summary(&outcome);
    if !quiet {
        eprintln!("results written to {}", cfg.out.display());
    }
    Ok(())
}

fn demo(seed: u64, out: PathBuf, quiet: bool) -> Result<(), String> {
    for kind in [ClassifierKind::Oracle, ClassifierKind::Mlp] {
        let cfg = demo_config(kind, seed, out.join(kind.as_str()));
        let outcome = run_experiment(&cfg, quiet).map_err(|e| e.to_string())?;
        println!("classifier: {}", kind.as_str());
        print_summary(&outcome);
        let rows = outcome.runs.iter().flat_map(|r| &r.rows);
        if rows.clone().any(|r| !(0.0..=1.0).contains(&r.est_prev)) {
            return Err("an estimate fell outside [0, 1]".into());
        }
        let ae = |m: &str| {
            let i = outcome.report.methods.iter().position(|x| x == m)?;
            Some(outcome.report.means[i][Metric::ALL.iter().position(|x| *x == Metric::Ae)?])
        };
        if let (Some(cc), Some(acc)) = (ae("cc"), ae("acc")) {
            println!("cc AE {cc:.4}, acc AE {acc:.4}");
        }
        println!();
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args, cli.quiet),
        Command::Report { dir } => report_dir(dir)
            .map(|r| print!("{}", r.render()))
            .map_err(|e| format!("[report] {e}")),
        Command::Demo { seed, out } => demo(*seed, out.clone(), cli.quiet),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
