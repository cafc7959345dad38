//! Command-line front end: `generate`, `train`, `fuse` and `report`.
//!
//! Exit codes: 0 on success, 2 when the configuration cannot be loaded or is
//! invalid, 1 when a run fails.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::corpus::save_manifest;
use crate::experiment::{build_report, CorpusSource, Experiment, ExperimentConfig, Modality, RunOutcome};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "dialog-sentiment",
    version,
    about = "Bi-modal dialog utterance sentiment experiments"
)]
pub struct Cli {
    /// Experiment configuration (JSON); defaults apply to omitted fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the experiment seed and, for synthetic corpora, the generator seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Redo completed runs and replace stale fold assignments.
    #[arg(long, global = true)]
    pub force: bool,
    /// Worker threads for featurization, evaluation and forest fitting.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Log progress to standard error.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic corpus as a manifest plus WAV files.
    Generate,
    /// Train one model per monitor and test fold.
    Train {
        /// Overrides the configured modality.
        #[arg(long)]
        modality: Option<Modality>,
    },
    /// Fit fusion forests on completed acoustic and text runs.
    Fuse,
    /// Render fold-averaged tables and write report.json / report.txt.
    Report,
}

enum Failure {
    Config(Error),
    Runtime(Error),
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
        if let CorpusSource::Synthetic(g) = &mut config.corpus {
            g.seed = seed;
        }
    }
    if let Some(dir) = &cli.output {
        config.output_dir = dir.clone();
    }
    if let Command::Train { modality: Some(m) } = &cli.command {
        config.modality = *m;
    }
    config.validate()?;
    Ok(config)
}

fn print_outcomes(outcomes: &[RunOutcome]) {
    for o in outcomes {
        let t = &o.test;
        println!(
            "{}/{}/fold{}{}: WA {:.4} UA {:.4} Ng.R {:.4} Ps.R {:.4} Nt.R {:.4}",
            o.modality,
            o.monitor,
            o.fold,
            if o.skipped { " (existing)" } else { "" },
            t.wa,
            t.ua,
            t.neg_recall,
            t.pos_recall,
            t.neu_recall
        );
    }
}

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let config = load_config(cli).map_err(Failure::Config)?;
    let runtime = Failure::Runtime;
    match &cli.command {
        Command::Generate => {
            let CorpusSource::Synthetic(g) = &config.corpus else {
                return Err(Failure::Config(Error::invalid(
                    "generate needs a synthetic corpus source",
                )));
            };
            let corpus = crate::corpus::generate_synthetic_corpus(g).map_err(Failure::Config)?;
            let dir = config.output_dir.join("corpus");
            let path = save_manifest(&corpus, &dir).map_err(runtime)?;
            let counts = corpus.class_counts();
            println!("wrote {} ({} utterances)", path.display(), corpus.len());
            for label in crate::corpus::SentimentLabel::ALL {
                println!("{label}: {}", counts.get(label));
            }
        }
        Command::Train { .. } => {
            let exp = Experiment::open(config, cli.force).map_err(runtime)?;
            print_outcomes(&exp.train(cli.force).map_err(runtime)?);
        }
        Command::Fuse => {
            let exp = Experiment::open(config, cli.force).map_err(runtime)?;
            print_outcomes(&exp.fuse(cli.force).map_err(runtime)?);
        }
        Command::Report => {
            let report = build_report(&config).map_err(runtime)?;
            report.write(&config.output_dir).map_err(runtime)?;
            print!("{}", report.render());
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match execute(&cli) {
        Ok(()) => 0,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}
