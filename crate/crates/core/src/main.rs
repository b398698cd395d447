use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gramscore::cli;
use gramscore::config::Config;

#[derive(Parser)]
#[command(
    name = "gramscore",
    version,
    about = "Judge-free n-gram scoring of generated answers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Abort on malformed or unresolvable records instead of skipping them.
    #[arg(long)]
    strict: bool,
}

impl Common {
    fn load(&self) -> gramscore::Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if self.strict {
            config.strict = true;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Filter and refine candidate answers into per-question reference sets.
    BuildRefset {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        /// Directory of `<question_id>.drop` files.
        #[arg(long)]
        drop_rules: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Final answers per question.
        #[arg(long)]
        keep: Option<usize>,
        /// Answers kept by the length stage.
        #[arg(long)]
        length_keep: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a response file against reference sets and helpfulness rules.
    Score {
        #[arg(long)]
        questions: PathBuf,
        #[arg(long)]
        refsets: PathBuf,
        /// Directory of `<question_id>.rules` files.
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        /// Report path (JSON); a Markdown leaderboard is written beside it.
        #[arg(long)]
        out: PathBuf,
        /// Truthfulness document-frequency threshold.
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Pearson correlation between a report and external per-model scores.
    Correlate {
        #[arg(long)]
        report: PathBuf,
        /// `model<TAB>score` lines, or another report.
        #[arg(long)]
        external: PathBuf,
    },
    /// Render a report as a leaderboard table.
    Report {
        #[arg(long)]
        report: PathBuf,
        /// markdown or tsv
        #[arg(long, default_value = "markdown")]
        format: String,
    },
}

fn run(command: Command) -> gramscore::Result<()> {
    match command {
        Command::BuildRefset {
            questions,
            candidates,
            drop_rules,
            out,
            seed,
            keep,
            length_keep,
            common,
        } => {
            let mut config = common.load()?;
            config.seed = seed.unwrap_or(config.seed);
            config.keep = keep.unwrap_or(config.keep);
            config.length_keep = length_keep.unwrap_or(config.length_keep);
            let run = cli::build_refset(&cli::BuildRefsetArgs {
                questions,
                candidates,
                drop_rules,
                out_dir: out.clone(),
                config,
            })?;
            for q in &run.questions {
                println!(
                    "{}\t{} -> {} answers (mse {:.3e})",
                    q.question_id, q.ingested, q.final_count, q.refine.final_mse
                );
            }
            println!("wrote {}", out.join(cli::PIPELINE_REPORT_FILE).display());
        }
        Command::Score {
            questions,
            refsets,
            rules,
            responses,
            out,
            threshold,
            common,
        } => {
            let mut config = common.load()?;
            config.threshold = threshold.unwrap_or(config.threshold);
            let report = cli::score(&cli::ScoreArgs {
                questions,
                refset_dir: refsets,
                rules_dir: rules,
                responses,
                out: out.clone(),
                config,
            })?;
            print!(
                "{}",
                gramscore::formats::render_leaderboard(
                    &report,
                    gramscore::formats::TableFormat::Markdown
                )
            );
            println!(
                "wrote {} and {}",
                out.display(),
                out.with_extension("md").display()
            );
        }
        Command::Correlate { report, external } => {
            print!("{}", cli::correlate(&report, &external)?.render());
        }
        Command::Report { report, format } => {
            print!("{}", cli::report(Path::new(&report), &format)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
