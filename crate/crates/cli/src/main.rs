//! `setexpand`: build indexes, generate tasks, train, evaluate and report.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use setexpand_core::corpus::synth::{generate, SynthCorpusConfig};
use setexpand_core::pipeline::{
    self, baseline_all_positive, baseline_copkmeans, baseline_ensemble, baseline_topk,
    evaluate_run, load_run, train_task, AlphaFlag, RunMetrics,
};
use setexpand_core::taskgen::{
    generate_case_control, generate_censoring, save_task, task_stats, Bias, CaseControlParams,
    CensoringParams, Selector,
};
use setexpand_core::{
    Arch, Corpus, ErrorKind, InvertedIndex, PriorSetting, ReportFormat, RunConfig, Topic,
    TrainMode,
};

#[derive(Parser)]
#[command(name = "setexpand", version, about = "Document set expansion with PU learning")]
struct Cli {
    /// Flat key=value file of flag values; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index snapshot over a JSONL corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic labeled corpus as JSONL.
    SynthCorpus {
        #[arg(long, default_value_t = 20_000)]
        n_docs: usize,
        #[arg(long, default_value_t = 2019)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a set expansion task directory.
    Generate(GenerateArgs),
    /// Train a classifier on a task.
    Train(TrainArgs),
    /// Score a trained run, or a baseline, on a task's test split.
    Eval(EvalArgs),
    /// Aggregate metrics.json files into a method x topic F1 table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    CaseControl,
    Censoring,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectorArg {
    Bm25,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Linear,
    Conv,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Topk,
    AllPositive,
    Copkmeans,
    Ensemble,
}

#[derive(clap::Args)]
struct GenerateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Required by the bm25 selector and the censoring variant.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Labels joined by '+', e.g. "A+B+C".
    #[arg(long)]
    topic: Topic,
    #[arg(long, default_value_t = 20)]
    n_plus: usize,
    /// Training U size; for censoring, the number of retrieved documents.
    #[arg(long, default_value_t = 1000)]
    u_size: usize,
    #[arg(long, value_enum, default_value = "case-control")]
    variant: VariantArg,
    #[arg(long, value_enum, default_value = "bm25")]
    selector: SelectorArg,
    #[arg(long, default_value = "none")]
    bias: Bias,
    #[arg(long, default_value_t = 0)]
    n_minus: usize,
    /// Test split size (case-control; defaults to --u-size).
    #[arg(long)]
    test_size: Option<usize>,
    /// Share of U held out for testing (censoring).
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
    /// Keep the true labels of U and N for oracle training.
    #[arg(long)]
    retain_truth: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    task: PathBuf,
    #[arg(long, default_value = "nnpu")]
    mode: TrainMode,
    /// ber (0.5), true (from task metadata) or a value in (0, 1).
    #[arg(long, default_value = "ber")]
    prior: PriorSetting,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    proportional: bool,
    /// auto (from the batch plan) or a positive value.
    #[arg(long, default_value = "1")]
    alpha: AlphaFlag,
    #[arg(long, default_value_t = 0.5)]
    pnu_gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    nn_beta: f64,
    #[arg(long, default_value_t = 1.0)]
    nn_gamma: f64,
    #[arg(long, value_enum, default_value = "conv")]
    arch: ArchArg,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// Trained run directory; repeat for ensemble members.
    #[arg(long)]
    run: Vec<PathBuf>,
    #[arg(long)]
    task: PathBuf,
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    /// Output directory for baselines (default: <task>/baseline-<name>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for the clustering baseline.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

/// The error chain joined by ": ", dropping causes a parent message
/// already ends with.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if out.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
    }
    out
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let kind = e
        .chain()
        .find_map(|c| c.downcast_ref::<setexpand_core::Error>())
        .map(setexpand_core::Error::kind);
    match kind {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Numerical) => 4,
        Some(ErrorKind::Data) | None => 3,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Index { corpus, out } => {
            let c = ingest(&corpus)?;
            let index = InvertedIndex::build(&c)?;
            index.save(&out)?;
            println!("indexed {} documents into {}", index.doc_count(), out.display());
        }
        Command::SynthCorpus { n_docs, seed, out } => {
            let cfg = SynthCorpusConfig {
                n_docs,
                seed,
                ..SynthCorpusConfig::default()
            };
            generate(&cfg)?.export(&out)?;
            println!("wrote {n_docs} documents to {}", out.display());
            for t in cfg.default_topics() {
                println!("topic {}", t.join("+"));
            }
        }
        Command::Generate(a) => cmd_generate(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Report { runs, format } => print!("{}", pipeline::report(&runs, format)?),
    }
    Ok(())
}

fn ingest(path: &Path) -> Result<Corpus> {
    Corpus::ingest(path).with_context(|| format!("loading corpus {}", path.display()))
}

fn load_index(path: Option<&Path>) -> Result<Option<InvertedIndex>> {
    path.map(|p| InvertedIndex::load(p).with_context(|| format!("loading index {}", p.display())))
        .transpose()
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let corpus = ingest(&a.corpus)?;
    let index = load_index(a.index.as_deref())?;
    let task = match a.variant {
        VariantArg::CaseControl => {
            let selector = match a.selector {
                SelectorArg::Bm25 => Selector::Bm25,
                SelectorArg::Random => Selector::Random,
            };
            let mut p = CaseControlParams::new(a.n_plus, a.u_size, selector);
            p.test_size = a.test_size.unwrap_or(a.u_size);
            p.n_minus = a.n_minus;
            p.bias = a.bias;
            p.retain_truth = a.retain_truth;
            generate_case_control(&corpus, &a.topic, &p, index.as_ref(), a.seed)?
        }
        VariantArg::Censoring => {
            let Some(index) = index.as_ref() else {
                return Err(setexpand_core::Error::Config(
                    "the censoring variant requires --index".into(),
                )
                .into());
            };
            let p = CensoringParams {
                n_plus: a.n_plus,
                retrieve: a.u_size,
                test_fraction: a.test_fraction,
                mlt: Default::default(),
                retain_truth: a.retain_truth,
            };
            generate_censoring(&corpus, &a.topic, &p, index, a.seed)?
        }
    };
    save_task(&task, &corpus, &a.out)?;
    let s = task_stats(&task, &corpus, &a.topic);
    println!("task {} -> {}", a.topic, a.out.display());
    println!("{}", serde_json::to_string(&s).context("serializing task stats")?);
    for w in &task.meta.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let loaded = setexpand_core::taskgen::load_task(&a.task)?;
    let cfg = RunConfig {
        mode: a.mode,
        prior: a.prior,
        batch_size: a.batch_size,
        proportional: a.proportional,
        alpha: a.alpha,
        pnu_gamma: a.pnu_gamma,
        nn_beta: a.nn_beta,
        nn_gamma: a.nn_gamma,
        arch: match a.arch {
            ArchArg::Linear => Arch::LinearBow,
            ArchArg::Conv => Arch::Conv,
        },
        learning_rate: a.lr,
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        ..RunConfig::default()
    };
    let trained = train_task(&loaded, &cfg)?;
    trained.save(&a.out)?;
    let r = &trained.resolved;
    println!(
        "{} on {}: prior {} alpha {} best epoch {} of {} -> {}",
        r.method,
        r.topic,
        r.prior_value,
        r.alpha_value,
        r.best_epoch,
        r.epochs_run,
        a.out.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let loaded = setexpand_core::taskgen::load_task(&a.task)?;
    let out = |name: &str| a.out.clone().unwrap_or_else(|| a.task.join(format!("baseline-{name}")));
    let m: RunMetrics = match a.baseline {
        None => {
            let [run] = a.run.as_slice() else {
                return bail_config("evaluating a trained run needs exactly one --run");
            };
            evaluate_run(&load_run(run)?, &loaded)?
        }
        Some(BaselineArg::Topk) => baseline_topk(&loaded, out("topk"))?,
        Some(BaselineArg::AllPositive) => baseline_all_positive(&loaded, out("all-positive"))?,
        Some(BaselineArg::Copkmeans) => baseline_copkmeans(&loaded, out("copkmeans"), a.seed)?,
        Some(BaselineArg::Ensemble) => {
            if a.run.len() < 2 {
                return bail_config("the ensemble baseline needs at least two --run members");
            }
            let members = a.run.iter().map(load_run).collect::<setexpand_core::Result<Vec<_>>>()?;
            baseline_ensemble(&members, &loaded, out("ensemble"))?
        }
    };
    println!("{} on {}: F1 {:.4} over {} test documents", m.method, m.topic, m.f1, m.test_size);
    if let Some(r) = &m.report {
        if r.auc_out_of_range {
            eprintln!("note: AUC {:.4} lies outside [0, 1]", r.auc);
        }
    }
    if m.report.is_none() {
        if let Some(t) = &m.topk {
            println!("top-k F1 mean {:.4} std {:.4} over k in [{}, {}]", t.mean_f1, t.std_f1, t.k_min, t.k_max);
        }
    }
    Ok(())
}

fn bail_config<T>(msg: &str) -> Result<T> {
    Err(setexpand_core::Error::Config(msg.into()).into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use setexpand_core::Error;

    #[test]
    fn exit_codes_by_error_kind() {
        let code = |e: Error| exit_code(&anyhow::Error::from(e).context("while running"));
        assert_eq!(code(Error::Config("x".into())), 2);
        assert_eq!(code(Error::EmptyCorpus), 3);
        assert_eq!(code(Error::Numerical("nan".into())), 4);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), 3);
    }

    #[test]
    fn describe_drops_repeated_causes() {
        let io = std::io::Error::other("disk gone");
        let e = anyhow::Error::from(io).context("reading x: disk gone");
        assert_eq!(describe(&e), "reading x: disk gone");
        let e = anyhow::anyhow!("inner").context("outer");
        assert_eq!(describe(&e), "outer: inner");
    }
}
