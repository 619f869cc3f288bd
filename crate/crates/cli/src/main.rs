use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jointprop_core::corpus::{
    load_corpus, merge_split, split_corpus, validate, write_corpus, Corpus, SplitUnit,
};
use jointprop_core::embed::read_embeddings;
use jointprop_core::graph::{DEFAULT_K, DEFAULT_SIGMA};
use jointprop_core::pipeline::{evaluate, run_joint, RunConfig, DEFAULT_MAX_WIDTH};
use jointprop_core::propagate::{
    Threshold, DEFAULT_C, DEFAULT_MAX_ITERS, DEFAULT_THRESHOLD, DEFAULT_TOL,
};
use jointprop_core::report::render_report;
use jointprop_core::Error;

#[derive(Parser)]
#[command(
    name = "jointprop",
    version,
    about = "Joint entity and relation label propagation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Propagate labels and write the augmented corpus.
    Propagate(PropagateArgs),
    /// Score an augmented corpus against gold annotations.
    Evaluate(EvaluateArgs),
    /// Split a corpus into labeled and unlabeled files.
    Split(SplitArgs),
}

#[derive(Args)]
struct PropagateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = DEFAULT_C)]
    c: f64,
    /// Fixed confidence cut-off.
    #[arg(long, conflicts_with = "threshold_quantile")]
    threshold: Option<f64>,
    /// Cut-off at this quantile of the unlabeled confidences.
    #[arg(long)]
    threshold_quantile: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_WIDTH)]
    max_width: usize,
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    /// Draw relation candidates only from entity-labeled spans.
    #[arg(long)]
    restrict_pairs: bool,
    /// Seed for --split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Re-split the corpus, labeling this fraction of units.
    #[arg(long)]
    split: Option<f64>,
    #[arg(long, default_value = "sentence")]
    split_unit: SplitUnit,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    max_iters: usize,
    /// Entity graph edge list; the relation graph goes to `<F>.relation`.
    #[arg(long)]
    dump_graph: Option<PathBuf>,
    /// Entity residual trace CSV; the relation trace goes to `<F>.relation`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    augmented: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "sentence")]
    unit: SplitUnit,
    #[arg(long)]
    out_labeled: PathBuf,
    #[arg(long)]
    out_unlabeled: PathBuf,
}

fn relation_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".relation");
    PathBuf::from(name)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_valid(path: &Path) -> Result<Corpus, Error> {
    let corpus = load_corpus(path)?;
    if let Some(v) = validate(&corpus).first() {
        return Err(Error::Parameter(format!(
            "invalid corpus {}: sentence {}: {}",
            path.display(),
            v.sentence_id,
            v.message
        )));
    }
    Ok(corpus)
}

fn propagate(args: PropagateArgs) -> Result<(), Error> {
    let mut corpus = load_valid(&args.corpus)?;
    if let Some(fraction) = args.split {
        let (labeled, _) = split_corpus(&corpus, fraction, args.seed, args.split_unit)?;
        corpus = merge_split(&corpus, &labeled);
    }
    let store = read_embeddings(&args.embeddings, &corpus)?;
    let threshold = match (args.threshold, args.threshold_quantile) {
        (_, Some(q)) => Threshold::Quantile(q),
        (g, None) => Threshold::Fixed(g.unwrap_or(DEFAULT_THRESHOLD)),
    };
    let config = RunConfig {
        k: args.k,
        sigma: args.sigma,
        c: args.c,
        threshold,
        max_width: args.max_width,
        rounds: args.rounds,
        restrict_pairs: args.restrict_pairs,
        tol: args.tol,
        max_iters: args.max_iters,
        ..RunConfig::default()
    };
    let output = run_joint(&config, &corpus, &store)?;
    write_corpus(&args.out, &output.augmented)?;
    write_bytes(&args.report, &render_report(&output.report))?;
    let diag = &output.diagnostics;
    if let Some(path) = &args.dump_graph {
        if let Some(g) = &diag.entity_graph {
            g.write_dump(path)?;
        }
        if let Some(g) = &diag.relation_graph {
            g.write_dump(relation_path(path))?;
        }
    }
    if let Some(path) = &args.trace {
        diag.entity_trace.write_csv(path)?;
        diag.relation_trace.write_csv(relation_path(path))?;
    }
    let totals = &output.report.totals;
    eprintln!(
        "{} entity and {} relation pseudo-labels written to {}",
        totals.entity_labels,
        totals.relation_labels,
        args.out.display()
    );
    Ok(())
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<(), Error> {
    let predicted = load_corpus(&args.augmented)?;
    let gold = load_valid(&args.gold)?;
    let evaluation = evaluate(&predicted, &gold);
    let value = serde_json::to_value(&evaluation).expect("evaluation serializes");
    let mut bytes = serde_json::to_vec_pretty(&value).expect("value serializes");
    bytes.push(b'\n');
    write_bytes(&args.report, &bytes)?;
    eprintln!(
        "entity f1 {:.4}, relation f1 {:.4}",
        evaluation.entity.f1, evaluation.relation.f1
    );
    Ok(())
}

fn split_cmd(args: SplitArgs) -> Result<(), Error> {
    let corpus = load_valid(&args.corpus)?;
    let (labeled, unlabeled) = split_corpus(&corpus, args.fraction, args.seed, args.unit)?;
    write_corpus(&args.out_labeled, &labeled)?;
    write_corpus(&args.out_unlabeled, &unlabeled)?;
    eprintln!(
        "{} labeled, {} unlabeled sentences",
        labeled.len(),
        unlabeled.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Propagate(args) => propagate(args),
        Command::Evaluate(args) => evaluate_cmd(args),
        Command::Split(args) => split_cmd(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
