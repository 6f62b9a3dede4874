//! Command-line pipeline: ingest, build-dataset, train-encoder, detect,
//! evaluate, and transcript inspection.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use makged::agents::AgentRole;
use makged::config::{build_backends, validate_config, ConfigError, RunConfig};
use makged::dataset::{
    corrupt_dataset, read_examples, split, train_similarity_embeddings, write_examples,
    DatasetError, Label, LabeledExample, SimilarityConfig,
};
use makged::encoder::{classification_accuracy, save_checkpoint, train_encoder, EncoderError};
use makged::eval::{confusion_records, metrics, report, report_json, EvalError};
use makged::kg::KgError;
use makged::protocol::{
    detect_batch, read_decisions, write_decisions, Decision, DecisionMethod, DecisionRecord,
    ProtocolError, RunStats,
};
use makged::{KnowledgeGraph, Triple};

#[derive(Parser)]
#[command(
    name = "makged",
    version,
    about = "Multi-agent knowledge-graph error detection pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a triple TSV file, print its size, and optionally write the
    /// deduplicated normal form
    Ingest {
        /// Knowledge graph as tab-separated head/relation/tail lines
        #[arg(long)]
        kg: PathBuf,
        /// Where to write the normalized TSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corrupt a share of a clean graph into labeled train/valid/test files
    BuildDataset {
        /// Clean knowledge graph TSV
        #[arg(long)]
        kg: PathBuf,
        /// Run configuration TOML
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fraction of triples to corrupt, overriding the config
        #[arg(long)]
        rate: Option<f64>,
        /// Similarity neighborhood size, overriding the config
        #[arg(long)]
        top_k: Option<usize>,
        /// Random seed, overriding the config
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for train.jsonl, valid.jsonl, test.jsonl
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the subgraph classifier and save a checkpoint
    TrainEncoder {
        /// Knowledge graph TSV the examples refer to
        #[arg(long)]
        kg: PathBuf,
        /// Directory holding train.jsonl, valid.jsonl, test.jsonl
        #[arg(long)]
        dataset: PathBuf,
        /// Run configuration TOML
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Debate every example with the configured agents and write decisions
    Detect {
        /// Knowledge graph TSV the examples refer to
        #[arg(long)]
        kg: PathBuf,
        /// Examples to judge, one JSON object per line
        #[arg(long)]
        dataset: PathBuf,
        /// Run configuration TOML naming the agent backends
        #[arg(long)]
        config: Option<PathBuf>,
        /// Decision output file, one JSON object per line
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a decision file against gold labels and print the report
    Evaluate {
        /// Decision file produced by detect
        #[arg(long)]
        pred: PathBuf,
        /// Gold example file the decisions were made on
        #[arg(long)]
        gold: PathBuf,
        /// Emit the report as JSON instead of text
        #[arg(long)]
        json: bool,
    },
    /// Pretty-print one debate from a decision file
    Transcript {
        /// Decision file produced by detect
        file: PathBuf,
        /// Triple to show, as "(head, relation, tail)" or "head,relation,tail"
        #[arg(long)]
        triple: String,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        eprintln!("error: {}", categorize(&err));
        std::process::exit(1);
    }
}

/// One-line category prefix so scripts can dispatch on the failure kind.
fn categorize(err: &anyhow::Error) -> String {
    let category = if err.is::<KgError>() {
        "kg"
    } else if err.is::<DatasetError>() {
        "dataset"
    } else if err.is::<EncoderError>() {
        "encoder"
    } else if err.is::<ProtocolError>() {
        "protocol"
    } else if err.is::<EvalError>() {
        "eval"
    } else if err.is::<ConfigError>() {
        "config"
    } else if err.is::<std::io::Error>() {
        "io"
    } else {
        "internal"
    };
    format!("{category}: {err:#}").replace('\n', " ")
}

fn usage_error(message: &str) -> ! {
    eprintln!("error: usage: {message}");
    std::process::exit(2);
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(path) => Ok(validate_config(path)
            .with_context(|| format!("config {}", path.display()))?),
        None => Ok(RunConfig::default()),
    }
}

fn load_graph(path: &Path) -> Result<KnowledgeGraph> {
    KnowledgeGraph::ingest_path(path).with_context(|| format!("kg {}", path.display()))
}

fn create_output(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn open_input(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn load_examples(path: &Path, g: &KnowledgeGraph) -> Result<Vec<LabeledExample>> {
    let records = read_examples(open_input(path)?)
        .with_context(|| format!("examples {}", path.display()))?;
    records
        .iter()
        .map(|r| r.resolve(g).map_err(anyhow::Error::from))
        .collect::<Result<Vec<_>>>()
        .with_context(|| format!("examples {}", path.display()))
}

fn label_str(label: Label) -> &'static str {
    match label {
        Label::Correct => "correct",
        Label::Incorrect => "incorrect",
    }
}

fn method_str(method: DecisionMethod) -> &'static str {
    match method {
        DecisionMethod::Consensus => "consensus",
        DecisionMethod::Majority => "majority",
        DecisionMethod::Summarizer => "summarizer",
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { kg, out } => ingest(&kg, out.as_deref()),
        Command::BuildDataset { kg, config, rate, top_k, seed, out } => {
            build_dataset(&kg, &config, rate, top_k, seed, &out)
        }
        Command::TrainEncoder { kg, dataset, config, out } => {
            train_encoder_cmd(&kg, &dataset, &config, &out)
        }
        Command::Detect { kg, dataset, config, out } => detect(&kg, &dataset, &config, &out),
        Command::Evaluate { pred, gold, json } => evaluate(&pred, &gold, json),
        Command::Transcript { file, triple } => transcript(&file, &triple),
    }
}

fn ingest(kg: &Path, out: Option<&Path>) -> Result<()> {
    let g = load_graph(kg)?;
    if let Some(out) = out {
        let mut writer = create_output(out)?;
        g.write_tsv(&mut writer).with_context(|| format!("cannot write {}", out.display()))?;
        writer.flush()?;
    }
    println!("{g}");
    Ok(())
}

fn build_dataset(
    kg: &Path,
    config: &Option<PathBuf>,
    rate: Option<f64>,
    top_k: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let config = load_config(config)?;
    let rate = rate.unwrap_or(config.corruption.rate);
    if !(rate > 0.0 && rate < 1.0) {
        usage_error(&format!("--rate must be strictly between 0 and 1, got {rate}"));
    }
    let top_k = top_k.unwrap_or(config.corruption.top_k);
    if top_k == 0 {
        usage_error("--top-k must be at least 1");
    }
    let seed = seed.unwrap_or(config.corruption.seed);

    let g = load_graph(kg)?;
    let table = train_similarity_embeddings(&g, &SimilarityConfig { seed, ..Default::default() })?;
    let examples = corrupt_dataset(&g, &table, rate, top_k, seed)?;
    let corrupted = examples.iter().filter(|e| e.label == Label::Incorrect).count();
    let dataset = split(&examples, seed)?;

    std::fs::create_dir_all(out)
        .with_context(|| format!("cannot create directory {}", out.display()))?;
    for (name, part) in [
        ("train.jsonl", &dataset.train),
        ("valid.jsonl", &dataset.valid),
        ("test.jsonl", &dataset.test),
    ] {
        let path = out.join(name);
        let mut writer = create_output(&path)?;
        write_examples(&mut writer, &g, part)?;
        writer.flush()?;
    }
    println!("examples={} corrupted={corrupted}", examples.len());
    println!(
        "train={} valid={} test={}",
        dataset.train.len(),
        dataset.valid.len(),
        dataset.test.len()
    );
    Ok(())
}

fn train_encoder_cmd(
    kg: &Path,
    dataset: &Path,
    config: &Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let config = load_config(config)?;
    let g = load_graph(kg)?;
    let parts = makged::dataset::DatasetSplit {
        train: load_examples(&dataset.join("train.jsonl"), &g)?,
        valid: load_examples(&dataset.join("valid.jsonl"), &g)?,
        test: load_examples(&dataset.join("test.jsonl"), &g)?,
    };
    let params = train_encoder(&parts, &g, &config.encoder)?;
    let mut writer = create_output(out)?;
    save_checkpoint(&params, &config.encoder, &mut writer)?;
    writer.flush()?;

    for (name, examples) in
        [("train", &parts.train), ("valid", &parts.valid), ("test", &parts.test)]
    {
        if examples.is_empty() {
            continue;
        }
        let accuracy =
            classification_accuracy(&params, &g, examples, config.encoder.cap, config.encoder.seed)?;
        println!("{name}_accuracy={accuracy:.4}");
    }
    Ok(())
}

fn detect(kg: &Path, dataset: &Path, config: &Option<PathBuf>, out: &Path) -> Result<()> {
    let config = load_config(config)?;
    let backends = build_backends(&config)?;
    let g = load_graph(kg)?;
    let examples = load_examples(dataset, &g)?;
    let targets: Vec<Triple> = examples.iter().map(|e| e.triple).collect();

    let (results, stats) = detect_batch(
        &targets,
        &g,
        &backends,
        &config.protocol.protocol_config(),
        config.protocol.parallelism,
    );
    let mut decisions: Vec<Decision> = Vec::with_capacity(results.len());
    let mut first_failure: Option<ProtocolError> = None;
    for result in results {
        match result {
            Ok(decision) => decisions.push(decision),
            Err(err) => first_failure = first_failure.or(Some(err)),
        }
    }
    let mut writer = create_output(out)?;
    write_decisions(&mut writer, &g, &decisions)?;
    writer.flush()?;
    println!(
        "decided={} failed={} avg_rounds={:.2} tie_rate={:.2}",
        stats.decided, stats.failed, stats.mean_rounds, stats.tie_fraction
    );
    match first_failure {
        Some(err) => Err(err).context(format!("{} of {} triples failed", stats.failed, targets.len())),
        None => Ok(()),
    }
}

fn evaluate(pred: &Path, gold: &Path, json: bool) -> Result<()> {
    let decisions = read_decisions(open_input(pred)?)
        .with_context(|| format!("decisions {}", pred.display()))?;
    let gold_records = read_examples(open_input(gold)?)
        .with_context(|| format!("gold {}", gold.display()))?;
    let cm = confusion_records(&decisions, &gold_records)?;
    let m = metrics(&cm)?;
    let stats = RunStats::from_records(&decisions);
    if json {
        println!("{}", serde_json::to_string_pretty(&report_json(&m, &stats))?);
    } else {
        print!("{}", report(&m, &stats));
    }
    Ok(())
}

/// Accepts "(h, r, t)" or "h,r,t" and yields the canonical display form.
fn normalize_triple_key(raw: &str) -> String {
    let trimmed = raw.trim();
    let inner = trimmed
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .unwrap_or(trimmed);
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if parts.len() != 3 || parts.iter().any(|p| p.is_empty()) {
        usage_error(&format!(
            "--triple must be \"(head, relation, tail)\" or \"head,relation,tail\", got {raw:?}"
        ));
    }
    format!("({}, {}, {})", parts[0], parts[1], parts[2])
}

fn print_transcript(record: &DecisionRecord) {
    println!("TARGET: {}", record.triple_display());
    let mut summarizer = None;
    for round in 0..=record.rounds_used {
        let in_round: Vec<_> = record
            .turns
            .iter()
            .filter(|t| t.round == round && t.role != AgentRole::Summarizer)
            .collect();
        if !in_round.is_empty() {
            println!("ROUND {round}:");
            for turn in in_round {
                println!("  {} {}: {}", turn.role, turn.verdict, turn.rationale);
            }
        }
    }
    for turn in &record.turns {
        if turn.role == AgentRole::Summarizer {
            summarizer = Some(turn);
        }
    }
    if let Some(turn) = summarizer {
        println!("SUMMARY: {}: {}", turn.verdict, turn.rationale);
    }
    println!(
        "RULING: {} ({}, rounds={})",
        label_str(record.label),
        method_str(record.method),
        record.rounds_used
    );
}

fn transcript(file: &Path, triple: &str) -> Result<()> {
    let key = normalize_triple_key(triple);
    let records = read_decisions(open_input(file)?)
        .with_context(|| format!("decisions {}", file.display()))?;
    let record = records
        .iter()
        .find(|r| r.triple_display() == key)
        .with_context(|| format!("no decision recorded for triple {key}"))?;
    print_transcript(record);
    Ok(())
}
