//! The `boxembed` command line.
//!
//! Every command reads an optional JSON [`RunConfig`], applies flag
//! overrides, writes the effective config to `<out>/config.json` and puts
//! all artifacts under `<out>`. Exit status is 0 on success, 1 for usage or
//! configuration errors and 2 for failures while running.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::RunConfig;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::{gen_tree, make_split, F1Report, Hierarchy, HierarchyDataset, SplitName};
use crate::train::{evaluate, run_toy, train, ToyOutcome};

#[derive(Debug, Parser)]
#[command(name = "boxembed", version, about = "Probabilistic box embeddings")]
pub struct Cli {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory for every artifact of the run.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Seed for initialization, negatives, splits and shuffling.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one box to contain another and dump both before and after.
    DemoToy(ToyArgs),
    /// Write a balanced tree as an edge list.
    GenTree(TreeArgs),
    /// Build train/validation/test pairs from an edge list.
    Split(DataArgs),
    /// Train boxes on a hierarchy.
    Train(TrainArgs),
    /// Score a split with a saved table.
    Eval(EvalArgs),
    /// Export realized box corners of a saved table.
    DumpBoxes(TableArgs),
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// Box dimensionality.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Full-batch training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TreeArgs {
    /// Children per internal node.
    #[arg(long)]
    pub branching: Option<usize>,
    /// Levels below the root.
    #[arg(long)]
    pub depth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Edge list, `head<TAB>tail` per line.
    #[arg(long, value_name = "PATH")]
    pub edges: Option<PathBuf>,
    /// Prebuilt split file.
    #[arg(long, value_name = "PATH")]
    pub split: Option<PathBuf>,
    /// Vocabulary for `--split`.
    #[arg(long, value_name = "PATH")]
    pub vocab: Option<PathBuf>,
    /// Percentage of non-reduction closure edges used for training.
    #[arg(long)]
    pub closure_pct: Option<u32>,
    /// Negatives per positive.
    #[arg(long)]
    pub neg_ratio: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Box dimensionality.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Passes over the training pairs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Pairs per minibatch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    /// `table.json` checkpoint or realized `boxes.tsv`.
    #[arg(long, value_name = "PATH")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub table: TableArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Which split to score.
    #[arg(long, value_name = "NAME")]
    pub which: Option<SplitName>,
    /// Probability threshold for predicting an edge.
    #[arg(long)]
    pub threshold: Option<f64>,
}

/// Parses `args` (including the program name), runs the command and maps
/// the outcome to an exit status, printing diagnostics to stderr.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("boxembed: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for configuration problems, 2 for everything else.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    apply_overrides(&mut cfg, &cli.command);
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_text(&cfg.out.join("config.json"), &cfg.to_json())?;
    match &cli.command {
        Command::DemoToy(_) => demo_toy(&cfg),
        Command::GenTree(_) => gen_tree_cmd(&cfg),
        Command::Split(_) => split_cmd(&cfg),
        Command::Train(_) => train_cmd(&cfg),
        Command::Eval(_) => eval_cmd(&cfg),
        Command::DumpBoxes(_) => dump_boxes_cmd(&cfg),
    }
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) {
    if let Some(p) = &d.edges {
        cfg.data.edges = Some(p.clone());
    }
    if let Some(p) = &d.split {
        cfg.data.split = Some(p.clone());
    }
    if let Some(p) = &d.vocab {
        cfg.data.vocab = Some(p.clone());
    }
    if let Some(v) = d.closure_pct {
        cfg.data.closure_pct = v;
    }
    if let Some(v) = d.neg_ratio {
        cfg.train.neg_ratio = v;
    }
}

fn apply_overrides(cfg: &mut RunConfig, cmd: &Command) {
    match cmd {
        Command::DemoToy(a) => {
            cfg.toy.dim = a.dim.unwrap_or(cfg.toy.dim);
            cfg.toy.epochs = a.epochs.unwrap_or(cfg.toy.epochs);
            cfg.toy.lr = a.lr.unwrap_or(cfg.toy.lr);
        }
        Command::GenTree(a) => {
            cfg.tree.branching = a.branching.unwrap_or(cfg.tree.branching);
            cfg.tree.depth = a.depth.unwrap_or(cfg.tree.depth);
        }
        Command::Split(d) => apply_data(cfg, d),
        Command::Train(a) => {
            apply_data(cfg, &a.data);
            cfg.train.dim = a.dim.unwrap_or(cfg.train.dim);
            cfg.train.epochs = a.epochs.unwrap_or(cfg.train.epochs);
            cfg.train.batch_size = a.batch_size.unwrap_or(cfg.train.batch_size);
            cfg.train.optimizer.lr = a.lr.unwrap_or(cfg.train.optimizer.lr);
        }
        Command::Eval(a) => {
            apply_data(cfg, &a.data);
            if let Some(t) = &a.table.table {
                cfg.eval.table = Some(t.clone());
            }
            cfg.eval.split_name = a.which.unwrap_or(cfg.eval.split_name);
            cfg.train.threshold = a.threshold.unwrap_or(cfg.train.threshold);
        }
        Command::DumpBoxes(a) => {
            if let Some(t) = &a.table {
                cfg.eval.table = Some(t.clone());
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

fn require_file(what: &str, path: &Option<PathBuf>) -> Result<PathBuf> {
    let path = path
        .clone()
        .ok_or_else(|| Error::Config(format!("{what} is required")))?;
    if !path.is_file() {
        return Err(Error::Config(format!("{what} {} does not exist", path.display())));
    }
    Ok(path)
}

fn demo_toy(cfg: &RunConfig) -> Result<()> {
    let outcome = run_toy(&cfg.toy)?;
    let dump = |path: &Path, boxes: &[crate::train::Corners; 2]| -> Result<()> {
        let mut w = create(path)?;
        for (id, b) in boxes.iter().enumerate() {
            let coords: Vec<String> = b.min.iter().chain(&b.max).map(f64::to_string).collect();
            writeln!(w, "{id}\t{}", coords.join("\t")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    };
    dump(&cfg.out.join("toy_before.tsv"), &outcome.initial)?;
    dump(&cfg.out.join("toy_after.tsv"), &outcome.trained)?;
    let curve = cfg.out.join("toy_loss.tsv");
    let mut w = create(&curve)?;
    for (e, l) in outcome.losses.iter().enumerate() {
        writeln!(w, "{e}\t{l}").map_err(|e| Error::io(&curve, e))?;
    }
    w.flush().map_err(|e| Error::io(&curve, e))?;
    write_json(&cfg.out.join("toy_summary.json"), &ToySummary::from(&outcome))?;
    println!(
        "toy: loss {:.6} -> {:.6}, P(x|y) = {:.6}",
        outcome.losses[0],
        outcome.losses[outcome.losses.len() - 1],
        outcome.final_probability
    );
    Ok(())
}

#[derive(Serialize)]
struct ToySummary {
    epochs: usize,
    initial_loss: f64,
    final_loss: f64,
    final_probability: f64,
}

impl From<&ToyOutcome> for ToySummary {
    fn from(o: &ToyOutcome) -> Self {
        Self {
            epochs: o.losses.len() - 1,
            initial_loss: o.losses[0],
            final_loss: o.losses[o.losses.len() - 1],
            final_probability: o.final_probability,
        }
    }
}

fn gen_tree_cmd(cfg: &RunConfig) -> Result<()> {
    let tree = gen_tree(cfg.tree.branching, cfg.tree.depth)?;
    let path = cfg.out.join("edges.tsv");
    let mut w = create(&path)?;
    tree.write_edges(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    println!(
        "{}: {} nodes, {} edges",
        path.display(),
        tree.num_nodes(),
        tree.num_edges()
    );
    Ok(())
}

/// Reads a prebuilt split, or builds one from the edge list and writes it
/// (with its vocabulary) into the output directory.
fn load_dataset(cfg: &RunConfig) -> Result<HierarchyDataset> {
    if cfg.data.split.is_some() {
        let split = require_file("data.split", &cfg.data.split)?;
        let vocab = cfg
            .data
            .vocab
            .clone()
            .or_else(|| split.parent().map(|d| d.join("vocab.tsv")));
        let vocab = require_file("data.vocab", &vocab)?;
        let num_entities = read_vocab_len(&vocab)?;
        let file = File::open(&split).map_err(|e| Error::io(&split, e))?;
        return HierarchyDataset::read_tsv(BufReader::new(file), num_entities, &split.display().to_string());
    }
    let edges = require_file("data.edges (or data.split)", &cfg.data.edges)?;
    let h = Hierarchy::load(&edges)?;
    let ds = make_split(&h, cfg.data.closure_pct, cfg.train.neg_ratio, cfg.train.seed)?;
    let split = cfg.out.join("split.tsv");
    let mut w = create(&split)?;
    ds.write_tsv(&mut w)?;
    w.flush().map_err(|e| Error::io(&split, e))?;
    let vocab = cfg.out.join("vocab.tsv");
    let mut w = create(&vocab)?;
    h.write_vocab(&mut w)?;
    w.flush().map_err(|e| Error::io(&vocab, e))?;
    Ok(ds)
}

fn read_vocab_len(path: &Path) -> Result<usize> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut n = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let id = line.split('\t').next().unwrap_or("");
        if id.parse::<usize>().ok() != Some(n) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected id {n}, got `{id}`"),
            });
        }
        n += 1;
    }
    Ok(n)
}

fn split_cmd(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    for which in SplitName::ALL {
        let s = ds.split(which);
        let pos = s.iter().filter(|p| p.label).count();
        println!("{}: {pos} positive, {} negative", which.name(), s.len() - pos);
    }
    Ok(())
}

#[derive(Serialize)]
struct FinalMetrics {
    epochs: usize,
    num_entities: usize,
    train_pairs: usize,
    train_loss: f64,
    threshold: f64,
    validation: F1Report,
    test: F1Report,
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let outcome = train(&cfg.train, &ds)?;
    let metrics = cfg.out.join("metrics.jsonl");
    let mut w = create(&metrics)?;
    for m in &outcome.history {
        let line = serde_json::to_string(m).expect("metrics serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(&metrics, e))?;
    }
    w.flush().map_err(|e| Error::io(&metrics, e))?;

    let ops = &cfg.train.ops;
    let last = outcome.history.last().expect("at least one epoch");
    let summary = FinalMetrics {
        epochs: outcome.history.len(),
        num_entities: ds.num_entities,
        train_pairs: ds.train.len(),
        train_loss: last.train_loss,
        threshold: cfg.train.threshold,
        validation: evaluate(&outcome.table, &ds.validation, ops, cfg.train.threshold)?,
        test: evaluate(&outcome.table, &ds.test, ops, cfg.train.threshold)?,
    };
    write_json(&cfg.out.join("final_metrics.json"), &summary)?;
    write_json(&cfg.out.join("table.json"), &outcome.table)?;
    let boxes = cfg.out.join("boxes.tsv");
    let mut w = create(&boxes)?;
    outcome.table.write_boxes_tsv(&mut w)?;
    w.flush().map_err(|e| Error::io(&boxes, e))?;
    println!(
        "trained {} epochs: loss {:.6}, validation F1 {:.4}, test F1 {:.4}",
        summary.epochs, summary.train_loss, summary.validation.f1, summary.test.f1
    );
    Ok(())
}

/// Loads a JSON checkpoint, or a realized TSV dump as a Raw table.
fn load_table(path: &Path) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_reader(reader).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    } else {
        EmbeddingTable::read_boxes_tsv(reader, &path.display().to_string())
    }
}

#[derive(Serialize)]
struct EvalSummary {
    split: SplitName,
    threshold: f64,
    pairs: usize,
    #[serde(flatten)]
    report: F1Report,
}

fn eval_cmd(cfg: &RunConfig) -> Result<()> {
    let table = load_table(&require_file("eval.table", &cfg.eval.table)?)?;
    let ds = load_dataset(cfg)?;
    if table.num_entities() != ds.num_entities {
        return Err(Error::invalid(format!(
            "table has {} entities but the split has {}",
            table.num_entities(),
            ds.num_entities
        )));
    }
    let pairs = ds.split(cfg.eval.split_name);
    let report = evaluate(&table, pairs, &cfg.train.ops, cfg.train.threshold)?;
    let summary = EvalSummary {
        split: cfg.eval.split_name,
        threshold: cfg.train.threshold,
        pairs: pairs.len(),
        report,
    };
    write_json(&cfg.out.join("eval.json"), &summary)?;
    println!(
        "{}: precision {:.4}, recall {:.4}, F1 {:.4}",
        cfg.eval.split_name.name(),
        report.precision,
        report.recall,
        report.f1
    );
    Ok(())
}

fn dump_boxes_cmd(cfg: &RunConfig) -> Result<()> {
    let table = load_table(&require_file("eval.table", &cfg.eval.table)?)?;
    let path = cfg.out.join("boxes.tsv");
    let mut w = create(&path)?;
    table.write_boxes_tsv(&mut w)?;
    w.flush().map_err(|e| Error::io(&path, e))
}
