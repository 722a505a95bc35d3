//! Command-line front end. [`run`] parses arguments, executes one subcommand
//! and returns the process exit code: 0 on success, 1 for invalid input or
//! configuration, 2 for failures while running.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::autodiff::grad_check;
use crate::eval::{
    ablation_matrix, bucket_by_post_count, compute_metrics, export_attention_all, generate_synthetic, write_ablation_table,
    write_bucket_table, EvalError, SyntheticSpec, DEFAULT_BUCKET_EDGES, POSITIVE_CLASS_NOTE,
};
use crate::features::{build_vocab, prepare_event};
use crate::ingest::{dataset_stats, prune_events_with, read_events, write_events, AdhocEventTree, IngestError, Label};
use crate::model::{event_loss, l2_penalty, AblationConfig, ModelError, ModelParams};
use crate::train::{cross_validate, grid_search, train_model, write_grid_table, Grid, TrainConfig, TrainError, TrainedModel};

pub const OUTPUT_DIR_ENV: &str = "BAET_OUTPUT_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "baet", version, about = "Rumor detection on bipartite post/author trees")]
struct Cli {
    /// Directory for every artifact of the run.
    #[arg(long, short, global = true, env = OUTPUT_DIR_ENV, default_value = "baet-out")]
    output: PathBuf,
    /// TOML file with `[hyper]`, `[ablation]` and `[caps]` tables; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate and prune a corpus, then write the kept events and their statistics.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Events with fewer responsive posts are dropped.
        #[arg(long, default_value_t = 3)]
        min_responses: usize,
    },
    /// Corpus statistics.
    Stats {
        #[arg(long)]
        input: PathBuf,
    },
    /// Cross-validate, then fit on all events and save the model.
    Train {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Score a saved model on a corpus.
    Eval {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Cross-validate the full model and every ablation variant on shared folds.
    Ablate {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Cross-validate over a grid of one or more hyperparameters.
    Sweep {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = SweepParam::Mu)]
        param: SweepParam,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Accuracy of a saved model by number of responsive posts.
    Buckets {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Increasing lower bucket bounds; the last bucket is open-ended.
        #[arg(long, value_delimiter = ',')]
        edges: Option<Vec<usize>>,
    },
    /// Write the aggregation weights of a saved model for every event.
    ExportAttention {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Compare analytic and finite-difference gradients on a random event.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        nodes: usize,
        #[arg(long, default_value_t = 6)]
        max_len: usize,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Generate a synthetic labelled corpus.
    Synth {
        #[arg(long, default_value_t = 200)]
        events: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 0.9)]
        marker_prob: f64,
        #[arg(long, default_value_t = 0.5)]
        rumor_fraction: f64,
        #[arg(long, default_value_t = 0.9)]
        author_signal: f64,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SweepParam {
    Mu,
    D,
    LrL2,
}

/// Hyperparameter and ablation overrides.
#[derive(Args, Debug, Default)]
struct ModelFlags {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    min_count: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Disable a part of the model: `post-tree`, `author-tree`, or
    /// `<post|author>.<tnp|ral|trvnn|tal>`. Repeatable.
    #[arg(long = "without", value_name = "PART")]
    without: Vec<String>,
}

impl ModelFlags {
    fn apply(&self, cfg: &mut TrainConfig) -> anyhow::Result<()> {
        let h = &mut cfg.hyper;
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { h.$f = v; } )* };
        }
        set!(d, mu, max_len, lr, l2, dropout, batch_size, epochs, folds, seed, min_count);
        if self.patience.is_some() {
            h.patience = self.patience;
        }
        for part in &self.without {
            disable(&mut cfg.ablation, part)?;
        }
        Ok(())
    }
}

fn disable(ab: &mut AblationConfig, part: &str) -> anyhow::Result<()> {
    match part {
        "post-tree" => ab.use_post_tree = false,
        "author-tree" => ab.use_author_tree = false,
        _ => {
            let (side, module) = part.split_once('.').ok_or_else(|| anyhow!("unknown model part `{part}`"))?;
            let m = match side {
                "post" => &mut ab.post,
                "author" => &mut ab.author,
                _ => bail!("unknown tree `{side}` in `{part}`"),
            };
            match module {
                "tnp" => m.tnp = false,
                "ral" => m.ral = false,
                "trvnn" => m.trvnn = false,
                "tal" => m.tal = false,
                _ => bail!("unknown module `{module}` in `{part}`"),
            }
        }
    }
    Ok(())
}

/// An error with the exit code it maps to.
struct Failure {
    code: i32,
    error: anyhow::Error,
}

type Outcome<T> = Result<T, Failure>;

fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure { code: 1, error: e.into() }
}

fn runtime<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure { code: 2, error: e.into() }
}

fn is_invalid_input(e: &anyhow::Error) -> bool {
    if e.downcast_ref::<IngestError>().is_some() {
        return true;
    }
    let model = |m: &ModelError| matches!(m, ModelError::InvalidHyperparams(_) | ModelError::NoTree);
    let train = |t: &TrainError| match t {
        TrainError::Model(m) => model(m),
        TrainError::TooFewSamples { .. } | TrainError::EmptyTrainSet | TrainError::EmptyGrid | TrainError::Feature(_) => true,
        _ => false,
    };
    if let Some(m) = e.downcast_ref::<ModelError>() {
        return model(m);
    }
    if let Some(t) = e.downcast_ref::<TrainError>() {
        return train(t);
    }
    if let Some(ev) = e.downcast_ref::<EvalError>() {
        return match ev {
            EvalError::InvalidSpec(_) | EvalError::InvalidEdges(_) | EvalError::Ingest(_) => true,
            EvalError::Train(t) => train(t),
            EvalError::Model(m) => model(m),
            _ => false,
        };
    }
    false
}

/// Maps a library error to 1 or 2 depending on whether the input was at fault.
fn classify<E: Into<anyhow::Error>>(e: E) -> Failure {
    let error = e.into();
    let code = if is_invalid_input(&error) { 1 } else { 2 };
    Failure { code, error }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    args: Vec<String>,
    seed: Option<u64>,
    config_digest: String,
    config: serde_json::Value,
    version: &'static str,
    outputs: Vec<String>,
}

/// Lowercase hex SHA-256 of the canonical JSON form of `config`.
pub fn config_digest(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

struct Run {
    out: PathBuf,
    args: Vec<String>,
    outputs: Vec<String>,
}

impl Run {
    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out.join(name)
    }

    fn create(&mut self, name: &str) -> Outcome<BufWriter<File>> {
        let p = self.path(name);
        File::create(&p).map(BufWriter::new).with_context(|| format!("creating {}", p.display())).map_err(runtime)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Outcome<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(runtime)?;
        writeln!(w).and_then(|_| w.flush()).map_err(runtime)
    }

    fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Outcome<()> {
        let mut w = self.create(name)?;
        for item in items {
            serde_json::to_writer(&mut w, item).map_err(runtime)?;
            writeln!(w).map_err(runtime)?;
        }
        w.flush().map_err(runtime)
    }

    fn manifest<C: Serialize>(&mut self, command: &str, seed: Option<u64>, config: &C) -> Outcome<()> {
        let config = serde_json::to_value(config).map_err(runtime)?;
        let m = Manifest {
            command,
            args: self.args.clone(),
            seed,
            config_digest: config_digest(&config),
            config,
            version: env!("CARGO_PKG_VERSION"),
            outputs: self.outputs.clone(),
        };
        let text = serde_json::to_string_pretty(&m).map_err(runtime)? + "\n";
        std::fs::write(self.out.join(MANIFEST_FILE), text).map_err(runtime)
    }
}

fn load_events(path: &Path) -> Outcome<Vec<AdhocEventTree>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display())).map_err(runtime)?;
    read_events(BufReader::new(f)).with_context(|| format!("reading {}", path.display())).map_err(invalid)
}

fn load_config(path: Option<&Path>, flags: &ModelFlags) -> Outcome<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(invalid)?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display())).map_err(invalid)?
        }
        None => TrainConfig::default(),
    };
    flags.apply(&mut cfg).map_err(invalid)?;
    cfg.hyper.validate().map_err(invalid)?;
    cfg.ablation.validate().map_err(invalid)?;
    Ok(cfg)
}

fn load_model(dir: &Path) -> Outcome<TrainedModel> {
    TrainedModel::load(dir).with_context(|| format!("loading model from {}", dir.display())).map_err(runtime)
}

#[derive(Serialize)]
struct FoldRow {
    fold: String,
    train_size: usize,
    test_size: usize,
    accuracy: f64,
    precision: f64,
    recall: f64,
    f1: f64,
}

fn execute(cli: Cli, args: Vec<String>) -> Outcome<()> {
    std::fs::create_dir_all(&cli.output).with_context(|| format!("creating {}", cli.output.display())).map_err(runtime)?;
    let mut run = Run { out: cli.output.clone(), args, outputs: Vec::new() };
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Ingest { input, min_responses } => {
            let events = load_events(&input)?;
            let before = events.len();
            let kept = prune_events_with(events, min_responses);
            println!("kept {} of {} events", kept.len(), before);
            let stats = dataset_stats(&kept);
            let w = run.create("events.jsonl")?;
            write_events(&kept, w).map_err(runtime)?;
            run.write_json("stats.json", &stats)?;
            run.manifest("ingest", None, &serde_json::json!({ "min_responses": min_responses }))?;
        }
        Command::Stats { input } => {
            let stats = dataset_stats(&load_events(&input)?);
            println!("{}", serde_json::to_string_pretty(&stats).map_err(runtime)?);
            run.write_json("stats.json", &stats)?;
            run.manifest("stats", None, &serde_json::json!({}))?;
        }
        Command::Train { input, model } => {
            let cfg = load_config(config_path, &model)?;
            let events = load_events(&input)?;
            let report = cross_validate(&events, &cfg).map_err(classify)?;
            run.write_json("folds.json", &report.folds)?;
            let mut rows = Vec::new();
            for (r, fold) in report.results.iter().zip(&report.folds) {
                run.write_jsonl(&format!("trace_fold{}.jsonl", r.fold), &r.trace)?;
                let m = &r.metrics;
                rows.push(FoldRow {
                    fold: r.fold.to_string(),
                    train_size: fold.train.len(),
                    test_size: fold.test.len(),
                    accuracy: m.accuracy,
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                });
            }
            let m = report.mean;
            rows.push(FoldRow {
                fold: "mean".into(),
                train_size: 0,
                test_size: 0,
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            });
            write_csv(run.create("cv.csv")?, &rows)?;
            println!("{POSITIVE_CLASS_NOTE}");
            println!("cross-validated accuracy {:.4}, F1 {:.4} (fold hash {})", m.accuracy, m.f1, report.fold_hash);
            let model = train_model(&events, &cfg).map_err(classify)?;
            run.write_jsonl("trace_final.jsonl", &model.trace)?;
            let dir = run.path("model");
            model.save(&dir).map_err(runtime)?;
            run.manifest("train", Some(cfg.hyper.seed), &cfg)?;
        }
        Command::Eval { input, model } => {
            let model = load_model(&model)?;
            let events = load_events(&input)?;
            let probs = model.predict(&events).map_err(classify)?;
            let labels: Vec<Label> = events.iter().map(|e| e.label).collect();
            let m = compute_metrics(&probs, &labels).map_err(invalid)?;
            println!("{POSITIVE_CLASS_NOTE}");
            println!("accuracy {:.4} precision {:.4} recall {:.4} F1 {:.4}", m.accuracy, m.precision, m.recall, m.f1);
            #[derive(Serialize)]
            struct Row {
                positive_class: &'static str,
                accuracy: f64,
                precision: f64,
                recall: f64,
                f1: f64,
                tp: usize,
                fp: usize,
                #[serde(rename = "fn")]
                fn_: usize,
                tn: usize,
            }
            let row = Row {
                positive_class: "rumor",
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                tp: m.tp,
                fp: m.fp,
                fn_: m.fn_,
                tn: m.tn,
            };
            write_csv(run.create("metrics.csv")?, &[row])?;
            run.manifest("eval", Some(model.config.hyper.seed), &model.config)?;
        }
        Command::Ablate { input, model } => {
            let cfg = load_config(config_path, &model)?;
            let events = load_events(&input)?;
            let rows = ablation_matrix(&events, &cfg).map_err(classify)?;
            for r in &rows {
                println!("{:<24} {:.4}", r.name, r.mean.accuracy);
            }
            write_ablation_table(&rows, run.create("ablation.csv")?).map_err(runtime)?;
            run.manifest("ablate", Some(cfg.hyper.seed), &cfg)?;
        }
        Command::Sweep { input, param, model } => {
            let cfg = load_config(config_path, &model)?;
            let events = load_events(&input)?;
            let grid = match param {
                SweepParam::Mu => Grid::mu_sweep(&cfg.hyper),
                SweepParam::D => Grid::d_sweep(&cfg.hyper),
                SweepParam::LrL2 => Grid::optimizer_sweep(&cfg.hyper),
            };
            let report = grid_search(&events, &grid, &cfg).map_err(classify)?;
            let name = format!("sweep_{}.csv", serde_json::to_value(param).map_err(runtime)?.as_str().unwrap_or("grid"));
            write_grid_table(&report.rows, run.create(&name)?).map_err(runtime)?;
            for r in &report.rows {
                println!("d={} mu={} lr={} l2={}: accuracy {:.4}", r.hyper.d, r.hyper.mu, r.hyper.lr, r.hyper.l2, r.mean.accuracy);
            }
            println!("best: d={} mu={} lr={} l2={}", report.best.d, report.best.mu, report.best.lr, report.best.l2);
            run.manifest("sweep", Some(cfg.hyper.seed), &serde_json::json!({ "base": cfg, "grid": grid }))?;
        }
        Command::Buckets { input, model, edges } => {
            let model = load_model(&model)?;
            let events = load_events(&input)?;
            let edges = edges.unwrap_or_else(|| DEFAULT_BUCKET_EDGES.to_vec());
            let buckets = bucket_by_post_count(&events, &model, &edges).map_err(classify)?;
            write_bucket_table(&buckets, run.create("buckets.csv")?).map_err(runtime)?;
            run.manifest("buckets", Some(model.config.hyper.seed), &serde_json::json!({ "model": model.config, "edges": edges }))?;
        }
        Command::ExportAttention { input, model } => {
            let model = load_model(&model)?;
            let events = load_events(&input)?;
            let records = export_attention_all(&events, &model).map_err(classify)?;
            run.write_jsonl("attention.jsonl", &records)?;
            run.manifest("export-attention", Some(model.config.hyper.seed), &model.config)?;
        }
        Command::Gradcheck { d, nodes, max_len, eps, tolerance, seed } => {
            let report = gradcheck(d, nodes, max_len, eps, seed)?;
            let worst = report.worst.as_ref().map(|(n, i)| format!("{n}[{i}]")).unwrap_or_default();
            println!("max relative error {:.3e} at {worst} over {} coordinates", report.max_rel_error, report.coordinates);
            let cfg = serde_json::json!({ "d": d, "nodes": nodes, "max_len": max_len, "eps": eps, "tolerance": tolerance });
            run.write_json(
                "gradcheck.json",
                &serde_json::json!({ "max_rel_error": report.max_rel_error, "worst": worst, "coordinates": report.coordinates }),
            )?;
            run.manifest("gradcheck", Some(seed), &cfg)?;
            if !(report.max_rel_error < tolerance) {
                return Err(runtime(anyhow!("gradient check failed: {:.3e} ≥ {tolerance:e}", report.max_rel_error)));
            }
        }
        Command::Synth { events, seed, marker_prob, rumor_fraction, author_signal } => {
            let spec = SyntheticSpec { events, seed, marker_prob, rumor_fraction, author_signal, ..SyntheticSpec::default() };
            let corpus = generate_synthetic(&spec).map_err(classify)?;
            write_events(&corpus, run.create("synthetic.jsonl")?).map_err(runtime)?;
            println!("wrote {} events", corpus.len());
            run.manifest("synth", Some(seed), &spec)?;
        }
    }
    Ok(())
}

fn write_csv<W: Write, T: Serialize>(w: W, rows: &[T]) -> Outcome<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(runtime)?;
    }
    out.flush().map_err(runtime)
}

/// Gradient check of the full training objective on one synthetic event.
fn gradcheck(d: usize, nodes: usize, max_len: usize, eps: f64, seed: u64) -> Outcome<crate::autodiff::GradCheckReport> {
    if nodes == 0 {
        return Err(invalid(anyhow!("--nodes must be at least 1")));
    }
    let spec = SyntheticSpec { events: 1, min_replies: nodes - 1, max_replies: nodes - 1, seed, ..SyntheticSpec::default() };
    let tree = generate_synthetic(&spec).map_err(classify)?.remove(0);
    let vocab = build_vocab(tree.nodes().iter().map(|n| n.text.as_str()), 1).map_err(runtime)?;
    let cfg = TrainConfig::new(crate::model::Hyperparams { d, max_len, dropout: 0.0, ..Default::default() });
    cfg.hyper.validate().map_err(invalid)?;
    let event = prepare_event(&tree, &vocab, max_len, cfg.caps).map_err(runtime)?;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let params = ModelParams::new(vocab.len(), d, &mut rng);
    grad_check::<_, ModelError>(&params.store, eps, |g| {
        let (_, ce) = event_loss(g, &params, &event, &cfg.hyper, &cfg.ablation, None::<&mut rand_chacha::ChaCha8Rng>)?;
        match l2_penalty(g, &params, cfg.hyper.l2)? {
            Some(pen) => Ok(g.add(ce, pen)?),
            None => Ok(ce),
        }
    })
    .map_err(runtime)
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let recorded = args.iter().skip(1).cloned().collect();
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(cli, recorded)),
            Err(e) => Err(runtime(e)),
        },
        None => execute(cli, recorded),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.code
        }
    }
}
