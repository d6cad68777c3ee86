//! `discorel` command-line interface.
//!
//! Exit status: 0 on success, 1 for data errors (unreadable or malformed
//! input, failed gradient check), 2 for usage errors.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use discorel::corpus::{one_vs_rest, read_instances, write_instances, AlignmentPolicy, LabelPreset, LoadOptions};
use discorel::embeddings::WordEmbeddings;
use discorel::eval::{coref_subset_report, eval_binary, eval_multiclass};
use discorel::features::FeatureMap;
use discorel::gradcheck::{run_gradcheck, GradcheckConfig};
use discorel::synth::{synth_generate, SynthSpec};
use discorel::training::{grid_search, resample_balanced, train, GridObjective, Grids, TrainConfig};
use discorel::{Dataset, Model, ModelMode};

#[derive(Parser)]
#[command(name = "discorel", version, about = "Entity-augmented discourse relation classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate instances, map labels and write a clean instance file.
    Prepare(PrepareArgs),
    /// Train a model from a config file.
    Train(TrainArgs),
    /// Print one predicted label per instance.
    Predict(PredictArgs),
    /// Evaluate a model under one protocol.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic entity-discrimination corpus.
    Synth(SynthArgs),
    /// Grid search over K, lambda and eta.
    Grid(GridArgs),
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<ModelMode>,
    #[arg(long = "K")]
    k: Option<usize>,
}

fn parse_mode(s: &str) -> Result<ModelMode, String> {
    s.parse()
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Multiclass11,
    FirstLevel,
}

#[derive(Clone, Copy, ValueEnum)]
enum Alignment {
    AllPairs,
    FirstPair,
}

#[derive(Args)]
struct PrepareArgs {
    /// Instance file (JSON lines).
    #[arg(long)]
    instances: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Keep only instances whose split field matches.
    #[arg(long)]
    split: Option<String>,
    /// Replace numerals with a shared token.
    #[arg(long)]
    map_numeric: bool,
    /// Word vectors to check and standardize.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Where to write the standardized vectors.
    #[arg(long, requires = "embeddings")]
    embeddings_out: Option<PathBuf>,
}

#[derive(Args)]
struct DataArgs {
    /// Instance file (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// Word vectors; `{K}` in the path is replaced by the model dimension.
    #[arg(long)]
    embeddings: String,
    #[arg(long, value_enum, default_value = "all-pairs")]
    alignment: Alignment,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Per-epoch log (`epoch<TAB>mean_objective<TAB>train_acc`).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Train one-vs-rest for this label with class resampling.
    #[arg(long)]
    positive: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    Multiclass,
    Binary,
    CorefSubset,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    #[arg(long, required_if_eq("protocol", "binary"))]
    positive: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 25)]
    trials: usize,
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file of corpus settings; flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectiveArg {
    Accuracy,
    F1,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "accuracy")]
    objective: ObjectiveArg,
    #[arg(long, required_if_eq("objective", "f1"))]
    positive: Option<String>,
    /// Where to write the winning config.
    #[arg(long)]
    best: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

/// On-disk configuration: a `[train]` table and an optional `[grid]` table.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    train: TrainConfig,
    grid: Option<Grids>,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn apply_common(cfg: &mut TrainConfig, c: &Common) {
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = c.mode {
        cfg.mode = m;
    }
    if let Some(k) = c.k {
        cfg.k = k;
    }
}

fn load_options(a: Alignment) -> LoadOptions {
    LoadOptions {
        alignment: match a {
            Alignment::AllPairs => AlignmentPolicy::AllPairs,
            Alignment::FirstPair => AlignmentPolicy::FirstPair,
        },
        map_numeric: false,
    }
}

fn load_dataset(path: &Path, opts: LoadOptions) -> Result<Dataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let instances =
        read_instances(std::io::BufReader::new(file), opts).with_context(|| format!("reading {}", path.display()))?;
    Ok(Dataset::new(instances))
}

fn embeddings_path(template: &str, k: usize) -> PathBuf {
    PathBuf::from(template.replace("{K}", &k.to_string()))
}

fn load_embeddings(template: &str, k: usize) -> Result<WordEmbeddings> {
    let path = embeddings_path(template, k);
    WordEmbeddings::load(&path, None).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let opts = LoadOptions {
        map_numeric: a.map_numeric,
        ..Default::default()
    };
    let ds = load_dataset(&a.instances, opts)?;
    let mut instances: Vec<_> = ds
        .instances
        .into_iter()
        .filter(|i| a.split.is_none() || i.split == a.split)
        .collect();
    if let Some(p) = a.preset {
        let preset = match p {
            Preset::Multiclass11 => LabelPreset::Multiclass11,
            Preset::FirstLevel => LabelPreset::FirstLevel,
        };
        instances = preset.apply(instances);
    }
    let mut w = create(&a.out)?;
    write_instances(&mut w, &instances)?;
    w.flush()?;
    eprintln!("wrote {} instances to {}", instances.len(), a.out.display());

    if let Some(path) = &a.embeddings {
        let emb = WordEmbeddings::load(path, None).with_context(|| format!("reading {}", path.display()))?;
        eprintln!(
            "{} vectors of dimension {} ({} duplicates skipped)",
            emb.len(),
            emb.dim(),
            emb.duplicates()
        );
        if let Some(out) = &a.embeddings_out {
            let std = emb.standardize()?;
            if !std.zero_variance_dims().is_empty() {
                eprintln!("zero-variance dimensions: {:?}", std.zero_variance_dims());
            }
            let mut w = create(out)?;
            std.write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = read_config(a.config.as_deref())?.train;
    apply_common(&mut cfg, &a.common);
    let mut ds = load_dataset(&a.data.data, load_options(a.data.alignment))?;
    if let Some(pos) = &a.positive {
        if ds.label_index(pos).is_none() {
            bail!("label {pos:?} does not occur in {}", a.data.data.display());
        }
        ds = resample_balanced(&one_vs_rest(&ds, pos), pos, cfg.seed)?;
    }
    let emb = load_embeddings(&a.data.embeddings, cfg.k)?;
    let map = if cfg.mode.uses_features() {
        Some(FeatureMap::select(&ds, cfg.budgets)?)
    } else {
        None
    };
    let (model, log) = train(&ds, &emb, map.as_ref(), &cfg)?;
    model.save(&a.model).with_context(|| format!("writing {}", a.model.display()))?;
    if let Some(path) = &a.log {
        let mut w = create(path)?;
        for l in &log {
            writeln!(w, "{l}")?;
        }
        w.flush()?;
    }
    if let Some(last) = log.last() {
        eprintln!("{last}");
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("reading {}", path.display()))
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let ds = load_dataset(&a.data.data, load_options(a.data.alignment))?;
    let emb = load_embeddings(&a.data.embeddings, model.k())?;
    let out = std::io::stdout();
    let mut w = BufWriter::new(out.lock());
    for label in model.predict_labels(&ds, &emb)? {
        writeln!(w, "{label}")?;
    }
    w.flush()?;
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut ds = load_dataset(&a.data.data, load_options(a.data.alignment))?;
    let emb = load_embeddings(&a.data.embeddings, model.k())?;
    let report = match a.protocol {
        ProtocolArg::Multiclass => eval_multiclass(&model, &ds, &emb)?,
        ProtocolArg::CorefSubset => coref_subset_report(&model, &ds, &emb)?,
        ProtocolArg::Binary => {
            let pos = a.positive.as_deref().expect("required by clap");
            ds = one_vs_rest(&ds, pos);
            eval_binary(&model, &ds, &emb, pos)?
        }
    };
    print!("{report}");
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<bool> {
    let mut cfg = GradcheckConfig {
        trials: a.trials,
        h: a.h,
        ..Default::default()
    };
    if let Some(k) = a.common.k {
        cfg.ks = vec![k];
    }
    if let Some(m) = a.common.mode {
        cfg.modes = vec![m];
    }
    if let Some(s) = a.common.seed {
        cfg.seed = s;
    }
    let report = run_gradcheck(&cfg)?;
    println!("mode\tK\ttrials\tresampled\tmax_rel_err");
    for r in &report.rows {
        println!("{}\t{}\t{}\t{}\t{:.3e}", r.mode, r.k, r.trials, r.resampled, r.max_rel_err);
    }
    println!("max_rel_err\t{:.3e}", report.max_rel_err());
    println!("{}", if report.passed() { "ok" } else { "FAILED" });
    Ok(report.passed())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthSpec::default(),
    };
    if let Some(n) = a.pairs {
        spec.pairs = n;
    }
    if let Some(k) = a.common.k {
        spec.k = k;
    }
    if let Some(s) = a.common.seed {
        spec.seed = s;
    }
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let corpus = synth_generate(&spec);
    let mut w = create(&a.out_dir.join("synth.jsonl"))?;
    write_instances(&mut w, &corpus.dataset.instances)?;
    w.flush()?;
    let mut w = create(&a.out_dir.join("synth.vec"))?;
    corpus.embeddings.write(&mut w)?;
    w.flush()?;
    eprintln!(
        "wrote {} instances and {} vectors to {}",
        corpus.dataset.len(),
        corpus.embeddings.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn grid_cmd(a: GridArgs) -> Result<()> {
    let file = read_config(a.config.as_deref())?;
    let mut base = file.train;
    apply_common(&mut base, &a.common);
    let mut grids = file.grid.unwrap_or_default();
    if let Some(k) = a.common.k {
        grids.k = vec![k];
    }
    let mut ds = load_dataset(&a.data.data, load_options(a.data.alignment))?;
    let objective = match a.objective {
        ObjectiveArg::Accuracy => GridObjective::Accuracy,
        ObjectiveArg::F1 => {
            let pos = a.positive.clone().expect("required by clap");
            ds = resample_balanced(&one_vs_rest(&ds, &pos), &pos, base.seed)?;
            GridObjective::F1 { positive: pos }
        }
    };
    let mut embeddings = BTreeMap::new();
    for &k in &grids.k {
        embeddings.insert(k, load_embeddings(&a.data.embeddings, k)?);
    }
    let result = grid_search(&ds, &embeddings, &base, &grids, &objective)?;
    print!("{}", result.table());
    let best = &result.rows[result.best];
    println!("best\t{}\t{}\t{}\t{:.6}", best.k, best.lambda, best.eta, best.score);
    if let Some(path) = &a.best {
        let cfg = FileConfig {
            train: result.best_config,
            grid: None,
        };
        std::fs::write(path, toml::to_string(&cfg)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Gradcheck(a) => match gradcheck_cmd(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
        Command::Synth(a) => synth_cmd(a),
        Command::Grid(a) => grid_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_chain(&e));
            ExitCode::from(1)
        }
    }
}

/// Error chain joined with `: `, dropping causes already quoted by their parent.
fn render_chain(e: &anyhow::Error) -> String {
    let mut out: Vec<String> = Vec::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.last().is_some_and(|prev| prev.contains(&text)) {
            continue;
        }
        out.push(text);
    }
    out.join(": ")
}
