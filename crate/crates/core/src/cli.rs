//! Command-line front end.
//!
//! Every subcommand reads a dataset (`--data DIR`, or the synthetic dataset
//! described by the run config), writes machine output under `--out`, and
//! reports progress on stderr.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::assignment::CoarseDictionary;
use crate::data::{gen_synthetic, load_config, load_dataset, preset, synthetic_dictionary, GroundingDataset, RunConfig, Split};
use crate::error::{CiteError, Result};
use crate::evaluation::{accuracy, concept_purity, concept_report, k_sweep, localize, oracle_upper_bound, score_image, sweep_svg};
use crate::network::{load_model_for, save_model, AssignmentMode, ModelConfig};
use crate::tensor::REL_ERROR_FLOOR;
use crate::training::{check_model_gradients, fit_kmeans, train_with_progress, AssignOptions, AssignmentKind, Assigner};

pub const MODEL_FILE: &str = "model.bin";
pub const ASSIGNER_FILE: &str = "assigner.json";
pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "train_log.csv";
/// Environment variable capping the worker thread count (0 = one per core).
pub const THREADS_ENV: &str = "CITE_THREADS";
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "cite", about = "Phrase grounding with conditional image-text embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run config, merged over its preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Output directory, created if absent.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub assignment: Option<AssignmentKind>,
    #[arg(long, global = true)]
    pub proposals_per_image: Option<usize>,
    /// Also report the proposal upper bound.
    #[arg(long, global = true)]
    pub oracle: bool,
    /// Dataset directory; omitted means the configured synthetic dataset.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// `key=value` override, repeatable (`synth.noise=0.2`).
    #[arg(long = "set", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and evaluate it on the validation split.
    Train,
    /// Evaluate a trained run on one split.
    Eval {
        /// Directory written by `train`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Rank one image's proposals for one phrase feature row.
    Predict {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        image: String,
        #[arg(long)]
        phrase_row: usize,
    },
    /// k-means over phrase features.
    Cluster,
    /// Write a synthetic dataset to `--out`.
    Synth,
    /// Finite-difference check of the full model.
    Gradcheck,
    /// Train and evaluate one model per K.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        ks: Vec<usize>,
        /// Assignment kinds; defaults to the configured one.
        #[arg(long, value_delimiter = ',')]
        kinds: Vec<AssignmentKind>,
    },
}

/// Applies `CITE_THREADS` to the global worker pool.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CiteError::Config(format!("{THREADS_ENV} must be a non-negative integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CiteError::Config(format!("{THREADS_ENV}: {e}")))
}

pub fn resolve_config(c: &Common) -> Result<RunConfig> {
    let name = c.preset.as_deref().unwrap_or("synth");
    let mut cfg = match &c.config {
        Some(path) => load_config(path, name)?,
        None => preset(name)?,
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(k) = c.k {
        cfg.k = k;
    }
    if let Some(a) = c.assignment {
        cfg.assignment = a;
    }
    if c.proposals_per_image.is_some() {
        cfg.proposals_per_image = c.proposals_per_image;
    }
    let cfg = cfg.with_overrides(&c.overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(c: &Common, cfg: &RunConfig) -> Result<GroundingDataset> {
    match &c.data {
        Some(dir) => load_dataset(dir),
        None => {
            eprintln!("generating synthetic dataset (seed {})", cfg.synth.seed);
            gen_synthetic(&cfg.synth)
        }
    }
}

fn dictionary(c: &Common, cfg: &RunConfig) -> Result<Option<CoarseDictionary>> {
    match (&cfg.dictionary, &c.data) {
        (Some(path), _) => CoarseDictionary::load(path).map(Some),
        (None, None) => Ok(Some(synthetic_dictionary())),
        (None, Some(_)) => Ok(None),
    }
}

fn assign_options(c: &Common, cfg: &RunConfig) -> Result<AssignOptions> {
    Ok(AssignOptions {
        seed: cfg.seed,
        kmeans_iters: cfg.kmeans_iters,
        kmeans_on_test: cfg.kmeans_on_test,
        dictionary: dictionary(c, cfg)?,
    })
}

fn out_dir(c: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&c.out).map_err(|e| CiteError::io(&c.out, e))?;
    Ok(&c.out)
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| CiteError::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let c = &cli.common;
    match cli.command {
        Command::Train => cmd_train(c),
        Command::Eval { run, split } => cmd_eval(c, &run, split),
        Command::Predict { run, image, phrase_row } => cmd_predict(c, &run, &image, phrase_row),
        Command::Cluster => cmd_cluster(c),
        Command::Synth => cmd_synth(c),
        Command::Gradcheck => cmd_gradcheck(c),
        Command::Sweep { ks, kinds } => cmd_sweep(c, &ks, &kinds),
    }
}

pub fn cmd_train(c: &Common) -> Result<()> {
    let cfg = resolve_config(c)?;
    let ds = dataset(c, &cfg)?;
    let enc = ds.encode(cfg.spatial, cfg.proposals_per_image)?;
    let assigner = Assigner::build(cfg.assignment, cfg.k, &ds, &assign_options(c, &cfg)?)?;
    let model_cfg = cfg.model_config(enc.region_dim(), enc.phrase_dim());
    let out = out_dir(c)?;
    eprintln!(
        "training K={} {} M={} on {} phrases",
        cfg.k,
        cfg.assignment,
        cfg.embed_dim,
        ds.phrases_in(Split::Train).len()
    );
    let outcome = train_with_progress(&ds, &enc, &model_cfg, &cfg.train_config(), &assigner, &mut |row| {
        eprintln!(
            "epoch {:>3} {:<4} lr {:.2e} loss {:.5} val {:.4}",
            row.epoch, row.phase, row.lr, row.train_loss, row.val_accuracy
        );
    })?;
    save_model(&outcome.model, out.join(MODEL_FILE))?;
    assigner.save(out.join(ASSIGNER_FILE))?;
    write(out.join(CONFIG_FILE), &serde_json::to_string_pretty(&cfg).expect("config serialises"))?;
    outcome.log.write_csv(out.join(LOG_FILE))?;
    let report = accuracy(&outcome.model, &ds, &enc, &ds.phrases_in(Split::Val), &assigner)?;
    report.write_csv(out.join("eval_val.csv"))?;
    println!("best epoch {} val accuracy {}", outcome.best_epoch, report.accuracy);
    Ok(())
}

struct LoadedRun {
    cfg: RunConfig,
    ds: GroundingDataset,
    enc: crate::data::EncodedInputs,
    model: crate::network::ModelParams,
    assigner: Assigner,
}

fn load_run(c: &Common, run: &Path) -> Result<LoadedRun> {
    let mut cfg = load_config(run.join(CONFIG_FILE), "synth")?;
    if c.proposals_per_image.is_some() {
        cfg.proposals_per_image = c.proposals_per_image;
    }
    let ds = dataset(c, &cfg)?;
    let enc = ds.encode(cfg.spatial, cfg.proposals_per_image)?;
    let model = load_model_for(run.join(MODEL_FILE), &cfg.model_config(enc.region_dim(), enc.phrase_dim()))?;
    let assigner = Assigner::load(run.join(ASSIGNER_FILE))?;
    Ok(LoadedRun { cfg, ds, enc, model, assigner })
}

pub fn cmd_eval(c: &Common, run: &Path, split: Split) -> Result<()> {
    let r = load_run(c, run)?;
    if !r.ds.has_split(split) {
        return Err(CiteError::Data(format!("dataset has no {split} split")));
    }
    let phrases = r.ds.phrases_in(split);
    let out = out_dir(c)?;
    let report = accuracy(&r.model, &r.ds, &r.enc, &phrases, &r.assigner)?;
    report.write_csv(out.join(format!("eval_{split}.csv")))?;
    println!("{split} accuracy {} ({}/{})", report.accuracy, report.correct, report.phrase_count);
    if c.oracle {
        let bound = oracle_upper_bound(&r.ds, &phrases, r.cfg.proposals_per_image)?;
        write(out.join(format!("oracle_{split}.txt")), &format!("{bound}\n"))?;
        println!("oracle upper bound {bound}");
    }
    if r.model.config().assignment == AssignmentMode::Learned {
        concept_report(&r.model, &r.ds, &r.enc, &phrases)?.write_json(out.join(format!("concepts_{split}.json")))?;
    }
    Ok(())
}

pub fn cmd_predict(c: &Common, run: &Path, image: &str, phrase_row: usize) -> Result<()> {
    let r = load_run(c, run)?;
    let img = r
        .ds
        .images
        .iter()
        .position(|i| i.id == image)
        .ok_or_else(|| CiteError::Data(format!("unknown image id `{image}`")))?;
    let phrase = r
        .ds
        .phrases
        .iter()
        .position(|p| p.sample.feature_row == phrase_row)
        .ok_or_else(|| CiteError::Data(format!("no phrase uses feature row {phrase_row}")))?;
    let n = r.enc.proposal_count(img);
    if n == 0 {
        emit("[]");
        return Ok(());
    }
    let scores = score_image(&r.model, &r.ds, &r.enc, &r.assigner, img, &[phrase])?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[(0, b)].total_cmp(&scores[(0, a)]).then(a.cmp(&b)));
    debug_assert_eq!(order[0], localize(scores.row(0))?);
    let ranked: Vec<Ranked> = order
        .iter()
        .map(|&i| Ranked { proposal: i, bbox: r.ds.images[img].proposals[i].to_array(), score: scores[(0, i)] })
        .collect();
    emit(&serde_json::to_string_pretty(&ranked).expect("json"));
    Ok(())
}

#[derive(serde::Serialize)]
struct Ranked {
    proposal: usize,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    score: f64,
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

pub fn cmd_cluster(c: &Common) -> Result<()> {
    let cfg = resolve_config(c)?;
    let ds = dataset(c, &cfg)?;
    let model = fit_kmeans(&ds, cfg.k, &assign_options(c, &cfg)?)?;
    let mut assigned = Vec::with_capacity(ds.phrases.len());
    let mut table = serde_json::Map::new();
    for p in &ds.phrases {
        let x: Vec<f64> = ds.phrase_features.row(p.sample.feature_row).iter().map(|&v| v as f64).collect();
        let (k, _) = crate::assignment::nearest_center(&x, &model.centers);
        assigned.push(k);
        table.insert(p.sample.phrase_id.clone(), json!(k));
    }
    let centers: Vec<&[f64]> = (0..model.k()).map(|i| model.centers.row(i)).collect();
    let doc = json!({
        "k": model.k(),
        "seed": model.seed,
        "iterations": model.iterations_run,
        "inertia": model.inertia_history,
        "centers": centers,
        "assignments": table,
    });
    write(out_dir(c)?.join("clusters.json"), &serde_json::to_string_pretty(&doc).expect("json"))?;
    eprintln!("k-means converged after {} iterations", model.iterations_run);
    let labels: Option<Vec<usize>> = ds.phrases.iter().map(|p| p.concept).collect();
    if let Some(labels) = labels {
        println!("purity {}", concept_purity(&assigned, &labels));
    }
    Ok(())
}

pub fn cmd_synth(c: &Common) -> Result<()> {
    let mut cfg = resolve_config(c)?;
    if let Some(s) = c.seed {
        cfg.synth.seed = s;
    }
    let ds = gen_synthetic(&cfg.synth)?;
    ds.save(out_dir(c)?)?;
    println!("{} images, {} phrases", ds.images.len(), ds.phrases.len());
    Ok(())
}

pub fn cmd_gradcheck(c: &Common) -> Result<()> {
    let cfg = resolve_config(c)?;
    let model_cfg = ModelConfig::new(16, 16, 8, c.k.unwrap_or(3), AssignmentMode::Learned, cfg.seed);
    let report = check_model_gradients(&model_cfg, 4, 6, 1e-3, cfg.seed)?;
    println!(
        "max relative error {:e} ({}[{}]), {} coordinates checked, {} skipped at kinks, floor {REL_ERROR_FLOOR:e}",
        report.max_rel_error, report.worst_tensor, report.worst_index, report.checked, report.skipped
    );
    if report.max_rel_error >= GRADCHECK_TOLERANCE {
        return Err(CiteError::Numeric(format!(
            "gradient check failed: {:e} ≥ {GRADCHECK_TOLERANCE:e}",
            report.max_rel_error
        )));
    }
    Ok(())
}

pub fn cmd_sweep(c: &Common, ks: &[usize], kinds: &[AssignmentKind]) -> Result<()> {
    let cfg = resolve_config(c)?;
    let ds = dataset(c, &cfg)?;
    let dict = dictionary(c, &cfg)?;
    let kinds = if kinds.is_empty() { vec![cfg.assignment] } else { kinds.to_vec() };
    let table = k_sweep(&ds, &cfg, ks, &kinds, dict.as_ref(), &mut |row| match &row.error {
        None => eprintln!("K={} {}: val {:?} test {:?}", row.k, row.assignment, row.val_accuracy, row.test_accuracy),
        Some(e) => eprintln!("K={} {}: failed: {e}", row.k, row.assignment),
    })?;
    let out = out_dir(c)?;
    table.write_csv(out.join("sweep.csv"))?;
    write(out.join("sweep.svg"), &sweep_svg(&table))?;
    emit(table.to_csv().trim_end());
    Ok(())
}
