use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::seq::IndexedRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use graphvae::chem::{canonical_key, BondVocabulary};
use graphvae::checkpoint;
use graphvae::data::{split, Dataset, DatasetSplit, ExperimentConfig, LoadReport};
use graphvae::eval::{
    interpolate_line, label_frequencies, matching_robustness, mean_elbo, sample_and_score, traverse_plane,
    write_line_csv, write_plane_csv, write_quality_csv, write_robustness_csv, ElboSummary, NoiseKind, RobustnessGrid,
};
use graphvae::graph::{DiscreteGraph, GraphLabel};
use graphvae::model::{GraphVae, Trainer};

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Parser)]
#[command(name = "graphvae", version, about = "Train and evaluate a graph variational autoencoder for small molecules")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for checkpoints, reports and run manifests.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Condition encoder and decoder on the atom histogram.
    #[arg(long, global = true)]
    conditional: bool,
    /// Derive node existence from the strongest incident edge.
    #[arg(long, global = true)]
    implicit_node_prob: bool,
    /// Deterministic encoder without the KL term.
    #[arg(long, global = true)]
    unregularized: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write `model.ckpt`.
    Train,
    /// Sample from the prior and score validity, uniqueness and novelty.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Samples per label (default: `n_samples` from the config).
        #[arg(long)]
        n_samples: Option<usize>,
        /// Atom histogram such as `3-1-0-0`; conditional models only.
        /// Without it a conditional model is scored over the training labels.
        #[arg(long)]
        label: Option<GraphLabel>,
    },
    /// Decode along the line between two test molecules of the same label.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 11)]
        steps: usize,
    },
    /// Decode a lattice over a random plane through the origin.
    Plane {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 11)]
        grid: usize,
        #[arg(long, default_value_t = 5.0)]
        extent: f64,
        #[arg(long)]
        label: Option<GraphLabel>,
    },
    /// Self-matching accuracy under noise, per noise kind, ε and k.
    BenchMatching {
        #[arg(long, value_delimiter = ',', default_values_t = [9usize, 15, 20])]
        ks: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.4, 0.8])]
        eps: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
    /// Mean ELBO of a split under a checkpoint.
    EvalElbo {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Serialize)]
struct DatasetInfo {
    source: String,
    sha256: Option<String>,
    report: LoadReport,
    train: usize,
    validation: usize,
    test: usize,
}

#[derive(Serialize)]
struct EpochRecord {
    epoch: usize,
    train_loss: f64,
    train_reconstruction: f64,
    train_kl: f64,
    validation_elbo: Option<f64>,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: ExperimentConfig,
    seed: u64,
    threads: usize,
    dataset: Option<DatasetInfo>,
    epochs: Vec<EpochRecord>,
    wall_clock_secs: f64,
    artifacts: Vec<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn experiment_config(g: &Global) -> Result<ExperimentConfig, BoxError> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.conditional |= g.conditional;
    cfg.implicit_node_prob |= g.implicit_node_prob;
    cfg.unregularized |= g.unregularized;
    cfg.validate()?;
    Ok(cfg)
}

/// The experiment a checkpoint was trained with, so that data-dependent
/// commands see the same dataset and split.
fn checkpoint_config(meta: &serde_json::Value) -> Result<ExperimentConfig, BoxError> {
    let cfg = meta
        .get("config")
        .ok_or("checkpoint metadata has no experiment config")?;
    Ok(serde_json::from_value(cfg.clone())?)
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, DatasetSplit, DatasetInfo), BoxError> {
    let ds = cfg.dataset()?;
    info!(
        "dataset: {} records, {} kept, {} over k, {} invalid, {} skipped",
        ds.report.records,
        ds.report.kept,
        ds.report.too_large,
        ds.report.invalid,
        ds.report.sdf_skipped.len()
    );
    let sp = split(ds.records.len(), cfg.seed, cfg.test_size, cfg.validation_size)?;
    let info = DatasetInfo {
        source: if cfg.dataset.as_os_str().is_empty() {
            format!("synthetic:{}", cfg.synthetic_count)
        } else {
            cfg.dataset.display().to_string()
        },
        sha256: ds.checksum.clone(),
        report: ds.report.clone(),
        train: sp.train.len(),
        validation: sp.validation.len(),
        test: sp.test.len(),
    };
    Ok((ds, sp, info))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), BoxError> {
    checkpoint::write_atomic(path, bytes)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>, BoxError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn run(cli: Cli) -> Result<(), BoxError> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let threads = rayon::current_num_threads();
    let out = cli.global.out_dir.clone();
    std::fs::create_dir_all(&out)?;
    let started = Instant::now();
    let bonds = BondVocabulary::default();

    let mut manifest = RunManifest {
        command: String::new(),
        config: ExperimentConfig::default(),
        seed: 0,
        threads,
        dataset: None,
        epochs: Vec::new(),
        wall_clock_secs: 0.0,
        artifacts: Vec::new(),
    };

    match cli.command {
        Command::Train => {
            let cfg = experiment_config(&cli.global)?;
            manifest.command = "train".into();
            let (ds, sp, info) = load_data(&cfg)?;
            let train = ds.graphs(&sp.train);
            let validation = ds.graphs(&sp.validation);
            let weights = cfg.loss_weights();
            let model = GraphVae::new(cfg.model_config(), cfg.seed)?;
            let mut trainer = Trainer::new(model, cfg.train_config(), cfg.seed.wrapping_add(1));
            for epoch in 0..cfg.epochs {
                let s = trainer.epoch(&train)?;
                let val = if validation.is_empty() {
                    None
                } else {
                    let r = mean_elbo(trainer.model(), &validation, &weights, cfg.matching_iterations, cfg.seed)?;
                    Some(r.elbo)
                };
                info!(
                    "epoch {}: loss {:.4} reconstruction {:.4} kl {:.4} validation elbo {}",
                    epoch + 1,
                    s.loss,
                    s.reconstruction,
                    s.kl,
                    val.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
                );
                manifest.epochs.push(EpochRecord {
                    epoch: epoch + 1,
                    train_loss: s.loss,
                    train_reconstruction: s.reconstruction,
                    train_kl: s.kl,
                    validation_elbo: val,
                });
            }
            let meta = serde_json::json!({ "config": cfg, "epochs": cfg.epochs });
            let path = out.join("model.ckpt");
            checkpoint::save(trainer.model(), &meta, &path)?;
            info!("wrote {}", path.display());
            manifest.artifacts.push(path);
            manifest.dataset = Some(info);
            manifest.seed = cfg.seed;
            manifest.config = cfg;
        }
        Command::Sample {
            checkpoint: ckpt,
            n_samples,
            label,
        } => {
            let (model, meta) = checkpoint::load(&ckpt)?;
            let mut cfg = checkpoint_config(&meta)?;
            if let Some(s) = cli.global.seed {
                cfg.seed = s;
            }
            manifest.command = "sample".into();
            if label.is_some() && !model.config().conditional {
                return Err("--label requires a conditional model".into());
            }
            let atoms = cfg.atoms()?;
            let (ds, sp, info) = load_data(&cfg)?;
            let index: HashSet<String> = ds.records.iter().map(|r| canonical_key(&r.graph)).collect();
            let labels = match label {
                Some(y) => vec![(y, 1.0)],
                None => label_frequencies(sp.train.iter().map(|&i| &ds.records[i].graph)),
            };
            let n = n_samples.unwrap_or(cfg.n_samples);
            let (report, samples) = sample_and_score(&model, &labels, n, &index, &atoms, &bonds, cfg.seed)?;
            info!(
                "valid {:.4} accurate {:.4} unique {:.4} novel {:.4}",
                report.valid, report.accurate, report.unique, report.novel
            );
            let csv_path = out.join("quality.csv");
            write_file(&csv_path, &csv_bytes(|b| write_quality_csv(b, &report))?)?;
            let json_path = out.join("quality.json");
            write_file(&json_path, &serde_json::to_vec_pretty(&report)?)?;
            let samples_path = out.join("samples.json");
            let flat: Vec<DiscreteGraph> = samples.into_iter().flatten().collect();
            write_file(&samples_path, &serde_json::to_vec(&flat)?)?;
            manifest.artifacts.extend([csv_path, json_path, samples_path]);
            manifest.dataset = Some(info);
            manifest.seed = cfg.seed;
            manifest.config = cfg;
        }
        Command::Interpolate { checkpoint: ckpt, steps } => {
            let (model, meta) = checkpoint::load(&ckpt)?;
            let mut cfg = checkpoint_config(&meta)?;
            if let Some(s) = cli.global.seed {
                cfg.seed = s;
            }
            manifest.command = "interpolate".into();
            let atoms = cfg.atoms()?;
            let (ds, sp, info) = load_data(&cfg)?;
            let pool = if sp.test.is_empty() { &sp.train } else { &sp.test };
            let (g1, g2) = same_label_pair(&ds.graphs(pool), cfg.seed)?;
            let points = interpolate_line(&model, &g1, &g2, steps, &atoms, &bonds)?;
            let path = out.join("interpolation.csv");
            write_file(&path, &csv_bytes(|b| write_line_csv(b, &points))?)?;
            manifest.artifacts.push(path);
            manifest.dataset = Some(info);
            manifest.seed = cfg.seed;
            manifest.config = cfg;
        }
        Command::Plane {
            checkpoint: ckpt,
            grid,
            extent,
            label,
        } => {
            let (model, meta) = checkpoint::load(&ckpt)?;
            let mut cfg = checkpoint_config(&meta)?;
            if let Some(s) = cli.global.seed {
                cfg.seed = s;
            }
            manifest.command = "plane".into();
            if label.is_some() != model.config().conditional {
                return Err("--label is required for conditional models and rejected otherwise".into());
            }
            let atoms = cfg.atoms()?;
            let plane = traverse_plane(&model, None, extent, grid, label.as_ref(), &atoms, &bonds, cfg.seed)?;
            let path = out.join("plane.csv");
            write_file(&path, &csv_bytes(|b| write_plane_csv(b, &plane))?)?;
            manifest.artifacts.push(path);
            manifest.seed = cfg.seed;
            manifest.config = cfg;
        }
        Command::BenchMatching { ks, eps, trials } => {
            let cfg = experiment_config(&cli.global)?;
            manifest.command = "bench-matching".into();
            let (ds, _, info) = load_data(&ExperimentConfig {
                k: ks.iter().copied().max().unwrap_or(cfg.k).max(cfg.k),
                test_size: 0,
                validation_size: 0,
                ..cfg.clone()
            })?;
            let graphs: Vec<DiscreteGraph> = ds.records.iter().map(|r| r.graph.clone()).collect();
            let grid = RobustnessGrid {
                ks,
                eps,
                kinds: NoiseKind::ALL.to_vec(),
                trials,
                iterations: cfg.matching_iterations,
            };
            let report = matching_robustness(&graphs, &grid, cfg.seed)?;
            for c in &report.cells {
                info!(
                    "{} eps={} k={}: {}",
                    c.kind,
                    c.eps,
                    c.k,
                    c.accuracy.map_or_else(|| "n/a".into(), |a| format!("{:.2}%", 100.0 * a))
                );
            }
            let path = out.join("robustness.csv");
            write_file(&path, &csv_bytes(|b| write_robustness_csv(b, &report))?)?;
            manifest.artifacts.push(path);
            manifest.dataset = Some(info);
            manifest.seed = cfg.seed;
            manifest.config = cfg;
        }
        Command::EvalElbo { checkpoint: ckpt, split: which } => {
            let (model, meta) = checkpoint::load(&ckpt)?;
            let mut cfg = checkpoint_config(&meta)?;
            if let Some(s) = cli.global.seed {
                cfg.seed = s;
            }
            manifest.command = "eval-elbo".into();
            let (ds, sp, info) = load_data(&cfg)?;
            let idx = match which {
                SplitName::Train => &sp.train,
                SplitName::Validation => &sp.validation,
                SplitName::Test => &sp.test,
            };
            let summary: ElboSummary =
                mean_elbo(&model, &ds.graphs(idx), &cfg.loss_weights(), cfg.matching_iterations, cfg.seed)?;
            println!("{}", serde_json::to_string(&summary)?);
            let path = out.join("elbo.json");
            write_file(&path, &serde_json::to_vec_pretty(&summary)?)?;
            manifest.artifacts.push(path);
            manifest.dataset = Some(info);
            manifest.seed = cfg.seed;
            manifest.config = cfg;
        }
    }

    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    let path = out.join(format!("{}-manifest.json", manifest.command));
    write_file(&path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(())
}

/// Two distinct molecules sharing an atom histogram, picked by `seed`.
fn same_label_pair(graphs: &[DiscreteGraph], seed: u64) -> Result<(DiscreteGraph, DiscreteGraph), BoxError> {
    let mut groups: std::collections::BTreeMap<Vec<u32>, Vec<&DiscreteGraph>> = Default::default();
    for g in graphs {
        groups.entry(g.label().0).or_default().push(g);
    }
    let candidates: Vec<&Vec<&DiscreteGraph>> = groups.values().filter(|v| v.len() >= 2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let group = candidates.choose(&mut rng).ok_or("no two molecules share a label")?;
    let pair: Vec<&&DiscreteGraph> = group.choose_multiple(&mut rng, 2).collect();
    Ok(((*pair[0]).clone(), (*pair[1]).clone()))
}
