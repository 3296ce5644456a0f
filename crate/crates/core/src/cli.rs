//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::attack::{auroc, best_threshold, rates, score_pairs, SimilarityKind};
use crate::bundle::{load_bundle, load_matrix, save_bundle, save_matrix, DatasetBundle, TEST, TRAIN};
use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::defense::{edge_rr, edge_rr_bound, nag_bound};
use crate::encoders::{init_weights, ArchKind, InitScheme, Mode, NagConfig};
use crate::error::{Error, Result};
use crate::experiments::{Experiment, ExperimentConfig, Target};
use crate::generators::{gen_er, gen_features, gen_sbm, ErSpec, SbmSpec};
use crate::graph::NodeSubset;
use crate::rng::{self, stage_seed};
use crate::training::{default_train_encoder, eval_seed, inference_representations, train, AdamConfig, TrainConfig, TrainScheme};

#[derive(Parser, Debug)]
#[command(name = "sera", version, about = "Edge reconstruction attacks and noisy-aggregation defenses for GNN representations")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic bundle (ER or SBM graph, Gaussian features).
    Gen {
        #[arg(long, default_value = "er")]
        gen: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        /// Edge probability (ER, default ln(n)/n) or within-group probability (SBM).
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        q: f64,
        #[arg(long = "groups", short = 'K', default_value_t = 1)]
        k: usize,
        /// Fraction of nodes in the train mask; the rest form the test mask.
        #[arg(long, default_value_t = 0.5)]
        train_frac: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute node representations for a bundle.
    Encode {
        #[arg(long)]
        bundle: PathBuf,
        /// Use trained weights instead of a fresh initialization.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "gcn")]
        arch: String,
        #[arg(long, default_value_t = 128)]
        d: usize,
        #[arg(long = "layers", short = 'L', default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value = "he")]
        init: String,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// standard | nag (default: nag when sigma > 0)
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the similarity attack on stored representations.
    Attack {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        reps: PathBuf,
        #[arg(long, default_value = "cos")]
        sim: String,
        /// full | test
        #[arg(long, default_value = "full")]
        target: String,
        /// Report rates at this threshold in addition to the best one.
        #[arg(long)]
        threshold: Option<f64>,
        /// Write per-pair scores as CSV.
        #[arg(long)]
        scores_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train an encoder with a linear head and write a checkpoint.
    Train {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "gcn")]
        arch: String,
        #[arg(long, default_value_t = 128)]
        d: usize,
        #[arg(long = "layers", short = 'L', default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 1000)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value = "unconstrained")]
        scheme: String,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        /// standard | nag (default: nag, except for the linear model)
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value = "he")]
        init: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the noisy-aggregation privacy bound for a checkpoint.
    Bound {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Apply edge randomized response and write the perturbed bundle.
    Edgerr {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sweep from a TOML config and write the CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides master_seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Unsupported(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other),
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            1
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            2
        }
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, Failure> {
    s.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn require_path(path: &Path, what: &str) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn emit(out: &mut dyn Write, text: String) -> CliResult {
    writeln!(out, "{text}").map_err(|e| Failure::Runtime(Error::io("<stdout>", e)))
}

fn split_masks(n: usize, train_frac: f64, seed: u64) -> Result<BTreeMap<String, NodeSubset>> {
    use rand::seq::SliceRandom;
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::Config(format!("train_frac {train_frac} outside [0, 1]")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng::stream(seed));
    let cut = (train_frac * n as f64).round() as usize;
    let mut masks = BTreeMap::new();
    masks.insert(TRAIN.to_string(), NodeSubset::new(ids[..cut].to_vec(), n)?);
    masks.insert(TEST.to_string(), NodeSubset::new(ids[cut..].to_vec(), n)?);
    Ok(masks)
}

fn encoder_config(mode: Option<&str>, sigma: f64, default: Mode) -> std::result::Result<NagConfig, Failure> {
    let mode = match mode {
        Some(m) => parse(m)?,
        None => default,
    };
    Ok(default_train_encoder(mode, sigma))
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Gen { gen, n, d, p, q, k, train_frac, seed, out: dir } => {
            let graph_seed = stage_seed(seed, "gen-graph");
            let (graph, labels, classes) = match gen.as_str() {
                "er" => {
                    let spec = p.map_or(ErSpec::sparse(n), |p| ErSpec { n, p });
                    (gen_er(spec, graph_seed)?, vec![0; n], 1)
                }
                "sbm" => {
                    let p = p.ok_or_else(|| Failure::Usage("--p is required for sbm".into()))?;
                    let (g, membership) = gen_sbm(SbmSpec { n, k, p, q }, graph_seed)?;
                    (g, membership, k)
                }
                other => return Err(Failure::Usage(format!("unknown generator {other:?} (er | sbm)"))),
            };
            let features = gen_features(n, d, stage_seed(seed, "gen-features"))?;
            let masks = split_masks(n, train_frac, stage_seed(seed, "gen-split"))?;
            let bundle = DatasetBundle::new(graph, features, labels, classes, masks)?;
            save_bundle(&bundle, &dir)?;
            emit(out, format!("n={n} edges={} d={d} out={}", bundle.graph.edge_count(), dir.display()))
        }
        Command::Encode { bundle, checkpoint, arch, d, depth, init, sigma, mode, seed, out: path } => {
            require_path(&bundle, "bundle")?;
            let (b, _) = load_bundle(&bundle)?;
            let weights = match checkpoint {
                Some(ck) => {
                    require_path(&ck, "checkpoint")?;
                    load_checkpoint(&ck)?.weights
                }
                None => init_weights(parse(&arch)?, b.feature_dim(), d, depth, parse(&init)?, stage_seed(seed, "weights"))?,
            };
            let default = if sigma > 0.0 { Mode::Nag } else { Mode::Standard };
            let cfg = encoder_config(mode.as_deref(), sigma, default)?;
            let h = inference_representations(&b.graph, &b.features, &weights, &cfg, stage_seed(seed, "noise"))?;
            save_matrix(&path, &h)?;
            emit(out, format!("rows={} cols={} out={}", h.rows(), h.cols(), path.display()))
        }
        Command::Attack { bundle, reps, sim, target, threshold, scores_out, seed: _ } => {
            require_path(&bundle, "bundle")?;
            require_path(&reps, "representations file")?;
            let (b, _) = load_bundle(&bundle)?;
            let h = load_matrix(&reps)?;
            let sim: SimilarityKind = parse(&sim)?;
            let (victim, h) = match parse::<Target>(&target)? {
                Target::FullGraph => (b.graph.clone(), h),
                Target::TestSubgraph => {
                    let mask = b.mask(TEST)?;
                    (b.graph.induced_subgraph(mask)?.0, h.select_rows(mask.ids()))
                }
            };
            let scores = score_pairs(&h, &victim, sim)?;
            if let Some(path) = scores_out {
                let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                scores.write_csv(f)?;
            }
            let best = best_threshold(&scores);
            let au = auroc(&scores).map_or_else(|e| format!("NA ({e})"), |a| a.to_string());
            let mut text = format!(
                "pairs={} positives={} auroc={au} best_err={} fpr={} fnr={} threshold={}",
                scores.len(),
                scores.positives(),
                best.err,
                best.fpr,
                best.fnr,
                best.threshold
            );
            if let Some(tau) = threshold {
                let m = rates(&scores, tau);
                text.push_str(&format!("\nthreshold={tau} err={} fpr={} fnr={}", m.err, m.fpr, m.fnr));
            }
            emit(out, text)
        }
        Command::Train { bundle, arch, d, depth, epochs, lr, scheme, sigma, mode, init, seed, out: dir } => {
            require_path(&bundle, "bundle")?;
            let (b, _) = load_bundle(&bundle)?;
            let arch: ArchKind = parse(&arch)?;
            let default = if arch == ArchKind::Linear { Mode::Standard } else { Mode::Nag };
            let cfg = TrainConfig {
                epochs,
                adam: AdamConfig { learning_rate: lr, ..AdamConfig::default() },
                scheme: parse::<TrainScheme>(&scheme)?,
                encoder: encoder_config(mode.as_deref(), sigma, default)?,
                init: parse::<InitScheme>(&init)?,
                seed,
            };
            let result = train(&b, arch, d, depth, &cfg)?;
            save_checkpoint(
                &dir,
                &Checkpoint {
                    weights: result.weights,
                    head: Some(result.head),
                    epoch: epochs,
                    seed,
                },
            )?;
            let last = result.losses.last().map_or("NA".to_string(), |l| l.to_string());
            emit(
                out,
                format!(
                    "test_acc={} test_acc_clean={} train_acc={} final_loss={last} eval_seed={} out={}",
                    result.test_accuracy,
                    result.test_accuracy_clean,
                    result.train_accuracy,
                    eval_seed(seed),
                    dir.display()
                ),
            )
        }
        Command::Bound { checkpoint, sigma, seed: _ } => {
            require_path(&checkpoint, "checkpoint")?;
            let ck = load_checkpoint(&checkpoint)?;
            let r = nag_bound(&ck.weights, sigma)?;
            emit(
                out,
                format!(
                    "bound={:.6} C={} op_norm_sq_sum={:.6} sigma={} vacuous={}",
                    r.bound, r.constant, r.op_norm_sq_sum, r.sigma, r.vacuous
                ),
            )
        }
        Command::Edgerr { bundle, epsilon, seed, out: dir } => {
            require_path(&bundle, "bundle")?;
            let (b, _) = load_bundle(&bundle)?;
            let perturbed = edge_rr(&b.graph, epsilon, stage_seed(seed, "edge-rr"))?.to_graph();
            let edges = perturbed.edge_count();
            let b = DatasetBundle { graph: perturbed, ..b };
            save_bundle(&b, &dir)?;
            emit(
                out,
                format!("edges={edges} bound={} out={}", edge_rr_bound(epsilon), dir.display()),
            )
        }
        Command::Sweep { config, out: path, seed } => {
            require_path(&config, "config file")?;
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let summary = Experiment::new(cfg)?.run_sweep(&path)?;
            for cell in summary {
                emit(out, cell.to_string())?;
            }
            Ok(())
        }
    }
}
