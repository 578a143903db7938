use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use megacurate_core::clients::CaptionMode;

use crate::config::{validate_config, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::files::write_json;
use crate::pipeline::{self, check, run_pipeline};
use crate::stages::{
    self, sibling, BalanceParams, BenchFiles, CaptionParams, GenerateParams, TrainInputs,
};

#[derive(Debug, Parser)]
#[command(
    name = "megacurate",
    version,
    about = "Curate balanced style datasets and score style retrieval"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline config (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// Use the offline mock captioner and generator.
    #[arg(long)]
    pub mock: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every stage into a workspace, resuming where it left off.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        clients: ClientArgs,
        /// Overrides the configured workspace.
        #[arg(long, short)]
        workspace: Option<PathBuf>,
        /// Apply the [demo] cluster levels and budgets.
        #[arg(long)]
        demo_scale: bool,
    },
    /// Check a config file and print one line per violated invariant.
    ValidateConfig {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Caption an image pool into a raw prompt manifest.
    Caption {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        clients: ClientArgs,
        /// JSONL pool of {"id", "image_ref"} lines.
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        mode: CaptionMode,
        /// Re-ask this many times when a reply fails validation.
        #[arg(long)]
        retry_on_invalid: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Exact, fuzzy and semantic dedup of a prompt manifest.
    Dedup {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// Defaults to the input's .mgse sibling.
        #[arg(long)]
        emb: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to <out>.groups.jsonl.
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long)]
        jaccard: Option<f64>,
        #[arg(long)]
        semantic: Option<f64>,
    },
    /// Balanced sampling of a prompt manifest.
    Balance {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        emb: Option<PathBuf>,
        /// Cluster counts, lowest level first.
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<usize>>,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to <out>.report.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Pair balanced style and content prompts.
    Pair {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        styles: PathBuf,
        #[arg(long)]
        contents: PathBuf,
        /// Contents per style.
        #[arg(short = 'n', long = "per-style")]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render images for a pairs manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        clients: ClientArgs,
        #[arg(long)]
        pairs: PathBuf,
        /// Balanced style manifest the pairs were built from.
        #[arg(long)]
        styles: PathBuf,
        /// Balanced content manifest the pairs were built from.
        #[arg(long)]
        contents: PathBuf,
        /// Output directory, or a .jsonl manifest path whose directory receives the images.
        #[arg(long)]
        out: PathBuf,
    },
    /// Style features and labels for generated PPM images.
    ExtractFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        styles: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a projection head on labeled embeddings.
    SsclTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        emb: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        text: PathBuf,
        /// Train on gallery rows of this split only.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to <out>.history.json.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Split a bench into per-style queries and gallery.
    RetrievalSplit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        queries_per_style: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// mAP@k and Recall@k for a split.
    RetrievalEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        emb: PathBuf,
        /// Project embeddings through this head first.
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        report: PathBuf,
    },
}

/// Relative paths in a config file are relative to that file.
fn load(common: &Common) -> CliResult<(PipelineConfig, PathBuf)> {
    let Some(path) = &common.config else {
        return Ok((PipelineConfig::default(), PathBuf::from(".")));
    };
    let config = PipelineConfig::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((resolve(config, &base), base))
}

fn resolve(mut config: PipelineConfig, base: &Path) -> PipelineConfig {
    if config.workspace.is_relative() {
        config.workspace = base.join(&config.workspace);
    }
    if let Some(pool) = config.input.image_pool.as_mut().filter(|p| p.is_relative()) {
        *pool = base.join(&*pool);
    }
    config
}

fn loaded(common: &Common) -> CliResult<PipelineConfig> {
    let (c, _) = load(common)?;
    check(&c)?;
    Ok(c)
}

fn print_warnings(stage: &str, warnings: &[String]) {
    for w in warnings {
        log::warn!("{stage}: {w}");
    }
}

/// Runs one command and returns the process exit code.
pub fn execute(cli: Cli) -> CliResult<i32> {
    match cli.command {
        Command::Run {
            common,
            clients,
            workspace,
            demo_scale,
        } => {
            let (mut config, _) = load(&common)?;
            if demo_scale {
                config = config.with_demo_scale();
            }
            let root = workspace.unwrap_or_else(|| config.workspace.clone());
            let summary = run_pipeline(&config, &root, clients.mock)?;
            for (stage, outcome) in &summary.steps {
                log::info!("{stage}: {outcome:?}");
            }
            let m = &summary.metrics;
            let report = m.trained_head.as_ref().unwrap_or(&m.features);
            for (k, v) in &report.map_at {
                println!("mAP@{k} {v:.4}");
            }
            for (k, v) in &report.recall_at {
                println!("Recall@{k} {v:.4}");
            }
            println!("metrics: {}", root.join(pipeline::METRICS).display());
            Ok(0)
        }
        Command::ValidateConfig { config } => {
            let d = validate_config(&config)?;
            for line in &d {
                println!("{line}");
            }
            if d.is_empty() {
                println!("ok");
                Ok(0)
            } else {
                Ok(2)
            }
        }
        Command::Caption {
            common,
            clients,
            images,
            mode,
            retry_on_invalid,
            out,
        } => {
            let mut config = loaded(&common)?;
            config.clients.retry_on_invalid =
                retry_on_invalid.unwrap_or(config.clients.retry_on_invalid);
            let captioner = pipeline::captioner(&config, clients.mock || config.mock)?;
            let p = CaptionParams {
                captioner: captioner.as_ref(),
                rules: &config.clients.rules,
                in_flight: config.clients.in_flight,
                retry_on_invalid: config.clients.retry_on_invalid,
                embed_dim: config.embedder.dim,
            };
            let w = stages::caption_stage("caption", &images, mode, &p, &out)?;
            print_warnings("caption", &w);
            Ok(0)
        }
        Command::Dedup {
            common,
            input,
            emb,
            out,
            groups,
            jaccard,
            semantic,
        } => {
            let mut config = loaded(&common)?;
            config.dedup.jaccard_threshold = jaccard.unwrap_or(config.dedup.jaccard_threshold);
            config.dedup.semantic_threshold = semantic.unwrap_or(config.dedup.semantic_threshold);
            check(&config)?;
            let emb = emb.unwrap_or_else(|| sibling(&input, "mgse"));
            let groups = groups.unwrap_or_else(|| sibling(&out, "groups.jsonl"));
            let w = stages::dedup_stage("dedup", &input, &emb, &config.dedup, &out, &groups)?;
            print_warnings("dedup", &w);
            Ok(0)
        }
        Command::Balance {
            common,
            input,
            emb,
            levels,
            budget,
            seed,
            out,
            report,
        } => {
            let mut config = loaded(&common)?;
            if let Some(levels) = levels {
                config.balance.kmeans.levels = levels;
            }
            config.balance.kmeans.seed = seed.unwrap_or(config.balance.kmeans.seed);
            check(&config)?;
            let emb = emb.unwrap_or_else(|| sibling(&input, "mgse"));
            let report = report.unwrap_or_else(|| sibling(&out, "report.json"));
            let p = BalanceParams {
                kmeans: config.balance.kmeans.clone(),
                budget,
                strict: config.balance.strict,
            };
            let w = stages::balance_stage("balance", &input, &emb, &p, &out, &report)?;
            print_warnings("balance", &w);
            Ok(0)
        }
        Command::Pair {
            common,
            styles,
            contents,
            n,
            seed,
            out,
        } => {
            let mut config = loaded(&common)?;
            config.pairing.n_contents_per_style = n.unwrap_or(config.pairing.n_contents_per_style);
            config.pairing.seed = seed.unwrap_or(config.pairing.seed);
            check(&config)?;
            stages::pair_stage("pair", &styles, &contents, &config.pairing, &out)?;
            Ok(0)
        }
        Command::Generate {
            common,
            clients,
            pairs,
            styles,
            contents,
            out,
        } => {
            let config = loaded(&common)?;
            let manifest = if out.extension().is_some_and(|e| e == "jsonl") {
                out
            } else {
                out.join("generated.jsonl")
            };
            let dir = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
            let generator = pipeline::generator(&config, clients.mock || config.mock, &dir)?;
            let p = GenerateParams {
                generator: generator.as_ref(),
                steps: config.generation.steps,
                cfg_scale: config.generation.cfg_scale,
                resolution: config.generation.resolution,
                in_flight: config.clients.in_flight,
            };
            let s = stages::generate_stage("generate", &pairs, &styles, &contents, &p, &manifest)?;
            print_warnings("generate", &s.warnings);
            Ok(if s.complete { 0 } else { 3 })
        }
        Command::ExtractFeatures {
            common,
            generated,
            styles,
            out,
        } => {
            let config = loaded(&common)?;
            let bench = BenchFiles::new(&out);
            let w = stages::features_stage(
                "features",
                &generated,
                &styles,
                config.embedder.dim,
                &bench,
            )?;
            print_warnings("features", &w);
            Ok(0)
        }
        Command::SsclTrain {
            common,
            emb,
            labels,
            text,
            split,
            tau,
            lr,
            epochs,
            out,
            history,
        } => {
            let mut config = loaded(&common)?;
            let train = &mut config.sscl.train;
            train.tau = tau.unwrap_or(train.tau);
            train.lr = lr.unwrap_or(train.lr);
            train.epochs = epochs.unwrap_or(train.epochs);
            check(&config)?;
            let history = history.unwrap_or_else(|| sibling(&out, "history.json"));
            let inputs = TrainInputs {
                emb: &emb,
                labels: &labels,
                text: &text,
                split: split.as_deref(),
            };
            stages::sscl_stage("sscl-train", &inputs, &config.sscl.train, &out, &history)?;
            Ok(0)
        }
        Command::RetrievalSplit {
            common,
            items,
            queries_per_style,
            seed,
            out,
        } => {
            let config = loaded(&common)?;
            let qps = queries_per_style.unwrap_or(config.retrieval.queries_per_style);
            let seed = seed.unwrap_or(config.retrieval.seed);
            stages::retrieval_split_stage("retrieval-split", &items, qps, seed, &out)?;
            Ok(0)
        }
        Command::RetrievalEval {
            common,
            split,
            emb,
            head,
            k,
            report,
        } => {
            let config = loaded(&common)?;
            let ks = k.unwrap_or_else(|| config.retrieval.ks.clone());
            let metrics =
                stages::evaluate_embeddings("retrieval-eval", &split, &emb, &ks, head.as_deref())?;
            write_json(&report, &metrics).map_err(|e| CliError::stage("retrieval-eval", e))?;
            for (k, v) in &metrics.map_at {
                println!("mAP@{k} {v:.4}");
            }
            for (k, v) in &metrics.recall_at {
                println!("Recall@{k} {v:.4}");
            }
            Ok(0)
        }
    }
}
