//! End-to-end orchestration over a workspace directory.

use std::path::{Path, PathBuf};

use megacurate_core::clients::{
    template_for, CaptionMode, Captioner, Generator, HttpCaptioner, HttpGenerator, MockCaptioner,
    MockGenerator, ServiceEndpoint, CAPTION_URL_VAR, GEN_URL_VAR, TOKEN_VAR_VAR,
};
use megacurate_core::retrieval::MetricReport;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::files::{read_jsonl, write_json, write_jsonl, PoolImage};
use crate::ledger::{Runner, StageRun, StepOutcome};
use crate::stages::{self, BalanceParams, BenchFiles, CaptionParams, GenerateParams, TrainInputs};

pub const POOL: &str = "pool.jsonl";
pub const PAIRS: &str = "pairs.jsonl";
pub const GENERATED: &str = "images/generated.jsonl";
pub const BENCH: &str = "bench.jsonl";
pub const SPLIT: &str = "split.jsonl";
pub const HEAD: &str = "head.mgse";
pub const HISTORY: &str = "history.json";
pub const METRICS: &str = "metrics.json";

/// Workspace-relative files of one prompt branch.
pub struct BranchFiles {
    pub raw: String,
    pub raw_emb: String,
    pub deduped: String,
    pub deduped_emb: String,
    pub groups: String,
    pub balanced: String,
    pub balanced_emb: String,
    pub report: String,
}

impl BranchFiles {
    pub fn new(mode: CaptionMode) -> Self {
        let dir = branch_name(mode);
        Self {
            raw: format!("{dir}/raw.jsonl"),
            raw_emb: format!("{dir}/raw.mgse"),
            deduped: format!("{dir}/deduped.jsonl"),
            deduped_emb: format!("{dir}/deduped.mgse"),
            groups: format!("{dir}/groups.jsonl"),
            balanced: format!("{dir}/balanced.jsonl"),
            balanced_emb: format!("{dir}/balanced.mgse"),
            report: format!("{dir}/balance_report.json"),
        }
    }
}

fn endpoint(
    configured: &ServiceEndpoint,
    url_var: &str,
    section: &str,
) -> CliResult<ServiceEndpoint> {
    let mut e = configured.clone();
    if e.base_url.is_empty() {
        e.base_url = std::env::var(url_var)
            .ok()
            .filter(|u| !u.is_empty())
            .ok_or_else(|| {
                CliError::Config(format!(
                    "{section}.base_url is empty and {url_var} is unset"
                ))
            })?;
    }
    if e.token_env.is_none() {
        e.token_env = std::env::var(TOKEN_VAR_VAR).ok().filter(|v| !v.is_empty());
    }
    Ok(e)
}

pub fn captioner(config: &PipelineConfig, mock: bool) -> CliResult<Box<dyn Captioner>> {
    if mock {
        return Ok(Box::new(MockCaptioner));
    }
    let e = endpoint(&config.clients.caption, CAPTION_URL_VAR, "clients.caption")?;
    Ok(Box::new(
        HttpCaptioner::new(e).map_err(|e| CliError::Config(e.to_string()))?,
    ))
}

pub fn generator(
    config: &PipelineConfig,
    mock: bool,
    out_dir: &Path,
) -> CliResult<Box<dyn Generator>> {
    if mock {
        return Ok(Box::new(MockGenerator::new(out_dir)));
    }
    let e = endpoint(&config.clients.generate, GEN_URL_VAR, "clients.generate")?;
    Ok(Box::new(
        HttpGenerator::new(e).map_err(|e| CliError::Config(e.to_string()))?,
    ))
}

pub fn check(config: &PipelineConfig) -> CliResult<()> {
    let d = config.diagnostics();
    if d.is_empty() {
        return Ok(());
    }
    let lines: Vec<String> = d.iter().map(ToString::to_string).collect();
    Err(CliError::Config(lines.join("; ")))
}

#[derive(Debug, Clone, Serialize)]
pub struct Metrics {
    pub features: MetricReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trained_head: Option<MetricReport>,
}

pub struct RunSummary {
    pub steps: Vec<(String, StepOutcome)>,
    pub metrics: Metrics,
}

#[derive(Serialize)]
struct CaptionKey<'a> {
    template: String,
    retry_on_invalid: u32,
    dim: usize,
    rules: &'a megacurate_core::clients::CaptionRules,
    mock: bool,
}

fn run_branch(
    runner: &mut Runner,
    config: &PipelineConfig,
    mock: bool,
    captioner: &dyn Captioner,
    pool: &str,
    mode: CaptionMode,
) -> CliResult<()> {
    let files = BranchFiles::new(mode);
    let name = |s: &str| format!("{s}-{}", branch_name(mode));
    let root = runner.root().to_path_buf();
    let at = |rel: &str| root.join(rel);

    let key = CaptionKey {
        template: template_for(mode).version_tag(),
        retry_on_invalid: config.clients.retry_on_invalid,
        dim: config.embedder.dim,
        rules: &config.clients.rules,
        mock,
    };
    let stage = name("caption");
    runner.step(&stage, &[pool], &key, &[&files.raw, &files.raw_emb], || {
        let p = CaptionParams {
            captioner,
            rules: &config.clients.rules,
            in_flight: config.clients.in_flight,
            retry_on_invalid: config.clients.retry_on_invalid,
            embed_dim: config.embedder.dim,
        };
        let warnings = stages::caption_stage(&stage, &at(pool), mode, &p, &at(&files.raw))?;
        Ok(StageRun {
            complete: warnings.is_empty(),
            warnings,
        })
    })?;

    let stage = name("dedup");
    runner.step(
        &stage,
        &[&files.raw, &files.raw_emb],
        &config.dedup,
        &[&files.deduped, &files.deduped_emb, &files.groups],
        || {
            stages::dedup_stage(
                &stage,
                &at(&files.raw),
                &at(&files.raw_emb),
                &config.dedup,
                &at(&files.deduped),
                &at(&files.groups),
            )
            .map(Into::into)
        },
    )?;

    let budget = match mode {
        CaptionMode::Style => config.balance.style_budget,
        CaptionMode::Content => config.balance.content_budget,
    };
    let params = BalanceParams {
        kmeans: config.balance.kmeans.clone(),
        budget,
        strict: config.balance.strict,
    };
    let stage = name("balance");
    runner.step(
        &stage,
        &[&files.deduped, &files.deduped_emb],
        &(&params.kmeans, budget, params.strict),
        &[&files.balanced, &files.balanced_emb, &files.report],
        || {
            stages::balance_stage(
                &stage,
                &at(&files.deduped),
                &at(&files.deduped_emb),
                &params,
                &at(&files.balanced),
                &at(&files.report),
            )
            .map(Into::into)
        },
    )?;
    Ok(())
}

fn branch_name(mode: CaptionMode) -> &'static str {
    match mode {
        CaptionMode::Style => "style",
        CaptionMode::Content => "content",
    }
}

/// Resolves the image pool: the configured file, or a synthetic demo pool
/// written into the workspace when running with mocks.
fn prepare_pool(runner: &mut Runner, config: &PipelineConfig, mock: bool) -> CliResult<String> {
    if let Some(pool) = &config.input.image_pool {
        return Ok(pool.display().to_string());
    }
    if !mock {
        return Err(CliError::Config(
            "input.image_pool is required without --mock".into(),
        ));
    }
    let d = &config.demo;
    let key = (d.images, d.styles, d.contents, config.seed);
    let path = runner.path(POOL);
    runner.step("pool", &[], &key, &[POOL], || {
        let pool = stages::demo_pool(d.images, d.styles, d.contents, config.seed);
        write_jsonl(&path, &pool).map_err(|m| CliError::stage("pool", m))?;
        Ok(Vec::new().into())
    })?;
    Ok(POOL.to_string())
}

/// Runs every stage in order, skipping the ones already up to date. A mock
/// run without an image pool uses the demo pool at demo scale.
pub fn run_pipeline(config: &PipelineConfig, root: &Path, mock: bool) -> CliResult<RunSummary> {
    let mock = mock || config.mock;
    let scaled;
    let config = if mock && config.input.image_pool.is_none() {
        scaled = config.clone().with_demo_scale();
        &scaled
    } else {
        config
    };
    check(config)?;
    let mut runner = Runner::open(root)?;
    let pool = prepare_pool(&mut runner, config, mock)?;
    let pool_images: Vec<PoolImage> =
        read_jsonl(&runner.path(&pool)).map_err(|m| CliError::stage("pool", m))?;
    if pool_images.is_empty() {
        return Err(CliError::stage("pool", "image pool is empty"));
    }

    let captioner = captioner(config, mock)?;
    run_branch(
        &mut runner,
        config,
        mock,
        captioner.as_ref(),
        &pool,
        CaptionMode::Style,
    )?;
    run_branch(
        &mut runner,
        config,
        mock,
        captioner.as_ref(),
        &pool,
        CaptionMode::Content,
    )?;

    let style = BranchFiles::new(CaptionMode::Style);
    let content = BranchFiles::new(CaptionMode::Content);
    let at = |rel: &str| root.join(rel);

    runner.step(
        "pair",
        &[&style.balanced, &content.balanced],
        &config.pairing,
        &[PAIRS],
        || {
            stages::pair_stage(
                "pair",
                &at(&style.balanced),
                &at(&content.balanced),
                &config.pairing,
                &at(PAIRS),
            )
            .map(Into::into)
        },
    )?;

    let images_dir: PathBuf = at(GENERATED)
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let generator = generator(config, mock, &images_dir)?;
    runner.step(
        "generate",
        &[PAIRS, &style.balanced, &content.balanced],
        &(&config.generation, mock),
        &[GENERATED],
        || {
            let p = GenerateParams {
                generator: generator.as_ref(),
                steps: config.generation.steps,
                cfg_scale: config.generation.cfg_scale,
                resolution: config.generation.resolution,
                in_flight: config.clients.in_flight,
            };
            let s = stages::generate_stage(
                "generate",
                &at(PAIRS),
                &at(&style.balanced),
                &at(&content.balanced),
                &p,
                &at(GENERATED),
            )?;
            Ok(StageRun {
                warnings: s.warnings,
                complete: s.complete,
            })
        },
    )?;

    let bench = BenchFiles::new(&at(BENCH));
    let bench_rel = |p: &Path| p.strip_prefix(root).unwrap_or(p).display().to_string();
    let (b_items, b_emb, b_labels, b_text) = (
        bench_rel(&bench.items),
        bench_rel(&bench.embeddings),
        bench_rel(&bench.labels),
        bench_rel(&bench.text),
    );
    runner.step(
        "features",
        &[GENERATED, &style.balanced],
        &config.embedder,
        &[&b_items, &b_emb, &b_labels, &b_text],
        || {
            stages::features_stage(
                "features",
                &at(GENERATED),
                &at(&style.balanced),
                config.embedder.dim,
                &bench,
            )
            .map(Into::into)
        },
    )?;

    runner.step(
        "retrieval-split",
        &[&b_items],
        &config.retrieval,
        &[SPLIT],
        || {
            stages::retrieval_split_stage(
                "retrieval-split",
                &bench.items,
                config.retrieval.queries_per_style,
                config.retrieval.seed,
                &at(SPLIT),
            )
            .map(Into::into)
        },
    )?;

    if config.sscl.enabled {
        runner.step(
            "sscl-train",
            &[&b_emb, &b_labels, &b_text, SPLIT],
            &config.sscl.train,
            &[HEAD, HISTORY],
            || {
                let split = at(SPLIT);
                let inputs = TrainInputs {
                    emb: &bench.embeddings,
                    labels: &bench.labels,
                    text: &bench.text,
                    split: Some(&split),
                };
                stages::sscl_stage(
                    "sscl-train",
                    &inputs,
                    &config.sscl.train,
                    &at(HEAD),
                    &at(HISTORY),
                )
                .map(Into::into)
            },
        )?;
    }

    let mut eval_inputs = vec![SPLIT, b_emb.as_str()];
    if config.sscl.enabled {
        eval_inputs.push(HEAD);
    }
    let mut metrics = None;
    runner.step(
        "retrieval-eval",
        &eval_inputs,
        &config.retrieval.ks,
        &[METRICS],
        || {
            let m = evaluate_all(
                config,
                &at(SPLIT),
                &bench.embeddings,
                config.sscl.enabled.then(|| at(HEAD)).as_deref(),
            )?;
            write_json(&at(METRICS), &m).map_err(|e| CliError::stage("retrieval-eval", e))?;
            metrics = Some(m);
            Ok(Vec::new().into())
        },
    )?;
    let metrics = match metrics {
        Some(m) => m,
        None => evaluate_all(
            config,
            &at(SPLIT),
            &bench.embeddings,
            config.sscl.enabled.then(|| at(HEAD)).as_deref(),
        )?,
    };
    Ok(RunSummary {
        steps: runner.outcomes,
        metrics,
    })
}

fn evaluate_all(
    config: &PipelineConfig,
    split: &Path,
    emb: &Path,
    head: Option<&Path>,
) -> CliResult<Metrics> {
    let ks = &config.retrieval.ks;
    Ok(Metrics {
        features: stages::evaluate_embeddings("retrieval-eval", split, emb, ks, None)?,
        trained_head: head
            .map(|h| stages::evaluate_embeddings("retrieval-eval", split, emb, ks, Some(h)))
            .transpose()?,
    })
}
