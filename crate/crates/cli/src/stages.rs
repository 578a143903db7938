//! The pipeline stages as plain functions over files.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use megacurate_core::balance::{
    balance_report, build_cluster_tree, hierarchical_sample, KMeansConfig, SampleOptions,
};
use megacurate_core::clients::{
    caption_validated, decode_ppm, mock_style_features, run_bounded, synthetic_image_ref, CallLog,
    CallRecord, CallStatus, CaptionMode, CaptionRequest, CaptionRules, Captioner,
    GenerationRequest, Generator, HashingTextEmbedder,
};
use megacurate_core::dedup::{dedup_all, DedupConfig};
use megacurate_core::pairing::{compose_prompt, make_combinations, PairingConfig};
use megacurate_core::record::{
    compact_labels, CombinationStatus, GenerationRecord, PromptRecord, StyleLabel,
};
use megacurate_core::retrieval::{build_split, evaluate, read_split, write_split, MetricReport};
use megacurate_core::sscl::{
    train_head, LabeledBatch, ProjectionHead, SsclConfig, TrainableEncoder,
};
use megacurate_core::vector::{l2_normalize, EmbeddingMatrix};
use megacurate_core::{
    read_embeddings, read_manifest, write_embeddings, write_manifest, Manifest, Stage,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::files::{read_jsonl, write_json, write_jsonl, BenchItem, LabelRow, PoolImage};

/// Requests committed to a call log per batch.
const COMMIT_CHUNK: usize = 256;

/// Sibling path with `suffix` replacing the extension, e.g. `raw.jsonl` -> `raw.mgse`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn fail(stage: &str) -> impl Fn(String) -> CliError + '_ {
    move |m| CliError::stage(stage, m)
}

fn read_prompts(stage: &str, path: &Path) -> CliResult<Vec<PromptRecord>> {
    let m = read_manifest(path).map_err(|e| CliError::stage(stage, e))?;
    Ok(m.prompts().cloned().collect())
}

/// Embedding matrix of `records` in record order, renumbering their rows.
fn gather_rows(
    stage: &str,
    records: &mut [PromptRecord],
    emb: &EmbeddingMatrix,
) -> CliResult<EmbeddingMatrix> {
    let mut rows = Vec::with_capacity(records.len());
    for (i, r) in records.iter_mut().enumerate() {
        let row = r.embedding_row.ok_or_else(|| {
            CliError::stage(stage, format!("record {:#x} has no embedding row", r.id))
        })?;
        rows.push(row as usize);
        r.embedding_row = Some(i as u64);
    }
    emb.select_rows(&rows)
        .map_err(|e| CliError::stage(stage, e))
}

fn ensure_parent(stage: &str, path: &Path) -> CliResult<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => std::fs::create_dir_all(parent)
            .map_err(|e| CliError::stage(stage, format!("{}: {e}", parent.display()))),
        None => Ok(()),
    }
}

fn write_prompts(
    stage: &str,
    kind: Stage,
    records: Vec<PromptRecord>,
    emb: &EmbeddingMatrix,
    out: &Path,
) -> CliResult<()> {
    let m = Manifest::from_prompts(kind, records).map_err(|e| CliError::stage(stage, e))?;
    ensure_parent(stage, out)?;
    write_manifest(out, &m).map_err(|e| CliError::stage(stage, e))?;
    write_embeddings(sibling(out, "mgse"), emb).map_err(|e| CliError::stage(stage, e))
}

/// Deterministic synthetic pool: image `i` has style class `i % styles`
/// and a seeded content class.
pub fn demo_pool(images: usize, styles: usize, contents: usize, seed: u64) -> Vec<PoolImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..images)
        .map(|i| PoolImage {
            id: megacurate_core::record_id("demo-pool", i as u64),
            image_ref: synthetic_image_ref(
                (i % styles.max(1)) as u32,
                rng.random_range(0..contents.max(1)) as u32,
            ),
        })
        .collect()
}

pub struct CaptionParams<'a> {
    pub captioner: &'a dyn Captioner,
    pub rules: &'a CaptionRules,
    pub in_flight: usize,
    pub retry_on_invalid: u32,
    pub embed_dim: usize,
}

/// Captions every pool image in `mode` and writes a raw prompt manifest with
/// hashed embeddings. Outcomes are logged next to `out`; completed calls are
/// not repeated on a rerun.
pub fn caption_stage(
    stage: &str,
    pool: &Path,
    mode: CaptionMode,
    p: &CaptionParams,
    out: &Path,
) -> CliResult<Vec<String>> {
    let f = fail(stage);
    let mut images: Vec<PoolImage> = read_jsonl(pool).map_err(&f)?;
    images.sort_by_key(|i| i.id);
    if let Some(w) = images.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(f(format!("duplicate image id {}", w[0].id)));
    }
    ensure_parent(stage, out)?;
    let mut log = CallLog::open(sibling(out, "calls.jsonl")).map_err(|e| f(e.to_string()))?;
    let requests: Vec<CaptionRequest> = images
        .iter()
        .map(|i| CaptionRequest::new(i.id, i.image_ref.clone(), mode))
        .collect();
    let fingerprint = megacurate_core::clients::template_for(mode).version_tag();
    let todo: Vec<&CaptionRequest> = requests
        .iter()
        .filter(|r| !log.is_done(r.image_id, Some(&fingerprint)))
        .collect();
    log::info!(
        "{stage}: {} of {} images to caption",
        todo.len(),
        requests.len()
    );
    for chunk in todo.chunks(COMMIT_CHUNK) {
        let outcomes = run_bounded(chunk, p.in_flight, |r| {
            caption_validated(p.captioner, r, p.rules, p.retry_on_invalid)
        });
        log.commit(outcomes).map_err(|e| f(e.to_string()))?;
    }

    let embedder = HashingTextEmbedder { dim: p.embed_dim };
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for img in &images {
        match log.get(img.id) {
            Some(r) if r.is_done_with(Some(&fingerprint)) => {
                let text = r.output.clone().unwrap_or_default();
                rows.push(embedder.embed(&text));
                records.push(
                    PromptRecord::new(mode.prompt_kind(), text, img.image_ref.clone(), img.id)
                        .with_embedding_row(records.len() as u64),
                );
            }
            Some(r) => warnings.push(format!(
                "image {}: {:?}: {}",
                img.id,
                r.status,
                r.error.as_deref().unwrap_or("")
            )),
            None => warnings.push(format!("image {}: no outcome", img.id)),
        }
    }
    let emb = if rows.is_empty() {
        EmbeddingMatrix::zeros(0, embedder.dim.max(1))
    } else {
        EmbeddingMatrix::from_rows(&rows)
            .and_then(|m| l2_normalize(&m))
            .map_err(|e| f(e.to_string()))?
    };
    write_prompts(stage, Stage::Raw, records, &emb, out)?;
    Ok(warnings)
}

#[derive(Serialize)]
struct DedupSummary {
    input: usize,
    after_exact: usize,
    after_fuzzy: usize,
    after_semantic: usize,
}

/// Exact, fuzzy then semantic dedup. Writes survivors, their embeddings and
/// one duplicate group per line.
pub fn dedup_stage(
    stage: &str,
    input: &Path,
    emb: &Path,
    config: &DedupConfig,
    out: &Path,
    groups: &Path,
) -> CliResult<Vec<String>> {
    let f = fail(stage);
    let records = read_prompts(stage, input)?;
    let emb = read_embeddings(emb).map_err(|e| f(e.to_string()))?;
    let outcome = dedup_all(&records, &emb, config).map_err(|e| f(e.to_string()))?;
    let mut survivors = outcome.survivors;
    let kept = gather_rows(stage, &mut survivors, &emb)?;
    let summary = DedupSummary {
        input: records.len(),
        after_exact: outcome.stage_counts[0],
        after_fuzzy: outcome.stage_counts[1],
        after_semantic: outcome.stage_counts[2],
    };
    log::info!(
        "{stage}: {} -> {} -> {} -> {}",
        summary.input,
        summary.after_exact,
        summary.after_fuzzy,
        summary.after_semantic
    );
    write_prompts(stage, Stage::Deduped, survivors, &kept, out)?;
    write_jsonl(groups, &outcome.groups).map_err(&f)?;
    write_json(&sibling(groups, "summary.json"), &summary).map_err(&f)?;
    Ok(Vec::new())
}

pub struct BalanceParams {
    pub kmeans: KMeansConfig,
    pub budget: usize,
    pub strict: bool,
}

#[derive(Serialize)]
struct BalanceFile {
    budget: usize,
    selected: usize,
    residual: i64,
    report: megacurate_core::balance::BalanceReport,
}

/// Hierarchical k-means over unit-normalized embeddings, then top-down
/// shared-cap sampling of `budget` prompts.
pub fn balance_stage(
    stage: &str,
    input: &Path,
    emb: &Path,
    p: &BalanceParams,
    out: &Path,
    report: &Path,
) -> CliResult<Vec<String>> {
    let f = fail(stage);
    let mut records = read_prompts(stage, input)?;
    let emb = read_embeddings(emb).map_err(|e| f(e.to_string()))?;
    let points = gather_rows(stage, &mut records, &emb)?;
    let points = l2_normalize(&points).map_err(|e| f(e.to_string()))?;
    let mut warnings = Vec::new();
    let mut budget = p.budget;
    if budget > records.len() {
        warnings.push(format!(
            "budget {budget} exceeds {} prompts; keeping all",
            records.len()
        ));
        budget = records.len();
    }
    if budget == 0 {
        return Err(f("nothing to balance".into()));
    }
    let tree = build_cluster_tree(&points, &p.kmeans).map_err(|e| f(e.to_string()))?;
    let sample = hierarchical_sample(
        &tree,
        budget,
        p.kmeans.seed,
        SampleOptions { strict: p.strict },
    )
    .map_err(|e| f(e.to_string()))?;
    if sample.residual != 0 {
        warnings.push(format!(
            "selected {} for budget {budget}",
            sample.selected.len()
        ));
    }
    let rep = balance_report(&tree, &sample.selected).map_err(|e| f(e.to_string()))?;
    let mut chosen: Vec<PromptRecord> = sample
        .selected
        .iter()
        .map(|&i| records[i].clone())
        .collect();
    let kept = gather_rows(stage, &mut chosen, &points)?;
    write_prompts(stage, Stage::Balanced, chosen, &kept, out)?;
    write_json(
        report,
        &BalanceFile {
            budget,
            selected: sample.selected.len(),
            residual: sample.residual,
            report: rep,
        },
    )
    .map_err(&f)?;
    Ok(warnings)
}

pub fn pair_stage(
    stage: &str,
    styles: &Path,
    contents: &Path,
    config: &PairingConfig,
    out: &Path,
) -> CliResult<Vec<String>> {
    let f = fail(stage);
    let styles: Vec<u64> = read_prompts(stage, styles)?.iter().map(|r| r.id).collect();
    let contents: Vec<u64> = read_prompts(stage, contents)?
        .iter()
        .map(|r| r.id)
        .collect();
    let combos = make_combinations(&styles, &contents, config).map_err(|e| f(e.to_string()))?;
    let m = Manifest::from_combinations(Stage::Paired, combos).map_err(|e| f(e.to_string()))?;
    write_manifest(out, &m).map_err(|e| f(e.to_string()))?;
    Ok(Vec::new())
}

pub struct GenerateParams<'a> {
    pub generator: &'a dyn Generator,
    pub steps: u32,
    pub cfg_scale: f64,
    pub resolution: (u32, u32),
    pub in_flight: usize,
}

fn generation_fingerprint(r: &GenerationRequest) -> String {
    format!(
        "steps={};cfg={};res={}x{};seed={}",
        r.steps, r.cfg_scale, r.resolution.0, r.resolution.1, r.seed
    )
}

/// Whether every pair was generated.
pub struct GenerateSummary {
    pub warnings: Vec<String>,
    pub complete: bool,
}

/// Renders every pending pair and writes a generated manifest. Image refs
/// under the manifest's directory are stored relative to it.
pub fn generate_stage(
    stage: &str,
    pairs: &Path,
    styles: &Path,
    contents: &Path,
    p: &GenerateParams,
    manifest_out: &Path,
) -> CliResult<GenerateSummary> {
    let f = fail(stage);
    let pairs = read_manifest(pairs).map_err(|e| f(e.to_string()))?;
    let text: BTreeMap<u64, String> = read_prompts(stage, styles)?
        .into_iter()
        .chain(read_prompts(stage, contents)?)
        .map(|r| (r.id, r.text))
        .collect();
    let combos: Vec<_> = pairs.combinations().cloned().collect();
    let mut requests = Vec::with_capacity(combos.len());
    for c in &combos {
        let style = text
            .get(&c.style_id)
            .ok_or_else(|| f(format!("unknown style {:#x}", c.style_id)))?;
        let content = text
            .get(&c.content_id)
            .ok_or_else(|| f(format!("unknown content {:#x}", c.content_id)))?;
        let prompt = compose_prompt(style, content).map_err(|e| f(e.to_string()))?;
        requests.push(GenerationRequest {
            steps: p.steps,
            cfg_scale: p.cfg_scale,
            resolution: p.resolution,
            ..GenerationRequest::new(c.combination_id, prompt, c.generation_seed)
        });
    }
    let base = manifest_out
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    ensure_parent(stage, manifest_out)?;
    let mut log =
        CallLog::open(sibling(manifest_out, "calls.jsonl")).map_err(|e| f(e.to_string()))?;
    let todo: Vec<&GenerationRequest> = requests
        .iter()
        .filter(|r| !log.is_done(r.request_id, Some(&generation_fingerprint(r))))
        .collect();
    log::info!(
        "{stage}: {} of {} images to generate",
        todo.len(),
        requests.len()
    );
    for chunk in todo.chunks(COMMIT_CHUNK) {
        let outcomes = run_bounded(chunk, p.in_flight, |r| {
            let fingerprint = Some(generation_fingerprint(r));
            match p.generator.generate(r) {
                Ok(o) => {
                    let path = Path::new(&o.image_ref);
                    let image_ref = path
                        .strip_prefix(&base)
                        .map(|rel| rel.display().to_string())
                        .unwrap_or(o.image_ref.clone());
                    CallRecord {
                        request_id: r.request_id,
                        status: CallStatus::Done,
                        attempts: o.attempts,
                        output: Some(image_ref),
                        fingerprint,
                        error: None,
                    }
                }
                Err(e) => CallRecord {
                    request_id: r.request_id,
                    status: CallStatus::Failed,
                    attempts: match &e {
                        megacurate_core::clients::ClientError::Transport { attempts, .. }
                        | megacurate_core::clients::ClientError::Status { attempts, .. } => {
                            *attempts
                        }
                        _ => 1,
                    },
                    output: None,
                    fingerprint,
                    error: Some(e.to_string()),
                },
            }
        });
        log.commit(outcomes).map_err(|e| f(e.to_string()))?;
    }

    let mut warnings = Vec::new();
    let mut out = Vec::with_capacity(combos.len());
    for (mut c, r) in combos.into_iter().zip(&requests) {
        let fp = generation_fingerprint(r);
        match log
            .get(c.combination_id)
            .filter(|rec| rec.fingerprint.as_deref() == Some(&fp))
        {
            Some(rec) if rec.is_done() => {
                c.status = CombinationStatus::Done;
                c.generation = Some(GenerationRecord {
                    image_ref: rec.output.clone(),
                    seed: r.seed,
                    steps: r.steps,
                    cfg_scale: r.cfg_scale,
                    attempts: rec.attempts,
                    error: None,
                });
            }
            Some(rec) => {
                warnings.push(format!(
                    "pair {:#x}: {}",
                    c.combination_id,
                    rec.error.as_deref().unwrap_or("failed")
                ));
                c.status = CombinationStatus::Failed;
                c.generation = Some(GenerationRecord {
                    image_ref: None,
                    seed: r.seed,
                    steps: r.steps,
                    cfg_scale: r.cfg_scale,
                    attempts: rec.attempts,
                    error: rec.error.clone(),
                });
            }
            None => warnings.push(format!("pair {:#x}: no outcome", c.combination_id)),
        }
        out.push(c);
    }
    let m = Manifest::from_combinations(Stage::Generated, out).map_err(|e| f(e.to_string()))?;
    write_manifest(manifest_out, &m).map_err(|e| f(e.to_string()))?;
    Ok(GenerateSummary {
        complete: warnings.is_empty(),
        warnings,
    })
}

/// Paths written by [`features_stage`], all derived from the bench path.
pub struct BenchFiles {
    pub items: PathBuf,
    pub embeddings: PathBuf,
    pub labels: PathBuf,
    pub text: PathBuf,
}

impl BenchFiles {
    pub fn new(items: &Path) -> Self {
        Self {
            items: items.to_path_buf(),
            embeddings: sibling(items, "mgse"),
            labels: sibling(items, "labels.jsonl"),
            text: sibling(items, "text.mgse"),
        }
    }
}

/// Mock style features for every generated image, labeled by style prompt,
/// plus hashed style-prompt embeddings per label.
pub fn features_stage(
    stage: &str,
    generated: &Path,
    styles: &Path,
    embed_dim: usize,
    bench: &BenchFiles,
) -> CliResult<Vec<String>> {
    let f = fail(stage);
    let m = read_manifest(generated).map_err(|e| f(e.to_string()))?;
    let base = generated
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let style_text: BTreeMap<u64, String> = read_prompts(stage, styles)?
        .into_iter()
        .map(|r| (r.id, r.text))
        .collect();
    let done: Vec<_> = m
        .combinations()
        .filter(|c| c.status == CombinationStatus::Done)
        .collect();
    let labels = compact_labels(&done.iter().map(|c| c.style_id).collect::<Vec<_>>());
    let mut rows = Vec::with_capacity(done.len());
    let mut items = Vec::with_capacity(done.len());
    let mut label_rows = Vec::with_capacity(done.len());
    for (i, (c, &label)) in done.iter().zip(&labels).enumerate() {
        let image_ref = c
            .generation
            .as_ref()
            .and_then(|g| g.image_ref.clone())
            .ok_or_else(|| {
                f(format!(
                    "pair {:#x} is done but has no image",
                    c.combination_id
                ))
            })?;
        let path = base.join(&image_ref);
        let bytes = std::fs::read(&path).map_err(|e| f(format!("{}: {e}", path.display())))?;
        let image = decode_ppm(&bytes).map_err(|e| {
            f(format!(
                "{image_ref}: {e}; only PPM images have a built-in feature extractor"
            ))
        })?;
        rows.push(mock_style_features(&image));
        items.push(BenchItem {
            id: c.combination_id,
            label,
            row: i,
            style_id: c.style_id,
        });
        label_rows.push(LabelRow {
            row: i,
            label,
            text_row: label.0 as usize,
        });
    }
    if rows.is_empty() {
        return Err(f("no generated images".into()));
    }
    let mut label_styles: Vec<(StyleLabel, u64)> =
        items.iter().map(|i| (i.label, i.style_id)).collect();
    label_styles.sort();
    label_styles.dedup();
    let embedder = HashingTextEmbedder { dim: embed_dim };
    let mut text_rows = Vec::with_capacity(label_styles.len());
    for (_, style_id) in &label_styles {
        let text = style_text
            .get(style_id)
            .ok_or_else(|| f(format!("unknown style {style_id:#x}")))?;
        text_rows.push(embedder.embed(text));
    }
    let features = EmbeddingMatrix::from_rows(&rows).map_err(|e| f(e.to_string()))?;
    let text = EmbeddingMatrix::from_rows(&text_rows)
        .and_then(|t| l2_normalize(&t))
        .map_err(|e| f(e.to_string()))?;
    write_jsonl(&bench.items, &items).map_err(&f)?;
    write_jsonl(&bench.labels, &label_rows).map_err(&f)?;
    write_embeddings(&bench.embeddings, &features).map_err(|e| f(e.to_string()))?;
    write_embeddings(&bench.text, &text).map_err(|e| f(e.to_string()))?;
    Ok(Vec::new())
}

pub fn retrieval_split_stage(
    stage: &str,
    items: &Path,
    queries_per_style: usize,
    seed: u64,
    out: &Path,
) -> CliResult<Vec<String>> {
    let f = fail(stage);
    let mut items: Vec<BenchItem> = read_jsonl(items).map_err(&f)?;
    items.sort_by_key(|i| i.row);
    if items.iter().enumerate().any(|(i, it)| it.row != i) {
        return Err(f("bench rows must be 0..n".into()));
    }
    let ids: Vec<u64> = items.iter().map(|i| i.id).collect();
    let labels: Vec<StyleLabel> = items.iter().map(|i| i.label).collect();
    let split =
        build_split(&ids, &labels, queries_per_style, seed).map_err(|e| f(e.to_string()))?;
    write_split(out, &split).map_err(|e| f(e.to_string()))?;
    Ok(Vec::new())
}

#[derive(Serialize)]
struct TrainHistory {
    history: Vec<f64>,
    steps: usize,
    excluded_anchors: usize,
    rows: usize,
}

pub struct TrainInputs<'a> {
    pub emb: &'a Path,
    pub labels: &'a Path,
    pub text: &'a Path,
    pub split: Option<&'a Path>,
}

/// Trains a projection head. With `split`, only gallery rows are used so
/// queries stay unseen.
pub fn sscl_stage(
    stage: &str,
    inputs: &TrainInputs,
    config: &SsclConfig,
    out_head: &Path,
    history: &Path,
) -> CliResult<Vec<String>> {
    let f = fail(stage);
    let emb = read_embeddings(inputs.emb).map_err(|e| f(e.to_string()))?;
    let text = read_embeddings(inputs.text).map_err(|e| f(e.to_string()))?;
    let mut label_rows: Vec<LabelRow> = read_jsonl(inputs.labels).map_err(&f)?;
    label_rows.sort_by_key(|l| l.row);
    let mut rows: Vec<usize> = label_rows.iter().map(|l| l.row).collect();
    if let Some(split) = inputs.split {
        let split = read_split(split).map_err(|e| f(e.to_string()))?;
        let gallery: HashSet<usize> = split.gallery.iter().map(|g| g.row).collect();
        rows.retain(|r| gallery.contains(r));
    }
    let by_row: BTreeMap<usize, &LabelRow> = label_rows.iter().map(|l| (l.row, l)).collect();
    let images = emb.select_rows(&rows).map_err(|e| f(e.to_string()))?;
    let labels: Vec<StyleLabel> = rows.iter().map(|r| by_row[r].label).collect();
    let pair_index: Vec<usize> = rows.iter().map(|r| by_row[r].text_row).collect();
    let dim_in = images.dim();
    let dim_out = text.dim();
    let batch =
        LabeledBatch::new(images, text, labels, pair_index).map_err(|e| f(e.to_string()))?;
    let initial = if dim_in == dim_out {
        ProjectionHead::identity(dim_in)
    } else {
        ProjectionHead::random(dim_in, dim_out, config.seed)
    };
    let outcome = train_head(&batch, initial, config).map_err(|e| f(e.to_string()))?;
    write_embeddings(out_head, &outcome.head.to_matrix()).map_err(|e| f(e.to_string()))?;
    write_json(
        history,
        &TrainHistory {
            history: outcome.history,
            steps: outcome.steps,
            excluded_anchors: outcome.excluded_anchors,
            rows: rows.len(),
        },
    )
    .map_err(&f)?;
    Ok(Vec::new())
}

/// Scores `split` over `emb`, first projected through `head` when given.
pub fn evaluate_embeddings(
    stage: &str,
    split: &Path,
    emb: &Path,
    ks: &[usize],
    head: Option<&Path>,
) -> CliResult<MetricReport> {
    let f = fail(stage);
    let split = read_split(split).map_err(|e| f(e.to_string()))?;
    let mut emb = read_embeddings(emb).map_err(|e| f(e.to_string()))?;
    if let Some(head) = head {
        let w = read_embeddings(head).map_err(|e| f(e.to_string()))?;
        let head = ProjectionHead::from_matrix(&w).map_err(|e| f(e.to_string()))?;
        emb = head.encode(&emb).map_err(|e| f(e.to_string()))?;
    }
    for l in split.orphan_labels() {
        log::warn!("{stage}: style {l} has queries but no gallery items");
    }
    evaluate(&split, &emb, ks).map_err(|e| f(e.to_string()))
}
