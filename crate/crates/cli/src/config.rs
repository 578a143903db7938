//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use megacurate_core::balance::KMeansConfig;
use megacurate_core::clients::{CaptionRules, GenerationRequest, ServiceEndpoint};
use megacurate_core::dedup::DedupConfig;
use megacurate_core::pairing::PairingConfig;
use megacurate_core::sscl::SsclConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// The shipped defaults file.
pub const DEFAULT_CONFIG: &str = include_str!("../pipeline.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Output directory, relative to the config file.
    pub workspace: PathBuf,
    pub seed: u64,
    pub mock: bool,
    pub input: InputSection,
    pub embedder: EmbedderSection,
    pub clients: ClientsSection,
    pub generation: GenerationSection,
    pub dedup: DedupConfig,
    pub balance: BalanceSection,
    pub pairing: PairingConfig,
    pub sscl: SsclSection,
    pub retrieval: RetrievalSection,
    pub demo: DemoSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            workspace: PathBuf::from("work"),
            seed: 7,
            mock: false,
            input: InputSection::default(),
            embedder: EmbedderSection::default(),
            clients: ClientsSection::default(),
            generation: GenerationSection::default(),
            dedup: DedupConfig::default(),
            balance: BalanceSection::default(),
            pairing: PairingConfig::default(),
            sscl: SsclSection::default(),
            retrieval: RetrievalSection::default(),
            demo: DemoSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    /// JSONL image pool, one `{"id", "image_ref"}` object per line.
    pub image_pool: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderSection {
    /// Width of the hashed prompt embeddings.
    pub dim: usize,
}

impl Default for EmbedderSection {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientsSection {
    pub in_flight: usize,
    /// Extra attempts after a caption fails validation.
    pub retry_on_invalid: u32,
    pub caption: ServiceEndpoint,
    pub generate: ServiceEndpoint,
    pub rules: CaptionRules,
}

impl Default for ClientsSection {
    fn default() -> Self {
        Self {
            in_flight: 8,
            retry_on_invalid: 0,
            caption: ServiceEndpoint::default(),
            generate: ServiceEndpoint::default(),
            rules: CaptionRules::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub steps: u32,
    pub cfg_scale: f64,
    pub resolution: (u32, u32),
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self {
            steps: GenerationRequest::DEFAULT_STEPS,
            cfg_scale: GenerationRequest::DEFAULT_CFG_SCALE,
            resolution: GenerationRequest::DEFAULT_RESOLUTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalanceSection {
    #[serde(flatten)]
    pub kmeans: KMeansConfig,
    pub style_budget: usize,
    pub content_budget: usize,
    pub strict: bool,
}

impl Default for BalanceSection {
    fn default() -> Self {
        Self {
            kmeans: KMeansConfig::default(),
            style_budget: 170_000,
            content_budget: 400_000,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsclSection {
    pub enabled: bool,
    #[serde(flatten)]
    pub train: SsclConfig,
}

impl Default for SsclSection {
    fn default() -> Self {
        Self {
            enabled: true,
            train: SsclConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub queries_per_style: usize,
    pub ks: Vec<usize>,
    pub seed: u64,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        Self {
            queries_per_style: 4,
            ks: vec![1, 10],
            seed: 7,
        }
    }
}

/// Overrides applied by `--demo-scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoSection {
    pub images: usize,
    pub styles: usize,
    pub contents: usize,
    pub levels: Vec<usize>,
    pub style_budget: usize,
    pub content_budget: usize,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self {
            images: 200,
            styles: 20,
            contents: 50,
            levels: vec![16, 4],
            style_budget: 40,
            content_budget: 80,
        }
    }
}

/// One violated invariant, located by a dotted path into the config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn prefixed<'a>(
    section: &'a str,
    diags: Vec<(&'static str, String)>,
) -> impl Iterator<Item = Diagnostic> + 'a {
    diags.into_iter().map(move |(field, message)| Diagnostic {
        path: format!("{section}.{field}"),
        message,
    })
}

impl PipelineConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn diagnostics(&self) -> Vec<Diagnostic> {
        let mut out: Vec<Diagnostic> = Vec::new();
        let mut push = |path: &str, message: String| {
            out.push(Diagnostic {
                path: path.to_string(),
                message,
            })
        };
        if self.workspace.as_os_str().is_empty() {
            push("workspace", "must not be empty".into());
        } else if self.workspace.is_file() {
            push(
                "workspace",
                format!("{} is a file", self.workspace.display()),
            );
        } else if std::fs::metadata(&self.workspace).is_ok_and(|m| m.permissions().readonly()) {
            push(
                "workspace",
                format!("{} is not writable", self.workspace.display()),
            );
        }
        if self.embedder.dim == 0 {
            push("embedder.dim", "must be at least 1".into());
        }
        if self.clients.in_flight == 0 {
            push("clients.in_flight", "must be at least 1".into());
        }
        if self.generation.steps < 1 {
            push("generation.steps", "must be at least 1".into());
        }
        if !(self.generation.cfg_scale > 0.0 && self.generation.cfg_scale.is_finite()) {
            push("generation.cfg_scale", "must be > 0".into());
        }
        if self.generation.resolution.0 == 0 || self.generation.resolution.1 == 0 {
            push("generation.resolution", "must be non-zero".into());
        }
        if self.balance.style_budget == 0 {
            push("balance.style_budget", "must be at least 1".into());
        }
        if self.balance.content_budget == 0 {
            push("balance.content_budget", "must be at least 1".into());
        }
        if self.pairing.n_contents_per_style == 0 {
            push("pairing.n_contents_per_style", "must be at least 1".into());
        }
        if self.retrieval.queries_per_style == 0 {
            push("retrieval.queries_per_style", "must be at least 1".into());
        }
        if self.retrieval.ks.is_empty() || self.retrieval.ks.contains(&0) {
            push("retrieval.ks", "must list positive cutoffs".into());
        }
        let demo_levels = KMeansConfig {
            levels: self.demo.levels.clone(),
            ..self.balance.kmeans.clone()
        };
        if let Some(d) = demo_levels
            .diagnostics()
            .into_iter()
            .find(|(f, _)| *f == "levels")
        {
            push("demo.levels", d.1);
        }
        if self.demo.styles == 0 || self.demo.images < self.demo.styles {
            push("demo.images", "needs at least one image per style".into());
        }
        if self.demo.contents == 0 {
            push("demo.contents", "must be at least 1".into());
        }
        out.extend(prefixed(
            "clients.caption",
            self.clients.caption.diagnostics(),
        ));
        out.extend(prefixed(
            "clients.generate",
            self.clients.generate.diagnostics(),
        ));
        out.extend(prefixed("dedup", self.dedup.diagnostics()));
        out.extend(prefixed("balance", self.balance.kmeans.diagnostics()));
        out.extend(prefixed("sscl", self.sscl.train.diagnostics()));
        out
    }

    /// Applies the `[demo]` overrides.
    pub fn with_demo_scale(mut self) -> Self {
        self.balance.kmeans.levels = self.demo.levels.clone();
        self.balance.style_budget = self.demo.style_budget;
        self.balance.content_budget = self.demo.content_budget;
        self
    }
}

/// Reads and checks a config file. Unreadable or unparsable files are
/// errors; every invariant violation is one diagnostic.
pub fn validate_config(path: &Path) -> CliResult<Vec<Diagnostic>> {
    Ok(PipelineConfig::load(path)?.diagnostics())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_match_code_defaults_and_validate() {
        let shipped = PipelineConfig::parse(DEFAULT_CONFIG).unwrap();
        assert_eq!(shipped, PipelineConfig::default());
        assert_eq!(shipped.diagnostics(), vec![]);
    }

    #[test]
    fn zero_tau_names_sscl_tau() {
        let text = DEFAULT_CONFIG.replace("tau = 0.07", "tau = 0.0");
        let d = PipelineConfig::parse(&text).unwrap().diagnostics();
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].path, "sscl.tau");
    }

    #[test]
    fn non_decreasing_levels_name_balance_levels() {
        let text = DEFAULT_CONFIG.replace(
            "levels = [50000, 10000, 5000, 1000]",
            "levels = [50000, 10000, 10000, 1000]",
        );
        let d = PipelineConfig::parse(&text).unwrap().diagnostics();
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].path, "balance.levels");
    }

    #[test]
    fn unknown_keys_and_bad_syntax_are_errors() {
        assert!(PipelineConfig::parse("wrkspace = \"x\"").is_err());
        assert!(PipelineConfig::parse("[retrieval]\nk = [1]").is_err());
        assert!(PipelineConfig::parse("seed = ").is_err());
    }

    #[test]
    fn several_violations_are_all_reported() {
        let mut c = PipelineConfig::default();
        c.sscl.train.lr = -1.0;
        c.dedup.lsh_bands = 7;
        c.clients.generate.timeout_ms = 0;
        c.retrieval.ks = vec![0];
        let paths: Vec<String> = c.diagnostics().into_iter().map(|d| d.path).collect();
        for p in [
            "sscl.lr",
            "dedup.lsh_bands",
            "clients.generate.timeout_ms",
            "retrieval.ks",
        ] {
            assert!(paths.iter().any(|q| q == p), "{p} missing from {paths:?}");
        }
    }

    #[test]
    fn demo_scale_overrides_balance() {
        let c = PipelineConfig::default().with_demo_scale();
        assert_eq!(c.balance.kmeans.levels, vec![16, 4]);
        assert_eq!((c.balance.style_budget, c.balance.content_budget), (40, 80));
    }
}
