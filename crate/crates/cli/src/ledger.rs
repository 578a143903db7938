//! Per-stage run ledger: what each stage consumed and produced, by hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::files::{hash_file, sha256_hex, write_atomic};

pub const LEDGER_FILE: &str = "run_ledger.json";
const LEDGER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Done,
    /// Finished with per-item failures; rerun to retry them.
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub status: StageStatus,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub warnings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub schema_version: u32,
    pub stages: BTreeMap<String, StageEntry>,
}

impl Default for RunLedger {
    fn default() -> Self {
        Self {
            schema_version: LEDGER_VERSION,
            stages: BTreeMap::new(),
        }
    }
}

/// What a stage body reports back to the runner.
pub struct StageRun {
    pub warnings: Vec<String>,
    pub complete: bool,
}

impl From<Vec<String>> for StageRun {
    fn from(warnings: Vec<String>) -> Self {
        Self {
            warnings,
            complete: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Ran,
    Skipped,
}

/// Runs stages against a workspace, skipping those whose inputs and config
/// are unchanged and whose outputs still hash as recorded.
pub struct Runner {
    root: PathBuf,
    ledger: RunLedger,
    pub outcomes: Vec<(String, StepOutcome)>,
}

impl Runner {
    pub fn open(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Config(format!("{}: {e}", root.display())))?;
        let path = root.join(LEDGER_FILE);
        let ledger = match std::fs::read(&path) {
            Ok(bytes) => {
                let l: RunLedger =
                    serde_json::from_slice(&bytes).map_err(|e| CliError::Integrity {
                        stage: "ledger".into(),
                        message: format!("{}: {e}", path.display()),
                    })?;
                if l.schema_version != LEDGER_VERSION {
                    return Err(CliError::Integrity {
                        stage: "ledger".into(),
                        message: format!("unsupported ledger version {}", l.schema_version),
                    });
                }
                l
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => RunLedger::default(),
            Err(e) => return Err(CliError::Config(format!("{}: {e}", path.display()))),
        };
        Ok(Self {
            root: root.to_path_buf(),
            ledger,
            outcomes: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn ledger(&self) -> &RunLedger {
        &self.ledger
    }

    fn hashes(
        &self,
        stage: &str,
        files: &[&str],
        missing: impl Fn(String) -> CliError,
    ) -> CliResult<BTreeMap<String, String>> {
        files
            .iter()
            .map(|rel| {
                let h = hash_file(&self.path(rel)).map_err(|m| missing(format!("{stage}: {m}")))?;
                Ok((rel.to_string(), h))
            })
            .collect()
    }

    /// `inputs` and `outputs` are workspace-relative paths.
    pub fn step<C: Serialize>(
        &mut self,
        stage: &str,
        inputs: &[&str],
        config: &C,
        outputs: &[&str],
        body: impl FnOnce() -> CliResult<StageRun>,
    ) -> CliResult<StepOutcome> {
        let config_hash =
            sha256_hex(&serde_json::to_vec(config).map_err(|e| CliError::stage(stage, e))?);
        let input_hashes = self.hashes(stage, inputs, |m| CliError::stage(stage, m))?;
        if let Some(prev) = self.ledger.stages.get(stage) {
            if prev.status == StageStatus::Done
                && prev.config_hash == config_hash
                && prev.inputs == input_hashes
            {
                for (rel, expected) in &prev.outputs {
                    let actual = hash_file(&self.path(rel)).map_err(|m| CliError::Integrity {
                        stage: stage.into(),
                        message: m,
                    })?;
                    if &actual != expected {
                        return Err(CliError::Integrity {
                            stage: stage.into(),
                            message: format!(
                                "{rel} changed since it was written; delete it to rebuild"
                            ),
                        });
                    }
                }
                log::info!("{stage}: up to date");
                self.outcomes.push((stage.into(), StepOutcome::Skipped));
                return Ok(StepOutcome::Skipped);
            }
        }
        log::info!("{stage}: running");
        let run = body()?;
        for w in &run.warnings {
            log::warn!("{stage}: {w}");
        }
        let outputs = self.hashes(stage, outputs, |m| CliError::stage(stage, m))?;
        self.ledger.stages.insert(
            stage.into(),
            StageEntry {
                status: if run.complete {
                    StageStatus::Done
                } else {
                    StageStatus::Incomplete
                },
                config_hash,
                inputs: input_hashes,
                outputs,
                warnings: run.warnings.len(),
            },
        );
        self.save()?;
        self.outcomes.push((stage.into(), StepOutcome::Ran));
        Ok(StepOutcome::Ran)
    }

    fn save(&self) -> CliResult<()> {
        let mut bytes =
            serde_json::to_vec_pretty(&self.ledger).map_err(|e| CliError::stage("ledger", e))?;
        bytes.push(b'\n');
        write_atomic(&self.path(LEDGER_FILE), &bytes).map_err(|m| CliError::stage("ledger", m))
    }
}
