//! Where each artifact lives under the work directory, and the config-hash
//! checks applied when one step reads another's output.

use std::path::{Path, PathBuf};

use metatrend::finetune::CONFIG_HASH_PREFIX;
use metatrend::nn::Arch;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn label_file(&self, stock: &str) -> PathBuf {
        self.root.join("labels").join(format!("labels_{stock}.csv"))
    }

    pub fn sigma_ratio(&self) -> PathBuf {
        self.root.join("sigma_ratio.json")
    }

    pub fn feature_file(&self, stock: &str) -> PathBuf {
        self.root
            .join("features")
            .join(format!("features_{stock}.csv"))
    }

    pub fn datasets(&self) -> PathBuf {
        self.root.join("datasets")
    }

    pub fn meta_dir(&self, arch: Arch) -> PathBuf {
        self.root.join("meta").join(arch.slug())
    }

    pub fn phi(&self, arch: Arch) -> PathBuf {
        self.meta_dir(arch).join("phi.params")
    }

    pub fn meta_loss(&self, arch: Arch) -> PathBuf {
        self.meta_dir(arch).join("meta_loss.csv")
    }

    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }

    pub fn predictions(&self, run: &str) -> PathBuf {
        self.runs().join(run).join(format!("predictions_{run}.csv"))
    }

    pub fn run_manifest(&self, run: &str) -> PathBuf {
        self.runs().join(run).join("manifest.json")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn monthly_metrics(&self) -> PathBuf {
        self.root.join("metrics_monthly.json")
    }

    pub fn comparison(&self) -> PathBuf {
        self.root.join("comparison.csv")
    }

    pub fn equity(&self, run: &str) -> PathBuf {
        self.root.join("backtest").join(format!("equity_{run}.csv"))
    }

    pub fn trades(&self, run: &str) -> PathBuf {
        self.root.join("backtest").join(format!("trades_{run}.csv"))
    }

    pub fn backtest_comparison(&self) -> PathBuf {
        self.root.join("backtest_comparison.csv")
    }

    pub fn backtest_summary(&self) -> PathBuf {
        self.root.join("backtest_summary.csv")
    }

    pub fn run_log(&self) -> PathBuf {
        self.root.join("run_log.jsonl")
    }

    /// Run names that have a predictions file, sorted.
    pub fn existing_runs(&self) -> CliResult<Vec<String>> {
        let dir = self.runs();
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let entries = std::fs::read_dir(&dir)
            .map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
        let mut runs: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|name| self.predictions(name).is_file())
            .collect();
        runs.sort();
        Ok(runs)
    }
}

/// Fails with [`CliError::MissingArtifact`] unless `path` exists.
pub fn require(path: &Path, producer: &'static str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        })
    }
}

pub fn check_hash(
    path: &Path,
    found: Option<&str>,
    expected: &str,
    producer: &'static str,
) -> CliResult<()> {
    match found {
        Some(h) if h == expected => Ok(()),
        other => Err(CliError::HashMismatch {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found: other.unwrap_or("(none)").to_string(),
            producer,
        }),
    }
}

/// Prefixes `body` with the config hash comment line.
pub fn with_hash_line(hash: &str, body: &str) -> String {
    format!("{CONFIG_HASH_PREFIX}{hash}\n{body}")
}
