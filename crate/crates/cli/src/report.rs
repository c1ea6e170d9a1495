use std::collections::BTreeMap;
use std::path::PathBuf;

use aeric_core::monitor::MonitorArtifact;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    /// SHA-256 of the effective settings (paths excluded).
    pub config_hash: String,
    pub seeds: BTreeMap<&'static str, u64>,
}

impl Provenance {
    pub fn new(subcommand: &'static str, cfg: &RunConfig) -> Self {
        let seeds = BTreeMap::from([
            ("synth", cfg.synth.master_seed),
            ("projection", cfg.featurize.seed),
            ("train", cfg.train.seed),
            ("bootstrap", cfg.eval.seed),
        ]);
        Self {
            tool: "aeric",
            version: TOOL_VERSION,
            subcommand,
            config_hash: cfg.hash(),
            seeds,
        }
    }

    /// Stamps the run into an artifact's provenance map.
    pub fn stamp(&self, art: &mut MonitorArtifact) {
        let p = &mut art.provenance;
        p.insert("tool_version".into(), self.version.into());
        p.insert(
            format!("{}.config_hash", self.subcommand),
            self.config_hash.clone(),
        );
    }

    fn header(&self) -> String {
        format!(
            "# {} {} {}  config sha256:{}\n",
            self.tool, self.version, self.subcommand, self.config_hash
        )
    }
}

#[derive(Serialize)]
struct Twin<'a, T: Serialize> {
    provenance: &'a Provenance,
    report: &'a T,
}

/// Writes each run's text table and its JSON twin.
pub struct Reporter {
    pub dir: Option<PathBuf>,
    pub provenance: Provenance,
    /// Echo text reports to stdout (off for `score`, whose stdout is the stream).
    pub echo: bool,
}

impl Reporter {
    pub fn emit<T: Serialize>(&self, text: &str, body: &T) -> Result<(), CliError> {
        if self.echo {
            print!("{text}");
        }
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let stem = self.provenance.subcommand;
        let txt = dir.join(format!("{stem}.txt"));
        let json = dir.join(format!("{stem}.json"));
        let mut full = self.provenance.header();
        full.push_str(text);
        std::fs::write(&txt, full).map_err(|e| CliError::Io(format!("{}: {e}", txt.display())))?;
        let mut doc = serde_json::to_string_pretty(&Twin {
            provenance: &self.provenance,
            report: body,
        })?;
        doc.push('\n');
        std::fs::write(&json, doc).map_err(|e| CliError::Io(format!("{}: {e}", json.display())))?;
        Ok(())
    }
}
