//! Run manifests: every command that writes a primary output also writes
//! `<output>.manifest`, a key=value record of the command, its inputs with
//! sha256 digests, its outputs, and the effective configuration. Manifests
//! contain no wall-clock time, so reruns of identical commands produce
//! identical manifests.

use super::CliError;
use crate::bytesio::write_atomic;
use crate::training::TrainConfig;
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};

/// The manifest sits next to its primary output: `<output>.manifest`.
pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut os = OsString::from(primary.as_os_str());
    os.push(".manifest");
    PathBuf::from(os)
}

/// Ordered key=value entries describing one command run.
#[derive(Debug, Clone)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        let mut m = Self {
            entries: Vec::new(),
        };
        m.push("command", command);
        m.push("tool", "congae");
        m.push("tool_version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn push(&mut self, key: &str, value: impl Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    /// Records an input path and the sha256 of its bytes.
    pub fn input(&mut self, label: &str, path: &Path) -> Result<(), CliError> {
        let bytes =
            std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        self.push(&format!("input.{label}"), path.display());
        self.push(
            &format!("input.{label}.sha256"),
            hex::encode(Sha256::digest(&bytes)),
        );
        Ok(())
    }

    pub fn output(&mut self, label: &str, path: &Path) {
        self.push(&format!("output.{label}"), path.display());
    }

    /// Dumps the effective training configuration under `config.*` keys.
    pub fn push_train_config(&mut self, cfg: &TrainConfig) {
        let dims: Vec<String> = cfg.sage_dims.iter().map(usize::to_string).collect();
        self.push("config.sage_dims", dims.join(","));
        self.push("config.d_hour", cfg.d_hour);
        self.push("config.d_week", cfg.d_week);
        self.push("config.d_g", cfg.d_g);
        self.push("config.d_e", cfg.d_e);
        self.push("config.p_drop", cfg.p_drop);
        self.push("config.p_edge_drop", cfg.p_edge_drop);
        self.push("config.lr", cfg.lr);
        self.push("config.lr_decay", cfg.lr_decay);
        self.push("config.lr_decay_every", cfg.lr_decay_every);
        self.push("config.epochs", cfg.epochs);
        self.push("config.batch_size", cfg.batch_size);
        self.push("config.val_frac", cfg.val_frac);
        self.push("config.patience", cfg.patience);
        self.push("config.seed", cfg.seed);
        self.push("config.variant", cfg.variant.name());
    }

    /// Writes the manifest next to the primary output it describes.
    pub fn write(&self, primary: &Path) -> Result<(), CliError> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(k);
            text.push('=');
            text.push_str(v);
            text.push('\n');
        }
        let path = manifest_path(primary);
        write_atomic(&path, text.as_bytes())
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}
