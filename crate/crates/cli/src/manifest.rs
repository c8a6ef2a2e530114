use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::failure::{input, Outcome};

/// What a command did, echoed into its manifest.
#[derive(Debug, Default)]
pub struct Record {
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    /// Where the manifest goes; `None` for runs that only print.
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the subcommand, with the resolved seed made explicit.
    pub args: Vec<String>,
    pub config: Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, mut args: Vec<String>, rec: &Record, wall_time_secs: f64) -> Self {
        if let Some(seed) = rec.seed {
            if !args.iter().any(|a| a == "--seed" || a.starts_with("--seed=")) {
                args.push("--seed".into());
                args.push(seed.to_string());
            }
        }
        let show = |ps: &[PathBuf]| ps.iter().map(|p| p.display().to_string()).collect();
        RunManifest {
            command: command.into(),
            args,
            config: rec.config.clone(),
            inputs: show(&rec.inputs),
            outputs: show(&rec.outputs),
            seed: rec.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_time_secs,
        }
    }

    pub fn load(path: &Path) -> Outcome<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Outcome<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| input(format!("{}: {e}", path.display())))
    }

    /// Full argv for replaying this run, optionally redirected to `out`.
    pub fn replay_argv(&self, out: Option<&Path>) -> Vec<String> {
        let mut args = self.args.clone();
        if let Some(out) = out {
            let out = out.display().to_string();
            if let Some(i) = args.iter().position(|a| a == "--out") {
                args.drain(i..(i + 2).min(args.len()));
            }
            args.retain(|a| !a.starts_with("--out="));
            args.push("--out".into());
            args.push(out);
        }
        let mut argv = vec!["polyckt".to_string(), self.command.clone()];
        argv.extend(args);
        argv
    }
}

/// Manifest location for a directory output.
pub fn in_dir(dir: &Path) -> PathBuf {
    dir.join("manifest.json")
}

/// Manifest location for a single-file output: `<file>.manifest.json`.
pub fn beside(file: &Path) -> PathBuf {
    let mut name = file.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    file.with_file_name(name)
}
