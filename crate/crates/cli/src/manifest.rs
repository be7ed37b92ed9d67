use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{execute, Command, Exit, Outcome};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to reproduce a run. A replay records the same manifest
/// apart from `timestamp` and the output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    pub seed: Option<u64>,
    pub config: Command,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    pub manifest: PathBuf,
    /// Write the outputs here instead of the recorded directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

pub fn prepare_out_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn record(command: &Command, argv: Vec<String>, outcome: Outcome) -> anyhow::Result<()> {
    let digest = |p: PathBuf, on_disk: &Path| -> anyhow::Result<FileDigest> {
        Ok(FileDigest { sha256: sha256_file(on_disk)?, path: p })
    };
    let inputs = outcome.inputs.iter().map(|p| digest(p.clone(), p)).collect::<anyhow::Result<_>>()?;
    let outputs = outcome
        .outputs
        .iter()
        .map(|name| digest(PathBuf::from(name), &outcome.out_dir.join(name)))
        .collect::<anyhow::Result<_>>()?;
    let manifest = RunManifest {
        tool: "ltsap".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        argv,
        cwd: std::env::current_dir()?,
        seed: command.seed(),
        config: command.clone(),
        inputs,
        outputs,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    ltsap::io::write_json(&outcome.out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(())
}

fn replace_out_dir(argv: &[String], out: &Path) -> Vec<String> {
    let out = out.display().to_string();
    let mut argv = argv.to_vec();
    for i in 0..argv.len() {
        if argv[i] == "--out-dir" && i + 1 < argv.len() {
            argv[i + 1] = out.clone();
        } else if argv[i].starts_with("--out-dir=") {
            argv[i] = format!("--out-dir={out}");
        }
    }
    argv
}

pub fn replay(args: &ReplayArgs) -> anyhow::Result<()> {
    let manifest: RunManifest = ltsap::io::read_json(&args.manifest)?;
    let recorded_dir = args.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let out_dir = std::path::absolute(args.out_dir.as_ref().unwrap_or(&recorded_dir))?;
    let mut command = manifest.config.clone();
    let argv = replace_out_dir(&manifest.argv, &out_dir);
    match command.out_dir_mut() {
        Some(dir) => *dir = out_dir.clone(),
        None => return Err(Exit::config("manifest records a replay, not a command")),
    }

    std::env::set_current_dir(&manifest.cwd)
        .with_context(|| format!("entering recorded directory {}", manifest.cwd.display()))?;
    for input in &manifest.inputs {
        if sha256_file(&input.path)? != input.sha256 {
            return Err(Exit::config(format!("input {} changed since the recorded run", input.path.display())));
        }
    }
    execute(command, argv)?;

    let mut differing = Vec::new();
    for output in &manifest.outputs {
        let path = out_dir.join(&output.path);
        if !path.exists() || sha256_file(&path)? != output.sha256 {
            differing.push(output.path.display().to_string());
        }
    }
    if !differing.is_empty() {
        return Err(Exit { code: 5, message: format!("replay differs in {}", differing.join(", ")) }.into());
    }
    println!("replayed {}: {} outputs identical", manifest.command, manifest.outputs.len());
    Ok(())
}
