#![allow(dead_code)]

use std::path::{Path, PathBuf};

use spatialgeo::cli;
use spatialgeo::ExitCode;

/// Small enough that a stage runs in well under a second.
pub const TINY: &str = "seed = 5
[model]
image_side = 16
d_sem = 8
d_geo = 8
blocks = 4
d_model = 16
mlp_hidden = 16
layers = 1
[train]
epochs = 2
";

pub struct Run {
    pub code: ExitCode,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the command line in-process.
pub fn sg(args: &[&str]) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(std::iter::once("spatialgeo").chain(args.iter().copied()), &mut out, &mut err);
    Run { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

pub fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
