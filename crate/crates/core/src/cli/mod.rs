//! The `cartoondiff` command line.
//!
//! Every option can come from a flag, from a `--config` file of
//! `key = value` lines, or from its default, in that order of precedence.
//! Each run writes a JSON manifest and a `run.conf` holding the fully
//! resolved settings; `--config run.conf` replays the run bit-exactly.

mod commands;
mod config;

pub use config::{parse_config_text, Settings};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, Command};
use serde::{Deserialize, Serialize};

use config::{opt, required, switch, Opt};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Bad flags, bad config values or missing options.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

#[derive(Debug)]
pub(crate) enum CliError {
    Usage(UsageError),
    Runtime(crate::Error),
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e)
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

/// Record of one run, written next to its outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub wall_time_secs: f64,
    pub outputs: Vec<PathBuf>,
}

pub(crate) struct Subcommand {
    pub name: &'static str,
    pub about: &'static str,
    pub opts: &'static [Opt],
}

const SAMPLER_OPTS: [Opt; 4] = [
    opt("lambda", "4.0", "guidance scale"),
    opt("steps", "100", "number of sampling steps"),
    opt("eps-norm", "1e-12", "floor of the token L1 norm"),
    switch("stochastic", "use the ancestral (η = 1) update"),
];

pub(crate) const SUBCOMMANDS: &[Subcommand] = &[
    Subcommand {
        name: "gen-data",
        about: "Generate a labeled shapes dataset",
        opts: &[
            opt("n", "4096", "number of images"),
            opt("size", "32", "image side in pixels"),
            opt("channels", "1", "1 (gray) or 3 (color)"),
            opt("texture", "0.3", "std of the interior texture"),
            opt("seed", "0", "generator seed"),
            required("out", "output dataset file"),
        ],
    },
    Subcommand {
        name: "train",
        about: "Train a denoiser on a dataset",
        opts: &[
            required("data", "dataset file"),
            required("out", "output directory"),
            opt("steps", "20000", "optimizer steps"),
            opt("batch", "64", "batch size"),
            opt("lr", "1e-3", "Adam learning rate"),
            opt("dropout-p", "0.1", "label dropout probability"),
            opt("seed", "0", "training seed"),
            opt(
                "ckpt-every",
                "0",
                "checkpoint interval in steps, 0 for none",
            ),
            opt("precision", "f32", "f32 or f64"),
            opt("patch", "4", "patch size"),
            opt("embed-dim", "64", "transformer width"),
            opt("depth", "4", "number of blocks"),
            opt("heads", "4", "attention heads"),
            opt("mlp-ratio", "4", "MLP hidden width multiplier"),
            opt("num-classes", "4", "number of classes"),
        ],
    },
    Subcommand {
        name: "sample",
        about: "Sample images from a checkpoint",
        opts: &[
            required("checkpoint", "model checkpoint"),
            required("out-dir", "output directory"),
            opt("class", "0", "class label"),
            opt("sigma", "250", "normalize tokens at steps t < sigma"),
            opt("seed", "0", "sampling seed"),
            opt("count", "1", "number of images"),
            opt("snapshots", "", "steps whose state to save, e.g. 400,300,0"),
            SAMPLER_OPTS[0],
            SAMPLER_OPTS[1],
            SAMPLER_OPTS[2],
            SAMPLER_OPTS[3],
        ],
    },
    Subcommand {
        name: "trajectory",
        about: "Spectral metrics of the predicted clean image along sampling",
        opts: &[
            required("checkpoint", "model checkpoint"),
            required("out-dir", "output directory"),
            opt("snapshots", "1000,400,300,200,100,0", "steps to report"),
            opt("class", "0", "class label"),
            opt("sigma", "0", "normalize tokens at steps t < sigma"),
            opt("seed", "0", "sampling seed"),
            opt("runs", "1", "independent runs to average"),
            opt("rho", "0", "radial cutoff, 0 for H/4"),
            SAMPLER_OPTS[0],
            SAMPLER_OPTS[1],
            SAMPLER_OPTS[2],
            SAMPLER_OPTS[3],
        ],
    },
    Subcommand {
        name: "ablate",
        about: "Compare samples across sigma with paired seeds",
        opts: &[
            required("checkpoint", "model checkpoint"),
            required("out-dir", "output directory"),
            opt("sigmas", "0,100,250,400", "sigma values"),
            opt("n", "64", "samples per sigma"),
            opt("seed", "0", "sampling seed"),
            opt("rho", "0", "radial cutoff, 0 for H/4"),
            opt("grid-cols", "8", "samples per contact-sheet row"),
            SAMPLER_OPTS[0],
            SAMPLER_OPTS[1],
            SAMPLER_OPTS[2],
            SAMPLER_OPTS[3],
        ],
    },
    Subcommand {
        name: "inspect",
        about: "Print a checkpoint's configuration and tensors",
        opts: &[required("checkpoint", "model checkpoint")],
    },
];

fn build_command() -> Command {
    let mut cmd = Command::new("cartoondiff")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Cartoon-style diffusion sampling toolkit")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("key = value file; flags override it"),
        );
    for sc in SUBCOMMANDS {
        let mut sub = Command::new(sc.name).about(sc.about);
        for o in sc.opts {
            let mut arg = Arg::new(o.key).long(o.key).help(o.help);
            arg = if o.switch {
                arg.action(ArgAction::SetTrue)
            } else {
                arg.value_name("VALUE")
            };
            if let Some(d) = o.default.filter(|d| !d.is_empty() && !o.switch) {
                arg = arg.help(format!("{} [default: {d}]", o.help));
            }
            sub = sub.arg(arg);
        }
        if sc.name == "inspect" {
            sub = sub.arg(Arg::new("path").value_name("CHECKPOINT").index(1));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

/// Parses `argv` (including the program name) and resolves settings.
pub(crate) fn parse(argv: &[String]) -> Result<(&'static Subcommand, Settings), CliError> {
    let matches = build_command().try_get_matches_from(argv).map_err(|e| {
        use clap::error::ErrorKind::*;
        match e.kind() {
            DisplayHelp | DisplayVersion => CliError::Usage(UsageError(String::new())),
            _ => CliError::Usage(UsageError(e.render().to_string())),
        }
    })?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let sc = SUBCOMMANDS
        .iter()
        .find(|s| s.name == name)
        .expect("registered subcommand");
    let file = match sub.get_one::<String>("config") {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| UsageError(format!("cannot read config {p}: {e}")))?;
            parse_config_text(&text)?
        }
        None => BTreeMap::new(),
    };
    let mut flags = BTreeMap::new();
    for o in sc.opts {
        if o.switch {
            if sub.get_flag(o.key) {
                flags.insert(o.key.to_string(), "true".to_string());
            }
        } else if let Some(v) = sub.get_one::<String>(o.key) {
            flags.insert(o.key.to_string(), v.clone());
        }
    }
    if let Some(p) = sub.try_get_one::<String>("path").ok().flatten() {
        flags
            .entry("checkpoint".to_string())
            .or_insert_with(|| p.clone());
    }
    Ok((sc, Settings::resolve(sc.opts, file, flags)?))
}

/// Writes `{prefix}manifest.json` and `{prefix}run.conf` into `dir`.
pub(crate) fn write_manifest(
    dir: &Path,
    prefix: &str,
    manifest: &RunManifest,
    settings: &Settings,
) -> crate::Result<Vec<PathBuf>> {
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir)?;
    }
    let m = dir.join(format!("{prefix}manifest.json"));
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&m, json + "\n")?;
    let c = dir.join(format!("{prefix}run.conf"));
    std::fs::write(&c, settings.to_config_text())?;
    Ok(vec![m, c])
}

/// Runs the command line and returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let result = parse(&argv).and_then(|(sc, settings)| commands::execute(sc, &settings, &argv));
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(UsageError(msg))) if msg.is_empty() => {
            // --help / --version
            let _ = build_command()
                .try_get_matches_from(&argv)
                .map_err(|e| e.print());
            EXIT_OK
        }
        Err(CliError::Usage(UsageError(msg))) => {
            eprintln!("{}", msg.trim_end());
            if !msg.contains("Usage:") {
                eprintln!("\n{}", build_command().render_usage());
            }
            EXIT_USAGE
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}
