//! `evprune` command-line front-end.
//!
//! Every subcommand validates its inputs before writing, stages outputs in
//! temporary files and renames them on success. It then prints a `key =
//! value` report ending in a `manifest = {…}` line.
//!
//! Exit codes: 0 success, 1 invalid input, 2 I/O or format error, 3
//! verification failure.

pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;
pub mod verify;

use std::ffi::OsString;
use std::io::Write;
use std::ops::Range;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{
    cmd_encode, cmd_flops, cmd_mask, cmd_simulate, EncodeArgs, EncodeMode, FlopsArgs, MaskArgs,
    SimulateArgs,
};
pub use error::{CliError, CliResult};
pub use manifest::RunManifest;
pub use verify::{run_verify, Fault, Level, VerifyOptions};

pub const SEED_ENV: &str = "EVPRUNE_SEED";

#[derive(Debug, Parser)]
#[command(name = "evprune", version, about = "Event-guided visual token pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate events between two frames.
    Simulate {
        frame_a: PathBuf,
        frame_b: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        contrast: f64,
        #[arg(long = "duration-us", default_value_t = 10_000)]
        duration_us: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a saliency mask from events and render the masked image.
    Mask {
        image: PathBuf,
        events: PathBuf,
        /// Fraction of patches (or merge cells) kept.
        #[arg(long)]
        tau: f64,
        #[arg(long = "patch-size", default_value_t = 14)]
        patch_size: usize,
        #[arg(long = "merge-size", default_value_t = 2)]
        merge_size: usize,
        /// Half-open microsecond window `t0:t1`; defaults to the stream extent.
        #[arg(long, value_parser = parse_window)]
        window: Option<Range<u64>>,
        /// Fill colour `r,g,b` for dropped patches.
        #[arg(long, value_parser = parse_rgb, default_value = "0,0,0")]
        fill: [u8; 3],
        #[arg(long = "out-mask")]
        out_mask: PathBuf,
        #[arg(long = "out-image")]
        out_image: PathBuf,
    },
    /// Run the toy encoder and write merged features.
    Encode {
        image: PathBuf,
        events: PathBuf,
        /// Fraction of patches (or merge cells) kept.
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = ModeArg::Packed)]
        mode: ModeArg,
        #[arg(long, value_parser = parse_window)]
        window: Option<Range<u64>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate FLOPs and MACs for a profile.
    Flops {
        #[arg(long)]
        profile: PathBuf,
        /// `HxW` in pixels.
        #[arg(long = "image-size", value_parser = parse_size, default_value = "448x448")]
        image_size: (usize, usize),
        /// Fraction of visual merge cells DROPPED (not kept).
        #[arg(long = "tau-dropped", visible_alias = "tau")]
        tau_dropped: f64,
        #[arg(long = "text-tokens", default_value_t = 68)]
        text_tokens: usize,
        #[arg(long, default_value_t = 0)]
        decode: usize,
        /// Also report the dense cost and the reductions.
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run the built-in property suites.
    Verify {
        #[arg(long, conflicts_with = "full")]
        quick: bool,
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict to `suite` or `suite/property`.
        #[arg(long)]
        only: Option<String>,
        #[arg(long = "case-seed")]
        case_seed: Option<u64>,
        #[arg(long = "inject-fault", hide = true, value_parser = clap::builder::PossibleValuesParser::new(Fault::NAMES))]
        inject_fault: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Dense,
    Packed,
    Oracle,
}

impl From<ModeArg> for EncodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dense => EncodeMode::Dense,
            ModeArg::Packed => EncodeMode::Packed,
            ModeArg::Oracle => EncodeMode::Oracle,
        }
    }
}

pub fn parse_window(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once(':').ok_or("expected t0:t1")?;
    let a: u64 = a.trim().parse().map_err(|e| format!("t0: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("t1: {e}"))?;
    if b < a {
        return Err(format!("window end {b} precedes start {a}"));
    }
    Ok(a..b)
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or("expected HxW")?;
    let h = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    let w = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    Ok((h, w))
}

pub fn parse_rgb(s: &str) -> Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected r,g,b".into());
    }
    let mut out = [0u8; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.trim().parse().map_err(|e| format!("{p}: {e}"))?;
    }
    Ok(out)
}

fn seed_override() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| CliError::Validation(format!("{SEED_ENV}={v}: {e}"))),
        Err(_) => Ok(None),
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> CliResult<()> {
    let text = match cmd {
        Command::Simulate {
            frame_a,
            frame_b,
            contrast,
            duration_us,
            out,
        } => cmd_simulate(&SimulateArgs {
            frame_a,
            frame_b,
            contrast,
            duration_us,
            out,
        })?
        .render(),
        Command::Mask {
            image,
            events,
            tau,
            patch_size,
            merge_size,
            window,
            fill,
            out_mask,
            out_image,
        } => cmd_mask(&MaskArgs {
            image,
            events,
            tau,
            patch_size,
            merge_size,
            window,
            fill,
            out_mask,
            out_image,
        })?
        .render(),
        Command::Encode {
            image,
            events,
            tau,
            config,
            mode,
            window,
            out,
        } => cmd_encode(&EncodeArgs {
            image,
            events,
            tau,
            config,
            mode: mode.into(),
            window,
            out,
            seed_override: seed_override()?,
        })?
        .render(),
        Command::Flops {
            profile,
            image_size,
            tau_dropped,
            text_tokens,
            decode,
            baseline,
            json,
        } => {
            let outcome = cmd_flops(&FlopsArgs {
                profile,
                image_height: image_size.0,
                image_width: image_size.1,
                tau_dropped,
                text_tokens,
                decode_tokens: decode,
                baseline,
            })?;
            if json {
                outcome.render_json()
            } else {
                outcome.render()
            }
        }
        Command::Verify {
            quick: _,
            full,
            seed,
            only,
            case_seed,
            inject_fault,
        } => {
            if let Some(only) = &only {
                let known = verify::property_names();
                if !known.iter().any(|p| p == only || p.starts_with(&format!("{only}/"))) {
                    return Err(CliError::Validation(format!("no property matches {only:?}")));
                }
            }
            let opts = VerifyOptions {
                level: if full { Level::Full } else { Level::Quick },
                seed,
                fault: inject_fault.as_deref().and_then(Fault::parse),
                only,
                case_seed,
            };
            let summary = run_verify(&opts);
            let text = summary.render();
            write_out(out, &text)?;
            if !summary.passed() {
                let names: Vec<String> = summary.failures().map(|f| f.property.clone()).collect();
                return Err(CliError::Verification(names.join(", ")));
            }
            return Ok(());
        }
    };
    write_out(out, &text)
}

fn write_out(out: &mut dyn Write, text: &str) -> CliResult<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io("<stdout>", e))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
