use std::fmt::Write as _;
use std::ops::Range;
use std::path::PathBuf;

use evprune_core::encoder::{patchify, rgb_to_array, Encoder, EncoderConfig, ProjectedTokens};
use evprune_core::event::{simulate_events, write_events_bin, EventFrame, EventStream};
use evprune_core::features::write_features;
use evprune_core::flops::{compare, estimate, ArchProfile, CostReport, Reduction, WorkloadSpec};
use evprune_core::image::{encode_ppm, RgbImage};
use evprune_core::pack::pack_patches;
use evprune_core::saliency::{apply_mask_to_image, patch_scores, quantile_mask, Granularity, PatchMask};
use ndarray::{Array2, Array3};

use crate::error::{CliError, CliResult};
use crate::io::{read_events, read_image, read_text, OutputSet};
use crate::manifest::RunManifest;

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub frame_a: PathBuf,
    pub frame_b: PathBuf,
    pub contrast: f64,
    pub duration_us: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone)]
pub struct SimulateOutcome {
    pub events: usize,
    pub manifest: RunManifest,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<SimulateOutcome> {
    let a = read_image(&args.frame_a)?;
    let b = read_image(&args.frame_b)?;
    if (a.width, a.height) != (b.width, b.height) {
        return Err(CliError::Validation(format!(
            "frame sizes differ: {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let stream = simulate_events(&a.to_gray(), &b.to_gray(), args.contrast, args.duration_us)?;
    let bytes = write_events_bin(&stream)?;
    let mut outputs = OutputSet::new();
    outputs.stage(&args.out, &bytes)?;
    outputs.commit()?;

    let mut manifest = RunManifest::new("simulate");
    manifest
        .param("contrast", args.contrast)
        .param("duration_us", args.duration_us)
        .input("frame_a", &args.frame_a)
        .input("frame_b", &args.frame_b)
        .output("events", &args.out);
    Ok(SimulateOutcome {
        events: stream.len(),
        manifest,
    })
}

impl SimulateOutcome {
    pub fn render(&self) -> String {
        format!("events = {}\nmanifest = {}\n", self.events, self.manifest.to_json())
    }
}

#[derive(Debug, Clone)]
pub struct MaskArgs {
    pub image: PathBuf,
    pub events: PathBuf,
    /// Retained fraction.
    pub tau: f64,
    pub patch_size: usize,
    pub merge_size: usize,
    pub window: Option<Range<u64>>,
    pub fill: [u8; 3],
    pub out_mask: PathBuf,
    pub out_image: PathBuf,
}

#[derive(Debug, Clone)]
pub struct MaskOutcome {
    pub mask: PatchMask,
    pub window: Range<u64>,
    pub manifest: RunManifest,
}

fn check_tau(tau: f64) -> CliResult<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(CliError::Validation(format!("tau must lie in [0, 1], got {tau}")));
    }
    Ok(())
}

/// Event frame over `window` (full extent by default), rebinned to the image size.
fn event_frame(
    stream: &EventStream,
    window: Option<Range<u64>>,
    image: &RgbImage,
) -> CliResult<(EventFrame, Range<u64>)> {
    let window = window.unwrap_or_else(|| stream.extent());
    let frame = stream.accumulate(window.clone());
    let frame = if (frame.width, frame.height) == (image.width, image.height) {
        frame
    } else {
        frame.resize_to(image.width, image.height)?
    };
    Ok((frame, window))
}

fn saliency_mask(
    frame: &EventFrame,
    tau: f64,
    patch_size: usize,
    merge_size: usize,
) -> CliResult<PatchMask> {
    if merge_size == 0 {
        return Err(CliError::Validation("merge size must be >= 1".into()));
    }
    let scores = patch_scores(frame, patch_size)?;
    Ok(quantile_mask(&scores, tau, Granularity::for_merge_size(merge_size))?)
}

pub fn cmd_mask(args: &MaskArgs) -> CliResult<MaskOutcome> {
    check_tau(args.tau)?;
    let (p, m) = (args.patch_size, args.merge_size);
    if p == 0 || m == 0 {
        return Err(CliError::Validation("patch and merge sizes must be >= 1".into()));
    }
    let image = read_image(&args.image)?;
    if image.width < p * m || image.height < p * m {
        return Err(CliError::Validation(format!(
            "{}x{} image is smaller than one {m}x{m} cell of {p}px patches",
            image.width, image.height
        )));
    }
    let stream = read_events(&args.events)?;
    let (frame, window) = event_frame(&stream, args.window.clone(), &image)?;
    let mask = saliency_mask(&frame, args.tau, p, m)?;
    let masked = apply_mask_to_image(&image, &mask, p, args.fill)?;

    let mut outputs = OutputSet::new();
    outputs.stage(&args.out_mask, mask.to_text().as_bytes())?;
    outputs.stage(&args.out_image, &encode_ppm(&masked))?;
    outputs.commit()?;

    let mut manifest = RunManifest::new("mask");
    manifest
        .param("tau", args.tau)
        .param("patch_size", p)
        .param("merge_size", m)
        .param("window", [window.start, window.end])
        .param("fill", args.fill)
        .input("image", &args.image)
        .input("events", &args.events)
        .output("mask", &args.out_mask)
        .output("image", &args.out_image);
    Ok(MaskOutcome {
        mask,
        window,
        manifest,
    })
}

impl MaskOutcome {
    pub fn render(&self) -> String {
        format!(
            "grid = {}x{}\nretained = {}\ntotal = {}\nwindow = {}:{}\nmanifest = {}\n",
            self.mask.rows,
            self.mask.cols,
            self.mask.retained(),
            self.mask.len(),
            self.window.start,
            self.window.end,
            self.manifest.to_json()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodeMode {
    Dense,
    Packed,
    Oracle,
}

impl EncodeMode {
    pub fn name(self) -> &'static str {
        match self {
            EncodeMode::Dense => "dense",
            EncodeMode::Packed => "packed",
            EncodeMode::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncodeArgs {
    pub image: PathBuf,
    pub events: PathBuf,
    /// Retained fraction.
    pub tau: f64,
    pub config: Option<PathBuf>,
    pub mode: EncodeMode,
    pub window: Option<Range<u64>>,
    pub out: PathBuf,
    /// Replaces the configured seed.
    pub seed_override: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct EncodeOutcome {
    pub n_patches: usize,
    pub n_tokens: usize,
    pub n_merged: usize,
    pub merged: ProjectedTokens,
    pub manifest: RunManifest,
}

fn image_tensor(image: &RgbImage, channels: usize) -> CliResult<Array3<f64>> {
    match channels {
        3 => Ok(rgb_to_array(image)),
        1 => {
            let g = image.to_gray();
            Ok(Array3::from_shape_fn((g.height, g.width, 1), |(y, x, _)| g.get(x, y)))
        }
        c => Err(CliError::Validation(format!(
            "encoder channels must be 1 or 3 for image input, got {c}"
        ))),
    }
}

pub fn cmd_encode(args: &EncodeArgs) -> CliResult<EncodeOutcome> {
    check_tau(args.tau)?;
    let mut config = match &args.config {
        Some(path) => EncoderConfig::from_kv_text(&read_text(path)?).map_err(|e| match e {
            evprune_core::Error::Parse { .. } => CliError::Format(format!("{}: {e}", path.display())),
            other => CliError::Validation(format!("{}: {other}", path.display())),
        })?,
        None => EncoderConfig::default(),
    };
    if let Some(seed) = args.seed_override {
        config.seed = seed;
    }
    config.validate()?;
    let (p, m) = (config.patch_size, config.merge_size);

    let image = read_image(&args.image)?;
    let stream = read_events(&args.events)?;
    let tensor = image_tensor(&image, config.channels)?;
    let patches = patchify(&tensor, p)?;
    let (rows, cols) = (image.height / p, image.width / p);
    if rows % m != 0 || cols % m != 0 {
        return Err(CliError::Validation(format!(
            "{rows}x{cols} patch grid is not divisible by merge size {m}"
        )));
    }
    let (frame, window) = event_frame(&stream, args.window.clone(), &image)?;
    let mask = saliency_mask(&frame, args.tau, p, m)?;

    let encoder = Encoder::new(config.clone())?;
    let rope = encoder.rope_table(rows, cols)?;
    let features = match args.mode {
        EncodeMode::Dense => encoder.encode_dense(&patches, &rope)?,
        EncodeMode::Packed => encoder.encode_packed(&pack_patches(&patches, &mask)?, &rope)?,
        EncodeMode::Oracle => encoder.encode_masked_dense_oracle(&patches, &rope, &mask)?,
    };
    let merged = encoder.merge_project(&features)?;
    let bytes = write_features(&merged.tokens)?;
    let mut outputs = OutputSet::new();
    outputs.stage(&args.out, &bytes)?;
    outputs.commit()?;

    let mut manifest = RunManifest::new("encode");
    manifest
        .param("tau", args.tau)
        .param("mode", args.mode.name())
        .param("patch_size", p)
        .param("merge_size", m)
        .param("window", [window.start, window.end])
        .param("seed", config.seed)
        .param("encoder", &config)
        .input("image", &args.image)
        .input("events", &args.events)
        .output("features", &args.out);
    if let Some(path) = &args.config {
        manifest.input("config", path);
    }
    Ok(EncodeOutcome {
        n_patches: rows * cols,
        n_tokens: features.len(),
        n_merged: merged.tokens.nrows(),
        merged,
        manifest,
    })
}

impl EncodeOutcome {
    pub fn render(&self) -> String {
        format!(
            "n_patches = {}\nn_tokens = {}\nn_merged = {}\nfeature_dim = {}\nmanifest = {}\n",
            self.n_patches,
            self.n_tokens,
            self.n_merged,
            self.merged.tokens.ncols(),
            self.manifest.to_json()
        )
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.merged.tokens
    }
}

#[derive(Debug, Clone)]
pub struct FlopsArgs {
    pub profile: PathBuf,
    pub image_height: usize,
    pub image_width: usize,
    /// Dropped fraction.
    pub tau_dropped: f64,
    pub text_tokens: usize,
    pub decode_tokens: usize,
    pub baseline: bool,
}

impl FlopsArgs {
    /// Reference workload at the given dropped fraction.
    pub fn reference(profile: PathBuf, tau_dropped: f64) -> Self {
        let w = WorkloadSpec::reference(tau_dropped);
        FlopsArgs {
            profile,
            image_height: w.image_height,
            image_width: w.image_width,
            tau_dropped,
            text_tokens: w.text_tokens,
            decode_tokens: w.decode_tokens,
            baseline: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FlopsOutcome {
    pub report: CostReport,
    pub dense: Option<CostReport>,
    pub reduction: Option<Reduction>,
    pub manifest: RunManifest,
}

pub fn cmd_flops(args: &FlopsArgs) -> CliResult<FlopsOutcome> {
    let text = read_text(&args.profile)?;
    let profile = ArchProfile::from_kv_text(&text).map_err(|e| match e {
        evprune_core::Error::Parse { .. } => CliError::Format(format!("{}: {e}", args.profile.display())),
        other => CliError::Validation(format!("{}: {other}", args.profile.display())),
    })?;
    let work = WorkloadSpec {
        image_height: args.image_height,
        image_width: args.image_width,
        tau: args.tau_dropped,
        text_tokens: args.text_tokens,
        decode_tokens: args.decode_tokens,
    };
    let report = estimate(&profile, &work)?;
    let (dense, reduction) = if args.baseline {
        let dense = estimate(&profile, &WorkloadSpec { tau: 0.0, ..work.clone() })?;
        let red = compare(&dense, &report)?;
        (Some(dense), Some(red))
    } else {
        (None, None)
    };
    let mut manifest = RunManifest::new("flops");
    manifest
        .param("tau_dropped", args.tau_dropped)
        .param("image_size", [args.image_height, args.image_width])
        .param("text_tokens", args.text_tokens)
        .param("decode_tokens", args.decode_tokens)
        .param("baseline", args.baseline)
        .param("patch_size", profile.vit.patch_size)
        .param("merge_size", profile.vit.merge_size)
        .input("profile", &args.profile);
    Ok(FlopsOutcome {
        report,
        dense,
        reduction,
        manifest,
    })
}

impl FlopsOutcome {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("[sparse]\n");
        out.push_str(&self.report.to_kv_text());
        if let (Some(dense), Some(red)) = (&self.dense, &self.reduction) {
            out.push_str("[dense]\n");
            out.push_str(&dense.to_kv_text());
            out.push_str("[reduction]\n");
            let _ = writeln!(out, "flops_pct = {:.3}", red.flops_pct);
            let _ = writeln!(out, "macs_pct = {:.3}", red.macs_pct);
        }
        let _ = writeln!(out, "manifest = {}", self.manifest.to_json());
        out
    }

    pub fn render_json(&self) -> String {
        let mut v = serde_json::json!({
            "sparse": self.report.to_json(),
            "manifest": self.manifest,
        });
        if let (Some(dense), Some(red)) = (&self.dense, &self.reduction) {
            v["dense"] = dense.to_json();
            v["reduction"] = serde_json::json!({
                "flops_pct": red.flops_pct,
                "macs_pct": red.macs_pct,
            });
        }
        format!("{}\n", serde_json::to_string_pretty(&v).expect("json"))
    }
}
