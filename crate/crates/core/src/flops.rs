//! Analytic matmul cost model for a ViT front-end feeding an LLM.
//!
//! Only matrix-multiply work is counted. A transformer layer over `n` tokens
//! of width `d` and MLP ratio `r` costs
//!
//! ```text
//! MACs = 4·n·d²        (Q, K, V, O projections)
//!      + 2·n²·d        (logits and value mixing)
//!      + 2·n·d²·r      (MLP)
//! ```
//!
//! The ViT runs on the retained patches. The merge MLP runs once per retained
//! merge cell. The LLM prefill runs on merged visual tokens plus text tokens.
//! Decode steps attend to a growing cached context. FLOPs are `2 × MACs`.
//!
//! `WorkloadSpec::tau` is the fraction of merge cells **dropped**. This is the
//! opposite of [`crate::saliency::quantile_mask`], whose `tau` is the fraction
//! kept.

use serde::Serialize;

use crate::kv::KvFile;
use crate::{ceil_fraction, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VitDims {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: f64,
    pub patch_size: usize,
    pub merge_size: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlmDims {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArchProfile {
    pub name: String,
    pub vit: VitDims,
    pub llm: LlmDims,
}

const PROFILE_KEYS: [&str; 12] = [
    "name",
    "vit.d_model",
    "vit.n_layers",
    "vit.n_heads",
    "vit.mlp_ratio",
    "vit.patch_size",
    "vit.merge_size",
    "vit.channels",
    "llm.d_model",
    "llm.n_layers",
    "llm.n_heads",
    "llm.mlp_ratio",
];

impl ArchProfile {
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        kv.check_keys(&PROFILE_KEYS)?;
        let profile = ArchProfile {
            name: kv.get_raw("name").unwrap_or("unnamed").to_string(),
            vit: VitDims {
                d_model: kv.require("vit.d_model")?,
                n_layers: kv.require("vit.n_layers")?,
                n_heads: kv.require("vit.n_heads")?,
                mlp_ratio: kv.require("vit.mlp_ratio")?,
                patch_size: kv.require("vit.patch_size")?,
                merge_size: kv.require("vit.merge_size")?,
                channels: kv.require("vit.channels")?,
            },
            llm: LlmDims {
                d_model: kv.require("llm.d_model")?,
                n_layers: kv.require("llm.n_layers")?,
                n_heads: kv.require("llm.n_heads")?,
                mlp_ratio: kv.require("llm.mlp_ratio")?,
            },
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vit.d_model", self.vit.d_model),
            ("vit.n_layers", self.vit.n_layers),
            ("vit.n_heads", self.vit.n_heads),
            ("vit.patch_size", self.vit.patch_size),
            ("vit.merge_size", self.vit.merge_size),
            ("vit.channels", self.vit.channels),
            ("llm.d_model", self.llm.d_model),
            ("llm.n_layers", self.llm.n_layers),
            ("llm.n_heads", self.llm.n_heads),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::validation(format!("{name} must be >= 1")));
            }
        }
        for (name, r) in [("vit.mlp_ratio", self.vit.mlp_ratio), ("llm.mlp_ratio", self.llm.mlp_ratio)] {
            if !r.is_finite() || r <= 0.0 {
                return Err(Error::validation(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadSpec {
    pub image_height: usize,
    pub image_width: usize,
    /// Fraction of visual merge cells dropped.
    pub tau: f64,
    pub text_tokens: usize,
    pub decode_tokens: usize,
}

impl WorkloadSpec {
    /// 448×448 image and a 68-token prompt, no decoding. About 95% of the
    /// 2B-like dense cost is visual.
    pub fn reference(tau: f64) -> Self {
        WorkloadSpec {
            image_height: 448,
            image_width: 448,
            tau,
            text_tokens: 68,
            decode_tokens: 0,
        }
    }
}

/// MACs per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageBreakdown {
    pub vit_attention: f64,
    pub vit_mlp: f64,
    pub merge: f64,
    pub llm_prefill: f64,
    pub llm_decode: f64,
}

impl StageBreakdown {
    pub fn total(&self) -> f64 {
        self.vit_attention + self.vit_mlp + self.merge + self.llm_prefill + self.llm_decode
    }

    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("vit_attention", self.vit_attention),
            ("vit_mlp", self.vit_mlp),
            ("merge", self.merge),
            ("llm_prefill", self.llm_prefill),
            ("llm_decode", self.llm_decode),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub profile: String,
    pub tau_dropped: f64,
    pub flops: f64,
    pub macs: f64,
    pub breakdown: StageBreakdown,
    pub visual_tokens_dense: usize,
    pub visual_tokens_retained: usize,
    pub merged_tokens_retained: usize,
    pub llm_prefill_tokens: usize,
}

impl CostReport {
    pub fn to_kv_text(&self) -> String {
        let mut out = format!(
            "profile = {}\ntau_dropped = {}\nvisual_tokens_dense = {}\nvisual_tokens_retained = {}\nmerged_tokens_retained = {}\nllm_prefill_tokens = {}\nflops_total = {:.6e}\nmacs_total = {:.6e}\n",
            self.profile,
            self.tau_dropped,
            self.visual_tokens_dense,
            self.visual_tokens_retained,
            self.merged_tokens_retained,
            self.llm_prefill_tokens,
            self.flops,
            self.macs
        );
        for (name, macs) in self.breakdown.named() {
            out.push_str(&format!("macs_{name} = {macs:.6e}\nflops_{name} = {:.6e}\n", 2.0 * macs));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut stages = serde_json::Map::new();
        for (name, macs) in self.breakdown.named() {
            stages.insert(
                name.to_string(),
                serde_json::json!({ "macs": macs, "flops": 2.0 * macs }),
            );
        }
        serde_json::json!({
            "profile": self.profile,
            "tau_dropped": self.tau_dropped,
            "visual_tokens_dense": self.visual_tokens_dense,
            "visual_tokens_retained": self.visual_tokens_retained,
            "merged_tokens_retained": self.merged_tokens_retained,
            "llm_prefill_tokens": self.llm_prefill_tokens,
            "flops_total": self.flops,
            "macs_total": self.macs,
            "stages": stages,
        })
    }
}

/// MACs of the attention half of one layer: projections plus logits/value mixing.
pub fn attention_layer_macs(n: f64, d: f64) -> f64 {
    4.0 * n * d * d + 2.0 * n * n * d
}

pub fn mlp_layer_macs(n: f64, d: f64, ratio: f64) -> f64 {
    2.0 * n * d * d * ratio
}

/// Merge-cell grid for an image. The patch grid is truncated to a multiple
/// of the merge size.
pub fn merge_grid(profile: &ArchProfile, height: usize, width: usize) -> (usize, usize) {
    let m = profile.vit.merge_size;
    let rows = height / profile.vit.patch_size / m;
    let cols = width / profile.vit.patch_size / m;
    (rows, cols)
}

pub fn estimate(profile: &ArchProfile, work: &WorkloadSpec) -> Result<CostReport> {
    profile.validate()?;
    if !(0.0..=1.0).contains(&work.tau) {
        return Err(Error::validation(format!(
            "dropped fraction must lie in [0, 1], got {}",
            work.tau
        )));
    }
    let m2 = profile.vit.merge_size * profile.vit.merge_size;
    let (cell_rows, cell_cols) = merge_grid(profile, work.image_height, work.image_width);
    let cells = cell_rows * cell_cols;
    let cells_kept = ceil_fraction(1.0 - work.tau, cells);
    let patches_kept = cells_kept * m2;

    let vit = &profile.vit;
    let vd = vit.d_model as f64;
    let n = patches_kept as f64;
    let vit_layers = vit.n_layers as f64;
    let vit_attention = vit_layers * attention_layer_macs(n, vd);
    let vit_mlp = vit_layers * mlp_layer_macs(n, vd, vit.mlp_ratio);

    let merge_in = vd * m2 as f64;
    let llm = &profile.llm;
    let ld = llm.d_model as f64;
    let merge = cells_kept as f64 * (merge_in * merge_in + merge_in * ld);

    let prefill_tokens = cells_kept + work.text_tokens;
    let p = prefill_tokens as f64;
    let llm_layers = llm.n_layers as f64;
    let llm_prefill = llm_layers * (attention_layer_macs(p, ld) + mlp_layer_macs(p, ld, llm.mlp_ratio));

    // One new token per step, attending to the cached context plus itself.
    let per_step_fixed = 4.0 * ld * ld + mlp_layer_macs(1.0, ld, llm.mlp_ratio);
    let llm_decode = (0..work.decode_tokens)
        .map(|k| {
            let ctx = (prefill_tokens + k + 1) as f64;
            llm_layers * (per_step_fixed + 2.0 * ctx * ld)
        })
        .sum();

    let breakdown = StageBreakdown {
        vit_attention,
        vit_mlp,
        merge,
        llm_prefill,
        llm_decode,
    };
    let macs = breakdown.total();
    Ok(CostReport {
        profile: profile.name.clone(),
        tau_dropped: work.tau,
        flops: 2.0 * macs,
        macs,
        breakdown,
        visual_tokens_dense: cells * m2,
        visual_tokens_retained: patches_kept,
        merged_tokens_retained: cells_kept,
        llm_prefill_tokens: prefill_tokens,
    })
}

/// Relative reductions in percent, `100 · (dense − sparse) / dense`. Negative when sparse costs more.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reduction {
    pub flops_pct: f64,
    pub macs_pct: f64,
}

pub fn compare(dense: &CostReport, sparse: &CostReport) -> Result<Reduction> {
    reduction(dense.flops, sparse.flops, dense.macs, sparse.macs)
}

/// Same as [`compare`] on raw totals.
pub fn reduction(dense_flops: f64, sparse_flops: f64, dense_macs: f64, sparse_macs: f64) -> Result<Reduction> {
    if dense_flops == 0.0 || dense_macs == 0.0 {
        return Err(Error::validation("dense cost is zero; reduction undefined"));
    }
    Ok(Reduction {
        flops_pct: 100.0 * (dense_flops - sparse_flops) / dense_flops,
        macs_pct: 100.0 * (dense_macs - sparse_macs) / dense_macs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_profile() -> ArchProfile {
        ArchProfile {
            name: "toy".into(),
            vit: VitDims {
                d_model: 64,
                n_layers: 2,
                n_heads: 4,
                mlp_ratio: 4.0,
                patch_size: 14,
                merge_size: 2,
                channels: 3,
            },
            llm: LlmDims {
                d_model: 128,
                n_layers: 3,
                n_heads: 4,
                mlp_ratio: 3.0,
            },
        }
    }

    #[test]
    fn zero_workload_costs_nothing() {
        let w = WorkloadSpec {
            image_height: 0,
            image_width: 0,
            tau: 0.0,
            text_tokens: 0,
            decode_tokens: 0,
        };
        let r = estimate(&toy_profile(), &w).unwrap();
        assert_eq!(r.macs, 0.0);
        assert_eq!(r.flops, 0.0);
        assert!(compare(&r, &r).is_err());
    }

    #[test]
    fn equal_reports_zero_reduction() {
        let r = estimate(&toy_profile(), &WorkloadSpec::reference(0.5)).unwrap();
        let red = compare(&r, &r).unwrap();
        assert_eq!((red.flops_pct, red.macs_pct), (0.0, 0.0));
    }

    #[test]
    fn table_subscripts() {
        let r = reduction(14.7, 7.4, 7.4, 3.7).unwrap();
        assert!((r.flops_pct - 49.66).abs() < 0.01);
        assert!((r.macs_pct - 50.0).abs() < 1e-12);
        let r = reduction(14.7, 10.3, 1.0, 1.0).unwrap();
        assert!((r.flops_pct - 29.93).abs() < 0.01);
    }

    #[test]
    fn flops_are_twice_macs() {
        for tau in [0.0, 0.3, 0.9] {
            let mut w = WorkloadSpec::reference(tau);
            w.decode_tokens = 5;
            let r = estimate(&toy_profile(), &w).unwrap();
            assert_eq!(r.flops, 2.0 * r.macs);
            assert!(r.visual_tokens_retained <= r.visual_tokens_dense);
        }
    }

    #[test]
    fn token_accounting() {
        // 448 / 14 = 32 patches per side, 16x16 merge cells.
        let r = estimate(&toy_profile(), &WorkloadSpec::reference(0.3)).unwrap();
        assert_eq!(r.visual_tokens_dense, 1024);
        assert_eq!(r.merged_tokens_retained, 180); // ceil(0.7 * 256)
        assert_eq!(r.visual_tokens_retained, 720);
        assert_eq!(r.llm_prefill_tokens, 248);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = toy_profile();
        p.llm.n_layers = 0;
        assert!(estimate(&p, &WorkloadSpec::reference(0.5)).is_err());
        assert!(estimate(&toy_profile(), &WorkloadSpec::reference(1.2)).is_err());
    }

    #[test]
    fn profile_kv_parsing() {
        let text = "name = t\nvit.d_model = 64\nvit.n_layers = 2\nvit.n_heads = 4\nvit.mlp_ratio = 4\nvit.patch_size = 14\nvit.merge_size = 2\nvit.channels = 3\nllm.d_model = 128\nllm.n_layers = 3\nllm.n_heads = 4\nllm.mlp_ratio = 3\n";
        let p = ArchProfile::from_kv_text(text).unwrap();
        let mut expected = toy_profile();
        expected.name = "t".into();
        assert_eq!(p, expected);
        assert!(ArchProfile::from_kv_text("vit.d_model = 64\n").is_err());
    }

    #[test]
    fn json_has_stable_keys() {
        let r = estimate(&toy_profile(), &WorkloadSpec::reference(0.5)).unwrap();
        let j = r.to_json();
        for key in ["flops_total", "macs_total", "visual_tokens_retained"] {
            assert!(j.get(key).is_some(), "{key}");
        }
        assert!(j["stages"]["llm_prefill"]["macs"].is_number());
        assert!(r.to_kv_text().contains("flops_total = "));
    }
}
