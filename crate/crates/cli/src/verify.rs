//! Built-in property suites.
//!
//! Every case draws from its own RNG, seeded by `case_seed(base, index)`, so
//! a failure can be replayed alone with `--only <suite>/<property>
//! --case-seed <seed>`.

use std::fmt::Write as _;
use std::time::Instant;

use evprune_core::encoder::{max_relative_error, Encoder, EncoderConfig};
use evprune_core::event::{
    read_events_bin, read_events_csv, simulate_events, write_events_bin, write_events_csv, Event,
    EventFrame, EventStream, Polarity,
};
use evprune_core::features::{read_features, write_features};
use evprune_core::flops::{estimate, ArchProfile, LlmDims, VitDims, WorkloadSpec};
use evprune_core::image::GrayImage;
use evprune_core::pack::{coordinate_grid, mask_of, pack_patches, pack_positions, unpack_scatter};
use evprune_core::rope::{rope_matrix, RopeTable};
use evprune_core::saliency::{patch_scores, quantile_mask, Granularity, PatchMask, SaliencyMap};
use evprune_core::GridPos;
use ndarray::{Array1, Array2};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Deliberate defects for checking that the suites catch them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Packed tokens get positions `0, 1, 2, …` instead of their originals.
    NaivePositions,
    /// Masks keep one unit too many.
    MaskOffByOne,
    /// Rotations stretch vectors slightly.
    RopeScale,
}

impl Fault {
    pub fn parse(name: &str) -> Option<Fault> {
        match name {
            "naive-positions" => Some(Fault::NaivePositions),
            "mask-off-by-one" => Some(Fault::MaskOffByOne),
            "rope-scale" => Some(Fault::RopeScale),
            _ => None,
        }
    }

    pub const NAMES: [&'static str; 3] = ["naive-positions", "mask-off-by-one", "rope-scale"];

    pub fn name(self) -> &'static str {
        match self {
            Fault::NaivePositions => Self::NAMES[0],
            Fault::MaskOffByOne => Self::NAMES[1],
            Fault::RopeScale => Self::NAMES[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub level: Level,
    pub seed: u64,
    pub fault: Option<Fault>,
    /// `suite/property` filter.
    pub only: Option<String>,
    /// Runs exactly one case with this seed.
    pub case_seed: Option<u64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            level: Level::Quick,
            seed: 0,
            fault: None,
            only: None,
            case_seed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Failure {
    pub property: String,
    pub case_seed: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct PropertyResult {
    pub name: String,
    pub cases: usize,
    pub failure: Option<Failure>,
}

#[derive(Debug, Clone)]
pub struct VerifySummary {
    pub results: Vec<PropertyResult>,
    pub fault: Option<Fault>,
    pub seconds: f64,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.failure.is_none())
    }

    pub fn failures(&self) -> impl Iterator<Item = &Failure> {
        self.results.iter().filter_map(|r| r.failure.as_ref())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            match &r.failure {
                None => {
                    let _ = writeln!(out, "PASS {} ({} cases)", r.name, r.cases);
                }
                Some(f) => {
                    let fault = self
                        .fault
                        .map(|x| format!(" --inject-fault {}", x.name()))
                        .unwrap_or_default();
                    let _ = writeln!(
                        out,
                        "FAIL {} after {} cases: {}\n     reproduce: evprune verify --only {} --case-seed {}{fault}",
                        r.name, r.cases, f.message, f.property, f.case_seed
                    );
                }
            }
        }
        let failed = self.results.iter().filter(|r| r.failure.is_some()).count();
        let _ = writeln!(
            out,
            "{} properties, {} failed, {:.2}s",
            self.results.len(),
            failed,
            self.seconds
        );
        out
    }
}

/// SplitMix64 of `base + index`.
pub fn case_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

type Check = fn(&mut StdRng, &Ctx) -> Result<(), String>;

struct Ctx {
    fault: Option<Fault>,
    level: Level,
}

struct Property {
    name: &'static str,
    quick: usize,
    full: usize,
    check: Check,
}

const PROPERTIES: &[Property] = &[
    Property { name: "rope/norm", quick: 200, full: 1000, check: rope_norm },
    Property { name: "rope/relative-shift", quick: 200, full: 1000, check: rope_shift },
    Property { name: "rope/composition", quick: 200, full: 1000, check: rope_compose },
    Property { name: "rope/table-vs-matrix", quick: 200, full: 1000, check: rope_table },
    Property { name: "saliency/brute-force-scores", quick: 30, full: 100, check: sal_scores },
    Property { name: "saliency/cardinality", quick: 200, full: 1000, check: sal_cardinality },
    Property { name: "saliency/nesting", quick: 100, full: 500, check: sal_nesting },
    Property { name: "saliency/threshold", quick: 100, full: 500, check: sal_threshold },
    Property { name: "saliency/scale-invariance", quick: 100, full: 500, check: sal_scale },
    Property { name: "saliency/raster-ties", quick: 20, full: 100, check: sal_ties },
    Property { name: "pack/filter-loop", quick: 100, full: 500, check: pack_filter },
    Property { name: "pack/position-alignment", quick: 100, full: 500, check: pack_alignment },
    Property { name: "pack/scatter-section", quick: 100, full: 500, check: pack_scatter },
    Property { name: "events/evt1-round-trip", quick: 50, full: 300, check: ev_bin },
    Property { name: "events/csv-round-trip", quick: 50, full: 300, check: ev_csv },
    Property { name: "events/accumulate-additive", quick: 50, full: 300, check: ev_additive },
    Property { name: "events/resize-mass", quick: 50, full: 300, check: ev_resize },
    Property { name: "events/simulate-antisymmetric", quick: 30, full: 200, check: ev_simulate },
    Property { name: "features/round-trip", quick: 50, full: 300, check: feat_round_trip },
    Property { name: "encoder/packed-vs-oracle", quick: 8, full: 36, check: enc_oracle },
    Property { name: "flops/monotone", quick: 100, full: 500, check: flops_monotone },
];

pub fn property_names() -> Vec<&'static str> {
    PROPERTIES.iter().map(|p| p.name).collect()
}

pub fn run_verify(opts: &VerifyOptions) -> VerifySummary {
    let start = Instant::now();
    let ctx = Ctx {
        fault: opts.fault,
        level: opts.level,
    };
    let mut results = Vec::new();
    for (pi, prop) in PROPERTIES.iter().enumerate() {
        if let Some(only) = &opts.only {
            if !(prop.name == only || prop.name.starts_with(&format!("{only}/"))) {
                continue;
            }
        }
        let seeds: Vec<u64> = match opts.case_seed {
            Some(s) => vec![s],
            None => {
                let n = match opts.level {
                    Level::Quick => prop.quick,
                    Level::Full => prop.full,
                };
                let base = case_seed(opts.seed, pi as u64 + 1);
                (0..n as u64).map(|i| case_seed(base, i)).collect()
            }
        };
        let mut failure = None;
        let mut cases = 0;
        for seed in seeds {
            cases += 1;
            let mut rng = StdRng::seed_from_u64(seed);
            if let Err(message) = (prop.check)(&mut rng, &ctx) {
                failure = Some(Failure {
                    property: prop.name.to_string(),
                    case_seed: seed,
                    message,
                });
                break;
            }
        }
        results.push(PropertyResult {
            name: prop.name.to_string(),
            cases,
            failure,
        });
    }
    VerifySummary {
        results,
        fault: opts.fault,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pick<T: Copy>(rng: &mut StdRng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn rand_vec(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rotate(ctx: &Ctx, t: &RopeTable, pos: GridPos, v: &[f64]) -> Result<Vec<f64>, String> {
    let mut out = t.apply(pos, v).map_err(|e| e.to_string())?;
    if ctx.fault == Some(Fault::RopeScale) {
        out.iter_mut().for_each(|x| *x *= 1.0 + 1e-6);
    }
    Ok(out)
}

fn rope_norm(rng: &mut StdRng, ctx: &Ctx) -> Result<(), String> {
    let d = pick(rng, &[4, 8, 64]);
    let t = RopeTable::build(64, 64, d).map_err(|e| e.to_string())?;
    let v = rand_vec(rng, d);
    let pos = GridPos::new(rng.random_range(0..64), rng.random_range(0..64));
    let r = rotate(ctx, &t, pos, &v)?;
    let err = (dot(&r, &r).sqrt() - dot(&v, &v).sqrt()).abs();
    ensure(err <= 1e-9, || format!("d={d} at {pos:?}: norm changed by {err:e}"))
}

fn rope_shift(rng: &mut StdRng, ctx: &Ctx) -> Result<(), String> {
    let d = pick(rng, &[4, 8, 64]);
    let t = RopeTable::build(64, 64, d).map_err(|e| e.to_string())?;
    let (q, k) = (rand_vec(rng, d), rand_vec(rng, d));
    let mut p = || GridPos::new(rng.random_range(0..32), rng.random_range(0..32));
    let (a, b, s) = (p(), p(), p());
    let shift = |x: GridPos| GridPos::new(x.row + s.row, x.col + s.col);
    let before = dot(&rotate(ctx, &t, a, &q)?, &rotate(ctx, &t, b, &k)?);
    let after = dot(&rotate(ctx, &t, shift(a), &q)?, &rotate(ctx, &t, shift(b), &k)?);
    ensure((before - after).abs() <= 1e-9, || {
        format!("d={d}: <R{a:?}q, R{b:?}k> = {before} but shifted by {s:?} gives {after}")
    })
}

fn rope_compose(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let d = pick(rng, &[4, 8, 64]);
    let (i1, j1, i2, j2) = (
        rng.random_range(0..40),
        rng.random_range(0..40),
        rng.random_range(0..40),
        rng.random_range(0..40),
    );
    let m = |i, j| rope_matrix(i, j, d).map_err(|e| e.to_string());
    let lhs = m(i1 + i2, j1 + j2)?;
    let rhs = m(i1, j1)?.dot(&m(i2, j2)?);
    let err = (&lhs - &rhs).iter().fold(0.0f64, |a, x| a.max(x.abs()));
    ensure(err <= 1e-12, || format!("d={d}: R({i1},{j1})R({i2},{j2}) off by {err:e}"))
}

fn rope_table(rng: &mut StdRng, ctx: &Ctx) -> Result<(), String> {
    let d = pick(rng, &[4, 8, 64]);
    let t = RopeTable::build(48, 48, d).map_err(|e| e.to_string())?;
    let v = rand_vec(rng, d);
    let pos = GridPos::new(rng.random_range(0..48), rng.random_range(0..48));
    let fast = rotate(ctx, &t, pos, &v)?;
    let slow = rope_matrix(pos.row, pos.col, d)
        .map_err(|e| e.to_string())?
        .dot(&Array1::from(v));
    let err = fast.iter().zip(slow.iter()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    ensure(err <= 1e-12, || format!("d={d} at {pos:?}: table and matrix differ by {err:e}"))
}

fn mask(ctx: &Ctx, map: &SaliencyMap, tau: f64, g: Granularity) -> Result<PatchMask, String> {
    let m = quantile_mask(map, tau, g).map_err(|e| e.to_string())?;
    if ctx.fault == Some(Fault::MaskOffByOne) {
        let mut bits = m.bits().to_vec();
        if let Some(b) = bits.iter_mut().find(|b| !**b) {
            *b = true;
        }
        return PatchMask::from_bits(m.rows, m.cols, tau, bits).map_err(|e| e.to_string());
    }
    Ok(m)
}

fn rand_map(rng: &mut StdRng, levels: u32) -> SaliencyMap {
    let (r, c) = (rng.random_range(1..12), rng.random_range(1..12));
    let s = (0..r * c).map(|_| f64::from(rng.random_range(0..levels))).collect();
    SaliencyMap::from_scores(r, c, 1, s).expect("valid map")
}

fn sal_scores(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let p = rng.random_range(2..6);
    let (w, h) = (rng.random_range(p..40), rng.random_range(p..40));
    let counts = (0..w * h).map(|_| f64::from(rng.random_range(0..5u32))).collect();
    let frame = EventFrame::from_counts(w, h, counts).map_err(|e| e.to_string())?;
    let s = patch_scores(&frame, p).map_err(|e| e.to_string())?;
    let (rows, cols) = (h / p, w / p);
    ensure((s.rows, s.cols) == (rows, cols), || "grid size".into())?;
    for u in 0..rows {
        for v in 0..cols {
            let mut total = 0.0;
            for y in u * p..(u + 1) * p {
                for x in v * p..(v + 1) * p {
                    total += frame.get(x, y).abs();
                }
            }
            ensure(total == s.score(u, v), || {
                format!("{w}x{h}, p={p}: patch ({u},{v}) = {} vs {total}", s.score(u, v))
            })?;
        }
    }
    Ok(())
}

fn sal_cardinality(rng: &mut StdRng, ctx: &Ctx) -> Result<(), String> {
    let map = rand_map(rng, 6);
    let tau = rng.random_range(0.0..=1.0);
    let m = mask(ctx, &map, tau, Granularity::Patch)?;
    let n = map.scores.len();
    let want = (tau * n as f64).ceil() as usize;
    ensure(m.retained() == want, || {
        format!("tau={tau}, N={n}: kept {} instead of {want}", m.retained())
    })
}

fn sal_nesting(rng: &mut StdRng, ctx: &Ctx) -> Result<(), String> {
    let map = rand_map(rng, 4);
    let (a, b): (f64, f64) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
    let (lo, hi) = (a.min(b), a.max(b));
    let small = mask(ctx, &map, lo, Granularity::Patch)?;
    let big = mask(ctx, &map, hi, Granularity::Patch)?;
    let nested = small.bits().iter().zip(big.bits()).all(|(s, b)| !s || *b);
    ensure(nested, || format!("mask at tau={lo} is not inside mask at tau={hi}"))
}

fn sal_threshold(rng: &mut StdRng, ctx: &Ctx) -> Result<(), String> {
    let map = rand_map(rng, 6);
    let tau = rng.random_range(0.0..=1.0);
    let m = mask(ctx, &map, tau, Granularity::Patch)?;
    let mut min_kept = f64::INFINITY;
    let mut max_dropped = f64::NEG_INFINITY;
    for (s, &b) in map.scores.iter().zip(m.bits()) {
        if b {
            min_kept = min_kept.min(*s);
        } else {
            max_dropped = max_dropped.max(*s);
        }
    }
    ensure(min_kept >= max_dropped, || {
        format!("retained score {min_kept} below dropped score {max_dropped}")
    })
}

fn sal_scale(rng: &mut StdRng, ctx: &Ctx) -> Result<(), String> {
    let map = rand_map(rng, 6);
    let tau = rng.random_range(0.0..=1.0);
    let c = rng.random_range(0.01..100.0);
    let scaled = SaliencyMap::from_scores(
        map.rows,
        map.cols,
        1,
        map.scores.iter().map(|s| s * c).collect(),
    )
    .map_err(|e| e.to_string())?;
    let a = mask(ctx, &map, tau, Granularity::Patch)?;
    let b = mask(ctx, &scaled, tau, Granularity::Patch)?;
    ensure(a.bits() == b.bits(), || format!("scaling by {c} changed the mask"))
}

fn sal_ties(rng: &mut StdRng, ctx: &Ctx) -> Result<(), String> {
    let (r, c) = (rng.random_range(1..10), rng.random_range(1..10));
    let v = rng.random_range(0.0..5.0);
    let map = SaliencyMap::from_scores(r, c, 1, vec![v; r * c]).map_err(|e| e.to_string())?;
    let tau = rng.random_range(0.0..=1.0);
    let m = mask(ctx, &map, tau, Granularity::Patch)?;
    let k = m.retained();
    let prefix = m.bits().iter().enumerate().all(|(i, &b)| b == (i < k));
    ensure(prefix, || format!("constant {r}x{c} map did not keep a raster prefix"))
}

fn rand_bits_mask(rng: &mut StdRng) -> (PatchMask, Array2<f64>) {
    let (r, c, d) = (rng.random_range(1..10), rng.random_range(1..10), rng.random_range(1..6));
    let bits = (0..r * c).map(|_| rng.random_bool(0.5)).collect();
    let x = Array2::from_shape_simple_fn((r * c, d), || rng.random_range(-1.0..1.0));
    (PatchMask::from_bits(r, c, 0.5, bits).expect("valid mask"), x)
}

fn pack_filter(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let (mask, x) = rand_bits_mask(rng);
    let packed = pack_patches(&x, &mask).map_err(|e| e.to_string())?;
    let mut r = 0;
    for idx in 0..mask.len() {
        if !mask.bits()[idx] {
            continue;
        }
        let pos = GridPos::new(idx / mask.cols, idx % mask.cols);
        ensure(packed.kept.get(r) == Some(&pos), || format!("row {r} has wrong coordinate"))?;
        ensure(packed.tokens.row(r) == x.row(idx), || format!("row {r} has wrong payload"))?;
        r += 1;
    }
    ensure(r == packed.len(), || "packed sequence has extra rows".into())
}

fn pack_alignment(rng: &mut StdRng, ctx: &Ctx) -> Result<(), String> {
    let (mask, _) = rand_bits_mask(rng);
    let rope = RopeTable::build(mask.rows, mask.cols, 8).map_err(|e| e.to_string())?;
    let mut positions = pack_positions(&rope, &mask).map_err(|e| e.to_string())?;
    if ctx.fault == Some(Fault::NaivePositions) {
        positions = (0..positions.len())
            .map(|i| GridPos::new(i / mask.cols, i % mask.cols))
            .collect();
    }
    let coords = pack_patches(&coordinate_grid(mask.rows, mask.cols), &mask).map_err(|e| e.to_string())?;
    for (row, pos) in coords.tokens.rows().into_iter().zip(&positions) {
        ensure((row[0] as usize, row[1] as usize) == (pos.row, pos.col), || {
            format!("token from ({}, {}) was given position {pos:?}", row[0], row[1])
        })?;
    }
    Ok(())
}

fn pack_scatter(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let (mask, x) = rand_bits_mask(rng);
    let packed = pack_patches(&x, &mask).map_err(|e| e.to_string())?;
    let fill = Array1::from_elem(x.ncols(), -7.0);
    let dense = unpack_scatter(&packed, fill.view()).map_err(|e| e.to_string())?;
    let back_mask = mask_of(&packed).map_err(|e| e.to_string())?;
    let again = pack_patches(&dense, &back_mask).map_err(|e| e.to_string())?;
    ensure(again == packed, || "pack(unpack(P)) != P".into())?;
    let full = pack_patches(&x, &PatchMask::all(mask.rows, mask.cols, true)).map_err(|e| e.to_string())?;
    let restored = unpack_scatter(&full, fill.view()).map_err(|e| e.to_string())?;
    ensure(restored == x, || "unpack(pack(X, all)) != X".into())
}

fn rand_stream(rng: &mut StdRng) -> EventStream {
    let (w, h) = (rng.random_range(1..64u32), rng.random_range(1..64u32));
    let n = rng.random_range(0..300);
    let events = (0..n)
        .map(|_| {
            let pol = if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
            Event::new(rng.random_range(0..1_000_000), rng.random_range(0..w), rng.random_range(0..h), pol)
        })
        .collect();
    EventStream::new(w, h, events).expect("valid stream")
}

fn ev_bin(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let s = rand_stream(rng);
    let bytes = write_events_bin(&s).map_err(|e| e.to_string())?;
    let back = read_events_bin(&bytes).map_err(|e| e.to_string())?;
    ensure(back == s, || "EVT1 decode differs".into())?;
    let again = write_events_bin(&back).map_err(|e| e.to_string())?;
    ensure(again == bytes, || "EVT1 re-encode is not byte-identical".into())
}

fn ev_csv(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let s = rand_stream(rng);
    let parsed = read_events_csv(write_events_csv(&s).as_bytes()).map_err(|e| e.to_string())?;
    let via = read_events_bin(&write_events_bin(&parsed).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure(via == s, || "CSV -> EVT1 -> stream lost events".into())
}

fn ev_additive(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let s = rand_stream(rng);
    let a = rng.random_range(0..600_000);
    let b = a + rng.random_range(0..400_000);
    let c = b + rng.random_range(0..400_000);
    let (l, r, whole) = (s.accumulate(a..b), s.accumulate(b..c), s.accumulate(a..c));
    let ok = l.counts.iter().zip(&r.counts).zip(&whole.counts).all(|((x, y), z)| x + y == *z);
    ensure(ok, || format!("windows [{a},{b}) + [{b},{c}) != [{a},{c})"))
}

fn ev_resize(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let s = rand_stream(rng);
    let f = s.accumulate(s.extent());
    let (w, h) = (rng.random_range(1..80), rng.random_range(1..80));
    let r = f.resize_to(w, h).map_err(|e| e.to_string())?;
    let (a, b) = (f.total(), r.total());
    ensure((a - b).abs() <= 1e-9 * a.max(1.0), || format!("mass {a} became {b} at {w}x{h}"))
}

fn ev_simulate(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
    let mut img = || {
        GrayImage::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..=1.0)).collect()).expect("valid")
    };
    let (a, b) = (img(), img());
    let c = rng.random_range(0.05..1.0);
    let fwd = simulate_events(&a, &b, c, 10_000).map_err(|e| e.to_string())?;
    let bwd = simulate_events(&b, &a, c, 10_000).map_err(|e| e.to_string())?;
    let mirrored = fwd.len() == bwd.len()
        && fwd.events().iter().zip(bwd.events()).all(|(e, f)| {
            (e.t_us, e.x, e.y) == (f.t_us, f.x, f.y) && e.polarity == f.polarity.flipped()
        });
    ensure(mirrored, || "swapping frames did not mirror polarities".into())?;
    let same = simulate_events(&a, &a, c, 10_000).map_err(|e| e.to_string())?;
    ensure(same.is_empty(), || "identical frames produced events".into())
}

fn feat_round_trip(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let (n, d) = (rng.random_range(0..20), rng.random_range(1..20));
    let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1e3..1e3));
    let bytes = write_features(&x).map_err(|e| e.to_string())?;
    let back = read_features(&bytes).map_err(|e| e.to_string())?;
    let again = write_features(&back).map_err(|e| e.to_string())?;
    ensure(again == bytes, || "feature dump does not round-trip".into())
}

fn enc_oracle(rng: &mut StdRng, ctx: &Ctx) -> Result<(), String> {
    let side = match ctx.level {
        Level::Quick => pick(rng, &[4, 8]),
        Level::Full => pick(rng, &[8, 12, 16]),
    };
    let d = pick(rng, &[16, 32]);
    let tau = pick(rng, &[0.25, 0.5, 0.75]);
    let config = EncoderConfig {
        patch_size: 2,
        channels: 1,
        d_model: d,
        n_layers: 2,
        n_heads: 2,
        mlp_ratio: 2.0,
        merge_size: 1,
        d_out: 8,
        seed: rng.random(),
    };
    let enc = Encoder::new(config).map_err(|e| e.to_string())?;
    let n = side * side;
    let patches = Array2::from_shape_simple_fn((n, 4), || rng.random_range(-1.0..1.0));
    let scores = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let map = SaliencyMap::from_scores(side, side, 2, scores).map_err(|e| e.to_string())?;
    let m = quantile_mask(&map, tau, Granularity::Patch).map_err(|e| e.to_string())?;
    let rope = enc.rope_table(side, side).map_err(|e| e.to_string())?;
    let packed = pack_patches(&patches, &m).map_err(|e| e.to_string())?;
    let positions = if ctx.fault == Some(Fault::NaivePositions) {
        (0..packed.len()).map(|i| GridPos::new(i / side, i % side)).collect()
    } else {
        packed.kept.clone()
    };
    let fast = enc.forward(&packed.tokens, &positions, &rope).map_err(|e| e.to_string())?;
    let oracle = enc.encode_masked_dense_oracle(&patches, &rope, &m).map_err(|e| e.to_string())?;
    let err = max_relative_error(&fast, &oracle.tokens, 1e-6);
    ensure(err <= 1e-5, || {
        format!("N={n}, d={d}, tau={tau}: packed vs oracle relative error {err:e}")
    })
}

fn flops_monotone(rng: &mut StdRng, _ctx: &Ctx) -> Result<(), String> {
    let profile = ArchProfile {
        name: "verify".into(),
        vit: VitDims {
            d_model: 64 * rng.random_range(1..5),
            n_layers: rng.random_range(1..8),
            n_heads: 4,
            mlp_ratio: rng.random_range(1.0..5.0),
            patch_size: 14,
            merge_size: rng.random_range(1..3),
            channels: 3,
        },
        llm: LlmDims {
            d_model: 64 * rng.random_range(1..9),
            n_layers: rng.random_range(1..8),
            n_heads: 4,
            mlp_ratio: rng.random_range(1.0..9.0),
        },
    };
    let (a, b): (f64, f64) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
    let mut work = WorkloadSpec::reference(a.min(b));
    work.text_tokens = rng.random_range(0..200);
    work.decode_tokens = rng.random_range(0..4);
    let lo = estimate(&profile, &work).map_err(|e| e.to_string())?;
    let hi = estimate(&profile, &WorkloadSpec { tau: a.max(b), ..work.clone() }).map_err(|e| e.to_string())?;
    ensure(hi.flops <= lo.flops && hi.macs <= lo.macs, || {
        format!("dropping more ({} > {}) raised the cost", a.max(b), a.min(b))
    })?;
    ensure(lo.flops == 2.0 * lo.macs, || "flops != 2 * macs".into())
}
