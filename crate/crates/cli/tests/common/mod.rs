#![allow(dead_code)]

use std::path::{Path, PathBuf};

use evprune_core::image::{encode_ppm, RgbImage};

pub const BG: [u8; 3] = [51, 51, 51];
pub const FG: [u8; 3] = [230, 230, 230];

/// Axis-aligned square, `(x, y)` is its top-left corner.
#[derive(Debug, Clone, Copy)]
pub struct Square {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

pub fn square_frame(width: usize, height: usize, sq: Square) -> RgbImage {
    let mut img = RgbImage::filled(width, height, BG);
    for y in sq.y..sq.y + sq.side {
        for x in sq.x..sq.x + sq.side {
            img.set_pixel(x, y, FG);
        }
    }
    img
}

pub fn write_ppm(dir: &Path, name: &str, img: &RgbImage) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, encode_ppm(img)).unwrap();
    path
}

/// Textured image so that patches differ from each other.
pub fn textured(width: usize, height: usize) -> RgbImage {
    let mut img = RgbImage::filled(width, height, [0, 0, 0]);
    for y in 0..height {
        for x in 0..width {
            let v = ((x * 37 + y * 91 + x * y) % 251) as u8;
            img.set_pixel(x, y, [v, v.wrapping_mul(3), 255 - v]);
        }
    }
    img
}

/// Runs the library entry point and captures stdout and stderr.
pub fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["evprune"];
    argv.extend_from_slice(args);
    let code = evprune::run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

pub fn report_value<'a>(report: &'a str, key: &str) -> Option<&'a str> {
    report.lines().find_map(|l| {
        let (k, v) = l.split_once(" = ")?;
        (k == key).then_some(v)
    })
}

pub fn profile_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../profiles")
        .join(format!("{name}.cfg"))
}
