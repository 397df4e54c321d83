//! Built-in MNIST-like corpus for the digits 1 and 7.
//!
//! The sandbox this workbench targets often has no copy of the real IDX
//! files, so experiments can fall back to procedurally rendered digits:
//! anti-aliased strokes with seeded jitter in position, slant, thickness,
//! and ink. The generator writes standard IDX files so the rest of the
//! pipeline is identical either way.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{write_idx_images, write_idx_labels, ImageSet, IMAGE_SIDE};
use crate::error::Result;
use crate::rng::rng_from_seed;

struct Canvas {
    pixels: Vec<f64>,
}

impl Canvas {
    fn new() -> Self {
        Self {
            pixels: vec![0.0; IMAGE_SIDE * IMAGE_SIDE],
        }
    }

    /// Anti-aliased stroke from (x0, y0) to (x1, y1); coordinates are
    /// (column, row) in pixel units. Overlapping strokes take the max.
    fn stroke(&mut self, from: (f64, f64), to: (f64, f64), thickness: f64, ink: f64) {
        let (x0, y0) = from;
        let (x1, y1) = to;
        let (dx, dy) = (x1 - x0, y1 - y0);
        let len_sq = (dx * dx + dy * dy).max(1e-12);
        let reach = thickness / 2.0 + 1.0;
        let min_x = (x0.min(x1) - reach).floor().max(0.0) as usize;
        let max_x = (x0.max(x1) + reach).ceil().min((IMAGE_SIDE - 1) as f64) as usize;
        let min_y = (y0.min(y1) - reach).floor().max(0.0) as usize;
        let max_y = (y0.max(y1) + reach).ceil().min((IMAGE_SIDE - 1) as f64) as usize;
        for r in min_y..=max_y {
            for c in min_x..=max_x {
                let (px, py) = (c as f64, r as f64);
                let t = ((px - x0) * dx + (py - y0) * dy) / len_sq;
                let t = t.clamp(0.0, 1.0);
                let (nx, ny) = (x0 + t * dx, y0 + t * dy);
                let dist = ((px - nx).powi(2) + (py - ny).powi(2)).sqrt();
                let value = (thickness / 2.0 + 0.5 - dist).clamp(0.0, 1.0) * ink;
                let cell = &mut self.pixels[r * IMAGE_SIDE + c];
                *cell = cell.max(value);
            }
        }
    }

    fn quantize(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

fn render_one(rng: &mut impl Rng) -> Vec<u8> {
    let mut canvas = Canvas::new();
    let dx = rng.gen_range(-1.5..1.5);
    let dy = rng.gen_range(-1.0..1.0);
    let slant = rng.gen_range(-1.8..1.8);
    let thickness = rng.gen_range(1.5..2.5);
    let ink = rng.gen_range(0.75..1.0);
    let top = (14.0 + dx + slant, 8.0 + dy);
    let bottom = (14.0 + dx - slant, 20.0 + dy);
    canvas.stroke(top, bottom, thickness, ink);
    // Flag and serif lengths vary continuously down to zero, keeping the
    // class unimodal rather than a mix of discrete styles.
    let flag = rng.gen_range(0.0..3.5);
    if flag > 0.3 {
        let flag_to = (top.0 - flag, top.1 + flag * 0.8);
        canvas.stroke(top, flag_to, thickness * 0.85, ink);
    }
    let serif = rng.gen_range(0.0..2.5);
    if serif > 0.3 {
        canvas.stroke(
            (bottom.0 - serif, bottom.1),
            (bottom.0 + serif, bottom.1),
            thickness * 0.8,
            ink,
        );
    }
    canvas.quantize()
}

fn render_seven(rng: &mut impl Rng) -> Vec<u8> {
    let mut canvas = Canvas::new();
    let dx = rng.gen_range(-1.4..1.4);
    let dy = rng.gen_range(-1.0..1.0);
    let thickness = rng.gen_range(1.5..2.5);
    let ink = rng.gen_range(0.75..1.0);
    let bar_tilt = rng.gen_range(-0.7..0.7);
    let left = (9.0 + dx, 8.5 + dy + bar_tilt);
    let right = (19.0 + dx, 8.5 + dy - bar_tilt);
    canvas.stroke(left, right, thickness, ink);
    let foot = (11.5 + dx + rng.gen_range(-1.0..1.0), 20.0 + dy);
    canvas.stroke(right, foot, thickness, ink);
    // Continuous crossbar length, zero-length meaning none.
    let crossbar = rng.gen_range(0.0..4.0);
    if crossbar > 0.3 {
        let mid_y = 14.0 + dy;
        let mid_x = 13.8 + dx;
        canvas.stroke(
            (mid_x - crossbar, mid_y),
            (mid_x + crossbar * 0.6, mid_y),
            thickness * 0.8,
            ink,
        );
    }
    canvas.quantize()
}

/// Render `n` digits, half 1s and half 7s, in seeded shuffled order.
pub fn generate(n: usize, seed: u64) -> (ImageSet, Vec<u8>) {
    let mut rng = rng_from_seed(seed);
    let mut digits: Vec<u8> = (0..n).map(|i| if i % 2 == 0 { 1 } else { 7 }).collect();
    digits.shuffle(&mut rng);
    let images = digits
        .iter()
        .map(|&d| {
            if d == 1 {
                render_one(&mut rng)
            } else {
                render_seven(&mut rng)
            }
        })
        .collect();
    (
        ImageSet {
            rows: IMAGE_SIDE,
            cols: IMAGE_SIDE,
            images,
        },
        digits,
    )
}

/// Paths of one generated train/test IDX quadruple.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

/// Generate and write a train/test corpus as IDX files under `dir`.
pub fn write_dataset(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<DatasetPaths> {
    std::fs::create_dir_all(dir)?;
    let (train_set, train_labels) = generate(n_train, seed);
    let (test_set, test_labels) = generate(n_test, seed.wrapping_add(1));
    let paths = DatasetPaths {
        train_images: dir.join("train-images-idx3-ubyte"),
        train_labels: dir.join("train-labels-idx1-ubyte"),
        test_images: dir.join("t10k-images-idx3-ubyte"),
        test_labels: dir.join("t10k-labels-idx1-ubyte"),
    };
    std::fs::write(&paths.train_images, write_idx_images(&train_set))?;
    std::fs::write(&paths.train_labels, write_idx_labels(&train_labels))?;
    std::fs::write(&paths.test_images, write_idx_images(&test_set))?;
    std::fs::write(&paths.test_labels, write_idx_labels(&test_labels))?;
    Ok(paths)
}
