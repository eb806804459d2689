//! Seeded 32×32 RGB shapes: each class is a (shape, colour family) pair,
//! jittered in position, size, hue, saturation and brightness over a noisy
//! grey background.

use super::{DataError, Dataset};
use crate::rng::Rng;

pub const SHAPES: [&str; 5] = ["disk", "square", "cross", "triangle", "ring"];
/// Hue ranges in degrees.
pub const COLOR_FAMILIES: [(&str, f32, f32); 3] = [("warm", -20.0, 40.0), ("green", 90.0, 150.0), ("cool", 195.0, 255.0)];

const SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticShapes {
    pub classes: usize,
    pub samples: usize,
    pub seed: u64,
}

impl SyntheticShapes {
    pub fn new(classes: usize, samples: usize, seed: u64) -> Self {
        Self { classes, samples, seed }
    }

    pub fn max_classes() -> usize {
        SHAPES.len() * COLOR_FAMILIES.len()
    }

    /// Class `c` is shape `c % 5` in colour family `c / 5`; sample `i` has
    /// class `i % classes`.
    pub fn class_name(class: usize) -> String {
        format!("{}_{}", COLOR_FAMILIES[class / SHAPES.len()].0, SHAPES[class % SHAPES.len()])
    }

    pub fn generate(&self) -> Result<Dataset, DataError> {
        if self.classes < 2 || self.classes > Self::max_classes() {
            return Err(DataError::Invalid(format!(
                "synthetic classes must be in 2..={}, got {}",
                Self::max_classes(),
                self.classes
            )));
        }
        if self.samples == 0 {
            return Err(DataError::Invalid("synthetic samples must be > 0".into()));
        }
        let mut images = Vec::with_capacity(self.samples * 3 * SIZE * SIZE);
        let mut labels = Vec::with_capacity(self.samples);
        for i in 0..self.samples {
            let class = i % self.classes;
            let mut rng = Rng::derive(self.seed, i as u64);
            images.extend(render(class, &mut rng));
            labels.push(class);
        }
        Dataset::new(images, labels, [3, SIZE, SIZE], self.classes)
    }
}

fn inside(shape: usize, dx: f32, dy: f32, s: f32) -> bool {
    match shape {
        0 => dx * dx + dy * dy < s * s,
        1 => dx.abs().max(dy.abs()) < 0.8 * s,
        2 => (dx.abs() < 0.3 * s && dy.abs() < s) || (dy.abs() < 0.3 * s && dx.abs() < s),
        3 => dy >= -s && dy <= 0.8 * s && dx.abs() <= 0.55 * (dy + s),
        _ => {
            let r2 = dx * dx + dy * dy;
            r2 < s * s && r2 > 0.3 * s * s
        }
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn render(class: usize, rng: &mut Rng) -> Vec<f32> {
    let shape = class % SHAPES.len();
    let (_, h_lo, h_hi) = COLOR_FAMILIES[class / SHAPES.len()];
    let cx = rng.range(11.0, 21.0);
    let cy = rng.range(11.0, 21.0);
    let s = rng.range(6.5, 10.0);
    let color = hsv_to_rgb(rng.range(h_lo, h_hi), rng.range(0.6, 1.0), rng.range(0.7, 1.0));
    let background = rng.range(0.05, 0.4);
    let mut img = vec![0.0f32; 3 * SIZE * SIZE];
    for y in 0..SIZE {
        for x in 0..SIZE {
            let on = inside(shape, x as f32 + 0.5 - cx, y as f32 + 0.5 - cy, s);
            for (c, plane) in img.chunks_mut(SIZE * SIZE).enumerate() {
                let base = if on { color[c] } else { background };
                plane[y * SIZE + x] = (base + 0.04 * rng.normal()).clamp(0.0, 1.0);
            }
        }
    }
    img
}
