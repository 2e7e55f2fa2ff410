//! Seven-segment style digit images, a stand-in for a real digit corpus.
//!
//! Each sample draws its own glyph box, slant, stroke width, brightness and
//! pixel noise, so classes overlap enough that attacks have work to do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use bast_core::data::Dataset;
use bast_core::Tensor;

use crate::idx::IdxImages;

const NUM_CLASSES: usize = 10;

// segment endpoints in glyph-box fractions (x, y), y pointing down
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)), // a: top
    ((1.0, 0.0), (1.0, 0.5)), // b: upper right
    ((1.0, 0.5), (1.0, 1.0)), // c: lower right
    ((0.0, 1.0), (1.0, 1.0)), // d: bottom
    ((0.0, 0.5), (0.0, 1.0)), // e: lower left
    ((0.0, 0.0), (0.0, 0.5)), // f: upper left
    ((0.0, 0.5), (1.0, 0.5)), // g: middle
];

// active segments per digit, bit i = segment i
const DIGITS: [u8; NUM_CLASSES] = [
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110, 0b1101101, 0b1111101, 0b0000111,
    0b1111111, 0b1101111,
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub side: usize,
    pub noise: f64,
    /// Stroke brightness is drawn uniformly from `ink.0..ink.1`.
    pub ink: (f64, f64),
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        SynthConfig {
            count,
            side: 16,
            noise: 0.03,
            ink: (0.3, 0.5),
            seed,
        }
    }
}

/// Renders `cfg.count` digits as 8-bit pixels plus labels.
pub fn generate(cfg: &SynthConfig) -> (IdxImages, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite sigma");
    let side = cfg.side;
    let mut pixels = Vec::with_capacity(cfg.count * side * side);
    let mut labels = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let label = rng.gen_range(0..NUM_CLASSES);
        labels.push(label as u8);
        let image = render(label, side, cfg.ink, &mut rng);
        for v in image {
            let noisy = (v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            pixels.push((noisy * 255.0).round() as u8);
        }
    }
    (
        IdxImages {
            count: cfg.count,
            rows: side,
            cols: side,
            pixels,
        },
        labels,
    )
}

fn render(label: usize, side: usize, ink: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<f64> {
    let u = side as f64 / 16.0;
    let bh = rng.gen_range(9.0..12.0) * u;
    let bw = rng.gen_range(5.0..8.0) * u;
    let ox = rng.gen_range(1.5 * u..(side as f64 - 1.5 * u - bw).max(1.5 * u + 1e-9));
    let oy = rng.gen_range(1.5 * u..(side as f64 - 1.5 * u - bh).max(1.5 * u + 1e-9));
    let slant = rng.gen_range(-0.2..0.2);
    let half = rng.gen_range(0.5..1.0) * u;
    let brightness = rng.gen_range(ink.0..ink.1.max(ink.0 + 1e-9));
    let jitter = 0.35 * u;

    let place = |(fx, fy): (f64, f64), rng: &mut ChaCha8Rng| {
        (
            ox + fx * bw + slant * (0.5 - fy) * bh + rng.gen_range(-jitter..jitter),
            oy + fy * bh + rng.gen_range(-jitter..jitter),
        )
    };
    let strokes: Vec<_> = SEGMENTS
        .iter()
        .enumerate()
        .filter(|(i, _)| DIGITS[label] & (1 << i) != 0)
        .map(|(_, &(p, q))| (place(p, rng), place(q, rng)))
        .collect();

    let mut out = vec![0.0; side * side];
    for i in 0..side {
        for j in 0..side {
            let (px, py) = (j as f64 + 0.5, i as f64 + 0.5);
            let d = strokes
                .iter()
                .map(|&(p, q)| segment_distance((px, py), p, q))
                .fold(f64::INFINITY, f64::min);
            out[i * side + j] = brightness * (half + 0.5 - d).clamp(0.0, 1.0);
        }
    }
    out
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

/// The generated digits as a [`Dataset`], pixels quantised exactly as an
/// IDX round trip would.
pub fn dataset(cfg: &SynthConfig) -> Dataset {
    let (images, labels) = generate(cfg);
    let tensors = (0..images.count)
        .map(|i| {
            let data = images.image(i).iter().map(|&p| p as f64 / 255.0).collect();
            Tensor::new(vec![1, images.rows, images.cols], data).expect("valid extents")
        })
        .collect();
    Dataset::new(tensors, labels.into_iter().map(usize::from).collect(), NUM_CLASSES)
        .expect("nonempty synthetic dataset")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let cfg = SynthConfig::new(50, 3);
        let (a, la) = generate(&cfg);
        let (b, lb) = generate(&cfg);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(la.iter().all(|&l| (l as usize) < NUM_CLASSES));
        assert_eq!(a.pixels.len(), 50 * 256);
    }

    #[test]
    fn digits_differ_in_ink() {
        // an eight covers every segment a one does, and more
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let one: f64 = render(1, 16, (0.6, 1.0), &mut rng).iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let eight: f64 = render(8, 16, (0.6, 1.0), &mut rng).iter().sum();
        assert!(eight > 2.0 * one);
    }
}
