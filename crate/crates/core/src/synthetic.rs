//! Procedural image corpora for desk-scale experiments.
//!
//! * [`face_like`]: a ring outline with two eyes above a wider mouth, with
//!   small random jitter. Vertically asymmetric, so inversion matters.
//! * [`texture_field`]: sums of oriented sinusoidal gratings.
//! * [`bar_image`]: sparse sums of a fixed set of oriented bar patches,
//!   aligned to a stride grid, for dictionary-recovery checks.
//!
//! Generated samples lie in `[0, 1]`, the same range as decoded files.

use std::f32::consts::PI;

use rand::Rng;

use crate::tensor::ImageTensor;

fn smoothstep_band(d: f32, half_width: f32) -> f32 {
    // 1 inside the band, linear falloff over one pixel
    (half_width + 0.5 - d).clamp(0.0, 1.0)
}

fn segment_distance(px: f32, py: f32, ax: f32, ay: f32, bx: f32, by: f32) -> f32 {
    let (vx, vy) = (bx - ax, by - ay);
    let len2 = vx * vx + vy * vy;
    let t = if len2 > 0.0 {
        (((px - ax) * vx + (py - ay) * vy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * vx, ay + t * vy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Face-like pattern on a `size x size` canvas.
pub fn face_like<R: Rng + ?Sized>(rng: &mut R, size: usize) -> ImageTensor {
    let s = size as f32 / 32.0;
    let cx = size as f32 / 2.0 - 0.5 + rng.gen_range(-1.0..1.0) * s;
    let cy = size as f32 / 2.0 - 0.5 + rng.gen_range(-1.0..1.0) * s;
    let radius = rng.gen_range(10.5..12.0) * s;
    let ring_w = 0.9 * s;
    let eye_dx = rng.gen_range(4.0..5.0) * s;
    let eye_y = cy - rng.gen_range(3.5..4.5) * s;
    let eye_half = 1.4 * s;
    let mouth_y = cy + rng.gen_range(4.5..5.5) * s;
    let mouth_half = rng.gen_range(3.5..4.5) * s;
    let ring_amp = rng.gen_range(0.7..1.0);
    let feat_amp = rng.gen_range(0.7..1.0);
    let noise = 0.03;
    ImageTensor::from_fn(size, size, 1, |i, j, _| {
        let (y, x) = (i as f32, j as f32);
        let r = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
        let ring = smoothstep_band((r - radius).abs(), ring_w);
        let left = segment_distance(x, y, cx - eye_dx - eye_half, eye_y, cx - eye_dx + eye_half, eye_y);
        let right = segment_distance(x, y, cx + eye_dx - eye_half, eye_y, cx + eye_dx + eye_half, eye_y);
        let mouth = segment_distance(x, y, cx - mouth_half, mouth_y, cx + mouth_half, mouth_y);
        let eyes = smoothstep_band(left.min(right), 0.9 * s);
        let mouth = smoothstep_band(mouth, 0.7 * s);
        let v = ring_amp * ring + feat_amp * eyes.max(mouth);
        (v.min(1.0) + noise * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0)
    })
}

/// One or two superimposed oriented gratings.
pub fn texture_field<R: Rng + ?Sized>(rng: &mut R, size: usize) -> ImageTensor {
    let n = rng.gen_range(1..=2);
    let comps: Vec<(f32, f32, f32, f32)> = (0..n)
        .map(|_| {
            let theta = rng.gen_range(0.0..PI);
            let period = rng.gen_range(4.0..9.0) * size as f32 / 32.0;
            let phase = rng.gen_range(0.0..2.0 * PI);
            let amp = rng.gen_range(0.6..1.0) / n as f32;
            (theta, period, phase, amp)
        })
        .collect();
    ImageTensor::from_fn(size, size, 1, |i, j, _| {
        let (y, x) = (i as f32, j as f32);
        let mut v = 0.0;
        for &(theta, period, phase, amp) in &comps {
            let proj = x * theta.cos() + y * theta.sin();
            v += amp * (2.0 * PI * proj / period + phase).sin();
        }
        (0.5 + 0.5 * v + 0.03 * rng.gen_range(-1.0..1.0)).clamp(0.0, 1.0)
    })
}

/// The generating bars of [`bar_image`]: horizontal, vertical and both
/// diagonals on a `kernel x kernel` patch, each with unit L2 norm.
pub fn bar_generators(kernel: usize) -> Vec<Vec<f32>> {
    let c = (kernel as f32 - 1.0) / 2.0;
    let k = kernel as f32;
    let ends = [
        ((0.0, c), (k - 1.0, c)),
        ((c, 0.0), (c, k - 1.0)),
        ((0.0, 0.0), (k - 1.0, k - 1.0)),
        ((0.0, k - 1.0), (k - 1.0, 0.0)),
    ];
    ends.iter()
        .map(|&((ax, ay), (bx, by))| {
            let mut v: Vec<f32> = (0..kernel * kernel)
                .map(|idx| {
                    let (y, x) = ((idx / kernel) as f32, (idx % kernel) as f32);
                    smoothstep_band(segment_distance(x, y, ax, ay, bx, by), 0.6)
                })
                .collect();
            let norm = v.iter().map(|a| a * a).sum::<f32>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            v
        })
        .collect()
}

/// Sparse superposition of generator bars placed on the windows of a
/// `kernel`/`stride` layer that lie fully inside the canvas.
pub fn bar_image<R: Rng + ?Sized>(
    rng: &mut R,
    size: usize,
    kernel: usize,
    stride: usize,
) -> ImageTensor {
    let gens = bar_generators(kernel);
    let pad = (kernel - stride) / 2;
    let slots: Vec<usize> = (0..size / stride)
        .filter(|&i| i * stride >= pad && i * stride - pad + kernel <= size)
        .map(|i| i * stride - pad)
        .collect();
    let mut img = ImageTensor::zeros(size, size, 1);
    let count = rng.gen_range(1..=2);
    for _ in 0..count {
        let g = &gens[rng.gen_range(0..gens.len())];
        let oy = slots[rng.gen_range(0..slots.len())];
        let ox = slots[rng.gen_range(0..slots.len())];
        let amp = rng.gen_range(1.0..2.0);
        for p in 0..kernel {
            for q in 0..kernel {
                let v = img.get(oy + p, ox + q, 0) + amp * g[p * kernel + q];
                img.set(oy + p, ox + q, 0, v);
            }
        }
    }
    img
}
