//! Reference implementations used only by tests. They share no code with
//! the library and favour obviousness over speed.

#![allow(dead_code)]

use mdca::{DictionaryLayer, ImageTensor};

/// Transposed strided convolution in f64, written directly from the
/// definition: every code unit paints its kernel at `unit * stride - pad`.
pub fn synthesize_f64(code: &ImageTensor, d: &DictionaryLayer, weights: &[f64]) -> Vec<f64> {
    let (kh, kw, c, s) = (d.kernel_h(), d.kernel_w(), d.in_channels(), d.stride());
    let (ph, pw) = ((kh - s) / 2, (kw - s) / 2);
    let (h, w) = (code.height() * s, code.width() * s);
    let mut out = vec![0.0f64; h * w * c];
    for oi in 0..code.height() {
        for oj in 0..code.width() {
            for f in 0..d.num_features() {
                let a = code.get(oi, oj, f) as f64;
                if a == 0.0 {
                    continue;
                }
                for p in 0..kh {
                    for q in 0..kw {
                        let y = (oi * s + p) as isize - ph as isize;
                        let x = (oj * s + q) as isize - pw as isize;
                        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                            continue;
                        }
                        for ch in 0..c {
                            let wi = f * kh * kw * c + (p * kw + q) * c + ch;
                            out[(y as usize * w + x as usize) * c + ch] += a * weights[wi];
                        }
                    }
                }
            }
        }
    }
    out
}

/// `½‖x - Φa‖²` with the dictionary weights supplied explicitly.
pub fn half_sq_error_f64(x: &ImageTensor, code: &ImageTensor, d: &DictionaryLayer, weights: &[f64]) -> f64 {
    let xhat = synthesize_f64(code, d, weights);
    0.5 * x
        .data()
        .iter()
        .zip(&xhat)
        .map(|(&a, b)| (a as f64 - b).powi(2))
        .sum::<f64>()
}

/// Minimises `½‖x - Da‖² + λ Σ a` over `a ≥ 0` by proximal gradient
/// descent. `atoms[j]` is column `j` of `D`. Runs until the update is
/// below `tol` or `max_iter` is reached.
pub fn nonnegative_ista(atoms: &[Vec<f64>], x: &[f64], lambda: f64, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = atoms.len();
    // Lipschitz constant of the smooth part via power iteration on DᵀD.
    let mut v = vec![1.0f64; n];
    let mut lip = 0.0;
    for _ in 0..500 {
        let dv = apply(atoms, &v, x.len());
        let w = apply_t(atoms, &dv);
        let norm = w.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lip = norm / v.iter().map(|t| t * t).sum::<f64>().sqrt();
        v = w.iter().map(|t| t / norm).collect();
    }
    let step = 1.0 / (lip * 1.01);
    let mut a = vec![0.0f64; n];
    for _ in 0..max_iter {
        let r: Vec<f64> = apply(atoms, &a, x.len()).iter().zip(x).map(|(p, q)| q - p).collect();
        let g = apply_t(atoms, &r);
        let mut delta = 0.0f64;
        for j in 0..n {
            let next = (a[j] + step * g[j] - step * lambda).max(0.0);
            delta = delta.max((next - a[j]).abs());
            a[j] = next;
        }
        if delta < tol {
            break;
        }
    }
    a
}

fn apply(atoms: &[Vec<f64>], a: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for (col, &coef) in atoms.iter().zip(a) {
        for (o, c) in out.iter_mut().zip(col) {
            *o += coef * c;
        }
    }
    out
}

fn apply_t(atoms: &[Vec<f64>], r: &[f64]) -> Vec<f64> {
    atoms
        .iter()
        .map(|col| col.iter().zip(r).map(|(c, v)| c * v).sum())
        .collect()
}

pub fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}
