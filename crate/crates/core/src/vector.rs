//! Small helpers for points of `R^d` stored as flat `f64` slices.

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

#[inline]
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `out += scale * a`
#[inline]
pub fn axpy(scale: f64, a: &[f64], out: &mut [f64]) {
    for (o, x) in out.iter_mut().zip(a) {
        *o += scale * x;
    }
}

/// Distance between particle `i` and `j` in a flat `N * dim` position array.
#[inline]
pub fn pair_distance(x: &[f64], dim: usize, i: usize, j: usize) -> f64 {
    let (a, b) = (&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim]);
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// Smallest pairwise distance, `f64::INFINITY` for fewer than two particles.
pub fn min_pair_distance(x: &[f64], dim: usize) -> f64 {
    let n = x.len() / dim;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            best = best.min(pair_distance(x, dim, i, j));
        }
    }
    best
}

/// Smallest pairwise distance attained along the straight segment from `x0` to `x1`.
///
/// In one dimension this catches particles that jump over each other within a step.
pub fn min_pair_distance_on_segment(x0: &[f64], x1: &[f64], dim: usize) -> f64 {
    let n = x0.len() / dim;
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            // relative displacement r(s) = a + s * b, s in [0, 1]
            let mut aa = 0.0;
            let mut ab = 0.0;
            let mut bb = 0.0;
            for k in 0..dim {
                let a = x0[i * dim + k] - x0[j * dim + k];
                let b = (x1[i * dim + k] - x1[j * dim + k]) - a;
                aa += a * a;
                ab += a * b;
                bb += b * b;
            }
            let s = if bb > 0.0 { (-ab / bb).clamp(0.0, 1.0) } else { 0.0 };
            let d2 = (aa + 2.0 * s * ab + s * s * bb).max(0.0);
            best = best.min(d2.sqrt());
        }
    }
    best
}
