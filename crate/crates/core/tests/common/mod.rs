//! Brute-force reference implementations written straight from the
//! definitions. They share no code with the library beyond its data types.

#![allow(dead_code)]

use fabric_motif::anomaly::ImageScores;
use fabric_motif::imaging::GrayImage;

/// Mirror reflection without repeating the edge sample.
pub fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Same-size correlation, `out(r,c) = sum k(i,j) img(r+i-h, c+j-h)`.
pub fn correlate(img: &[f64], w: usize, h: usize, k: &[f64], p: usize) -> Vec<f64> {
    let half = (p / 2) as i64;
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for i in 0..p {
                for j in 0..p {
                    let rr = reflect(r as i64 + i as i64 - half, h);
                    let cc = reflect(c as i64 + j as i64 - half, w);
                    acc += k[i * p + j] * img[rr * w + cc];
                }
            }
            out[r * w + c] = acc;
        }
    }
    out
}

fn entropy_of(cells: &[u64]) -> Option<f64> {
    let total: u64 = cells.iter().sum();
    if total == 0 {
        return None;
    }
    let n = total as f64;
    Some(
        -cells
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let q = c as f64 / n;
                q * q.ln()
            })
            .sum::<f64>(),
    )
}

/// Exhaustive `(s, t)` search: for each candidate the two quadrant
/// entropies are recomputed from scratch (`O(L^4)` overall). Candidates are
/// scanned in lexicographic order; a later one wins only by more than `eps`.
pub fn entropy_threshold(levels: &[usize], means: &[usize], l: usize, eps: f64) -> Option<(usize, usize)> {
    let mut hist = vec![0u64; l * l];
    for (&a, &b) in levels.iter().zip(means) {
        hist[a * l + b] += 1;
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for s in 0..=l {
        for t in 0..=l {
            let mut back = Vec::new();
            let mut fore = Vec::new();
            for i in 0..l {
                for j in 0..l {
                    if i < s && j < t {
                        back.push(hist[i * l + j]);
                    } else if i >= s && j >= t {
                        fore.push(hist[i * l + j]);
                    }
                }
            }
            let (Some(hb), Some(ha)) = (entropy_of(&back), entropy_of(&fore)) else {
                continue;
            };
            let total = hb + ha;
            if best.is_none_or(|(b, _, _)| total > b + eps) {
                best = Some((total, s, t));
            }
        }
    }
    best.map(|(_, s, t)| (s, t))
}

/// Integer mean of the `n x n` mirror-padded window, halves rounded up.
pub fn window_mean(levels: &[usize], w: usize, h: usize, n: usize) -> Vec<usize> {
    let half = (n / 2) as i64;
    let mut out = vec![0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut sum = 0usize;
            for dr in -half..=half {
                for dc in -half..=half {
                    sum += levels[reflect(r as i64 + dr, h) * w + reflect(c as i64 + dc, w)];
                }
            }
            let area = n * n;
            out[r * w + c] = (2 * sum + area) / (2 * area);
        }
    }
    out
}

fn unit_range(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        vec![0.5; v.len()]
    } else {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    }
}

/// Mean absolute difference of min-max scaled copies.
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (unit_range(a), unit_range(b));
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Full scan, lowest index on ties.
pub fn nearest(patch: &[f64], features: &[Vec<f64>]) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (i, f) in features.iter().enumerate() {
        let d = distance(patch, f);
        if d < best.0 {
            best = (d, i);
        }
    }
    best
}

/// Scatters every patch's Gaussian footprint onto the image grid, the
/// opposite loop order from the library's per-pixel gather.
pub fn probability_map(scores: &ImageScores, threshold: f64, sigma: Option<f64>) -> Vec<f64> {
    let (w, h) = (scores.width, scores.height);
    let mut dep = vec![0.0; w * h];
    let mut wt = vec![0.0; w * h];
    for layer in &scores.layers {
        let p = layer.filter_size;
        let sigma = sigma.unwrap_or(p as f64 / 6.0);
        let half = (p / 2) as f64;
        let mut g = vec![0.0; p * p];
        for i in 0..p {
            for j in 0..p {
                let (y, x) = (i as f64 - half, j as f64 - half);
                g[i * p + j] = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
            }
        }
        let total: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= total);
        let s = layer.scale;
        for a in 0..layer.grid_rows {
            for b in 0..layer.grid_cols {
                let d = layer.distances[a * layer.grid_cols + b];
                let (r0, c0) = (a * layer.patch_stride, b * layer.patch_stride);
                for i in 0..p {
                    for j in 0..p {
                        // One layer pixel covers an s x s block of the original.
                        for dy in 0..s {
                            for dx in 0..s {
                                let (y, x) = ((r0 + i) * s + dy, (c0 + j) * s + dx);
                                if y < h && x < w {
                                    wt[y * w + x] += g[i * p + j];
                                    if d > threshold {
                                        dep[y * w + x] += d * g[i * p + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dep.iter()
        .zip(&wt)
        .map(|(&d, &t)| if t > 0.0 { d / t } else { 0.0 })
        .collect()
}

/// Random `T x T` tile repeated over a `width x height` image with a phase
/// offset; `anchor` adds one bright pixel per tile so the repeat distance is
/// unambiguous.
pub fn tiled(tile: &[f64], t: usize, width: usize, height: usize, phase: (usize, usize), anchor: bool) -> GrayImage {
    GrayImage::from_fn(width, height, |r, c| {
        let (i, j) = ((r + phase.0) % t, (c + phase.1) % t);
        if anchor && i == 0 && j == 0 {
            255.0
        } else {
            tile[i * t + j]
        }
    })
    .unwrap()
}
