//! Reference implementations written with plain nested loops over
//! `Vec<Vec<f64>>`. They share no numeric code with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regiongraph::data::VideoRecord;
use regiongraph::linalg::Matrix;
use regiongraph::model::{GcnModel, NormParams, VideoGraphInput};
use regiongraph::regions::{BoundingBox, FeatureVolume, RegionProposal};
use regiongraph::train::Label;

pub type Grid = Vec<Vec<f64>>;

pub fn grid(m: &Matrix) -> Grid {
    (0..m.rows()).map(|i| (0..m.cols()).map(|j| m.get(i, j)).collect()).collect()
}

pub fn mm(a: &Grid, b: &Grid) -> Grid {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Grid) -> Grid {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn add(a: &Grid, b: &Grid) -> Grid {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn norm_relu(z: &Grid, norm: &NormParams, eps: f64) -> Grid {
    z.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(j, v)| ((v - mean) / (var + eps).sqrt() * norm.gain[j] + norm.bias[j]).max(0.0))
                .collect()
        })
        .collect()
}

/// Row softmax of `(X wᵀ)(X w'ᵀ)ᵀ`, entry by entry.
pub fn similarity(x: &Grid, w: &Grid, w_prime: &Grid) -> Grid {
    let n = x.len();
    let d = x[0].len();
    let embed = |m: &Grid, v: &[f64]| -> Vec<f64> {
        (0..m.len()).map(|r| (0..d).map(|c| m[r][c] * v[c]).sum()).collect()
    };
    let left: Vec<Vec<f64>> = x.iter().map(|v| embed(w, v)).collect();
    let right: Vec<Vec<f64>> = x.iter().map(|v| embed(w_prime, v)).collect();
    (0..n)
        .map(|i| {
            let f: Vec<f64> = (0..n)
                .map(|j| left[i].iter().zip(&right[j]).map(|(a, b)| a * b).sum())
                .collect();
            let top = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = f.iter().map(|v| (v - top).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| v / s).collect()
        })
        .collect()
}

pub fn gcn(g: &Grid, x: &Grid, w: &Grid) -> Grid {
    add(&mm(&mm(g, x), w), x)
}

pub fn gcn_multi(gs: &[Grid], x: &Grid, ws: &[Grid]) -> Grid {
    let mut z = x.clone();
    for (g, w) in gs.iter().zip(ws) {
        z = add(&z, &mm(&mm(g, x), w));
    }
    z
}

pub fn nonlocal(x: &Grid, w: &Grid, w_prime: &Grid, g_weight: &Grid, out: &Grid) -> Grid {
    let g = similarity(x, w, w_prime);
    add(&mm(&mm(&g, &mm(x, &transpose(g_weight))), out), x)
}

/// Whole-model logits from the fields of `model`, with the three adjacencies
/// taken from `input`.
pub fn forward(model: &GcnModel, input: &VideoGraphInput) -> Vec<f64> {
    let cfg = &model.config;
    let x = grid(&input.node_features);
    let sim = grid(&input.g_sim.m);
    let front = grid(&input.g_front.m);
    let back = grid(&input.g_back.m);
    let finish = |z: Grid, l: usize, norm: &NormParams| {
        if l + 1 < cfg.layers || cfg.norm_last_layer {
            norm_relu(&z, norm, cfg.eps)
        } else {
            z
        }
    };

    let mut a = x.clone();
    for l in 0..cfg.layers {
        let w = grid(&model.sim_weights[l]);
        let z = if l == 0 {
            let y = mm(&x, &transpose(&grid(&model.g_weight)));
            add(&mm(&mm(&sim, &y), &w), &x)
        } else {
            gcn(&sim, &a, &w)
        };
        a = finish(z, l, &model.sim_norms[l]);
    }
    let mut b = x.clone();
    for l in 0..cfg.layers {
        let st = &model.st_weights[l];
        let z = gcn_multi(&[front.clone(), back.clone()], &b, &[grid(&st.front), grid(&st.back)]);
        b = finish(z, l, &model.st_norms[l]);
    }

    let n = x.len() as f64;
    let mut pooled: Vec<f64> = (0..cfg.d)
        .map(|j| (0..x.len()).map(|i| a[i][j] + b[i][j]).sum::<f64>() / n)
        .collect();
    pooled.extend_from_slice(&input.global_feature);
    let cls = grid(&model.classifier);
    (0..cfg.classes)
        .map(|c| {
            model.classifier_bias[c] + pooled.iter().enumerate().map(|(k, p)| p * cls[k][c]).sum::<f64>()
        })
        .collect()
}

fn tent(u: f64) -> f64 {
    (1.0 - u.abs()).max(0.0)
}

/// Bilinear value at `(px, py)` as a tent-weighted sum over every cell of the
/// frame. Cell centers sit at half-integers; points clamp to the outermost
/// centers.
pub fn bilinear_sum(v: &FeatureVolume, t: usize, px: f64, py: f64) -> Vec<f64> {
    let (_, h, w, c) = v.dims();
    let fx = (px - 0.5).max(0.0).min((w - 1) as f64);
    let fy = (py - 0.5).max(0.0).min((h - 1) as f64);
    let mut out = vec![0.0; c];
    for y in 0..h {
        for x in 0..w {
            let k = tent(fx - x as f64) * tent(fy - y as f64);
            if k > 0.0 {
                for (o, val) in out.iter_mut().zip(v.cell(t, y, x)) {
                    *o += k * val;
                }
            }
        }
    }
    out
}

/// `bins x bins` cells, `side x side` samples each, cell means then a
/// channelwise max.
pub fn roi_align(v: &FeatureVolume, t: usize, b: &BoundingBox, bins: usize, side: usize) -> Vec<f64> {
    let (_, h, w, c) = v.dims();
    let clamp = |u: f64, hi: usize| u.max(0.0).min(hi as f64);
    let (x1, x2) = (clamp(b.x1, w), clamp(b.x2, w));
    let (y1, y2) = (clamp(b.y1, h), clamp(b.y2, h));
    let mut best = vec![f64::NEG_INFINITY; c];
    for by in 0..bins {
        for bx in 0..bins {
            let mut acc = vec![0.0; c];
            for sy in 0..side {
                for sx in 0..side {
                    let u = (bx * side + sx) as f64 + 0.5;
                    let v_ = (by * side + sy) as f64 + 0.5;
                    let px = x1 + (x2 - x1) * u / (bins * side) as f64;
                    let py = y1 + (y2 - y1) * v_ / (bins * side) as f64;
                    for (a, s) in acc.iter_mut().zip(bilinear_sum(v, t, px, py)) {
                        *a += s;
                    }
                }
            }
            for (m, a) in best.iter_mut().zip(acc) {
                *m = m.max(a / (side * side) as f64);
            }
        }
    }
    best
}

/// Central difference of `f` at `x` along every coordinate.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let plus = f(&probe);
            probe[i] = x[i] - h;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn grid_diff(a: &Grid, b: &Matrix) -> f64 {
    let flat: Vec<f64> = a.iter().flatten().copied().collect();
    max_abs_diff(&flat, b.data())
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Row-stochastic with strictly positive entries.
pub fn random_stochastic(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut m = Matrix::from_fn(n, n, |_, _| rng.random_range(0.01..1.0));
    for r in 0..n {
        let s: f64 = m.row(r).iter().sum();
        m.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    m
}

/// A video with a random frame count, 1-6 proposals per frame (some frames
/// possibly empty), random boxes on a 64x64 canvas, and random features.
pub fn random_video(seed: u64, d: usize) -> VideoRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = rng.random_range(1..7);
    let mut proposals = Vec::new();
    for t in 0..frames {
        let count = if rng.random_bool(0.1) { 0 } else { rng.random_range(1..7) };
        for k in 0..count {
            let x = rng.random_range(0.0..48.0);
            let y = rng.random_range(0.0..48.0);
            let (w, h) = (rng.random_range(2.0..24.0), rng.random_range(2.0..24.0));
            proposals.push(RegionProposal {
                frame: t,
                bbox: BoundingBox::new(x, y, x + w, y + h).unwrap(),
                feature: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                source_id: format!("f{t}k{k}"),
            });
        }
    }
    if proposals.is_empty() {
        proposals.push(RegionProposal {
            frame: 0,
            bbox: BoundingBox::new(0.0, 0.0, 8.0, 8.0).unwrap(),
            feature: vec![0.5; d],
            source_id: "only".into(),
        });
    }
    // Shuffle so that input order is not frame-major.
    for i in (1..proposals.len()).rev() {
        let j = rng.random_range(0..=i);
        proposals.swap(i, j);
    }
    VideoRecord {
        video_id: format!("rand{seed}"),
        proposals,
        global_feature: Some((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()),
        label: Label::Class(0),
        volume: None,
    }
}
