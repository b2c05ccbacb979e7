//! Reference implementations used by the integration and acceptance tests.
//! Each one recomputes its quantity from scratch, the slow way.
#![allow(dead_code)]

use goldisim::bayesopt::{GpState, se_kernel};
use goldisim::metrics::{Prediction, CPM_RATES, MATCH_DICE};
use goldisim::perlin::{gradient_noise, octave_seed, FractalNoiseParams};
use goldisim::BoundingBox;
use nalgebra::{DMatrix, DVector};

/// Fractal field as an explicit sum of independently generated octaves.
pub fn octave_sum(width: usize, height: usize, p: &FractalNoiseParams) -> Vec<f64> {
    let mut acc = vec![0.0; width * height];
    for i in 0..p.octaves {
        let periods = p.octave_periods(i);
        let g = gradient_noise(width, height, periods, periods, octave_seed(p.seed, i)).unwrap();
        let amp = p.persistence.powi(i as i32);
        for (a, v) in acc.iter_mut().zip(g.values()) {
            *a += amp * v;
        }
    }
    acc
}

fn box_dice(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w).saturating_sub(a.x.max(b.x));
    let iy = (a.y + a.h).min(b.y + b.h).saturating_sub(a.y.max(b.y));
    let sum = a.w * a.h + b.w * b.h;
    if sum == 0 {
        0.0
    } else {
        2.0 * (ix * iy) as f64 / sum as f64
    }
}

/// `(tp, fp)` of the predictions with confidence `>= t`, matched from scratch.
pub fn counts_at(preds: &[Vec<Prediction>], gts: &[Vec<BoundingBox>], t: f64) -> (usize, usize) {
    let (mut tp, mut fp) = (0, 0);
    for (img, ps) in preds.iter().enumerate() {
        let gt = &gts[img];
        let mut kept: Vec<(usize, &Prediction)> =
            ps.iter().enumerate().filter(|(_, p)| p.confidence >= t).collect();
        kept.sort_by(|(i, a), (j, b)| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap()
                .then(a.bbox.x.cmp(&b.bbox.x))
                .then(a.bbox.y.cmp(&b.bbox.y))
                .then(i.cmp(j))
        });
        let mut taken = vec![false; gt.len()];
        for (_, p) in kept {
            let overlaps: Vec<(usize, f64)> = gt
                .iter()
                .enumerate()
                .map(|(g, b)| (g, box_dice(&p.bbox, b)))
                .filter(|&(_, d)| d >= MATCH_DICE)
                .collect();
            let mut pick: Option<(usize, f64)> = None;
            for &(g, d) in &overlaps {
                if gt[g].evaluable && !taken[g] && pick.map_or(true, |(_, pd)| d > pd) {
                    pick = Some((g, d));
                }
            }
            match pick {
                Some((g, _)) => {
                    taken[g] = true;
                    tp += 1;
                }
                None if overlaps.is_empty() => fp += 1,
                None => {}
            }
        }
    }
    (tp, fp)
}

/// FROC vertices `(fp_per_image, tpr)`: the origin, then one vertex per
/// distinct confidence in decreasing order.
pub fn froc_vertices(preds: &[Vec<Prediction>], gts: &[Vec<BoundingBox>]) -> Vec<(f64, f64)> {
    let n_img = preds.len() as f64;
    let n_gt = gts.iter().flatten().filter(|b| b.evaluable).count() as f64;
    let mut ts: Vec<f64> = preds.iter().flatten().map(|p| p.confidence).collect();
    ts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ts.dedup();
    let mut out = vec![(0.0, 0.0)];
    for t in ts {
        let (tp, fp) = counts_at(preds, gts, t);
        out.push((fp as f64 / n_img, tp as f64 / n_gt));
    }
    out
}

/// Piecewise-linear TPR at `x`; the highest TPR at an exact vertex hit,
/// the last TPR beyond the final vertex.
pub fn interp(v: &[(f64, f64)], x: f64) -> f64 {
    if let Some(&(_, y)) = v.iter().rev().find(|(vx, _)| *vx == x) {
        return y;
    }
    match v.iter().position(|(vx, _)| *vx > x) {
        None => v.last().unwrap().1,
        Some(0) => 0.0,
        Some(k) => {
            let (x0, y0) = v[k - 1];
            let (x1, y1) = v[k];
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    }
}

/// Trapezoid area on `[0, 1]`: the curve is cut at `x = 1` and the final TPR
/// extended to `x = 1`.
pub fn area_to_one(v: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = v.iter().copied().filter(|(x, _)| *x < 1.0).collect();
    pts.push((1.0, interp(v, 1.0)));
    pts.windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum()
}

pub fn cpm_of(v: &[(f64, f64)]) -> f64 {
    CPM_RATES.iter().map(|&r| interp(v, r)).sum::<f64>() / 7.0
}

/// GP posterior by a dense LU solve.
pub fn dense_posterior(state: &GpState, q: &[f64]) -> (f64, f64) {
    let n = state.observations.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        se_kernel(&state.observations[i].0, &state.observations[j].0, state.gamma)
            + if i == j { state.noise_jitter } else { 0.0 }
    });
    let mean = state.observations.iter().map(|o| o.1).sum::<f64>() / n as f64;
    let y = DVector::from_fn(n, |i, _| state.observations[i].1 - mean);
    let ks = DVector::from_fn(n, |i, _| se_kernel(&state.observations[i].0, q, state.gamma));
    let lu = k.lu();
    let alpha = lu.solve(&y).unwrap();
    let beta = lu.solve(&ks).unwrap();
    (mean + ks.dot(&alpha), 1.0 - ks.dot(&beta))
}
