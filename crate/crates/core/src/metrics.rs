//! Free-response detection metrics.
//!
//! Predictions are matched to ground truth by the dice coefficient of their
//! boxes (a match needs dice >= 0.2). Sweeping the confidence threshold yields
//! the FROC curve of TPR against false positives per image; FAUC integrates it
//! up to one FP per image and CPM averages it at seven FP rates.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::BoundingBox;

/// Minimum dice coefficient for a prediction to match a ground truth.
pub const MATCH_DICE: f64 = 0.2;

/// FP-per-image rates averaged by [`cpm`].
pub const CPM_RATES: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Default operating point of [`tpr_at_fpi`].
pub const DEFAULT_FPI: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(flatten)]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl Prediction {
    pub fn new(bbox: BoundingBox, confidence: f64) -> Self {
        Self { bbox, confidence }
    }
}

/// `2 |a ∩ b| / (|a| + |b|)`.
pub fn dice(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let total = a.area() + b.area();
    if total == 0 {
        return 0.0;
    }
    2.0 * a.intersection_area(b) as f64 / total as f64
}

/// Classification of a single prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub ignored: usize,
}

/// Processing order within an image: descending confidence, then box x, then y.
fn matching_order(preds: &[Prediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&preds[i], &preds[j]);
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.bbox.x.cmp(&b.bbox.x))
            .then(a.bbox.y.cmp(&b.bbox.y))
            .then(i.cmp(&j))
    });
    order
}

/// Greedily classify the predictions of one image, in matching order. The
/// returned outcomes are aligned with the returned order.
///
/// The outcome of each prediction depends only on the predictions before it,
/// so the prefix of the order above any confidence threshold is classified
/// exactly as it would be if the lower predictions were absent.
fn classify_image(preds: &[Prediction], gts: &[BoundingBox]) -> Vec<(usize, Outcome)> {
    let mut claimed = vec![false; gts.len()];
    matching_order(preds)
        .into_iter()
        .map(|i| {
            let p = &preds[i].bbox;
            let mut best: Option<(usize, f64)> = None;
            let mut matched_any = false;
            for (g, gt) in gts.iter().enumerate() {
                let d = dice(p, gt);
                if d < MATCH_DICE {
                    continue;
                }
                matched_any = true;
                if gt.evaluable && !claimed[g] && best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((g, d));
                }
            }
            let outcome = match best {
                Some((g, _)) => {
                    claimed[g] = true;
                    Outcome::TruePositive
                }
                None if matched_any => Outcome::Ignored,
                None => Outcome::FalsePositive,
            };
            (i, outcome)
        })
        .collect()
}

fn tally<'a>(outcomes: impl Iterator<Item = &'a Outcome>) -> MatchCounts {
    outcomes.fold(MatchCounts::default(), |mut c, o| {
        match o {
            Outcome::TruePositive => c.tp += 1,
            Outcome::FalsePositive => c.fp += 1,
            Outcome::Ignored => c.ignored += 1,
        }
        c
    })
}

/// Counts over all images of the predictions with confidence strictly above
/// `threshold`.
pub fn match_at_threshold(
    preds: &[Vec<Prediction>],
    gts: &[Vec<BoundingBox>],
    threshold: f64,
) -> MatchCounts {
    let mut total = MatchCounts::default();
    for (i, image_preds) in preds.iter().enumerate() {
        let kept: Vec<Prediction> = image_preds
            .iter()
            .copied()
            .filter(|p| p.confidence > threshold)
            .collect();
        let empty = Vec::new();
        let image_gts = gts.get(i).unwrap_or(&empty);
        let c = tally(classify_image(&kept, image_gts).iter().map(|(_, o)| o));
        total.tp += c.tp;
        total.fp += c.fp;
        total.ignored += c.ignored;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    pub threshold: f64,
    pub fp_per_image: f64,
    pub tpr: f64,
}

/// FROC operating points, ordered by decreasing threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FrocCurve {
    pub points: Vec<FrocPoint>,
    pub n_images: usize,
    pub n_evaluable_gt: usize,
}

impl FrocCurve {
    /// Curve from raw `(fp_per_image, tpr)` vertices, for analysis of curves
    /// produced elsewhere. Thresholds are filled with a decreasing index.
    pub fn from_vertices(vertices: &[(f64, f64)]) -> Result<Self> {
        let points: Vec<FrocPoint> = vertices
            .iter()
            .enumerate()
            .map(|(i, &(fp, tpr))| FrocPoint {
                threshold: (vertices.len() - i) as f64,
                fp_per_image: fp,
                tpr,
            })
            .collect();
        let curve = Self {
            points,
            n_images: 1,
            n_evaluable_gt: 1,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::param("FROC curve has no points"));
        }
        for w in self.points.windows(2) {
            if w[1].fp_per_image < w[0].fp_per_image || w[1].tpr < w[0].tpr {
                return Err(Error::param("FROC curve must be non-decreasing"));
            }
        }
        for p in &self.points {
            if !(p.fp_per_image >= 0.0 && (0.0..=1.0).contains(&p.tpr)) {
                return Err(Error::param("FROC point out of range"));
            }
        }
        Ok(())
    }

    /// TPR at `fpi`, linearly interpolated between vertices. Beyond the last
    /// vertex the final TPR is held; where several vertices share an FP rate
    /// the highest TPR is used.
    pub fn tpr_at(&self, fpi: f64) -> f64 {
        let mut below = (0.0, 0.0);
        for p in &self.points {
            if p.fp_per_image <= fpi {
                below = (p.fp_per_image, p.tpr);
            } else {
                let (x0, y0) = below;
                let (x1, y1) = (p.fp_per_image, p.tpr);
                return y0 + (y1 - y0) * (fpi - x0) / (x1 - x0);
            }
        }
        below.1
    }

    /// CSV with header `threshold,fp_per_image,tpr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fp_per_image,tpr\n");
        for p in &self.points {
            let t = if p.threshold.is_infinite() {
                "inf".to_string()
            } else {
                format!("{}", p.threshold)
            };
            let _ = writeln!(out, "{t},{},{}", p.fp_per_image, p.tpr);
        }
        out
    }

    pub fn from_csv(text: &str, n_images: usize, n_evaluable_gt: usize) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("threshold,fp_per_image,tpr") {
            return Err(Error::DataShape("FROC CSV header mismatch".into()));
        }
        let mut points = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(Error::DataShape(format!("bad FROC row {line:?}")));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::DataShape(format!("bad number {s:?}")))
            };
            points.push(FrocPoint {
                threshold: num(cols[0])?,
                fp_per_image: num(cols[1])?,
                tpr: num(cols[2])?,
            });
        }
        let curve = Self {
            points,
            n_images,
            n_evaluable_gt,
        };
        curve.validate()?;
        Ok(curve)
    }

    /// Standalone SVG plot, FP per image on the horizontal axis.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (480.0, 360.0, 48.0);
        let x_max = self
            .points
            .last()
            .map(|p| p.fp_per_image)
            .unwrap_or(0.0)
            .max(1.0);
        let sx = |x: f64| pad + (w - 2.0 * pad) * x / x_max;
        let sy = |y: f64| h - pad - (h - 2.0 * pad) * y;
        let mut path = String::new();
        for (i, p) in self.points.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            let _ = write!(path, "{cmd}{:.2},{:.2} ", sx(p.fp_per_image), sy(p.tpr));
        }
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<line x1="{pad}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#,
            y0 = h - pad,
            x1 = w - pad
        );
        let _ = writeln!(
            svg,
            r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{y0}" stroke="black"/>"#,
            y0 = h - pad
        );
        for k in 0..=4 {
            let x = x_max * k as f64 / 4.0;
            let y = k as f64 / 4.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{x:.2}</text>"#,
                sx(x),
                h - pad + 16.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{y:.2}</text>"#,
                pad - 6.0,
                sy(y) + 4.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">FPs per image</text>"#,
            w / 2.0,
            h - 8.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">TPR</text>"#,
            h / 2.0,
            h / 2.0
        );
        let _ = writeln!(
            svg,
            r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
            path.trim_end()
        );
        svg.push_str("</svg>\n");
        svg
    }
}

/// Build the FROC curve. Thresholds are the distinct confidences in
/// decreasing order, each keeping predictions with `confidence >= t`, after a
/// leading `t = +inf` point at the origin.
pub fn froc(
    preds: &[Vec<Prediction>],
    gts: &[Vec<BoundingBox>],
    n_images: usize,
) -> Result<FrocCurve> {
    if n_images == 0 {
        return Err(Error::param("FROC needs at least one image"));
    }
    let n_gt = gts.iter().flatten().filter(|b| b.evaluable).count();
    if n_gt == 0 {
        return Err(Error::MetricUndefined(
            "no evaluable ground truth; TPR is undefined".into(),
        ));
    }
    let empty = Vec::new();
    let mut scored: Vec<(f64, Outcome)> = Vec::new();
    for (i, image_preds) in preds.iter().enumerate() {
        let image_gts = gts.get(i).unwrap_or(&empty);
        for (idx, outcome) in classify_image(image_preds, image_gts) {
            scored.push((image_preds[idx].confidence, outcome));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![FrocPoint {
        threshold: f64::INFINITY,
        fp_per_image: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut k = 0;
    while k < scored.len() {
        let t = scored[k].0;
        while k < scored.len() && scored[k].0.total_cmp(&t) == Ordering::Equal {
            match scored[k].1 {
                Outcome::TruePositive => tp += 1,
                Outcome::FalsePositive => fp += 1,
                Outcome::Ignored => {}
            }
            k += 1;
        }
        points.push(FrocPoint {
            threshold: t,
            fp_per_image: fp as f64 / n_images as f64,
            tpr: tp as f64 / n_gt as f64,
        });
    }
    Ok(FrocCurve {
        points,
        n_images,
        n_evaluable_gt: n_gt,
    })
}

/// Area under the interpolated curve over `fp_per_image` in `[0, 1]`.
pub fn fauc(curve: &FrocCurve) -> f64 {
    area_up_to(curve, 1.0)
}

/// Area under the interpolated curve over `[0, limit]`, final TPR held.
pub fn area_up_to(curve: &FrocCurve, limit: f64) -> f64 {
    let mut area = 0.0;
    let (mut x_prev, mut y_prev) = (0.0, 0.0);
    for p in &curve.points {
        if p.fp_per_image >= limit {
            let y = curve.tpr_at(limit);
            area += 0.5 * (y_prev + y) * (limit - x_prev);
            return area.clamp(0.0, limit);
        }
        area += 0.5 * (y_prev + p.tpr) * (p.fp_per_image - x_prev);
        x_prev = p.fp_per_image;
        y_prev = p.tpr;
    }
    area += y_prev * (limit - x_prev);
    area.clamp(0.0, limit)
}

/// Mean interpolated TPR at 1/8, 1/4, 1/2, 1, 2, 4 and 8 FPs per image.
pub fn cpm(curve: &FrocCurve) -> f64 {
    CPM_RATES.iter().map(|&r| curve.tpr_at(r)).sum::<f64>() / CPM_RATES.len() as f64
}

pub fn tpr_at_fpi(curve: &FrocCurve, fpi: f64) -> f64 {
    curve.tpr_at(fpi.max(0.0))
}

/// Headline numbers of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub fauc: f64,
    pub cpm: f64,
    #[serde(rename = "tpr_at_fpi_0.2")]
    pub tpr_at_fpi_02: f64,
    pub n_images: usize,
    pub n_gt: usize,
}

impl MetricSummary {
    pub fn of(curve: &FrocCurve) -> Self {
        Self {
            fauc: fauc(curve),
            cpm: cpm(curve),
            tpr_at_fpi_02: tpr_at_fpi(curve, DEFAULT_FPI),
            n_images: curve.n_images,
            n_gt: curve.n_evaluable_gt,
        }
    }
}
