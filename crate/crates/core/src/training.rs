//! Toy sliding-window detector, its logistic training objective, optimizers
//! and the flatness / forgetting diagnostics.
//!
//! The detector scores square windows with `logistic(w . f + b)` over seven
//! hand-crafted features. It stands in for a convolutional detector so that
//! every curriculum mechanism can be exercised deterministically.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compositor::AnnotatedDataset;
use crate::error::{Error, Result};
use crate::linalg::spd_solve;
use crate::metrics::{dice, fauc, froc, Prediction};
use crate::raster::{BoundingBox, GrayImage};
use crate::seed::{self, mix};

pub const FEATURE_LEN: usize = 7;
pub const FEATURE_VERSION: u32 = 1;
/// Window sides at a 256-pixel canvas.
pub const WINDOW_SIDES: [usize; 3] = [24, 40, 64];
pub const SCORE_FLOOR: f64 = 0.05;
pub const NMS_OVERLAP: f64 = 0.3;
pub const POSITIVE_DICE: f64 = 0.5;
pub const NEGATIVE_DICE: f64 = 0.1;
pub const NEGATIVES_PER_POSITIVE: usize = 3;
pub const MAX_POSITIVES_PER_BOX: usize = 4;

pub type Features = [f64; FEATURE_LEN];

/// Summed-area tables of intensities and squared intensities.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sum: Vec<u64>,
    sq: Vec<u64>,
}

impl IntegralImage {
    pub fn new(image: &GrayImage) -> Self {
        let (w, h) = (image.width(), image.height());
        let stride = w + 1;
        let mut sum = vec![0u64; stride * (h + 1)];
        let mut sq = vec![0u64; stride * (h + 1)];
        for y in 0..h {
            let (mut row, mut row_sq) = (0u64, 0u64);
            for x in 0..w {
                let v = image.get(x, y) as u64;
                row += v;
                row_sq += v * v;
                sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row;
                sq[(y + 1) * stride + x + 1] = sq[y * stride + x + 1] + row_sq;
            }
        }
        Self {
            width: w,
            height: h,
            sum,
            sq,
        }
    }

    /// Sum and squared sum over `[x0, x1) x [y0, y1)`.
    pub fn rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> (u64, u64) {
        let s = self.width + 1;
        let at = |t: &[u64], x: usize, y: usize| t[y * s + x];
        let f = |t: &[u64]| at(t, x1, y1) + at(t, x0, y0) - at(t, x1, y0) - at(t, x0, y1);
        (f(&self.sum), f(&self.sq))
    }

    fn features(&self, b: &BoundingBox) -> Features {
        let (x0, y0, x1, y1) = (b.x, b.y, b.x + b.w, b.y + b.h);
        let n = (b.w * b.h) as f64;
        let (s, sq) = self.rect(x0, y0, x1, y1);
        let mean = s as f64 / n;
        let var = (sq as f64 / n - mean * mean).max(0.0);

        let m = (b.w.min(b.h) / 4).max(1);
        let (ox0, oy0) = (x0.saturating_sub(m), y0.saturating_sub(m));
        let (ox1, oy1) = ((x1 + m).min(self.width), (y1 + m).min(self.height));
        let (outer, _) = self.rect(ox0, oy0, ox1, oy1);
        let ring_n = ((ox1 - ox0) * (oy1 - oy0)) as f64 - n;
        let contrast = if ring_n > 0.0 {
            (mean - (outer - s) as f64 / ring_n) / 255.0
        } else {
            0.0
        };

        let (xm, ym) = (x0 + b.w / 2, y0 + b.h / 2);
        let quad = |qx0, qy0, qx1, qy1| {
            let qn = ((qx1 - qx0) * (qy1 - qy0)) as f64;
            if qn == 0.0 {
                mean / 255.0
            } else {
                self.rect(qx0, qy0, qx1, qy1).0 as f64 / qn / 255.0
            }
        };
        [
            mean / 255.0,
            var.sqrt() / 255.0,
            contrast,
            quad(x0, y0, xm, ym),
            quad(xm, y0, x1, ym),
            quad(x0, ym, xm, y1),
            quad(xm, ym, x1, y1),
        ]
    }
}

/// `[mean, std, contrast against the surrounding ring, four quadrant means]`,
/// intensities divided by 255. The ring is `max(1, min(w, h) / 4)` pixels
/// wide, clipped to the image.
pub fn extract_features(image: &GrayImage, window: &BoundingBox) -> Result<Features> {
    if window.w == 0 || window.h == 0 || !image.contains(window) {
        return Err(Error::param(format!(
            "window {window:?} outside {}x{} image",
            image.width(),
            image.height()
        )));
    }
    Ok(IntegralImage::new(image).features(window))
}

/// Window sides for a canvas, scaled from the 256-pixel reference.
pub fn window_sides(canvas: usize) -> Vec<usize> {
    let mut sides: Vec<usize> = WINDOW_SIDES
        .iter()
        .map(|&s| ((s * canvas) as f64 / 256.0).round().max(4.0) as usize)
        .filter(|&s| s <= canvas)
        .collect();
    sides.dedup();
    sides
}

/// All scan windows in deterministic order: side ascending, then row, then
/// column, with stride `side / 4`.
pub fn scan_windows(width: usize, height: usize) -> Vec<BoundingBox> {
    let mut out = Vec::new();
    for side in window_sides(width.min(height)) {
        let stride = (side / 4).max(1);
        for y in (0..=height - side).step_by(stride) {
            for x in (0..=width - side).step_by(stride) {
                out.push(BoundingBox::new(x, y, side, side));
            }
        }
    }
    out
}

/// Scan windows of one image with their features.
#[derive(Debug, Clone)]
pub struct WindowBank {
    pub boxes: Vec<BoundingBox>,
    pub features: Vec<Features>,
}

impl WindowBank {
    pub fn new(image: &GrayImage) -> Self {
        let ii = IntegralImage::new(image);
        let boxes = scan_windows(image.width(), image.height());
        let features = boxes.iter().map(|b| ii.features(b)).collect();
        Self { boxes, features }
    }
}

/// Linear scorer weights plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    weights: Vec<f64>,
    bias: f64,
    feature_version: u32,
}

impl DetectorParams {
    pub fn new(weights: Vec<f64>, bias: f64) -> Result<Self> {
        if weights.len() != FEATURE_LEN {
            return Err(Error::Dimension(format!(
                "{} weights, expected {FEATURE_LEN}",
                weights.len()
            )));
        }
        if !bias.is_finite() || weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("non-finite detector parameter".into()));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros() -> Self {
        Self {
            weights: vec![0.0; FEATURE_LEN],
            bias: 0.0,
        }
    }

    /// Hand-set starting point that prefers windows brighter than their ring.
    pub fn prior() -> Self {
        Self {
            weights: vec![0.0, 0.0, 12.0, 0.0, 0.0, 0.0, 0.0],
            bias: -3.0,
        }
    }

    /// `[w_1, ..., w_7, b]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub fn from_vector(v: &[f64]) -> Result<Self> {
        if v.len() != FEATURE_LEN + 1 {
            return Err(Error::Dimension(format!(
                "parameter vector of length {}, expected {}",
                v.len(),
                FEATURE_LEN + 1
            )));
        }
        Self::new(v[..FEATURE_LEN].to_vec(), v[FEATURE_LEN])
    }

    pub fn logit(&self, f: &Features) -> f64 {
        self.weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    pub fn score(&self, f: &Features) -> f64 {
        sigmoid(self.logit(f))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Checkpoint {
            weights: self.weights.clone(),
            bias: self.bias,
            feature_version: FEATURE_VERSION,
        })
        .expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)
            .map_err(|e| Error::DataShape(format!("bad checkpoint: {e}")))?;
        if c.feature_version != FEATURE_VERSION {
            return Err(Error::DataShape(format!(
                "checkpoint feature_version {} (expected {FEATURE_VERSION})",
                c.feature_version
            )));
        }
        Self::new(c.weights, c.bias)
    }

    /// Hex SHA-256 of the checkpoint JSON.
    pub fn hash(&self) -> String {
        hex_digest(self.to_json().as_bytes())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Intersection over the smaller area.
pub fn min_area_overlap(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let m = a.area().min(b.area());
    if m == 0 {
        return 0.0;
    }
    a.intersection_area(b) as f64 / m as f64
}

/// Greedy suppression in decreasing score; equal scores keep input order.
pub fn non_max_suppression(mut cands: Vec<Prediction>, overlap: f64) -> Vec<Prediction> {
    cands.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<Prediction> = Vec::new();
    for c in cands {
        if kept
            .iter()
            .all(|k| min_area_overlap(&k.bbox, &c.bbox) <= overlap)
        {
            kept.push(c);
        }
    }
    kept
}

pub fn detect_bank(params: &DetectorParams, bank: &WindowBank) -> Vec<Prediction> {
    let cands = bank
        .boxes
        .iter()
        .zip(&bank.features)
        .filter_map(|(b, f)| {
            let s = params.score(f);
            (s >= SCORE_FLOOR).then(|| Prediction::new(*b, s))
        })
        .collect();
    non_max_suppression(cands, NMS_OVERLAP)
}

pub trait Detector {
    fn detect(&self, image: &GrayImage) -> Vec<Prediction>;
}

impl Detector for DetectorParams {
    fn detect(&self, image: &GrayImage) -> Vec<Prediction> {
        detect_bank(self, &WindowBank::new(image))
    }
}

pub fn detect(params: &DetectorParams, image: &GrayImage) -> Vec<Prediction> {
    params.detect(image)
}

/// A dataset with window features precomputed for repeated evaluation.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub banks: Vec<WindowBank>,
    pub gts: Vec<Vec<BoundingBox>>,
}

impl EvalSet {
    pub fn new(dataset: &AnnotatedDataset) -> Self {
        let banks = dataset
            .items
            .par_iter()
            .map(|it| WindowBank::new(&it.image))
            .collect();
        Self {
            banks,
            gts: dataset.items.iter().map(|it| it.boxes.clone()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.banks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.banks.is_empty()
    }

    pub fn predictions(&self, params: &DetectorParams) -> Vec<Vec<Prediction>> {
        self.banks
            .par_iter()
            .map(|b| detect_bank(params, b))
            .collect()
    }

    /// FAUC of the detector on this set.
    pub fn performance(&self, params: &DetectorParams) -> Result<f64> {
        let preds = self.predictions(params);
        Ok(fauc(&froc(&preds, &self.gts, self.len())?))
    }
}

/// FAUC of `params` on `dataset`.
pub fn performance_v(params: &DetectorParams, dataset: &AnnotatedDataset) -> Result<f64> {
    EvalSet::new(dataset).performance(params)
}

/// Labeled window features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleSet {
    pub features: Vec<Features>,
    pub labels: Vec<f64>,
}

impl SampleSet {
    pub fn new(features: Vec<Features>, labels: Vec<f64>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Dimension("features and labels differ in length".into()));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::param("labels must be 0 or 1"));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1.0).count()
    }

    pub fn extend(&mut self, other: &SampleSet) {
        self.features.extend_from_slice(&other.features);
        self.labels.extend_from_slice(&other.labels);
    }
}

/// Training windows: per ground-truth box up to four scan windows with dice
/// `>= 0.5` (the box itself when none qualifies), and three random scan
/// windows with dice `< 0.1` to every box per positive.
pub fn sample_windows(dataset: &AnnotatedDataset, seed: u64) -> Result<SampleSet> {
    let parts: Vec<(Vec<Features>, Vec<f64>)> = dataset
        .items
        .par_iter()
        .map(|it| {
            let mut rng = seed::rng(mix(seed, it.index as u64));
            let ii = IntegralImage::new(&it.image);
            let grid = scan_windows(it.image.width(), it.image.height());
            let mut feats = Vec::new();
            let mut labels = Vec::new();
            for gt in &it.boxes {
                let mut pos: Vec<&BoundingBox> =
                    grid.iter().filter(|w| dice(w, gt) >= POSITIVE_DICE).collect();
                pos.shuffle(&mut rng);
                pos.truncate(MAX_POSITIVES_PER_BOX);
                if pos.is_empty() {
                    pos.push(gt);
                }
                for w in pos {
                    feats.push(ii.features(w));
                    labels.push(1.0);
                }
            }
            let n_pos = labels.len();
            let mut neg: Vec<&BoundingBox> = grid
                .iter()
                .filter(|w| it.boxes.iter().all(|g| dice(w, g) < NEGATIVE_DICE))
                .collect();
            neg.shuffle(&mut rng);
            neg.truncate(n_pos * NEGATIVES_PER_POSITIVE);
            for w in neg {
                feats.push(ii.features(w));
                labels.push(0.0);
            }
            (feats, labels)
        })
        .collect();
    let mut out = SampleSet::default();
    for (f, l) in parts {
        out.features.extend(f);
        out.labels.extend(l);
    }
    if out.is_empty() {
        return Err(Error::param("no labeled windows could be sampled"));
    }
    Ok(out)
}

/// A differentiable training objective over a parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    /// Number of samples addressable by minibatch indices.
    fn len(&self) -> usize;
    fn loss(&self, theta: &[f64]) -> f64;
    /// Mean gradient over `batch`.
    fn gradient(&self, theta: &[f64], batch: &[usize]) -> Vec<f64>;
    /// Full Hessian, row-major.
    fn hessian(&self, theta: &[f64]) -> Vec<f64>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn full_gradient(&self, theta: &[f64]) -> Vec<f64> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.gradient(theta, &all)
    }

    fn hessian_trace(&self, theta: &[f64]) -> f64 {
        let n = self.dim();
        let h = self.hessian(theta);
        (0..n).map(|i| h[i * n + i]).sum()
    }
}

/// Mean logistic loss of the toy detector over labeled windows.
#[derive(Debug, Clone, Copy)]
pub struct LogisticObjective<'a> {
    pub samples: &'a SampleSet,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(samples: &'a SampleSet) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::param("empty sample set"));
        }
        Ok(Self { samples })
    }

    fn logit(theta: &[f64], f: &Features) -> f64 {
        theta[..FEATURE_LEN]
            .iter()
            .zip(f)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + theta[FEATURE_LEN]
    }
}

impl Objective for LogisticObjective<'_> {
    fn dim(&self) -> usize {
        FEATURE_LEN + 1
    }

    fn len(&self) -> usize {
        self.samples.len()
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        let s = self.samples;
        let total: f64 = s
            .features
            .iter()
            .zip(&s.labels)
            .map(|(f, &y)| {
                let z = Self::logit(theta, f);
                softplus(z) - y * z
            })
            .sum();
        total / s.len() as f64
    }

    fn gradient(&self, theta: &[f64], batch: &[usize]) -> Vec<f64> {
        let mut g = vec![0.0; FEATURE_LEN + 1];
        for &i in batch {
            let f = &self.samples.features[i];
            let r = sigmoid(Self::logit(theta, f)) - self.samples.labels[i];
            for (gj, x) in g.iter_mut().zip(f) {
                *gj += r * x;
            }
            g[FEATURE_LEN] += r;
        }
        let n = batch.len().max(1) as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    fn hessian(&self, theta: &[f64]) -> Vec<f64> {
        let d = FEATURE_LEN + 1;
        let mut h = vec![0.0; d * d];
        let mut x = [0.0; FEATURE_LEN + 1];
        for f in &self.samples.features {
            let p = sigmoid(Self::logit(theta, f));
            let c = p * (1.0 - p);
            x[..FEATURE_LEN].copy_from_slice(f);
            x[FEATURE_LEN] = 1.0;
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] += c * x[i] * x[j];
                }
            }
        }
        let n = self.samples.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }

    fn hessian_trace(&self, theta: &[f64]) -> f64 {
        let total: f64 = self
            .samples
            .features
            .iter()
            .map(|f| {
                let p = sigmoid(Self::logit(theta, f));
                p * (1.0 - p) * (1.0 + f.iter().map(|x| x * x).sum::<f64>())
            })
            .sum();
        total / self.samples.len() as f64
    }
}

/// `1/2 theta^T H theta` with a fixed symmetric `H`; a single "sample".
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub h: Vec<f64>,
    pub n: usize,
}

impl Quadratic {
    pub fn new(h: Vec<f64>, n: usize) -> Result<Self> {
        if h.len() != n * n {
            return Err(Error::Dimension(format!("{} entries for {n}x{n}", h.len())));
        }
        Ok(Self { h, n })
    }

    fn apply(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.h[i * self.n + j] * theta[j]).sum())
            .collect()
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.n
    }

    fn len(&self) -> usize {
        1
    }

    fn loss(&self, theta: &[f64]) -> f64 {
        0.5 * self.apply(theta).iter().zip(theta).map(|(a, b)| a * b).sum::<f64>()
    }

    fn gradient(&self, theta: &[f64], _batch: &[usize]) -> Vec<f64> {
        self.apply(theta)
    }

    fn hessian(&self, _theta: &[f64]) -> Vec<f64> {
        self.h.clone()
    }
}

/// Mean logistic loss of `params` over `samples`.
pub fn loss(params: &DetectorParams, samples: &SampleSet) -> Result<f64> {
    Ok(LogisticObjective::new(samples)?.loss(&params.to_vector()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    NvrmSgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub variability_scale_b: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::NvrmSgd,
            learning_rate: 0.0002,
            batch_size: 64,
            epochs: 40,
            variability_scale_b: 0.01,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.variability_scale_b >= 0.0) || !self.variability_scale_b.is_finite() {
            return Err(Error::param(format!(
                "variability_scale_b must be >= 0, got {}",
                self.variability_scale_b
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be >= 1"));
        }
        Ok(())
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Optimizer state. Perturbations for NVRM-SGD come from their own stream so
/// that the minibatch order does not depend on `b`.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    b: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    noise: rand_chacha::ChaCha8Rng,
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, dim: usize) -> Self {
        Self {
            kind: cfg.kind,
            lr: cfg.learning_rate,
            b: cfg.variability_scale_b,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
            noise: seed::rng(mix(cfg.seed, 1)),
        }
    }

    /// One update on `batch`; NVRM-SGD draws `eps ~ N(0, b^2 I)`.
    pub fn step<O: Objective + ?Sized>(&mut self, theta: &mut [f64], obj: &O, batch: &[usize]) {
        let eps: Vec<f64> = match self.kind {
            OptimizerKind::NvrmSgd => (0..theta.len())
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut self.noise);
                    self.b * z
                })
                .collect(),
            _ => vec![0.0; theta.len()],
        };
        self.step_with_noise(theta, obj, batch, &eps);
    }

    /// One update with a caller-supplied perturbation (ignored unless
    /// NVRM-SGD).
    pub fn step_with_noise<O: Objective + ?Sized>(
        &mut self,
        theta: &mut [f64],
        obj: &O,
        batch: &[usize],
        eps: &[f64],
    ) {
        match self.kind {
            OptimizerKind::Sgd => {
                let g = obj.gradient(theta, batch);
                theta.iter_mut().zip(&g).for_each(|(t, g)| *t -= self.lr * g);
            }
            OptimizerKind::NvrmSgd => {
                let probe: Vec<f64> = theta.iter().zip(eps).map(|(t, e)| t + e).collect();
                let g = obj.gradient(&probe, batch);
                theta.iter_mut().zip(&g).for_each(|(t, g)| *t -= self.lr * g);
            }
            OptimizerKind::Adam => {
                let g = obj.gradient(theta, batch);
                self.t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(self.t);
                let c2 = 1.0 - ADAM_BETA2.powi(self.t);
                for i in 0..theta.len() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_scores: Vec<f64>,
    /// 0-based epoch with the highest validation score (first on ties);
    /// `None` when no epoch ran.
    pub selected_epoch: Option<usize>,
    pub params: DetectorParams,
}

impl TrainReport {
    /// CSV `epoch,train_loss,val_fauc` with 1-based epochs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_fauc\n");
        for (e, (l, v)) in self.train_loss.iter().zip(&self.val_scores).enumerate() {
            let _ = writeln!(out, "{},{l},{v}", e + 1);
        }
        out
    }

    /// Parse the CSV written by [`TrainReport::to_csv`] into
    /// `(train_loss, val_scores)`.
    pub fn parse_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut lines = text.lines();
        if lines.next() != Some("epoch,train_loss,val_fauc") {
            return Err(Error::DataShape("training log header mismatch".into()));
        }
        let (mut losses, mut vals) = (Vec::new(), Vec::new());
        for (i, line) in lines.filter(|l| !l.is_empty()).enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::DataShape(format!("bad training log row {line:?}"));
            if f.len() != 3 || f[0].parse::<usize>().map_err(|_| bad())? != i + 1 {
                return Err(bad());
            }
            losses.push(f[1].parse().map_err(|_| bad())?);
            vals.push(f[2].parse().map_err(|_| bad())?);
        }
        Ok((losses, vals))
    }
}

/// Minibatch descent on any objective. `validate` scores the parameters after
/// every epoch; the best-scoring epoch's parameters are returned.
pub fn train_objective<O, F>(
    theta0: &[f64],
    obj: &O,
    cfg: &OptimizerConfig,
    mut validate: F,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>, Option<usize>)>
where
    O: Objective + ?Sized,
    F: FnMut(&[f64]) -> Result<f64>,
{
    cfg.validate()?;
    if obj.is_empty() {
        return Err(Error::param("empty training set"));
    }
    let mut theta = theta0.to_vec();
    let mut opt = Optimizer::new(cfg, theta.len());
    let mut order: Vec<usize> = (0..obj.len()).collect();
    let mut shuffle = seed::rng(mix(cfg.seed, 0));
    let (mut losses, mut scores) = (Vec::new(), Vec::new());
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        for batch in order.chunks(cfg.batch_size) {
            opt.step(&mut theta, obj, batch);
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Numerical(format!("parameters diverged in epoch {epoch}")));
        }
        losses.push(obj.loss(&theta));
        let v = validate(&theta)?;
        scores.push(v);
        if best.as_ref().is_none_or(|(_, b, _)| v > *b) {
            best = Some((epoch, v, theta.clone()));
        }
    }
    Ok(match best {
        Some((e, _, t)) => (t, losses, scores, Some(e)),
        None => (theta, losses, scores, None),
    })
}

/// Train the toy detector on `train` windows, selecting the epoch with the
/// best FAUC on `val`.
pub fn train(
    params0: &DetectorParams,
    train: &SampleSet,
    val: &EvalSet,
    cfg: &OptimizerConfig,
) -> Result<TrainReport> {
    let obj = LogisticObjective::new(train)?;
    let (theta, train_loss, val_scores, selected_epoch) =
        train_objective(&params0.to_vector(), &obj, cfg, |t| {
            val.performance(&DetectorParams::from_vector(t)?)
        })?;
    Ok(TrainReport {
        train_loss,
        val_scores,
        selected_epoch,
        params: DetectorParams::from_vector(&theta)?,
    })
}

/// `loss(params_t) - loss(params_prev)` on an earlier task's windows.
pub fn forgetting_score(
    params_t: &DetectorParams,
    params_prev: &DetectorParams,
    samples_prev: &SampleSet,
) -> Result<f64> {
    if params_t == params_prev {
        return Ok(0.0);
    }
    Ok(loss(params_t, samples_prev)? - loss(params_prev, samples_prev)?)
}

/// Loss increase on any objective when moving from `theta_prev` to `theta_t`.
pub fn forgetting<O: Objective + ?Sized>(obj: &O, theta_t: &[f64], theta_prev: &[f64]) -> f64 {
    obj.loss(theta_t) - obj.loss(theta_prev)
}

/// Perturbed-loss estimates at a stationary point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NvrmCheck {
    pub loss: f64,
    /// Mean of `loss(theta + eps)` over the draws.
    pub mc_estimate: f64,
    /// `loss + b^2 tr(H)`, the expansion as the NVRM risk is usually written.
    pub taylor_estimate: f64,
    /// `loss + b^2 tr(H) / 2`, the exact second-order Gaussian expectation.
    pub taylor_exact: f64,
}

pub const STATIONARY_GRADIENT_NORM: f64 = 1e-3;
pub const MAX_CHECK_SCALE: f64 = 0.05;

pub fn nvrm_risk_check<O: Objective + Sync + ?Sized>(
    obj: &O,
    theta: &[f64],
    b: f64,
    n_mc: usize,
    seed: u64,
) -> Result<NvrmCheck> {
    if !(0.0..=MAX_CHECK_SCALE).contains(&b) {
        return Err(Error::param(format!("b must lie in [0, {MAX_CHECK_SCALE}], got {b}")));
    }
    if n_mc == 0 {
        return Err(Error::param("n_mc must be >= 1"));
    }
    let g = obj.full_gradient(theta);
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > STATIONARY_GRADIENT_NORM {
        return Err(Error::Diagnostic(format!(
            "gradient norm {norm:.3e} exceeds {STATIONARY_GRADIENT_NORM:e}; not a stationary point"
        )));
    }
    let base = obj.loss(theta);
    // averaging the excess keeps mc == loss exactly when b == 0
    let excess: Vec<f64> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(mix(seed, i as u64));
            let probe: Vec<f64> = theta
                .iter()
                .map(|t| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    t + b * z
                })
                .collect();
            obj.loss(&probe) - base
        })
        .collect();
    let tr = obj.hessian_trace(theta);
    Ok(NvrmCheck {
        loss: base,
        mc_estimate: base + excess.iter().sum::<f64>() / n_mc as f64,
        taylor_estimate: base + b * b * tr,
        taylor_exact: base + 0.5 * b * b * tr,
    })
}

/// Damped Newton iterations to a stationary point of a convex objective.
pub fn minimize_newton<O: Objective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let n = obj.dim();
    let mut theta = theta0.to_vec();
    for _ in 0..max_iter {
        let g = obj.full_gradient(&theta);
        if g.iter().map(|x| x * x).sum::<f64>().sqrt() <= tol {
            return Ok(theta);
        }
        // the window mean is the average of the quadrant means, so H is
        // singular along one direction; a trace-relative ridge keeps it solvable
        let mut h = obj.hessian(&theta);
        let ridge = 1e-12 * (0..n).map(|i| h[i * n + i]).sum::<f64>().max(1e-300);
        (0..n).for_each(|i| h[i * n + i] += ridge);
        let step = spd_solve(&h, n, &g)?;
        let f0 = obj.loss(&theta);
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            if obj.loss(&cand) <= f0 || t < 1e-8 {
                theta = cand;
                break;
            }
            t *= 0.5;
        }
    }
    let g = obj.full_gradient(&theta);
    if g.iter().map(|x| x * x).sum::<f64>().sqrt() <= tol {
        Ok(theta)
    } else {
        Err(Error::Numerical(format!(
            "no stationary point within {max_iter} Newton steps"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> GrayImage {
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                px.push(f(x, y));
            }
        }
        GrayImage::new(w, h, px).unwrap()
    }

    #[test]
    fn blank_features() {
        let img = GrayImage::filled(32, 32, 0).unwrap();
        let f = extract_features(&img, &BoundingBox::new(8, 8, 8, 8)).unwrap();
        assert_eq!(f, [0.0; FEATURE_LEN]);
    }

    #[test]
    fn bright_square_contrast_one() {
        let img = gray(32, 32, |x, y| if (8..16).contains(&x) && (8..16).contains(&y) { 255 } else { 0 });
        let w = BoundingBox::new(8, 8, 8, 8);
        let f = extract_features(&img, &w).unwrap();
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[2], 1.0);
        assert_eq!(&f[3..], &[1.0; 4]);
        assert_eq!(f, extract_features(&img, &w).unwrap());
    }

    #[test]
    fn features_match_direct_sums() {
        let img = gray(20, 17, |x, y| ((x * 31 + y * 17) % 256) as u8);
        let w = BoundingBox::new(3, 4, 9, 7);
        let f = extract_features(&img, &w).unwrap();
        let vals: Vec<f64> = (4..11)
            .flat_map(|y| (3..12).map(move |x| (x, y)))
            .map(|(x, y)| img.get(x, y) as f64)
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((f[0] - mean / 255.0).abs() < 1e-12);
        assert!((f[1] - var.sqrt() / 255.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_bounds_window() {
        let img = GrayImage::filled(10, 10, 0).unwrap();
        assert!(extract_features(&img, &BoundingBox::new(5, 5, 6, 2)).is_err());
    }

    #[test]
    fn suppressed_detector_is_silent() {
        let img = gray(64, 64, |x, _| (x * 4) as u8);
        let p = DetectorParams::new(vec![0.0; FEATURE_LEN], -10.0).unwrap();
        assert!(detect(&p, &img).is_empty());
    }

    #[test]
    fn nms_keeps_first_of_equal_scores() {
        let a = Prediction::new(BoundingBox::new(0, 0, 10, 10), 0.5);
        let b = Prediction::new(BoundingBox::new(2, 0, 10, 10), 0.5);
        let kept = non_max_suppression(vec![a, b], NMS_OVERLAP);
        assert_eq!(kept, vec![a]);
        let far = Prediction::new(BoundingBox::new(40, 40, 10, 10), 0.4);
        assert_eq!(non_max_suppression(vec![far, a], NMS_OVERLAP), vec![a, far]);
    }

    #[test]
    fn window_sides_scale() {
        assert_eq!(window_sides(256), vec![24, 40, 64]);
        assert_eq!(window_sides(512), vec![48, 80, 128]);
        assert_eq!(window_sides(64), vec![6, 10, 16]);
        let w = scan_windows(256, 256);
        assert_eq!(w[0], BoundingBox::new(0, 0, 24, 24));
        assert_eq!(w[1], BoundingBox::new(6, 0, 24, 24));
    }

    #[test]
    fn zero_params_loss_is_ln2() {
        let s = SampleSet::new(vec![[0.3; 7], [0.1; 7], [0.9; 7], [0.5; 7]], vec![1.0, 0.0, 0.0, 0.0])
            .unwrap();
        assert_eq!(loss(&DetectorParams::zeros(), &s).unwrap(), 2f64.ln());
        assert!(loss(&DetectorParams::zeros(), &SampleSet::default()).is_err());
    }

    #[test]
    fn hand_computed_loss() {
        let mut f1 = [0.0; 7];
        f1[0] = 1.0;
        let s = SampleSet::new(vec![f1, f1, [0.0; 7]], vec![1.0, 0.0, 1.0]).unwrap();
        let mut w = vec![0.0; 7];
        w[0] = 2.0;
        let p = DetectorParams::new(w, -1.0).unwrap();
        // logits 1, 1, -1
        let q = 1.0 / (1.0 + (-1.0f64).exp());
        let expect = (-(q.ln()) - (1.0 - q).ln() - (1.0 - q).ln()) / 3.0;
        assert!((loss(&p, &s).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn saturated_separation() {
        let mut pos = [0.0; 7];
        pos[2] = 1.0;
        let s = SampleSet::new(vec![pos, [0.0; 7]], vec![1.0, 0.0]).unwrap();
        let mut w = vec![0.0; 7];
        w[2] = 40.0;
        let p = DetectorParams::new(w, -20.0).unwrap();
        assert!(loss(&p, &s).unwrap() <= 0.01);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = DetectorParams::prior();
        let json = p.to_json();
        assert!(json.contains("\"feature_version\":1"));
        assert_eq!(DetectorParams::from_json(&json).unwrap(), p);
        assert_eq!(p.hash().len(), 64);
        assert_ne!(p.hash(), DetectorParams::zeros().hash());
        assert!(DetectorParams::from_json(r#"{"weights":[],"bias":0,"feature_version":1}"#).is_err());
    }

    #[test]
    fn quadratic_step_is_closed_form() {
        let q = Quadratic::new(vec![2.0, 0.5, 0.5, 1.0], 2).unwrap();
        let cfg = OptimizerConfig {
            kind: OptimizerKind::NvrmSgd,
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut opt = Optimizer::new(&cfg, 2);
        let mut theta = vec![1.0, -1.0];
        let eps = [0.03, -0.02];
        let before = theta.clone();
        opt.step_with_noise(&mut theta, &q, &[0], &eps);
        let p = [before[0] + eps[0], before[1] + eps[1]];
        let expect = [
            before[0] - 0.1 * (2.0 * p[0] + 0.5 * p[1]),
            before[1] - 0.1 * (0.5 * p[0] + 1.0 * p[1]),
        ];
        assert!((theta[0] - expect[0]).abs() < 1e-15);
        assert!((theta[1] - expect[1]).abs() < 1e-15);
    }

    #[test]
    fn zero_epochs_is_noop() {
        let s = SampleSet::new(vec![[0.5; 7]], vec![1.0]).unwrap();
        let obj = LogisticObjective::new(&s).unwrap();
        let cfg = OptimizerConfig {
            epochs: 0,
            ..Default::default()
        };
        let (t, l, v, e) = train_objective(&[0.1; 8], &obj, &cfg, |_| Ok(0.0)).unwrap();
        assert_eq!(t, vec![0.1; 8]);
        assert!(l.is_empty() && v.is_empty() && e.is_none());
    }

    #[test]
    fn quadratic_nvrm_expectation() {
        let lambda = 3.0;
        let q = Quadratic::new(vec![lambda], 1).unwrap();
        let c = nvrm_risk_check(&q, &[0.0], 0.05, 200_000, 9).unwrap();
        let exact = 0.5 * lambda * 0.05f64.powi(2);
        assert!((c.mc_estimate - exact).abs() / exact < 0.02);
        assert!((c.taylor_exact - exact).abs() < 1e-15);
        assert!((c.taylor_estimate - 2.0 * exact).abs() < 1e-15);
        let z = nvrm_risk_check(&q, &[0.0], 0.0, 10, 9).unwrap();
        assert_eq!(z.mc_estimate, z.loss);
        assert_eq!(z.taylor_estimate, z.loss);
        assert!(matches!(
            nvrm_risk_check(&q, &[1.0], 0.01, 10, 0),
            Err(Error::Diagnostic(_))
        ));
    }

    #[test]
    fn forgetting_zero_and_finite() {
        let s = SampleSet::new(vec![[0.2; 7], [0.7; 7]], vec![0.0, 1.0]).unwrap();
        let p = DetectorParams::prior();
        assert_eq!(forgetting_score(&p, &p, &s).unwrap(), 0.0);
        let mut moved = p.clone();
        moved.bias += 0.01;
        assert!(forgetting_score(&moved, &p, &s).unwrap().is_finite());
    }

    #[test]
    fn quadratic_forgetting_is_half_h_d2() {
        let h = 4.0;
        let q = Quadratic::new(vec![h], 1).unwrap();
        let d: f64 = 0.05;
        let f = forgetting(&q, &[d], &[0.0]);
        assert!((f - 0.5 * h * d * d).abs() / (0.5 * h * d * d) < 0.05);
    }
}
