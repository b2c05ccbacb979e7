//! Placing pseudo-lesions into normal radiographs.
//!
//! A lesion with normalized opacity `v` composited onto a pixel `v_in` under
//! Beer-Lambert attenuation gives
//!
//! ```text
//! v_out = v_in (1 - beta v) + 255 beta v
//! ```
//!
//! which interpolates between the original pixel and full white, so insertion
//! never darkens a pixel and never exceeds 255.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lesion::{make_lesion, LesionParams, LesionPatch};
use crate::perlin::{gradient_noise, FractalNoiseParams};
use crate::raster::{BoundingBox, GrayImage};
use crate::seed::{self, mix, mix_all};

/// Reference canvas side for which the margin and radius defaults are stated.
pub const REFERENCE_CANVAS: usize = 1024;

/// The five tunable simulator parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub persistence: f64,
    pub lacunarity: f64,
    pub res: u32,
    pub alpha: f64,
    pub beta: f64,
}

impl SimParams {
    pub const PERSISTENCE: (f64, f64) = (0.2, 1.0);
    pub const LACUNARITY: (f64, f64) = (2.0, 4.0);
    pub const RES: (u32, u32) = (2, 5);
    pub const ALPHA: (f64, f64) = (0.2, 0.8);
    pub const BETA: (f64, f64) = (0.1, 1.0);

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if v.is_finite() && (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::param(format!("{name}={v} outside [{lo}, {hi}]")))
            }
        };
        check("persistence", self.persistence, Self::PERSISTENCE)?;
        check("lacunarity", self.lacunarity, Self::LACUNARITY)?;
        check("alpha", self.alpha, Self::ALPHA)?;
        check("beta", self.beta, Self::BETA)?;
        if !(Self::RES.0..=Self::RES.1).contains(&self.res) {
            return Err(Error::param(format!(
                "res={} outside [{}, {}]",
                self.res,
                Self::RES.0,
                Self::RES.1
            )));
        }
        Ok(())
    }

    /// Independent uniform draw of every parameter from its range.
    pub fn sample_uniform<R: Rng>(rng: &mut R) -> Self {
        Self {
            persistence: rng.random_range(Self::PERSISTENCE.0..=Self::PERSISTENCE.1),
            lacunarity: rng.random_range(Self::LACUNARITY.0..=Self::LACUNARITY.1),
            res: rng.random_range(Self::RES.0..=Self::RES.1),
            alpha: rng.random_range(Self::ALPHA.0..=Self::ALPHA.1),
            beta: rng.random_range(Self::BETA.0..=Self::BETA.1),
        }
    }

    /// Lesion parameters for a canvas whose shorter side is `canvas`. The
    /// radius range (20, 75) scales with `canvas / 1024`.
    pub fn lesion_params(&self, canvas: usize, noise_seed: u64, affine_seed: u64) -> LesionParams {
        let scale = canvas as f64 / REFERENCE_CANVAS as f64;
        let rmin = ((LesionParams::RADIUS_MIN as f64 * scale).round() as u32).max(1);
        let rmax = ((LesionParams::RADIUS_MAX as f64 * scale).round() as u32).max(rmin);
        LesionParams {
            radius_min: rmin,
            radius_max: rmax,
            smoothness_alpha: self.alpha,
            noise: FractalNoiseParams::new(self.persistence, self.lacunarity, self.res, noise_seed),
            affine_seed,
        }
    }
}

/// Settings of the lesion-location search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationConfig {
    pub margin: usize,
    pub initial_threshold: u32,
    pub max_iteration: u32,
    pub seed: u64,
}

impl LocationConfig {
    pub const MARGIN: usize = 240;
    pub const INITIAL_THRESHOLD: u32 = 90;
    pub const MAX_ITERATION: u32 = 20;

    /// Defaults with the margin scaled as `round(240 * min(w, h) / 1024)`.
    pub fn for_canvas(width: usize, height: usize, seed: u64) -> Self {
        let side = width.min(height) as f64;
        Self {
            margin: (Self::MARGIN as f64 * side / REFERENCE_CANVAS as f64).round() as usize,
            initial_threshold: Self::INITIAL_THRESHOLD,
            max_iteration: Self::MAX_ITERATION,
            seed,
        }
    }
}

/// Outcome of [`decide_location`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    /// Lesion center.
    pub x: usize,
    pub y: usize,
    /// Number of candidate centers evaluated, including the accepted one.
    pub evaluations: u32,
    /// Whiteness threshold in force when the candidate was accepted.
    pub threshold: u32,
}

#[inline]
fn top_left(center: usize, extent: usize) -> Option<usize> {
    center.checked_sub(extent / 2)
}

/// Pick a lesion center whose underlying mean intensity is dark enough.
///
/// Centers are drawn uniformly from `[M, dim - M]`. A candidate is accepted
/// when the mean of the image pixels under the lesion support does not exceed
/// the threshold; every `max_iteration` rejections raise the threshold by one,
/// so the search ends once the threshold reaches 255 at the latest.
pub fn decide_location(
    image: &GrayImage,
    lesion: &LesionPatch,
    config: &LocationConfig,
) -> Result<Placement> {
    let (w, h) = (image.width(), image.height());
    let m = config.margin;
    if 2 * m >= w.min(h) {
        return Err(Error::param(format!(
            "margin {m} leaves no admissible region in a {w}x{h} image"
        )));
    }
    let (lw, lh) = (lesion.width(), lesion.height());
    if lw.div_ceil(2) > m || lh.div_ceil(2) > m {
        return Err(Error::param(format!(
            "{lw}x{lh} lesion does not fit inside margin {m}"
        )));
    }
    let support: Vec<(usize, usize)> = (0..lh)
        .flat_map(|j| (0..lw).map(move |i| (i, j)))
        .filter(|&(i, j)| lesion.in_support(i, j))
        .collect();
    if support.is_empty() {
        return Err(Error::param("lesion has an empty support"));
    }

    let mut rng = seed::rng(config.seed);
    let mut threshold = config.initial_threshold;
    let mut rejections = 0;
    let mut evaluations = 0;
    loop {
        let x = rng.random_range(m..=w - m);
        let y = rng.random_range(m..=h - m);
        evaluations += 1;
        let (x0, y0) = (x - lw / 2, y - lh / 2);
        let sum: u64 = support
            .iter()
            .map(|&(i, j)| image.get(x0 + i, y0 + j) as u64)
            .sum();
        let mean = sum as f64 / support.len() as f64;
        if mean <= threshold as f64 {
            return Ok(Placement {
                x,
                y,
                evaluations,
                threshold,
            });
        }
        rejections += 1;
        if rejections >= config.max_iteration.max(1) {
            threshold += 1;
            rejections = 0;
        }
    }
}

/// Scaled Beer-Lambert interpolation, before rounding.
#[inline]
pub fn blend_value(v_in: f64, v_noise: f64, beta: f64) -> f64 {
    let s = beta * v_noise;
    v_in * (1.0 - s) + 255.0 * s
}

/// Round half up to an 8-bit value.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Box covered by `lesion` when centered at `center`.
pub fn lesion_box(lesion: &LesionPatch, center: (usize, usize)) -> Option<BoundingBox> {
    let x = top_left(center.0, lesion.width())?;
    let y = top_left(center.1, lesion.height())?;
    Some(BoundingBox::new(x, y, lesion.width(), lesion.height()))
}

/// Composite `lesion` centered at `center` with whiteness `beta`.
pub fn insert_lesion(
    image: &GrayImage,
    lesion: &LesionPatch,
    center: (usize, usize),
    beta: f64,
) -> Result<GrayImage> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::param(format!("beta {beta} outside [0, 1]")));
    }
    let b = lesion_box(lesion, center)
        .filter(|b| image.contains(b))
        .ok_or_else(|| {
            Error::param(format!(
                "{}x{} lesion centered at {:?} leaves the {}x{} image",
                lesion.width(),
                lesion.height(),
                center,
                image.width(),
                image.height()
            ))
        })?;
    let mut out = image.clone();
    for j in 0..lesion.height() {
        for i in 0..lesion.width() {
            if !lesion.in_support(i, j) {
                continue;
            }
            let (x, y) = (b.x + i, b.y + j);
            let v = blend_value(image.get(x, y) as f64, lesion.value(i, j), beta);
            out.set(x, y, quantize(v));
        }
    }
    Ok(out)
}

/// Tight box around the lesion support placed at `center`.
pub fn support_box(lesion: &LesionPatch, center: (usize, usize)) -> Option<BoundingBox> {
    let outer = lesion_box(lesion, center)?;
    let (sx, sy, sw, sh) = lesion.support_bounds()?;
    Some(BoundingBox::new(outer.x + sx, outer.y + sy, sw, sh))
}

/// Synthetic stand-in for a normal chest radiograph: two dark elliptical lung
/// fields on a brighter body with a bright mediastinum and a low-frequency
/// fractal texture.
pub fn phantom_normal(width: usize, height: usize, seed: u64) -> Result<GrayImage> {
    if width < 64 || height < 64 {
        return Err(Error::param("phantom needs at least 64x64 pixels"));
    }
    let mut rng = seed::rng(seed);
    let (wf, hf) = (width as f64, height as f64);
    let lung_level = rng.random_range(52.0..68.0);
    let body_level = rng.random_range(160.0..180.0);
    let spine_level = body_level + rng.random_range(20.0..35.0);
    let mut lungs = [(0.30, 0.50), (0.70, 0.50)].map(|(cx, cy)| {
        (
            (cx + rng.random_range(-0.02..0.02)) * wf,
            (cy + rng.random_range(-0.02..0.02)) * hf,
            rng.random_range(0.14..0.16) * wf,
            rng.random_range(0.30..0.34) * hf,
        )
    });
    // keep lung fields clear of the mediastinum
    lungs[0].0 = lungs[0].0.min(0.5 * wf - 1.1 * lungs[0].2);
    lungs[1].0 = lungs[1].0.max(0.5 * wf + 1.1 * lungs[1].2);

    let texture = [(4usize, 10.0), (9, 5.0)]
        .iter()
        .enumerate()
        .map(|(i, &(p, amp))| Ok((gradient_noise(width, height, p, p, mix(seed, i as u64))?, amp)))
        .collect::<Result<Vec<_>>>()?;

    let smoothstep = |e0: f64, e1: f64, x: f64| {
        let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    };
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let spine = 1.0 - smoothstep(0.035, 0.06, (px / wf - 0.5).abs());
            let mut v = body_level + (spine_level - body_level) * spine;
            for &(cx, cy, a, b) in &lungs {
                let e = ((px - cx) / a).hypot((py - cy) / b);
                let inside = 1.0 - smoothstep(0.92, 1.04, e);
                v += (lung_level - v) * inside;
            }
            for (field, amp) in &texture {
                v += amp * field.get(x, y);
            }
            pixels.push(quantize(v));
        }
    }
    GrayImage::new(width, height, pixels)
}

/// One simulated abnormal image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub index: usize,
    pub image: GrayImage,
    pub boxes: Vec<BoundingBox>,
    /// Simulator parameters used for this image, when known.
    pub phi: Option<SimParams>,
}

/// Images paired with ground-truth boxes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotatedDataset {
    pub items: Vec<AnnotatedImage>,
}

impl AnnotatedDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn n_evaluable(&self) -> usize {
        self.items
            .iter()
            .flat_map(|it| &it.boxes)
            .filter(|b| b.evaluable)
            .count()
    }

    pub fn extend(&mut self, other: AnnotatedDataset) {
        self.items.extend(other.items);
    }
}

/// Simulate `lesions` lesions into one normal image. All randomness is derived
/// from `(seed, index)`.
pub fn synthesize_abnormal(
    normal: &GrayImage,
    index: usize,
    phi: &SimParams,
    lesions: usize,
    seed: u64,
) -> Result<AnnotatedImage> {
    phi.validate()?;
    let image_seed = mix(seed, index as u64);
    let canvas = normal.width().min(normal.height());
    let mut image = normal.clone();
    let mut boxes = Vec::with_capacity(lesions);
    for l in 0..lesions as u64 {
        let params = phi.lesion_params(
            canvas,
            mix_all(image_seed, &[l, 0]),
            mix_all(image_seed, &[l, 1]),
        );
        let lesion = make_lesion(&params, mix_all(image_seed, &[l, 2]))?;
        let loc = LocationConfig::for_canvas(
            image.width(),
            image.height(),
            mix_all(image_seed, &[l, 3]),
        );
        let p = decide_location(&image, &lesion, &loc)?;
        image = insert_lesion(&image, &lesion, (p.x, p.y), phi.beta)?;
        boxes.push(support_box(&lesion, (p.x, p.y)).expect("lesion support is non-empty"));
    }
    Ok(AnnotatedImage {
        index,
        image,
        boxes,
        phi: Some(*phi),
    })
}

/// Simulate one abnormal image per normal, all with the same `phi`.
pub fn generate_dataset(
    normals: &[GrayImage],
    phi: &SimParams,
    lesions_per_image: usize,
    seed: u64,
) -> Result<AnnotatedDataset> {
    generate_dataset_with(normals, |_| *phi, lesions_per_image, seed)
}

/// Like [`generate_dataset`] with a per-image parameter choice.
pub fn generate_dataset_with<F>(
    normals: &[GrayImage],
    phi_for: F,
    lesions_per_image: usize,
    seed: u64,
) -> Result<AnnotatedDataset>
where
    F: Fn(usize) -> SimParams + Sync,
{
    if lesions_per_image == 0 {
        return Err(Error::param("lesions_per_image must be >= 1"));
    }
    let items = normals
        .par_iter()
        .enumerate()
        .map(|(i, n)| synthesize_abnormal(n, i, &phi_for(i), lesions_per_image, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(AnnotatedDataset { items })
}
