//! Pseudo-lesion patches: a radially smoothed disc, randomly deformed by an
//! affine map, multiplied with a normalized fractal noise texture.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::perlin::{fractal_perlin2d, normalize_field, FractalNoiseParams, NoiseField};
use crate::seed;

/// A lesion raster. `support` marks pixels that belong to the lesion; every
/// positive value lies inside the support.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionPatch {
    width: usize,
    height: usize,
    values: Vec<f64>,
    support: Vec<bool>,
}

impl LesionPatch {
    pub fn new(width: usize, height: usize, values: Vec<f64>, support: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("lesion patch must be at least 1x1"));
        }
        if values.len() != width * height || support.len() != width * height {
            return Err(Error::Dimension(format!(
                "lesion buffers do not match {width}x{height}"
            )));
        }
        for (v, s) in values.iter().zip(&support) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::param(format!("lesion value {v} outside [0, 1]")));
            }
            if *v > 0.0 && !s {
                return Err(Error::param("positive lesion value outside the support"));
            }
        }
        Ok(Self {
            width,
            height,
            values,
            support,
        })
    }

    /// Patch whose support is exactly its positive values.
    fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        let support = values.iter().map(|&v| v > 0.0).collect();
        Self {
            width,
            height,
            values,
            support,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> &[bool] {
        &self.support
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn in_support(&self, x: usize, y: usize) -> bool {
        self.support[y * self.width + x]
    }

    pub fn support_len(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }

    /// Tight bounding box `(x, y, w, h)` of the support, if any.
    pub fn support_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut x0 = usize::MAX;
        let mut y0 = usize::MAX;
        let mut x1 = 0;
        let mut y1 = 0;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.in_support(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        (x0 != usize::MAX).then(|| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    /// Crop to the tight bounding box of the support.
    pub fn crop_to_support(&self) -> Option<LesionPatch> {
        let (x0, y0, w, h) = self.support_bounds()?;
        let mut values = Vec::with_capacity(w * h);
        let mut support = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            values.extend_from_slice(&self.values[row + x0..row + x0 + w]);
            support.extend_from_slice(&self.support[row + x0..row + x0 + w]);
        }
        Some(LesionPatch {
            width: w,
            height: h,
            values,
            support,
        })
    }

    /// True when the support is non-empty and 4-connected.
    pub fn support_is_connected(&self) -> bool {
        let Some(start) = self.support.iter().position(|&s| s) else {
            return false;
        };
        let mut seen = vec![false; self.support.len()];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        let mut reached = 1;
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % self.width, i / self.width);
            let mut visit = |j: usize| {
                if self.support[j] && !seen[j] {
                    seen[j] = true;
                    reached += 1;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < self.width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - self.width);
            }
            if y + 1 < self.height {
                visit(i + self.width);
            }
        }
        reached == self.support_len()
    }

    /// Zero-padded bilinear sample.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let tx = x - x0;
        let ty = y - y0;
        let at = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                0.0
            } else {
                self.value(xi as usize, yi as usize)
            }
        };
        let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1.0, y0) * tx;
        let bottom = at(x0, y0 + 1.0) * (1.0 - tx) + at(x0 + 1.0, y0 + 1.0) * tx;
        top * (1.0 - ty) + bottom * ty
    }
}

/// Disc of radius `r` whose rim is ramped down linearly: value `1` up to
/// distance `r(1 - alpha)` from the center, then `(r - d) / (r alpha)`, and
/// `0` beyond `r`. The patch is `(2r + 1)` pixels square.
pub fn smoothed_circle_mask(r: u32, alpha: f64) -> Result<LesionPatch> {
    if r == 0 {
        return Err(Error::param("mask radius must be >= 1"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::param(format!("smoothness {alpha} outside (0, 1]")));
    }
    let r = r as f64;
    let side = 2 * r as usize + 1;
    let core = r * (1.0 - alpha);
    let mut values = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let d = (x as f64 - r).hypot(y as f64 - r);
            values.push(ramp(d, r, alpha, core));
        }
    }
    Ok(LesionPatch::from_values(side, side, values))
}

#[inline]
fn ramp(d: f64, r: f64, alpha: f64, core: f64) -> f64 {
    if d <= core {
        1.0
    } else if d <= r {
        (r - d) / (r * alpha)
    } else {
        0.0
    }
}

/// Linear map of the plane, `(x, y) -> (a x + b y, c x + d y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Affine2 {
    pub const MIN_DETERMINANT: f64 = 0.05;

    pub fn identity() -> Self {
        Self {
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: 1.0,
        }
    }

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            a: c,
            b: -s,
            c: s,
            d: c,
        }
    }

    /// Rotation applied after shear and per-axis scale.
    pub fn compose(theta: f64, scale_x: f64, scale_y: f64, shear: f64) -> Self {
        let rot = Self::rotation(theta);
        // shear * scale = [[sx, shear*sy], [0, sy]]
        let (m00, m01, m11) = (scale_x, shear * scale_y, scale_y);
        Self {
            a: rot.a * m00,
            b: rot.a * m01 + rot.b * m11,
            c: rot.c * m00,
            d: rot.c * m01 + rot.d * m11,
        }
    }

    /// Rotation `U(0, 2pi)`, scales `U(0.6, 1.4)`, shear `U(-0.3, 0.3)`.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let theta = rng.random_range(0.0..2.0 * PI);
        let sx = rng.random_range(0.6..1.4);
        let sy = rng.random_range(0.6..1.4);
        let shear = rng.random_range(-0.3..0.3);
        Self::compose(theta, sx, sy, shear)
    }

    pub fn determinant(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (self.a * x + self.b * y, self.c * x + self.d * y)
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if det.abs() < 1e-12 {
            return None;
        }
        Some(Self {
            a: self.d / det,
            b: -self.b / det,
            c: -self.c / det,
            d: self.a / det,
        })
    }
}

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Warp `mask` by `transform` about its center, resampling by inverse-mapped
/// bilinear interpolation, and crop to the support. `None` when the warped
/// support is empty or the transform is singular.
pub fn apply_affine(mask: &LesionPatch, transform: &Affine2) -> Option<LesionPatch> {
    let inv = transform.inverse()?;
    let cx = (mask.width - 1) as f64 / 2.0;
    let cy = (mask.height - 1) as f64 / 2.0;
    let (mut hx, mut hy) = (0.0f64, 0.0f64);
    for (sx, sy) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
        let (x, y) = transform.apply(sx * cx, sy * cy);
        hx = hx.max(x.abs());
        hy = hy.max(y.abs());
    }
    let half_w = (hx - 1e-9).ceil().max(0.0) as usize;
    let half_h = (hy - 1e-9).ceil().max(0.0) as usize;
    let (w, h) = (2 * half_w + 1, 2 * half_h + 1);
    let mut values = Vec::with_capacity(w * h);
    for oy in 0..h {
        let ry = oy as f64 - half_h as f64;
        for ox in 0..w {
            let rx = ox as f64 - half_w as f64;
            let (sx, sy) = inv.apply(rx, ry);
            values.push(mask.sample(snap(sx + cx), snap(sy + cy)).clamp(0.0, 1.0));
        }
    }
    LesionPatch::from_values(w, h, values).crop_to_support()
}

/// Deform `mask` with a seeded random affine map. Transforms with a tiny
/// determinant or a disconnected result are redrawn, up to 10 times, after
/// which the identity is used.
pub fn random_affine(mask: &LesionPatch, seed: u64) -> Result<LesionPatch> {
    if mask.support_len() == 0 {
        return Err(Error::param("cannot deform an empty mask"));
    }
    let mut rng = seed::rng(seed);
    for _ in 0..10 {
        let t = Affine2::random(&mut rng);
        if t.determinant() < Affine2::MIN_DETERMINANT {
            continue;
        }
        if let Some(out) = apply_affine(mask, &t) {
            if out.support_is_connected() {
                return Ok(out);
            }
        }
    }
    apply_affine(mask, &Affine2::identity())
        .ok_or_else(|| Error::param("mask has no support"))
}

/// Multiply `mask` by `noise` reshaped (bilinear) to the mask's size. The
/// support is inherited from the mask.
pub fn compose_lesion(mask: &LesionPatch, noise: &NoiseField) -> Result<LesionPatch> {
    let noise = noise.resize_bilinear(mask.width, mask.height)?;
    let values = mask
        .values
        .iter()
        .zip(noise.values())
        .map(|(m, n)| (m * n.clamp(0.0, 1.0)).clamp(0.0, 1.0))
        .collect();
    Ok(LesionPatch {
        width: mask.width,
        height: mask.height,
        values,
        support: mask.support.clone(),
    })
}

/// Inputs of [`make_lesion`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LesionParams {
    pub radius_min: u32,
    pub radius_max: u32,
    pub smoothness_alpha: f64,
    pub noise: FractalNoiseParams,
    pub affine_seed: u64,
}

impl LesionParams {
    pub const RADIUS_MIN: u32 = 20;
    pub const RADIUS_MAX: u32 = 75;

    pub fn new(smoothness_alpha: f64, noise: FractalNoiseParams, affine_seed: u64) -> Self {
        Self {
            radius_min: Self::RADIUS_MIN,
            radius_max: Self::RADIUS_MAX,
            smoothness_alpha,
            noise,
            affine_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius_min == 0 || self.radius_min > self.radius_max {
            return Err(Error::param(format!(
                "radius range ({}, {}) must satisfy 0 < min <= max",
                self.radius_min, self.radius_max
            )));
        }
        if !(self.smoothness_alpha > 0.0 && self.smoothness_alpha <= 1.0) {
            return Err(Error::param(format!(
                "smoothness {} outside (0, 1]",
                self.smoothness_alpha
            )));
        }
        self.noise.validate()
    }

    /// Radius drawn uniformly from the inclusive integer range.
    pub fn sample_radius<R: Rng>(&self, rng: &mut R) -> u32 {
        rng.random_range(self.radius_min..=self.radius_max)
    }
}

/// Build one pseudo-lesion: draw `r`, ramp mask, random deformation, then
/// multiply by normalized fractal noise reshaped to the deformed mask.
pub fn make_lesion(params: &LesionParams, rng_seed: u64) -> Result<LesionPatch> {
    params.validate()?;
    let mut rng = seed::rng(rng_seed);
    let r = params.sample_radius(&mut rng);
    let mask = smoothed_circle_mask(r, params.smoothness_alpha)?;
    let deformed = random_affine(&mask, params.affine_seed)?;
    let size = params.noise.canonical_size();
    let noise = normalize_field(&fractal_perlin2d(size, size, &params.noise)?)?;
    compose_lesion(&deformed, &noise)
}
