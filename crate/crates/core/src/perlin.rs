//! Gradient (Perlin) noise and its fractal octave sum.
//!
//! Lattice gradients are picked from eight unit directions by hashing the
//! lattice coordinates with the field seed; interpolation uses the quintic
//! fade `6t^5 - 15t^4 + 10t^3`. A field with `periods` lattice cells across
//! `width` pixels samples pixel `i` at lattice coordinate `i * periods / width`,
//! so when `width` is a multiple of `periods` every lattice corner lands on a
//! pixel and the noise there is exactly zero.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::seed::{mix, splitmix64};

/// A real-valued raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl NoiseField {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("noise field must be at least 1x1"));
        }
        if values.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} field",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("noise field values must be finite"));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Bilinear resampling to `width x height`, aligning the corner pixels of
    /// both grids.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<NoiseField> {
        if width == 0 || height == 0 {
            return Err(Error::param("resize target must be at least 1x1"));
        }
        let sx = scale(self.width, width);
        let sy = scale(self.height, height);
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = y as f64 * sy;
            for x in 0..width {
                values.push(self.sample(x as f64 * sx, fy));
            }
        }
        Ok(NoiseField {
            width,
            height,
            values,
        })
    }

    /// Bilinear sample at a real pixel coordinate, clamped to the field.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let tx = x - x0 as f64;
        let ty = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - tx) + self.get(x1, y0) * tx;
        let bottom = self.get(x0, y1) * (1.0 - tx) + self.get(x1, y1) * tx;
        top * (1.0 - ty) + bottom * ty
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

fn scale(from: usize, to: usize) -> f64 {
    if to > 1 {
        (from - 1) as f64 / (to - 1) as f64
    } else {
        0.0
    }
}

/// Parameters of a fractal (multi-octave) Perlin noise field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractalNoiseParams {
    /// Amplitude ratio between successive octaves, in `(0, 1]`.
    pub persistence: f64,
    /// Frequency ratio between successive octaves, `> 1`.
    pub lacunarity: f64,
    /// Lattice periods of the first octave.
    pub res: u32,
    pub octaves: u32,
    pub seed: u64,
}

impl FractalNoiseParams {
    pub const DEFAULT_OCTAVES: u32 = 5;

    pub fn new(persistence: f64, lacunarity: f64, res: u32, seed: u64) -> Self {
        Self {
            persistence,
            lacunarity,
            res,
            octaves: Self::DEFAULT_OCTAVES,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.persistence > 0.0 && self.persistence <= 1.0) {
            return Err(Error::param(format!(
                "persistence {} outside (0, 1]",
                self.persistence
            )));
        }
        if !(self.lacunarity > 1.0 && self.lacunarity.is_finite()) {
            return Err(Error::param(format!(
                "lacunarity {} must be > 1",
                self.lacunarity
            )));
        }
        if self.res == 0 {
            return Err(Error::param("res must be >= 1"));
        }
        if self.octaves == 0 {
            return Err(Error::param("octaves must be >= 1"));
        }
        Ok(())
    }

    /// Lattice periods of octave `i` (0-based): `round(res * lacunarity^i)`.
    pub fn octave_periods(&self, i: u32) -> usize {
        let p = (self.res as f64 * self.lacunarity.powi(i as i32)).round();
        (p as usize).max(1)
    }

    /// Field size `lacunarity^(octaves-1) * res`, rounded to the nearest
    /// integer for non-integral lacunarity.
    pub fn canonical_size(&self) -> usize {
        self.octave_periods(self.octaves - 1)
    }

    /// Amplitude bound `sum_i persistence^i` of the raw octave sum.
    pub fn amplitude_bound(&self) -> f64 {
        (0..self.octaves)
            .map(|i| self.persistence.powi(i as i32))
            .sum()
    }
}

/// Seed of octave `i`. The first octave uses the field seed itself so a
/// one-octave field equals [`perlin2d`] with the same seed.
pub fn octave_seed(seed: u64, i: u32) -> u64 {
    if i == 0 {
        seed
    } else {
        mix(seed, i as u64)
    }
}

const GRADIENTS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (0.0, 1.0),
    (-FRAC_1_SQRT_2, FRAC_1_SQRT_2),
    (-1.0, 0.0),
    (-FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
    (0.0, -1.0),
    (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
];

#[inline]
fn lattice_gradient(seed: u64, ix: usize, iy: usize) -> (f64, f64) {
    let h = splitmix64(seed ^ splitmix64(((ix as u64) << 32) | iy as u64));
    GRADIENTS[(h >> 61) as usize]
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Gradient noise with `periods_x x periods_y` lattice cells stretched over the
/// raster. Unlike [`perlin2d`] the dimensions need not be multiples of the
/// periods; lattice corners then fall between pixels.
pub fn gradient_noise(
    width: usize,
    height: usize,
    periods_x: usize,
    periods_y: usize,
    seed: u64,
) -> Result<NoiseField> {
    if width == 0 || height == 0 {
        return Err(Error::param("noise field must be at least 1x1"));
    }
    if periods_x == 0 || periods_y == 0 {
        return Err(Error::param("noise periods must be >= 1"));
    }

    let mut values = vec![0.0; width * height];
    accumulate_octave(&mut values, width, height, periods_x, periods_y, seed, 1.0);
    Ok(NoiseField {
        width,
        height,
        values,
    })
}

/// `acc += amplitude * g` for one gradient-noise octave `g`.
fn accumulate_octave(
    acc: &mut [f64],
    width: usize,
    height: usize,
    periods_x: usize,
    periods_y: usize,
    seed: u64,
    amplitude: f64,
) {
    let gw = periods_x + 1;
    let grads: Vec<(f64, f64)> = (0..=periods_y)
        .flat_map(|iy| (0..=periods_x).map(move |ix| lattice_gradient(seed, ix, iy)))
        .collect();

    let coord = |i: usize, periods: usize, len: usize| -> (usize, f64) {
        let u = (i * periods) as f64 / len as f64;
        let cell = u.floor();
        (cell as usize, u - cell)
    };
    let xs: Vec<(usize, f64, f64)> = (0..width)
        .map(|i| {
            let (c, f) = coord(i, periods_x, width);
            (c, f, fade(f))
        })
        .collect();

    for (j, row) in acc.chunks_exact_mut(width).take(height).enumerate() {
        let (cy, fy) = coord(j, periods_y, height);
        let v = fade(fy);
        let top = &grads[cy * gw..(cy + 1) * gw];
        let bottom = &grads[(cy + 1) * gw..(cy + 2) * gw];
        for (a, &(cx, fx, u)) in row.iter_mut().zip(&xs) {
            let (g00, g10) = (top[cx], top[cx + 1]);
            let (g01, g11) = (bottom[cx], bottom[cx + 1]);
            let n00 = g00.0 * fx + g00.1 * fy;
            let n10 = g10.0 * (fx - 1.0) + g10.1 * fy;
            let n01 = g01.0 * fx + g01.1 * (fy - 1.0);
            let n11 = g11.0 * (fx - 1.0) + g11.1 * (fy - 1.0);
            let nx0 = n00 + u * (n10 - n00);
            let nx1 = n01 + u * (n11 - n01);
            let n = nx0 + v * (nx1 - nx0);
            *a += amplitude * (n * std::f64::consts::SQRT_2).clamp(-1.0, 1.0);
        }
    }
}

/// Single-octave Perlin noise on a pixel grid aligned with the lattice.
///
/// Values lie in `[-1, 1]` and are exactly `0` on every lattice corner.
pub fn perlin2d(
    width: usize,
    height: usize,
    periods_x: usize,
    periods_y: usize,
    seed: u64,
) -> Result<NoiseField> {
    if periods_x == 0 || periods_y == 0 {
        return Err(Error::param("noise periods must be >= 1"));
    }
    if width == 0 || height == 0 {
        return Err(Error::param("noise field must be at least 1x1"));
    }
    if width % periods_x != 0 || height % periods_y != 0 {
        return Err(Error::Dimension(format!(
            "{width}x{height} is not a multiple of {periods_x}x{periods_y} periods"
        )));
    }
    gradient_noise(width, height, periods_x, periods_y, seed)
}

/// Fractal Perlin noise: `sum_i persistence^i * g_i(x * lacunarity^i)`,
/// octave `i` drawn with [`octave_seed`].
pub fn fractal_perlin2d(
    width: usize,
    height: usize,
    params: &FractalNoiseParams,
) -> Result<NoiseField> {
    params.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::param("noise field must be at least 1x1"));
    }
    let mut acc = vec![0.0; width * height];
    let mut amplitude = 1.0;
    for i in 0..params.octaves {
        let periods = params.octave_periods(i);
        if periods > width || periods > height {
            return Err(Error::param(format!(
                "octave {i} needs {periods} periods, more than the {width}x{height} grid resolves"
            )));
        }
        accumulate_octave(
            &mut acc,
            width,
            height,
            periods,
            periods,
            octave_seed(params.seed, i),
            amplitude,
        );
        amplitude *= params.persistence;
    }
    Ok(NoiseField {
        width,
        height,
        values: acc,
    })
}

/// Min-max rescale to `[0, 1]`. Constant fields map to `0.5`.
pub fn normalize_field(field: &NoiseField) -> Result<NoiseField> {
    if field.values.is_empty() {
        return Err(Error::param("cannot normalize an empty field"));
    }
    let (lo, hi) = field.min_max();
    let span = hi - lo;
    let values = if span > 0.0 {
        field.values.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![0.5; field.values.len()]
    };
    Ok(NoiseField {
        width: field.width,
        height: field.height,
        values,
    })
}
