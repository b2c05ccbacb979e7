//! Gaussian-process Bayesian optimization on the unit hypercube.
//!
//! Simulator parameters are mapped linearly onto `[0, 1]^d`. A zero-mean GP
//! with the squared-exponential kernel `exp(-gamma/2 |a - b|^2)` (fixed
//! `gamma = 0.25`) models the centered objective; the next query maximizes
//! expected improvement over a Latin-hypercube candidate set.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::compositor::SimParams;
use crate::error::{Error, Result};
use crate::linalg::{backward_sub, cholesky, forward_sub};
use crate::seed::{self, mix};

/// Fixed SE kernel parameter.
pub const DEFAULT_GAMMA: f64 = 0.25;
/// Diagonal jitter keeping the kernel matrix positive definite.
pub const DEFAULT_JITTER: f64 = 1e-6;
/// Size of the LHS candidate set searched for the acquisition maximum.
pub const DEFAULT_CANDIDATES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Dimension {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub discrete: bool,
}

/// Ordered box of tunable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpace {
    pub dims: Vec<Dimension>,
}

impl ParamSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        for d in &dims {
            let ok = if d.discrete {
                d.lower <= d.upper && d.lower.fract() == 0.0 && d.upper.fract() == 0.0
            } else {
                d.lower < d.upper
            };
            if !ok || !d.lower.is_finite() || !d.upper.is_finite() {
                return Err(Error::param(format!(
                    "invalid bounds [{}, {}] for {}",
                    d.lower, d.upper, d.name
                )));
            }
        }
        Ok(Self { dims })
    }

    /// The five simulator parameters in the order persistence, lacunarity,
    /// res, alpha, beta.
    pub fn simulator() -> Self {
        let dim = |name: &str, (lower, upper): (f64, f64), discrete| Dimension {
            name: name.to_string(),
            lower,
            upper,
            discrete,
        };
        Self {
            dims: vec![
                dim("persistence", SimParams::PERSISTENCE, false),
                dim("lacunarity", SimParams::LACUNARITY, false),
                dim(
                    "res",
                    (SimParams::RES.0 as f64, SimParams::RES.1 as f64),
                    true,
                ),
                dim("alpha", SimParams::ALPHA, false),
                dim("beta", SimParams::BETA, false),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// `y = (x - l) / (u - l)` per dimension.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dims.len() {
            return Err(Error::Dimension(format!(
                "{} values for a {}-dimensional space",
                x.len(),
                self.dims.len()
            )));
        }
        self.dims
            .iter()
            .zip(x)
            .map(|(d, &v)| {
                if !(d.lower..=d.upper).contains(&v) {
                    return Err(Error::param(format!(
                        "{}={v} outside [{}, {}]",
                        d.name, d.lower, d.upper
                    )));
                }
                Ok(if d.upper > d.lower {
                    (v - d.lower) / (d.upper - d.lower)
                } else {
                    0.0
                })
            })
            .collect()
    }

    /// `x = l + (u - l) y`; discrete dimensions use `floor(l + (u - l + 1) y)`
    /// clamped to `u`.
    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(y)
            .map(|(d, &v)| {
                let v = v.clamp(0.0, 1.0);
                if d.discrete {
                    (d.lower + (d.upper - d.lower + 1.0) * v).floor().min(d.upper)
                } else {
                    d.lower + (d.upper - d.lower) * v
                }
            })
            .collect()
    }

    pub fn normalize_sim(&self, phi: &SimParams) -> Result<Vec<f64>> {
        self.normalize(&sim_to_vec(phi))
    }

    pub fn denormalize_sim(&self, y: &[f64]) -> Result<SimParams> {
        vec_to_sim(&self.denormalize(y))
    }
}

pub fn sim_to_vec(phi: &SimParams) -> Vec<f64> {
    vec![
        phi.persistence,
        phi.lacunarity,
        phi.res as f64,
        phi.alpha,
        phi.beta,
    ]
}

pub fn vec_to_sim(x: &[f64]) -> Result<SimParams> {
    if x.len() != 5 {
        return Err(Error::Dimension(format!(
            "simulator parameters need 5 values, got {}",
            x.len()
        )));
    }
    Ok(SimParams {
        persistence: x[0],
        lacunarity: x[1],
        res: x[2] as u32,
        alpha: x[3],
        beta: x[4],
    })
}

/// `exp(-(gamma / 2) * sum_j (a_j - b_j)^2)`.
pub fn se_kernel(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * gamma * sq).exp()
}

/// Observations in normalized coordinates plus kernel settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GpState {
    pub observations: Vec<(Vec<f64>, f64)>,
    pub gamma: f64,
    pub noise_jitter: f64,
}

impl Default for GpState {
    fn default() -> Self {
        Self::new()
    }
}

impl GpState {
    pub fn new() -> Self {
        Self {
            observations: Vec::new(),
            gamma: DEFAULT_GAMMA,
            noise_jitter: DEFAULT_JITTER,
        }
    }

    pub fn observe(&mut self, point: Vec<f64>, objective: f64) -> Result<()> {
        if point.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("GP observations must lie in [0, 1]^d"));
        }
        if !objective.is_finite() {
            return Err(Error::Numerical(format!("non-finite objective {objective}")));
        }
        if let Some((p, _)) = self.observations.first() {
            if p.len() != point.len() {
                return Err(Error::Dimension("observation dimensionality changed".into()));
            }
        }
        self.observations.push((point, objective));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Incumbent: first observation with the maximal objective.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.observations
            .iter()
            .enumerate()
            .fold(None, |acc, (i, (_, f))| match acc {
                Some((_, b)) if *f <= b => acc,
                _ => Some((i, *f)),
            })
    }
}

/// A GP conditioned on a [`GpState`], ready for repeated prediction.
#[derive(Debug, Clone)]
pub struct GpPosterior {
    points: Vec<Vec<f64>>,
    chol: Vec<f64>,
    weights: Vec<f64>,
    mean: f64,
    best: f64,
    gamma: f64,
    jitter: f64,
}

impl GpPosterior {
    pub fn fit(state: &GpState) -> Result<Self> {
        let n = state.len();
        if n == 0 {
            return Err(Error::param("GP posterior needs at least one observation"));
        }
        let points: Vec<Vec<f64>> = state.observations.iter().map(|(p, _)| p.clone()).collect();
        let ys: Vec<f64> = state.observations.iter().map(|(_, f)| *f).collect();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] = se_kernel(&points[i], &points[j], state.gamma);
            }
            k[i * n + i] += state.noise_jitter;
        }
        let chol = cholesky(&k, n)?;
        let centered: Vec<f64> = ys.iter().map(|y| y - mean).collect();
        let weights = backward_sub(&chol, n, &forward_sub(&chol, n, &centered));
        Ok(Self {
            points,
            chol,
            weights,
            mean,
            best: state.best().map(|(_, f)| f).unwrap_or(mean),
            gamma: state.gamma,
            jitter: state.noise_jitter,
        })
    }

    /// Posterior `(mean, variance)` at `query`.
    pub fn predict(&self, query: &[f64]) -> (f64, f64) {
        let n = self.points.len();
        let kstar: Vec<f64> = self
            .points
            .iter()
            .map(|p| se_kernel(p, query, self.gamma))
            .collect();
        let mu = self.mean + kstar.iter().zip(&self.weights).map(|(k, w)| k * w).sum::<f64>();
        let v = forward_sub(&self.chol, n, &kstar);
        let var = (1.0 - v.iter().map(|x| x * x).sum::<f64>()).max(0.0);
        (mu, var)
    }

    pub fn incumbent(&self) -> f64 {
        self.best
    }

    /// Expected improvement at `query`. Zero where the posterior variance is
    /// at the jitter level, i.e. where the posterior is deterministic.
    pub fn expected_improvement(&self, query: &[f64]) -> f64 {
        let (mu, var) = self.predict(query);
        if var <= 2.0 * self.jitter {
            return 0.0;
        }
        ei_closed_form(mu, var.sqrt(), self.best)
    }
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `sigma (z Phi(z) + phi(z))` with `z = (mu - best) / sigma`; zero for
/// `sigma = 0`.
pub fn ei_closed_form(mu: f64, sigma: f64, best: f64) -> f64 {
    if !(sigma > 0.0) {
        return 0.0;
    }
    let z = (mu - best) / sigma;
    (sigma * (z * norm_cdf(z) + norm_pdf(z))).max(0.0)
}

pub fn gp_posterior(state: &GpState, query: &[f64]) -> Result<(f64, f64)> {
    Ok(GpPosterior::fit(state)?.predict(query))
}

pub fn expected_improvement(state: &GpState, query: &[f64]) -> Result<f64> {
    Ok(GpPosterior::fit(state)?.expected_improvement(query))
}

/// `n` points in `[0, 1)^d`, one per stratum `[i/n, (i+1)/n)` in every
/// dimension, with independent stratum permutations per dimension.
pub fn latin_hypercube(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed);
    let mut points = vec![vec![0.0; d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for j in 0..d {
        strata.shuffle(&mut rng);
        for (i, p) in points.iter_mut().enumerate() {
            let u: f64 = rng.random();
            p[j] = ((strata[i] as f64 + u) / n as f64).min(1.0 - f64::EPSILON);
        }
    }
    points
}

/// Index of the candidate with the largest EI, first index on ties.
pub fn propose_from(state: &GpState, candidates: &[Vec<f64>]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::param("no acquisition candidates"));
    }
    let post = GpPosterior::fit(state)?;
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|c| post.expected_improvement(c))
        .collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Next query: EI maximum over an LHS candidate set.
pub fn propose_next(state: &GpState, n_candidates: usize, seed: u64) -> Result<Vec<f64>> {
    let dim = state
        .observations
        .first()
        .map(|(p, _)| p.len())
        .ok_or_else(|| Error::param("propose_next needs at least one observation"))?;
    let candidates = latin_hypercube(n_candidates.max(1), dim, seed);
    let i = propose_from(state, &candidates)?;
    Ok(candidates[i].clone())
}

/// One evaluated query.
#[derive(Debug, Clone, PartialEq)]
pub struct BoRecord {
    pub iter: usize,
    pub point: Vec<f64>,
    /// `point` mapped back into parameter units.
    pub params: Vec<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoTrace {
    pub names: Vec<String>,
    pub records: Vec<BoRecord>,
}

impl BoTrace {
    /// First record with the maximal objective.
    pub fn best(&self) -> Option<&BoRecord> {
        self.records.iter().fold(None, |acc, r| match acc {
            Some(b) if r.objective <= b.objective => acc,
            _ => Some(r),
        })
    }

    /// CSV `iter,phi_<name>...,objective`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter");
        for n in &self.names {
            let _ = write!(out, ",phi_{n}");
        }
        out.push_str(",objective\n");
        for r in &self.records {
            let _ = write!(out, "{}", r.iter);
            for v in &r.params {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", r.objective);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::DataShape("empty BO trace".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "iter" || cols[cols.len() - 1] != "objective" {
            return Err(Error::DataShape("BO trace header mismatch".into()));
        }
        let names = cols[1..cols.len() - 1]
            .iter()
            .map(|c| {
                c.strip_prefix("phi_")
                    .map(str::to_string)
                    .ok_or_else(|| Error::DataShape(format!("bad column {c:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut records = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::DataShape(format!("bad BO trace row {line:?}")));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::DataShape(format!("bad number {s:?}")))
            };
            records.push(BoRecord {
                iter: f[0]
                    .parse()
                    .map_err(|_| Error::DataShape(format!("bad iter {:?}", f[0])))?,
                point: Vec::new(),
                params: f[1..f.len() - 1].iter().map(|s| num(s)).collect::<Result<_>>()?,
                objective: num(f[f.len() - 1])?,
            });
        }
        Ok(Self { names, records })
    }
}

/// Budget of one BO run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoSettings {
    pub n_init: usize,
    pub total: usize,
    pub n_candidates: usize,
    pub seed: u64,
}

/// Maximize `objective` over `space`: `n_init` LHS queries, then EI proposals
/// until `total` evaluations. The objective receives the query in parameter
/// units and its 0-based evaluation index.
pub fn maximize<F>(space: &ParamSpace, settings: &BoSettings, mut objective: F) -> Result<BoTrace>
where
    F: FnMut(&[f64], usize) -> Result<f64>,
{
    if settings.n_init == 0 || settings.n_init > settings.total {
        return Err(Error::param(format!(
            "need 1 <= n_init ({}) <= total ({})",
            settings.n_init, settings.total
        )));
    }
    let mut state = GpState::new();
    let mut trace = BoTrace {
        names: space.dims.iter().map(|d| d.name.clone()).collect(),
        records: Vec::with_capacity(settings.total),
    };
    let init = latin_hypercube(settings.n_init, space.len(), mix(settings.seed, 0));
    for iter in 0..settings.total {
        let point = if iter < settings.n_init {
            init[iter].clone()
        } else {
            propose_next(&state, settings.n_candidates, mix(settings.seed, iter as u64))?
        };
        let params = space.denormalize(&point);
        let f = objective(&params, iter)?;
        state.observe(point.clone(), f)?;
        trace.records.push(BoRecord {
            iter,
            point,
            params,
            objective: f,
        });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        let s = ParamSpace::simulator();
        let y = s.normalize(&[0.6, 2.0, 5.0, 0.8, 0.1]).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-15);
        assert_eq!(y[1], 0.0);
        assert_eq!(y[2], 1.0);
        assert_eq!(y[3], 1.0);
        assert_eq!(y[4], 0.0);
        assert!(s.normalize(&[0.1, 2.0, 3.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn denormalize_discrete_floor() {
        let s = ParamSpace::simulator();
        let x = s.denormalize(&[0.0, 0.0, 0.5, 0.0, 0.0]);
        assert_eq!(x[2], 4.0);
        let x = s.denormalize(&[0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(x[2], 5.0);
        assert_eq!(x[0], 0.2);
        for r in 2..=5 {
            let y = s.normalize(&[0.5, 3.0, r as f64, 0.5, 0.5]).unwrap();
            assert_eq!(s.denormalize(&y)[2], r as f64);
        }
    }

    #[test]
    fn kernel_values() {
        assert_eq!(se_kernel(&[0.3, 0.1], &[0.3, 0.1], DEFAULT_GAMMA), 1.0);
        assert!((se_kernel(&[0.0], &[2.0], 0.25) - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn interpolates_observations() {
        let mut st = GpState::new();
        st.observe(vec![0.1, 0.2], 1.5).unwrap();
        st.observe(vec![0.8, 0.4], -0.3).unwrap();
        st.observe(vec![0.5, 0.9], 0.7).unwrap();
        let post = GpPosterior::fit(&st).unwrap();
        for (p, f) in &st.observations {
            let (m, v) = post.predict(p);
            assert!((m - f).abs() < 1e-3, "{m} vs {f}");
            assert!(v <= 2.0 * st.noise_jitter);
        }
    }

    #[test]
    fn far_query_reverts_to_mean() {
        let mut st = GpState::new();
        st.observe(vec![0.0], 2.0).unwrap();
        st.gamma = 0.25;
        // kernel at distance 10 is exp(-12.5) < 1e-5
        assert!(se_kernel(&[0.0], &[10.0], st.gamma) < 1e-5);
        let (m, v) = gp_posterior(&st, &[10.0]).unwrap();
        assert!((m - 2.0).abs() < 1e-9);
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ei_closed_form_values() {
        assert!((ei_closed_form(0.0, 1.0, 0.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert_eq!(ei_closed_form(1.0, 0.0, 0.0), 0.0);
        let mut st = GpState::new();
        st.observe(vec![0.5], 1.0).unwrap();
        st.observe(vec![0.9], 0.2).unwrap();
        assert_eq!(expected_improvement(&st, &[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn lhs_strata() {
        let pts = latin_hypercube(4, 1, 3);
        let mut q: Vec<usize> = pts.iter().map(|p| (p[0] * 4.0) as usize).collect();
        q.sort();
        assert_eq!(q, vec![0, 1, 2, 3]);
        let one = latin_hypercube(1, 3, 0);
        assert_eq!(one.len(), 1);
        assert!(one[0].iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(latin_hypercube(10, 2, 5), latin_hypercube(10, 2, 5));
    }

    #[test]
    fn explores_away_from_single_datum() {
        let mut st = GpState::new();
        st.observe(vec![0.2, 0.2], 0.5).unwrap();
        let cands = vec![vec![0.2, 0.2], vec![0.9, 0.95]];
        assert_eq!(propose_from(&st, &cands).unwrap(), 1);
    }

    #[test]
    fn errors_without_observations() {
        let st = GpState::new();
        assert!(gp_posterior(&st, &[0.1]).is_err());
        assert!(propose_next(&st, 10, 0).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let space = ParamSpace::simulator();
        let settings = BoSettings {
            n_init: 3,
            total: 5,
            n_candidates: 50,
            seed: 1,
        };
        let trace = maximize(&space, &settings, |x, _| Ok(-(x[0] - 0.6).abs())).unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with(
            "iter,phi_persistence,phi_lacunarity,phi_res,phi_alpha,phi_beta,objective\n"
        ));
        let back = BoTrace::from_csv(&csv).unwrap();
        assert_eq!(back.records.len(), 5);
        for (a, b) in back.records.iter().zip(&trace.records) {
            assert_eq!(a.params, b.params);
            assert_eq!(a.objective, b.objective);
        }
    }
}
