//! Domain-randomization strategies over the simulator parameters.
//!
//! * GDR: at each timestep pick `phi` whose data the current model scores
//!   closest to a target `k`, then continue training on it.
//! * Easy2Hard: GDR with a per-timestep target schedule.
//! * UDR: one training run on per-image uniformly drawn `phi`.
//! * BayRn: BO over `phi` where each evaluation retrains from scratch and is
//!   scored on validation data.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bayesopt::{self, vec_to_sim, BoSettings, BoTrace, ParamSpace};
use crate::compositor::{generate_dataset_with, SimParams};
use crate::error::{Error, Result};
use crate::raster::GrayImage;
use crate::seed::{self, mix, mix_all};
use crate::training::{self, DetectorParams, EvalSet, OptimizerConfig, SampleSet};

pub const DEFAULT_TARGETS: [f64; 5] = [0.3, 0.4, 0.5, 0.6, 0.7];
/// A timestep whose best `|V - k|` exceeds this is flagged.
pub const WARNING_DISTANCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Gdr,
    Udr,
    Bayrn,
    Easy2hard,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gdr" => Ok(Self::Gdr),
            "udr" => Ok(Self::Udr),
            "bayrn" => Ok(Self::Bayrn),
            "easy2hard" => Ok(Self::Easy2hard),
            _ => Err(Error::param(format!("unknown strategy {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub strategy: Strategy,
    pub target_k: f64,
    pub pacing_schedule: Vec<f64>,
    /// Number of timesteps `T`.
    pub timesteps: usize,
    pub n_init: usize,
    /// Total BO evaluations; 35 for GDR / Easy2Hard and 40 for BayRn when
    /// unset.
    pub bo_iter: Option<usize>,
    pub probe_normals: usize,
    pub replay_previous: bool,
    pub seed: u64,
    pub epochs_per_timestep: usize,
    pub epochs_full: usize,
    pub n_candidates: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Gdr,
            target_k: 0.5,
            pacing_schedule: Vec::new(),
            timesteps: 10,
            n_init: 5,
            bo_iter: None,
            probe_normals: 30,
            replay_previous: false,
            seed: 0,
            epochs_per_timestep: 40,
            epochs_full: 120,
            n_candidates: bayesopt::DEFAULT_CANDIDATES,
        }
    }
}

impl CurriculumConfig {
    pub fn bo_budget(&self) -> usize {
        self.bo_iter.unwrap_or(match self.strategy {
            Strategy::Bayrn => 40,
            _ => 35,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_k) {
            return Err(Error::param(format!("target_k={} outside [0, 1]", self.target_k)));
        }
        if self.n_init == 0 || self.n_init > self.bo_budget() {
            return Err(Error::param(format!(
                "need 1 <= n_init ({}) <= bo_iter ({})",
                self.n_init,
                self.bo_budget()
            )));
        }
        if self.probe_normals == 0 {
            return Err(Error::param("probe_normals must be >= 1"));
        }
        if self.n_candidates == 0 {
            return Err(Error::param("n_candidates must be >= 1"));
        }
        if let Some(v) = self.pacing_schedule.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param(format!("pacing_schedule value {v} outside [0, 1]")));
        }
        if self.strategy == Strategy::Easy2hard && self.pacing_schedule.len() != self.timesteps {
            return Err(Error::param(format!(
                "pacing_schedule has {} entries for T={}",
                self.pacing_schedule.len(),
                self.timesteps
            )));
        }
        Ok(())
    }

    /// Target per timestep for the targeted strategies.
    pub fn targets(&self) -> Vec<f64> {
        match self.strategy {
            Strategy::Easy2hard => self.pacing_schedule.clone(),
            _ => vec![self.target_k; self.timesteps],
        }
    }
}

/// How the simulator parameters of a training set are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiChoice {
    Fixed(SimParams),
    /// Independent uniform draw per image.
    Uniform,
}

/// `n` independent uniform parameter draws, draw `i` seeded by `(seed, i)`.
pub fn uniform_draws(n: usize, seed: u64) -> Vec<SimParams> {
    (0..n)
        .map(|i| SimParams::sample_uniform(&mut seed::rng(mix(seed, i as u64))))
        .collect()
}

/// What a curriculum needs from the simulator and the learner.
pub trait Environment {
    type Data;

    /// Performance of `params` on a fresh probe set generated with `phi`.
    fn probe(&self, params: &DetectorParams, phi: &SimParams, seed: u64) -> Result<f64>;

    fn training_data(&self, phi: &PhiChoice, seed: u64) -> Result<Self::Data>;

    fn train(
        &self,
        params0: &DetectorParams,
        data: &[&Self::Data],
        epochs: usize,
        seed: u64,
    ) -> Result<DetectorParams>;

    fn validate(&self, params: &DetectorParams) -> Result<f64>;

    /// Training loss on an earlier data set, for forgetting scores.
    fn data_loss(&self, params: &DetectorParams, data: &Self::Data) -> Result<f64>;
}

/// Simulated abnormal images over phantom (or loaded) normals, learned by the
/// toy detector.
#[derive(Debug, Clone)]
pub struct PhantomEnv {
    pub normals: Vec<GrayImage>,
    pub probe_normals: usize,
    pub val: EvalSet,
    pub optimizer: OptimizerConfig,
    pub lesions_per_image: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomData {
    pub phis: Vec<SimParams>,
    pub samples: SampleSet,
}

impl PhantomEnv {
    pub fn new(
        normals: Vec<GrayImage>,
        probe_normals: usize,
        val: EvalSet,
        optimizer: OptimizerConfig,
    ) -> Result<Self> {
        if normals.is_empty() {
            return Err(Error::param("no normal images"));
        }
        if probe_normals == 0 || probe_normals > normals.len() {
            return Err(Error::param(format!(
                "probe_normals={probe_normals} with {} normals",
                normals.len()
            )));
        }
        if val.gts.iter().flatten().all(|b| !b.evaluable) {
            return Err(Error::MetricUndefined(
                "validation set has no evaluable ground truth".into(),
            ));
        }
        optimizer.validate()?;
        Ok(Self {
            normals,
            probe_normals,
            val,
            optimizer,
            lesions_per_image: 1,
        })
    }
}

impl Environment for PhantomEnv {
    type Data = PhantomData;

    fn probe(&self, params: &DetectorParams, phi: &SimParams, seed: u64) -> Result<f64> {
        let probe = &self.normals[..self.probe_normals];
        let ds = generate_dataset_with(probe, |_| *phi, self.lesions_per_image, seed)?;
        EvalSet::new(&ds).performance(params)
    }

    fn training_data(&self, phi: &PhiChoice, seed: u64) -> Result<PhantomData> {
        let phis = match phi {
            PhiChoice::Fixed(p) => vec![*p; self.normals.len()],
            PhiChoice::Uniform => uniform_draws(self.normals.len(), mix(seed, 0)),
        };
        let ds = generate_dataset_with(
            &self.normals,
            |i| phis[i],
            self.lesions_per_image,
            mix(seed, 1),
        )?;
        let samples = training::sample_windows(&ds, mix(seed, 2))?;
        Ok(PhantomData { phis, samples })
    }

    fn train(
        &self,
        params0: &DetectorParams,
        data: &[&PhantomData],
        epochs: usize,
        seed: u64,
    ) -> Result<DetectorParams> {
        let mut samples = SampleSet::default();
        for d in data {
            samples.extend(&d.samples);
        }
        let cfg = OptimizerConfig {
            epochs,
            seed,
            ..self.optimizer
        };
        Ok(training::train(params0, &samples, &self.val, &cfg)?.params)
    }

    fn validate(&self, params: &DetectorParams) -> Result<f64> {
        self.val.performance(params)
    }

    fn data_loss(&self, params: &DetectorParams, data: &PhantomData) -> Result<f64> {
        training::loss(params, &data.samples)
    }
}

/// Detector-free environment for exercising the strategies: probe V is a
/// caller-supplied function of `phi`, training writes the normalized `phi`
/// into the first five weights and bumps the bias, validation is another
/// caller-supplied function of the parameters.
pub struct StubEnv<F, G> {
    pub probe_fn: F,
    pub val_fn: G,
}

impl<F, G> Environment for StubEnv<F, G>
where
    F: Fn(&SimParams) -> f64,
    G: Fn(&DetectorParams) -> f64,
{
    type Data = Vec<f64>;

    fn probe(&self, _params: &DetectorParams, phi: &SimParams, _seed: u64) -> Result<f64> {
        Ok((self.probe_fn)(phi))
    }

    fn training_data(&self, phi: &PhiChoice, seed: u64) -> Result<Vec<f64>> {
        let p = match phi {
            PhiChoice::Fixed(p) => *p,
            PhiChoice::Uniform => uniform_draws(1, seed)[0],
        };
        ParamSpace::simulator().normalize_sim(&p)
    }

    fn train(
        &self,
        params0: &DetectorParams,
        data: &[&Vec<f64>],
        _epochs: usize,
        _seed: u64,
    ) -> Result<DetectorParams> {
        let mut p = params0.clone();
        if let Some(last) = data.last() {
            p.weights[..last.len()].copy_from_slice(last);
        }
        p.bias += 1.0;
        Ok(p)
    }

    fn validate(&self, params: &DetectorParams) -> Result<f64> {
        Ok((self.val_fn)(params))
    }

    fn data_loss(&self, params: &DetectorParams, data: &Vec<f64>) -> Result<f64> {
        Ok(0.5
            * params
                .weights
                .iter()
                .zip(data)
                .map(|(w, y)| (w - y) * (w - y))
                .sum::<f64>())
    }
}

/// Normalized persistence, the stub probe used in tests and docs.
pub fn normalized_persistence(phi: &SimParams) -> f64 {
    (phi.persistence - SimParams::PERSISTENCE.0) / (SimParams::PERSISTENCE.1 - SimParams::PERSISTENCE.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimestepRecord {
    /// 1-based timestep (BayRn: 1-based BO evaluation).
    pub t: usize,
    pub target_k: Option<f64>,
    pub phi: Option<SimParams>,
    pub probe_v: Option<f64>,
    /// `-|V - k|` of the chosen `phi`.
    pub distance: Option<f64>,
    pub val_v: f64,
    /// Forgetting against timesteps `1..t`.
    pub forgetting: Vec<f64>,
    pub warning: bool,
    pub probe_evaluations: usize,
    /// Hash of the parameters training started from.
    pub init_hash: String,
    /// Hash of the parameters after this record.
    pub checkpoint_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurriculumTrace {
    pub strategy: Strategy,
    pub records: Vec<TimestepRecord>,
}

const PHI_COLUMNS: [&str; 5] = [
    "phi_persistence",
    "phi_lacunarity",
    "phi_res",
    "phi_alpha",
    "phi_beta",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl CurriculumTrace {
    pub fn n_forget_columns(&self) -> usize {
        self.records.iter().map(|r| r.forgetting.len()).max().unwrap_or(0)
    }

    /// CSV `t,phi_*,probe_V,distance,val_V,forget_1..forget_n`; absent values
    /// are empty fields.
    pub fn to_csv(&self) -> String {
        let nf = self.n_forget_columns();
        let mut out = String::from("t");
        for c in PHI_COLUMNS {
            let _ = write!(out, ",{c}");
        }
        out.push_str(",probe_V,distance,val_V");
        for j in 1..=nf {
            let _ = write!(out, ",forget_{j}");
        }
        out.push('\n');
        for r in &self.records {
            let _ = write!(out, "{}", r.t);
            match &r.phi {
                Some(p) => {
                    for v in bayesopt::sim_to_vec(p) {
                        let _ = write!(out, ",{v}");
                    }
                }
                None => out.push_str(",,,,,"),
            }
            let _ = write!(out, ",{},{},{}", opt(r.probe_v), opt(r.distance), r.val_v);
            for j in 0..nf {
                let _ = write!(out, ",{}", opt(r.forgetting.get(j).copied()));
            }
            out.push('\n');
        }
        out
    }
}

/// One row of a trace CSV as read back.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub phi: Option<SimParams>,
    pub probe_v: Option<f64>,
    pub distance: Option<f64>,
    pub val_v: f64,
    pub forgetting: Vec<f64>,
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::DataShape("empty trace".into()))?
        .split(',')
        .collect();
    let fixed = ["t"]
        .iter()
        .chain(PHI_COLUMNS.iter())
        .chain(["probe_V", "distance", "val_V"].iter())
        .copied()
        .collect::<Vec<_>>();
    if header.len() < fixed.len() || header[..fixed.len()] != fixed[..] {
        return Err(Error::DataShape("trace header mismatch".into()));
    }
    for (j, c) in header[fixed.len()..].iter().enumerate() {
        if *c != format!("forget_{}", j + 1) {
            return Err(Error::DataShape(format!("unexpected trace column {c:?}")));
        }
    }
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::DataShape(format!("bad trace row {line:?}"));
        if f.len() != header.len() {
            return Err(bad());
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        let phi = if f[1].is_empty() {
            None
        } else {
            let v = f[1..6]
                .iter()
                .map(|s| num(s)?.ok_or_else(bad))
                .collect::<Result<Vec<_>>>()?;
            Some(vec_to_sim(&v)?)
        };
        let mut forgetting = Vec::new();
        for s in &f[9..] {
            match num(s)? {
                Some(v) => forgetting.push(v),
                None => break,
            }
        }
        rows.push(TraceRow {
            t: f[0].parse().map_err(|_| bad())?,
            phi,
            probe_v: num(f[6])?,
            distance: num(f[7])?,
            val_v: num(f[8])?.ok_or_else(bad)?,
            forgetting,
        });
    }
    Ok(rows)
}

/// Final parameters plus everything needed to audit the run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub params: DetectorParams,
    pub trace: CurriculumTrace,
    /// One checkpoint per timestep (BayRn / UDR: the returned model).
    pub checkpoints: Vec<DetectorParams>,
    /// The BO run of each timestep (BayRn: a single run).
    pub bo_traces: Vec<BoTrace>,
}

/// GDR with target `k` at every timestep.
pub fn run_gdr<E: Environment>(
    config: &CurriculumConfig,
    env: &E,
    detector0: &DetectorParams,
) -> Result<RunOutcome> {
    if config.strategy != Strategy::Gdr {
        return Err(Error::param("run_gdr needs strategy = gdr"));
    }
    config.validate()?;
    run_targeted(config, env, detector0, &config.targets(), Strategy::Gdr)
}

/// GDR with the pacing schedule as per-timestep target.
pub fn run_easy2hard<E: Environment>(
    config: &CurriculumConfig,
    env: &E,
    detector0: &DetectorParams,
) -> Result<RunOutcome> {
    if config.strategy != Strategy::Easy2hard {
        return Err(Error::param("run_easy2hard needs strategy = easy2hard"));
    }
    config.validate()?;
    run_targeted(config, env, detector0, &config.targets(), Strategy::Easy2hard)
}

fn run_targeted<E: Environment>(
    config: &CurriculumConfig,
    env: &E,
    detector0: &DetectorParams,
    targets: &[f64],
    strategy: Strategy,
) -> Result<RunOutcome> {
    let space = ParamSpace::simulator();
    let mut theta = detector0.clone();
    let mut records = Vec::with_capacity(targets.len());
    let mut checkpoints: Vec<DetectorParams> = Vec::new();
    let mut datasets: Vec<E::Data> = Vec::new();
    let mut bo_traces = Vec::new();
    for (ti, &k) in targets.iter().enumerate() {
        let t = ti as u64 + 1;
        let mut probe_vs = Vec::with_capacity(config.bo_budget());
        let settings = BoSettings {
            n_init: config.n_init,
            total: config.bo_budget(),
            n_candidates: config.n_candidates,
            seed: mix_all(config.seed, &[t, 0]),
        };
        let bo = bayesopt::maximize(&space, &settings, |x, iter| {
            let phi = vec_to_sim(x)?;
            let v = env.probe(&theta, &phi, mix_all(config.seed, &[t, iter as u64, 1]))?;
            probe_vs.push(v);
            Ok(-(v - k).abs())
        })?;
        let best = bo.best().expect("BO budget is at least one evaluation");
        let phi = vec_to_sim(&best.params)?;
        let probe_v = probe_vs[best.iter];
        let distance = best.objective;

        let data = env.training_data(&PhiChoice::Fixed(phi), mix_all(config.seed, &[t, 2]))?;
        let next = {
            let mut batch: Vec<&E::Data> = Vec::new();
            if config.replay_previous {
                batch.extend(datasets.iter());
            }
            batch.push(&data);
            env.train(
                &theta,
                &batch,
                config.epochs_per_timestep,
                mix_all(config.seed, &[t, 3]),
            )?
        };
        let val_v = env.validate(&next)?;
        let forgetting = datasets
            .iter()
            .zip(&checkpoints)
            .map(|(d, prev)| {
                let f = env.data_loss(&next, d)? - env.data_loss(prev, d)?;
                if f.is_finite() {
                    Ok(f)
                } else {
                    Err(Error::Numerical(format!("non-finite forgetting at t={t}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(TimestepRecord {
            t: t as usize,
            target_k: Some(k),
            phi: Some(phi),
            probe_v: Some(probe_v),
            distance: Some(distance),
            val_v,
            forgetting,
            warning: -distance > WARNING_DISTANCE,
            probe_evaluations: bo.records.len(),
            init_hash: theta.hash(),
            checkpoint_hash: next.hash(),
        });
        theta = next;
        checkpoints.push(theta.clone());
        datasets.push(data);
        bo_traces.push(bo);
    }
    Ok(RunOutcome {
        params: theta,
        trace: CurriculumTrace { strategy, records },
        checkpoints,
        bo_traces,
    })
}

/// One training run on per-image uniformly randomized data.
pub fn run_udr<E: Environment>(
    config: &CurriculumConfig,
    env: &E,
    detector0: &DetectorParams,
) -> Result<RunOutcome> {
    if config.strategy != Strategy::Udr {
        return Err(Error::param("run_udr needs strategy = udr"));
    }
    let data = env.training_data(&PhiChoice::Uniform, mix_all(config.seed, &[1, 2]))?;
    let params = env.train(
        detector0,
        &[&data],
        config.epochs_full,
        mix_all(config.seed, &[1, 3]),
    )?;
    let val_v = env.validate(&params)?;
    let record = TimestepRecord {
        t: 1,
        target_k: None,
        phi: None,
        probe_v: None,
        distance: None,
        val_v,
        forgetting: Vec::new(),
        warning: false,
        probe_evaluations: 0,
        init_hash: detector0.hash(),
        checkpoint_hash: params.hash(),
    };
    Ok(RunOutcome {
        params: params.clone(),
        trace: CurriculumTrace {
            strategy: Strategy::Udr,
            records: vec![record],
        },
        checkpoints: vec![params],
        bo_traces: Vec::new(),
    })
}

/// Bilevel BO: every evaluation trains from `detector0` on data generated
/// with the queried `phi` and scores validation performance.
pub fn run_bayrn<E: Environment>(
    config: &CurriculumConfig,
    env: &E,
    detector0: &DetectorParams,
) -> Result<RunOutcome> {
    if config.strategy != Strategy::Bayrn {
        return Err(Error::param("run_bayrn needs strategy = bayrn"));
    }
    config.validate()?;
    let space = ParamSpace::simulator();
    let settings = BoSettings {
        n_init: config.n_init,
        total: config.bo_budget(),
        n_candidates: config.n_candidates,
        seed: mix(config.seed, 0),
    };
    let mut models = Vec::with_capacity(settings.total);
    let init_hash = detector0.hash();
    let bo = bayesopt::maximize(&space, &settings, |x, iter| {
        let phi = vec_to_sim(x)?;
        let it = iter as u64;
        let data = env.training_data(&PhiChoice::Fixed(phi), mix_all(config.seed, &[0, it, 2]))?;
        let model = env.train(
            detector0,
            &[&data],
            config.epochs_full,
            mix_all(config.seed, &[0, it, 3]),
        )?;
        let v = env.validate(&model)?;
        models.push(model);
        Ok(v)
    })?;
    let records = bo
        .records
        .iter()
        .map(|r| {
            Ok(TimestepRecord {
                t: r.iter + 1,
                target_k: None,
                phi: Some(vec_to_sim(&r.params)?),
                probe_v: None,
                distance: None,
                val_v: r.objective,
                forgetting: Vec::new(),
                warning: false,
                probe_evaluations: 0,
                init_hash: init_hash.clone(),
                checkpoint_hash: models[r.iter].hash(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = bo.best().expect("BO budget is at least one evaluation").iter;
    let params = models.swap_remove(best);
    Ok(RunOutcome {
        params: params.clone(),
        trace: CurriculumTrace {
            strategy: Strategy::Bayrn,
            records,
        },
        checkpoints: vec![params],
        bo_traces: vec![bo],
    })
}

/// Dispatch on `config.strategy`.
pub fn run<E: Environment>(
    config: &CurriculumConfig,
    env: &E,
    detector0: &DetectorParams,
) -> Result<RunOutcome> {
    match config.strategy {
        Strategy::Gdr => run_gdr(config, env, detector0),
        Strategy::Easy2hard => run_easy2hard(config, env, detector0),
        Strategy::Udr => run_udr(config, env, detector0),
        Strategy::Bayrn => run_bayrn(config, env, detector0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaChoice {
    /// Index into the candidate runs.
    pub run: usize,
    pub k: f64,
    /// 1-based timestep.
    pub t: usize,
    pub score: f64,
}

/// Argmax over `(k, per-timestep scores)`; ties go to the smaller `t`, then
/// the smaller `k`.
pub fn meta_select(scores: &[(f64, Vec<f64>)]) -> Result<MetaChoice> {
    let mut best: Option<MetaChoice> = None;
    for (run, (k, s)) in scores.iter().enumerate() {
        for (ti, &v) in s.iter().enumerate() {
            let c = MetaChoice {
                run,
                k: *k,
                t: ti + 1,
                score: v,
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    v > b.score || (v == b.score && (c.t < b.t || (c.t == b.t && c.k < b.k)))
                }
            };
            if better {
                best = Some(c);
            }
        }
    }
    best.ok_or_else(|| Error::param("meta-validation needs at least one checkpoint"))
}

/// Score every checkpoint of every run on held-out data and pick the best.
pub fn meta_validate(runs: &[(f64, Vec<DetectorParams>)], rare_val: &EvalSet) -> Result<MetaChoice> {
    let scores = runs
        .iter()
        .map(|(k, cps)| {
            Ok((
                *k,
                cps.iter()
                    .map(|p| rare_val.performance(p))
                    .collect::<Result<Vec<_>>>()?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    meta_select(&scores)
}
