//! Gradient-matching inversion attacks.
//!
//! The attacker holds the model, the defended gradient `y` and the mask, and optimises
//! a dummy input (plus a dummy soft label unless the true label is known) so that the
//! dummy gradient matches `y` on the unencrypted coordinates.
//!
//! The objective gradient needs `J_Rᵀ v` with `J_R = R ∇_x g(x)`. Since
//! `(P v)ᵀ g(x) = d/dε L(x, θ + ε P v)` at `ε = 0`, that product equals the directional
//! derivative of `∇_x L` along `P v` in parameter space, taken here by central
//! differences. Two extra backward passes per step replace a full `D x m` Jacobian.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::bounds::{bound_curve, BoundCurveConfig, PriorInfo};
use crate::defense::{apply_defense, restrict, select_mask, DefendedGradient, MaskStrategy};
use crate::error::{Error, Result};
use crate::nn::{DataSample, LossKind, ModelSpec, ParameterVector, Target};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Squared Euclidean distance on unencrypted coordinates.
    L2,
    /// `1 - cos(dummy, observed)` on unencrypted coordinates.
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Use the ground-truth target.
    Known,
    /// Optimise a dummy label (softmax logits for cross-entropy, raw targets for
    /// squared error).
    Optimize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub objective: Objective,
    pub iterations: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub init_scale: f64,
    pub labels: LabelMode,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            objective: Objective::L2,
            iterations: 2000,
            step_size: 0.05,
            restarts: 4,
            init_scale: 1.0,
            labels: LabelMode::Optimize,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::validation("iterations", "must be >= 1"));
        }
        if self.restarts == 0 {
            return Err(Error::validation("restarts", "must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::validation("step_size", "must be > 0"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::validation("init_scale", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub reconstruction: Vec<f64>,
    pub objective: f64,
    /// Objective after every iteration of the best restart.
    pub trace: Vec<f64>,
    /// One trace per restart; aborted restarts stop early.
    pub restart_traces: Vec<Vec<f64>>,
    pub mse: Option<f64>,
    pub best_restart: usize,
    pub aborted_restarts: Vec<usize>,
}

/// Mean squared error `(1/m) Σ (x̂_i - x_i)²`.
pub fn reconstruction_error(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::config(format!(
            "reconstruction has {} entries, ground truth {}",
            estimate.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::config("cannot score an empty reconstruction"));
    }
    Ok(estimate
        .iter()
        .zip(truth)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / truth.len() as f64)
}

const COSINE_GUARD: f64 = 1e-12;
const DIRECTION_STEP: f64 = 1e-4;
const LABEL_STEP: f64 = 1e-5;

/// Objective value and its gradient with respect to the dummy restricted gradient.
fn objective_and_slope(kind: Objective, dummy: &[f64], observed: &[f64]) -> (f64, Vec<f64>) {
    match kind {
        Objective::L2 => {
            let diff: Vec<f64> = dummy.iter().zip(observed).map(|(a, b)| a - b).collect();
            let value = diff.iter().map(|v| v * v).sum();
            (value, diff.iter().map(|v| 2.0 * v).collect())
        }
        Objective::Cosine => {
            let na = dummy.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = observed.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = dummy.iter().zip(observed).map(|(a, b)| a * b).sum();
            let denom = na * nb;
            if denom <= COSINE_GUARD {
                let slope = observed.iter().map(|b| -b / COSINE_GUARD).collect();
                return (1.0 - dot / COSINE_GUARD, slope);
            }
            let slope = dummy
                .iter()
                .zip(observed)
                .map(|(a, b)| -(b / denom - dot * a / (na * na * denom)))
                .collect();
            (1.0 - dot / denom, slope)
        }
    }
}

struct Problem<'a> {
    spec: &'a ModelSpec,
    params: &'a [f64],
    visible_idx: &'a [usize],
    observed: Vec<f64>,
    objective: Objective,
    /// `None` when labels are optimised.
    known: Option<Target>,
    label_dim: usize,
}

impl Problem<'_> {
    fn target(&self, labels: &[f64]) -> Target {
        if let Some(t) = &self.known {
            return t.clone();
        }
        match self.spec.loss() {
            LossKind::CrossEntropy => {
                let max = labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = labels.iter().map(|l| (l - max).exp()).collect();
                let s: f64 = exp.iter().sum();
                Target::Distribution(exp.iter().map(|e| e / s).collect())
            }
            LossKind::SquaredError => Target::Distribution(labels.to_vec()),
        }
    }

    fn restricted_gradient(&self, x: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
        let g = self.spec.evaluate(self.params, x, &self.target(labels))?.param_grad;
        Ok(self.visible_idx.iter().map(|&j| g[j]).collect())
    }

    fn value(&self, x: &[f64], labels: &[f64]) -> Result<f64> {
        let a = self.restricted_gradient(x, labels)?;
        Ok(objective_and_slope(self.objective, &a, &self.observed).0)
    }

    /// Objective, gradient in `x`, gradient in the label parameters.
    fn value_and_gradient(&self, x: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let target = self.target(labels);
        let a = self.restricted_gradient(x, labels)?;
        let (value, slope) = objective_and_slope(self.objective, &a, &self.observed);

        let norm = slope.iter().map(|v| v * v).sum::<f64>().sqrt();
        let grad_x = if norm == 0.0 || !norm.is_finite() {
            vec![0.0; x.len()]
        } else {
            let theta_scale = self.params.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
            let eps = DIRECTION_STEP * theta_scale / norm;
            let mut shifted = self.params.to_vec();
            for (&j, v) in self.visible_idx.iter().zip(&slope) {
                shifted[j] = self.params[j] + eps * v;
            }
            let plus = self.spec.evaluate(&shifted, x, &target)?.input_grad;
            for (&j, v) in self.visible_idx.iter().zip(&slope) {
                shifted[j] = self.params[j] - eps * v;
            }
            let minus = self.spec.evaluate(&shifted, x, &target)?.input_grad;
            plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect()
        };

        let mut grad_labels = vec![0.0; labels.len()];
        if self.known.is_none() {
            let mut l = labels.to_vec();
            for k in 0..labels.len() {
                l[k] = labels[k] + LABEL_STEP;
                let up = self.value(x, &l)?;
                l[k] = labels[k] - LABEL_STEP;
                let down = self.value(x, &l)?;
                l[k] = labels[k];
                grad_labels[k] = (up - down) / (2.0 * LABEL_STEP);
            }
        }
        Ok((value, grad_x, grad_labels))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn direction(&mut self, grad: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        grad.iter()
            .enumerate()
            .map(|(i, &g)| {
                self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS)
            })
            .collect()
    }
}

struct RestartOutcome {
    x: Vec<f64>,
    value: f64,
    trace: Vec<f64>,
    aborted: bool,
}

fn run_restart(problem: &Problem<'_>, cfg: &AttackConfig, m: usize, restart: usize) -> RestartOutcome {
    let mut r = rng::stream(rng::derive(cfg.seed, "attack-init", restart as u64));
    let init = Normal::new(0.0, cfg.init_scale).expect("validated");
    let mut x: Vec<f64> = (0..m).map(|_| init.sample(&mut r)).collect();
    let mut labels: Vec<f64> = if problem.known.is_some() {
        Vec::new()
    } else {
        (0..problem.label_dim).map(|_| r.sample(StandardNormal)).collect()
    };
    let mut trace = Vec::with_capacity(cfg.iterations);
    let abort = |x: Vec<f64>, trace: Vec<f64>| RestartOutcome {
        x,
        value: f64::INFINITY,
        trace,
        aborted: true,
    };

    let mut adam = Adam::new(m + labels.len());
    let mut lr = cfg.step_size;
    let mut current = match problem.value(&x, &labels) {
        Ok(v) if v.is_finite() => v,
        _ => return abort(x, trace),
    };
    for _ in 0..cfg.iterations {
        let (value, gx, gl) = match problem.value_and_gradient(&x, &labels) {
            Ok(t) if t.0.is_finite() => t,
            _ => return abort(x, trace),
        };
        current = current.min(value);
        let grad: Vec<f64> = gx.iter().chain(gl.iter()).copied().collect();
        if grad.iter().any(|g| !g.is_finite()) {
            return abort(x, trace);
        }
        let dir = adam.direction(&grad);
        let cand_x: Vec<f64> = x.iter().zip(&dir).map(|(v, d)| v - lr * d).collect();
        let cand_l: Vec<f64> = labels.iter().zip(&dir[m..]).map(|(v, d)| v - lr * d).collect();
        match problem.value(&cand_x, &cand_l) {
            Ok(v) if v.is_finite() && v <= current => {
                x = cand_x;
                labels = cand_l;
                current = v;
                lr = (lr * 1.1).min(cfg.step_size);
            }
            Ok(v) if v.is_finite() => lr *= 0.5,
            _ => lr *= 0.5,
        }
        trace.push(current);
    }
    RestartOutcome {
        x,
        value: current,
        trace,
        aborted: false,
    }
}

/// Best-of-restarts gradient inversion against `defended`. `ground_truth` supplies
/// the label in [`LabelMode::Known`] and is used to score the reconstruction.
pub fn dlg_attack(
    spec: &ModelSpec,
    params: &ParameterVector,
    defended: &DefendedGradient,
    ground_truth: Option<&DataSample>,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    if defended.mask().dim() != spec.param_count() {
        return Err(Error::config("defended gradient does not match the model's D"));
    }
    let known = match cfg.labels {
        LabelMode::Known => Some(
            ground_truth
                .ok_or_else(|| Error::config("known-label attack needs the ground-truth sample"))?
                .target
                .clone(),
        ),
        LabelMode::Optimize => None,
    };
    let problem = Problem {
        spec,
        params: params.values(),
        visible_idx: defended.mask().unencrypted(),
        observed: defended.visible(),
        objective: cfg.objective,
        known,
        label_dim: spec.output_dim(),
    };
    let m = spec.input_dim();

    let outcomes: Vec<RestartOutcome> = (0..cfg.restarts)
        .map(|k| run_restart(&problem, cfg, m, k))
        .collect();
    let mut best: Option<usize> = None;
    let mut aborted = Vec::new();
    for (k, o) in outcomes.iter().enumerate() {
        if o.aborted {
            log::warn!("attack restart {k} aborted: non-finite objective");
            aborted.push(k);
            continue;
        }
        if best.is_none_or(|b| o.value < outcomes[b].value) {
            best = Some(k);
        }
    }
    let best = best.ok_or_else(|| Error::Numeric {
        location: "attack".into(),
        detail: "every restart produced a non-finite objective".into(),
    })?;
    let mse = match ground_truth {
        Some(s) => Some(reconstruction_error(&outcomes[best].x, &s.x)?),
        None => None,
    };
    Ok(AttackResult {
        reconstruction: outcomes[best].x.clone(),
        objective: outcomes[best].value,
        trace: outcomes[best].trace.clone(),
        restart_traces: outcomes.iter().map(|o| o.trace.clone()).collect(),
        mse,
        best_restart: best,
        aborted_restarts: aborted,
    })
}

#[derive(Debug, Clone)]
pub struct SweepConfig<'a> {
    pub spec: &'a ModelSpec,
    pub params: &'a ParameterVector,
    pub dataset: &'a [DataSample],
    pub grid: &'a [f64],
    pub sigma: f64,
    pub attack: AttackConfig,
    pub trials: usize,
    pub prior: PriorInfo,
    pub jacobian_step: f64,
    pub exposure_cap: usize,
    pub keep_traces: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTrial {
    pub trial: usize,
    pub z: f64,
    pub sigma: f64,
    pub sample: usize,
    pub mse: f64,
    pub bound: f64,
    pub objective: f64,
    pub traces: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub z: f64,
    pub sigma: f64,
    pub mean_mse: f64,
    pub std_mse: f64,
    pub bound: f64,
    pub violations: usize,
    pub trials: usize,
}

impl SweepSummary {
    pub const CSV_HEADER: &'static str = "z,sigma,mean_mse,std_mse,bound,violations";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.z, self.sigma, self.mean_mse, self.std_mse, self.bound, self.violations
        )
    }
}

impl SweepTrial {
    pub const CSV_HEADER: &'static str = "trial,z,sigma,sample,mse,bound";
    pub const TRACE_HEADER: &'static str = "trial,z,sigma,restart,iteration,objective";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.trial, self.z, self.sigma, self.sample, self.mse, self.bound
        )
    }
}

/// For every `z`: magnitude mask, defend, attack, score, over `trials` samples drawn
/// in order from the dataset. A trial violates the bound when its MSE is below it.
pub fn attack_sweep(cfg: &SweepConfig<'_>) -> Result<(Vec<SweepSummary>, Vec<SweepTrial>)> {
    if cfg.grid.is_empty() {
        return Err(Error::config("attack sweep needs a nonempty z grid"));
    }
    if cfg.dataset.is_empty() || cfg.trials == 0 {
        return Err(Error::config("attack sweep needs data and at least one trial"));
    }
    cfg.attack.validate()?;
    let bounds = bound_curve(
        &BoundCurveConfig {
            spec: cfg.spec,
            params: cfg.params,
            dataset: cfg.dataset,
            sigma: cfg.sigma,
            prior: cfg.prior,
            step: cfg.jacobian_step,
            sample_cap: cfg.exposure_cap,
            seed: cfg.seed,
        },
        cfg.grid,
    )?;

    let jobs: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|k| (0..cfg.trials).map(move |t| (k, t)))
        .collect();
    let rows: Vec<SweepTrial> = jobs
        .par_iter()
        .map(|&(k, t)| {
            let z = cfg.grid[k];
            let index = t % cfg.dataset.len();
            let sample = &cfg.dataset[index];
            let job = (k * cfg.trials + t) as u64;
            let g = cfg.spec.evaluate(cfg.params.values(), &sample.x, &sample.target)?.param_grad;
            let mask = select_mask(&g, z, &MaskStrategy::Magnitude, 0)?;
            let defended = apply_defense(&g, &mask, cfg.sigma, rng::derive(cfg.seed, "sweep-noise", job))?;
            let attack = AttackConfig {
                seed: rng::derive(cfg.seed, "sweep-attack", job),
                ..cfg.attack.clone()
            };
            let res = dlg_attack(cfg.spec, cfg.params, &defended, Some(sample), &attack)?;
            Ok(SweepTrial {
                trial: t,
                z,
                sigma: cfg.sigma,
                sample: index,
                mse: res.mse.expect("ground truth supplied"),
                bound: bounds[k].bound.value(),
                objective: res.objective,
                traces: if cfg.keep_traces { res.restart_traces } else { Vec::new() },
            })
        })
        .collect::<Result<_>>()?;

    let summaries = cfg
        .grid
        .iter()
        .enumerate()
        .map(|(k, &z)| {
            let chunk = &rows[k * cfg.trials..(k + 1) * cfg.trials];
            let n = chunk.len() as f64;
            let mean = chunk.iter().map(|r| r.mse).sum::<f64>() / n;
            let var = if chunk.len() > 1 {
                chunk.iter().map(|r| (r.mse - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            SweepSummary {
                z,
                sigma: cfg.sigma,
                mean_mse: mean,
                std_mse: var.sqrt(),
                bound: bounds[k].bound.value(),
                violations: chunk.iter().filter(|r| r.mse < r.bound).count(),
                trials: chunk.len(),
            }
        })
        .collect();
    Ok((summaries, rows))
}

/// Restricted dummy gradient for a candidate; used to check encrypted-coordinate
/// blindness from outside the optimiser.
pub fn observed_block(defended: &DefendedGradient) -> Vec<f64> {
    restrict(defended.y(), defended.mask()).expect("mask matches y")
}
