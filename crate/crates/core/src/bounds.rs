//! Fisher information of the defended channel, gradient exposure, and the lower
//! bound on the mean squared reconstruction error of any attacker.
//!
//! For an observation `u ~ N(R g(x), sigma^2 I_d)` the per-sample Fisher information
//! about `x` is `J_F(x) = (R ∇_x g)^T (R ∇_x g) / sigma^2`. Bounding its trace by
//! `m d / sigma^2 * max|R ∇_x g|^2` and adding the prior term gives
//!
//! ```text
//! E_A >= m / ( d / sigma^2 * E_x[ max_{i,j} |R ∇_x g(x)|^2 ] + λ1(J_P) )
//! ```
//!
//! with `d = D - round(z D)` unencrypted coordinates.

use std::fmt;

use rand::seq::index;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::defense::{select_mask, unencrypted_count, EncryptionMask, MaskStrategy};
use crate::error::{Error, Result};
use crate::nn::{
    input_jacobian_of_gradient, param_gradient, DataSample, GradientInputJacobian, ModelSpec,
    ParameterVector, SyntheticPrior,
};
use crate::rng;

/// Source of `λ1(J_P)`, the largest eigenvalue of the prior Fisher information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorInfo {
    /// `x ~ N(0, tau^2 I)`, so `λ1 = 1 / tau^2` exactly.
    Gaussian { tau: f64 },
    /// Externally supplied eigenvalue. Zero means "no prior information", which
    /// makes the bound larger than the true one (optimistic for privacy).
    UserSupplied { lambda1: f64 },
}

impl PriorInfo {
    pub fn gaussian(tau: f64) -> Result<Self> {
        SyntheticPrior::new(tau)?;
        Ok(PriorInfo::Gaussian { tau })
    }

    pub fn user_supplied(lambda1: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda1.is_finite()) {
            return Err(Error::config(format!("lambda1 must be finite and >= 0, got {lambda1}")));
        }
        Ok(PriorInfo::UserSupplied { lambda1 })
    }

    pub fn lambda1(&self) -> f64 {
        match *self {
            PriorInfo::Gaussian { tau } => 1.0 / (tau * tau),
            PriorInfo::UserSupplied { lambda1 } => lambda1,
        }
    }

    /// True when the bound ignores prior information it does not have.
    pub fn is_optimistic(&self) -> bool {
        matches!(self, PriorInfo::UserSupplied { lambda1 } if *lambda1 == 0.0)
    }
}

/// Symmetric `m x m` Fisher information matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub dim: usize,
    pub entries: Vec<f64>,
    pub sigma: f64,
    pub mask: EncryptionMask,
}

impl FisherMatrix {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.dim + c]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `||self - other||_F / ||other||_F`; zero when both are zero.
    pub fn relative_frobenius_error(&self, reference: &FisherMatrix) -> f64 {
        let diff: f64 = self
            .entries
            .iter()
            .zip(&reference.entries)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm = reference.frobenius_norm();
        if norm == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / norm
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for c in r + 1..self.dim {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        worst
    }

    /// Eigenvalues by cyclic Jacobi rotations, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        symmetric_eigenvalues(self.dim, &self.entries)
    }
}

fn symmetric_eigenvalues(n: usize, entries: &[f64]) -> Vec<f64> {
    let mut a = entries.to_vec();
    for r in 0..n {
        for c in r + 1..n {
            let s = 0.5 * (a[r * n + c] + a[c * n + r]);
            a[r * n + c] = s;
            a[c * n + r] = s;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|r| (0..n).filter(move |&c| c != r).map(move |c| (r, c)))
            .map(|(r, c)| a[r * n + c] * a[r * n + c])
            .sum();
        let scale: f64 = a.iter().map(|v| v * v).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma == 0.0 {
        return Err(Error::UndefinedFisher);
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("sigma must be finite and > 0, got {sigma}")));
    }
    Ok(())
}

fn check_mask(jac: &GradientInputJacobian, mask: &EncryptionMask) -> Result<()> {
    if jac.rows != mask.dim() {
        return Err(Error::config(format!(
            "jacobian has {} rows, mask expects D = {}",
            jac.rows,
            mask.dim()
        )));
    }
    Ok(())
}

/// Closed form `(R J)^T (R J) / sigma^2`, using only the unencrypted rows of `J`.
pub fn fisher_information(
    jac: &GradientInputJacobian,
    mask: &EncryptionMask,
    sigma: f64,
) -> Result<FisherMatrix> {
    check_sigma(sigma)?;
    check_mask(jac, mask)?;
    let m = jac.cols;
    let mut entries = vec![0.0; m * m];
    for &j in mask.unencrypted() {
        let row = jac.row(j);
        for r in 0..m {
            let a = row[r];
            if a == 0.0 {
                continue;
            }
            for c in r..m {
                entries[r * m + c] += a * row[c];
            }
        }
    }
    let inv = 1.0 / (sigma * sigma);
    for r in 0..m {
        for c in r..m {
            let v = entries[r * m + c] * inv;
            entries[r * m + c] = v;
            entries[c * m + r] = v;
        }
    }
    Ok(FisherMatrix {
        dim: m,
        entries,
        sigma,
        mask: mask.clone(),
    })
}

const FISHER_CHUNK: usize = 4096;

/// Monte Carlo estimate of `E[s s^T]` with score `s = (R J)^T (u - R g) / sigma^2`
/// and `u - R g ~ N(0, sigma^2 I_d)`.
pub fn empirical_fisher_from_jacobian(
    jac: &GradientInputJacobian,
    mask: &EncryptionMask,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<FisherMatrix> {
    check_sigma(sigma)?;
    check_mask(jac, mask)?;
    if trials < 1000 {
        return Err(Error::config(format!("need at least 1000 trials, got {trials}")));
    }
    let m = jac.cols;
    let d = mask.visible_count();
    let restricted: Vec<&[f64]> = mask.unencrypted().iter().map(|&j| jac.row(j)).collect();
    if d == 0 {
        return Ok(FisherMatrix {
            dim: m,
            entries: vec![0.0; m * m],
            sigma,
            mask: mask.clone(),
        });
    }
    let chunks = trials.div_ceil(FISHER_CHUNK);
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let inv_var = 1.0 / (sigma * sigma);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let count = FISHER_CHUNK.min(trials - chunk * FISHER_CHUNK);
            let mut r = rng::stream(rng::derive(seed, "fisher", chunk as u64));
            let mut acc = vec![0.0; m * m];
            let mut score = vec![0.0; m];
            for _ in 0..count {
                score.iter_mut().for_each(|s| *s = 0.0);
                for row in &restricted {
                    let noise = normal.sample(&mut r) * inv_var;
                    for (s, a) in score.iter_mut().zip(row.iter()) {
                        *s += a * noise;
                    }
                }
                for a in 0..m {
                    for b in a..m {
                        acc[a * m + b] += score[a] * score[b];
                    }
                }
            }
            acc
        })
        .collect();
    let mut entries = vec![0.0; m * m];
    for p in &partials {
        for (e, v) in entries.iter_mut().zip(p) {
            *e += v;
        }
    }
    let n = trials as f64;
    for a in 0..m {
        for b in a..m {
            let v = entries[a * m + b] / n;
            entries[a * m + b] = v;
            entries[b * m + a] = v;
        }
    }
    Ok(FisherMatrix {
        dim: m,
        entries,
        sigma,
        mask: mask.clone(),
    })
}

/// Score-covariance estimate of the Fisher information for one sample, with the
/// input Jacobian taken by central differences at the default step.
pub fn empirical_fisher(
    spec: &ModelSpec,
    params: &ParameterVector,
    sample: &DataSample,
    mask: &EncryptionMask,
    sigma: f64,
    trials: usize,
    seed: u64,
) -> Result<FisherMatrix> {
    let jac = input_jacobian_of_gradient(spec, params, sample, crate::nn::DEFAULT_JACOBIAN_STEP)?;
    empirical_fisher_from_jacobian(&jac, mask, sigma, trials, seed)
}

/// `(max over unencrypted rows j and inputs i of |J[j, i]|)^2`, zero when `d = 0`.
pub fn gradient_exposure(jac: &GradientInputJacobian, mask: &EncryptionMask) -> Result<f64> {
    check_mask(jac, mask)?;
    let max = mask
        .unencrypted()
        .iter()
        .flat_map(|&j| jac.row(j).iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    Ok(max * max)
}

/// Which mask the exposure of each sample is measured under.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskPolicy {
    Fixed(EncryptionMask),
    /// Mask selected from each sample's own gradient.
    PerSample { z: f64, strategy: MaskStrategy },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExposureEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub samples: usize,
}

/// Uniform subsample of at most `cap` indices, ascending.
pub(crate) fn subsample(len: usize, cap: usize, seed: u64) -> Vec<usize> {
    if len <= cap {
        return (0..len).collect();
    }
    let mut r = rng::stream(rng::derive(seed, "subsample", 0));
    let mut idx = index::sample(&mut r, len, cap).into_vec();
    idx.sort_unstable();
    idx
}

/// Per-sample exposures for each entry of `policies`: `result[sample][policy]`.
/// The Jacobian of each sample is computed once and shared across policies.
pub fn exposure_table(
    spec: &ModelSpec,
    params: &ParameterVector,
    samples: &[&DataSample],
    policies: &[MaskPolicy],
    h: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(k, sample)| {
            let jac = input_jacobian_of_gradient(spec, params, sample, h)?;
            let row_max: Vec<f64> = (0..jac.rows)
                .map(|j| jac.row(j).iter().fold(0.0f64, |a, v| a.max(v.abs())))
                .collect();
            let needs_grad = policies.iter().any(|p| matches!(p, MaskPolicy::PerSample { .. }));
            let grad = if needs_grad {
                Some(param_gradient(spec, params, sample)?)
            } else {
                None
            };
            policies
                .iter()
                .map(|policy| {
                    let mask = match policy {
                        MaskPolicy::Fixed(mask) => {
                            check_mask(&jac, mask)?;
                            mask.clone()
                        }
                        MaskPolicy::PerSample { z, strategy } => select_mask(
                            grad.as_ref().expect("computed above"),
                            *z,
                            strategy,
                            rng::derive(seed, "exposure-mask", k as u64),
                        )?,
                    };
                    let max = mask
                        .unencrypted()
                        .iter()
                        .fold(0.0f64, |a, &j| a.max(row_max[j]));
                    Ok(max * max)
                })
                .collect()
        })
        .collect()
}

fn summarize(values: impl Iterator<Item = f64> + Clone) -> ExposureEstimate {
    let n = values.clone().count();
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    ExposureEstimate {
        mean,
        standard_error: (var / n as f64).sqrt(),
        samples: n,
    }
}

/// Monte Carlo mean of [`gradient_exposure`] over at most `cap` samples.
pub fn expected_exposure(
    spec: &ModelSpec,
    params: &ParameterVector,
    dataset: &[DataSample],
    policy: &MaskPolicy,
    h: f64,
    cap: usize,
    seed: u64,
) -> Result<ExposureEstimate> {
    if dataset.is_empty() {
        return Err(Error::config("exposure needs a nonempty dataset"));
    }
    if cap == 0 {
        return Err(Error::config("sample cap must be >= 1"));
    }
    let picked: Vec<&DataSample> = subsample(dataset.len(), cap, seed)
        .into_iter()
        .map(|i| &dataset[i])
        .collect();
    let table = exposure_table(spec, params, &picked, std::slice::from_ref(policy), h, seed)?;
    Ok(summarize(table.iter().map(|row| row[0])))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundValue {
    Finite(f64),
    /// No usable observation and no prior information.
    Unbounded,
}

impl BoundValue {
    pub fn value(&self) -> f64 {
        match self {
            BoundValue::Finite(v) => *v,
            BoundValue::Unbounded => f64::INFINITY,
        }
    }
}

impl fmt::Display for BoundValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundValue::Finite(v) => write!(f, "{v}"),
            BoundValue::Unbounded => f.write_str("inf"),
        }
    }
}

/// One evaluation of the reconstruction-error lower bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub model: String,
    pub m: usize,
    pub dim: usize,
    pub z_requested: f64,
    pub z_realized: f64,
    /// `d = D - round(z D)`
    pub visible: usize,
    pub sigma: f64,
    pub exposure: f64,
    pub lambda1: f64,
    /// `d * exposure / sigma^2`, the per-coordinate upper bound on `tr(J_D) / m`.
    pub data_information: f64,
    /// `data_information + lambda1`, the matching bound on `λ(J_B)`.
    pub bayesian_information: f64,
    pub bound: BoundValue,
    pub samples: usize,
    /// Set when the prior term was unavailable and taken as zero.
    pub optimistic_prior: bool,
}

impl BoundReport {
    pub const CSV_HEADER: &'static str =
        "model,m,D,z_requested,z_realized,sigma,exposure,lambda1,bound,samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.model,
            self.m,
            self.dim,
            self.z_requested,
            self.z_realized,
            self.sigma,
            self.exposure,
            self.lambda1,
            self.bound,
            self.samples
        )
    }
}

/// Evaluate `m / (d / sigma^2 * exposure + lambda1)` with `d = D - round(z D)`.
pub fn reconstruction_lower_bound(
    m: usize,
    dim: usize,
    z: f64,
    sigma: f64,
    exposure: f64,
    lambda1: f64,
) -> Result<BoundReport> {
    check_sigma(sigma)?;
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::config(format!("z out of [0,1]: {z}")));
    }
    if !(exposure >= 0.0 && exposure.is_finite()) {
        return Err(Error::config(format!("exposure must be finite and >= 0, got {exposure}")));
    }
    if !(lambda1 >= 0.0 && lambda1.is_finite()) {
        return Err(Error::config(format!("lambda1 must be finite and >= 0, got {lambda1}")));
    }
    if m == 0 || dim == 0 {
        return Err(Error::config("m and D must be >= 1"));
    }
    let visible = unencrypted_count(z, dim);
    let data_information = visible as f64 * exposure / (sigma * sigma);
    let bayesian_information = data_information + lambda1;
    let bound = if bayesian_information > 0.0 {
        BoundValue::Finite(m as f64 / bayesian_information)
    } else {
        BoundValue::Unbounded
    };
    Ok(BoundReport {
        model: String::new(),
        m,
        dim,
        z_requested: z,
        z_realized: (dim - visible) as f64 / dim as f64,
        visible,
        sigma,
        exposure,
        lambda1,
        data_information,
        bayesian_information,
        bound,
        samples: 0,
        optimistic_prior: false,
    })
}

/// Inputs shared by every point of a bound curve.
#[derive(Debug, Clone)]
pub struct BoundCurveConfig<'a> {
    pub spec: &'a ModelSpec,
    pub params: &'a ParameterVector,
    pub dataset: &'a [DataSample],
    pub sigma: f64,
    pub prior: PriorInfo,
    pub step: f64,
    pub sample_cap: usize,
    pub seed: u64,
}

/// Bound at every `z` in `grid`, each with exposure measured under per-sample
/// magnitude masks at that ratio.
pub fn bound_curve(cfg: &BoundCurveConfig<'_>, grid: &[f64]) -> Result<Vec<BoundReport>> {
    if let Some(z) = grid.iter().find(|z| !(0.0..=1.0).contains(*z)) {
        return Err(Error::config(format!("z out of [0,1]: {z}")));
    }
    check_sigma(cfg.sigma)?;
    if cfg.dataset.is_empty() {
        return Err(Error::config("bound curve needs a nonempty dataset"));
    }
    let picked: Vec<&DataSample> = subsample(cfg.dataset.len(), cfg.sample_cap, cfg.seed)
        .into_iter()
        .map(|i| &cfg.dataset[i])
        .collect();
    let policies: Vec<MaskPolicy> = grid
        .iter()
        .map(|&z| MaskPolicy::PerSample {
            z,
            strategy: MaskStrategy::Magnitude,
        })
        .collect();
    let table = exposure_table(cfg.spec, cfg.params, &picked, &policies, cfg.step, cfg.seed)?;
    grid.iter()
        .enumerate()
        .map(|(k, &z)| {
            let est = summarize(table.iter().map(|row| row[k]));
            let mut report = reconstruction_lower_bound(
                cfg.spec.input_dim(),
                cfg.spec.param_count(),
                z,
                cfg.sigma,
                est.mean,
                cfg.prior.lambda1(),
            )?;
            report.model = cfg.spec.name().to_owned();
            report.samples = est.samples;
            report.optimistic_prior = cfg.prior.is_optimistic();
            Ok(report)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LossKind, Target, ZooModel};

    fn jac(rows: usize, cols: usize, entries: Vec<f64>) -> GradientInputJacobian {
        GradientInputJacobian {
            rows,
            cols,
            entries,
            step: 1e-4,
        }
    }

    #[test]
    fn fisher_of_scalar_linear_model() {
        // g = theta x^2, dg/dx = 2 at theta = x = 1
        let spec = ModelSpec::linear(1, 1, false, LossKind::SquaredError).unwrap();
        let p = ParameterVector::from_values(&spec, vec![1.0]).unwrap();
        let s = DataSample::new(vec![1.0], Target::Value(0.0)).unwrap();
        let j = input_jacobian_of_gradient(&spec, &p, &s, 1e-4).unwrap();
        let f = fisher_information(&j, &EncryptionMask::all_visible(1), 1.0).unwrap();
        assert!((f.get(0, 0) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn fully_encrypted_fisher_is_zero() {
        let j = jac(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let mask = EncryptionMask::new(2, vec![]).unwrap();
        let f = fisher_information(&j, &mask, 0.5).unwrap();
        assert!(f.entries.iter().all(|&v| v == 0.0));
        let e = empirical_fisher_from_jacobian(&j, &mask, 0.5, 1000, 1).unwrap();
        assert!(e.entries.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn halving_sigma_quadruples_fisher() {
        let j = jac(3, 2, vec![1.0, -2.0, 0.5, 3.0, 0.25, 1.0]);
        let mask = EncryptionMask::new(3, vec![0, 2]).unwrap();
        let a = fisher_information(&j, &mask, 0.8).unwrap();
        let b = fisher_information(&j, &mask, 0.4).unwrap();
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert!((4.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn zero_sigma_rejected() {
        let j = jac(1, 1, vec![1.0]);
        let mask = EncryptionMask::all_visible(1);
        assert!(matches!(fisher_information(&j, &mask, 0.0), Err(Error::UndefinedFisher)));
        assert!(matches!(
            reconstruction_lower_bound(1, 1, 0.0, 0.0, 1.0, 0.0),
            Err(Error::UndefinedFisher)
        ));
    }

    #[test]
    fn exposure_examples() {
        let j = jac(2, 2, vec![2.0, -5.0, 1.0, 3.0]);
        assert_eq!(gradient_exposure(&j, &EncryptionMask::new(2, vec![0]).unwrap()).unwrap(), 25.0);
        assert_eq!(gradient_exposure(&j, &EncryptionMask::new(2, vec![1]).unwrap()).unwrap(), 9.0);
        assert_eq!(gradient_exposure(&j, &EncryptionMask::new(2, vec![]).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn bound_examples() {
        let full = reconstruction_lower_bound(4, 10, 1.0, 0.1, 3.0, 2.0).unwrap();
        assert_eq!(full.bound, BoundValue::Finite(2.0));
        let r = reconstruction_lower_bound(2, 4, 0.5, 1.0, 1.0, 0.0).unwrap();
        assert_eq!(r.visible, 2);
        assert_eq!(r.bound, BoundValue::Finite(1.0));
        let none = reconstruction_lower_bound(4, 10, 1.0, 0.1, 3.0, 0.0).unwrap();
        assert_eq!(none.bound, BoundValue::Unbounded);
        assert_eq!(none.csv_row().split(',').nth(8), Some("inf"));
        let lo = reconstruction_lower_bound(4, 100, 0.5, 0.1, 1.0, 1.0).unwrap();
        let hi = reconstruction_lower_bound(4, 100, 0.9, 0.1, 1.0, 1.0).unwrap();
        assert!(hi.bound.value() > lo.bound.value());
    }

    #[test]
    fn bound_is_invariant_under_joint_rescaling() {
        let a = reconstruction_lower_bound(5, 40, 0.3, 0.2, 1.7, 0.0).unwrap();
        for c in [0.1, 3.0, 17.0] {
            let b = reconstruction_lower_bound(5, 40, 0.3, 0.2 * c, 1.7 * c * c, 0.0).unwrap();
            let (x, y) = (a.bound.value(), b.bound.value());
            assert!((x - y).abs() <= 1e-12 * x);
        }
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let e = symmetric_eigenvalues(2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn fisher_is_symmetric_psd_and_obeys_trace_bound() {
        let spec = ZooModel::Small.spec();
        let p = ParameterVector::init(&spec, 5);
        let prior = SyntheticPrior::new(1.0).unwrap();
        let rule = crate::nn::LabelRule::Classes {
            classes: 3,
            teacher_seed: 1,
        };
        let data = crate::nn::generate_synthetic_dataset(16, 5, prior, &rule, 2).unwrap();
        for (k, s) in data.iter().enumerate() {
            let j = input_jacobian_of_gradient(&spec, &p, s, 1e-4).unwrap();
            let g = param_gradient(&spec, &p, s).unwrap();
            let mask = select_mask(&g, 0.2 * k as f64, &MaskStrategy::Magnitude, 0).unwrap();
            let sigma = 0.3;
            let f = fisher_information(&j, &mask, sigma).unwrap();
            assert!(f.max_asymmetry() <= 1e-12);
            let eig = f.eigenvalues();
            assert!(eig[0] >= -1e-9 * f.trace().max(1e-300));
            let direct: f64 = mask
                .unencrypted()
                .iter()
                .flat_map(|&r| j.row(r).iter())
                .map(|v| v * v)
                .sum::<f64>()
                / (sigma * sigma);
            assert!((f.trace() - direct).abs() <= 1e-10 * direct.max(1.0));
            let exposure = gradient_exposure(&j, &mask).unwrap();
            let cap = 16.0 * mask.visible_count() as f64 * exposure / (sigma * sigma);
            assert!(f.trace() <= cap * (1.0 + 1e-12));
        }
    }

    #[test]
    fn exposure_mean_of_one_and_duplicates() {
        let spec = ZooModel::Small.spec();
        let p = ParameterVector::init(&spec, 5);
        let prior = SyntheticPrior::new(1.0).unwrap();
        let rule = crate::nn::LabelRule::Classes {
            classes: 3,
            teacher_seed: 1,
        };
        let data = crate::nn::generate_synthetic_dataset(16, 3, prior, &rule, 2).unwrap();
        let policy = MaskPolicy::PerSample {
            z: 0.5,
            strategy: MaskStrategy::Magnitude,
        };
        let one = expected_exposure(&spec, &p, &data[..1], &policy, 1e-4, 128, 0).unwrap();
        let j = input_jacobian_of_gradient(&spec, &p, &data[0], 1e-4).unwrap();
        let g = param_gradient(&spec, &p, &data[0]).unwrap();
        let mask = select_mask(&g, 0.5, &MaskStrategy::Magnitude, 0).unwrap();
        assert_eq!(one.mean, gradient_exposure(&j, &mask).unwrap());

        let base = expected_exposure(&spec, &p, &data, &policy, 1e-4, 128, 0).unwrap();
        let doubled: Vec<DataSample> = data.iter().chain(data.iter()).cloned().collect();
        let dup = expected_exposure(&spec, &p, &doubled, &policy, 1e-4, 128, 0).unwrap();
        assert!((base.mean - dup.mean).abs() <= 1e-12 * base.mean);
        assert!(expected_exposure(&spec, &p, &[], &policy, 1e-4, 128, 0).is_err());
    }

    #[test]
    fn user_prior_validation() {
        assert!(PriorInfo::user_supplied(-1.0).is_err());
        assert!(PriorInfo::user_supplied(0.0).unwrap().is_optimistic());
        assert_eq!(PriorInfo::gaussian(0.5).unwrap().lambda1(), 4.0);
        assert!(PriorInfo::gaussian(0.0).is_err());
    }
}
