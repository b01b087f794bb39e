//! Privacy-utility machinery for one aggregation step.
//!
//! With per-client noise `ε_i ~ N(0, σ² I_d)` on the `d` unencrypted coordinates and
//! server-side aggregate `Q = G + P Σ ε_i`, the first-order loss reduction of client `i`
//! is `η (B_i + μ_iᵀ Σ ε_j)`. Combining Cauchy-Schwarz with the Gaussian norm tail
//! `‖Σ ε_j‖ ≤ σ √n (√d + √(2 ln(1/δ)))` (probability at least `1 - δ`) gives the
//! critical noise level
//!
//! ```text
//! σ_crit = B_i / ( √n ‖μ_i‖ (√d + √(2 ln(1/δ))) )
//! ```
//!
//! Here `δ` is a failure probability; it is unrelated to the noise vector.

use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::defense::{prolong, restrict, EncryptionMask};
use crate::error::{Error, Result};
use crate::nn::{DataSample, ModelSpec, ParameterVector};
use crate::rng;

pub const DEFAULT_FAILURE_PROBABILITY: f64 = 0.05;
pub const DEFAULT_SAFETY_FACTOR: f64 = 0.9;
/// Cap on the applied σ when the threshold is unbounded (`‖μ‖ = 0`).
pub const DEFAULT_SIGMA_MAX: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientGradStats {
    pub client: usize,
    /// `μ = E_x[R g_i(x)]`, length `d`.
    pub mu: Vec<f64>,
    pub mu_norm: f64,
    /// `B = E_x[g_i(x)ᵀ G(x)]`
    pub alignment: f64,
    pub batch: usize,
}

/// The clean aggregate `G` that local gradients are correlated with.
#[derive(Debug, Clone, Copy)]
pub enum AggregateGradient<'a> {
    /// One aggregate for the whole batch (the server's sum of client gradients).
    Shared(&'a [f64]),
    /// `G(x)` given per sample, in batch order.
    PerSample(&'a [Vec<f64>]),
}

/// Statistics from precomputed per-sample gradients of one client.
pub fn client_stats_from_gradients(
    client: usize,
    gradients: &[Vec<f64>],
    mask: &EncryptionMask,
    aggregate: AggregateGradient<'_>,
) -> Result<ClientGradStats> {
    if gradients.is_empty() {
        return Err(Error::config(format!("client {client} has an empty batch")));
    }
    let dim = mask.dim();
    if let Some(g) = gradients.iter().find(|g| g.len() != dim) {
        return Err(Error::config(format!("gradient length {} != D = {dim}", g.len())));
    }
    match aggregate {
        AggregateGradient::Shared(g) if g.len() != dim => {
            return Err(Error::config("aggregate gradient length differs from D"));
        }
        AggregateGradient::PerSample(rows) if rows.len() != gradients.len() => {
            return Err(Error::config("need one aggregate gradient per batch sample"));
        }
        _ => {}
    }
    let n = gradients.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut alignment = 0.0;
    for (k, g) in gradients.iter().enumerate() {
        for (a, v) in mean.iter_mut().zip(g) {
            *a += v;
        }
        let agg = match aggregate {
            AggregateGradient::Shared(a) => a,
            AggregateGradient::PerSample(rows) => {
                if rows[k].len() != dim {
                    return Err(Error::config("aggregate gradient length differs from D"));
                }
                &rows[k]
            }
        };
        alignment += g.iter().zip(agg).map(|(a, b)| a * b).sum::<f64>();
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mu = restrict(&mean, mask)?;
    let mu_norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(ClientGradStats {
        client,
        mu,
        mu_norm,
        alignment: alignment / n,
        batch: gradients.len(),
    })
}

/// Batch-mean `μ` and `B` of one client.
pub fn client_stats(
    client: usize,
    spec: &ModelSpec,
    params: &ParameterVector,
    batch: &[DataSample],
    mask: &EncryptionMask,
    aggregate: AggregateGradient<'_>,
) -> Result<ClientGradStats> {
    let grads = batch
        .iter()
        .map(|s| Ok(spec.evaluate(params.values(), &s.x, &s.target)?.param_grad))
        .collect::<Result<Vec<_>>>()?;
    client_stats_from_gradients(client, &grads, mask, aggregate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalNoiseConfig {
    pub clients: usize,
    pub visible: usize,
    pub failure_probability: f64,
    pub safety_factor: f64,
    pub step: f64,
}

impl CriticalNoiseConfig {
    pub fn new(
        clients: usize,
        visible: usize,
        failure_probability: f64,
        safety_factor: f64,
        step: f64,
    ) -> Result<Self> {
        check_counts(clients, visible)?;
        check_probability(failure_probability)?;
        if !(safety_factor > 0.0 && safety_factor <= 1.0) {
            return Err(Error::config(format!("safety factor must be in (0,1], got {safety_factor}")));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::config(format!("step size must be > 0, got {step}")));
        }
        Ok(Self {
            clients,
            visible,
            failure_probability,
            safety_factor,
            step,
        })
    }
}

fn check_counts(n: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::config("client count must be >= 1"));
    }
    if d == 0 {
        return Err(Error::config("noisy coordinate count must be >= 1"));
    }
    Ok(())
}

fn check_probability(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::config(format!("failure probability must be in (0,1), got {delta}")));
    }
    Ok(())
}

/// `√d + √(2 ln(1/δ))`
fn tail_radius(d: usize, delta: f64) -> f64 {
    (d as f64).sqrt() + (2.0 * (1.0 / delta).ln()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticalNoise {
    Threshold(f64),
    /// `B ≤ 0`: ascent is possible even without noise. Carries the (nonpositive)
    /// formula value, or zero when `‖μ‖ = 0`.
    NonPositive(f64),
    /// `‖μ‖ = 0` with `B > 0`: the noise only lands on zero-signal coordinates.
    Unbounded,
}

impl CriticalNoise {
    pub fn value(&self) -> f64 {
        match *self {
            CriticalNoise::Threshold(v) | CriticalNoise::NonPositive(v) => v,
            CriticalNoise::Unbounded => f64::INFINITY,
        }
    }
}

pub fn critical_noise(
    alignment: f64,
    mu_norm: f64,
    clients: usize,
    visible: usize,
    failure_probability: f64,
) -> Result<CriticalNoise> {
    check_counts(clients, visible)?;
    check_probability(failure_probability)?;
    if !(mu_norm >= 0.0 && mu_norm.is_finite() && alignment.is_finite()) {
        return Err(Error::config("alignment and ‖μ‖ must be finite, ‖μ‖ >= 0"));
    }
    let denom = (clients as f64).sqrt() * mu_norm * tail_radius(visible, failure_probability);
    Ok(if alignment <= 0.0 {
        CriticalNoise::NonPositive(if denom > 0.0 { alignment / denom } else { 0.0 })
    } else if denom == 0.0 {
        CriticalNoise::Unbounded
    } else {
        CriticalNoise::Threshold(alignment / denom)
    })
}

/// `σ √n (√d + √(2 ln(1/δ)))`
pub fn gaussian_sum_norm_bound(
    sigma: f64,
    clients: usize,
    visible: usize,
    failure_probability: f64,
) -> Result<f64> {
    check_counts(clients, visible)?;
    check_probability(failure_probability)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    Ok(sigma * (clients as f64).sqrt() * tail_radius(visible, failure_probability))
}

const TRIAL_CHUNK: usize = 2048;

/// Fraction of draws `S = Σ_{i<n} ε_i`, `ε_i ~ N(0, σ² I_d)`, with
/// `‖S‖ ≥ gaussian_sum_norm_bound(σ, n, d, δ)`, for every `δ` in `deltas` on the
/// same draws.
pub fn concentration_exceedances(
    sigma: f64,
    clients: usize,
    visible: usize,
    deltas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if trials < 10_000 {
        return Err(Error::config(format!("need at least 10^4 trials, got {trials}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("sigma must be > 0 for a tail check, got {sigma}")));
    }
    let thresholds_sq: Vec<f64> = deltas
        .iter()
        .map(|&d| gaussian_sum_norm_bound(sigma, clients, visible, d).map(|t| t * t))
        .collect::<Result<_>>()?;
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let counts: Vec<Vec<u64>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let count = TRIAL_CHUNK.min(trials - chunk * TRIAL_CHUNK);
            let mut r = rng::stream(rng::derive(seed, "concentration", chunk as u64));
            let mut sum = vec![0.0; visible];
            let mut hits = vec![0u64; thresholds_sq.len()];
            for _ in 0..count {
                sum.iter_mut().for_each(|s| *s = 0.0);
                for _ in 0..clients {
                    for s in sum.iter_mut() {
                        let z: f64 = StandardNormal.sample(&mut r);
                        *s += sigma * z;
                    }
                }
                let norm_sq: f64 = sum.iter().map(|v| v * v).sum();
                for (h, t) in hits.iter_mut().zip(&thresholds_sq) {
                    if norm_sq >= *t {
                        *h += 1;
                    }
                }
            }
            hits
        })
        .collect();
    let mut totals = vec![0u64; deltas.len()];
    for c in &counts {
        for (t, v) in totals.iter_mut().zip(c) {
            *t += v;
        }
    }
    Ok(totals.iter().map(|&h| h as f64 / trials as f64).collect())
}

/// Empirical exceedance probability of the Gaussian norm tail bound.
pub fn verify_concentration(
    sigma: f64,
    clients: usize,
    visible: usize,
    failure_probability: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    Ok(concentration_exceedances(sigma, clients, visible, &[failure_probability], trials, seed)?[0])
}

/// How the server combines client updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationRule {
    Sum,
    Average,
}

impl AggregationRule {
    pub fn scale(self, clients: usize) -> f64 {
        match self {
            AggregationRule::Sum => 1.0,
            AggregationRule::Average => 1.0 / clients as f64,
        }
    }
}

/// One draw of the aggregate noise `scale * Σ_{i<n} ε_i` on `d` coordinates.
pub fn aggregate_noise(
    clients: usize,
    visible: usize,
    sigma: f64,
    rule: AggregationRule,
    rng: &mut rng::Stream,
) -> Vec<f64> {
    let mut sum = vec![0.0; visible];
    if sigma == 0.0 {
        return sum;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    for _ in 0..clients {
        for s in sum.iter_mut() {
            *s += normal.sample(rng);
        }
    }
    let scale = rule.scale(clients);
    sum.iter_mut().for_each(|s| *s *= scale);
    sum
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentReport {
    /// Per client, fraction of noise draws with a nonnegative predicted reduction.
    pub fractions: Vec<f64>,
    /// `1 - δ`
    pub target: f64,
}

impl DescentReport {
    pub fn all_meet_target(&self) -> bool {
        self.fractions.iter().all(|&f| f >= self.target)
    }
}

/// First-order check: per draw of the aggregate noise `S`, client `i` descends when
/// `η (B_i + μ_iᵀ S) ≥ 0`.
#[allow(clippy::too_many_arguments)]
pub fn descent_check(
    clients: &[ClientGradStats],
    mask: &EncryptionMask,
    sigma: f64,
    step: f64,
    failure_probability: f64,
    trials: usize,
    rule: AggregationRule,
    seed: u64,
) -> Result<DescentReport> {
    check_probability(failure_probability)?;
    if clients.is_empty() || trials == 0 {
        return Err(Error::config("descent check needs clients and at least one trial"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::config(format!("step size must be > 0, got {step}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("sigma must be finite and >= 0, got {sigma}")));
    }
    let d = mask.visible_count();
    if let Some(c) = clients.iter().find(|c| c.mu.len() != d) {
        return Err(Error::config(format!("client {} has |μ| = {}, mask d = {d}", c.client, c.mu.len())));
    }
    let n = clients.len();
    let mut r = rng::stream(rng::derive(seed, "descent", 0));
    let mut hits = vec![0usize; n];
    for _ in 0..trials {
        let noise = aggregate_noise(n, d, sigma, rule, &mut r);
        for (h, c) in hits.iter_mut().zip(clients) {
            let inner: f64 = c.mu.iter().zip(&noise).map(|(a, b)| a * b).sum();
            if step * (c.alignment + inner) >= 0.0 {
                *h += 1;
            }
        }
    }
    Ok(DescentReport {
        fractions: hits.iter().map(|&h| h as f64 / trials as f64).collect(),
        target: 1.0 - failure_probability,
    })
}

/// Exact-loss variant for small fixtures: per draw, applies `θ⁺ = θ - η (G + P S)` and
/// measures each client's batch-mean loss change `L_i(θ) - L_i(θ⁺)`.
#[allow(clippy::too_many_arguments)]
pub fn exact_descent_check(
    spec: &ModelSpec,
    params: &ParameterVector,
    batches: &[Vec<DataSample>],
    aggregate: &[f64],
    mask: &EncryptionMask,
    sigma: f64,
    step: f64,
    failure_probability: f64,
    trials: usize,
    rule: AggregationRule,
    seed: u64,
) -> Result<DescentReport> {
    check_probability(failure_probability)?;
    if batches.is_empty() || batches.iter().any(Vec::is_empty) || trials == 0 {
        return Err(Error::config("exact descent check needs nonempty batches and trials"));
    }
    let n = batches.len();
    let mean_loss = |theta: &[f64], batch: &[DataSample]| -> Result<f64> {
        let mut total = 0.0;
        for s in batch {
            total += spec.evaluate(theta, &s.x, &s.target)?.loss;
        }
        Ok(total / batch.len() as f64)
    };
    let before = batches
        .iter()
        .map(|b| mean_loss(params.values(), b))
        .collect::<Result<Vec<_>>>()?;
    let mut r = rng::stream(rng::derive(seed, "descent", 0));
    let mut hits = vec![0usize; n];
    let mut theta = params.values().to_vec();
    for _ in 0..trials {
        let noise = aggregate_noise(n, mask.visible_count(), sigma, rule, &mut r);
        let spread = prolong(&noise, mask)?;
        for ((t, p), (a, e)) in theta.iter_mut().zip(params.values()).zip(aggregate.iter().zip(&spread)) {
            *t = p - step * (a + e);
        }
        for (k, b) in batches.iter().enumerate() {
            if before[k] - mean_loss(&theta, b)? >= 0.0 {
                hits[k] += 1;
            }
        }
    }
    Ok(DescentReport {
        fractions: hits.iter().map(|&h| h as f64 / trials as f64).collect(),
        target: 1.0 - failure_probability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn critical_noise_reference_value() {
        // δ = e^{-1/2} makes √(2 ln(1/δ)) = 1
        let delta = (-0.5f64).exp();
        let s = critical_noise(1.0, 1.0, 1, 1, delta).unwrap();
        match s {
            CriticalNoise::Threshold(v) => assert!((v - 0.5).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn critical_noise_scales_inverse_sqrt_clients() {
        let a = critical_noise(2.0, 0.7, 2, 10, 0.05).unwrap().value();
        let b = critical_noise(2.0, 0.7, 8, 10, 0.05).unwrap().value();
        assert!((a / b - 2.0).abs() < 1e-12);
    }

    #[test]
    fn critical_noise_flags() {
        assert!(matches!(
            critical_noise(-0.3, 1.0, 3, 4, 0.05).unwrap(),
            CriticalNoise::NonPositive(v) if v < 0.0
        ));
        assert_eq!(critical_noise(0.5, 0.0, 3, 4, 0.05).unwrap(), CriticalNoise::Unbounded);
        assert!(critical_noise(1.0, 1.0, 0, 4, 0.05).is_err());
        assert!(critical_noise(1.0, 1.0, 1, 0, 0.05).is_err());
        assert!(critical_noise(1.0, 1.0, 1, 4, 1.0).is_err());
    }

    #[test]
    fn critical_noise_monotonicity_grid() {
        let base = |b: f64, mu: f64, n: usize, d: usize, delta: f64| {
            critical_noise(b, mu, n, d, delta).unwrap().value()
        };
        for k in 1..20usize {
            assert!(base(1.0, 1.0, k + 1, 5, 0.05) < base(1.0, 1.0, k, 5, 0.05));
            assert!(base(1.0, 1.0, 2, k + 1, 0.05) < base(1.0, 1.0, 2, k, 0.05));
            let mu = k as f64 * 0.1;
            assert!(base(1.0, mu + 0.1, 2, 5, 0.05) < base(1.0, mu, 2, 5, 0.05));
            let b = k as f64 * 0.1;
            assert!(base(b + 0.1, 1.0, 2, 5, 0.05) > base(b, 1.0, 2, 5, 0.05));
            let delta = 0.9 / (k + 1) as f64;
            assert!(base(1.0, 1.0, 2, 5, delta * 0.5) < base(1.0, 1.0, 2, 5, delta));
        }
    }

    #[test]
    fn norm_bound_reference_values() {
        let v = gaussian_sum_norm_bound(1.0, 1, 4, (-2.0f64).exp()).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        assert_eq!(gaussian_sum_norm_bound(0.0, 3, 4, 0.1).unwrap(), 0.0);
        let a = gaussian_sum_norm_bound(0.5, 3, 9, 0.1).unwrap();
        let b = gaussian_sum_norm_bound(1.5, 3, 9, 0.1).unwrap();
        assert!((3.0 * a - b).abs() < 1e-12);
    }

    #[test]
    fn concentration_is_seed_deterministic_and_bounded() {
        let a = verify_concentration(1.0, 3, 16, 0.05, 20_000, 9).unwrap();
        let b = verify_concentration(1.0, 3, 16, 0.05, 20_000, 9).unwrap();
        assert_eq!(a, b);
        assert!(a <= 0.05 + 3.0 * (0.05f64 * 0.95 / 20_000.0).sqrt());
        assert!(verify_concentration(1.0, 3, 16, 0.05, 100, 9).is_err());
    }

    fn stats(client: usize, mu: Vec<f64>, alignment: f64) -> ClientGradStats {
        let mu_norm = mu.iter().map(|v| v * v).sum::<f64>().sqrt();
        ClientGradStats {
            client,
            mu,
            mu_norm,
            alignment,
            batch: 1,
        }
    }

    #[test]
    fn noiseless_positive_alignment_always_descends() {
        let mask = EncryptionMask::all_visible(2);
        let clients = [stats(0, vec![1.0, -1.0], 0.2), stats(1, vec![0.3, 0.0], 1.0)];
        let r = descent_check(&clients, &mask, 0.0, 0.1, 0.05, 500, AggregationRule::Sum, 1).unwrap();
        assert_eq!(r.fractions, vec![1.0, 1.0]);
    }

    #[test]
    fn client_stats_definitions() {
        let mask = EncryptionMask::new(3, vec![0, 2]).unwrap();
        let grads = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0], vec![0.5, 0.5, 0.5]];
        // single client: G(x) = g(x)
        let s = client_stats_from_gradients(0, &grads, &mask, AggregateGradient::PerSample(&grads))
            .unwrap();
        let hand = (14.0 + 2.0 + 0.75) / 3.0;
        assert!((s.alignment - hand).abs() < 1e-12);
        assert_eq!(s.mu, vec![0.5 / 3.0, 4.5 / 3.0]);

        // g2 = -g1 per sample cancels the aggregate
        let neg: Vec<Vec<f64>> = grads.iter().map(|g| g.iter().map(|v| -v).collect()).collect();
        let zero: Vec<Vec<f64>> = grads
            .iter()
            .zip(&neg)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        let s = client_stats_from_gradients(0, &grads, &mask, AggregateGradient::PerSample(&zero))
            .unwrap();
        assert_eq!(s.alignment, 0.0);
        assert!(client_stats_from_gradients(0, &[], &mask, AggregateGradient::Shared(&[0.0; 3])).is_err());
    }

    #[test]
    fn averaging_shrinks_aggregate_noise_variance() {
        let n = 4;
        let sigma = 0.5;
        let mut r = rng::stream(3);
        let draws = 20_000;
        let mut var = [0.0; 2];
        for (k, rule) in [AggregationRule::Sum, AggregationRule::Average].into_iter().enumerate() {
            let mut acc = 0.0;
            for _ in 0..draws {
                let s = aggregate_noise(n, 1, sigma, rule, &mut r);
                acc += s[0] * s[0];
            }
            var[k] = acc / draws as f64;
        }
        assert!((var[0] / (sigma * sigma * n as f64) - 1.0).abs() < 0.05);
        assert!((var[1] / (sigma * sigma / n as f64) - 1.0).abs() < 0.05);
    }
}
