//! Deterministic gradient-sharing federated training.
//!
//! Every round each client sends the batch-mean gradient of its shard, perturbed on the
//! unencrypted coordinates; the server aggregates and takes one step `θ ← θ - η Q`.
//! All clients share one mask per round, selected from the clean aggregate, so that
//! `d` in the critical-noise formula is well defined.

use std::time::Instant;

use rayon::prelude::*;

use crate::defense::{gaussian_noise, select_mask, EncryptionMask, MaskStrategy};
use crate::error::{Error, Result};
use crate::nn::{partition_indices, DataSample, ModelSpec, ParameterVector, Partition};
use crate::rng;
use crate::utility::{
    client_stats_from_gradients, critical_noise, descent_check, AggregateGradient,
    AggregationRule, ClientGradStats, CriticalNoise, DEFAULT_FAILURE_PROBABILITY,
    DEFAULT_SAFETY_FACTOR, DEFAULT_SIGMA_MAX,
};

/// Starting value of the adaptive schedule and its floor when some client has `B ≤ 0`.
pub const ADAPTIVE_SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseMode {
    Fixed(f64),
    Adaptive {
        kappa: f64,
        sigma_max: f64,
    },
}

impl NoiseMode {
    pub fn adaptive() -> Self {
        NoiseMode::Adaptive {
            kappa: DEFAULT_SAFETY_FACTOR,
            sigma_max: DEFAULT_SIGMA_MAX,
        }
    }
}

/// Where Gaussian noise enters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePlacement {
    /// Each client perturbs its own gradient before aggregation.
    PerClient,
    /// The server adds one draw after aggregation.
    PostAggregation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSchedule {
    /// Reselect the mask every round from the clean aggregate.
    PerRound,
    /// Select once in the first round and keep it.
    FixedAfterFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub rounds: usize,
    pub clients: usize,
    pub step: f64,
    pub z: f64,
    pub strategy: MaskStrategy,
    pub mask_schedule: MaskSchedule,
    pub noise: NoiseMode,
    pub placement: NoisePlacement,
    pub rule: AggregationRule,
    pub partition: Partition,
    /// Samples per client per round; `None` uses the whole shard.
    pub batch_size: Option<usize>,
    pub failure_probability: f64,
    /// Noise draws for the per-client descent fraction; 0 skips the check.
    pub descent_trials: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            clients: 3,
            step: 0.1,
            z: 0.0,
            strategy: MaskStrategy::Magnitude,
            mask_schedule: MaskSchedule::PerRound,
            noise: NoiseMode::Fixed(0.0),
            placement: NoisePlacement::PerClient,
            rule: AggregationRule::Sum,
            partition: Partition::Iid,
            batch_size: None,
            failure_probability: DEFAULT_FAILURE_PROBABILITY,
            descent_trials: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::validation("clients", "must be >= 1"));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::validation("step", "learning rate must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.z) {
            return Err(Error::validation("z", "z out of [0,1]"));
        }
        if !(self.failure_probability > 0.0 && self.failure_probability < 1.0) {
            return Err(Error::validation("delta", "failure probability must be in (0,1)"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::validation("batch_size", "must be >= 1"));
        }
        match self.noise {
            NoiseMode::Fixed(s) if !(s >= 0.0 && s.is_finite()) => {
                Err(Error::validation("sigma", "must be finite and >= 0"))
            }
            NoiseMode::Adaptive { kappa, .. } if !(kappa > 0.0 && kappa <= 1.0) => {
                Err(Error::validation("kappa", "safety factor must be in (0,1]"))
            }
            NoiseMode::Adaptive { sigma_max, .. } if !(sigma_max > 0.0 && sigma_max.is_finite()) => {
                Err(Error::validation("sigma_max", "must be > 0"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    /// Indices into the training set; disjoint across clients.
    pub shard: Vec<usize>,
    pub params: ParameterVector,
    pub stream_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub params: ParameterVector,
    pub round: usize,
    pub rule: AggregationRule,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientRecord {
    pub stats: ClientGradStats,
    pub critical: CriticalNoise,
    pub descent_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub clients: Vec<ClientRecord>,
    /// `κ · min_i σ_crit,i` (κ = 1 outside adaptive mode).
    pub sigma_crit: f64,
    pub sigma_applied: f64,
    /// Some client had `B ≤ 0`.
    pub nonpositive_flag: bool,
    /// Mean training loss over all shards after the update.
    pub loss: f64,
    pub z_realized: f64,
    pub visible: usize,
    pub aborted: bool,
    pub wall_seconds: f64,
}

impl RoundRecord {
    pub const CSV_HEADER: &'static str = "round,loss,sigma_applied,sigma_crit,z_realized,aborted";
    pub const CLIENT_CSV_HEADER: &'static str =
        "round,client,B,mu_norm,d,n,delta,sigma_crit,sigma_applied,descent_fraction";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.round, self.loss, self.sigma_applied, self.sigma_crit, self.z_realized, self.aborted
        )
    }

    pub fn client_rows(&self, failure_probability: f64) -> Vec<String> {
        let n = self.clients.len();
        self.clients
            .iter()
            .map(|c| {
                format!(
                    "{},{},{},{},{},{},{},{},{},{}",
                    self.round,
                    c.stats.client,
                    c.stats.alignment,
                    c.stats.mu_norm,
                    self.visible,
                    n,
                    failure_probability,
                    c.critical.value(),
                    self.sigma_applied,
                    c.descent_fraction.map_or("nan".to_string(), |f| f.to_string()),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub initial_loss: f64,
    pub rounds: Vec<RoundRecord>,
    pub final_params: ParameterVector,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.rounds.last().map_or(self.initial_loss, |r| r.loss)
    }

    /// `rounds.csv` contents, with the initial loss as round 0.
    pub fn rounds_csv(&self) -> String {
        let mut out = format!("{}\n0,{},0,nan,nan,false\n", RoundRecord::CSV_HEADER, self.initial_loss);
        for r in &self.rounds {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn clients_csv(&self, failure_probability: f64) -> String {
        let mut out = format!("{}\n", RoundRecord::CLIENT_CSV_HEADER);
        for r in &self.rounds {
            for row in r.client_rows(failure_probability) {
                out.push_str(&row);
                out.push('\n');
            }
        }
        out
    }
}

/// `σ_t` from the current round's clean statistics: `κ · min_i σ_crit,i`, the floor
/// `1e-6` if any client has `B ≤ 0`, and `σ_max` if every threshold is unbounded.
/// Returns `(σ_t, κ · min σ_crit, per-client thresholds)`.
pub fn adaptive_noise_schedule(
    stats: &[ClientGradStats],
    visible: usize,
    failure_probability: f64,
    kappa: f64,
    sigma_max: f64,
) -> Result<(f64, f64, Vec<CriticalNoise>)> {
    let n = stats.len();
    let thresholds = if visible == 0 {
        vec![CriticalNoise::Unbounded; n]
    } else {
        stats
            .iter()
            .map(|s| critical_noise(s.alignment, s.mu_norm, n, visible, failure_probability))
            .collect::<Result<Vec<_>>>()?
    };
    let min = thresholds.iter().map(CriticalNoise::value).fold(f64::INFINITY, f64::min);
    let scaled = kappa * min;
    let sigma = if thresholds.iter().any(|t| matches!(t, CriticalNoise::NonPositive(_))) {
        ADAPTIVE_SIGMA_FLOOR
    } else if scaled.is_infinite() {
        sigma_max
    } else {
        scaled
    };
    Ok((sigma, scaled, thresholds))
}

/// `Q = scale · (Σ g_i + P Σ ε_i)` with client noise drawn from `round_seed`.
pub fn aggregate(
    client_grads: &[Vec<f64>],
    mask: &EncryptionMask,
    sigma: f64,
    placement: NoisePlacement,
    rule: AggregationRule,
    round_seed: u64,
) -> Vec<f64> {
    let n = client_grads.len();
    let mut q = vec![0.0; mask.dim()];
    for g in client_grads {
        for (a, v) in q.iter_mut().zip(g) {
            *a += v;
        }
    }
    let d = mask.visible_count();
    let mut add = |noise: Vec<f64>| {
        for (&j, e) in mask.unencrypted().iter().zip(noise) {
            q[j] += e;
        }
    };
    match placement {
        NoisePlacement::PerClient => {
            for i in 0..n {
                add(gaussian_noise(d, sigma, rng::derive(round_seed, "client", i as u64)));
            }
        }
        NoisePlacement::PostAggregation => add(gaussian_noise(d, sigma, rng::derive(round_seed, "server", 0))),
    }
    let scale = rule.scale(n);
    q.iter_mut().for_each(|v| *v *= scale);
    q
}

/// Shards and initial parameters for a run.
pub fn setup(
    spec: &ModelSpec,
    dataset: &[DataSample],
    cfg: &TrainConfig,
) -> Result<(ServerState, Vec<ClientState>)> {
    cfg.validate()?;
    let shards = partition_indices(dataset, cfg.clients, cfg.partition, rng::derive(cfg.seed, "partition", 0))?;
    let params = ParameterVector::init(spec, rng::derive(cfg.seed, "init", 0));
    let clients = shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| ClientState {
            id,
            shard,
            params: params.clone(),
            stream_id: rng::derive(cfg.seed, "client-stream", id as u64),
        })
        .collect();
    Ok((
        ServerState {
            params,
            round: 0,
            rule: cfg.rule,
            step: cfg.step,
        },
        clients,
    ))
}

/// Mean loss over the union of client shards.
pub fn global_loss(
    spec: &ModelSpec,
    params: &ParameterVector,
    dataset: &[DataSample],
    clients: &[ClientState],
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for c in clients {
        for &i in &c.shard {
            let s = &dataset[i];
            total += spec.evaluate(params.values(), &s.x, &s.target)?.loss;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn batch_of(client: &ClientState, batch: Option<usize>, round: usize) -> Vec<usize> {
    match batch {
        Some(b) if b < client.shard.len() => {
            let mut r = rng::stream(rng::derive(client.stream_id, "batch", round as u64));
            let mut picked: Vec<usize> = rand::seq::index::sample(&mut r, client.shard.len(), b)
                .into_iter()
                .map(|k| client.shard[k])
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => client.shard.clone(),
    }
}

/// One round. `fixed_mask` carries the mask across rounds for
/// [`MaskSchedule::FixedAfterFirst`].
pub fn run_round(
    spec: &ModelSpec,
    dataset: &[DataSample],
    server: &mut ServerState,
    clients: &mut [ClientState],
    cfg: &TrainConfig,
    fixed_mask: &mut Option<EncryptionMask>,
) -> Result<RoundRecord> {
    let started = Instant::now();
    server.round += 1;
    let round = server.round;
    let round_seed = rng::derive(cfg.seed, "round", round as u64);
    for c in clients.iter_mut() {
        c.params = server.params.clone();
    }

    let per_sample: Vec<Vec<Vec<f64>>> = clients
        .par_iter()
        .map(|c| {
            batch_of(c, cfg.batch_size, round)
                .into_iter()
                .map(|i| {
                    let s = &dataset[i];
                    Ok(spec.evaluate(c.params.values(), &s.x, &s.target)?.param_grad)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let dim = spec.param_count();
    let means: Vec<Vec<f64>> = per_sample
        .iter()
        .map(|rows| {
            let mut m = vec![0.0; dim];
            for g in rows {
                for (a, v) in m.iter_mut().zip(g) {
                    *a += v;
                }
            }
            m.iter_mut().for_each(|v| *v /= rows.len() as f64);
            m
        })
        .collect();
    let mut clean = vec![0.0; dim];
    for g in &means {
        for (a, v) in clean.iter_mut().zip(g) {
            *a += v;
        }
    }

    let mask = match (cfg.mask_schedule, fixed_mask.as_ref()) {
        (MaskSchedule::FixedAfterFirst, Some(m)) => m.clone(),
        _ => {
            let m = select_mask(&clean, cfg.z, &cfg.strategy, rng::derive(round_seed, "mask", 0))?;
            if cfg.mask_schedule == MaskSchedule::FixedAfterFirst {
                *fixed_mask = Some(m.clone());
            }
            m
        }
    };
    let stats = per_sample
        .iter()
        .enumerate()
        .map(|(i, rows)| client_stats_from_gradients(i, rows, &mask, AggregateGradient::Shared(&clean)))
        .collect::<Result<Vec<_>>>()?;

    let visible = mask.visible_count();
    let (kappa, sigma_max) = match cfg.noise {
        NoiseMode::Adaptive { kappa, sigma_max } => (kappa, sigma_max),
        NoiseMode::Fixed(_) => (1.0, DEFAULT_SIGMA_MAX),
    };
    let (scheduled, sigma_crit, thresholds) =
        adaptive_noise_schedule(&stats, visible, cfg.failure_probability, kappa, sigma_max)?;
    let sigma = match cfg.noise {
        NoiseMode::Fixed(s) => s,
        NoiseMode::Adaptive { .. } => scheduled,
    };
    let nonpositive_flag = thresholds.iter().any(|t| matches!(t, CriticalNoise::NonPositive(_)));

    let fractions: Vec<Option<f64>> = if cfg.descent_trials > 0 && visible > 0 {
        descent_check(
            &stats,
            &mask,
            sigma,
            cfg.step,
            cfg.failure_probability,
            cfg.descent_trials,
            cfg.rule,
            rng::derive(round_seed, "descent", 0),
        )?
        .fractions
        .into_iter()
        .map(Some)
        .collect()
    } else {
        vec![None; stats.len()]
    };

    let q = aggregate(&means, &mask, sigma, cfg.placement, cfg.rule, round_seed);
    let aborted = q.iter().any(|v| !v.is_finite());
    if aborted {
        log::warn!("round {round}: non-finite aggregate, update skipped");
    } else {
        for (t, v) in server.params.values_mut().iter_mut().zip(&q) {
            *t -= server.step * v;
        }
    }
    let loss = global_loss(spec, &server.params, dataset, clients)?;

    Ok(RoundRecord {
        round,
        clients: stats
            .into_iter()
            .zip(thresholds)
            .zip(fractions)
            .map(|((stats, critical), descent_fraction)| ClientRecord {
                stats,
                critical,
                descent_fraction,
            })
            .collect(),
        sigma_crit,
        sigma_applied: sigma,
        nonpositive_flag,
        loss,
        z_realized: mask.realized_ratio(),
        visible,
        aborted,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Per-sample gradients of every client over the given shards, in client order.
pub fn client_sample_gradients(
    spec: &ModelSpec,
    params: &ParameterVector,
    dataset: &[DataSample],
    shards: &[Vec<usize>],
) -> Result<Vec<Vec<Vec<f64>>>> {
    shards
        .par_iter()
        .map(|shard| {
            shard
                .iter()
                .map(|&i| {
                    let s = dataset.get(i).ok_or_else(|| Error::config(format!("sample {i} out of range")))?;
                    Ok(spec.evaluate(params.values(), &s.x, &s.target)?.param_grad)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// Client statistics under the magnitude mask of ratio `z`, selected from the clean
/// aggregate (sum of client batch means).
pub fn round_statistics(per_client: &[Vec<Vec<f64>>], z: f64) -> Result<(EncryptionMask, Vec<ClientGradStats>)> {
    let dim = per_client
        .first()
        .and_then(|rows| rows.first())
        .map(Vec::len)
        .ok_or_else(|| Error::config("need at least one client with one sample"))?;
    let mut clean = vec![0.0; dim];
    for rows in per_client {
        if rows.is_empty() {
            return Err(Error::config("client with an empty batch"));
        }
        for g in rows {
            for (a, v) in clean.iter_mut().zip(g) {
                *a += v / rows.len() as f64;
            }
        }
    }
    let mask = select_mask(&clean, z, &MaskStrategy::Magnitude, 0)?;
    let stats = per_client
        .iter()
        .enumerate()
        .map(|(i, rows)| client_stats_from_gradients(i, rows, &mask, AggregateGradient::Shared(&clean)))
        .collect::<Result<Vec<_>>>()?;
    Ok((mask, stats))
}

/// Scheduler threshold `κ · min_i σ_crit,i` at each `z` for one fixed set of client
/// gradients.
pub fn critical_noise_profile(
    per_client: &[Vec<Vec<f64>>],
    grid: &[f64],
    failure_probability: f64,
    kappa: f64,
) -> Result<Vec<f64>> {
    grid.iter()
        .map(|&z| {
            let (mask, stats) = round_statistics(per_client, z)?;
            let (_, scaled, _) =
                adaptive_noise_schedule(&stats, mask.visible_count(), failure_probability, kappa, DEFAULT_SIGMA_MAX)?;
            Ok(scaled)
        })
        .collect()
}

/// Full training run, bit-reproducible in `cfg.seed`.
pub fn train(spec: &ModelSpec, dataset: &[DataSample], cfg: &TrainConfig) -> Result<TrainLog> {
    let (mut server, mut clients) = setup(spec, dataset, cfg)?;
    let initial_loss = global_loss(spec, &server.params, dataset, &clients)?;
    let mut fixed = None;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        rounds.push(run_round(spec, dataset, &mut server, &mut clients, cfg, &mut fixed)?);
    }
    Ok(TrainLog {
        initial_loss,
        rounds,
        final_params: server.params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{generate_synthetic_dataset, LabelRule, SyntheticPrior, Target, ZooModel};

    fn regression_data() -> Vec<DataSample> {
        generate_synthetic_dataset(
            16,
            60,
            SyntheticPrior::new(1.0).unwrap(),
            &LabelRule::Regression {
                teacher_seed: 1,
                noise: 0.0,
            },
            2,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_sum_is_exact_sum() {
        let grads = vec![vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 0.25], vec![-2.0, 0.0, 1.0]];
        let mask = EncryptionMask::all_visible(3);
        let q = aggregate(&grads, &mask, 0.0, NoisePlacement::PerClient, AggregationRule::Sum, 9);
        assert_eq!(q, vec![-0.5, 1.0, 4.25]);
    }

    #[test]
    fn averaging_shrinks_noise_variance() {
        let n = 3;
        let sigma = 0.5;
        let grads = vec![vec![0.0; 4]; n];
        let mask = EncryptionMask::all_visible(4);
        for (rule, expected) in [
            (AggregationRule::Sum, sigma * sigma * n as f64),
            (AggregationRule::Average, sigma * sigma / n as f64),
        ] {
            let mut sum2 = 0.0;
            let rounds = 10_000;
            for r in 0..rounds {
                let q = aggregate(&grads, &mask, sigma, NoisePlacement::PerClient, rule, r as u64);
                sum2 += q.iter().map(|v| v * v).sum::<f64>();
            }
            let var = sum2 / (rounds * 4) as f64;
            assert!((var / expected - 1.0).abs() < 0.05, "{rule:?}: {var} vs {expected}");
        }
    }

    #[test]
    fn single_client_gradient_descent_decreases_quadratic_loss() {
        let spec = ZooModel::Linear.spec();
        let data = regression_data();
        let cfg = TrainConfig {
            rounds: 20,
            clients: 1,
            step: 0.05,
            ..TrainConfig::default()
        };
        let log = train(&spec, &data, &cfg).unwrap();
        let mut prev = log.initial_loss;
        for r in &log.rounds {
            assert!(r.loss < prev, "round {}: {} !< {prev}", r.round, r.loss);
            prev = r.loss;
        }
    }

    #[test]
    fn training_is_reproducible() {
        let spec = ZooModel::Small.spec();
        let data = generate_synthetic_dataset(
            16,
            30,
            SyntheticPrior::new(1.0).unwrap(),
            &LabelRule::Classes {
                classes: 3,
                teacher_seed: 4,
            },
            5,
        )
        .unwrap();
        let cfg = TrainConfig {
            rounds: 5,
            z: 0.5,
            noise: NoiseMode::adaptive(),
            descent_trials: 100,
            seed: 42,
            ..TrainConfig::default()
        };
        let a = train(&spec, &data, &cfg).unwrap();
        let b = train(&spec, &data, &cfg).unwrap();
        assert_eq!(a.rounds_csv(), b.rounds_csv());
        assert_eq!(a.clients_csv(0.05), b.clients_csv(0.05));
        for r in &a.rounds {
            if r.sigma_crit.is_finite() && r.sigma_crit > 0.0 && !r.nonpositive_flag {
                assert!(r.sigma_applied <= r.sigma_crit);
            }
        }
    }

    fn stats(client: usize, alignment: f64, mu: Vec<f64>) -> ClientGradStats {
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
    fn schedule_policies() {
        let same = vec![stats(0, 1.0, vec![1.0, 0.0]), stats(1, 1.0, vec![0.0, 1.0])];
        let (sigma, crit, t) = adaptive_noise_schedule(&same, 2, 0.05, 0.9, 1e-2).unwrap();
        assert_eq!(t[0], t[1]);
        assert_eq!(sigma, 0.9 * t[0].value());
        assert_eq!(crit, sigma);

        let anti = vec![stats(0, 1.0, vec![1.0]), stats(1, -0.5, vec![-1.0])];
        let (sigma, _, _) = adaptive_noise_schedule(&anti, 1, 0.05, 0.9, 1e-2).unwrap();
        assert_eq!(sigma, ADAPTIVE_SIGMA_FLOOR);

        let flat = vec![stats(0, 1.0, vec![0.0])];
        let (sigma, crit, _) = adaptive_noise_schedule(&flat, 1, 0.05, 0.9, 1e-2).unwrap();
        assert_eq!(sigma, 1e-2);
        assert!(crit.is_infinite());

        let one = vec![stats(0, 2.0, vec![1.0; 8])];
        let mut last = 0.0;
        for d in (1..=8).rev() {
            let s = adaptive_noise_schedule(&one, d, 0.05, 0.9, 1e-2).unwrap().0;
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn label_skew_shards_are_disjoint() {
        let data: Vec<DataSample> = (0..12)
            .map(|i| DataSample::new(vec![i as f64; 16], Target::Class(i % 3)).unwrap())
            .collect();
        let cfg = TrainConfig {
            partition: Partition::LabelSkew,
            ..TrainConfig::default()
        };
        let (_, clients) = setup(&ZooModel::Small.spec(), &data, &cfg).unwrap();
        let mut seen: Vec<usize> = clients.iter().flat_map(|c| c.shard.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }
}
