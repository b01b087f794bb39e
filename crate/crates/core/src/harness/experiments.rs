//! The six canonical pipelines. Each writes CSVs and plot series into a [`RunDir`].

use std::path::PathBuf;

use crate::attack::{attack_sweep, SweepConfig, SweepSummary, SweepTrial};
use crate::bounds::{bound_curve, BoundCurveConfig, BoundReport};
use crate::error::{Error, Result};
use crate::fedsim::{
    client_sample_gradients, round_statistics, train, NoiseMode, TrainConfig, TrainLog,
};
use crate::harness::config::{DataSource, ExperimentConfig, ExperimentKind, LabelKind};
use crate::harness::persist::{RunDir, CONFIG_SNAPSHOT_FILE};
use crate::harness::plot::{emit_plot_data, PlotSeries};
use crate::nn::{
    generate_synthetic_dataset, load_image_dataset, partition_indices, DataSample, LabelRule,
    ParameterVector, SyntheticPrior, ZooModel,
};
use crate::rng;
use crate::utility::{concentration_exceedances, critical_noise, descent_check, CriticalNoise};

/// Dataset described by the config, checked against the model's input size.
pub fn build_dataset(cfg: &ExperimentConfig, model: ZooModel) -> Result<Vec<DataSample>> {
    let spec = model.spec();
    let data = match &cfg.data.source {
        DataSource::Synthetic => {
            let labels = match cfg.data.labels {
                LabelKind::Classes => LabelRule::Classes {
                    classes: ZooModel::CLASSES,
                    teacher_seed: rng::derive(cfg.seed, "teacher", 0),
                },
                LabelKind::Regression => LabelRule::Regression {
                    teacher_seed: rng::derive(cfg.seed, "teacher", 0),
                    noise: cfg.data.label_noise,
                },
            };
            generate_synthetic_dataset(
                spec.input_dim(),
                cfg.data.count,
                SyntheticPrior::new(cfg.data.tau)?,
                &labels,
                rng::derive(cfg.seed, "data", 0),
            )?
        }
        DataSource::Images(dir) => {
            let mut data = load_image_dataset(dir)?;
            data.truncate(cfg.data.count);
            data
        }
    };
    if data.is_empty() {
        return Err(Error::validation("data.source", "dataset is empty"));
    }
    if let Some(s) = data.iter().find(|s| s.x.len() != spec.input_dim()) {
        return Err(Error::validation(
            "data.source",
            format!("samples have {} features, model {} expects {}", s.x.len(), model.name(), spec.input_dim()),
        ));
    }
    Ok(data)
}

/// Untrained parameters of model `k` in the config's model list.
pub fn model_params(cfg: &ExperimentConfig, k: usize) -> ParameterVector {
    ParameterVector::init(&cfg.models[k].spec(), rng::derive(cfg.seed, "params", k as u64))
}

pub fn train_config(cfg: &ExperimentConfig, z: f64, noise: NoiseMode) -> TrainConfig {
    let t = &cfg.train;
    TrainConfig {
        rounds: t.rounds,
        clients: t.clients,
        step: t.step,
        z,
        strategy: cfg.defense.strategy.clone(),
        mask_schedule: t.mask_schedule,
        noise,
        placement: t.placement,
        rule: t.rule,
        partition: t.partition,
        batch_size: (t.batch_size > 0).then_some(t.batch_size),
        failure_probability: t.delta,
        descent_trials: t.descent_trials,
        seed: rng::derive(cfg.seed, "train", 0),
    }
}

fn csv(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut out = format!("{header}\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    out
}

struct Outputs<'a> {
    run: &'a mut RunDir,
    hash: String,
    plots: Vec<PlotSeries>,
}

impl Outputs<'_> {
    fn csv(&mut self, rel: &str, text: String) -> Result<()> {
        self.run.write(rel, text.as_bytes()).map(|_| ())
    }

    fn plot(&mut self, name: String, x: &str, y: &str, points: Vec<(f64, f64)>) -> Result<()> {
        self.plots.push(PlotSeries::new(name, x, y, points, &self.hash[..12])?);
        Ok(())
    }

    fn flush_plots(&mut self) -> Result<()> {
        let dir = self.run.path().join("plots");
        for path in emit_plot_data(&self.plots, &dir)? {
            self.run.register(&path)?;
        }
        self.plots.clear();
        Ok(())
    }
}

fn train_logs(out: &mut Outputs<'_>, cfg: &ExperimentConfig, dir: &str, log: &TrainLog) -> Result<()> {
    out.csv(&format!("{dir}/rounds.csv"), log.rounds_csv())?;
    out.csv(&format!("{dir}/clients.csv"), log.clients_csv(cfg.train.delta))
}

fn loss_points(log: &TrainLog) -> Vec<(f64, f64)> {
    std::iter::once((0.0, log.initial_loss))
        .chain(log.rounds.iter().map(|r| (r.round as f64, r.loss)))
        .collect()
}

fn bound_curve_run(cfg: &ExperimentConfig, out: &mut Outputs<'_>) -> Result<()> {
    let mut rows = Vec::new();
    for (k, &model) in cfg.models.iter().enumerate() {
        let spec = model.spec();
        let data = build_dataset(cfg, model)?;
        let params = model_params(cfg, k);
        let reports = bound_curve(
            &BoundCurveConfig {
                spec: &spec,
                params: &params,
                dataset: &data,
                sigma: cfg.defense.sigma,
                prior: cfg.bounds.prior,
                step: cfg.bounds.jacobian_step,
                sample_cap: cfg.bounds.sample_cap,
                seed: rng::derive(cfg.seed, "bounds", k as u64),
            },
            &cfg.grid.z,
        )?;
        out.plot(
            format!("bound-{}", model.name()),
            "z",
            "bound",
            reports.iter().map(|r| (r.z_requested, r.bound.value())).collect(),
        )?;
        out.plot(
            format!("exposure-{}", model.name()),
            "z",
            "exposure",
            reports.iter().map(|r| (r.z_requested, r.exposure)).collect(),
        )?;
        rows.extend(reports.iter().map(BoundReport::csv_row));
    }
    out.csv("bounds.csv", csv(BoundReport::CSV_HEADER, rows))
}

fn attack_sweep_run(cfg: &ExperimentConfig, out: &mut Outputs<'_>) -> Result<()> {
    let model = cfg.models[0];
    let spec = model.spec();
    let data = build_dataset(cfg, model)?;
    let params = model_params(cfg, 0);
    let mut summaries = Vec::new();
    let mut trials = Vec::new();
    let mut traces = Vec::new();
    for (k, &sigma) in cfg.grid.sigma.iter().enumerate() {
        let (summary, rows) = attack_sweep(&SweepConfig {
            spec: &spec,
            params: &params,
            dataset: &data,
            grid: &cfg.grid.z,
            sigma,
            attack: cfg.attack.config.clone(),
            trials: cfg.attack.trials,
            prior: cfg.bounds.prior,
            jacobian_step: cfg.bounds.jacobian_step,
            exposure_cap: cfg.bounds.sample_cap,
            keep_traces: cfg.attack.traces,
            seed: rng::derive(cfg.seed, "attack-sweep", k as u64),
        })?;
        out.plot(
            format!("mse-sigma{sigma}"),
            "z",
            "mean_mse",
            summary.iter().map(|s| (s.z, s.mean_mse)).collect(),
        )?;
        out.plot(
            format!("bound-sigma{sigma}"),
            "z",
            "bound",
            summary.iter().map(|s| (s.z, s.bound)).collect(),
        )?;
        summaries.extend(summary.iter().map(SweepSummary::csv_row));
        for r in &rows {
            trials.push(r.csv_row());
            for (restart, trace) in r.traces.iter().enumerate() {
                for (it, v) in trace.iter().enumerate() {
                    traces.push(format!("{},{},{},{restart},{it},{v}", r.trial, r.z, r.sigma));
                }
            }
        }
    }
    out.csv("attack_summary.csv", csv(SweepSummary::CSV_HEADER, summaries))?;
    out.csv("attack_trials.csv", csv(SweepTrial::CSV_HEADER, trials))?;
    if cfg.attack.traces {
        out.csv("attack_traces.csv", csv(SweepTrial::TRACE_HEADER, traces))?;
    }
    Ok(())
}

fn noise_utility_run(cfg: &ExperimentConfig, out: &mut Outputs<'_>) -> Result<()> {
    let model = cfg.models[0];
    let spec = model.spec();
    let data = build_dataset(cfg, model)?;
    let mut logs = Vec::new();
    for &sigma in &cfg.grid.sigma {
        let log = train(&spec, &data, &train_config(cfg, cfg.defense.z, NoiseMode::Fixed(sigma)))?;
        train_logs(out, cfg, &format!("sigma-{sigma}"), &log)?;
        out.plot(format!("loss-sigma{sigma}"), "round", "loss", loss_points(&log))?;
        logs.push((sigma, log));
    }
    let baseline = logs
        .iter()
        .find(|(s, _)| *s == 0.0)
        .map_or(logs[0].1.final_loss(), |(_, l)| l.final_loss());
    let rows = logs.iter().map(|(sigma, log)| {
        format!(
            "{sigma},{},{},{}",
            log.initial_loss,
            log.final_loss(),
            log.final_loss() / baseline - 1.0
        )
    });
    out.csv("utility.csv", csv("sigma,initial_loss,final_loss,relative_gap", rows))?;
    out.plot(
        "final-loss-vs-sigma".into(),
        "sigma",
        "final_loss",
        logs.iter().map(|(s, l)| (*s, l.final_loss())).collect(),
    )
}

fn adaptive_train_run(cfg: &ExperimentConfig, out: &mut Outputs<'_>) -> Result<()> {
    let model = cfg.models[0];
    let spec = model.spec();
    let data = build_dataset(cfg, model)?;
    let baseline = train(&spec, &data, &train_config(cfg, 0.0, NoiseMode::Fixed(0.0)))?;
    train_logs(out, cfg, "baseline", &baseline)?;
    out.plot("loss-baseline".into(), "round", "loss", loss_points(&baseline))?;
    let noise = NoiseMode::Adaptive {
        kappa: cfg.train.kappa,
        sigma_max: cfg.train.sigma_max,
    };
    let mut rows = Vec::new();
    let mut finals = Vec::new();
    for &z in &cfg.grid.z {
        let log = train(&spec, &data, &train_config(cfg, z, noise))?;
        let dir = format!("z-{z}");
        train_logs(out, cfg, &dir, &log)?;
        out.plot(format!("loss-z{z}"), "round", "loss", loss_points(&log))?;
        out.plot(
            format!("sigma-z{z}"),
            "round",
            "sigma_applied",
            log.rounds.iter().map(|r| (r.round as f64, r.sigma_applied)).collect(),
        )?;
        let mean_sigma = log.rounds.iter().map(|r| r.sigma_applied).sum::<f64>() / log.rounds.len() as f64;
        let floored = log.rounds.iter().filter(|r| r.nonpositive_flag).count();
        rows.push(format!(
            "{z},{},{},{},{mean_sigma},{floored}",
            log.final_loss(),
            baseline.final_loss(),
            log.final_loss() / baseline.final_loss() - 1.0
        ));
        finals.push((z, log.final_loss()));
    }
    out.csv(
        "adaptive.csv",
        csv("z,final_loss,baseline_loss,relative_gap,mean_sigma_applied,floored_rounds", rows),
    )?;
    out.plot("final-loss-vs-z".into(), "z", "final_loss", finals)
}

fn concentration_run(cfg: &ExperimentConfig, out: &mut Outputs<'_>) -> Result<()> {
    let trials = cfg.mc_trials;
    let mut deltas = cfg.grid.delta.clone();
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let mut rows = Vec::new();
    for (si, &sigma) in cfg.grid.sigma.iter().enumerate() {
        for &n in &cfg.grid.clients {
            for &d in &cfg.grid.dims {
                let seed = rng::derive(rng::derive(cfg.seed, "concentration", si as u64), &format!("n{n}"), d as u64);
                let hits = concentration_exceedances(sigma, n, d, &deltas, trials, seed)?;
                for (&delta, &p) in deltas.iter().zip(&hits) {
                    let tol = delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
                    rows.push(format!("{n},{d},{delta},{sigma},{trials},{p},{tol},{}", p <= tol));
                }
                out.plot(
                    format!("exceedance-sigma{sigma}-n{n}-d{d}"),
                    "delta",
                    "exceedance",
                    deltas.iter().copied().zip(hits).collect(),
                )?;
            }
        }
    }
    out.csv("concentration.csv", csv("n,d,delta,sigma,trials,exceedance,tolerance,within", rows))
}

fn descent_run(cfg: &ExperimentConfig, out: &mut Outputs<'_>) -> Result<()> {
    let model = cfg.models[0];
    let spec = model.spec();
    let data = build_dataset(cfg, model)?;
    let params = model_params(cfg, 0);
    let shards = partition_indices(&data, cfg.train.clients, cfg.train.partition, rng::derive(cfg.seed, "partition", 0))?;
    let grads = client_sample_gradients(&spec, &params, &data, &shards)?;
    let (mask, stats) = round_statistics(&grads, cfg.defense.z)?;
    let d = mask.visible_count();
    if d == 0 {
        return Err(Error::validation("defense.z", "every coordinate is encrypted; no noise to analyse"));
    }
    let n = stats.len();
    let crit = stats
        .iter()
        .map(|s| critical_noise(s.alignment, s.mu_norm, n, d, cfg.train.delta))
        .collect::<Result<Vec<_>>>()?;
    let reference = crit
        .iter()
        .filter_map(|c| match c {
            CriticalNoise::Threshold(v) => Some(*v),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min);
    if !reference.is_finite() {
        return Err(Error::Runtime(
            "no client has a finite positive critical noise; descent sweep undefined".into(),
        ));
    }
    let mut rows = Vec::new();
    let mut per_client: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
    for (k, &mult) in cfg.grid.multiplier.iter().enumerate() {
        let sigma = mult * reference;
        let report = descent_check(
            &stats,
            &mask,
            sigma,
            cfg.train.step,
            cfg.train.delta,
            cfg.mc_trials,
            cfg.train.rule,
            rng::derive(cfg.seed, "descent", k as u64),
        )?;
        for (i, f) in report.fractions.iter().enumerate() {
            rows.push(format!(
                "{mult},{sigma},{i},{},{},{},{f},{}",
                stats[i].alignment,
                stats[i].mu_norm,
                crit[i].value(),
                report.target
            ));
            per_client[i].push((mult, *f));
        }
    }
    for (i, points) in per_client.into_iter().enumerate() {
        out.plot(format!("descent-client{i}"), "sigma / sigma_crit", "descent_fraction", points)?;
    }
    out.csv(
        "descent.csv",
        csv("multiplier,sigma,client,B,mu_norm,sigma_crit,descent_fraction,target", rows),
    )
}

/// Runs `cfg` into `<cfg.out>/<name>-<hash>` and returns that directory. On failure
/// the outputs written so far stay in place and the manifest records the error.
pub fn run_experiment(cfg: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    cfg.validate()?;
    let hash = cfg.hash();
    let mut run = RunDir::create(&cfg.out, &cfg.name, &hash, force)?;
    run.write(CONFIG_SNAPSHOT_FILE, cfg.canonical().as_bytes())?;
    run.record_seed("seed", cfg.seed);
    let result = {
        let mut out = Outputs {
            run: &mut run,
            hash: hash.clone(),
            plots: Vec::new(),
        };
        let body = match cfg.kind {
            ExperimentKind::BoundCurve => bound_curve_run(cfg, &mut out),
            ExperimentKind::AttackSweep => attack_sweep_run(cfg, &mut out),
            ExperimentKind::NoiseUtility => noise_utility_run(cfg, &mut out),
            ExperimentKind::AdaptiveTrain => adaptive_train_run(cfg, &mut out),
            ExperimentKind::Concentration => concentration_run(cfg, &mut out),
            ExperimentKind::Descent => descent_run(cfg, &mut out),
        };
        // Plots gathered before a failure are still written.
        let plots = out.flush_plots();
        body.and(plots)
    };
    let message = result.as_ref().err().map(ToString::to_string);
    run.finish(cfg.kind.name(), &hash, message.as_deref())?;
    result.map(|_| run.path().to_owned())
}

/// Built-in seed-42 smoke configuration: a short noise-utility run.
pub const SMOKE_CONFIG: &str = "\
kind = noise-utility
name = smoke
model = linear
seed = 42

[data]
count = 60

[grid]
sigma = 0, 0.001, 0.1

[train]
rounds = 10
descent_trials = 200
";
