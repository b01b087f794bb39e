//! The acceptance checks behind `gradshield verify`.
//!
//! Every check is deterministic: the detail strings and tables depend only on the
//! fixed fixture seeds, so two runs produce byte-identical CSVs. Wall time is kept
//! out of the CSVs and only shown in [`CriterionOutcome::line`].

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use crate::attack::{attack_sweep, AttackConfig, SweepConfig, SweepSummary};
use crate::bounds::{
    bound_curve, empirical_fisher_from_jacobian, fisher_information, BoundCurveConfig,
    BoundReport, PriorInfo,
};
use crate::defense::{select_mask, EncryptionMask, MaskStrategy};
use crate::error::{Error, Result};
use crate::fedsim::{
    client_sample_gradients, critical_noise_profile, round_statistics, setup, train, NoiseMode,
    TrainConfig,
};
use crate::harness::config::{ExperimentConfig, BOUND_GRID};
use crate::harness::experiments::{run_experiment, SMOKE_CONFIG};
use crate::nn::{
    generate_synthetic_dataset, input_jacobian_of_gradient, param_gradient, DataSample,
    LabelRule, ParameterVector, SyntheticPrior, ZooModel, DEFAULT_JACOBIAN_STEP,
};
use crate::rng;
use crate::utility::{
    concentration_exceedances, critical_noise, descent_check, AggregationRule, CriticalNoise,
    DEFAULT_FAILURE_PROBABILITY, DEFAULT_SAFETY_FACTOR,
};

/// Fixture seeds.
const TEACHER_SEED: u64 = 7;
const DATA_SEED: u64 = 8;
const PARAMS_SEED: u64 = 1;
const CURVE_SEED: u64 = 3;
const ATTACK_SEED: u64 = 5;
const SWEEP_SEED: u64 = 9;
const TRAIN_SEED: u64 = 42;
const CHECK_SEED: u64 = 2024;

const CURVE_SIGMA: f64 = 1e-2;
const ATTACK_GRID: [f64; 3] = [0.0, 0.5, 0.9];
const ADAPTIVE_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    /// Trial counts and fixture sizes as stated in the acceptance criteria.
    Full,
    /// Reduced counts for smoke runs and the determinism replay. Pass/fail at this
    /// scale is informative only.
    Quick,
}

impl Scale {
    fn pick<T>(self, full: T, quick: T) -> T {
        match self {
            Scale::Full => full,
            Scale::Quick => quick,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionOutcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    /// `(file name, csv text)` with the numbers behind the verdict.
    pub table: Option<(String, String)>,
    pub seconds: f64,
    /// Runtime budget at full scale.
    pub budget_seconds: Option<f64>,
}

impl CriterionOutcome {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.detail,
            self.seconds
        )
    }
}

struct Check {
    id: u8,
    title: &'static str,
    budget_seconds: Option<f64>,
    run: fn(Scale) -> Result<Verdict>,
}

struct Verdict {
    passed: bool,
    detail: String,
    table: Option<(String, String)>,
}

const CHECKS: &[Check] = &[
    Check { id: 1, title: "bound nondecreasing in z", budget_seconds: Some(60.0), run: check_bound_monotone },
    Check { id: 2, title: "small model bound above large model bound", budget_seconds: Some(300.0), run: check_model_ordering },
    Check { id: 3, title: "exposure nonincreasing in z", budget_seconds: None, run: check_exposure_monotone },
    Check { id: 4, title: "closed-form Fisher matches score covariance", budget_seconds: Some(300.0), run: check_fisher_oracle },
    Check { id: 5, title: "attack MSE at or above the bound", budget_seconds: Some(1800.0), run: check_attack_vs_bound },
    Check { id: 6, title: "Gaussian norm tail bound", budget_seconds: Some(120.0), run: check_concentration },
    Check { id: 7, title: "descent guarantee below critical noise", budget_seconds: Some(60.0), run: check_descent },
    Check { id: 8, title: "noise-utility regimes", budget_seconds: Some(600.0), run: check_noise_utility },
    Check { id: 9, title: "adaptive noise preserves utility", budget_seconds: Some(900.0), run: check_adaptive },
    Check { id: 10, title: "critical noise nondecreasing in z", budget_seconds: None, run: check_critical_profile },
    Check { id: 11, title: "restriction/prolongation algebra", budget_seconds: None, run: check_operator_algebra },
    Check { id: 12, title: "byte-identical reruns", budget_seconds: None, run: check_determinism },
];

pub const CRITERIA: usize = 12;

/// Runs every check in order. Errors inside a check become a failed outcome.
pub fn run_all(scale: Scale) -> Vec<CriterionOutcome> {
    run_selected(scale, |_| true)
}

/// Runs the checks whose id satisfies `keep`.
pub fn run_selected(scale: Scale, keep: impl Fn(u8) -> bool) -> Vec<CriterionOutcome> {
    CHECKS
        .iter()
        .filter(|c| keep(c.id))
        .map(|c| run_check(c, scale))
        .collect()
}

fn run_check(check: &Check, scale: Scale) -> CriterionOutcome {
    log::info!("criterion {}: {}", check.id, check.title);
    let started = Instant::now();
    let verdict = (check.run)(scale).unwrap_or_else(|e| Verdict {
        passed: false,
        detail: format!("error: {e}"),
        table: None,
    });
    let seconds = started.elapsed().as_secs_f64();
    let mut passed = verdict.passed;
    let mut detail = verdict.detail;
    if let (Scale::Full, Some(budget)) = (scale, check.budget_seconds) {
        if seconds > budget {
            passed = false;
            detail.push_str(&format!("; over the {budget}s runtime budget"));
        }
    }
    CriterionOutcome {
        id: check.id,
        title: check.title,
        passed,
        detail,
        table: verdict.table,
        seconds,
        budget_seconds: check.budget_seconds,
    }
}

/// `id,title,passed,detail`, one row per outcome. Wall time is deliberately absent.
pub fn outcomes_csv(outcomes: &[CriterionOutcome]) -> String {
    let mut out = String::from("id,title,passed,detail\n");
    for o in outcomes {
        out.push_str(&format!(
            "{},{},{},\"{}\"\n",
            o.id,
            o.title,
            o.passed,
            o.detail.replace('"', "'")
        ));
    }
    out
}

/// Writes `verify.csv` and one table per criterion into `dir`.
pub fn write_outputs(outcomes: &[CriterionOutcome], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let path = dir.join("verify.csv");
    fs::write(&path, outcomes_csv(outcomes))?;
    written.push(path);
    for o in outcomes {
        if let Some((name, text)) = &o.table {
            let path = dir.join(name);
            fs::write(&path, text)?;
            written.push(path);
        }
    }
    Ok(written)
}

fn table(name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Option<(String, String)> {
    let mut text = format!("{header}\n");
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    Some((name.to_owned(), text))
}

// ---- fixtures ----

fn prior() -> SyntheticPrior {
    SyntheticPrior::new(1.0).expect("unit prior")
}

fn classifier_data(count: usize) -> Result<Vec<DataSample>> {
    generate_synthetic_dataset(
        ZooModel::INPUT_DIM,
        count,
        prior(),
        &LabelRule::Classes {
            classes: ZooModel::CLASSES,
            teacher_seed: TEACHER_SEED,
        },
        DATA_SEED,
    )
}

fn regression_data(count: usize) -> Result<Vec<DataSample>> {
    generate_synthetic_dataset(
        ZooModel::INPUT_DIM,
        count,
        prior(),
        &LabelRule::Regression {
            teacher_seed: TEACHER_SEED,
            noise: 0.3,
        },
        DATA_SEED,
    )
}

fn fixture_data(model: ZooModel, count: usize) -> Result<Vec<DataSample>> {
    if model.is_classifier() {
        classifier_data(count)
    } else {
        regression_data(count)
    }
}

fn curve(model: ZooModel, scale: Scale) -> Result<Vec<BoundReport>> {
    let samples = scale.pick(64, 16);
    let data = classifier_data(samples)?;
    let spec = model.spec();
    let params = ParameterVector::init(&spec, PARAMS_SEED);
    bound_curve(
        &BoundCurveConfig {
            spec: &spec,
            params: &params,
            dataset: &data,
            sigma: CURVE_SIGMA,
            prior: PriorInfo::gaussian(1.0)?,
            step: DEFAULT_JACOBIAN_STEP,
            sample_cap: samples,
            seed: CURVE_SEED,
        },
        BOUND_GRID,
    )
}

fn bound_rows(curves: &[&[BoundReport]]) -> Vec<String> {
    curves.iter().flat_map(|c| c.iter().map(BoundReport::csv_row)).collect()
}

/// Same shards and initial parameters as a training run with `TRAIN_SEED`.
fn train_fixture(model: ZooModel) -> Result<(Vec<DataSample>, TrainConfig)> {
    let data = fixture_data(model, 150)?;
    let cfg = TrainConfig {
        seed: TRAIN_SEED,
        ..TrainConfig::default()
    };
    Ok((data, cfg))
}

fn first_round_gradients(model: ZooModel) -> Result<Vec<Vec<Vec<f64>>>> {
    let (data, cfg) = train_fixture(model)?;
    let spec = model.spec();
    let (server, clients) = setup(&spec, &data, &cfg)?;
    let shards: Vec<Vec<usize>> = clients.into_iter().map(|c| c.shard).collect();
    client_sample_gradients(&spec, &server.params, &data, &shards)
}

fn relative_gap(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs()
}

// ---- checks ----

fn check_bound_monotone(scale: Scale) -> Result<Verdict> {
    let reports = curve(ZooModel::Small, scale)?;
    let mut broken = Vec::new();
    for w in reports.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let (va, vb) = (a.bound.value(), b.bound.value());
        let ok = if b.visible < a.visible { vb > va } else { vb >= va };
        if !ok {
            broken.push(format!("z {} -> {}", a.z_requested, b.z_requested));
        }
    }
    let strict = reports.windows(2).filter(|w| w[1].visible < w[0].visible).count();
    Ok(Verdict {
        passed: broken.is_empty(),
        detail: if broken.is_empty() {
            format!(
                "{} points, {strict} steps with smaller d all strictly increasing, bound {:.4e} -> {:.4e}",
                reports.len(),
                reports[0].bound.value(),
                reports[reports.len() - 1].bound.value()
            )
        } else {
            format!("order broken at {}", broken.join(", "))
        },
        table: table("criterion01_bounds.csv", BoundReport::CSV_HEADER, bound_rows(&[&reports])),
    })
}

fn check_model_ordering(scale: Scale) -> Result<Verdict> {
    let small = curve(ZooModel::Small, scale)?;
    let large = curve(ZooModel::Large, scale)?;
    let mut qualifying = 0;
    let mut qualifying_ok = 0;
    let mut ordered = 0;
    for (s, l) in small.iter().zip(&large) {
        let above = s.bound.value() > l.bound.value();
        ordered += usize::from(above);
        if relative_gap(s.exposure, l.exposure) < 0.1 || relative_gap(l.exposure, s.exposure) < 0.1 {
            qualifying += 1;
            qualifying_ok += usize::from(above);
        }
    }
    let n = small.len();
    Ok(Verdict {
        // The comparison is only required where exposures are close; the ordering is
        // additionally required everywhere.
        passed: qualifying_ok == qualifying && ordered == n,
        detail: format!(
            "{qualifying_ok}/{qualifying} points with exposures within 10% ordered; ordering holds at {ordered}/{n} grid points"
        ),
        table: table("criterion02_bounds.csv", BoundReport::CSV_HEADER, bound_rows(&[&small, &large])),
    })
}

fn check_exposure_monotone(scale: Scale) -> Result<Verdict> {
    let mut rows = Vec::new();
    let mut broken = Vec::new();
    for model in [ZooModel::Small, ZooModel::Large] {
        let reports = curve(model, scale)?;
        for w in reports.windows(2) {
            if w[1].exposure > w[0].exposure {
                broken.push(format!("{} z {}", model.name(), w[1].z_requested));
            }
        }
        rows.extend(
            reports
                .iter()
                .map(|r| format!("{},{},{},{}", r.model, r.z_requested, r.exposure, r.samples)),
        );
    }
    Ok(Verdict {
        passed: broken.is_empty(),
        detail: if broken.is_empty() {
            format!("small and large, {} samples each", scale.pick(64, 16))
        } else {
            format!("increase at {}", broken.join(", "))
        },
        table: table("criterion03_exposure.csv", "model,z,exposure,samples", rows),
    })
}

fn check_fisher_oracle(scale: Scale) -> Result<Verdict> {
    let configs = 20;
    let trials = scale.pick(100_000, 2_000);
    let models = [ZooModel::Linear, ZooModel::Small, ZooModel::Medium];
    let mut r = rng::stream(rng::derive(CHECK_SEED, "fisher-configs", 0));
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    for k in 0..configs {
        let model = models[k % models.len()];
        let z: f64 = r.random_range(0.0..=0.95);
        let sigma = 10f64.powf(r.random_range(-3.0..=0.0));
        let strategy = if k % 2 == 0 {
            MaskStrategy::Magnitude
        } else {
            MaskStrategy::Random
        };
        let spec = model.spec();
        let params = ParameterVector::init(&spec, rng::derive(CHECK_SEED, "fisher-params", k as u64));
        let sample = generate_synthetic_dataset(
            ZooModel::INPUT_DIM,
            1,
            prior(),
            &if model.is_classifier() {
                LabelRule::Classes {
                    classes: ZooModel::CLASSES,
                    teacher_seed: TEACHER_SEED,
                }
            } else {
                LabelRule::Regression {
                    teacher_seed: TEACHER_SEED,
                    noise: 0.3,
                }
            },
            rng::derive(CHECK_SEED, "fisher-sample", k as u64),
        )?
        .remove(0);
        let grad = param_gradient(&spec, &params, &sample)?;
        let mask = select_mask(&grad, z, &strategy, rng::derive(CHECK_SEED, "fisher-mask", k as u64))?;
        let jac = input_jacobian_of_gradient(&spec, &params, &sample, DEFAULT_JACOBIAN_STEP)?;
        let closed = fisher_information(&jac, &mask, sigma)?;
        let mc = empirical_fisher_from_jacobian(&jac, &mask, sigma, trials, rng::derive(CHECK_SEED, "fisher-mc", k as u64))?;
        let err = mc.relative_frobenius_error(&closed);
        worst = worst.max(err);
        failed += usize::from(err.is_nan() || err > 0.05);
        rows.push(format!(
            "{k},{},{},{z},{sigma},{},{},{err}",
            model.name(),
            if k % 2 == 0 { "magnitude" } else { "random" },
            mask.visible_count(),
            trials
        ));
    }
    Ok(Verdict {
        passed: failed == 0,
        detail: format!("{configs} configs at {trials} trials, worst relative error {worst:.4}, {failed} above 0.05"),
        table: table("criterion04_fisher.csv", "config,model,strategy,z,sigma,d,trials,relative_error", rows),
    })
}

fn check_attack_vs_bound(scale: Scale) -> Result<Verdict> {
    let data = classifier_data(64)?;
    let spec = ZooModel::Small.spec();
    let params = ParameterVector::init(&spec, PARAMS_SEED);
    let trials = scale.pick(50, 3);
    let attack = AttackConfig {
        seed: ATTACK_SEED,
        iterations: scale.pick(2000, 100),
        restarts: scale.pick(4, 1),
        ..AttackConfig::default()
    };
    let mut summaries: Vec<SweepSummary> = Vec::new();
    for sigma in [1e-3, 1e-2] {
        let (summary, _) = attack_sweep(&SweepConfig {
            spec: &spec,
            params: &params,
            dataset: &data,
            grid: &ATTACK_GRID,
            sigma,
            attack: attack.clone(),
            trials,
            prior: PriorInfo::gaussian(1.0)?,
            jacobian_step: DEFAULT_JACOBIAN_STEP,
            exposure_cap: 64,
            keep_traces: false,
            seed: SWEEP_SEED,
        })?;
        summaries.extend(summary);
    }
    let worst = summaries
        .iter()
        .map(|s| 1.0 - s.violations as f64 / s.trials as f64)
        .fold(1.0f64, f64::min);
    let total: usize = summaries.iter().map(|s| s.trials).sum();
    let violations: usize = summaries.iter().map(|s| s.violations).sum();
    Ok(Verdict {
        passed: worst >= 0.95,
        detail: format!(
            "{violations}/{total} trials below the bound; lowest per-cell share at or above it {:.2}",
            worst
        ),
        table: table(
            "criterion05_attack.csv",
            &format!("{},trials", SweepSummary::CSV_HEADER),
            summaries.iter().map(|s| format!("{},{}", s.csv_row(), s.trials)),
        ),
    })
}

fn check_concentration(scale: Scale) -> Result<Verdict> {
    let trials = scale.pick(100_000, 10_000);
    let deltas = [0.01, 0.05, 0.5];
    let mut rows = Vec::new();
    let mut failed = 0;
    let mut worst_margin = f64::INFINITY;
    let mut k = 0;
    for n in [1usize, 3, 10] {
        for d in [4usize, 64, 1024] {
            let hits = concentration_exceedances(1.0, n, d, &deltas, trials, rng::derive(CHECK_SEED, "concentration", k))?;
            k += 1;
            for (&delta, &rate) in deltas.iter().zip(&hits) {
                let tolerance = delta + 3.0 * (delta * (1.0 - delta) / trials as f64).sqrt();
                let within = rate <= tolerance;
                failed += usize::from(!within);
                worst_margin = worst_margin.min(tolerance - rate);
                rows.push(format!("{n},{d},{delta},{trials},{rate},{tolerance},{within}"));
            }
        }
    }
    Ok(Verdict {
        passed: failed == 0,
        detail: format!("{} cases at {trials} trials, {failed} above tolerance, smallest margin {worst_margin:.4}", rows.len()),
        table: table("criterion06_concentration.csv", "n,d,delta,trials,exceedance,tolerance,within", rows),
    })
}

fn check_descent(scale: Scale) -> Result<Verdict> {
    let trials = scale.pick(10_000, 2_000);
    let delta = DEFAULT_FAILURE_PROBABILITY;
    let per_client = first_round_gradients(ZooModel::Small)?;
    let (mask, stats) = round_statistics(&per_client, 0.5)?;
    let d = mask.visible_count();
    let n = stats.len();
    let thresholds = stats
        .iter()
        .map(|s| critical_noise(s.alignment, s.mu_norm, n, d, delta))
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = stats.iter().find(|s| s.alignment <= 0.0) {
        return Ok(Verdict {
            passed: false,
            detail: format!("fixture needs B > 0 for every client, client {} has B = {}", s.client, s.alignment),
            table: None,
        });
    }
    let sigma_crit = thresholds
        .iter()
        .filter_map(|t| match t {
            CriticalNoise::Threshold(v) => Some(*v),
            _ => None,
        })
        .fold(f64::INFINITY, f64::min);
    if !sigma_crit.is_finite() {
        return Err(Error::Runtime("no finite critical noise in the descent fixture".into()));
    }
    let step = TrainConfig::default().step;
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (k, multiplier) in [0.9, 10.0].into_iter().enumerate() {
        let sigma = multiplier * sigma_crit;
        let report = descent_check(
            &stats,
            &mask,
            sigma,
            step,
            delta,
            trials,
            AggregationRule::Sum,
            rng::derive(CHECK_SEED, "descent", k as u64),
        )?;
        for (i, f) in report.fractions.iter().enumerate() {
            rows.push(format!(
                "{multiplier},{sigma},{i},{},{},{},{f},{}",
                stats[i].alignment,
                stats[i].mu_norm,
                thresholds[i].value(),
                report.target
            ));
        }
        reports.push(report);
    }
    let below_ok = reports[0].all_meet_target();
    let above_drops = reports[1].fractions.iter().any(|&f| f < reports[1].target);
    let fmt = |fs: &[f64]| fs.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>().join("/");
    Ok(Verdict {
        passed: below_ok && above_drops,
        detail: format!(
            "d = {d}, sigma_crit = {sigma_crit:.4e}; fractions at 0.9x {} and at 10x {} (target {})",
            fmt(&reports[0].fractions),
            fmt(&reports[1].fractions),
            reports[0].target
        ),
        table: table(
            "criterion07_descent.csv",
            "multiplier,sigma,client,B,mu_norm,sigma_crit,descent_fraction,target",
            rows,
        ),
    })
}

fn check_noise_utility(_scale: Scale) -> Result<Verdict> {
    let (data, base_cfg) = train_fixture(ZooModel::Linear)?;
    let spec = ZooModel::Linear.spec();
    let run = |sigma: f64| {
        train(
            &spec,
            &data,
            &TrainConfig {
                noise: NoiseMode::Fixed(sigma),
                ..base_cfg.clone()
            },
        )
    };
    let baseline = run(0.0)?;
    let base = baseline.final_loss();
    let initial = baseline.initial_loss;
    let tiny = run(1e-6)?.final_loss();
    let moderate = run(1e-3)?.final_loss();
    let large = run(1.0)?.final_loss();
    let low_ok = relative_gap(tiny, base) <= 0.01;
    let moderate_ok = moderate > base;
    let high_ok = relative_gap(large, initial) <= 0.05;
    let rows = [
        format!("0,{base},{initial}"),
        format!("1e-6,{tiny},{initial}"),
        format!("1e-3,{moderate},{initial}"),
        format!("1,{large},{initial}"),
    ];
    Ok(Verdict {
        passed: low_ok && moderate_ok && high_ok,
        detail: format!(
            "initial {initial:.6}, baseline {base:.6}; 1e-6 gap {:.2e} [{}]; 1e-3 {moderate:.6} (+{:.2e} relative) [{}]; 1 {large:.6} vs initial gap {:.3} [{}]",
            relative_gap(tiny, base),
            ok(low_ok),
            (moderate - base) / base,
            ok(moderate_ok),
            relative_gap(large, initial),
            ok(high_ok)
        ),
        table: table("criterion08_noise_utility.csv", "sigma,final_loss,initial_loss", rows),
    })
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAILED"
    }
}

fn check_adaptive(_scale: Scale) -> Result<Verdict> {
    let (data, base_cfg) = train_fixture(ZooModel::Linear)?;
    let spec = ZooModel::Linear.spec();
    let base = train(&spec, &data, &base_cfg)?.final_loss();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for z in ADAPTIVE_GRID {
        let log = train(
            &spec,
            &data,
            &TrainConfig {
                z,
                noise: NoiseMode::adaptive(),
                ..base_cfg.clone()
            },
        )?;
        let gap = relative_gap(log.final_loss(), base);
        worst = worst.max(gap);
        let mean_sigma = log.rounds.iter().map(|r| r.sigma_applied).sum::<f64>() / log.rounds.len() as f64;
        rows.push(format!("{z},{},{base},{gap},{mean_sigma}", log.final_loss()));
    }
    Ok(Verdict {
        passed: worst <= 0.02,
        detail: format!("baseline {base:.6}, worst relative gap {worst:.3e} over {} ratios", ADAPTIVE_GRID.len()),
        table: table("criterion09_adaptive.csv", "z,final_loss,baseline,relative_gap,mean_sigma", rows),
    })
}

fn check_critical_profile(_scale: Scale) -> Result<Verdict> {
    let mut rows = Vec::new();
    let mut broken = Vec::new();
    for model in [ZooModel::Linear, ZooModel::Small] {
        let per_client = first_round_gradients(model)?;
        let profile = critical_noise_profile(&per_client, BOUND_GRID, DEFAULT_FAILURE_PROBABILITY, DEFAULT_SAFETY_FACTOR)?;
        for (k, w) in profile.windows(2).enumerate() {
            if w[1] < w[0] {
                broken.push(format!("{} z {}", model.name(), BOUND_GRID[k + 1]));
            }
        }
        let dim = model.spec().param_count();
        rows.extend(BOUND_GRID.iter().zip(&profile).map(|(z, s)| {
            format!("{},{z},{},{s}", model.name(), crate::defense::unencrypted_count(*z, dim))
        }));
    }
    Ok(Verdict {
        passed: broken.is_empty(),
        detail: if broken.is_empty() {
            format!("linear and small over {} ratios at first-round statistics", BOUND_GRID.len())
        } else {
            format!("decrease at {}", broken.join(", "))
        },
        table: table("criterion10_critical_noise.csv", "model,z,d,sigma_crit", rows),
    })
}

fn algebra_holds(mask: &EncryptionMask) -> bool {
    let d = mask.visible_count();
    let r = mask.restriction_matrix();
    let p = mask.prolongation_matrix();
    let ppt = p.matmul(&p.transpose());
    let mut indicator = vec![0u32; mask.dim()];
    for &j in mask.unencrypted() {
        indicator[j] = 1;
    }
    r.matmul(&r.transpose()) == crate::defense::BinaryMatrix::identity(d)
        && p == r.transpose()
        && r.matmul(&p) == crate::defense::BinaryMatrix::identity(d)
        && ppt.is_diagonal()
        && (0..mask.dim()).all(|j| ppt.get(j, j) == indicator[j])
}

fn check_operator_algebra(_scale: Scale) -> Result<Verdict> {
    let mut r = rng::stream(rng::derive(CHECK_SEED, "algebra", 0));
    let mut checked = 0;
    let mut failures = Vec::new();
    for dim in 1..=64usize {
        let g: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut masks = vec![EncryptionMask::all_visible(dim)];
        for z in [0.0, 0.25, 0.5, 0.75, 1.0] {
            masks.push(select_mask(&g, z, &MaskStrategy::Magnitude, 0)?);
            masks.push(select_mask(&g, z, &MaskStrategy::Random, rng::derive(CHECK_SEED, "algebra-mask", dim as u64))?);
        }
        let every_other: Vec<usize> = (0..dim).step_by(2).collect();
        masks.push(select_mask(&g, 0.0, &MaskStrategy::FixedIndices(every_other), 0)?);
        for mask in &masks {
            checked += 1;
            if !algebra_holds(mask) {
                failures.push(format!("D {dim} d {}", mask.visible_count()));
            }
        }
    }
    Ok(Verdict {
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{checked} masks with D in 1..=64, all identities exact")
        } else {
            format!("{} of {checked} masks fail: {}", failures.len(), failures.join(", "))
        },
        table: None,
    })
}

fn csv_snapshot(outcomes: &[CriterionOutcome]) -> String {
    let mut text = outcomes_csv(outcomes);
    for o in outcomes {
        if let Some((name, body)) = &o.table {
            text.push_str(&format!("== {name}\n{body}"));
        }
    }
    text
}

/// Every `.csv` under `dir`, as `(relative path, bytes)` in path order.
fn collect_csvs(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(current) = stack.pop() {
        for entry in fs::read_dir(&current)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let rel = path.strip_prefix(dir).unwrap_or(&path).to_string_lossy().into_owned();
                out.push((rel, fs::read(&path)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn smoke_csvs(slot: usize) -> Result<Vec<(String, Vec<u8>)>> {
    let base = std::env::temp_dir().join(format!("gradshield-verify-{}-{slot}", std::process::id()));
    if base.exists() {
        fs::remove_dir_all(&base)?;
    }
    let mut cfg = ExperimentConfig::parse(SMOKE_CONFIG)?;
    cfg.out = base.clone();
    let result = run_experiment(&cfg, false).and_then(|dir| collect_csvs(&dir));
    let _ = fs::remove_dir_all(&base);
    result
}

fn check_determinism(_scale: Scale) -> Result<Verdict> {
    let replay = || csv_snapshot(&run_selected(Scale::Quick, |id| id != 12));
    let first = replay();
    let second = replay();
    let verify_same = first == second;
    let smoke_a = smoke_csvs(0)?;
    let smoke_b = smoke_csvs(1)?;
    let smoke_same = smoke_a == smoke_b;
    Ok(Verdict {
        passed: verify_same && smoke_same && !smoke_a.is_empty(),
        detail: format!(
            "quick verify replay {} ({} bytes); seed-42 smoke {} ({} csv files)",
            if verify_same { "identical" } else { "DIFFERS" },
            first.len(),
            if smoke_same { "identical" } else { "DIFFERS" },
            smoke_a.len()
        ),
        table: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_omits_wall_time() {
        let o = CriterionOutcome {
            id: 3,
            title: "t",
            passed: true,
            detail: "a \"b\"".into(),
            table: None,
            seconds: 1.5,
            budget_seconds: None,
        };
        assert_eq!(outcomes_csv(std::slice::from_ref(&o)), "id,title,passed,detail\n3,t,true,\"a 'b'\"\n");
        assert!(o.line().starts_with("[PASS]  3 t:"));
    }

    #[test]
    fn operator_algebra_check_passes() {
        let v = check_operator_algebra(Scale::Quick).unwrap();
        assert!(v.passed, "{}", v.detail);
    }

    #[test]
    fn check_ids_are_complete() {
        let ids: Vec<u8> = CHECKS.iter().map(|c| c.id).collect();
        assert_eq!(ids, (1..=CRITERIA as u8).collect::<Vec<_>>());
    }
}
