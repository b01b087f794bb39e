//! Experiment configuration: a line-oriented `key = value` format with `[section]`
//! headers and `#` comments.
//!
//! ```text
//! kind = bound-curve
//! model = small, large
//!
//! [defense]
//! sigma = 0.01
//!
//! [grid]
//! z = 0, 0.5, 0.9
//! ```
//!
//! Every key is optional except `kind`; missing keys take kind-dependent defaults.
//! [`ExperimentConfig::canonical`] echoes the fully defaulted config in a fixed order,
//! and its SHA-256 is the config hash.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::attack::{AttackConfig, LabelMode, Objective};
use crate::bounds::PriorInfo;
use crate::defense::MaskStrategy;
use crate::error::{Error, Result};
use crate::fedsim::{MaskSchedule, NoisePlacement};
use crate::nn::{Partition, ZooModel};
use crate::utility::AggregationRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    BoundCurve,
    AttackSweep,
    NoiseUtility,
    AdaptiveTrain,
    Concentration,
    Descent,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::BoundCurve,
        ExperimentKind::AttackSweep,
        ExperimentKind::NoiseUtility,
        ExperimentKind::AdaptiveTrain,
        ExperimentKind::Concentration,
        ExperimentKind::Descent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::BoundCurve => "bound-curve",
            ExperimentKind::AttackSweep => "attack-sweep",
            ExperimentKind::NoiseUtility => "noise-utility",
            ExperimentKind::AdaptiveTrain => "adaptive-train",
            ExperimentKind::Concentration => "concentration",
            ExperimentKind::Descent => "descent",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn trains(self) -> bool {
        matches!(self, ExperimentKind::NoiseUtility | ExperimentKind::AdaptiveTrain)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic,
    /// Directory of PGM/PPM images plus `labels.txt`.
    Images(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Classes,
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    pub count: usize,
    pub tau: f64,
    pub labels: LabelKind,
    pub label_noise: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefenseSection {
    pub z: f64,
    pub sigma: f64,
    pub strategy: MaskStrategy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub z: Vec<f64>,
    pub sigma: Vec<f64>,
    pub clients: Vec<usize>,
    pub dims: Vec<usize>,
    pub delta: Vec<f64>,
    pub multiplier: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSection {
    pub prior: PriorInfo,
    pub sample_cap: usize,
    pub jacobian_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSection {
    /// `seed` is overwritten per trial from the experiment seed.
    pub config: AttackConfig,
    pub trials: usize,
    pub traces: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub rounds: usize,
    pub clients: usize,
    pub step: f64,
    /// 0 means the whole shard.
    pub batch_size: usize,
    pub rule: AggregationRule,
    pub placement: NoisePlacement,
    pub partition: Partition,
    pub mask_schedule: MaskSchedule,
    pub kappa: f64,
    pub sigma_max: f64,
    pub delta: f64,
    pub descent_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub name: String,
    pub models: Vec<ZooModel>,
    pub seed: u64,
    /// Parent of the run directory; not part of the config hash.
    pub out: PathBuf,
    pub data: DataConfig,
    pub defense: DefenseSection,
    pub grid: GridSection,
    pub bounds: BoundsSection,
    pub attack: AttackSection,
    pub train: TrainSection,
    pub mc_trials: usize,
}

const KEYS: &[(&str, &[&str])] = &[
    ("", &["kind", "name", "model", "seed", "out"]),
    ("data", &["source", "count", "tau", "labels", "label_noise"]),
    ("defense", &["z", "sigma", "strategy", "encrypted"]),
    ("grid", &["z", "sigma", "n", "d", "delta", "multiplier"]),
    ("bounds", &["prior", "lambda1", "sample_cap", "jacobian_step"]),
    (
        "attack",
        &["objective", "iterations", "step_size", "restarts", "init_scale", "labels", "trials", "traces"],
    ),
    (
        "train",
        &[
            "rounds",
            "clients",
            "step",
            "batch_size",
            "rule",
            "placement",
            "partition",
            "mask_schedule",
            "kappa",
            "sigma_max",
            "delta",
            "descent_trials",
        ],
    ),
    ("mc", &["trials"]),
];

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_owned()
    } else {
        format!("{section}.{key}")
    }
}

fn suggestion(section: &str, key: &str) -> Option<String> {
    // (distance, in the same section, rendered hint)
    let mut best: Option<(usize, bool, String)> = None;
    for (s, keys) in KEYS {
        for k in *keys {
            let dist = strsim::levenshtein(key, k);
            if dist > 2 {
                continue;
            }
            let same = *s == section;
            let hint = match (same, s.is_empty()) {
                (true, _) => format!("\"{k}\""),
                (false, true) => format!("\"{k}\" at top level"),
                (false, false) => format!("\"{k}\" in [{s}]"),
            };
            let better = match &best {
                None => true,
                Some((d, was_same, _)) => dist < *d || (dist == *d && same && !was_same),
            };
            if better {
                best = Some((dist, same, hint));
            }
        }
    }
    best.map(|(_, _, hint)| hint)
}

/// Parsed but not yet interpreted key/value pairs, keyed by `section.key`.
struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("unterminated section header `{line}`"),
                })?;
                let name = name.trim();
                if !KEYS.iter().any(|(s, _)| !s.is_empty() && *s == name) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown section [{name}]"),
                    });
                }
                section = name.to_owned();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty key".into(),
                });
            }
            let known = KEYS
                .iter()
                .find(|(s, _)| *s == section)
                .is_some_and(|(_, keys)| keys.contains(&key));
            let full = qualified(&section, key);
            if !known {
                let hint = match suggestion(&section, key) {
                    Some(s) => format!("unknown key; did you mean {s}?"),
                    None => "unknown key".to_owned(),
                };
                return Err(Error::validation(full, hint));
            }
            if values.insert(full.clone(), value.trim().to_owned()).is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("duplicate key `{full}`"),
                });
            }
        }
        Ok(Self { values })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn scalar<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::validation(key, format!("cannot parse `{v}`"))),
        }
    }

    fn list<T: FromStr + Clone>(&self, key: &str, default: &[T]) -> Result<Vec<T>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => parse_list(key, v),
        }
    }

    fn choice<T: Copy>(&self, key: &str, options: &[(&str, T)], default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => options.iter().find(|(n, _)| *n == v).map(|(_, t)| *t).ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
                Error::validation(key, format!("`{v}` is not one of {}", names.join(", ")))
            }),
        }
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|item| {
            let item = item.trim();
            item.parse()
                .map_err(|_| Error::validation(key, format!("cannot parse list item `{item}`")))
        })
        .collect()
}

const OBJECTIVES: &[(&str, Objective)] = &[("l2", Objective::L2), ("cosine", Objective::Cosine)];
const LABEL_MODES: &[(&str, LabelMode)] = &[("known", LabelMode::Known), ("optimize", LabelMode::Optimize)];
const LABEL_KINDS: &[(&str, LabelKind)] = &[("classes", LabelKind::Classes), ("regression", LabelKind::Regression)];
const RULES: &[(&str, AggregationRule)] = &[("sum", AggregationRule::Sum), ("average", AggregationRule::Average)];
const PLACEMENTS: &[(&str, NoisePlacement)] = &[
    ("client", NoisePlacement::PerClient),
    ("server", NoisePlacement::PostAggregation),
];
const PARTITIONS: &[(&str, Partition)] = &[("iid", Partition::Iid), ("label-skew", Partition::LabelSkew)];
const SCHEDULES: &[(&str, MaskSchedule)] = &[
    ("per-round", MaskSchedule::PerRound),
    ("fixed", MaskSchedule::FixedAfterFirst),
];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], value: &T) -> &'static str {
    options.iter().find(|(_, t)| t == value).map(|(n, _)| *n).expect("every variant is named")
}

pub const BOUND_GRID: &[f64] = &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99];

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Ingestion {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        let kind_text = raw.get("kind").ok_or_else(|| Error::validation("kind", "missing"))?;
        let kind = ExperimentKind::parse(kind_text).ok_or_else(|| {
            let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
            Error::validation("kind", format!("`{kind_text}` is not one of {}", names.join(", ")))
        })?;

        let default_models = match kind {
            ExperimentKind::BoundCurve => "small,large",
            ExperimentKind::NoiseUtility | ExperimentKind::AdaptiveTrain => "linear",
            _ => "small",
        };
        let models = raw
            .get("model")
            .unwrap_or(default_models)
            .split(',')
            .map(|m| {
                let m = m.trim();
                ZooModel::parse(m).ok_or_else(|| {
                    Error::validation("model", format!("unknown model `{m}` (linear, small, medium, large)"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if models.is_empty() {
            return Err(Error::validation("model", "at least one model required"));
        }
        let classifier = models[0].is_classifier();

        let source = match raw.get("data.source") {
            None | Some("synthetic") => DataSource::Synthetic,
            Some(v) => match v.strip_prefix("images:") {
                Some(dir) if !dir.trim().is_empty() => DataSource::Images(PathBuf::from(dir.trim())),
                _ => {
                    return Err(Error::validation(
                        "data.source",
                        format!("`{v}` is neither `synthetic` nor `images:<dir>`"),
                    ))
                }
            },
        };
        let data = DataConfig {
            source,
            count: raw.scalar("data.count", if kind.trains() { 150 } else { 64 })?,
            tau: raw.scalar("data.tau", 1.0)?,
            labels: raw.choice(
                "data.labels",
                LABEL_KINDS,
                if classifier { LabelKind::Classes } else { LabelKind::Regression },
            )?,
            label_noise: raw.scalar("data.label_noise", 0.3)?,
        };

        let strategy = match raw.get("defense.strategy").unwrap_or("magnitude") {
            "magnitude" => MaskStrategy::Magnitude,
            "random" => MaskStrategy::Random,
            "fixed" => MaskStrategy::FixedIndices(raw.list("defense.encrypted", &[])?),
            other => {
                return Err(Error::validation(
                    "defense.strategy",
                    format!("`{other}` is not one of magnitude, random, fixed"),
                ))
            }
        };
        if raw.get("defense.encrypted").is_some() && !matches!(strategy, MaskStrategy::FixedIndices(_)) {
            return Err(Error::validation("defense.encrypted", "only valid with strategy = fixed"));
        }
        let defense = DefenseSection {
            z: raw.scalar("defense.z", 0.0)?,
            sigma: raw.scalar("defense.sigma", 1e-2)?,
            strategy,
        };

        let default_z: &[f64] = match kind {
            ExperimentKind::AttackSweep => &[0.0, 0.5, 0.9],
            ExperimentKind::AdaptiveTrain => &[0.0, 0.25, 0.5, 0.75, 0.9],
            _ => BOUND_GRID,
        };
        let default_sigma: &[f64] = match kind {
            ExperimentKind::AttackSweep => &[1e-3, 1e-2],
            ExperimentKind::NoiseUtility => &[0.0, 1e-6, 1e-3, 1.0],
            ExperimentKind::Concentration => &[1.0],
            _ => &[1e-2],
        };
        let grid = GridSection {
            z: raw.list("grid.z", default_z)?,
            sigma: raw.list("grid.sigma", default_sigma)?,
            clients: raw.list("grid.n", &[1, 3, 10])?,
            dims: raw.list("grid.d", &[4, 64, 1024])?,
            delta: raw.list("grid.delta", &[0.01, 0.05, 0.5])?,
            multiplier: raw.list("grid.multiplier", &[0.9, 10.0])?,
        };

        let prior = match raw.get("bounds.prior").unwrap_or("gaussian") {
            "gaussian" => {
                if raw.get("bounds.lambda1").is_some() {
                    return Err(Error::validation("bounds.lambda1", "only valid with prior = user"));
                }
                PriorInfo::gaussian(data.tau).map_err(|e| Error::validation("data.tau", e.to_string()))?
            }
            "user" => {
                let l: f64 = raw.scalar("bounds.lambda1", f64::NAN)?;
                PriorInfo::user_supplied(l).map_err(|e| Error::validation("bounds.lambda1", e.to_string()))?
            }
            other => {
                return Err(Error::validation(
                    "bounds.prior",
                    format!("`{other}` is not one of gaussian, user"),
                ))
            }
        };
        let bounds = BoundsSection {
            prior,
            sample_cap: raw.scalar("bounds.sample_cap", 128)?,
            jacobian_step: raw.scalar("bounds.jacobian_step", crate::nn::DEFAULT_JACOBIAN_STEP)?,
        };

        let defaults = AttackConfig::default();
        let attack = AttackSection {
            config: AttackConfig {
                objective: raw.choice("attack.objective", OBJECTIVES, defaults.objective)?,
                iterations: raw.scalar("attack.iterations", defaults.iterations)?,
                step_size: raw.scalar("attack.step_size", defaults.step_size)?,
                restarts: raw.scalar("attack.restarts", defaults.restarts)?,
                init_scale: raw.scalar("attack.init_scale", defaults.init_scale)?,
                labels: raw.choice("attack.labels", LABEL_MODES, defaults.labels)?,
                seed: 0,
            },
            trials: raw.scalar("attack.trials", 20)?,
            traces: raw.scalar("attack.traces", false)?,
        };

        let train = TrainSection {
            rounds: raw.scalar("train.rounds", 50)?,
            clients: raw.scalar("train.clients", 3)?,
            step: raw.scalar("train.step", 0.1)?,
            batch_size: raw.scalar("train.batch_size", 0)?,
            rule: raw.choice("train.rule", RULES, AggregationRule::Sum)?,
            placement: raw.choice("train.placement", PLACEMENTS, NoisePlacement::PerClient)?,
            partition: raw.choice("train.partition", PARTITIONS, Partition::Iid)?,
            mask_schedule: raw.choice("train.mask_schedule", SCHEDULES, MaskSchedule::PerRound)?,
            kappa: raw.scalar("train.kappa", crate::utility::DEFAULT_SAFETY_FACTOR)?,
            sigma_max: raw.scalar("train.sigma_max", crate::utility::DEFAULT_SIGMA_MAX)?,
            delta: raw.scalar("train.delta", crate::utility::DEFAULT_FAILURE_PROBABILITY)?,
            descent_trials: raw.scalar("train.descent_trials", 0)?,
        };

        let cfg = ExperimentConfig {
            kind,
            name: raw.get("name").unwrap_or(kind.name()).to_owned(),
            models,
            seed: raw.scalar("seed", 42)?,
            out: PathBuf::from(raw.get("out").unwrap_or("runs")),
            data,
            defense,
            grid,
            bounds,
            attack,
            train,
            mc_trials: raw.scalar("mc.trials", 100_000)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::validation(field, msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return fail("name", format!("`{}` is not a usable directory name", self.name));
        }
        if self.data.count == 0 {
            return fail("data.count", "must be >= 1".into());
        }
        if !(self.data.tau > 0.0 && self.data.tau.is_finite()) {
            return fail("data.tau", "must be > 0".into());
        }
        if !(self.data.label_noise >= 0.0 && self.data.label_noise.is_finite()) {
            return fail("data.label_noise", "must be >= 0".into());
        }
        if self.data.labels == LabelKind::Classes && self.models.iter().any(|m| !m.is_classifier()) {
            return fail("data.labels", "class labels need classifier models".into());
        }
        if !(0.0..=1.0).contains(&self.defense.z) {
            return fail("defense.z", format!("z out of [0,1]: {}", self.defense.z));
        }
        if !(self.defense.sigma >= 0.0 && self.defense.sigma.is_finite()) {
            return fail("defense.sigma", "must be finite and >= 0".into());
        }
        if let Some(z) = self.grid.z.iter().find(|z| !(0.0..=1.0).contains(*z)) {
            return fail("grid.z", format!("z out of [0,1]: {z}"));
        }
        if self.grid.sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return fail("grid.sigma", "sigma values must be finite and >= 0".into());
        }
        if let Some(d) = self.grid.delta.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return fail("grid.delta", format!("failure probability out of (0,1): {d}"));
        }
        if self.grid.clients.contains(&0) {
            return fail("grid.n", "client counts must be >= 1".into());
        }
        if self.grid.dims.contains(&0) {
            return fail("grid.d", "dimensions must be >= 1".into());
        }
        if self.grid.multiplier.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return fail("grid.multiplier", "multipliers must be finite and >= 0".into());
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        let needed: &[(&str, bool, bool)] = &[
            (
                "grid.z",
                matches!(
                    self.kind,
                    ExperimentKind::BoundCurve | ExperimentKind::AttackSweep | ExperimentKind::AdaptiveTrain
                ),
                increasing(&self.grid.z),
            ),
            (
                "grid.sigma",
                matches!(
                    self.kind,
                    ExperimentKind::AttackSweep | ExperimentKind::NoiseUtility | ExperimentKind::Concentration
                ),
                increasing(&self.grid.sigma),
            ),
            (
                "grid.multiplier",
                self.kind == ExperimentKind::Descent,
                increasing(&self.grid.multiplier),
            ),
        ];
        for &(field, used, ok) in needed {
            let empty = match field {
                "grid.z" => self.grid.z.is_empty(),
                "grid.sigma" => self.grid.sigma.is_empty(),
                _ => self.grid.multiplier.is_empty(),
            };
            if used && empty {
                return fail(field, "grid must be nonempty".into());
            }
            if used && !ok {
                return fail(field, "grid must be strictly increasing".into());
            }
        }
        if self.kind == ExperimentKind::Concentration
            && (self.grid.clients.is_empty() || self.grid.dims.is_empty() || self.grid.delta.is_empty())
        {
            return fail("grid", "concentration needs nonempty n, d and delta grids".into());
        }
        if matches!(self.kind, ExperimentKind::AttackSweep | ExperimentKind::BoundCurve) {
            let sigmas: &[f64] = if self.kind == ExperimentKind::AttackSweep {
                &self.grid.sigma
            } else {
                std::slice::from_ref(&self.defense.sigma)
            };
            if sigmas.contains(&0.0) {
                let field = if self.kind == ExperimentKind::AttackSweep { "grid.sigma" } else { "defense.sigma" };
                return fail(field, "the bound needs sigma > 0".into());
            }
        }
        if self.bounds.sample_cap == 0 {
            return fail("bounds.sample_cap", "must be >= 1".into());
        }
        if !(self.bounds.jacobian_step > 0.0 && self.bounds.jacobian_step.is_finite()) {
            return fail("bounds.jacobian_step", "must be > 0".into());
        }
        self.attack.config.validate().map_err(|e| match e {
            Error::Validation { field, message } => Error::validation(format!("attack.{field}"), message),
            other => other,
        })?;
        if self.attack.trials == 0 {
            return fail("attack.trials", "must be >= 1".into());
        }
        let t = &self.train;
        if t.rounds == 0 {
            return fail("train.rounds", "must be >= 1".into());
        }
        if t.clients == 0 {
            return fail("train.clients", "must be >= 1".into());
        }
        if !(t.step > 0.0 && t.step.is_finite()) {
            return fail("train.step", "must be > 0".into());
        }
        if !(t.kappa > 0.0 && t.kappa <= 1.0) {
            return fail("train.kappa", "safety factor out of (0,1]".into());
        }
        if !(t.sigma_max > 0.0 && t.sigma_max.is_finite()) {
            return fail("train.sigma_max", "must be > 0".into());
        }
        if !(t.delta > 0.0 && t.delta < 1.0) {
            return fail("train.delta", "failure probability out of (0,1)".into());
        }
        if self.mc_trials < 10_000 && self.kind == ExperimentKind::Concentration {
            return fail("mc.trials", "Monte Carlo verification needs >= 10000 trials".into());
        }
        if self.mc_trials == 0 {
            return fail("mc.trials", "must be >= 1".into());
        }
        Ok(())
    }

    /// The fully defaulted config in a fixed key order. `out` is omitted: it says where
    /// results go, not what they are.
    pub fn canonical(&self) -> String {
        fn list<T: ToString>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
        }
        let mut s = String::new();
        let models: Vec<&str> = self.models.iter().map(|m| m.name()).collect();
        let _ = writeln!(s, "kind = {}", self.kind.name());
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "model = {}", models.join(", "));
        let _ = writeln!(s, "seed = {}", self.seed);

        let d = &self.data;
        let source = match &d.source {
            DataSource::Synthetic => "synthetic".to_owned(),
            DataSource::Images(p) => format!("images:{}", p.display()),
        };
        let _ = write!(
            s,
            "\n[data]\nsource = {source}\ncount = {}\ntau = {}\nlabels = {}\nlabel_noise = {}\n",
            d.count,
            d.tau,
            name_of(LABEL_KINDS, &d.labels),
            d.label_noise
        );

        let _ = write!(s, "\n[defense]\nz = {}\nsigma = {}\n", self.defense.z, self.defense.sigma);
        match &self.defense.strategy {
            MaskStrategy::Magnitude => s.push_str("strategy = magnitude\n"),
            MaskStrategy::Random => s.push_str("strategy = random\n"),
            MaskStrategy::FixedIndices(ix) => {
                let _ = write!(s, "strategy = fixed\nencrypted = {}\n", list(ix));
            }
        }

        let g = &self.grid;
        let _ = write!(
            s,
            "\n[grid]\nz = {}\nsigma = {}\nn = {}\nd = {}\ndelta = {}\nmultiplier = {}\n",
            list(&g.z),
            list(&g.sigma),
            list(&g.clients),
            list(&g.dims),
            list(&g.delta),
            list(&g.multiplier)
        );

        s.push_str("\n[bounds]\n");
        match self.bounds.prior {
            PriorInfo::Gaussian { .. } => s.push_str("prior = gaussian\n"),
            PriorInfo::UserSupplied { lambda1 } => {
                let _ = write!(s, "prior = user\nlambda1 = {lambda1}\n");
            }
        }
        let _ = write!(
            s,
            "sample_cap = {}\njacobian_step = {}\n",
            self.bounds.sample_cap, self.bounds.jacobian_step
        );

        let a = &self.attack.config;
        let _ = write!(
            s,
            "\n[attack]\nobjective = {}\niterations = {}\nstep_size = {}\nrestarts = {}\ninit_scale = {}\nlabels = {}\ntrials = {}\ntraces = {}\n",
            name_of(OBJECTIVES, &a.objective),
            a.iterations,
            a.step_size,
            a.restarts,
            a.init_scale,
            name_of(LABEL_MODES, &a.labels),
            self.attack.trials,
            self.attack.traces
        );

        let t = &self.train;
        let _ = write!(
            s,
            "\n[train]\nrounds = {}\nclients = {}\nstep = {}\nbatch_size = {}\nrule = {}\nplacement = {}\npartition = {}\nmask_schedule = {}\nkappa = {}\nsigma_max = {}\ndelta = {}\ndescent_trials = {}\n",
            t.rounds,
            t.clients,
            t.step,
            t.batch_size,
            name_of(RULES, &t.rule),
            name_of(PLACEMENTS, &t.placement),
            name_of(PARTITIONS, &t.partition),
            name_of(SCHEDULES, &t.mask_schedule),
            t.kappa,
            t.sigma_max,
            t.delta,
            t.descent_trials
        );

        let _ = write!(s, "\n[mc]\ntrials = {}\n", self.mc_trials);
        s
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_is_defaulted_and_echo_round_trips() {
        let cfg = ExperimentConfig::parse("kind = bound-curve\nmodel = small\n").unwrap();
        assert_eq!(cfg.grid.z, BOUND_GRID);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.data.labels, LabelKind::Classes);
        let echoed = cfg.canonical();
        let again = ExperimentConfig::parse(&echoed).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.canonical(), echoed);
    }

    #[test]
    fn z_out_of_range_names_the_field() {
        let err = ExperimentConfig::parse("kind = bound-curve\n[grid]\nz = 0, 1.5\n").unwrap_err();
        match err {
            Error::Validation { field, message } => {
                assert_eq!(field, "grid.z");
                assert!(message.contains("z out of [0,1]"), "{message}");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_key_suggests_nearest() {
        let err = ExperimentConfig::parse("kind = attack-sweep\n[defense]\nsigm = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("\"sigma\""), "{err}");
        let err = ExperimentConfig::parse("kind = attack-sweep\nsigm = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("sigma"), "{err}");
        let err = ExperimentConfig::parse("kind = attack-sweep\nwibble = 1\n").unwrap_err();
        assert!(!err.to_string().contains("did you mean"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = ExperimentConfig::parse("kind = descent\n\n[train\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = ExperimentConfig::parse("kind = descent\nrounds\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = ExperimentConfig::parse("kind = descent\nseed = 1\nseed = 2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn key_order_does_not_change_the_hash() {
        let a = "kind = noise-utility\nseed = 7\n[train]\nrounds = 5\nstep = 0.2\n[grid]\nsigma = 0, 1\n";
        let b = "# comment\n[grid]\nsigma = 0,1\n[train]\nstep = 0.2\nrounds = 5\n\n[data]\ncount = 150\n";
        let b = format!("seed = 7\nkind = noise-utility\n{b}");
        let ha = ExperimentConfig::parse(a).unwrap().hash();
        let hb = ExperimentConfig::parse(&b).unwrap().hash();
        assert_eq!(ha, hb);
        let c = a.replace("seed = 7", "seed = 8");
        assert_ne!(ExperimentConfig::parse(&c).unwrap().hash(), ha);
    }

    #[test]
    fn bad_values_name_the_field() {
        for (text, field) in [
            ("kind = descent\n[train]\nrounds = many\n", "train.rounds"),
            ("kind = descent\n[train]\nrule = median\n", "train.rule"),
            ("kind = descent\nmodel = huge\n", "model"),
            ("kind = bound-curve\n[defense]\nsigma = 0\n", "defense.sigma"),
            ("kind = attack-sweep\n[grid]\nz = 0.5, 0.1\n", "grid.z"),
            ("kind = attack-sweep\n[attack]\nrestarts = 0\n", "attack.restarts"),
            ("kind = bound-curve\n[bounds]\nlambda1 = 2\n", "bounds.lambda1"),
        ] {
            match ExperimentConfig::parse(text) {
                Err(Error::Validation { field: f, .. }) => assert_eq!(f, field, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(
            ExperimentConfig::parse("seed = 1\n"),
            Err(Error::Validation { .. })
        ));
    }
}
