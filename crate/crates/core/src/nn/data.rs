//! Dataset generation, PGM/PPM ingestion and the `GSDS1` binary export.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::model::{DataSample, Target};
use crate::rng;

/// Gaussian data prior `x ~ N(0, tau^2 I_m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPrior {
    tau: f64,
}

impl SyntheticPrior {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::config(format!("prior standard deviation must be > 0, got {tau}")));
        }
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Largest eigenvalue of the prior Fisher information, `1 / tau^2`.
    pub fn fisher_eigenvalue(&self) -> f64 {
        1.0 / (self.tau * self.tau)
    }
}

/// How targets are attached to generated features.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelRule {
    /// Same target for every sample.
    Fixed(Target),
    /// `t = <w, x> + noise`, with `w ~ N(0, I/m)` from `teacher_seed`.
    Regression { teacher_seed: u64, noise: f64 },
    /// `argmax(W x)` over `classes`, with `W ~ N(0, 1)` from `teacher_seed`.
    Classes { classes: usize, teacher_seed: u64 },
}

/// i.i.d. samples from the prior, deterministic in `seed`.
pub fn generate_synthetic_dataset(
    m: usize,
    count: usize,
    prior: SyntheticPrior,
    labels: &LabelRule,
    seed: u64,
) -> Result<Vec<DataSample>> {
    if count == 0 {
        return Err(Error::config("dataset count must be >= 1"));
    }
    if m == 0 {
        return Err(Error::config("feature dimension must be >= 1"));
    }
    let teacher: Vec<f64> = match labels {
        LabelRule::Fixed(_) => Vec::new(),
        LabelRule::Regression { teacher_seed, .. } => {
            let mut r = rng::stream(rng::derive(*teacher_seed, "teacher", 0));
            let scale = 1.0 / (m as f64).sqrt();
            (0..m).map(|_| scale * r.sample::<f64, _>(StandardNormal)).collect()
        }
        LabelRule::Classes {
            classes,
            teacher_seed,
        } => {
            if *classes < 2 {
                return Err(Error::config("class label rule needs at least 2 classes"));
            }
            let mut r = rng::stream(rng::derive(*teacher_seed, "teacher", 0));
            (0..classes * m).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
        }
    };

    let feature = Normal::new(0.0, prior.tau()).expect("tau validated");
    let mut r = rng::stream(rng::derive(seed, "dataset", 0));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let x: Vec<f64> = (0..m).map(|_| feature.sample(&mut r)).collect();
        let target = match labels {
            LabelRule::Fixed(t) => t.clone(),
            LabelRule::Regression { noise, .. } => {
                let clean: f64 = teacher.iter().zip(&x).map(|(w, v)| w * v).sum();
                let eps: f64 = r.sample(StandardNormal);
                Target::Value(clean + noise * eps)
            }
            LabelRule::Classes { classes, .. } => {
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for c in 0..*classes {
                    let row = &teacher[c * m..(c + 1) * m];
                    let s: f64 = row.iter().zip(&x).map(|(w, v)| w * v).sum();
                    if s > best_score {
                        best_score = s;
                        best = c;
                    }
                }
                Target::Class(best)
            }
        };
        out.push(DataSample { x, target });
    }
    Ok(out)
}

const LABELS_FILE: &str = "labels.txt";

fn ingestion(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Load every `.pgm`/`.ppm` file of a directory (sorted by file name) together with
/// `labels.txt`, one integer class per line in the same order. Pixels are scaled
/// to `[0, 1]` and flattened row-major (interleaved RGB for PPM).
pub fn load_image_dataset(dir: &Path) -> Result<Vec<DataSample>> {
    let mut images: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ingestion(dir, e.to_string()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    images.sort();

    let labels_path = dir.join(LABELS_FILE);
    let labels: Vec<usize> = if labels_path.exists() {
        let text = fs::read_to_string(&labels_path)
            .map_err(|e| ingestion(&labels_path, e.to_string()))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim()
                    .parse::<usize>()
                    .map_err(|_| ingestion(&labels_path, format!("line {}: not an integer", i + 1)))
            })
            .collect::<Result<_>>()?
    } else if images.is_empty() {
        Vec::new()
    } else {
        return Err(ingestion(&labels_path, "missing labels file"));
    };

    if labels.len() != images.len() {
        return Err(ingestion(
            &labels_path,
            format!("{} labels for {} images", labels.len(), images.len()),
        ));
    }

    let mut out = Vec::with_capacity(images.len());
    let mut width = None;
    for (path, label) in images.iter().zip(labels) {
        let bytes = fs::read(path).map_err(|e| ingestion(path, e.to_string()))?;
        let x = decode_netpbm(&bytes).map_err(|reason| ingestion(path, reason))?;
        match width {
            None => width = Some(x.len()),
            Some(w) if w != x.len() => {
                return Err(ingestion(path, format!("{} values, expected {w}", x.len())));
            }
            _ => {}
        }
        out.push(DataSample {
            x,
            target: Target::Class(label),
        });
    }
    Ok(out)
}

/// Decode binary 8-bit PGM (P5) or PPM (P6) into values scaled by `maxval`.
fn decode_netpbm(bytes: &[u8]) -> std::result::Result<Vec<f64>, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;

    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format!("unsupported magic {other:?}")),
    };
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| format!("bad {what} {s:?}"))
    };
    let w = parse(&fields[1], "width")?;
    let h = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("only 8-bit images supported (maxval {maxval})"));
    }
    let n = w * h * channels;
    if bytes.len() < pos + n {
        return Err(format!("raster has {} bytes, expected {n}", bytes.len().saturating_sub(pos)));
    }
    let scale = maxval as f64;
    Ok(bytes[pos..pos + n].iter().map(|&b| b as f64 / scale).collect())
}

const DATASET_MAGIC: &[u8; 5] = b"GSDS1";

/// Write feature rows as `GSDS1`: magic, `m` and `count` as little-endian u64,
/// then `count * m` little-endian f64 values row-major.
pub fn write_dataset_binary(path: &Path, samples: &[DataSample]) -> Result<()> {
    let m = samples.first().map_or(0, |s| s.x.len());
    if samples.iter().any(|s| s.x.len() != m) {
        return Err(Error::config("all samples must share the feature dimension"));
    }
    let mut buf = Vec::with_capacity(21 + 8 * m * samples.len());
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&(m as u64).to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        for v in &s.x {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Read a `GSDS1` file back into feature rows.
pub fn read_dataset_binary(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| ingestion(path, e.to_string()))?
        .read_to_end(&mut bytes)?;
    let (m, count, body) = read_header(path, &bytes, DATASET_MAGIC)?;
    if body.len() != m * count * 8 {
        return Err(ingestion(path, "payload length does not match header"));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(if m == 0 {
        vec![Vec::new(); count]
    } else {
        values.chunks(m).map(<[f64]>::to_vec).collect()
    })
}

pub(crate) fn read_header<'a>(
    path: &Path,
    bytes: &'a [u8],
    magic: &[u8; 5],
) -> Result<(usize, usize, &'a [u8])> {
    if bytes.len() < 21 || &bytes[..5] != magic {
        return Err(ingestion(path, "bad magic or truncated header"));
    }
    let a = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let b = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes")) as usize;
    Ok((a, b, &bytes[21..]))
}

/// Split sample indices into `clients` disjoint shards covering the dataset.
///
/// `Iid` shuffles and deals equal-size shards; `LabelSkew` sorts by label first so
/// that each client sees a narrow label range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Iid,
    LabelSkew,
}

pub fn partition_indices(
    samples: &[DataSample],
    clients: usize,
    scheme: Partition,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if clients == 0 {
        return Err(Error::config("need at least one client"));
    }
    if samples.len() < clients {
        return Err(Error::config(format!(
            "{} samples cannot cover {clients} clients",
            samples.len()
        )));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut r = rng::stream(rng::derive(seed, "partition", 0));
    for i in (1..order.len()).rev() {
        let j = r.random_range(0..=i);
        order.swap(i, j);
    }
    if scheme == Partition::LabelSkew {
        let key = |i: usize| match &samples[i].target {
            Target::Class(c) => *c as f64,
            Target::Value(v) => *v,
            Target::Distribution(p) => p.first().copied().unwrap_or(0.0),
        };
        order.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    }
    let base = samples.len() / clients;
    let extra = samples.len() % clients;
    let mut shards = Vec::with_capacity(clients);
    let mut start = 0;
    for c in 0..clients {
        let len = base + usize::from(c < extra);
        let mut shard = order[start..start + len].to_vec();
        shard.sort_unstable();
        shards.push(shard);
        start += len;
    }
    Ok(shards)
}
