//! Plot-ready two-column text, one file per series:
//!
//! ```text
//! # name: bound-small [config 0123abcd4567]
//! # xlabel: z
//! # ylabel: bound
//! 0 0.0001
//! 0.5 0.0003
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub name: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
    /// Config hash of the run that produced the series.
    pub provenance: String,
}

impl PlotSeries {
    pub fn new(
        name: impl Into<String>,
        x_label: impl Into<String>,
        y_label: impl Into<String>,
        points: Vec<(f64, f64)>,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let series = Self {
            name: name.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            points,
            provenance: provenance.into(),
        };
        series.validate()?;
        Ok(series)
    }

    fn validate(&self) -> Result<()> {
        let single_line = |s: &str| !s.contains(['\n', '\r']);
        if self.name.is_empty() || !single_line(&self.name) || self.name.contains(['/', '\\', '[']) {
            return Err(Error::config(format!("bad series name {:?}", self.name)));
        }
        if !single_line(&self.x_label) || !single_line(&self.y_label) || !single_line(&self.provenance) {
            return Err(Error::config("plot labels must be single lines"));
        }
        if let Some(p) = self.points.iter().find(|p| !p.0.is_finite()) {
            return Err(Error::config(format!("series {}: x = {} is not finite", self.name, p.0)));
        }
        if self.points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::config(format!("series {}: x must be strictly increasing", self.name)));
        }
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("{}.dat", self.name)
    }

    pub fn to_text(&self) -> String {
        let mut out = if self.provenance.is_empty() {
            format!("# name: {}\n", self.name)
        } else {
            format!("# name: {} [config {}]\n", self.name, self.provenance)
        };
        out.push_str(&format!("# xlabel: {}\n# ylabel: {}\n", self.x_label, self.y_label));
        for (x, y) in &self.points {
            out.push_str(&format!("{x} {y}\n"));
        }
        out
    }

    /// Inverse of [`PlotSeries::to_text`].
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut header = |tag: &str| -> Result<String> {
            let (i, line) = lines.next().ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing `# {tag}:` header"),
            })?;
            line.strip_prefix(&format!("# {tag}: "))
                .or_else(|| line.strip_prefix(&format!("# {tag}:")))
                .map(str::to_owned)
                .ok_or_else(|| Error::Parse {
                    line: i + 1,
                    message: format!("expected `# {tag}:` header"),
                })
        };
        let name_line = header("name")?;
        let x_label = header("xlabel")?;
        let y_label = header("ylabel")?;
        let (name, provenance) = match name_line.split_once(" [config ") {
            Some((n, rest)) => (n.to_owned(), rest.trim_end_matches(']').to_owned()),
            None => (name_line, String::new()),
        };
        let mut points = Vec::new();
        for (i, line) in lines {
            let mut cols = line.split_whitespace();
            let parse = |c: Option<&str>| -> Result<f64> {
                c.and_then(|v| v.parse().ok()).ok_or_else(|| Error::Parse {
                    line: i + 1,
                    message: format!("expected two numbers, got `{line}`"),
                })
            };
            let x = parse(cols.next())?;
            let y = parse(cols.next())?;
            points.push((x, y));
        }
        Self::new(name, x_label, y_label, points, provenance)
    }
}

/// Writes one `<name>.dat` per series into `dir`; an empty list writes nothing.
pub fn emit_plot_data(series: &[PlotSeries], dir: &Path) -> Result<Vec<PathBuf>> {
    if series.is_empty() {
        log::warn!("no plot series to write into {}", dir.display());
        return Ok(Vec::new());
    }
    fs::create_dir_all(dir)?;
    series
        .iter()
        .map(|s| {
            s.validate()?;
            let path = dir.join(s.file_name());
            fs::write(&path, s.to_text())?;
            Ok(path)
        })
        .collect()
}
