//! Uniform time grids and named time series with CSV import/export.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::C64;

/// `t_j = j·h` for `j = 0..=n_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    h: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(h: f64, n_steps: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {h}"
            )));
        }
        Ok(Self { h, n_steps })
    }

    /// The grid covering `[0, t_max]`; `t_max` is rounded to the nearest
    /// multiple of `h`.
    pub fn covering(t_max: f64, h: f64) -> Result<Self> {
        if !(t_max >= 0.0 && t_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_max must be non-negative, got {t_max}"
            )));
        }
        Self::new(h, 0)?;
        Self::new(h, (t_max / h).round() as usize)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of sample points, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    pub fn t_max(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|j| self.time(j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Channel {
    Real(Vec<f64>),
    Complex(Vec<C64>),
}

impl Channel {
    pub fn len(&self) -> usize {
        match self {
            Channel::Real(v) => v.len(),
            Channel::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    grid: TimeGrid,
    channels: Vec<(String, Channel)>,
}

impl TimeSeries {
    pub fn new(grid: TimeGrid) -> Self {
        Self {
            grid,
            channels: Vec::new(),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn push(&mut self, name: impl Into<String>, channel: Channel) -> Result<()> {
        let name = name.into();
        if channel.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "channel `{name}` has {} samples, grid has {}",
                channel.len(),
                self.grid.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::InvalidParameter(format!(
                "duplicate channel `{name}`"
            )));
        }
        self.channels.push((name, channel));
        Ok(())
    }

    pub fn push_real(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        self.push(name, Channel::Real(values))
    }

    pub fn push_complex(&mut self, name: impl Into<String>, values: Vec<C64>) -> Result<()> {
        self.push(name, Channel::Complex(values))
    }

    pub fn with_real(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.push_real(name, values)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Channel> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|(n, _)| n.as_str())
    }

    pub fn channels(&self) -> &[(String, Channel)] {
        &self.channels
    }

    pub fn real(&self, name: &str) -> Result<&[f64]> {
        match self.get(name) {
            Some(Channel::Real(v)) => Ok(v),
            Some(Channel::Complex(_)) => Err(Error::InvalidParameter(format!(
                "channel `{name}` is complex"
            ))),
            None => Err(Error::UnknownChannel(name.to_string())),
        }
    }

    pub fn complex(&self, name: &str) -> Result<&[C64]> {
        match self.get(name) {
            Some(Channel::Complex(v)) => Ok(v),
            Some(Channel::Real(_)) => {
                Err(Error::InvalidParameter(format!("channel `{name}` is real")))
            }
            None => Err(Error::UnknownChannel(name.to_string())),
        }
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["t".to_string()];
        for (name, ch) in &self.channels {
            match ch {
                Channel::Real(_) => cols.push(name.clone()),
                Channel::Complex(_) => {
                    cols.push(format!("re_{name}"));
                    cols.push(format!("im_{name}"));
                }
            }
        }
        cols.join(",")
    }

    /// Header row plus one row per grid point. Numbers carry 17 significant
    /// digits so that parsing them back is exact.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for j in 0..self.grid.len() {
            write_num(&mut out, self.grid.time(j));
            for (_, ch) in &self.channels {
                match ch {
                    Channel::Real(v) => {
                        out.push(',');
                        write_num(&mut out, v[j]);
                    }
                    Channel::Complex(v) => {
                        out.push(',');
                        write_num(&mut out, v[j].re);
                        out.push(',');
                        write_num(&mut out, v[j].im);
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    /// Parses the output of [`TimeSeries::to_csv`]. `re_x`/`im_x` column pairs
    /// become one complex channel `x`. At least two rows are needed to recover
    /// the step.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Csv("empty input".into()))?
            .split(',')
            .collect();
        if header.first() != Some(&"t") {
            return Err(Error::Csv("first column must be `t`".into()));
        }
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); header.len()];
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != header.len() {
                return Err(Error::Csv(format!(
                    "row {} has {} fields, expected {}",
                    row + 1,
                    fields.len(),
                    header.len()
                )));
            }
            for (col, f) in fields.iter().enumerate() {
                let v = f
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Csv(format!("row {}: `{f}`: {e}", row + 1)))?;
                columns[col].push(v);
            }
        }
        let t = &columns[0];
        if t.len() < 2 {
            return Err(Error::Csv(
                "need at least two rows to infer the time step".into(),
            ));
        }
        let grid = TimeGrid::new(t[1] - t[0], t.len() - 1)?;
        let mut series = TimeSeries::new(grid);
        let mut col = 1;
        while col < header.len() {
            let name = header[col];
            if let Some(base) = name.strip_prefix("re_") {
                if header.get(col + 1) == Some(&format!("im_{base}").as_str()) {
                    let values = columns[col]
                        .iter()
                        .zip(&columns[col + 1])
                        .map(|(&r, &i)| C64::new(r, i))
                        .collect();
                    series.push_complex(base, values)?;
                    col += 2;
                    continue;
                }
            }
            series.push_real(name, columns[col].clone())?;
            col += 1;
        }
        Ok(series)
    }
}

fn write_num(out: &mut String, x: f64) {
    write!(out, "{x:.16e}").expect("write to string");
}
