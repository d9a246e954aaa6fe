use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::forecaster::{Normalization, TimeSeriesWindow};
use crate::plant::TrajectoryRow;
use crate::seed::Rng;

/// Raw recorded series: row `k` holds the input `u_k` (plus optional extra
/// covariates) applied at time `k` and the state `x_k` measured before it.
#[derive(Clone, Debug, PartialEq)]
pub struct DataTable {
    pub time: Vec<usize>,
    /// `rows x n_covariates`; column 0 is the control input.
    pub covariates: Vec<f64>,
    /// `rows x n_targets`
    pub targets: Vec<f64>,
    pub covariate_names: Vec<String>,
    pub n_targets: usize,
}

impl DataTable {
    pub fn from_trajectory(rows: &[TrajectoryRow]) -> Self {
        Self {
            time: rows.iter().map(|r| r.time).collect(),
            covariates: rows.iter().map(|r| r.u_applied).collect(),
            targets: rows.iter().flat_map(|r| r.x).collect(),
            covariate_names: vec!["u".into()],
            n_targets: 2,
        }
    }

    pub fn rows(&self) -> usize {
        self.time.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Series aligned for windowing: `targets[t] = x_{t+1}`, `covariates[t] = u_t`.
    pub fn aligned(&self) -> (Vec<f64>, Vec<f64>) {
        let (d, m) = (self.n_targets, self.n_covariates());
        let t = self.rows().saturating_sub(1);
        (self.targets[d..].to_vec(), self.covariates[..t * m].to_vec())
    }

    /// Writes `time,u,x1..xD[,extra covariates]`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["time".to_string(), self.covariate_names[0].clone()];
        header.extend((1..=self.n_targets).map(|i| format!("x{i}")));
        header.extend(self.covariate_names[1..].iter().cloned());
        w.write_record(&header)?;
        let m = self.n_covariates();
        for (k, time) in self.time.iter().enumerate() {
            let cov = &self.covariates[k * m..(k + 1) * m];
            let x = &self.targets[k * self.n_targets..(k + 1) * self.n_targets];
            let mut record = vec![time.to_string(), cov[0].to_string()];
            record.extend(x.iter().map(f64::to_string));
            record.extend(cov[1..].iter().map(f64::to_string));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a dataset CSV. Columns named `x1, x2, ...` are targets, `time` is
    /// the step index, `u` is the control input and any other column is an
    /// extra covariate.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let col = |name: &str| header.iter().position(|h| h == name);
        let time_col = col("time").ok_or_else(|| Error::Input(format!("{}: missing `time` column", path.display())))?;
        let u_col = col("u").ok_or_else(|| Error::Input(format!("{}: missing `u` column", path.display())))?;
        let mut x_cols = Vec::new();
        while let Some(c) = col(&format!("x{}", x_cols.len() + 1)) {
            x_cols.push(c);
        }
        if x_cols.is_empty() {
            return Err(Error::Input(format!(
                "{}: no target columns x1, x2, ...",
                path.display()
            )));
        }
        let extra: Vec<usize> = (0..header.len())
            .filter(|c| *c != time_col && *c != u_col && !x_cols.contains(c))
            .collect();
        let mut table = DataTable {
            time: Vec::new(),
            covariates: Vec::new(),
            targets: Vec::new(),
            covariate_names: std::iter::once("u".to_string())
                .chain(extra.iter().map(|&c| header[c].to_string()))
                .collect(),
            n_targets: x_cols.len(),
        };
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let num = |c: usize| -> Result<f64> {
                record[c].trim().parse::<f64>().map_err(|_| {
                    Error::Input(format!(
                        "{}: row {}: `{}` is not a number",
                        path.display(),
                        line + 2,
                        &record[c]
                    ))
                })
            };
            let time = record[time_col]
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Input(format!("{}: row {}: bad time", path.display(), line + 2)))?;
            table.time.push(time);
            table.covariates.push(num(u_col)?);
            for &c in &extra {
                table.covariates.push(num(c)?);
            }
            for &c in &x_cols {
                table.targets.push(num(c)?);
            }
        }
        if table.targets.iter().chain(&table.covariates).any(|v| !v.is_finite()) {
            return Err(Error::Input(format!("{}: non-finite values", path.display())));
        }
        Ok(table)
    }
}

/// Stride-1 moving windows of length `w + N` over aligned series with `T` rows.
/// Window `l` takes past rows `l..l+w` and future rows `l+w..l+w+N`.
pub fn window_series(
    targets: &[f64],
    covariates: &[f64],
    n_targets: usize,
    n_covariates: usize,
    window: usize,
    horizon: usize,
) -> Result<Vec<TimeSeriesWindow>> {
    let (d, m) = (n_targets, n_covariates);
    let rows = targets.len() / d;
    if targets.len() != rows * d || covariates.len() != rows * m {
        return Err(Error::Input(format!(
            "targets ({} values) and covariates ({} values) do not form {rows} rows",
            targets.len(),
            covariates.len()
        )));
    }
    if rows < window + horizon {
        return Err(Error::Input(format!(
            "series of length {rows} is shorter than window + horizon = {}",
            window + horizon
        )));
    }
    Ok((0..=rows - window - horizon)
        .map(|l| {
            let (p, f, e) = (l, l + window, l + window + horizon);
            TimeSeriesWindow {
                past_targets: targets[p * d..f * d].to_vec(),
                past_covariates: covariates[p * m..f * m].to_vec(),
                future_covariates: covariates[f * m..e * m].to_vec(),
                future_targets: Some(targets[f * d..e * d].to_vec()),
            }
        })
        .collect())
}

/// Windows with disjoint train/validation/test index sets.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub windows: Vec<TimeSeriesWindow>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    /// Shuffles window indices with `rng` and splits them 8:1:1.
    pub fn split(windows: Vec<TimeSeriesWindow>, rng: &mut Rng) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Input("dataset has no windows".into()));
        }
        if windows.iter().any(|w| w.future_targets.is_none()) {
            return Err(Error::Input("training windows need future targets".into()));
        }
        let n = windows.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let n_train = (n * 8 / 10).max(1);
        let n_val = (n / 10).min(n - n_train);
        let test = idx.split_off(n_train + n_val);
        let validation = idx.split_off(n_train);
        Ok(Self {
            windows,
            train: idx,
            validation,
            test,
        })
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<&TimeSeriesWindow> {
        indices.iter().map(|&i| &self.windows[i]).collect()
    }

    /// Per-feature statistics of the training split.
    pub fn normalization(&self, n_targets: usize, n_covariates: usize) -> Normalization {
        let mut targets = Vec::new();
        let mut covariates = Vec::new();
        for &i in &self.train {
            let w = &self.windows[i];
            targets.extend_from_slice(&w.past_targets);
            targets.extend_from_slice(w.future_targets.as_deref().unwrap_or(&[]));
            covariates.extend_from_slice(&w.past_covariates);
            covariates.extend_from_slice(&w.future_covariates);
        }
        let (target_mean, target_std) = Normalization::column_stats(&targets, n_targets);
        let (covariate_mean, covariate_std) = Normalization::column_stats(&covariates, n_covariates);
        Normalization {
            target_mean,
            target_std,
            covariate_mean,
            covariate_std,
        }
    }
}
