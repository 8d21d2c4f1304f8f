//! Tabular ingestion, splits, standardization and experiment configuration.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{AdamConfig, NetworkSpec, TrainConfig};
use crate::{Error, InverseSolverConfig, LinkConfig, Likelihood, LossKind, Matrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidParameter(format!("unknown split `{other}`"))),
        }
    }
}

/// Numeric table: named feature columns, auxiliary columns and a target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub x: Matrix,
    pub target_name: String,
    pub y: Vec<f64>,
    /// Columns loaded for split rules or reporting but not fed to the network.
    pub aux: Vec<(String, Vec<f64>)>,
    pub split: Vec<Split>,
    /// Rows skipped at load time because a requested cell was empty, `NA` or `NaN`.
    pub dropped_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

impl Dataset {
    /// Reads CSV with a header row. Every row starts in the training split.
    pub fn from_reader<R: std::io::Read>(
        reader: R,
        target: &str,
        features: &[String],
        extra: &[String],
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.to_owned()))
        };
        let feat_idx = features.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;
        let extra_idx = extra.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;
        let target_idx = find(target)?;

        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut aux: Vec<Vec<f64>> = vec![Vec::new(); extra.len()];
        let mut dropped = 0;
        let wanted: Vec<usize> = feat_idx
            .iter()
            .chain(&extra_idx)
            .chain(std::iter::once(&target_idx))
            .copied()
            .collect();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if wanted.iter().any(|&j| rec.get(j).map_or(true, is_missing)) {
                dropped += 1;
                continue;
            }
            let parse = |j: usize| -> Result<f64> {
                let cell = rec.get(j).unwrap_or("");
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    row: row + 1,
                    column: headers[j].to_owned(),
                    value: cell.to_owned(),
                })
            };
            for &j in &feat_idx {
                xs.push(parse(j)?);
            }
            for (k, &j) in extra_idx.iter().enumerate() {
                aux[k].push(parse(j)?);
            }
            ys.push(parse(target_idx)?);
        }
        let n = ys.len();
        Ok(Self {
            feature_names: features.to_vec(),
            x: Matrix::from_vec(n, features.len(), xs),
            target_name: target.to_owned(),
            y: ys,
            aux: extra.iter().cloned().zip(aux).collect(),
            split: vec![Split::Train; n],
            dropped_rows: dropped,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Values of a feature, auxiliary column or the target, by name.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        if let Some(j) = self.feature_names.iter().position(|f| f == name) {
            return Some(self.x.column(j));
        }
        if let Some((_, v)) = self.aux.iter().find(|(n, _)| n == name) {
            return Some(v.clone());
        }
        (name == self.target_name).then(|| self.y.clone())
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == which).collect()
    }

    /// Raw features and targets of one split.
    pub fn subset(&self, which: Split) -> (Matrix, Vec<f64>) {
        let idx = self.indices(which);
        let y = idx.iter().map(|&i| self.y[i]).collect();
        (self.x.select_rows(&idx), y)
    }

    pub fn apply_split(&mut self, rule: &SplitRule) -> Result<()> {
        let n = self.len();
        let mut labels = vec![Split::Train; n];
        let wants_test = match rule {
            SplitRule::Fraction { train, test, seed } => {
                rule.validate()?;
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
                let n_train = (train * n as f64).round() as usize;
                let n_test = ((test * n as f64).round() as usize).min(n - n_train);
                for &i in &order[n_train..n_train + n_test] {
                    labels[i] = Split::Test;
                }
                for &i in &order[n_train + n_test..] {
                    labels[i] = Split::Val;
                }
                *test > 0.0
            }
            SplitRule::ByColumnValues {
                column,
                validation,
                test,
            } => {
                let col = self
                    .column(column)
                    .ok_or_else(|| Error::MissingColumn(column.clone()))?;
                for (l, v) in labels.iter_mut().zip(&col) {
                    if validation.contains(v) {
                        *l = Split::Val;
                    } else if test.contains(v) {
                        *l = Split::Test;
                    }
                }
                !test.is_empty()
            }
        };
        let count = |s| labels.iter().filter(|&&l| l == s).count();
        if count(Split::Train) == 0 {
            return Err(Error::EmptySplit("training"));
        }
        if count(Split::Val) == 0 {
            return Err(Error::EmptySplit("validation"));
        }
        if wants_test && count(Split::Test) == 0 {
            return Err(Error::EmptySplit("test"));
        }
        self.split = labels;
        Ok(())
    }
}

pub fn load_csv(path: &Path, target: &str, features: &[String]) -> Result<Dataset> {
    load_csv_with_extra(path, target, features, &[])
}

pub fn load_csv_with_extra(
    path: &Path,
    target: &str,
    features: &[String],
    extra: &[String],
) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_reader(std::io::BufReader::new(f), target, features, extra)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitRule {
    /// Random split: `train` and `test` fractions, remainder to validation.
    Fraction {
        train: f64,
        #[serde(default)]
        test: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Rows whose `column` value is listed go to validation or test; others to training.
    ByColumnValues {
        column: String,
        validation: Vec<f64>,
        #[serde(default)]
        test: Vec<f64>,
    },
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::Fraction {
            train: 0.8,
            test: 0.0,
            seed: 0,
        }
    }
}

impl SplitRule {
    /// Column a by-value rule reads when it is neither a feature nor the target.
    pub fn extra_columns(&self, features: &[String], target: &str) -> Vec<String> {
        match self {
            SplitRule::ByColumnValues { column, .. }
                if !features.contains(column) && column != target =>
            {
                vec![column.clone()]
            }
            _ => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SplitRule::Fraction { train, test, .. } = *self {
            if !(train > 0.0 && train < 1.0) || !(0.0..1.0).contains(&test) || train + test >= 1.0
            {
                return Err(Error::InvalidParameter(format!(
                    "split fractions train = {train}, test = {test} must leave a validation share"
                )));
            }
        }
        Ok(())
    }
}

/// Per-feature affine map fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Mean and sample standard deviation of each column over `rows`.
    pub fn fit(x: &Matrix, rows: &[usize], names: &[String]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::EmptySplit("training"));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; x.cols()];
        let mut scale = vec![0.0; x.cols()];
        for j in 0..x.cols() {
            let m = rows.iter().map(|&i| x.get(i, j)).sum::<f64>() / n;
            let v = rows.iter().map(|&i| (x.get(i, j) - m).powi(2)).sum::<f64>() / (n - 1.0);
            let s = v.sqrt();
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::ZeroVariance(names[j].clone()));
            }
            mean[j] = m;
            scale[j] = s;
        }
        Ok(Self {
            names: names.to_vec(),
            mean,
            scale,
        })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        Ok(out)
    }

    pub fn invert(&self, z: &Matrix) -> Result<Matrix> {
        self.check(z)?;
        let mut out = z.clone();
        for r in 0..out.rows() {
            for (j, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = *v * self.scale[j] + self.mean[j];
            }
        }
        Ok(out)
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                context: "standardizer columns",
                expected: self.mean.len(),
                got: x.cols(),
            });
        }
        Ok(())
    }
}

/// JSON experiment description; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: String,
    pub features: Vec<String>,
    /// Columns concatenated before the penultimate layer instead of at the input.
    pub late_features: Vec<String>,
    pub hidden_layers: Vec<usize>,
    pub batch_norm: bool,
    pub loss: LossKind,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: Option<f64>,
    pub split: SplitRule,
    pub link: LinkConfig,
    pub solver: InverseSolverConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            target: "y".into(),
            features: vec!["x".into()],
            late_features: Vec::new(),
            hidden_layers: vec![64; 4],
            batch_norm: true,
            loss: LossKind::Tukey,
            optimizer: train.optimizer,
            epochs: train.epochs,
            batch_size: train.batch_size,
            grad_clip_norm: train.grad_clip_norm,
            split: SplitRule::default(),
            link: LinkConfig::default(),
            solver: InverseSolverConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() && self.late_features.is_empty() {
            return Err(Error::InvalidParameter("no feature columns configured".into()));
        }
        if self.features.is_empty() {
            return Err(Error::InvalidParameter(
                "late features need at least one regular feature".into(),
            ));
        }
        let mut all = self.all_features();
        all.push(self.target.clone());
        let mut sorted = all.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != all.len() {
            return Err(Error::InvalidParameter(
                "target and feature names must be distinct".into(),
            ));
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("hidden layer widths must be positive".into()));
        }
        self.split.validate()?;
        self.likelihood().validate()?;
        self.train_config().validate()?;
        self.network_spec().map(|_| ())
    }

    /// Network input columns in order: regular features then late features.
    pub fn all_features(&self) -> Vec<String> {
        self.features.iter().chain(&self.late_features).cloned().collect()
    }

    pub fn likelihood(&self) -> Likelihood {
        Likelihood {
            kind: self.loss,
            link: self.link,
            solver: self.solver,
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        NetworkSpec::mlp(
            self.features.len(),
            &self.hidden_layers,
            self.batch_norm,
            self.late_features.len(),
            self.loss.head_dim(),
        )
    }

    /// Training settings; shuffling uses a stream distinct from weight initialization.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer.clone(),
            grad_clip_norm: self.grad_clip_norm,
            seed: self.seed.wrapping_add(1),
        }
    }
}
