//! A trained network bundled with everything needed to score raw feature rows.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::io::{Dataset, ExperimentConfig, Split, SplitRule, Standardizer};
use crate::nn::{decode, encode, train, Network, NetworkSpec, TrainData, TrainHistory, FORMAT_VERSION};
use crate::{Error, Likelihood, Matrix, Result, TghParams};

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub network: Network,
    pub likelihood: Likelihood,
    /// Input columns in network order (regular features, then late features).
    pub features: Vec<String>,
    pub late_features: usize,
    pub target: String,
    pub standardizer: Standardizer,
    /// Rule that produced the training split, so reports can address the same rows.
    pub split: SplitRule,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    likelihood: Likelihood,
    features: Vec<String>,
    late_features: usize,
    target: String,
    standardizer: Standardizer,
    split: SplitRule,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    format_version: u32,
    num_params: usize,
    spec: &'a NetworkSpec,
    #[serde(flatten)]
    meta: &'a Metadata,
}

impl TrainedModel {
    /// Splits `data` by the config's rule, standardizes on the training rows and trains.
    /// `data` must hold the config's features in `all_features()` order.
    pub fn fit(cfg: &ExperimentConfig, data: &mut Dataset) -> Result<(Self, TrainHistory)> {
        cfg.validate()?;
        let features = cfg.all_features();
        if data.feature_names != features {
            return Err(Error::InvalidParameter(format!(
                "dataset features {:?} do not match config features {:?}",
                data.feature_names, features
            )));
        }
        data.apply_split(&cfg.split)?;
        let train_idx = data.indices(Split::Train);
        let val_idx = data.indices(Split::Val);
        let standardizer = Standardizer::fit(&data.x, &train_idx, &features)?;
        let xs = standardizer.apply(&data.x)?;
        let pick = |idx: &[usize]| -> (Matrix, Vec<f64>) {
            (xs.select_rows(idx), idx.iter().map(|&i| data.y[i]).collect())
        };
        let (tx, ty) = pick(&train_idx);
        let (vx, vy) = pick(&val_idx);

        let likelihood = cfg.likelihood();
        let mut network = Network::new(cfg.network_spec()?, cfg.seed)?;
        let history = train(
            &mut network,
            &likelihood,
            TrainData {
                train_x: &tx,
                train_y: &ty,
                val_x: &vx,
                val_y: &vy,
            },
            &cfg.train_config(),
        )?;
        let model = TrainedModel {
            network,
            likelihood,
            features,
            late_features: cfg.late_features.len(),
            target: cfg.target.clone(),
            standardizer,
            split: cfg.split.clone(),
        };
        Ok((model, history))
    }

    fn metadata(&self) -> Metadata {
        Metadata {
            likelihood: self.likelihood,
            features: self.features.clone(),
            late_features: self.late_features,
            target: self.target.clone(),
            standardizer: self.standardizer.clone(),
            split: self.split.clone(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(encode(&self.network, &serde_json::to_string(&self.metadata())?))
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (network, meta) = decode(buf)?;
        let meta: Metadata = serde_json::from_str(&meta)?;
        let model = Self {
            network,
            likelihood: meta.likelihood,
            features: meta.features,
            late_features: meta.late_features,
            target: meta.target,
            standardizer: meta.standardizer,
            split: meta.split,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let spec = self.network.spec();
        if spec.input_dim() != self.features.len()
            || spec.late_features != self.late_features
            || spec.head_dim != self.likelihood.head_dim()
            || self.standardizer.mean.len() != self.features.len()
        {
            return Err(Error::Format(
                "network shape disagrees with the stored metadata".into(),
            ));
        }
        Ok(())
    }

    /// Path of the human-readable description written next to a model file.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the binary model and a JSON sidecar at `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))?;
        let meta = self.metadata();
        let side = Sidecar {
            format_version: FORMAT_VERSION,
            num_params: self.network.num_params(),
            spec: self.network.spec(),
            meta: &meta,
        };
        let side_path = Self::sidecar_path(path);
        std::fs::write(&side_path, serde_json::to_string_pretty(&side)? + "\n")
            .map_err(|e| Error::io(side_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }

    /// Raw network head for unstandardized feature rows.
    pub fn predict_raw(&self, x: &Matrix) -> Result<Matrix> {
        self.network.predict(&self.standardizer.apply(x)?)
    }

    /// Distribution parameters for each unstandardized feature row.
    pub fn predict_params(&self, x: &Matrix) -> Result<Vec<TghParams>> {
        let head = self.predict_raw(x)?;
        Ok((0..head.rows())
            .map(|i| self.likelihood.params(head.row(i)))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> TrainedModel {
        let spec = NetworkSpec::mlp(2, &[6, 5], true, 1, 4).unwrap();
        let names: Vec<String> = ["a", "b", "year"].iter().map(|s| s.to_string()).collect();
        TrainedModel {
            network: Network::new(spec, 1).unwrap(),
            likelihood: Likelihood::tukey(),
            features: names.clone(),
            late_features: 1,
            target: "y".into(),
            standardizer: Standardizer {
                names,
                mean: vec![0.5, -1.0, 2000.0],
                scale: vec![2.0, 1.0, 10.0],
            },
            split: SplitRule::default(),
        }
    }

    #[test]
    fn bytes_roundtrip() {
        let m = model();
        let bytes = m.to_bytes().unwrap();
        let back = TrainedModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let x = Matrix::from_rows(&[vec![0.1, 0.2, 1990.0], vec![1.0, -3.0, 2010.0]]);
        assert_eq!(back.predict_params(&x).unwrap(), m.predict_params(&x).unwrap());
    }

    #[test]
    fn save_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tghn");
        model().save(&path).unwrap();
        let side: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.tghn.json")).unwrap())
                .unwrap();
        assert_eq!(side["format_version"], 1);
        assert_eq!(side["spec"]["head_dim"], 4);
        assert_eq!(side["features"][2], "year");
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back.network.params(), model().network.params());
    }

    #[test]
    fn inconsistent_metadata_is_rejected() {
        let mut m = model();
        m.likelihood = Likelihood::gaussian();
        assert!(matches!(
            TrainedModel::from_bytes(&m.to_bytes().unwrap()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn predictions_are_valid_params() {
        let m = model();
        let x = Matrix::from_rows(&[vec![3.0, 0.0, 1985.0]]);
        let p = m.predict_params(&x).unwrap();
        assert!(p[0].validate().is_ok());
    }
}
