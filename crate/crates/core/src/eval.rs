//! Nearest-neighbour classification, error rates and the second
//! mean-removal ablation.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numcore::Matrix;
use crate::pcanet::{self, train_with_report, FeatureVector, NetConfig, Overlap, TrainedNet};

/// Inner-product space used by the nearest-neighbour search.
pub trait Features: Sync {
    fn dim(&self) -> usize;
    fn dot(&self, other: &Self) -> f64;
    fn squared_norm(&self) -> f64;
}

impl Features for FeatureVector {
    fn dim(&self) -> usize {
        self.len()
    }
    fn dot(&self, other: &Self) -> f64 {
        FeatureVector::dot(self, other)
    }
    fn squared_norm(&self) -> f64 {
        FeatureVector::squared_norm(self)
    }
}

impl Features for Vec<f64> {
    fn dim(&self) -> usize {
        self.len()
    }
    fn dot(&self, other: &Self) -> f64 {
        self.iter().zip(other).map(|(a, b)| a * b).sum()
    }
    fn squared_norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum()
    }
}

impl Features for Matrix {
    fn dim(&self) -> usize {
        self.as_slice().len()
    }
    fn dot(&self, other: &Self) -> f64 {
        self.as_slice().iter().zip(other.as_slice()).map(|(a, b)| a * b).sum()
    }
    fn squared_norm(&self) -> f64 {
        self.as_slice().iter().map(|v| v * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct LabeledFeatures<T = FeatureVector> {
    pub features: Vec<T>,
    pub labels: Vec<u32>,
    pub split: SplitTag,
}

impl<T: Features> LabeledFeatures<T> {
    pub fn new(features: Vec<T>, labels: Vec<u32>, split: SplitTag) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::precondition(
                "labels",
                format!("{} labels for {} features", labels.len(), features.len()),
            ));
        }
        if let Some(d) = features.first().map(Features::dim) {
            if let Some(i) = features.iter().position(|f| f.dim() != d) {
                return Err(Error::precondition(
                    "features",
                    format!("feature {i} has length {}, expected {d}", features[i].dim()),
                ));
            }
        }
        Ok(LabeledFeatures {
            features,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// A classifier over a fixed training set.
pub trait Classifier<T> {
    fn predict(&self, train: &LabeledFeatures<T>, test: &[T], exec: Exec) -> Result<Vec<u32>>;
}

/// 1-NN under cosine distance `1 - <a,b> / (|a| |b|)`.
///
/// A zero-norm query is ranked against the training set by Euclidean
/// distance. A zero-norm training vector is at cosine distance 1 from any
/// non-zero query. Ties go to the lowest training index.
#[derive(Debug, Clone, Copy, Default)]
pub struct NearestNeighbor;

impl NearestNeighbor {
    fn nearest<T: Features>(train: &[T], norms: &[f64], q: &T) -> usize {
        let qn = q.squared_norm();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, t) in train.iter().enumerate() {
            let d = if qn == 0.0 {
                norms[i]
            } else if norms[i] == 0.0 {
                1.0
            } else {
                1.0 - t.dot(q) / (norms[i].sqrt() * qn.sqrt())
            };
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

impl<T: Features> Classifier<T> for NearestNeighbor {
    fn predict(&self, train: &LabeledFeatures<T>, test: &[T], exec: Exec) -> Result<Vec<u32>> {
        if train.is_empty() {
            return Err(Error::precondition("train", "training set is empty"));
        }
        let d = train.features[0].dim();
        if let Some(i) = test.iter().position(|t| t.dim() != d) {
            return Err(Error::precondition(
                "test",
                format!("test feature {i} has length {}, training length is {d}", test[i].dim()),
            ));
        }
        let norms: Vec<f64> = train.features.iter().map(Features::squared_norm).collect();
        Ok(exec.map(test, |q| train.labels[Self::nearest(&train.features, &norms, q)]))
    }
}

pub fn classify_nn<T: Features>(
    train: &LabeledFeatures<T>,
    test: &LabeledFeatures<T>,
    exec: Exec,
) -> Result<Vec<u32>> {
    NearestNeighbor.predict(train, &test.features, exec)
}

pub fn error_rate(predicted: &[u32], truth: &[u32]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::precondition(
            "predicted",
            format!("{} predictions for {} labels", predicted.len(), truth.len()),
        ));
    }
    if truth.is_empty() {
        return Err(Error::precondition("truth", "no labels to score"));
    }
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    Ok(wrong as f64 / truth.len() as f64)
}

/// A trained net plus the decimal maps of a train/test split.
///
/// Block parameters only enter after the maps, so one `PreparedNet` serves
/// every `(h1, h2, R)` for its filters.
#[derive(Debug, Clone)]
pub struct PreparedNet {
    pub net: TrainedNet,
    pub train_maps: Vec<Vec<Matrix>>,
    pub test_maps: Vec<Vec<Matrix>>,
}

/// Outcome of evaluating one block geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEval {
    pub e: f64,
    /// `E(Z)` summed over the training images.
    pub block_energy: f64,
}

impl PreparedNet {
    pub fn new(train: &Dataset, test: &Dataset, config: &NetConfig, exec: Exec) -> Result<Self> {
        let (net, warnings) = train_with_report(&train.images, config, exec)?;
        for w in &warnings {
            log::warn!("L1={} L2={}: {w}", config.l1, config.l2);
        }
        Self::from_net(net, train, test, exec)
    }

    pub fn from_net(net: TrainedNet, train: &Dataset, test: &Dataset, exec: Exec) -> Result<Self> {
        let maps = |d: &Dataset| -> Result<Vec<Vec<Matrix>>> {
            exec.map(&d.images, |im| pcanet::decimal_maps(&net, im))
                .into_iter()
                .collect()
        };
        let train_maps = maps(train)?;
        let test_maps = maps(test)?;
        Ok(PreparedNet {
            net,
            train_maps,
            test_maps,
        })
    }

    pub fn features(
        &self,
        h1: usize,
        h2: usize,
        overlap: Overlap,
        exec: Exec,
    ) -> Result<(Vec<FeatureVector>, Vec<FeatureVector>)> {
        let l2 = self.net.stage2.len();
        let run = |maps: &[Vec<Matrix>]| -> Result<Vec<FeatureVector>> {
            exec.map(maps, |m| pcanet::feature_from_maps(m, l2, h1, h2, overlap))
                .into_iter()
                .collect()
        };
        Ok((run(&self.train_maps)?, run(&self.test_maps)?))
    }

    pub fn evaluate(
        &self,
        train_labels: &[u32],
        test_labels: &[u32],
        h1: usize,
        h2: usize,
        overlap: Overlap,
        exec: Exec,
    ) -> Result<BlockEval> {
        let (tr, te) = self.features(h1, h2, overlap, exec)?;
        let block_energy = tr.iter().map(FeatureVector::block_energy).sum();
        let train = LabeledFeatures::new(tr, train_labels.to_vec(), SplitTag::Train)?;
        let test = LabeledFeatures::new(te, test_labels.to_vec(), SplitTag::Test)?;
        let pred = classify_nn(&train, &test, exec)?;
        Ok(BlockEval {
            e: error_rate(&pred, test_labels)?,
            block_energy,
        })
    }
}

/// Trains on `train`, classifies `test`, returns the error rate.
pub fn pcanet_error(train: &Dataset, test: &Dataset, config: &NetConfig, exec: Exec) -> Result<f64> {
    let prep = PreparedNet::new(train, test, config, exec)?;
    Ok(prep
        .evaluate(&train.labels, &test.labels, config.h1, config.h2, config.overlap, exec)?
        .e)
}

/// Nearest-neighbour error on raw pixels.
pub fn raw_pixel_error(train: &Dataset, test: &Dataset, exec: Exec) -> Result<f64> {
    let tr = LabeledFeatures::new(train.images.clone(), train.labels.clone(), SplitTag::Train)?;
    let pred = NearestNeighbor.predict(&tr, &test.images, exec)?;
    error_rate(&pred, &test.labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub config: NetConfig,
    /// Error with the second mean removal.
    pub e_r: f64,
    /// Error without it.
    pub e_wr: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedConfig {
    pub config: NetConfig,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub dataset: String,
    pub per_config_delta: Vec<AblationEntry>,
    pub skipped: Vec<SkippedConfig>,
    /// Mean of `e_r - e_wr` over the evaluated configurations.
    pub mean_delta: f64,
}

/// `L1 = L2 = 6`, `R = 0.5`, `h1 = h2` from 1 to `max_h`.
pub fn default_ablation_configs(max_h: usize) -> Vec<NetConfig> {
    (1..=max_h)
        .map(|h| NetConfig {
            l1: 6,
            l2: 6,
            h1: h,
            h2: h,
            overlap: Overlap::from_tenths(5).expect("0.5 is on the grid"),
            ..NetConfig::default()
        })
        .collect()
}

/// Compares error rates with and without the second mean removal.
///
/// Both variants see the same split. Filters and decimal maps are shared
/// between configurations that differ only in block parameters. Configurations
/// whose blocks do not fit are reported in `skipped`.
pub fn ablate_second_mean_removal(
    train: &Dataset,
    test: &Dataset,
    configs: &[NetConfig],
    exec: Exec,
) -> Result<AblationReport> {
    let mut cache: HashMap<(usize, usize, usize, usize, bool), PreparedNet> = HashMap::new();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for cfg in configs {
        if let Err(e) = cfg.validate_for_image(train.m, train.n) {
            skipped.push(SkippedConfig {
                config: *cfg,
                reason: e.to_string(),
            });
            continue;
        }
        let mut errs = [0.0; 2];
        let mut failed = None;
        for (slot, skip) in [false, true].into_iter().enumerate() {
            let key = (cfg.k1, cfg.k2, cfg.l1, cfg.l2, skip);
            let prepared = match cache.entry(key) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(v) => {
                    let mut c = *cfg;
                    c.skip_second_mean_removal = skip;
                    v.insert(PreparedNet::new(train, test, &c, exec)?)
                }
            };
            match prepared.evaluate(&train.labels, &test.labels, cfg.h1, cfg.h2, cfg.overlap, exec) {
                Ok(r) => errs[slot] = r.e,
                Err(Error::Infeasible(msg)) => {
                    failed = Some(msg);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        match failed {
            Some(reason) => skipped.push(SkippedConfig {
                config: *cfg,
                reason,
            }),
            None => entries.push(AblationEntry {
                config: NetConfig {
                    skip_second_mean_removal: false,
                    ..*cfg
                },
                e_r: errs[0],
                e_wr: errs[1],
                delta: errs[0] - errs[1],
            }),
        }
    }
    if entries.is_empty() {
        return Err(Error::Infeasible("no ablation configuration could be evaluated".into()));
    }
    let mean_delta = entries.iter().map(|e| e.delta).sum::<f64>() / entries.len() as f64;
    Ok(AblationReport {
        dataset: train.name.clone(),
        per_config_delta: entries,
        skipped,
        mean_delta,
    })
}
