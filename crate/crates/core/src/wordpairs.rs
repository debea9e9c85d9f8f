//! Word-pair baseline: binary cross-argument word-pair features plus Arg2
//! single-word features, classified by one-vs-rest logistic regression.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::hash::stable_hash;
use crate::text::LabelId;

pub const MODEL_MAGIC: &[u8; 5] = b"WPLR1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WordPairsConfig {
    /// Minimum number of training samples a feature must occur in.
    pub min_support: usize,
    /// Also emit "word appears in Arg1" features.
    pub arg1_singles: bool,
    /// Hash features into `2^hash_bits` buckets instead of keeping an
    /// explicit dictionary. The support threshold is not applied in this
    /// mode.
    pub hashed: bool,
    pub hash_bits: u32,
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for WordPairsConfig {
    fn default() -> Self {
        Self {
            min_support: 5,
            arg1_singles: false,
            hashed: false,
            hash_bits: 22,
            learning_rate: 0.5,
            l2: 1e-6,
            epochs: 10,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Feature {
    Pair { arg1: String, arg2: String },
    Arg1 { word: String },
    Arg2 { word: String },
}

impl Feature {
    fn hash_key(&self) -> u64 {
        match self {
            Feature::Pair { arg1, arg2 } => stable_hash(&[b"p", arg1.as_bytes(), arg2.as_bytes()]),
            Feature::Arg1 { word } => stable_hash(&[b"1", word.as_bytes()]),
            Feature::Arg2 { word } => stable_hash(&[b"2", word.as_bytes()]),
        }
    }
}

/// Strictly increasing feature indices of the features present.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparseVector(pub Vec<u32>);

/// Retained features in sorted order, indexed densely.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureDict {
    features: Vec<Feature>,
    support: Vec<usize>,
    index: HashMap<Feature, u32>,
    pub min_support: usize,
    pub arg1_singles: bool,
    /// `Some(bits)` in hashed mode.
    pub hash_bits: Option<u32>,
}

fn lower_set(tokens: &[String]) -> BTreeSet<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

fn candidate_features(arg1: &[String], arg2: &[String], arg1_singles: bool) -> Vec<Feature> {
    let a = lower_set(arg1);
    let b = lower_set(arg2);
    let mut out = Vec::with_capacity(a.len() * b.len() + a.len() + b.len());
    for x in &a {
        for y in &b {
            out.push(Feature::Pair {
                arg1: x.clone(),
                arg2: y.clone(),
            });
        }
    }
    if arg1_singles {
        out.extend(a.iter().map(|w| Feature::Arg1 { word: w.clone() }));
    }
    out.extend(b.iter().map(|w| Feature::Arg2 { word: w.clone() }));
    out
}

impl FeatureDict {
    /// Counts each feature at most once per sample and keeps those with
    /// support ≥ `min_support`.
    pub fn build(train: &[LabeledExample], cfg: &WordPairsConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if cfg.hashed {
            if !(1..=30).contains(&cfg.hash_bits) {
                return Err(Error::InvalidConfig(format!(
                    "hash_bits {} outside 1..=30",
                    cfg.hash_bits
                )));
            }
            return Ok(Self {
                features: Vec::new(),
                support: Vec::new(),
                index: HashMap::new(),
                min_support: cfg.min_support,
                arg1_singles: cfg.arg1_singles,
                hash_bits: Some(cfg.hash_bits),
            });
        }
        let counts = train
            .par_iter()
            .fold(HashMap::<Feature, usize>::new, |mut acc, ex| {
                for f in candidate_features(&ex.arg1, &ex.arg2, cfg.arg1_singles) {
                    *acc.entry(f).or_default() += 1;
                }
                acc
            })
            .reduce(HashMap::new, |mut a, b| {
                let (mut big, small) = if a.len() >= b.len() {
                    (a, b)
                } else {
                    (b, std::mem::take(&mut a))
                };
                for (f, c) in small {
                    *big.entry(f).or_default() += c;
                }
                big
            });
        let mut kept: Vec<(Feature, usize)> = counts.into_iter().filter(|(_, c)| *c >= cfg.min_support).collect();
        kept.sort_unstable_by(|x, y| x.0.cmp(&y.0));
        let index = kept
            .iter()
            .enumerate()
            .map(|(i, (f, _))| (f.clone(), i as u32))
            .collect();
        let (features, support) = kept.into_iter().unzip();
        Ok(Self {
            features,
            support,
            index,
            min_support: cfg.min_support,
            arg1_singles: cfg.arg1_singles,
            hash_bits: None,
        })
    }

    pub fn len(&self) -> usize {
        match self.hash_bits {
            Some(bits) => 1 << bits,
            None => self.features.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn index_of(&self, f: &Feature) -> Option<u32> {
        match self.hash_bits {
            Some(bits) => Some((f.hash_key() & ((1u64 << bits) - 1)) as u32),
            None => self.index.get(f).copied(),
        }
    }

    pub fn featurize(&self, ex: &LabeledExample) -> SparseVector {
        self.featurize_tokens(&ex.arg1, &ex.arg2)
    }

    pub fn featurize_tokens(&self, arg1: &[String], arg2: &[String]) -> SparseVector {
        let mut idx: Vec<u32> = candidate_features(arg1, arg2, self.arg1_singles)
            .iter()
            .filter_map(|f| self.index_of(f))
            .collect();
        idx.sort_unstable();
        idx.dedup();
        SparseVector(idx)
    }

    /// `index<TAB>kind<TAB>arg1 word<TAB>arg2 word<TAB>support`.
    pub fn write_tsv(&self, mut out: impl Write) -> Result<()> {
        for (i, (f, s)) in self.features.iter().zip(&self.support).enumerate() {
            let (kind, a, b) = match f {
                Feature::Pair { arg1, arg2 } => ("pair", arg1.as_str(), arg2.as_str()),
                Feature::Arg1 { word } => ("arg1", word.as_str(), ""),
                Feature::Arg2 { word } => ("arg2", "", word.as_str()),
            };
            writeln!(out, "{i}\t{kind}\t{a}\t{b}\t{s}")?;
        }
        Ok(())
    }

    fn from_parts(
        features: Vec<Feature>,
        support: Vec<usize>,
        min_support: usize,
        arg1_singles: bool,
        hash_bits: Option<u32>,
    ) -> Self {
        let index = features
            .iter()
            .enumerate()
            .map(|(i, f)| (f.clone(), i as u32))
            .collect();
        Self {
            features,
            support,
            index,
            min_support,
            arg1_singles,
            hash_bits,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-z))` computed without overflow.
fn softplus_neg(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn margin(w: &[f64], b: f64, x: &SparseVector) -> f64 {
    b + x.0.iter().map(|&j| w[j as usize]).sum::<f64>()
}

/// Mean logistic loss of one binary problem plus `l2/2 · |w|²`, with its
/// gradient. `targets` are 0/1.
pub fn binary_objective(w: &[f64], b: f64, xs: &[SparseVector], targets: &[bool], l2: f64) -> (f64, Vec<f64>, f64) {
    let n = xs.len().max(1) as f64;
    let mut loss = 0.0;
    let mut gw: Vec<f64> = w.iter().map(|&v| l2 * v).collect();
    let mut gb = 0.0;
    for (x, &t) in xs.iter().zip(targets) {
        let z = margin(w, b, x);
        let y = if t { 1.0 } else { -1.0 };
        loss += softplus_neg(y * z) / n;
        let d = (sigmoid(z) - f64::from(u8::from(t))) / n;
        gb += d;
        for &j in &x.0 {
            gw[j as usize] += d;
        }
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, gw, gb)
}

/// One-vs-rest logistic regression weights.
#[derive(Clone, Debug, PartialEq)]
pub struct OvrModel {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub l2: f64,
}

impl OvrModel {
    pub fn num_labels(&self) -> usize {
        self.biases.len()
    }

    pub fn scores(&self, x: &SparseVector) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, &b)| sigmoid(margin(w, b, x)))
            .collect()
    }

    /// Labels by descending score; ties go to the smaller label id.
    pub fn predict(&self, x: &SparseVector) -> Vec<(LabelId, f64)> {
        let margins: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, &b)| margin(w, b, x))
            .collect();
        let mut ranked: Vec<(LabelId, f64)> = margins.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.into_iter().map(|(l, m)| (l, sigmoid(m))).collect()
    }

    pub fn predict_label(&self, x: &SparseVector) -> LabelId {
        self.predict(x)[0].0
    }
}

/// Trains the `num_labels` binary problems independently (in parallel)
/// with seeded minibatch SGD. L2 decay is applied lazily through a scale
/// factor so that each update only touches the active features.
pub fn train_ovr(
    xs: &[SparseVector],
    labels: &[LabelId],
    num_features: usize,
    num_labels: usize,
    cfg: &WordPairsConfig,
) -> Result<OvrModel> {
    if xs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if xs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            predictions: xs.len(),
            gold: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= num_labels) {
        return Err(Error::LabelOutOfRange { label, num_labels });
    }
    if let Some(x) = xs
        .iter()
        .find(|x| x.0.last().is_some_and(|&j| j as usize >= num_features))
    {
        return Err(Error::dims(
            "train_ovr",
            format!("feature index < {num_features}"),
            x.0.last().unwrap(),
        ));
    }
    if cfg.batch_size == 0 || cfg.learning_rate.is_nan() || cfg.learning_rate <= 0.0 || cfg.l2 < 0.0 {
        return Err(Error::InvalidConfig(
            "batch_size, learning_rate must be positive and l2 non-negative".into(),
        ));
    }

    let per_class: Vec<(Vec<f64>, f64)> = (0..num_labels)
        .into_par_iter()
        .map(|c| train_binary(xs, labels, c, num_features, cfg))
        .collect::<Result<_>>()?;
    let (weights, biases) = per_class.into_iter().unzip();
    Ok(OvrModel {
        weights,
        biases,
        l2: cfg.l2,
    })
}

fn train_binary(
    xs: &[SparseVector],
    labels: &[LabelId],
    class: LabelId,
    num_features: usize,
    cfg: &WordPairsConfig,
) -> Result<(Vec<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(class as u64);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut v = vec![0.0f64; num_features];
    let mut scale = 1.0f64;
    let mut b = 0.0f64;
    let lr = cfg.learning_rate;
    let mut grad: HashMap<u32, f64> = HashMap::new();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let n = batch.len() as f64;
            grad.clear();
            let mut gb = 0.0;
            for &i in batch {
                let x = &xs[i];
                let z = b + scale * x.0.iter().map(|&j| v[j as usize]).sum::<f64>();
                let t = labels[i] == class;
                epoch_loss += softplus_neg(if t { z } else { -z });
                let d = (sigmoid(z) - f64::from(u8::from(t))) / n;
                gb += d;
                for &j in &x.0 {
                    *grad.entry(j).or_default() += d;
                }
            }
            scale *= 1.0 - lr * cfg.l2;
            if scale < 1e-9 {
                v.iter_mut().for_each(|x| *x *= scale);
                scale = 1.0;
            }
            for (&j, &g) in &grad {
                v[j as usize] -= lr * g / scale;
            }
            b -= lr * gb;
        }
        if !epoch_loss.is_finite() || !b.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: epoch,
                detail: format!("one-vs-rest class {class} diverged"),
            });
        }
    }
    v.iter_mut().for_each(|x| *x *= scale);
    Ok((v, b))
}

/// Builds the dictionary on `train` and fits the one-vs-rest model.
pub fn fit(train: &[LabeledExample], num_labels: usize, cfg: &WordPairsConfig) -> Result<(FeatureDict, OvrModel)> {
    let dict = FeatureDict::build(train, cfg)?;
    let xs: Vec<SparseVector> = train.par_iter().map(|e| dict.featurize(e)).collect();
    let labels: Vec<LabelId> = train.iter().map(|e| e.label).collect();
    let model = train_ovr(&xs, &labels, dict.len(), num_labels, cfg)?;
    Ok((dict, model))
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: WordPairsConfig,
    labels: Vec<String>,
    num_features: usize,
    features: Vec<Feature>,
    support: Vec<usize>,
}

/// Model file: magic, `u64` header length, JSON header (configuration,
/// labels, dictionary entries), then per class the bias followed by the
/// weights, all `f64` little-endian.
pub fn save_model(
    mut out: impl Write,
    dict: &FeatureDict,
    model: &OvrModel,
    labels: &[String],
    cfg: &WordPairsConfig,
) -> Result<()> {
    let header = ModelHeader {
        config: cfg.clone(),
        labels: labels.to_vec(),
        num_features: dict.len(),
        features: dict.features.clone(),
        support: dict.support.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity((dict.len() + 1) * 8);
    for (w, b) in model.weights.iter().zip(&model.biases) {
        buf.clear();
        buf.extend(b.to_le_bytes());
        buf.extend(w.iter().flat_map(|x| x.to_le_bytes()));
        out.write_all(&buf)?;
    }
    out.flush()?;
    Ok(())
}

pub struct LoadedWordPairs {
    pub dict: FeatureDict,
    pub model: OvrModel,
    pub labels: Vec<String>,
    pub config: WordPairsConfig,
}

impl LoadedWordPairs {
    pub fn predict(&self, arg1: &[String], arg2: &[String]) -> Vec<(LabelId, f64)> {
        self.model.predict(&self.dict.featurize_tokens(arg1, arg2))
    }
}

pub fn load_model(mut input: impl Read) -> Result<LoadedWordPairs> {
    let bad = |m: &str| Error::Checkpoint(format!("word-pair model: {m}"));
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic).map_err(|_| bad("file too short"))?;
    if &magic != MODEL_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 34 {
        return Err(bad("implausible header length"));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let h: ModelHeader = serde_json::from_slice(&json)?;
    let hash_bits = h.config.hashed.then_some(h.config.hash_bits);
    let dict = FeatureDict::from_parts(
        h.features,
        h.support,
        h.config.min_support,
        h.config.arg1_singles,
        hash_bits,
    );
    if dict.len() != h.num_features {
        return Err(bad("dictionary size disagrees with header"));
    }
    let mut weights = Vec::with_capacity(h.labels.len());
    let mut biases = Vec::with_capacity(h.labels.len());
    let mut buf = vec![0u8; (h.num_features + 1) * 8];
    for _ in 0..h.labels.len() {
        input.read_exact(&mut buf).map_err(|_| bad("truncated weights"))?;
        let mut vals = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        biases.push(vals.next().expect("bias present"));
        weights.push(vals.collect());
    }
    Ok(LoadedWordPairs {
        dict,
        model: OvrModel {
            weights,
            biases,
            l2: h.config.l2,
        },
        labels: h.labels,
        config: h.config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(a: &str, b: &str, label: LabelId) -> LabeledExample {
        LabeledExample {
            arg1: a.split_whitespace().map(String::from).collect(),
            arg2: b.split_whitespace().map(String::from).collect(),
            label,
            article_id: "t".into(),
        }
    }

    #[test]
    fn support_threshold_is_inclusive() {
        let mut data = vec![ex("a", "b", 0); 5];
        data.extend(vec![ex("c", "d", 0); 4]);
        let d = FeatureDict::build(&data, &WordPairsConfig::default()).unwrap();
        let pair = |x: &str, y: &str| Feature::Pair {
            arg1: x.into(),
            arg2: y.into(),
        };
        assert!(d.index_of(&pair("a", "b")).is_some());
        assert!(d.index_of(&pair("c", "d")).is_none());
        assert!(FeatureDict::build(&[], &WordPairsConfig::default()).is_err());
    }

    #[test]
    fn featurize_single_pair() {
        let cfg = WordPairsConfig {
            min_support: 1,
            ..WordPairsConfig::default()
        };
        let d = FeatureDict::build(&[ex("a", "b", 0)], &cfg).unwrap();
        assert_eq!(
            d.features(),
            &[
                Feature::Pair {
                    arg1: "a".into(),
                    arg2: "b".into()
                },
                Feature::Arg2 { word: "b".into() }
            ]
        );
        assert_eq!(d.featurize(&ex("A", "B", 0)), SparseVector(vec![0, 1]));
        assert_eq!(d.featurize(&ex("x", "y", 0)), SparseVector(vec![]));
    }

    #[test]
    fn counts_once_per_sample() {
        let cfg = WordPairsConfig {
            min_support: 2,
            ..WordPairsConfig::default()
        };
        let d = FeatureDict::build(&[ex("a a a", "b b", 0)], &cfg).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn zero_feature_inputs_learn_priors() {
        let xs = vec![SparseVector::default(); 100];
        let labels: Vec<LabelId> = (0..100).map(|i| if i < 70 { 1 } else { 0 }).collect();
        let cfg = WordPairsConfig {
            epochs: 200,
            learning_rate: 0.5,
            l2: 0.0,
            ..WordPairsConfig::default()
        };
        let m = train_ovr(&xs, &labels, 0, 2, &cfg).unwrap();
        let s = m.scores(&SparseVector::default());
        assert!((s[1] - 0.7).abs() < 0.01 && (s[0] - 0.3).abs() < 0.01, "{s:?}");
        assert_eq!(m.predict_label(&SparseVector::default()), 1);
    }

    #[test]
    fn ties_go_to_the_smallest_label() {
        let m = OvrModel {
            weights: vec![vec![0.0]; 3],
            biases: vec![0.0, 1.0, 1.0],
            l2: 0.0,
        };
        assert_eq!(m.predict_label(&SparseVector::default()), 1);
    }

    #[test]
    fn model_file_round_trip() {
        let data = vec![ex("a", "b", 0), ex("c", "d", 1)];
        let cfg = WordPairsConfig {
            min_support: 1,
            epochs: 3,
            ..WordPairsConfig::default()
        };
        let d = FeatureDict::build(&data, &cfg).unwrap();
        let xs: Vec<_> = data.iter().map(|e| d.featurize(e)).collect();
        let m = train_ovr(&xs, &[0, 1], d.len(), 2, &cfg).unwrap();
        let mut buf = Vec::new();
        save_model(&mut buf, &d, &m, &["x".into(), "y".into()], &cfg).unwrap();
        let back = load_model(buf.as_slice()).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.dict, d);
        assert_eq!(back.labels, vec!["x", "y"]);
    }
}
