use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{DaModel, EncodedPair};
use super::vocab::Vocab;
use super::DaConfig;
use crate::error::{Error, Result};
use crate::nn::{read_checkpoint, softmax_rows, write_checkpoint, Matrix, Parameters, LAYER_NORM_EPS};
use crate::text::LabelId;

const MODEL_KIND: &str = "decomposable-attention";
const VOCAB_SECTION: &str = "vocab";

/// Everything needed to run a trained classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub model: DaModel<f32>,
    pub vocab: Vocab,
    pub labels: Vec<String>,
    pub config: DaConfig,
}

pub fn save_checkpoint(out: impl Write, tm: &TrainedModel) -> Result<()> {
    let meta = serde_json::json!({
        "model": MODEL_KIND,
        "config": tm.config,
        "labels": tm.labels,
        "vocab_size": tm.vocab.len(),
        "embedding_dim": tm.model.embedding_dim(),
        "dims": {
            "F": tm.model.f.dims(),
            "G": tm.model.g.dims(),
            "H": tm.model.h.dims(),
        },
        "init": "embeddings uniform(-sqrt3, sqrt3); networks glorot-uniform; H output layer zero",
        "layer_norm": if tm.config.layer_norm {
            format!("after each hidden affine transform, before relu, eps {LAYER_NORM_EPS:e}")
        } else {
            "none".to_string()
        },
    });
    let vocab = tm.vocab.to_bytes();
    write_checkpoint(out, &meta, &tm.model.tensors(), &[(VOCAB_SECTION, &vocab)])
}

pub fn load_checkpoint(input: impl Read) -> Result<TrainedModel> {
    let ck = read_checkpoint(input)?;
    if ck.meta.get("model").and_then(|v| v.as_str()) != Some(MODEL_KIND) {
        return Err(Error::Checkpoint("not a decomposable attention checkpoint".into()));
    }
    let config: DaConfig = serde_json::from_value(ck.meta["config"].clone())?;
    let labels: Vec<String> = serde_json::from_value(ck.meta["labels"].clone())?;
    let vocab = Vocab::from_bytes(ck.section(VOCAB_SECTION)?)?;
    let mut model = DaModel::<f32>::new(vocab.len(), labels.len(), &config, &mut ChaCha8Rng::seed_from_u64(0))?;
    for (name, tensor) in model.tensors_mut() {
        let stored = ck.tensor(&name)?;
        if stored.shape() != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape {:?}, configuration implies {:?}",
                stored.shape(),
                tensor.shape()
            )));
        }
        *tensor = stored.clone();
    }
    Ok(TrainedModel {
        model,
        vocab,
        labels,
        config,
    })
}

/// Overwrites embedding rows of vocabulary words found in a text embedding
/// file (`token v1 … vd` per line; a leading `count dim` header line is
/// skipped). Returns how many vocabulary entries were initialized.
pub fn load_embeddings(input: impl BufRead, vocab: &Vocab, model: &mut DaModel<f32>) -> Result<usize> {
    let d = model.embedding_dim();
    let mut seen = HashSet::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if idx == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
            continue;
        }
        if values.len() != d {
            return Err(Error::schema(
                "<embeddings>",
                idx + 1,
                format!("expected {d} values, found {}", values.len()),
            ));
        }
        let id = vocab.get(&token.to_lowercase());
        if id < 2 || !seen.insert(id) {
            continue;
        }
        let row = model.embeddings.row_mut(id as usize);
        for (slot, v) in row.iter_mut().zip(&values) {
            *slot = v
                .parse()
                .map_err(|_| Error::schema("<embeddings>", idx + 1, format!("bad number {v:?}")))?;
        }
    }
    Ok(seen.len())
}

/// Labels with softmax scores, highest first (ties by label id).
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub ranked: Vec<(LabelId, f64)>,
}

impl Prediction {
    pub fn top(&self) -> LabelId {
        self.ranked[0].0
    }
}

fn scores(logits: Vec<f32>) -> Vec<f64> {
    let m = softmax_rows(&Matrix::row_vector(logits.into_iter().map(f64::from).collect()));
    m.into_vec()
}

pub fn predict(tm: &TrainedModel, arg1: &[String], arg2: &[String]) -> Result<Prediction> {
    let enc = EncodedPair::encode(arg1, arg2, &tm.vocab, tm.config.max_len);
    let logits = tm.model.logits(&enc)?;
    let mut ranked: Vec<(LabelId, f64)> = scores(logits).into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Prediction { ranked })
}

/// Soft alignments between the real tokens of both arguments. Rows of
/// `ab_weights` follow Arg1 tokens, rows of `ba_weights` follow Arg2 tokens;
/// both are row-stochastic.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Alignment {
    pub arg1_tokens: Vec<String>,
    pub arg2_tokens: Vec<String>,
    pub ab_weights: Vec<Vec<f64>>,
    pub ba_weights: Vec<Vec<f64>>,
    pub predicted: String,
    pub scores: BTreeMap<String, f64>,
}

pub fn explain(tm: &TrainedModel, arg1: &[String], arg2: &[String]) -> Result<Alignment> {
    let l = tm.config.max_len;
    let enc = EncodedPair::encode(arg1, arg2, &tm.vocab, l);
    let att = tm.model.cast::<f64>().attend(&enc)?;
    let (na, nb) = (arg1.len().min(l), arg2.len().min(l));
    let ab_weights = (0..na).map(|i| (0..nb).map(|j| att.ab.get(i, j)).collect()).collect();
    let ba_weights = (0..nb).map(|j| (0..na).map(|i| att.ba.get(i, j)).collect()).collect();
    let pred = predict(tm, arg1, arg2)?;
    Ok(Alignment {
        arg1_tokens: arg1[..na].to_vec(),
        arg2_tokens: arg2[..nb].to_vec(),
        ab_weights,
        ba_weights,
        predicted: tm.labels[pred.top()].clone(),
        scores: pred.ranked.iter().map(|&(l, s)| (tm.labels[l].clone(), s)).collect(),
    })
}
