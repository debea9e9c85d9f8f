use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::io::TrainedModel;
use super::model::{DaGrads, DaModel, EncodedPair};
use super::vocab::Vocab;
use super::DaConfig;
use crate::corpus::LabeledExample;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::nn::{softmax_xent, Matrix, Optimizer};
use crate::text::LabelId;

/// Minibatches are cut into this many contiguous shards whose gradients are
/// computed independently and summed in shard order, so results do not
/// depend on the number of worker threads.
const GRAD_SHARDS: usize = 8;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Config {
        config: DaConfig,
        train_examples: usize,
        dev_examples: usize,
        vocab_size: usize,
        parameters: usize,
    },
    /// Mean minibatch loss over the steps since the previous record; at
    /// step 0 the loss of the first batch before any update.
    Train { step: usize, loss: f64 },
    Eval {
        step: usize,
        dev_loss: f64,
        dev_accuracy: f64,
        dev_macro_f1: f64,
        best: bool,
    },
    Final {
        step: usize,
        final_dev_macro_f1: Option<f64>,
        best_step: Option<usize>,
        best_dev_macro_f1: Option<f64>,
    },
}

pub struct TrainOutcome {
    pub final_model: DaModel<f32>,
    /// Model with the highest dev macro-F1 and the step it was reached.
    pub best: Option<(usize, DaModel<f32>)>,
    pub log: Vec<LogRecord>,
}

struct Encoded {
    a: Vec<u32>,
    b: Vec<u32>,
    label: LabelId,
}

fn encode_all(examples: &[LabeledExample], vocab: &Vocab, max_len: usize) -> Vec<Encoded> {
    examples
        .iter()
        .map(|e| {
            let enc = EncodedPair::encode(&e.arg1, &e.arg2, vocab, max_len);
            Encoded {
                a: enc.real_a(),
                b: enc.real_b(),
                label: e.label,
            }
        })
        .collect()
}

fn example_loss(
    model: &DaModel<f32>,
    ex: &Encoded,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<(f64, Vec<f32>, super::PairCache<f32>)> {
    let (logits, cache) = model.forward(&ex.a, &ex.b, rng)?;
    let (loss, grad) = softmax_xent(&Matrix::row_vector(logits), &[ex.label])?;
    Ok((f64::from(loss), grad.into_vec(), cache))
}

/// Mean loss and argmax predictions, dropout off.
pub fn evaluate_model(
    model: &DaModel<f32>,
    examples: &[LabeledExample],
    vocab: &Vocab,
    max_len: usize,
) -> Result<(f64, Vec<LabelId>, EvalReport)> {
    let data = encode_all(examples, vocab, max_len);
    let out: Vec<(f64, LabelId)> = data
        .par_iter()
        .map(|ex| {
            let logits = model.forward(&ex.a, &ex.b, None)?.0;
            let pred = argmax(&logits);
            let (loss, _) = softmax_xent(&Matrix::row_vector(logits), &[ex.label])?;
            Ok((f64::from(loss), pred))
        })
        .collect::<Result<_>>()?;
    let loss = out.iter().map(|r| r.0).sum::<f64>() / out.len().max(1) as f64;
    let preds: Vec<LabelId> = out.iter().map(|r| r.1).collect();
    let gold: Vec<LabelId> = data.iter().map(|e| e.label).collect();
    let report = evaluate(&preds, &gold, model.num_labels())?;
    Ok((loss, preds, report))
}

/// Index of the largest value; the smallest index wins ties.
pub(crate) fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Builds the vocabulary, initializes a model from `cfg.seed`, optionally
/// loads pretrained vectors, and trains. Returns the best-on-dev model when
/// `keep_best` is set and a dev set is given, otherwise the final one.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    train_set: &[LabeledExample],
    dev: &[LabeledExample],
    labels: Vec<String>,
    cfg: &DaConfig,
    embeddings: Option<&mut dyn std::io::BufRead>,
    keep_best: bool,
    on_log: impl FnMut(&LogRecord),
) -> Result<TrainedModel> {
    cfg.validate()?;
    let vocab = Vocab::build(train_set, cfg.min_freq);
    let mut model = DaModel::new(vocab.len(), labels.len(), cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    if let Some(input) = embeddings {
        let found = super::load_embeddings(input, &vocab, &mut model)?;
        info!(
            "initialized {found} of {} vocabulary entries from pretrained vectors",
            vocab.len()
        );
    }
    let outcome = train(model, train_set, dev, &vocab, cfg, on_log)?;
    let model = match outcome.best {
        Some((_, best)) if keep_best => best,
        _ => outcome.final_model,
    };
    Ok(TrainedModel {
        model,
        vocab,
        labels,
        config: cfg.clone(),
    })
}

/// Minibatch training from an initialized model. Every record is passed to
/// `on_log` as soon as it is produced and also returned in the outcome.
pub fn train(
    mut model: DaModel<f32>,
    train: &[LabeledExample],
    dev: &[LabeledExample],
    vocab: &Vocab,
    cfg: &DaConfig,
    mut on_log: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if model.vocab_size() != vocab.len() {
        return Err(Error::dims(
            "train",
            format!("vocab size {}", vocab.len()),
            model.vocab_size(),
        ));
    }
    let data = encode_all(train, vocab, cfg.max_len);
    if let Some(bad) = data.iter().find(|e| e.label >= model.num_labels()) {
        return Err(Error::LabelOutOfRange {
            label: bad.label,
            num_labels: model.num_labels(),
        });
    }

    let mut log = Vec::new();
    let mut emit = |r: LogRecord, log: &mut Vec<LogRecord>| {
        on_log(&r);
        log.push(r);
    };
    emit(
        LogRecord::Config {
            config: cfg.clone(),
            train_examples: train.len(),
            dev_examples: dev.len(),
            vocab_size: vocab.len(),
            parameters: crate::nn::Parameters::num_parameters(&model),
        },
        &mut log,
    );

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut dense = model.zeros_like();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut shuffle_rng);
    let mut cursor = 0;

    let mut best: Option<(usize, f64, DaModel<f32>)> = None;
    let mut last_f1 = None;
    let mut interval_loss = 0.0;
    let mut interval_steps = 0;
    let batch_size = cfg.batch_size;

    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let shard_len = batch_size.div_ceil(GRAD_SHARDS);
        let scale = 1.0 / batch_size as f32;
        let shards: Vec<(f64, DaGrads<f32>)> = batch
            .chunks(shard_len)
            .enumerate()
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|(s, chunk)| {
                let mut grads = DaGrads::zeros(&model);
                let mut loss = 0.0;
                for (k, &idx) in chunk.iter().enumerate() {
                    let pos = (s * shard_len + k) as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(DROPOUT_STREAM_BASE + step as u64 * batch_size as u64 + pos);
                    let (l, mut dl, cache) = example_loss(&model, &data[idx], Some(&mut rng))?;
                    dl.iter_mut().for_each(|g| *g *= scale);
                    model.backward(&cache, &dl, &mut grads)?;
                    loss += l;
                }
                Ok((loss, grads))
            })
            .collect::<Result<_>>()?;
        let mut shards = shards.into_iter();
        let (mut loss, mut grads) = shards.next().expect("batch is non-empty");
        for (l, g) in shards {
            loss += l;
            grads.merge(&g);
        }
        let loss = loss / batch_size as f64;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: format!("mean batch loss {loss}"),
            });
        }
        if step == 0 {
            emit(LogRecord::Train { step: 0, loss }, &mut log);
        }

        grads.write_dense(&mut dense);
        optimizer.step(&mut model, &dense)?;
        grads.clear_dense(&mut dense);

        interval_loss += loss;
        interval_steps += 1;
        let done = step + 1;
        if done % cfg.log_every == 0 || done == cfg.steps {
            let mean = interval_loss / interval_steps as f64;
            info!("step {done} loss {mean:.4}");
            emit(LogRecord::Train { step: done, loss: mean }, &mut log);
            interval_loss = 0.0;
            interval_steps = 0;
        }
        let eval_due = !dev.is_empty() && ((cfg.eval_every > 0 && done % cfg.eval_every == 0) || done == cfg.steps);
        if eval_due {
            let (dev_loss, _, report) = evaluate_model(&model, dev, vocab, cfg.max_len)?;
            let improved = best.as_ref().is_none_or(|b| report.macro_f1 > b.1);
            if improved {
                best = Some((done, report.macro_f1, model.clone()));
            }
            last_f1 = Some(report.macro_f1);
            info!(
                "step {done} dev loss {dev_loss:.4} accuracy {:.2} macro-F1 {:.2}",
                report.accuracy, report.macro_f1
            );
            emit(
                LogRecord::Eval {
                    step: done,
                    dev_loss,
                    dev_accuracy: report.accuracy,
                    dev_macro_f1: report.macro_f1,
                    best: improved,
                },
                &mut log,
            );
        }
    }

    emit(
        LogRecord::Final {
            step: cfg.steps,
            final_dev_macro_f1: last_f1,
            best_step: best.as_ref().map(|b| b.0),
            best_dev_macro_f1: best.as_ref().map(|b| b.1),
        },
        &mut log,
    );
    Ok(TrainOutcome {
        final_model: model,
        best: best.map(|(s, _, m)| (s, m)),
        log,
    })
}
