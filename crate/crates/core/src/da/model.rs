use std::collections::BTreeMap;

use rand::{Rng, RngCore};

use super::vocab::{Vocab, NULL_INDEX};
use super::DaConfig;
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, softmax_rows_backward, FeedForward, FfCache, Matrix, Parameters, Real};

/// A sentence pair as fixed-length index sequences plus real-token masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedPair {
    pub a: Vec<u32>,
    pub b: Vec<u32>,
    pub mask_a: Vec<bool>,
    pub mask_b: Vec<bool>,
}

impl EncodedPair {
    /// Lowercased lookup, unknown words to UNK, right-truncated and
    /// right-padded with NULL to exactly `max_len`.
    pub fn encode(arg1: &[String], arg2: &[String], vocab: &Vocab, max_len: usize) -> Self {
        let side = |tokens: &[String]| {
            let mut ids: Vec<u32> = tokens.iter().take(max_len).map(|t| vocab.get(t)).collect();
            let mut mask = vec![true; ids.len()];
            ids.resize(max_len, NULL_INDEX);
            mask.resize(max_len, false);
            (ids, mask)
        };
        let (a, mask_a) = side(arg1);
        let (b, mask_b) = side(arg2);
        Self { a, b, mask_a, mask_b }
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn real_a(&self) -> Vec<u32> {
        real(&self.a, &self.mask_a)
    }

    pub fn real_b(&self) -> Vec<u32> {
        real(&self.b, &self.mask_b)
    }
}

fn real(ids: &[u32], mask: &[bool]) -> Vec<u32> {
    ids.iter().zip(mask).filter(|(_, &m)| m).map(|(&i, _)| i).collect()
}

fn positions(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
}

/// Attention over padded positions. `ab` rows (over real `i`) sum to one
/// across real `j`; `ba` columns (over real `j`) sum to one across real `i`.
/// Entries touching padding are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention<T> {
    pub scores: Matrix<T>,
    pub ab: Matrix<T>,
    pub ba: Matrix<T>,
}

/// Embedding table and the three networks: F (attend), G (compare) and
/// H (aggregate).
#[derive(Clone, Debug, PartialEq)]
pub struct DaModel<T> {
    pub embeddings: Matrix<T>,
    pub f: FeedForward<T>,
    pub g: FeedForward<T>,
    pub h: FeedForward<T>,
}

fn widths(input: usize, hidden: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, layers));
    w.push(output);
    w
}

/// Values kept from [`DaModel::forward`] for [`DaModel::backward`].
#[derive(Clone, Debug)]
pub struct PairCache<T> {
    a_ids: Vec<u32>,
    b_ids: Vec<u32>,
    a: Matrix<T>,
    b: Matrix<T>,
    fa: Matrix<T>,
    fb: Matrix<T>,
    fa_cache: FfCache<T>,
    fb_cache: FfCache<T>,
    wab: Matrix<T>,
    wba: Matrix<T>,
    g1_cache: FfCache<T>,
    g2_cache: FfCache<T>,
    h_cache: FfCache<T>,
}

impl<T: Real> DaModel<T> {
    /// Random embeddings (unit-variance uniform, NULL row zero), Glorot
    /// networks, and a zero output layer in H so that the untrained model
    /// predicts the uniform distribution.
    pub fn new(vocab_size: usize, num_labels: usize, cfg: &DaConfig, rng: &mut dyn RngCore) -> Result<Self> {
        cfg.validate()?;
        if vocab_size < 2 || num_labels < 2 {
            return Err(Error::InvalidConfig(
                "need at least two vocabulary entries and two labels".into(),
            ));
        }
        let (d, hd, l) = (cfg.embedding_dim, cfg.hidden_dim, cfg.hidden_layers);
        let lim = 3f64.sqrt();
        let mut embeddings = Matrix::zeros(vocab_size, d);
        for v in embeddings.as_mut_slice()[d..].iter_mut() {
            *v = T::of(rng.random_range(-lim..lim));
        }
        let f = FeedForward::new(&widths(d, hd, l, hd), cfg.dropout_f, cfg.layer_norm, rng)?;
        let g = FeedForward::new(&widths(2 * d, hd, l, hd), cfg.dropout_g, cfg.layer_norm, rng)?;
        let mut h = FeedForward::new(&widths(2 * hd, hd, l, num_labels), cfg.dropout_h, cfg.layer_norm, rng)?;
        let out = h.layers.last_mut().expect("at least one layer");
        out.weight.fill(T::zero());
        out.bias.fill(T::zero());
        Ok(Self { embeddings, f, g, h })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embeddings: Matrix::zeros(self.embeddings.rows(), self.embeddings.cols()),
            f: self.f.zeros_like(),
            g: self.g.zeros_like(),
            h: self.h.zeros_like(),
        }
    }

    pub fn cast<U: Real>(&self) -> DaModel<U> {
        let ff = |n: &FeedForward<T>| FeedForward {
            layers: n
                .layers
                .iter()
                .map(|l| crate::nn::Dense {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
            norms: n
                .norms
                .iter()
                .map(|p| crate::nn::LayerNormParams {
                    gain: p.gain.cast(),
                    shift: p.shift.cast(),
                })
                .collect(),
            dropout: n.dropout,
        };
        DaModel {
            embeddings: self.embeddings.cast(),
            f: ff(&self.f),
            g: ff(&self.g),
            h: ff(&self.h),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_labels(&self) -> usize {
        self.h.output_dim()
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        match ids.iter().find(|&&i| i as usize >= self.vocab_size()) {
            Some(&i) => Err(Error::dims(
                "embedding lookup",
                format!("index < {}", self.vocab_size()),
                i,
            )),
            None => Ok(()),
        }
    }

    fn embed(&self, ids: &[u32]) -> Matrix<T> {
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        self.embeddings.gather_rows(&idx)
    }

    /// Logits for one pair given only its real (unpadded) token ids.
    /// Dropout is applied in every network when `rng` is given.
    pub fn forward(
        &self,
        a_ids: &[u32],
        b_ids: &[u32],
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<(Vec<T>, PairCache<T>)> {
        self.check_ids(a_ids)?;
        self.check_ids(b_ids)?;
        let a = self.embed(a_ids);
        let b = self.embed(b_ids);

        let (fa, fa_cache) = self.f.forward(&a, reborrow(&mut rng))?;
        let (fb, fb_cache) = self.f.forward(&b, reborrow(&mut rng))?;
        let scores = fa.matmul_bt(&fb);
        let wab = softmax_rows(&scores);
        let wba = softmax_rows(&scores.transpose());

        let beta = wab.matmul(&b);
        let alpha = wba.matmul(&a);
        let (v1, g1_cache) = self.g.forward(&a.hcat(&beta), reborrow(&mut rng))?;
        let (v2, g2_cache) = self.g.forward(&b.hcat(&alpha), reborrow(&mut rng))?;

        let x = v1.col_sums().hcat(&v2.col_sums());
        let (y, h_cache) = self.h.forward(&x, reborrow(&mut rng))?;
        let cache = PairCache {
            a_ids: a_ids.to_vec(),
            b_ids: b_ids.to_vec(),
            a,
            b,
            fa,
            fb,
            fa_cache,
            fb_cache,
            wab,
            wba,
            g1_cache,
            g2_cache,
            h_cache,
        };
        Ok((y.into_vec(), cache))
    }

    /// Accumulates the gradient of `Σ dlogits · logits` into `grads`.
    pub fn backward(&self, cache: &PairCache<T>, dlogits: &[T], grads: &mut DaGrads<T>) -> Result<()> {
        if dlogits.len() != self.num_labels() {
            return Err(Error::dims("da_backward", self.num_labels(), dlogits.len()));
        }
        if cache.a.cols() != self.embedding_dim() || grads.f.dims() != self.f.dims() {
            return Err(Error::StaleCache(
                "cache or gradient from a model of different shape".into(),
            ));
        }
        let d = self.embedding_dim();
        let dy = Matrix::row_vector(dlogits.to_vec());
        let dx = self.h.backward_into(&cache.h_cache, &dy, &mut grads.h)?;
        let (ds1, ds2) = dx.split_cols(self.g.output_dim());
        let dv1 = broadcast(&ds1, cache.a.rows());
        let dv2 = broadcast(&ds2, cache.b.rows());

        let din1 = self.g.backward_into(&cache.g1_cache, &dv1, &mut grads.g)?;
        let din2 = self.g.backward_into(&cache.g2_cache, &dv2, &mut grads.g)?;
        let (mut da, dbeta) = din1.split_cols(d);
        let (mut db, dalpha) = din2.split_cols(d);

        let dwab = dbeta.matmul_bt(&cache.b);
        db.add_assign(&cache.wab.matmul_at(&dbeta));
        let dwba = dalpha.matmul_bt(&cache.a);
        da.add_assign(&cache.wba.matmul_at(&dalpha));

        let mut dscores = softmax_rows_backward(&cache.wab, &dwab);
        dscores.add_assign(&softmax_rows_backward(&cache.wba, &dwba).transpose());
        let dfa = dscores.matmul(&cache.fb);
        let dfb = dscores.matmul_at(&cache.fa);
        da.add_assign(&self.f.backward_into(&cache.fa_cache, &dfa, &mut grads.f)?);
        db.add_assign(&self.f.backward_into(&cache.fb_cache, &dfb, &mut grads.f)?);

        for (ids, dm) in [(&cache.a_ids, &da), (&cache.b_ids, &db)] {
            for (r, &id) in ids.iter().enumerate() {
                let row = grads.embeddings.entry(id).or_insert_with(|| vec![T::zero(); d]);
                for (acc, &v) in row.iter_mut().zip(dm.row(r)) {
                    *acc += v;
                }
            }
        }
        Ok(())
    }

    /// Inference-mode logits.
    pub fn logits(&self, enc: &EncodedPair) -> Result<Vec<T>> {
        Ok(self.forward(&enc.real_a(), &enc.real_b(), None)?.0)
    }

    fn check_encoded(&self, enc: &EncodedPair) -> Result<()> {
        let l = enc.a.len();
        if enc.b.len() != l || enc.mask_a.len() != l || enc.mask_b.len() != l {
            return Err(Error::dims(
                "encoded pair",
                l,
                format!("{}/{}/{}", enc.b.len(), enc.mask_a.len(), enc.mask_b.len()),
            ));
        }
        Ok(())
    }

    /// Attention scores and both soft alignments on the padded `L×L` grid.
    pub fn attend(&self, enc: &EncodedPair) -> Result<Attention<T>> {
        self.check_encoded(enc)?;
        let (pa, pb) = (positions(&enc.mask_a), positions(&enc.mask_b));
        let (a_ids, b_ids) = (enc.real_a(), enc.real_b());
        self.check_ids(&a_ids)?;
        self.check_ids(&b_ids)?;
        let (fa, _) = self.f.forward(&self.embed(&a_ids), None)?;
        let (fb, _) = self.f.forward(&self.embed(&b_ids), None)?;
        let s = fa.matmul_bt(&fb);
        let ab = softmax_rows(&s);
        let ba = softmax_rows(&s.transpose());
        let l = enc.len();
        let mut att = Attention {
            scores: Matrix::zeros(l, l),
            ab: Matrix::zeros(l, l),
            ba: Matrix::zeros(l, l),
        };
        for (i, &pi) in pa.iter().enumerate() {
            for (j, &pj) in pb.iter().enumerate() {
                att.scores.set(pi, pj, s.get(i, j));
                att.ab.set(pi, pj, ab.get(i, j));
                att.ba.set(pi, pj, ba.get(j, i));
            }
        }
        Ok(att)
    }

    /// Aligned sub-phrases: `β_i = Σ_j ab[i][j]·emb(b_j)` and
    /// `α_j = Σ_i ba[i][j]·emb(a_i)`, both `L×d`.
    pub fn aligned(&self, enc: &EncodedPair, att: &Attention<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        self.check_encoded(enc)?;
        let l = enc.len();
        if att.ab.shape() != (l, l) || att.ba.shape() != (l, l) {
            return Err(Error::dims(
                "compare",
                format!("{l}x{l}"),
                format!("{:?}", att.ab.shape()),
            ));
        }
        self.check_ids(&enc.a)?;
        self.check_ids(&enc.b)?;
        let a = self.embed(&enc.a);
        let b = self.embed(&enc.b);
        Ok((att.ab.matmul(&b), att.ba.matmul_at(&a)))
    }

    /// Comparison vectors for every position; padded rows are zero.
    pub fn compare(&self, enc: &EncodedPair, att: &Attention<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        let (beta, alpha) = self.aligned(enc, att)?;
        let a = self.embed(&enc.a);
        let b = self.embed(&enc.b);
        let (mut v1, _) = self.g.forward(&a.hcat(&beta), None)?;
        let (mut v2, _) = self.g.forward(&b.hcat(&alpha), None)?;
        for (v, mask) in [(&mut v1, &enc.mask_a), (&mut v2, &enc.mask_b)] {
            for (i, &m) in mask.iter().enumerate() {
                if !m {
                    v.row_mut(i).fill(T::zero());
                }
            }
        }
        Ok((v1, v2))
    }

    /// Sums comparison vectors over real tokens and applies H.
    pub fn aggregate(&self, v1: &Matrix<T>, v2: &Matrix<T>, mask_a: &[bool], mask_b: &[bool]) -> Result<Vec<T>> {
        let hd = self.g.output_dim();
        for (v, m) in [(v1, mask_a), (v2, mask_b)] {
            if v.cols() != hd || v.rows() != m.len() {
                return Err(Error::dims(
                    "aggregate",
                    format!("{}x{hd}", m.len()),
                    format!("{:?}", v.shape()),
                ));
            }
        }
        let masked_sum = |v: &Matrix<T>, mask: &[bool]| {
            let rows: Vec<usize> = positions(mask);
            v.gather_rows(&rows).col_sums()
        };
        let x = masked_sum(v1, mask_a).hcat(&masked_sum(v2, mask_b));
        Ok(self.h.forward(&x, None)?.0.into_vec())
    }
}

fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

fn broadcast<T: Real>(row: &Matrix<T>, n: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(n, row.cols());
    for i in 0..n {
        out.row_mut(i).copy_from_slice(row.as_slice());
    }
    out
}

impl<T: Real> Parameters<T> for DaModel<T> {
    fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = vec![("embeddings".to_string(), &self.embeddings)];
        for (p, net) in [("F", &self.f), ("G", &self.g), ("H", &self.h)] {
            out.extend(net.tensors().into_iter().map(|(n, m)| (format!("{p}.{n}"), m)));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = vec![("embeddings".to_string(), &mut self.embeddings)];
        for (p, net) in [("F", &mut self.f), ("G", &mut self.g), ("H", &mut self.h)] {
            out.extend(net.tensors_mut().into_iter().map(|(n, m)| (format!("{p}.{n}"), m)));
        }
        out
    }
}

/// Gradient accumulator with sparse embedding rows.
#[derive(Clone, Debug)]
pub struct DaGrads<T> {
    pub embeddings: BTreeMap<u32, Vec<T>>,
    pub f: FeedForward<T>,
    pub g: FeedForward<T>,
    pub h: FeedForward<T>,
}

impl<T: Real> DaGrads<T> {
    pub fn zeros(model: &DaModel<T>) -> Self {
        Self {
            embeddings: BTreeMap::new(),
            f: model.f.zeros_like(),
            g: model.g.zeros_like(),
            h: model.h.zeros_like(),
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (id, row) in &other.embeddings {
            match self.embeddings.get_mut(id) {
                Some(acc) => acc.iter_mut().zip(row).for_each(|(a, &b)| *a += b),
                None => {
                    self.embeddings.insert(*id, row.clone());
                }
            }
        }
        self.f.add_assign(&other.f);
        self.g.add_assign(&other.g);
        self.h.add_assign(&other.h);
    }

    /// Writes into a dense gradient model of the same shape. Embedding rows
    /// not present here are left untouched; callers clear them with
    /// [`clear_dense`](Self::clear_dense).
    pub fn write_dense(&self, dense: &mut DaModel<T>) {
        for (&id, row) in &self.embeddings {
            dense.embeddings.row_mut(id as usize).copy_from_slice(row);
        }
        dense.f.clone_from(&self.f);
        dense.g.clone_from(&self.g);
        dense.h.clone_from(&self.h);
    }

    pub fn clear_dense(&self, dense: &mut DaModel<T>) {
        for &id in self.embeddings.keys() {
            dense.embeddings.row_mut(id as usize).fill(T::zero());
        }
    }

    pub fn to_dense(&self, model: &DaModel<T>) -> DaModel<T> {
        let mut dense = model.zeros_like();
        self.write_dense(&mut dense);
        dense
    }
}
