//! Mean-pooled word embeddings with one affine head per VAD dimension.
//!
//! Each head emits `C` logits in that dimension's sorted label order, turned
//! into a softmax distribution (single-label) or independent sigmoids
//! (multi-label). The optional regression head maps the concatenated three
//! distributions to three rectified scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::DistributionTriple;
use crate::error::{Error, Result};
use crate::labelspace::AnnotationKind;

pub const INIT_RANGE: f64 = 0.05;
/// Regression head biases start at the middle of the unit target range so the
/// rectifier begins in its active region.
pub const REG_BIAS_INIT: f64 = 0.5;

/// `y = W x + b`, `W` stored row-major as `rows x cols`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub rows: usize,
    pub cols: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Affine {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn random(rows: usize, cols: usize, bias: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            rows,
            cols,
            weight: (0..rows * cols)
                .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
                .collect(),
            bias: vec![bias; rows],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.weight
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns d/dx.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Affine) -> Vec<f64> {
        let mut dx = vec![0.0; self.cols];
        for (r, &g) in dy.iter().enumerate() {
            let row = &self.weight[r * self.cols..(r + 1) * self.cols];
            let grow = &mut grad.weight[r * self.cols..(r + 1) * self.cols];
            for c in 0..self.cols {
                grow[c] += g * x[c];
                dx[c] += g * row[c];
            }
            grad.bias[r] += g;
        }
        dx
    }
}

/// Trainable parameters of the text encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_labels: usize,
    /// `vocab_size x embed_dim`, row-major.
    pub embeddings: Vec<f64>,
    /// Heads for V, A, D in that order.
    pub heads: [Affine; 3],
    pub reg_head: Option<Affine>,
    pub seed: u64,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    ids: Vec<usize>,
    pooled: Vec<f64>,
    probs: [Vec<f64>; 3],
    kind: AnnotationKind,
}

impl ForwardCache {
    pub fn distributions(&self) -> DistributionTriple {
        DistributionTriple::from_parts_unchecked(self.probs.clone(), self.kind)
    }

    pub fn concatenated(&self) -> Vec<f64> {
        self.probs.concat()
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl EncoderParams {
    /// Embeddings and head weights uniform in `[-0.05, 0.05]`, biases zero.
    pub fn init(vocab_size: usize, embed_dim: usize, num_labels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = (0..vocab_size * embed_dim)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        let heads = [0, 1, 2].map(|_| Affine::random(num_labels, embed_dim, 0.0, &mut rng));
        Self {
            vocab_size,
            embed_dim,
            num_labels,
            embeddings,
            heads,
            reg_head: None,
            seed,
        }
    }

    /// Attaches a freshly initialized regression head if none is present.
    pub fn attach_reg_head(&mut self, seed: u64) {
        if self.reg_head.is_none() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5245_4748_4541_4400);
            self.reg_head = Some(Affine::random(
                3,
                3 * self.num_labels,
                REG_BIAS_INIT,
                &mut rng,
            ));
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let ok = self.embeddings.len() == self.vocab_size * self.embed_dim
            && self.heads.iter().all(|h| {
                h.rows == self.num_labels
                    && h.cols == self.embed_dim
                    && h.weight.len() == h.rows * h.cols
                    && h.bias.len() == h.rows
            })
            && self.reg_head.as_ref().is_none_or(|r| {
                r.rows == 3
                    && r.cols == 3 * self.num_labels
                    && r.weight.len() == r.rows * r.cols
                    && r.bias.len() == 3
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Checkpoint(
                "parameter shapes are inconsistent".into(),
            ))
        }
    }

    fn pool(&self, ids: &[usize]) -> Result<Vec<f64>> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        let d = self.embed_dim;
        let mut pooled = vec![0.0; d];
        for &id in ids {
            if id >= self.vocab_size {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
            for (p, e) in pooled
                .iter_mut()
                .zip(&self.embeddings[id * d..(id + 1) * d])
            {
                *p += e;
            }
        }
        let n = ids.len() as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        Ok(pooled)
    }

    pub fn forward_cached(&self, ids: &[usize], kind: AnnotationKind) -> Result<ForwardCache> {
        let pooled = self.pool(ids)?;
        let probs = self.heads.each_ref().map(|head| {
            let z = head.apply(&pooled);
            match kind {
                AnnotationKind::Single => softmax(&z),
                AnnotationKind::Multi => z.into_iter().map(sigmoid).collect(),
            }
        });
        Ok(ForwardCache {
            ids: ids.to_vec(),
            pooled,
            probs,
            kind,
        })
    }

    /// Per-dimension distributions for a token id sequence.
    pub fn forward(&self, ids: &[usize], kind: AnnotationKind) -> Result<DistributionTriple> {
        Ok(self.forward_cached(ids, kind)?.distributions())
    }

    /// Pre-activation and rectified output of the regression head.
    pub fn regress_cached(&self, cache: &ForwardCache) -> Result<(Vec<f64>, [f64; 3])> {
        let head = self
            .reg_head
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("regression head not attached".into()))?;
        let z = head.apply(&cache.concatenated());
        Ok((z.clone(), [z[0].max(0.0), z[1].max(0.0), z[2].max(0.0)]))
    }

    pub fn regress(&self, ids: &[usize], kind: AnnotationKind) -> Result<[f64; 3]> {
        let cache = self.forward_cached(ids, kind)?;
        Ok(self.regress_cached(&cache)?.1)
    }

    /// Backpropagates d(loss)/d(probabilities) per dimension into `grads`.
    pub fn backward(&self, cache: &ForwardCache, dprobs: [&[f64]; 3], grads: &mut EncoderParams) {
        let d = self.embed_dim;
        let mut dpooled = vec![0.0; d];
        for k in 0..3 {
            let p = &cache.probs[k];
            let g = dprobs[k];
            let dz: Vec<f64> = match cache.kind {
                AnnotationKind::Single => {
                    let dot: f64 = g.iter().zip(p).map(|(gi, pi)| gi * pi).sum();
                    p.iter().zip(g).map(|(pi, gi)| pi * (gi - dot)).collect()
                }
                AnnotationKind::Multi => p
                    .iter()
                    .zip(g)
                    .map(|(pi, gi)| gi * pi * (1.0 - pi))
                    .collect(),
            };
            let dx = self.heads[k].backward(&cache.pooled, &dz, &mut grads.heads[k]);
            for (a, b) in dpooled.iter_mut().zip(dx) {
                *a += b;
            }
        }
        let n = cache.ids.len() as f64;
        for &id in &cache.ids {
            for (g, dp) in grads.embeddings[id * d..(id + 1) * d]
                .iter_mut()
                .zip(&dpooled)
            {
                *g += dp / n;
            }
        }
    }

    /// Backpropagates d(loss)/d(regression output) through the rectifier,
    /// the regression head and the encoder.
    pub fn backward_regression(
        &self,
        cache: &ForwardCache,
        pre_activation: &[f64],
        dout: &[f64; 3],
        grads: &mut EncoderParams,
    ) {
        let head = self.reg_head.as_ref().expect("regression head attached");
        let dz: Vec<f64> = pre_activation
            .iter()
            .zip(dout)
            .map(|(z, g)| if *z > 0.0 { *g } else { 0.0 })
            .collect();
        let grad_head = grads
            .reg_head
            .as_mut()
            .expect("gradient has regression head");
        let dx = head.backward(&cache.concatenated(), &dz, grad_head);
        let c = self.num_labels;
        self.backward(cache, [&dx[..c], &dx[c..2 * c], &dx[2 * c..]], grads);
    }

    /// Zero-valued parameters of identical shape, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            num_labels: self.num_labels,
            embeddings: vec![0.0; self.embeddings.len()],
            heads: self.heads.each_ref().map(|h| Affine::zeros(h.rows, h.cols)),
            reg_head: self
                .reg_head
                .as_ref()
                .map(|h| Affine::zeros(h.rows, h.cols)),
            seed: self.seed,
        }
    }

    /// Parameter tensors in a fixed order: embeddings, then V/A/D head
    /// weight and bias, then the regression head weight and bias.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.embeddings];
        for h in &self.heads {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        if let Some(h) = &self.reg_head {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.embeddings];
        for h in &mut self.heads {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        if let Some(h) = &mut self.reg_head {
            out.push(&mut h.weight);
            out.push(&mut h.bias);
        }
        out
    }

    /// Number of tensors belonging to the encoder proper (embeddings and heads).
    pub const ENCODER_TENSORS: usize = 7;

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// FNV-1a over the bit patterns of the embeddings and distribution heads.
    pub fn encoder_checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tensors()[..Self::ENCODER_TENSORS] {
            for x in t.iter() {
                for byte in x.to_bits().to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        hash
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_heads(mut p: EncoderParams) -> EncoderParams {
        for h in &mut p.heads {
            h.weight.iter_mut().for_each(|w| *w = 0.0);
        }
        p
    }

    #[test]
    fn zero_heads_give_uniform_or_half() {
        let p = zero_heads(EncoderParams::init(10, 4, 5, 1));
        let single = p.forward(&[2, 3], AnnotationKind::Single).unwrap();
        let multi = p.forward(&[2, 3], AnnotationKind::Multi).unwrap();
        for dim in crate::Dim::ALL {
            assert!(single.get(dim).iter().all(|&x| (x - 0.2).abs() < 1e-15));
            assert!(multi.get(dim).iter().all(|&x| x == 0.5));
        }
    }

    #[test]
    fn single_outputs_on_simplex() {
        let p = EncoderParams::init(10, 4, 5, 9);
        let out = p.forward(&[0, 4, 4, 9], AnnotationKind::Single).unwrap();
        for dim in crate::Dim::ALL {
            let s: f64 = out.get(dim).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let out = p.forward(&[0, 4, 4, 9], AnnotationKind::Multi).unwrap();
        for dim in crate::Dim::ALL {
            assert!(out.get(dim).iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn forward_rejects_bad_ids() {
        let p = EncoderParams::init(3, 2, 2, 0);
        assert!(p.forward(&[], AnnotationKind::Single).is_err());
        assert!(p.forward(&[3], AnnotationKind::Single).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = EncoderParams::init(20, 8, 4, 7);
        assert_eq!(a, EncoderParams::init(20, 8, 4, 7));
        assert_ne!(a, EncoderParams::init(20, 8, 4, 8));
        for t in a.tensors() {
            assert!(t.iter().all(|x| x.abs() <= INIT_RANGE));
        }
        assert!(a.heads.iter().all(|h| h.bias.iter().all(|&b| b == 0.0)));
        assert!(a.reg_head.is_none());
    }

    #[test]
    fn regression_output_is_rectified() {
        let mut p = EncoderParams::init(6, 3, 2, 3);
        p.attach_reg_head(3);
        p.reg_head.as_mut().unwrap().bias = vec![-10.0, 0.5, 10.0];
        let out = p.regress(&[1, 2], AnnotationKind::Single).unwrap();
        assert_eq!(out[0], 0.0);
        assert!(out.iter().all(|&x| x >= 0.0));
    }
}
