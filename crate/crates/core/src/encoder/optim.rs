use serde::{Deserialize, Serialize};

use super::model::EncoderParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(crate::Error::InvalidArgument(format!(
                "optimizer must be 'sgd' or 'adam', got '{other}'"
            ))),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-8;

/// Plain SGD or Adam over the tensors of [`EncoderParams`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: &EncoderParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        let zeros = || shapes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        Self {
            kind,
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update. Tensors whose `trainable` flag is false are left
    /// untouched, moment estimates included.
    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams, trainable: &[bool]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let grads = grads.tensors();
        for (i, p) in params.tensors_mut().into_iter().enumerate() {
            if !trainable.get(i).copied().unwrap_or(true) {
                continue;
            }
            let g = grads[i];
            match self.kind {
                OptimizerKind::Sgd => {
                    for (x, gi) in p.iter_mut().zip(g) {
                        *x -= self.lr * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let m = &mut self.m[i];
                    let v = &mut self.v[i];
                    for j in 0..p.len() {
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                        let mhat = m[j] / bc1;
                        let vhat = v[j] / bc2;
                        p[j] -= self.lr * mhat / (vhat.sqrt() + EPSILON);
                    }
                }
            }
        }
    }
}
