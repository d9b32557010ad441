use crate::error::{Error, Result};
use crate::labelspace::{AnnotationKind, AnnotationVector, Dim, LabelSpace};

/// Three per-dimension vectors over the labels, each in that dimension's sorted order.
///
/// For `Single` each vector is a probability distribution; for `Multi` the
/// entries are independent per-label membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionTriple {
    dists: [Vec<f64>; 3],
    kind: AnnotationKind,
}

const SIMPLEX_TOL: f64 = 1e-6;

impl DistributionTriple {
    pub fn new(v: Vec<f64>, a: Vec<f64>, d: Vec<f64>, kind: AnnotationKind) -> Result<Self> {
        let len = v.len();
        for x in [&a, &d] {
            if x.len() != len {
                return Err(Error::LengthMismatch {
                    expected: len,
                    actual: x.len(),
                });
            }
        }
        for x in [&v, &a, &d] {
            if x.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidArgument(
                    "distribution entries must be finite and non-negative".into(),
                ));
            }
            match kind {
                AnnotationKind::Single => {
                    let sum: f64 = x.iter().sum();
                    if (sum - 1.0).abs() > SIMPLEX_TOL {
                        return Err(Error::InvalidArgument(format!(
                            "single-label distribution sums to {sum}"
                        )));
                    }
                }
                AnnotationKind::Multi => {
                    if x.iter().any(|p| *p > 1.0) {
                        return Err(Error::InvalidArgument(
                            "multi-label probabilities must be at most 1".into(),
                        ));
                    }
                }
            }
        }
        Ok(Self {
            dists: [v, a, d],
            kind,
        })
    }

    /// Builds the sorted target triple for an annotation.
    pub fn target(space: &LabelSpace, ann: &AnnotationVector) -> Result<Self> {
        let [v, a, d] = Dim::ALL.map(|dim| space.sort_annotation(ann, dim));
        Ok(Self {
            dists: [v?, a?, d?],
            kind: ann.kind(),
        })
    }

    pub(crate) fn from_parts_unchecked(dists: [Vec<f64>; 3], kind: AnnotationKind) -> Self {
        Self { dists, kind }
    }

    pub fn get(&self, dim: Dim) -> &[f64] {
        &self.dists[dim.index()]
    }

    pub fn kind(&self) -> AnnotationKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.dists[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.dists[0].is_empty()
    }
}
