//! Decoding predicted distribution triples into VAD scores and labels.

use crate::distribution::DistributionTriple;
use crate::error::{Error, Result};
use crate::labelspace::{AnnotationKind, Dim, LabelSpace};
use crate::lexicon::VadPoint;

/// Default multi-label cutoff on the joint probability, `0.5^(1/3)`.
pub fn default_threshold() -> f64 {
    0.5f64.powf(1.0 / 3.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub vad: VadPoint,
    pub label_single: Option<String>,
    /// Selected labels with their joint probability, in canonical order.
    pub labels_multi: Option<Vec<(String, f64)>>,
    /// Per-label joint probability in canonical order.
    pub joint: Vec<f64>,
}

impl Prediction {
    pub fn labels(&self) -> Vec<&str> {
        match (&self.label_single, &self.labels_multi) {
            (Some(l), _) => vec![l.as_str()],
            (None, Some(ls)) => ls.iter().map(|(l, _)| l.as_str()).collect(),
            (None, None) => Vec::new(),
        }
    }
}

/// Expectation of each dimension's distribution over the sorted label values.
///
/// Multi-label vectors are mass-normalized first unless `raw` is set.
pub fn predict_vad(triple: &DistributionTriple, space: &LabelSpace, raw: bool) -> Result<VadPoint> {
    check(triple, space)?;
    let [v, a, d] = Dim::ALL.map(|dim| {
        let p = triple.get(dim);
        let values = space.sorted_values(dim);
        let weighted: f64 = p.iter().zip(values).map(|(p, v)| p * v).sum();
        if triple.kind() == AnnotationKind::Multi && !raw {
            let mass: f64 = p.iter().sum();
            if !(mass > 0.0) {
                return Err(Error::ZeroMass("prediction"));
            }
            Ok(weighted / mass)
        } else {
            Ok(weighted)
        }
    });
    Ok(VadPoint {
        v: v?,
        a: a?,
        d: d?,
    })
}

/// `joint[c]` is the product of the three per-dimension probabilities at label `c`'s positions.
pub fn joint_probabilities(triple: &DistributionTriple, space: &LabelSpace) -> Result<Vec<f64>> {
    check(triple, space)?;
    let [v, a, d] = Dim::ALL.map(|dim| space.unsort_probabilities(triple.get(dim), dim));
    let (v, a, d) = (v?, a?, d?);
    Ok((0..space.len()).map(|c| v[c] * a[c] * d[c]).collect())
}

/// Index of the largest entry; the earliest wins ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn predict_label_single(triple: &DistributionTriple, space: &LabelSpace) -> Result<String> {
    let joint = joint_probabilities(triple, space)?;
    Ok(space.names()[argmax(&joint)].clone())
}

/// Labels whose joint probability exceeds `threshold`, in canonical order.
pub fn predict_labels_multi(
    triple: &DistributionTriple,
    space: &LabelSpace,
    threshold: f64,
) -> Result<Vec<(String, f64)>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must be in (0, 1), got {threshold}"
        )));
    }
    let joint = joint_probabilities(triple, space)?;
    Ok(joint
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(c, &p)| (space.names()[c].clone(), p))
        .collect())
}

/// Full decoding of one triple.
pub fn predict(
    triple: &DistributionTriple,
    space: &LabelSpace,
    threshold: f64,
    raw_expectation: bool,
) -> Result<Prediction> {
    let vad = predict_vad(triple, space, raw_expectation)?;
    let joint = joint_probabilities(triple, space)?;
    let (label_single, labels_multi) = match triple.kind() {
        AnnotationKind::Single => (Some(space.names()[argmax(&joint)].clone()), None),
        AnnotationKind::Multi => (None, Some(predict_labels_multi(triple, space, threshold)?)),
    };
    Ok(Prediction {
        vad,
        label_single,
        labels_multi,
        joint,
    })
}

fn check(triple: &DistributionTriple, space: &LabelSpace) -> Result<()> {
    if triple.len() != space.len() {
        return Err(Error::LengthMismatch {
            expected: space.len(),
            actual: triple.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::VadLexicon;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space() -> LabelSpace {
        let lex = VadLexicon::from_entries([
            (
                "joy",
                VadPoint {
                    v: 0.980,
                    a: 0.824,
                    d: 0.794,
                },
            ),
            (
                "sad",
                VadPoint {
                    v: 0.225,
                    a: 0.333,
                    d: 0.149,
                },
            ),
            (
                "happy",
                VadPoint {
                    v: 1.000,
                    a: 0.735,
                    d: 0.772,
                },
            ),
            (
                "anger",
                VadPoint {
                    v: 0.167,
                    a: 0.865,
                    d: 0.657,
                },
            ),
        ])
        .unwrap();
        LabelSpace::build(&["joy", "sad", "happy", "anger"], &lex).unwrap()
    }

    fn point_mass(space: &LabelSpace, c: usize, kind: AnnotationKind) -> DistributionTriple {
        let [v, a, d] = Dim::ALL.map(|dim| {
            let mut x = vec![0.0; space.len()];
            x[space.rank(dim, c)] = 1.0;
            x
        });
        DistributionTriple::new(v, a, d, kind).unwrap()
    }

    #[test]
    fn expectation_examples() {
        let s = space();
        let happy = point_mass(&s, 2, AnnotationKind::Single);
        assert_eq!(predict_vad(&happy, &s, false).unwrap().v, 1.0);
        let u = vec![0.25; 4];
        let uniform =
            DistributionTriple::new(u.clone(), u.clone(), u, AnnotationKind::Single).unwrap();
        assert!((predict_vad(&uniform, &s, false).unwrap().v - 0.593).abs() < 1e-12);
        // valence sorted order: anger, sad, joy, happy
        let mix = vec![0.0, 0.5, 0.5, 0.0];
        let t =
            DistributionTriple::new(mix.clone(), mix.clone(), mix, AnnotationKind::Single).unwrap();
        assert!((predict_vad(&t, &s, false).unwrap().v - 0.6025).abs() < 1e-12);
    }

    #[test]
    fn multi_expectation_normalizes_unless_raw() {
        let s = space();
        let p = vec![0.9, 0.9, 0.0, 0.0];
        let t = DistributionTriple::new(p.clone(), p.clone(), p, AnnotationKind::Multi).unwrap();
        let norm = predict_vad(&t, &s, false).unwrap();
        let raw = predict_vad(&t, &s, true).unwrap();
        assert!((norm.v - (0.167 + 0.225) / 2.0).abs() < 1e-12);
        assert!((raw.v - 0.9 * (0.167 + 0.225)).abs() < 1e-12);
        let z = vec![0.0; 4];
        let zero = DistributionTriple::new(z.clone(), z.clone(), z, AnnotationKind::Multi).unwrap();
        assert!(matches!(
            predict_vad(&zero, &s, false),
            Err(Error::ZeroMass(_))
        ));
    }

    #[test]
    fn joint_examples() {
        let s = space();
        let joy = point_mass(&s, 0, AnnotationKind::Single);
        assert_eq!(
            joint_probabilities(&joy, &s).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
        assert_eq!(predict_label_single(&joy, &s).unwrap(), "joy");
        let u = vec![0.25; 4];
        let uniform =
            DistributionTriple::new(u.clone(), u.clone(), u, AnnotationKind::Single).unwrap();
        assert!(joint_probabilities(&uniform, &s)
            .unwrap()
            .iter()
            .all(|&j| j == 0.015625));
        // exact tie everywhere resolves to the first canonical label
        assert_eq!(predict_label_single(&uniform, &s).unwrap(), "joy");
    }

    #[test]
    fn joint_matches_direct_lookup() {
        let s = space();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let [v, a, d] =
                [0, 1, 2].map(|_| (0..4).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let t = DistributionTriple::new(v.clone(), a.clone(), d.clone(), AnnotationKind::Multi)
                .unwrap();
            let joint = joint_probabilities(&t, &s).unwrap();
            for c in 0..4 {
                let pos = |dim: Dim| s.perm(dim).iter().position(|&x| x == c).unwrap();
                let direct = v[pos(Dim::V)] * a[pos(Dim::A)] * d[pos(Dim::D)];
                assert_eq!(joint[c], direct);
            }
        }
    }

    fn label_probs(space: &LabelSpace, c: usize, pv: f64, pa: f64, pd: f64) -> DistributionTriple {
        let [v, a, d] = [(Dim::V, pv), (Dim::A, pa), (Dim::D, pd)].map(|(dim, p)| {
            let mut x = vec![0.1; space.len()];
            x[space.rank(dim, c)] = p;
            x
        });
        DistributionTriple::new(v, a, d, AnnotationKind::Multi).unwrap()
    }

    #[test]
    fn threshold_examples() {
        let s = space();
        let th = default_threshold();
        assert!((th - 0.793701).abs() < 1e-6);
        let sel = predict_labels_multi(&label_probs(&s, 1, 0.95, 0.95, 0.95), &s, th).unwrap();
        assert_eq!(sel.len(), 1);
        assert_eq!(sel[0].0, "sad");
        assert!((sel[0].1 - 0.857375).abs() < 1e-12);
        let sel = predict_labels_multi(&label_probs(&s, 1, 0.8, 0.9, 0.7), &s, th).unwrap();
        assert!(sel.is_empty());
        let sel = predict_labels_multi(&label_probs(&s, 3, 1.0, 1.0, 1.0), &s, 0.999).unwrap();
        assert_eq!(sel[0].0, "anger");
        assert!(predict_labels_multi(&label_probs(&s, 3, 1.0, 1.0, 1.0), &s, 1.0).is_err());
        assert!(predict_labels_multi(&label_probs(&s, 3, 1.0, 1.0, 1.0), &s, 0.0).is_err());
    }
}
