//! The ordered label set and its per-dimension sort orders.
//!
//! Each VAD dimension gets its own permutation of the labels, ascending by that
//! coordinate. Annotations are stored in canonical (dataset column) order and
//! permuted into sorted order to become per-dimension target distributions.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{VadLexicon, VadPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dim {
    V,
    A,
    D,
}

impl Dim {
    pub const ALL: [Dim; 3] = [Dim::V, Dim::A, Dim::D];

    pub fn index(self) -> usize {
        match self {
            Dim::V => 0,
            Dim::A => 1,
            Dim::D => 2,
        }
    }

    pub fn coord(self, p: &VadPoint) -> f64 {
        match self {
            Dim::V => p.v,
            Dim::A => p.a,
            Dim::D => p.d,
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dim::V => "V",
            Dim::A => "A",
            Dim::D => "D",
        })
    }
}

/// Whether a dataset carries one label per example or a set of labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Single,
    Multi,
}

impl fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnnotationKind::Single => "single",
            AnnotationKind::Multi => "multi",
        })
    }
}

impl std::str::FromStr for AnnotationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(AnnotationKind::Single),
            "multi" => Ok(AnnotationKind::Multi),
            other => Err(Error::InvalidArgument(format!(
                "kind must be 'single' or 'multi', got '{other}'"
            ))),
        }
    }
}

/// One-hot or multi-hot annotation in canonical label order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationVector {
    values: Vec<f64>,
    kind: AnnotationKind,
}

impl AnnotationVector {
    pub fn new(values: Vec<f64>, kind: AnnotationKind) -> Result<Self> {
        if values.iter().any(|&x| x != 0.0 && x != 1.0) {
            return Err(Error::InvalidAnnotation("entries must be 0 or 1".into()));
        }
        if kind == AnnotationKind::Single && values.iter().filter(|&&x| x == 1.0).count() != 1 {
            return Err(Error::InvalidAnnotation(
                "single-label annotation must have exactly one positive entry".into(),
            ));
        }
        Ok(Self { values, kind })
    }

    pub fn one_hot(len: usize, index: usize) -> Result<Self> {
        if index >= len {
            return Err(Error::InvalidAnnotation(format!(
                "index {index} out of range for {len} labels"
            )));
        }
        let mut values = vec![0.0; len];
        values[index] = 1.0;
        Ok(Self {
            values,
            kind: AnnotationKind::Single,
        })
    }

    pub fn multi_hot(len: usize, indices: &[usize]) -> Result<Self> {
        let mut values = vec![0.0; len];
        for &i in indices {
            if i >= len {
                return Err(Error::InvalidAnnotation(format!(
                    "index {i} out of range for {len} labels"
                )));
            }
            values[i] = 1.0;
        }
        Ok(Self {
            values,
            kind: AnnotationKind::Multi,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> AnnotationKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Canonical indices of the positive labels.
    pub fn positives(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &x)| x == 1.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Ordered label set `E` with coordinates and per-dimension sort permutations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpace {
    names: Vec<String>,
    coords: Vec<VadPoint>,
    /// `perm[dim][s]` is the canonical index of the label at sorted position `s`.
    perm: [Vec<usize>; 3],
    /// `values[dim][s]` is that label's coordinate; non-decreasing in `s`.
    values: [Vec<f64>; 3],
    /// Inverse of `perm`: sorted position of canonical index `c`.
    #[serde(skip)]
    rank: [Vec<usize>; 3],
}

impl LabelSpace {
    /// Resolves every name through the lexicon and sorts along each dimension.
    pub fn build<S: AsRef<str>>(names: &[S], lexicon: &VadLexicon) -> Result<Self> {
        let coords = names
            .iter()
            .map(|n| lexicon.lookup(n.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let names = names.iter().map(|n| n.as_ref().to_string()).collect();
        Self::from_coords(names, coords)
    }

    /// Builds a label space from explicit coordinates.
    pub fn from_coords(names: Vec<String>, coords: Vec<VadPoint>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 labels, got {}",
                names.len()
            )));
        }
        if names.len() != coords.len() {
            return Err(Error::LengthMismatch {
                expected: names.len(),
                actual: coords.len(),
            });
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.to_lowercase()) {
                return Err(Error::InvalidArgument(format!("duplicate label '{n}'")));
            }
        }
        let perm = Dim::ALL.map(|dim| {
            let mut order: Vec<usize> = (0..names.len()).collect();
            order.sort_by(|&i, &j| {
                dim.coord(&coords[i])
                    .total_cmp(&dim.coord(&coords[j]))
                    .then_with(|| names[i].cmp(&names[j]))
            });
            order
        });
        let values = Dim::ALL.map(|dim| {
            perm[dim.index()]
                .iter()
                .map(|&c| dim.coord(&coords[c]))
                .collect()
        });
        let mut space = Self {
            names,
            coords,
            perm,
            values,
            rank: Default::default(),
        };
        space.rebuild_rank();
        Ok(space)
    }

    fn rebuild_rank(&mut self) {
        for dim in Dim::ALL {
            let perm = &self.perm[dim.index()];
            let mut rank = vec![0; perm.len()];
            for (s, &c) in perm.iter().enumerate() {
                rank[c] = s;
            }
            self.rank[dim.index()] = rank;
        }
    }

    /// Re-derives and checks the cached orders after deserialization.
    pub(crate) fn validated(mut self) -> Result<Self> {
        let rebuilt = Self::from_coords(self.names.clone(), self.coords.clone())?;
        if rebuilt.perm != self.perm || rebuilt.values != self.values {
            return Err(Error::Checkpoint(
                "stored label permutations disagree with label coordinates".into(),
            ));
        }
        self.rebuild_rank();
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn coords(&self) -> &[VadPoint] {
        &self.coords
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let lower = name.to_lowercase();
        self.names.iter().position(|n| n.to_lowercase() == lower)
    }

    pub fn perm(&self, dim: Dim) -> &[usize] {
        &self.perm[dim.index()]
    }

    pub fn sorted_values(&self, dim: Dim) -> &[f64] {
        &self.values[dim.index()]
    }

    /// Sorted position of canonical label `c` along `dim`.
    pub fn rank(&self, dim: Dim, c: usize) -> usize {
        self.rank[dim.index()][c]
    }

    /// Label names along `dim` in ascending coordinate order.
    pub fn sorted_names(&self, dim: Dim) -> Vec<&str> {
        self.perm(dim)
            .iter()
            .map(|&c| self.names[c].as_str())
            .collect()
    }

    /// Permutes a canonical-order annotation into the sorted order of `dim`.
    pub fn sort_annotation(&self, ann: &AnnotationVector, dim: Dim) -> Result<Vec<f64>> {
        self.sort_vector(ann.values(), dim)
    }

    /// `out[s] = canonical[perm_dim[s]]`.
    pub fn sort_vector(&self, canonical: &[f64], dim: Dim) -> Result<Vec<f64>> {
        self.check_len(canonical.len())?;
        Ok(self.perm(dim).iter().map(|&c| canonical[c]).collect())
    }

    /// Inverse of [`LabelSpace::sort_vector`].
    pub fn unsort_probabilities(&self, sorted: &[f64], dim: Dim) -> Result<Vec<f64>> {
        self.check_len(sorted.len())?;
        let mut out = vec![0.0; sorted.len()];
        for (s, &c) in self.perm(dim).iter().enumerate() {
            out[c] = sorted[s];
        }
        Ok(out)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: len,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn four_label_space() -> LabelSpace {
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

    #[test]
    fn valence_order_matches_worked_example() {
        let space = four_label_space();
        assert_eq!(space.sorted_names(Dim::V), ["anger", "sad", "joy", "happy"]);
        assert_eq!(space.sorted_values(Dim::V), &[0.167, 0.225, 0.980, 1.000]);
    }

    #[test]
    fn sorted_targets_and_inverse() {
        let space = four_label_space();
        let joy = AnnotationVector::one_hot(4, 0).unwrap();
        let sorted = space.sort_annotation(&joy, Dim::V).unwrap();
        assert_eq!(sorted, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(
            space.unsort_probabilities(&sorted, Dim::V).unwrap(),
            joy.values()
        );
        let ones = AnnotationVector::multi_hot(4, &[0, 1, 2, 3]).unwrap();
        for dim in Dim::ALL {
            assert_eq!(space.sort_annotation(&ones, dim).unwrap(), vec![1.0; 4]);
        }
        let uniform = vec![0.25; 4];
        assert_eq!(
            space.unsort_probabilities(&uniform, Dim::A).unwrap(),
            uniform
        );
        assert!(space.unsort_probabilities(&[0.5, 0.5], Dim::D).is_err());
    }

    #[test]
    fn equal_coordinates_sort_by_name() {
        let p = VadPoint {
            v: 0.5,
            a: 0.2,
            d: 0.9,
        };
        let q = VadPoint {
            v: 0.5,
            a: 0.1,
            d: 0.1,
        };
        let space = LabelSpace::from_coords(vec!["zed".into(), "abe".into()], vec![p, q]).unwrap();
        assert_eq!(space.sorted_names(Dim::V), ["abe", "zed"]);
        assert_eq!(space.sorted_names(Dim::A), ["abe", "zed"]);
    }

    #[test]
    fn build_errors() {
        let lex = VadLexicon::from_entries([(
            "joy",
            VadPoint {
                v: 0.9,
                a: 0.8,
                d: 0.7,
            },
        )])
        .unwrap();
        assert!(LabelSpace::build(&["joy"], &lex).is_err());
        assert!(matches!(
            LabelSpace::build(&["joy", "nope"], &lex),
            Err(Error::LabelNotInLexicon(_))
        ));
        assert!(LabelSpace::build(&["joy", "JOY"], &lex).is_err());
    }

    #[test]
    fn annotation_validation() {
        assert!(AnnotationVector::new(vec![1.0, 1.0], AnnotationKind::Single).is_err());
        assert!(AnnotationVector::new(vec![0.0, 2.0], AnnotationKind::Multi).is_err());
        assert!(AnnotationVector::new(vec![0.0, 0.0], AnnotationKind::Multi).is_ok());
    }

    fn arb_space() -> impl Strategy<Value = LabelSpace> {
        (2usize..9).prop_flat_map(|c| {
            proptest::collection::vec((0u8..5, 0u8..5, 0u8..5), c).prop_map(move |raw| {
                let names = (0..c).map(|i| format!("l{i}")).collect();
                let coords = raw
                    .into_iter()
                    .map(|(v, a, d)| VadPoint {
                        v: v as f64 / 4.0,
                        a: a as f64 / 4.0,
                        d: d as f64 / 4.0,
                    })
                    .collect();
                LabelSpace::from_coords(names, coords).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn permutation_invariants(space in arb_space(), seed in 0u64..1000) {
            let c = space.len();
            for dim in Dim::ALL {
                let mut seen = space.perm(dim).to_vec();
                seen.sort_unstable();
                prop_assert_eq!(seen, (0..c).collect::<Vec<_>>());
                let vals = space.sorted_values(dim);
                prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
                for s in 0..c {
                    prop_assert_eq!(vals[s], dim.coord(&space.coords()[space.perm(dim)[s]]));
                    prop_assert_eq!(space.rank(dim, space.perm(dim)[s]), s);
                }
                let v: Vec<f64> = (0..c).map(|i| ((i as u64 * 7919 + seed) % 97) as f64).collect();
                let back = space.unsort_probabilities(&space.sort_vector(&v, dim).unwrap(), dim).unwrap();
                prop_assert_eq!(back, v);
            }
            let again = LabelSpace::from_coords(space.names().to_vec(), space.coords().to_vec()).unwrap();
            prop_assert_eq!(again, space);
        }
    }
}
