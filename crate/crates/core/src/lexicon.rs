//! Word-level valence/arousal/dominance resources.
//!
//! A lexicon is read from a four-column tab-separated file with one header
//! row (`word V A D`), the layout of the published NRC-VAD distribution.
//! Words are case-folded on load and on lookup.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A location in the unit VAD cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadPoint {
    pub v: f64,
    pub a: f64,
    pub d: f64,
}

impl VadPoint {
    /// Builds a point, rejecting coordinates that are non-finite or outside `[0, 1]`.
    pub fn new(v: f64, a: f64, d: f64) -> Result<Self> {
        for (name, x) in [("v", v), ("a", a), ("d", d)] {
            if !x.is_finite() || !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidArgument(format!(
                    "coordinate {name} = {x} is outside [0, 1]"
                )));
            }
        }
        Ok(Self { v, a, d })
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.v, self.a, self.d]
    }

    pub fn distance(&self, other: &VadPoint) -> f64 {
        let dv = self.v - other.v;
        let da = self.a - other.a;
        let dd = self.d - other.d;
        (dv * dv + da * da + dd * dd).sqrt()
    }
}

/// Lowercased word to [`VadPoint`] map.
#[derive(Debug, Clone, PartialEq)]
pub struct VadLexicon {
    entries: BTreeMap<String, VadPoint>,
}

impl VadLexicon {
    /// Reads a lexicon from a TSV stream. The first line is a header and is skipped.
    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if idx == 0 {
                if line.split('\t').count() != 4 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "header must have 4 tab-separated columns".into(),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 4 fields, found {}", fields.len()),
                });
            }
            let word = fields[0].trim().to_lowercase();
            if word.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    message: "empty word".into(),
                });
            }
            let mut coords = [0.0; 3];
            for (slot, raw) in coords.iter_mut().zip(&fields[1..]) {
                let value: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("cannot parse '{raw}' as a number"),
                })?;
                if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                    return Err(Error::ScoreOutOfRange {
                        line: line_no,
                        word,
                        value,
                    });
                }
                *slot = value;
            }
            let point = VadPoint {
                v: coords[0],
                a: coords[1],
                d: coords[2],
            };
            if entries.insert(word.clone(), point).is_some() {
                return Err(Error::DuplicateWord {
                    line: line_no,
                    word,
                });
            }
        }
        if entries.is_empty() {
            return Err(Error::EmptyLexicon);
        }
        Ok(Self { entries })
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file))
    }

    /// Builds a lexicon from in-memory entries. Words are lowercased.
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, VadPoint)>,
        S: AsRef<str>,
    {
        let mut map = BTreeMap::new();
        for (i, (word, point)) in entries.into_iter().enumerate() {
            let word = word.as_ref().to_lowercase();
            VadPoint::new(point.v, point.a, point.d)?;
            if map.insert(word.clone(), point).is_some() {
                return Err(Error::DuplicateWord { line: i + 1, word });
            }
        }
        if map.is_empty() {
            return Err(Error::EmptyLexicon);
        }
        Ok(Self { entries: map })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &VadPoint)> {
        self.entries.iter().map(|(w, p)| (w.as_str(), p))
    }

    pub fn lookup(&self, word: &str) -> Result<VadPoint> {
        self.entries
            .get(&word.to_lowercase())
            .copied()
            .ok_or_else(|| Error::LabelNotInLexicon(word.to_string()))
    }

    /// The `k` entries closest to `point` in Euclidean distance, ascending.
    /// Equal distances are ordered by word.
    pub fn nearest_neighbors(&self, point: &VadPoint, k: usize) -> Result<Vec<(String, f64)>> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k must be in 1..={}, got {k}",
                self.len()
            )));
        }
        let mut scored: Vec<(&str, f64)> = self
            .entries
            .iter()
            .map(|(w, p)| (w.as_str(), p.distance(point)))
            .collect();
        // BTreeMap iteration is already word-ordered, so a stable sort keeps ties lexicographic.
        scored.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(w, d)| (w.to_string(), d))
            .collect())
    }
}

/// Affine map of `scores` onto `[0, 1]`: `(x - min) / (max - min)`.
pub fn min_max_rescale(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.len() < 2 {
        return Err(Error::DegenerateRange);
    }
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::DegenerateRange);
    }
    let range = max - min;
    Ok(scores.iter().map(|x| (x - min) / range).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "word\tV\tA\tD\njoy\t0.980\t0.824\t0.794\r\nsad\t0.225\t0.333\t0.149\n";

    fn sample() -> VadLexicon {
        VadLexicon::load(SAMPLE.as_bytes()).unwrap()
    }

    #[test]
    fn loads_published_label_coordinates() {
        let lex = sample();
        assert_eq!(lex.len(), 2);
        assert_eq!(
            lex.lookup("joy").unwrap(),
            VadPoint {
                v: 0.980,
                a: 0.824,
                d: 0.794
            }
        );
        assert_eq!(
            lex.lookup("sad").unwrap(),
            VadPoint {
                v: 0.225,
                a: 0.333,
                d: 0.149
            }
        );
    }

    #[test]
    fn lookup_is_case_insensitive() {
        assert_eq!(
            sample().lookup("JOY").unwrap(),
            sample().lookup("joy").unwrap()
        );
    }

    #[test]
    fn lookup_missing_names_the_word() {
        let err = sample().lookup("zzzznotaword").unwrap_err();
        assert!(err.to_string().contains("zzzznotaword"));
    }

    #[test]
    fn load_errors() {
        assert!(matches!(
            VadLexicon::load("".as_bytes()),
            Err(Error::EmptyLexicon)
        ));
        assert!(matches!(
            VadLexicon::load("word\tV\tA\tD\n".as_bytes()),
            Err(Error::EmptyLexicon)
        ));
        let bad = "word\tV\tA\tD\njoy\t0.9\t0.8\n";
        assert!(matches!(
            VadLexicon::load(bad.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let range = "word\tV\tA\tD\njoy\t1.2\t0.8\t0.1\n";
        assert!(matches!(
            VadLexicon::load(range.as_bytes()),
            Err(Error::ScoreOutOfRange { line: 2, .. })
        ));
        let dup = "word\tV\tA\tD\njoy\t0.9\t0.8\t0.1\nJoy\t0.9\t0.8\t0.1\n";
        assert!(matches!(
            VadLexicon::load(dup.as_bytes()),
            Err(Error::DuplicateWord { line: 3, .. })
        ));
    }

    #[test]
    fn nearest_neighbors_small_lexicon() {
        let lex = VadLexicon::from_entries([
            (
                "a",
                VadPoint {
                    v: 0.0,
                    a: 0.0,
                    d: 0.0,
                },
            ),
            (
                "b",
                VadPoint {
                    v: 1.0,
                    a: 1.0,
                    d: 1.0,
                },
            ),
            (
                "c",
                VadPoint {
                    v: 0.5,
                    a: 0.5,
                    d: 0.5,
                },
            ),
        ])
        .unwrap();
        let q = VadPoint {
            v: 0.1,
            a: 0.1,
            d: 0.1,
        };
        let nn = lex.nearest_neighbors(&q, 2).unwrap();
        assert_eq!(nn[0].0, "a");
        assert_eq!(nn[1].0, "c");
        assert!((nn[0].1 - 0.03f64.sqrt()).abs() < 1e-12);
        assert!((nn[1].1 - 0.48f64.sqrt()).abs() < 1e-12);
        assert!(lex.nearest_neighbors(&q, 0).is_err());
        assert!(lex.nearest_neighbors(&q, 4).is_err());
    }

    #[test]
    fn nearest_neighbor_of_own_point_is_self() {
        let lex = sample();
        let joy = lex.lookup("joy").unwrap();
        assert_eq!(
            lex.nearest_neighbors(&joy, 1).unwrap(),
            vec![("joy".to_string(), 0.0)]
        );
    }

    #[test]
    fn ties_break_on_word() {
        let p = VadPoint {
            v: 0.5,
            a: 0.5,
            d: 0.5,
        };
        let lex = VadLexicon::from_entries([("zeta", p), ("alpha", p), ("mid", p)]).unwrap();
        let nn = lex.nearest_neighbors(&p, 3).unwrap();
        let words: Vec<_> = nn.iter().map(|(w, _)| w.as_str()).collect();
        assert_eq!(words, ["alpha", "mid", "zeta"]);
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(
            min_max_rescale(&[1.0, 3.0, 5.0]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        let out = min_max_rescale(&[0.3, 0.45, 0.6, 0.9]).unwrap();
        for (o, e) in out.iter().zip([0.0, 0.25, 0.5, 1.0]) {
            assert!((o - e).abs() < 1e-12);
        }
        assert!(matches!(
            min_max_rescale(&[2.0, 2.0, 2.0]),
            Err(Error::DegenerateRange)
        ));
        assert!(matches!(
            min_max_rescale(&[2.0]),
            Err(Error::DegenerateRange)
        ));
    }

    #[test]
    fn vad_point_validation() {
        assert!(VadPoint::new(0.0, 1.0, 0.5).is_ok());
        assert!(VadPoint::new(-0.01, 0.5, 0.5).is_err());
        assert!(VadPoint::new(0.5, f64::NAN, 0.5).is_err());
    }
}
