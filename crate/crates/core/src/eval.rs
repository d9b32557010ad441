//! Pearson correlation and classification metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::labelspace::{AnnotationKind, AnnotationVector};
use crate::lexicon::VadPoint;

/// Product-moment correlation of two equal-length samples.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub r_v: f64,
    pub r_a: f64,
    pub r_d: f64,
    pub n: usize,
}

impl CorrelationReport {
    pub fn compute(pred: &[VadPoint], gold: &[VadPoint]) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::LengthMismatch {
                expected: gold.len(),
                actual: pred.len(),
            });
        }
        let col = |xs: &[VadPoint], f: fn(&VadPoint) -> f64| xs.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            r_v: pearson_r(&col(pred, |p| p.v), &col(gold, |p| p.v))?,
            r_a: pearson_r(&col(pred, |p| p.a), &col(gold, |p| p.a))?,
            r_d: pearson_r(&col(pred, |p| p.d), &col(gold, |p| p.d))?,
            n: pred.len(),
        })
    }

    pub fn mean(&self) -> f64 {
        (self.r_v + self.r_a + self.r_d) / 3.0
    }

    pub fn table(&self) -> String {
        format!(
            "dimension  pearson_r\nV          {:.6}\nA          {:.6}\nD          {:.6}\nn = {}\n",
            self.r_v, self.r_a, self.r_d, self.n
        )
    }

    pub fn key_values(&self) -> String {
        format!(
            "r_v = {:.6}\nr_a = {:.6}\nr_d = {:.6}\nn = {}\n",
            self.r_v, self.r_a, self.r_d, self.n
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// Exact match for single-label data, mean Jaccard index for multi-label data.
    pub accuracy: f64,
    pub per_class: Vec<ClassScores>,
    pub kind: AnnotationKind,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class and pooled F1 plus accuracy over aligned gold and predicted annotations.
pub fn f1_scores(
    gold: &[AnnotationVector],
    pred: &[AnnotationVector],
) -> Result<ClassificationReport> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            expected: gold.len(),
            actual: pred.len(),
        });
    }
    let first = gold.first().ok_or(Error::EmptyDataset)?;
    let c = first.len();
    let kind = first.kind();
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fn_ = vec![0usize; c];
    let mut accuracy = 0.0;
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != c || p.len() != c {
            return Err(Error::LengthMismatch {
                expected: c,
                actual: if g.len() != c { g.len() } else { p.len() },
            });
        }
        let (mut inter, mut union) = (0usize, 0usize);
        for k in 0..c {
            let (gk, pk) = (g.values()[k] == 1.0, p.values()[k] == 1.0);
            match (gk, pk) {
                (true, true) => tp[k] += 1,
                (false, true) => fp[k] += 1,
                (true, false) => fn_[k] += 1,
                (false, false) => {}
            }
            inter += (gk && pk) as usize;
            union += (gk || pk) as usize;
        }
        accuracy += match kind {
            AnnotationKind::Single => (g.values() == p.values()) as u8 as f64,
            AnnotationKind::Multi if union == 0 => 1.0,
            AnnotationKind::Multi => inter as f64 / union as f64,
        };
    }
    let per_class: Vec<ClassScores> = (0..c)
        .map(|k| ClassScores {
            precision: ratio(tp[k], tp[k] + fp[k]),
            recall: ratio(tp[k], tp[k] + fn_[k]),
            f1: ratio(2 * tp[k], 2 * tp[k] + fp[k] + fn_[k]),
            support: tp[k] + fn_[k],
        })
        .collect();
    let (stp, sfp, sfn) = (
        tp.iter().sum::<usize>(),
        fp.iter().sum::<usize>(),
        fn_.iter().sum::<usize>(),
    );
    Ok(ClassificationReport {
        macro_f1: per_class.iter().map(|s| s.f1).sum::<f64>() / c as f64,
        micro_f1: ratio(2 * stp, 2 * stp + sfp + sfn),
        accuracy: accuracy / gold.len() as f64,
        per_class,
        kind,
    })
}

impl ClassificationReport {
    fn accuracy_name(&self) -> &'static str {
        match self.kind {
            AnnotationKind::Single => "exact-match",
            AnnotationKind::Multi => "jaccard",
        }
    }

    pub fn table(&self, names: &[String]) -> String {
        let mut out = format!("# accuracy definition: {}\n", self.accuracy_name());
        let width = names.iter().map(String::len).max().unwrap_or(5).max(5);
        let _ = writeln!(
            out,
            "{:<width$}  precision  recall    f1        support",
            "label"
        );
        for (name, s) in names.iter().zip(&self.per_class) {
            let _ = writeln!(
                out,
                "{name:<width$}  {:<9.6}  {:<8.6}  {:<8.6}  {}",
                s.precision, s.recall, s.f1, s.support
            );
        }
        let _ = writeln!(
            out,
            "macro_f1 {:.6}  micro_f1 {:.6}  accuracy {:.6}",
            self.macro_f1, self.micro_f1, self.accuracy
        );
        out
    }

    pub fn key_values(&self) -> String {
        format!(
            "accuracy_definition = {}\nmacro_f1 = {:.6}\nmicro_f1 = {:.6}\naccuracy = {:.6}\n",
            self.accuracy_name(),
            self.macro_f1,
            self.micro_f1,
            self.accuracy
        )
    }
}
