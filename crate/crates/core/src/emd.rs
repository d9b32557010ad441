//! Squared earth mover's distance losses over sorted label distributions.
//!
//! Every loss returns its value together with the gradient with respect to
//! the prediction vector, in the same (sorted) order as the inputs.

use crate::distribution::DistributionTriple;
use crate::error::{Error, Result};
use crate::labelspace::{AnnotationKind, Dim, LabelSpace};

/// Tolerance on `sum(target) == sum(pred)` for [`emd_single`].
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// d(value)/d(pred).
    pub grad: Vec<f64>,
}

/// Loss of a full triple plus the per-dimension breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleLoss {
    pub value: f64,
    pub per_dim: [LossValue; 3],
}

/// Running sum: `out[i] = p[0] + ... + p[i]`.
pub fn cdf(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty distribution".into()));
    }
    Ok(())
}

/// Suffix sums scaled by -2: `out[j] = -2 * sum_{i >= j} diff[i]`.
fn cdf_backward(weighted_diff: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; weighted_diff.len()];
    let mut acc = 0.0;
    for i in (0..weighted_diff.len()).rev() {
        acc += weighted_diff[i];
        out[i] = -2.0 * acc;
    }
    out
}

/// `sum_i (CDF_i(target) - CDF_i(pred))^2` between two equal-mass distributions.
pub fn emd_single(target: &[f64], pred: &[f64]) -> Result<LossValue> {
    check_len(target, pred)?;
    let t_mass: f64 = target.iter().sum();
    let p_mass: f64 = pred.iter().sum();
    if (t_mass - 1.0).abs() > MASS_TOLERANCE || (p_mass - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::MassMismatch {
            target: t_mass,
            pred: p_mass,
        });
    }
    let diff: Vec<f64> = cdf(target)
        .iter()
        .zip(cdf(pred))
        .map(|(t, p)| t - p)
        .collect();
    let value = diff.iter().map(|d| d * d).sum();
    Ok(LossValue {
        value,
        grad: cdf_backward(&diff),
    })
}

fn normalize(x: &[f64], what: &'static str) -> Result<(Vec<f64>, f64)> {
    let sum: f64 = x.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::ZeroMass(what));
    }
    Ok((x.iter().map(|v| v / sum).collect(), sum))
}

/// Gap weights `values[c] - values[c-1]` with the axis origin before the first label.
pub fn gap_weights(values: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    values
        .iter()
        .map(|&v| {
            let w = v - prev;
            prev = v;
            w
        })
        .collect()
}

/// Gap-weighted squared EMD between the mass-normalized target and prediction.
pub fn emd_interclass(target: &[f64], pred: &[f64], values: &[f64]) -> Result<LossValue> {
    check_len(target, pred)?;
    check_len(target, values)?;
    if pred.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument(
            "interclass predictions must be finite and non-negative".into(),
        ));
    }
    let (nt, _) = normalize(target, "target")?;
    let (np, mass) = normalize(pred, "prediction")?;
    let weights = gap_weights(values);
    let diff: Vec<f64> = cdf(&nt).iter().zip(cdf(&np)).map(|(t, p)| t - p).collect();
    let value = weights.iter().zip(&diff).map(|(w, d)| w * d * d).sum();
    let weighted: Vec<f64> = weights.iter().zip(&diff).map(|(w, d)| w * d).collect();
    // Gradient w.r.t. the normalized prediction, then through p / sum(p).
    let g_norm = cdf_backward(&weighted);
    let dot: f64 = g_norm.iter().zip(&np).map(|(g, p)| g * p).sum();
    let grad = g_norm.iter().map(|g| (g - dot) / mass).collect();
    Ok(LossValue { value, grad })
}

/// Two-bin EMD between `[target, 1 - target]` and `[pred, 1 - pred]`.
pub fn emd_intraclass(target: f64, pred: f64) -> LossValue {
    let diff = target - pred;
    LossValue {
        value: diff * diff,
        grad: vec![-2.0 * diff],
    }
}

/// Interclass term plus the mean intraclass term over all labels.
///
/// A target with no positive labels has no normalized distribution; for those
/// rows only the intraclass term is applied.
pub fn emd_multi(target: &[f64], pred: &[f64], values: &[f64]) -> Result<LossValue> {
    check_len(target, pred)?;
    let c = target.len() as f64;
    let mut out = if target.iter().any(|&t| t > 0.0) {
        emd_interclass(target, pred, values)?
    } else {
        check_len(target, values)?;
        LossValue {
            value: 0.0,
            grad: vec![0.0; target.len()],
        }
    };
    for (j, (&t, &p)) in target.iter().zip(pred).enumerate() {
        let intra = emd_intraclass(t, p);
        out.value += intra.value / c;
        out.grad[j] += intra.grad[0] / c;
    }
    Ok(out)
}

/// Sum of the per-dimension losses, each computed in that dimension's sorted order.
pub fn total_loss(
    targets: &DistributionTriple,
    preds: &DistributionTriple,
    space: &LabelSpace,
    kind: AnnotationKind,
) -> Result<TripleLoss> {
    if targets.len() != space.len() || preds.len() != space.len() {
        return Err(Error::LengthMismatch {
            expected: space.len(),
            actual: if targets.len() != space.len() {
                targets.len()
            } else {
                preds.len()
            },
        });
    }
    let per_dim = Dim::ALL.map(|dim| {
        let t = targets.get(dim);
        let p = preds.get(dim);
        match kind {
            AnnotationKind::Single => emd_single(t, p),
            AnnotationKind::Multi => emd_multi(t, p, space.sorted_values(dim)),
        }
    });
    let [v, a, d] = per_dim;
    let per_dim = [v?, a?, d?];
    let value = per_dim.iter().map(|l| l.value).sum();
    Ok(TripleLoss { value, per_dim })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(cdf(&[1.0, 0.0, 0.0]), vec![1.0, 1.0, 1.0]);
        let c = cdf(&[0.2, 0.5, 0.3]);
        assert!(close(c[0], 0.2) && close(c[1], 0.7) && close(c[2], 1.0));
        assert_eq!(cdf(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
    }

    #[test]
    fn single_examples() {
        assert_eq!(
            emd_single(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0])
                .unwrap()
                .value,
            0.0
        );
        assert!(close(
            emd_single(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0])
                .unwrap()
                .value,
            2.0
        ));
        assert!(close(
            emd_single(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0])
                .unwrap()
                .value,
            1.0
        ));
        let l = emd_single(&[0.0, 1.0, 0.0], &[0.2, 0.5, 0.3]).unwrap();
        assert!(close(l.value, 0.13));
    }

    #[test]
    fn single_rejects_mass_and_length_mismatch() {
        assert!(matches!(
            emd_single(&[1.0, 0.0], &[0.5, 0.4]),
            Err(Error::MassMismatch { .. })
        ));
        assert!(matches!(
            emd_single(&[1.0, 0.0], &[1.0, 0.0, 0.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn one_hot_loss_is_position_distance() {
        for c in 2..=8 {
            for t in 0..c {
                for q in 0..c {
                    let mut tv = vec![0.0; c];
                    let mut pv = vec![0.0; c];
                    tv[t] = 1.0;
                    pv[q] = 1.0;
                    let l = emd_single(&tv, &pv).unwrap().value;
                    assert_eq!(l, t.abs_diff(q) as f64);
                }
            }
        }
    }

    #[test]
    fn interclass_examples() {
        let v = [0.167, 0.980];
        assert_eq!(
            emd_interclass(&[1.0, 0.0], &[1.0, 0.0], &v).unwrap().value,
            0.0
        );
        let l = emd_interclass(&[1.0, 0.0], &[0.2, 0.8], &v).unwrap();
        assert!(close(l.value, 0.10688));
        for alpha in [0.1, 0.5, 1.0] {
            let l =
                emd_interclass(&[1.0, 0.0, 1.0], &[alpha, 0.0, alpha], &[0.1, 0.4, 0.9]).unwrap();
            assert!(l.value.abs() < 1e-15);
        }
        assert!(matches!(
            emd_interclass(&[0.0, 0.0], &[0.5, 0.5], &v),
            Err(Error::ZeroMass("target"))
        ));
        assert!(matches!(
            emd_interclass(&[1.0, 0.0], &[0.0, 0.0], &v),
            Err(Error::ZeroMass("prediction"))
        ));
    }

    #[test]
    fn intraclass_examples() {
        assert_eq!(emd_intraclass(1.0, 1.0).value, 0.0);
        assert!(close(emd_intraclass(1.0, 0.8).value, 0.04));
        assert!(close(emd_intraclass(0.0, 0.8).value, 0.64));
    }

    #[test]
    fn multi_examples() {
        assert_eq!(
            emd_multi(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0], &[0.1, 0.2, 0.3])
                .unwrap()
                .value,
            0.0
        );
        // interclass 0.10688 + mean((1-0.2)^2, (0-0.8)^2)
        let l = emd_multi(&[1.0, 0.0], &[0.2, 0.8], &[0.167, 0.980]).unwrap();
        assert!(close(l.value, 0.74688));
        // the composite of the standalone component examples
        let composite = emd_interclass(&[1.0, 0.0], &[0.2, 0.8], &[0.167, 0.980])
            .unwrap()
            .value
            + (emd_intraclass(1.0, 0.8).value + emd_intraclass(0.0, 0.8).value) / 2.0;
        assert!(close(composite, 0.44688));
    }

    #[test]
    fn multi_with_empty_target_uses_intraclass_only() {
        let l = emd_multi(&[0.0, 0.0], &[0.2, 0.6], &[0.3, 0.7]).unwrap();
        assert!(close(l.value, (0.04 + 0.36) / 2.0));
        assert!(close(l.grad[0], 0.2) && close(l.grad[1], 0.6));
    }

    #[test]
    fn tied_values_zero_only_the_upper_gap() {
        let v = [0.2, 0.5, 0.5, 0.9];
        let t = [0.0, 1.0, 0.0, 1.0];
        let p = [0.3, 0.7, 0.2, 0.8];
        let a = emd_interclass(&t, &p, &v).unwrap().value;
        // swapping the tied labels moves CDF at the lower tied position, whose weight is 0.3
        let swapped_t = [0.0, 0.0, 1.0, 1.0];
        let swapped_p = [0.3, 0.2, 0.7, 0.8];
        let c = emd_interclass(&swapped_t, &swapped_p, &v).unwrap().value;
        let nt = [0.0, 0.5, 0.0, 0.5];
        let np: Vec<f64> = p.iter().map(|x| x / 2.0).collect();
        let oracle = |t: &[f64], p: &[f64]| {
            let (mut ct, mut cp, mut prev, mut sum) = (0.0, 0.0, 0.0, 0.0);
            for k in 0..4 {
                ct += t[k];
                cp += p[k];
                sum += (v[k] - prev) * (ct - cp) * (ct - cp);
                prev = v[k];
            }
            sum
        };
        assert!(close(a, oracle(&nt, &np)));
        let snp: Vec<f64> = swapped_p.iter().map(|x| x / 2.0).collect();
        assert!(close(c, oracle(&[0.0, 0.0, 0.5, 0.5], &snp)));
        assert!((a - c).abs() > 1e-3);
    }

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], dir: &[f64], h: f64) -> f64 {
        let plus: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a + h * b).collect();
        let minus: Vec<f64> = x.iter().zip(dir).map(|(a, b)| a - h * b).collect();
        (f(&plus) - f(&minus)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale < 1e-7 {
            (a - b).abs()
        } else {
            (a - b).abs() / scale
        }
    }

    #[test]
    fn single_gradient_on_simplex_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let c = rng.random_range(2..=8);
            let t = random_simplex(&mut rng, c);
            let p = random_simplex(&mut rng, c);
            let g = emd_single(&t, &p).unwrap().grad;
            for i in 0..c {
                for j in (i + 1)..c {
                    let mut dir = vec![0.0; c];
                    dir[i] = 1.0;
                    dir[j] = -1.0;
                    let fd = central_diff(|x| emd_single(&t, x).unwrap().value, &p, &dir, 1e-5);
                    let an = g[i] - g[j];
                    assert!(rel_err(an, fd) < 1e-4, "{an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn multi_gradient_per_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let c = rng.random_range(2..=8);
            let mut t: Vec<f64> = (0..c).map(|_| rng.random_range(0..2) as f64).collect();
            t[0] = 1.0;
            let p: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..0.95)).collect();
            let mut vals: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
            vals.sort_by(f64::total_cmp);
            for loss in [emd_multi, emd_interclass] {
                let g = loss(&t, &p, &vals).unwrap().grad;
                for j in 0..c {
                    let mut dir = vec![0.0; c];
                    dir[j] = 1.0;
                    let fd = central_diff(|x| loss(&t, x, &vals).unwrap().value, &p, &dir, 1e-5);
                    assert!(rel_err(g[j], fd) < 1e-4, "{} vs {fd}", g[j]);
                }
            }
        }
    }

    fn random_simplex(rng: &mut impl Rng, c: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    }
}
