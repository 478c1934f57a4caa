//! Voxel-wise reconstruction losses and their deep-supervision combination.

use serde::{Deserialize, Serialize};

use super::tensor::{downsample, Scalar, Tensor};
use crate::error::{Error, Result};

/// Clamp applied to predictions inside the cross entropy.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L2,
    #[default]
    Bce,
}

fn check_shapes<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>, ctx: &str) -> Result<()> {
    if pred.shape != truth.shape {
        return Err(Error::shape(ctx, &truth.shape, &pred.shape));
    }
    Ok(())
}

/// Σ (truth − pred)².
pub fn loss_l2<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<T> {
    check_shapes(pred, truth, "loss_l2")?;
    Ok(pred
        .data
        .iter()
        .zip(&truth.data)
        .map(|(&f, &y)| (y - f) * (y - f))
        .sum())
}

pub fn loss_l2_grad<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Vec<T> {
    let two = T::of(2.0);
    pred.data.iter().zip(&truth.data).map(|(&f, &y)| two * (f - y)).collect()
}

#[inline]
fn clamp_pred<T: Scalar>(f: T) -> T {
    let eps = T::of(BCE_EPSILON);
    f.max(eps).min(T::one() - eps)
}

/// Σ −[y ln f + (1 − y) ln(1 − f)] with `f` clamped to `[ε, 1 − ε]`.
pub fn loss_bce<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<T> {
    check_shapes(pred, truth, "loss_bce")?;
    Ok(pred
        .data
        .iter()
        .zip(&truth.data)
        .map(|(&f, &y)| {
            let f = clamp_pred(f);
            -(y * f.ln() + (T::one() - y) * (T::one() - f).ln())
        })
        .sum())
}

/// d/df of the clamped cross entropy (zero where the clamp is active).
pub fn loss_bce_grad<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Vec<T> {
    pred.data
        .iter()
        .zip(&truth.data)
        .map(|(&f, &y)| {
            let c = clamp_pred(f);
            if c != f {
                T::zero()
            } else {
                -y / f + (T::one() - y) / (T::one() - f)
            }
        })
        .collect()
}

pub fn loss<T: Scalar>(kind: LossKind, pred: &Tensor<T>, truth: &Tensor<T>) -> Result<T> {
    match kind {
        LossKind::L2 => loss_l2(pred, truth),
        LossKind::Bce => loss_bce(pred, truth),
    }
}

/// Edge length of a cubic tensor's trailing three dimensions.
pub fn cube_size<T>(t: &Tensor<T>) -> Option<usize> {
    let n = t.shape.len();
    if n < 3 {
        return None;
    }
    let r = t.shape[n - 1];
    (t.shape[n - 2] == r && t.shape[n - 3] == r).then_some(r)
}

/// Targets for every head: `truth` block-averaged down to each head's size.
pub fn head_targets<T: Scalar>(head_sizes: &[usize], truth: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let r_truth = cube_size(truth).ok_or_else(|| Error::shape("truth", &[0, 0, 0], &truth.shape))?;
    let r_max = head_sizes.iter().copied().max().unwrap_or(0);
    if r_max != r_truth {
        return Err(Error::shape("truth resolution", &[r_max], &[r_truth]));
    }
    head_sizes
        .iter()
        .map(|&r| {
            if r == 0 || r_max % r != 0 {
                return Err(Error::invalid(format!("head resolution {r} does not divide {r_max}")));
            }
            downsample(truth, r_max / r)
        })
        .collect()
}

/// Per-head losses and their λ-weighted sum.
pub fn deep_supervision_terms<T: Scalar>(
    heads: &[Tensor<T>],
    truth: &Tensor<T>,
    kind: LossKind,
    lambda: &[f64],
) -> Result<(Vec<T>, T)> {
    if lambda.len() != heads.len() {
        return Err(Error::invalid(format!(
            "{} loss weights for {} heads",
            lambda.len(),
            heads.len()
        )));
    }
    let sizes = heads
        .iter()
        .map(|h| cube_size(h).ok_or_else(|| Error::shape("head", &[0, 0, 0], &h.shape)))
        .collect::<Result<Vec<_>>>()?;
    let targets = head_targets(&sizes, truth)?;
    let mut per_head = Vec::with_capacity(heads.len());
    let mut combined = T::zero();
    for ((h, t), &w) in heads.iter().zip(&targets).zip(lambda) {
        let t = Tensor::new(&h.shape, t.data.clone())?;
        let l = loss(kind, h, &t)?;
        per_head.push(l);
        combined += T::of(w) * l;
    }
    Ok((per_head, combined))
}

/// Σᵢ λᵢ · loss(headᵢ, downsample(truth, R_max / Rᵢ)).
pub fn deep_supervision_loss<T: Scalar>(
    heads: &[Tensor<T>],
    truth: &Tensor<T>,
    kind: LossKind,
    lambda: &[f64],
) -> Result<T> {
    deep_supervision_terms(heads, truth, kind, lambda).map(|(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn l2_examples() {
        let a = t(&[2, 2, 2], vec![0.3; 8]);
        assert_eq!(loss_l2(&a, &a).unwrap(), 0.0);
        let zeros = t(&[2, 2, 2], vec![0.0; 8]);
        let ones = t(&[2, 2, 2], vec![1.0; 8]);
        assert_eq!(loss_l2(&zeros, &ones).unwrap(), 8.0);
        assert!(loss_l2(&zeros, &t(&[8], vec![0.0; 8])).is_err());
    }

    #[test]
    fn bce_examples() {
        let half = t(&[1], vec![0.5]);
        assert!((loss_bce(&half, &half).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let one = t(&[1], vec![1.0]);
        let l = loss_bce(&one, &one).unwrap();
        assert!(l >= 0.0 && l <= -(1.0 - BCE_EPSILON).ln() + 1e-15);
        assert_eq!(loss_bce_grad(&one, &one), vec![0.0]);
    }

    #[test]
    fn deep_supervision_is_linear_in_lambda() {
        let truth = t(&[4, 4, 4], (0..64).map(|i| (i % 5) as f64 / 4.0).collect());
        let h0 = t(&[2, 2, 2], vec![0.4; 8]);
        let h1 = t(&[4, 4, 4], vec![0.6; 64]);
        let heads = [h0.clone(), h1.clone()];
        let a = loss_l2(&h0, &downsample(&truth, 2).unwrap()).unwrap();
        let b = loss_l2(&h1, &truth).unwrap();
        assert_eq!(deep_supervision_loss(&heads, &truth, LossKind::L2, &[1.0, 0.0]).unwrap(), a);
        let mixed = deep_supervision_loss(&heads, &truth, LossKind::L2, &[0.5, 0.5]).unwrap();
        assert!((mixed - (0.5 * a + 0.5 * b)).abs() < 1e-12);
    }

    #[test]
    fn matched_heads_have_zero_l2() {
        let truth = t(&[4, 4, 4], (0..64).map(|i| (i % 3) as f64).collect());
        let heads = [downsample(&truth, 2).unwrap(), truth.clone()];
        assert_eq!(deep_supervision_loss(&heads, &truth, LossKind::L2, &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_truth_is_rejected() {
        let truth = t(&[8, 8, 8], vec![0.0; 512]);
        let heads = [t(&[2, 2, 2], vec![0.0; 8]), t(&[4, 4, 4], vec![0.0; 64])];
        assert!(deep_supervision_loss(&heads, &truth, LossKind::L2, &[1.0, 1.0]).is_err());
    }
}
