//! Distance kernels. Inputs may be stored as `f32`; all accumulation is `f64`.
//!
//! Embeddings are accepted at any norm, so orderings under squared L2 and under
//! cosine similarity agree only for unit-normalized inputs.

use crate::error::{Error, Result};

fn check_dims(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// `Σ (a_k − b_k)²`, accumulated in `f64`.
pub fn squared_euclidean(a: &[f32], b: &[f32]) -> Result<f64> {
    check_dims(a, b)?;
    Ok(sq_dist(a, b))
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    check_dims(a, b)?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Returns `a / ‖a‖` as `f32`.
pub fn normalized(a: &[f32]) -> Result<Vec<f32>> {
    let n = norm(a);
    if n == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(a.iter().map(|&x| (x as f64 / n) as f32).collect())
}

/// Single-precision dot product for hot loops over pre-normalized vectors.
#[inline]
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    // Eight independent accumulators let the compiler vectorize the loop.
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let xa = &a[c * 8..c * 8 + 8];
        let xb = &b[c * 8..c * 8 + 8];
        for k in 0..8 {
            acc[k] += xa[k] * xb[k];
        }
    }
    let mut tail = 0f32;
    for k in chunks * 8..a.len() {
        tail += a[k] * b[k];
    }
    acc.iter().sum::<f32>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn squared_euclidean_examples() {
        assert_eq!(squared_euclidean(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(squared_euclidean(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert_eq!(
            squared_euclidean(&[1.0, 2.0, 3.0], &[1.0, 2.5, 3.0]).unwrap(),
            0.25
        );
        assert!(matches!(
            squared_euclidean(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 1.0], &[2.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn f32_dot_matches_f64() {
        let a: Vec<f32> = (0..67).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..67).map(|i| (i as f32 * 0.11).cos()).collect();
        assert!((dot_f32(&a, &b) as f64 - dot(&a, &b)).abs() < 1e-4);
    }

    fn vec_pair() -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
        (2usize..16).prop_flat_map(|d| {
            (
                prop::collection::vec(-10.0f32..10.0, d),
                prop::collection::vec(-10.0f32..10.0, d),
            )
        })
    }

    proptest! {
        #[test]
        fn distance_symmetric_and_identity((a, b) in vec_pair()) {
            let ab = squared_euclidean(&a, &b).unwrap();
            let ba = squared_euclidean(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(squared_euclidean(&a, &a).unwrap(), 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
        }

        #[test]
        fn cosine_scale_invariant((a, _b) in vec_pair(), c in 0.01f32..100.0) {
            prop_assume!(norm(&a) > 1e-3);
            let scaled: Vec<f32> = a.iter().map(|x| x * c).collect();
            let s = cosine_similarity(&a, &scaled).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-9, "similarity {}", s);
        }
    }
}
