//! Removal of a recovered component's signal history from the observations.
//!
//! After one driving/driven pair is found, its driving component `y` is
//! projected out of every channel so the next pair cannot rediscover the same
//! interaction. The subtraction removes the span of `y`'s recent history in
//! sample space, so anything any filter could linearly predict from that
//! history is gone from the residual.

use nalgebra::{DMatrix, DVector};

use crate::series::MultiSeries;
use crate::{real, Error, Result, Scalar};

/// Rows `1..=max_lag` of delayed copies of `y`, each left-padded with zeros.
///
/// Row `l−1` holds `y(t−l)` at column `t`, with zeros where the delayed index
/// falls before the start of the record.
pub fn build_lag_matrix<T: Scalar>(y: &DVector<T>, max_lag: usize) -> Result<DMatrix<T>> {
    if max_lag == 0 {
        return Err(Error::LagOutOfRange { lag: 0, max: 0 });
    }
    let t = y.len();
    if t <= max_lag {
        return Err(Error::InsufficientSamples { needed: max_lag + 1, got: t });
    }
    let mut out = DMatrix::zeros(max_lag, t);
    for l in 1..=max_lag {
        for k in l..t {
            out[(l - 1, k)] = y[k - l];
        }
    }
    Ok(out)
}

/// Projects the span of `y`'s history out of every channel.
///
/// The basis holds the delayed copies `y(t−1), …, y(t−max_lag)`, the constant
/// vector, and, when `include_current` is set, `y(t)` itself. Channels are
/// replaced by their residuals against an orthonormal basis of that span,
/// obtained from the singular vectors of the stacked copies, so the
/// projector is never formed at sample-space size. Because the constant
/// vector is part of the removed span, the residual channels come out
/// exactly mean-free and a repeated application is a no-op.
pub fn deflate<T: Scalar>(
    x: &MultiSeries<T>,
    y: &DVector<T>,
    max_lag: usize,
    include_current: bool,
) -> Result<MultiSeries<T>> {
    let t = x.samples();
    if y.len() != t {
        return Err(Error::ShapeMismatch(format!(
            "component has {} samples, observations have {t}",
            y.len()
        )));
    }
    if y.norm() == T::zero() {
        return Err(Error::ZeroPowerFilter);
    }
    let lags = build_lag_matrix(y, max_lag)?;
    let rows = if include_current { max_lag + 2 } else { max_lag + 1 };
    let mut basis = DMatrix::zeros(rows, t);
    basis.row_mut(0).copy_from(&DMatrix::from_element(1, t, T::one()));
    if include_current {
        basis.row_mut(1).copy_from(&y.transpose());
        basis.view_mut((2, 0), (max_lag, t)).copy_from(&lags);
    } else {
        basis.view_mut((1, 0), (max_lag, t)).copy_from(&lags);
    }

    let svd = basis.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().fold(T::zero(), |a, x| a.max(*x));
    let tol = smax * real::<T>(rows.max(t) as f64) * T::default_epsilon();
    let kept: Vec<usize> =
        (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > tol).collect();

    let mut result = x.clone();
    if !kept.is_empty() {
        let mut vk = DMatrix::zeros(kept.len(), t);
        for (r, &i) in kept.iter().enumerate() {
            vk.row_mut(r).copy_from(&v_t.row(i));
        }
        let coeffs = x.data() * vk.transpose();
        let residual = x.data() - coeffs * vk;
        result.replace_data(residual);
    }
    result.center();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn noise(d: usize, t: usize, seed: u64) -> MultiSeries<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(d, t, |_, _| rng.sample::<f64, _>(StandardNormal));
        MultiSeries::from_data(data).unwrap().centered()
    }

    #[test]
    fn lag_matrix_shifts_and_pads() {
        let y = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let m = build_lag_matrix(&y, 2).unwrap();
        assert_eq!(m.row(0).transpose().as_slice(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.row(1).transpose().as_slice(), &[0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn lag_matrix_rejects_degenerate_requests() {
        let y = DVector::from_element(5, 1.0);
        assert!(matches!(build_lag_matrix(&y, 0), Err(Error::LagOutOfRange { .. })));
        assert!(matches!(build_lag_matrix(&y, 5), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn deflation_removes_history_span() {
        let x = noise(3, 200, 1);
        let y = x.project(&DVector::from_row_slice(&[0.5, -0.3, 0.8]));
        let out = deflate(&x, &y, 3, true).unwrap();
        let basis_rows = build_lag_matrix(&y, 3).unwrap();
        for ch in 0..3 {
            let channel = out.channel(ch);
            assert!(y.dot(&channel).abs() < 1e-8 * y.norm() * channel.norm().max(1.0));
            for l in 0..3 {
                let row = basis_rows.row(l).transpose();
                assert!(row.dot(&channel).abs() < 1e-8 * row.norm() * channel.norm().max(1.0));
            }
        }
    }

    #[test]
    fn current_sample_survives_when_excluded_from_basis() {
        let x = noise(3, 200, 2);
        let y = x.project(&DVector::from_row_slice(&[1.0, 0.0, 0.0]));
        let out = deflate(&x, &y, 2, false).unwrap();
        // Only the delayed copies are removed; the instantaneous signal may
        // keep a projection onto y.
        let mut max_corr = 0.0f64;
        for ch in 0..3 {
            let c = out.channel(ch);
            max_corr = max_corr.max(y.dot(&c).abs() / (y.norm() * c.norm()));
        }
        assert!(max_corr > 0.1, "instantaneous correlation {max_corr}");
    }

    #[test]
    fn deflation_is_idempotent() {
        let x = noise(4, 150, 3);
        let y = x.project(&DVector::from_row_slice(&[0.2, 0.4, -0.6, 0.1]));
        let once = deflate(&x, &y, 2, true).unwrap();
        let twice = deflate(&once, &y, 2, true).unwrap();
        let diff = (once.data() - twice.data()).amax();
        assert!(diff < 1e-10, "second pass moved data by {diff}");
    }

    #[test]
    fn deflation_never_increases_channel_norms() {
        let x = noise(3, 120, 4);
        let y = x.project(&DVector::from_row_slice(&[0.9, 0.1, -0.4]));
        let out = deflate(&x, &y, 2, true).unwrap();
        for ch in 0..3 {
            // An orthogonal projection can only shrink the norm.
            assert!(out.channel(ch).norm() <= x.channel(ch).norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rejects_silent_component() {
        let x = noise(2, 50, 5);
        let y = DVector::zeros(50);
        assert!(matches!(deflate(&x, &y, 2, true), Err(Error::ZeroPowerFilter)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn projection_is_idempotent_and_orthogonal(
            seed in any::<u64>(),
            d in 2usize..5,
            t in 20usize..60,
            l in 1usize..4,
        ) {
            let x = noise(d, t, seed);
            let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xabcdef);
            let f = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
            prop_assume!(f.norm() > 1e-6);
            let y = x.project(&f);
            prop_assume!(y.norm() > 1e-9);

            let once = deflate(&x, &y, l, true).unwrap();
            let twice = deflate(&once, &y, l, true).unwrap();
            prop_assert!((once.data() - twice.data()).amax() < 1e-9);

            let lags = build_lag_matrix(&y, l).unwrap();
            for ch in 0..d {
                let c = once.channel(ch);
                let scale = y.norm() * c.norm().max(1.0);
                prop_assert!(y.dot(&c).abs() <= 1e-8 * scale);
                for r in 0..l {
                    let row = lags.row(r).transpose();
                    prop_assert!(row.dot(&c).abs() <= 1e-8 * row.norm() * c.norm().max(1.0));
                }
            }
        }
    }
}
