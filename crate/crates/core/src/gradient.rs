//! Derivatives of the closed-form strength score with respect to the filters.
//!
//! The score is assembled from four covariance maps of the filter pair: the
//! vector `q` and Gram matrix `Q` of the own-history model and the stacked
//! vector `r` and Gram matrix `R` of the two-signal model. This module
//! provides their Jacobians in two independent shapes (direct per-entry rows,
//! and matrix-calculus factorizations built from Kronecker products), an
//! analytic gradient of the score assembled from the chain rule, and a
//! central-difference gradient used both as the default in the optimizer and
//! as the reference the analytic path is validated against.
//!
//! Throughout, derivative columns are ordered `[driven; driving]` and the
//! `vec` of a matrix stacks its columns, so the Jacobian row for entry
//! `(i, j)` of an `n`-row matrix is `i + j·n`.

use nalgebra::{DMatrix, DVector};

use crate::causality::{ProjectionPair, StatsContext};
use crate::kron::{commutation, ones, selector_4_2, vec_col};
use crate::{real, Result, Scalar};

/// How the optimizer obtains ascent directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradientMethod {
    /// Central differences of the score itself.
    FiniteDifference { step: f64 },
    /// Chain-rule assembly from the covariance-map Jacobians.
    Analytic,
}

impl Default for GradientMethod {
    fn default() -> Self {
        GradientMethod::FiniteDifference { step: 1e-6 }
    }
}

/// Gradient of the two-direction objective with respect to both filters.
#[derive(Debug, Clone)]
pub struct GradientResult<T: Scalar> {
    pub grad_w: DVector<T>,
    pub grad_v: DVector<T>,
    pub method: GradientMethod,
}

/// Jacobian of `q` (own-lag covariances of the driven component) with
/// respect to the driven filter. Shape `L×D`.
pub fn jacobian_q<T: Scalar>(ctx: &StatsContext<T>, driven: &DVector<T>) -> DMatrix<T> {
    let (l, d) = (ctx.max_lag(), ctx.dim());
    let mut out = DMatrix::zeros(l, d);
    for k in 1..=l {
        let a = ctx.lag_block(k);
        let row = (a + a.transpose()) * driven;
        out.row_mut(k - 1).copy_from(&row.transpose());
    }
    out
}

/// Jacobian of `vec(Q)` with respect to the driven filter. Shape `L²×D`.
pub fn jacobian_big_q<T: Scalar>(ctx: &StatsContext<T>, driven: &DVector<T>) -> DMatrix<T> {
    let (l, d) = (ctx.max_lag(), ctx.dim());
    let mut out = DMatrix::zeros(l * l, d);
    for i in 0..l {
        for j in 0..l {
            let delta = j as isize - i as isize;
            let row = (ctx.toe_block(delta) + ctx.toe_block(-delta)) * driven;
            out.row_mut(i + j * l).copy_from(&row.transpose());
        }
    }
    out
}

/// Jacobian of `r = [q; c]` with respect to `[driven; driving]`.
/// Shape `2L×2D`.
pub fn jacobian_r<T: Scalar>(
    ctx: &StatsContext<T>,
    driving: &DVector<T>,
    driven: &DVector<T>,
) -> DMatrix<T> {
    let (l, d) = (ctx.max_lag(), ctx.dim());
    let mut out = DMatrix::zeros(2 * l, 2 * d);
    for k in 1..=l {
        let a = ctx.lag_block(k);
        let dq = (a + a.transpose()) * driven;
        out.view_mut((k - 1, 0), (1, d)).copy_from(&dq.transpose());
        let dc_driven = a * driving;
        let dc_driving = a.transpose() * driven;
        out.view_mut((l + k - 1, 0), (1, d)).copy_from(&dc_driven.transpose());
        out.view_mut((l + k - 1, d), (1, d)).copy_from(&dc_driving.transpose());
    }
    out
}

/// Jacobian of `vec(R)` with respect to `[driven; driving]`.
/// Shape `(2L)²×2D`.
pub fn jacobian_big_r<T: Scalar>(
    ctx: &StatsContext<T>,
    driving: &DVector<T>,
    driven: &DVector<T>,
) -> DMatrix<T> {
    let (l, d) = (ctx.max_lag(), ctx.dim());
    let n = 2 * l;
    let mut out = DMatrix::zeros(n * n, 2 * d);
    for a in 0..n {
        for b in 0..n {
            let row = a + b * n;
            if a < l && b < l {
                let delta = b as isize - a as isize;
                let dv = (ctx.toe_block(delta) + ctx.toe_block(-delta)) * driven;
                out.view_mut((row, 0), (1, d)).copy_from(&dv.transpose());
            } else if a < l {
                let delta = (b - l) as isize - a as isize;
                let dv = ctx.toe_block(delta) * driving;
                let dw = ctx.toe_block(-delta) * driven;
                out.view_mut((row, 0), (1, d)).copy_from(&dv.transpose());
                out.view_mut((row, d), (1, d)).copy_from(&dw.transpose());
            } else if b < l {
                let delta = (a - l) as isize - b as isize;
                let dv = ctx.toe_block(delta) * driving;
                let dw = ctx.toe_block(-delta) * driven;
                out.view_mut((row, 0), (1, d)).copy_from(&dv.transpose());
                out.view_mut((row, d), (1, d)).copy_from(&dw.transpose());
            } else {
                let delta = b as isize - a as isize;
                let dw = (ctx.toe_block(delta) + ctx.toe_block(-delta)) * driving;
                out.view_mut((row, d), (1, d)).copy_from(&dw.transpose());
            }
        }
    }
    out
}

/// `J_q` assembled from its Kronecker factorization. Cross-check path for
/// [`jacobian_q`]; the two agree to roundoff for any covariance set.
pub fn jacobian_q_factored<T: Scalar>(ctx: &StatsContext<T>, driven: &DVector<T>) -> DMatrix<T> {
    let (l, d) = (ctx.max_lag(), ctx.dim());
    let sig = ctx.block_diag_effective();
    let v = DMatrix::from_column_slice(d, 1, driven.as_slice());
    let il = DMatrix::<T>::identity(l, l);
    let id = DMatrix::<T>::identity(d, d);
    let tail = vec_mat(&il).kronecker(&id);
    let u = &sig * ones::<T>(l, 1).kronecker(&v);
    let term1 = u.transpose().kronecker(&il) * il.kronecker(&commutation::<T>(d, l)) * &tail;
    let term2 = il.kronecker(&v).transpose() * &sig * ones::<T>(l, 1).kronecker(&id);
    term1 + term2
}

/// `J_Q` assembled from its Kronecker factorization; agrees with
/// [`jacobian_big_q`] for any covariance set.
pub fn jacobian_big_q_factored<T: Scalar>(
    ctx: &StatsContext<T>,
    driven: &DVector<T>,
) -> DMatrix<T> {
    let (l, d) = (ctx.max_lag(), ctx.dim());
    let st = ctx.block_toeplitz_effective();
    let v = DMatrix::from_column_slice(d, 1, driven.as_slice());
    let il = DMatrix::<T>::identity(l, l);
    let id = DMatrix::<T>::identity(d, d);
    let tail = vec_mat(&il).kronecker(&id);
    let ilvt = il.kronecker(&v).transpose();
    let term1 =
        (&ilvt * st.transpose()).kronecker(&il) * il.kronecker(&commutation::<T>(d, l)) * &tail;
    let term2 = il.kronecker(&(&ilvt * &st)) * &tail;
    term1 + term2
}

/// `J_r` assembled from its Kronecker factorization; agrees with
/// [`jacobian_r`] for any covariance set.
pub fn jacobian_r_factored<T: Scalar>(
    ctx: &StatsContext<T>,
    driving: &DVector<T>,
    driven: &DVector<T>,
) -> DMatrix<T> {
    let (l, d) = (ctx.max_lag(), ctx.dim());
    let sig2 = DMatrix::<T>::identity(2, 2).kronecker(&ctx.block_diag_effective());
    let v = DMatrix::from_column_slice(d, 1, driven.as_slice());
    let w = DMatrix::from_column_slice(d, 1, driving.as_slice());
    let i2l = DMatrix::<T>::identity(2 * l, 2 * l);
    let id = DMatrix::<T>::identity(d, d);

    let mut stack = DMatrix::zeros(2 * l * d, 1);
    stack.view_mut((0, 0), (l * d, 1)).copy_from(&ones::<T>(l, 1).kronecker(&v));
    stack.view_mut((l * d, 0), (l * d, 1)).copy_from(&ones::<T>(l, 1).kronecker(&w));

    let u = &sig2 * stack;
    let big = u.transpose().kronecker(&i2l)
        * i2l.kronecker(&commutation::<T>(d, 2 * l))
        * vec_mat(&i2l).kronecker(&id);

    let ones_id = ones::<T>(l, 1).kronecker(&id);
    let mut bd = DMatrix::zeros(2 * l * d, 2 * d);
    bd.view_mut((0, 0), (l * d, d)).copy_from(&ones_id);
    bd.view_mut((l * d, d), (l * d, d)).copy_from(&ones_id);

    let mut out = i2l.kronecker(&v).transpose() * &sig2 * bd;
    let cols = out.columns_mut(0, d) + big;
    out.columns_mut(0, d).copy_from(&cols);
    out
}

/// `J_R` assembled from the factorization of the stacked Gram matrix.
///
/// The factored Gram places the cross blocks in the transposed lag
/// orientation relative to the per-entry construction, so this agrees with
/// [`jacobian_big_r`] exactly when every `Σ(τ)` is symmetric and serves as a
/// cross-check on that domain.
pub fn jacobian_big_r_factored<T: Scalar>(
    ctx: &StatsContext<T>,
    driving: &DVector<T>,
    driven: &DVector<T>,
) -> DMatrix<T> {
    let (l, d) = (ctx.max_lag(), ctx.dim());
    let st = ctx.block_toeplitz_effective();
    let i2 = DMatrix::<T>::identity(2, 2);
    let il = DMatrix::<T>::identity(l, l);
    let i2l = DMatrix::<T>::identity(2 * l, 2 * l);
    let id = DMatrix::<T>::identity(d, d);
    let ild = DMatrix::<T>::identity(l * d, l * d);
    let v = DMatrix::from_column_slice(d, 1, driven.as_slice());
    let w = DMatrix::from_column_slice(d, 1, driving.as_slice());

    let st2 = i2.kronecker(&st);
    let st2t = i2.kronecker(&st.transpose());

    let ilv = il.kronecker(&v);
    let ilw = il.kronecker(&w);
    let mut s = DMatrix::zeros(2 * l * d, 2 * l);
    s.view_mut((0, 0), (l * d, l)).copy_from(&ilv);
    s.view_mut((l * d, l), (l * d, l)).copy_from(&ilw);

    let row_v = ones::<T>(1, 2).kronecker(&il).kronecker(&v.transpose());
    let row_w = ones::<T>(1, 2).kronecker(&il).kronecker(&w.transpose());
    let mut p = DMatrix::zeros(2 * l, 2 * l * d);
    p.view_mut((0, 0), (l, 2 * l * d)).copy_from(&row_v);
    p.view_mut((l, 0), (l, 2 * l * d)).copy_from(&row_w);

    let inner = i2l.kronecker(&commutation::<T>(d, l))
        * vec_mat(&ones::<T>(1, 2).kronecker(&il)).kronecker(&id);
    let term1 = (s.transpose() * st2t).kronecker(&i2l)
        * commutation::<T>(2, 2 * l * d).kronecker(&il).transpose()
        * i2.kronecker(&inner);

    let term2 = i2l.kronecker(&(&p * &st2))
        * i2.kronecker(&commutation::<T>(2, l)).kronecker(&ild).transpose()
        * selector_4_2::<T>().kronecker(&vec_mat(&il).kronecker(&id));

    term1 + term2
}

fn vec_mat<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let v = vec_col(m);
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Chain-rule gradient of the score for one direction of time.
///
/// Returns `(∂𝒢/∂driven, ∂𝒢/∂driving)`. The derivative is of the unclamped
/// score, so it stays informative when sampling noise pushes the value
/// marginally outside `[0, 1]`.
pub fn analytic_gradient<T: Scalar>(
    ctx: &StatsContext<T>,
    driving: &DVector<T>,
    driven: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    let s = ctx.stats(driving, driven)?;
    let (l, d) = (ctx.max_lag(), ctx.dim());
    let h = &s.filters.reduced;
    let mut u = DVector::zeros(2 * l);
    u.rows_mut(0, l).copy_from(&s.filters.full_own);
    u.rows_mut(l, l).copy_from(&s.filters.full_driver);

    let phi_r = s.phi_r;
    let phi_f = s.phi_f;
    let g = s.g_raw;

    let mut gv = DVector::<T>::zeros(d);
    let mut gw = DVector::<T>::zeros(d);

    // Variance term: −(2𝒢/Φ_r)·Σ(0)·driven.
    gv += ctx.sigma0() * driven * (-(g + g) / phi_r);

    // Own-history terms through q and Q.
    let mut jq_h = DVector::<T>::zeros(d);
    for k in 1..=l {
        let a = ctx.lag_block(k);
        jq_h += (a + a.transpose()) * driven * h[k - 1];
    }
    gv += jq_h * (-(phi_f + phi_f) / (phi_r * phi_r));

    let mut jbq = DVector::<T>::zeros(d);
    for i in 0..l {
        for j in 0..l {
            let delta = j as isize - i as isize;
            let coef = h[i] * h[j];
            jbq += (ctx.toe_block(delta) + ctx.toe_block(-delta)) * driven * coef;
        }
    }
    gv += jbq * (phi_f / (phi_r * phi_r));

    // Two-signal terms through r and R.
    let two_over_phir = (T::one() + T::one()) / phi_r;
    let mut jr_v = DVector::<T>::zeros(d);
    let mut jr_w = DVector::<T>::zeros(d);
    for k in 1..=l {
        let a = ctx.lag_block(k);
        jr_v += (a + a.transpose()) * driven * u[k - 1];
        jr_v += a * driving * u[l + k - 1];
        jr_w += a.transpose() * driven * u[l + k - 1];
    }
    gv += &jr_v * two_over_phir;
    gw += &jr_w * two_over_phir;

    let n = 2 * l;
    let mut jbr_v = DVector::<T>::zeros(d);
    let mut jbr_w = DVector::<T>::zeros(d);
    for a_idx in 0..n {
        for b_idx in 0..n {
            let coef = u[a_idx] * u[b_idx];
            if a_idx < l && b_idx < l {
                let delta = b_idx as isize - a_idx as isize;
                jbr_v += (ctx.toe_block(delta) + ctx.toe_block(-delta)) * driven * coef;
            } else if a_idx < l {
                let delta = (b_idx - l) as isize - a_idx as isize;
                jbr_v += ctx.toe_block(delta) * driving * coef;
                jbr_w += ctx.toe_block(-delta) * driven * coef;
            } else if b_idx < l {
                let delta = (a_idx - l) as isize - b_idx as isize;
                jbr_v += ctx.toe_block(delta) * driving * coef;
                jbr_w += ctx.toe_block(-delta) * driven * coef;
            } else {
                let delta = b_idx as isize - a_idx as isize;
                jbr_w += (ctx.toe_block(delta) + ctx.toe_block(-delta)) * driving * coef;
            }
        }
    }
    gv += jbr_v * (-T::one() / phi_r);
    gw += jbr_w * (-T::one() / phi_r);

    Ok((gv, gw))
}

/// Central-difference gradient of the unclamped score.
///
/// Each coordinate is perturbed by `step·max(1, |coordinate|)`. Returns
/// `(∂𝒢/∂driven, ∂𝒢/∂driving)`.
pub fn finite_diff_gradient<T: Scalar>(
    ctx: &StatsContext<T>,
    driving: &DVector<T>,
    driven: &DVector<T>,
    step: f64,
) -> Result<(DVector<T>, DVector<T>)> {
    let d = ctx.dim();
    let eval = |driving: &DVector<T>, driven: &DVector<T>| -> Result<T> {
        Ok(ctx.stats(driving, driven)?.g_raw)
    };
    let mut gv = DVector::zeros(d);
    let mut gw = DVector::zeros(d);
    for i in 0..d {
        let h = real::<T>(step) * T::one().max(driven[i].abs());
        let mut plus = driven.clone();
        plus[i] += h;
        let mut minus = driven.clone();
        minus[i] -= h;
        gv[i] = (eval(driving, &plus)? - eval(driving, &minus)?) / (h + h);
    }
    for i in 0..d {
        let h = real::<T>(step) * T::one().max(driving[i].abs());
        let mut plus = driving.clone();
        plus[i] += h;
        let mut minus = driving.clone();
        minus[i] -= h;
        gw[i] = (eval(&plus, driven)? - eval(&minus, driven)?) / (h + h);
    }
    Ok((gv, gw))
}

fn directional_gradient<T: Scalar>(
    ctx: &StatsContext<T>,
    driving: &DVector<T>,
    driven: &DVector<T>,
    method: GradientMethod,
) -> Result<(DVector<T>, DVector<T>)> {
    match method {
        GradientMethod::Analytic => analytic_gradient(ctx, driving, driven),
        GradientMethod::FiniteDifference { step } => {
            finite_diff_gradient(ctx, driving, driven, step)
        }
    }
}

/// Gradient of the combined objective `𝒢(w, v) + 𝒢ᵗʳ(v, w)` with respect to
/// both filters of the pair.
pub fn combined_gradient<T: Scalar>(
    pair: &ProjectionPair<T>,
    forward: &StatsContext<T>,
    reversed: &StatsContext<T>,
    method: GradientMethod,
) -> Result<GradientResult<T>> {
    let (fwd_dv, fwd_dw) = directional_gradient(forward, &pair.w, &pair.v, method)?;
    // Under reversal the roles swap: w is the driven filter, v the driving.
    let (rev_dw, rev_dv) = directional_gradient(reversed, &pair.v, &pair.w, method)?;
    Ok(GradientResult { grad_v: fwd_dv + rev_dv, grad_w: fwd_dw + rev_dw, method })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{CondLimit, EstimationWindow, LagCovSet};
    use crate::series::MultiSeries;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use rand_distr::StandardNormal;

    fn random_context(d: usize, l: usize, seed: u64, cond: CondLimit) -> StatsContext<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let t = 60 * l.max(2);
        let data = DMatrix::from_fn(d, t, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = MultiSeries::from_data(data).unwrap().centered();
        let cov = LagCovSet::estimate(&x, l, cond, EstimationWindow::Trailing).unwrap();
        StatsContext::forward(&cov)
    }

    fn random_unit(d: usize, rng: &mut ChaCha12Rng) -> DVector<f64> {
        DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize()
    }

    /// Central differences of the covariance maps themselves. The maps are
    /// quadratic in the filters, so central differences are exact up to
    /// roundoff and make a sharp reference.
    fn fd_columns<F>(f: F, at: &DVector<f64>, rows: usize) -> DMatrix<f64>
    where
        F: Fn(&DVector<f64>) -> DVector<f64>,
    {
        let h = 1e-4;
        let mut out = DMatrix::zeros(rows, at.len());
        for i in 0..at.len() {
            let mut plus = at.clone();
            plus[i] += h;
            let mut minus = at.clone();
            minus[i] -= h;
            out.set_column(i, &((f(&plus) - f(&minus)) / (2.0 * h)));
        }
        out
    }

    fn map_q(ctx: &StatsContext<f64>, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(ctx.max_lag(), |k, _| (v.transpose() * ctx.lag_block(k + 1) * v)[(0, 0)])
    }

    fn map_big_q(ctx: &StatsContext<f64>, v: &DVector<f64>) -> DVector<f64> {
        let l = ctx.max_lag();
        let mut out = DVector::zeros(l * l);
        for i in 0..l {
            for j in 0..l {
                out[i + j * l] =
                    (v.transpose() * ctx.toe_block(j as isize - i as isize) * v)[(0, 0)];
            }
        }
        out
    }

    #[test]
    fn q_jacobians_match_finite_differences() {
        for (seed, cond) in [(1, CondLimit::INFINITE), (2, CondLimit::new(5.0).unwrap())] {
            let ctx = random_context(4, 3, seed, cond);
            let mut rng = ChaCha12Rng::seed_from_u64(seed + 50);
            let v = random_unit(4, &mut rng);
            let jq = jacobian_q(&ctx, &v);
            let fd = fd_columns(|u| map_q(&ctx, u), &v, 3);
            assert!((jq - fd).amax() < 1e-9);
            let jbq = jacobian_big_q(&ctx, &v);
            let fd = fd_columns(|u| map_big_q(&ctx, u), &v, 9);
            assert!((jbq - fd).amax() < 1e-9);
        }
    }

    #[test]
    fn stacked_jacobians_match_finite_differences() {
        let ctx = random_context(4, 2, 3, CondLimit::new(8.0).unwrap());
        let mut rng = ChaCha12Rng::seed_from_u64(60);
        let v = random_unit(4, &mut rng);
        let w = random_unit(4, &mut rng);
        let l = ctx.max_lag();

        let map_r = |vv: &DVector<f64>, ww: &DVector<f64>| -> DVector<f64> {
            let mut out = DVector::zeros(2 * l);
            for k in 1..=l {
                out[k - 1] = (vv.transpose() * ctx.lag_block(k) * vv)[(0, 0)];
                out[l + k - 1] = (vv.transpose() * ctx.lag_block(k) * ww)[(0, 0)];
            }
            out
        };
        let map_big_r = |vv: &DVector<f64>, ww: &DVector<f64>| -> DVector<f64> {
            let n = 2 * l;
            let mut out = DVector::zeros(n * n);
            for a in 0..n {
                for b in 0..n {
                    let val = if a < l && b < l {
                        (vv.transpose() * ctx.toe_block(b as isize - a as isize) * vv)[(0, 0)]
                    } else if a < l {
                        (vv.transpose() * ctx.toe_block((b - l) as isize - a as isize) * ww)[(0, 0)]
                    } else if b < l {
                        (vv.transpose() * ctx.toe_block((a - l) as isize - b as isize) * ww)[(0, 0)]
                    } else {
                        (ww.transpose() * ctx.toe_block(b as isize - a as isize) * ww)[(0, 0)]
                    };
                    out[a + b * n] = val;
                }
            }
            out
        };

        let h = 1e-4;
        let fd_pair = |map: &dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>, rows: usize| {
            let mut out = DMatrix::zeros(rows, 8);
            for i in 0..4 {
                let (mut vp, mut vm) = (v.clone(), v.clone());
                vp[i] += h;
                vm[i] -= h;
                out.set_column(i, &((map(&vp, &w) - map(&vm, &w)) / (2.0 * h)));
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp[i] += h;
                wm[i] -= h;
                out.set_column(4 + i, &((map(&v, &wp) - map(&v, &wm)) / (2.0 * h)));
            }
            out
        };

        let jr = jacobian_r(&ctx, &w, &v);
        assert!((jr - fd_pair(&map_r, 2 * l)).amax() < 1e-9);
        let jbr = jacobian_big_r(&ctx, &w, &v);
        assert!((jbr - fd_pair(&map_big_r, 4 * l * l)).amax() < 1e-9);
    }

    #[test]
    fn factored_forms_match_per_entry_rows() {
        for (d, l, seed) in [(3usize, 2usize, 10u64), (4, 3, 11), (2, 4, 12), (5, 1, 13)] {
            let ctx = random_context(d, l, seed, CondLimit::new(20.0).unwrap());
            let mut rng = ChaCha12Rng::seed_from_u64(seed + 100);
            let v = random_unit(d, &mut rng);
            let w = random_unit(d, &mut rng);
            assert!((jacobian_q(&ctx, &v) - jacobian_q_factored(&ctx, &v)).amax() < 1e-12);
            assert!((jacobian_big_q(&ctx, &v) - jacobian_big_q_factored(&ctx, &v)).amax() < 1e-12);
            assert!((jacobian_r(&ctx, &w, &v) - jacobian_r_factored(&ctx, &w, &v)).amax() < 1e-12);
        }
    }

    #[test]
    fn factored_stacked_gram_matches_on_symmetric_covariances() {
        // The factorization orients the cross blocks by the opposite lag
        // sign, so agreement with the per-entry rows is expected exactly on
        // covariance sets whose every lag matrix is symmetric.
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        for (d, l) in [(3usize, 2usize), (4, 3)] {
            let sigmas: Vec<DMatrix<f64>> = (0..=l)
                .map(|tau| {
                    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let scale = 1.0 / (tau as f64 + 1.0);
                    (&a + a.transpose()) * 0.5 * scale
                })
                .collect();
            let cov = LagCovSet::from_sigmas(sigmas, CondLimit::INFINITE).unwrap();
            let ctx = StatsContext::forward(&cov);
            let v = random_unit(d, &mut rng);
            let w = random_unit(d, &mut rng);
            let diff =
                (jacobian_big_r(&ctx, &w, &v) - jacobian_big_r_factored(&ctx, &w, &v)).amax();
            assert!(diff < 1e-12, "D={d} L={l} diff {diff}");
        }
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        for (seed, cond) in [(31u64, CondLimit::INFINITE), (32, CondLimit::new(30.0).unwrap())] {
            let ctx = random_context(4, 3, seed, cond);
            let mut rng = ChaCha12Rng::seed_from_u64(seed + 7);
            let v = random_unit(4, &mut rng);
            let w = random_unit(4, &mut rng);
            let (av, aw) = analytic_gradient(&ctx, &w, &v).unwrap();
            let (fv, fw) = finite_diff_gradient(&ctx, &w, &v, 1e-6).unwrap();
            let rel = ((&av - &fv).norm_squared() + (&aw - &fw).norm_squared()).sqrt()
                / (av.norm_squared() + aw.norm_squared()).sqrt().max(1e-12);
            assert!(rel < 1e-6, "relative gradient error {rel}");
        }
    }

    #[test]
    fn combined_gradient_sums_both_directions() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let t = 400;
        let data = DMatrix::from_fn(4, t, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = MultiSeries::from_data(data).unwrap().centered();
        let cov =
            LagCovSet::estimate(&x, 2, CondLimit::INFINITE, EstimationWindow::Trailing).unwrap();
        let fwd = StatsContext::forward(&cov);
        let rev = StatsContext::reversed(&cov);
        let pair = ProjectionPair::new(random_unit(4, &mut rng), random_unit(4, &mut rng)).unwrap();

        let got = combined_gradient(&pair, &fwd, &rev, GradientMethod::Analytic).unwrap();
        // Reference: central differences of the summed objective.
        let objective = |w: &DVector<f64>, v: &DVector<f64>| -> f64 {
            fwd.stats(w, v).unwrap().g_raw + rev.stats(v, w).unwrap().g_raw
        };
        let h = 1e-6;
        let mut ref_w = DVector::zeros(4);
        let mut ref_v = DVector::zeros(4);
        for i in 0..4 {
            let (mut wp, mut wm) = (pair.w.clone(), pair.w.clone());
            wp[i] += h;
            wm[i] -= h;
            ref_w[i] = (objective(&wp, &pair.v) - objective(&wm, &pair.v)) / (2.0 * h);
            let (mut vp, mut vm) = (pair.v.clone(), pair.v.clone());
            vp[i] += h;
            vm[i] -= h;
            ref_v[i] = (objective(&pair.w, &vp) - objective(&pair.w, &vm)) / (2.0 * h);
        }
        assert!((&got.grad_w - ref_w).amax() < 1e-6);
        assert!((&got.grad_v - ref_v).amax() < 1e-6);
    }

    #[test]
    fn gradient_has_no_radial_component() {
        // The score is invariant under separate rescaling of each filter, so
        // its gradient is orthogonal to the filter itself.
        let ctx = random_context(5, 2, 51, CondLimit::new(40.0).unwrap());
        let mut rng = ChaCha12Rng::seed_from_u64(52);
        for _ in 0..5 {
            let v = random_unit(5, &mut rng);
            let w = random_unit(5, &mut rng);
            let (gv, gw) = analytic_gradient(&ctx, &w, &v).unwrap();
            assert!(v.dot(&gv).abs() < 1e-10, "radial in driven {}", v.dot(&gv));
            assert!(w.dot(&gw).abs() < 1e-10, "radial in driving {}", w.dot(&gw));
        }
    }
}
