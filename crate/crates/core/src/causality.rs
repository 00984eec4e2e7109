//! Closed-form causal strength between two linear projections.
//!
//! Given filters `w` (driving) and `v` (driven), the components are
//! `y(t) = wᵀx(t)` and `z(t) = vᵀx(t)`. The strength of the influence of `y`
//! on `z` is `𝒢 = 1 − Φ_f/Φ_r`, where `Φ_r` is the residual variance of the
//! best linear predictor of `z(t)` from its own `L` past values and `Φ_f`
//! additionally admits the past of `y`. Both residuals are evaluated in
//! closed form from the lagged covariances of `x`, so no per-candidate
//! regression over the samples is needed while optimizing over filters.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::covariance::{EstimationWindow, LagCovSet};
use crate::series::MultiSeries;
use crate::{real, Error, Result, Scalar};

/// A pair of projection filters: `w` extracts the driving component,
/// `v` the driven one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair<T: Scalar> {
    pub w: DVector<T>,
    pub v: DVector<T>,
}

impl<T: Scalar> ProjectionPair<T> {
    pub fn new(w: DVector<T>, v: DVector<T>) -> Result<Self> {
        if w.len() != v.len() {
            return Err(Error::ShapeMismatch(format!(
                "filter lengths differ: {} vs {}",
                w.len(),
                v.len()
            )));
        }
        if w.norm() == T::zero() || v.norm() == T::zero() {
            return Err(Error::ZeroPowerFilter);
        }
        Ok(Self { w, v })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    /// Both filters rescaled to unit norm. The strength score is invariant
    /// under filter scaling, so this is a pure normalization.
    pub fn unit(&self) -> Self {
        Self { w: self.w.normalize(), v: self.v.normalize() }
    }

    /// Flips the sign of each filter so that its largest-magnitude entry is
    /// positive, removing the residual sign ambiguity of the optimum.
    pub fn canonical_signs(&self) -> Self {
        Self { w: canonical_sign(&self.w), v: canonical_sign(&self.v) }
    }
}

pub(crate) fn canonical_sign<T: Scalar>(f: &DVector<T>) -> DVector<T> {
    let mut best = 0usize;
    for i in 1..f.len() {
        if f[i].abs() > f[best].abs() {
            best = i;
        }
    }
    if f[best] < T::zero() {
        -f
    } else {
        f.clone()
    }
}

/// Prediction filters recovered alongside the strength score.
///
/// `reduced` holds the `L` coefficients of the own-history model of `z`;
/// `full_own` and `full_driver` hold the coefficients of the two-signal
/// model on the lags of `z` and of `y` respectively.
#[derive(Debug, Clone)]
pub struct WienerFilters<T: Scalar> {
    pub reduced: DVector<T>,
    pub full_own: DVector<T>,
    pub full_driver: DVector<T>,
}

/// Full evaluation of the closed-form score at one filter pair.
#[derive(Debug, Clone)]
pub struct CausalityStats<T: Scalar> {
    /// Variance of the driven component, `vᵀΣ(0)v` on the raw zero-lag
    /// covariance.
    pub sigma_z2: T,
    /// Covariances of `z(t)` with its own lags `1..=L`.
    pub q: DVector<T>,
    /// Gram matrix of the own-history predictors.
    pub q_mat: DMatrix<T>,
    /// Covariances of `z(t)` with the stacked `z`/`y` lag predictors.
    pub r: DVector<T>,
    /// Gram matrix of the stacked predictors.
    pub r_mat: DMatrix<T>,
    /// Residual variance of the two-signal model.
    pub phi_f: T,
    /// Residual variance of the own-history model.
    pub phi_r: T,
    /// Strength score clamped to `[0, 1]`.
    pub g: T,
    /// Unclamped value of `1 − Φ_f/Φ_r`.
    pub g_raw: T,
    pub filters: WienerFilters<T>,
    /// True when a Gram matrix was not positive definite and an
    /// eigendecomposition pseudoinverse stood in for the Cholesky solve.
    pub pinv_fallback: bool,
}

/// Covariance blocks in the orientation required for one direction of time.
///
/// The blocks stored here include any ridge applied to the assembled block
/// matrices, so every quantity derived from a context (scores, Jacobians,
/// gradients) sees the same effective covariances. `forward` reads the blocks
/// as estimated; `reversed` reads them in the time-reversed orientation,
/// which replaces every `Σ(τ)` by its transpose while the ridge terms are
/// unchanged.
#[derive(Debug, Clone)]
pub struct StatsContext<T: Scalar> {
    sigma0: DMatrix<T>,
    lag_blocks: Vec<DMatrix<T>>,
    toe_blocks: Vec<DMatrix<T>>,
    max_lag: usize,
    dim: usize,
}

impl<T: Scalar> StatsContext<T> {
    pub fn forward(cov: &LagCovSet<T>) -> Self {
        let l = cov.max_lag();
        let lag_blocks = (1..=l).map(|k| cov.diag_block(k).into_owned()).collect();
        let toe_blocks = (-(l as isize - 1)..=(l as isize - 1))
            .map(|d| cov.toeplitz_block(d).into_owned())
            .collect();
        Self { sigma0: cov.sigma(0).clone(), lag_blocks, toe_blocks, max_lag: l, dim: cov.dim() }
    }

    pub fn reversed(cov: &LagCovSet<T>) -> Self {
        let l = cov.max_lag();
        let lag_blocks = (1..=l).map(|k| cov.diag_block(k).transpose()).collect();
        let toe_blocks = (-(l as isize - 1)..=(l as isize - 1))
            .map(|d| cov.toeplitz_block(-d).into_owned())
            .collect();
        Self { sigma0: cov.sigma(0).clone(), lag_blocks, toe_blocks, max_lag: l, dim: cov.dim() }
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw symmetrized zero-lag covariance (no ridge).
    pub fn sigma0(&self) -> &DMatrix<T> {
        &self.sigma0
    }

    /// Effective `Σ(lag) + σ²_b I` for `lag ∈ 1..=L`.
    pub fn lag_block(&self, lag: usize) -> &DMatrix<T> {
        &self.lag_blocks[lag - 1]
    }

    /// Effective Toeplitz block at lag difference `delta ∈ −(L−1)..=L−1`.
    pub fn toe_block(&self, delta: isize) -> &DMatrix<T> {
        let idx = delta + self.max_lag as isize - 1;
        &self.toe_blocks[idx as usize]
    }

    /// Assembles `diag(A_1, …, A_L)` from the effective lag blocks.
    pub fn block_diag_effective(&self) -> DMatrix<T> {
        let (l, d) = (self.max_lag, self.dim);
        let mut out = DMatrix::zeros(l * d, l * d);
        for k in 1..=l {
            out.view_mut(((k - 1) * d, (k - 1) * d), (d, d)).copy_from(self.lag_block(k));
        }
        out
    }

    /// Assembles the effective block Toeplitz matrix with block `(i, j)`
    /// equal to the effective block at lag difference `i − j`.
    pub fn block_toeplitz_effective(&self) -> DMatrix<T> {
        let (l, d) = (self.max_lag, self.dim);
        let mut out = DMatrix::zeros(l * d, l * d);
        for i in 0..l {
            for j in 0..l {
                out.view_mut((i * d, j * d), (d, d))
                    .copy_from(self.toe_block(i as isize - j as isize));
            }
        }
        out
    }

    /// Evaluates the score and every intermediate for the given filters.
    pub fn stats(&self, driving: &DVector<T>, driven: &DVector<T>) -> Result<CausalityStats<T>> {
        let l = self.max_lag;
        let d = self.dim;
        if driving.len() != d || driven.len() != d {
            return Err(Error::ShapeMismatch(format!(
                "filters of length {}/{} against {d}-channel covariances",
                driving.len(),
                driven.len()
            )));
        }

        let sigma_z2 = quad(driven, &self.sigma0, driven);

        let mut q = DVector::zeros(l);
        let mut c = DVector::zeros(l);
        for k in 1..=l {
            let a = self.lag_block(k);
            q[k - 1] = quad(driven, a, driven);
            c[k - 1] = quad(driven, a, driving);
        }

        let mut q_mat = DMatrix::zeros(l, l);
        let mut c_mat = DMatrix::zeros(l, l);
        let mut w_mat = DMatrix::zeros(l, l);
        for i in 0..l {
            for j in i..l {
                let b = self.toe_block(j as isize - i as isize);
                // Q and W are symmetric; mirror the upper triangle so the
                // assembled matrices are bit-symmetric.
                let qv = quad(driven, b, driven);
                q_mat[(i, j)] = qv;
                q_mat[(j, i)] = qv;
                let wv = quad(driving, b, driving);
                w_mat[(i, j)] = wv;
                w_mat[(j, i)] = wv;
            }
            for j in 0..l {
                let b = self.toe_block(j as isize - i as isize);
                c_mat[(i, j)] = quad(driven, b, driving);
            }
        }

        let mut r_mat = DMatrix::zeros(2 * l, 2 * l);
        r_mat.view_mut((0, 0), (l, l)).copy_from(&q_mat);
        r_mat.view_mut((0, l), (l, l)).copy_from(&c_mat);
        r_mat.view_mut((l, 0), (l, l)).copy_from(&c_mat.transpose());
        r_mat.view_mut((l, l), (l, l)).copy_from(&w_mat);
        let mut r = DVector::zeros(2 * l);
        r.rows_mut(0, l).copy_from(&q);
        r.rows_mut(l, l).copy_from(&c);

        let (h, pinv_q) = solve_spd(&q_mat, &q);
        let (gf, pinv_r) = solve_spd(&r_mat, &r);
        let phi_r = sigma_z2 - q.dot(&h);
        let phi_f = sigma_z2 - r.dot(&gf);
        if !phi_r.is_finite() || !phi_f.is_finite() || phi_r <= T::zero() {
            return Err(Error::NonFiniteObjective);
        }
        let g_raw = T::one() - phi_f / phi_r;
        let g = g_raw.clamp(T::zero(), T::one());

        Ok(CausalityStats {
            sigma_z2,
            q,
            q_mat,
            r,
            r_mat,
            phi_f,
            phi_r,
            g,
            g_raw,
            filters: WienerFilters {
                reduced: h,
                full_own: gf.rows(0, l).into_owned(),
                full_driver: gf.rows(l, l).into_owned(),
            },
            pinv_fallback: pinv_q || pinv_r,
        })
    }
}

fn quad<T: Scalar>(a: &DVector<T>, m: &DMatrix<T>, b: &DVector<T>) -> T {
    (a.transpose() * m * b)[(0, 0)]
}

/// Cholesky solve with an eigendecomposition pseudoinverse fallback for
/// Gram matrices that are singular or slightly indefinite. The second value
/// reports whether the fallback was used.
fn solve_spd<T: Scalar>(m: &DMatrix<T>, b: &DVector<T>) -> (DVector<T>, bool) {
    if let Some(chol) = m.clone().cholesky() {
        return (chol.solve(b), false);
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(T::zero(), |a, x| a.max(x.abs()));
    let tol = max * real::<T>(m.nrows() as f64) * T::default_epsilon();
    let mut y = eig.eigenvectors.transpose() * b;
    for i in 0..y.len() {
        let lam = eig.eigenvalues[i];
        y[i] = if lam.abs() > tol { y[i] / lam } else { T::zero() };
    }
    (&eig.eigenvectors * y, true)
}

/// Strength of the influence of `wᵀx` on `vᵀx`, with all intermediates.
pub fn latent_stats<T: Scalar>(
    pair: &ProjectionPair<T>,
    cov: &LagCovSet<T>,
) -> Result<CausalityStats<T>> {
    StatsContext::forward(cov).stats(&pair.w, &pair.v)
}

/// Strength of the influence of `vᵀx` on `wᵀx` under time reversal.
///
/// A genuine directed interaction weakens when time runs backwards, so the
/// optimizer rewards pairs whose forward score and whose reversed
/// opposite-direction score are both large.
pub fn time_reversed_stats<T: Scalar>(
    pair: &ProjectionPair<T>,
    cov: &LagCovSet<T>,
) -> Result<CausalityStats<T>> {
    StatsContext::reversed(cov).stats(&pair.v, &pair.w)
}

/// Regression-based strength of `driving → driven` computed directly on the
/// two scalar series, with no covariance shortcut.
///
/// Fits the own-history and two-signal predictors by least squares and
/// returns `1 − Φ_f/Φ_r`. With the `ZeroPadded` window this agrees with the
/// closed form evaluated on covariances estimated under the same window, up
/// to solver roundoff; with `Trailing` the two differ by edge terms of order
/// `L/T`.
pub fn causality_direct<T: Scalar>(
    driving: &DVector<T>,
    driven: &DVector<T>,
    max_lag: usize,
    window: EstimationWindow,
) -> Result<T> {
    let t = driving.len();
    if driven.len() != t {
        return Err(Error::ShapeMismatch(format!(
            "series lengths differ: {} vs {}",
            t,
            driven.len()
        )));
    }
    if max_lag == 0 {
        return Err(Error::LagOutOfRange { lag: 0, max: 0 });
    }
    if t < max_lag + 2 {
        return Err(Error::InsufficientSamples { needed: max_lag + 2, got: t });
    }
    let l = max_lag;
    let (rows, first_time) = match window {
        EstimationWindow::Trailing => (t - l, l as isize),
        EstimationWindow::ZeroPadded => (t + l, 0),
    };
    let at = |series: &DVector<T>, time: isize| -> T {
        if time >= 0 && (time as usize) < t {
            series[time as usize]
        } else {
            T::zero()
        }
    };
    let mut target = DVector::zeros(rows);
    let mut full = DMatrix::zeros(rows, 2 * l);
    for k in 0..rows {
        let tk = first_time + k as isize;
        target[k] = at(driven, tk);
        for lag in 1..=l {
            full[(k, lag - 1)] = at(driven, tk - lag as isize);
            full[(k, l + lag - 1)] = at(driving, tk - lag as isize);
        }
    }
    let reduced = full.columns(0, l).into_owned();
    let phi_r = residual_variance(&reduced, &target, "own-history regression")?;
    let phi_f = residual_variance(&full, &target, "two-signal regression")?;
    if !phi_r.is_finite() || !phi_f.is_finite() || phi_r <= T::zero() {
        return Err(Error::NonFiniteObjective);
    }
    Ok((T::one() - phi_f / phi_r).clamp(T::zero(), T::one()))
}

fn residual_variance<T: Scalar>(
    design: &DMatrix<T>,
    target: &DVector<T>,
    context: &'static str,
) -> Result<T> {
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(T::zero(), |a, x| a.max(*x));
    let tol = smax * real::<T>(design.nrows().max(design.ncols()) as f64) * T::default_epsilon();
    let smin = svd.singular_values.iter().fold(smax, |a, x| a.min(*x));
    if smax == T::zero() || smin <= tol {
        return Err(Error::RankDeficientDesign { context });
    }
    let coef = svd.solve(target, tol).map_err(|_| Error::RankDeficientDesign { context })?;
    let resid = target - design * coef;
    Ok(resid.norm_squared() / real::<T>(design.nrows() as f64))
}

/// All ordered channel-to-channel strengths of a multichannel series.
///
/// Entry `(i, j)` is the strength of channel `i` driving channel `j`; the
/// diagonal is zero. Channels are centered before regression.
pub fn pairwise_causality_matrix<T: Scalar + Send + Sync>(
    x: &MultiSeries<T>,
    max_lag: usize,
    window: EstimationWindow,
) -> Result<DMatrix<T>> {
    let d = x.channels();
    let centered = x.centered();
    let chans: Vec<DVector<T>> = (0..d).map(|i| centered.channel(i)).collect();
    let pairs: Vec<(usize, usize)> =
        (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let entries: Vec<((usize, usize), T)> = pairs
        .par_iter()
        .map(|&(i, j)| causality_direct(&chans[i], &chans[j], max_lag, window).map(|g| ((i, j), g)))
        .collect::<Result<_>>()?;
    let mut out = DMatrix::zeros(d, d);
    for ((i, j), g) in entries {
        out[(i, j)] = g;
    }
    Ok(out)
}
