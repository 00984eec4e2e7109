//! Lagged covariance estimation and the block matrices built from it.
//!
//! The causal-strength score is a function of the lagged covariances
//! `Σ(τ) = E{x(t)x(t−τ)ᵀ}` for `τ = 0..L`. Two derived structures feed the
//! closed form: the block-diagonal matrix `Σ_{1:L} = diag(Σ(1), …, Σ(L))` and
//! the `LD×LD` block Toeplitz matrix `Σ̃` whose `(i, j)` block is `Σ(i−j)`,
//! with `Σ(−τ) := Σ(τ)ᵀ`. Both may be ridge-regularized so that their
//! condition number does not exceed a configured limit; the ridge is stored
//! with the set so downstream consumers see the regularized blocks.

use nalgebra::{DMatrix, DMatrixView};

use crate::series::MultiSeries;
use crate::{real, Error, Result, Scalar};

/// Sample range convention for lagged covariance sums.
///
/// `Trailing` restricts every lag to the samples `t = L+1..T` so that full and
/// reduced prediction models are compared on identical sample sets; it is the
/// production default. `ZeroPadded` sums over all available pairs for each
/// lag with a common divisor, which is the convention under which the
/// closed-form score coincides exactly with least squares on a zero-padded
/// design matrix, and under which time reversal corresponds exactly to
/// transposing each `Σ(τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EstimationWindow {
    #[default]
    Trailing,
    ZeroPadded,
}

/// Upper bound on the condition number of the block covariance matrices.
///
/// Values must exceed 1; `CondLimit::INFINITE` disables regularization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondLimit(f64);

impl CondLimit {
    pub const INFINITE: CondLimit = CondLimit(f64::INFINITY);

    pub fn new(c: f64) -> Result<Self> {
        if c.is_nan() || c <= 1.0 {
            return Err(Error::InvalidConditionLimit(c));
        }
        Ok(Self(c))
    }

    pub fn value(&self) -> f64 {
        self.0
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_infinite()
    }
}

impl Default for CondLimit {
    fn default() -> Self {
        Self::INFINITE
    }
}

/// Estimates `Σ(τ) = E{x(t)x(t−τ)ᵀ}` from a mean-centered series.
///
/// With the `Trailing` window the sum runs over `t = max_lag..T−1` (0-based)
/// with divisor `T − max_lag`, identically for every `τ ≤ max_lag`. With
/// `ZeroPadded` the sum runs over all pairs available for the given lag with
/// divisor `T`. The zero-lag estimate is symmetrized as `(M + Mᵀ)/2`.
pub fn estimate_lagged_covariance<T: Scalar>(
    x: &MultiSeries<T>,
    tau: usize,
    max_lag: usize,
    window: EstimationWindow,
) -> Result<DMatrix<T>> {
    if tau > max_lag {
        return Err(Error::LagOutOfRange { lag: tau, max: max_lag });
    }
    let t = x.samples();
    if t < max_lag + 2 {
        return Err(Error::InsufficientSamples { needed: max_lag + 2, got: t });
    }
    let data = x.data();
    let (lead, lagged, divisor) = match window {
        EstimationWindow::Trailing => (
            data.columns(max_lag, t - max_lag),
            data.columns(max_lag - tau, t - max_lag),
            real::<T>((t - max_lag) as f64),
        ),
        EstimationWindow::ZeroPadded => {
            (data.columns(tau, t - tau), data.columns(0, t - tau), real::<T>(t as f64))
        }
    };
    let mut m = lead * lagged.transpose();
    m /= divisor;
    if tau == 0 {
        let mt = m.transpose();
        m = (m + mt) * real::<T>(0.5);
    }
    Ok(m)
}

/// Assembles `(Σ_{1:L}, Σ̃)` from the estimates `Σ(0), …, Σ(L)`.
///
/// `Σ_{1:L}` is block diagonal over `Σ(1)..Σ(L)`. `Σ̃` has block `(i, j)`
/// equal to `Σ(i−j)`, so it only involves `Σ(0)..Σ(L−1)`; its symmetry is
/// exact because the `(j, i)` block is written as the transpose of the
/// `(i, j)` block.
pub fn assemble_block_matrices<T: Scalar>(
    sigmas: &[DMatrix<T>],
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if sigmas.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "need Σ(0) and at least Σ(1), got {} matrices",
            sigmas.len()
        )));
    }
    let d = sigmas[0].nrows();
    for (i, s) in sigmas.iter().enumerate() {
        if s.nrows() != d || s.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "Σ({i}) is {}x{}, expected {d}x{d}",
                s.nrows(),
                s.ncols()
            )));
        }
    }
    let l = sigmas.len() - 1;
    let mut block_diag = DMatrix::<T>::zeros(l * d, l * d);
    for k in 1..=l {
        block_diag.view_mut(((k - 1) * d, (k - 1) * d), (d, d)).copy_from(&sigmas[k]);
    }
    let mut block_toeplitz = DMatrix::<T>::zeros(l * d, l * d);
    for i in 0..l {
        for j in 0..=i {
            let s = &sigmas[i - j];
            block_toeplitz.view_mut((i * d, j * d), (d, d)).copy_from(s);
            if i != j {
                block_toeplitz.view_mut((j * d, i * d), (d, d)).copy_from(&s.transpose());
            }
        }
    }
    Ok((block_diag, block_toeplitz))
}

/// Adds the smallest ridge `σ²I` needed to bring the condition number of `m`
/// down to `c`, returning the regularized matrix and `σ²`.
///
/// `σ² = (λ₁ − λ_min·c)/(c − 1)` with extreme eigenvalues for symmetric input
/// and extreme singular values otherwise; a negative smallest eigenvalue is
/// clamped to zero so the ridge stays positive. For symmetric positive
/// semidefinite input the result's condition number equals `c` exactly; for
/// non-normal input the singular-value formula is a safeguard rather than an
/// identity. Matrices already within the limit (and any matrix when `c` is
/// infinite) are returned unchanged with `σ² = 0`.
pub fn regularize_condition_number<T: Scalar>(
    m: &DMatrix<T>,
    c: CondLimit,
) -> Result<(DMatrix<T>, T)> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if c.is_infinite() || m.nrows() == 0 {
        return Ok((m.clone(), T::zero()));
    }
    let c_t = real::<T>(c.value());

    let scale = m.iter().fold(T::zero(), |a, x| a.max(x.abs()));
    let asym = (m - m.transpose()).iter().fold(T::zero(), |a, x| a.max(x.abs()));
    let symmetric = asym <= scale * real::<T>(1e-12);

    let (largest, smallest) = if symmetric {
        let sym = (m + m.transpose()) * real::<T>(0.5);
        let eigs = sym.symmetric_eigenvalues();
        let max = eigs.iter().fold(T::min_value().unwrap(), |a, x| a.max(*x));
        let min = eigs.iter().fold(T::max_value().unwrap(), |a, x| a.min(*x));
        (max, min)
    } else {
        let svals = m.clone().singular_values();
        let max = svals.iter().fold(T::zero(), |a, x| a.max(*x));
        let min = svals.iter().fold(T::max_value().unwrap(), |a, x| a.min(*x));
        (max, min)
    };

    if largest <= T::zero() {
        return Ok((m.clone(), T::zero()));
    }
    let smallest = smallest.max(T::zero());
    if smallest > T::zero() && largest / smallest <= c_t {
        return Ok((m.clone(), T::zero()));
    }
    let sigma2 = (largest - smallest * c_t) / (c_t - T::one());
    let mut out = m.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += sigma2;
    }
    Ok((out, sigma2))
}

/// Lagged covariance estimates together with their regularized block forms.
#[derive(Debug, Clone)]
pub struct LagCovSet<T: Scalar> {
    max_lag: usize,
    dim: usize,
    sigmas: Vec<DMatrix<T>>,
    block_diag: DMatrix<T>,
    block_toeplitz: DMatrix<T>,
    cond_limit: CondLimit,
    ridge_diag: T,
    ridge_toeplitz: T,
    window: EstimationWindow,
}

impl<T: Scalar> LagCovSet<T> {
    /// Estimates all lags `0..=max_lag` from a mean-centered series, assembles
    /// the block matrices, and regularizes them to the condition limit.
    pub fn estimate(
        x: &MultiSeries<T>,
        max_lag: usize,
        cond_limit: CondLimit,
        window: EstimationWindow,
    ) -> Result<Self> {
        if max_lag == 0 {
            return Err(Error::LagOutOfRange { lag: 0, max: 0 });
        }
        if x.samples() <= 3 * max_lag {
            return Err(Error::InsufficientSamples { needed: 3 * max_lag + 1, got: x.samples() });
        }
        let sigmas: Vec<DMatrix<T>> = (0..=max_lag)
            .map(|tau| estimate_lagged_covariance(x, tau, max_lag, window))
            .collect::<Result<_>>()?;
        Self::from_sigmas_with_window(sigmas, cond_limit, window)
    }

    /// Builds a set from externally supplied `Σ(0), …, Σ(L)`.
    ///
    /// `Σ(0)` must be symmetric to within `1e−10` relative tolerance; it is
    /// symmetrized exactly before assembly.
    pub fn from_sigmas(sigmas: Vec<DMatrix<T>>, cond_limit: CondLimit) -> Result<Self> {
        Self::from_sigmas_with_window(sigmas, cond_limit, EstimationWindow::Trailing)
    }

    fn from_sigmas_with_window(
        mut sigmas: Vec<DMatrix<T>>,
        cond_limit: CondLimit,
        window: EstimationWindow,
    ) -> Result<Self> {
        if sigmas.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "need Σ(0) and at least Σ(1), got {} matrices",
                sigmas.len()
            )));
        }
        let d = sigmas[0].nrows();
        let scale = sigmas[0].iter().fold(T::zero(), |a, x| a.max(x.abs()));
        let asym =
            (&sigmas[0] - sigmas[0].transpose()).iter().fold(T::zero(), |a, x| a.max(x.abs()));
        if asym > scale * real::<T>(1e-10) && scale > T::zero() {
            return Err(Error::ShapeMismatch("Σ(0) is not symmetric".into()));
        }
        let sym0 = (&sigmas[0] + sigmas[0].transpose()) * real::<T>(0.5);
        sigmas[0] = sym0;

        let (raw_diag, raw_toeplitz) = assemble_block_matrices(&sigmas)?;
        let (block_diag, ridge_diag) = regularize_condition_number(&raw_diag, cond_limit)?;
        let (block_toeplitz, ridge_toeplitz) =
            regularize_condition_number(&raw_toeplitz, cond_limit)?;
        Ok(Self {
            max_lag: sigmas.len() - 1,
            dim: d,
            sigmas,
            block_diag,
            block_toeplitz,
            cond_limit,
            ridge_diag,
            ridge_toeplitz,
            window,
        })
    }

    /// The covariance set of the time-reversed process: `Σ_rev(τ) = Σ(τ)ᵀ`.
    ///
    /// The block spectra are unchanged by reversal, so the stored ridge values
    /// are carried over rather than recomputed.
    pub fn reversed(&self) -> Self {
        let sigmas: Vec<DMatrix<T>> = self.sigmas.iter().map(|s| s.transpose()).collect();
        let (raw_diag, raw_toeplitz) =
            assemble_block_matrices(&sigmas).expect("shapes preserved by transposition");
        let mut block_diag = raw_diag;
        let mut block_toeplitz = raw_toeplitz;
        for i in 0..block_diag.nrows() {
            block_diag[(i, i)] += self.ridge_diag;
            block_toeplitz[(i, i)] += self.ridge_toeplitz;
        }
        Self {
            max_lag: self.max_lag,
            dim: self.dim,
            sigmas,
            block_diag,
            block_toeplitz,
            cond_limit: self.cond_limit,
            ridge_diag: self.ridge_diag,
            ridge_toeplitz: self.ridge_toeplitz,
            window: self.window,
        }
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw (unregularized) `Σ(τ)`.
    pub fn sigma(&self, tau: usize) -> &DMatrix<T> {
        &self.sigmas[tau]
    }

    /// Regularized `Σ_{1:L}`.
    pub fn block_diag(&self) -> &DMatrix<T> {
        &self.block_diag
    }

    /// Regularized `Σ̃`.
    pub fn block_toeplitz(&self) -> &DMatrix<T> {
        &self.block_toeplitz
    }

    pub fn cond_limit(&self) -> CondLimit {
        self.cond_limit
    }

    /// Ridge values applied to `(Σ_{1:L}, Σ̃)`.
    pub fn ridge(&self) -> (T, T) {
        (self.ridge_diag, self.ridge_toeplitz)
    }

    pub fn window(&self) -> EstimationWindow {
        self.window
    }

    /// Regularized diagonal block `Σ(lag) + σ²I` of `Σ_{1:L}`, `lag ∈ 1..=L`.
    pub fn diag_block(&self, lag: usize) -> DMatrixView<'_, T> {
        assert!(lag >= 1 && lag <= self.max_lag, "lag {lag} outside 1..={}", self.max_lag);
        let d = self.dim;
        self.block_diag.view(((lag - 1) * d, (lag - 1) * d), (d, d))
    }

    /// Regularized block of `Σ̃` at lag difference `delta ∈ −(L−1)..=L−1`.
    ///
    /// This is `Σ(delta)` (with `Σ(−τ) = Σ(τ)ᵀ`), plus the Toeplitz ridge when
    /// `delta = 0`.
    pub fn toeplitz_block(&self, delta: isize) -> DMatrixView<'_, T> {
        let l = self.max_lag as isize;
        assert!(delta.abs() < l, "lag difference {delta} outside ±{}", l - 1);
        let d = self.dim;
        let (bi, bj) = if delta >= 0 { (delta as usize, 0) } else { (0, (-delta) as usize) };
        self.block_toeplitz.view((bi * d, bj * d), (d, d))
    }
}
