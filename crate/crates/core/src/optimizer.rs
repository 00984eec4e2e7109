//! Search for filter pairs that maximize causal strength, one pair at a time.
//!
//! Each pair is found by grouped coordinate ascent: holding the driving
//! filter fixed, the driven filter is moved to maximize the combined
//! objective `𝒢(w, v) + 𝒢ᵗʳ(v, w)`, then the roles swap, until neither score
//! moves by more than the tolerance. The inner maximizations run projected
//! gradient ascent on the unit sphere with a backtracking line search, since
//! the score is invariant to filter scale. Found pairs are removed from the
//! observations by deflation before the next search starts.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::causality::{CausalityStats, ProjectionPair, StatsContext};
use crate::covariance::{CondLimit, EstimationWindow, LagCovSet};
use crate::deflation::deflate;
use crate::gradient::{analytic_gradient, GradientMethod};
use crate::series::MultiSeries;
use crate::{real, Error, Result, Scalar};

/// Settings for the decomposition search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Model order of the predictors, in samples.
    pub max_lag: usize,
    /// Number of driving/driven pairs to extract.
    pub pairs: usize,
    /// Condition-number cap applied to the block covariance matrices.
    pub cond_limit: CondLimit,
    /// Sample range convention for covariance estimation.
    pub window: EstimationWindow,
    /// Maximum alternations between the two filters.
    pub outer_max_iters: usize,
    /// Iteration cap of each inner sphere ascent.
    pub inner_max_iters: usize,
    /// Budget of score evaluations per inner ascent.
    pub inner_max_evals: usize,
    /// Convergence threshold on the change of both scores across one
    /// alternation.
    pub tol: f64,
    /// Independent random initializations per pair; the best final objective
    /// wins.
    pub restarts: usize,
    /// Standard deviation of the Gaussian filter initialization.
    pub init_scale: f64,
    /// Seed for the initialization stream.
    pub seed: u64,
    /// How ascent directions are computed.
    pub gradient: GradientMethod,
    /// Whether deflation also removes the instantaneous component, not just
    /// its delayed copies.
    pub deflate_current: bool,
    /// Report component series against the original observations instead of
    /// the deflated data the pair was found on.
    pub report_against_original: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_lag: 3,
            pairs: 1,
            cond_limit: CondLimit::INFINITE,
            window: EstimationWindow::Trailing,
            outer_max_iters: 50,
            inner_max_iters: 4000,
            inner_max_evals: 10_000,
            tol: 1e-6,
            restarts: 1,
            init_scale: 1.0,
            seed: 0,
            gradient: GradientMethod::default(),
            deflate_current: true,
            report_against_original: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_lag == 0 {
            return Err(Error::LagOutOfRange { lag: 0, max: 0 });
        }
        if self.pairs == 0
            || self.outer_max_iters == 0
            || self.inner_max_iters == 0
            || self.inner_max_evals == 0
            || self.restarts == 0
        {
            return Err(Error::ShapeMismatch(
                "pairs, iteration caps, and restarts must all be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0) || !(self.init_scale > 0.0) {
            return Err(Error::ShapeMismatch(
                "tolerance and initialization scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Progress record of one pair search.
#[derive(Debug, Clone)]
pub struct ConvergenceTrace<T: Scalar> {
    /// Alternations performed before the stopping rule fired.
    pub outer_iterations: usize,
    /// Whether both score changes fell below tolerance within the cap.
    pub converged: bool,
    /// `(forward, reversed)` scores after each alternation.
    pub history: Vec<(T, T)>,
    /// Total score evaluations spent, including line searches and
    /// finite-difference probes.
    pub evaluations: usize,
}

/// One extracted pair with everything measured about it.
#[derive(Debug, Clone)]
pub struct PairResult<T: Scalar> {
    pub pair: ProjectionPair<T>,
    /// Forward-direction closed-form evaluation on this stage's covariances.
    pub stats: CausalityStats<T>,
    /// Reversed-direction evaluation of the same pair.
    pub reversed: CausalityStats<T>,
    /// Driving component series `wᵀx`.
    pub driving: DVector<T>,
    /// Driven component series `vᵀx`.
    pub driven: DVector<T>,
    /// Per-channel regression coefficients of the observations on the
    /// driving component.
    pub pattern_driving: DVector<T>,
    /// Per-channel regression coefficients on the driven component.
    pub pattern_driven: DVector<T>,
    pub trace: ConvergenceTrace<T>,
}

/// Full result of a multi-pair decomposition.
#[derive(Debug, Clone)]
pub struct Decomposition<T: Scalar> {
    pub pairs: Vec<PairResult<T>>,
    /// Number of pairs asked for; fewer are returned when the residual data
    /// loses rank before the request is filled.
    pub requested_pairs: usize,
    pub channels: usize,
    pub samples: usize,
    pub config: OptimizerConfig,
}

impl<T: Scalar> Decomposition<T> {
    /// True when fewer pairs were extracted than requested.
    pub fn truncated(&self) -> bool {
        self.pairs.len() < self.requested_pairs
    }
}

/// Regression coefficients of each observation channel on the component
/// `fᵀx`: `Σ(0)f / (fᵀΣ(0)f)`.
pub fn forward_model<T: Scalar>(filter: &DVector<T>, sigma0: &DMatrix<T>) -> Result<DVector<T>> {
    let power = (filter.transpose() * sigma0 * filter)[(0, 0)];
    if !(power > T::zero()) {
        return Err(Error::ZeroPowerFilter);
    }
    Ok(sigma0 * filter / power)
}

/// One coordinate of the grouped ascent: the free filter, the fixed one, and
/// a budgeted evaluator of the combined objective restricted to that
/// coordinate.
struct CoordinateObjective<'a, T: Scalar> {
    fwd: &'a StatsContext<T>,
    rev: &'a StatsContext<T>,
    fixed: &'a DVector<T>,
    free_is_driven: bool,
    method: GradientMethod,
    evals: usize,
}

impl<'a, T: Scalar> CoordinateObjective<'a, T> {
    fn value(&mut self, u: &DVector<T>) -> Result<T> {
        self.evals += 2;
        if self.free_is_driven {
            Ok(self.fwd.stats(self.fixed, u)?.g_raw + self.rev.stats(u, self.fixed)?.g_raw)
        } else {
            Ok(self.fwd.stats(u, self.fixed)?.g_raw + self.rev.stats(self.fixed, u)?.g_raw)
        }
    }

    fn grad(&mut self, u: &DVector<T>) -> Result<DVector<T>> {
        match self.method {
            GradientMethod::Analytic => {
                self.evals += 2;
                if self.free_is_driven {
                    let (dv, _) = analytic_gradient(self.fwd, self.fixed, u)?;
                    let (_, dw) = analytic_gradient(self.rev, u, self.fixed)?;
                    Ok(dv + dw)
                } else {
                    let (_, dw) = analytic_gradient(self.fwd, u, self.fixed)?;
                    let (dv, _) = analytic_gradient(self.rev, self.fixed, u)?;
                    Ok(dw + dv)
                }
            }
            GradientMethod::FiniteDifference { step } => {
                let d = u.len();
                let mut g = DVector::zeros(d);
                for i in 0..d {
                    let h = real::<T>(step) * T::one().max(u[i].abs());
                    let mut plus = u.clone();
                    plus[i] += h;
                    let mut minus = u.clone();
                    minus[i] -= h;
                    g[i] = (self.value(&plus)? - self.value(&minus)?) / (h + h);
                }
                Ok(g)
            }
        }
    }
}

/// Projected gradient ascent on the unit sphere with Armijo backtracking.
///
/// Steps move along the tangent component of the gradient and renormalize;
/// the initial step length reuses the curvature of the previous accepted
/// move when it is trustworthy. Returns the final point and value.
fn ascend_on_sphere<T: Scalar>(
    obj: &mut CoordinateObjective<'_, T>,
    u0: &DVector<T>,
    cfg: &OptimizerConfig,
) -> Result<(DVector<T>, T)> {
    let c1 = real::<T>(1e-4);
    let half = real::<T>(0.5);
    let min_step = real::<T>(1e-14);
    let value_tol = real::<T>(cfg.tol * 1e-2);
    let grad_tol = real::<T>(1e-9);

    let mut u = u0.normalize();
    let mut f0 = obj.value(&u)?;
    let mut prev: Option<(DVector<T>, DVector<T>)> = None;

    for _ in 0..cfg.inner_max_iters {
        if obj.evals >= cfg.inner_max_evals {
            break;
        }
        let g = obj.grad(&u)?;
        let tangent = &g - &u * u.dot(&g);
        let tnorm = tangent.norm();
        if tnorm < grad_tol {
            break;
        }

        let mut step = match &prev {
            Some((pu, pt)) => {
                let s = &u - pu;
                let y = pt - &tangent;
                let denom = s.dot(&y);
                if denom > T::zero() {
                    (s.dot(&s) / denom).clamp(real::<T>(1e-4), real::<T>(1e2))
                } else {
                    T::one()
                }
            }
            None => T::one(),
        };

        let mut accepted = None;
        while step >= min_step {
            let raw = &u + &tangent * step;
            let norm = raw.norm();
            if norm > T::zero() {
                let cand = raw / norm;
                if let Ok(f1) = obj.value(&cand) {
                    if f1 >= f0 + c1 * step * tnorm * tnorm {
                        accepted = Some((cand, f1));
                        break;
                    }
                }
            }
            step *= half;
        }

        match accepted {
            Some((cand, f1)) => {
                prev = Some((u.clone(), tangent));
                let gain = f1 - f0;
                u = cand;
                f0 = f1;
                if gain < value_tol {
                    break;
                }
            }
            None => break,
        }
    }
    Ok((u, f0))
}

fn random_filter<T: Scalar>(d: usize, scale: f64, rng: &mut ChaCha12Rng) -> DVector<T> {
    DVector::from_fn(d, |_, _| real::<T>(rng.sample::<f64, _>(StandardNormal) * scale)).normalize()
}

fn optimize_single<T: Scalar>(
    fwd: &StatsContext<T>,
    rev: &StatsContext<T>,
    cfg: &OptimizerConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(ProjectionPair<T>, ConvergenceTrace<T>)> {
    let d = fwd.dim();
    let mut w = random_filter::<T>(d, cfg.init_scale, rng);
    let mut v = random_filter::<T>(d, cfg.init_scale, rng);

    let mut evaluations = 2usize;
    let mut g_f = fwd.stats(&w, &v)?.g_raw;
    let mut g_r = rev.stats(&v, &w)?.g_raw;
    let tol = real::<T>(cfg.tol);

    let mut history = Vec::new();
    let mut converged = false;
    let mut outer_iterations = 0;

    for _ in 0..cfg.outer_max_iters {
        outer_iterations += 1;

        let mut obj_v = CoordinateObjective {
            fwd,
            rev,
            fixed: &w,
            free_is_driven: true,
            method: cfg.gradient,
            evals: 0,
        };
        let (v_new, _) = ascend_on_sphere(&mut obj_v, &v, cfg)?;
        evaluations += obj_v.evals;
        v = v_new;

        let mut obj_w = CoordinateObjective {
            fwd,
            rev,
            fixed: &v,
            free_is_driven: false,
            method: cfg.gradient,
            evals: 0,
        };
        let (w_new, _) = ascend_on_sphere(&mut obj_w, &w, cfg)?;
        evaluations += obj_w.evals;
        w = w_new;

        let new_f = fwd.stats(&w, &v)?.g_raw;
        let new_r = rev.stats(&v, &w)?.g_raw;
        evaluations += 2;
        history.push((new_f, new_r));
        let settled = (new_f - g_f).abs() < tol && (new_r - g_r).abs() < tol;
        g_f = new_f;
        g_r = new_r;
        if settled {
            converged = true;
            break;
        }
    }

    Ok((
        ProjectionPair::new(w, v)?,
        ConvergenceTrace { outer_iterations, converged, history, evaluations },
    ))
}

/// Finds the best filter pair for one covariance set, trying
/// `config.restarts` random initializations and keeping the highest final
/// combined objective.
pub fn optimize_pair<T: Scalar>(
    cov: &LagCovSet<T>,
    cfg: &OptimizerConfig,
    rng: &mut ChaCha12Rng,
) -> Result<(ProjectionPair<T>, ConvergenceTrace<T>)> {
    cfg.validate()?;
    let fwd = StatsContext::forward(cov);
    let rev = StatsContext::reversed(cov);
    let mut best: Option<(ProjectionPair<T>, ConvergenceTrace<T>, T)> = None;
    for _ in 0..cfg.restarts {
        let (pair, trace) = optimize_single(&fwd, &rev, cfg, rng)?;
        let score = trace.history.last().map(|&(a, b)| a + b).unwrap_or_else(T::zero);
        let better = match &best {
            None => true,
            Some((_, _, s)) => score > *s,
        };
        if better {
            best = Some((pair, trace, score));
        }
    }
    let (pair, trace, _) = best.expect("at least one restart runs");
    Ok((pair.unit().canonical_signs(), trace))
}

fn effective_rank<T: Scalar>(data: &DMatrix<T>) -> usize {
    let sv = data.clone().singular_values();
    let smax = sv.iter().fold(T::zero(), |a, x| a.max(*x));
    if smax == T::zero() {
        return 0;
    }
    let tol = smax * real::<T>(data.nrows().max(data.ncols()) as f64) * T::default_epsilon();
    sv.iter().filter(|&&s| s > tol).count()
}

/// Extracts up to `config.pairs` driving/driven pairs from the observations.
///
/// The input is centered once up front. Each stage estimates covariances on
/// the current (deflated) data, searches for a pair, records it, and removes
/// its driving history before the next stage. When the residual falls below
/// rank 2 the search stops early and the result reports fewer pairs than
/// requested.
pub fn decompose<T: Scalar>(x: &MultiSeries<T>, cfg: &OptimizerConfig) -> Result<Decomposition<T>> {
    cfg.validate()?;
    let original = x.centered();
    let mut work = original.clone();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::new();

    for stage in 0..cfg.pairs {
        if effective_rank(work.data()) < 2 {
            break;
        }
        let cov = LagCovSet::estimate(&work, cfg.max_lag, cfg.cond_limit, cfg.window)?;
        let (pair, trace) = optimize_pair(&cov, cfg, &mut rng)?;

        let fwd = StatsContext::forward(&cov);
        let rev = StatsContext::reversed(&cov);
        let stats = fwd.stats(&pair.w, &pair.v)?;
        let reversed = rev.stats(&pair.v, &pair.w)?;

        let report_on = if cfg.report_against_original { &original } else { &work };
        let driving = report_on.project(&pair.w);
        let driven = report_on.project(&pair.v);
        let pattern_driving = forward_model(&pair.w, cov.sigma(0))?;
        let pattern_driven = forward_model(&pair.v, cov.sigma(0))?;

        let stage_component = work.project(&pair.w);
        pairs.push(PairResult {
            pair,
            stats,
            reversed,
            driving,
            driven,
            pattern_driving,
            pattern_driven,
            trace,
        });

        if stage + 1 < cfg.pairs {
            work = deflate(&work, &stage_component, cfg.max_lag, cfg.deflate_current)?;
        }
    }

    Ok(Decomposition {
        pairs,
        requested_pairs: cfg.pairs,
        channels: x.channels(),
        samples: x.samples(),
        config: *cfg,
    })
}
