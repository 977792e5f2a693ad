//! Single-component estimation.
//!
//! [`proximal_fit`] handles any penalty: a gradient step on the smooth part,
//! soft thresholding, and renormalization to the unit sphere, with the step
//! length picked by a derivative-free line search. The fixed-point routines
//! solve the unpenalized problems by alternating least squares. Both start
//! from the eigen-based initializers below.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CcfError, Result};
use crate::linalg::{
    angle_between, cross_moment, fix_sign, leading_generalized_eigen, normalized, spd_inverse,
    spd_solve_vec,
};
use crate::objective::{
    penalty_ratio, sign, smooth_penalty_adjust, soft_threshold, ComponentParams, Evaluation,
    FitProblem, LossKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LineSearch {
    /// Bracket by doubling or halving from the previous step, then refine
    /// with golden-section search.
    GoldenSection {
        initial_step: f64,
        max_evals: usize,
    },
    /// Largest step of the form `initial_step * 2^j / shrink^i` that
    /// decreases the objective, starting from twice the previous step.
    Backtracking { initial_step: f64, shrink: f64 },
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch::GoldenSection {
            initial_step: 1e-4,
            max_evals: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Relative objective change below which an iteration counts as stalled.
    pub epsilon: f64,
    pub max_iter: usize,
    pub line_search: LineSearch,
    /// Certificate tolerance required before declaring convergence.
    pub certificate_tol: f64,
    /// Certificate tolerance that stops the iteration immediately.
    pub critical_tol: f64,
    /// Smallest step tried before the line search gives up.
    pub min_step: f64,
    /// Number of starting points: the initializer plus perturbed copies.
    pub restarts: usize,
    /// Standard deviation of the Gaussian perturbation used for restarts.
    pub perturbation: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-7,
            max_iter: 500,
            line_search: LineSearch::default(),
            certificate_tol: 1e-5,
            critical_tol: 1e-6,
            min_step: 1e-12,
            restarts: 1,
            perturbation: 0.1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(CcfError::Config("epsilon must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(CcfError::Config("max_iter must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(CcfError::Config("restarts must be at least 1".into()));
        }
        match self.line_search {
            LineSearch::GoldenSection {
                initial_step,
                max_evals,
            } if initial_step > 0.0 && max_evals >= 2 => Ok(()),
            LineSearch::Backtracking {
                initial_step,
                shrink,
            } if initial_step > 0.0 && shrink > 1.0 => Ok(()),
            _ => Err(CcfError::Config("invalid line-search parameters".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Objective stalled and the critical-point certificate holds.
    Converged,
    MaxIter,
    /// Certificate held before a step was needed, or thresholding removed
    /// every coordinate.
    CriticalPoint,
    /// No decreasing step down to the minimum step length.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub objective_path: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexClass {
    /// Zero coordinate whose smooth gradient is within the penalty.
    ZeroBounded,
    /// Nonzero coordinate with vanishing gradient.
    Stationary,
    Violating,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub classes: Vec<IndexClass>,
    pub max_violation: f64,
    /// Absolute threshold used, `tol (1 + |objective|)`.
    pub threshold: f64,
    pub certified: bool,
}

impl Certificate {
    pub fn count(&self, class: IndexClass) -> usize {
        self.classes.iter().filter(|c| **c == class).count()
    }
}

fn certify(beta: &DVector<f64>, smooth: &DVector<f64>, objective: f64, lambda: f64, tol: f64) -> Certificate {
    let threshold = tol * (1.0 + objective.abs());
    let mut max_violation: f64 = 0.0;
    let classes = beta
        .iter()
        .zip(smooth.iter())
        .map(|(&b, &g)| {
            let (violation, class) = if b == 0.0 {
                ((g.abs() - lambda).max(0.0), IndexClass::ZeroBounded)
            } else {
                ((g + lambda * sign(b)).abs(), IndexClass::Stationary)
            };
            max_violation = max_violation.max(violation);
            if violation <= threshold {
                class
            } else {
                IndexClass::Violating
            }
        })
        .collect::<Vec<_>>();
    let certified = classes.iter().all(|c| *c != IndexClass::Violating);
    Certificate {
        classes,
        max_violation,
        threshold,
        certified,
    }
}

/// Classifies every coordinate of a unit-norm `beta` against the two
/// critical-point conditions at tolerance `tol`.
pub fn critical_point_certificate_with_tol(
    beta: &DVector<f64>,
    prob: &FitProblem,
    tol: f64,
) -> Result<Certificate> {
    let eval = prob.evaluate(beta)?;
    let objective = eval.loss + prob.lambda * penalty_ratio(beta)?;
    let g = smooth_penalty_adjust(prob.gradient(&eval)?, beta, prob.lambda);
    Ok(certify(beta, &g, objective, prob.lambda, tol))
}

pub fn critical_point_certificate(beta: &DVector<f64>, prob: &FitProblem) -> Result<Certificate> {
    critical_point_certificate_with_tol(beta, prob, 1e-6)
}

fn uniform(p: usize) -> DVector<f64> {
    DVector::from_element(p, 1.0 / (p as f64).sqrt())
}

fn eigen_init(prob: &FitProblem, canonical: bool) -> DVector<f64> {
    let xo = prob.lagged_rows(0).into_owned();
    let sxx = cross_moment(&xo, &xo);
    let sxy = cross_moment(&xo, prob.y());
    let b = if canonical {
        match spd_inverse(&cross_moment(prob.y(), prob.y())) {
            Ok(syy_inv) => &sxy * syy_inv * sxy.transpose(),
            Err(e) => {
                log::warn!("canonical initializer: {e}; using uniform start");
                return uniform(prob.p());
            }
        }
    } else {
        &sxy * sxy.transpose()
    };
    match leading_generalized_eigen(&b, &sxx) {
        Ok((_, v)) => v,
        Err(e) => {
            log::warn!("eigen initializer failed: {e}; using uniform start");
            uniform(prob.p())
        }
    }
}

/// Leading eigenvector of `Sxx^{-1} Sxy Syx` (second moments over the
/// aligned sample), unit norm, largest entry positive.
pub fn init_redundancy(prob: &FitProblem) -> DVector<f64> {
    eigen_init(prob, false)
}

/// Leading eigenvector of `Sxx^{-1} Sxy Syy^{-1} Syx`.
pub fn init_canonical(prob: &FitProblem) -> DVector<f64> {
    eigen_init(prob, true)
}

/// Rank-one reduction of the unrestricted regression of the targets on all
/// `k + 1` lagged rows: the leading left singular vector of the `p x q(k+1)`
/// coefficient matrix. Exact for noiseless one-component data. `None` when
/// the stacked design has at least as many columns as rows.
pub fn init_stacked(prob: &FitProblem) -> Option<DVector<f64>> {
    let (p, k, n) = (prob.p(), prob.k(), prob.n());
    if p * (k + 1) >= n {
        return None;
    }
    let mut xs = DMatrix::zeros(n, p * (k + 1));
    for j in 0..=k {
        xs.columns_mut(j * p, p).copy_from(&prob.lagged_rows(j));
    }
    let b = crate::linalg::spd_solve(&xs.tr_mul(&xs), &xs.tr_mul(prob.y())).ok()?;
    let q = prob.q();
    let mut coef = DMatrix::zeros(p, q * (k + 1));
    for j in 0..=k {
        coef.columns_mut(j * q, q).copy_from(&b.rows(j * p, p));
    }
    let eig = SymmetricEigen::new(&coef * coef.transpose());
    let mut v = normalized(&eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned())?;
    fix_sign(&mut v);
    Some(v)
}

/// Initializer matching the loss (redundancy for G1, canonical for G2).
/// With component lags, the stacked rank-one start replaces it when its
/// unpenalized loss is lower.
pub fn default_init(prob: &FitProblem) -> DVector<f64> {
    let eigen = match prob.loss {
        LossKind::G1 => init_redundancy(prob),
        LossKind::G2 => init_canonical(prob),
    };
    if prob.k() == 0 {
        return eigen;
    }
    let loss = |b: &DVector<f64>| prob.evaluate(b).map_or(f64::INFINITY, |e| e.loss);
    match init_stacked(prob) {
        Some(s) if loss(&s) < loss(&eigen) => s,
        _ => eigen,
    }
}

/// Starting points for a multi-start fit: `init` itself, then perturbed
/// copies drawn from a stream keyed by `seed`.
pub fn restart_points(init: &DVector<f64>, cfg: &SolverConfig) -> Vec<DVector<f64>> {
    let mut out = vec![init.clone()];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 1..cfg.restarts {
        let noisy = init.map(|v| v + cfg.perturbation * rng.sample::<f64, _>(StandardNormal));
        out.push(normalized(&noisy).unwrap_or_else(|| init.clone()));
    }
    out
}

fn start_point(init: &DVector<f64>, prob: &FitProblem) -> Result<DVector<f64>> {
    if init.len() != prob.p() {
        return Err(CcfError::Dimension(format!(
            "initializer has length {}, problem has {} columns",
            init.len(),
            prob.p()
        )));
    }
    normalized(init).ok_or_else(|| CcfError::Domain("initializer is zero".into()))
}

struct Point {
    beta: DVector<f64>,
    eval: Evaluation,
    objective: f64,
}

struct StepOutcome {
    best: Option<(f64, Point)>,
    annihilated: usize,
    probes: usize,
}

fn prox_point(prob: &FitProblem, beta: &DVector<f64>, g: &DVector<f64>, eta: f64) -> std::result::Result<Point, bool> {
    let moved = soft_threshold(&(beta - g * eta), prob.lambda * eta);
    let Some(next) = normalized(&moved) else {
        return Err(true);
    };
    let eval = prob.evaluate(&next).map_err(|_| false)?;
    let objective = eval.loss + prob.lambda * next.lp_norm(1);
    if objective.is_finite() {
        Ok(Point {
            beta: next,
            eval,
            objective,
        })
    } else {
        Err(false)
    }
}

fn line_search(
    prob: &FitProblem,
    current: &Point,
    g: &DVector<f64>,
    eta0: f64,
    cfg: &SolverConfig,
) -> StepOutcome {
    let mut out = StepOutcome {
        best: None,
        annihilated: 0,
        probes: 0,
    };
    let probe = |eta: f64, out: &mut StepOutcome| -> f64 {
        out.probes += 1;
        match prox_point(prob, &current.beta, g, eta) {
            Ok(pt) => {
                let v = pt.objective;
                let better = match &out.best {
                    Some((_, b)) => v < b.objective,
                    None => v < current.objective,
                };
                if better {
                    out.best = Some((eta, pt));
                }
                v
            }
            Err(annihilated) => {
                if annihilated {
                    out.annihilated += 1;
                }
                f64::INFINITY
            }
        }
    };

    match cfg.line_search {
        LineSearch::Backtracking { shrink, .. } => {
            let mut eta = 2.0 * eta0;
            while eta >= cfg.min_step {
                if probe(eta, &mut out) < current.objective {
                    break;
                }
                eta /= shrink;
            }
        }
        LineSearch::GoldenSection { max_evals, .. } => {
            let mut eta = eta0;
            let mut v = probe(eta, &mut out);
            if v < current.objective {
                while out.probes < max_evals {
                    let v2 = probe(2.0 * eta, &mut out);
                    if v2 < v {
                        eta *= 2.0;
                        v = v2;
                    } else {
                        break;
                    }
                }
            } else {
                loop {
                    eta *= 0.5;
                    if eta < cfg.min_step {
                        return out;
                    }
                    if probe(eta, &mut out) < current.objective {
                        break;
                    }
                }
            }
            // Golden-section refinement on [eta/2, 2 eta].
            const INV_PHI: f64 = 0.618_033_988_749_894_8;
            let (mut a, mut b) = (0.5 * eta, 2.0 * eta);
            let mut x1 = b - INV_PHI * (b - a);
            let mut x2 = a + INV_PHI * (b - a);
            let mut f1 = probe(x1, &mut out);
            let mut f2 = probe(x2, &mut out);
            while out.probes < max_evals && (b - a) > 1e-3 * eta {
                if f1 <= f2 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = b - INV_PHI * (b - a);
                    f1 = probe(x1, &mut out);
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = a + INV_PHI * (b - a);
                    f2 = probe(x2, &mut out);
                }
            }
        }
    }
    out
}

fn initial_step(cfg: &SolverConfig) -> f64 {
    match cfg.line_search {
        LineSearch::GoldenSection { initial_step, .. }
        | LineSearch::Backtracking { initial_step, .. } => initial_step,
    }
}

fn finish(prob: &FitProblem, mut beta: DVector<f64>, mut gamma: DMatrix<f64>) -> ComponentParams {
    let before = beta.clone();
    fix_sign(&mut beta);
    if before != beta {
        gamma.neg_mut();
    }
    debug_assert_eq!(gamma.ncols(), prob.k() + 1);
    ComponentParams { beta, gamma }
}

fn proximal_single(
    prob: &FitProblem,
    init: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(ComponentParams, FitTrace)> {
    let beta = start_point(init, prob)?;
    let eval = prob.evaluate(&beta)?;
    let objective = eval.loss + prob.lambda * penalty_ratio(&beta)?;
    let mut current = Point {
        beta,
        eval,
        objective,
    };
    let mut path = vec![current.objective];
    let mut eta = initial_step(cfg);
    let mut stalled = false;
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;

    loop {
        let g = smooth_penalty_adjust(prob.gradient(&current.eval)?, &current.beta, prob.lambda);
        if stalled
            && certify(&current.beta, &g, current.objective, prob.lambda, cfg.certificate_tol).certified
        {
            termination = Termination::Converged;
            break;
        }
        if certify(&current.beta, &g, current.objective, prob.lambda, cfg.critical_tol).certified {
            termination = Termination::CriticalPoint;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        let step = line_search(prob, &current, &g, eta, cfg);
        match step.best {
            Some((best_eta, next)) => {
                let rel = (current.objective - next.objective) / current.objective.abs().max(f64::MIN_POSITIVE);
                stalled = rel <= cfg.epsilon;
                eta = best_eta;
                current = next;
                path.push(current.objective);
                iterations += 1;
            }
            None => {
                if step.annihilated == step.probes && step.probes > 0 {
                    log::warn!("soft thresholding removed every coordinate; keeping current loading");
                    termination = Termination::CriticalPoint;
                } else {
                    termination = Termination::LineSearchFailed;
                }
                break;
            }
        }
    }
    let params = finish(prob, current.beta, current.eval.gamma);
    Ok((
        params,
        FitTrace {
            objective_path: path,
            iterations,
            termination,
        },
    ))
}

fn best_of<F>(
    prob: &FitProblem,
    init: &DVector<f64>,
    cfg: &SolverConfig,
    fit: F,
) -> Result<(ComponentParams, FitTrace)>
where
    F: Fn(&FitProblem, &DVector<f64>, &SolverConfig) -> Result<(ComponentParams, FitTrace)>,
{
    cfg.validate()?;
    let mut best: Option<(ComponentParams, FitTrace)> = None;
    let mut first_err = None;
    for start in restart_points(init, cfg) {
        match fit(prob, &start, cfg) {
            Ok(run) => {
                let v = *run.1.objective_path.last().unwrap_or(&f64::INFINITY);
                let keep = match &best {
                    Some((_, t)) => v < *t.objective_path.last().unwrap_or(&f64::INFINITY),
                    None => true,
                };
                if keep {
                    best = Some(run);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (best, first_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => Err(CcfError::Numeric("no restart produced a fit".into())),
    }
}

/// Proximal-gradient fit of one component from `init`, keeping the best of
/// `cfg.restarts` starting points.
pub fn proximal_fit(
    prob: &FitProblem,
    init: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(ComponentParams, FitTrace)> {
    best_of(prob, init, cfg, proximal_single)
}

/// Cached `X_j' X_l` blocks, `j <= l`, for the fixed-point normal equations.
struct LagGrams {
    blocks: Vec<Vec<DMatrix<f64>>>,
}

impl LagGrams {
    fn new(prob: &FitProblem) -> Self {
        let k = prob.k();
        let blocks = (0..=k)
            .map(|j| {
                (j..=k)
                    .map(|l| prob.lagged_rows(j).tr_mul(&prob.lagged_rows(l)))
                    .collect()
            })
            .collect();
        Self { blocks }
    }

    fn weighted(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let k = self.blocks.len() - 1;
        let p = self.blocks[0][0].nrows();
        let mut a = DMatrix::zeros(p, p);
        for j in 0..=k {
            a += &self.blocks[j][0] * m[(j, j)];
            for l in (j + 1)..=k {
                let blk = &self.blocks[j][l - j];
                let w = m[(j, l)];
                a += blk * w;
                a += blk.transpose() * m[(l, j)];
            }
        }
        a
    }
}

/// One application of the fixed-point map: the loading minimizing the
/// (optionally `weight`-weighted) squared error for fixed `gamma`.
pub fn fixed_point_map(
    prob: &FitProblem,
    gamma: &DMatrix<f64>,
    weight: Option<&DMatrix<f64>>,
) -> Result<DVector<f64>> {
    fixed_point_map_cached(prob, &LagGrams::new(prob), gamma, weight)
}

fn fixed_point_map_cached(
    prob: &FitProblem,
    grams: &LagGrams,
    gamma: &DMatrix<f64>,
    weight: Option<&DMatrix<f64>>,
) -> Result<DVector<f64>> {
    let wg = match weight {
        Some(w) => w * gamma,
        None => gamma.clone(),
    };
    let m = gamma.tr_mul(&wg);
    let m = (&m + m.transpose()) * 0.5;
    let a = grams.weighted(&m);
    let v = prob.y() * &wg;
    let mut rhs = DVector::zeros(prob.p());
    for j in 0..=prob.k() {
        rhs += prob.lagged_rows(j).tr_mul(&v.column(j));
    }
    spd_solve_vec(&a, &rhs)
}

/// Angle between `beta` and the image of the fixed-point map at
/// `(beta, gamma)`; zero at an exact fixed point.
pub fn fixed_point_mismatch(prob: &FitProblem, params: &ComponentParams) -> Result<f64> {
    let weight = match prob.loss {
        LossKind::G1 => None,
        LossKind::G2 => Some(residual_precision(prob, params)?),
    };
    let next = fixed_point_map(prob, &params.gamma, weight.as_ref())?;
    Ok(angle_between(&next, &params.beta))
}

fn residual_precision(prob: &FitProblem, params: &ComponentParams) -> Result<DMatrix<f64>> {
    let e = prob.residuals(params)?;
    let sigma = e.tr_mul(&e) / prob.n() as f64;
    spd_inverse(&sigma).map_err(|e| {
        CcfError::Numeric(format!("residual covariance is singular ({e}); use the g1 loss"))
    })
}

fn fixed_point_single(
    prob: &FitProblem,
    init: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(ComponentParams, FitTrace)> {
    let weighted = prob.loss == LossKind::G2 && prob.q() > 1;
    let grams = LagGrams::new(prob);
    let mut beta = start_point(init, prob)?;
    let mut eval = prob.evaluate(&beta)?;
    let mut path = vec![eval.loss];
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let weight = if weighted {
            let params = ComponentParams {
                beta: beta.clone(),
                gamma: eval.gamma.clone(),
            };
            Some(residual_precision(prob, &params)?)
        } else {
            None
        };
        let raw = fixed_point_map_cached(prob, &grams, &eval.gamma, weight.as_ref())?;
        let mut next =
            normalized(&raw).ok_or_else(|| CcfError::Numeric("fixed-point map returned zero".into()))?;
        if next.dot(&beta) < 0.0 {
            next.neg_mut();
        }
        let step = (&next - &beta).norm();
        beta = next;
        eval = prob.evaluate(&beta)?;
        path.push(eval.loss);
        iterations += 1;
        if step <= cfg.epsilon {
            termination = Termination::Converged;
            break;
        }
    }
    let params = finish(prob, beta, eval.gamma);
    Ok((
        params,
        FitTrace {
            objective_path: path,
            iterations,
            termination,
        },
    ))
}

fn require_unpenalized(prob: &FitProblem) -> Result<()> {
    if prob.lambda > 0.0 {
        return Err(CcfError::Config(format!(
            "fixed-point iteration solves the unpenalized problem, got lambda = {}",
            prob.lambda
        )));
    }
    Ok(())
}

/// Alternating least squares for the G1 loss.
pub fn fixed_point_fit_g1(
    prob: &FitProblem,
    init: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(ComponentParams, FitTrace)> {
    require_unpenalized(prob)?;
    best_of(&prob.with_loss(LossKind::G1), init, cfg, fixed_point_single)
}

/// Alternating residual-covariance, weighted loading and least-squares
/// coefficient updates for the G2 loss. Each sweep cannot increase the
/// determinant.
pub fn fixed_point_fit_g2(
    prob: &FitProblem,
    init: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(ComponentParams, FitTrace)> {
    require_unpenalized(prob)?;
    best_of(&prob.with_loss(LossKind::G2), init, cfg, fixed_point_single)
}

/// Fits one component from the loss-specific initializer. Unpenalized
/// problems use the fixed-point iteration (falling back to the proximal
/// solver if it breaks down); penalized problems use [`proximal_fit`].
pub fn fit_component(prob: &FitProblem, cfg: &SolverConfig) -> Result<(ComponentParams, FitTrace)> {
    let init = default_init(prob);
    if prob.lambda == 0.0 {
        let fixed = match prob.loss {
            LossKind::G1 => fixed_point_fit_g1(prob, &init, cfg),
            LossKind::G2 => fixed_point_fit_g2(prob, &init, cfg),
        };
        match fixed {
            Ok(fit) => return Ok(fit),
            Err(e) => log::warn!("fixed-point iteration failed ({e}); using proximal solver"),
        }
    }
    proximal_fit(prob, &init, cfg)
}

/// Step length the unpenalized line search takes from `beta`, or `None`
/// when no step decreases the loss.
pub fn probe_step(prob: &FitProblem, beta: &DVector<f64>, cfg: &SolverConfig) -> Result<Option<f64>> {
    let plain = prob.with_lambda(0.0);
    let beta = start_point(beta, &plain)?;
    let eval = plain.evaluate(&beta)?;
    let g = plain.gradient(&eval)?;
    let current = Point {
        beta,
        objective: eval.loss,
        eval,
    };
    Ok(line_search(&plain, &current, &g, initial_step(cfg), cfg)
        .best
        .map(|(eta, _)| eta))
}

/// Eigen-decomposition helper used by tests and the canonical oracle:
/// squared canonical correlations of `(x, y)` in decreasing order.
pub fn squared_canonical_correlations(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Vec<f64>> {
    let sxx = cross_moment(x, x);
    let syy = cross_moment(y, y);
    let sxy = cross_moment(x, y);
    let b = &sxy * spd_inverse(&syy)? * sxy.transpose();
    let lx = crate::linalg::robust_cholesky(&sxx)?;
    let l = lx.l();
    let left = l
        .solve_lower_triangular(&b)
        .ok_or_else(|| CcfError::Numeric("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&left.transpose())
        .ok_or_else(|| CcfError::Numeric("triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let mut vals: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().cloned().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    Ok(vals)
}
