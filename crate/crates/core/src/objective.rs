//! Loss criteria for a single core component and their analytic gradients.
//!
//! For a loading vector `beta` the component series is `f_t = x_t' beta` and
//! the forecast of `y_{t+h}` is `Gamma (f_t, f_{t-1}, ..., f_{t-k})'`. The
//! profiled objectives substitute the least-squares `Gamma` for the given
//! `beta`; because that `Gamma` is the exact inner minimizer, the gradient of
//! the profiled loss is the partial derivative in `beta` at fixed `Gamma`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CcfError, Result};
use crate::linalg::{determinant, robust_cholesky, spd_inverse};
use crate::panel::{lag_matrix, LagDesign, TimedMatrix, MIN_EFFECTIVE_SAMPLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean squared Euclidean norm of the forecast errors.
    G1,
    /// Determinant of the mean residual outer product.
    G2,
}

impl std::str::FromStr for LossKind {
    type Err = CcfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g1" => Ok(LossKind::G1),
            "g2" => Ok(LossKind::G2),
            other => Err(CcfError::Config(format!("unknown loss `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::G1 => write!(f, "g1"),
            LossKind::G2 => write!(f, "g2"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentParams {
    pub beta: DVector<f64>,
    /// `q x (k + 1)`; column `j` multiplies `f_{t-j}`.
    pub gamma: DMatrix<f64>,
}

/// One aligned estimation problem.
///
/// `x` holds `x_t` for `t = first_origin - k ..= last_origin` so that every
/// origin has its full window of `k` lagged rows; `y` holds `y_{t+h}` for the
/// origins `first_origin ..= last_origin`.
#[derive(Debug, Clone)]
pub struct FitProblem {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    design: LagDesign,
    first_origin: usize,
    pub loss: LossKind,
    pub lambda: f64,
}

/// Everything derived from one `beta` that the losses and gradients share.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// `x_t' beta` over the full row range of the problem.
    pub series: DVector<f64>,
    pub gamma: DMatrix<f64>,
    /// `n x q` forecast errors at the least-squares `gamma`.
    pub residuals: DMatrix<f64>,
    /// Profiled loss value.
    pub loss: f64,
}

impl FitProblem {
    pub fn new(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        design: LagDesign,
        first_origin: usize,
        loss: LossKind,
        lambda: f64,
    ) -> Result<Self> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(CcfError::EmptySample("no aligned targets".into()));
        }
        if x.nrows() != y.nrows() + design.k {
            return Err(CcfError::Dimension(format!(
                "{} design rows for {} targets with k = {}",
                x.nrows(),
                y.nrows(),
                design.k
            )));
        }
        if x.ncols() != design.p() {
            return Err(CcfError::Dimension(format!(
                "design has {} columns, lag structure implies {}",
                x.ncols(),
                design.p()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(CcfError::Config(format!("penalty must be >= 0, got {lambda}")));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(CcfError::DataQuality("non-finite value in fit problem".into()));
        }
        Ok(Self {
            x,
            y,
            design,
            first_origin,
            loss,
            lambda,
        })
    }

    /// Aligns targets (indexed by origin) with lagged explanatory data over
    /// origins `lo ..= hi`, clipped to what both sides can support.
    pub fn from_panels(
        z: &DMatrix<f64>,
        targets: &TimedMatrix,
        design: LagDesign,
        lo: usize,
        hi: usize,
        loss: LossKind,
        lambda: f64,
    ) -> Result<Self> {
        if z.ncols() != design.m {
            return Err(CcfError::Dimension(format!(
                "explanatory panel has {} series, lag structure expects {}",
                z.ncols(),
                design.m
            )));
        }
        let first = lo.max(design.first_origin()).max(targets.first_time);
        let last = hi.min(targets.last_time()).min(z.nrows().saturating_sub(1));
        let n = (last + 1).saturating_sub(first);
        if n < MIN_EFFECTIVE_SAMPLE {
            return Err(CcfError::EmptySample(format!(
                "{n} aligned pairs for c={}, k={}, h={} (need {MIN_EFFECTIVE_SAMPLE})",
                design.c, design.k, design.h
            )));
        }
        let x = lag_matrix(z, design.c, first - design.k, last)?;
        let y = targets.slice(first, last)?;
        Self::new(x.data, y.data, design, first, loss, lambda)
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.lambda = lambda;
        out
    }

    pub fn with_loss(&self, loss: LossKind) -> Self {
        let mut out = self.clone();
        out.loss = loss;
        out
    }

    pub fn design(&self) -> LagDesign {
        self.design
    }

    /// Number of aligned pairs.
    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn k(&self) -> usize {
        self.design.k
    }

    pub fn first_origin(&self) -> usize {
        self.first_origin
    }

    pub fn last_origin(&self) -> usize {
        self.first_origin + self.n() - 1
    }

    /// All stacked regressor rows, including the `k` warm-up rows.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    /// `x_{t-j}` for every origin `t`, as an `n x p` block.
    pub fn lagged_rows(&self, j: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.x.rows(self.k() - j, self.n())
    }

    /// `(f_t, ..., f_{t-k})` rows for every origin.
    pub fn component_design(&self, series: &DVector<f64>) -> DMatrix<f64> {
        let (n, k) = (self.n(), self.k());
        DMatrix::from_fn(n, k + 1, |r, j| series[r + k - j])
    }

    /// Least-squares `Gamma` for a given component series.
    fn gamma_for_series(&self, series: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let f = self.component_design(series);
        let gram = f.tr_mul(&f);
        if gram.trace() <= 0.0 {
            return Err(CcfError::SingularDesign(
                "component series is identically zero".into(),
            ));
        }
        let chol = robust_cholesky(&gram)?;
        let gamma_t = chol.solve(&f.tr_mul(&self.y));
        Ok((gamma_t.transpose(), f))
    }

    pub fn evaluate(&self, beta: &DVector<f64>) -> Result<Evaluation> {
        self.check_beta(beta)?;
        let series = &self.x * beta;
        let (gamma, f) = self.gamma_for_series(&series)?;
        let residuals = &self.y - f * gamma.transpose();
        let loss = self.loss_from_residuals(&residuals)?;
        Ok(Evaluation {
            series,
            gamma,
            residuals,
            loss,
        })
    }

    fn check_beta(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.p() {
            return Err(CcfError::Dimension(format!(
                "loading vector has length {}, design has {} columns",
                beta.len(),
                self.p()
            )));
        }
        Ok(())
    }

    fn check_gamma(&self, gamma: &DMatrix<f64>) -> Result<()> {
        if gamma.shape() != (self.q(), self.k() + 1) {
            return Err(CcfError::Dimension(format!(
                "coefficient matrix is {}x{}, expected {}x{}",
                gamma.nrows(),
                gamma.ncols(),
                self.q(),
                self.k() + 1
            )));
        }
        Ok(())
    }

    /// Forecast errors `y_{t+h} - Gamma X_t beta` for an arbitrary pair.
    pub fn residuals(&self, params: &ComponentParams) -> Result<DMatrix<f64>> {
        self.check_beta(&params.beta)?;
        self.check_gamma(&params.gamma)?;
        let series = &self.x * &params.beta;
        let f = self.component_design(&series);
        Ok(&self.y - f * params.gamma.transpose())
    }

    fn loss_from_residuals(&self, e: &DMatrix<f64>) -> Result<f64> {
        match self.loss {
            LossKind::G1 => Ok(mean_squared_norm(e)),
            LossKind::G2 => residual_determinant(e),
        }
    }

    /// Unprofiled loss of the configured kind.
    pub fn loss_at(&self, params: &ComponentParams) -> Result<f64> {
        let e = self.residuals(params)?;
        self.loss_from_residuals(&e)
    }

    /// Gradient in `beta` of the configured loss at the profiled `gamma`.
    pub fn gradient(&self, eval: &Evaluation) -> Result<DVector<f64>> {
        let n = self.n() as f64;
        match self.loss {
            LossKind::G1 => {
                let w = &eval.residuals * &eval.gamma;
                Ok(self.spread(&w) * (-2.0 / n))
            }
            LossKind::G2 => {
                let sigma = eval.residuals.tr_mul(&eval.residuals) / n;
                let det = determinant(&sigma)?.max(0.0);
                let sigma_inv = spd_inverse(&sigma)
                    .map_err(|e| CcfError::Numeric(format!("residual covariance: {e}")))?;
                let w = &eval.residuals * sigma_inv * &eval.gamma;
                Ok(self.spread(&w) * (-2.0 * det / n))
            }
        }
    }

    /// `sum_t X_t' w_t` where row `t` of `w` weighs `(f_t, ..., f_{t-k})`.
    fn spread(&self, w: &DMatrix<f64>) -> DVector<f64> {
        let (n, k) = (self.n(), self.k());
        let mut acc = DVector::zeros(n + k);
        for j in 0..=k {
            for r in 0..n {
                acc[r + k - j] += w[(r, j)];
            }
        }
        self.x.tr_mul(&acc)
    }
}

/// `(1/n) sum_t ||e_t||^2`.
pub fn mean_squared_norm(e: &DMatrix<f64>) -> f64 {
    e.norm_squared() / e.nrows().max(1) as f64
}

/// `det((1/n) E'E)`, clipped at zero.
pub fn residual_determinant(e: &DMatrix<f64>) -> Result<f64> {
    let sigma = e.tr_mul(e) / e.nrows().max(1) as f64;
    Ok(determinant(&sigma)?.max(0.0))
}

fn with_kind(prob: &FitProblem, kind: LossKind) -> std::borrow::Cow<'_, FitProblem> {
    if prob.loss == kind {
        std::borrow::Cow::Borrowed(prob)
    } else {
        std::borrow::Cow::Owned(prob.with_loss(kind))
    }
}

pub fn loss_g1(params: &ComponentParams, prob: &FitProblem) -> Result<f64> {
    with_kind(prob, LossKind::G1).loss_at(params)
}

pub fn loss_g2(params: &ComponentParams, prob: &FitProblem) -> Result<f64> {
    with_kind(prob, LossKind::G2).loss_at(params)
}

/// Least-squares coefficient matrix `Y'F (F'F)^{-1}` for the given loading.
pub fn gamma_ls(beta: &DVector<f64>, prob: &FitProblem) -> Result<DMatrix<f64>> {
    prob.check_beta(beta)?;
    let series = prob.x() * beta;
    Ok(prob.gamma_for_series(&series)?.0)
}

pub fn profiled_loss(beta: &DVector<f64>, prob: &FitProblem) -> Result<f64> {
    Ok(prob.evaluate(beta)?.loss)
}

/// `||beta||_1 / ||beta||_2`.
pub fn penalty_ratio(beta: &DVector<f64>) -> Result<f64> {
    let l2 = beta.norm();
    if l2 == 0.0 || !l2.is_finite() {
        return Err(CcfError::Domain("loading vector is zero".into()));
    }
    Ok(beta.lp_norm(1) / l2)
}

pub fn regularized_loss(beta: &DVector<f64>, prob: &FitProblem) -> Result<f64> {
    let pen = penalty_ratio(beta)?;
    Ok(profiled_loss(beta, prob)? + prob.lambda * pen)
}

pub fn grad_profiled(beta: &DVector<f64>, prob: &FitProblem) -> Result<DVector<f64>> {
    let eval = prob.evaluate(beta)?;
    prob.gradient(&eval)
}

/// Gradient of the smooth part of the regularized loss: the profiled
/// gradient plus the smooth piece of the ratio penalty, which on the unit
/// sphere is `-lambda ||beta||_1 beta`.
pub fn grad_regularized_smooth(beta: &DVector<f64>, prob: &FitProblem) -> Result<DVector<f64>> {
    let g = grad_profiled(beta, prob)?;
    Ok(smooth_penalty_adjust(g, beta, prob.lambda))
}

pub(crate) fn smooth_penalty_adjust(g: DVector<f64>, beta: &DVector<f64>, lambda: f64) -> DVector<f64> {
    if lambda == 0.0 {
        return g;
    }
    let l2 = beta.norm();
    let scale = lambda * beta.lp_norm(1) / (l2 * l2 * l2);
    g - beta * scale
}

/// Smooth gradient plus `lambda sign(beta) / ||beta||_2`, the gradient of
/// the regularized loss wherever no coordinate is zero.
pub fn grad_regularized_full(beta: &DVector<f64>, prob: &FitProblem) -> Result<DVector<f64>> {
    let g = grad_regularized_smooth(beta, prob)?;
    let l2 = beta.norm();
    Ok(g + beta.map(|b| prob.lambda * sign(b) / l2))
}

pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn soft_threshold(v: &DVector<f64>, gamma: f64) -> DVector<f64> {
    v.map(|x| {
        if x > gamma {
            x - gamma
        } else if x < -gamma {
            x + gamma
        } else {
            0.0
        }
    })
}
