//! Cross-validated choice of lags, penalty and number of components.
//!
//! The sample is split chronologically into a training segment, a first
//! validation segment used for every hyper-parameter decision, and a second
//! validation segment touched only to score the final procedure.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccf::{
    extract_component, fit_ar_standardized, fit_components, CcfModel, CoreComponent, StageSpec,
    FORMAT_VERSION,
};
use crate::error::{CcfError, Result};
use crate::objective::{mean_squared_norm, FitProblem, LossKind};
use crate::panel::{
    horizon_targets, standardize, LagDesign, SplitSpec, TimeSeriesPanel, TimedMatrix,
    MIN_EFFECTIVE_SAMPLE,
};
use crate::solver::{default_init, probe_step, SolverConfig};

/// Share of the initializer's coordinates the largest grid penalty must
/// remove in one proximal step.
pub const LAMBDA_MAX_ZERO_SHARE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub alpha: f64,
    pub c_max: usize,
    pub k_max: usize,
    /// Largest penalty of the grid; chosen from the data when absent.
    pub lambda_max: Option<f64>,
    /// Number of grid points `J`, including zero and `lambda_max`.
    pub grid: usize,
    pub h: usize,
    pub loss: LossKind,
    pub max_components: usize,
    /// Refit on training plus first validation data before scoring the
    /// second validation segment.
    pub refit: bool,
    /// Restarts used by the final refits.
    pub final_restarts: usize,
    /// Largest autoregressive order tried for the error correction; `None`
    /// disables it.
    pub ar_max_order: Option<usize>,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            alpha: 0.70,
            c_max: 3,
            k_max: 3,
            lambda_max: None,
            grid: 10,
            h: 1,
            loss: LossKind::G1,
            max_components: 10,
            refit: true,
            final_restarts: 3,
            ar_max_order: None,
            seed: 0,
            solver: SolverConfig::default(),
        }
    }
}

impl CvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid < 2 {
            return Err(CcfError::Config(format!("grid needs at least 2 points, got {}", self.grid)));
        }
        if self.max_components == 0 {
            return Err(CcfError::Config("max_components must be at least 1".into()));
        }
        if let Some(l) = self.lambda_max {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(CcfError::Config(format!("lambda_max must be >= 0, got {l}")));
            }
        }
        if self.final_restarts == 0 {
            return Err(CcfError::Config("final_restarts must be at least 1".into()));
        }
        self.solver.validate()
    }

    /// `lambda_j = j lambda_max / (J - 1)`.
    pub fn lambda_grid(&self, lambda_max: f64) -> Vec<f64> {
        let j_max = (self.grid - 1) as f64;
        (0..self.grid).map(|j| j as f64 * lambda_max / j_max).collect()
    }

    fn task_solver(&self, stage: usize, task: usize) -> SolverConfig {
        SolverConfig {
            seed: task_seed(self.seed, stage as u64, task as u64),
            ..self.solver.clone()
        }
    }
}

/// Splits a master seed into independent per-task seeds (SplitMix64 on the
/// task coordinates).
pub fn task_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut x = master
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagCell {
    pub c: usize,
    pub k: usize,
    /// Validation FMSE, absent when the cell was skipped.
    pub fmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    pub fmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSelection {
    pub c: usize,
    pub k: usize,
    pub lambda: f64,
    pub lambda_max: f64,
    pub fmse: f64,
    pub fmse_surface: Vec<LagCell>,
    pub lambda_grid: Vec<LambdaPoint>,
}

impl StageSelection {
    pub fn spec(&self) -> StageSpec {
        StageSpec {
            c: self.c,
            k: self.k,
            lambda: self.lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub split: SplitSpec,
    pub h: usize,
    pub loss: LossKind,
    /// Every stage evaluated, including a final rejected one.
    pub stages: Vec<StageSelection>,
    /// Validation FMSE after each evaluated stage.
    pub fmse_path: Vec<f64>,
    pub chosen_s: usize,
    /// Selected autoregressive orders, one per target series.
    #[serde(default)]
    pub ar_orders: Vec<usize>,
    pub fmsecv: Option<f64>,
}

impl CvReport {
    pub fn schedule(&self) -> Vec<StageSpec> {
        self.stages[..self.chosen_s].iter().map(|s| s.spec()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Plain-text table: one block per stage, then the chosen size and score.
    pub fn summary(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "split {}/{}/{}  h={}  loss={}",
            self.split.t1, self.split.t2, self.split.t3, self.h, self.loss
        );
        for (i, st) in self.stages.iter().enumerate() {
            let status = if i < self.chosen_s { "kept" } else { "rejected" };
            let _ = writeln!(out, "component {} ({status})", i + 1);
            let _ = writeln!(out, "  {:>3} {:>3} {:>12} {:>14}", "c", "k", "lambda", "fmse");
            for cell in &st.fmse_surface {
                let f = cell.fmse.map_or("skipped".to_string(), |v| format!("{v:.6}"));
                let _ = writeln!(out, "  {:>3} {:>3} {:>12.6} {:>14}", cell.c, cell.k, 0.0, f);
            }
            for pt in st.lambda_grid.iter().skip(1) {
                let f = pt.fmse.map_or("failed".to_string(), |v| format!("{v:.6}"));
                let _ = writeln!(out, "  {:>3} {:>3} {:>12.6} {:>14}", st.c, st.k, pt.lambda, f);
            }
            let _ = writeln!(
                out,
                "  selected c={} k={} lambda={:.6} fmse={:.6}",
                st.c, st.k, st.lambda, st.fmse
            );
        }
        let cv = self.fmsecv.map_or("n/a".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(out, "s={} fmsecv={cv}", self.chosen_s);
        out
    }
}

/// Mean of `||e_t||^2` over origins `first..=last` of an error matrix.
pub fn validation_fmse(errors: &TimedMatrix, first: usize, last: usize) -> Result<f64> {
    if first > last || first < errors.first_time || last > errors.last_time() {
        return Err(CcfError::EmptySample(format!(
            "validation origins {first}..={last} not covered by errors {}..={}",
            errors.first_time,
            errors.last_time()
        )));
    }
    Ok(mean_squared_norm(&errors.slice(first, last)?.data))
}

/// Standardized data plus the origin windows of the split.
#[derive(Debug, Clone)]
pub struct CvContext {
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub split: SplitSpec,
    pub h: usize,
}

impl CvContext {
    pub fn new(y: DMatrix<f64>, z: DMatrix<f64>, alpha: f64, h: usize) -> Result<Self> {
        if y.nrows() != z.nrows() {
            return Err(CcfError::Dimension(format!(
                "target panel has {} periods, explanatory panel {}",
                y.nrows(),
                z.nrows()
            )));
        }
        let split = SplitSpec::new(y.nrows(), alpha)?;
        let ctx = Self { y, z, split, h };
        if ctx.split.t2 <= h || ctx.split.t3 <= h {
            return Err(CcfError::Config(format!(
                "validation segments of {} and {} periods are too short for horizon {h}",
                ctx.split.t2, ctx.split.t3
            )));
        }
        Ok(ctx)
    }

    pub fn train_last(&self) -> usize {
        self.split.t1 - 1 - self.h
    }

    /// Origins whose targets fall in the first validation segment.
    pub fn val1_origins(&self) -> (usize, usize) {
        (self.split.t1, self.split.val1_end() - 1 - self.h)
    }

    /// Origins whose targets fall in the second validation segment.
    pub fn val2_origins(&self) -> (usize, usize) {
        (self.split.val1_end(), self.split.total() - 1 - self.h)
    }

    /// Data visible to selection: everything before the second segment.
    fn selection_view(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.split.val1_end();
        (self.y.rows(0, n).into_owned(), self.z.rows(0, n).into_owned())
    }
}

fn skip_reason(ctx: &CvContext, targets: &TimedMatrix, c: usize, k: usize) -> Option<String> {
    let first = targets.first_time.max(c + k);
    let n = (ctx.train_last() + 1).saturating_sub(first);
    let p = ctx.z.ncols() * (c + 1);
    if n < MIN_EFFECTIVE_SAMPLE {
        Some(format!("{n} training pairs (need {MIN_EFFECTIVE_SAMPLE})"))
    } else if p >= n {
        Some(format!("{p} regressors for {n} training pairs"))
    } else {
        None
    }
}

fn score(
    ctx: &CvContext,
    z: &DMatrix<f64>,
    targets: &TimedMatrix,
    spec: StageSpec,
    cfg: &CvConfig,
    solver: &SolverConfig,
) -> Result<(f64, CoreComponent, TimedMatrix)> {
    let ex = extract_component(targets, z, spec, cfg.h, cfg.loss, solver, ctx.train_last())?;
    let (v0, v1) = ctx.val1_origins();
    let fmse = validation_fmse(&ex.residuals, v0, v1)?;
    Ok((fmse, ex.component, ex.residuals))
}

type Scored = (f64, CoreComponent, TimedMatrix);

/// Fits every `(c, k)` at zero penalty on the training segment and returns
/// the best cell (ties: smaller `c + k`, then smaller `c`), its fit and the
/// full surface.
pub fn select_lags(
    ctx: &CvContext,
    targets: &TimedMatrix,
    cfg: &CvConfig,
    stage: usize,
) -> Result<(usize, usize, Vec<LagCell>, Scored)> {
    let (_, z) = ctx.selection_view();
    let cells: Vec<(usize, usize)> = (0..=cfg.c_max)
        .flat_map(|c| (0..=cfg.k_max).map(move |k| (c, k)))
        .collect();
    let results: Vec<(LagCell, Option<Scored>)> = cells
        .par_iter()
        .enumerate()
        .map(|(task, &(c, k))| {
            if let Some(reason) = skip_reason(ctx, targets, c, k) {
                return (
                    LagCell {
                        c,
                        k,
                        fmse: None,
                        skipped: Some(reason),
                    },
                    None,
                );
            }
            let spec = StageSpec { c, k, lambda: 0.0 };
            match score(ctx, &z, targets, spec, cfg, &cfg.task_solver(stage, task)) {
                Ok(s) => (
                    LagCell {
                        c,
                        k,
                        fmse: Some(s.0),
                        skipped: None,
                    },
                    Some(s),
                ),
                Err(e) => (
                    LagCell {
                        c,
                        k,
                        fmse: None,
                        skipped: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, (cell, _)) in results.iter().enumerate() {
        let Some(f) = cell.fmse else { continue };
        let better = match best {
            None => true,
            Some(b) => {
                let bc = &results[b].0;
                let bf = bc.fmse.unwrap_or(f64::INFINITY);
                f < bf
                    || (f == bf
                        && (cell.c + cell.k, cell.c) < (bc.c + bc.k, bc.c))
            }
        };
        if better {
            best = Some(i);
        }
    }
    let Some(b) = best else {
        return Err(CcfError::EmptySample(
            "every (c, k) candidate was skipped or failed".into(),
        ));
    };
    let (c, k) = (results[b].0.c, results[b].0.k);
    let mut surface = Vec::with_capacity(results.len());
    let mut chosen = None;
    for (i, (cell, fit)) in results.into_iter().enumerate() {
        if i == b {
            chosen = fit;
        }
        surface.push(cell);
    }
    Ok((c, k, surface, chosen.expect("best cell has a fit")))
}

/// Largest grid penalty for a problem: the smallest `lambda` for which one
/// soft-thresholded gradient step from the initializer zeroes at least 90%
/// of the coordinates, with the step length the unpenalized line search
/// picks. When the initializer is already stationary there is no such step
/// and the penalty that makes the initializer's penalty equal its explained
/// loss is used instead.
pub fn default_lambda_max(prob: &FitProblem, solver: &SolverConfig) -> Result<f64> {
    let plain = prob.with_lambda(0.0);
    let init = default_init(&plain);
    let eval = plain.evaluate(&init)?;
    let g = plain.gradient(&eval)?;
    let stationary = g.amax() <= solver.critical_tol * (1.0 + eval.loss.abs());
    if !stationary {
        if let Some(eta) = probe_step(&plain, &init, solver)? {
            let mut cut: Vec<f64> = init
                .iter()
                .zip(g.iter())
                .map(|(b, gi)| (b - eta * gi).abs() / eta)
                .collect();
            cut.sort_by(|a, b| a.total_cmp(b));
            let need = ((LAMBDA_MAX_ZERO_SHARE * cut.len() as f64).ceil() as usize).clamp(1, cut.len());
            return Ok(cut[need - 1]);
        }
    }
    let null = match plain.loss {
        LossKind::G1 => mean_squared_norm(plain.y()),
        LossKind::G2 => crate::objective::residual_determinant(plain.y())?,
    };
    Ok(((null - eval.loss) / init.lp_norm(1)).max(0.0))
}

/// Fits the `(c, k)` cell at every grid penalty and returns the best
/// (ties: larger penalty), reusing `zero_fit` for the zero penalty.
#[allow(clippy::too_many_arguments)]
pub fn select_lambda(
    ctx: &CvContext,
    targets: &TimedMatrix,
    c: usize,
    k: usize,
    zero_fit: Scored,
    cfg: &CvConfig,
    stage: usize,
) -> Result<(f64, f64, Vec<LambdaPoint>, Scored)> {
    let (_, z) = ctx.selection_view();
    let lambda_max = match cfg.lambda_max {
        Some(l) => l,
        None => {
            let design = LagDesign::new(c, k, cfg.h, z.ncols());
            let prob =
                FitProblem::from_panels(&z, targets, design, 0, ctx.train_last(), cfg.loss, 0.0)?;
            default_lambda_max(&prob, &cfg.solver)?
        }
    };
    let grid = cfg.lambda_grid(lambda_max);
    let offset = (cfg.c_max + 1) * (cfg.k_max + 1);
    let fits: Vec<Option<Scored>> = grid
        .par_iter()
        .enumerate()
        .skip(1)
        .map(|(j, &lambda)| {
            let spec = StageSpec { c, k, lambda };
            score(ctx, &z, targets, spec, cfg, &cfg.task_solver(stage, offset + j)).ok()
        })
        .collect();
    let mut all = Vec::with_capacity(grid.len());
    all.push(Some(zero_fit));
    all.extend(fits);
    let points: Vec<LambdaPoint> = grid
        .iter()
        .zip(all.iter())
        .map(|(&lambda, fit)| LambdaPoint {
            lambda,
            fmse: fit.as_ref().map(|f| f.0),
        })
        .collect();
    let mut best = 0;
    for (j, pt) in points.iter().enumerate() {
        if let (Some(f), Some(bf)) = (pt.fmse, points[best].fmse) {
            if f <= bf {
                best = j;
            }
        }
    }
    let chosen = all.swap_remove(best).expect("zero-penalty fit present");
    Ok((grid[best], lambda_max, points, chosen))
}

/// Runs the stage loop on the training and first validation segments.
pub fn select_components(ctx: &CvContext, cfg: &CvConfig) -> Result<CvReport> {
    cfg.validate()?;
    let (y, _) = ctx.selection_view();
    let mut targets = horizon_targets(&y, cfg.h)?;
    let mut stages = Vec::new();
    let mut path: Vec<f64> = Vec::new();
    let mut chosen_s = 0;
    for stage in 1..=cfg.max_components {
        let result = select_lags(ctx, &targets, cfg, stage).and_then(|(c, k, surface, zero_fit)| {
            let (lambda, lambda_max, grid, fit) = select_lambda(ctx, &targets, c, k, zero_fit, cfg, stage)?;
            Ok((c, k, surface, lambda, lambda_max, grid, fit))
        });
        let (c, k, surface, lambda, lambda_max, grid, fit) = match result {
            Ok(r) => r,
            Err(e) if stage == 1 => return Err(e.at_stage(1)),
            Err(e) => {
                log::info!("stopping before component {stage}: {e}");
                break;
            }
        };
        let fmse = fit.0;
        stages.push(StageSelection {
            c,
            k,
            lambda,
            lambda_max,
            fmse,
            fmse_surface: surface,
            lambda_grid: grid,
        });
        let improved = path.last().is_none_or(|prev| fmse < *prev);
        path.push(fmse);
        if !improved {
            break;
        }
        chosen_s = stage;
        targets = fit.2;
    }
    let ar_orders = match cfg.ar_max_order {
        Some(max) => select_ar_orders(ctx, &stages[..chosen_s], cfg, max)?,
        None => Vec::new(),
    };
    Ok(CvReport {
        split: ctx.split,
        h: cfg.h,
        loss: cfg.loss,
        stages,
        fmse_path: path,
        chosen_s,
        ar_orders,
        fmsecv: None,
    })
}

fn bare_model(components: Vec<CoreComponent>, q: usize, m: usize, cfg: &CvConfig) -> CcfModel {
    let identity = |n: usize| crate::panel::StandardizationInfo {
        means: vec![0.0; n],
        scales: vec![1.0; n],
        constant_columns: Vec::new(),
    };
    CcfModel {
        format_version: FORMAT_VERSION,
        h: cfg.h,
        loss: cfg.loss,
        y_names: (0..q).map(|i| format!("y{i}")).collect(),
        z_names: (0..m).map(|i| format!("z{i}")).collect(),
        y_standardization: identity(q),
        z_standardization: identity(m),
        components,
        ar_augment: Vec::new(),
        stages: Vec::new(),
    }
}

/// Per-series autoregressive order in `0..=max` minimizing first-validation
/// FMSE with the components fitted on the training segment.
pub fn select_ar_orders(
    ctx: &CvContext,
    stages: &[StageSelection],
    cfg: &CvConfig,
    max: usize,
) -> Result<Vec<usize>> {
    let q = ctx.y.ncols();
    if stages.is_empty() {
        return Ok(vec![0; q]);
    }
    let (y, z) = ctx.selection_view();
    let schedule: Vec<StageSpec> = stages.iter().map(|s| s.spec()).collect();
    let (comps, _, _) = fit_components(&y, &z, &schedule, cfg.h, cfg.loss, &cfg.solver, ctx.train_last())?;
    let base = bare_model(comps, q, z.ncols(), cfg);
    let (v0, v1) = ctx.val1_origins();
    let truth = horizon_targets(&y, cfg.h)?.slice(v0, v1)?;
    let mut best = vec![(f64::INFINITY, 0usize); q];
    for order in 0..=max {
        let model = match fit_ar_standardized(&base, &y, &z, &vec![order; q], ctx.train_last()) {
            Ok(m) => m,
            Err(_) => break,
        };
        let pred = model.predict_standardized(&y, &z, v0, v1)?;
        for (j, slot) in best.iter_mut().enumerate() {
            let err = (truth.data.column(j) - pred.data.column(j)).norm_squared();
            if err < slot.0 {
                *slot = (err, order);
            }
        }
    }
    Ok(best.into_iter().map(|(_, o)| o).collect())
}

/// Refits the selected schedule on data up to the end of the first
/// validation segment (training segment only when `refit` is off) and
/// returns the mean squared error norm over the second segment.
pub fn final_fmsecv(ctx: &CvContext, report: &CvReport, cfg: &CvConfig) -> Result<f64> {
    let model = refit_model(ctx, report, cfg, ctx.split.val1_end() - 1 - cfg.h)?;
    let (v0, v1) = ctx.val2_origins();
    let pred = model.predict_standardized(&ctx.y, &ctx.z, v0, v1)?;
    let truth = horizon_targets(&ctx.y, cfg.h)?.slice(v0, v1)?;
    Ok(mean_squared_norm(&(truth.data - pred.data)))
}

/// Model with the report's hyper-parameters fitted on origins up to
/// `last_origin` (or the training segment when `refit` is off).
pub fn refit_model(ctx: &CvContext, report: &CvReport, cfg: &CvConfig, last_origin: usize) -> Result<CcfModel> {
    let schedule = report.schedule();
    let last = if cfg.refit { last_origin } else { ctx.train_last() };
    let n = last + 1 + cfg.h;
    let (y, z) = (ctx.y.rows(0, n).into_owned(), ctx.z.rows(0, n).into_owned());
    let solver = SolverConfig {
        restarts: cfg.final_restarts,
        seed: task_seed(cfg.seed, u64::MAX, 0),
        ..cfg.solver.clone()
    };
    let (comps, stages, _) = fit_components(&y, &z, &schedule, cfg.h, cfg.loss, &solver, last)?;
    let mut model = bare_model(comps, y.ncols(), z.ncols(), cfg);
    model.stages = stages;
    if report.ar_orders.iter().any(|o| *o > 0) {
        model = fit_ar_standardized(&model, &y, &z, &report.ar_orders, last)?;
    }
    Ok(model)
}

/// Result of the full cross-validation pipeline on raw panels.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: CvReport,
    /// Final model refitted on every available origin, with the panels'
    /// names and standardization attached.
    pub model: CcfModel,
}

pub fn run_cv(y_panel: &TimeSeriesPanel, z_panel: &TimeSeriesPanel, cfg: &CvConfig) -> Result<CvOutcome> {
    cfg.validate()?;
    let (ys, y_info) = standardize(y_panel)?;
    let (zs, z_info) = standardize(z_panel)?;
    let ctx = CvContext::new(ys.values().clone(), zs.values().clone(), cfg.alpha, cfg.h)?;
    let mut report = select_components(&ctx, cfg)?;
    report.fmsecv = Some(final_fmsecv(&ctx, &report, cfg)?);
    let last = ctx.y.nrows() - 1 - cfg.h;
    let mut model = refit_model(&ctx, &report, cfg, last)?;
    model.y_names = y_panel.labels().to_vec();
    model.z_names = z_panel.labels().to_vec();
    model.y_standardization = y_info;
    model.z_standardization = z_info;
    Ok(CvOutcome { report, model })
}
