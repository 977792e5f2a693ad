//! Multi-component models.
//!
//! Components are extracted one at a time: each new component is fitted to
//! the forecast errors left by the previous ones, and the forecast of
//! `y_{T+h}` is the sum of the component forecasts plus optional per-series
//! autoregressive corrections of the remaining errors.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CcfError, Result};
use crate::linalg::spd_solve_vec;
use crate::objective::{mean_squared_norm, FitProblem, LossKind};
use crate::panel::{
    horizon_targets, lag_matrix, standardize, LagDesign, StandardizationInfo, TimeSeriesPanel,
    TimedMatrix, MIN_EFFECTIVE_SAMPLE,
};
use crate::solver::{fit_component, FitTrace, SolverConfig, Termination};

pub const FORMAT_VERSION: u32 = 1;

pub(crate) mod dvector_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub(crate) mod row_major {
    use nalgebra::DMatrix;
    use serde::{de::Error, Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Dense {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = m.transpose().as_slice().to_vec();
        Dense {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let dense = Dense::deserialize(d)?;
        if dense.rows * dense.cols != dense.data.len() {
            return Err(D::Error::custom(format!(
                "matrix of {}x{} with {} entries",
                dense.rows,
                dense.cols,
                dense.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(dense.rows, dense.cols, &dense.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreComponent {
    #[serde(with = "dvector_serde")]
    pub beta: DVector<f64>,
    #[serde(with = "row_major")]
    pub gamma: DMatrix<f64>,
    pub c: usize,
    pub k: usize,
    pub lambda: f64,
    pub h: usize,
    pub loss: LossKind,
}

impl CoreComponent {
    pub fn design(&self) -> LagDesign {
        LagDesign::new(self.c, self.k, self.h, self.beta.len() / (self.c + 1))
    }

    /// First origin at which the component has a full window.
    pub fn first_origin(&self) -> usize {
        self.c + self.k
    }

    /// Component forecasts `Gamma (f_t, ..., f_{t-k})'` for origins
    /// `first..=last`.
    pub fn forecasts(&self, z: &DMatrix<f64>, first: usize, last: usize) -> Result<TimedMatrix> {
        if first < self.first_origin() {
            return Err(CcfError::IndexOutOfRange {
                index: first,
                lo: self.first_origin(),
                hi: last,
            });
        }
        let x = lag_matrix(z, self.c, first - self.k, last)?;
        if x.data.ncols() != self.beta.len() {
            return Err(CcfError::Schema(format!(
                "component expects {} stacked regressors, data give {}",
                self.beta.len(),
                x.data.ncols()
            )));
        }
        let s = &x.data * &self.beta;
        let n = last - first + 1;
        let k = self.k;
        let f = DMatrix::from_fn(n, k + 1, |r, j| s[r + k - j]);
        Ok(TimedMatrix {
            first_time: first,
            data: f * self.gamma.transpose(),
        })
    }

    /// Removes this component's forecasts from `targets` over every origin
    /// where both are defined.
    pub fn subtract_from(&self, targets: &TimedMatrix, z: &DMatrix<f64>) -> Result<TimedMatrix> {
        let first = targets.first_time.max(self.first_origin());
        let last = targets.last_time().min(z.nrows().saturating_sub(1));
        if first > last {
            return Err(CcfError::EmptySample(
                "no origin shared by targets and component".into(),
            ));
        }
        let fit = self.forecasts(z, first, last)?;
        let kept = targets.slice(first, last)?;
        Ok(TimedMatrix {
            first_time: first,
            data: kept.data - fit.data,
        })
    }

    /// `m (c + 1) + q (k + 1)`.
    pub fn parameter_count(&self) -> usize {
        self.beta.len() + self.gamma.len()
    }
}

/// Autoregressive correction of one target series' forecast errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArAugment {
    pub series: usize,
    pub order: usize,
    /// Coefficient `r - 1` multiplies `y_{t-r}`.
    pub coefficients: Vec<f64>,
}

/// Hyper-parameters of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub c: usize,
    pub k: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub spec: StageSpec,
    /// Origins used to fit the stage.
    pub first_origin: usize,
    pub last_origin: usize,
    /// Mean squared error norm over the stage's fit range, before and after.
    pub loss_before: f64,
    pub loss_after: f64,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcfModel {
    pub format_version: u32,
    pub h: usize,
    pub loss: LossKind,
    pub y_names: Vec<String>,
    pub z_names: Vec<String>,
    pub y_standardization: StandardizationInfo,
    pub z_standardization: StandardizationInfo,
    pub components: Vec<CoreComponent>,
    #[serde(default)]
    pub ar_augment: Vec<ArAugment>,
    #[serde(default)]
    pub stages: Vec<StageSummary>,
}

/// One fitted stage plus the errors it leaves.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub component: CoreComponent,
    /// Updated errors over every origin of the input targets the component
    /// can forecast, including origins beyond the fit range.
    pub residuals: TimedMatrix,
    pub trace: FitTrace,
    pub summary: StageSummary,
}

/// Fits one component to `targets` (indexed by origin) over origins up to
/// `last_origin` and returns it with the updated errors.
#[allow(clippy::too_many_arguments)]
pub fn extract_component(
    targets: &TimedMatrix,
    z: &DMatrix<f64>,
    spec: StageSpec,
    h: usize,
    loss: LossKind,
    cfg: &SolverConfig,
    last_origin: usize,
) -> Result<Extraction> {
    let design = LagDesign::new(spec.c, spec.k, h, z.ncols());
    let prob = FitProblem::from_panels(z, targets, design, 0, last_origin, loss, spec.lambda)?;
    let (params, trace) = fit_component(&prob, cfg)?;
    let component = CoreComponent {
        beta: params.beta,
        gamma: params.gamma,
        c: spec.c,
        k: spec.k,
        lambda: spec.lambda,
        h,
        loss,
    };
    let residuals = component.subtract_from(targets, z)?;
    let in_range = residuals.slice(prob.first_origin(), prob.last_origin())?;
    let before = targets.slice(prob.first_origin(), prob.last_origin())?;
    let summary = StageSummary {
        spec,
        first_origin: prob.first_origin(),
        last_origin: prob.last_origin(),
        loss_before: mean_squared_norm(&before.data),
        loss_after: mean_squared_norm(&in_range.data),
        iterations: trace.iterations,
        termination: trace.termination,
    };
    Ok(Extraction {
        component,
        residuals,
        trace,
        summary,
    })
}

/// Sequential extraction on standardized data. Returns the components, the
/// per-stage summaries and the final errors.
#[allow(clippy::too_many_arguments)]
pub fn fit_components(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    schedule: &[StageSpec],
    h: usize,
    loss: LossKind,
    cfg: &SolverConfig,
    last_origin: usize,
) -> Result<(Vec<CoreComponent>, Vec<StageSummary>, TimedMatrix)> {
    if schedule.is_empty() {
        return Err(CcfError::Config("component schedule is empty".into()));
    }
    let mut targets = horizon_targets(y, h)?;
    let mut components = Vec::with_capacity(schedule.len());
    let mut stages = Vec::with_capacity(schedule.len());
    for (i, spec) in schedule.iter().enumerate() {
        let ex = extract_component(&targets, z, *spec, h, loss, cfg, last_origin)
            .map_err(|e| e.at_stage(i + 1))?;
        targets = ex.residuals;
        components.push(ex.component);
        stages.push(ex.summary);
    }
    Ok((components, stages, targets))
}

fn check_names(expected: &[String], panel: &TimeSeriesPanel, block: &str) -> Result<()> {
    if expected != panel.labels() {
        return Err(CcfError::Schema(format!(
            "{block} columns {:?} do not match model columns {:?}",
            panel.labels(),
            expected
        )));
    }
    Ok(())
}

/// Standardizes both panels, fits the schedule on every available origin
/// and returns the model.
pub fn fit_model(
    y_panel: &TimeSeriesPanel,
    z_panel: &TimeSeriesPanel,
    schedule: &[StageSpec],
    h: usize,
    loss: LossKind,
    cfg: &SolverConfig,
) -> Result<CcfModel> {
    if y_panel.n_periods() != z_panel.n_periods() {
        return Err(CcfError::Dimension(format!(
            "target panel has {} periods, explanatory panel {}",
            y_panel.n_periods(),
            z_panel.n_periods()
        )));
    }
    let (ys, y_info) = standardize(y_panel)?;
    let (zs, z_info) = standardize(z_panel)?;
    let last = y_panel.n_periods().saturating_sub(h + 1);
    let (components, stages, _) =
        fit_components(ys.values(), zs.values(), schedule, h, loss, cfg, last)?;
    Ok(CcfModel {
        format_version: FORMAT_VERSION,
        h,
        loss,
        y_names: y_panel.labels().to_vec(),
        z_names: z_panel.labels().to_vec(),
        y_standardization: y_info,
        z_standardization: z_info,
        components,
        ar_augment: Vec::new(),
        stages,
    })
}

/// Point forecast of `y_{T+h}` made at origin `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub origin: usize,
    pub h: usize,
    pub standardized: Vec<f64>,
    pub original: Vec<f64>,
}

impl CcfModel {
    pub fn q(&self) -> usize {
        self.y_names.len()
    }

    pub fn m(&self) -> usize {
        self.z_names.len()
    }

    /// `max_i (c_i + k_i)`.
    pub fn d(&self) -> usize {
        self.components
            .iter()
            .map(|c| c.c + c.k)
            .max()
            .unwrap_or(0)
    }

    fn ar_reach(&self) -> usize {
        self.ar_augment.iter().map(|a| a.order).max().unwrap_or(0)
    }

    /// First origin at which every term of the forecast is available.
    pub fn first_origin(&self) -> usize {
        self.d().max(self.ar_reach())
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(self)
    }

    /// Forecasts of `y_{t+h}` for origins `first..=last` on the standardized
    /// scale.
    pub fn predict_standardized(
        &self,
        y: &DMatrix<f64>,
        z: &DMatrix<f64>,
        first: usize,
        last: usize,
    ) -> Result<TimedMatrix> {
        if self.components.is_empty() {
            return Err(CcfError::Config("model has no components".into()));
        }
        if first < self.first_origin() || last >= z.nrows() || last >= y.nrows() || first > last {
            return Err(CcfError::IndexOutOfRange {
                index: if first < self.first_origin() { first } else { last },
                lo: self.first_origin(),
                hi: z.nrows().min(y.nrows()).saturating_sub(1),
            });
        }
        let mut out = DMatrix::zeros(last - first + 1, self.q());
        for comp in &self.components {
            out += comp.forecasts(z, first, last)?.data;
        }
        for ar in &self.ar_augment {
            for (r, phi) in ar.coefficients.iter().enumerate() {
                for t in first..=last {
                    out[(t - first, ar.series)] += phi * y[(t - r - 1, ar.series)];
                }
            }
        }
        Ok(TimedMatrix {
            first_time: first,
            data: out,
        })
    }

    fn standardized_panels(
        &self,
        y_panel: &TimeSeriesPanel,
        z_panel: &TimeSeriesPanel,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_names(&self.y_names, y_panel, "target")?;
        check_names(&self.z_names, z_panel, "explanatory")?;
        Ok((
            self.y_standardization.apply(y_panel.values())?,
            self.z_standardization.apply(z_panel.values())?,
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: CcfModel = serde_json::from_str(text)?;
        if model.format_version != FORMAT_VERSION {
            return Err(CcfError::Schema(format!(
                "model format version {} is not supported (expected {FORMAT_VERSION})",
                model.format_version
            )));
        }
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<()> {
        let (q, m) = (self.q(), self.m());
        if self.y_standardization.n_series() != q || self.z_standardization.n_series() != m {
            return Err(CcfError::Schema("standardization does not match column lists".into()));
        }
        for comp in &self.components {
            if comp.beta.len() != m * (comp.c + 1) || comp.gamma.shape() != (q, comp.k + 1) {
                return Err(CcfError::Schema(format!(
                    "component with c={}, k={} has inconsistent dimensions",
                    comp.c, comp.k
                )));
            }
            if comp.h != self.h {
                return Err(CcfError::Schema("components disagree on the horizon".into()));
            }
        }
        for ar in &self.ar_augment {
            if ar.series >= q || ar.coefficients.len() != ar.order {
                return Err(CcfError::Schema("invalid autoregressive augmentation".into()));
            }
        }
        Ok(())
    }
}

/// Forecast of `y_{T+h}` from origin `t` using raw (unstandardized) panels.
pub fn forecast(
    model: &CcfModel,
    y_panel: &TimeSeriesPanel,
    z_panel: &TimeSeriesPanel,
    t: usize,
) -> Result<Forecast> {
    let (y, z) = model.standardized_panels(y_panel, z_panel)?;
    if t < model.first_origin() {
        return Err(CcfError::EmptySample(format!(
            "origin {t} has too little history (need {})",
            model.first_origin()
        )));
    }
    let pred = model.predict_standardized(&y, &z, t, t)?;
    let standardized = pred.data.row(0).transpose();
    let original = model.y_standardization.invert_vector(&standardized)?;
    Ok(Forecast {
        origin: t,
        h: model.h,
        standardized: standardized.iter().cloned().collect(),
        original: original.iter().cloned().collect(),
    })
}

/// Least-squares autoregression (no intercept) of `errors` on
/// `lagged[t - r]`, `r = 1..=order`, over the rows of `errors`.
pub fn fit_error_autoregression(
    errors: &[(usize, f64)],
    lagged: &[f64],
    order: usize,
) -> Result<Vec<f64>> {
    if order == 0 {
        return Ok(Vec::new());
    }
    let rows: Vec<&(usize, f64)> = errors.iter().filter(|(t, _)| *t >= order).collect();
    if rows.len() < order + MIN_EFFECTIVE_SAMPLE {
        return Err(CcfError::EmptySample(format!(
            "autoregression of order {order} with {} observations",
            rows.len()
        )));
    }
    let design = DMatrix::from_fn(rows.len(), order, |i, r| lagged[rows[i].0 - r - 1]);
    let target = DVector::from_iterator(rows.len(), rows.iter().map(|(_, e)| *e));
    let coef = spd_solve_vec(&design.tr_mul(&design), &design.tr_mul(&target))?;
    Ok(coef.iter().cloned().collect())
}

/// Adds per-series autoregressive corrections fitted to the model's
/// in-sample errors over origins up to `last_origin` (standardized data).
pub fn fit_ar_standardized(
    model: &CcfModel,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    orders: &[usize],
    last_origin: usize,
) -> Result<CcfModel> {
    if orders.len() != model.q() {
        return Err(CcfError::Dimension(format!(
            "{} autoregressive orders for {} series",
            orders.len(),
            model.q()
        )));
    }
    let base = CcfModel {
        ar_augment: Vec::new(),
        ..model.clone()
    };
    let first = base.d();
    let last = last_origin.min(y.nrows().saturating_sub(model.h + 1));
    if first > last {
        return Err(CcfError::EmptySample("no in-sample origins for errors".into()));
    }
    let pred = base.predict_standardized(y, z, first, last)?;
    let mut augment = Vec::new();
    for (j, &order) in orders.iter().enumerate() {
        if order == 0 {
            continue;
        }
        let errors: Vec<(usize, f64)> = (first..=last)
            .map(|t| (t, y[(t + model.h, j)] - pred.data[(t - first, j)]))
            .collect();
        let col: Vec<f64> = y.column(j).iter().cloned().collect();
        let coefficients = fit_error_autoregression(&errors, &col, order)
            .map_err(|e| CcfError::Config(format!("series {j}: {e}")))?;
        augment.push(ArAugment {
            series: j,
            order,
            coefficients,
        });
    }
    Ok(CcfModel {
        ar_augment: augment,
        ..base
    })
}

/// As [`fit_ar_standardized`], on raw panels and every available origin.
pub fn fit_ar_augment(
    model: &CcfModel,
    y_panel: &TimeSeriesPanel,
    z_panel: &TimeSeriesPanel,
    orders: &[usize],
) -> Result<CcfModel> {
    let (y, z) = model.standardized_panels(y_panel, z_panel)?;
    let last = y.nrows().saturating_sub(model.h + 1);
    fit_ar_standardized(model, &y, &z, orders, last)
}

/// `sum_i [m (c_i + 1) + q (k_i + 1)]`.
pub fn parameter_count(model: &CcfModel) -> usize {
    model.components.iter().map(|c| c.parameter_count()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::angle_between;
    use crate::objective::tests::gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// z is white noise; y_{t+h} = gamma (f_t, ..., f_{t-k})' with
    /// f_t = x_t' beta, so the one-component model is exact.
    pub(crate) fn one_component_dgp(
        seed: u64,
        t: usize,
        m: usize,
        q: usize,
        c: usize,
        k: usize,
        h: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(&mut rng, t, m);
        let mut beta = gaussian(&mut rng, m * (c + 1), 1).column(0).normalize();
        crate::linalg::fix_sign(&mut beta);
        let gamma = gaussian(&mut rng, q, k + 1);
        let x = lag_matrix(&z, c, c, t - 1).unwrap();
        let f = &x.data * &beta;
        let mut y = DMatrix::zeros(t, q);
        for origin in (c + k)..(t - h) {
            for j in 0..=k {
                let fv = f[origin - j - c];
                for i in 0..q {
                    y[(origin + h, i)] += gamma[(i, j)] * fv;
                }
            }
        }
        (y, z, beta, gamma)
    }

    fn component(m: usize, q: usize, c: usize, k: usize) -> CoreComponent {
        CoreComponent {
            beta: DVector::from_element(m * (c + 1), 1.0).normalize(),
            gamma: DMatrix::from_element(q, k + 1, 0.5),
            c,
            k,
            lambda: 0.0,
            h: 1,
            loss: LossKind::G1,
        }
    }

    #[test]
    fn noiseless_first_stage_leaves_no_error() {
        let (y, z, beta, _) = one_component_dgp(1, 120, 4, 3, 1, 1, 1);
        let targets = horizon_targets(&y, 1).unwrap();
        let spec = StageSpec {
            c: 1,
            k: 1,
            lambda: 0.0,
        };
        let ex = extract_component(&targets, &z, spec, 1, LossKind::G1, &SolverConfig::default(), 118)
            .unwrap();
        let tail = ex.residuals.slice(3, 118).unwrap();
        assert!(mean_squared_norm(&tail.data) < 1e-10);
        assert!(angle_between(&ex.component.beta, &beta) < 1e-4);
        assert!(ex.summary.loss_after <= ex.summary.loss_before);
    }

    #[test]
    fn second_stage_on_exhausted_targets_gains_nothing() {
        let (y, z, _, _) = one_component_dgp(2, 120, 4, 3, 0, 0, 1);
        let schedule = [
            StageSpec {
                c: 0,
                k: 0,
                lambda: 0.0,
            };
            2
        ];
        let (_, stages, _) =
            fit_components(&y, &z, &schedule, 1, LossKind::G1, &SolverConfig::default(), 118).unwrap();
        assert!(stages[1].loss_before - stages[1].loss_after < 1e-10);
    }

    #[test]
    fn residual_recursion_telescopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = gaussian(&mut rng, 150, 5);
        let y = gaussian(&mut rng, 150, 3) + &z.columns(0, 3) * 0.7;
        let schedule = [
            StageSpec {
                c: 1,
                k: 0,
                lambda: 0.0,
            },
            StageSpec {
                c: 0,
                k: 2,
                lambda: 0.0,
            },
        ];
        let (comps, stages, resid) =
            fit_components(&y, &z, &schedule, 2, LossKind::G1, &SolverConfig::default(), 147).unwrap();
        assert_eq!(resid.first_time, 2);
        let targets = horizon_targets(&y, 2).unwrap().slice(2, 147).unwrap();
        let mut direct = targets.data.clone();
        for comp in &comps {
            direct -= comp.forecasts(&z, 2, 147).unwrap().data;
        }
        assert!((direct - &resid.data).amax() < 1e-10);
        // In-sample loss on the common range cannot go up.
        let after_first = comps[0].subtract_from(&horizon_targets(&y, 2).unwrap(), &z).unwrap();
        let common = after_first.slice(2, 147).unwrap();
        assert!(mean_squared_norm(&resid.data) <= mean_squared_norm(&common.data) + 1e-12);
        assert!(mean_squared_norm(&common.data) <= mean_squared_norm(&targets.data) + 1e-12);
        assert_eq!(stages.len(), 2);
    }

    #[test]
    fn horizon_alignment_is_per_model() {
        let (y, z, _, _) = one_component_dgp(4, 100, 3, 2, 0, 0, 1);
        for h in [1, 2] {
            let (comps, stages, resid) = fit_components(
                &y,
                &z,
                &[StageSpec {
                    c: 0,
                    k: 0,
                    lambda: 0.0,
                }],
                h,
                LossKind::G1,
                &SolverConfig::default(),
                99 - h,
            )
            .unwrap();
            assert_eq!(stages[0].last_origin, 99 - h);
            assert_eq!(comps[0].h, h);
            // Row for origin t is y_{t+h} minus its forecast.
            let t = 10;
            let fc = comps[0].forecasts(&z, t, t).unwrap();
            let e = y[(t + h, 0)] - fc.data[(0, 0)];
            assert!((resid.row_at(t).unwrap()[0] - e).abs() < 1e-14);
        }
    }

    #[test]
    fn smallest_configuration_forecast() {
        let comp = component(2, 2, 0, 0);
        let z = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        let fc = comp.forecasts(&z, 2, 2).unwrap();
        let f = comp.beta.dot(&DVector::from_vec(vec![3.0, 4.0]));
        assert!((fc.data[(0, 0)] - 0.5 * f).abs() < 1e-15);
    }

    #[test]
    fn parameter_counts() {
        let one = component(50, 50, 1, 1);
        assert_eq!(one.parameter_count(), 200);
        let (s, p, q, k) = (2usize, 100usize, 50usize, 1usize);
        let mut model = toy_model(vec![one.clone(), one]);
        assert_eq!(parameter_count(&model), s * p + s * q * (k + 1));
        model.components.pop();
        assert_eq!(parameter_count(&model) * 2, 400);
    }

    fn toy_model(components: Vec<CoreComponent>) -> CcfModel {
        let m = components[0].beta.len() / (components[0].c + 1);
        let q = components[0].gamma.nrows();
        CcfModel {
            format_version: FORMAT_VERSION,
            h: 1,
            loss: LossKind::G1,
            y_names: (0..q).map(|i| format!("y{i}")).collect(),
            z_names: (0..m).map(|i| format!("z{i}")).collect(),
            y_standardization: StandardizationInfo {
                means: vec![0.0; q],
                scales: vec![1.0; q],
                constant_columns: vec![],
            },
            z_standardization: StandardizationInfo {
                means: vec![0.0; m],
                scales: vec![1.0; m],
                constant_columns: vec![],
            },
            components,
            ar_augment: vec![],
            stages: vec![],
        }
    }

    #[test]
    fn noiseless_forecast_is_exact() {
        let (y, z, _, _) = one_component_dgp(5, 140, 4, 3, 1, 1, 1);
        let spec = StageSpec {
            c: 1,
            k: 1,
            lambda: 0.0,
        };
        let (comps, _, _) =
            fit_components(&y, &z, &[spec], 1, LossKind::G1, &SolverConfig::default(), 137).unwrap();
        let model = toy_model(comps);
        let pred = model.predict_standardized(&y, &z, 138, 138).unwrap();
        let err = (pred.data.row(0) - y.row(139)).norm();
        assert!(err < 1e-6, "forecast error {err}");
    }

    #[test]
    fn reconstruction_mode_matches_training_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = gaussian(&mut rng, 80, 4);
        let y = &z.columns(0, 2) * 0.8 + gaussian(&mut rng, 80, 2) * 0.3;
        let schedule = [StageSpec {
            c: 0,
            k: 0,
            lambda: 0.0,
        }];
        let (comps, stages, _) =
            fit_components(&y, &z, &schedule, 0, LossKind::G1, &SolverConfig::default(), 79).unwrap();
        let fitted = comps[0].forecasts(&z, 0, 79).unwrap();
        let mse = mean_squared_norm(&(&y - fitted.data));
        assert!((mse - stages[0].loss_after).abs() < 1e-12);
    }

    #[test]
    fn ar_augment_recovers_planted_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = 120;
        let z = gaussian(&mut rng, t, 3);
        let mut beta = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        beta.normalize_mut();
        // y_{t+1} = 0.9 z_{t,0} + 0.5 y_{t-1}, built recursively.
        let mut y = DMatrix::zeros(t, 1);
        y[(0, 0)] = rng.sample::<f64, _>(rand_distr::StandardNormal);
        y[(1, 0)] = rng.sample::<f64, _>(rand_distr::StandardNormal);
        for s in 1..(t - 1) {
            y[(s + 1, 0)] = 0.9 * z[(s, 0)] + 0.5 * y[(s - 1, 0)];
        }
        let comp = CoreComponent {
            beta,
            gamma: DMatrix::from_element(1, 1, 0.9),
            c: 0,
            k: 0,
            lambda: 0.0,
            h: 1,
            loss: LossKind::G1,
        };
        let mut model = toy_model(vec![comp]);
        model.y_names = vec!["y0".into()];
        let aug = fit_ar_standardized(&model, &y, &z, &[1], t - 2).unwrap();
        assert!((aug.ar_augment[0].coefficients[0] - 0.5).abs() < 1e-8);
        let pred = aug.predict_standardized(&y, &z, 1, t - 2).unwrap();
        let err = &horizon_targets(&y, 1).unwrap().slice(1, t - 2).unwrap().data - pred.data;
        assert!(mean_squared_norm(&err) < 1e-16);
        let unchanged = fit_ar_standardized(&model, &y, &z, &[0], t - 2).unwrap();
        assert_eq!(unchanged, model);
    }

    #[test]
    fn ar_augment_never_hurts_in_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = gaussian(&mut rng, 100, 3);
        let y = gaussian(&mut rng, 100, 2);
        let (comps, _, _) = fit_components(
            &y,
            &z,
            &[StageSpec {
                c: 0,
                k: 0,
                lambda: 0.0,
            }],
            1,
            LossKind::G1,
            &SolverConfig::default(),
            98,
        )
        .unwrap();
        let model = toy_model(comps);
        let aug = fit_ar_standardized(&model, &y, &z, &[2, 3], 98).unwrap();
        let targets = horizon_targets(&y, 1).unwrap().slice(3, 98).unwrap();
        let base = model.predict_standardized(&y, &z, 3, 98).unwrap();
        let with = aug.predict_standardized(&y, &z, 3, 98).unwrap();
        for j in 0..2 {
            let a: f64 = (&targets.data - &base.data).column(j).norm_squared();
            let b: f64 = (&targets.data - &with.data).column(j).norm_squared();
            assert!(b <= a + 1e-12);
        }
        assert!(fit_ar_standardized(&model, &y, &z, &[95, 0], 98).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let (y, z, _, _) = one_component_dgp(9, 90, 3, 2, 1, 1, 1);
        let noisy = &y + gaussian(&mut ChaCha8Rng::seed_from_u64(10), 90, 2) * 0.1;
        let yp = TimeSeriesPanel::from_matrix(noisy).unwrap();
        let zp = TimeSeriesPanel::from_matrix(z).unwrap();
        let spec = StageSpec {
            c: 1,
            k: 1,
            lambda: 0.01,
        };
        let model = fit_model(&yp, &zp, &[spec], 1, LossKind::G1, &SolverConfig::default()).unwrap();
        let model = fit_ar_augment(&model, &yp, &zp, &[1, 0]).unwrap();
        let back = CcfModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
        let a = forecast(&model, &yp, &zp, 88).unwrap();
        let b = forecast(&back, &yp, &zp, 88).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let (y, z, _, _) = one_component_dgp(11, 60, 3, 2, 0, 0, 1);
        let yp = TimeSeriesPanel::from_matrix(y).unwrap();
        let zp = TimeSeriesPanel::from_matrix(z).unwrap();
        let spec = StageSpec {
            c: 0,
            k: 0,
            lambda: 0.0,
        };
        let model = fit_model(&yp, &zp, &[spec], 1, LossKind::G1, &SolverConfig::default()).unwrap();
        let renamed = TimeSeriesPanel::new(yp.values().clone(), vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(
            forecast(&model, &renamed, &zp, 50),
            Err(CcfError::Schema(_))
        ));
        let mut text = model.to_json().unwrap();
        text = text.replace("\"format_version\": 1", "\"format_version\": 99");
        assert!(matches!(CcfModel::from_json(&text), Err(CcfError::Schema(_))));
    }

    #[test]
    fn stage_failures_carry_the_stage_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = gaussian(&mut rng, 30, 2);
        let y = gaussian(&mut rng, 30, 2);
        let schedule = [
            StageSpec {
                c: 0,
                k: 0,
                lambda: 0.0,
            },
            StageSpec {
                c: 10,
                k: 10,
                lambda: 0.0,
            },
        ];
        let err = fit_components(&y, &z, &schedule, 1, LossKind::G1, &SolverConfig::default(), 28)
            .unwrap_err();
        assert!(matches!(err, CcfError::Stage { stage: 2, .. }));
        assert!(matches!(err.root(), CcfError::EmptySample(_)));
    }

    #[test]
    fn insufficient_history_is_an_error() {
        let (y, z, _, _) = one_component_dgp(13, 60, 3, 2, 1, 1, 1);
        let yp = TimeSeriesPanel::from_matrix(y).unwrap();
        let zp = TimeSeriesPanel::from_matrix(z).unwrap();
        let spec = StageSpec {
            c: 1,
            k: 1,
            lambda: 0.0,
        };
        let model = fit_model(&yp, &zp, &[spec], 1, LossKind::G1, &SolverConfig::default()).unwrap();
        assert!(forecast(&model, &yp, &zp, 1).is_err());
        assert!(forecast(&model, &yp, &zp, 2).is_ok());
    }

    use rand::Rng;
}
