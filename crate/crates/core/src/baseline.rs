//! Supervised dynamic principal components (sdPCA), fitted separately for
//! each target series.
//!
//! Every predictor is first replaced by its fitted value from a lagged
//! regression of the target on that predictor alone. Principal components of
//! these scaled predictors then feed a final regression of the target.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccf::{dvector_serde, row_major};
use crate::error::{CcfError, Result};
use crate::linalg::fix_sign;
use crate::objective::mean_squared_norm;
use crate::panel::{horizon_targets, standardize, TimeSeriesPanel, TimedMatrix};
use crate::selection::{final_fmsecv, select_components, CvConfig, CvContext, CvReport};

/// Ridge added to the normal equations when they are numerically singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdpcaConfig {
    /// Largest lag order tried in the scaling regressions.
    pub q_max: usize,
    /// Largest number of principal components tried.
    pub s_max: usize,
    pub h: usize,
}

impl Default for SdpcaConfig {
    fn default() -> Self {
        Self {
            q_max: 3,
            s_max: 10,
            h: 1,
        }
    }
}

impl SdpcaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_max == 0 || self.s_max == 0 {
            return Err(CcfError::Config(format!(
                "sdPCA caps must be positive (q_max={}, s_max={})",
                self.q_max, self.s_max
            )));
        }
        Ok(())
    }
}

/// Least squares of `y` on `[1, x]`; returns the intercept and slopes.
pub fn ols_with_intercept(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let (n, p) = x.shape();
    if n != y.len() {
        return Err(CcfError::Dimension(format!("{n} regressor rows for {} targets", y.len())));
    }
    if n == 0 {
        return Err(CcfError::EmptySample("regression with no observations".into()));
    }
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.view_mut((0, 1), (n, p)).copy_from(x);
    let gram = design.tr_mul(&design);
    let rhs = design.tr_mul(y);
    let coef = match gram.clone().cholesky() {
        Some(ch) if ch.l().diagonal().min() > 1e-7 * ch.l().diagonal().max() => ch.solve(&rhs),
        _ => {
            let mut ridged = gram;
            for i in 0..=p {
                ridged[(i, i)] += RIDGE_FALLBACK;
            }
            ridged
                .cholesky()
                .ok_or_else(|| CcfError::Numeric("ridge-regularized regression failed".into()))?
                .solve(&rhs)
        }
    };
    Ok((coef[0], coef.rows(1, p).into_owned()))
}

/// Lag coefficients of the per-predictor scaling regressions: entry `(i, l)`
/// multiplies `z_{t-l, i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorScaling {
    #[serde(with = "row_major")]
    pub coefficients: DMatrix<f64>,
}

impl PredictorScaling {
    pub fn lags(&self) -> usize {
        self.coefficients.ncols()
    }

    /// Scaled predictors for times `first..=last`, one row per time.
    pub fn apply(&self, z: &DMatrix<f64>, first: usize, last: usize) -> Result<TimedMatrix> {
        let lags = self.lags();
        if first + 1 < lags || last >= z.nrows() || first > last {
            return Err(CcfError::IndexOutOfRange {
                index: if first + 1 < lags { first } else { last },
                lo: lags - 1,
                hi: z.nrows() - 1,
            });
        }
        let m = z.ncols();
        let rows = last - first + 1;
        let mut data = DMatrix::zeros(rows, m);
        for l in 0..lags {
            let block = z.rows(first - l, rows);
            for i in 0..m {
                let g = self.coefficients[(i, l)];
                data.column_mut(i).axpy(g, &block.column(i), 1.0);
            }
        }
        Ok(TimedMatrix {
            first_time: first,
            data,
        })
    }
}

/// Regresses target column `series` at origins `lo..=hi` on each predictor's
/// own `lags` most recent values (with intercept); the fitted value without
/// intercept is the scaled predictor.
pub fn scale_predictors(
    targets: &TimedMatrix,
    series: usize,
    z: &DMatrix<f64>,
    lags: usize,
    lo: usize,
    hi: usize,
) -> Result<PredictorScaling> {
    if lags == 0 {
        return Err(CcfError::Config("scaling regressions need at least one lag".into()));
    }
    if lo + 1 < lags || hi >= z.nrows() {
        return Err(CcfError::IndexOutOfRange {
            index: lo,
            lo: lags - 1,
            hi: z.nrows() - 1,
        });
    }
    let y = targets.slice(lo, hi)?.data.column(series).into_owned();
    let n = hi - lo + 1;
    let m = z.ncols();
    let mut coefficients = DMatrix::zeros(m, lags);
    let mut x = DMatrix::zeros(n, lags);
    for i in 0..m {
        for l in 0..lags {
            x.column_mut(l).copy_from(&z.view((lo - l, i), (n, 1)));
        }
        let (_, slopes) = ols_with_intercept(&x, &y)?;
        coefficients.row_mut(i).copy_from(&slopes.transpose());
    }
    Ok(PredictorScaling { coefficients })
}

/// One target series' fitted sdPCA forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpcaSeries {
    pub scaling: PredictorScaling,
    #[serde(with = "dvector_serde")]
    pub center: DVector<f64>,
    /// Orthonormal principal directions, one per column.
    #[serde(with = "row_major")]
    pub directions: DMatrix<f64>,
    pub intercept: f64,
    #[serde(with = "dvector_serde")]
    pub coefficients: DVector<f64>,
    #[serde(default)]
    pub validation_fmse: Option<f64>,
}

impl SdpcaSeries {
    pub fn lags(&self) -> usize {
        self.scaling.lags()
    }

    pub fn components(&self) -> usize {
        self.directions.ncols()
    }

    /// Principal component scores at times `first..=last`.
    pub fn scores(&self, z: &DMatrix<f64>, first: usize, last: usize) -> Result<DMatrix<f64>> {
        let mut xs = self.scaling.apply(z, first, last)?.data;
        for mut row in xs.row_iter_mut() {
            row -= self.center.transpose();
        }
        Ok(xs * &self.directions)
    }

    pub fn predict(&self, z: &DMatrix<f64>, first: usize, last: usize) -> Result<DVector<f64>> {
        let f = self.scores(z, first, last)?;
        Ok((f * &self.coefficients).add_scalar(self.intercept))
    }
}

/// Scaled predictors with their full eigen-basis, shared by every component
/// count tried for one lag order.
struct PcBasis {
    scaling: PredictorScaling,
    center: DVector<f64>,
    directions: DMatrix<f64>,
    scores: DMatrix<f64>,
    y: DVector<f64>,
}

impl PcBasis {
    fn new(targets: &TimedMatrix, series: usize, z: &DMatrix<f64>, lags: usize, lo: usize, hi: usize) -> Result<Self> {
        let scaling = scale_predictors(targets, series, z, lags, lo, hi)?;
        let xs = scaling.apply(z, lo, hi)?.data;
        let n = xs.nrows() as f64;
        let center = xs.row_mean().transpose();
        let mut xc = xs;
        for mut row in xc.row_iter_mut() {
            row -= center.transpose();
        }
        let cov = xc.tr_mul(&xc) / n;
        let eig = SymmetricEigen::try_new(cov, 1e-14, 10_000)
            .ok_or_else(|| CcfError::Numeric("eigen-decomposition of scaled predictors failed".into()))?;
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut directions = DMatrix::zeros(center.len(), order.len());
        for (dst, &src) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(src).into_owned();
            fix_sign(&mut v);
            directions.set_column(dst, &v);
        }
        let scores = &xc * &directions;
        let y = targets.slice(lo, hi)?.data.column(series).into_owned();
        Ok(Self {
            scaling,
            center,
            directions,
            scores,
            y,
        })
    }

    fn fit(&self, s: usize) -> Result<SdpcaSeries> {
        let (intercept, coefficients) = ols_with_intercept(&self.scores.columns(0, s).into_owned(), &self.y)?;
        Ok(SdpcaSeries {
            scaling: self.scaling.clone(),
            center: self.center.clone(),
            directions: self.directions.columns(0, s).into_owned(),
            intercept,
            coefficients,
            validation_fmse: None,
        })
    }
}

fn series_candidates(
    targets: &TimedMatrix,
    series: usize,
    z: &DMatrix<f64>,
    cfg: &SdpcaConfig,
    train_last: usize,
    val: (usize, usize),
) -> Result<SdpcaSeries> {
    let truth = targets.slice(val.0, val.1)?.data.column(series).into_owned();
    let mut best: Option<SdpcaSeries> = None;
    for lags in 1..=cfg.q_max {
        let lo = targets.first_time.max(lags - 1);
        if train_last < lo + 2 {
            break;
        }
        let basis = PcBasis::new(targets, series, z, lags, lo, train_last)?;
        let s_cap = cfg.s_max.min(z.ncols()).min(train_last - lo - 1);
        for s in 1..=s_cap {
            let mut cand = basis.fit(s)?;
            let err = (&truth - cand.predict(z, val.0, val.1)?).norm_squared() / truth.len() as f64;
            cand.validation_fmse = Some(err);
            if best.as_ref().is_none_or(|b| err < b.validation_fmse.unwrap_or(f64::INFINITY)) {
                best = Some(cand);
            }
        }
    }
    best.ok_or_else(|| CcfError::EmptySample("no sdPCA configuration fits the training window".into()))
}

/// Per-series sdPCA forecasters for a target panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdpcaModel {
    pub h: usize,
    pub series: Vec<SdpcaSeries>,
}

impl SdpcaModel {
    pub fn q(&self) -> usize {
        self.series.len()
    }

    /// Forecasts for origins `first..=last`, one column per target series.
    pub fn predict(&self, z: &DMatrix<f64>, first: usize, last: usize) -> Result<TimedMatrix> {
        let mut data = DMatrix::zeros((last + 1).saturating_sub(first), self.q());
        for (j, s) in self.series.iter().enumerate() {
            data.set_column(j, &s.predict(z, first, last)?);
        }
        Ok(TimedMatrix {
            first_time: first,
            data,
        })
    }

    /// Forecast of `y_{t+h}` from information up to `t`.
    pub fn forecast(&self, z: &DMatrix<f64>, t: usize) -> Result<DVector<f64>> {
        if t >= z.nrows() {
            return Err(CcfError::IndexOutOfRange {
                index: t,
                lo: 0,
                hi: z.nrows() - 1,
            });
        }
        self.predict(z, t, t)?.row_at(t)
    }
}

/// Selects the lag order and component count of every target series on the
/// validation origins `val` using fits on origins up to `train_last`. With
/// `refit_last`, each selected configuration is then refitted on origins up
/// to that bound.
pub fn sdpca_fit(
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    cfg: &SdpcaConfig,
    train_last: usize,
    val: (usize, usize),
    refit_last: Option<usize>,
) -> Result<SdpcaModel> {
    cfg.validate()?;
    if y.nrows() != z.nrows() {
        return Err(CcfError::Dimension(format!(
            "target panel has {} periods, explanatory panel {}",
            y.nrows(),
            z.nrows()
        )));
    }
    let targets = horizon_targets(y, cfg.h)?;
    let series = (0..y.ncols())
        .into_par_iter()
        .map(|j| {
            let chosen = series_candidates(&targets, j, z, cfg, train_last, val)?;
            let Some(last) = refit_last else {
                return Ok(chosen);
            };
            let lags = chosen.lags();
            let lo = targets.first_time.max(lags - 1);
            let mut refit = PcBasis::new(&targets, j, z, lags, lo, last)?.fit(chosen.components())?;
            refit.validation_fmse = chosen.validation_fmse;
            Ok(refit)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SdpcaModel { h: cfg.h, series })
}

/// Same protocol as the component model: selection on the first validation
/// segment, optional refit through it, score on the second segment.
pub fn sdpca_fmsecv(ctx: &CvContext, cfg: &SdpcaConfig, refit: bool) -> Result<(f64, SdpcaModel)> {
    let n_sel = ctx.split.val1_end();
    let y = ctx.y.rows(0, n_sel).into_owned();
    let z = ctx.z.rows(0, n_sel).into_owned();
    let refit_last = refit.then(|| n_sel - 1 - cfg.h);
    let model = sdpca_fit(&y, &z, cfg, ctx.train_last(), ctx.val1_origins(), refit_last)?;
    let (v0, v1) = ctx.val2_origins();
    let pred = model.predict(&ctx.z, v0, v1)?;
    let truth = horizon_targets(&ctx.y, cfg.h)?.slice(v0, v1)?;
    Ok((mean_squared_norm(&(truth.data - pred.data)), model))
}

/// Second-segment scores of both methods on one data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub ccf_fmsecv: f64,
    pub sdpca_fmsecv: f64,
    /// `sdpca_fmsecv / ccf_fmsecv`.
    pub ratio: f64,
    pub report: CvReport,
}

impl BenchResult {
    pub fn to_csv(&self) -> String {
        format!(
            "method,fmsecv\nsdpca,{}\nccf,{}\nratio,{}\n",
            self.sdpca_fmsecv, self.ccf_fmsecv, self.ratio
        )
    }
}

/// Standardizes both panels and runs the component model and sdPCA through
/// the same split.
pub fn run_bench(
    y_panel: &TimeSeriesPanel,
    z_panel: &TimeSeriesPanel,
    cv: &CvConfig,
    sdpca: &SdpcaConfig,
) -> Result<BenchResult> {
    cv.validate()?;
    let sdpca = SdpcaConfig { h: cv.h, ..*sdpca };
    let (ys, _) = standardize(y_panel)?;
    let (zs, _) = standardize(z_panel)?;
    let ctx = CvContext::new(ys.values().clone(), zs.values().clone(), cv.alpha, cv.h)?;
    let mut report = select_components(&ctx, cv)?;
    let ccf_fmsecv = final_fmsecv(&ctx, &report, cv)?;
    report.fmsecv = Some(ccf_fmsecv);
    let (sdpca_fmsecv, _) = sdpca_fmsecv(&ctx, &sdpca, cv.refit)?;
    Ok(BenchResult {
        ccf_fmsecv,
        sdpca_fmsecv,
        ratio: sdpca_fmsecv / ccf_fmsecv,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::tests::gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_single_lag_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = gaussian(&mut rng, 50, 3);
        let mut y = DMatrix::zeros(50, 1);
        for t in 0..49 {
            y[(t + 1, 0)] = 2.0 * z[(t, 0)];
        }
        let targets = horizon_targets(&y, 1).unwrap();
        let sc = scale_predictors(&targets, 0, &z, 1, 0, 48).unwrap();
        assert!((sc.coefficients[(0, 0)] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn single_lag_matches_covariance_ratio() {
        let x = [0.3, -1.2, 2.5, 0.7, -0.4, 1.9, -2.2, 0.05];
        let y = [1.0, 0.2, -0.7, 2.4, 0.9, -1.5, 0.3, 1.1];
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let z = DMatrix::from_column_slice(8, 1, &x);
        let targets = TimedMatrix {
            first_time: 0,
            data: DMatrix::from_column_slice(8, 1, &y),
        };
        let sc = scale_predictors(&targets, 0, &z, 1, 0, 7).unwrap();
        assert!((sc.coefficients[(0, 0)] - sxy / sxx).abs() < 1e-10);
    }

    #[test]
    fn two_lags_match_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = gaussian(&mut rng, 30, 2);
        let yv = gaussian(&mut rng, 30, 1);
        let targets = TimedMatrix {
            first_time: 0,
            data: yv.clone(),
        };
        let sc = scale_predictors(&targets, 0, &z, 2, 1, 29).unwrap();
        for i in 0..2 {
            let mut xtx = [[0.0f64; 3]; 3];
            let mut xty = [0.0f64; 3];
            for t in 1..30 {
                let row = [1.0, z[(t, i)], z[(t - 1, i)]];
                for a in 0..3 {
                    xty[a] += row[a] * yv[(t, 0)];
                    for b in 0..3 {
                        xtx[a][b] += row[a] * row[b];
                    }
                }
            }
            let a = DMatrix::from_fn(3, 3, |r, c| xtx[r][c]);
            let sol = a.lu().solve(&DVector::from_row_slice(&xty)).unwrap();
            assert!((sc.coefficients[(i, 0)] - sol[1]).abs() < 1e-10);
            assert!((sc.coefficients[(i, 1)] - sol[2]).abs() < 1e-10);
        }
    }

    #[test]
    fn collinear_lags_fall_back_to_ridge() {
        let x = DMatrix::from_fn(10, 2, |r, _| r as f64);
        let y = DVector::from_fn(10, |r, _| 3.0 * r as f64 + 1.0);
        let (a, b) = ols_with_intercept(&x, &y).unwrap();
        assert!((a + (b[0] + b[1]) * 4.5 - (3.0 * 4.5 + 1.0)).abs() < 1e-4);
        assert!((b[0] + b[1] - 3.0).abs() < 1e-4);
    }

    fn factor_panel(seed: u64, t: usize, m: usize, q: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = gaussian(&mut rng, t, m);
        let w = gaussian(&mut rng, m, 1);
        let load = gaussian(&mut rng, 1, q);
        let noise = gaussian(&mut rng, t, q) * 0.3;
        let mut y = noise;
        for r in 1..t {
            let f = (z.row(r - 1) * &w)[(0, 0)];
            for j in 0..q {
                y[(r, j)] += f * load[(0, j)];
            }
        }
        (y, z)
    }

    #[test]
    fn retained_directions_are_orthonormal() {
        let (y, z) = factor_panel(3, 120, 8, 2);
        let model = sdpca_fit(&y, &z, &SdpcaConfig::default(), 80, (81, 100), None).unwrap();
        for s in &model.series {
            let g = s.directions.tr_mul(&s.directions);
            let eye = DMatrix::<f64>::identity(g.nrows(), g.ncols());
            assert!((g - eye).amax() < 1e-10);
            assert!(s.components() >= 1);
        }
    }

    #[test]
    fn degenerate_caps_give_one_component() {
        let (y, z) = factor_panel(4, 120, 6, 1);
        let cfg = SdpcaConfig {
            q_max: 1,
            s_max: 1,
            h: 1,
        };
        let model = sdpca_fit(&y, &z, &cfg, 80, (81, 100), Some(100)).unwrap();
        assert_eq!(model.series[0].lags(), 1);
        assert_eq!(model.series[0].components(), 1);
    }

    #[test]
    fn permuting_targets_permutes_forecasts() {
        let (y, z) = factor_panel(5, 120, 6, 3);
        let perm = [2usize, 0, 1];
        let yp = DMatrix::from_fn(y.nrows(), 3, |r, c| y[(r, perm[c])]);
        let cfg = SdpcaConfig::default();
        let a = sdpca_fit(&y, &z, &cfg, 80, (81, 100), Some(100)).unwrap();
        let b = sdpca_fit(&yp, &z, &cfg, 80, (81, 100), Some(100)).unwrap();
        let fa = a.predict(&z, 101, 118).unwrap();
        let fb = b.predict(&z, 101, 118).unwrap();
        for c in 0..3 {
            assert!((fb.data.column(c) - fa.data.column(perm[c])).amax() < 1e-12);
        }
    }

    #[test]
    fn noise_predictors_forecast_at_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = 2000;
        let y = gaussian(&mut rng, t, 1);
        let z = gaussian(&mut rng, t, 10);
        let ctx = CvContext::new(y, z, 0.7, 1).unwrap();
        let (v0, v1) = ctx.val1_origins();
        let model = sdpca_fit(&ctx.y, &ctx.z, &SdpcaConfig::default(), ctx.train_last(), (v0, v1), None).unwrap();
        let fmse = model.series[0].validation_fmse.unwrap();
        assert!((fmse - 1.0).abs() < 0.15, "fmse {fmse}");
    }

    #[test]
    fn forecast_agrees_with_predict() {
        let (y, z) = factor_panel(7, 120, 6, 2);
        let model = sdpca_fit(&y, &z, &SdpcaConfig::default(), 80, (81, 100), Some(100)).unwrap();
        let f = model.forecast(&z, 119).unwrap();
        let p = model.predict(&z, 110, 119).unwrap();
        assert!((f - p.row_at(119).unwrap()).amax() < 1e-14);
        assert!(model.forecast(&z, 120).is_err());
    }
}
