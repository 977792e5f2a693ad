//! Monte Carlo comparison of the component model and sdPCA on a VAR(1)
//! explanatory panel driving a single dynamic factor.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{sdpca_fit, SdpcaConfig};
use crate::error::{CcfError, Result};
use crate::panel::StandardizationInfo;
use crate::selection::{refit_model, select_components, task_seed, CvConfig, CvContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMethod {
    Ccf,
    Sdpca,
}

impl std::fmt::Display for SimMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SimMethod::Ccf => "ccf",
            SimMethod::Sdpca => "sdpca",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub m: usize,
    pub q: usize,
    /// Periods kept per replication; the last one is the forecast target.
    pub t_total: usize,
    pub burn_in: usize,
    pub reps: usize,
    pub sigma_e: Vec<f64>,
    pub seed: u64,
    pub methods: Vec<SimMethod>,
    pub alpha: f64,
    /// Draw a fresh VAR matrix, noise variances and loadings in every
    /// replication; otherwise one draw from the master seed is shared.
    pub redraw_loadings: bool,
    pub cv: CvConfig,
    pub sdpca: SdpcaConfig,
    /// Largest tolerated share of failed replications.
    pub max_failure_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 50,
            q: 50,
            t_total: 201,
            burn_in: 200,
            reps: 100,
            sigma_e: vec![0.3, 3.0],
            seed: 2024,
            methods: vec![SimMethod::Sdpca, SimMethod::Ccf],
            alpha: 0.70,
            redraw_loadings: true,
            cv: CvConfig::default(),
            sdpca: SdpcaConfig::default(),
            max_failure_rate: 0.02,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(CcfError::Config("reps must be at least 1".into()));
        }
        if self.m == 0 || self.q == 0 {
            return Err(CcfError::Config("panel dimensions must be positive".into()));
        }
        if self.t_total < 20 {
            return Err(CcfError::Config(format!("t_total {} is too short", self.t_total)));
        }
        if self.sigma_e.is_empty() || self.sigma_e.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(CcfError::Config(format!("sigma_e must be positive: {:?}", self.sigma_e)));
        }
        if self.methods.is_empty() {
            return Err(CcfError::Config("no methods selected".into()));
        }
        if self.cv.h != 1 || self.sdpca.h != 1 {
            return Err(CcfError::Config("the experiment forecasts one step ahead".into()));
        }
        self.cv.validate()?;
        self.sdpca.validate()
    }

    pub fn rep_seed(&self, rep: usize) -> u64 {
        task_seed(self.seed, rep as u64, 0)
    }
}

/// VAR coefficients, innovation variances and factor loadings of one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpParams {
    pub a: DMatrix<f64>,
    pub innovation_var: DVector<f64>,
    pub b1: DVector<f64>,
    pub b2: DVector<f64>,
    pub c1: DVector<f64>,
    pub c2: DVector<f64>,
}

impl DgpParams {
    pub fn draw(m: usize, q: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut a = DMatrix::zeros(m, m);
        for i in 0..m {
            a[(i, i)] = rng.random_range(0.0..0.5);
        }
        for i in 0..m.saturating_sub(1) {
            a[(i, i + 1)] = rng.random_range(0.0..0.5);
        }
        let innovation_var = DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
        let mut normal = |n: usize| DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b1 = normal(m);
        let b2 = normal(m);
        let c1 = normal(q);
        let c2 = normal(q);
        Self {
            a,
            innovation_var,
            b1,
            b2,
            c1,
            c2,
        }
    }

    /// Largest absolute diagonal entry, which is the spectral radius of the
    /// upper-bidiagonal VAR matrix.
    pub fn spectral_radius(&self) -> f64 {
        self.a.diagonal().amax()
    }
}

/// One simulated data set, with target noise kept separate so that several
/// noise levels can share every other random draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub params: DgpParams,
    pub z: DMatrix<f64>,
    pub factor: DVector<f64>,
    pub signal: DMatrix<f64>,
    /// Standard normal target noise, scaled by `sigma_e` in [`Replication::y`].
    pub noise: DMatrix<f64>,
}

impl Replication {
    pub fn y(&self, sigma_e: f64) -> DMatrix<f64> {
        &self.signal + &self.noise * sigma_e
    }
}

/// Simulates `t_total` periods after a burn-in from `z = 0`.
pub fn simulate_dgp(params: &DgpParams, t_total: usize, burn_in: usize, rng: &mut ChaCha8Rng) -> Replication {
    let m = params.a.nrows();
    let q = params.c1.len();
    let sd = params.innovation_var.map(f64::sqrt);
    let total = burn_in + t_total + 1;
    let mut z_all = DMatrix::zeros(total, m);
    let mut prev = DVector::zeros(m);
    for t in 0..total {
        let eps = DVector::from_fn(m, |i, _| sd[i] * rng.sample::<f64, _>(StandardNormal));
        let cur = &params.a * &prev + eps;
        z_all.set_row(t, &cur.transpose());
        prev = cur;
    }
    let keep = burn_in + 1;
    let f_all = DVector::from_fn(total, |t, _| {
        let lag = if t == 0 { 0.0 } else { params.b2.dot(&z_all.row(t - 1).transpose()) };
        params.b1.dot(&z_all.row(t).transpose()) + lag
    });
    let z = z_all.rows(keep, t_total).into_owned();
    let factor = f_all.rows(keep, t_total).into_owned();
    let signal = DMatrix::from_fn(t_total, q, |t, j| params.c1[j] * f_all[keep + t] + params.c2[j] * f_all[keep + t - 1]);
    let noise = DMatrix::from_fn(t_total, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    Replication {
        params: params.clone(),
        z,
        factor,
        signal,
        noise,
    }
}

/// Draws the replication with the given seed; loadings come from `shared`
/// when supplied.
pub fn gen_replication(cfg: &SimConfig, rep_seed: u64, shared: Option<&DgpParams>) -> Replication {
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let params = match shared {
        Some(p) => p.clone(),
        None => DgpParams::draw(cfg.m, cfg.q, &mut rng),
    };
    simulate_dgp(&params, cfg.t_total, cfg.burn_in, &mut rng)
}

/// A known component: loadings on the stacked lags of `z` and the
/// `q x (k + 1)` matrix applied to its current and lagged values.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedComponent {
    pub beta: DVector<f64>,
    pub gamma: DMatrix<f64>,
}

impl PlantedComponent {
    pub fn c(&self, m: usize) -> usize {
        self.beta.len() / m - 1
    }

    pub fn k(&self) -> usize {
        self.gamma.ncols() - 1
    }
}

/// `t` periods of i.i.d. standard normal `z` (`m` series) and targets
/// `y_{s+1} = sum_i Gamma_i (f_{i,s}, ..., f_{i,s-k_i})' + sigma e_{s+1}`
/// with `f_{i,s} = beta_i' (z_s', ..., z_{s-c_i}')'`.
pub fn planted_panel(
    components: &[PlantedComponent],
    m: usize,
    t: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = components.first().map_or(1, |c| c.gamma.nrows());
    let warm = components.iter().map(|p| p.c(m) + p.k() + 1).max().unwrap_or(0);
    let total = warm + t;
    let z = DMatrix::from_fn(total, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut y = DMatrix::from_fn(total, q, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
    for p in components {
        let c = p.c(m);
        let f = DVector::from_fn(total, |s, _| {
            if s < c {
                return 0.0;
            }
            (0..=c).map(|l| p.beta.rows(l * m, m).dot(&z.row(s - l).transpose())).sum()
        });
        for s in warm..total {
            for j in 0..=p.k() {
                for r in 0..q {
                    y[(s, r)] += p.gamma[(r, j)] * f[s - 1 - j];
                }
            }
        }
    }
    (y.rows(warm, t).into_owned(), z.rows(warm, t).into_owned())
}

/// Squared forecast-error norm of one method in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub sigma_e: f64,
    pub method: SimMethod,
    pub squared_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Components kept by cross-validation, for the component model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: SimMethod,
    pub sigma_e: f64,
    /// Mean squared forecast error per target series.
    pub fmse: f64,
    pub std_error: f64,
    /// Mean squared Euclidean norm of the forecast-error vector.
    pub fmse_total: f64,
    pub completed: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub summaries: Vec<MethodSummary>,
    pub records: Vec<RepRecord>,
}

impl SimResult {
    pub fn summary(&self, method: SimMethod, sigma_e: f64) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method && s.sigma_e == sigma_e)
    }

    /// `FMSE(sdPCA) / FMSE(CCF)` at a noise level.
    pub fn ratio(&self, sigma_e: f64) -> Option<f64> {
        Some(self.summary(SimMethod::Sdpca, sigma_e)?.fmse / self.summary(SimMethod::Ccf, sigma_e)?.fmse)
    }

    /// One row per method plus a ratio row, one column per noise level.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("row");
        for s in &self.config.sigma_e {
            out.push_str(&format!(",sigma_e={s}"));
        }
        out.push('\n');
        for method in &self.config.methods {
            out.push_str(&method.to_string());
            for s in &self.config.sigma_e {
                let v = self.summary(*method, *s).map_or(f64::NAN, |m| m.fmse);
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        if self.config.methods.contains(&SimMethod::Ccf) && self.config.methods.contains(&SimMethod::Sdpca) {
            out.push_str("ratio");
            for s in &self.config.sigma_e {
                out.push_str(&format!(",{:.6}", self.ratio(*s).unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }
}

/// Forecasts the last period from the one before it, after selecting on the
/// first `t_total - 1` periods and refitting on all of them.
fn evaluate(
    cfg: &SimConfig,
    method: SimMethod,
    y: &DMatrix<f64>,
    z: &DMatrix<f64>,
    rep_seed: u64,
) -> Result<(f64, Option<usize>)> {
    let t = y.nrows();
    let n = t - 1;
    let ys = StandardizationInfo::fit(&y.rows(0, n).into_owned())?.apply(y)?;
    let zs = StandardizationInfo::fit(&z.rows(0, n).into_owned())?.apply(z)?;
    let ctx = CvContext::new(ys.rows(0, n).into_owned(), zs.rows(0, n).into_owned(), cfg.alpha, 1)?;
    let origin = n - 1;
    let truth = ys.row(n).transpose();
    match method {
        SimMethod::Ccf => {
            let cv = CvConfig {
                seed: rep_seed,
                ..cfg.cv.clone()
            };
            let report = select_components(&ctx, &cv)?;
            let model = refit_model(&ctx, &report, &cv, n - 2)?;
            let pred = model.predict_standardized(&ys, &zs, origin, origin)?;
            let err = truth - pred.row_at(origin)?;
            Ok((err.norm_squared(), Some(report.chosen_s)))
        }
        SimMethod::Sdpca => {
            let model = sdpca_fit(&ctx.y, &ctx.z, &cfg.sdpca, ctx.train_last(), ctx.val1_origins(), Some(n - 2))?;
            let err = truth - model.forecast(&zs, origin)?;
            Ok((err.norm_squared(), None))
        }
    }
}

fn run_replication(cfg: &SimConfig, rep: usize, shared: Option<&DgpParams>) -> Vec<RepRecord> {
    let seed = cfg.rep_seed(rep);
    let data = gen_replication(cfg, seed, shared);
    let mut out = Vec::new();
    for &sigma_e in &cfg.sigma_e {
        let y = data.y(sigma_e);
        for &method in &cfg.methods {
            let (squared_error, error, components) = match evaluate(cfg, method, &y, &data.z, seed) {
                Ok((e, s)) => (Some(e), None, s),
                Err(e) => (None, Some(e.to_string()), None),
            };
            out.push(RepRecord {
                rep,
                seed,
                sigma_e,
                method,
                squared_error,
                error,
                components,
            });
        }
    }
    log::debug!("replication {rep} done");
    out
}

pub fn run_experiment(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let shared = (!cfg.redraw_loadings).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(cfg.seed, u64::MAX, 1));
        DgpParams::draw(cfg.m, cfg.q, &mut rng)
    });
    let records: Vec<RepRecord> = (0..cfg.reps)
        .into_par_iter()
        .flat_map_iter(|rep| run_replication(cfg, rep, shared.as_ref()))
        .collect();
    let mut summaries = Vec::new();
    for &sigma_e in &cfg.sigma_e {
        for &method in &cfg.methods {
            let errs: Vec<f64> = records
                .iter()
                .filter(|r| r.method == method && r.sigma_e == sigma_e)
                .filter_map(|r| r.squared_error)
                .collect();
            let failures = cfg.reps - errs.len();
            if failures as f64 > cfg.max_failure_rate * cfg.reps as f64 {
                let first = records
                    .iter()
                    .find_map(|r| (r.method == method && r.sigma_e == sigma_e).then_some(r.error.clone()).flatten())
                    .unwrap_or_default();
                return Err(CcfError::Numeric(format!(
                    "{failures} of {} replications failed for {method} at sigma_e={sigma_e}: {first}",
                    cfg.reps
                )));
            }
            let r = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / r;
            let var = if errs.len() > 1 {
                errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (r - 1.0)
            } else {
                0.0
            };
            let q = cfg.q as f64;
            summaries.push(MethodSummary {
                method,
                sigma_e,
                fmse: mean / q,
                std_error: (var / r).sqrt() / q,
                fmse_total: mean,
                completed: errs.len(),
                failures,
            });
        }
    }
    Ok(SimResult {
        config: cfg.clone(),
        summaries,
        records,
    })
}
