use std::path::{Path, PathBuf};

use ccf_core::baseline::SdpcaConfig;
use ccf_core::ccf::StageSpec;
use ccf_core::selection::CvConfig;
use ccf_core::simulate::SimConfig;
use ccf_core::{CcfError, LossKind, Result, TimeSeriesPanel};
use clap::Args;
use serde::{Deserialize, Serialize};

/// Everything a run needs; read from `--config` and then overridden by flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub y_columns: Vec<String>,
    /// Explanatory columns; every column of the file when empty.
    pub z_columns: Vec<String>,
    pub out: Option<PathBuf>,
    pub cv: CvConfig,
    pub sdpca: SdpcaConfig,
    /// Stage hyper-parameters for `fit`.
    pub schedule: Vec<StageSpec>,
    /// Per-series autoregressive orders added by `fit`.
    pub ar_orders: Vec<usize>,
    pub simulate: SimConfig,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// JSON run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input CSV (header of series names, one row per period)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated target columns
    #[arg(long, value_delimiter = ',')]
    pub y_columns: Option<Vec<String>>,
    /// Comma-separated explanatory columns (default: all)
    #[arg(long, value_delimiter = ',')]
    pub z_columns: Option<Vec<String>>,
    /// Forecast horizon in periods
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Estimation loss: g1 (squared error) or g2 (error determinant)
    #[arg(long, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    /// Largest number of explanatory lags
    #[arg(long)]
    pub cmax: Option<usize>,
    /// Largest number of component lags
    #[arg(long)]
    pub kmax: Option<usize>,
    /// Top of the penalty grid (default: data-driven)
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Number of penalty grid points
    #[arg(long)]
    pub grid: Option<usize>,
    /// Share of periods in the training segment
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Cap on the number of components
    #[arg(long)]
    pub max_components: Option<usize>,
    /// Score the second validation segment with training-only fits
    #[arg(long)]
    pub no_refit: bool,
    /// Largest autoregressive error-correction order tried by `cv`
    #[arg(long)]
    pub ar_max_order: Option<usize>,
    /// Master random seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    s.parse::<LossKind>().map_err(|e| e.to_string())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CcfError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CcfError::Config(format!("{}: {e}", path.display())))
    }

    /// Config file (if any) with flag overrides applied.
    pub fn resolve(flags: &CommonFlags) -> Result<Self> {
        let mut cfg = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(d) = &flags.data {
            cfg.data = Some(d.clone());
        }
        if let Some(y) = &flags.y_columns {
            cfg.y_columns = y.clone();
        }
        if let Some(z) = &flags.z_columns {
            cfg.z_columns = z.clone();
        }
        if let Some(o) = &flags.out {
            cfg.out = Some(o.clone());
        }
        for cv in [&mut cfg.cv, &mut cfg.simulate.cv] {
            if let Some(h) = flags.horizon {
                cv.h = h;
            }
            if let Some(l) = flags.loss {
                cv.loss = l;
            }
            if let Some(v) = flags.cmax {
                cv.c_max = v;
            }
            if let Some(v) = flags.kmax {
                cv.k_max = v;
            }
            if let Some(v) = flags.lambda_max {
                cv.lambda_max = Some(v);
            }
            if let Some(v) = flags.grid {
                cv.grid = v;
            }
            if let Some(v) = flags.alpha {
                cv.alpha = v;
            }
            if let Some(v) = flags.max_components {
                cv.max_components = v;
            }
            if flags.no_refit {
                cv.refit = false;
            }
            if let Some(v) = flags.ar_max_order {
                cv.ar_max_order = Some(v);
            }
            if let Some(s) = flags.seed {
                cv.seed = s;
                cv.solver.seed = s;
            }
        }
        if let Some(h) = flags.horizon {
            cfg.sdpca.h = h;
        }
        if let Some(a) = flags.alpha {
            cfg.simulate.alpha = a;
        }
        if let Some(s) = flags.seed {
            cfg.simulate.seed = s;
        }
        Ok(cfg)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// Reads the data file and returns the target and explanatory panels.
    pub fn panels(&self) -> Result<(TimeSeriesPanel, TimeSeriesPanel)> {
        let path = self
            .data
            .as_ref()
            .ok_or_else(|| CcfError::Config("no data file given (--data)".into()))?;
        if self.y_columns.is_empty() {
            return Err(CcfError::Config("no target columns given (--y-columns)".into()));
        }
        let panel = TimeSeriesPanel::read_csv(path)?;
        let y = panel.select(&self.y_columns)?;
        let z = if self.z_columns.is_empty() {
            panel.clone()
        } else {
            panel.select(&self.z_columns)?
        };
        Ok((y, z))
    }
}
