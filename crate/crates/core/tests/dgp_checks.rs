//! Checks of the simulation design and of the estimators on data with known
//! structure.

use ccf_core::baseline::{run_bench, SdpcaConfig};
use ccf_core::ccf::{fit_components, StageSpec};
use ccf_core::selection::CvConfig;
use ccf_core::simulate::{gen_replication, planted_panel, run_experiment, PlantedComponent, SimConfig, SimMethod};
use ccf_core::solver::SolverConfig;
use ccf_core::{LossKind, TimeSeriesPanel};
use nalgebra::{DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Largest principal angle between the column spans of `a` and `b`.
fn largest_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let s = SVD::new(qa.transpose() * qb, false, false).singular_values;
    s.min().clamp(-1.0, 1.0).acos()
}

#[test]
fn var_autocovariance_matches_yule_walker() {
    let cfg = SimConfig {
        m: 10,
        q: 2,
        t_total: 5000,
        ..SimConfig::default()
    };
    let rep = gen_replication(&cfg, 5, None);
    let z = &rep.z;
    let t = z.nrows();
    let mean = z.row_mean();
    let centered = DMatrix::from_fn(t, z.ncols(), |r, c| z[(r, c)] - mean[c]);
    let var = centered.tr_mul(&centered) / t as f64;
    // E[z_t z_{t-1}'] = A Var(z)
    let lag1 = centered.rows(1, t - 1).tr_mul(&centered.rows(0, t - 1)) / (t - 1) as f64;
    let expected = &rep.params.a * &var;
    let rel = (&lag1 - &expected).norm() / expected.norm();
    assert!(rel < 0.2, "relative error {rel}");
    assert!(rep.params.spectral_radius() <= 0.5);
}

#[test]
fn two_component_schedule_recovers_both_directions() {
    let (m, q, t) = (6, 8, 2000);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let comps: Vec<PlantedComponent> = (0..2)
        .map(|_| PlantedComponent {
            beta: DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize(),
            gamma: normal(&mut rng, q, 1),
        })
        .collect();
    let (y, z) = planted_panel(&comps, m, t, 0.5, &mut rng);
    let spec = StageSpec { c: 0, k: 0, lambda: 0.0 };
    let (fitted, _, _) =
        fit_components(&y, &z, &[spec, spec], 1, LossKind::G1, &SolverConfig::default(), t - 2).unwrap();
    let truth = DMatrix::from_columns(&[comps[0].beta.clone(), comps[1].beta.clone()]);
    let est = DMatrix::from_columns(&[fitted[0].beta.clone(), fitted[1].beta.clone()]);
    let angle = largest_principal_angle(&truth, &est);
    assert!(angle < 0.1, "largest principal angle {angle}");
}

fn small_grid() -> CvConfig {
    CvConfig {
        c_max: 1,
        k_max: 1,
        grid: 5,
        max_components: 3,
        ..CvConfig::default()
    }
}

#[test]
fn deterministic_autoregression_is_easy_for_both_methods() {
    let (t, rho) = (150, 0.97_f64);
    let start = [1.0, 2.0, -1.5];
    let y = DMatrix::from_fn(t, 3, |s, j| start[j] * rho.powi(s as i32));
    let panel = TimeSeriesPanel::from_matrix(y).unwrap();
    let bench = run_bench(&panel, &panel, &small_grid(), &SdpcaConfig::default()).unwrap();
    assert!(bench.ccf_fmsecv < 0.05, "ccf {}", bench.ccf_fmsecv);
    assert!(bench.sdpca_fmsecv < 0.05, "sdpca {}", bench.sdpca_fmsecv);
}

#[test]
fn component_model_beats_sdpca_on_single_factor_data() {
    let sim = SimConfig {
        m: 20,
        q: 20,
        t_total: 200,
        ..SimConfig::default()
    };
    let mut wins = 0;
    for seed in 0..20 {
        let rep = gen_replication(&sim, 900 + seed, None);
        let y = TimeSeriesPanel::from_matrix(rep.y(0.3)).unwrap();
        let z = TimeSeriesPanel::from_matrix(rep.z.clone()).unwrap();
        let bench = run_bench(&y, &z, &CvConfig::default(), &SdpcaConfig::default()).unwrap();
        wins += usize::from(bench.ratio > 1.0);
    }
    assert!(wins >= 16, "ratio above one in {wins} of 20 seeds");
}

#[test]
#[ignore = "runs 500 component-model replications; takes about half an hour on one core"]
fn forecast_error_grows_with_noise() {
    let sigmas = vec![0.3, 0.7, 1.0, 2.0, 3.0];
    let cfg = SimConfig {
        reps: 100,
        sigma_e: sigmas.clone(),
        methods: vec![SimMethod::Ccf],
        ..SimConfig::default()
    };
    let result = run_experiment(&cfg).unwrap();
    let rows: Vec<_> = sigmas
        .iter()
        .map(|s| result.summary(SimMethod::Ccf, *s).unwrap())
        .collect();
    for w in rows.windows(2) {
        assert!(
            w[1].fmse >= w[0].fmse - w[1].std_error,
            "fmse {} at sigma {} vs {} at sigma {}",
            w[1].fmse,
            w[1].sigma_e,
            w[0].fmse,
            w[0].sigma_e
        );
    }
}
