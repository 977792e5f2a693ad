//! Selection behaviour on data with known structure.

use ccf_core::selection::{final_fmsecv, select_components, select_lags, CvConfig, CvContext};
use ccf_core::simulate::{planted_panel, PlantedComponent};
use ccf_core::panel::horizon_targets;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn context(y: DMatrix<f64>, z: DMatrix<f64>) -> CvContext {
    CvContext::new(y, z, 0.7, 1).unwrap()
}

#[test]
fn lag_selection_finds_one_explanatory_lag() {
    let (m, q) = (20, 20);
    let cfg = CvConfig::default();
    let mut hits = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let comp = PlantedComponent {
            beta: normal_vec(&mut rng, 2 * m).normalize(),
            gamma: DMatrix::from_fn(q, 1, |_, _| rng.sample::<f64, _>(StandardNormal)),
        };
        let (y, z) = planted_panel(&[comp], m, 400, 0.5, &mut rng);
        let ctx = context(y, z);
        let targets = horizon_targets(&ctx.y.rows(0, ctx.split.val1_end()).into_owned(), 1).unwrap();
        let (c, _, _, _) = select_lags(&ctx, &targets, &cfg, 1).unwrap();
        hits += usize::from(c == 1);
    }
    assert!(hits > 18, "c = 1 chosen in {hits} of 20 seeds");
}

#[test]
#[ignore = "on pure noise the largest penalty wins in 35-75% of seeds depending on seed range and panel shape"]
fn pure_noise_prefers_the_largest_penalty() {
    let cfg = CvConfig {
        max_components: 1,
        ..CvConfig::default()
    };
    let mut hits = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let y = DMatrix::from_fn(200, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = DMatrix::from_fn(200, 60, |_, _| rng.sample::<f64, _>(StandardNormal));
        let report = select_components(&context(y, z), &cfg).unwrap();
        let st = &report.stages[0];
        hits += usize::from(st.lambda == st.lambda_max);
    }
    assert!(hits >= 14, "largest penalty chosen in {hits} of 20 seeds");
}

#[test]
fn white_noise_keeps_one_component() {
    let cfg = CvConfig::default();
    let mut ones = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let y = DMatrix::from_fn(400, 30, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z = DMatrix::from_fn(400, 10, |_, _| rng.sample::<f64, _>(StandardNormal));
        let report = select_components(&context(y, z), &cfg).unwrap();
        assert_eq!(report.fmse_path.len(), report.chosen_s + 1);
        ones += usize::from(report.chosen_s == 1);
    }
    assert!(ones >= 18, "one component kept in {ones} of 20 seeds");
}

#[test]
fn second_segment_score_tracks_first() {
    let (m, q) = (6, 4);
    let cfg = CvConfig {
        c_max: 1,
        k_max: 1,
        ..CvConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let comp = PlantedComponent {
        beta: normal_vec(&mut rng, m).normalize(),
        gamma: DMatrix::from_fn(q, 1, |_, _| rng.sample::<f64, _>(StandardNormal)),
    };
    let (y, z) = planted_panel(&[comp], m, 1000, 1.0, &mut rng);
    let ctx = context(y, z);
    let report = select_components(&ctx, &cfg).unwrap();
    let cv = final_fmsecv(&ctx, &report, &cfg).unwrap();
    let fmse = report.fmse_path[report.chosen_s - 1];
    // squared error norms of q unit-variance normals: variance 2q per origin
    let (v0, v1) = ctx.val2_origins();
    let se = (2.0 * q as f64 / (v1 - v0 + 1) as f64).sqrt();
    assert!((cv - fmse).abs() < 2.0 * se, "fmsecv {cv} vs fmse {fmse}, se {se}");
}
