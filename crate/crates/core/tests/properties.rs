use camme::ci::{dpc, pc, CiOracle};
use camme::factor::identifiability_thresholds;
use camme::fixtures::{self, NoiseFamily};
use camme::graph::{build_canonical, cpdag_of, CammeModel};
use camme::linalg::max_abs_diff;
use camme::oica::{nongaussianity_screen, oica_fit, OicaConfig};
use camme::pipelines::{fa_equvar, CovInput, PipelineConfig};
use camme::recursive::{decompose, RgdConfig};
use camme::simulate::{random_camme, regression_residual, sample_camme, RandomDagConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn model(n: usize, leaves: usize, seed: u64, density: f64) -> CammeModel {
    let mut cfg = RandomDagConfig::new(n, leaves, seed);
    cfg.density = density;
    random_camme(&cfg).unwrap()
}

fn rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_abs_diff(a, b) / a.amax().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, ..ProptestConfig::default() })]

    #[test]
    fn canonical_form_reproduces_observed_covariance(n in 3usize..=9, frac in 0.1f64..0.7, seed in 0u64..10_000, density in 0.2f64..0.8) {
        let leaves = ((n as f64 * frac).round() as usize).clamp(1, n - 1);
        let m = model(n, leaves, seed, density);
        let cr = build_canonical(&m).unwrap();
        prop_assert!(rel_diff(&m.observed_cov().unwrap(), &cr.observed_cov()) < 1e-12);
        prop_assert_eq!(&cr.leaf_set, &m.dag().leaf_nodes());
    }

    #[test]
    fn decompose_follows_causal_order(n in 3usize..=8, frac in 0.1f64..0.6, seed in 0u64..10_000, density in 0.2f64..0.8) {
        let leaves = ((n as f64 * frac).round() as usize).clamp(1, n - 1);
        let m = model(n, leaves, seed, density);
        let rows = build_canonical(&m).unwrap().standardized_a_nl();
        let groups = decompose(&rows, &RgdConfig::oracle()).unwrap();
        let dag = m.dag();
        for (a, ga) in groups.groups.iter().enumerate() {
            for gb in &groups.groups[a + 1..] {
                for &later in &gb.members {
                    for &earlier in &ga.members {
                        prop_assert!(!dag.descendants(later).contains(&earlier), "{later} precedes {earlier}");
                    }
                }
            }
        }
        let mut covered: Vec<usize> = groups.groups.iter().flat_map(|g| g.members.clone()).collect();
        covered.sort_unstable();
        prop_assert_eq!(covered, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn decompose_ignores_row_scale_and_column_order(seed in 0u64..10_000, scales in proptest::collection::vec(0.2f64..5.0, 7), flip in any::<u8>(), shift in 0usize..5) {
        let m = model(7, 3, seed, 0.5);
        let rows = build_canonical(&m).unwrap().standardized_a_nl();
        let r = rows.ncols();
        let moved = DMatrix::from_fn(7, r, |i, k| {
            let src = (k + shift) % r;
            let sign = if flip >> (src % 8) & 1 == 1 { -1.0 } else { 1.0 };
            sign * scales[i] * rows[(i, src)]
        });
        let cfg = RgdConfig::oracle();
        prop_assert_eq!(decompose(&rows, &cfg).unwrap().member_sets(), decompose(&moved, &cfg).unwrap().member_sets());
    }

    #[test]
    fn dpc_equals_pc_without_measurement_error(n in 2usize..=6, seed in 0u64..10_000, density in 0.2f64..0.9) {
        let leaves = 1.max(n / 3);
        let mut m = model(n, leaves, seed, density);
        m.me_variances = vec![0.0; n];
        let cov = m.latent_cov().unwrap();
        let truth = cpdag_of(m.dag());
        let plain = pc(&CiOracle::population(cov.clone()), n).unwrap();
        let det = dpc(&CiOracle::population(cov), n).unwrap();
        prop_assert_eq!(&plain.cpdag.directed, &truth.directed);
        prop_assert_eq!(&plain.cpdag.undirected, &truth.undirected);
        prop_assert_eq!(&det.cpdag.directed, &truth.directed);
        prop_assert_eq!(&det.cpdag.undirected, &truth.undirected);
        prop_assert_eq!(det.tests_skipped, 0);
    }

    #[test]
    fn equal_variance_results_keep_leaves_childless(n in 4usize..=8, seed in 0u64..10_000) {
        let leaves = (n / 2).max(1);
        let m = model(n, leaves, seed, 0.5);
        match fa_equvar(&CovInput::oracle(&m).unwrap(), leaves, &PipelineConfig::default()) {
            Ok(res) => prop_assert!(res.check_leaf_invariant()),
            Err(camme::Error::Ambiguity { candidates, .. }) => prop_assert!(candidates.len() >= 2),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn residual_is_uncorrelated_with_predictor(xs in proptest::collection::vec(-10.0f64..10.0, 20..200), b in -3.0f64..3.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| b * x + ((i * 7919) % 13) as f64).collect();
        prop_assume!(xs.iter().any(|x| (x - xs[0]).abs() > 1e-3));
        let r = regression_residual(&ys, &xs);
        let dot: f64 = r.iter().zip(&xs).map(|(a, b)| a * b).sum();
        let scale = r.iter().map(|v| v * v).sum::<f64>().sqrt() * xs.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(dot.abs() <= 1e-9 * scale.max(1.0));
        prop_assert!(r.iter().sum::<f64>().abs() <= 1e-9 * scale.max(1.0));
    }
}

#[test]
fn leaf_fraction_threshold_decreases_to_zero() {
    let mut prev = f64::INFINITY;
    for n in 2..=10_000 {
        let (_, c) = identifiability_thresholds(n);
        assert!(c < prev && c > 0.0);
        prev = c;
    }
    assert!(prev < 0.015);
}

#[test]
fn kurtosis_screen_separates_families() {
    let gauss = sample_camme(&fixtures::ga(NoiseFamily::Gaussian), 20_000, 1).unwrap();
    let s = nongaussianity_screen(&gauss).unwrap();
    assert!(s.a4_likely_violated);
    let unif = sample_camme(&fixtures::ga(NoiseFamily::Uniform), 20_000, 1).unwrap();
    let s = nongaussianity_screen(&unif).unwrap();
    assert!(!s.a4_likely_violated);
    assert!(s.excess_kurtosis.iter().any(|k| *k < -s.threshold));
    let few = sample_camme(&fixtures::ga(NoiseFamily::Uniform), 50, 1).unwrap();
    assert!(nongaussianity_screen(&few).is_err());
}

#[test]
fn mixing_estimate_reproduces_sample_covariance() {
    let m = fixtures::example1(1.0, 1.0, 1.0, 1.0, NoiseFamily::Uniform).unwrap();
    let data = sample_camme(&m, 20_000, 4).unwrap();
    let cfg = OicaConfig { starts: 3, screen_samples: 20_000, ..OicaConfig::default() };
    let est = oica_fit(&data, 2, &cfg).unwrap();
    let sample = data.covariance();
    let err = max_abs_diff(&est.implied_cov(), &sample) / sample.amax();
    assert!(err < 0.02, "relative covariance error {err}");
    assert!(est.monotone);
}
