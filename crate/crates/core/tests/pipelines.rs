use camme::error::Error;
use camme::eval::{evaluate, EvalTarget};
use camme::fixtures::{self, NoiseFamily};
use camme::graph::{cpdag_of, cpdag_with_known_leaves, CammeModel, WeightedDag, default_labels};
use camme::pipelines::{fa_dpc, fa_equvar, oica_rgd_oracle, CovInput, PipelineConfig};

fn cfg() -> PipelineConfig {
    PipelineConfig::default()
}

#[test]
fn fa_dpc_oracle_recovers_ga_class() {
    let m = fixtures::ga(NoiseFamily::Gaussian);
    let res = fa_dpc(&CovInput::oracle(&m).unwrap(), 4, &cfg()).unwrap();
    assert_eq!(res.cpdag, cpdag_of(m.dag()));
    assert!(res.leaf_set.is_empty());
    assert!(res.diagnostics.tests_skipped > 0);
}

#[test]
fn fa_dpc_population_recovers_ga_class() {
    let m = fixtures::ga(NoiseFamily::Gaussian);
    let res = fa_dpc(&CovInput::population(&m).unwrap(), 4, &cfg()).unwrap();
    assert_eq!(res.cpdag.shd(&cpdag_of(m.dag())), 0);
}

#[test]
fn fa_equvar_oracle_on_ga() {
    let m = fixtures::ga(NoiseFamily::Gaussian);
    let res = fa_equvar(&CovInput::oracle(&m).unwrap(), 4, &cfg()).unwrap();
    assert_eq!(res.leaf_set, vec![4, 5, 6, 7]);
    assert_eq!(res.cpdag, cpdag_with_known_leaves(m.dag(), &[4, 5, 6, 7]));
    assert!(res.check_leaf_invariant());
    for (&leaf, ps) in &res.leaf_parents {
        for &(p, w) in ps {
            assert!((w - m.sem.weight(p, leaf)).abs() < 1e-8);
        }
    }
    let rep = evaluate(&m.sem, &res).unwrap();
    assert_eq!(rep.target, EvalTarget::CpdagKnownLeaves);
    assert_eq!((rep.shd, rep.leaf_accuracy), (0, Some(1.0)));
}

#[test]
fn fa_equvar_population_on_gb_gives_the_star() {
    let m = fixtures::gb(NoiseFamily::Gaussian);
    let res = fa_equvar(&CovInput::population(&m).unwrap(), 3, &cfg()).unwrap();
    assert_eq!(res.leaf_set, vec![1, 2, 3]);
    assert!(res.cpdag.is_fully_directed());
    assert_eq!(res.cpdag.to_dag().unwrap(), *m.dag());
}

#[test]
fn chain_of_two_warns_about_identifiability() {
    let m = fixtures::chain2(0.8, 1.0, 1.0, NoiseFamily::Gaussian).unwrap();
    let res = fa_equvar(&CovInput::oracle(&m).unwrap(), 1, &cfg()).unwrap();
    assert!(res.diagnostics.warnings.iter().any(|w| w.contains("identifiability bound")));
    assert_eq!(res.leaf_set, vec![1]);
}

#[test]
fn tied_uniquenesses_are_ambiguous() {
    // leaf noise variance zero: every E* variance equals the measurement error
    let sem = WeightedDag::from_edges(default_labels(3), &[(0, 1, 0.8), (0, 2, 0.5)]).unwrap();
    let noise = vec![
        NoiseFamily::Gaussian.spec(1.0),
        NoiseFamily::Gaussian.spec(1e-9),
        NoiseFamily::Gaussian.spec(1.0),
    ];
    let m = CammeModel::new(sem, noise, vec![0.3; 3]).unwrap();
    match fa_equvar(&CovInput::oracle(&m).unwrap(), 2, &cfg()) {
        Err(Error::Ambiguity { candidates, .. }) => assert_eq!(candidates, vec![0, 1]),
        other => panic!("expected ambiguity, got {other:?}"),
    }
}

#[test]
fn fa_dpc_on_gc_misses_the_class() {
    let m = fixtures::gc(NoiseFamily::Gaussian);
    let res = fa_dpc(&CovInput::oracle(&m).unwrap(), 2, &cfg()).unwrap();
    let truth = cpdag_of(m.dag());
    assert_ne!(res.cpdag, truth);
    // A0 fails: X2* and X5* determine X6*, which hides the dependence of X6 on X1.
    let directed: Vec<_> = res.cpdag.directed.iter().copied().collect();
    let undirected: Vec<_> = res.cpdag.undirected.iter().copied().collect();
    assert_eq!(directed, vec![(1, 5), (3, 5), (4, 5)]);
    assert_eq!(undirected, vec![(0, 1), (0, 2), (1, 2), (1, 3), (3, 4)]);
    assert_eq!(res.cpdag.shd(&truth), 1);
}

#[test]
fn recursive_oracle_round_trips_ge() {
    let m = fixtures::ge(NoiseFamily::Uniform);
    let res = oica_rgd_oracle(&m, None).unwrap();
    let g = res.graph.as_ref().unwrap().to_sem().unwrap();
    assert_eq!(g.dag(), m.dag());
    assert!((g.b() - m.sem.b()).amax() < 1e-8);
    let rep = evaluate(&m.sem, &res).unwrap();
    assert_eq!(rep.shd, 0);
    assert!(rep.groups.unwrap().exact_order);
}

#[test]
fn recursive_oracle_needs_equal_variances_for_chain() {
    let m = fixtures::chain2(0.8, 1.0, 1.0, NoiseFamily::Uniform).unwrap();
    assert!(matches!(oica_rgd_oracle(&m, None), Err(Error::Ambiguity { .. })));
    let res = oica_rgd_oracle(&m, Some(0.02)).unwrap();
    assert_eq!(res.graph.unwrap().to_sem().unwrap(), m.sem);
}
