mod common;

use common::{binary_vertices, chsh_facets, oracle_local_distance};
use nlbox::behavior::{self, Alphabets, Behavior, EPS_LP};
use nlbox::locality::{is_local, local_distance, mix_vertices};
use proptest::prelude::*;

fn named() -> Vec<Behavior> {
    let mut out = vec![behavior::pr_box(), behavior::tsirelson_box(), behavior::uniform_box()];
    for v in [0.0, 0.3, 0.5, 0.51, 0.7, 1.0] {
        out.push(behavior::isotropic_box(v).unwrap());
    }
    for v in binary_vertices() {
        out.push(behavior::local_deterministic(2, 2, &v[..2], &v[2..]).unwrap());
    }
    out
}

#[test]
fn agrees_with_minilp_oracle() {
    for p in named() {
        let (ours, _) = local_distance(&p).unwrap();
        let oracle = oracle_local_distance(&p);
        assert!((ours - oracle).abs() < 1e-7, "{}: {ours} vs {oracle}", p.name());
    }
}

#[test]
fn agrees_with_chsh_facets() {
    for p in named() {
        let facet_local = chsh_facets(&p).iter().all(|&w| w <= 0.75 + 1e-9);
        assert_eq!(is_local(&p, EPS_LP).unwrap().is_local, facet_local, "{}", p.name());
    }
}

#[test]
fn named_boxes() {
    assert!(!is_local(&behavior::pr_box(), EPS_LP).unwrap().is_local);
    assert!(!is_local(&behavior::tsirelson_box(), EPS_LP).unwrap().is_local);
    assert!(is_local(&behavior::uniform_box(), EPS_LP).unwrap().is_local);
    for v in binary_vertices() {
        let d = behavior::local_deterministic(2, 2, &v[..2], &v[2..]).unwrap();
        assert!(is_local(&d, EPS_LP).unwrap().is_local, "{}", d.name());
    }
}

#[test]
fn local_certificate_reconstructs_table() {
    let p = behavior::isotropic_box(0.4).unwrap();
    let cert = is_local(&p, EPS_LP).unwrap();
    let w = cert.weights.unwrap();
    assert!(w.iter().all(|&x| x >= -1e-12));
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let table = mix_vertices(&p.alphabets(), &w);
    for (got, want) in table.iter().zip(p.table()) {
        assert!((got - want).abs() < 1e-6);
    }
}

#[test]
fn larger_alphabets_match_vertex_mixture() {
    // Three inputs and three outputs per side: 3^3 * 3^3 = 729 vertices.
    let al = Alphabets::new(3, 3, 3, 3).unwrap();
    let n = 729;
    let mut w = vec![0.0; n];
    w[0] = 0.25;
    w[100] = 0.5;
    w[728] = 0.25;
    let table = mix_vertices(&al, &w);
    let p = Behavior::new("mix", al, table).unwrap();
    assert!(is_local(&p, EPS_LP).unwrap().is_local);
}

fn mixture(weights: &[f64], pr_weight: f64) -> Behavior {
    let pr = behavior::pr_box();
    let total: f64 = weights.iter().sum();
    let local = mix_vertices(
        &Alphabets::BINARY,
        &weights.iter().map(|w| w / total).collect::<Vec<_>>(),
    );
    let table = local
        .iter()
        .zip(pr.table())
        .map(|(l, p)| (1.0 - pr_weight) * l + pr_weight * p)
        .collect();
    Behavior::new("mix", Alphabets::BINARY, table).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_mixtures_agree_with_oracle(
        weights in prop::collection::vec(0.01f64..1.0, 16),
        pr_weight in 0.0f64..1.0,
    ) {
        let p = mixture(&weights, pr_weight);
        let (ours, _) = local_distance(&p).unwrap();
        let oracle = oracle_local_distance(&p);
        prop_assert!((ours - oracle).abs() < 1e-7, "{} vs {}", ours, oracle);
        let facet_local = chsh_facets(&p).iter().all(|&w| w <= 0.75 + 1e-9);
        if !(1e-9..=1e-6).contains(&ours) {
            prop_assert_eq!(ours <= EPS_LP, facet_local);
        }
    }

    #[test]
    fn pure_local_mixtures_are_local(weights in prop::collection::vec(0.0f64..1.0, 16)) {
        prop_assume!(weights.iter().sum::<f64>() > 1e-3);
        let p = mixture(&weights, 0.0);
        prop_assert!(is_local(&p, EPS_LP).unwrap().is_local);
    }
}
