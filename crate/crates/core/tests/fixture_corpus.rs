//! The shipped ensemble corpus parses, validates, and hits its design rates.
//!
//! Every file under `fixtures/` must load through the public file API; the
//! rate of each ensemble is pinned to its design value.  Coefficients come
//! from published tables rounded to four decimals, so socket balance holds
//! to the parser tolerance rather than exactly.

use metde::ensemble::MetEnsemble;
use metde::optimizer::EnsembleTemplate;

fn fixture(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

/// (file, design rate, edge types, variable classes, check classes)
const CORPUS: &[(&str, f64, usize, usize, usize)] = &[
    ("fig1.json", 0.5, 4, 4, 3),
    ("fig5_punctured.json", 0.5, 2, 3, 1),
    ("ldpc_3_6.json", 0.5, 1, 1, 1),
    ("tab2_reference.json", 0.1, 3, 3, 2),
    ("tab2_full_de.json", 0.1, 4, 3, 5),
    ("tab2_hybrid_de.json", 0.1, 4, 3, 5),
    ("tab2_app1.json", 0.1, 4, 3, 5),
    ("tab2_app2.json", 0.1, 3, 3, 4),
    ("tab2_app3.json", 0.1, 4, 3, 5),
    ("tab3_reference.json", 0.5, 4, 4, 3),
    ("tab3_full_de.json", 0.5, 4, 4, 5),
    ("tab3_hybrid_de.json", 0.5, 4, 4, 5),
    ("tab3_app1.json", 0.5, 4, 4, 5),
    ("tab3_app2.json", 0.5, 4, 4, 5),
    ("tab3_app3.json", 0.5, 4, 4, 5),
    ("tab4_code_A.json", 0.1, 4, 4, 4),
    ("tab4_code_B.json", 0.2, 4, 4, 4),
    ("tab4_code_C.json", 0.3, 4, 4, 4),
    ("tab4_code_D.json", 0.4, 4, 4, 4),
    ("tab4_code_E.json", 0.5, 4, 4, 4),
    ("tab4_code_F.json", 0.6, 4, 4, 4),
    ("tab4_code_G.json", 0.7, 4, 4, 4),
];

#[test]
fn every_ensemble_fixture_loads_and_hits_its_design_rate() {
    for &(name, rate, m_e, n_var, n_chk) in CORPUS {
        let ens = MetEnsemble::from_json_file(fixture(name))
            .unwrap_or_else(|e| panic!("{name} failed to load: {e}"));
        assert_eq!(ens.edge_types(), m_e, "{name}: edge types");
        assert_eq!(ens.var_classes().len(), n_var, "{name}: variable classes");
        assert_eq!(ens.chk_classes().len(), n_chk, "{name}: check classes");
        assert!(
            (ens.rate() - rate).abs() <= 1e-3,
            "{name}: rate {} is off its design value {rate}",
            ens.rate()
        );
    }
}

#[test]
fn running_example_rate_is_exact() {
    // Unlike the four-decimal table entries, the running example's
    // coefficients are exact decimals and the identity L(1,1) - R(1) = 1/2
    // must survive f64 summation to the last bit.
    let ens = MetEnsemble::from_json_file(fixture("fig1.json")).unwrap();
    assert!(
        (ens.rate() - 0.5).abs() < 1e-15,
        "running-example rate {} is not exactly 1/2",
        ens.rate()
    );
}

#[test]
fn sweep_template_instantiates_across_its_feasible_range() {
    let t = EnsembleTemplate::from_json_file(fixture("fig8_sweep_template.json")).unwrap();
    assert_eq!(t.free_names(), ["v2"]);

    // The base point reproduces the running example's check side exactly.
    let base = t.instantiate(&t.initial_values()).unwrap();
    assert!((base.rate() - 0.5).abs() < 1e-9);
    let coefs: Vec<f64> = base.chk_classes().iter().map(|c| c.coef).collect();
    for (got, want) in coefs.iter().zip([0.4, 0.1, 0.2]) {
        assert!((got - want).abs() < 1e-12, "base check coefs {coefs:?}");
    }

    // Off-base value: the derived check coefficients follow the balance
    // equations 4c0 + 3c1 = 2.5 - 3a, c0 + 2c1 = 3a, c2 = a.
    let shifted = t.instantiate(&[0.25]).unwrap();
    assert!((shifted.rate() - 0.5).abs() < 1e-9);
    let coefs: Vec<f64> = shifted.chk_classes().iter().map(|c| c.coef).collect();
    for (got, want) in coefs.iter().zip([0.25, 0.25, 0.25]) {
        assert!((got - want).abs() < 1e-9, "shifted check coefs {coefs:?}");
    }

    // Outside the feasible window a check coefficient would go negative.
    assert!(t.instantiate(&[0.4]).is_err());
}

#[test]
fn corpus_table_covers_the_fixture_directory() {
    let dir = format!("{}/fixtures", env!("CARGO_MANIFEST_DIR"));
    let mut files: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    let mut expected: Vec<String> = CORPUS
        .iter()
        .map(|(name, ..)| name.to_string())
        .chain(["fig8_sweep_template.json".to_string()])
        .collect();
    expected.sort();
    assert_eq!(files, expected, "fixture directory and corpus table disagree");
}
