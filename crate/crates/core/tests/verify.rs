use gategeom::verify::{check_ids, resolve_selectors, run_all, run_check, VerifyOptions, VerifyRecord};
use gategeom::witnesses::RobustnessConfig;
use gategeom::Error;

fn quick_options() -> VerifyOptions {
    VerifyOptions {
        robustness: RobustnessConfig {
            trials: 12,
            grid: 5,
            bisection_steps: 3,
            ..RobustnessConfig::default()
        },
        ..VerifyOptions::default()
    }
}

fn assert_all_pass(records: &[VerifyRecord]) {
    let failing: Vec<_> = records.iter().filter(|r| !r.pass).collect();
    assert!(failing.is_empty(), "{failing:#?}");
}

#[test]
fn every_check_passes() {
    let opts = quick_options();
    for id in check_ids() {
        let records = run_check(id, &opts).unwrap();
        assert!(!records.is_empty(), "{id}");
        assert!(records.iter().all(|r| r.theorem_id == id));
        assert_all_pass(&records);
    }
}

#[test]
fn selectors() {
    assert_eq!(resolve_selectors(&[]).unwrap().len(), 12);
    assert_eq!(resolve_selectors(&["all".into()]).unwrap().len(), 12);
    assert_eq!(
        resolve_selectors(&["sphere".into(), "flatness".into(), "sphere".into()]).unwrap(),
        vec!["sphere", "flatness"]
    );
    assert!(matches!(resolve_selectors(&["thm9".into()]), Err(Error::Config(_))));
    assert!(run_check("nope", &quick_options()).is_err());
}

#[test]
fn records_are_deterministic() {
    let opts = quick_options();
    let sel = vec!["flatness".to_string(), "vector-graph".to_string()];
    assert_eq!(run_all(&sel, &opts).unwrap(), run_all(&sel, &opts).unwrap());
}

#[test]
fn record_pass_logic() {
    assert!(VerifyRecord::near("x", "q", 1.0, 1.0005, 1e-3).pass);
    assert!(!VerifyRecord::near("x", "q", 1.0, 1.002, 1e-3).pass);
    assert!(!VerifyRecord::near("x", "q", 1.0, f64::NAN, 1e-3).pass);
    assert!(VerifyRecord::at_least("x", "q", 0.5, 0.5).pass);
    assert!(!VerifyRecord::at_least("x", "q", 0.5, f64::NAN).pass);
}

#[test]
fn depth_layers_option_is_respected() {
    let opts = VerifyOptions {
        depth_layers: vec![2, 3],
        ..quick_options()
    };
    let records = run_check("depth-scaling", &opts).unwrap();
    assert!(records.iter().any(|r| r.quantity.contains("L = 3")));
    assert_all_pass(&records);
}
