//! End-to-end scenario runs: each bundled scenario's full ladder must
//! pass, and the documented mutants must fail at their documented clause.

use refinekit::scenarios::{run_scenario, scenario_names};

#[test]
fn client_server_scenario_passes() {
    let r = run_scenario("client-server").unwrap();
    for s in &r.steps {
        println!("client-server / {}: {} ({})", s.name, if s.ok { "ok" } else { "FAIL" }, s.detail);
    }
    assert!(r.ok(), "{:?}", r.steps.iter().find(|s| !s.ok));
}

#[test]
fn client_server_unopt_scenario_passes() {
    let r = run_scenario("client-server-unopt").unwrap();
    for s in &r.steps {
        println!(
            "client-server-unopt / {}: {} ({})",
            s.name,
            if s.ok { "ok" } else { "FAIL" },
            s.detail
        );
    }
    assert!(r.ok(), "{:?}", r.steps.iter().find(|s| !s.ok));
}

#[test]
fn client_server_mr_scenario_passes() {
    let r = run_scenario("client-server-mr").unwrap();
    for s in &r.steps {
        println!(
            "client-server-mr / {}: {} ({})",
            s.name,
            if s.ok { "ok" } else { "FAIL" },
            s.detail
        );
    }
    assert!(r.ok(), "{:?}", r.steps.iter().find(|s| !s.ok));
}

#[test]
fn mutual_sum_scenario_passes() {
    let r = run_scenario("mutual-sum").unwrap();
    for s in &r.steps {
        println!("mutual-sum / {}: {} ({})", s.name, if s.ok { "ok" } else { "FAIL" }, s.detail);
    }
    assert!(r.ok(), "{:?}", r.steps.iter().find(|s| !s.ok));
}

#[test]
fn all_scenarios_are_runnable() {
    assert_eq!(scenario_names().len(), 4);
    assert!(run_scenario("no-such-scenario").is_err());
}
