use conet_cli::scenario::{self, CATALOG};

#[test]
fn every_scenario_passes() {
    for name in CATALOG {
        let report = scenario::run(name, 42).expect("catalogued");
        assert!(report.passed(), "{name}\n{}\n{}", report.step_log(), report.tap());
    }
}

#[test]
fn every_agent_recovers_from_every_fault_point() {
    for name in CATALOG {
        for agent in scenario::negotiators(name, 42) {
            let r = scenario::crash_recovery(name, 42, &agent).expect("catalogued");
            assert!(r.fault_points > 0, "{name}/{agent} never appended");
            assert!(r.failures.is_empty(), "{name}/{agent}: {:#?}", r.failures);
        }
    }
}

#[test]
fn reruns_are_identical() {
    for name in CATALOG {
        let a = scenario::run(name, 7).unwrap();
        let b = scenario::run(name, 7).unwrap();
        assert_eq!(a.transcript_hash, b.transcript_hash, "{name}");
        assert_eq!(a.steps, b.steps, "{name}");
        assert_eq!(a.checks, b.checks, "{name}");
        assert!(a.passed(), "{name} seed 7\n{}", a.tap());
    }
}

#[test]
fn seeds_change_the_transcript() {
    let a = scenario::run("treasury", 1).unwrap();
    let b = scenario::run("treasury", 2).unwrap();
    assert_ne!(a.transcript_hash, b.transcript_hash);
}
