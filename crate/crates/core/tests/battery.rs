mod common;

use std::fs;

use common::{problem_text, TWO};
use hjswitch::battery::{run_battery, CheckKind, SuiteConfig};
use hjswitch::Error;

fn coarse_problem(dir: &std::path::Path) {
    let text = problem_text(
        32,
        1.0 / 64.0,
        8.0,
        TWO,
        &[
            ("cosine(1, 1, 0)", "sine(0.3, 1, 0)"),
            ("cosine(1, 1, 0)", "cosine(0.2, 2, 0.1)"),
        ],
    );
    fs::write(dir.join("coarse.toml"), text).unwrap();
}

#[test]
fn empty_suite_runs_nothing_and_passes() {
    let suite = SuiteConfig::from_toml("problems = []\n").unwrap();
    let report = run_battery(&suite, None, None).unwrap();
    assert!(report.rows.is_empty());
    assert!(report.passed());
}

#[test]
fn unknown_problem_is_rejected_before_any_work() {
    let suite = SuiteConfig::from_toml("problems = [\"no-such-problem\"]\n").unwrap();
    let err = run_battery(&suite, None, None).unwrap_err();
    assert!(matches!(err, Error::UnknownPreset(name) if name == "no-such-problem"));
}

#[test]
fn unknown_suite_keys_are_rejected() {
    assert!(matches!(
        SuiteConfig::from_toml("problems = []\ntolerance = 1\n"),
        Err(Error::Config(_))
    ));
    assert!(SuiteConfig::from_toml("tol_scale = 0\n").is_err());
}

#[test]
fn default_suite_covers_the_builtin_problems() {
    let suite = SuiteConfig::default_suite();
    assert_eq!(suite.problems.len(), 4);
    assert_eq!(suite.expected_c.get("symmetric-cosine"), Some(&1.0));
    assert_eq!(CheckKind::ALL.len(), 14);
    let criteria: Vec<u32> = CheckKind::ALL
        .iter()
        .filter_map(|k| k.criterion())
        .collect();
    assert_eq!(criteria, (1..=13).collect::<Vec<_>>());
}

#[test]
fn global_checks_pass_without_problems() {
    let suite = SuiteConfig::from_toml(
        "checks = [\"weights_closed_form\", \"mixing_identity\", \"weight_gap\", \"closed_form_evolution\"]\nmc_samples = 1000\n",
    )
    .unwrap();
    let report = run_battery(&suite, None, None).unwrap();
    assert_eq!(report.rows.len(), 6);
    assert!(report.passed(), "{}", report.table());
}

#[test]
fn zero_convergence_tolerance_fails_only_the_convergence_audit() {
    let dir = tempfile::tempdir().unwrap();
    coarse_problem(dir.path());
    let suite = SuiteConfig::from_toml(
        "problems = [\"coarse\"]\nchecks = [\"ergodic_constant\", \"convergence_audit\", \"lipschitz\"]\nlong_horizon = 8.0\n[tolerances]\nconvergence = 0.0\n",
    )
    .unwrap();
    let report = run_battery(&suite, Some(dir.path()), None).unwrap();
    assert!(!report.passed());
    assert!(report
        .failures()
        .all(|r| r.check == CheckKind::ConvergenceAudit));
    assert!(report
        .rows
        .iter()
        .any(|r| r.check == CheckKind::ErgodicConstant && r.passed));
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    coarse_problem(dir.path());
    let suite = SuiteConfig::from_toml(
        "problems = [\"coarse\"]\nchecks = [\"monte_carlo\", \"ergodic_constant\", \"convergence_audit\"]\nmc_samples = 2000\nlong_horizon = 8.0\n",
    )
    .unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_battery(&suite, Some(dir.path()), Some(&a)).unwrap();
    run_battery(&suite, Some(dir.path()), Some(&b)).unwrap();
    let mut files: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    files.sort();
    assert!(files.iter().any(|f| f == "matrix.json"));
    for f in files {
        let (pa, pb) = (a.join(&f), b.join(&f));
        if pa.is_dir() {
            for e in fs::read_dir(&pa).unwrap() {
                let name = e.unwrap().file_name();
                assert_eq!(
                    fs::read(pa.join(&name)).unwrap(),
                    fs::read(pb.join(&name)).unwrap()
                );
            }
        } else {
            assert_eq!(fs::read(&pa).unwrap(), fs::read(&pb).unwrap(), "{f:?}");
        }
    }
}
