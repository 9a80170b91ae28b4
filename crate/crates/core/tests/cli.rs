use std::process::Command;

fn gam_dpg() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gam-dpg"));
    cmd.env_remove("GAM_DPG_OUT");
    cmd
}

const TINY: [&str; 22] = [
    "--set", "n=6",
    "--set", "valid_size=20",
    "--set", "test_size=30",
    "--set", "am.hidden=4",
    "--set", "am.max_gen_len=10",
    "--set", "am.max_epochs=3",
    "--set", "t1.samples_per_step=500",
    "--set", "t1.max_iters=5",
    "--set", "distill.samples=50",
    "--set", "dpg.iterations=2",
    "--set", "dpg.episodes_per_iter=64",
];

#[test]
fn dry_run_lists_points_in_grid_order() {
    let out = gam_dpg()
        .args(["--motif", "101,1101", "--d-size", "40,80", "--seed", "1", "--mask", "1001111", "--t2", "dpg_off", "--dry-run"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines,
        [
            "m101_1001111_D40_s1 dpg_off",
            "m101_1001111_D80_s1 dpg_off",
            "m1101_1001111_D40_s1 dpg_off",
            "m1101_1001111_D80_s1 dpg_off"
        ]
    );
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("grid.conf");
    std::fs::write(&file, "motifs = 1011\nseeds = 5,6\nd_sizes = 100\nmasks = 1001111\n").unwrap();
    let out = gam_dpg()
        .arg("--config")
        .arg(&file)
        .args(["--seed", "9", "--set", "seeds=7", "--dry-run"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "m1011_1001111_D100_s9 distill,dpg_off");
}

#[test]
fn config_errors_exit_with_code_2() {
    for args in [&["--set", "bogus=1"][..], &["--mask", "10011"], &["--t2", "sgd"], &["--set", "no_equals_sign"]] {
        let out = gam_dpg().args(args).arg("--dry-run").output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn tiny_sweep_writes_tables_and_reuses_points() {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        gam_dpg()
            .args(["--motif", "101", "--d-size", "40", "--seed", "3", "--mask", "1001111"])
            .args(TINY)
            .env("GAM_DPG_OUT", dir.path())
            .output()
            .unwrap()
    };
    let first = run();
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let runs = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 3);
    assert!(dir.path().join("ratios.csv").exists());

    let second = run();
    assert!(second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("1 points reused"));
    assert_eq!(std::fs::read_to_string(dir.path().join("runs.csv")).unwrap(), runs);
}

#[test]
fn infeasible_rejection_sampling_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = gam_dpg()
        .args(["--motif", "101", "--d-size", "40", "--seed", "3", "--mask", "1001111", "--t2", "distill"])
        .args(TINY)
        .args(["--set", "rs.floor=1", "--set", "rs.probe=50"])
        .arg("--out-dir")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("failures.json").exists());
}
