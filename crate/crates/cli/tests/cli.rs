use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mpl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpl"))
        .args(args)
        .current_dir(dir)
        .env_remove("MPL_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const QUICK: &str = "model = benchmark\nT = 0.1\ndelta = 1e-3\nN_list = 3,6\ntrials = 2\nseed = 4\n";

#[test]
fn help_lists_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    for (sub, flags) in [
        ("simulate", &["--config", "--seed", "--N", "--delta", "--out", "--renormalize"][..]),
        ("experiment", &["--config", "--seed", "--N", "--delta", "--trials", "--out", "--renormalize"][..]),
        ("w1", &[][..]),
        ("plot", &["--out"][..]),
    ] {
        let o = mpl(&[sub, "--help"], dir.path());
        assert_eq!(o.status.code(), Some(0), "{sub}");
        let text = stdout(&o);
        for flag in flags {
            assert!(text.contains(flag), "{sub} --help is missing {flag}");
        }
    }
    assert_eq!(mpl(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mpl(&[], dir.path()).status.code(), Some(1));
    assert_eq!(mpl(&["simulate", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(mpl(&["experiment", "--renormalize", "maybe"], dir.path()).status.code(), Some(1));
    assert_eq!(mpl(&["experiment", "--N", "-3"], dir.path()).status.code(), Some(1));
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpl(&["experiment", "--config", "nowhere.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere.cfg"), "{}", stderr(&o));
}

#[test]
fn invalid_config_exits_one_with_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "T = 0.1\ndelta = 0.2\n").unwrap();
    let o = mpl(&["simulate", "--config", "bad.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("delta"));

    fs::write(dir.path().join("typo.cfg"), "model = benchmark\ntrails = 3\n").unwrap();
    let o = mpl(&["experiment", "--config", "typo.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn overrides_win_over_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.cfg"), "T = 0.1\ndelta = 0.2\n").unwrap();
    let o = mpl(&["simulate", "--config", "bad.cfg", "--delta", "0.01", "--N", "3", "--out", "ok"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn single_trial_experiment_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bench.cfg"), QUICK).unwrap();
    let o = mpl(&["experiment", "--config", "bench.cfg", "--trials", "1", "--N", "5", "--out", "one"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["one_raw.csv", "one_summary.csv", "one_meta.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let raw = fs::read_to_string(dir.path().join("one_raw.csv")).unwrap();
    assert_eq!(raw.lines().count(), 2);
}

#[test]
fn experiment_plot_and_replot() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bench.cfg"), QUICK).unwrap();
    let o = mpl(&["experiment", "--config", "bench.cfg", "--out", "sweep"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("sweep_plot.svg").exists());
    fs::remove_file(dir.path().join("sweep_plot.svg")).unwrap();

    let o = mpl(&["plot", "sweep_summary.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let svg = fs::read_to_string(dir.path().join("sweep_plot.svg")).unwrap();
    assert_eq!(svg.matches(r#"class="marker""#).count(), 2);

    let o = mpl(&["plot", "sweep_summary.csv", "--out", "custom.svg"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("custom.svg").exists());
}

#[test]
fn workers_env_does_not_change_raw_rows() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bench.cfg"), QUICK).unwrap();
    let mut raws = Vec::new();
    for workers in ["1", "3"] {
        let prefix = format!("w{workers}");
        let o = Command::new(env!("CARGO_BIN_EXE_mpl"))
            .args(["experiment", "--config", "bench.cfg", "--out", &prefix])
            .current_dir(dir.path())
            .env("MPL_WORKERS", workers)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        raws.push(fs::read(dir.path().join(format!("{prefix}_raw.csv"))).unwrap());
    }
    assert_eq!(raws[0], raws[1]);

    let o = Command::new(env!("CARGO_BIN_EXE_mpl"))
        .args(["experiment", "--config", "bench.cfg"])
        .current_dir(dir.path())
        .env("MPL_WORKERS", "lots")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn w1_of_identical_clouds_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "weight,x_0\n0.25,1.0\n0.75,-2.0\n").unwrap();
    let o = mpl(&["w1", "a.csv", "a.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "0.0");
}

#[test]
fn w1_matches_hand_computed_distances() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), "weight,x_0\n1.0,0.0\n").unwrap();
    fs::write(dir.path().join("b.csv"), "weight,x_0\n0.5,1.0\n0.5,3.0\n").unwrap();
    let o = mpl(&["w1", "a.csv", "b.csv"], dir.path());
    assert_eq!(stdout(&o).trim().parse::<f64>().unwrap(), 2.0);

    fs::write(dir.path().join("p.csv"), "weight,x_0,x_1\n1.0,0.0,0.0\n").unwrap();
    fs::write(dir.path().join("q.csv"), "weight,x_0,x_1\n1.0,3.0,4.0\n").unwrap();
    let o = mpl(&["w1", "p.csv", "q.csv"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!((stdout(&o).trim().parse::<f64>().unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpl(&["w1", "missing.csv", "missing.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.csv"));

    fs::write(dir.path().join("bad.csv"), "mass,x\n1,0\n").unwrap();
    assert_eq!(mpl(&["w1", "bad.csv", "bad.csv"], dir.path()).status.code(), Some(2));

    // e^{b0 t} overflows inside the horizon
    fs::write(dir.path().join("boom.cfg"), "b0 = 1e4\nT = 0.1\ndelta = 0.01\nN_list = 3\n").unwrap();
    let o = mpl(&["simulate", "--config", "boom.cfg"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("simulation failed"), "{}", stderr(&o));
}

#[test]
fn simulate_writes_trajectory_and_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpl(&["simulate", "--N", "4", "--delta", "0.01", "--seed", "3", "--out", "sim"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let traj = fs::read_to_string(dir.path().join("sim_trajectory.csv")).unwrap();
    assert!(traj.starts_with("step,time,particle,weight,x_0\n"));
    assert_eq!(traj.lines().count(), 1 + 11 * 4);
    let o = mpl(&["w1", "sim_cloud.csv", "sim_cloud.csv"], dir.path());
    assert_eq!(stdout(&o).trim(), "0.0");
}
