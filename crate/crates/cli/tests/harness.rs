use std::fs;
use std::path::Path;
use std::process::Command;

use qtrace_nac::format::write_mdp;
use qtrace_nac::instances::cyclic_five;
use qtrace_nac_cli::{run_experiment, ExperimentConfig, Mode};

const BIN: &str = env!("CARGO_BIN_EXE_qtrace-nac");

fn small_config(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        outer_iters: 8,
        critic_iters: 200,
        num_seeds: 3,
        out: out.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn read_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .unwrap();
    let headers = reader.headers().unwrap().iter().map(String::from).collect();
    let rows = reader
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
        .collect();
    (headers, rows)
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for mode in [Mode::Nac, Mode::Qtrace, Mode::ReuseDemo] {
        run_experiment(mode, &small_config(a.path())).unwrap();
        run_experiment(mode, &small_config(b.path())).unwrap();
    }
    let fa = csv_files(a.path());
    assert!(fa.len() >= 12);
    assert_eq!(fa, csv_files(b.path()));

    let c = tempfile::tempdir().unwrap();
    let mut other = small_config(c.path());
    other.seed += 1;
    run_experiment(Mode::Nac, &other).unwrap();
    assert_ne!(
        fs::read(a.path().join("nac_seed0.csv")).unwrap(),
        fs::read(c.path().join("nac_seed0.csv")).unwrap()
    );
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let one = tempfile::tempdir().unwrap();
    let many = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&one, "1"), (&many, "4")] {
        let status = Command::new(BIN)
            .args([
                "nac", "--seeds", "4", "--set", "T=5", "--set", "K=100", "--out",
            ])
            .arg(dir.path())
            .env("QTRACE_NAC_THREADS", threads)
            .output()
            .unwrap();
        assert!(
            status.status.success(),
            "{}",
            String::from_utf8_lossy(&status.stderr)
        );
    }
    assert_eq!(csv_files(one.path()), csv_files(many.path()));
}

#[test]
fn aggregate_matches_recomputation_from_seed_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    run_experiment(Mode::Nac, &config).unwrap();

    let seeds: Vec<_> = (0..config.num_seeds)
        .map(|i| read_rows(&dir.path().join(format!("nac_seed{i}.csv"))))
        .collect();
    assert_eq!(seeds[0].0, vec!["t", "gap", "critic_err", "fp_err"]);
    let text = fs::read_to_string(dir.path().join("nac_seed0.csv")).unwrap();
    assert!(text.starts_with("#schema=1\nt,gap,critic_err,fp_err\n"));

    let (headers, agg) = read_rows(&dir.path().join("nac_aggregate.csv"));
    assert_eq!(
        headers,
        vec![
            "t",
            "gap_mean",
            "gap_std",
            "critic_err_mean",
            "critic_err_std",
            "fp_err_mean",
            "fp_err_std"
        ]
    );
    assert_eq!(agg.len(), config.outer_iters);
    let n = config.num_seeds as f64;
    for (t, row) in agg.iter().enumerate() {
        for col in 0..3 {
            let xs: Vec<f64> = seeds.iter().map(|(_, rows)| rows[t][col + 1]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((row[1 + 2 * col] - mean).abs() <= 1e-12);
            assert!((row[2 + 2 * col] - std).abs() <= 1e-12);
        }
    }
}

#[test]
fn sweep_writes_one_aggregate_per_setting() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(dir.path());
    config.num_seeds = 2;
    let report = run_experiment(Mode::Sweep, &config).unwrap();
    for tag in ["rho3_c1", "rho2.5_c1", "rho3_c1.5"] {
        assert!(dir
            .path()
            .join(format!("sweep_{tag}_aggregate.csv"))
            .is_file());
        for i in 0..2 {
            assert!(dir
                .path()
                .join(format!("sweep_{tag}_seed{i}.csv"))
                .is_file());
        }
    }
    assert!(report.text.contains("lowest mean final gap"));
}

#[test]
fn reuse_demo_reports_a_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(Mode::ReuseDemo, &small_config(dir.path())).unwrap();
    assert!(report.text.contains("reused critic segment:"));
    let (_, rows) = read_rows(&dir.path().join("reuse_seed0.csv"));
    assert_eq!(rows.len(), 8);
}

#[test]
fn builtin_instance_and_file_instance_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mdp_path = dir.path().join("cyclic.mdp");
    fs::write(&mdp_path, write_mdp(&cyclic_five().0)).unwrap();

    let builtin = small_config(&dir.path().join("a"));
    let mut from_file = small_config(&dir.path().join("b"));
    from_file.mdp = mdp_path.to_string_lossy().into_owned();
    assert_eq!(builtin.load_mdp().unwrap(), from_file.load_mdp().unwrap());

    let mdp = builtin.load_mdp().unwrap();
    for s in 0..5 {
        for next in 0..5 {
            assert_eq!(
                mdp.transition(1, s, next),
                if s == next { 1.0 } else { 0.0 }
            );
        }
    }
    let report = run_experiment(Mode::Solve, &from_file).unwrap();
    assert!(report.text.contains("optimal value V*(mu) 10.0000000000"));
}

#[test]
fn cli_flags_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# short run\nT = 4\nK = 50\nseeds = 2\n").unwrap();
    let out = dir.path().join("out");
    let run = Command::new(BIN)
        .args(["nac", "--svg", "--seed", "9", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(out.join("nac_seed1.csv").is_file());
    assert!(!out.join("nac_seed2.csv").exists());
    assert!(fs::read_to_string(out.join("nac.svg"))
        .unwrap()
        .contains("<svg"));

    let bounds = Command::new(BIN)
        .args(["bounds", "--csv", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(bounds.status.success());
    let text = String::from_utf8(bounds.stdout).unwrap();
    assert!(text.starts_with("#schema=1\nterm,value\n"));
    assert!(text.lines().any(|l| l.starts_with("E3,0")));
}

#[test]
fn bad_configs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 4] = [
        &["nac", "--mdp", "/nonexistent/file.mdp"],
        &["nac", "--seeds", "0"],
        &["nac", "--set", "rho_bar=0.5", "--set", "c_bar=0.5"],
        &["nac", "--set", "unknown=1"],
    ];
    for args in cases {
        let run = Command::new(BIN)
            .args(args)
            .arg("--out")
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(!run.status.success(), "{args:?} should fail");
        assert!(String::from_utf8_lossy(&run.stderr).contains("error:"));
    }

    // A reducible behavior chain fails the ergodicity check.
    let mdp_path = dir.path().join("split.mdp");
    fs::write(
        &mdp_path,
        "states 2\nactions 1\ngamma 0.9\nP 0 0 0 1\nP 0 1 1 1\nR 0 0 1\n",
    )
    .unwrap();
    let run = Command::new(BIN)
        .args(["nac", "--mdp"])
        .arg(&mdp_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("reducible"));
}
