use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use tempfile::TempDir;

use tblab::cli::commands::ingest_b;
use tblab::cli::config::ExperimentConfig;
use tblab::grid::{make_grid, sample, Cube};
use tblab::harness::{builtin_form, CSV_HEADER};

const HILBERT: &str = "kernel.name = hilbert\nscales = dyadic(-3, 3)\ncenters = 0\n";

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("exp.conf");
    fs::write(&p, body).unwrap();
    p
}

fn tblab(args: &[&str], threads: Option<&str>) -> i32 {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_tblab"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("TBLAB_THREADS", t),
        None => cmd.env_remove("TBLAB_THREADS"),
    };
    cmd.output().unwrap().status.code().unwrap()
}

fn run(sub: &str, config: &Path, out: &Path) -> i32 {
    tblab(&[sub, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()], None)
}

#[test]
fn hilbert_stein_passes_with_seven_rows() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), HILBERT);
    let out = tmp.path().join("out");
    assert_eq!(run("stein", &cfg, &out), 0);
    let csv = fs::read_to_string(out.join("stein.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r.starts_with("stein_t1,hilbert,") && r.ends_with(",PASS")));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.ends_with("overall: PASS\n"), "{summary}");
}

#[test]
fn positive_control_fails_but_writes_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &HILBERT.replace("hilbert", "positive-control"));
    let out = tmp.path().join("out");
    assert_eq!(run("stein", &cfg, &out), 1);
    assert!(fs::read_to_string(out.join("stein.csv")).unwrap().lines().skip(1).all(|r| r.ends_with(",FAIL")));
    assert!(fs::read_to_string(out.join("summary.txt")).unwrap().ends_with("overall: FAIL\n"));
}

#[test]
fn configuration_errors_exit_two_without_files() {
    let tmp = TempDir::new().unwrap();
    for body in [
        format!("{HILBERT}grid.nn = 64\n"),
        format!("{HILBERT}grid.n = many\n"),
        "kernel.name = nonsense\n".to_string(),
        format!("{HILBERT}b1 = missing.csv\n"),
        format!("{HILBERT}centers = 0;1\n"),
    ] {
        let cfg = write_config(tmp.path(), &body);
        let out = tmp.path().join("out");
        assert_eq!(run("stein", &cfg, &out), 2, "{body}");
        assert!(!out.exists(), "{body}");
    }
    let out = tmp.path().join("out");
    assert_eq!(run("stein", &tmp.path().join("absent.conf"), &out), 2);
    assert!(!out.exists());
}

#[test]
fn bad_thread_count_is_an_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), HILBERT);
    let out = tmp.path().join("out");
    let args = ["stein", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(tblab(&args, Some("zero")), 2);
    assert!(!out.exists());
}

#[test]
fn output_is_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "kernel.name = cauchy-lipschitz\nb1 = accretive-lipschitz(0.3)\ncenters = 0\n");
    let mut bodies = Vec::new();
    for t in ["1", "4"] {
        let out = tmp.path().join(format!("out{t}"));
        let args = ["stein", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        assert_eq!(tblab(&args, Some(t)), 0);
        bodies.push(fs::read(out.join("stein.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn output_dir_is_relative_to_the_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &format!("{HILBERT}output.dir = results\n"));
    assert_eq!(tblab(&["stein", "--config", cfg.to_str().unwrap()], None), 0);
    assert!(tmp.path().join("results/stein.csv").exists());
}

#[test]
fn report_rebuilds_verdicts_and_plots() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), HILBERT);
    let out = tmp.path().join("out");
    assert_eq!(run("stein", &cfg, &out), 0);
    assert_eq!(run("report", &cfg, &out), 0);
    let svgs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "svg"))
        .collect();
    assert_eq!(svgs.len(), 1);
    let svg = fs::read_to_string(&svgs[0]).unwrap();
    assert_eq!(svg.matches("<circle").count(), 7);
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.starts_with("stein_t1 hilbert") && report.contains(": PASS (7 rows"));

    let failing = tmp.path().join("failing");
    let pc = write_config(tmp.path(), &HILBERT.replace("hilbert", "positive-control"));
    assert_eq!(run("stein", &pc, &failing), 1);
    assert_eq!(run("report", &pc, &failing), 1);
    assert_eq!(run("report", &pc, &tmp.path().join("empty")), 2);
}

#[test]
fn summary_verdicts_follow_the_csv() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "kernel.name = cauchy-lipschitz\nb0 = accretive-lipschitz(0.3)\nb1 = one\ncenters = 0\n",
    );
    let out = tmp.path().join("out");
    assert_eq!(run("stein", &cfg, &out), 0);
    let csv = fs::read_to_string(out.join("stein.csv")).unwrap();
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    for line in summary.lines().filter(|l| !l.starts_with("overall")) {
        let (name, rest) = line.split_once(": ").unwrap();
        let verdict = rest.split_whitespace().next().unwrap();
        let (experiment, kernel) = name.split_once(' ').unwrap();
        let rows: Vec<&str> = csv.lines().filter(|r| r.starts_with(&format!("{experiment},{kernel},"))).collect();
        assert_eq!(rows.len(), 7);
        assert!(rows.iter().all(|r| r.rsplit(',').next() == Some(verdict)));
    }
}

#[test]
fn check_kernel_and_bmo_subcommands() {
    let tmp = TempDir::new().unwrap();
    let cfg =
        write_config(tmp.path(), "kernel.name = hilbert\nsamples = 500\ngrid.n = 256\nb1 = exp-ix\nfamily.k_max = 3\n");
    let out = tmp.path().join("out");
    assert_eq!(run("check-kernel", &cfg, &out), 0);
    let cert = fs::read_to_string(out.join("kernel_certificate.csv")).unwrap();
    assert!(cert.starts_with("kernel,condition,delta,constant,samples,seed\n"));
    assert_eq!(run("bmo", &cfg, &out), 0);
    let bmo = fs::read_to_string(out.join("bmo.csv")).unwrap();
    assert!(bmo.starts_with("cube_center,cube_side,mean_osc,best_const_osc\n"));
    // small c0 forces a mollifier narrower than one cell
    assert_eq!(run("uk-build", &cfg, &tmp.path().join("uk")), 2);
    assert!(!tmp.path().join("uk").exists());
    let one = write_config(tmp.path(), "kernel.name = hilbert\ngrid.n = 256\nuk.k = 0, 1\n");
    assert_eq!(run("uk-build", &one, &out), 0);
    assert_eq!(fs::read_to_string(out.join("uk.csv")).unwrap().lines().count(), 1 + 16 + 32);
}

#[test]
fn ingest_builtin_and_csv() {
    let tmp = TempDir::new().unwrap();
    let g = make_grid(1, Cube::interval(-4.0, 4.0).unwrap(), 64).unwrap();
    let one = ingest_b("one", &g, tmp.path()).unwrap();
    assert!(one.values.values().iter().all(|v| v.re == 1.0 && v.im == 0.0));
    let b = ingest_b("accretive-lipschitz(0.3)", &g, tmp.path()).unwrap();
    let direct = sample(&builtin_form("accretive-lipschitz(0.3)").unwrap(), &g).unwrap();
    assert_eq!(b.values.values(), direct.values());

    fs::write(tmp.path().join("b.csv"), direct.to_csv_string()).unwrap();
    let back = ingest_b("b.csv", &g, tmp.path()).unwrap();
    assert_eq!(back.values.values(), direct.values());

    let finer = make_grid(1, Cube::interval(-4.0, 4.0).unwrap(), 128).unwrap();
    assert!(ingest_b("b.csv", &finer, tmp.path()).is_err());
    assert!(ingest_b("not-a-weight", &g, tmp.path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn config_values_round_trip(n in 8usize..4096, side in 0.5..512.0f64, seed in any::<u64>(), lo in -6i32..0, hi in 0i32..6) {
        let text = format!("grid.n = {n}\ngrid.box_side = {side}\nseed = {seed}\nscales = dyadic({lo}, {hi})\n");
        let c = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(c.grid_n, n);
        prop_assert_eq!(c.box_side, side);
        prop_assert_eq!(c.seed, seed);
        prop_assert_eq!(c.scales.len(), (hi - lo + 1) as usize);
        prop_assert_eq!(c.scales[0], 2f64.powi(lo));
    }

    #[test]
    fn unknown_keys_are_rejected(key in "[a-z]{1,8}(\\.[a-z]{1,8})?") {
        prop_assume!(!tblab::cli::config::KNOWN_KEYS.contains(&key.as_str()));
        let text = format!("{key} = 1\n");
        prop_assert!(ExperimentConfig::parse(&text).is_err());
    }
}
