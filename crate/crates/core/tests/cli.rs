use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_slidewin");

fn slidewin(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("SLIDEWIN_SEED")
        .output()
        .expect("binary runs")
}

fn csv_lines(out: &Output) -> Vec<String> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

const GEN: &str = "mx=12,my=10,n=1200,N=300,R=16";

#[test]
fn run_is_byte_identical() {
    let args = [
        "run", "--algorithm", "hds", "--eps", "0.2", "--gen", GEN, "--seed", "7", "--no-timing",
    ];
    let a = slidewin(&args);
    let b = slidewin(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let lines = csv_lines(&a);
    assert_eq!(lines[0], slidewin::bench::CSV_HEADER);
    // 1200 steps queried every 200
    assert_eq!(lines.len(), 1 + 6 + 2);
}

#[test]
fn seed_env_overrides_flag() {
    let base = ["run", "--algorithm", "ads", "--eps", "0.2", "--gen", GEN, "--no-timing"];
    let with_flag = |seed: &'static str| {
        let mut v = base.to_vec();
        v.extend(["--seed", seed]);
        v
    };
    let plain = slidewin(&with_flag("9"));
    let env = Command::new(BIN)
        .args(with_flag("1"))
        .env("SLIDEWIN_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(plain.stdout, env.stdout);
    assert_ne!(plain.stdout, slidewin(&with_flag("1")).stdout);
}

#[test]
fn config_errors_exit_two() {
    let cases: [&[&str]; 5] = [
        &["run", "--algorithm", "hds", "--eps", "0.2", "--ell", "5", "--gen", GEN],
        &["run", "--algorithm", "nope", "--eps", "0.2", "--gen", GEN],
        &["run", "--algorithm", "hds", "--eps", "0.2"],
        &["run", "--algorithm", "hds", "--eps", "0.2", "--gen", "mx=3"],
        &[
            "compare", "--run", "algorithm=hds,eps=0.2,seed=1", "--run",
            "algorithm=ads,eps=0.2,seed=2", "--gen", GEN,
        ],
    ];
    for args in cases {
        assert_eq!(slidewin(args).status.code(), Some(2), "{args:?}");
    }
}

fn write_heavy_stream(path: &Path) {
    let mut text = String::from("cpsv1 m_x=10 m_y=10 n=200\n");
    let v = "31.622776601683793,0,0,0,0,0,0,0,0,0";
    for t in 1..=200 {
        text.push_str(&format!("t={t}|{v}|{v}\n"));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn bound_violation_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("heavy.cps");
    write_heavy_stream(&input);
    let path = input.to_str().unwrap();
    let mut args = vec![
        "run", "--algorithm", "hds", "--eps", "0.1", "--input", path, "--window", "100",
        "--query-every", "50", "--no-timing", "--assert-bound",
    ];
    // the true norm bound keeps the error in check
    assert_eq!(slidewin(&args).status.code(), Some(0));
    // understating R leaves one capped level that misses most of the window
    args.extend(["--max-norm", "1"]);
    let out = slidewin(&args);
    assert_eq!(out.status.code(), Some(3));
    assert!(csv_lines(&out).len() > 1);
}

#[test]
fn gen_then_run_from_file_matches_generated_run() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.cps");
    let file = file.to_str().unwrap();
    let g = slidewin(&["gen", "--gen", GEN, "--seed", "3", "--regimes", "two", "--out", file]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    let common = ["--algorithm", "naive", "--ell", "6", "--no-timing"];
    let from_file = slidewin(
        &[&["run"], &common[..], &["--input", file, "--window", "300"]].concat(),
    );
    let generated = slidewin(
        &[&["run"], &common[..], &["--gen", GEN, "--seed", "3", "--regimes", "two"]].concat(),
    );
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, generated.stdout);
}

#[test]
fn compare_groups_and_space_trend() {
    let out = slidewin(&[
        "compare", "--run", "algorithm=hds,eps=0.2", "--run", "algorithm=ads,eps=0.2", "--gen",
        GEN, "--seed", "5", "--no-timing", "--assert-bound",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<Vec<String>> = csv_lines(&out)[1..]
        .iter()
        .map(|l| l.split(',').map(str::to_string).collect())
        .filter(|r: &Vec<String>| !r[0].starts_with("summary"))
        .collect();
    let space = |alg: &str| -> Vec<usize> {
        rows.iter()
            .filter(|r| r[1] == alg)
            .map(|r| r[4].parse().unwrap())
            .collect()
    };
    let (h, a) = (space("hds"), space("ads"));
    assert_eq!(h.len(), 6);
    assert!(h.iter().zip(&a).all(|(h, a)| a <= h));

    let sweep = slidewin(&[
        "compare", "--run", "algorithm=hds,ell=2,label=l2", "--run", "algorithm=hds,ell=4,label=l4",
        "--run", "algorithm=hds,ell=6,label=l6", "--run", "algorithm=hds,ell=8,label=l8", "--gen",
        GEN, "--no-timing",
    ]);
    let labels: std::collections::BTreeSet<String> = csv_lines(&sweep)[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().to_string())
        .collect();
    assert_eq!(labels.len(), 4);
}

#[test]
fn time_mode_with_poisson_gaps() {
    let out = slidewin(&[
        "run", "--algorithm", "hds", "--eps", "0.2", "--gen", GEN, "--poisson", "2", "--seed",
        "4", "--no-timing", "--assert-bound",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
