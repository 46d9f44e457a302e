use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_vidattr");
const TOY: &str = "toy:7,4,16x16x1,64";

fn vidattr(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key}= in {out}"))
}

fn synth(dir: &Path, seed: &str) -> String {
    let out = dir.join("data");
    let o = vidattr(&["synth", "--seed", seed, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("manifest.tsv").to_string_lossy().into_owned()
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for sub in ["", "calib", "eval"] {
        for e in fs::read_dir(root.join(sub)).unwrap() {
            let p = e.unwrap().path();
            if p.is_file() {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, Sha256::digest(fs::read(&p).unwrap()).to_vec());
            }
        }
    }
    out
}

#[test]
fn synth_writes_a_reproducible_tree() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), "7");
    synth(b.path(), "7");
    let ta = tree(&a.path().join("data"));
    assert_eq!(ta.len(), 121);
    assert_eq!(ta, tree(&b.path().join("data")));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(vidattr(&["synth", "--seed", "7"]).status.code(), Some(2));
    assert_eq!(vidattr(&["evaluate", "--manifest", "m", "--out", "o"]).status.code(), Some(2));
    let o = vidattr(&["calibrate", "--out", "t", "--zero-shot", "--alpha", "0.1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(vidattr(&["attribute", "v.swvt", "--metric", "lpips", "--zero-shot"]).status.code(), Some(2));
}

#[test]
fn help_shows_defaults() {
    let help = stdout(&vidattr(&["evaluate", "--help"]));
    for flag in [
        "--oracle",
        "--metric <METRIC>",
        "--pair <PAIR>",
        "--alpha <ALPHA>",
        "--kernel <KERNEL>",
        "--bandwidth <BANDWIDTH>",
        "--zero-shot",
        "--jobs <JOBS>",
        "--seed <SEED>",
        "--timeout-s <TIMEOUT_S>",
        "--transform <TRANSFORMS>",
    ] {
        assert!(help.contains(flag), "{flag} missing from\n{help}");
    }
    for default in ["[default: 0.05]", "[default: gaussian]", "[default: scott]", "[default: mse]", "[default: fixed]"] {
        assert!(help.contains(default), "{default} missing");
    }
}

#[test]
fn calibrate_then_attribute() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "7");
    let tau_file = dir.path().join("tau.txt");
    let o = vidattr(&["calibrate", "--manifest", &manifest, "--out", tau_file.to_str().unwrap()]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(value(&out, "s"), "20");
    assert!(fs::read_to_string(&tau_file).unwrap().contains("mode=kde"));

    let data = dir.path().join("data");
    let attribute = |video: &str| {
        let path = data.join(video);
        let o = vidattr(&["attribute", path.to_str().unwrap(), "--threshold", tau_file.to_str().unwrap(), "--oracle", TOY]);
        assert!(o.status.success());
        stdout(&o)
    };
    let own = attribute("eval/belonging_000.swvt");
    assert_eq!(own.lines().last(), Some("belonging"));
    assert!(value(&own, "t").parse::<f64>().unwrap() < 0.1);
    let noise = attribute("eval/uniform-noise_000.swvt");
    assert_eq!(noise.lines().last(), Some("non-belonging"));
    assert!(value(&noise, "tau").parse::<f64>().unwrap() > 0.0);

    let missing = data.join("eval/missing.swvt");
    let o = vidattr(&["attribute", missing.to_str().unwrap(), "--zero-shot", "--oracle", TOY]);
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(String::from_utf8_lossy(&o.stderr).lines().count(), 1);
}

#[test]
fn zero_shot_calibration_reads_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("z.txt");
    let o = vidattr(&["calibrate", "--zero-shot", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(value(&stdout(&o), "tau"), "1");
    assert!(fs::read_to_string(out).unwrap().contains("mode=zero_shot"));
}

#[test]
fn constant_signals_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "3");
    let out = dir.path().join("t.txt");
    let o = vidattr(&["calibrate", "--manifest", &manifest, "--oracle", "identity:4", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate"));
}

#[test]
fn evaluate_is_invariant_to_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "7");
    let run = |jobs: &str, out: &str| {
        let out = dir.path().join(out);
        let o = vidattr(&["evaluate", "--manifest", &manifest, "--seed", "7", "--jobs", jobs, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        (stdout(&o), fs::read_to_string(out.join("report.txt")).unwrap())
    };
    let (out1, rep1) = run("1", "r1");
    let (_, rep3) = run("3", "r3");
    assert_eq!(rep1, rep3);
    assert!(value(&out1, "accuracy").parse::<f64>().unwrap() >= 0.95);
    assert!(rep1.contains("oracle = toy:7,4,16x16x1,64"));
    assert!(dir.path().join("r1/results.csv").is_file());
}

#[test]
fn window_sweep_lists_corrupted_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "7");
    let out = dir.path().join("sw");
    let o = vidattr(&["evaluate", "--manifest", &manifest, "--seed", "7", "--sweep", "window", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("sweep_window.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    for (i, row) in rows.iter().enumerate() {
        assert!(row.starts_with(&format!("(0,{})", i + 1)), "{row}");
    }
    assert!(stdout(&o).contains("# searched pair: (0,"));
}

#[test]
fn exec_oracle_matches_in_process() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "7");
    let video = dir.path().join("data/eval/belonging_004.swvt");
    let exec = format!("exec:{BIN} serve --stdio --oracle {TOY}");
    let a = stdout(&vidattr(&["attribute", video.to_str().unwrap(), "--zero-shot", "--oracle", TOY]));
    let b = vidattr(&["attribute", video.to_str().unwrap(), "--zero-shot", "--oracle", &exec]);
    assert!(b.status.success(), "{}", String::from_utf8_lossy(&b.stderr));
    assert_eq!(value(&a, "t"), value(&stdout(&b), "t"));
}

#[test]
fn tcp_server_handles_parallel_workers() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "7");
    let mut server = Command::new(BIN)
        .args(["serve", "--port", "0", "--oracle", TOY])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening=").unwrap().to_string();
    let run = |oracle: &str, jobs: &str, out: &str| {
        let out = dir.path().join(out);
        let o = vidattr(&[
            "evaluate", "--manifest", &manifest, "--seed", "7", "--oracle", oracle, "--jobs", jobs, "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out.join("results.csv")).unwrap()
    };
    let strip = |csv: String| csv.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect::<Vec<_>>();
    let remote = strip(run(&format!("tcp:{addr}"), "3", "remote"));
    let local = strip(run(TOY, "1", "local"));
    server.kill().ok();
    server.wait().ok();
    assert_eq!(remote, local);
}
