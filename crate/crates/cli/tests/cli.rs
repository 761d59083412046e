use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn nel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nel"))
        .current_dir(dir)
        .args(args)
        .env_remove("NEL_CACHE_DIR")
        .output()
        .expect("run nel")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(format!("{name}.conf"))
        .display()
        .to_string()
}

/// Resistance values from `x,y,resistance` CSV output.
fn resistances(o: &Output) -> Vec<f64> {
    stdout(o)
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn build_reports_counts_and_writes_manifest() {
    let dir = TempDir::new().unwrap();
    let o = nel(
        dir.path(),
        &[
            "build", "--i", "1", "--n", "2", "--kernel", "frac", "--s", "0.25",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("nodes: 5, wires: 10"), "{}", stdout(&o));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("network-i1-n2.json")).unwrap())
            .unwrap();
    assert_eq!(doc["wires"].as_array().unwrap().len(), 10);
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("network-i1-n2.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["command"], "build");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 1);

    let o = nel(dir.path(), &["build", "--i", "3", "--n", "1"]);
    assert!(stdout(&o).contains("nodes: 4, wires: 4"));
}

#[test]
fn oversized_build_exits_with_cap_code() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        nel(dir.path(), &["build", "--i", "1", "--n", "40"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn stage_zero_and_matching_resistances() {
    let dir = TempDir::new().unwrap();
    let o = nel(
        dir.path(),
        &["resistance", "--i", "1", "--n", "0", "--source", "weights"],
    );
    assert_eq!(resistances(&o), vec![1.0]);
    let o = nel(
        dir.path(),
        &[
            "resistance",
            "--i",
            "1",
            "--n",
            "1",
            "--source",
            "weights",
            "--weights",
            "stage1:0,1,2",
            "--check",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    assert!((resistances(&o)[0] - 1.0).abs() < 1e-12);
}

#[test]
fn random_network_check_agrees() {
    let dir = TempDir::new().unwrap();
    let o = nel(
        dir.path(),
        &[
            "resistance",
            "--random",
            "30",
            "--seed",
            "9",
            "--all-pairs",
            "--check",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(resistances(&o).len(), 435);
    let err = String::from_utf8_lossy(&o.stderr);
    let dev: f64 = err
        .split("= ")
        .nth(1)
        .and_then(|t| t.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(dev <= 1e-9, "{err}");
}

#[test]
fn built_network_round_trips_through_resistance() {
    let dir = TempDir::new().unwrap();
    nel(
        dir.path(),
        &["build", "--i", "3", "--n", "2", "--out", "net.json"],
    );
    let from_file = nel(
        dir.path(),
        &["resistance", "--network", "net.json", "--all-pairs"],
    );
    let direct = nel(
        dir.path(),
        &["resistance", "--i", "3", "--n", "2", "--all-pairs"],
    );
    assert_eq!(from_file.status.code(), Some(0));
    assert_eq!(stdout(&from_file), stdout(&direct));
    let star = nel(
        dir.path(),
        &[
            "resistance",
            "--network",
            "net.json",
            "--x",
            "1/12",
            "--y",
            "11/12",
            "--reduce",
            "starmesh",
        ],
    );
    let r = resistances(&star)[0];
    let solved = nel(
        dir.path(),
        &[
            "resistance",
            "--network",
            "net.json",
            "--x",
            "1/12",
            "--y",
            "11/12",
        ],
    );
    assert!((r - resistances(&solved)[0]).abs() < 1e-9 * r);
}

#[test]
fn disconnected_network_exits_with_singular_code() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("g.csv"), "x,y,conductance\na,b,1\nc,d,2\n").unwrap();
    let o = nel(
        dir.path(),
        &["resistance", "--network", "g.csv", "--x", "a", "--y", "c"],
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn configuration_errors_exit_with_config_code() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        nel(dir.path(), &["build", "--bogus"]).status.code(),
        Some(4)
    );
    assert_eq!(
        nel(dir.path(), &["experiment", "converge", "--set", "s=2"])
            .status
            .code(),
        Some(4)
    );
    assert_eq!(
        nel(
            dir.path(),
            &["experiment", "converge", "--set", "colour=red"]
        )
        .status
        .code(),
        Some(4)
    );
    assert_eq!(
        nel(
            dir.path(),
            &["experiment", "local", "--config", "missing.conf"]
        )
        .status
        .code(),
        Some(4)
    );
    assert_eq!(nel(dir.path(), &["build", "--help"]).status.code(), Some(0));
}

#[test]
fn failed_assertion_exits_with_one() {
    let dir = TempDir::new().unwrap();
    let o = nel(
        dir.path(),
        &["experiment", "local", "--set", "r=0.4", "--set", "n_max=3"],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max residual"));
}

#[test]
fn reference_configs_pass() {
    let dir = TempDir::new().unwrap();
    for name in [
        "converge",
        "density",
        "gap",
        "gamma",
        "compact",
        "ilimit",
        "local",
        "bounds",
        "assumption",
    ] {
        let cfg = config(name);
        let o = nel(
            dir.path(),
            &[
                "experiment",
                name,
                "--config",
                &cfg,
                "--out-dir",
                "reports",
                "--gnuplot",
            ],
        );
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stdout(&o));
        let manifest: serde_json::Value = serde_json::from_str(
            &fs::read_to_string(dir.path().join(format!("reports/{name}.manifest.json"))).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["passed"], true);
        assert!(manifest["seed"].is_u64());
        for out in manifest["outputs"].as_array().unwrap() {
            assert!(dir.path().join(out.as_str().unwrap()).exists());
        }
    }
    let local = fs::read_to_string(dir.path().join("reports/local.csv")).unwrap();
    assert_eq!(local.lines().count(), 18);
    assert!(local
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(1) == Some("2.0000000000000000e0")));
    let converge = fs::read_to_string(dir.path().join("reports/converge.csv")).unwrap();
    let last: f64 = converge
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((last - 8.0 / 15.0).abs() < 2e-2 * 8.0 / 15.0);
}

#[test]
fn csv_is_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "2", "8"] {
        let out = format!("t{threads}");
        let o = nel(
            dir.path(),
            &[
                "--threads",
                threads,
                "experiment",
                "compact",
                "--set",
                "n_max=5",
                "--set",
                "samples=20",
                "--out-dir",
                &out,
            ],
        );
        assert_eq!(o.status.code(), Some(0));
        outputs.push(fs::read(dir.path().join(out).join("compact.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn cache_dir_memoises_networks() {
    let dir = TempDir::new().unwrap();
    let cache = dir.path().join("cache");
    let run = |out: &str| {
        Command::new(env!("CARGO_BIN_EXE_nel"))
            .current_dir(dir.path())
            .args(["build", "--i", "2", "--n", "3", "--out", out])
            .env("NEL_CACHE_DIR", &cache)
            .output()
            .unwrap()
    };
    assert_eq!(run("a.json").status.code(), Some(0));
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
    assert_eq!(run("b.json").status.code(), Some(0));
    assert_eq!(
        fs::read(dir.path().join("a.json")).unwrap(),
        fs::read(dir.path().join("b.json")).unwrap()
    );
}
