use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_mixsde");

const ADDITIVE: &str = r#"
[system]
preset = "additive"
sigma = 2.0
gamma = 3.0

[run]
hurst = 0.75
steps = 64
x0 = [0.0]
seed = 42

[simulate]
paths = 20
write_paths = 2

[malliavin]
paths = 100

[hormander]
n0 = 2

[norris]
blocks = 4
steps_per_block = 4
trials = 200

[density]
paths = 200
gaussian_mean = [0.0]
gaussian_cov = [[13.0]]
"#;

const HEISENBERG: &str = r#"
[system]
preset = "heisenberg"

[run]
hurst = 0.6
steps = 32
x0 = [0.0, 0.0]
"#;

fn run(cmd: &str, config: &str, dir: &Path, extra: &[&str]) -> std::process::Output {
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config).unwrap();
    Command::new(BIN)
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn error_json(out: &std::process::Output) -> serde_json::Value {
    serde_json::from_slice(&out.stderr).unwrap()
}

#[test]
fn every_command_is_deterministic() {
    for cmd in ["simulate", "malliavin", "hormander", "norris", "density"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = run(cmd, ADDITIVE, a.path(), &[]);
        let rb = run(cmd, ADDITIVE, b.path(), &["--threads", "2"]);
        assert!(ra.status.success(), "{cmd}: {}", String::from_utf8_lossy(&ra.stderr));
        assert!(rb.status.success());
        let fa = read_dir(&a.path().join("out"));
        assert_eq!(fa, read_dir(&b.path().join("out")), "{cmd}");
        assert!(fa.iter().any(|(n, _)| n == "MANIFEST"));
        let manifest = String::from_utf8(fa.iter().find(|(n, _)| n == "MANIFEST").unwrap().1.clone()).unwrap();
        assert!(manifest.contains("# seed=42"));
        for (name, bytes) in &fa {
            if name.ends_with(".csv") {
                let text = String::from_utf8_lossy(bytes);
                assert!(text.starts_with(&format!("# command={cmd}\n# fingerprint=")), "{name}");
                assert!(text.contains("# seed=42\n"));
            }
            if name != "MANIFEST" {
                assert!(manifest.contains(name.as_str()));
            }
        }
    }
}

#[test]
fn seed_override_changes_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run("simulate", ADDITIVE, a.path(), &[]).status.success());
    assert!(run("simulate", ADDITIVE, b.path(), &["--seed", "7"]).status.success());
    let t = |d: &Path| std::fs::read_to_string(d.join("out/simulate_terminal.csv")).unwrap();
    assert_ne!(t(a.path()), t(b.path()));
    assert!(t(b.path()).contains("# seed=7"));
}

#[test]
fn validation_errors_name_fields() {
    let cases = [
        (ADDITIVE.replace("hurst = 0.75\n", ""), "run.hurst"),
        (ADDITIVE.replace("steps = 64", "steps = 1000"), "run.steps"),
        (ADDITIVE.replace("n0 = 2", "n0 = 0"), "hormander.n0"),
        (ADDITIVE.replace("paths = 100", "paths = 5"), "malliavin.paths"),
    ];
    for (config, field) in cases {
        let d = tempfile::tempdir().unwrap();
        let out = run("simulate", &config, d.path(), &[]);
        assert_eq!(out.status.code(), Some(2));
        let err = error_json(&out);
        assert_eq!(err["error"]["kind"], "config");
        assert_eq!(err["error"]["field"], field);
        assert!(!d.path().join("out").exists());
    }
    let d = tempfile::tempdir().unwrap();
    let out = run("simulate", "[run\nhurst=", d.path(), &[]);
    assert!(!out.status.success());
    assert_eq!(error_json(&out)["error"]["kind"], "config");
}

#[test]
fn missing_config_file_is_an_io_error() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["simulate", "--config"])
        .arg(d.path().join("absent.toml"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"]["kind"], "io");
}

#[test]
fn hormander_presets() {
    let d = tempfile::tempdir().unwrap();
    assert!(run("hormander", HEISENBERG, d.path(), &[]).status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("out/hormander_decision.json")).unwrap()).unwrap();
    assert_eq!(v["strong"]["satisfied"], true);
    assert_eq!(v["strong"]["achieved_level"], 2);
    assert_eq!(v["simplified"]["satisfied"], false);
    let table = std::fs::read_to_string(d.path().join("out/hormander_brackets.csv")).unwrap();
    assert!(table.contains("\"[V1,V2]\",2,0.0,1.0,2"));

    let d = tempfile::tempdir().unwrap();
    let degenerate = HEISENBERG.replace("heisenberg", "degenerate");
    assert!(run("hormander", &degenerate, d.path(), &[]).status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("out/hormander_decision.json")).unwrap()).unwrap();
    assert_eq!(v["strong"]["satisfied"], false);
}

#[test]
fn norris_frequencies_are_monotone_and_theta_warns() {
    let d = tempfile::tempdir().unwrap();
    let config = format!(
        "{HEISENBERG}\n[norris]\nblocks = 4\nsteps_per_block = 8\ntrials = 300\nepsilons = [0.9, 0.6, 0.3]\nq = [0.5]\ntheta = 0.1\n"
    );
    assert!(run("norris", &config, d.path(), &[]).status.success());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("out/norris_summary.json")).unwrap()).unwrap();
    let f: Vec<f64> = v["report"]["frequencies"].as_array().unwrap().iter().map(|x| x["frequency"].as_f64().unwrap()).collect();
    assert!(f.windows(2).all(|w| w[0] >= w[1]), "{f:?}");
    let warnings = v["report"]["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().starts_with("theta")));
}

#[test]
fn inline_system_simulates() {
    let d = tempfile::tempdir().unwrap();
    let config = r#"
[system]
drift = ["-x1"]
wiener = [["0.5"]]
fbm = [["0.2 * cos(x1)"]]

[run]
hurst = 0.7
steps = 16
x0 = [1.0]
"#;
    let out = run("simulate", config, d.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let path = std::fs::read_to_string(d.path().join("out/simulate_path_0.csv")).unwrap();
    assert_eq!(path.lines().filter(|l| !l.starts_with('#')).count(), 18);
}
