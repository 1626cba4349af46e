use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use photon_cmab::solver::states_equivalent;
use photon_cmab::states::{load_state, psi3, s4, singlet, Sign};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_photon-cmab"));
    c.env_remove("PHOTON_CMAB_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../states").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Parses CSV text into a header and numeric rows (empty fields as NaN).
fn csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|f| f.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

#[test]
fn shipped_states_verify() {
    for name in ["singlet.json", "psi3.json", "s4.json", "a4_phi0.json", "a4_phi90.json"] {
        let o = run(&["verify", shipped(name).to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
        assert_eq!(report["pass"], true);
    }
}

#[test]
fn shipped_files_match_constructors() {
    let pairs = [
        ("singlet.json", singlet()),
        ("psi3.json", psi3(Sign::Plus, Sign::Plus)),
        ("s4.json", s4(Sign::Plus)),
    ];
    for (name, built) in pairs {
        let loaded = load_state(shipped(name)).unwrap();
        for (a, b) in loaded.amplitudes().iter().zip(built.amplitudes()) {
            assert!((a - b).norm() < 1e-16, "{name}");
        }
    }
}

#[test]
fn conflict_state_fails_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hhh.json");
    let mut amps = vec!["[0, 0]"; 8];
    amps[0] = "[1, 0]";
    fs::write(&path, format!("{{\"n_players\": 3, \"amplitudes\": [{}]}}", amps.join(", "))).unwrap();
    let o = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let failing: Vec<&str> = report["failing_rules"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert!(failing.contains(&"no_conflict_terms"));
    assert!(failing.contains(&"symmetry"));
}

#[test]
fn malformed_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{\"n_players\": 2, \"amplitudes\": [[1, 0]]}").unwrap();
    let o = run(&["verify", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    let o = run(&["verify", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["grid", "--nope"]).status.code(), Some(2));
    assert_eq!(run(&["grid", "--angles", "0:180:7,0"]).status.code(), Some(2));
    assert_eq!(run(&["grid", "--state", "psi3", "--angles", "0,0"]).status.code(), Some(2));
    assert_eq!(run(&["grid", "--p-a", "1.5"]).status.code(), Some(2));
    assert_eq!(run(&["solve", "--players", "1", "-o", "/tmp/x.json"]).status.code(), Some(2));
    assert_eq!(run(&["grid", "-o", "/nonexistent/dir/out.csv"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
}

#[test]
fn singlet_grid_is_fair_with_sin2_conflict() {
    let o = run(&["grid", "--state", "singlet"]);
    assert_eq!(o.status.code(), Some(0));
    let (header, rows) = csv(&stdout(&o));
    assert_eq!(rows.len(), 36 * 36);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    for r in &rows {
        assert!((r[col("jain")] - 1.0).abs() < 1e-12);
        let d = (r[col("theta1_deg")] - r[col("theta2_deg")]).to_radians();
        assert!((r[col("conflict")] - d.sin().powi(2)).abs() < 1e-12);
    }
}

#[test]
fn grid_header_is_stable() {
    let o = run(&["grid", "--state", "psi3", "--angles", "0,0,0", "--mc-trials", "10", "--mc-repetitions", "2"]);
    let text = stdout(&o);
    assert_eq!(
        text.lines().next().unwrap(),
        "theta1_deg,theta2_deg,theta3_deg,reward1,reward2,reward3,total_reward,jain,conflict,pondered_exact,\
mc_pondered_mean,mc_pondered_stderr,mc_jain_mean"
    );
}

#[test]
fn s4_far_from_aligned_never_optimal() {
    let o = run(&["grid", "--state", "s4", "--angles", "0:180:15,0:180:15,45,0"]);
    assert_eq!(o.status.code(), Some(0));
    let (header, rows) = csv(&stdout(&o));
    let ip = header.iter().position(|h| h == "pondered_exact").unwrap();
    let best = rows.iter().map(|r| r[ip]).fold(0.0, f64::max);
    assert!(best < 0.999, "best {best}");
}

#[test]
fn solve_outputs_verify() {
    let dir = tempfile::tempdir().unwrap();
    for n in ["3", "4", "5"] {
        let out = dir.path().join(format!("n{n}.json"));
        let o = run(&["solve", "--players", n, "--seed", "1", "-o", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let v = run(&["verify", out.to_str().unwrap()]);
        assert_eq!(v.status.code(), Some(0));
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(format!("n{n}.json.report.json"))).unwrap())
                .unwrap();
        assert!(report["objective"].as_f64().unwrap() < 1e-20);
        assert_eq!(report["seed"], 1);
        if n == "3" {
            let found = load_state(&out).unwrap();
            let matches = [Sign::Plus, Sign::Minus].iter().any(|&a| {
                [Sign::Plus, Sign::Minus]
                    .iter()
                    .any(|&b| states_equivalent(&found, &psi3(a, b), 1e-6).unwrap())
            });
            assert!(matches);
        }
    }
}

fn twice(args: &[&str]) -> (Vec<u8>, Vec<u8>) {
    let a = run(args);
    let b = run(args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    (a.stdout, b.stdout)
}

#[test]
fn seeded_commands_are_bit_reproducible() {
    let cases: [&[&str]; 4] = [
        &["grid", "--state", "a4:30", "--angles", "0:180:45,0:180:90,10,0", "--mc-trials", "100", "--seed", "3"],
        &["simulate", "--state", "psi3", "--policies", "random,random,random", "--turns", "800", "--seed", "3"],
        &["realign", "--initial-configs", "3", "--repetitions", "2", "--turns", "400", "--seed", "3"],
        &[
            "stability", "--state", "psi3", "--policies", "random,passive,passive", "--initial-configs", "2",
            "--repetitions", "2", "--turns", "400", "--seed", "3",
        ],
    ];
    for args in cases {
        let (a, b) = twice(args);
        assert!(!a.is_empty());
        assert_eq!(a, b, "{args:?}");
    }

    let dir = tempfile::tempdir().unwrap();
    let (p, q) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for path in [&p, &q] {
        let o = run(&["solve", "--players", "3", "--restarts", "4", "--seed", "8", "-o", path.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(fs::read(&p).unwrap(), fs::read(&q).unwrap());
}

#[test]
fn env_var_sets_default_seed_only() {
    let args = ["realign", "--initial-configs", "2", "--repetitions", "2", "--turns", "300"];
    let with_env = bin().args(args).env("PHOTON_CMAB_SEED", "42").output().unwrap();
    let with_flag = run(&[&args[..], &["--seed", "42"]].concat());
    assert_eq!(with_env.stdout, with_flag.stdout);
    let flag_wins = bin().args(args).args(["--seed", "42"]).env("PHOTON_CMAB_SEED", "7").output().unwrap();
    assert_eq!(flag_wins.stdout, with_flag.stdout);
}

#[test]
fn config_file_mirrors_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    fs::write(&conf, "# tiny run\nstate = psi3\nangles = 0,0:180:60,0\np_a = 0.5\n").unwrap();
    let from_file = run(&["grid", "--config", conf.to_str().unwrap()]);
    let from_flags = run(&["grid", "--state", "psi3", "--angles", "0,0:180:60,0", "--p-a", "0.5"]);
    assert_eq!(from_file.status.code(), Some(0));
    assert_eq!(from_file.stdout, from_flags.stdout);

    let overridden = run(&["grid", "--config", conf.to_str().unwrap(), "--p-a", "1"]);
    let plain = run(&["grid", "--state", "psi3", "--angles", "0,0:180:60,0"]);
    assert_eq!(overridden.stdout, plain.stdout);

    fs::write(&conf, "no equals sign\n").unwrap();
    assert_eq!(run(&["grid", "--config", conf.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn stability_requires_policies_and_writes_summary() {
    assert_eq!(run(&["stability", "--state", "psi3"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.json");
    let o = run(&[
        "stability",
        "--state",
        "psi3",
        "--policies",
        "random,passive,passive",
        "--angles",
        "0,0,0",
        "--initial-configs",
        "1",
        "--repetitions",
        "2",
        "--turns",
        "200",
        "--eval",
        "exact",
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let (header, rows) = csv(&stdout(&o));
    assert_eq!(header, ["turn", "player", "policy", "reward_mean", "reward_stderr"]);
    // Optimal start: nobody moves, everyone earns 2/3.
    assert!(rows.iter().all(|r| (r[3] - 2.0 / 3.0).abs() < 1e-12));
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(summary).unwrap()).unwrap();
    assert_eq!(s["passive_not_better_2sigma"], true);
}

#[test]
fn simulate_passive_aligned_singlet_is_optimal() {
    let o = run(&["simulate", "--angles", "20,20", "--turns", "500", "--checkpoint-every", "100", "--eval", "exact"]);
    assert_eq!(o.status.code(), Some(0));
    let (header, rows) = csv(&stdout(&o));
    let ip = header.iter().position(|h| h == "pondered").unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| (r[ip] - 1.0).abs() < 1e-12));
}
