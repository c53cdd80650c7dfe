use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rts_sim::demand::parse_journeys;
use rts_sim::network::Network;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rts-sim"))
}

fn city20() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/city20")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, profile: &str, seed: u64) -> PathBuf {
    let path = dir.join(format!("journeys_{profile}_{n}_{seed}.csv"));
    ok(&[
        "synth",
        "--network",
        s(&city20()),
        "--out",
        s(&path),
        "--n",
        &n.to_string(),
        "--profile",
        profile,
        "--seed",
        &seed.to_string(),
    ]);
    path
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn synth_is_deterministic_and_handles_zero() {
    let dir = tempfile::tempdir().unwrap();
    let empty = synth(dir.path(), 0, "desk", 1);
    assert_eq!(read(&empty), "origin,destination,tap_in_s,observed_duration_s\n");
    let a = synth(dir.path(), 1_000, "desk", 5);
    let b_dir = tempfile::tempdir().unwrap();
    let b = synth(b_dir.path(), 1_000, "desk", 5);
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a).lines().count(), 1_001);
}

#[test]
fn synth_rejects_negative_counts_and_unknown_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("j.csv");
    let r = run(&["synth", "--network", s(&city20()), "--out", s(&out), "--n", "-1"]);
    assert_eq!(r.status.code(), Some(1));
    let r = run(&["synth", "--network", s(&city20()), "--out", s(&out), "--n", "5", "--profile", "tuesday"]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn synth_monday_writes_full_day() {
    let dir = tempfile::tempdir().unwrap();
    let path = synth(dir.path(), 2_078_010, "monday", 0);
    let net = Network::load(city20()).unwrap();
    let parsed = parse_journeys(&path, &net).unwrap();
    assert_eq!(parsed.records.len(), 2_078_010);
    assert_eq!(parsed.malformed, 0);
}

fn simulate(journeys: &Path, out: &Path, extra: &[&str]) -> Output {
    let net = city20();
    let mut args = vec![
        "simulate",
        "--network",
        s(&net),
        "--journeys",
        s(journeys),
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let journeys = synth(dir.path(), 5_000, "desk", 2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = simulate(&journeys, out, &["--runs", "3", "--seed", "7", "--trace"]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    for f in ["report.csv", "durations.csv", "crowdedness.csv", "events.log"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(read(&a.join("report.csv")).lines().count(), 4);
    let crowd = read(&a.join("crowdedness.csv"));
    assert!(crowd.starts_with("station_id,max_crowdedness,missed_events\n"));
    assert!(read(&a.join("durations.csv")).starts_with("origin,destination,duration_s,run_id\n"));
}

#[test]
fn simulate_reports_rejections_under_crowd_limit() {
    let dir = tempfile::tempdir().unwrap();
    let journeys = synth(dir.path(), 20_000, "desk", 3);
    let out = dir.path().join("o");
    let r = simulate(&journeys, &out, &["--psi", "50", "--capacity-scale", "0.02"]);
    assert!(r.status.success());
    let report = read(&out.join("report.csv"));
    let mut lines = report.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "rejected").unwrap();
    assert!(row[col].parse::<u64>().unwrap() > 0);
}

#[test]
fn simulate_missing_journeys_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let r = simulate(&missing, &dir.path().join("o"), &[]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nope.csv"));
}

#[test]
fn simulate_rejects_conflicting_route_flags() {
    let dir = tempfile::tempdir().unwrap();
    let journeys = synth(dir.path(), 10, "desk", 1);
    let r = simulate(&journeys, &dir.path().join("o"), &["--routes", "r.csv", "--shortest-path"]);
    assert_eq!(r.status.code(), Some(1));
}

/// Rewrites simulated durations as journeys carrying observed durations.
fn durations_as_journeys(durations: &Path, out: &Path, shift: u32) {
    let mut w = String::from("origin,destination,tap_in_s,observed_duration_s\n");
    for line in read(durations).lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let d: u32 = f[2].parse().unwrap();
        w.push_str(&format!("{},{},30000,{}\n", f[0], f[1], d + shift));
    }
    std::fs::write(out, w).unwrap();
}

fn gof_rows(path: &Path) -> Vec<Vec<f64>> {
    read(path)
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(5).map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn validate_against_self_and_shifted() {
    let dir = tempfile::tempdir().unwrap();
    let journeys = synth(dir.path(), 20_000, "desk", 4);
    let sim = dir.path().join("sim");
    assert!(simulate(&journeys, &sim, &["--runs", "2"]).status.success());
    let durations = sim.join("durations.csv");

    let same = dir.path().join("same.csv");
    durations_as_journeys(&durations, &same, 0);
    let out = dir.path().join("v_same");
    ok(&[
        "validate",
        "--network",
        s(&city20()),
        "--journeys",
        s(&same),
        "--durations",
        s(&durations),
        "--out",
        s(&out),
        "--min-od-demand",
        "500",
    ]);
    let rows = gof_rows(&out.join("gof.csv"));
    assert!(!rows.is_empty());
    for r in &rows {
        for (i, v) in r.iter().enumerate() {
            if i != 1 {
                assert!((v - 1.0).abs() < 1e-6, "{r:?}");
            }
        }
    }
    let summary = read(&out.join("gof_summary.csv"));
    assert!(summary.starts_with("day,od_pairs,mean_BC,mean_PPCC,mean_F,mean_C,mean_Q\n"));

    let shifted = dir.path().join("shifted.csv");
    durations_as_journeys(&durations, &shifted, 60);
    let out = dir.path().join("v_shift");
    ok(&[
        "validate",
        "--network",
        s(&city20()),
        "--journeys",
        s(&shifted),
        "--durations",
        s(&durations),
        "--out",
        s(&out),
        "--min-od-demand",
        "500",
    ]);
    for r in gof_rows(&out.join("gof.csv")) {
        assert!((r[1] - 1.0).abs() < 1e-9, "PPCC {r:?}");
        assert!(r[0] < 1.0);
    }

    let r = run(&[
        "validate",
        "--network",
        s(&city20()),
        "--journeys",
        s(&same),
        "--durations",
        s(&durations),
        "--out",
        s(&out),
        "--min-od-demand",
        "100000000",
    ]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn fit_routes_then_simulate_with_table() {
    let dir = tempfile::tempdir().unwrap();
    let journeys = synth(dir.path(), 10_000, "desk", 6);
    let sim = dir.path().join("sim");
    assert!(simulate(&journeys, &sim, &[]).status.success());
    let observed = dir.path().join("observed.csv");
    durations_as_journeys(&sim.join("durations.csv"), &observed, 0);
    let fit = dir.path().join("fit");
    ok(&[
        "fit-routes",
        "--network",
        s(&city20()),
        "--journeys",
        s(&observed),
        "--out",
        s(&fit),
    ]);
    let routes = fit.join("routes.csv");
    assert!(read(&routes)
        .starts_with("origin,destination,route_rank,probability,transfers,expected_time_s,platform_sequence\n"));
    let again = dir.path().join("again");
    let r = simulate(&journeys, &again, &["--routes", s(&routes)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn scenario_grids_are_complete() {
    let dir = tempfile::tempdir().unwrap();
    let journeys = synth(dir.path(), 3_000, "desk", 7);
    let spec = dir.path().join("a.toml");
    std::fs::write(
        &spec,
        "population_start = 1000\npopulation_end = 5000\npopulation_step = 1000\npsi_values = [\"inf\", 40]\nruns = 1\ncapacity_scale = 0.01\n",
    )
    .unwrap();
    let net = city20();
    let base = |kind: &str, out: &Path| {
        vec![
            "scenario".to_string(),
            "--kind".into(),
            kind.into(),
            "--network".into(),
            s(&net).into(),
            "--journeys".into(),
            s(&journeys).into(),
            "--out".into(),
            s(out).into(),
            "--spec".into(),
            s(&spec).into(),
        ]
    };
    let out_a = dir.path().join("a");
    let args = base("A", &out_a);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let a = read(&out_a.join("scenario_a.csv"));
    assert!(a.starts_with("population,psi,mean_duration_s,commuters_missed,missed_events,rejected\n"));
    assert_eq!(a.lines().count(), 1 + 5 * 2);
    assert!(a.contains(",inf,"));
    assert!(out_a.join("critical_points.csv").exists());

    let out_b = dir.path().join("b");
    let mut args = base("B", &out_b);
    args.extend(["--phi".into(), "0,0.2".into(), "--psi".into(), "40".into()]);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let b = read(&out_b.join("scenario_b.csv"));
    let header = b.lines().next().unwrap();
    for col in ["phi", "delta_mean_duration_s", "delta_commuters_missed", "delta_missed_events"] {
        assert!(header.split(',').any(|h| h == col), "{header}");
    }
    assert_eq!(b.lines().count(), 1 + 5 * 2);

    let args = base("C", &dir.path().join("c"));
    let r = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(r.status.code(), Some(1));

    std::fs::write(&spec, "population_step = 0\n").unwrap();
    let args = base("A", &dir.path().join("d"));
    let r = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(r.status.code(), Some(1));
}
