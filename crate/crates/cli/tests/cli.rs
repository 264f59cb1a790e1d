use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use leakhunt::hydraulics::SolverSettings;
use leakhunt::network::{MeterTag, Network};
use leakhunt::scenariodb::{LeakSimulator, ScenarioDatabase};
use leakhunt::synthetic;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(format!("{name}.json"))
}

fn leakhunt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leakhunt"))
        .args(args)
        .env("LEAKHUNT_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn validate_reports_success_and_problems() {
    let ok = leakhunt(&["validate", "--network", p(&fixture("three_dma"))]);
    assert_eq!(code(&ok), 0, "{}", text(&ok.stderr));
    assert!(text(&ok.stdout).contains("30 pipes"));

    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    let json = std::fs::read_to_string(fixture("three_dma")).unwrap();
    let json = json.replacen(r#""demand":0.0004,"dma":"A"}"#, r#""demand":0.0004}"#, 1);
    std::fs::write(&broken, json).unwrap();
    let bad = leakhunt(&["validate", "--network", p(&broken)]);
    assert_eq!(code(&bad), 2);
    assert!(text(&bad.stderr).contains("An1"), "{}", text(&bad.stderr));

    let missing = leakhunt(&["validate", "--network", "/nonexistent/net.json"]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn solve_writes_one_row_per_element() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("state.csv");
    let run = leakhunt(&["solve", "--network", p(&fixture("three_dma")), "--out", p(&out)]);
    assert_eq!(code(&run), 0, "{}", text(&run.stderr));
    assert!(text(&run.stderr).contains("effective config"));
    let csv = std::fs::read_to_string(&out).unwrap();
    let net = synthetic::three_dma();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("node,")).count(), net.n_junctions());
    assert_eq!(rows.iter().filter(|r| r.starts_with("pipe,")).count(), net.n_pipes());
    assert_eq!(rows.iter().filter(|r| r.starts_with("dma,")).count(), 3);

    let again = dir.path().join("again.csv");
    leakhunt(&["solve", "--network", p(&fixture("three_dma")), "--out", p(&again)]);
    assert_eq!(csv, std::fs::read_to_string(&again).unwrap());

    let cycle = leakhunt(&["solve", "--network", p(&fixture("five_dma_200")), "--cycle"]);
    assert_eq!(code(&cycle), 0, "{}", text(&cycle.stderr));
    assert!(text(&cycle.stdout).lines().any(|l| l.starts_with("cycle_pipe,")));
}

#[test]
fn failing_solves_exit_with_the_numeric_code() {
    let run = leakhunt(&["solve", "--network", p(&fixture("five_dma_200")), "--max-iterations", "1"]);
    assert_eq!(code(&run), 3, "{}", text(&run.stderr));
    assert!(text(&run.stderr).contains("residuals"));
}

struct Pipeline {
    dir: tempfile::TempDir,
}

impl Pipeline {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let me = Self { dir };
        let net = fixture("three_dma");
        let run = leakhunt(&[
            "build-db", "--network", p(&net), "--out", p(&me.path("db.bin")),
            "--orifice-steps", "5", "--demand-steps", "3", "--workers", "2",
        ]);
        assert_eq!(code(&run), 0, "{}", text(&run.stderr));
        let run = leakhunt(&[
            "build-random-db", "--network", p(&net), "--out", p(&me.path("events.bin")),
            "--events", "60", "--seed", "3",
        ]);
        assert_eq!(code(&run), 0, "{}", text(&run.stderr));
        me
    }

    fn campaign(&self, out: &str, extra: &[&str]) -> Output {
        let net = fixture("three_dma");
        let mut args = vec![
            "campaign", "--network", p(&net), "--db", p(&self.path("db.bin")).to_string().leak(),
            "--events", p(&self.path("events.bin")).to_string().leak(),
            "--out-dir", p(&self.path(out)).to_string().leak(),
        ];
        args.extend_from_slice(extra);
        leakhunt(&args)
    }
}

#[test]
fn campaign_pipeline_end_to_end() {
    let pl = Pipeline::new();
    let run = pl.campaign("run1", &["--noise", "0.5", "--seed", "17"]);
    assert_eq!(code(&run), 0, "{}", text(&run.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pl.path("run1/summary.json")).unwrap()).unwrap();
    assert!(summary["summary"]["detection_rate"].is_number());
    assert_eq!(summary["provenance"]["seed"], 17);

    // the same seed gives the same files
    let run = pl.campaign("run2", &["--noise", "0.5", "--seed", "17"]);
    assert_eq!(code(&run), 0);
    for f in ["events.csv", "classes.csv", "dmas.csv"] {
        assert_eq!(std::fs::read(pl.path("run1").join(f)).unwrap(), std::fs::read(pl.path("run2").join(f)).unwrap());
    }

    // a replay from the header alone reproduces them byte for byte
    let events = pl.path("run1/events.csv");
    let replay = leakhunt(&["campaign", "--replay", p(&events), "--out-dir", p(&pl.path("replay"))]);
    assert_eq!(code(&replay), 0, "{}", text(&replay.stderr));
    for f in ["events.csv", "classes.csv", "dmas.csv"] {
        assert_eq!(std::fs::read(pl.path("run1").join(f)).unwrap(), std::fs::read(pl.path("replay").join(f)).unwrap());
    }

    // report recomputes the tables from the event table
    let report = leakhunt(&[
        "report", "--network", p(&fixture("three_dma")), "--events", p(&events), "--out-dir", p(&pl.path("report")),
    ]);
    assert_eq!(code(&report), 0, "{}", text(&report.stderr));
    let strip = |s: String| s.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n");
    assert_eq!(
        strip(std::fs::read_to_string(pl.path("report/classes.csv")).unwrap()),
        strip(std::fs::read_to_string(pl.path("run1/classes.csv")).unwrap())
    );

    // replaying against modified inputs is a fingerprint failure
    std::fs::copy(pl.path("db.bin"), pl.path("db.orig")).unwrap();
    let other = pl.path("db.bin");
    let rebuilt = leakhunt(&[
        "build-db", "--network", p(&fixture("three_dma")), "--out", p(&other), "--orifice-steps", "6", "--demand-steps", "2",
    ]);
    assert_eq!(code(&rebuilt), 0);
    let replay = leakhunt(&["campaign", "--replay", p(&events), "--out-dir", p(&pl.path("replay2"))]);
    assert_eq!(code(&replay), 4, "{}", text(&replay.stderr));
}

#[test]
fn databases_from_another_network_are_rejected() {
    let pl = Pipeline::new();
    let run = leakhunt(&[
        "campaign", "--network", p(&fixture("five_dma_200")), "--db", p(&pl.path("db.bin")),
        "--events", p(&pl.path("events.bin")), "--out-dir", p(&pl.path("x")),
    ]);
    assert_eq!(code(&run), 4, "{}", text(&run.stderr));
}

#[test]
fn detect_names_the_leaking_pipe_first() {
    let pl = Pipeline::new();
    let net = Network::load(fixture("three_dma")).unwrap();
    let db = ScenarioDatabase::load(pl.path("db.bin")).unwrap();
    // a leak that lies exactly on a grid cell
    let s = &db.scenarios[7 * 15 + 4 * 3 + 1];
    let truth = db.pipe_id(s).to_string();
    let sim = LeakSimulator::new(&net, &net.meters, SolverSettings::default()).unwrap();
    let base = sim.baseline(s.demand_multiplier, None).unwrap();
    let leak = sim.scenario(&base, net.pipe_index(&truth).unwrap(), s.orifice_diameter).unwrap();
    let obs = serde_json::json!({
        "demand_multiplier": s.demand_multiplier,
        "dmas": db.header.dmas.iter().zip(&leak.densities)
            .map(|(d, density)| serde_json::json!({"dma": d, "leak_density": density}))
            .collect::<Vec<_>>(),
        "meters": db.header.meters.iter().zip(&base.meter_pressures).zip(&leak.meter_deltas)
            .map(|((m, b), d)| serde_json::json!({"node": m, "pressure": b - d, "baseline": b}))
            .collect::<Vec<_>>(),
    });
    std::fs::write(pl.path("obs.json"), obs.to_string()).unwrap();
    let run = leakhunt(&[
        "detect", "--network", p(&fixture("three_dma")), "--db", p(&pl.path("db.bin")), "--obs", p(&pl.path("obs.json")),
        "--amsi-threshold", "0.1", "--meter-error", "0.0", "--out", p(&pl.path("report.json")),
    ]);
    assert_eq!(code(&run), 0, "{}", text(&run.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pl.path("report.json")).unwrap()).unwrap();
    let first = &report["report"]["identified"][0];
    assert_eq!(first["dma"], truth[..1]);
    assert_eq!(first["sequence"][0]["pipe"], truth.as_str());
    let csv = std::fs::read_to_string(pl.path("report.csv")).unwrap();
    assert!(csv.starts_with("# leakhunt "));
}

#[test]
fn compare_meters_writes_one_row_per_layout() {
    let pl = Pipeline::new();
    let spec = synthetic::three_dma_spec();
    let mut layout_args = Vec::new();
    for tag in [MeterTag::Boundary, MeterTag::Internal, MeterTag::Peripheral] {
        let layout = synthetic::meter_layout(&spec, tag);
        let path = pl.path(&format!("{}.json", layout.name));
        std::fs::write(&path, serde_json::to_string(&layout).unwrap()).unwrap();
        layout_args.push(path);
    }
    let mut args = vec![
        "compare-meters".to_string(), "--network".into(), p(&fixture("three_dma")).into(),
        "--db".into(), p(&pl.path("db.bin")).into(), "--events".into(), p(&pl.path("events.bin")).into(),
        "--out".into(), p(&pl.path("compare.csv")).into(), "--amsi-threshold".into(), "0".into(),
    ];
    for l in &layout_args {
        args.push("--layout".into());
        args.push(p(l).into());
    }
    let run = leakhunt(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&run), 0, "{}", text(&run.stderr));
    let csv = std::fs::read_to_string(pl.path("compare.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("boundary,3,"));
    assert!(rows[3].starts_with("peripheral,9,"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"random": {"n_events": 7, "seed": 99}}"#).unwrap();
    let out = dir.path().join("ev.bin");
    let run = leakhunt(&[
        "--config", p(&cfg), "build-random-db", "--network", p(&fixture("three_dma")), "--out", p(&out), "--seed", "5",
    ]);
    assert_eq!(code(&run), 0, "{}", text(&run.stderr));
    let db = ScenarioDatabase::load(&out).unwrap();
    assert_eq!(db.len(), 7);
    assert_eq!(db.header.seed, Some(5));
    let stderr = text(&run.stderr);
    assert!(stderr.contains("\"n_events\":7") && stderr.contains("\"seed\":5"), "{stderr}");

    std::fs::write(&cfg, r#"{"randm": {}}"#).unwrap();
    let bad = leakhunt(&["--config", p(&cfg), "validate", "--network", p(&fixture("triangle"))]);
    assert_eq!(code(&bad), 2);
}
