//! The `arcade` binary driven as a subprocess.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use arcade_core::grid::{read_samples_csv, GeoPoint, GridCoord, GridSpec, Meters};
use arcade_core::nn::io::{load_locator, save_locator};
use arcade_core::nn::Locator;
use arcade_core::simulator::{CellConfig, EnvironmentConfig, SamplingPlan};
use serde_json::Value;

fn arcade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arcade"))
        .args(args)
        .env("ARCADE_LOG", "error")
        .output()
        .expect("spawn arcade")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Three sectors on a 30 x 30 grid.
fn small_env(dir: &Path) -> PathBuf {
    let spec = GridSpec::new(GeoPoint::new(40.0, -3.7), 50.0, 30, 30).unwrap();
    let cell = |pci, r, c, az| CellConfig {
        pci,
        site: spec.to_geo(Meters::new(c as f64 * 50.0, r as f64 * 50.0)),
        azimuth_deg: az,
        beamwidth_deg: 120.0,
        eirp_dbm: 20.0,
        pl_exponent: 3.5,
        anomalies: vec![],
    };
    let env = EnvironmentConfig {
        spec,
        cells: vec![cell(11, 5, 5, 45.0), cell(22, 25, 5, 135.0), cell(33, 15, 25, 270.0)],
        shadowing_sigma_db: 3.0,
        noise_floor_dbm: -140.0,
        outlier_rate: 0.0,
        seed: 9,
        measurement_noise_db: 2.0,
        report_cells: 8,
        sampling: SamplingPlan {
            mdt_per_cell: 150,
            mr_ues: 20,
            mr_reports_per_ue: 2,
        },
    };
    let path = dir.join("env.json");
    fs::write(&path, serde_json::to_string_pretty(&env).unwrap()).unwrap();
    path
}

fn quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("params.toml");
    fs::write(
        &path,
        "jobs = 1\n[extrapolation]\nmax_train_points = 300\n[coverage]\nhidden = [16, 16]\n\
         [coverage.train]\nepochs = 8\nlearning_rate = 0.01\nbatch_size = 32\n[indices]\nk_os = 3.0\nm_abn = 4\n",
    )
    .unwrap();
    path
}

#[test]
fn missing_flag_is_a_usage_error() {
    let o = arcade(&["simulate", "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(arcade(&["bogus"]).status.code(), Some(1));
    assert_eq!(arcade(&["--help"]).status.code(), Some(0));
}

#[test]
fn simulate_writes_every_configured_pci() {
    let dir = tempfile::tempdir().unwrap();
    let env = small_env(dir.path());
    let out = dir.path().join("sim");
    let o = arcade(&["simulate", "--env", p(&env), "--out", p(&out)]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).trim(), "RESULT ok cells=3 samples=1350 mr_samples=120");
    let samples = read_samples_csv(fs::File::open(out.join("samples.csv")).unwrap()).unwrap();
    let mut pcis: Vec<u32> = samples.iter().map(|s| s.pci).collect();
    pcis.sort_unstable();
    pcis.dedup();
    assert_eq!(pcis, vec![11, 22, 33]);
    for pci in [11, 22, 33] {
        let truth = fs::read_to_string(out.join("truth").join(format!("pci_{pci}.csv"))).unwrap();
        assert_eq!(truth.lines().count(), 1 + 900);
    }
    let mr = read_samples_csv(fs::File::open(out.join("mr.csv")).unwrap()).unwrap();
    assert!(mr.iter().all(|s| s.position.is_none()));
}

#[test]
fn zero_samples_per_cell_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let env = small_env(dir.path());
    let out = dir.path().join("sim");
    let o = arcade(&[
        "simulate",
        "--env",
        p(&env),
        "--out",
        p(&out),
        "--mdt-per-cell",
        "0",
        "--mr-ues",
        "0",
    ]);
    assert!(o.status.success());
    assert_eq!(
        fs::read_to_string(out.join("samples.csv")).unwrap(),
        "pci,rsrp_dbm,lat,lon,timestamp_ms,source,ue_token\n"
    );
    // nothing to analyze
    let a = arcade(&[
        "analyze",
        "--samples",
        p(&out.join("samples.csv")),
        "--env",
        p(&env),
        "--out",
        p(&out),
    ]);
    assert_eq!(a.status.code(), Some(2));
}

#[test]
fn config_errors_carry_path_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("env.json");
    fs::write(&bad, "{\n  \"spec\": {\n    \"rows\": \"ten\"\n  }\n}\n").unwrap();
    let o = arcade(&["simulate", "--env", p(&bad), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr).into_owned();
    assert!(err.contains(&format!("{}:3:", bad.display())), "{err}");

    let env = small_env(dir.path());
    let toml = dir.path().join("bad.toml");
    fs::write(&toml, "jobs = 1\n\n[indices]\ndelta_db = \"wide\"\n").unwrap();
    let o = arcade(&[
        "analyze",
        "--samples",
        "none.csv",
        "--env",
        p(&env),
        "--out",
        p(dir.path()),
        "--config",
        p(&toml),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr).into_owned();
    assert!(err.contains(&format!("{}:4:", toml.display())), "{err}");
}

#[test]
fn analyze_exports_report_fields_and_map() {
    let dir = tempfile::tempdir().unwrap();
    let env = small_env(dir.path());
    let sim = dir.path().join("sim");
    assert!(arcade(&["simulate", "--env", p(&env), "--out", p(&sim)])
        .status
        .success());
    let out = dir.path().join("out");
    let o = arcade(&[
        "analyze",
        "--samples",
        p(&sim.join("samples.csv")),
        "--env",
        p(&env),
        "--out",
        p(&out),
        "--config",
        p(&quick_config(dir.path())),
        "--delta-db",
        "-3.5",
        "--m-abn",
        "7",
        "--dump-stages",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let line = stdout(&o);
    assert!(line.starts_with("RESULT ok cells=3 anomalies="), "{line}");

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    // flags win over the file, file wins over defaults
    assert_eq!(report["params"]["delta_db"], -3.5);
    assert_eq!(report["params"]["m_abn"], 7);
    assert_eq!(report["params"]["k_os"], 3.0);
    assert_eq!(report["params"]["t_serv_dbm"], -110.0);
    let schema: Value = serde_json::from_str(include_str!("../schema/report.schema.json")).unwrap();
    assert!(jsonschema::validator_for(&schema).unwrap().is_valid(&report));

    let pgm = fs::read_to_string(out.join("fields/pci_11.pgm")).unwrap();
    let mut tokens = pgm.split_whitespace();
    assert_eq!(tokens.next(), Some("P2"));
    assert_eq!(
        (tokens.next(), tokens.next(), tokens.next()),
        (Some("30"), Some("30"), Some("255"))
    );
    assert_eq!(tokens.count(), 900);
    let csv = fs::read_to_string(out.join("fields/pci_11.csv")).unwrap();
    assert_eq!(csv.lines().count(), 901);

    let geo: Value = serde_json::from_str(&fs::read_to_string(out.join("best_server.geojson")).unwrap()).unwrap();
    let feats = geo["features"].as_array().unwrap();
    assert_eq!(feats.len(), 900);
    assert!(feats.iter().all(|f| f["properties"]["best_rsrp"].is_number()));
    for stage in ["labels.csv", "augmented.csv", "dense.csv", "hyper.json", "loss.csv"] {
        assert!(out.join("stages/pci_22").join(stage).is_file(), "{stage}");
    }
}

#[test]
fn locator_positions_mr_before_analysis() {
    let dir = tempfile::tempdir().unwrap();
    let env = small_env(dir.path());
    let sim = dir.path().join("sim");
    assert!(arcade(&["simulate", "--env", p(&env), "--out", p(&sim)])
        .status
        .success());
    let model = dir.path().join("loc.json");
    let o = arcade(&[
        "train-locator",
        "--samples",
        p(&sim.join("samples.csv")),
        "--env",
        p(&env),
        "--out",
        p(&model),
        "--epochs",
        "5",
        "--hidden",
        "16,8",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).trim(), "RESULT ok reports=450 pcis=3");

    let loc: Locator<f32> = load_locator(&model).unwrap();
    let again = dir.path().join("loc2.json");
    save_locator(&loc, &again).unwrap();
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());
    let spot = loc.geolocate(&[-80.0, -120.0, -130.0]).unwrap();
    assert!(arcade_core::grid::project(&loc.spec, spot).is_some());
    assert!(loc.spec.contains(GridCoord::new(29, 29)));

    let out = dir.path().join("out");
    let o = arcade(&[
        "analyze",
        "--samples",
        p(&sim.join("mr.csv")),
        "--env",
        p(&env),
        "--locator",
        p(&model),
        "--config",
        p(&quick_config(dir.path())),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.json").is_file());
}

fn wait_for(path: &Path) -> String {
    let start = Instant::now();
    while start.elapsed() < Duration::from_secs(20) {
        if let Ok(s) = fs::read_to_string(path) {
            return s;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    panic!("{} never appeared", path.display());
}

#[test]
fn serve_and_agents_conserve_events() {
    let dir = tempfile::tempdir().unwrap();
    let env = small_env(dir.path());
    let sim = dir.path().join("sim");
    assert!(
        arcade(&["simulate", "--env", p(&env), "--out", p(&sim), "--mr-ues", "40"])
            .status
            .success()
    );
    let salt = dir.path().join("salt");
    fs::write(&salt, b"\x00per-site secret").unwrap();
    let store = dir.path().join("store");
    let addr_file = dir.path().join("addr");
    let server = Command::new(env!("CARGO_BIN_EXE_arcade"))
        .args([
            "serve",
            "--listen",
            "127.0.0.1:0",
            "--store",
            p(&store),
            "--sessions",
            "3",
        ])
        .args(["--addr-file", p(&addr_file)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let addr = wait_for(&addr_file);
    let mr = sim.join("mr.csv");
    let agent = |id: &str| {
        arcade(&[
            "agent",
            "--connect",
            &addr,
            "--agent-id",
            id,
            "--samples",
            p(&mr),
            "--salt-file",
            p(&salt),
            "--max-batch",
            "7",
        ])
    };
    let first = agent("site-a");
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(
        stdout(&first).trim(),
        "RESULT ok events=240 records=40 accepted=40 duplicates=0 retries=0"
    );
    // replaying the same traffic stores nothing new
    let replay = agent("site-a");
    assert_eq!(
        stdout(&replay).trim(),
        "RESULT ok events=240 records=40 accepted=0 duplicates=40 retries=0"
    );
    assert!(agent("site-b").status.success());
    let out = server.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "RESULT ok sessions=3 records=80 events=480");
    let stored = arcade_core::collector::load_store_dir(&store).unwrap();
    assert_eq!(stored.iter().map(|r| r.event_count()).sum::<u64>(), 480);
    let raw = fs::read_to_string(store.join("site-a.jsonl")).unwrap();
    assert!(!raw.contains("ue-000"));
}

#[test]
fn agent_without_collector_is_a_transport_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("mr.csv");
    fs::write(
        &csv,
        "pci,rsrp_dbm,lat,lon,timestamp_ms,source,ue_token\n1,-80,,,0,MR,u\n",
    )
    .unwrap();
    let salt = dir.path().join("salt");
    fs::write(&salt, "s").unwrap();
    // bind then drop to get a port with nobody listening
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap();
    let o = arcade(&[
        "agent",
        "--connect",
        &port.to_string(),
        "--agent-id",
        "x",
        "--samples",
        p(&csv),
        "--salt-file",
        p(&salt),
    ]);
    assert_eq!(o.status.code(), Some(4));
}
