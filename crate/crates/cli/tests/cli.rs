use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use rtdispatch::geo::LatLon;
use rtdispatch::network::{load_graph, select_landmarks, Router};
use rtdispatch::speed::{SpeedModel, SpeedProfiles};
use rtdispatch::time::{parse_timestamp, CACHE_BIN_MINUTES};
use tempfile::TempDir;

const REGION: &str = "36.0,-86.9,36.05,-86.85";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtdispatch"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_city(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec![
        "gen-city",
        "--out-dir",
        name,
        "--nodes",
        "150",
        "--cols",
        "4",
        "--rows",
        "4",
        "--depots",
        "3",
        "--incidents",
        "400",
        "--replay",
        "25",
        "--rate",
        "2",
    ];
    args.extend_from_slice(extra);
    let o = run(dir, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join(name)
}

#[test]
fn missing_input_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let o = run(
        tmp.path(),
        &[
            "route",
            "--graph",
            "nope.txt",
            "--from",
            "36,-86.9",
            "--to",
            "36,-86.9",
            "--time",
            "2017-01-02T00:00:00Z",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing file"));
}

#[test]
fn bad_flags_exit_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(run(tmp.path(), &["route", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_timestamp_reports_its_line() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("log.csv"),
        "id,timestamp,lat,lon\n1,2017-01-01T00:00:00Z,36.01,-86.89\n2,yesterday,36.01,-86.89\n",
    )
    .unwrap();
    let o = run(
        tmp.path(),
        &["fit-incidents", "log.csv", "--out", "m.toml", "--region", REGION],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn empty_log_has_no_observations() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("log.csv"), "id,timestamp,lat,lon\n").unwrap();
    let o = run(
        tmp.path(),
        &["fit-incidents", "log.csv", "--out", "m.toml", "--region", REGION],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no observations"));
    assert!(!tmp.path().join("m.toml").exists());
}

#[test]
fn fit_then_update() {
    let tmp = TempDir::new().unwrap();
    let mut table = String::from("tau_hours,intercept,temp_mean_c\n");
    for i in 0..60 {
        let temp = (i % 7) as f64;
        table.push_str(&format!("{},1,{temp}\n", 0.5 + (i % 5) as f64 * 0.3));
    }
    fs::write(tmp.path().join("obs.csv"), &table).unwrap();
    let o = run(tmp.path(), &["fit-incidents", "obs.csv", "--out", "m.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fitted 2 coefficients on 60 observations"));

    // an empty stream leaves the model file untouched
    fs::write(tmp.path().join("none.csv"), "").unwrap();
    let o = run(
        tmp.path(),
        &["update-incidents", "m.toml", "none.csv", "--out", "m2.toml"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(tmp.path().join("m.toml")).unwrap(),
        fs::read(tmp.path().join("m2.toml")).unwrap()
    );

    fs::write(
        tmp.path().join("drift.csv"),
        "tau_hours,intercept,temp_mean_c\n0.1,1,2\n0.2,1,3\n0.1,1,1\n",
    )
    .unwrap();
    let o = run(
        tmp.path(),
        &[
            "update-incidents",
            "m.toml",
            "drift.csv",
            "--out",
            "m3.toml",
            "--step",
            "1e-2",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let ll = |prefix: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(prefix)).unwrap();
        line.rsplit(' ').next().unwrap().parse().unwrap()
    };
    assert!(
        ll("stream log-likelihood after") > ll("stream log-likelihood before"),
        "{text}"
    );

    fs::write(
        tmp.path().join("wide.csv"),
        "tau_hours,intercept,temp_mean_c,rain_mm\n1,1,2,0\n",
    )
    .unwrap();
    let o = run(
        tmp.path(),
        &["update-incidents", "m.toml", "wide.csv", "--out", "m4.toml"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("features"), "{}", stderr(&o));
}

fn seconds(o: &Output) -> f64 {
    let text = stdout(o);
    let line = text.lines().find(|l| l.starts_with("seconds:")).expect("seconds line");
    line["seconds:".len()..].trim().parse().unwrap()
}

#[test]
fn route_matches_library() {
    let tmp = TempDir::new().unwrap();
    let city = small_city(tmp.path(), "city", &[]);
    let graph_path = city.join("graph.txt");
    let graph = Arc::new(load_graph(&graph_path).unwrap());
    let from = graph.node(3).location;
    let to = graph.node(140).location;
    let time = "2017-01-04T08:15:00Z";
    let fmt = |p: LatLon| format!("{},{}", p.lat, p.lon);

    let o = run(
        &city,
        &[
            "route",
            "--graph",
            "graph.txt",
            "--from",
            &fmt(from),
            "--to",
            &fmt(to),
            "--time",
            time,
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    let speeds: Arc<dyn SpeedModel> = Arc::new(SpeedProfiles::freeflow(&graph, CACHE_BIN_MINUTES).unwrap());
    let landmarks = select_landmarks(&graph, 16, 0).unwrap();
    let router = Router::new(graph.clone(), Arc::new(landmarks), speeds).unwrap();
    let want = router
        .route_between(&from, &to, parse_timestamp(time).unwrap())
        .unwrap();
    assert_eq!(seconds(&o), want.travel_time_s);

    let o = run(
        &city,
        &[
            "route",
            "--graph",
            "graph.txt",
            "--from",
            &fmt(from),
            "--to",
            &fmt(from),
            "--time",
            time,
        ],
    );
    assert_eq!(seconds(&o), 0.0);
}

#[test]
fn unreachable_destination_fails() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("g.txt"),
        "[nodes]\nid,lat,lon\n1,36.0,-86.9\n2,36.01,-86.9\n[edges]\nfrom,to,length_m,lanes,freeflow_mph,segment_id\n1,2,1100,1,30,1\n",
    )
    .unwrap();
    let args = |from: &'static str, to: &'static str| {
        [
            "route",
            "--graph",
            "g.txt",
            "--from",
            from,
            "--to",
            to,
            "--time",
            "2017-01-02T00:00:00Z",
        ]
    };
    let o = run(tmp.path(), &args("36.0,-86.9", "36.01,-86.9"));
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(tmp.path(), &args("36.01,-86.9", "36.0,-86.9"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no route"));
}

#[test]
fn compare_echoes_config_and_seed() {
    let tmp = TempDir::new().unwrap();
    let city = small_city(tmp.path(), "city", &[]);
    let o = run(
        tmp.path(),
        &[
            "compare",
            "--config",
            "city/scenario.toml",
            "--out-dir",
            "out",
            "--seed",
            "42",
            "--set",
            "planner.b=10",
            "--set",
            "planner.epsilon=1.5",
            "--set",
            "planner.h_s=1",
            "--set",
            "planner.gamma=0.9",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("incidents: 25"));

    let csv = fs::read_to_string(tmp.path().join("out/report.csv")).unwrap();
    for line in [
        "# seed = 42",
        "# b = 10",
        "# epsilon = 1.5",
        "# h_s = 1",
        "# gamma = 0.9",
    ] {
        assert!(csv.lines().any(|l| l == line), "missing {line:?} in\n{csv}");
    }
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "incident_id,response_time_base,response_time_policy,savings");
    assert_eq!(rows.len(), 26);

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["seed"], 42);
    assert_eq!(json["config"]["planner"]["gamma"], 0.9);
    assert_eq!(json["incidents"], 25);
    // the scenario file itself is untouched
    assert!(fs::read_to_string(city.join("scenario.toml"))
        .unwrap()
        .contains("seed = 1"));

    let bad = run(
        tmp.path(),
        &[
            "compare",
            "--config",
            "city/scenario.toml",
            "--set",
            "planner.epsilon=0.5",
        ],
    );
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    small_city(tmp.path(), "city", &[]);
    for out in ["a", "b"] {
        let o = run(
            tmp.path(),
            &[
                "simulate",
                "--config",
                "city/scenario.toml",
                "--out-dir",
                out,
                "--trace",
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |p: &str| fs::read_to_string(tmp.path().join(p)).unwrap();
    assert_eq!(read("a/report.csv"), read("b/report.csv"));
    assert_eq!(
        read("a/trace.jsonl").lines().count(),
        read("b/trace.jsonl").lines().count()
    );
    assert!(!read("a/trace.jsonl").is_empty());
}

#[test]
fn gen_city_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let a = small_city(tmp.path(), "a", &["--seed", "5"]);
    let b = small_city(tmp.path(), "b", &["--seed", "5"]);
    let c = small_city(tmp.path(), "c", &["--seed", "6"]);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 8);
    for name in &names {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name:?}"
        );
    }
    assert_ne!(
        fs::read(a.join("graph.txt")).unwrap(),
        fs::read(c.join("graph.txt")).unwrap()
    );
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["params"]["seed"], 5);
    assert_eq!(manifest["params"]["n_nodes"], 150);
}
