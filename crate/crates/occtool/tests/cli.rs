use std::fs;
use std::path::{Path, PathBuf};

use occ_core::image::{encode_image, standard_power_sensors, ReadingBuffer, SensorDataBlock, SensorImage, SensorRecord};
use occtool::run_cli_with;
use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    out: String,
    err: String,
}

fn run(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_cli_with(std::iter::once("occtool").chain(args.iter().copied()), &mut out, &mut err);
    Run { code, out: String::from_utf8(out).unwrap(), err: String::from_utf8(err).unwrap() }
}

fn json(r: &Run) -> Value {
    assert_eq!(r.code, 0, "stderr: {}", r.err);
    serde_json::from_str(&r.out).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CONFIG: &str = r#"{
  "sensors": [
    { "name": "PWRSYS", "signal": { "kind": "constant", "power_w": 300 } },
    { "name": "PWRPROC", "signal": { "kind": "square", "freq_hz": 1996, "low_w": 225, "high_w": 285 } },
    { "name": "PWRMEM", "signal": { "kind": "constant", "power_w": 40 } },
    { "name": "PWRGPU", "signal": { "kind": "constant", "power_w": 5 } }
  ]
}"#;

fn setup() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, CONFIG).unwrap();
    (dir, cfg)
}

fn simulate(dir: &Path, cfg: &Path, sensor: &str, duration: &str) -> PathBuf {
    let out = dir.join(format!("{sensor}.csv"));
    let r = run(&["simulate", "--config", s(cfg), "--sensor", sensor, "--duration", duration, "--out", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.err);
    out
}

fn sample_image() -> SensorImage {
    let names = standard_power_sensors(0);
    let records: Vec<SensorRecord> = names
        .iter()
        .enumerate()
        .map(|(i, n)| SensorRecord {
            gsid: n.gsid,
            timestamp: 512_000_000,
            sample: 100 + i as u16,
            accumulator: 7 * (i as u64 + 1),
            update_tag: 2000,
        })
        .collect();
    let ping = ReadingBuffer { valid: false, records: records.iter().map(|r| SensorRecord { timestamp: 1, ..*r }).collect() };
    let pong = ReadingBuffer { valid: true, records };
    let mut block = SensorDataBlock::canonical(names);
    block.ping = ping;
    block.pong = pong;
    SensorImage { blocks: vec![block] }
}

#[test]
fn help_on_every_subcommand() {
    for sub in
        ["dump", "monitor", "bench-latency", "update-rate", "simulate", "analyze-aliasing", "fit", "sum-check"]
    {
        let r = run(&[sub, "--help"]);
        assert_eq!(r.code, 0, "{sub}");
        assert!(r.out.contains("Usage"), "{sub}");
    }
    let r = run(&["--help"]);
    assert_eq!(r.code, 0);
    assert!(r.out.contains("analyze-aliasing"));
    assert_eq!(run(&["--version"]).code, 0);
}

#[test]
fn usage_errors_exit_2() {
    for args in [
        &["dump", "--bogus"][..],
        &["frobnicate"],
        &["simulate", "--sensor", "PWRSYS"],
        &["dump", "--image", "a", "--replay", "b"],
        &["monitor", "--sensor", "PWRSYS", "--mode", "fast"],
    ] {
        let r = run(args);
        assert_eq!(r.code, 2, "{args:?}");
        assert!(!r.err.is_empty());
        assert!(r.out.is_empty());
    }
    let (_dir, cfg) = setup();
    let r = run(&["monitor", "--sim-config", s(&cfg), "--sensor", "PWRSYS", "--count", "1"]);
    assert_eq!(r.code, 2);
}

#[test]
fn missing_image_exits_1() {
    let r = run(&["dump", "--image", "/nonexistent/occ_sensors"]);
    assert_eq!(r.code, 1);
    assert!(r.err.contains("/nonexistent/occ_sensors"));
}

#[test]
fn image_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("img.bin");
    fs::write(&good, encode_image(&sample_image()).unwrap()).unwrap();
    // the only test touching this variable
    std::env::set_var(occtool::source::IMAGE_PATH_ENV, &good);
    let from_env = run(&["dump"]);
    assert_eq!(from_env.code, 0, "{}", from_env.err);
    let r = run(&["dump", "--image", "/nonexistent/flag"]);
    assert_eq!(r.code, 1);
    assert!(r.err.contains("/nonexistent/flag"));
    std::env::remove_var(occtool::source::IMAGE_PATH_ENV);
}

#[test]
fn dump_reads_selected_buffer() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.bin");
    fs::write(&img, encode_image(&sample_image()).unwrap()).unwrap();
    let v = json(&run(&["dump", "--image", s(&img), "--json"]));
    let block = &v["blocks"][0];
    assert_eq!(block["selected"], "pong");
    assert_eq!(block["sensor_count"], 6);
    let sys = &block["sensors"][0];
    assert_eq!(sys["name"], "PWRSYS");
    assert_eq!(sys["record"]["sample_w"], 100);
    assert_eq!(sys["record"]["timestamp_s"], 1.0);
    let table = run(&["dump", "--image", s(&img)]);
    assert_eq!(table.code, 0);
    assert!(table.out.contains("reading pong"));
    assert!(table.out.contains("PWRMEM"));
}

#[test]
fn simulate_output_is_reproducible() {
    let (dir, cfg) = setup();
    let a = simulate(dir.path(), &cfg, "PWRPROC", "0.5");
    let first = fs::read(&a).unwrap();
    let r = run(&["simulate", "--config", s(&cfg), "--sensor", "PWRPROC", "--duration", "0.5"]);
    assert_eq!(r.code, 0);
    assert_eq!(r.out.as_bytes(), first.as_slice());
    assert_eq!(first.iter().filter(|b| **b == b'\n').count(), 501);
    assert!(String::from_utf8(first).unwrap().starts_with(occtool::trace::TRACE_HEADER));
}

#[test]
fn simulate_unknown_sensor_fails() {
    let (_dir, cfg) = setup();
    let r = run(&["simulate", "--config", s(&cfg), "--sensor", "PWRFAN", "--duration", "0.1"]);
    assert_eq!(r.code, 1);
    assert!(r.out.is_empty());
}

#[test]
fn update_rate_from_sim_trace() {
    let (dir, cfg) = setup();
    let t = simulate(dir.path(), &cfg, "PWRSYS", "4");
    let v = json(&run(&["update-rate", "--trace", s(&t)]));
    let rate = v["rate_sa_s"].as_f64().unwrap();
    assert!((rate - 24.95).abs() < 0.05, "{rate}");
    let ms = v["mean_interval_ms"].as_f64().unwrap();
    assert!((ms - 1e3 / rate).abs() < 1e-9);
}

#[test]
fn monitor_from_sim_and_replay() {
    let (dir, cfg) = setup();
    let out = dir.path().join("mon.csv");
    let r = run(&[
        "monitor", "--sim-config", s(&cfg), "--sensor", "PWRMEM", "--count", "300", "--mode", "naive", "--out", s(&out),
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 301);
    assert!(text.lines().last().unwrap().contains(",3,"));

    let stream = dir.path().join("s.bin");
    let r = run(&[
        "simulate", "--config", s(&cfg), "--sensor", "PWRSYS", "--duration", "1", "--snapshots", s(&stream),
    ]);
    assert_eq!(r.code, 0, "{}", r.err);
    let replayed = run(&["monitor", "--replay", s(&stream), "--sensor", "PWRSYS", "--count", "5000", "--period", "0.01"]);
    assert_eq!(replayed.code, 0, "{}", replayed.err);
    // 25 frames of 40 ms read every 10 ms, less the initial full read
    assert_eq!(replayed.out.lines().count(), 1 + 99);
    let last: Vec<&str> = replayed.out.lines().last().unwrap().split(',').collect();
    assert_eq!(last[3], "300");
}

#[test]
fn bench_latency_histogram() {
    let (dir, cfg) = setup();
    let hist = dir.path().join("h.dat");
    let v = json(&run(&[
        "bench-latency", "--sim-config", s(&cfg), "--count", "50", "--period", "0.002", "--hist", s(&hist),
    ]));
    assert_eq!(v["intervals"], 49);
    assert!((v["mean_latency_s"].as_f64().unwrap() - 0.002).abs() < 1e-12);
    assert!(fs::read_to_string(&hist).unwrap().starts_with("# latency_s count"));
}

#[test]
fn analyze_aliasing_recovers_rate() {
    let (dir, cfg) = setup();
    let t = simulate(dir.path(), &cfg, "PWRPROC", "12");
    let levels = dir.path().join("lv.dat");
    let v = json(&run(&[
        "analyze-aliasing", "--trace", s(&t), "--workload-hz", "1996", "--levels-out", s(&levels),
    ]));
    let report = &v["traces"][0];
    assert_eq!(report["aliasing_detected"], true);
    let fp = report["f_pattern_hz"].as_f64().unwrap();
    assert!((fp - 0.16).abs() < 0.02, "{fp}");
    let fs_est = v["rate_estimate"]["f_sampling_sa_s"].as_f64().unwrap();
    assert!((fs_est - 1996.16).abs() < 0.05, "{fs_est}");
    assert!(levels.exists());

    let r = run(&["analyze-aliasing", "--trace", s(&t), "--workload-hz", "1", "--workload-hz", "2"]);
    assert_eq!(r.code, 2);
}

#[test]
fn fit_quadratic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "ac_w,dc_w\n1,2\n2,3\n4,11\n").unwrap();
    let plot = dir.path().join("f.dat");
    let v = json(&run(&["fit", "--data", s(&data), "--plot", s(&plot)]));
    for (key, want) in [("c0", 3.0), ("c1", -2.0), ("c2", 1.0)] {
        assert!((v[key].as_f64().unwrap() - want).abs() < 1e-9, "{key}");
    }
    assert!(v["residual_stats"]["mae_w"].as_f64().unwrap() < 1e-9);
    assert_eq!(fs::read_to_string(&plot).unwrap().lines().count(), 202);

    fs::write(&data, "1,2\nx,y\n").unwrap();
    assert_eq!(run(&["fit", "--data", s(&data)]).code, 1);
}

#[test]
fn sum_check_sees_no_unaccounted_power() {
    let (dir, _) = setup();
    // a square processor load at the sampling rate would alias onto one level
    let cfg = dir.path().join("flat.json");
    fs::write(&cfg, CONFIG.replace(r#""kind": "square", "freq_hz": 1996, "low_w": 225, "high_w": 285"#, r#""kind": "constant", "power_w": 255"#)).unwrap();
    let bulk = simulate(dir.path(), &cfg, "PWRSYS", "2");
    let comps: Vec<PathBuf> = ["PWRPROC", "PWRMEM", "PWRGPU"].iter().map(|c| simulate(dir.path(), &cfg, c, "2")).collect();
    let res = dir.path().join("r.dat");
    let mut args = vec!["sum-check", "--bulk", s(&bulk), "--kind", "pfe", "--residuals-out", s(&res)];
    for c in &comps {
        args.extend(["--component", s(c)]);
    }
    let v = json(&run(&args));
    assert_eq!(v["components"], 3);
    assert!(v["stats"]["n"].as_u64().unwrap() > 0);
    // components average 300 W against a 300 W bulk
    assert!(v["mean_residual_w"].as_f64().unwrap().abs() < 1.0, "{v}");
    assert!(res.exists());
}
