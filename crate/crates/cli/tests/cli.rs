use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn tomosar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tomosar"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(output: &Output) -> Value {
    assert!(
        output.status.success(),
        "exit {:?}: {}",
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout is JSON")
}

fn stderr_json(output: &Output) -> Value {
    assert!(!output.status.success());
    serde_json::from_slice(&output.stderr).expect("stderr is a JSON record")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

/// Small elevation-only scene that inverts in a few seconds.
const SMALL_SCENE: &str = r#"
[scene]
width = 10
height = 10
velocity = [0.0, 0.0]
seasonal = [0.0, 0.0]
aps = true
seed = 4

[scene.grid]
s_axis = [-40.0, -38.0, -36.0, -34.0, -32.0, -30.0, -28.0, -26.0, -24.0, -22.0, -20.0, -18.0, -16.0, -14.0, -12.0, -10.0, -8.0, -6.0, -4.0, -2.0, 0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 26.0, 28.0, 30.0, 32.0, 34.0, 36.0, 38.0, 40.0]
v_axis = [0.0]
a_axis = [0.0]

[pipeline]
penalty = 6.0
seed = 3
"#;

fn write_config(dir: &TempDir, text: &str) -> String {
    let p = path(dir, "config.toml");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn simulate_invert_and_summarise() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, SMALL_SCENE);
    let (stack, cloud, report) = (
        path(&dir, "stack.json"),
        path(&dir, "cloud.csv"),
        path(&dir, "report.json"),
    );

    let sim = stdout_json(&tomosar(&[
        "--config", &config, "simulate", "--out", &stack,
    ]));
    assert_eq!(sim["pixels"], 100);

    let summary = stdout_json(&tomosar(&[
        "--config", &config, "invert", "--stack", &stack, "--cloud", &cloud, "--report", &report,
    ]));
    let written: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(summary, written);
    assert_eq!(written["format_version"], 1);
    assert_eq!(written["mask"]["retained"], 12);
    assert_eq!(written["penalty_coefficient"], 6.0);
    let score = &written["score"];
    assert!(score["detection_rate"].as_f64().unwrap() >= 0.9, "{score}");

    let header = fs::read_to_string(&cloud).unwrap();
    assert!(header.starts_with(
        "pixel_id,scatterer_index,s_m,v_mm_yr,a_mm,amplitude,coherence,rejected_flag"
    ));

    let stats = stdout_json(&tomosar(&[
        "stats",
        "--cloud",
        &cloud,
        "--area-km2",
        "0.01",
    ]));
    assert_eq!(stats["cloud"], written["stats"]);
    assert!(stats["height_accuracy"].is_null());
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    let config = write_config(&dir, "[crlb]\nsnr_db = 10.0\n");
    let from_config = stdout_json(&tomosar(&["--config", &config, "crlb"]));
    let from_flag = stdout_json(&tomosar(&["--config", &config, "crlb", "--snr-db", "2"]));
    assert_eq!(from_config["inputs"]["snr_db"], 10.0);
    assert!((from_flag["crlb_m"].as_f64().unwrap() - 1.44).abs() < 0.02);
    assert!((from_flag["elevation_resolution_m"].as_f64().unwrap() - 24.6).abs() < 0.05);
    assert!(from_config["crlb_m"].as_f64().unwrap() < from_flag["crlb_m"].as_f64().unwrap());
}

#[test]
fn failures_emit_a_json_error_record() {
    let dir = TempDir::new().unwrap();
    let missing = path(&dir, "absent.json");
    let out = tomosar(&[
        "invert",
        "--stack",
        &missing,
        "--cloud",
        &path(&dir, "c.csv"),
        "--report",
        &path(&dir, "r.json"),
    ]);
    let record = stderr_json(&out);
    assert_eq!(record["status"], "error");
    assert_eq!(record["kind"], "io");
    assert_eq!(record["stage"], "read");

    let bad = write_config(&dir, "[pipeline]\nunknown_key = 1\n");
    assert_eq!(
        stderr_json(&tomosar(&["--config", &bad, "crlb"]))["kind"],
        "usage"
    );

    let out = tomosar(&["crlb", "--snr-db", "2", "--images", "0"]);
    assert_eq!(stderr_json(&out)["kind"], "invalid_input");

    let out = tomosar(&["crlb", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "usage");
    assert!(tomosar(&["--help"]).status.success());
}

#[test]
fn doppler_conversion_and_grid_lookup() {
    let dir = TempDir::new().unwrap();
    let grid = path(&dir, "grid.txt");
    fs::write(
        &grid,
        "times 0 1 2\nranges 600000 610000 620000\nvalues 1 1 1  2 2 2  3 3 3\n",
    )
    .unwrap();

    let plain = stdout_json(&tomosar(&[
        "doppler",
        "--raw-time",
        "0.4",
        "--fdc",
        "250",
        "0",
        "--fm-rate",
        "-5000",
    ]));
    assert!((plain["image_time"].as_f64().unwrap() - 0.45).abs() < 1e-12);
    assert!(plain["lookup"].is_null());

    let lookup = stdout_json(&tomosar(&[
        "doppler", "--time", "1.5", "--grid", &grid, "--range", "605000",
    ]));
    assert!((lookup["lookup"]["fdc_hz"].as_f64().unwrap() - 2.5).abs() < 1e-12);

    let outside = tomosar(&[
        "doppler", "--time", "3", "--grid", &grid, "--range", "605000",
    ]);
    assert_eq!(stderr_json(&outside)["kind"], "extrapolation");
    let allowed = stdout_json(&tomosar(&[
        "doppler",
        "--time",
        "3",
        "--grid",
        &grid,
        "--range",
        "605000",
        "--allow-extrapolation",
    ]));
    assert_eq!(allowed["lookup"]["extrapolated"], true);
}

fn write_xyz(p: &Path) {
    let mut text = String::from("x,y,z\n");
    for i in 0..10 {
        for j in 0..10 {
            let (x, y) = (i as f64, j as f64);
            let mut z = 0.1 * x - 0.2 * y + 3.0;
            if (i + j) % 9 == 0 {
                z += 40.0;
            }
            text.push_str(&format!("{x},{y},{z}\n"));
        }
    }
    fs::write(p, text).unwrap();
}

#[test]
fn plane_fit_ignores_outliers_and_feeds_stats() {
    let dir = TempDir::new().unwrap();
    let xyz = dir.path().join("points.csv");
    write_xyz(&xyz);
    let (plane, distances) = (path(&dir, "plane.csv"), path(&dir, "distances.csv"));
    let out = tomosar(&[
        "plane-fit",
        "--input",
        xyz.to_str().unwrap(),
        "--format",
        "xyz",
        "--plane",
        &plane,
        "--distances",
        &distances,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let text = fs::read_to_string(&plane).unwrap();
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    // z + a·x + b·y + d = 0 for z = 0.1x − 0.2y + 3.
    assert!(
        (row[0] + 0.1).abs() < 1e-5 && (row[1] - 0.2).abs() < 1e-5 && (row[3] + 3.0).abs() < 1e-5,
        "{row:?}"
    );

    let stats = stdout_json(&tomosar(&["stats", "--distances", &distances]));
    assert_eq!(stats["height_accuracy"]["count"], 100);
    assert!(stats["height_accuracy"]["median"].as_f64().unwrap().abs() < 1e-5);
    assert!(stats["cloud"].is_null());

    let missing_width = tomosar(&["plane-fit", "--input", xyz.to_str().unwrap()]);
    assert_eq!(stderr_json(&missing_width)["kind"], "usage");
}
