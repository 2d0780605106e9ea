use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_adn");

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn adn(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn adn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn powerflow_writes_bus_table_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let grid = data("cigre12.json");
    let o = adn(dir.path(), &["powerflow", grid.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("P_meas = 24.373 MW"), "{}", stdout(&o));
    let rows = csv_rows(&dir.path().join("powerflow_pq.csv"));
    assert_eq!(rows[0], ["bus_id", "v_mag_pu", "v_angle_deg", "p_injected_mw", "q_injected_mvar"]);
    assert_eq!(rows.len(), 13);
}

#[test]
fn missing_grid_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = adn(dir.path(), &["powerflow", "no/such/grid.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no/such/grid.json"));
}

#[test]
fn unknown_flag_value_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = adn(dir.path(), &["powerflow", "--load-model", "zip"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn impedance_load_flag_changes_the_solution() {
    let dir = tempfile::tempdir().unwrap();
    assert!(adn(dir.path(), &["powerflow"]).status.success());
    assert!(adn(dir.path(), &["powerflow", "--load-model", "z"]).status.success());
    let pq = csv_rows(&dir.path().join("powerflow_pq.csv"));
    let z = csv_rows(&dir.path().join("powerflow_z.csv"));
    assert_eq!(z.len(), 13);
    assert_ne!(pq, z);
    assert_eq!(json(&dir.path().join("powerflow_z.json"))["load_model"], "z");
}

#[test]
fn simulate_with_plot_writes_trajectory_and_valid_svg() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = data("scenario_fig4.json");
    let o = adn(dir.path(), &["simulate", scenario.to_str().unwrap(), "--plot"]);
    assert!(o.status.success(), "{o:?}");
    let rows = csv_rows(&dir.path().join("trajectory.csv"));
    let header = &rows[0];
    assert_eq!(header[0], "time");
    assert!(header.iter().any(|h| h == "chi_p_MV-08"));
    let times: Vec<f64> = rows[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(times[0], 0.0);
    assert_eq!(*times.last().unwrap(), 6.0);
    assert!(times.windows(2).all(|w| w[0] <= w[1]));
    let col = header.iter().position(|h| h == "v_mag_MV-08").unwrap();
    let dip = rows[1..]
        .iter()
        .filter(|r| {
            let t: f64 = r[0].parse().unwrap();
            t > 3.0 && t < 3.15
        })
        .map(|r| r[col].parse::<f64>().unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(dip < 0.9, "{dip}");

    let svg = fs::read_to_string(dir.path().join("voltages.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let lines = doc.descendants().filter(|n| n.has_tag_name("polyline")).count();
    assert_eq!(lines, 11);
}

#[test]
fn simulate_without_events_gives_flat_traces() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("flat.json");
    fs::write(&scenario, r#"{"load_model": "pq", "references": [], "faults": [], "t_end": 2.0}"#).unwrap();
    let o = adn(dir.path(), &["simulate", scenario.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let rows = csv_rows(&dir.path().join("trajectory.csv"));
    let col = rows[0].iter().position(|h| h == "v_mag_MV-11").unwrap();
    let v: Vec<f64> = rows[1..].iter().map(|r| r[col].parse().unwrap()).collect();
    let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 1e-6, "{spread}");
}

#[test]
fn survive_node_is_reproducible_and_echoes_its_configuration() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["survive-node", "--bus", "MV-03", "--samples", "8", "--seed", "7", "--load-model", "pq"];
    assert!(adn(a.path(), &args).status.success());
    assert!(adn(b.path(), &[&args[..], &["--workers", "1"]].concat()).status.success());
    for name in ["survive_node_MV-03_pq.json", "survive_node_MV-03_pq_trials.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let s = json(&a.path().join("survive_node_MV-03_pq.json"));
    assert_eq!(s["estimate"]["trials"], 8);
    assert_eq!(s["config"]["study"]["master_seed"], 7);
    assert!((s["estimate"]["ci_half_width"].as_f64().unwrap() - 1.0 / (2.0 * 8f64.sqrt())).abs() < 1e-15);
    assert_eq!(csv_rows(&a.path().join("survive_node_MV-03_pq_trials.csv")).len(), 9);
}

#[test]
fn permissive_curve_gives_full_survivability() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("zero.json");
    fs::write(&curve, r#"[{"tau_s": 0.0, "v_min_pu": 0.0}, {"tau_s": 1.0, "v_min_pu": 0.0}]"#).unwrap();
    let o = adn(
        dir.path(),
        &["survive-node", "--bus", "MV-05", "--samples", "4", "--curve", curve.to_str().unwrap()],
    );
    assert!(o.status.success(), "{o:?}");
    let s = json(&dir.path().join("survive_node_MV-05_pq.json"));
    assert_eq!(s["estimate"]["mu"].as_f64(), Some(1.0));
}

#[test]
fn unknown_bus_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = adn(dir.path(), &["survive-node", "--bus", "MV-42", "--samples", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn degenerate_envelope_matches_single_node_study() {
    let dir = tempfile::tempdir().unwrap();
    let common = ["--bus", "MV-03", "--samples", "6", "--seed", "3"];
    let env = [&["survive-envelope", "--p-range", "0", "--q-range", "0", "--min-count", "1"][..], &common].concat();
    assert!(adn(dir.path(), &env).status.success());
    assert!(adn(dir.path(), &[&["survive-node"][..], &common].concat()).status.success());
    let cells = csv_rows(&dir.path().join("envelope_MV-03_pq.csv"));
    assert_eq!(cells.len(), 2);
    let node = json(&dir.path().join("survive_node_MV-03_pq.json"));
    assert_eq!(cells[1][2], "6");
    assert_eq!(cells[1][3], node["estimate"]["survivors"].to_string());
    assert_eq!(cells[1][4].parse::<f64>().unwrap(), node["estimate"]["mu"].as_f64().unwrap());

    let svg = fs::read_to_string(dir.path().join("envelope_MV-03_pq.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let tiles: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("cell")).collect();
    assert_eq!(tiles.len(), 1);
    assert_eq!(tiles[0].attribute("data-mu").unwrap().parse::<f64>().unwrap(), node["estimate"]["mu"].as_f64().unwrap());
}

#[test]
fn validate_passes_on_self_reference_and_flags_perturbed_angle() {
    let dir = tempfile::tempdir().unwrap();
    assert!(adn(dir.path(), &["powerflow"]).status.success());
    let reference = dir.path().join("powerflow_pq.csv");
    let o = adn(dir.path(), &["validate", reference.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("PASS"));

    let mut rows = csv_rows(&reference);
    let i = rows.iter().position(|r| r[0] == "MV-05").unwrap();
    let ang: f64 = rows[i][2].parse().unwrap();
    rows[i][2] = (ang + 0.01).to_string();
    let perturbed = dir.path().join("perturbed.csv");
    fs::write(&perturbed, rows.iter().map(|r| r.join(",") + "\n").collect::<String>()).unwrap();
    let o = adn(dir.path(), &["validate", perturbed.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("MV-05"));
    let report = csv_rows(&dir.path().join("validation.csv"));
    let bad: Vec<_> = report[1..].iter().filter(|r| r[8] == "false").map(|r| r[0].clone()).collect();
    assert_eq!(bad, ["MV-05"]);

    let truncated = dir.path().join("truncated.csv");
    fs::write(&truncated, rows[..rows.len() - 1].iter().map(|r| r.join(",") + "\n").collect::<String>()).unwrap();
    assert_eq!(adn(dir.path(), &["validate", truncated.to_str().unwrap()]).status.code(), Some(2));
}
