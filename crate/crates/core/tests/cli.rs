use std::collections::HashMap;
use std::path::Path;
use std::process::Command;

fn evopf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evopf"))
}

fn read_csv(path: &Path) -> Vec<HashMap<String, String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            headers.iter().map(String::from).zip(r.iter().map(String::from)).collect()
        })
        .collect()
}

#[test]
fn solve_writes_tables_and_summary_recomputes() {
    let dir = tempfile::tempdir().unwrap();
    let status = evopf()
        .args(["solve", "--penetration", "0.25", "--tou-scenario", "2", "--verify", "--plots", "--out"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));

    let volts = read_csv(&dir.path().join("voltages.csv"));
    assert_eq!(volts.len(), 24 * 33);
    let summary = read_csv(&dir.path().join("summary.csv"));
    assert_eq!(summary.len(), 33);
    for row in &summary {
        let bus = &row["bus"];
        let series: Vec<f64> = volts
            .iter()
            .filter(|v| &v["bus"] == bus)
            .map(|v| v["v_pu"].parse().unwrap())
            .collect();
        let min = series.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(row["v_min"].parse::<f64>().unwrap(), min, "bus {bus}");
        let below = series.iter().filter(|&&v| v < 0.95).count();
        assert_eq!(row["hours_below_095"].parse::<usize>().unwrap(), below);
        assert_eq!(row["status"], "ok");
    }

    let dispatch = read_csv(&dir.path().join("dispatch.csv"));
    let mut price = HashMap::new();
    let mut grid = HashMap::new();
    for row in &dispatch {
        let value: f64 = row["value"].parse().unwrap();
        match row["entity_kind"].as_str() {
            "price" => {
                price.insert(row["hour"].clone(), value);
            }
            "grid_p" => *grid.entry(row["hour"].clone()).or_insert(0.0) += value,
            _ => {}
        }
    }
    let cost: f64 = price.iter().map(|(h, c)| c * grid[h]).sum();
    let reported: f64 = summary[0]["cost_usd"].parse().unwrap();
    assert!((cost - reported).abs() <= 1e-4 * reported, "{cost} vs {reported}");

    for name in ["solution.json", "verification.json", "bus17_tou2.svg", "bus33_tou2.svg", "hour1_tou2.svg"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let svg = std::fs::read_to_string(dir.path().join("bus17_tou2.svg")).unwrap();
    assert!(svg.contains("0.95 p.u."));

    let report = dir.path().join("replay.json");
    let status = evopf()
        .args(["verify", "--solution"])
        .arg(dir.path().join("solution.json"))
        .arg("--out")
        .arg(&report)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["pass"], true);
    assert_eq!(json["hours"].as_array().unwrap().len(), 24);
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "price = [1, 2]\n").unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["solve".into(), "--scenario".into(), bad.display().to_string()],
        vec!["solve".into(), "--network".into(), dir.path().join("missing.toml").display().to_string()],
        vec!["solve".into(), "--penetration".into(), "-0.5".into()],
        vec!["solve".into(), "--tou-scenario".into(), "9".into()],
        vec!["sweep".into(), "--penetration".into(), "0,-1".into()],
        vec!["solve".into(), "--model".into(), "both".into()],
        vec!["frobnicate".into()],
    ];
    for args in cases {
        let out = evopf().args(&args).arg("--out").arg(dir.path()).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn infeasible_cell_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let net = evopf::bundled::IEEE33_TOML.replace("{ id = 18, v_min = 0.90, v_max = 1.05 }", "{ id = 18, v_min = 1.2, v_max = 1.3 }");
    assert_ne!(net, evopf::bundled::IEEE33_TOML, "bus 18 entry not found");
    let path = dir.path().join("net.toml");
    std::fs::write(&path, net).unwrap();
    let out_dir = dir.path().join("out");
    let status = evopf()
        .args(["sweep", "--penetration", "0", "--network"])
        .arg(&path)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let summary = read_csv(&out_dir.join("summary.csv"));
    assert_eq!(summary.len(), 33);
    assert!(summary.iter().all(|r| r["status"].starts_with("failed") && r["v_min"].is_empty()));
}

#[test]
fn external_price_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("prices.txt");
    std::fs::write(&prices, vec!["80"; 24].join(",")).unwrap();
    let status = evopf()
        .args(["solve", "--penetration", "0", "--tou-scenario"])
        .arg(&prices)
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let dispatch = read_csv(&dir.path().join("dispatch.csv"));
    assert!(dispatch
        .iter()
        .filter(|r| r["entity_kind"] == "price")
        .all(|r| r["value"] == "80.0000" && r["tou"] == "file"));
}

#[test]
fn dump_program_lists_cones() {
    let out = evopf().args(["dump-program", "--penetration", "0.5"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# conic program"));
    assert!(text.lines().any(|l| l == "soc4 768"));
    assert!(text.lines().any(|l| l == "soc3 1536"));
}
