//! End-to-end runs of the `oe-market` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PAIR: &str = r#"
[community]
z_hi_n = 0.5
z_lo_n = -0.5
interval_minutes = 60

[members.a]
z_hi = 0.2
z_lo = -0.2
devices = [{ alpha = 2.0, beta = 1.0, d_hi = 2.0 }]

[members.b]
z_hi = 0.2
z_lo = -0.2
devices = [{ alpha = 2.0, beta = 1.0, d_hi = 2.0 }]

[tariff]
buy = 1.0
sell = 0.5
"#;

fn oe_market(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oe-market"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Hourly series for one day; `r(hour, member)` gives each output.
fn day_series(dir: &Path, members: &[&str], r: impl Fn(u32, usize) -> f64) -> PathBuf {
    let mut text = String::from("timestamp,member_id,r_kwh\n");
    for h in 0..24 {
        for (i, m) in members.iter().enumerate() {
            text.push_str(&format!("2024-03-04T{h:02}:00:00,{m},{}\n", r(h, i)));
        }
    }
    let path = dir.join("series.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn records(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

fn column(path: &Path, name: &str) -> Vec<String> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let k = rdr.headers().unwrap().iter().position(|h| h == name).unwrap();
    rdr.records().map(|r| r.unwrap()[k].to_string()).collect()
}

fn floats(path: &Path, name: &str) -> Vec<f64> {
    column(path, name).iter().map(|s| s.parse().unwrap()).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn balanced_day_has_no_rewards_and_zero_net_consumption() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.toml", PAIR);
    // r_N = 2.4 lies between σ2 = 2 and σ3 = 3
    let series = day_series(dir.path(), &["a", "b"], |_, i| if i == 0 { 1.0 } else { 1.4 });
    let out = dir.path().join("out");
    let o = oe_market(&[
        "simulate",
        "--config",
        s(&config),
        "--series",
        s(&series),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let intervals = out.join("intervals.csv");
    assert_eq!(records(&intervals).len(), 24);
    assert!(column(&intervals, "zone").iter().all(|z| z == "CHI_Z"));
    assert!(floats(&intervals, "total_rewards").iter().all(|&a| a == 0.0));
    assert!(floats(&intervals, "z_n").iter().all(|z| z.abs() <= 1e-9));
    for name in [
        "members.csv",
        "summary.json",
        "price_histogram.csv",
        "z_n_histogram.csv",
    ] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let ratio = column(&out.join("members.csv"), "volumetric_to_fixed");
    assert!(
        ratio.iter().all(String::is_empty),
        "one-part pricing has no ratio: {ratio:?}"
    );
}

#[test]
fn tight_import_envelope_raises_price_above_buy_rate() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.toml", PAIR);
    // no output at night: demand 2 at the buy rate exceeds z̄_N = 0.5
    let series = day_series(
        dir.path(),
        &["a", "b"],
        |h, _| if (8..16).contains(&h) { 1.2 } else { 0.0 },
    );
    let out = dir.path().join("out");
    let o = oe_market(&[
        "simulate",
        "--config",
        s(&config),
        "--series",
        s(&series),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let intervals = out.join("intervals.csv");
    let prices = floats(&intervals, "price");
    let z_n = floats(&intervals, "z_n");
    let mut above = 0;
    for (p, z) in prices.iter().zip(&z_n) {
        if *p > 1.0 {
            above += 1;
            assert!((z - 0.5).abs() <= 1e-8);
        }
    }
    assert_eq!(above, 16);
    let payments = floats(&intervals, "total_payment");
    let bills = floats(&intervals, "nem_bill");
    for (p, b) in payments.iter().zip(&bills) {
        assert!((p - b).abs() <= 1e-9);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["excursions"]["above_buy_rate"], 16);
    assert_eq!(summary["axioms"]["profit_neutrality_failures"], 0);
}

#[test]
fn bad_inputs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.toml", PAIR);
    let empty = write(dir.path(), "empty.csv", "timestamp,member_id,r_kwh\n");
    let out = dir.path().join("out");
    let o = oe_market(&[
        "simulate",
        "--config",
        s(&config),
        "--series",
        s(&empty),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 1);

    let bad = write(dir.path(), "bad.toml", &PAIR.replace("beta = 1.0", "beta = -1.0"));
    let series = day_series(dir.path(), &["a", "b"], |_, _| 1.0);
    let o = oe_market(&[
        "simulate",
        "--config",
        s(&bad),
        "--series",
        s(&series),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("members.a.devices[0].beta"));

    let missing = dir.path().join("nope.toml");
    let o = oe_market(&[
        "compare",
        "--config",
        s(&missing),
        "--series",
        s(&series),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 1);

    assert_eq!(code(&oe_market(&["verify", "--seed", "1"])), 1);
    assert_eq!(code(&oe_market(&["frobnicate"])), 1);
    assert_eq!(code(&oe_market(&["--help"])), 0);
}

#[test]
fn verify_default_spec_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("v.csv");
    let o = oe_market(&["verify", "--seed", "42", "--iterations", "1000", "--out", s(&csv)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(
        std::fs::read_to_string(&csv).unwrap(),
        "seed,index,scenario,check,value,detail\n"
    );
}

#[test]
fn verify_rejects_arbitrage_spec_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write(
        dir.path(),
        "spec.toml",
        "buy_rate_range = [0.4, 0.5]\nsell_rate_range = [0.6, 0.7]\n",
    );
    let csv = dir.path().join("v.csv");
    let o = oe_market(&[
        "verify",
        "--seed",
        "1",
        "--iterations",
        "5",
        "--spec",
        s(&spec),
        "--out",
        s(&csv),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!csv.exists());

    let unknown = write(dir.path(), "unknown.toml", "members = 3\n");
    let o = oe_market(&[
        "verify",
        "--seed",
        "1",
        "--iterations",
        "5",
        "--spec",
        s(&unknown),
        "--out",
        s(&csv),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn disabled_rewards_break_neutrality_with_replayable_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("v.csv");
    let o = oe_market(&[
        "verify",
        "--seed",
        "3",
        "--iterations",
        "30",
        "--out",
        s(&csv),
        "--inject-fault",
        "disable-rewards",
    ]);
    assert_eq!(code(&o), 2);
    let checks = column(&csv, "check");
    assert!(checks.iter().any(|c| c == "profit_neutrality"));

    // replay one violating instance on its own
    let row = &records(&csv)[0];
    let index: u64 = row[1].parse().unwrap();
    let spec = oe_community::InstanceSpec {
        seed: row[0].parse().unwrap(),
        ..Default::default()
    };
    let inst = spec.generate(index).unwrap();
    let solver = oe_community::Bisection::default();
    let result =
        oe_market::verify::check_instance(&inst, &solver, Some(oe_market::verify::Fault::DisableRewards)).unwrap();
    assert!(!result.violations.is_empty());
    assert!(oe_market::verify::check_instance(&inst, &solver, None)
        .unwrap()
        .violations
        .is_empty());
}

#[test]
fn compare_singleton_matches_standalone() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "c.toml",
        "[community]\nz_hi_n = 0.5\nz_lo_n = -0.5\ninterval_minutes = 60\n\n[members.solo]\nz_hi = 0.5\nz_lo = -0.5\ndevices = [{ alpha = 2.0, beta = 1.0, d_hi = 2.0 }]\n\n[tariff]\nbuy = 1.0\nsell = 0.5\n",
    );
    let series = day_series(dir.path(), &["solo"], |h, _| 0.1 * h as f64);
    let out = dir.path().join("out");
    let o = oe_market(&[
        "compare",
        "--config",
        s(&config),
        "--series",
        s(&series),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let file = out.join("compare.csv");
    for (a, c) in floats(&file, "community").iter().zip(floats(&file, "benchmark")) {
        assert!((a - c).abs() <= 1e-9, "{a} vs {c}");
    }
    assert!(out.join("compare_summary.json").is_file());
}

#[test]
fn compare_with_relaxed_envelopes_matches_dnem() {
    let dir = tempfile::tempdir().unwrap();
    let relaxed = PAIR
        .replace("z_hi = 0.2", "z_hi = 5.0")
        .replace("z_lo = -0.2", "z_lo = -5.0")
        .replace("z_hi_n = 0.5", "z_hi_n = 10.0")
        .replace("z_lo_n = -0.5", "z_lo_n = -10.0");
    let config = write(dir.path(), "c.toml", &relaxed);
    let series = day_series(dir.path(), &["a", "b"], |h, i| 0.1 * h as f64 * (1.0 + i as f64));
    let out = dir.path().join("out");
    let o = oe_market(&[
        "compare",
        "--config",
        s(&config),
        "--series",
        s(&series),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let file = out.join("compare.csv");
    let (a, b, c) = (
        floats(&file, "community"),
        floats(&file, "dnem"),
        floats(&file, "benchmark"),
    );
    for k in 0..a.len() {
        assert!((a[k] - b[k]).abs() <= 1e-9, "row {k}: {} vs {}", a[k], b[k]);
        assert!(b[k] >= c[k] - 1e-9);
    }
}

#[test]
fn compare_orders_surplus_under_tight_envelopes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "c.toml", PAIR);
    let series = day_series(dir.path(), &["a", "b"], |h, i| {
        if i == 0 {
            0.09 * h as f64
        } else {
            0.05 * h as f64
        }
    });
    let out = dir.path().join("out");
    let o = oe_market(&[
        "compare",
        "--config",
        s(&config),
        "--series",
        s(&series),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let file = out.join("compare.csv");
    let ordered = column(&file, "ordered");
    let gaps = floats(&file, "gap");
    assert!(ordered.iter().any(|o| o == "true"));
    for (o, g) in ordered.iter().zip(gaps) {
        if o == "true" {
            assert!(g <= 1e-9);
        }
    }
}
