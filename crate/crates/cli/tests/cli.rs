use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use synthpanel::{generate_replication, write_panel, FactorModelSpec};
use tempfile::TempDir;

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name);
    p.canonicalize().unwrap().display().to_string()
}

const DONORS: &str = r#"
[donors.criteria]
mode = "thresholds"
population_min = 5000
population_max = 125000
poverty_rate_min = 15
pct_nh_black_min = 20
exclusions = ["Beecher", "Flint Township", "Kalamazoo"]
"#;

fn flint_config(extra: &str) -> String {
    format!(
        r#"
[data]
panel = "{}"
characteristics = "{}"
statewide = "{}"
first_period = 2021

[outcome]
numerator = "allegations"
denominator = "births"

[assignment]
treated_unit = "Flint"
treatment_start = 2024
{DONORS}
{extra}
"#,
        fixture("flint_panel.csv"),
        fixture("michigan_characteristics.csv"),
        fixture("michigan_statewide.csv"),
    )
}

struct Run {
    dir: TempDir,
}

impl Run {
    fn new(config: &str) -> Run {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("run.toml"), config).unwrap();
        Run { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn exec(&self, command: &str, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_synthpanel"))
            .arg(command)
            .arg("--config")
            .arg(self.path("run.toml"))
            .args(args)
            .output()
            .unwrap()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.path("out").join(name)
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.out(name)).unwrap()).unwrap()
    }

    fn csv(&self, name: &str) -> Vec<Vec<String>> {
        fs::read_to_string(self.out(name))
            .unwrap()
            .lines()
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect()
    }
}

fn assert_exit(out: &Output, code: i32, error: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let record: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(record["error"], error);
    assert!(record["message"].as_str().is_some_and(|m| !m.is_empty()));
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn estimate_writes_four_artifacts() {
    let run = Run::new(&flint_config(""));
    assert_ok(&run.exec("estimate", &[]));
    for name in [
        "estimate.json",
        "weights_unit.csv",
        "weights_time.csv",
        "inference.json",
    ] {
        assert!(run.out(name).exists(), "{name}");
    }
    let est = run.json("estimate.json");
    assert_eq!(est["donors"].as_array().unwrap().len(), 21);
    assert_eq!(est["estimate"]["method"], "sdid");
    assert!(est["estimate"]["tau_hat"].as_f64().unwrap() < 0.0);
    let units = run.csv("weights_unit.csv");
    assert_eq!(units.len(), 22);
    let total: f64 = units[1..]
        .iter()
        .map(|r| r[1].parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert_eq!(run.csv("weights_time.csv").len(), 4);
    let inf = run.json("inference.json");
    let i = &inf["inference"];
    assert!(i["ci_low"].as_f64().unwrap() <= i["ci_high"].as_f64().unwrap());
    assert_eq!(i["n_placebos"], 21);
}

#[test]
fn reruns_are_byte_identical() {
    let run = Run::new(&flint_config("[figures]\nsvg = true\n"));
    let mut first = Vec::new();
    for cmd in ["estimate", "placebo", "figures"] {
        assert_ok(&run.exec(cmd, &[]));
    }
    let mut names: Vec<String> = fs::read_dir(run.path("out"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for n in &names {
        first.push(fs::read(run.out(n)).unwrap());
    }
    for cmd in ["estimate", "placebo", "figures"] {
        assert_ok(&run.exec(cmd, &[]));
    }
    for (n, bytes) in names.iter().zip(&first) {
        assert_eq!(&fs::read(run.out(n)).unwrap(), bytes, "{n} changed");
    }
    assert!(names.contains(&"trend.svg".to_string()));
}

#[test]
fn method_flag_overrides_config() {
    let run = Run::new(&flint_config("[estimation]\nmethod = \"sdid\"\n"));
    assert_ok(&run.exec("estimate", &["--method", "did"]));
    assert_eq!(run.json("estimate.json")["estimate"]["method"], "did");
    let units = run.csv("weights_unit.csv");
    assert!(units[1..]
        .iter()
        .all(|r| (r[1].parse::<f64>().unwrap() - 1.0 / 21.0).abs() < 1e-15));
    let times = run.csv("weights_time.csv");
    assert_eq!(times.len(), 4);

    assert_ok(&run.exec(
        "estimate",
        &["--method", "scm", "--inference", "permutation"],
    ));
    assert_eq!(run.json("estimate.json")["estimate"]["method"], "scm");
    assert_eq!(
        run.csv("weights_time.csv"),
        vec![vec!["period".to_string(), "weight".to_string()]]
    );
    assert_eq!(
        run.json("inference.json")["inference"]["mode"],
        "permutation"
    );
}

#[test]
fn out_flag_is_relative_to_working_directory() {
    let run = Run::new(&flint_config(""));
    let target = run.path("elsewhere");
    assert_ok(&run.exec("estimate", &["--out", target.to_str().unwrap()]));
    assert!(target.join("estimate.json").exists());
    assert!(!run.out("estimate.json").exists());
}

#[test]
fn placebo_has_one_row_per_donor() {
    let run = Run::new(&flint_config(""));
    assert_ok(&run.exec("placebo", &[]));
    let rows = run.csv("placebo_distribution.csv");
    assert_eq!(rows.len(), 22);
    assert_eq!(rows[1][0], "Albion");
    let table = run.csv("rmspe_table.csv");
    assert_eq!(table.len(), 2);
    assert_eq!(table[0][0], "specification");
    assert!(run.out("inference.json").exists());
}

#[test]
fn one_donor_placebo_is_a_config_error() {
    let config = flint_config("").replace(DONORS, "[donors]\nunits = [\"Albion\"]\n");
    let run = Run::new(&config);
    assert_exit(&run.exec("placebo", &[]), 2, "InsufficientDonors");
}

#[test]
fn unknown_treated_unit_is_a_data_error() {
    let run = Run::new(
        &flint_config("").replace("treated_unit = \"Flint\"", "treated_unit = \"Gotham\""),
    );
    assert_exit(&run.exec("estimate", &[]), 3, "UnknownUnit");
}

#[test]
fn missing_config_is_a_config_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_synthpanel"))
        .args(["estimate", "--config", "/nonexistent/run.toml"])
        .output()
        .unwrap();
    assert_exit(&out, 2, "ConfigError");
    let run = Run::new("[data]\npanel = 3\n");
    assert_exit(&run.exec("estimate", &[]), 2, "ConfigError");
}

#[test]
fn missing_panel_file_is_a_data_error() {
    let run =
        Run::new(&flint_config("").replace(&fixture("flint_panel.csv"), "/nonexistent/panel.csv"));
    assert_exit(&run.exec("estimate", &[]), 3, "IoError");
}

#[test]
fn trend_series_carries_treated_rates_and_marker() {
    let run = Run::new(&flint_config(""));
    assert_ok(&run.exec("figures", &[]));
    let rows = run.csv("trend.csv");
    assert_eq!(rows[0], ["series", "period", "value", "treatment_start"]);
    let flint: Vec<(String, String)> = rows[1..]
        .iter()
        .filter(|r| r[0] == "Flint")
        .map(|r| (r[1].clone(), format!("{:.1}", r[2].parse::<f64>().unwrap())))
        .collect();
    let expected = [
        ("2021", "22.7"),
        ("2022", "21.7"),
        ("2023", "20.8"),
        ("2024", "15.5"),
    ];
    assert_eq!(flint, expected.map(|(a, b)| (a.to_string(), b.to_string())));
    assert!(rows[1..].iter().all(|r| r[3] == "2024"));
    let series: std::collections::BTreeSet<&str> =
        rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(series, ["Flint", "Michigan", "donor_average"].into());
    assert_eq!(
        run.csv("sdid_fit.csv")[0],
        [
            "period",
            "treated",
            "synthetic",
            "synthetic_adjusted",
            "time_weight"
        ]
    );
    assert_eq!(run.csv("balance.csv").len(), 1 + 21 * 3);
    assert!(!run.out("trend.svg").exists());
}

#[test]
fn twin_fit_tracks_treated_pre_period() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("twin.csv");
    fs::write(
        &panel,
        "unit,period,outcome\n\
         t,1,3\nt,2,5\nt,3,4\nt,4,9\n\
         twin,1,3\ntwin,2,5\ntwin,3,4\ntwin,4,4.5\n\
         other,1,1\nother,2,7\nother,3,2\nother,4,3\n\
         third,1,6\nthird,2,6\nthird,3,1\nthird,4,2\n",
    )
    .unwrap();
    let config = format!(
        "[data]\npanel = \"{}\"\n[outcome]\ncolumn = \"outcome\"\nkind = \"real\"\n\
         [assignment]\ntreated_unit = \"t\"\ntreatment_start = 4\n[estimation]\nzeta_override = 0.0\n",
        panel.display()
    );
    let run = Run::new(&config);
    assert_ok(&run.exec("figures", &[]));
    let rows = run.csv("sdid_fit.csv");
    for r in &rows[1..4] {
        let treated: f64 = r[1].parse().unwrap();
        let synthetic: f64 = r[2].parse().unwrap();
        assert!((treated - synthetic).abs() < 1e-9, "{r:?}");
    }
    assert_eq!(rows[4][4], "");
}

fn sensitivity_config(section: &str) -> String {
    flint_config(&format!(
        "[donor_pools.listed]\nunits = [\"Albion\", \"Jackson\", \"Lansing\", \"Pontiac\", \"Saginaw\"]\n{section}"
    ))
}

#[test]
fn two_cell_grid_writes_two_rows() {
    let run = Run::new(&sensitivity_config(
        "[sensitivity]\ndonor_pools = [\"default\", \"listed\"]\n",
    ));
    assert_ok(&run.exec("sensitivity", &[]));
    let rows = run.csv("grid.csv");
    assert_eq!(rows.len(), 3);
    let n_donors: Vec<&str> = rows[1..].iter().map(|r| r[6].as_str()).collect();
    assert_eq!(n_donors, ["21", "5"]);
    let report = run.json("grid.json");
    assert!(report["failures"].as_array().unwrap().is_empty());
}

#[test]
fn grid_axes_and_composition() {
    let run = Run::new(&sensitivity_config(
        "[outcomes.births]\ncolumn = \"births\"\nkind = \"count\"\n\
         [sensitivity]\npre_period_starts = [2019, 2021]\ncomposition = [\"births\"]\n",
    ));
    assert_ok(&run.exec("sensitivity", &[]));
    let rows = run.csv("grid.csv");
    let starts: Vec<&str> = rows[1..].iter().map(|r| r[2].as_str()).collect();
    assert_eq!(starts, ["2019", "2021"]);
    let comp = run.csv("composition.csv");
    assert_eq!(comp.len(), 2);
    assert_eq!(comp[1][0], "births");
}

#[test]
fn unknown_pool_is_a_config_error() {
    let run = Run::new(&sensitivity_config(
        "[sensitivity]\ndonor_pools = [\"default\", \"ghost\"]\n",
    ));
    assert_exit(&run.exec("sensitivity", &[]), 2, "ConfigError");
}

fn null_panel_config(dir: &Path) -> String {
    let spec = FactorModelSpec {
        seed: 7,
        ..Default::default()
    };
    let panel = generate_replication(&spec, 0).unwrap();
    let path = dir.join("null.csv");
    write_panel(&panel, fs::File::create(&path).unwrap()).unwrap();
    format!(
        "[data]\npanel = \"{}\"\n[outcome]\ncolumn = \"outcome\"\nkind = \"real\"\n\
         [assignment]\ntreated_unit = \"u000\"\ntreatment_start = {}\n",
        path.display(),
        spec.treatment_start()
    )
}

#[test]
fn null_panel_is_not_significant() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::new(&null_panel_config(dir.path()));
    assert_ok(&run.exec("placebo", &[]));
    let p = run.json("inference.json")["inference"]["p_gaussian"]
        .as_f64()
        .unwrap();
    assert!(p > 0.05, "{p}");
}

#[test]
fn simulate_reports_coverage() {
    let run = Run::new(
        "[simulate]\nn_reps = 500\n[simulate.spec]\nn_donors = 20\nn_pre = 3\nn_post = 1\nnoise_sd = 0.5\ntrue_tau = -5.0\n",
    );
    assert_ok(&run.exec("simulate", &["--seed", "2024"]));
    let sim = run.json("simulation.json");
    assert_eq!(sim["spec"]["seed"], 2024);
    let coverage = sim["summary"]["coverage_95"].as_f64().unwrap();
    assert!(coverage >= 0.90, "{coverage}");
    let rows = run.csv("simulation.csv");
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][1], "500");
}

#[test]
fn validate_reports_corrupt_rates() {
    let dir = tempfile::tempdir().unwrap();
    let panel = dir.path().join("bad.csv");
    fs::write(&panel, "unit,period,rate\na,1,10\na,2,120\nb,1,5\nb,2,6\n").unwrap();
    let config = format!(
        "[data]\npanel = \"{}\"\n[outcome]\ncolumn = \"rate\"\nkind = \"rate\"\n\
         [assignment]\ntreated_unit = \"a\"\ntreatment_start = 2\n",
        panel.display()
    );
    let run = Run::new(&config);
    assert_exit(&run.exec("validate", &[]), 3, "InvalidPanel");
    let report = run.json("validation.json");
    assert_eq!(report["valid"], false);
    assert_eq!(report["report"]["errors"][0]["code"], "RateOutOfRange");

    assert_exit(&run.exec("estimate", &[]), 3, "InvalidPanel");
}

#[test]
fn validate_passes_on_fixture() {
    let run = Run::new(&flint_config(""));
    assert_ok(&run.exec("validate", &[]));
    let report = run.json("validation.json");
    assert_eq!(report["valid"], true);
    assert_eq!(report["n_units"], 22);
    assert_eq!(report["n_periods"], 4);
}
