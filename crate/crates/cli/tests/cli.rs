use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use stormsim::catalog::{load_catalog, pooled_pacf, write_catalog};
use stormsim::risk::{exceedance_prob, Region};
use stormsim::synthetic::{toy_catalog, ToyConfig};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stormsim"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Fixture {
    _dir: TempDir,
    root: PathBuf,
    catalog: PathBuf,
    bundle: PathBuf,
}

/// Toy catalog on disk plus a bundle fitted by the binary.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let root = dir.path().to_path_buf();
        let catalog = root.join("toy.csv");
        let cat = toy_catalog(&ToyConfig {
            storms: 300,
            ..ToyConfig::default()
        })
        .unwrap();
        write_catalog(fs::File::create(&catalog).unwrap(), &cat, &[]).unwrap();
        let out = root.join("fit");
        let o = run(&["fit", "--catalog", s(&catalog), "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        Fixture {
            bundle: out.join("bundle.json"),
            _dir: dir,
            root,
            catalog,
        }
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

#[test]
fn fit_missing_catalog_is_validation_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.csv");
    let o = run(&["fit", "--catalog", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nope.csv"));
}

#[test]
fn bad_config_is_validation_error() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"engine": {"order": "three"}}"#).unwrap();
    let o = run(&["--config", s(&cfg), "fit", "--catalog", s(&fixture().catalog)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn fit_report_and_determinism() {
    let f = fixture();
    let report = fs::read_to_string(f.bundle.with_file_name("fit_report.txt")).unwrap();
    assert!(report.contains("markov order k: 3"));
    assert!(report.contains("u = 1.5"));
    assert!(report.lines().any(|l| l.starts_with("# config: {")));

    let out = f.root.join("refit");
    let o = run(&["fit", "--catalog", s(&f.catalog), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&f.bundle).unwrap(), fs::read(out.join("bundle.json")).unwrap());
}

#[test]
fn flags_override_config() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"simulation": {"storms": 7, "workers": 2}}"#).unwrap();
    let out = dir.path().join("sim");
    let o = run(&[
        "--config",
        s(&cfg),
        "simulate",
        "--bundle",
        s(&f.bundle),
        "--seed",
        "5",
        "--storms",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (cat, _) = load_catalog(&out.join("synthetic.csv"), None).unwrap();
    assert_eq!(cat.storms.len(), 4);
    let text = fs::read_to_string(out.join("synthetic.csv")).unwrap();
    assert!(text.contains(r#""workers":2"#));
}

#[test]
fn simulate_requires_seed() {
    let o = run(&["simulate", "--bundle", s(&fixture().bundle)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn simulate_reproducible_across_workers() {
    let f = fixture();
    let mut outputs = Vec::new();
    for (tag, workers) in [("a", "1"), ("b", "3"), ("c", "1")] {
        let out = f.root.join(format!("sim-{tag}"));
        let o = run(&[
            "simulate", "--bundle", s(&f.bundle), "--seed", "11", "-n", "40", "--workers", workers, "--out", s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let summary = String::from_utf8_lossy(&o.stdout).into_owned();
        assert!(summary.contains("simulated 40 storms"), "{summary}");
        assert!(summary.contains("hazard"));
        outputs.push(data_lines(&out.join("synthetic.csv")));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    assert!(outputs[0][0].ends_with("seed,sampler_tag,termination_cause"));
}

#[test]
fn simulate_rejects_schema_mismatch() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let text = fs::read_to_string(&f.bundle).unwrap();
    let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":99", 1);
    assert_ne!(bumped, text);
    let bad = dir.path().join("bundle.json");
    fs::write(&bad, bumped).unwrap();
    let o = run(&["simulate", "--bundle", s(&bad), "--seed", "1", "--out", s(dir.path())]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("schema"));
}

#[test]
fn risk_tables_match_library_and_flag_empty_regions() {
    let f = fixture();
    let out = f.root.join("risk");
    let args = [
        "risk",
        "--catalog",
        s(&f.catalog),
        "--region",
        "-40,-20,45,55",
        "--region",
        "100,110,-10,-5",
        "--omegas",
        "4,6",
        "--return-periods",
        "1,5",
        "--replicates",
        "200",
        "--seed",
        "3",
        "--out",
        s(&out),
    ];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = data_lines(&out.join("exceedance.csv"));
    assert_eq!(rows.len(), 1 + 2 * 2 * 2);

    let (cat, _) = load_catalog(&f.catalog, None).unwrap();
    let region = Region::new(-40.0, -20.0, 45.0, 55.0).unwrap();
    let expected = exceedance_prob(&cat, &region, 4.0).unwrap();
    let first: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(first[5], "exceedance");
    assert_eq!(first[7].parse::<f64>().unwrap(), expected.estimate);
    assert_eq!(first[10].parse::<usize>().unwrap(), expected.numerator);
    assert_eq!(first[11].parse::<usize>().unwrap(), expected.denominator);

    let empty: Vec<&String> = rows.iter().filter(|r| r.starts_with("1,")).collect();
    assert!(!empty.is_empty());
    assert!(empty.iter().all(|r| r.contains(",NA,") && r.ends_with("undefined-region")));
    let levels = data_lines(&out.join("return_level.csv"));
    assert_eq!(levels.len(), 1 + 2 * 2);
    assert!(data_lines(&out.join("return_level_map.csv")).len() > 1);

    let again = f.root.join("risk-again");
    let mut args2 = args.to_vec();
    let n = args2.len();
    args2[n - 1] = s(&again);
    assert_eq!(code(&run(&args2)), 0);
    for name in ["exceedance.csv", "return_period.csv", "return_level.csv", "return_level_map.csv"] {
        assert_eq!(data_lines(&out.join(name)), data_lines(&again.join(name)), "{name}");
    }
}

#[test]
fn diagnose_tables() {
    let f = fixture();
    let out = f.root.join("diag");
    let o = run(&[
        "diagnose",
        "--catalog",
        s(&f.catalog),
        "--synthetic",
        s(&f.catalog),
        "--bundle",
        s(&f.bundle),
        "--max-lag",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let qq = data_lines(&out.join("qq.csv"));
    assert_eq!(qq.len(), 1 + 4 * 99);
    assert!(qq[1..].iter().all(|r| r.ends_with(",true")));

    let density = data_lines(&out.join("density.csv"));
    for subset in ["all", "genesis", "lysis"] {
        let total: f64 = density[1..]
            .iter()
            .map(|r| r.split(',').collect::<Vec<_>>())
            .filter(|c| c[0] == "observed" && c[1] == subset)
            .map(|c| c[8].parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "{subset}: {total}");
    }

    let (cat, _) = load_catalog(&f.catalog, None).unwrap();
    let speeds: Vec<&[f64]> = cat.storms.iter().map(|s| s.speed()).collect();
    let expected = pooled_pacf(&speeds, 4).unwrap();
    let got: Vec<f64> = data_lines(&out.join("pacf.csv"))[1..]
        .iter()
        .map(|r| r.split(',').collect::<Vec<_>>())
        .filter(|c| c[0] == "observed" && c[1] == "speed")
        .map(|c| c[3].parse().unwrap())
        .collect();
    assert_eq!(got, expected);

    let mrl = data_lines(&out.join("mrl.csv"));
    assert!(mrl.len() > 1);
    assert!(mrl[1].starts_with("residual,"));
}
