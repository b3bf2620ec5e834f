use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use num_complex::Complex64;
use scma_pn::schema::{codebook_from_json, codebook_to_json, CodebookMetadata};
use scma_pn::{CodebookSet, FactorGraph};
use serde_json::Value;

fn pncb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pncb"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

const SMALL_DESIGN: &str = r#"
name = "small"
[problem]
m = 4
t = 2
[optimizer]
max_evaluations = 30
rng_seed = 5
sigma_p2 = 0.03
eb_n0_db = 10.0
polish_restarts = 2
strategy = { kind = "differential-evolution", population = 6, f = 0.6, cr = 0.9, polish_share = 0.3 }
"#;

fn designed_codebook(dir: &Path) -> PathBuf {
    let cfg = write(dir, "small.toml", SMALL_DESIGN);
    let out = dir.join("design");
    let o = pncb(&["design", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out.join("codebook.json")
}

#[test]
fn budget_of_one_writes_the_initial_design() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "one.toml",
        "[problem]\nm = 4\nt = 2\n[optimizer]\nmax_evaluations = 1\npolish_restarts = 0\n",
    );
    let out = dir.path().join("out");
    let o = pncb(&["design", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let design = read_json(&out.join("design.json"));
    assert_eq!(design["evaluations"], 1);
    assert_eq!(design["design"]["theta"], serde_json::json!([0.0, 0.0, 0.0]));
    assert_eq!(design["design"]["energy"], serde_json::json!([2.0, 2.0, 2.0]));
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["subcommand"], "design");
    let outputs: Vec<&str> = manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    for f in ["codebook.json", "design.json", "trace.csv", "metrics.json"] {
        assert!(outputs.contains(&f), "{outputs:?}");
    }
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
}

#[test]
fn rerun_reproduces_the_design_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL_DESIGN);
    let digest = |out: &Path| {
        let o = pncb(&["design", "--config", s(&cfg), "--out", s(out), "--workers", "2"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let m = read_json(&out.join("manifest.json"));
        m["outputs"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|f| f["path"] != "metrics.json")
            .map(|f| (f["path"].to_string(), f["sha256"].to_string()))
            .collect::<Vec<_>>()
    };
    let a = digest(&dir.path().join("a"));
    let b = digest(&dir.path().join("b"));
    assert_eq!(a, b);
    let o = pncb(&["design", "--config", s(&cfg), "--out", s(&dir.path().join("c")), "--seed", "6"]);
    assert!(o.status.success());
    assert_ne!(
        std::fs::read(dir.path().join("a/design.json")).unwrap(),
        std::fs::read(dir.path().join("c/design.json")).unwrap()
    );
}

#[test]
fn bad_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[problem]\nm = 4\nt = 2\n[optimizer]\nmax_evals = 3\n");
    let o = pncb(&["design", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_evals"));
    let cfg = write(dir.path(), "bad2.toml", "[problem]\nm = 4\nt = 5\n");
    let o = pncb(&["design", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("T=5"));
    let o = pncb(&["design"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn schema_violations_exit_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let good = designed_codebook(dir.path());
    let mut doc = read_json(&good);
    doc["codebooks"][2][0][1] = serde_json::json!("x");
    let bad = write(dir.path(), "bad.json", &doc.to_string());
    let o = pncb(&["validate", s(&good), s(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("ok (K=4, J=6, M=4)"), "{stdout}");
    assert!(stdout.contains("/codebooks/2/0/1"), "{stdout}");
    let o = pncb(&["metrics", s(&bad), "--point", "0.01@10"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(pncb(&["validate", s(&good)]).status.success());
}

#[test]
fn metrics_are_reproducible_and_collapse_without_phase_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cb = designed_codebook(dir.path());
    let args = ["metrics", s(&cb), "--point", "0@10", "--point", "0.03@10"];
    let a = pncb(&args);
    let b = pncb(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut rows = text.lines();
    let header: Vec<&str> = rows.next().unwrap().split(',').collect();
    let col = |n: &str| header.iter().position(|h| *h == n).unwrap();
    let first: Vec<f64> = rows
        .next()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|x| x.parse().unwrap_or(f64::NAN))
        .collect();
    let get = |n: &str| first[col(n) - 1];
    let expect = get("med") / (2.0 * get("n0")).sqrt();
    assert!((get("mpnm") - expect).abs() <= 1e-9 * expect);

    let out = dir.path().join("m");
    let o = pncb(&["metrics", s(&cb), "--point", "0.01@12", "--out", s(&out)]);
    assert!(o.status.success());
    assert!(out.join("manifest.json").exists());
    assert_eq!(read_json(&out.join("metrics.json"))[0]["codebook"], "small");
}

const SWEEP: &str = r#"
detectors = [{ kind = "mpa", variant = "pn-aware" }]
sigma_p2 = [0.0, 0.001, 0.01]
eb_n0_db = { start = 4, stop = 16, step = 2 }
min_errors = 20
max_bits = 2400
seed = 9
"#;

#[test]
fn simulate_sweep_row_contract_and_shared_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cb = designed_codebook(dir.path());
    let (cbs, _) = codebook_from_json(&std::fs::read_to_string(&cb).unwrap()).unwrap();
    let other = write(
        dir.path(),
        "rotated.json",
        &codebook_to_json(
            &cbs.rotated(0.3),
            Some(&CodebookMetadata {
                name: Some("rotated".into()),
                ..Default::default()
            }),
        ),
    );
    let sweep = write(dir.path(), "sweep.toml", SWEEP);
    let out = dir.path().join("sim");
    let o = pncb(&["simulate", s(&cb), s(&other), "--config", s(&sweep), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(out.join("results.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let seed_col = headers.iter().position(|h| h == "rng_seed").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.iter().filter(|r| &r[0] == "small").count(), 21);
    assert_eq!(rows.iter().filter(|r| &r[0] == "rotated").count(), 21);
    assert!(rows.iter().all(|r| &r[seed_col] == "9"));
    let plots = std::fs::read_dir(out.join("plot")).unwrap().count();
    assert_eq!(plots, 6);

    let plot_out = dir.path().join("plots");
    let o = pncb(&["export-plotdata", s(&out.join("results.csv")), "--out", s(&plot_out)]);
    assert!(o.status.success());
    let curve = std::fs::read_to_string(plot_out.join("small__mpa8-pn-aware__sp0.01.csv")).unwrap();
    assert_eq!(curve.lines().count(), 8);
    assert!(curve.lines().nth(1).unwrap().starts_with("4,"));
}

#[test]
fn oversized_ml_detection_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let g = FactorGraph::preset_4x6();
    let m = 16;
    let cbs: Vec<Vec<Vec<Complex64>>> = (0..6)
        .map(|j| {
            (0..4)
                .map(|k| {
                    (0..m)
                        .map(|l| {
                            if g.is_edge(k, j) {
                                Complex64::from_polar(1.0 + l as f64 / 8.0, (j * m + l) as f64)
                            } else {
                                Complex64::new(0.0, 0.0)
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let set = CodebookSet::new(g, cbs).unwrap();
    let cb = write(dir.path(), "m16.json", &codebook_to_json(&set, None));
    let sweep = write(
        dir.path(),
        "ml.toml",
        "detectors = [{ kind = \"ml\", metric = \"euclidean\" }]\nsigma_p2 = [0.0]\neb_n0_db = [10.0]\nmax_bits = 100\n",
    );
    let o = pncb(&["simulate", s(&cb), "--config", s(&sweep), "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MPA"));
}

#[test]
fn bundled_pncb1_meets_its_target() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/pncb1.toml");
    let out = dir.path().join("pncb1");
    let o = pncb(&["design", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = read_json(&out.join("metrics.json"));
    let at10 = &metrics["evaluations"][0];
    assert_eq!(at10["operating_point"]["sigma_p2"], 0.03);
    assert_eq!(at10["operating_point"]["eb_n0_db"], 10.0);
    let q = at10["mpnm"].as_f64().unwrap();
    assert!(q >= 1.7, "MPNM {q}");
}
