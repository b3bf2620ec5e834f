use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use scma_pn::optimize::{optimize, Problem};
use scma_pn::pnmetrics::{mpnm, MetricReport, PnChannelParams};
use scma_pn::schema::{
    codebook_from_json, codebook_to_json, metric_csv_row, sim_csv_row, CodebookMetadata,
    METRIC_CSV_HEADER, SIM_CSV_HEADER,
};
use scma_pn::sim::{run_ber, SimResult, StoppingRule};
use scma_pn::CodebookSet;

use crate::config::{self, DesignConfig, MetricsConfig, OperatingPoint, SimulateConfig};
use crate::manifest::OutputDir;
use crate::{CliError, Common};

fn require_config(common: &Common, what: &str) -> Result<PathBuf, CliError> {
    common
        .config
        .clone()
        .ok_or_else(|| CliError::Config(format!("{what} needs --config <file.toml>")))
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn read_codebook(path: &Path) -> Result<(String, CodebookSet), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let (cbs, md) = codebook_from_json(&text).map_err(|e| match e {
        scma_pn::Error::Schema(m) => CliError::Schema(format!("{}: {m}", path.display())),
        other => CliError::from(other),
    })?;
    let name = md
        .and_then(|m| m.name)
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    Ok((name, cbs))
}

fn operating_point(cbs: &CodebookSet, p: &OperatingPoint) -> Result<PnChannelParams, CliError> {
    PnChannelParams::for_codebooks(cbs, p.sigma_p2, p.eb_n0_db)
        .map_err(|e| CliError::Config(format!("operating point {p:?}: {e}")))
}

fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("evaluation,objective\n");
    for (i, v) in trace.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, v));
    }
    s
}

pub fn design(common: &Common) -> Result<(), CliError> {
    let path = require_config(common, "design")?;
    let mut cfg: DesignConfig = config::load(&path)?;
    if let Some(seed) = common.seed {
        cfg.optimizer.rng_seed = seed;
    }
    let (graph, slots) = cfg.problem.graph.build()?;
    let lp = cfg.problem.lppam()?;
    Problem::new(graph.clone(), slots.clone(), &lp, &cfg.optimizer)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out = OutputDir::create(&out_dir(common, "pncb-design"))?;
    let result = optimize(&cfg.optimizer, &graph, &slots, &lp)?;

    let name = cfg.name.clone().unwrap_or_else(|| "design".into());
    let mut extra = serde_json::Map::new();
    extra.insert("design".into(), to_value(&result.design));
    extra.insert(
        "mother_constellation".into(),
        json!({
            "m": lp.m,
            "t": lp.t,
            "rows": result.mother.rows(),
            "permutations": result.mother.permutations(),
        }),
    );
    let md = CodebookMetadata {
        name: Some(name.clone()),
        source: Some("pncb design".into()),
        power_budget: Some(result.codebooks.average_superimposed_energy()),
        extra,
    };
    out.write("codebook.json", codebook_to_json(&result.codebooks, Some(&md)).as_bytes())?;
    out.write_json(
        "design.json",
        &json!({
            "name": name,
            "design": result.design,
            "objective": result.objective,
            "evaluations": result.evaluations,
            "budget_exhausted": result.budget_exhausted,
            "mother_permutations": result.mother.permutations(),
        }),
    )?;
    out.write("trace.csv", trace_csv(&result.trace).as_bytes())?;
    let mut evaluations = Vec::new();
    for p in &cfg.evaluate {
        let op = operating_point(&result.codebooks, p)?;
        evaluations.push(mpnm(&result.codebooks, &op, scma_pn::Enumeration::auto(&result.codebooks))?);
    }
    out.write_json(
        "metrics.json",
        &json!({ "optimization_point": result.report, "evaluations": evaluations }),
    )?;
    println!(
        "{name}: MPNM {} (objective point), {} evaluations, written to {}",
        result.objective,
        result.evaluations,
        out.path().display()
    );
    for r in &evaluations {
        println!(
            "  sigma_p2 {} Eb/N0 {} dB: MPNM {} MED {}",
            r.operating_point.sigma_p2,
            r.operating_point.eb_n0_db.unwrap_or(f64::NAN),
            r.mpnm,
            r.med
        );
    }
    out.finish(
        "design",
        to_value(&cfg),
        json!({ "optimizer": cfg.optimizer.rng_seed, "permutations": cfg.optimizer.permutations.rng_seed }),
        common.workers,
        &[path],
    )
}

pub fn metrics(codebooks: &[PathBuf], points: &[OperatingPoint], common: &Common) -> Result<(), CliError> {
    let mut cfg = match &common.config {
        Some(p) => config::load::<MetricsConfig>(p)?,
        None => MetricsConfig::default(),
    };
    cfg.points.extend_from_slice(points);
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if cfg.points.is_empty() {
        return Err(CliError::Config(
            "no operating points; pass --point SIGMA_P2@EBN0_DB or list points in --config".into(),
        ));
    }
    let sets = codebooks.iter().map(|p| read_codebook(p)).collect::<Result<Vec<_>, _>>()?;
    let mut csv = format!("{METRIC_CSV_HEADER}\n");
    let mut reports: Vec<(String, MetricReport)> = Vec::new();
    for (name, cbs) in &sets {
        for p in &cfg.points {
            let op = operating_point(cbs, p)?;
            let r = mpnm(cbs, &op, cfg.mode(cbs))?;
            csv.push_str(&metric_csv_row(name, &r));
            csv.push('\n');
            reports.push((name.clone(), r));
        }
    }
    match &common.out {
        None => print!("{csv}"),
        Some(dir) => {
            let mut out = OutputDir::create(dir)?;
            out.write("metrics.csv", csv.as_bytes())?;
            let json: Vec<Value> = reports
                .iter()
                .map(|(n, r)| json!({ "codebook": n, "report": r }))
                .collect();
            out.write_json("metrics.json", &json)?;
            out.finish(
                "metrics",
                to_value(&cfg),
                json!({ "pruned_sampling": cfg.seed }),
                common.workers,
                codebooks,
            )?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SimRow<'a> {
    codebook: &'a str,
    #[serde(flatten)]
    result: &'a SimResult,
}

pub fn simulate(codebooks: &[PathBuf], common: &Common) -> Result<(), CliError> {
    let path = require_config(common, "simulate")?;
    let mut cfg: SimulateConfig = config::load(&path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if cfg.detectors.is_empty() || cfg.sigma_p2.is_empty() {
        return Err(CliError::Config("detectors and sigma_p2 must be non-empty".into()));
    }
    let ebn0 = cfg.eb_n0_db.values()?;
    let sets = codebooks.iter().map(|p| read_codebook(p)).collect::<Result<Vec<_>, _>>()?;
    let stop = StoppingRule {
        min_errors: cfg.min_errors,
        max_bits: cfg.max_bits,
    };
    let mut out = OutputDir::create(&out_dir(common, "pncb-simulate"))?;
    let mut csv = format!("{SIM_CSV_HEADER}\n");
    let mut results = Vec::new();
    for (name, cbs) in &sets {
        for det in &cfg.detectors {
            for &sp in &cfg.sigma_p2 {
                for &db in &ebn0 {
                    let op = operating_point(cbs, &OperatingPoint { sigma_p2: sp, eb_n0_db: db })?;
                    // every codebook sees the same seed, hence the same bits
                    // and channel draws
                    let r = run_ber(cbs, &op, det, &stop, cfg.seed, common.workers)?;
                    eprintln!(
                        "{name} {} sigma_p2={sp} Eb/N0={db} dB: BER {:.3e} ({} bits{})",
                        r.detector,
                        r.ber(),
                        r.bits_simulated,
                        if r.censored { ", censored" } else { "" }
                    );
                    csv.push_str(&sim_csv_row(name, &r));
                    csv.push('\n');
                    results.push((name.clone(), r));
                }
            }
        }
    }
    out.write("results.csv", csv.as_bytes())?;
    let rows: Vec<SimRow> = results
        .iter()
        .map(|(n, r)| SimRow { codebook: n, result: r })
        .collect();
    out.write_json("results.json", &rows)?;
    for (file, body) in plot_files(&csv)? {
        out.write(&format!("plot/{file}"), body.as_bytes())?;
    }
    let mut inputs = codebooks.to_vec();
    inputs.push(path);
    out.finish("simulate", to_value(&cfg), json!({ "channel": cfg.seed }), common.workers, &inputs)
}

pub fn validate(files: &[PathBuf]) -> Result<(), CliError> {
    let mut bad = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(f).map_err(|e| CliError::Io(format!("{}: {e}", f.display())))?;
        let doc: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => {
                println!("{}: (root): not valid JSON: {e}", f.display());
                bad.push(f.display().to_string());
                continue;
            }
        };
        let found = scma_pn::schema::validate_codebook(&doc);
        if found.is_empty() {
            println!(
                "{}: ok (K={}, J={}, M={})",
                f.display(),
                doc["K"],
                doc["J"],
                doc["M"]
            );
        } else {
            for v in &found {
                println!("{}: {v}", f.display());
            }
            bad.push(f.display().to_string());
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(CliError::Schema(format!("{} invalid file(s): {}", bad.len(), bad.join(", "))))
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// One CSV per `(codebook, detector, σ_p²)`, rows ordered by `Eb/N0`.
fn plot_files(results_csv: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut reader = csv::Reader::from_reader(results_csv.as_bytes());
    let headers = reader.headers().map_err(|e| CliError::Schema(format!("results CSV header: {e}")))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Schema(format!("results CSV lacks column `{name}`")))
    };
    let (c_cb, c_det, c_sp, c_db) = (col("codebook")?, col("detector")?, col("sigma_p2")?, col("eb_n0_db")?);
    let (c_ber, c_lo, c_hi, c_ser, c_cens) = (col("ber")?, col("ber_lo")?, col("ber_hi")?, col("ser")?, col("censored")?);
    let mut series: BTreeMap<(String, String, String), Vec<(f64, String)>> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Schema(format!("results CSV row {}: {e}", i + 2)))?;
        let db: f64 = rec[c_db]
            .parse()
            .map_err(|e| CliError::Schema(format!("results CSV row {} eb_n0_db: {e}", i + 2)))?;
        let line = format!("{},{},{},{},{},{}", &rec[c_db], &rec[c_ber], &rec[c_lo], &rec[c_hi], &rec[c_ser], &rec[c_cens]);
        series
            .entry((rec[c_cb].to_string(), rec[c_det].to_string(), rec[c_sp].to_string()))
            .or_default()
            .push((db, line));
    }
    Ok(series
        .into_iter()
        .map(|((cb, det, sp), mut rows)| {
            rows.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut body = String::from("eb_n0_db,ber,ber_lo,ber_hi,ser,censored\n");
            for (_, l) in rows {
                body.push_str(&l);
                body.push('\n');
            }
            (format!("{}__{}__sp{}.csv", slug(&cb), slug(&det), slug(&sp)), body)
        })
        .collect())
}

pub fn export_plotdata(results: &Path, common: &Common) -> Result<(), CliError> {
    let text = std::fs::read_to_string(results).map_err(|e| CliError::Io(format!("{}: {e}", results.display())))?;
    let files = plot_files(&text)?;
    let mut out = OutputDir::create(&out_dir(common, "pncb-plot"))?;
    for (file, body) in &files {
        out.write(file, body.as_bytes())?;
    }
    println!("{} curve file(s) written to {}", files.len(), out.path().display());
    out.finish("export-plotdata", Value::Null, Value::Null, None, &[results.to_path_buf()])
}
