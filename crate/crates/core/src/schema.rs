//! Versioned JSON interchange for codebook sets, plus CSV rows for metric and
//! simulation tables.
//!
//! Codebook documents look like
//!
//! ```json
//! { "schema": "scma-codebook/1", "K": 4, "J": 6, "M": 4, "N": 2,
//!   "factor_graph": [[0,1,1,0,1,0], ...],
//!   "codebooks": [[[[re, im], ...M], ...K], ...J],
//!   "metadata": { "name": "...", "source": "...", "power_budget": 12.0 } }
//! ```
//!
//! Floats are written in shortest round-trip form, so export followed by
//! import reproduces every entry bit for bit.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::codebook::CodebookSet;
use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::pnmetrics::{Enumeration, MetricReport};
use crate::sim::SimResult;

pub const CODEBOOK_SCHEMA: &str = "scma-codebook/1";

/// One schema problem, located by a JSON pointer into the document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaViolation {
    pub pointer: String,
    pub message: String,
}

impl std::fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let at = if self.pointer.is_empty() { "(root)" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

/// Optional descriptive block of a codebook document. Unknown keys are kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CodebookMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_budget: Option<f64>,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

struct Checker {
    found: Vec<SchemaViolation>,
}

impl Checker {
    fn fail(&mut self, pointer: impl Into<String>, message: impl Into<String>) {
        self.found.push(SchemaViolation {
            pointer: pointer.into(),
            message: message.into(),
        });
    }

    fn count(&mut self, doc: &Map<String, Value>, key: &str) -> Option<usize> {
        match doc.get(key) {
            None => {
                self.fail(format!("/{key}"), "required field is missing");
                None
            }
            Some(v) => match v.as_u64() {
                Some(n) if n >= 1 => Some(n as usize),
                _ => {
                    self.fail(format!("/{key}"), format!("expected a positive integer, found {v}"));
                    None
                }
            },
        }
    }

    fn array<'a>(&mut self, v: &'a Value, pointer: &str, len: Option<usize>) -> Option<&'a Vec<Value>> {
        match v.as_array() {
            None => {
                self.fail(pointer, format!("expected an array, found {}", kind(v)));
                None
            }
            Some(a) => {
                if let Some(n) = len {
                    if a.len() != n {
                        self.fail(pointer, format!("expected {n} entries, found {}", a.len()));
                        return None;
                    }
                }
                Some(a)
            }
        }
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Checks a parsed document against the codebook schema, including the
/// factor-graph support of every codebook. An empty result means
/// [`codebook_from_value`] will succeed.
pub fn validate_codebook(doc: &Value) -> Vec<SchemaViolation> {
    let mut c = Checker { found: Vec::new() };
    let Some(obj) = doc.as_object() else {
        c.fail("", format!("expected an object, found {}", kind(doc)));
        return c.found;
    };
    match obj.get("schema") {
        Some(Value::String(s)) if s == CODEBOOK_SCHEMA => {}
        Some(v) => c.fail("/schema", format!("expected \"{CODEBOOK_SCHEMA}\", found {v}")),
        None => c.fail("/schema", "required field is missing"),
    }
    let k = c.count(obj, "K");
    let j = c.count(obj, "J");
    let m = c.count(obj, "M");
    let n = c.count(obj, "N");
    if let Some(m) = m {
        if m < 2 || !m.is_power_of_two() {
            c.fail("/M", format!("M={m} must be a power of two >= 2"));
        }
    }
    let mut graph = None;
    match obj.get("factor_graph") {
        None => c.fail("/factor_graph", "required field is missing"),
        Some(fg) => {
            if let Some(rows) = c.array(fg, "/factor_graph", k) {
                let mut parsed = Vec::new();
                for (r, row) in rows.iter().enumerate() {
                    let p = format!("/factor_graph/{r}");
                    let Some(cells) = c.array(row, &p, j) else { continue };
                    let mut out = Vec::new();
                    for (col, v) in cells.iter().enumerate() {
                        match v.as_u64() {
                            Some(b @ (0 | 1)) => out.push(b as u8),
                            _ => c.fail(format!("{p}/{col}"), format!("expected 0 or 1, found {v}")),
                        }
                    }
                    parsed.push(out);
                }
                if c.found.is_empty() {
                    match FactorGraph::from_incidence(&parsed) {
                        Ok(g) => {
                            if let Some(n) = n {
                                if g.user_degree() != n {
                                    c.fail("/N", format!("N={n} but users occupy {} resources", g.user_degree()));
                                }
                            }
                            graph = Some(g);
                        }
                        Err(e) => c.fail("/factor_graph", e.to_string()),
                    }
                }
            }
        }
    }
    match obj.get("codebooks") {
        None => c.fail("/codebooks", "required field is missing"),
        Some(cbs) => {
            if let Some(users) = c.array(cbs, "/codebooks", j) {
                for (u, cb) in users.iter().enumerate() {
                    let pu = format!("/codebooks/{u}");
                    let Some(rows) = c.array(cb, &pu, k) else { continue };
                    for (r, row) in rows.iter().enumerate() {
                        let pr = format!("{pu}/{r}");
                        let Some(cols) = c.array(row, &pr, m) else { continue };
                        for (l, z) in cols.iter().enumerate() {
                            let pz = format!("{pr}/{l}");
                            let ok = z.as_array().filter(|p| p.len() == 2).and_then(|p| {
                                Some((p[0].as_f64()?, p[1].as_f64()?))
                            });
                            match ok {
                                None => c.fail(pz, format!("expected [re, im], found {z}")),
                                Some((re, im)) => {
                                    let off = graph.as_ref().is_some_and(|g| !g.is_edge(r, u));
                                    if off && (re != 0.0 || im != 0.0) {
                                        c.fail(pz, "nonzero entry on a resource the factor graph does not assign to this user");
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(md) = obj.get("metadata") {
        if let Err(e) = serde_json::from_value::<CodebookMetadata>(md.clone()) {
            c.fail("/metadata", e.to_string());
        }
    }
    c.found
}

fn schema_error(found: Vec<SchemaViolation>) -> Error {
    Error::Schema(
        found
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; "),
    )
}

/// Builds the codebook set described by a validated document.
pub fn codebook_from_value(doc: &Value) -> Result<(CodebookSet, Option<CodebookMetadata>)> {
    let found = validate_codebook(doc);
    if !found.is_empty() {
        return Err(schema_error(found));
    }
    let rows: Vec<Vec<u8>> = serde_json::from_value(doc["factor_graph"].clone())
        .map_err(|e| Error::Schema(format!("/factor_graph: {e}")))?;
    let raw: Vec<Vec<Vec<[f64; 2]>>> = serde_json::from_value(doc["codebooks"].clone())
        .map_err(|e| Error::Schema(format!("/codebooks: {e}")))?;
    let codebooks = raw
        .into_iter()
        .map(|cb| {
            cb.into_iter()
                .map(|row| row.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
                .collect()
        })
        .collect();
    let graph = FactorGraph::from_incidence(&rows)?;
    let cbs = CodebookSet::new(graph, codebooks).map_err(|e| Error::Schema(format!("/codebooks: {e}")))?;
    let metadata = match doc.get("metadata") {
        None => None,
        Some(md) => Some(
            serde_json::from_value(md.clone()).map_err(|e| Error::Schema(format!("/metadata: {e}")))?,
        ),
    };
    Ok((cbs, metadata))
}

/// Parses and validates a codebook document.
pub fn codebook_from_json(text: &str) -> Result<(CodebookSet, Option<CodebookMetadata>)> {
    let doc: Value = serde_json::from_str(text).map_err(|e| {
        Error::Schema(format!("(root): not valid JSON at line {} column {}: {e}", e.line(), e.column()))
    })?;
    codebook_from_value(&doc)
}

pub fn codebook_to_value(cbs: &CodebookSet, metadata: Option<&CodebookMetadata>) -> Value {
    let g = cbs.graph();
    let codebooks: Vec<Vec<Vec<[f64; 2]>>> = cbs
        .codebooks()
        .iter()
        .map(|cb| cb.iter().map(|row| row.iter().map(|z| [z.re, z.im]).collect()).collect())
        .collect();
    let mut doc = json!({
        "schema": CODEBOOK_SCHEMA,
        "K": g.resources(),
        "J": g.users(),
        "M": cbs.size(),
        "N": g.user_degree(),
        "factor_graph": g.incidence(),
        "codebooks": codebooks,
    });
    if let Some(md) = metadata {
        doc["metadata"] = serde_json::to_value(md).expect("metadata serializes");
    }
    doc
}

pub fn codebook_to_json(cbs: &CodebookSet, metadata: Option<&CodebookMetadata>) -> String {
    let mut s = serde_json::to_string_pretty(&codebook_to_value(cbs, metadata)).expect("codebook serializes");
    s.push('\n');
    s
}

fn mode_label(mode: &Enumeration) -> String {
    match mode {
        Enumeration::Exact { .. } => "exact".into(),
        Enumeration::Pruned { max_users, .. } => format!("pruned-{max_users}"),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const METRIC_CSV_HEADER: &str =
    "codebook,sigma_p2,eb_n0_db,n0,mode,mpnm,med,pep_bound,pairs_evaluated,pairs_total";

pub fn metric_csv_row(codebook: &str, r: &MetricReport) -> String {
    let p = &r.operating_point;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        csv_field(codebook),
        p.sigma_p2,
        opt(p.eb_n0_db),
        p.n0,
        mode_label(&r.enumeration.mode),
        r.mpnm,
        r.med,
        r.pep_bound,
        r.enumeration.pairs_evaluated,
        r.enumeration.pairs_total
    )
}

pub const SIM_CSV_HEADER: &str = "codebook,detector,sigma_p2,eb_n0_db,rng_seed,frames,bits,bit_errors,ber,ber_lo,ber_hi,symbol_errors,ser,ser_lo,ser_hi,censored";

pub fn sim_csv_row(codebook: &str, r: &SimResult) -> String {
    let (bl, bh) = r.ber_ci();
    let (sl, sh) = r.ser_ci();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        csv_field(codebook),
        r.detector,
        r.sigma_p2,
        opt(r.eb_n0_db),
        r.rng_seed,
        r.frames,
        r.bits_simulated,
        r.bit_errors,
        r.ber(),
        bl,
        bh,
        r.symbol_errors,
        r.ser(),
        sl,
        sh,
        r.censored
    )
}
