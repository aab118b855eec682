use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Format;

/// Output of one scenario. JSON objects are emitted with sorted keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub scenario: Value,
    pub paper_anchor: Option<String>,
    pub results: Value,
    pub timing: Value,
    pub version: String,
}

pub fn emit(r: &Report, format: Format) -> String {
    match format {
        Format::Json => {
            // `Value` maps are ordered, so converting first sorts every level.
            let v = serde_json::to_value(r).expect("report serializes");
            let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
            s.push('\n');
            s
        }
        Format::Markdown => markdown(r),
    }
}

const MAX_LISTED: usize = 12;

fn markdown(r: &Report) -> String {
    let mut out = format!("# opsys {}\n\n", r.command);
    out.push_str(&format!(
        "- paper_anchor: {}\n",
        r.paper_anchor.as_deref().unwrap_or("null")
    ));
    out.push_str(&format!("- version: {}\n", r.version));
    if let Some(ms) = r.timing.get("elapsed_ms").and_then(Value::as_f64) {
        out.push_str(&format!("- elapsed_ms: {ms:.1}\n"));
    }
    out.push_str("\n## Results\n\n| key | value |\n|---|---|\n");
    let mut rows = Vec::new();
    flatten("", &r.results, &mut rows);
    for (k, v) in rows {
        out.push_str(&format!("| {k} | {v} |\n"));
    }
    out
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("null".into()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f:.9}").trim_end_matches('0').trim_end_matches('.').to_string(),
            _ => n.to_string(),
        }),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

/// `{"re", "im"}` matrices render as one compact cell.
fn is_matrix(v: &Value) -> bool {
    matches!(v, Value::Object(m) if m.len() == 2 && m.contains_key("re") && m.contains_key("im"))
}

fn compact(v: &Value) -> Option<String> {
    if is_matrix(v) {
        return Some(serde_json::to_string(v).expect("value serializes"));
    }
    scalar(v)
}

fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    if is_matrix(v) {
        rows.push((prefix.to_string(), compact(v).unwrap_or_default()));
        return;
    }
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                flatten(&key(k), x, rows);
            }
        }
        Value::Array(a) => {
            if let Some(items) = a.iter().map(compact).collect::<Option<Vec<_>>>() {
                rows.push((prefix.to_string(), format!("[{}]", items.join(", "))));
            } else if a.len() > MAX_LISTED {
                rows.push((prefix.to_string(), format!("{} entries (see json)", a.len())));
            } else {
                for (i, x) in a.iter().enumerate() {
                    flatten(&format!("{prefix}[{i}]"), x, rows);
                }
            }
        }
        other => rows.push((prefix.to_string(), scalar(other).unwrap_or_default())),
    }
}
