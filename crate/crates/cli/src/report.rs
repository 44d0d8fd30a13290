//! Report envelopes and their two renderings.
//!
//! Every command produces a [`Report`]: the command name, the input path,
//! the effective [`RunConfig`], the exit code and either a command-specific
//! `result` object or an `error`. JSON mode prints it with 17-digit floats;
//! human mode walks the same value tree and prints `key: value` lines.

use nalgebra::DMatrix;
use quiver_bl::io::rows_of;
use quiver_bl::json::{format_f64, to_string_pretty, Real};
use quiver_bl::{Capacity, Error};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub command: &'static str,
    pub input: Option<String>,
    pub config: RunConfig,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
}

/// Exit code and kind for a library error.
pub fn classify_error(e: &Error) -> (i32, &'static str) {
    match e {
        Error::InvalidDatum(_) => (EXIT_INPUT, "InvalidDatum"),
        Error::InvalidInput(_) => (EXIT_INPUT, "InvalidInput"),
        Error::InvalidGroupElement { .. } => (EXIT_INPUT, "InvalidGroupElement"),
        Error::NotPositiveDefinite { .. } => (EXIT_INPUT, "NotPositiveDefinite"),
        Error::Asymmetric { .. } => (EXIT_INPUT, "Asymmetric"),
        Error::WrongShape(_) => (EXIT_INPUT, "WrongShape"),
        Error::NotGeometric { .. } => (EXIT_INPUT, "NotGeometric"),
        Error::NonInvariantFiltration { .. } => (EXIT_INPUT, "NonInvariantFiltration"),
        Error::InvalidFiltration(_) => (EXIT_INPUT, "InvalidFiltration"),
        Error::NotConverged { .. } => (EXIT_INCONCLUSIVE, "NotConverged"),
        Error::Inconclusive(_) => (EXIT_INCONCLUSIVE, "Inconclusive"),
        Error::BudgetExceeded { .. } => (EXIT_INCONCLUSIVE, "BudgetExceeded"),
        Error::SingularMatrix { .. } => (EXIT_NUMERIC, "SingularMatrix"),
        Error::NumericError { .. } => (EXIT_NUMERIC, "NumericError"),
        Error::NotAFixedPoint { .. } => (EXIT_NUMERIC, "NotAFixedPoint"),
        Error::GenerationFailed { .. } => (EXIT_NUMERIC, "GenerationFailed"),
    }
}

impl Report {
    pub fn success(
        command: &'static str,
        input: Option<String>,
        config: RunConfig,
        exit_code: i32,
        result: Value,
    ) -> Self {
        Report {
            command,
            input,
            config,
            exit_code,
            result: Some(result),
            error: None,
        }
    }

    pub fn failure(
        command: &'static str,
        input: Option<String>,
        config: RunConfig,
        e: &Error,
    ) -> Self {
        let (exit_code, kind) = classify_error(e);
        Report {
            command,
            input,
            config,
            exit_code,
            result: None,
            error: Some(ErrorReport {
                kind,
                message: e.to_string(),
            }),
        }
    }
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

pub fn json<T: Serialize + ?Sized>(v: &T) -> String {
    to_string_pretty(v).expect("report serializes")
}

/// `{value, log, bl_constant}` of a capacity.
#[derive(Debug, Serialize)]
pub struct CapacityOut {
    pub value: Real,
    pub log: Real,
    pub bl_constant: Real,
}

impl From<Capacity> for CapacityOut {
    fn from(c: Capacity) -> Self {
        CapacityOut {
            value: Real(c.value),
            log: Real(c.log),
            bl_constant: Real(c.bl_constant()),
        }
    }
}

pub fn matrices(ms: &[DMatrix<f64>]) -> Vec<Vec<Vec<f64>>> {
    ms.iter().map(rows_of).collect()
}

pub fn reals(xs: &[f64]) -> Vec<Real> {
    xs.iter().copied().map(Real).collect()
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("null".into()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(match (n.as_i64(), n.as_u64(), n.as_f64()) {
            (Some(i), _, _) => i.to_string(),
            (_, Some(u), _) => u.to_string(),
            (_, _, Some(f)) => format_f64(f),
            _ => n.to_string(),
        }),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

/// Arrays of scalars (and of arrays of scalars) fit on one line.
fn inline(v: &Value) -> Option<String> {
    if let Some(s) = scalar(v) {
        return Some(s);
    }
    match v {
        Value::Array(items) if items.iter().all(|x| !x.is_object()) => {
            let parts: Option<Vec<String>> = items.iter().map(inline).collect();
            parts.map(|p| format!("[{}]", p.join(", ")))
        }
        Value::Object(o) if o.is_empty() => Some("{}".into()),
        _ => None,
    }
}

fn render(out: &mut String, key: &str, v: &Value, depth: usize) {
    let pad = "  ".repeat(depth);
    if let Some(s) = inline(v) {
        out.push_str(&format!("{pad}{key}: {s}\n"));
        return;
    }
    out.push_str(&format!("{pad}{key}:\n"));
    match v {
        Value::Object(o) => {
            for (k, x) in o {
                render(out, k, x, depth + 1);
            }
        }
        Value::Array(items) => {
            for (i, x) in items.iter().enumerate() {
                render(out, &format!("[{i}]"), x, depth + 1);
            }
        }
        _ => unreachable!("scalars render inline"),
    }
}

/// Plain-text rendering: result fields, then the config. Errors go to stderr.
pub fn human(report: &Report) -> String {
    let mut out = String::new();
    let v = to_value(report);
    if let Some(Value::Object(result)) = v.get("result") {
        for (k, x) in result {
            render(&mut out, k, x, 0);
        }
    }
    if let Some(Value::Object(cfg)) = v.get("config") {
        let parts: Vec<String> = cfg
            .iter()
            .map(|(k, x)| format!("{k}={}", scalar(x).unwrap_or_default()))
            .collect();
        out.push_str(&format!("config: {}\n", parts.join(" ")));
    }
    out
}
