//! Canonical trace JSONL: one trace object per LF-terminated line.
//!
//! ```text
//! {"trace_id":"s1","label":"web","flow_scope":"primary","packets":[[0.0,1,120],[0.25,-1,1400]]}
//! ```
//!
//! An explicitly empty trace carries `"degenerate":true`; the key is omitted
//! otherwise.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::{Direction, FlowScope, Packet, Trace, TraceError};

#[derive(Serialize)]
struct TraceLine<'a> {
    trace_id: &'a str,
    label: Option<&'a str>,
    flow_scope: FlowScope,
    packets: Vec<(f64, i8, u32)>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    degenerate: bool,
}

pub fn write_traces_to<W: Write>(traces: &[Trace], mut w: W) -> Result<(), TraceError> {
    for trace in traces {
        let line = TraceLine {
            trace_id: trace.id(),
            label: trace.label(),
            flow_scope: trace.scope(),
            packets: trace.packets().iter().map(|p| (p.t, p.dir.sign(), p.size)).collect(),
            degenerate: trace.is_degenerate(),
        };
        serde_json::to_writer(&mut w, &line).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_traces(traces: &[Trace], path: impl AsRef<Path>) -> Result<(), TraceError> {
    write_traces_to(traces, BufWriter::new(File::create(path)?))
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<Trace>, TraceError> {
    read_traces_from(File::open(path)?)
}

pub fn read_traces_from<R: Read>(r: R) -> Result<Vec<Trace>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

fn schema(line: usize, field: impl Into<String>, message: impl Into<String>) -> TraceError {
    TraceError::Schema {
        line,
        field: field.into(),
        message: message.into(),
    }
}

fn parse_line(text: &str, line: usize) -> Result<Trace, TraceError> {
    let value: Value = serde_json::from_str(text).map_err(|e| schema(line, "", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema(line, "", "expected a JSON object"))?;

    let id = obj
        .get("trace_id")
        .and_then(Value::as_str)
        .ok_or_else(|| schema(line, "trace_id", "expected a string"))?;
    let label = match obj.get("label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema(line, "label", "expected a string or null")),
    };
    let scope = obj
        .get("flow_scope")
        .and_then(Value::as_str)
        .ok_or_else(|| schema(line, "flow_scope", "expected a string"))?
        .parse::<FlowScope>()
        .map_err(|e| schema(line, "flow_scope", e))?;
    let degenerate = match obj.get("degenerate") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(schema(line, "degenerate", "expected a boolean")),
    };
    let raw = obj
        .get("packets")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(line, "packets", "expected an array"))?;

    let mut packets = Vec::with_capacity(raw.len());
    for (k, entry) in raw.iter().enumerate() {
        let path = format!("packets[{k}]");
        let tuple = entry
            .as_array()
            .filter(|a| a.len() == 3)
            .ok_or_else(|| schema(line, &path, "expected [t, d, s]"))?;
        let t = tuple[0]
            .as_f64()
            .filter(|t| t.is_finite() && *t >= 0.0)
            .ok_or_else(|| schema(line, "t", format!("{path}: expected a non-negative number")))?;
        let dir = tuple[1]
            .as_i64()
            .and_then(Direction::from_sign)
            .ok_or_else(|| schema(line, "d", format!("{path}: expected -1 or 1")))?;
        let size = tuple[2]
            .as_u64()
            .filter(|s| *s >= 1)
            .and_then(|s| u32::try_from(s).ok())
            .ok_or_else(|| schema(line, "s", format!("{path}: expected a positive integer")))?;
        if let Some(prev) = packets.last().map(|p: &Packet| p.t) {
            if t < prev {
                return Err(TraceError::Order { line, index: k });
            }
        }
        packets.push(Packet::new(t, dir, size));
    }

    if packets.is_empty() {
        return if degenerate {
            Ok(Trace::degenerate(id, scope, label))
        } else {
            Err(schema(line, "packets", "empty packet list on a non-degenerate trace"))
        };
    }
    if packets[0].t != 0.0 {
        return Err(schema(line, "t", "first packet must be at t = 0"));
    }
    Trace::new(id, packets, scope, label)
}
