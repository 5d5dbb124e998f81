use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Oracle, OracleError};
use crate::attack::{payload_from_json, Encoding, PayloadJson};
use crate::losses::LossSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnknownOp,
    BudgetExhausted,
    MalformedPayload,
    LossMismatch,
    Domain,
}

#[derive(Debug, Clone, Deserialize)]
pub struct Request {
    pub id: i64,
    pub op: String,
    #[serde(default)]
    pub loss: Option<LossSpec>,
    #[serde(default)]
    pub payload: Option<Value>,
    #[serde(default)]
    pub encoding: Option<Encoding>,
    /// Half-open row range the payload covers; all rows when absent.
    #[serde(default)]
    pub rows: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Ok { id: i64, ok: bool, loss_value: String, digits: usize, query_index: u64 },
    Err { id: Option<i64>, ok: bool, code: ErrorCode, message: String },
}

fn fail(id: Option<i64>, code: ErrorCode, message: impl Into<String>) -> Response {
    Response::Err { id, ok: false, code, message: message.into() }
}

/// Answer one protocol line.
pub fn handle_line(oracle: &mut Oracle, line: &str) -> Response {
    let raw: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return fail(None, ErrorCode::Malformed, e.to_string()),
    };
    let id = raw.get("id").and_then(Value::as_i64);
    let req: Request = match serde_json::from_value(raw) {
        Ok(r) => r,
        Err(e) => return fail(id, ErrorCode::Malformed, e.to_string()),
    };
    let id = req.id;
    if req.op != "evaluate" {
        return fail(Some(id), ErrorCode::UnknownOp, format!("unknown op {:?}", req.op));
    }
    let (Some(loss), Some(mut pj)) = (req.loss, req.payload) else {
        return fail(Some(id), ErrorCode::Malformed, "evaluate needs loss and payload");
    };
    if loss != oracle.config().loss {
        return fail(Some(id), ErrorCode::LossMismatch, format!("oracle serves {}", oracle.config().loss.name()));
    }
    if let (Some(enc), Some(obj)) = (req.encoding, pj.as_object_mut()) {
        let given = serde_json::to_value(enc).expect("encoding serializes");
        match obj.get("encoding") {
            Some(e) if e != &given => return fail(Some(id), ErrorCode::MalformedPayload, "conflicting encodings"),
            _ => {
                obj.insert("encoding".into(), given);
            }
        }
    }
    let payload = match serde_json::from_value::<PayloadJson>(pj).map_err(|e| e.to_string()).and_then(|j| {
        payload_from_json(&j).map_err(|e| e.to_string())
    }) {
        Ok(p) => p,
        Err(e) => return fail(Some(id), ErrorCode::MalformedPayload, e),
    };
    let rows = req.rows.map_or(0..oracle.n(), |[a, b]| a..b);
    match oracle.evaluate_rows(&payload, rows) {
        Ok(ans) => {
            let digits = oracle.config().digits();
            match ans.value.to_decimal(digits) {
                Some(loss_value) => Response::Ok { id, ok: true, loss_value, digits, query_index: ans.index },
                None => fail(Some(id), ErrorCode::Domain, "result is not a finite number"),
            }
        }
        Err(e) => {
            let code = match &e {
                OracleError::BudgetExhausted(_) => ErrorCode::BudgetExhausted,
                OracleError::MalformedPayload(_) => ErrorCode::MalformedPayload,
                OracleError::LossMismatch { .. } => ErrorCode::LossMismatch,
                _ => ErrorCode::Domain,
            };
            fail(Some(id), code, e.to_string())
        }
    }
}

/// One response line per non-empty request line, until end of input.
pub fn serve_stream<R: BufRead, W: Write>(oracle: &mut Oracle, input: R, mut output: W) -> io::Result<()> {
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(oracle, &line);
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}

pub fn serve_stdio(oracle: &mut Oracle) -> io::Result<()> {
    serve_stream(oracle, io::stdin().lock(), io::stdout().lock())
}

/// Serve connections one at a time; stops after `max_connections` when given.
pub fn serve_tcp(oracle: &mut Oracle, listener: TcpListener, max_connections: Option<usize>) -> io::Result<()> {
    for (served, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        let reader = BufReader::new(stream.try_clone()?);
        serve_stream(oracle, reader, stream)?;
        if max_connections.is_some_and(|m| served + 1 >= m) {
            break;
        }
    }
    Ok(())
}
