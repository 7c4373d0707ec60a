//! Executors turn (substituted code, input layers) into (output layers, log).

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::layers::{deserialize_layer, serialize_layer, DataLayer};
use crate::ops::{run_op, OpDoc, OpInput};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_OUTPUT_CAP: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOutput {
    pub layers: Vec<DataLayer>,
    pub log: String,
}

pub trait Executor: Send + Sync {
    /// An `Err` carries the log explaining the failure.
    fn execute(&self, code: &str, inputs: &[Arc<DataLayer>]) -> Result<ExecOutput, String>;
}

/// Interprets op documents in-process. View documents (objects with a
/// `"view"` key) and empty code forward their inputs unchanged.
#[derive(Debug, Clone, Default)]
pub struct BuiltinExecutor {
    pub data_root: Option<PathBuf>,
}

impl BuiltinExecutor {
    pub fn new(data_root: Option<PathBuf>) -> Self {
        BuiltinExecutor { data_root }
    }
}

pub fn is_view_code(code: &str) -> bool {
    code.trim().is_empty()
        || serde_json::from_str::<serde_json::Value>(code).is_ok_and(|v| v.get("view").is_some())
}

impl Executor for BuiltinExecutor {
    fn execute(&self, code: &str, inputs: &[Arc<DataLayer>]) -> Result<ExecOutput, String> {
        if is_view_code(code) {
            return Ok(ExecOutput { layers: inputs.iter().map(|l| (**l).clone()).collect(), log: String::new() });
        }
        let doc = OpDoc::parse(code).map_err(|e| e.to_string())?;
        let refs: Vec<&DataLayer> = inputs.iter().map(|l| l.as_ref()).collect();
        let layers = run_op(&doc, OpInput { layers: &refs, data_root: self.data_root.as_deref() }).map_err(|e| e.to_string())?;
        let log = layers.iter().map(|l| format!("{} layer, {} records\n", l.kind(), l.len())).collect();
        Ok(ExecOutput { layers, log })
    }
}

/// Runs node code in a separate worker process.
///
/// Wire format, all lengths unsigned 32-bit big-endian:
///
/// ```text
/// stdin : len code | count | (len envelope){count}
/// stdout: count | (len envelope){count} | len log
/// ```
///
/// Envelopes are canonical layer envelopes. A nonzero exit status, a
/// malformed reply, exceeding the wall-clock timeout or writing more than the
/// output cap fails the execution.
#[derive(Debug, Clone)]
pub struct ProcessExecutor {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub timeout: Duration,
    pub output_cap: usize,
}

impl ProcessExecutor {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        ProcessExecutor { program: program.into(), args, timeout: DEFAULT_TIMEOUT, output_cap: DEFAULT_OUTPUT_CAP }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_output_cap(mut self, cap: usize) -> Self {
        self.output_cap = cap;
        self
    }
}

pub fn write_frame(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

/// Request bytes sent to a worker.
pub fn encode_request(code: &str, inputs: &[Arc<DataLayer>]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_frame(&mut buf, code.as_bytes());
    buf.extend_from_slice(&(inputs.len() as u32).to_be_bytes());
    for l in inputs {
        write_frame(&mut buf, &serialize_layer(l));
    }
    buf
}

struct Cursor<'a>(&'a [u8]);

impl<'a> Cursor<'a> {
    fn u32(&mut self) -> Result<usize, String> {
        if self.0.len() < 4 {
            return Err("truncated worker reply".into());
        }
        let (head, rest) = self.0.split_at(4);
        self.0 = rest;
        Ok(u32::from_be_bytes(head.try_into().expect("4 bytes")) as usize)
    }

    fn frame(&mut self) -> Result<&'a [u8], String> {
        let n = self.u32()?;
        if self.0.len() < n {
            return Err("truncated worker reply".into());
        }
        let (head, rest) = self.0.split_at(n);
        self.0 = rest;
        Ok(head)
    }
}

/// Parse a worker's stdout.
pub fn decode_reply(bytes: &[u8]) -> Result<ExecOutput, String> {
    let mut c = Cursor(bytes);
    let count = c.u32()?;
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let env = c.frame()?;
        layers.push(deserialize_layer(env).map_err(|e| format!("output {i}: {e}"))?);
    }
    let log = String::from_utf8_lossy(c.frame()?).into_owned();
    if !c.0.is_empty() {
        return Err("trailing bytes after worker reply".into());
    }
    Ok(ExecOutput { layers, log })
}

fn read_capped(mut r: impl Read, cap: usize, overflow: &AtomicBool) -> Vec<u8> {
    let mut out = Vec::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        match r.read(&mut buf) {
            Ok(0) | Err(_) => return out,
            Ok(n) => {
                if out.len() + n > cap {
                    overflow.store(true, Ordering::SeqCst);
                    return out;
                }
                out.extend_from_slice(&buf[..n]);
            }
        }
    }
}

impl Executor for ProcessExecutor {
    fn execute(&self, code: &str, inputs: &[Arc<DataLayer>]) -> Result<ExecOutput, String> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| format!("cannot start worker {}: {e}", self.program.display()))?;

        let request = encode_request(code, inputs);
        let mut stdin = child.stdin.take().expect("piped");
        let writer = std::thread::spawn(move || {
            let _ = stdin.write_all(&request);
        });
        let stdout = child.stdout.take().expect("piped");
        let cap = self.output_cap;
        let overflow = Arc::new(AtomicBool::new(false));
        let flag = overflow.clone();
        let reader = std::thread::spawn(move || read_capped(stdout, cap, &flag));
        let stderr = child.stderr.take().expect("piped");
        let err_reader = std::thread::spawn(move || read_capped(stderr, 1024 * 1024, &AtomicBool::new(false)));

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if overflow.load(Ordering::SeqCst) => break None,
                Ok(None) if Instant::now() >= deadline => break None,
                Ok(None) => std::thread::sleep(Duration::from_millis(2)),
                Err(e) => return Err(format!("worker wait failed: {e}")),
            }
        };
        if status.is_none() {
            let _ = child.kill();
            let _ = child.wait();
        }
        let _ = writer.join();
        let out = reader.join().unwrap_or_default();
        let stderr = String::from_utf8_lossy(&err_reader.join().unwrap_or_default()).into_owned();
        if overflow.load(Ordering::SeqCst) {
            return Err(format!("worker output exceeded {} bytes", self.output_cap));
        }
        let Some(status) = status else {
            return Err(format!("worker timed out after {} ms", self.timeout.as_millis()));
        };
        if !status.success() {
            return Err(format!("worker exited with {status}\n{stderr}"));
        }
        let mut reply = decode_reply(&out).map_err(|e| format!("{e}\n{stderr}"))?;
        if !stderr.is_empty() {
            reply.log.push_str(&stderr);
        }
        Ok(reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{load_table, TableHints};

    #[test]
    fn builtin_runs_ops_and_forwards_views() {
        let ex = BuiltinExecutor::default();
        let out = ex.execute(r#"{"op":"load_csv","data":"a\n1\n"}"#, &[]).unwrap();
        assert_eq!(out.layers.len(), 1);
        let input = Arc::new(out.layers[0].clone());
        let view = ex.execute(r#"{"view":"table"}"#, &[input.clone()]).unwrap();
        assert_eq!(view.layers[0], *input);
        assert!(ex.execute(r#"{"op":"nope"}"#, &[]).is_err());
    }

    #[test]
    fn reply_round_trip() {
        let l = load_table(b"a,b\n1,x\n", &TableHints::default()).unwrap();
        let mut buf = Vec::new();
        buf.extend_from_slice(&1u32.to_be_bytes());
        write_frame(&mut buf, &serialize_layer(&l));
        write_frame(&mut buf, b"done");
        let out = decode_reply(&buf).unwrap();
        assert_eq!(out.layers, vec![l]);
        assert_eq!(out.log, "done");
        assert!(decode_reply(&buf[..buf.len() - 1]).is_err());
    }
}
