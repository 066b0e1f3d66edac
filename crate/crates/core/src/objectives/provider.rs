//! Socket for image-space losses computed outside this crate.
//!
//! Subprocess wire format, version 1. All header lines are ASCII and end in
//! `\n`.
//!
//! Request (engine → provider):
//!
//! ```text
//! SVPROV1 <step> <png_len>\n
//! <png_len bytes of 8-bit PNG>
//! ```
//!
//! Response (provider → engine):
//!
//! ```text
//! SVPROV1 <loss> <height> <width> <channels>\n
//! <height·width·channels little-endian f32, row-major H×W×C>
//! ```
//!
//! `<loss>` is a decimal float, or `-` when the provider reports no value.
//! The gradient must match the canvas shape and be finite. The provider
//! process stays alive for the whole run and answers requests in order.

use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use crate::raster::{BitDepth, Canvas};

use super::ObjectiveError;

pub const WIRE_MAGIC: &str = "SVPROV1";

#[derive(Clone, Debug, PartialEq)]
pub struct ProviderOutput {
    pub loss: Option<f64>,
    pub grad: Canvas,
}

pub trait ExternalGradientProvider {
    /// Loss gradient with respect to `rendered` for optimization step `step`.
    fn evaluate(&mut self, step: usize, rendered: &Canvas) -> Result<ProviderOutput, ObjectiveError>;
}

fn check_output(out: &ProviderOutput, rendered: &Canvas) -> Result<(), ObjectiveError> {
    if !out.grad.same_shape(rendered) {
        return Err(ObjectiveError::Provider(format!(
            "gradient is {}x{}x{}, canvas is {}x{}x{}",
            out.grad.height, out.grad.width, out.grad.channels, rendered.height, rendered.width, rendered.channels
        )));
    }
    if out.grad.data.iter().any(|v| !v.is_finite()) || out.loss.is_some_and(|l| !l.is_finite()) {
        return Err(ObjectiveError::Provider("non-finite loss or gradient".into()));
    }
    Ok(())
}

/// In-process provider backed by a closure.
pub struct ClosureProvider<F>(pub F);

impl<F> ExternalGradientProvider for ClosureProvider<F>
where
    F: FnMut(usize, &Canvas) -> Result<ProviderOutput, String>,
{
    fn evaluate(&mut self, step: usize, rendered: &Canvas) -> Result<ProviderOutput, ObjectiveError> {
        let out = (self.0)(step, rendered).map_err(ObjectiveError::Provider)?;
        check_output(&out, rendered)?;
        Ok(out)
    }
}

/// Long-running child process speaking the wire format on stdin/stdout.
pub struct SubprocessProvider {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

impl SubprocessProvider {
    /// Starts `program args...`. Its stderr is inherited.
    pub fn spawn(program: &str, args: &[String]) -> Result<Self, ObjectiveError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| ObjectiveError::Provider(format!("cannot start `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self { child, stdin, stdout })
    }

    /// Splits a shell-like command line on whitespace.
    pub fn from_command_line(cmd: &str) -> Result<Self, ObjectiveError> {
        let mut parts = cmd.split_whitespace().map(str::to_owned);
        let program = parts.next().ok_or_else(|| ObjectiveError::Provider("empty provider command".into()))?;
        let args: Vec<String> = parts.collect();
        Self::spawn(&program, &args)
    }

    fn exchange(&mut self, step: usize, rendered: &Canvas) -> std::io::Result<Result<ProviderOutput, String>> {
        let png = rendered
            .to_png_bytes(BitDepth::Eight)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        write!(self.stdin, "{WIRE_MAGIC} {step} {}\n", png.len())?;
        self.stdin.write_all(&png)?;
        self.stdin.flush()?;

        let mut header = String::new();
        if self.stdout.read_line(&mut header)? == 0 {
            return Ok(Err("provider closed its output".into()));
        }
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 || fields[0] != WIRE_MAGIC {
            return Ok(Err(format!("bad response header {:?}", header.trim_end())));
        }
        let loss = match fields[1] {
            "-" => None,
            s => match s.parse::<f64>() {
                Ok(v) => Some(v),
                Err(_) => return Ok(Err(format!("bad loss field {s:?}"))),
            },
        };
        let dims: Result<Vec<usize>, _> = fields[2..].iter().map(|s| s.parse::<usize>()).collect();
        let Ok(dims) = dims else {
            return Ok(Err(format!("bad shape in header {:?}", header.trim_end())));
        };
        let (h, w, c) = (dims[0], dims[1], dims[2]);
        let count = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .filter(|&n| n == rendered.data.len());
        let Some(count) = count else {
            return Ok(Err(format!(
                "gradient shape {h}x{w}x{c} does not match canvas {}x{}x{}",
                rendered.height, rendered.width, rendered.channels
            )));
        };
        let mut raw = vec![0u8; count * 4];
        self.stdout.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect();
        match Canvas::from_data(w, h, c, data) {
            Ok(grad) => Ok(Ok(ProviderOutput { loss, grad })),
            Err(e) => Ok(Err(e.to_string())),
        }
    }
}

impl ExternalGradientProvider for SubprocessProvider {
    fn evaluate(&mut self, step: usize, rendered: &Canvas) -> Result<ProviderOutput, ObjectiveError> {
        let out = self
            .exchange(step, rendered)
            .map_err(|e| ObjectiveError::Provider(format!("pipe error: {e}")))?
            .map_err(ObjectiveError::Provider)?;
        check_output(&out, rendered)?;
        Ok(out)
    }
}

impl Drop for SubprocessProvider {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
