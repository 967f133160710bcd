//! Plain-text parameter checkpoints.
//!
//! ```text
//! metaconf-checkpoint v1
//! input_dim 8
//! hidden 32 32
//! activation tanh
//! params 1377
//! 1.2345678901234567e-1
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a load
//! reproduces the parameters bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Activation, Architecture, ParamVector};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "metaconf-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub params: ParamVector,
}

impl Checkpoint {
    pub fn new(arch: Architecture, params: ParamVector) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Dimension {
                what: "checkpoint parameters",
                expected: arch.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { arch, params })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let hidden: Vec<String> = self.arch.hidden_dims.iter().map(usize::to_string).collect();
        let _ = writeln!(out, "{MAGIC} v{FORMAT_VERSION}");
        let _ = writeln!(out, "input_dim {}", self.arch.input_dim);
        let _ = writeln!(out, "hidden {}", hidden.join(" "));
        let _ = writeln!(out, "activation {}", self.arch.activation);
        let _ = writeln!(out, "params {}", self.params.len());
        for p in self.params.iter() {
            let _ = writeln!(out, "{p:e}");
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            what: "checkpoint",
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("missing `{key}` line")))?;
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| parse_err(n, format!("expected `{key}`, found `{line}`")))?;
            Ok((n, rest.trim().to_string()))
        };

        let (n, version) = header(MAGIC)?;
        if version != format!("v{FORMAT_VERSION}") {
            return Err(parse_err(n, format!("unsupported format version `{version}`")));
        }
        let (n, v) = header("input_dim")?;
        let input_dim = v.parse().map_err(|_| parse_err(n, format!("bad input_dim `{v}`")))?;
        let (n, v) = header("hidden")?;
        let hidden_dims = v
            .split_whitespace()
            .map(|w| w.parse().map_err(|_| parse_err(n, format!("bad hidden width `{w}`"))))
            .collect::<Result<Vec<usize>>>()?;
        let (n, v) = header("activation")?;
        let activation: Activation = v.parse().map_err(|e: Error| parse_err(n, e.to_string()))?;
        let (n, v) = header("params")?;
        let count: usize = v.parse().map_err(|_| parse_err(n, format!("bad parameter count `{v}`")))?;

        let arch = Architecture::new(input_dim, hidden_dims, activation)?;
        if count != arch.param_count() {
            return Err(parse_err(
                n,
                format!("architecture {arch} has {} parameters, header says {count}", arch.param_count()),
            ));
        }
        let mut params = Vec::with_capacity(count);
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| parse_err(n, format!("bad value `{line}`")))?;
            if !v.is_finite() {
                return Err(parse_err(n, "non-finite parameter".into()));
            }
            params.push(v);
        }
        if params.len() != count {
            return Err(parse_err(0, format!("expected {count} values, found {}", params.len())));
        }
        Ok(Self {
            arch,
            params: ParamVector(params),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}
