//! Versioned JSON weights: named layers with shapes and row-major values.
//! Floats are written in shortest round-trip form, so save/load is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::{Dense, LstmParams};
use crate::error::{Error, Result};

pub const FORMAT: &str = "oscphase-weights";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsFile {
    pub format: String,
    pub version: u32,
    /// Model family, e.g. `lstm-estimator` or `q-network`.
    pub kind: String,
    /// Model-specific settings needed to rebuild it (JSON object).
    pub meta: serde_json::Value,
    pub layers: Vec<Layer>,
}

impl WeightsFile {
    pub fn new(kind: &str, meta: serde_json::Value) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            kind: kind.to_string(),
            meta,
            layers: Vec::new(),
        }
    }

    pub fn push_matrix(&mut self, name: &str, m: &Matrix) {
        self.layers.push(Layer {
            name: name.to_string(),
            shape: vec![m.rows(), m.cols()],
            values: m.as_slice().to_vec(),
        });
    }

    pub fn push_vector(&mut self, name: &str, v: &[f64]) {
        self.layers.push(Layer {
            name: name.to_string(),
            shape: vec![v.len()],
            values: v.to_vec(),
        });
    }

    pub fn push_lstm(&mut self, prefix: &str, p: &LstmParams) {
        self.push_matrix(&format!("{prefix}.w_ih"), p.w_ih());
        self.push_matrix(&format!("{prefix}.w_hh"), p.w_hh());
        self.push_vector(&format!("{prefix}.bias"), p.bias());
    }

    pub fn push_dense(&mut self, prefix: &str, d: &Dense) {
        self.push_matrix(&format!("{prefix}.weight"), d.weight());
        self.push_vector(&format!("{prefix}.bias"), d.bias());
    }

    fn layer(&self, name: &str) -> Result<&Layer> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::InvalidInput(format!("weights file has no layer `{name}`")))
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix> {
        let l = self.layer(name)?;
        match l.shape[..] {
            [r, c] => Matrix::from_vec(r, c, l.values.clone()),
            _ => Err(Error::shape("2-d layer", format!("{:?}", l.shape))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let l = self.layer(name)?;
        match l.shape[..] {
            [n] if n == l.values.len() => Ok(l.values.clone()),
            _ => Err(Error::shape("1-d layer", format!("{:?}", l.shape))),
        }
    }

    pub fn lstm(&self, prefix: &str) -> Result<LstmParams> {
        LstmParams::from_parts(
            self.matrix(&format!("{prefix}.w_ih"))?,
            self.matrix(&format!("{prefix}.w_hh"))?,
            self.vector(&format!("{prefix}.bias"))?,
        )
    }

    pub fn dense(&self, prefix: &str) -> Result<Dense> {
        Dense::from_parts(
            self.matrix(&format!("{prefix}.weight"))?,
            self.vector(&format!("{prefix}.bias"))?,
        )
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported weights format {} v{}",
                self.format, self.version
            )));
        }
        if self.kind != kind {
            return Err(Error::InvalidInput(format!(
                "weights are for `{}`, expected `{kind}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("weights serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidInput(format!("weights json: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::format(path, e))
    }
}
