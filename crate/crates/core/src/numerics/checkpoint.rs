//! Named-tensor checkpoints stored as JSON.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, DenseMatrix, Linear, Mlp};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn push_matrix(&mut self, name: impl Into<String>, m: &DenseMatrix) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: vec![m.rows(), m.cols()],
            values: m.as_slice().to_vec(),
        });
    }

    pub fn push_vector(&mut self, name: impl Into<String>, v: &[f64]) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape: vec![v.len()],
            values: v.to_vec(),
        });
    }

    /// Stores decoder layers as `{prefix}.layer{i}.w` and `{prefix}.layer{i}.b`.
    pub fn push_mlp(&mut self, prefix: &str, mlp: &Mlp) {
        for (i, l) in mlp.layers.iter().enumerate() {
            self.push_matrix(format!("{prefix}.layer{i}.w"), &l.weight);
            self.push_vector(format!("{prefix}.layer{i}.b"), &l.bias);
        }
    }

    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn matrix(&self, name: &str) -> Result<DenseMatrix> {
        let t = self.get(name)?;
        match t.shape[..] {
            [r, c] => DenseMatrix::from_vec(r, c, t.values.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}"))),
            _ => Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected a matrix",
                t.shape
            ))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Vec<f64>> {
        let t = self.get(name)?;
        if t.shape != [t.values.len()] {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected a vector",
                t.shape
            )));
        }
        Ok(t.values.clone())
    }

    pub fn mlp(&self, prefix: &str) -> Result<Mlp> {
        let mut layers = Vec::new();
        while self.get(&format!("{prefix}.layer{}.w", layers.len())).is_ok() {
            let i = layers.len();
            let weight = self.matrix(&format!("{prefix}.layer{i}.w"))?;
            let bias = self.vector(&format!("{prefix}.layer{i}.b"))?;
            if bias.len() != weight.cols() {
                return Err(Error::Checkpoint(format!("{prefix}.layer{i}: bias width mismatch")));
            }
            layers.push(Linear { weight, bias });
        }
        if layers.is_empty() {
            return Err(Error::Checkpoint(format!("no layers under `{prefix}`")));
        }
        Ok(Mlp { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}
