//! Named parameter tensors and their on-disk form.
//!
//! A saved set is a directory holding one little-endian `f32` file per tensor plus
//! `index.json`, which maps each name to its shape, dtype, file and byte offset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<F> {
    pub init_seed: u64,
    names: Vec<String>,
    tensors: Vec<ArrayD<F>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub file: String,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterIndex {
    pub init_seed: u64,
    pub order: Vec<String>,
    pub tensors: BTreeMap<String, TensorEntry>,
}

impl<F: Scalar> ParameterSet<F> {
    pub fn new(init_seed: u64) -> Self {
        Self {
            init_seed,
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    /// Appends a tensor. Names must be unique.
    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<F>) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::Validation(format!("duplicate parameter name `{name}`")));
        }
        self.names.push(name);
        self.tensors.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, i: usize) -> &ArrayD<F> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut ArrayD<F> {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[ArrayD<F>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ArrayD<F>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<F>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<F>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            init_seed: self.init_seed,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| ArrayD::zeros(t.raw_dim())).collect(),
        }
    }

    /// Element-wise `self += other`; both sets must share a layout.
    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.names, other.names, "parameter layouts differ");
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<G: Scalar>(&self) -> ParameterSet<G> {
        ParameterSet {
            init_seed: self.init_seed,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.mapv(|v| G::of(v.as_f64()))).collect(),
        }
    }

    /// Checks that names and shapes match `layout` exactly, in order.
    pub fn check_layout(&self, layout: &[(String, Vec<usize>)]) -> Result<()> {
        if layout.len() != self.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                self.len()
            )));
        }
        for ((name, shape), (have_name, t)) in layout.iter().zip(self.iter()) {
            if name != have_name || shape.as_slice() != t.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{have_name}` {:?} does not match expected `{name}` {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Writes the set to `dir` as `f32` tensor files plus `index.json`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = BTreeMap::new();
        for (name, t) in self.iter() {
            let file = format!("{name}.bin");
            let mut bytes = Vec::with_capacity(t.len() * 4);
            for v in t.iter() {
                bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
            let path = dir.join(&file);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            tensors.insert(
                name.to_string(),
                TensorEntry {
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                    file,
                    offset: 0,
                },
            );
        }
        let index = ParameterIndex {
            init_seed: self.init_seed,
            order: self.names.clone(),
            tensors,
        };
        let path = dir.join("index.json");
        let json = serde_json::to_string_pretty(&index).expect("index serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("index.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: ParameterIndex = serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut set = ParameterSet::new(index.init_seed);
        for name in &index.order {
            let entry = index
                .tensors
                .get(name)
                .ok_or_else(|| Error::Format(format!("index lists `{name}` without an entry")))?;
            if entry.dtype != "f32" {
                return Err(Error::Format(format!("tensor `{name}` has dtype {}", entry.dtype)));
            }
            let file = dir.join(&entry.file);
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + count * 4;
            if bytes.len() < end {
                return Err(Error::Format(format!("{} is truncated", file.display())));
            }
            let data: Vec<F> = bytes[start..end]
                .chunks_exact(4)
                .map(|c| F::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&entry.shape), data).expect("length checked above");
            set.push(name.clone(), t)?;
        }
        Ok(set)
    }
}
