//! Adam with bias correction.

use std::io::{Read, Write};

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Scalar;

pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
}

/// First and second moment estimates plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub t: u64,
    pub m: ParameterSet<F>,
    pub v: ParameterSet<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParameterSet<F>) -> Self {
        Self {
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Appends `t` and both moment sets as little-endian `f32`.
    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(&self.t.to_le_bytes())?;
        for set in [&self.m, &self.v] {
            for t in set.tensors() {
                out.write_all(&(t.len() as u64).to_le_bytes())?;
                for v in t.iter() {
                    out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Reads state written by [`write_to`](Self::write_to) for parameters shaped like `like`.
    pub fn read_from(input: &mut impl Read, like: &ParameterSet<F>) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Format(format!("optimizer state: {e}"));
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8).map_err(bad)?;
        let t = u64::from_le_bytes(b8);
        let mut m = like.zeros_like();
        let mut v = like.zeros_like();
        for set in [&mut m, &mut v] {
            for tensor in set.tensors_mut() {
                input.read_exact(&mut b8).map_err(bad)?;
                let n = u64::from_le_bytes(b8) as usize;
                if n != tensor.len() {
                    return Err(Error::Format(format!("optimizer tensor has {n} values, expected {}", tensor.len())));
                }
                let mut b4 = [0u8; 4];
                for x in tensor.iter_mut() {
                    input.read_exact(&mut b4).map_err(bad)?;
                    *x = F::of(f32::from_le_bytes(b4) as f64);
                }
            }
        }
        Ok(Self { t, m, v })
    }
}

/// One Adam update of `params` in place. Non-finite gradients abort before anything changes.
pub fn optimizer_step<F: Scalar>(
    params: &mut ParameterSet<F>,
    grads: &ParameterSet<F>,
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    for ((name, g), p) in grads.iter().zip(params.tensors()) {
        if g.shape() != p.shape() {
            return Err(Error::Shape(format!(
                "gradient `{name}` {:?} vs parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    if let Some((name, _)) = grads.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence {
            step: state.t + 1,
            message: format!("non-finite gradient in `{name}`"),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let (one, lr, eps) = (F::one(), F::of(cfg.learning_rate), F::of(ADAM_EPS));
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    for i in 0..params.len() {
        let g = grads.tensor(i);
        Zip::from(params.tensor_mut(i))
            .and(state.m.tensor_mut(i))
            .and(state.v.tensor_mut(i))
            .and(g)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(())
}
