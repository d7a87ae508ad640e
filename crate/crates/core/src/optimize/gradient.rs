//! Central finite differences and the Adam update.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// `g_i = (f(theta + h e_i) - f(theta - h e_i)) / 2h`, probes run in parallel.
pub fn finite_diff_gradient<F>(objective: F, theta: &Array2<f64>, h: f64) -> Result<Array2<f64>>
where
    F: Fn(&Array2<f64>) -> Result<f64> + Sync,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Validation(format!("finite-difference step must be positive, got {h}")));
    }
    let dims = theta.raw_dim();
    let probe = |i: usize, delta: f64| -> Result<f64> {
        let mut t = theta.clone();
        t.as_slice_memory_order_mut().expect("contiguous theta")[i] += delta;
        let v = objective(&t)?;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("objective is {v} at perturbed parameter {i}")));
        }
        Ok(v)
    };
    let grads: Vec<f64> = (0..theta.len())
        .into_par_iter()
        .map(|i| Ok((probe(i, h)? - probe(i, -h)?) / (2.0 * h)))
        .collect::<Result<_>>()?;
    Ok(Array2::from_shape_vec(dims, grads).expect("gradient shape"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn update(&mut self, theta: &mut Array2<f64>, grad: &Array2<f64>, lr: f64) {
        self.step += 1;
        let b1t = 1.0 - Self::BETA1.powi(self.step as i32);
        let b2t = 1.0 - Self::BETA2.powi(self.step as i32);
        let th = theta.as_slice_memory_order_mut().expect("contiguous theta");
        for (i, (&g, t)) in grad.iter().zip(th.iter_mut()).enumerate() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            *t -= lr * (self.m[i] / b1t) / ((self.v[i] / b2t).sqrt() + Self::EPS);
        }
    }
}
