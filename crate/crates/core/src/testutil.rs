//! Shared fixtures for unit tests.

use std::sync::Arc;

use crate::dynamics::{AffineModel, BoxSet, ControlAffineSystem};

/// `x' = 0` in `n` dimensions with `m` zero-gain control channels.
#[derive(Debug)]
pub struct Still(pub usize, pub usize);

impl AffineModel for Still {
    fn state_dim(&self) -> usize {
        self.0
    }
    fn control_dim(&self) -> usize {
        self.1
    }
    fn disturbance_dim(&self) -> usize {
        0
    }
    fn drift(&self, _x: &[f64], out: &mut [f64]) {
        out[..self.0].iter_mut().for_each(|v| *v = 0.0);
    }
    fn control_column(&self, _x: &[f64], _j: usize, out: &mut [f64]) {
        out[..self.0].iter_mut().for_each(|v| *v = 0.0);
    }
    fn disturbance_column(&self, _x: &[f64], _k: usize, _out: &mut [f64]) {}
}

pub fn still(n: usize) -> ControlAffineSystem {
    ControlAffineSystem::new("still", Arc::new(Still(n, 0)), BoxSet::empty(), BoxSet::empty()).unwrap()
}

pub fn still_with_control(n: usize) -> ControlAffineSystem {
    ControlAffineSystem::new("still", Arc::new(Still(n, 1)), BoxSet::symmetric(1.0, 1), BoxSet::empty()).unwrap()
}
