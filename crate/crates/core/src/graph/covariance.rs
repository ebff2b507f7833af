//! Online leg-factor covariance from recent optimized residuals.

use std::collections::VecDeque;

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

/// Ring buffer of recent leg residuals with per-axis reliability flags.
#[derive(Debug, Clone, PartialEq)]
pub struct LegResidualWindow {
    capacity: usize,
    entries: VecDeque<(Vector6<f64>, [bool; 6])>,
}

impl LegResidualWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, residual: Vector6<f64>, reliable: [bool; 6]) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((residual, reliable));
    }

    pub fn entries(&self) -> impl Iterator<Item = &(Vector6<f64>, [bool; 6])> {
        self.entries.iter()
    }
}

/// Diagonal leg covariance `[rot (rad²) ×3, trans (m²) ×3]` per keyframe step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegCovariance {
    pub diagonal: Vector6<f64>,
}

impl LegCovariance {
    pub const FLOOR: f64 = 1e-8;

    pub fn new(diagonal: Vector6<f64>) -> Self {
        Self {
            diagonal: diagonal.map(|v| v.max(Self::FLOOR)),
        }
    }

    pub fn matrix(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&self.diagonal)
    }

    /// Per-axis `1/σ`.
    pub fn whitening(&self) -> Vector6<f64> {
        self.diagonal.map(|v| 1.0 / v.sqrt())
    }
}

/// Zero-mean per-axis variance `Σ r² / (n − 1)` over the reliable entries.
/// Axes with fewer than two reliable entries keep their previous value.
pub fn update_leg_covariance(window: &LegResidualWindow, previous: &LegCovariance) -> LegCovariance {
    let mut diagonal = previous.diagonal;
    for axis in 0..6 {
        let (n, sum) = window
            .entries()
            .filter(|(_, ok)| ok[axis])
            .fold((0usize, 0.0), |(n, s), (r, _)| (n + 1, s + r[axis] * r[axis]));
        if n >= 2 {
            diagonal[axis] = (sum / (n - 1) as f64).max(LegCovariance::FLOOR);
        }
    }
    LegCovariance { diagonal }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prev() -> LegCovariance {
        LegCovariance::new(Vector6::new(1e-5, 1e-5, 1e-5, 1e-4, 1e-4, 1e-4))
    }

    #[test]
    fn constant_residual() {
        let mut w = LegResidualWindow::new(15);
        for _ in 0..15 {
            w.push(Vector6::new(0.0, 0.0, 0.0, 0.1, 0.0, 0.0), [true; 6]);
        }
        let c = update_leg_covariance(&w, &prev());
        assert!((c.diagonal[3] - 15.0 * 0.01 / 14.0).abs() < 1e-15);
        assert_eq!(c.diagonal[0], LegCovariance::FLOOR);
    }

    #[test]
    fn unreliable_axis_keeps_previous() {
        let mut w = LegResidualWindow::new(15);
        for _ in 0..20 {
            w.push(Vector6::repeat(0.3), [true, true, true, false, true, true]);
        }
        assert_eq!(w.len(), 15);
        let c = update_leg_covariance(&w, &prev());
        assert_eq!(c.diagonal[3], 1e-4);
        assert!((c.diagonal[4] - 15.0 * 0.09 / 14.0).abs() < 1e-15);
    }

    #[test]
    fn single_reliable_entry_is_not_enough() {
        let mut w = LegResidualWindow::new(15);
        w.push(Vector6::repeat(1.0), [true; 6]);
        assert_eq!(update_leg_covariance(&w, &prev()), prev());
    }
}
