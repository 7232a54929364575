use crate::error::{Error, Result};

/// Uniform time grid `t0 = t_0 < t_1 < ... < t_steps = t_end`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    /// `steps = 0` is allowed and yields a single-point grid with no increments.
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite()) || t_end <= t0 {
            return Err(Error::invalid(format!("time grid needs t0 < t_end, got [{t0}, {t_end}]")));
        }
        Ok(TimeGrid { t0, t_end, steps })
    }

    pub fn on(horizon: f64, steps: usize) -> Result<Self> {
        Self::new(0.0, horizon, steps)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            (self.t_end - self.t0) / self.steps as f64
        }
    }

    /// Time of node `k`; the last node is exactly `t_end`.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Same span with `factor` times fewer steps.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::invalid(format!(
                "cannot coarsen {} steps by a factor {factor}",
                self.steps
            )));
        }
        Ok(TimeGrid { steps: self.steps / factor, ..*self })
    }

    pub fn refine(&self, factor: usize) -> Self {
        TimeGrid { steps: self.steps * factor, ..*self }
    }
}
