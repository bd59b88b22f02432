//! Uniformly sampled frequency records over an analysis window.

/// A frequency signal in Hz sampled every `dt` seconds over `window`,
/// including both endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTrajectory {
    /// Sample spacing (s).
    pub dt: f64,
    /// Frequency samples (Hz).
    pub samples: Vec<f64>,
    /// Nominal frequency (Hz).
    pub f_nom: f64,
    /// Analysis window `[t1, t2]` (s).
    pub window: (f64, f64),
}

impl FrequencyTrajectory {
    /// Number of samples a window of this span carries:
    /// `floor((t2 - t1)/dt) + 1`.
    pub fn expected_samples(window: (f64, f64), dt: f64) -> usize {
        // The tiny slack absorbs binary rounding when dt divides the span.
        ((window.1 - window.0) / dt + 1e-9).floor() as usize + 1
    }

    pub fn new(dt: f64, samples: Vec<f64>, f_nom: f64, window: (f64, f64)) -> Self {
        Self { dt, samples, f_nom, window }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample timestamps, `t1 + k·dt`.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let t1 = self.window.0;
        let dt = self.dt;
        (0..self.samples.len()).map(move |k| t1 + k as f64 * dt)
    }

    /// Frequency deviations from nominal, `Δf(t_i) = f(t_i) - f_nom` (Hz).
    pub fn deviations(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(move |f| f - self.f_nom)
    }

    /// Build a trajectory from deviation samples (useful in tests and
    /// synthetic workloads).
    pub fn from_deviations(dt: f64, deviations: &[f64], f_nom: f64, t1: f64) -> Self {
        let samples: Vec<f64> = deviations.iter().map(|d| f_nom + d).collect();
        let t2 = t1 + dt * deviations.len().saturating_sub(1) as f64;
        Self { dt, samples, f_nom, window: (t1, t2) }
    }
}
