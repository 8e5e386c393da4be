use crate::numeric::{ParamVector, RngStream};

use super::{check_worker, noisy_gradient, Problem, ProblemConstants, ProblemError};

/// Three-worker, one-dimensional piecewise problem on which per-worker
/// adaptive learning rates drive the average away from the stationary point.
///
/// `f₁(x) = 2x²` for `|x| ≤ 1`, `4|x| − 2` otherwise;
/// `f₂ = f₃ = −0.5x²` for `|x| ≤ 1`, `−|x| + 0.5` otherwise.
/// The average `f` has its unique stationary point at 0.
#[derive(Debug, Clone)]
pub struct CounterexampleProblem {
    constants: ProblemConstants,
}

pub fn counterexample_problem() -> CounterexampleProblem {
    CounterexampleProblem {
        constants: ProblemConstants {
            lipschitz: Some(4.0),
            sigma: 0.0,
            g_inf: 4.0,
            dim: 1,
            num_workers: 3,
        },
    }
}

impl CounterexampleProblem {
    /// Adds coordinate noise of std `sigma`; the gradient bound grows by 4σ.
    pub fn with_noise(mut self, sigma: f64) -> Result<Self, ProblemError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!("noise std {sigma}")));
        }
        self.constants.sigma = sigma;
        self.constants.g_inf = 4.0 + 4.0 * sigma;
        Ok(self)
    }

    // (curvature inside the unit interval, slope outside)
    fn shape(worker: usize) -> (f64, f64) {
        if worker == 0 {
            (2.0, 4.0)
        } else {
            (-0.5, -1.0)
        }
    }

    fn value(worker: usize, x: f64) -> f64 {
        let (a, s) = Self::shape(worker);
        if x.abs() <= 1.0 {
            a * x * x
        } else {
            s * x.abs() - a
        }
    }

    // At |x| = 1 the outer one-sided derivative is used.
    fn derivative(worker: usize, x: f64) -> f64 {
        let (a, s) = Self::shape(worker);
        if x.abs() < 1.0 {
            2.0 * a * x
        } else {
            s * x.signum()
        }
    }
}

impl Problem for CounterexampleProblem {
    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn loss(&self, worker: usize, x: &ParamVector) -> Result<f64, ProblemError> {
        check_worker(worker, 3)?;
        Ok(Self::value(worker, x[0]))
    }

    fn gradient(&self, worker: usize, x: &ParamVector) -> Result<ParamVector, ProblemError> {
        check_worker(worker, 3)?;
        Ok(ParamVector::from_raw(vec![Self::derivative(worker, x[0])]))
    }

    fn sample_gradient(
        &self,
        worker: usize,
        x: &ParamVector,
        rng: &mut RngStream,
    ) -> Result<ParamVector, ProblemError> {
        noisy_gradient(self, worker, x, rng)
    }

    fn min_value(&self) -> Option<f64> {
        Some(0.0)
    }

    fn default_initial_point(&self, _rng: &mut RngStream) -> ParamVector {
        ParamVector::filled(1, 5.0)
    }
}
