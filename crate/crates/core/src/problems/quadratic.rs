use crate::numeric::{gaussian_vector, ParamVector, RngStream};

use super::{check_worker, noisy_gradient, Problem, ProblemConstants, ProblemError};

/// Default half-width of the box `‖x‖∞ ≤ R` over which the gradient bound holds.
pub const DEFAULT_RADIUS: f64 = 10.0;

/// `f_i(x) = ½ (x − c_i)ᵀ D_i (x − c_i)` with diagonal positive `D_i`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    curvatures: Vec<ParamVector>,
    centers: Vec<ParamVector>,
    radius: f64,
    constants: ProblemConstants,
}

/// Random quadratic testbed. Curvatures are uniform in `condition_spread`,
/// centers are standard normal.
pub fn quadratic_problem(
    rng: &mut RngStream,
    dim: usize,
    num_workers: usize,
    condition_spread: (f64, f64),
) -> Result<QuadraticProblem, ProblemError> {
    let (lo, hi) = condition_spread;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(ProblemError::InvalidParameter(format!(
            "condition_spread must be a positive interval, got [{lo}, {hi}]"
        )));
    }
    if dim == 0 || num_workers == 0 {
        return Err(ProblemError::InvalidParameter(
            "dim and num_workers must be at least 1".into(),
        ));
    }
    let mut curvatures = Vec::with_capacity(num_workers);
    let mut centers = Vec::with_capacity(num_workers);
    for _ in 0..num_workers {
        let d: Vec<f64> = (0..dim).map(|_| rng.uniform(lo, hi)).collect();
        curvatures.push(ParamVector::new(d)?);
        centers.push(gaussian_vector(rng, dim, 0.0, 1.0)?);
    }
    QuadraticProblem::new(curvatures, centers)
}

impl QuadraticProblem {
    pub fn new(
        curvatures: Vec<ParamVector>,
        centers: Vec<ParamVector>,
    ) -> Result<Self, ProblemError> {
        if curvatures.is_empty() || curvatures.len() != centers.len() {
            return Err(ProblemError::InvalidParameter(
                "need one curvature and one center per worker".into(),
            ));
        }
        let dim = curvatures[0].dim();
        for (d, c) in curvatures.iter().zip(&centers) {
            if d.dim() != dim || c.dim() != dim {
                return Err(ProblemError::InvalidParameter(
                    "inconsistent dimensions".into(),
                ));
            }
            if d.min_entry() <= 0.0 {
                return Err(ProblemError::InvalidParameter(
                    "curvatures must be positive".into(),
                ));
            }
        }
        let lipschitz = curvatures
            .iter()
            .map(ParamVector::norm_inf)
            .fold(0.0, f64::max);
        let num_workers = curvatures.len();
        let mut p = Self {
            curvatures,
            centers,
            radius: DEFAULT_RADIUS,
            constants: ProblemConstants {
                lipschitz: Some(lipschitz),
                sigma: 0.0,
                g_inf: 0.0,
                dim,
                num_workers,
            },
        };
        p.constants.g_inf = p.gradient_bound();
        Ok(p)
    }

    pub fn with_radius(mut self, radius: f64) -> Result<Self, ProblemError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!("radius {radius}")));
        }
        self.radius = radius;
        self.constants.g_inf = self.gradient_bound() + 4.0 * self.constants.sigma;
        Ok(self)
    }

    pub fn with_noise(mut self, sigma: f64) -> Result<Self, ProblemError> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(ProblemError::InvalidParameter(format!("noise std {sigma}")));
        }
        self.constants.sigma = sigma;
        self.constants.g_inf = self.gradient_bound() + 4.0 * sigma;
        Ok(self)
    }

    // max |D_ij (x_j − c_ij)| over the box.
    fn gradient_bound(&self) -> f64 {
        let mut bound = 0.0_f64;
        for (d, c) in self.curvatures.iter().zip(&self.centers) {
            for j in 0..d.dim() {
                bound = bound.max(d[j] * (self.radius + c[j].abs()));
            }
        }
        bound
    }

    pub fn curvatures(&self) -> &[ParamVector] {
        &self.curvatures
    }

    pub fn centers(&self) -> &[ParamVector] {
        &self.centers
    }

    /// Closed-form minimizer of the worker average: per coordinate,
    /// `Σ_i D_ij c_ij / Σ_i D_ij`.
    pub fn minimizer(&self) -> ParamVector {
        let dim = self.constants.dim;
        let x = (0..dim)
            .map(|j| {
                let (num, den) = self
                    .curvatures
                    .iter()
                    .zip(&self.centers)
                    .fold((0.0, 0.0), |(n, d), (dv, cv)| {
                        (n + dv[j] * cv[j], d + dv[j])
                    });
                num / den
            })
            .collect();
        ParamVector::from_raw(x)
    }
}

impl Problem for QuadraticProblem {
    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn loss(&self, worker: usize, x: &ParamVector) -> Result<f64, ProblemError> {
        check_worker(worker, self.constants.num_workers)?;
        x.check_dim(&self.centers[worker])?;
        let d = &self.curvatures[worker];
        let c = &self.centers[worker];
        Ok(0.5
            * (0..x.dim())
                .map(|j| d[j] * (x[j] - c[j]) * (x[j] - c[j]))
                .sum::<f64>())
    }

    fn gradient(&self, worker: usize, x: &ParamVector) -> Result<ParamVector, ProblemError> {
        check_worker(worker, self.constants.num_workers)?;
        x.check_dim(&self.centers[worker])?;
        let d = &self.curvatures[worker];
        let c = &self.centers[worker];
        Ok(ParamVector::from_raw(
            (0..x.dim()).map(|j| d[j] * (x[j] - c[j])).collect(),
        ))
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
        let xs = self.minimizer();
        let n = self.constants.num_workers;
        let total: f64 = (0..n).map(|i| self.loss(i, &xs).unwrap_or(f64::NAN)).sum();
        Some(total / n as f64)
    }

    fn default_initial_point(&self, _rng: &mut RngStream) -> ParamVector {
        ParamVector::zeros(self.constants.dim)
    }
}
