use crate::numeric::{ParamVector, RngStream};

use super::{check_worker, LabeledDataset, Problem, ProblemConstants, ProblemError};

/// ReLU multilayer perceptron with a softmax cross-entropy head, one data
/// shard per worker. `f_i` is the mean loss over shard `i`.
///
/// Parameters are flattened layer by layer: the `out × in` weight matrix in
/// row-major order, then the `out` biases.
#[derive(Debug, Clone)]
pub struct MlpProblem {
    shards: Vec<LabeledDataset>,
    widths: Vec<usize>,
    batch_size: usize,
    constants: ProblemConstants,
}

/// Builds the MLP problem. `layer_widths` runs from the feature dimension to
/// the class count; `grad_clip` becomes the reported `G∞`.
pub fn mlp_problem(
    shards: Vec<LabeledDataset>,
    layer_widths: &[usize],
    batch_size: usize,
    grad_clip: f64,
) -> Result<MlpProblem, ProblemError> {
    if shards.is_empty() {
        return Err(ProblemError::InvalidParameter("no shards".into()));
    }
    if let Some(i) = shards.iter().position(LabeledDataset::is_empty) {
        return Err(ProblemError::EmptyShard(i));
    }
    let dim = shards[0].dim();
    let classes = shards
        .iter()
        .map(LabeledDataset::num_classes)
        .max()
        .unwrap_or(0);
    if layer_widths.len() < 2
        || layer_widths[0] != dim
        || *layer_widths.last().unwrap() != classes
        || layer_widths.contains(&0)
        || shards.iter().any(|s| s.dim() != dim)
    {
        return Err(ProblemError::WidthMismatch {
            widths: layer_widths.to_vec(),
            dim,
            classes,
        });
    }
    if batch_size == 0 {
        return Err(ProblemError::InvalidParameter(
            "batch_size must be at least 1".into(),
        ));
    }
    if !(grad_clip > 0.0 && grad_clip.is_finite()) {
        return Err(ProblemError::InvalidParameter(format!(
            "grad_clip {grad_clip}"
        )));
    }
    let num_params = layer_widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
    let num_workers = shards.len();
    Ok(MlpProblem {
        shards,
        widths: layer_widths.to_vec(),
        batch_size,
        constants: ProblemConstants {
            lipschitz: None,
            sigma: 0.0,
            g_inf: grad_clip,
            dim: num_params,
            num_workers,
        },
    })
}

impl MlpProblem {
    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn shards(&self) -> &[LabeledDataset] {
        &self.shards
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Iterations per local pass over shard `worker`: `⌈shard size / batch⌉`.
    pub fn iters_per_epoch(&self, worker: usize) -> usize {
        self.shards[worker].len().div_ceil(self.batch_size)
    }

    fn check_params(&self, x: &ParamVector) -> Result<(), ProblemError> {
        if x.dim() != self.constants.dim {
            return Err(crate::numeric::NumericError::DimMismatch {
                left: x.dim(),
                right: self.constants.dim,
            }
            .into());
        }
        Ok(())
    }

    // Mean loss and gradient over `samples` (indices into `shard`).
    fn loss_and_grad(
        &self,
        params: &[f64],
        shard: &LabeledDataset,
        samples: &[usize],
        want_grad: bool,
    ) -> (f64, Vec<f64>) {
        let layers = self.widths.len() - 1;
        let mut grad = if want_grad {
            vec![0.0; params.len()]
        } else {
            Vec::new()
        };
        let mut total = 0.0;
        let scale = 1.0 / samples.len() as f64;

        // activations[l] is the input to layer l; pre[l] the pre-activation of layer l
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(layers + 1);
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers);

        for &s in samples {
            activations.clear();
            pre.clear();
            activations.push(shard.features()[s].clone());
            let mut offset = 0;
            for l in 0..layers {
                let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
                let w = &params[offset..offset + n_out * n_in];
                let b = &params[offset + n_out * n_in..offset + n_out * n_in + n_out];
                let input = &activations[l];
                let z: Vec<f64> = (0..n_out)
                    .map(|o| {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        b[o] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
                    })
                    .collect();
                let a = if l + 1 < layers {
                    z.iter().map(|v| v.max(0.0)).collect()
                } else {
                    z.clone()
                };
                pre.push(z);
                activations.push(a);
                offset += n_out * n_in + n_out;
            }

            let logits = &activations[layers];
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            let log_norm = max + sum_exp.ln();
            let label = shard.labels()[s];
            total += log_norm - logits[label];

            if !want_grad {
                continue;
            }
            // d loss / d logits = softmax − onehot
            let mut delta: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(c, z)| ((z - log_norm).exp() - f64::from(u8::from(c == label))) * scale)
                .collect();
            for l in (0..layers).rev() {
                let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
                offset -= n_out * n_in + n_out;
                let input = &activations[l];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut grad[offset + o * n_in..offset + (o + 1) * n_in];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                    grad[offset + n_out * n_in + o] += d;
                }
                if l == 0 {
                    break;
                }
                let w = &params[offset..offset + n_out * n_in];
                let below = &pre[l - 1];
                delta = (0..n_in)
                    .map(|i| {
                        if below[i] <= 0.0 {
                            return 0.0;
                        }
                        (0..n_out).map(|o| w[o * n_in + i] * delta[o]).sum()
                    })
                    .collect();
            }
        }
        (total * scale, grad)
    }
}

impl Problem for MlpProblem {
    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn loss(&self, worker: usize, x: &ParamVector) -> Result<f64, ProblemError> {
        check_worker(worker, self.constants.num_workers)?;
        self.check_params(x)?;
        let shard = &self.shards[worker];
        let all: Vec<usize> = (0..shard.len()).collect();
        Ok(self.loss_and_grad(x.as_slice(), shard, &all, false).0)
    }

    fn gradient(&self, worker: usize, x: &ParamVector) -> Result<ParamVector, ProblemError> {
        check_worker(worker, self.constants.num_workers)?;
        self.check_params(x)?;
        let shard = &self.shards[worker];
        let all: Vec<usize> = (0..shard.len()).collect();
        let (_, g) = self.loss_and_grad(x.as_slice(), shard, &all, true);
        Ok(ParamVector::from_raw(g))
    }

    /// Mini-batch gradient; the batch is drawn uniformly with replacement.
    /// A batch at least as large as the shard degenerates to the full shard.
    fn sample_gradient(
        &self,
        worker: usize,
        x: &ParamVector,
        rng: &mut RngStream,
    ) -> Result<ParamVector, ProblemError> {
        check_worker(worker, self.constants.num_workers)?;
        self.check_params(x)?;
        let shard = &self.shards[worker];
        let batch: Vec<usize> = if self.batch_size >= shard.len() {
            (0..shard.len()).collect()
        } else {
            (0..self.batch_size)
                .map(|_| rng.uniform_index(shard.len()))
                .collect()
        };
        let (_, g) = self.loss_and_grad(x.as_slice(), shard, &batch, true);
        Ok(ParamVector::from_raw(g))
    }

    /// He-normal weights, zero biases.
    fn default_initial_point(&self, rng: &mut RngStream) -> ParamVector {
        let mut params = Vec::with_capacity(self.constants.dim);
        for w in self.widths.windows(2) {
            let std = (2.0 / w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| std * rng.standard_normal()));
            params.extend(std::iter::repeat_n(0.0, w[1]));
        }
        ParamVector::from_raw(params)
    }
}
