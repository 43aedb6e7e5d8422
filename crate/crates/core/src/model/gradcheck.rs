use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::network::{cross_entropy, loss_and_grad_with, ModelParams, Workspace, TENSOR_NAMES};
use super::ModelError;
use crate::csi::ActivityLabel;

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: &'static str,
    pub checked: usize,
    /// Coordinates dropped because every probe step crossed a ReLU or
    /// max-pool boundary.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn min_checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).min().unwrap_or(0)
    }
}

/// `|a − n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

const MAX_HALVINGS: usize = 10;

fn probe(
    ws: &mut Workspace,
    params: &ModelParams,
    batch: &[ArrayView2<'_, f64>],
    labels: &[ActivityLabel],
    pattern: &mut Vec<u32>,
) -> Result<f64, ModelError> {
    pattern.clear();
    let mut loss = 0.0;
    for (x, &label) in batch.iter().zip(labels) {
        loss += cross_entropy(&ws.forward(params, x.view())?, label);
        ws.activation_pattern(pattern);
    }
    Ok(loss / batch.len() as f64)
}

/// Compares reverse-mode gradients with central differences on up to
/// `coords_per_tensor` random coordinates of every tensor (all of them when
/// the tensor is smaller). Coordinate `θ` is perturbed by
/// `±step·max(1, |θ|)`; the step is halved while the perturbation moves any
/// ReLU or pooling decision, and a coordinate that still straddles one is
/// replaced by another.
pub fn gradient_check(
    params: &ModelParams,
    batch: &[ArrayView2<'_, f64>],
    labels: &[ActivityLabel],
    coords_per_tensor: usize,
    step: f64,
    seed: u64,
) -> Result<GradCheckReport, ModelError> {
    let mut ws = Workspace::new();
    let (_, grads) = loss_and_grad_with(&mut ws, params, batch, labels)?;
    let mut base = Vec::new();
    probe(&mut ws, params, batch, labels, &mut base)?;
    let (mut up_pattern, mut down_pattern) = (Vec::new(), Vec::new());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturbed = params.clone();
    let mut tensors = Vec::new();
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        let mut order: Vec<usize> = (0..params.tensors()[t].len()).collect();
        order.shuffle(&mut rng);
        let mut check = TensorCheck {
            name,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst_index: 0,
        };
        for &i in &order {
            if check.checked == coords_per_tensor {
                break;
            }
            let theta = params.tensors()[t][i];
            let mut h = step * theta.abs().max(1.0);
            let mut numeric = None;
            for _ in 0..=MAX_HALVINGS {
                perturbed.tensors_mut()[t][i] = theta + h;
                let up = probe(&mut ws, &perturbed, batch, labels, &mut up_pattern)?;
                perturbed.tensors_mut()[t][i] = theta - h;
                let down = probe(&mut ws, &perturbed, batch, labels, &mut down_pattern)?;
                perturbed.tensors_mut()[t][i] = theta;
                if up_pattern == base && down_pattern == base {
                    numeric = Some((up - down) / (2.0 * h));
                    break;
                }
                h /= 2.0;
            }
            let Some(numeric) = numeric else {
                check.skipped += 1;
                continue;
            };
            check.checked += 1;
            let err = relative_error(grads.tensors()[t][i], numeric);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
            }
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { tensors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::INPUT_SHAPE;
    use ndarray::Array2;
    use rand::Rng;

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<Array2<f64>> = (0..4)
            .map(|_| Array2::from_shape_fn(INPUT_SHAPE, |_| rng.gen_range(-2.0..2.0)))
            .collect();
        let views: Vec<_> = xs.iter().map(|x| x.view()).collect();
        let labels = [
            ActivityLabel::NoPresence,
            ActivityLabel::Walking,
            ActivityLabel::WalkingArmWaving,
            ActivityLabel::Walking,
        ];
        let params = ModelParams::init(104);
        let report = gradient_check(&params, &views, &labels, 20, 1e-3, 4).unwrap();
        for (t, tensor) in report.tensors.iter().zip(params.tensors()) {
            assert!(t.checked == 20 || t.checked + t.skipped == tensor.len(), "{t:?}");
            assert!(t.max_rel_error <= 1e-4, "{t:?}");
        }
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-18);
    }
}
