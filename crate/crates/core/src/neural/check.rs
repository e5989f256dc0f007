//! Central-finite-difference gradient checker, the quality gate for every
//! analytic gradient in the stack.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{mse_loss, Model, Tensor4};
use crate::error::{invalid, Result};
use crate::scalar::{cast, to_f64, Scalar};

/// Compares analytic parameter gradients of `mse(model(input), target)`
/// against central finite differences on a random subset of at least
/// `n_coords` coordinates (or all of them, if fewer exist). Returns the
/// worst guarded relative error.
pub fn finite_difference_check<T: Scalar>(
    model: &Model<T>,
    input: &Tensor4<T>,
    target: &Tensor4<T>,
    epsilon: f64,
    n_coords: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid(format!("finite-difference epsilon must be > 0, got {epsilon}")));
    }
    if n_coords == 0 {
        return Err(invalid("finite-difference check needs at least one coordinate"));
    }

    let cache = model.forward_cached(input)?;
    let (_, up) = mse_loss(&cache.output, target)?;
    let analytic = model.backward(&cache, &up)?;

    // Flatten block sizes so a global coordinate picks (block, offset).
    let block_lens: Vec<usize> = model.param_blocks().iter().map(|b| b.len()).collect();
    let total: usize = block_lens.iter().sum();
    let mut coords: Vec<usize> = (0..total).collect();
    coords.shuffle(rng);
    coords.truncate(n_coords.min(total));

    let mut analytic_flat: Vec<f64> = Vec::with_capacity(total);
    for g in &analytic.layers {
        analytic_flat.extend(g.kernels.data().iter().map(|&v| to_f64(v)));
        analytic_flat.extend(g.biases.iter().map(|&v| to_f64(v)));
    }

    let mut worst = 0.0f64;
    for &coord in &coords {
        let numeric = {
            let plus = perturbed_loss(model, input, target, coord, epsilon)?;
            let minus = perturbed_loss(model, input, target, coord, -epsilon)?;
            (plus - minus) / (2.0 * epsilon)
        };
        let a = analytic_flat[coord];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

fn perturbed_loss<T: Scalar>(
    model: &Model<T>,
    input: &Tensor4<T>,
    target: &Tensor4<T>,
    coord: usize,
    delta: f64,
) -> Result<f64> {
    let mut m = model.clone();
    let mut remaining = coord;
    let mut done = false;
    m.apply(|block, _| {
        if done {
            return;
        }
        if remaining < block.len() {
            block[remaining] = cast::<T>(to_f64(block[remaining]) + delta);
            done = true;
        } else {
            remaining -= block.len();
        }
    });
    let out = m.forward(input)?;
    Ok(to_f64(mse_loss(&out, target)?.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Layer, LayerKind, LayerParams};
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        crate::rng::substream(seed, "check-test", 0)
    }

    fn random_tensor(shape: [usize; 4], r: &mut ChaCha8Rng) -> Tensor4<f64> {
        let data = (0..shape.iter().product::<usize>())
            .map(|_| r.gen::<f64>() - 0.5)
            .collect();
        Tensor4::from_vec(shape, data).unwrap()
    }

    #[test]
    fn linear_single_layer_model_checks_to_machine_precision() {
        let mut r = rng(1);
        let kernels = random_tensor([4, 3, 3, 3], &mut r);
        let model = Model::new(vec![Layer {
            kind: LayerKind::Conv,
            params: LayerParams::new(kernels, vec![0.1; 4], 1, 1).unwrap(),
            relu: false,
        }]);
        let x = random_tensor([1, 3, 6, 6], &mut r);
        let target = random_tensor([1, 4, 6, 6], &mut r);
        let err = finite_difference_check(&model, &x, &target, 1e-5, 300, &mut r).unwrap();
        assert!(err < 1e-8, "linear model error {err} should be < 1e-8");
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        let mut r = rng(2);
        let kernels = random_tensor([1, 1, 1, 1], &mut r);
        let model = Model::new(vec![Layer {
            kind: LayerKind::Conv,
            params: LayerParams::new(kernels, vec![0.0], 1, 0).unwrap(),
            relu: false,
        }]);
        let x = random_tensor([1, 1, 2, 2], &mut r);
        let t = random_tensor([1, 1, 2, 2], &mut r);
        assert!(finite_difference_check(&model, &x, &t, 0.0, 10, &mut r).is_err());
    }
}
