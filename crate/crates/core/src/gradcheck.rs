//! Central finite-difference gradient verification. Runs entirely through
//! forward evaluations, so it is independent of the backward implementations
//! it checks. Intended for use with `f64` tensors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::snake::{
    build_sampling_grid, min_integer_margin, predict_offsets, Axis, DsConvLayer, KERNEL_SIZE,
};
use crate::tape::Tape;
use crate::tensor::{Element, Tensor};

/// Central finite differences of `eval` w.r.t. every element of `param`.
/// `eval` must recompute the scalar objective from current tensor contents.
pub fn finite_diff_grad<T: Element, F: FnMut() -> f64>(param: &Tensor<T>, mut eval: F, eps: f64) -> Vec<f64> {
    let n = param.numel();
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let orig = param.data()[i];
        param.data_mut()[i] = orig + T::from_f64(eps);
        let plus = eval();
        param.data_mut()[i] = orig - T::from_f64(eps);
        let minus = eval();
        param.data_mut()[i] = orig;
        grads.push((plus - minus) / (2.0 * eps));
    }
    grads
}

/// Draws a random serpentine-conv layer (random axis, offset head, and path
/// weights) plus a random input whose sampling grid keeps every live off-axis
/// coordinate at least `margin` from the integer lattice, where the bilinear
/// hat function has kinks. Finite differences probed with a step below the
/// margin then never straddle a kink. Rejected draws advance a counter mixed
/// into the rng stream, so the construction is deterministic per seed.
pub fn draw_kink_free_dsconv(
    seed: u64,
    (cin, cout, h, w): (usize, usize, usize, usize),
    margin: f64,
) -> (DsConvLayer<f64>, Tensor<f64>) {
    for attempt in 0..10_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let axis = if rng.gen_bool(0.5) { Axis::X } else { Axis::Y };
        let mut layer = DsConvLayer::<f64>::new(cin, cout, axis, &mut rng);
        let ow: Vec<f64> = (0..layer.offset_weight.numel()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let ob: Vec<f64> = (0..KERNEL_SIZE).map(|_| rng.gen_range(-0.5..0.5)).collect();
        layer.offset_weight = Tensor::from_vec(&[KERNEL_SIZE, cin, 3, 3], ow).unwrap().trainable();
        layer.offset_bias = Tensor::from_vec(&[KERNEL_SIZE], ob).unwrap().trainable();
        let x_data: Vec<f64> = (0..cin * h * w).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let x = Tensor::from_vec(&[1, cin, h, w], x_data).unwrap().trainable();
        let mut tape = Tape::eval();
        let mut field = predict_offsets(&mut tape, &x, &layer.offset_weight, &layer.offset_bias)
            .expect("head shapes are valid by construction");
        field.axis = layer.axis;
        let grid = build_sampling_grid(&mut tape, &field).expect("field shape is valid");
        if min_integer_margin(&grid, (h, w)) >= margin {
            return (layer, x);
        }
    }
    panic!("no kink-free draw found for seed {}", seed);
}

/// Largest relative disagreement between analytic and numeric gradients.
/// The denominator is floored so that near-zero pairs compare absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let denom = a.abs().max(n.abs()).max(1e-6);
        let rel = (a - n).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
