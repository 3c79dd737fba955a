//! Scratch micro-benchmark for the training step hot path.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snakeseg_core::conv::conv2d;
use snakeseg_core::network::{mask_to_label, train, DscNet, NetworkConfig, TrainConfig};
use snakeseg_core::ops;
use snakeseg_core::snake::{dsconv_forward, Axis, DsConvLayer};
use snakeseg_core::synth::{make_dataset, SceneTemplate};
use snakeseg_core::tape::Tape;
use snakeseg_core::tensor::Tensor;

fn timed<F: FnMut()>(label: &str, iters: usize, mut f: F) {
    let t0 = Instant::now();
    for _ in 0..iters {
        f();
    }
    println!("{label}: {:.2} ms/iter", t0.elapsed().as_secs_f64() * 1000.0 / iters as f64);
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x8: Tensor<f32> = Tensor::from_vec(
        &[1, 8, 64, 64],
        (0..8 * 4096).map(|i| ((i as f32) * 0.37).sin()).collect(),
    )
    .unwrap();

    let w = Tensor::<f32>::from_vec(&[8, 8, 3, 3], vec![0.05; 576]).unwrap().trainable();
    let b = Tensor::<f32>::zeros(&[8]).trainable();
    timed("conv2d 8->8 @64x64 fwd", 50, || {
        let mut tape = Tape::eval();
        let _ = conv2d(&mut tape, &x8, &w, &b, 1, 1).unwrap();
    });
    let x8t = x8.clone().trainable();
    timed("conv2d 8->8 @64x64 fwd+bwd", 50, || {
        let mut tape = Tape::new();
        let y = conv2d(&mut tape, &x8t, &w, &b, 1, 1).unwrap();
        let l = ops::sum(&mut tape, &y).unwrap();
        tape.backward(&l).unwrap();
    });

    let layer: DsConvLayer<f32> = DsConvLayer::new(8, 8, Axis::X, &mut rng);
    timed("dsconv 8->8 @64x64 fwd", 50, || {
        let mut tape = Tape::eval();
        let _ = dsconv_forward(&mut tape, &x8, &layer).unwrap();
    });
    timed("dsconv 8->8 @64x64 fwd+bwd", 50, || {
        let mut tape = Tape::new();
        let y = dsconv_forward(&mut tape, &x8t, &layer).unwrap();
        let l = ops::sum(&mut tape, &y).unwrap();
        tape.backward(&l).unwrap();
    });

    {
        use snakeseg_core::snake::{build_sampling_grid, bilinear_sample, path_contract, predict_offsets};
        let layer2: DsConvLayer<f32> = DsConvLayer::new(8, 8, Axis::X, &mut rng);
        timed("  offset head fwd+bwd", 50, || {
            let mut tape = Tape::new();
            let f = predict_offsets(&mut tape, &x8t, &layer2.offset_weight, &layer2.offset_bias).unwrap();
            let l = ops::sum(&mut tape, &f.delta).unwrap();
            tape.backward(&l).unwrap();
        });
        let mut tape0 = Tape::eval();
        let field0 = predict_offsets(&mut tape0, &x8t, &layer2.offset_weight, &layer2.offset_bias).unwrap();
        let field = snakeseg_core::snake::OffsetField::new(
            Tensor::from_vec(field0.delta.shape(), field0.delta.to_vec()).unwrap().trainable(),
            Axis::X,
        )
        .unwrap();
        timed("  grid fwd+bwd", 50, || {
            let mut tape = Tape::new();
            let g = build_sampling_grid(&mut tape, &field).unwrap();
            let l = ops::sum(&mut tape, &g.coords).unwrap();
            tape.backward(&l).unwrap();
        });
        let grid0 = build_sampling_grid(&mut tape0, &field).unwrap();
        let grid = snakeseg_core::snake::KernelSamplingGrid {
            coords: Tensor::from_vec(grid0.coords.shape(), grid0.coords.to_vec()).unwrap().trainable(),
            axis: Axis::X,
        };
        timed("  bilinear fwd", 50, || {
            let mut tape = Tape::eval();
            let _ = bilinear_sample(&mut tape, &x8t, &grid).unwrap();
        });
        timed("  bilinear fwd+bwd", 50, || {
            let mut tape = Tape::new();
            let s = bilinear_sample(&mut tape, &x8t, &grid).unwrap();
            let l = ops::sum(&mut tape, &s).unwrap();
            tape.backward(&l).unwrap();
        });
        let sampled = bilinear_sample(&mut Tape::eval(), &x8t, &grid).unwrap().trainable();
        timed("  contract fwd+bwd", 50, || {
            let mut tape = Tape::new();
            let y = path_contract(&mut tape, &sampled, &layer2.path_weight, &layer2.bias).unwrap();
            let l = ops::sum(&mut tape, &y).unwrap();
            tape.backward(&l).unwrap();
        });
    }

    let items = make_dataset::<f32>(4, 42, &SceneTemplate::default()).unwrap();
    let net_cfg = NetworkConfig::default();
    let net: DscNet<f32> = DscNet::new(&net_cfg, &mut rng).unwrap();
    let image = &items[0].0;
    timed("net fwd eval @64x64", 20, || {
        let mut tape = Tape::eval();
        let _ = net.forward_eval(&mut tape, image).unwrap();
    });
    let label = mask_to_label::<f32>(&items[0].1);
    let masks = net.sample_masks(&mut rng).unwrap();
    timed("net fwd+bce+bwd @64x64", 20, || {
        let mut tape = Tape::new();
        let logits = net.forward(&mut tape, image, &masks, true).unwrap();
        let l = ops::bce_with_logits(&mut tape, &logits, &label).unwrap();
        tape.backward(&l).unwrap();
        for p in net.params() {
            p.zero_grad();
        }
    });

    let t0 = Instant::now();
    let mut net2: DscNet<f32> = DscNet::new(&net_cfg, &mut rng).unwrap();
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    train(&mut net2, &items[..2], &items[2..], &cfg).unwrap();
    println!("1 epoch / 2 items + 2 val: {:.2} ms", t0.elapsed().as_secs_f64() * 1000.0);
}
