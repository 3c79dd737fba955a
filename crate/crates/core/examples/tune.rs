//! Scratch harness for sizing training defaults: one full desk-scale run
//! per invocation, all knobs as key=value args. Not part of the test suite.

use std::time::Instant;

use snakeseg_core::mask::Mask;
use snakeseg_core::metrics;
use snakeseg_core::network::{
    predict_prob, train, DscNet, LossMode, NetworkConfig, TrainConfig,
};
use snakeseg_core::synth::{make_dataset, parity_split, SceneTemplate};

fn main() {
    let mut lr = 0.05;
    let mut loss = LossMode::Ce;
    let mut use_dsconv = true;
    let mut seed = 0u64;
    let mut epochs = 20usize;
    let mut fusion_p = 0.67;
    let mut topo_weight = 1.0;
    let mut warmup = 5usize;
    let mut patch: usize = 0;
    let mut ols = 1.0;
    let mut tpl = SceneTemplate::default();

    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').unwrap_or_else(|| panic!("want key=value, got {arg}"));
        match k {
            "lr" => lr = v.parse().unwrap(),
            "loss" => loss = if v == "tc" { LossMode::Tc } else { LossMode::Ce },
            "net" => use_dsconv = v != "baseline",
            "seed" => seed = v.parse().unwrap(),
            "epochs" => epochs = v.parse().unwrap(),
            "p" => fusion_p = v.parse().unwrap(),
            "tw" => topo_weight = v.parse().unwrap(),
            "warmup" => warmup = v.parse().unwrap(),
            "patch" => patch = v.parse().unwrap(),
            "ols" => ols = v.parse().unwrap(),
            "sigma" => tpl.noise_sigma = v.parse().unwrap(),
            "wmin" => tpl.width_min = v.parse().unwrap(),
            "wmax" => tpl.width_max = v.parse().unwrap(),
            "fg" => tpl.fg_intensity = v.parse().unwrap(),
            "bg" => tpl.bg_intensity = v.parse().unwrap(),
            "branch" => tpl.branch_prob = v.parse().unwrap(),
            "cmin" => tpl.curves_min = v.parse().unwrap(),
            "cmax" => tpl.curves_max = v.parse().unwrap(),
            other => panic!("unknown knob {other}"),
        }
    }
    let args: Vec<String> = std::env::args().skip(1).collect();
    println!("### {}", args.join(" "));

    let t0 = Instant::now();
    let items = make_dataset::<f32>(200, 42, &tpl).unwrap();
    let (train_idx, test_idx) = parity_split(items.len());
    let train_items: Vec<_> = train_idx.iter().map(|&i| items[i].clone()).collect();
    let test_items: Vec<_> = test_idx.iter().map(|&i| items[i].clone()).collect();

    let net_cfg = NetworkConfig { use_dsconv, fusion_p, ..NetworkConfig::default() };
    let mut rng: rand_chacha::ChaCha8Rng = rand::SeedableRng::seed_from_u64(seed);
    let mut net: DscNet<f32> = DscNet::new(&net_cfg, &mut rng).unwrap();
    let cfg = TrainConfig {
        lr,
        loss,
        seed,
        epochs,
        topo_weight,
        warmup_epochs: warmup,
        topo_patch: if patch == 0 { None } else { Some(patch) },
        offset_lr_scale: ols,
        ..TrainConfig::default()
    };

    let t1 = Instant::now();
    let log = train(&mut net, &train_items, &test_items, &cfg).unwrap();
    let train_secs = t1.elapsed().as_secs_f64();
    for e in &log {
        println!(
            "epoch {:2}  ce {:.4}  topo {:.4}  val_dice {:.4}  val_b0 {:.3}",
            e.epoch, e.loss_ce, e.loss_topo, e.val_dice, e.val_betti0_err
        );
    }

    let mut dice_sum = 0.0;
    let mut b0_sum = 0.0;
    let mut b1_sum = 0.0;
    for (image, label) in &test_items {
        let prob = predict_prob(&net, image).unwrap();
        let bits: Vec<bool> = prob.iter().map(|&p| p >= 0.5).collect();
        let pred = Mask::new(label.h(), label.w(), bits).unwrap();
        dice_sum += metrics::dice(&pred, label).unwrap();
        let (e0, e1) = metrics::betti_error(&pred, label).unwrap();
        b0_sum += e0 as f64;
        b1_sum += e1 as f64;
    }
    let n = test_items.len() as f64;
    println!(
        "FINAL [{}] dice {:.4}  b0err {:.3}  b1err {:.3}  train {:.1}s total {:.1}s",
        args.join(" "),
        dice_sum / n,
        b0_sum / n,
        b1_sum / n,
        train_secs,
        t0.elapsed().as_secs_f64()
    );
}
