//! Toy encoder-decoder segmentation network built from fusion blocks
//! (standard conv + serpentine conv branches), 2x2 max-pool downsampling,
//! nearest-upsample + conv decoding with additive skips, and a 1x1 logit
//! head. Includes the SGD training loop and the DSCK checkpoint container.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::conv2d;
use crate::error::{Error, Result};
use crate::fusion::{
    build_templates, fuse, sample_drop_mask, DropMask, FusionEvalMode, TemplateBranch,
};
use crate::mask::Mask;
use crate::metrics;
use crate::ops;
use crate::optim::Sgd;
use crate::snake::{export_kernel_trace, Axis, DsConvLayer};
use crate::tape::Tape;
use crate::tensor::{Element, Tensor};
use crate::topo_loss::{tc_loss, TopoOptions};

/// Architecture and fusion hyperparameters. `fusion_m` selects a prefix of
/// {standard conv, snake-x, snake-y}; `use_dsconv=false` collapses every
/// block to the single standard branch (the ablation baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub fusion_m: usize,
    pub fusion_p: f64,
    pub use_dsconv: bool,
    pub eval_mode: FusionEvalMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            levels: 2,
            base_channels: 8,
            fusion_m: 3,
            fusion_p: 0.67,
            use_dsconv: true,
            eval_mode: FusionEvalMode::Expectation,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.base_channels == 0 {
            return Err(Error::invalid("network config", "levels and base_channels must be >= 1"));
        }
        if !(1..=3).contains(&self.fusion_m) {
            return Err(Error::invalid("network config", "fusion_m must be 1..=3"));
        }
        if !(self.fusion_p > 0.0 && self.fusion_p <= 1.0) {
            return Err(Error::invalid("network config", "fusion_p must lie in (0,1]"));
        }
        let m = if self.use_dsconv { self.fusion_m } else { 1 };
        if m > 1 && (m as f64 * self.fusion_p).floor() < 1.0 {
            return Err(Error::invalid(
                "network config",
                "fusion_p keeps zero templates (floor(m*p) == 0)",
            ));
        }
        Ok(())
    }
}

/// One encoder/decoder stage: parallel template branches fused into a
/// single map, then ReLU.
pub struct FusionBlock<T: Element = f32> {
    name: String,
    branches: Vec<TemplateBranch<T>>,
}

impl<T: Element> FusionBlock<T> {
    fn new<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        m: usize,
        use_dsconv: bool,
        rng: &mut R,
    ) -> Self {
        let mut branches: Vec<TemplateBranch<T>> = vec![TemplateBranch::conv(cin, cout, rng)];
        if use_dsconv {
            if m >= 2 {
                branches.push(TemplateBranch::Snake(DsConvLayer::new(cin, cout, Axis::X, rng)));
            }
            if m >= 3 {
                branches.push(TemplateBranch::Snake(DsConvLayer::new(cin, cout, Axis::Y, rng)));
            }
        }
        // sum fusion of m like-initialized branches has m times the output
        // variance of one branch; rescale so the fused map matches a single
        // conv at init (biases and the zero offset heads are unaffected)
        let scale = 1.0 / (branches.len() as f64).sqrt();
        if branches.len() > 1 {
            for branch in &branches {
                for p in branch.params() {
                    for v in p.data_mut().iter_mut() {
                        *v = T::from_f64(v.as_f64() * scale);
                    }
                }
            }
        }
        Self { name: name.to_string(), branches }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn m(&self) -> usize {
        self.branches.len()
    }

    pub fn branches(&self) -> &[TemplateBranch<T>] {
        &self.branches
    }

    fn forward(
        &self,
        tape: &mut Tape<T>,
        input: &Tensor<T>,
        mask: Option<&DropMask>,
        training: bool,
    ) -> Result<Tensor<T>> {
        let bank = build_templates(tape, input, &self.branches)?;
        // single-branch blocks skip dropping entirely; there is nothing to
        // subsample and floor(1*p) would starve the sum
        let mask = if self.m() == 1 { None } else { mask };
        let fused = fuse(tape, &bank, mask, training && mask.is_some())?;
        ops::relu(tape, &fused)
    }

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (i, branch) in self.branches.iter().enumerate() {
            let p = format!("{}.t{i}", self.name);
            match branch {
                TemplateBranch::Conv { weight, bias } => {
                    out.push((format!("{p}.conv.weight"), weight.clone()));
                    out.push((format!("{p}.conv.bias"), bias.clone()));
                }
                TemplateBranch::Snake(layer) => {
                    out.push((format!("{p}.offset.weight"), layer.offset_weight.clone()));
                    out.push((format!("{p}.offset.bias"), layer.offset_bias.clone()));
                    out.push((format!("{p}.path.weight"), layer.path_weight.clone()));
                    out.push((format!("{p}.path.bias"), layer.bias.clone()));
                }
            }
        }
        out
    }
}

struct ConvLayer<T: Element> {
    name: String,
    weight: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Element> ConvLayer<T> {
    fn new<R: Rng>(name: &str, cin: usize, cout: usize, k: usize, rng: &mut R) -> Self {
        let bound = (1.0 / (cin * k * k) as f64).sqrt();
        let w: Vec<T> = (0..cout * cin * k * k)
            .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
            .collect();
        Self {
            name: name.to_string(),
            weight: Tensor::from_vec(&[cout, cin, k, k], w).expect("sized above").trainable(),
            bias: Tensor::zeros(&[cout]).trainable(),
        }
    }

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        vec![
            (format!("{}.weight", self.name), self.weight.clone()),
            (format!("{}.bias", self.name), self.bias.clone()),
        ]
    }
}

/// U-shaped segmentation model: logits keep the input's spatial size.
pub struct DscNet<T: Element = f32> {
    config: NetworkConfig,
    enc: Vec<FusionBlock<T>>,
    mid: FusionBlock<T>,
    up: Vec<ConvLayer<T>>,
    dec: Vec<FusionBlock<T>>,
    head: ConvLayer<T>,
    saved_masks: Vec<Option<DropMask>>,
}

impl<T: Element> DscNet<T> {
    pub fn new<R: Rng>(config: &NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (levels, base, m, ds) =
            (config.levels, config.base_channels, config.fusion_m, config.use_dsconv);
        let mut enc = Vec::with_capacity(levels);
        for l in 0..levels {
            let cin = if l == 0 { 1 } else { base << (l - 1) };
            enc.push(FusionBlock::new(&format!("enc{l}"), cin, base << l, m, ds, rng));
        }
        let mid = FusionBlock::new("mid", base << (levels - 1), base << levels, m, ds, rng);
        let mut up = Vec::with_capacity(levels);
        let mut dec = Vec::with_capacity(levels);
        for l in 0..levels {
            up.push(ConvLayer::new(&format!("up{l}"), base << (l + 1), base << l, 3, rng));
            dec.push(FusionBlock::new(&format!("dec{l}"), base << l, base << l, m, ds, rng));
        }
        let head = ConvLayer::new("head", base, 1, 1, rng);
        let n_blocks = 2 * levels + 1;
        Ok(Self { config: config.clone(), enc, mid, up, dec, head, saved_masks: vec![None; n_blocks] })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Fusion blocks in forward order: enc0..enc{L-1}, mid, dec{L-1}..dec0.
    pub fn fusion_blocks(&self) -> Vec<&FusionBlock<T>> {
        let mut v: Vec<&FusionBlock<T>> = self.enc.iter().collect();
        v.push(&self.mid);
        v.extend(self.dec.iter().rev());
        v
    }

    /// One drop mask per fusion block (None for single-branch blocks).
    pub fn sample_masks<R: Rng>(&self, rng: &mut R) -> Result<Vec<Option<DropMask>>> {
        self.fusion_blocks()
            .iter()
            .map(|b| {
                if b.m() == 1 {
                    Ok(None)
                } else {
                    sample_drop_mask(b.m(), self.config.fusion_p, rng).map(Some)
                }
            })
            .collect()
    }

    /// Masks used at inference under the configured evaluation mode.
    pub fn eval_masks(&self) -> Vec<Option<DropMask>> {
        match self.config.eval_mode {
            FusionEvalMode::Expectation => vec![None; self.saved_masks.len()],
            FusionEvalMode::SavedMask => self.saved_masks.clone(),
        }
    }

    pub fn saved_masks(&self) -> &[Option<DropMask>] {
        &self.saved_masks
    }

    pub fn set_saved_masks(&mut self, masks: Vec<Option<DropMask>>) -> Result<()> {
        if masks.len() != self.saved_masks.len() {
            return Err(Error::invalid(
                "saved masks",
                format!("{} masks for {} blocks", masks.len(), self.saved_masks.len()),
            ));
        }
        for (mask, block) in masks.iter().zip(self.fusion_blocks()) {
            if let Some(m) = mask {
                if m.m() != block.m() {
                    return Err(Error::invalid(
                        "saved masks",
                        format!("mask over {} templates for block {}", m.m(), block.name()),
                    ));
                }
            }
        }
        self.saved_masks = masks;
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        image: &Tensor<T>,
        masks: &[Option<DropMask>],
        training: bool,
    ) -> Result<Tensor<T>> {
        self.forward_observed(tape, image, masks, training, &mut |_, _| {})
    }

    /// Forward pass in evaluation mode under the configured fusion mode.
    pub fn forward_eval(&self, tape: &mut Tape<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(tape, image, &self.eval_masks(), false)
    }

    /// Forward pass that reports every fusion block's input to `observe`
    /// (kernel-trace export and diagnostics hook).
    pub fn forward_observed(
        &self,
        tape: &mut Tape<T>,
        image: &Tensor<T>,
        masks: &[Option<DropMask>],
        training: bool,
        observe: &mut dyn FnMut(&str, &Tensor<T>),
    ) -> Result<Tensor<T>> {
        let sh = image.shape();
        if sh.len() != 4 || sh[1] != 1 {
            return Err(Error::shape("network forward", format!("want [B,1,H,W], got {sh:?}")));
        }
        let div = 1usize << self.config.levels;
        if sh[2] % div != 0 || sh[3] % div != 0 || sh[2] == 0 || sh[3] == 0 {
            return Err(Error::shape(
                "network forward",
                format!("{}x{} not divisible by 2^levels = {div}", sh[2], sh[3]),
            ));
        }
        if masks.len() != 2 * self.config.levels + 1 {
            return Err(Error::invalid(
                "network forward",
                format!("{} masks for {} fusion blocks", masks.len(), 2 * self.config.levels + 1),
            ));
        }

        let mut mi = 0;
        let next_mask = |mi: &mut usize| {
            let m = masks[*mi].as_ref();
            *mi += 1;
            m
        };
        let mut x = image.clone();
        let mut skips = Vec::with_capacity(self.config.levels);
        for block in &self.enc {
            observe(block.name(), &x);
            x = block.forward(tape, &x, next_mask(&mut mi), training)?;
            skips.push(x.clone());
            x = ops::max_pool2(tape, &x)?;
        }
        observe(self.mid.name(), &x);
        x = self.mid.forward(tape, &x, next_mask(&mut mi), training)?;
        for l in (0..self.config.levels).rev() {
            x = ops::upsample_nearest2(tape, &x)?;
            x = conv2d(tape, &x, &self.up[l].weight, &self.up[l].bias, 1, 1)?;
            x = ops::add(tape, &x, &skips[l])?;
            observe(self.dec[l].name(), &x);
            x = self.dec[l].forward(tape, &x, next_mask(&mut mi), training)?;
        }
        conv2d(tape, &x, &self.head.weight, &self.head.bias, 1, 0)
    }

    pub fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for b in &self.enc {
            out.extend(b.named_params());
        }
        out.extend(self.mid.named_params());
        for l in (0..self.config.levels).rev() {
            out.extend(self.up[l].named_params());
            out.extend(self.dec[l].named_params());
        }
        out.extend(self.head.named_params());
        out
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Per snake branch: the 9 kernel taps (c, x, y) the model samples at
    /// the given image point, scaled into each block's resolution.
    pub fn kernel_traces(
        &self,
        image: &Tensor<T>,
        point: (usize, usize),
    ) -> Result<Vec<(String, Vec<(i32, f64, f64)>)>> {
        let sh = image.shape();
        if sh.len() != 4 || sh[0] != 1 || sh[1] != 1 {
            return Err(Error::shape("kernel_traces", format!("want [1,1,H,W], got {sh:?}")));
        }
        let (h, w) = (sh[2], sh[3]);
        if point.0 >= w || point.1 >= h {
            return Err(Error::invalid(
                "kernel_traces",
                format!("point ({}, {}) outside {w}x{h}", point.0, point.1),
            ));
        }
        let mut inputs: Vec<(String, Tensor<T>)> = Vec::new();
        let mut tape = Tape::eval();
        let masks = vec![None; 2 * self.config.levels + 1];
        self.forward_observed(&mut tape, image, &masks, false, &mut |name, input| {
            inputs.push((name.to_string(), input.clone()));
        })?;

        let mut traces = Vec::new();
        let blocks = self.fusion_blocks();
        for (name, input) in &inputs {
            let block = blocks
                .iter()
                .find(|b| b.name() == name)
                .expect("observer names come from the block list");
            let scale = h / input.shape()[2];
            let scaled = (point.0 / scale, point.1 / scale);
            for (i, branch) in block.branches().iter().enumerate() {
                if let TemplateBranch::Snake(layer) = branch {
                    let axis = match layer.axis {
                        Axis::X => "x",
                        Axis::Y => "y",
                    };
                    let rows = export_kernel_trace(input, layer, scaled)?;
                    traces.push((format!("{name}.t{i}.{axis}"), rows));
                }
            }
        }
        Ok(traces)
    }

    /// Serialize config, saved drop masks, and all parameters ("DSCK":
    /// magic, u32 manifest length, manifest text, then one raw tensor
    /// record per manifest `tensor=` line in order).
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut manifest = String::new();
        manifest.push_str("format=dsck1\n");
        manifest.push_str(&format!("levels={}\n", self.config.levels));
        manifest.push_str(&format!("base_channels={}\n", self.config.base_channels));
        manifest.push_str(&format!("fusion_m={}\n", self.config.fusion_m));
        manifest.push_str(&format!("fusion_p={}\n", self.config.fusion_p));
        manifest.push_str(&format!("use_dsconv={}\n", self.config.use_dsconv));
        manifest.push_str(&format!("eval_mode={}\n", self.config.eval_mode.as_str()));
        for (mask, block) in self.saved_masks.iter().zip(self.fusion_blocks()) {
            if let Some(m) = mask {
                let bits: String = m.keep.iter().map(|&k| if k { '1' } else { '0' }).collect();
                manifest.push_str(&format!("saved_mask.{}={bits}:{}\n", block.name(), m.p));
            }
        }
        let named = self.named_params();
        for (name, _) in &named {
            manifest.push_str(&format!("tensor={name}\n"));
        }

        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"DSCK");
        bytes.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        bytes.extend_from_slice(manifest.as_bytes());
        for (_, tensor) in &named {
            tensor.write_dstn(&mut bytes)?;
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let bad = |detail: String| Error::format("DSCK", detail);
        if bytes.len() < 8 || &bytes[..4] != b"DSCK" {
            return Err(bad("missing DSCK magic".into()));
        }
        let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + mlen {
            return Err(bad("truncated manifest".into()));
        }
        let manifest = std::str::from_utf8(&bytes[8..8 + mlen])
            .map_err(|_| bad("manifest is not UTF-8".into()))?;

        let mut keys: HashMap<&str, &str> = HashMap::new();
        let mut tensor_names = Vec::new();
        let mut mask_lines: Vec<(&str, &str)> = Vec::new();
        for line in manifest.lines() {
            let Some((k, v)) = line.split_once('=') else {
                return Err(bad(format!("manifest line without '=': {line}")));
            };
            if k == "tensor" {
                tensor_names.push(v);
            } else if let Some(block) = k.strip_prefix("saved_mask.") {
                mask_lines.push((block, v));
            } else {
                keys.insert(k, v);
            }
        }
        let get = |k: &str| keys.get(k).copied().ok_or_else(|| bad(format!("missing key {k}")));
        if get("format")? != "dsck1" {
            return Err(bad("unsupported format version".into()));
        }
        let parse_usize =
            |k: &str, v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad integer {k}={v}")));
        let config = NetworkConfig {
            levels: parse_usize("levels", get("levels")?)?,
            base_channels: parse_usize("base_channels", get("base_channels")?)?,
            fusion_m: parse_usize("fusion_m", get("fusion_m")?)?,
            fusion_p: get("fusion_p")?
                .parse::<f64>()
                .map_err(|_| bad("bad float fusion_p".into()))?,
            use_dsconv: match get("use_dsconv")? {
                "true" => true,
                "false" => false,
                other => return Err(bad(format!("bad bool use_dsconv={other}"))),
            },
            eval_mode: FusionEvalMode::parse(get("eval_mode")?)?,
        };

        // weights get overwritten below; the init rng only shapes the net
        let mut net = DscNet::new(&config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let named = net.named_params();
        if tensor_names.len() != named.len() {
            return Err(bad(format!(
                "{} tensors in manifest, model has {}",
                tensor_names.len(),
                named.len()
            )));
        }
        let by_name: HashMap<&str, &Tensor<T>> =
            named.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut cursor = std::io::Cursor::new(&bytes[8 + mlen..]);
        for name in tensor_names {
            let loaded: Tensor<T> = Tensor::read_dstn(&mut cursor)?;
            let param = by_name
                .get(name)
                .ok_or_else(|| bad(format!("unknown tensor {name}")))?;
            if loaded.shape() != param.shape() {
                return Err(bad(format!(
                    "tensor {name}: stored {:?}, model wants {:?}",
                    loaded.shape(),
                    param.shape()
                )));
            }
            param.data_mut().copy_from_slice(&loaded.data());
        }

        let mut saved = vec![None; 2 * config.levels + 1];
        let block_names: Vec<String> =
            net.fusion_blocks().iter().map(|b| b.name().to_string()).collect();
        for (block, val) in mask_lines {
            let idx = block_names
                .iter()
                .position(|n| n == block)
                .ok_or_else(|| bad(format!("saved mask for unknown block {block}")))?;
            let Some((bits, p)) = val.split_once(':') else {
                return Err(bad(format!("bad saved mask value {val}")));
            };
            let keep: Vec<bool> = bits.chars().map(|c| c == '1').collect();
            let p = p.parse::<f64>().map_err(|_| bad("bad saved mask p".into()))?;
            saved[idx] = Some(DropMask { keep, p });
        }
        net.set_saved_masks(saved)?;
        Ok(net)
    }
}

/// Which training objective drives the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Ce,
    Tc,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Ce => "ce",
            LossMode::Tc => "tc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(LossMode::Ce),
            "tc" => Ok(LossMode::Tc),
            other => Err(Error::invalid("loss mode", format!("expected ce|tc, got {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub loss: LossMode,
    pub topo_weight: f64,
    /// Epochs trained with plain cross-entropy before the topological term
    /// joins (TC mode only).
    pub warmup_epochs: usize,
    pub topo_patch: Option<usize>,
    /// Learning-rate multiplier for the deformation-offset heads, applied by
    /// scaling their gradients (equivalent under momentum SGD). Offset
    /// predictors are conventionally trained slower than feature weights.
    pub offset_lr_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 0.05,
            momentum: 0.9,
            loss: LossMode::Ce,
            topo_weight: 1.0,
            warmup_epochs: 5,
            topo_patch: None,
            offset_lr_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_topo: f64,
    pub val_dice: f64,
    pub val_betti0_err: f64,
}

pub fn training_log_csv(log: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss_ce,loss_topo,val_dice,val_betti0_err\n");
    for e in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            e.epoch, e.loss_ce, e.loss_topo, e.val_dice, e.val_betti0_err
        ));
    }
    out
}

/// Binary mask as a [1,1,H,W] label tensor.
pub fn mask_to_label<T: Element>(mask: &Mask) -> Tensor<T> {
    let data = mask
        .data()
        .iter()
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    Tensor::from_vec(&[1, 1, mask.h(), mask.w()], data).expect("mask extents are positive")
}

/// Evaluation-mode class probabilities for one [1,1,H,W] image, row-major.
pub fn predict_prob<T: Element>(model: &DscNet<T>, image: &Tensor<T>) -> Result<Vec<f64>> {
    let mut tape = Tape::eval();
    let logits = model.forward_eval(&mut tape, image)?;
    Ok(logits
        .to_f64_vec()
        .iter()
        .map(|z| 1.0 / (1.0 + (-z).exp()))
        .collect())
}

fn scalar<T: Element>(t: &Tensor<T>) -> f64 {
    t.data()[0].as_f64()
}

/// SGD training over single-image steps with per-step template drop masks.
/// Logs one row per epoch; the final step's masks are recorded on the model
/// for saved-mask evaluation. Aborts with a diagnostic when the loss stops
/// being finite.
pub fn train<T: Element>(
    model: &mut DscNet<T>,
    train_items: &[(Tensor<T>, Mask)],
    val_items: &[(Tensor<T>, Mask)],
    cfg: &TrainConfig,
) -> Result<Vec<EpochStats>> {
    if train_items.is_empty() || val_items.is_empty() {
        return Err(Error::invalid("train", "train and validation sets must be nonempty"));
    }
    if cfg.epochs == 0 {
        return Err(Error::invalid("train", "epochs must be >= 1"));
    }
    if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
        return Err(Error::invalid("train", "lr must be finite and positive"));
    }
    if !(cfg.topo_weight.is_finite() && cfg.topo_weight >= 0.0) {
        return Err(Error::invalid("train", "topo_weight must be finite and >= 0"));
    }
    if !(cfg.offset_lr_scale.is_finite() && cfg.offset_lr_scale > 0.0) {
        return Err(Error::invalid("train", "offset_lr_scale must be finite and positive"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = model.params();
    let offset_params: Vec<Tensor<T>> = model
        .named_params()
        .into_iter()
        .filter(|(name, _)| name.contains(".offset."))
        .map(|(_, p)| p)
        .collect();
    let mut sgd = Sgd::new(cfg.lr, cfg.momentum)?;
    let labels: Vec<Tensor<T>> = train_items.iter().map(|(_, m)| mask_to_label(m)).collect();
    let topo_opts = TopoOptions { patch: cfg.topo_patch };

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut last_masks: Option<Vec<Option<DropMask>>> = None;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        order.shuffle(&mut rng);
        let mut ce_sum = 0.0;
        let mut topo_sum = 0.0;
        for &i in &order {
            let masks = model.sample_masks(&mut rng)?;
            let mut tape = Tape::new();
            let use_topo =
                cfg.loss == LossMode::Tc && epoch >= cfg.warmup_epochs && cfg.topo_weight > 0.0;
            let step = (|| {
                let logits = model.forward(&mut tape, &train_items[i].0, &masks, true)?;
                if use_topo {
                    let l = tc_loss(&mut tape, &logits, &labels[i], cfg.topo_weight, &topo_opts)?;
                    let (ce_v, topo_v) = (scalar(&l.ce), scalar(&l.topo));
                    Ok((l.total, ce_v, topo_v))
                } else {
                    let ce = ops::bce_with_logits(&mut tape, &logits, &labels[i])?;
                    let ce_v = scalar(&ce);
                    Ok((ce, ce_v, 0.0))
                }
            })();
            let (total, ce_v, topo_v) = match step {
                Ok(v) => v,
                // exploded weights surface as non-finite activations before
                // any loss value exists; report them as divergence too
                Err(Error::NonFinite { op }) => {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite value inside {op} on item {i}"),
                    });
                }
                Err(e) => return Err(e),
            };
            let total_v = scalar(&total);
            if !total_v.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: format!("loss {total_v} on item {i} (ce {ce_v}, topo {topo_v})"),
                });
            }
            tape.backward(&total)?;
            if cfg.offset_lr_scale != 1.0 {
                for p in &offset_params {
                    p.scale_grad(cfg.offset_lr_scale);
                }
            }
            sgd.step(&params)?;
            for p in &params {
                p.zero_grad();
            }
            ce_sum += ce_v;
            topo_sum += topo_v;
            last_masks = Some(masks);
        }

        let mut dice_sum = 0.0;
        let mut b0_sum = 0.0;
        for (image, label) in val_items {
            let prob = match predict_prob(model, image) {
                Ok(p) => p,
                Err(Error::NonFinite { op }) => {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite value inside {op} during validation"),
                    });
                }
                Err(e) => return Err(e),
            };
            let bits = prob.iter().map(|&p| p >= metrics::PRED_THRESHOLD).collect();
            let pred = Mask::new(label.h(), label.w(), bits)?;
            dice_sum += metrics::dice(&pred, label)?;
            b0_sum += metrics::betti_error(&pred, label)?.0 as f64;
        }
        log.push(EpochStats {
            epoch,
            loss_ce: ce_sum / train_items.len() as f64,
            loss_topo: topo_sum / train_items.len() as f64,
            val_dice: dice_sum / val_items.len() as f64,
            val_betti0_err: b0_sum / val_items.len() as f64,
        });
    }
    if let Some(masks) = last_masks {
        model.set_saved_masks(masks)?;
    }
    Ok(log)
}
