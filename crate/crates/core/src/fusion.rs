//! Multi-template feature fusion. Several branches (a plain 3x3 conv and the
//! two serpentine variants by default) produce same-shaped feature maps; in
//! training a uniformly random subset of exactly floor(m*p) templates is kept
//! and their sum is scaled by m/kept so its expectation equals the plain
//! full sum used at evaluation time.

use rand::Rng;

use crate::conv::conv2d;
use crate::error::{Error, Result};
use crate::ops::tensor_of;
use crate::snake::{dsconv_forward, DsConvLayer};
use crate::tape::Tape;
use crate::tensor::{Element, Tensor};

/// One fusion branch: a zero-padded standard 3x3 convolution or a serpentine
/// convolution layer.
pub enum TemplateBranch<T: Element = f32> {
    Conv { weight: Tensor<T>, bias: Tensor<T> },
    Snake(DsConvLayer<T>),
}

impl<T: Element> TemplateBranch<T> {
    pub fn conv<R: Rng>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let bound = (1.0 / (cin * 9) as f64).sqrt();
        let w: Vec<T> = (0..cout * cin * 9).map(|_| T::from_f64(rng.gen_range(-bound..=bound))).collect();
        TemplateBranch::Conv {
            weight: Tensor::from_vec(&[cout, cin, 3, 3], w).expect("init is finite").trainable(),
            bias: Tensor::zeros(&[cout]).trainable(),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            TemplateBranch::Conv { weight, bias } => conv2d(tape, input, weight, bias, 1, 1),
            TemplateBranch::Snake(layer) => dsconv_forward(tape, input, layer),
        }
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        match self {
            TemplateBranch::Conv { weight, bias } => vec![weight.clone(), bias.clone()],
            TemplateBranch::Snake(layer) => layer.params(),
        }
    }
}

/// m same-shaped feature maps produced by parallel branches.
pub struct TemplateBank<T: Element = f32> {
    templates: Vec<Tensor<T>>,
}

impl<T: Element> TemplateBank<T> {
    pub fn new(templates: Vec<Tensor<T>>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::invalid("template_bank", "need at least one template"));
        }
        let sh = templates[0].shape().to_vec();
        for t in &templates[1..] {
            if t.shape() != sh {
                return Err(Error::shape(
                    "template_bank",
                    format!("templates disagree: {:?} vs {:?}", sh, t.shape()),
                ));
            }
        }
        Ok(TemplateBank { templates })
    }

    pub fn m(&self) -> usize {
        self.templates.len()
    }

    pub fn templates(&self) -> &[Tensor<T>] {
        &self.templates
    }
}

/// Evaluates every branch on `input` and collects the outputs.
pub fn build_templates<T: Element>(
    tape: &mut Tape<T>,
    input: &Tensor<T>,
    branches: &[TemplateBranch<T>],
) -> Result<TemplateBank<T>> {
    let mut templates = Vec::with_capacity(branches.len());
    for b in branches {
        templates.push(b.forward(tape, input)?);
    }
    TemplateBank::new(templates)
}

/// How inference combines templates: the unscaled full sum (matching the
/// training-mode expectation) or a replay of the drop mask recorded at the
/// end of training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionEvalMode {
    Expectation,
    SavedMask,
}

impl FusionEvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionEvalMode::Expectation => "expectation",
            FusionEvalMode::SavedMask => "saved_mask",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "expectation" => Ok(FusionEvalMode::Expectation),
            "saved_mask" => Ok(FusionEvalMode::SavedMask),
            other => Err(Error::invalid(
                "fusion.eval_mode",
                format!("expected expectation|saved_mask, got {other}"),
            )),
        }
    }
}

/// Which templates a training step keeps. Always keeps exactly
/// floor(m*p) of them.
#[derive(Clone, Debug, PartialEq)]
pub struct DropMask {
    pub keep: Vec<bool>,
    pub p: f64,
}

impl DropMask {
    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn m(&self) -> usize {
        self.keep.len()
    }
}

/// Samples a uniformly random subset of exactly floor(m*p) kept templates.
pub fn sample_drop_mask<R: Rng>(m: usize, p: f64, rng: &mut R) -> Result<DropMask> {
    if m == 0 {
        return Err(Error::invalid("sample_drop_mask", "m must be at least 1"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("sample_drop_mask", format!("keep probability {} outside (0, 1]", p)));
    }
    let kept = (m as f64 * p).floor() as usize;
    if kept == 0 {
        return Err(Error::invalid(
            "sample_drop_mask",
            format!("floor({} * {}) keeps zero templates", m, p),
        ));
    }
    let mut keep = vec![false; m];
    for idx in rand::seq::index::sample(rng, m, kept) {
        keep[idx] = true;
    }
    Ok(DropMask { keep, p })
}

/// Fuses a template bank into one feature map.
///
/// Training: sum of the mask's kept templates scaled by m/kept, which makes
/// the expectation over masks equal the evaluation output. Evaluation with no
/// mask: plain unscaled sum of all m templates. Evaluation with a mask (the
/// saved-mask mode): the same scaled sum the mask produced in training, so a
/// recorded mask reproduces its training-time fusion exactly.
pub fn fuse<T: Element>(
    tape: &mut Tape<T>,
    bank: &TemplateBank<T>,
    mask: Option<&DropMask>,
    training: bool,
) -> Result<Tensor<T>> {
    let m = bank.m();
    if let Some(mask) = mask {
        if mask.m() != m {
            return Err(Error::shape("fuse", format!("mask over {} templates, bank has {}", mask.m(), m)));
        }
    }
    if training && mask.is_none() {
        return Err(Error::invalid("fuse", "training mode needs a drop mask"));
    }
    // per-template coefficients; eval without a mask keeps everything at 1
    let coeffs: Vec<f64> = match mask {
        Some(mask) => {
            let kept = mask.kept_count();
            if kept == 0 {
                return Err(Error::invalid("fuse", "mask keeps zero templates"));
            }
            let scale = m as f64 / kept as f64;
            mask.keep.iter().map(|&k| if k { scale } else { 0.0 }).collect()
        }
        None => vec![1.0; m],
    };

    let sh = bank.templates[0].shape().to_vec();
    let n = bank.templates[0].numel();
    let mut acc = vec![0.0f64; n];
    for (t, &c) in bank.templates.iter().zip(&coeffs) {
        if c == 0.0 {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(t.data().iter()) {
            *a += c * v.as_f64();
        }
    }
    let out = tensor_of("fuse", &sh, acc.into_iter().map(T::from_f64).collect())?;

    let needs = bank.templates.iter().any(|t| t.requires_grad());
    let clones: Vec<Tensor<T>> = bank.templates.to_vec();
    tape.push(needs, &out, move |up| {
        for (t, &c) in clones.iter().zip(&coeffs) {
            if c == 0.0 || !t.requires_grad() {
                continue;
            }
            let cz = T::from_f64(c);
            let g: Vec<T> = up.iter().map(|&u| cz * u).collect();
            t.accumulate_grad(&g);
        }
    });
    Ok(out)
}
