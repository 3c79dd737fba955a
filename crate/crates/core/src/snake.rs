//! Serpentine deformable convolution. A 9-tap kernel is straightened along
//! one image axis: tap +/-c steps exactly c pixels along that axis while its
//! off-axis position drifts by the running sum of learned per-tap offsets,
//! accumulated outward from the center tap. Offsets live in [-1, 1], so the
//! whole kernel stays inside a 9x9 window around the center pixel.

use rand::Rng;

use crate::conv::conv2d;
use crate::error::{Error, Result};
use crate::ops::{self, tensor_of};
use crate::tape::Tape;
use crate::tensor::{Element, Tensor};

/// Number of kernel taps along the straightened axis.
pub const KERNEL_SIZE: usize = 9;
/// Taps on each side of the center: c in 1..=HALF_TAPS.
pub const HALF_TAPS: usize = 4;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Axis {
    X,
    Y,
}

/// Per-tap off-axis offsets, shape \[B, 9, H, W\], each in \[-1, 1\].
/// The center tap's channel (index 4) is carried but never applied.
pub struct OffsetField<T: Element = f32> {
    pub delta: Tensor<T>,
    pub axis: Axis,
}

impl<T: Element> OffsetField<T> {
    pub fn new(delta: Tensor<T>, axis: Axis) -> Result<Self> {
        let sh = delta.shape();
        if sh.len() != 4 || sh[1] != KERNEL_SIZE {
            return Err(Error::shape(
                "offset_field",
                format!("want [B, {}, H, W], got {:?}", KERNEL_SIZE, sh),
            ));
        }
        let one = T::one();
        if delta.data().iter().any(|&v| v > one || v < -one) {
            return Err(Error::invalid("offset_field", "offsets must lie in [-1, 1]"));
        }
        Ok(OffsetField { delta, axis })
    }
}

/// Fractional sampling coordinates, shape \[B, 9, H, W, 2\]; the last axis is
/// (x, y) with x indexing columns.
pub struct KernelSamplingGrid<T: Element = f32> {
    pub coords: Tensor<T>,
    pub axis: Axis,
}

/// Predicts the offset field for `input` with a zero-padded 3x3 convolution
/// followed by tanh, which enforces the [-1, 1] bound by construction.
pub fn predict_offsets<T: Element>(
    tape: &mut Tape<T>,
    input: &Tensor<T>,
    offset_weight: &Tensor<T>,
    offset_bias: &Tensor<T>,
) -> Result<OffsetField<T>> {
    let wsh = offset_weight.shape();
    if wsh.len() != 4 || wsh[0] != KERNEL_SIZE || wsh[2] != 3 || wsh[3] != 3 {
        return Err(Error::shape(
            "predict_offsets",
            format!("offset predictor must be [{}, Cin, 3, 3], got {:?}", KERNEL_SIZE, wsh),
        ));
    }
    let raw = conv2d(tape, input, offset_weight, offset_bias, 1, 1)?;
    let delta = ops::tanh(tape, &raw)?;
    Ok(OffsetField { delta, axis: Axis::X })
}

/// Turns an offset field into absolute sampling coordinates.
///
/// Axis X, output pixel (x, y): tap +c samples `(x + c, y + sum_{k=1..c}
/// delta[4+k])` and tap -c samples `(x - c, y + sum_{k=1..c} delta[4-k])`.
/// Axis Y swaps the roles of x and y. The center tap samples (x, y) exactly.
pub fn build_sampling_grid<T: Element>(tape: &mut Tape<T>, field: &OffsetField<T>) -> Result<KernelSamplingGrid<T>> {
    let sh = field.delta.shape();
    if sh.len() != 4 || sh[1] != KERNEL_SIZE {
        return Err(Error::shape("build_sampling_grid", format!("want [B, 9, H, W], got {:?}", sh)));
    }
    let (bsz, h, w) = (sh[0], sh[2], sh[3]);
    let axis = field.axis;
    let hw = h * w;
    let mut coords = vec![T::zero(); bsz * KERNEL_SIZE * hw * 2];
    {
        let delta = field.delta.data();
        let mut drift = [0.0f64; KERNEL_SIZE];
        for b in 0..bsz {
            let dbase = b * KERNEL_SIZE * hw;
            for y in 0..h {
                for x in 0..w {
                    let pix = y * w + x;
                    drift[HALF_TAPS] = 0.0;
                    let mut acc = 0.0f64;
                    for c in 1..=HALF_TAPS {
                        acc += delta[dbase + (HALF_TAPS + c) * hw + pix].as_f64();
                        drift[HALF_TAPS + c] = acc;
                    }
                    acc = 0.0;
                    for c in 1..=HALF_TAPS {
                        acc += delta[dbase + (HALF_TAPS - c) * hw + pix].as_f64();
                        drift[HALF_TAPS - c] = acc;
                    }
                    for (t, &dr) in drift.iter().enumerate() {
                        let along = (t as f64) - HALF_TAPS as f64;
                        let (cx, cy) = match axis {
                            Axis::X => (x as f64 + along, y as f64 + dr),
                            Axis::Y => (x as f64 + dr, y as f64 + along),
                        };
                        let at = ((b * KERNEL_SIZE + t) * hw + pix) * 2;
                        coords[at] = T::from_f64(cx);
                        coords[at + 1] = T::from_f64(cy);
                    }
                }
            }
        }
    }
    let coords = tensor_of("build_sampling_grid", &[bsz, KERNEL_SIZE, h, w, 2], coords)?;
    let cdelta = field.delta.clone();
    tape.push(field.delta.requires_grad(), &coords, move |up| {
        // Adjoint of the outward cumulative sums: each delta channel collects
        // the upstream off-axis gradient of every tap at or beyond it.
        let off_ch = match axis {
            Axis::X => 1,
            Axis::Y => 0,
        };
        let mut gd = vec![T::zero(); cdelta.numel()];
        for b in 0..bsz {
            let dbase = b * KERNEL_SIZE * hw;
            for pix in 0..hw {
                let mut acc = T::zero();
                for c in (1..=HALF_TAPS).rev() {
                    let t = HALF_TAPS + c;
                    acc += up[((b * KERNEL_SIZE + t) * hw + pix) * 2 + off_ch];
                    gd[dbase + t * hw + pix] = acc;
                }
                acc = T::zero();
                for c in (1..=HALF_TAPS).rev() {
                    let t = HALF_TAPS - c;
                    acc += up[((b * KERNEL_SIZE + t) * hw + pix) * 2 + off_ch];
                    gd[dbase + t * hw + pix] = acc;
                }
            }
        }
        cdelta.accumulate_grad(&gd);
    });
    Ok(KernelSamplingGrid { coords, axis })
}

/// Bilinear interpolation of `feature` \[B, C, H, W\] at every grid position,
/// producing \[B, C, 9, GH, GW\]. Positions outside the feature read zero.
/// Differentiable in both the feature values and the grid coordinates.
pub fn bilinear_sample<T: Element>(
    tape: &mut Tape<T>,
    feature: &Tensor<T>,
    grid: &KernelSamplingGrid<T>,
) -> Result<Tensor<T>> {
    let fsh = feature.shape();
    let gsh = grid.coords.shape();
    if fsh.len() != 4 {
        return Err(Error::shape("bilinear_sample", format!("feature must be rank 4, got {:?}", fsh)));
    }
    if gsh.len() != 5 || gsh[1] != KERNEL_SIZE || gsh[4] != 2 {
        return Err(Error::shape("bilinear_sample", format!("grid must be [B, 9, H, W, 2], got {:?}", gsh)));
    }
    if fsh[0] != gsh[0] {
        return Err(Error::shape("bilinear_sample", format!("batch mismatch {} vs {}", fsh[0], gsh[0])));
    }
    let (bsz, ch, fh, fw) = (fsh[0], fsh[1], fsh[2], fsh[3]);
    let (gh, gw) = (gsh[2], gsh[3]);
    let ghw = gh * gw;
    let fhw = fh * fw;

    let mut out = vec![T::zero(); bsz * ch * KERNEL_SIZE * ghw];
    {
        let feat = feature.data();
        let co = grid.coords.data();
        let mut tab = CornerTable::new(ghw);
        for b in 0..bsz {
            for t in 0..KERNEL_SIZE {
                let cbase = (b * KERNEL_SIZE + t) * ghw * 2;
                tab.fill(&co[cbase..cbase + ghw * 2], fh, fw);
                for c in 0..ch {
                    let fplane = &feat[(b * ch + c) * fhw..][..fhw];
                    let oplane = &mut out[((b * ch + c) * KERNEL_SIZE + t) * ghw..][..ghw];
                    for ((o, id), wg) in oplane.iter_mut().zip(&tab.idx).zip(&tab.w) {
                        let v = wg[0] * fplane[id[0] as usize].as_f64()
                            + wg[1] * fplane[id[1] as usize].as_f64()
                            + wg[2] * fplane[id[2] as usize].as_f64()
                            + wg[3] * fplane[id[3] as usize].as_f64();
                        *o = T::from_f64(v);
                    }
                }
            }
        }
    }
    let out = tensor_of("bilinear_sample", &[bsz, ch, KERNEL_SIZE, gh, gw], out)?;

    let needs = feature.requires_grad() || grid.coords.requires_grad();
    let (cf, cg) = (feature.clone(), grid.coords.clone());
    tape.push(needs, &out, move |up| {
        let feat = cf.data();
        let co = cg.data();
        let want_f = cf.requires_grad();
        let want_c = cg.requires_grad();
        let mut gf = vec![T::zero(); if want_f { cf.numel() } else { 0 }];
        let mut gc = vec![T::zero(); if want_c { cg.numel() } else { 0 }];
        let mut tab = CornerTable::new(ghw);
        let mut gsx = vec![0.0f64; ghw];
        let mut gsy = vec![0.0f64; ghw];
        for b in 0..bsz {
            for t in 0..KERNEL_SIZE {
                let cbase = (b * KERNEL_SIZE + t) * ghw * 2;
                tab.fill(&co[cbase..cbase + ghw * 2], fh, fw);
                if want_c {
                    gsx.iter_mut().for_each(|v| *v = 0.0);
                    gsy.iter_mut().for_each(|v| *v = 0.0);
                }
                for c in 0..ch {
                    let fplane = &feat[(b * ch + c) * fhw..][..fhw];
                    let uplane = &up[((b * ch + c) * KERNEL_SIZE + t) * ghw..][..ghw];
                    if want_f {
                        let gfplane = &mut gf[(b * ch + c) * fhw..][..fhw];
                        if want_c {
                            for (pix, u) in uplane.iter().enumerate() {
                                let u = u.as_f64();
                                let (id, wg) = (&tab.idx[pix], &tab.w[pix]);
                                let (dx, dy) = (&tab.dwx[pix], &tab.dwy[pix]);
                                let (mut sx, mut sy) = (0.0f64, 0.0f64);
                                for k in 0..4 {
                                    let fidx = id[k] as usize;
                                    gfplane[fidx] += T::from_f64(wg[k] * u);
                                    let v = fplane[fidx].as_f64();
                                    sx += dx[k] * v;
                                    sy += dy[k] * v;
                                }
                                gsx[pix] += u * sx;
                                gsy[pix] += u * sy;
                            }
                        } else {
                            for (pix, u) in uplane.iter().enumerate() {
                                let u = u.as_f64();
                                let (id, wg) = (&tab.idx[pix], &tab.w[pix]);
                                for k in 0..4 {
                                    gfplane[id[k] as usize] += T::from_f64(wg[k] * u);
                                }
                            }
                        }
                    } else if want_c {
                        for (pix, u) in uplane.iter().enumerate() {
                            let u = u.as_f64();
                            let id = &tab.idx[pix];
                            let (dx, dy) = (&tab.dwx[pix], &tab.dwy[pix]);
                            let (mut sx, mut sy) = (0.0f64, 0.0f64);
                            for k in 0..4 {
                                let v = fplane[id[k] as usize].as_f64();
                                sx += dx[k] * v;
                                sy += dy[k] * v;
                            }
                            gsx[pix] += u * sx;
                            gsy[pix] += u * sy;
                        }
                    }
                }
                if want_c {
                    for pix in 0..ghw {
                        gc[cbase + pix * 2] = T::from_f64(gsx[pix]);
                        gc[cbase + pix * 2 + 1] = T::from_f64(gsy[pix]);
                    }
                }
            }
        }
        drop(feat);
        drop(co);
        if want_f {
            cf.accumulate_grad(&gf);
        }
        if want_c {
            cg.accumulate_grad(&gc);
        }
    });
    Ok(out)
}

/// Per-pixel corner indices and bilinear weights for one tap plane. Corners
/// outside the feature get index 0 and weight 0, so the sampling loops stay
/// branch-free; `dwx`/`dwy` hold the weight derivatives in sx and sy.
struct CornerTable {
    idx: Vec<[u32; 4]>,
    w: Vec<[f64; 4]>,
    dwx: Vec<[f64; 4]>,
    dwy: Vec<[f64; 4]>,
}

impl CornerTable {
    fn new(ghw: usize) -> Self {
        CornerTable {
            idx: vec![[0; 4]; ghw],
            w: vec![[0.0; 4]; ghw],
            dwx: vec![[0.0; 4]; ghw],
            dwy: vec![[0.0; 4]; ghw],
        }
    }

    /// `coords` is the (x, y) pair stream for one tap plane, length 2 * ghw.
    fn fill<T: Element>(&mut self, coords: &[T], fh: usize, fw: usize) {
        for (pix, xy) in coords.chunks_exact(2).enumerate() {
            let sx = xy[0].as_f64();
            let sy = xy[1].as_f64();
            let x0f = sx.floor();
            let y0f = sy.floor();
            let fx = sx - x0f;
            let fy = sy - y0f;
            let (x0, y0) = (x0f as isize, y0f as isize);
            let corners = [
                (x0, y0, (1.0 - fx) * (1.0 - fy), -(1.0 - fy), -(1.0 - fx)),
                (x0 + 1, y0, fx * (1.0 - fy), 1.0 - fy, -fx),
                (x0, y0 + 1, (1.0 - fx) * fy, -fy, 1.0 - fx),
                (x0 + 1, y0 + 1, fx * fy, fy, fx),
            ];
            for (k, &(nx, ny, wgt, dwx, dwy)) in corners.iter().enumerate() {
                if nx < 0 || ny < 0 || nx >= fw as isize || ny >= fh as isize {
                    self.idx[pix][k] = 0;
                    self.w[pix][k] = 0.0;
                    self.dwx[pix][k] = 0.0;
                    self.dwy[pix][k] = 0.0;
                } else {
                    self.idx[pix][k] = (ny as usize * fw + nx as usize) as u32;
                    self.w[pix][k] = wgt;
                    self.dwx[pix][k] = dwx;
                    self.dwy[pix][k] = dwy;
                }
            }
        }
    }
}

/// Contracts sampled taps \[B, Cin, 9, H, W\] with per-path weights
/// \[Cout, Cin, 9\] plus bias, yielding \[B, Cout, H, W\].
pub fn path_contract<T: Element>(
    tape: &mut Tape<T>,
    sampled: &Tensor<T>,
    path_weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let ssh = sampled.shape();
    let wsh = path_weight.shape();
    if ssh.len() != 5 || ssh[2] != KERNEL_SIZE {
        return Err(Error::shape("path_contract", format!("sampled must be [B, Cin, 9, H, W], got {:?}", ssh)));
    }
    if wsh.len() != 3 || wsh[1] != ssh[1] || wsh[2] != KERNEL_SIZE {
        return Err(Error::shape(
            "path_contract",
            format!("path weights {:?} incompatible with sampled {:?}", wsh, ssh),
        ));
    }
    let (bsz, cin, h, w) = (ssh[0], ssh[1], ssh[3], ssh[4]);
    let cout = wsh[0];
    if bias.shape() != [cout] {
        return Err(Error::shape("path_contract", format!("bias {:?} vs {} outputs", bias.shape(), cout)));
    }
    let hw = h * w;
    let mut out = Vec::with_capacity(bsz * cout * hw);
    {
        let s = sampled.data();
        let wd = path_weight.data();
        let bd = bias.data();
        let mut acc = vec![0.0f64; hw];
        for b in 0..bsz {
            for co in 0..cout {
                acc.iter_mut().for_each(|v| *v = bd[co].as_f64());
                for ci in 0..cin {
                    for t in 0..KERNEL_SIZE {
                        let wv = wd[(co * cin + ci) * KERNEL_SIZE + t].as_f64();
                        let plane = &s[((b * cin + ci) * KERNEL_SIZE + t) * hw..][..hw];
                        for (a, v) in acc.iter_mut().zip(plane) {
                            *a += wv * v.as_f64();
                        }
                    }
                }
                out.extend(acc.iter().map(|&v| T::from_f64(v)));
            }
        }
    }
    let out = tensor_of("path_contract", &[bsz, cout, h, w], out)?;

    let needs = sampled.requires_grad() || path_weight.requires_grad() || bias.requires_grad();
    let (cs, cw, cb) = (sampled.clone(), path_weight.clone(), bias.clone());
    tape.push(needs, &out, move |up| {
        if cb.requires_grad() {
            let mut gb = vec![T::zero(); cout];
            for b in 0..bsz {
                for co in 0..cout {
                    let plane = &up[(b * cout + co) * hw..][..hw];
                    let s: f64 = plane.iter().map(|v| v.as_f64()).sum();
                    gb[co] += T::from_f64(s);
                }
            }
            cb.accumulate_grad(&gb);
        }
        if cw.requires_grad() {
            let s = cs.data();
            let mut gw = vec![T::zero(); cw.numel()];
            for b in 0..bsz {
                for co in 0..cout {
                    let gplane = &up[(b * cout + co) * hw..][..hw];
                    for ci in 0..cin {
                        for t in 0..KERNEL_SIZE {
                            let plane = &s[((b * cin + ci) * KERNEL_SIZE + t) * hw..][..hw];
                            let mut acc = 0.0f64;
                            for (g, v) in gplane.iter().zip(plane) {
                                acc += g.as_f64() * v.as_f64();
                            }
                            gw[(co * cin + ci) * KERNEL_SIZE + t] += T::from_f64(acc);
                        }
                    }
                }
            }
            cw.accumulate_grad(&gw);
        }
        if cs.requires_grad() {
            let wd = cw.data();
            let mut gs = vec![T::zero(); cs.numel()];
            for b in 0..bsz {
                for co in 0..cout {
                    let gplane = &up[(b * cout + co) * hw..][..hw];
                    for ci in 0..cin {
                        for t in 0..KERNEL_SIZE {
                            let wv = T::from_f64(wd[(co * cin + ci) * KERNEL_SIZE + t].as_f64());
                            let plane = &mut gs[((b * cin + ci) * KERNEL_SIZE + t) * hw..][..hw];
                            for (g, u) in plane.iter_mut().zip(gplane) {
                                *g += wv * *u;
                            }
                        }
                    }
                }
            }
            drop(wd);
            cs.accumulate_grad(&gs);
        }
    });
    Ok(out)
}

/// Minimum distance from any live tap's off-axis coordinate to the integer
/// lattice, where the bilinear hat has its kinks. Taps whose along-axis
/// coordinate falls entirely outside the feature read zero regardless of
/// drift and are skipped. Finite-difference checks should only run on grids
/// with a margin comfortably above the probe step; the map is otherwise
/// differentiable everywhere.
pub fn min_integer_margin<T: Element>(grid: &KernelSamplingGrid<T>, feature_hw: (usize, usize)) -> f64 {
    let (fh, fw) = feature_hw;
    let sh = grid.coords.shape();
    let (bsz, h, w) = (sh[0], sh[2], sh[3]);
    let hw = h * w;
    let co = grid.coords.data();
    let mut margin = f64::INFINITY;
    for b in 0..bsz {
        for t in 0..KERNEL_SIZE {
            if t == HALF_TAPS {
                continue; // center tap has no drift
            }
            for pix in 0..hw {
                let at = ((b * KERNEL_SIZE + t) * hw + pix) * 2;
                let (x, y) = (co[at].as_f64(), co[at + 1].as_f64());
                let (along, off, extent) = match grid.axis {
                    Axis::X => (x, y, fw as f64),
                    Axis::Y => (y, x, fh as f64),
                };
                if along <= -1.0 || along >= extent {
                    continue;
                }
                margin = margin.min((off - off.round()).abs());
            }
        }
    }
    margin
}

/// One serpentine convolution layer: an offset predictor (zero-initialized so
/// kernels start straight) plus per-tap path weights.
pub struct DsConvLayer<T: Element = f32> {
    pub axis: Axis,
    pub offset_weight: Tensor<T>, // [9, Cin, 3, 3]
    pub offset_bias: Tensor<T>,   // [9]
    pub path_weight: Tensor<T>,   // [Cout, Cin, 9]
    pub bias: Tensor<T>,          // [Cout]
}

impl<T: Element> DsConvLayer<T> {
    pub fn new<R: Rng>(cin: usize, cout: usize, axis: Axis, rng: &mut R) -> Self {
        let bound = (1.0 / (cin * KERNEL_SIZE) as f64).sqrt();
        let path: Vec<T> =
            (0..cout * cin * KERNEL_SIZE).map(|_| T::from_f64(rng.gen_range(-bound..=bound))).collect();
        DsConvLayer {
            axis,
            offset_weight: Tensor::zeros(&[KERNEL_SIZE, cin, 3, 3]).trainable(),
            offset_bias: Tensor::zeros(&[KERNEL_SIZE]).trainable(),
            path_weight: Tensor::from_vec(&[cout, cin, KERNEL_SIZE], path).expect("init is finite").trainable(),
            bias: Tensor::zeros(&[cout]).trainable(),
        }
    }

    pub fn from_parts(
        axis: Axis,
        offset_weight: Tensor<T>,
        offset_bias: Tensor<T>,
        path_weight: Tensor<T>,
        bias: Tensor<T>,
    ) -> Result<Self> {
        let osh = offset_weight.shape().to_vec();
        let psh = path_weight.shape().to_vec();
        if osh.len() != 4 || osh[0] != KERNEL_SIZE || osh[2] != 3 || osh[3] != 3 {
            return Err(Error::shape(
                "dsconv_layer",
                format!("offset predictor must emit {} channels from 3x3 taps, got {:?}", KERNEL_SIZE, osh),
            ));
        }
        if offset_bias.shape() != [KERNEL_SIZE] {
            return Err(Error::shape("dsconv_layer", format!("offset bias {:?}", offset_bias.shape())));
        }
        if psh.len() != 3 || psh[2] != KERNEL_SIZE || psh[1] != osh[1] {
            return Err(Error::shape(
                "dsconv_layer",
                format!("path weights {:?} incompatible with {} input channels", psh, osh[1]),
            ));
        }
        if bias.shape() != [psh[0]] {
            return Err(Error::shape("dsconv_layer", format!("bias {:?} vs {} outputs", bias.shape(), psh[0])));
        }
        Ok(DsConvLayer { axis, offset_weight, offset_bias, path_weight, bias })
    }

    pub fn cin(&self) -> usize {
        self.path_weight.shape()[1]
    }

    pub fn cout(&self) -> usize {
        self.path_weight.shape()[0]
    }

    pub fn params(&self) -> Vec<Tensor<T>> {
        vec![self.offset_weight.clone(), self.offset_bias.clone(), self.path_weight.clone(), self.bias.clone()]
    }
}

/// Full serpentine convolution: predict offsets, build the sampling grid,
/// sample bilinearly, contract with path weights.
pub fn dsconv_forward<T: Element>(tape: &mut Tape<T>, input: &Tensor<T>, layer: &DsConvLayer<T>) -> Result<Tensor<T>> {
    let mut field = predict_offsets(tape, input, &layer.offset_weight, &layer.offset_bias)?;
    field.axis = layer.axis;
    let grid = build_sampling_grid(tape, &field)?;
    let sampled = bilinear_sample(tape, input, &grid)?;
    path_contract(tape, &sampled, &layer.path_weight, &layer.bias)
}

/// Evaluates the layer's sampling path at one output pixel of `input`
/// (batch size 1) and returns the 9 taps as (c, x, y) rows, c in -4..=4.
pub fn export_kernel_trace<T: Element>(
    input: &Tensor<T>,
    layer: &DsConvLayer<T>,
    point: (usize, usize),
) -> Result<Vec<(i32, f64, f64)>> {
    let sh = input.shape().to_vec();
    if sh.len() != 4 || sh[0] != 1 {
        return Err(Error::shape("export_kernel_trace", format!("want [1, C, H, W], got {:?}", sh)));
    }
    let (h, w) = (sh[2], sh[3]);
    let (px, py) = point;
    if px >= w || py >= h {
        return Err(Error::invalid(
            "export_kernel_trace",
            format!("point ({}, {}) outside {}x{} input", px, py, w, h),
        ));
    }
    let mut tape = Tape::eval();
    let mut field = predict_offsets(&mut tape, input, &layer.offset_weight, &layer.offset_bias)?;
    field.axis = layer.axis;
    let grid = build_sampling_grid(&mut tape, &field)?;
    let co = grid.coords.data();
    let hw = h * w;
    let mut rows = Vec::with_capacity(KERNEL_SIZE);
    for t in 0..KERNEL_SIZE {
        let at = (t * hw + py * w + px) * 2;
        rows.push((t as i32 - HALF_TAPS as i32, co[at].as_f64(), co[at + 1].as_f64()));
    }
    Ok(rows)
}

/// Text form of a kernel trace: one `c x y` line per tap, 4 decimal places.
pub fn trace_to_text(rows: &[(i32, f64, f64)]) -> String {
    let mut s = String::new();
    for (c, x, y) in rows {
        s.push_str(&format!("{} {:.4} {:.4}\n", c, x, y));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_at<T: Element>(grid: &KernelSamplingGrid<T>, h: usize, w: usize, y: usize, x: usize) -> Vec<(f64, f64)> {
        let co = grid.coords.data();
        (0..KERNEL_SIZE)
            .map(|t| {
                let at = ((t * h + y) * w + x) * 2;
                (co[at].as_f64(), co[at + 1].as_f64())
            })
            .collect()
    }

    #[test]
    fn zero_offsets_make_straight_taps() {
        let mut tape = Tape::<f64>::eval();
        let delta = Tensor::zeros(&[1, KERNEL_SIZE, 11, 11]);
        let field = OffsetField::new(delta, Axis::X).unwrap();
        let grid = build_sampling_grid(&mut tape, &field).unwrap();
        let taps = grid_at(&grid, 11, 11, 5, 5);
        for (t, &(x, y)) in taps.iter().enumerate() {
            assert_eq!(x, (5 + t) as f64 - 4.0);
            assert_eq!(y, 5.0);
        }
        // axis Y swaps roles
        let deltay = Tensor::zeros(&[1, KERNEL_SIZE, 11, 11]);
        let fieldy = OffsetField::new(deltay, Axis::Y).unwrap();
        let gridy = build_sampling_grid(&mut tape, &fieldy).unwrap();
        let tapsy = grid_at(&gridy, 11, 11, 5, 5);
        for (t, &(x, y)) in tapsy.iter().enumerate() {
            assert_eq!(x, 5.0);
            assert_eq!(y, (5 + t) as f64 - 4.0);
        }
    }

    #[test]
    fn unit_offsets_form_staircase() {
        // delta = +1 everywhere: tap +c at (5+c, 5+c), tap -c at (5-c, 5+c)
        let mut tape = Tape::<f64>::eval();
        let delta = Tensor::full(&[1, KERNEL_SIZE, 11, 11], 1.0).unwrap();
        let field = OffsetField::new(delta, Axis::X).unwrap();
        let grid = build_sampling_grid(&mut tape, &field).unwrap();
        let taps = grid_at(&grid, 11, 11, 5, 5);
        for (t, &(x, y)) in taps.iter().enumerate() {
            let c = t as f64 - 4.0;
            assert_eq!(x, 5.0 + c);
            assert_eq!(y, 5.0 + c.abs());
        }
    }

    #[test]
    fn offset_field_rejects_out_of_range() {
        let delta = Tensor::full(&[1, KERNEL_SIZE, 2, 2], 1.5).unwrap();
        assert!(OffsetField::new(delta, Axis::X).is_err());
        let bad_shape = Tensor::<f32>::zeros(&[1, 7, 2, 2]);
        assert!(OffsetField::new(bad_shape, Axis::X).is_err());
    }

    #[test]
    fn snake_constraints_hold_for_random_offsets() {
        // axis step exactly 1, off-axis neighbor step <= 1, drift bound |c|
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::<f64>::eval();
        for _ in 0..50 {
            let (h, w) = (6, 7);
            let delta: Vec<f64> =
                (0..KERNEL_SIZE * h * w).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let field =
                OffsetField::new(Tensor::from_vec(&[1, KERNEL_SIZE, h, w], delta).unwrap(), Axis::X).unwrap();
            let grid = build_sampling_grid(&mut tape, &field).unwrap();
            for y in 0..h {
                for x in 0..w {
                    let taps = grid_at(&grid, h, w, y, x);
                    for (t, &(tx, ty)) in taps.iter().enumerate() {
                        let c = t as f64 - 4.0;
                        assert_eq!(tx, x as f64 + c);
                        assert!((ty - y as f64).abs() <= c.abs() + 1e-12, "drift exceeds |c|");
                        // the whole kernel stays within a 9x9 window
                        assert!((tx - x as f64).abs() <= 4.0 && (ty - y as f64).abs() <= 4.0);
                    }
                    for t in 1..KERNEL_SIZE {
                        assert_eq!(taps[t].0 - taps[t - 1].0, 1.0);
                        assert!((taps[t].1 - taps[t - 1].1).abs() <= 1.0 + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn bilinear_hand_values() {
        let mut tape = Tape::<f64>::eval();
        let feat = Tensor::from_vec(&[1, 1, 1, 2], vec![0.0, 2.0]).unwrap();
        // one grid position per case; KERNEL_SIZE taps all at the same spot
        let probe = |sx: f64, sy: f64| -> f64 {
            let mut co = Vec::new();
            for _ in 0..KERNEL_SIZE {
                co.push(sx);
                co.push(sy);
            }
            let coords = Tensor::from_vec(&[1, KERNEL_SIZE, 1, 1, 2], co).unwrap();
            let grid = KernelSamplingGrid { coords, axis: Axis::X };
            let mut t2 = Tape::<f64>::eval();
            let out = bilinear_sample(&mut t2, &feat, &grid).unwrap();
            out.to_vec()[0]
        };
        assert_eq!(probe(0.5, 0.0), 1.0); // midpoint of [0, 2]
        assert_eq!(probe(-2.0, 0.0), 0.0); // fully outside, zero padding
        assert_eq!(probe(0.0, 0.0), 0.0); // exact integer coordinate
        assert_eq!(probe(1.0, 0.0), 2.0);
        assert_eq!(probe(0.25, 0.0), 0.5);
        assert_eq!(probe(1.5, 0.0), 1.0); // half outside on the right
        let _ = &mut tape;
    }

    #[test]
    fn grid_backward_matches_finite_differences() {
        // coords are linear in delta, so FD here is exact up to roundoff and
        // isolates the suffix-sum adjoint from bilinear kink effects
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &axis in &[Axis::X, Axis::Y] {
            let (h, w) = (3, 4);
            let d: Vec<f64> = (0..KERNEL_SIZE * h * w).map(|_| rng.gen_range(-0.9..0.9)).collect();
            let delta = Tensor::from_vec(&[1, KERNEL_SIZE, h, w], d).unwrap().trainable();
            let proj: Vec<f64> =
                (0..KERNEL_SIZE * h * w * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let proj = Tensor::from_vec(&[1, KERNEL_SIZE, h, w, 2], proj).unwrap();
            let run = |tape: &mut Tape<f64>| -> Tensor<f64> {
                let field = OffsetField { delta: delta.clone(), axis };
                let grid = build_sampling_grid(tape, &field).unwrap();
                let weighted = ops::mul(tape, &grid.coords, &proj).unwrap();
                ops::sum(tape, &weighted).unwrap()
            };
            let mut tape = Tape::new();
            let loss = run(&mut tape);
            tape.backward(&loss).unwrap();
            let analytic = delta.grad();
            let numeric = finite_diff_grad(&delta, || run(&mut Tape::eval()).item().unwrap(), 1e-5);
            assert!(max_rel_error(&analytic, &numeric) <= 1e-6);
        }
    }

    #[test]
    fn bilinear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w) = (5, 5);
        let feat_data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let feat = Tensor::from_vec(&[1, 1, h, w], feat_data).unwrap().trainable();
        // fractional coords strictly inside, away from integers
        let co_data: Vec<f64> = (0..KERNEL_SIZE * 2 * 4)
            .map(|i| if i % 2 == 0 { rng.gen_range(0.3..3.7) } else { rng.gen_range(0.25..3.6) })
            .map(|v: f64| if (v - v.round()).abs() < 0.05 { v + 0.07 } else { v })
            .collect();
        let coords = Tensor::from_vec(&[1, KERNEL_SIZE, 2, 2, 2], co_data).unwrap().trainable();

        let run = |tape: &mut Tape<f64>| -> Tensor<f64> {
            let grid = KernelSamplingGrid { coords: coords.clone(), axis: Axis::X };
            let s = bilinear_sample(tape, &feat, &grid).unwrap();
            let sq = ops::mul(tape, &s, &s).unwrap();
            ops::sum(tape, &sq).unwrap()
        };
        let mut tape = Tape::new();
        let loss = run(&mut tape);
        tape.backward(&loss).unwrap();

        for p in [&feat, &coords] {
            let analytic = p.grad();
            let numeric = finite_diff_grad(p, || run(&mut Tape::eval()).item().unwrap(), 1e-4);
            assert!(max_rel_error(&analytic, &numeric) <= 1e-3);
        }
    }

    /// Direct 9-tap correlation along one axis with zero padding; the
    /// independent reference for the straight-kernel degeneracy.
    fn straight_conv_oracle(
        input: &[f64],
        (cin, h, w): (usize, usize, usize),
        pathw: &[f64],
        bias: &[f64],
        cout: usize,
        axis: Axis,
    ) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for t in 0..KERNEL_SIZE {
                            let c = t as isize - HALF_TAPS as isize;
                            let (sx, sy) = match axis {
                                Axis::X => (x as isize + c, y as isize),
                                Axis::Y => (x as isize, y as isize + c),
                            };
                            if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                                continue;
                            }
                            acc += pathw[(co * cin + ci) * KERNEL_SIZE + t]
                                * input[(ci * h + sy as usize) * w + sx as usize];
                        }
                    }
                    out[(co * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn zero_offsets_degenerate_to_straight_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &axis in &[Axis::X, Axis::Y] {
            for _ in 0..10 {
                let (cin, cout, h, w) = (2, 3, 7, 8);
                let layer = DsConvLayer::<f64>::new(cin, cout, axis, &mut rng);
                let input: Vec<f64> = (0..cin * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let x = Tensor::from_vec(&[1, cin, h, w], input.clone()).unwrap();
                let mut tape = Tape::eval();
                let y = dsconv_forward(&mut tape, &x, &layer).unwrap();
                let want = straight_conv_oracle(
                    &input,
                    (cin, h, w),
                    &layer.path_weight.to_f64_vec(),
                    &layer.bias.to_f64_vec(),
                    cout,
                    axis,
                );
                for (a, b) in y.to_vec().iter().zip(want.iter()) {
                    assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
                }
            }
        }
    }

    #[test]
    fn dsconv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (cin, cout, h, w) = (2, 2, 6, 6);
        let mut layer = DsConvLayer::<f64>::new(cin, cout, Axis::X, &mut rng);
        // Randomize the offset head so sampling happens at fractional spots,
        // but pin the biases so every drift partial sum stays well away from
        // integer grid lines, where the bilinear hat is not differentiable.
        // tap order: [-4, -3, -2, -1, 0, +1, +2, +3, +4]
        let targets = [-0.30, 0.25, -0.30, -0.35, 0.0, 0.35, 0.30, -0.25, 0.30];
        let ob: Vec<f64> = targets.iter().map(|t: &f64| t.atanh()).collect();
        let ow: Vec<f64> = (0..layer.offset_weight.numel()).map(|_| rng.gen_range(-0.001..0.001)).collect();
        layer.offset_weight = Tensor::from_vec(&[KERNEL_SIZE, cin, 3, 3], ow).unwrap().trainable();
        layer.offset_bias = Tensor::from_vec(&[KERNEL_SIZE], ob).unwrap().trainable();
        let x_data: Vec<f64> = (0..cin * h * w).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let x = Tensor::from_vec(&[1, cin, h, w], x_data).unwrap().trainable();

        let run = |tape: &mut Tape<f64>| -> Tensor<f64> {
            let y = dsconv_forward(tape, &x, &layer).unwrap();
            let sq = ops::mul(tape, &y, &y).unwrap();
            ops::sum(tape, &sq).unwrap()
        };
        let mut tape = Tape::new();
        let loss = run(&mut tape);
        tape.backward(&loss).unwrap();

        let params = [&x, &layer.offset_weight, &layer.offset_bias, &layer.path_weight, &layer.bias];
        for p in params {
            let analytic = p.grad();
            let numeric = finite_diff_grad(p, || run(&mut Tape::eval()).item().unwrap(), 1e-3);
            let err = max_rel_error(&analytic, &numeric);
            assert!(err <= 1e-3, "rel err {} too large", err);
        }
    }

    #[test]
    fn dsconv_gradients_survive_random_heads_given_margin() {
        use crate::gradcheck::draw_kink_free_dsconv;
        for seed in 0..10u64 {
            let (layer, x) = draw_kink_free_dsconv(seed, (2, 2, 6, 6), 1e-3);
            let run = |tape: &mut Tape<f64>| -> Tensor<f64> {
                let y = dsconv_forward(tape, &x, &layer).unwrap();
                let sq = ops::mul(tape, &y, &y).unwrap();
                ops::sum(tape, &sq).unwrap()
            };
            let mut tape = Tape::new();
            let loss = run(&mut tape);
            tape.backward(&loss).unwrap();
            for p in [&x, &layer.offset_weight, &layer.offset_bias, &layer.path_weight, &layer.bias] {
                let analytic = p.grad();
                let numeric = finite_diff_grad(p, || run(&mut Tape::eval()).item().unwrap(), 1e-4);
                let err = max_rel_error(&analytic, &numeric);
                assert!(err <= 1e-3, "seed {} rel err {:.3e}", seed, err);
            }
        }
    }

    #[test]
    fn trace_export_straight_when_untrained() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = DsConvLayer::<f32>::new(1, 4, Axis::X, &mut rng);
        let x = Tensor::from_vec(&[1, 1, 16, 16], (0..256).map(|i| i as f32 / 255.0).collect()).unwrap();
        let rows = export_kernel_trace(&x, &layer, (10, 7)).unwrap();
        assert_eq!(rows.len(), KERNEL_SIZE);
        for (i, &(c, x, y)) in rows.iter().enumerate() {
            assert_eq!(c, i as i32 - 4);
            assert_eq!(x, (10 + c) as f64);
            assert_eq!(y, 7.0);
        }
        let text = trace_to_text(&rows);
        assert!(text.starts_with("-4 6.0000 7.0000\n"));
        assert!(text.ends_with("4 14.0000 7.0000\n"));
        assert!(export_kernel_trace(&x, &layer, (16, 0)).is_err());
    }

    #[test]
    fn layer_validation_rejects_wrong_offset_channels() {
        let ow = Tensor::<f32>::zeros(&[7, 2, 3, 3]);
        let ob = Tensor::zeros(&[7]);
        let pw = Tensor::zeros(&[3, 2, KERNEL_SIZE]);
        let b = Tensor::zeros(&[3]);
        assert!(DsConvLayer::from_parts(Axis::X, ow, ob, pw, b).is_err());
    }
}
