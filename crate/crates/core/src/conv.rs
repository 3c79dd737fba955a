//! Standard 2-D cross-correlation (no kernel flip) with zero padding.
//! Inner loops run over contiguous rows and accumulate in f64.

use crate::error::{Error, Result};
use crate::ops::tensor_of;
use crate::tape::Tape;
use crate::tensor::{Element, Tensor};

struct ConvDims {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

/// Shape-preserving 3-wide stride-1 case (the layer stack's common one),
/// where all three kx taps of a row can fuse into a single pass.
fn fused3(d: &ConvDims) -> bool {
    d.stride == 1 && d.kw == 3 && d.pad == 1 && d.ow == d.w && d.w >= 3
}

fn conv_dims<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvDims> {
    let ish = input.shape();
    let wsh = weight.shape();
    if ish.len() != 4 || wsh.len() != 4 {
        return Err(Error::shape("conv2d", format!("input {:?}, weight {:?}", ish, wsh)));
    }
    let (b, cin, h, w) = (ish[0], ish[1], ish[2], ish[3]);
    let (cout, wcin, kh, kw) = (wsh[0], wsh[1], wsh[2], wsh[3]);
    if wcin != cin {
        return Err(Error::shape("conv2d", format!("input has {} channels, weight wants {}", cin, wcin)));
    }
    if bias.shape() != [cout] {
        return Err(Error::shape("conv2d", format!("bias {:?} vs {} output channels", bias.shape(), cout)));
    }
    if stride == 0 {
        return Err(Error::invalid("conv2d", "stride must be >= 1"));
    }
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape("conv2d", format!("kernel {}x{} exceeds padded input {}x{}", kh, kw, h + 2 * pad, w + 2 * pad)));
    }
    if (h + 2 * pad - kh) % stride != 0 || (w + 2 * pad - kw) % stride != 0 {
        return Err(Error::shape("conv2d", "padded extent minus kernel must be divisible by stride"));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Ok(ConvDims { b, cin, h, w, cout, kh, kw, oh, ow, stride, pad })
}

/// `out[b,co,oy,ox] = bias[co] + sum_{ci,ky,kx} weight[co,ci,ky,kx] *
/// input[b,ci, oy*stride-pad+ky, ox*stride-pad+kx]`, zeros outside.
pub fn conv2d<T: Element>(
    tape: &mut Tape<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let d = conv_dims(input, weight, bias, stride, pad)?;
    let mut out_data = Vec::with_capacity(d.b * d.cout * d.oh * d.ow);
    {
        let src = input.data();
        let wdat = weight.data();
        let bdat = bias.data();
        let mut acc = vec![0.0f64; d.oh * d.ow];
        for b in 0..d.b {
            for co in 0..d.cout {
                acc.iter_mut().for_each(|v| *v = bdat[co].as_f64());
                for ci in 0..d.cin {
                    let plane = &src[(b * d.cin + ci) * d.h * d.w..][..d.h * d.w];
                    let wbase = (co * d.cin + ci) * d.kh * d.kw;
                    if fused3(&d) {
                        // one pass per ky applies all three kx taps to a row
                        let last = d.w - 1;
                        for ky in 0..d.kh {
                            let w0 = wdat[wbase + ky * 3].as_f64();
                            let w1 = wdat[wbase + ky * 3 + 1].as_f64();
                            let w2 = wdat[wbase + ky * 3 + 2].as_f64();
                            for oy in 0..d.oh {
                                let iy = oy + ky;
                                if iy < 1 || iy >= d.h + 1 {
                                    continue;
                                }
                                let in_row = &plane[(iy - 1) * d.w..][..d.w];
                                let acc_row = &mut acc[oy * d.ow..][..d.ow];
                                acc_row[0] += w1 * in_row[0].as_f64() + w2 * in_row[1].as_f64();
                                acc_row[last] += w0 * in_row[last - 1].as_f64() + w1 * in_row[last].as_f64();
                                for (a, win) in acc_row[1..last].iter_mut().zip(in_row.windows(3)) {
                                    *a += w0 * win[0].as_f64() + w1 * win[1].as_f64() + w2 * win[2].as_f64();
                                }
                            }
                        }
                    } else if d.stride == 1 {
                        for ky in 0..d.kh {
                            for kx in 0..d.kw {
                                let wv = wdat[wbase + ky * d.kw + kx].as_f64();
                                let lo = d.pad.saturating_sub(kx);
                                let hi = d.ow.min((d.w + d.pad).saturating_sub(kx));
                                if lo >= hi {
                                    continue;
                                }
                                for oy in 0..d.oh {
                                    let iy = oy + ky;
                                    if iy < d.pad || iy >= d.h + d.pad {
                                        continue;
                                    }
                                    let in_row = &plane[(iy - d.pad) * d.w..][..d.w];
                                    let acc_row = &mut acc[oy * d.ow + lo..oy * d.ow + hi];
                                    let src_row = &in_row[lo + kx - d.pad..hi + kx - d.pad];
                                    for (a, s) in acc_row.iter_mut().zip(src_row) {
                                        *a += wv * s.as_f64();
                                    }
                                }
                            }
                        }
                    } else {
                        for oy in 0..d.oh {
                            for ox in 0..d.ow {
                                let mut s = 0.0f64;
                                for ky in 0..d.kh {
                                    let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                                    if iy < 0 || iy >= d.h as isize {
                                        continue;
                                    }
                                    for kx in 0..d.kw {
                                        let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                        if ix < 0 || ix >= d.w as isize {
                                            continue;
                                        }
                                        s += wdat[wbase + ky * d.kw + kx].as_f64()
                                            * plane[iy as usize * d.w + ix as usize].as_f64();
                                    }
                                }
                                acc[oy * d.ow + ox] += s;
                            }
                        }
                    }
                }
                out_data.extend(acc.iter().map(|&v| T::from_f64(v)));
            }
        }
    }
    let out = tensor_of("conv2d", &[d.b, d.cout, d.oh, d.ow], out_data)?;

    let needs = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    let (ci_t, cw_t, cb_t) = (input.clone(), weight.clone(), bias.clone());
    tape.push(needs, &out, move |up| {
        let d = conv_dims(&ci_t, &cw_t, &cb_t, stride, pad).expect("checked in forward");
        if cb_t.requires_grad() {
            let mut gb = vec![T::zero(); d.cout];
            for b in 0..d.b {
                for co in 0..d.cout {
                    let plane = &up[(b * d.cout + co) * d.oh * d.ow..][..d.oh * d.ow];
                    let s: f64 = plane.iter().map(|v| v.as_f64()).sum();
                    gb[co] += T::from_f64(s);
                }
            }
            cb_t.accumulate_grad(&gb);
        }
        if cw_t.requires_grad() {
            let src = ci_t.data();
            let mut gw = vec![T::zero(); d.cout * d.cin * d.kh * d.kw];
            for co in 0..d.cout {
                for ci in 0..d.cin {
                    if fused3(&d) {
                        let last = d.w - 1;
                        for ky in 0..d.kh {
                            let mut s = [0.0f64; 3];
                            for b in 0..d.b {
                                let gplane = &up[(b * d.cout + co) * d.oh * d.ow..][..d.oh * d.ow];
                                let iplane = &src[(b * d.cin + ci) * d.h * d.w..][..d.h * d.w];
                                for oy in 0..d.oh {
                                    let iy = oy + ky;
                                    if iy < 1 || iy >= d.h + 1 {
                                        continue;
                                    }
                                    let g_row = &gplane[oy * d.ow..][..d.ow];
                                    let i_row = &iplane[(iy - 1) * d.w..][..d.w];
                                    s[1] += g_row[0].as_f64() * i_row[0].as_f64()
                                        + g_row[last].as_f64() * i_row[last].as_f64();
                                    s[2] += g_row[0].as_f64() * i_row[1].as_f64();
                                    s[0] += g_row[last].as_f64() * i_row[last - 1].as_f64();
                                    for (g, win) in g_row[1..last].iter().zip(i_row.windows(3)) {
                                        let g = g.as_f64();
                                        s[0] += g * win[0].as_f64();
                                        s[1] += g * win[1].as_f64();
                                        s[2] += g * win[2].as_f64();
                                    }
                                }
                            }
                            for kx in 0..3 {
                                gw[((co * d.cin + ci) * d.kh + ky) * 3 + kx] += T::from_f64(s[kx]);
                            }
                        }
                        continue;
                    }
                    for ky in 0..d.kh {
                        for kx in 0..d.kw {
                            let mut s = 0.0f64;
                            for b in 0..d.b {
                                let gplane = &up[(b * d.cout + co) * d.oh * d.ow..][..d.oh * d.ow];
                                let iplane = &src[(b * d.cin + ci) * d.h * d.w..][..d.h * d.w];
                                if d.stride == 1 {
                                    let lo = d.pad.saturating_sub(kx);
                                    let hi = d.ow.min((d.w + d.pad).saturating_sub(kx));
                                    if lo >= hi {
                                        continue;
                                    }
                                    for oy in 0..d.oh {
                                        let iy = oy + ky;
                                        if iy < d.pad || iy >= d.h + d.pad {
                                            continue;
                                        }
                                        let g_row = &gplane[oy * d.ow + lo..oy * d.ow + hi];
                                        let i_row = &iplane[(iy - d.pad) * d.w + lo + kx - d.pad..][..hi - lo];
                                        for (g, i) in g_row.iter().zip(i_row) {
                                            s += g.as_f64() * i.as_f64();
                                        }
                                    }
                                } else {
                                    for oy in 0..d.oh {
                                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                                        if iy < 0 || iy >= d.h as isize {
                                            continue;
                                        }
                                        for ox in 0..d.ow {
                                            let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                            if ix < 0 || ix >= d.w as isize {
                                                continue;
                                            }
                                            s += gplane[oy * d.ow + ox].as_f64()
                                                * iplane[iy as usize * d.w + ix as usize].as_f64();
                                        }
                                    }
                                }
                            }
                            gw[((co * d.cin + ci) * d.kh + ky) * d.kw + kx] += T::from_f64(s);
                        }
                    }
                }
            }
            cw_t.accumulate_grad(&gw);
        }
        if ci_t.requires_grad() {
            let wdat = cw_t.data();
            let mut gi = vec![T::zero(); ci_t.numel()];
            let mut acc = vec![0.0f64; d.h * d.w];
            for b in 0..d.b {
                for ci in 0..d.cin {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for co in 0..d.cout {
                        let gplane = &up[(b * d.cout + co) * d.oh * d.ow..][..d.oh * d.ow];
                        let wbase = (co * d.cin + ci) * d.kh * d.kw;
                        if fused3(&d) {
                            // input col ix collects w[kx] * g[ix - kx + 1]
                            let last = d.w - 1;
                            for ky in 0..d.kh {
                                let w0 = wdat[wbase + ky * 3].as_f64();
                                let w1 = wdat[wbase + ky * 3 + 1].as_f64();
                                let w2 = wdat[wbase + ky * 3 + 2].as_f64();
                                for oy in 0..d.oh {
                                    let iy = oy + ky;
                                    if iy < 1 || iy >= d.h + 1 {
                                        continue;
                                    }
                                    let g_row = &gplane[oy * d.ow..][..d.ow];
                                    let a_row = &mut acc[(iy - 1) * d.w..][..d.w];
                                    a_row[0] += w1 * g_row[0].as_f64() + w0 * g_row[1].as_f64();
                                    a_row[last] += w2 * g_row[last - 1].as_f64() + w1 * g_row[last].as_f64();
                                    for (a, win) in a_row[1..last].iter_mut().zip(g_row.windows(3)) {
                                        *a += w2 * win[0].as_f64() + w1 * win[1].as_f64() + w0 * win[2].as_f64();
                                    }
                                }
                            }
                        } else if d.stride == 1 {
                            for ky in 0..d.kh {
                                for kx in 0..d.kw {
                                    let wv = wdat[wbase + ky * d.kw + kx].as_f64();
                                    let lo = d.pad.saturating_sub(kx);
                                    let hi = d.ow.min((d.w + d.pad).saturating_sub(kx));
                                    if lo >= hi {
                                        continue;
                                    }
                                    for oy in 0..d.oh {
                                        let iy = oy + ky;
                                        if iy < d.pad || iy >= d.h + d.pad {
                                            continue;
                                        }
                                        let g_row = &gplane[oy * d.ow + lo..oy * d.ow + hi];
                                        let a_row = &mut acc[(iy - d.pad) * d.w + lo + kx - d.pad..][..hi - lo];
                                        for (a, g) in a_row.iter_mut().zip(g_row) {
                                            *a += wv * g.as_f64();
                                        }
                                    }
                                }
                            }
                        } else {
                            for oy in 0..d.oh {
                                for ox in 0..d.ow {
                                    let g = gplane[oy * d.ow + ox].as_f64();
                                    for ky in 0..d.kh {
                                        let iy = (oy * d.stride + ky) as isize - d.pad as isize;
                                        if iy < 0 || iy >= d.h as isize {
                                            continue;
                                        }
                                        for kx in 0..d.kw {
                                            let ix = (ox * d.stride + kx) as isize - d.pad as isize;
                                            if ix < 0 || ix >= d.w as isize {
                                                continue;
                                            }
                                            acc[iy as usize * d.w + ix as usize] +=
                                                wdat[wbase + ky * d.kw + kx].as_f64() * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    let gplane = &mut gi[(b * d.cin + ci) * d.h * d.w..][..d.h * d.w];
                    for (g, a) in gplane.iter_mut().zip(acc.iter()) {
                        *g = T::from_f64(*a);
                    }
                }
            }
            ci_t.accumulate_grad(&gi);
        }
    });
    Ok(out)
}
