//! Elementwise ops, reductions, pooling, and the stable binary cross-entropy.
//! Every op validates shapes, checks its output for non-finite values, and
//! registers its backward closure on the tape.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{Element, Tensor};

/// `from_vec` with the failing op's name on the non-finite error.
pub(crate) fn tensor_of<T: Element>(op: &'static str, shape: &[usize], data: Vec<T>) -> Result<Tensor<T>> {
    Tensor::from_vec(shape, data).map_err(|e| match e {
        Error::NonFinite { .. } => Error::NonFinite { op },
        other => other,
    })
}

fn check_same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn add<T: Element>(tape: &mut Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a, b)?;
    let data: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x + y).collect();
    let out = tensor_of("add", a.shape(), data)?;
    let (ca, cb) = (a.clone(), b.clone());
    tape.push(a.requires_grad() || b.requires_grad(), &out, move |up| {
        if ca.requires_grad() {
            ca.accumulate_grad(up);
        }
        if cb.requires_grad() {
            cb.accumulate_grad(up);
        }
    });
    Ok(out)
}

pub fn mul<T: Element>(tape: &mut Tape<T>, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mul", a, b)?;
    let data: Vec<T> = a.data().iter().zip(b.data().iter()).map(|(&x, &y)| x * y).collect();
    let out = tensor_of("mul", a.shape(), data)?;
    let (ca, cb) = (a.clone(), b.clone());
    tape.push(a.requires_grad() || b.requires_grad(), &out, move |up| {
        if ca.requires_grad() {
            let d: Vec<T> = up.iter().zip(cb.data().iter()).map(|(&u, &y)| u * y).collect();
            ca.accumulate_grad(&d);
        }
        if cb.requires_grad() {
            let d: Vec<T> = up.iter().zip(ca.data().iter()).map(|(&u, &x)| u * x).collect();
            cb.accumulate_grad(&d);
        }
    });
    Ok(out)
}

/// Multiplication by a compile-time-known constant.
pub fn scale<T: Element>(tape: &mut Tape<T>, a: &Tensor<T>, c: f64) -> Result<Tensor<T>> {
    let k = T::from_f64(c);
    let data: Vec<T> = a.data().iter().map(|&x| x * k).collect();
    let out = tensor_of("scale", a.shape(), data)?;
    let ca = a.clone();
    tape.push(a.requires_grad(), &out, move |up| {
        let d: Vec<T> = up.iter().map(|&u| u * k).collect();
        ca.accumulate_grad(&d);
    });
    Ok(out)
}

pub fn relu<T: Element>(tape: &mut Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let data: Vec<T> = a.data().iter().map(|&x| if x > T::zero() { x } else { T::zero() }).collect();
    let out = tensor_of("relu", a.shape(), data)?;
    let ca = a.clone();
    tape.push(a.requires_grad(), &out, move |up| {
        let src = ca.data();
        let d: Vec<T> =
            up.iter().zip(src.iter()).map(|(&u, &x)| if x > T::zero() { u } else { T::zero() }).collect();
        drop(src);
        ca.accumulate_grad(&d);
    });
    Ok(out)
}

fn sigmoid_scalar<T: Element>(z: T) -> T {
    // Evaluate through exp of a non-positive argument only.
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(tape: &mut Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let data: Vec<T> = a.data().iter().map(|&x| sigmoid_scalar(x)).collect();
    let out = tensor_of("sigmoid", a.shape(), data)?;
    let (ca, co) = (a.clone(), out.clone());
    tape.push(a.requires_grad(), &out, move |up| {
        let s = co.data();
        let d: Vec<T> = up.iter().zip(s.iter()).map(|(&u, &s)| u * s * (T::one() - s)).collect();
        drop(s);
        ca.accumulate_grad(&d);
    });
    Ok(out)
}

pub fn tanh<T: Element>(tape: &mut Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let data: Vec<T> = a.data().iter().map(|&x| x.tanh()).collect();
    let out = tensor_of("tanh", a.shape(), data)?;
    let (ca, co) = (a.clone(), out.clone());
    tape.push(a.requires_grad(), &out, move |up| {
        let t = co.data();
        let d: Vec<T> = up.iter().zip(t.iter()).map(|(&u, &t)| u * (T::one() - t * t)).collect();
        drop(t);
        ca.accumulate_grad(&d);
    });
    Ok(out)
}

/// Sum of all elements to a scalar; accumulation runs in f64.
pub fn sum<T: Element>(tape: &mut Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let total: f64 = a.data().iter().map(|v| v.as_f64()).sum();
    let out = tensor_of("sum", &[1], vec![T::from_f64(total)])?;
    let ca = a.clone();
    tape.push(a.requires_grad(), &out, move |up| {
        let d = vec![up[0]; ca.numel()];
        ca.accumulate_grad(&d);
    });
    Ok(out)
}

/// Mean binary cross-entropy evaluated from logits:
/// `max(z,0) - z*y + ln(1 + exp(-|z|))` per element, averaged in f64.
/// Labels must be exactly 0 or 1.
pub fn bce_with_logits<T: Element>(tape: &mut Tape<T>, logits: &Tensor<T>, labels: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("bce_with_logits", logits, labels)?;
    let n = logits.numel();
    if n == 0 {
        return Err(Error::invalid("bce_with_logits", "empty input"));
    }
    {
        let lab = labels.data();
        if lab.iter().any(|&y| y != T::zero() && y != T::one()) {
            return Err(Error::invalid("bce_with_logits", "labels must be exactly 0 or 1"));
        }
    }
    let mut acc = 0.0f64;
    {
        let z = logits.data();
        let y = labels.data();
        for (&zi, &yi) in z.iter().zip(y.iter()) {
            let z64 = zi.as_f64();
            let y64 = yi.as_f64();
            acc += z64.max(0.0) - z64 * y64 + (-z64.abs()).exp().ln_1p();
        }
    }
    let out = tensor_of("bce_with_logits", &[1], vec![T::from_f64(acc / n as f64)])?;
    let (cz, cy) = (logits.clone(), labels.clone());
    tape.push(logits.requires_grad(), &out, move |up| {
        let u = up[0];
        let inv_n = T::from_f64(1.0 / cz.numel() as f64);
        let z = cz.data();
        let y = cy.data();
        let d: Vec<T> = z
            .iter()
            .zip(y.iter())
            .map(|(&zi, &yi)| u * inv_n * (sigmoid_scalar(zi) - yi))
            .collect();
        drop(z);
        drop(y);
        cz.accumulate_grad(&d);
    });
    Ok(out)
}

/// 2x2 max pooling with stride 2 on \[B, C, H, W\]; H and W must be even.
/// Ties pick the first element in row-major window order.
pub fn max_pool2<T: Element>(tape: &mut Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let sh = a.shape();
    if sh.len() != 4 {
        return Err(Error::shape("max_pool2", format!("want rank 4, got {:?}", sh)));
    }
    let (b_dim, c_dim, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("max_pool2", format!("H and W must be even, got {}x{}", h, w)));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut data = Vec::with_capacity(b_dim * c_dim * oh * ow);
    let mut argmax = Vec::with_capacity(b_dim * c_dim * oh * ow);
    {
        let src = a.data();
        for b in 0..b_dim {
            for c in 0..c_dim {
                let plane = (b * c_dim + c) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let base = plane + (2 * oy) * w + 2 * ox;
                        let cand = [base, base + 1, base + w, base + w + 1];
                        let mut best = cand[0];
                        for &i in &cand[1..] {
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                        data.push(src[best]);
                        argmax.push(best);
                    }
                }
            }
        }
    }
    let out = tensor_of("max_pool2", &[b_dim, c_dim, oh, ow], data)?;
    let ca = a.clone();
    tape.push(a.requires_grad(), &out, move |up| {
        let mut d = vec![T::zero(); ca.numel()];
        for (&u, &src_idx) in up.iter().zip(argmax.iter()) {
            d[src_idx] += u;
        }
        ca.accumulate_grad(&d);
    });
    Ok(out)
}

/// Nearest-neighbor 2x upsampling on \[B, C, H, W\].
pub fn upsample_nearest2<T: Element>(tape: &mut Tape<T>, a: &Tensor<T>) -> Result<Tensor<T>> {
    let sh = a.shape();
    if sh.len() != 4 {
        return Err(Error::shape("upsample_nearest2", format!("want rank 4, got {:?}", sh)));
    }
    let (b_dim, c_dim, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let mut data = vec![T::zero(); b_dim * c_dim * oh * ow];
    {
        let src = a.data();
        for b in 0..b_dim {
            for c in 0..c_dim {
                let sp = (b * c_dim + c) * h * w;
                let op = (b * c_dim + c) * oh * ow;
                for y in 0..oh {
                    for x in 0..ow {
                        data[op + y * ow + x] = src[sp + (y / 2) * w + x / 2];
                    }
                }
            }
        }
    }
    let out = tensor_of("upsample_nearest2", &[b_dim, c_dim, oh, ow], data)?;
    let ca = a.clone();
    tape.push(a.requires_grad(), &out, move |up| {
        let mut d = vec![T::zero(); ca.numel()];
        for b in 0..b_dim {
            for c in 0..c_dim {
                let sp = (b * c_dim + c) * h * w;
                let op = (b * c_dim + c) * oh * ow;
                for y in 0..oh {
                    for x in 0..ow {
                        d[sp + (y / 2) * w + x / 2] += up[op + y * ow + x];
                    }
                }
            }
        }
        ca.accumulate_grad(&d);
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn add_and_mul_values_and_grads() {
        let mut tape = Tape::<f64>::new();
        let a = Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap().trainable();
        let b = Tensor::from_vec(&[3], vec![4.0, 5.0, -6.0]).unwrap().trainable();
        let s = add(&mut tape, &a, &b).unwrap();
        let p = mul(&mut tape, &s, &b).unwrap();
        assert_eq!(p.to_vec(), vec![20.0, 15.0, 18.0]);
        let l = sum(&mut tape, &p).unwrap();
        tape.backward(&l).unwrap();
        // d/da (a+b)*b = b ; d/db = a + 2b
        assert_eq!(a.grad(), vec![4.0, 5.0, -6.0]);
        assert_eq!(b.grad(), vec![9.0, 8.0, -9.0]);
    }

    #[test]
    fn mul_same_tensor_doubles() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap().trainable();
        let y = mul(&mut tape, &x, &x).unwrap();
        let l = sum(&mut tape, &y).unwrap();
        tape.backward(&l).unwrap();
        assert_eq!(x.grad(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn sum_backward_is_ones() {
        let mut tape = Tape::<f32>::new();
        let x = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap().trainable();
        let l = sum(&mut tape, &x).unwrap();
        assert_eq!(l.item().unwrap(), 10.0);
        tape.backward(&l).unwrap();
        assert_eq!(x.grad(), vec![1.0; 4]);
    }

    #[test]
    fn activation_values() {
        let mut tape = Tape::<f64>::eval();
        let x = Tensor::from_vec(&[3], vec![-2.5, 0.0, 2.5]).unwrap();
        let r = relu(&mut tape, &x).unwrap();
        assert_eq!(r.to_vec(), vec![0.0, 0.0, 2.5]);
        let s = sigmoid(&mut tape, &x).unwrap();
        assert!(close(s.to_vec()[1], 0.5, 1e-12));
        assert!(close(s.to_vec()[2], 1.0 / (1.0 + (-2.5f64).exp()), 1e-12));
        let t = tanh(&mut tape, &x).unwrap();
        assert!(close(t.to_vec()[0], (-2.5f64).tanh(), 1e-12));
    }

    #[test]
    fn bce_zero_logit_positive_label_is_ln2() {
        let mut tape = Tape::<f64>::new();
        let z = Tensor::from_vec(&[1], vec![0.0]).unwrap().trainable();
        let y = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let l = bce_with_logits(&mut tape, &z, &y).unwrap();
        assert!(close(l.item().unwrap(), std::f64::consts::LN_2, 1e-15));
        tape.backward(&l).unwrap();
        // sigma(0) - 1 = -0.5
        assert!(close(z.grad()[0], -0.5, 1e-15));
    }

    #[test]
    fn bce_saturated_logits_stay_finite() {
        let mut tape = Tape::<f64>::eval();
        let z = Tensor::from_vec(&[2], vec![40.0, -40.0]).unwrap();
        let y = Tensor::from_vec(&[2], vec![1.0, 0.0]).unwrap();
        let l = bce_with_logits(&mut tape, &z, &y).unwrap();
        let v = l.item().unwrap();
        assert!(v.is_finite());
        assert!(v < 1e-15, "both predictions are correct and saturated: {}", v);
        let y_flip = Tensor::from_vec(&[2], vec![0.0, 1.0]).unwrap();
        let l2 = bce_with_logits(&mut tape, &z, &y_flip).unwrap();
        assert!(close(l2.item().unwrap(), 40.0, 1e-9));
    }

    #[test]
    fn bce_rejects_soft_labels() {
        let mut tape = Tape::<f32>::eval();
        let z = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let y = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        assert!(bce_with_logits(&mut tape, &z, &y).is_err());
    }

    #[test]
    fn max_pool_and_backward_route_to_argmax() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(&[1, 1, 2, 4], vec![1.0, 2.0, 5.0, 3.0, 4.0, 0.0, -1.0, 6.0])
            .unwrap()
            .trainable();
        let p = max_pool2(&mut tape, &x).unwrap();
        assert_eq!(p.shape(), &[1, 1, 1, 2]);
        assert_eq!(p.to_vec(), vec![4.0, 6.0]);
        let l = sum(&mut tape, &p).unwrap();
        tape.backward(&l).unwrap();
        assert_eq!(x.grad(), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn upsample_replicates_and_backward_sums() {
        let mut tape = Tape::<f64>::new();
        let x = Tensor::from_vec(&[1, 1, 1, 2], vec![3.0, 7.0]).unwrap().trainable();
        let u = upsample_nearest2(&mut tape, &x).unwrap();
        assert_eq!(u.shape(), &[1, 1, 2, 4]);
        assert_eq!(u.to_vec(), vec![3.0, 3.0, 7.0, 7.0, 3.0, 3.0, 7.0, 7.0]);
        let l = sum(&mut tape, &u).unwrap();
        tape.backward(&l).unwrap();
        assert_eq!(x.grad(), vec![4.0, 4.0]);
    }

    #[test]
    fn backward_linearity() {
        // grad of (2*f + 3*g) equals 2*grad f + 3*grad g
        let run = |wa: f64, wb: f64| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let x = Tensor::from_vec(&[2], vec![0.7, -1.3]).unwrap().trainable();
            let f = mul(&mut tape, &x, &x).unwrap();
            let g = tanh(&mut tape, &x).unwrap();
            let fs = sum(&mut tape, &f).unwrap();
            let gs = sum(&mut tape, &g).unwrap();
            let fa = scale(&mut tape, &fs, wa).unwrap();
            let gb = scale(&mut tape, &gs, wb).unwrap();
            let l = add(&mut tape, &fa, &gb).unwrap();
            tape.backward(&l).unwrap();
            x.grad()
        };
        let gf = run(1.0, 0.0);
        let gg = run(0.0, 1.0);
        let gmix = run(2.0, 3.0);
        for i in 0..2 {
            assert!(close(gmix[i], 2.0 * gf[i] + 3.0 * gg[i], 1e-12));
        }
    }

    #[test]
    fn repeated_passes_accumulate_grads() {
        let x = Tensor::<f64>::from_vec(&[1], vec![3.0]).unwrap().trainable();
        for _ in 0..2 {
            let mut tape = Tape::new();
            let y = mul(&mut tape, &x, &x).unwrap();
            let l = sum(&mut tape, &y).unwrap();
            tape.backward(&l).unwrap();
        }
        assert_eq!(x.grad(), vec![12.0]);
        x.zero_grad();
        assert_eq!(x.grad(), vec![0.0]);
    }
}
