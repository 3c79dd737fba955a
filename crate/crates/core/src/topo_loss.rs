//! Topology-matching loss: bidirectional Hausdorff distance between the
//! persistence diagrams of a predicted probability map and its label, summed
//! over homology dimensions 0 and 1 and added to cross-entropy. The distance
//! only depends on the grid through the critical pixels of the achieving
//! max-min pair, so the backward pass routes gradient to exactly those
//! pixels.

use crate::error::{Error, Result};
use crate::ops::{self, tensor_of};
use crate::persistence::{compute_persistence, CubicalFiltration, PersistenceDiagram};
use crate::tape::Tape;
use crate::tensor::{Element, Tensor};

/// How the achieving distance depends on the prediction diagram.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Route {
    /// No dependence (both diagrams empty, or only the label side has
    /// points, whose diagonal distances are constants).
    None,
    /// Label diagram empty: the max diagonal distance over prediction
    /// points, achieved by this one.
    Diagonal { pred: usize },
    /// The achieving max-min pair, prediction side first.
    Pair { pred: usize, label: usize },
}

fn point_dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// max over `from` of min over `to`, with the achieving index pair.
fn directed(from: &PersistenceDiagram, to: &PersistenceDiagram) -> (f64, usize, usize) {
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (i, p) in from.points.iter().enumerate() {
        let mut inner = (f64::INFINITY, 0);
        for (j, q) in to.points.iter().enumerate() {
            let d = point_dist((p.birth, p.death), (q.birth, q.death));
            if d < inner.0 {
                inner = (d, j);
            }
        }
        if inner.0 > best.0 {
            best = (inner.0, i, inner.1);
        }
    }
    best
}

fn max_diagonal(dgm: &PersistenceDiagram) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, p) in dgm.points.iter().enumerate() {
        let d = (p.birth - p.death).abs() / 2f64.sqrt();
        if d > best.0 {
            best = (d, i);
        }
    }
    best
}

fn hausdorff_with_route(pred: &PersistenceDiagram, label: &PersistenceDiagram) -> (f64, Route) {
    match (pred.points.is_empty(), label.points.is_empty()) {
        (true, true) => (0.0, Route::None),
        (true, false) => (max_diagonal(label).0, Route::None),
        (false, true) => {
            let (d, i) = max_diagonal(pred);
            (d, Route::Diagonal { pred: i })
        }
        (false, false) => {
            let (d_pl, p1, l1) = directed(pred, label);
            let (d_lp, l2, p2) = directed(label, pred);
            if d_pl >= d_lp {
                (d_pl, Route::Pair { pred: p1, label: l1 })
            } else {
                (d_lp, Route::Pair { pred: p2, label: l2 })
            }
        }
    }
}

/// Bidirectional Hausdorff distance between two diagrams of the same
/// dimension: max over each side of the distance to the nearest point on the
/// other side. Both empty gives 0; exactly one empty gives the other side's
/// largest distance to the diagonal, |b − d|/√2.
pub fn diagram_hausdorff(a: &PersistenceDiagram, b: &PersistenceDiagram) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::invalid(
            "diagram_hausdorff",
            format!("dimension mismatch: {} vs {}", a.dim, b.dim),
        ));
    }
    Ok(hausdorff_with_route(a, b).0)
}

#[derive(Clone, Copy, Debug)]
pub struct TopoOptions {
    /// Side length of non-overlapping square patches the diagrams are
    /// computed on; None sweeps each image whole.
    pub patch: Option<usize>,
}

impl Default for TopoOptions {
    fn default() -> Self {
        TopoOptions { patch: None }
    }
}

/// Gradient contributions of one achieving pair: flat pixel index and the
/// partial derivative of the distance w.r.t. that pixel's probability.
fn route_grads(
    route: Route,
    pred_dgm: &PersistenceDiagram,
    label_dgm: &PersistenceDiagram,
    to_global: impl Fn(usize) -> usize,
    out: &mut Vec<(usize, f64)>,
) {
    match route {
        Route::None => {}
        Route::Diagonal { pred } => {
            let p = &pred_dgm.points[pred];
            // b ≥ d always holds, so the sign is fixed unless b = d
            if p.birth > p.death {
                let s = 1.0 / 2f64.sqrt();
                out.push((to_global(p.birth_px), s));
                out.push((to_global(p.death_px), -s));
            }
        }
        Route::Pair { pred, label } => {
            let u = &pred_dgm.points[pred];
            let v = &label_dgm.points[label];
            let dist = point_dist((u.birth, u.death), (v.birth, v.death));
            if dist > 0.0 {
                out.push((to_global(u.birth_px), (u.birth - v.birth) / dist));
                out.push((to_global(u.death_px), (u.death - v.death) / dist));
            }
        }
    }
}

/// Topological mismatch term: for each batch item (optionally per patch),
/// the Hausdorff distances between prediction and label diagrams of
/// dimensions 0 and 1, summed, then averaged over the batch. Gradient flows
/// only to the prediction pixels that realize each achieving pair.
pub fn topo_term<T: Element>(
    tape: &mut Tape<T>,
    prob: &Tensor<T>,
    label: &Tensor<T>,
    opts: &TopoOptions,
) -> Result<Tensor<T>> {
    let sh = prob.shape().to_vec();
    if sh.len() != 4 || sh[1] != 1 {
        return Err(Error::shape("topo_term", format!("want [B, 1, H, W], got {:?}", sh)));
    }
    if label.shape() != sh {
        return Err(Error::shape(
            "topo_term",
            format!("label {:?} vs prediction {:?}", label.shape(), sh),
        ));
    }
    if let Some(ps) = opts.patch {
        if ps == 0 {
            return Err(Error::invalid("topo_term", "patch size must be positive"));
        }
    }
    let (bsz, h, w) = (sh[0], sh[2], sh[3]);
    let hw = h * w;
    {
        let pd = prob.data();
        if pd.iter().any(|v| v.as_f64() < 0.0 || v.as_f64() > 1.0) {
            return Err(Error::invalid("topo_term", "probabilities must lie in [0, 1]"));
        }
        let ld = label.data();
        if ld.iter().any(|v| v.as_f64() != 0.0 && v.as_f64() != 1.0) {
            return Err(Error::invalid("topo_term", "label must be binary"));
        }
    }

    let mut total = 0.0f64;
    let mut grads: Vec<(usize, f64)> = Vec::new();
    {
        let pd = prob.data();
        let ld = label.data();
        let (ph, pw) = match opts.patch {
            Some(ps) => (ps, ps),
            None => (h, w),
        };
        for b in 0..bsz {
            let base = b * hw;
            let mut y0 = 0;
            while y0 < h {
                let th = ph.min(h - y0);
                let mut x0 = 0;
                while x0 < w {
                    let tw = pw.min(w - x0);
                    let mut pvals = Vec::with_capacity(th * tw);
                    let mut lvals = Vec::with_capacity(th * tw);
                    for ly in 0..th {
                        for lx in 0..tw {
                            let g = base + (y0 + ly) * w + (x0 + lx);
                            pvals.push(pd[g].as_f64());
                            lvals.push(ld[g].as_f64());
                        }
                    }
                    let pg = CubicalFiltration::new(th, tw, pvals)?;
                    let lg = CubicalFiltration::new(th, tw, lvals)?;
                    let (p0, p1) = compute_persistence(&pg)?;
                    let (l0, l1) = compute_persistence(&lg)?;
                    let to_global =
                        |local: usize| base + (y0 + local / tw) * w + (x0 + local % tw);
                    let mut patch_grads = Vec::new();
                    for (pdgm, ldgm) in [(&p0, &l0), (&p1, &l1)] {
                        let (d, route) = hausdorff_with_route(pdgm, ldgm);
                        total += d;
                        route_grads(route, pdgm, ldgm, to_global, &mut patch_grads);
                    }
                    grads.extend(patch_grads);
                    x0 += tw;
                }
                y0 += th;
            }
        }
    }
    let scale = 1.0 / bsz as f64;
    total *= scale;
    for g in &mut grads {
        g.1 *= scale;
    }

    let out = tensor_of("topo_term", &[1], vec![T::from_f64(total)])?;
    let cp = prob.clone();
    tape.push(prob.requires_grad(), &out, move |up| {
        let u = up[0].as_f64();
        for &(idx, g) in &grads {
            cp.accumulate_grad_at(idx, T::from_f64(g * u));
        }
    });
    Ok(out)
}

/// The pieces of the combined loss; ce + topo = total exactly, with topo
/// already carrying its weight.
pub struct TcLoss<T: Element = f32> {
    pub total: Tensor<T>,
    pub ce: Tensor<T>,
    pub topo: Tensor<T>,
}

/// Cross-entropy plus weighted topological mismatch. Takes logits, not
/// probabilities: the CE term needs them for the stable log-sum form, and
/// the topology term applies sigmoid internally, so its gradient reaches the
/// logits through the chain rule.
pub fn tc_loss<T: Element>(
    tape: &mut Tape<T>,
    logits: &Tensor<T>,
    label: &Tensor<T>,
    weight: f64,
    opts: &TopoOptions,
) -> Result<TcLoss<T>> {
    if !weight.is_finite() || weight < 0.0 {
        return Err(Error::invalid("tc_loss", format!("weight {} must be finite and nonnegative", weight)));
    }
    let ce = ops::bce_with_logits(tape, logits, label)?;
    let prob = ops::sigmoid(tape, logits)?;
    let raw = topo_term(tape, &prob, label, opts)?;
    let topo = ops::scale(tape, &raw, weight)?;
    let total = ops::add(tape, &ce, &topo)?;
    Ok(TcLoss { total, ce, topo })
}
