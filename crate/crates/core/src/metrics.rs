//! Segmentation quality metrics over binary masks and probability maps.
//!
//! Overlap (dice), centerline overlap (cldice via Zhang-Suen skeletons),
//! topology (betti_error), boundary distance (mask_hausdorff via an exact
//! Euclidean distance transform), plus pixel accuracy and rank AUC as
//! secondary report columns. Predictions are thresholded at 0.5 before any
//! mask metric.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::persistence::betti_numbers;

/// Probability threshold applied to prediction maps before mask metrics.
pub const PRED_THRESHOLD: f64 = 0.5;

fn check_same_shape(op: &'static str, a: &Mask, b: &Mask) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.h(), a.w(), b.h(), b.w()),
        ));
    }
    Ok(())
}

/// Dice overlap 2|P∩L| / (|P|+|L|). Both masks empty counts as perfect: 1.0.
pub fn dice(pred: &Mask, label: &Mask) -> Result<f64> {
    check_same_shape("dice", pred, label)?;
    let mut inter = 0usize;
    for (p, l) in pred.data().iter().zip(label.data()) {
        if *p && *l {
            inter += 1;
        }
    }
    let total = pred.count_ones() + label.count_ones();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

const ZS_NEIGHBORS: [(i64, i64); 8] = [
    (-1, 0),  // P2
    (-1, 1),  // P3
    (0, 1),   // P4
    (1, 1),   // P5
    (1, 0),   // P6
    (1, -1),  // P7
    (0, -1),  // P8
    (-1, -1), // P9
];

fn zs_neighborhood(mask: &Mask, y: usize, x: usize) -> [bool; 8] {
    let mut nb = [false; 8];
    for (i, (dy, dx)) in ZS_NEIGHBORS.iter().enumerate() {
        let ny = y as i64 + dy;
        let nx = x as i64 + dx;
        if ny >= 0 && nx >= 0 && (ny as usize) < mask.h() && (nx as usize) < mask.w() {
            nb[i] = mask.get(ny as usize, nx as usize);
        }
    }
    nb
}

/// Zhang-Suen thinning: two alternating subiterations, repeated until no
/// pixel is deleted. Result is a subset of the input and a fixpoint of the
/// procedure, so `skeletonize(skeletonize(m)) == skeletonize(m)`.
pub fn skeletonize(mask: &Mask) -> Mask {
    let mut cur = mask.clone();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut to_delete = Vec::new();
            for y in 0..cur.h() {
                for x in 0..cur.w() {
                    if !cur.get(y, x) {
                        continue;
                    }
                    let nb = zs_neighborhood(&cur, y, x);
                    let b: usize = nb.iter().map(|&v| v as usize).sum();
                    if !(2..=6).contains(&b) {
                        continue;
                    }
                    // A(p): 0->1 transitions around the cyclic P2..P9 walk
                    let mut a = 0;
                    for i in 0..8 {
                        if !nb[i] && nb[(i + 1) % 8] {
                            a += 1;
                        }
                    }
                    if a != 1 {
                        continue;
                    }
                    let (p2, p4, p6, p8) = (nb[0], nb[2], nb[4], nb[6]);
                    let ok = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if ok {
                        to_delete.push((y, x));
                    }
                }
            }
            if !to_delete.is_empty() {
                changed = true;
                for (y, x) in to_delete {
                    cur.set(y, x, false);
                }
            }
        }
        if !changed {
            return cur;
        }
    }
}

/// Centerline dice: harmonic mean of topology precision |skel(P)∩L|/|skel(P)|
/// and topology sensitivity |skel(L)∩P|/|skel(L)|. Both masks empty -> 1.0;
/// exactly one skeleton empty -> 0.0.
pub fn cldice(pred: &Mask, label: &Mask) -> Result<f64> {
    check_same_shape("cldice", pred, label)?;
    let skel_p = skeletonize(pred);
    let skel_l = skeletonize(label);
    if skel_p.is_empty() && skel_l.is_empty() {
        return Ok(1.0);
    }
    if skel_p.is_empty() || skel_l.is_empty() {
        return Ok(0.0);
    }
    let inside = |skel: &Mask, other: &Mask| {
        let mut hits = 0usize;
        for (s, o) in skel.data().iter().zip(other.data()) {
            if *s && *o {
                hits += 1;
            }
        }
        hits as f64 / skel.count_ones() as f64
    };
    let tprec = inside(&skel_p, label);
    let tsens = inside(&skel_l, pred);
    if tprec + tsens == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tprec * tsens / (tprec + tsens))
}

/// Per-dimension Betti number error (e0, e1) = |β_n(pred) − β_n(label)|.
pub fn betti_error(pred: &Mask, label: &Mask) -> Result<(usize, usize)> {
    check_same_shape("betti_error", pred, label)?;
    let (p0, p1) = betti_numbers(pred);
    let (l0, l1) = betti_numbers(label);
    Ok((p0.abs_diff(l0), p1.abs_diff(l1)))
}

const EDT_INF: f64 = 1e20;

fn dt1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    // lower envelope of parabolas q -> f[q] + (p-q)^2
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = -EDT_INF;
    z[1] = EDT_INF;
    for q in 1..n {
        loop {
            let p = v[k];
            let s = (f[q] + (q * q) as f64 - f[p] - (p * p) as f64) / (2.0 * (q - p) as f64);
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = EDT_INF;
                break;
            }
        }
    }
    k = 0;
    for p in 0..n {
        while z[k + 1] < p as f64 {
            k += 1;
        }
        let q = v[k];
        let dq = p as f64 - q as f64;
        d[p] = dq * dq + f[q];
    }
}

/// Exact squared Euclidean distance from every pixel to the nearest
/// foreground pixel of `mask` (row-major H*W). All-background input yields
/// a huge sentinel everywhere; callers must reject empty masks first.
pub fn squared_edt(mask: &Mask) -> Vec<f64> {
    let (h, w) = (mask.h(), mask.w());
    let mut grid: Vec<f64> = mask
        .data()
        .iter()
        .map(|&fg| if fg { 0.0 } else { EDT_INF })
        .collect();
    let mut col_in = vec![0.0f64; h];
    let mut col_out = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            col_in[y] = grid[y * w + x];
        }
        dt1d(&col_in, &mut col_out);
        for y in 0..h {
            grid[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0f64; w];
    for y in 0..h {
        dt1d(&grid[y * w..(y + 1) * w], &mut row_out);
        grid[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    grid
}

fn directed_mask_dist(from: &Mask, edt_to: &[f64], w: usize) -> f64 {
    let mut worst = 0.0f64;
    for (y, x) in from.ones() {
        worst = worst.max(edt_to[y * w + x]);
    }
    worst.sqrt()
}

/// Bidirectional Hausdorff distance between the foreground coordinate sets,
/// Euclidean in pixel units. Undefined (error) when either mask is empty.
pub fn mask_hausdorff(pred: &Mask, label: &Mask) -> Result<f64> {
    check_same_shape("mask_hausdorff", pred, label)?;
    if pred.is_empty() || label.is_empty() {
        return Err(Error::undefined(
            "mask_hausdorff",
            "distance to an empty mask",
        ));
    }
    let edt_label = squared_edt(label);
    let edt_pred = squared_edt(pred);
    let d_pl = directed_mask_dist(pred, &edt_label, label.w());
    let d_lp = directed_mask_dist(label, &edt_pred, pred.w());
    Ok(d_pl.max(d_lp))
}

fn check_prob_map(op: &'static str, prob: &[f64], label: &Mask) -> Result<()> {
    if prob.len() != label.h() * label.w() {
        return Err(Error::shape(
            op,
            format!("{} probabilities vs {}x{} label", prob.len(), label.h(), label.w()),
        ));
    }
    Ok(())
}

/// Pixel accuracy of the thresholded probability map against the label.
pub fn pixel_accuracy(prob: &[f64], label: &Mask) -> Result<f64> {
    check_prob_map("pixel_accuracy", prob, label)?;
    let mut hits = 0usize;
    for (p, l) in prob.iter().zip(label.data()) {
        if (*p >= PRED_THRESHOLD) == *l {
            hits += 1;
        }
    }
    Ok(hits as f64 / prob.len() as f64)
}

/// Rank AUC (Mann-Whitney) of the probability map, with average ranks over
/// ties. Degenerate labels (either class absent) report 1.0.
pub fn rank_auc(prob: &[f64], label: &Mask) -> Result<f64> {
    check_prob_map("rank_auc", prob, label)?;
    let n_pos = label.count_ones();
    let n_neg = prob.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(1.0);
    }
    let mut order: Vec<usize> = (0..prob.len()).collect();
    order.sort_by(|&a, &b| prob[a].partial_cmp(&prob[b]).expect("finite probabilities"));
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && prob[order[j]] == prob[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied block [i, j) shares the average rank
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if label.data()[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// One evaluated image: every report column except the summary row.
#[derive(Debug, Clone)]
pub struct ImageMetrics {
    pub name: String,
    pub dice: f64,
    pub cldice: f64,
    pub betti0_err: f64,
    pub betti1_err: f64,
    pub hausdorff: f64,
    pub acc: f64,
    pub auc: f64,
}

impl ImageMetrics {
    fn columns(&self) -> [f64; 7] {
        [
            self.dice,
            self.cldice,
            self.betti0_err,
            self.betti1_err,
            self.hausdorff,
            self.acc,
            self.auc,
        ]
    }
}

/// Evaluate every metric for one probability map against its label mask.
/// The prediction mask is `prob >= 0.5`; an empty prediction or label makes
/// the Hausdorff column undefined and fails the whole image.
pub fn evaluate_image(name: &str, prob: &[f64], label: &Mask) -> Result<ImageMetrics> {
    check_prob_map("evaluate_image", prob, label)?;
    let mut bits = vec![false; prob.len()];
    for (b, p) in bits.iter_mut().zip(prob) {
        *b = *p >= PRED_THRESHOLD;
    }
    let pred = Mask::new(label.h(), label.w(), bits)?;
    let (e0, e1) = betti_error(&pred, label)?;
    Ok(ImageMetrics {
        name: name.to_string(),
        dice: dice(&pred, label)?,
        cldice: cldice(&pred, label)?,
        betti0_err: e0 as f64,
        betti1_err: e1 as f64,
        hausdorff: mask_hausdorff(&pred, label)?,
        acc: pixel_accuracy(prob, label)?,
        auc: rank_auc(prob, label)?,
    })
}

/// Per-image metric rows plus a mean / standard deviation summary.
#[derive(Debug, Default, Clone)]
pub struct MetricsReport {
    rows: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self { rows: Vec::new() }
    }

    pub fn push(&mut self, row: ImageMetrics) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[ImageMetrics] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Column means in report order (dice..auc). Empty report -> zeros.
    pub fn mean(&self) -> [f64; 7] {
        let mut m = [0.0f64; 7];
        if self.rows.is_empty() {
            return m;
        }
        for row in &self.rows {
            for (acc, v) in m.iter_mut().zip(row.columns()) {
                *acc += v;
            }
        }
        for v in &mut m {
            *v /= self.rows.len() as f64;
        }
        m
    }

    /// Population standard deviation per column.
    pub fn std(&self) -> [f64; 7] {
        let mut s = [0.0f64; 7];
        if self.rows.is_empty() {
            return s;
        }
        let m = self.mean();
        for row in &self.rows {
            for ((acc, v), mu) in s.iter_mut().zip(row.columns()).zip(m) {
                *acc += (v - mu) * (v - mu);
            }
        }
        for v in &mut s {
            *v = (*v / self.rows.len() as f64).sqrt();
        }
        s
    }

    /// CSV with a fixed header, one 4-decimal row per image, and a final
    /// `mean±std` summary row over the dataset.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,dice,cldice,betti0_err,betti1_err,hausdorff,acc,auc\n");
        for row in &self.rows {
            out.push_str(&row.name);
            for v in row.columns() {
                out.push_str(&format!(",{v:.4}"));
            }
            out.push('\n');
        }
        if !self.rows.is_empty() {
            let (m, s) = (self.mean(), self.std());
            out.push_str("mean±std");
            for (mu, sd) in m.iter().zip(s) {
                out.push_str(&format!(",{mu:.4}±{sd:.4}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::pairwise_mask_hausdorff;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Mask {
        let bits = (0..h * w).map(|_| rng.gen_bool(density)).collect();
        Mask::new(h, w, bits).unwrap()
    }

    fn nonempty_random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, density: f64) -> Mask {
        loop {
            let m = random_mask(rng, h, w, density);
            if !m.is_empty() {
                return m;
            }
        }
    }

    #[test]
    fn dice_counts_overlap() {
        let a = Mask::from_picture("####....\n####....").unwrap();
        let b = Mask::from_picture("..####..\n..####..").unwrap();
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);

        let disjoint = Mask::from_picture("....####\n....####").unwrap();
        assert_eq!(dice(&a, &disjoint).unwrap(), 0.0);

        let empty = Mask::zeros(2, 8);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
        assert_eq!(dice(&a, &empty).unwrap(), 0.0);

        assert!(dice(&a, &Mask::zeros(3, 3)).is_err());
    }

    #[test]
    fn dice_and_cldice_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let a = random_mask(&mut rng, 9, 9, 0.4);
            let b = random_mask(&mut rng, 9, 9, 0.4);
            assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            let ab = cldice(&a, &b).unwrap();
            let ba = cldice(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-15);
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn skeletonize_trivial_masks() {
        let empty = Mask::zeros(5, 5);
        assert!(skeletonize(&empty).is_empty());

        let mut single = Mask::zeros(5, 5);
        single.set(2, 3, true);
        let skel = skeletonize(&single);
        assert_eq!(skel.count_ones(), 1);
        assert!(skel.get(2, 3));
    }

    #[test]
    fn skeletonize_thins_bar_to_unit_width() {
        // 3-wide horizontal bar of length 20, away from the image border
        let mut bar = Mask::zeros(9, 26);
        for y in 3..6 {
            for x in 3..23 {
                bar.set(y, x, true);
            }
        }
        let skel = skeletonize(&bar);
        assert!(!skel.is_empty());
        // width 1 everywhere: nearest background is edge-adjacent, so the
        // distance transform into the skeleton's complement never exceeds 1
        let mut complement = Mask::zeros(skel.h(), skel.w());
        for y in 0..skel.h() {
            for x in 0..skel.w() {
                complement.set(y, x, !skel.get(y, x));
            }
        }
        let edt = squared_edt(&complement);
        let depth = skel
            .ones()
            .iter()
            .map(|&(y, x)| edt[y * skel.w() + x])
            .fold(0.0f64, f64::max);
        assert!(depth <= 1.0, "skeleton thicker than one pixel");
        // still a single connected piece
        assert_eq!(betti_numbers(&skel), (1, 0));
    }

    #[test]
    fn skeletonize_is_idempotent_and_shrinking() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_mask(&mut rng, 10, 10, 0.55);
            let s1 = skeletonize(&m);
            // never adds pixels
            for (orig, thin) in m.data().iter().zip(s1.data()) {
                assert!(!*thin || *orig);
            }
            let s2 = skeletonize(&s1);
            assert_eq!(s1.data(), s2.data());
        }
    }

    #[test]
    fn cldice_conventions_and_dilated_example() {
        let empty = Mask::zeros(4, 4);
        assert_eq!(cldice(&empty, &empty).unwrap(), 1.0);
        let mut one = Mask::zeros(4, 4);
        one.set(1, 1, true);
        assert_eq!(cldice(&one, &empty).unwrap(), 0.0);
        assert_eq!(cldice(&empty, &one).unwrap(), 0.0);

        let line = {
            let mut m = Mask::zeros(9, 20);
            for x in 2..18 {
                m.set(4, x, true);
            }
            m
        };
        assert_eq!(cldice(&line, &line).unwrap(), 1.0);

        // pred = label dilated by one pixel (8-neighborhood)
        let mut dilated = Mask::zeros(9, 20);
        for (y, x) in line.ones() {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny >= 0 && nx >= 0 && (ny as usize) < 9 && (nx as usize) < 20 {
                        dilated.set(ny as usize, nx as usize, true);
                    }
                }
            }
        }
        // direct formula evaluation on this explicit pair
        let skel_p = skeletonize(&dilated);
        let skel_l = skeletonize(&line);
        let count_in = |skel: &Mask, other: &Mask| {
            skel.ones().iter().filter(|&&(y, x)| other.get(y, x)).count() as f64
                / skel.count_ones() as f64
        };
        let tprec = count_in(&skel_p, &line);
        let tsens = count_in(&skel_l, &dilated);
        assert_eq!(tsens, 1.0, "label skeleton must stay inside the dilation");
        let expected = 2.0 * tprec * tsens / (tprec + tsens);
        let got = cldice(&dilated, &line).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!(got > 0.8);

        let far = {
            let mut m = Mask::zeros(9, 20);
            m.set(0, 0, true);
            m
        };
        assert_eq!(cldice(&line, &far).unwrap(), 0.0);
    }

    #[test]
    fn betti_error_hand_cases() {
        let ring = Mask::from_picture("#####\n#...#\n#...#\n#####").unwrap();
        let disk = Mask::from_picture("#####\n#####\n#####\n#####").unwrap();
        assert_eq!(betti_error(&ring, &ring).unwrap(), (0, 0));
        assert_eq!(betti_error(&ring, &disk).unwrap(), (0, 1));

        let bar = Mask::from_picture("########").unwrap();
        let cut = Mask::from_picture("###.####").unwrap();
        assert_eq!(betti_error(&cut, &bar).unwrap().0, 1);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let m = random_mask(&mut rng, 8, 8, 0.5);
            assert_eq!(betti_error(&m, &m).unwrap(), (0, 0));
        }
    }

    #[test]
    fn mask_hausdorff_hand_cases() {
        let mut a = Mask::zeros(6, 6);
        a.set(0, 0, true);
        let mut b = Mask::zeros(6, 6);
        b.set(3, 4, true);
        assert_eq!(mask_hausdorff(&a, &a).unwrap(), 0.0);
        assert_eq!(mask_hausdorff(&a, &b).unwrap(), 5.0);

        // full ring vs ring missing one arc: worst distance comes from the gap
        let ring = Mask::from_picture(
            "........\n.######.\n.#....#.\n.#....#.\n.#....#.\n.######.\n........",
        )
        .unwrap();
        let broken = Mask::from_picture(
            "........\n.##..##.\n.#....#.\n.#....#.\n.#....#.\n.######.\n........",
        )
        .unwrap();
        let d = mask_hausdorff(&ring, &broken).unwrap();
        assert_eq!(d, pairwise_mask_hausdorff(&ring, &broken));
        assert!(d > 0.0);

        let empty = Mask::zeros(6, 6);
        assert!(mask_hausdorff(&a, &empty).is_err());
        assert!(mask_hausdorff(&empty, &a).is_err());
    }

    #[test]
    fn mask_hausdorff_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..60 {
            let a = nonempty_random_mask(&mut rng, 11, 13, 0.25);
            let b = nonempty_random_mask(&mut rng, 11, 13, 0.25);
            let fast = mask_hausdorff(&a, &b).unwrap();
            let slow = pairwise_mask_hausdorff(&a, &b);
            assert!((fast - slow).abs() < 1e-9, "fast {fast} vs oracle {slow}");
        }
    }

    #[test]
    fn mask_hausdorff_symmetry_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..40 {
            let a = nonempty_random_mask(&mut rng, 9, 9, 0.3);
            let b = nonempty_random_mask(&mut rng, 9, 9, 0.3);
            let c = nonempty_random_mask(&mut rng, 9, 9, 0.3);
            let ab = mask_hausdorff(&a, &b).unwrap();
            let ba = mask_hausdorff(&b, &a).unwrap();
            assert!((ab - ba).abs() < 1e-12);
            let bc = mask_hausdorff(&b, &c).unwrap();
            let ac = mask_hausdorff(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn accuracy_and_auc_hand_cases() {
        let label = Mask::new(1, 4, vec![false, false, true, true]).unwrap();
        let prob = [0.1, 0.4, 0.6, 0.9];
        assert_eq!(pixel_accuracy(&prob, &label).unwrap(), 1.0);
        assert_eq!(rank_auc(&prob, &label).unwrap(), 1.0);

        let reversed = [0.9, 0.6, 0.4, 0.1];
        assert_eq!(pixel_accuracy(&reversed, &label).unwrap(), 0.0);
        assert_eq!(rank_auc(&reversed, &label).unwrap(), 0.0);

        // all probabilities tied: AUC 0.5, threshold >= fires everywhere
        let flat = [0.5, 0.5, 0.5, 0.5];
        assert_eq!(rank_auc(&flat, &label).unwrap(), 0.5);
        assert_eq!(pixel_accuracy(&flat, &label).unwrap(), 0.5);

        // degenerate labels report 1.0
        let all_pos = Mask::new(1, 4, vec![true; 4]).unwrap();
        let none = Mask::zeros(1, 4);
        assert_eq!(rank_auc(&prob, &all_pos).unwrap(), 1.0);
        assert_eq!(rank_auc(&prob, &none).unwrap(), 1.0);

        // one concordant swap out of 2x2 pairs
        let partial = [0.1, 0.6, 0.4, 0.9];
        assert_eq!(rank_auc(&partial, &label).unwrap(), 0.75);
        assert!(rank_auc(&[0.1], &label).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let label = Mask::from_picture("....\n.##.\n....").unwrap();
        let prob: Vec<f64> = label
            .data()
            .iter()
            .map(|&fg| if fg { 0.9 } else { 0.1 })
            .collect();
        let row = evaluate_image("img_0", &prob, &label).unwrap();
        assert_eq!(row.dice, 1.0);
        assert_eq!(row.hausdorff, 0.0);
        assert_eq!(row.acc, 1.0);

        let mut report = MetricsReport::new();
        report.push(row.clone());
        report.push(ImageMetrics { name: "img_1".into(), dice: 0.5, ..row });
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "image,dice,cldice,betti0_err,betti1_err,hausdorff,acc,auc");
        assert!(lines[1].starts_with("img_0,1.0000,"));
        assert!(lines[2].starts_with("img_1,0.5000,"));
        assert!(lines[3].starts_with("mean±std,0.7500±0.2500,"));
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn evaluate_image_thresholds_at_half() {
        let label = Mask::from_picture("##..\n##..").unwrap();
        // 0.5 itself counts as foreground
        let prob = [0.5, 0.7, 0.2, 0.1, 0.9, 0.51, 0.49, 0.0];
        let row = evaluate_image("t", &prob, &label).unwrap();
        assert_eq!(row.dice, 1.0);
        assert_eq!(row.betti0_err, 0.0);

        // empty prediction: hausdorff is undefined
        let cold = [0.0; 8];
        assert!(evaluate_image("t", &cold, &label).is_err());
    }
}
