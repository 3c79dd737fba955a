//! Brute-force reference implementations. Everything here recomputes results
//! from first principles (fresh flood fills per threshold, exhaustive
//! pairwise scans) and shares no code with the incremental algorithms it
//! cross-checks, trading speed for obviousness. Used by tests and the
//! acceptance suite; kept in the library so external harnesses can call them.

use crate::mask::Mask;
use crate::persistence::CubicalFiltration;

/// Dim-0 superlevel (b, d) pairs, sorted, via a full threshold sweep: at each
/// distinct value the 8-connected components of the superlevel set are
/// relabeled from scratch and matched to the previous level's components by
/// containment. A component inheriting several predecessors keeps the oldest
/// birth and emits one (birth, t) pair per absorbed younger predecessor.
pub fn dim0_pairs_by_level_sweep(grid: &CubicalFiltration) -> Vec<(f64, f64)> {
    let (h, w) = (grid.h(), grid.w());
    let v = grid.values();
    let mut levels: Vec<f64> = v.to_vec();
    levels.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    levels.dedup();

    let mut pairs = Vec::new();
    // per pixel: the birth value of the component it belonged to previously
    let mut prev_comp: Vec<Option<usize>> = vec![None; h * w];
    let mut comp_birth: Vec<f64> = Vec::new();
    for &t in &levels {
        let member: Vec<bool> = v.iter().map(|&x| x >= t).collect();
        let mut label: Vec<Option<usize>> = vec![None; h * w];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for start in 0..h * w {
            if !member[start] || label[start].is_some() {
                continue;
            }
            let id = groups.len();
            let mut stack = vec![start];
            label[start] = Some(id);
            let mut pixels = vec![start];
            while let Some(p) = stack.pop() {
                let (py, px) = (p / w, p % w);
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (ny, nx) = (py as isize + dy, px as isize + dx);
                        if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if member[q] && label[q].is_none() {
                            label[q] = Some(id);
                            stack.push(q);
                            pixels.push(q);
                        }
                    }
                }
            }
            groups.push(pixels);
        }
        let mut next_comp: Vec<Option<usize>> = vec![None; h * w];
        let mut next_birth = Vec::with_capacity(groups.len());
        for pixels in &groups {
            let mut preds: Vec<usize> = pixels.iter().filter_map(|&p| prev_comp[p]).collect();
            preds.sort_unstable();
            preds.dedup();
            let birth = if preds.is_empty() {
                t
            } else {
                let oldest = preds
                    .iter()
                    .cloned()
                    .max_by(|&a, &b| comp_birth[a].partial_cmp(&comp_birth[b]).expect("finite"))
                    .expect("nonempty");
                for &p in &preds {
                    if p != oldest {
                        pairs.push((comp_birth[p], t));
                    }
                }
                comp_birth[oldest]
            };
            let id = next_birth.len();
            next_birth.push(birth);
            for &p in pixels {
                next_comp[p] = Some(id);
            }
        }
        prev_comp = next_comp;
        comp_birth = next_birth;
    }
    let global_min = levels.last().copied().expect("grid nonempty");
    for b in comp_birth {
        pairs.push((b, global_min));
    }
    pairs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    pairs
}

/// Holes of the superlevel set at threshold t: 4-connected components of
/// {v < t} that never touch the border, each found by a fresh flood fill.
pub fn holes_by_flood_fill(grid: &CubicalFiltration, t: f64) -> usize {
    let (h, w) = (grid.h(), grid.w());
    let v = grid.values();
    let bg: Vec<bool> = v.iter().map(|&x| x < t).collect();
    let mut seen = vec![false; h * w];
    let mut holes = 0;
    for start in 0..h * w {
        if !bg[start] || seen[start] {
            continue;
        }
        let mut enclosed = true;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            let (py, px) = (p / w, p % w);
            if py == 0 || px == 0 || py == h - 1 || px == w - 1 {
                enclosed = false;
            }
            for (ny, nx) in [
                (py as isize - 1, px as isize),
                (py as isize + 1, px as isize),
                (py as isize, px as isize - 1),
                (py as isize, px as isize + 1),
            ] {
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if bg[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
        if enclosed {
            holes += 1;
        }
    }
    holes
}

/// Betti numbers by union-find instead of the production BFS.
pub fn betti_by_union_find(mask: &Mask) -> (usize, usize) {
    let (h, w) = (mask.h(), mask.w());
    let n = h * w;
    let find = |parent: &mut Vec<usize>, mut i: usize| {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    };
    // foreground, 8-connected
    let mut parent: Vec<usize> = (0..n).collect();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                continue;
            }
            for (dy, dx) in [(0isize, 1isize), (1, -1), (1, 0), (1, 1)] {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                if mask.get(ny as usize, nx as usize) {
                    let a = find(&mut parent, y * w + x);
                    let b = find(&mut parent, ny as usize * w + nx as usize);
                    parent[a] = b;
                }
            }
        }
    }
    let mut roots = std::collections::HashSet::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                let r = find(&mut parent, y * w + x);
                roots.insert(r);
            }
        }
    }
    let b0 = roots.len();
    // background, 4-connected, with a virtual outside root at index n
    let mut parent: Vec<usize> = (0..=n).collect();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) {
                continue;
            }
            if y == 0 || x == 0 || y == h - 1 || x == w - 1 {
                let a = find(&mut parent, y * w + x);
                let b = find(&mut parent, n);
                parent[a] = b;
            }
            for (dy, dx) in [(0isize, 1isize), (1, 0)] {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= h as isize || nx >= w as isize {
                    continue;
                }
                if !mask.get(ny as usize, nx as usize) {
                    let a = find(&mut parent, y * w + x);
                    let b = find(&mut parent, ny as usize * w + nx as usize);
                    parent[a] = b;
                }
            }
        }
    }
    let outside_root = find(&mut parent, n);
    let mut roots = std::collections::HashSet::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y, x) {
                let r = find(&mut parent, y * w + x);
                if r != outside_root {
                    roots.insert(r);
                }
            }
        }
    }
    (b0, roots.len())
}

/// Bidirectional Hausdorff distance between diagrams as bare (b, d) lists,
/// by exhaustive pairwise scan; one-sided emptiness falls back to diagonal
/// distances |b − d|/√2, both empty gives 0.
pub fn pairwise_diagram_hausdorff(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let diag = |pts: &[(f64, f64)]| {
        pts.iter().map(|&(x, y)| (x - y).abs() / 2f64.sqrt()).fold(0.0, f64::max)
    };
    match (a.is_empty(), b.is_empty()) {
        (true, true) => 0.0,
        (true, false) => diag(b),
        (false, true) => diag(a),
        (false, false) => {
            let directed = |from: &[(f64, f64)], to: &[(f64, f64)]| {
                from.iter()
                    .map(|&(x1, y1)| {
                        to.iter()
                            .map(|&(x2, y2)| ((x1 - x2).powi(2) + (y1 - y2).powi(2)).sqrt())
                            .fold(f64::INFINITY, f64::min)
                    })
                    .fold(0.0, f64::max)
            };
            directed(a, b).max(directed(b, a))
        }
    }
}

/// Bidirectional Hausdorff distance between the foreground pixel sets of two
/// masks, exhaustive over all pixel pairs. Panics if either mask is empty.
pub fn pairwise_mask_hausdorff(a: &Mask, b: &Mask) -> f64 {
    let pa = a.ones();
    let pb = b.ones();
    assert!(!pa.is_empty() && !pb.is_empty(), "hausdorff needs nonempty masks");
    let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| {
        from.iter()
            .map(|&(y1, x1)| {
                to.iter()
                    .map(|&(y2, x2)| {
                        let dy = y1 as f64 - y2 as f64;
                        let dx = x1 as f64 - x2 as f64;
                        (dy * dy + dx * dx).sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persistence::{betti_numbers, compute_persistence};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn production_dim0_matches_sweep_oracle_on_small_corpus() {
        // all binary 3x3 grids
        for bits in 0..512u32 {
            let vals: Vec<f64> = (0..9).map(|i| ((bits >> i) & 1) as f64).collect();
            let g = CubicalFiltration::new(3, 3, vals).unwrap();
            let (d0, _) = compute_persistence(&g).unwrap();
            assert_eq!(d0.sorted_pairs(), dim0_pairs_by_level_sweep(&g), "bits {:09b}", bits);
        }
        // random quantized 6x6 grids
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        for _ in 0..100 {
            let vals: Vec<f64> = (0..36).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
            let g = CubicalFiltration::new(6, 6, vals).unwrap();
            let (d0, _) = compute_persistence(&g).unwrap();
            assert_eq!(d0.sorted_pairs(), dim0_pairs_by_level_sweep(&g));
        }
    }

    #[test]
    fn production_dim1_counts_match_hole_oracle_on_small_corpus() {
        let check = |g: &CubicalFiltration| {
            let (_, d1) = compute_persistence(g).unwrap();
            let mut levels = g.values().to_vec();
            levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
            levels.dedup();
            for &t in &levels {
                assert_eq!(d1.alive_at(t), holes_by_flood_fill(g, t), "threshold {}", t);
            }
        };
        for bits in 0..512u32 {
            let vals: Vec<f64> = (0..9).map(|i| ((bits >> i) & 1) as f64).collect();
            check(&CubicalFiltration::new(3, 3, vals).unwrap());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        for _ in 0..100 {
            let vals: Vec<f64> = (0..36).map(|_| rng.gen_range(0..8) as f64 / 7.0).collect();
            check(&CubicalFiltration::new(6, 6, vals).unwrap());
        }
    }

    #[test]
    fn betti_implementations_agree_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(300);
        for _ in 0..200 {
            let data: Vec<bool> = (0..64).map(|_| rng.gen_bool(0.5)).collect();
            let m = Mask::new(8, 8, data).unwrap();
            assert_eq!(betti_numbers(&m), betti_by_union_find(&m));
        }
    }

    #[test]
    fn binary_masks_reproduce_betti_at_mid_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        for _ in 0..200 {
            let data: Vec<bool> = (0..49).map(|_| rng.gen_bool(0.45)).collect();
            let m = Mask::new(7, 7, data).unwrap();
            let g = CubicalFiltration::from_mask(&m);
            let (d0, d1) = compute_persistence(&g).unwrap();
            let (b0, b1) = betti_numbers(&m);
            assert_eq!(d0.alive_at(0.5), b0);
            assert_eq!(d1.alive_at(0.5), b1);
        }
    }

    #[test]
    fn stability_under_small_perturbation() {
        // every diagram point stays within eps (sup norm) of the perturbed
        // diagram or of the diagonal, both directions
        let mut rng = ChaCha8Rng::seed_from_u64(500);
        let eps = 0.01;
        for _ in 0..50 {
            let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
            let pert: Vec<f64> = vals.iter().map(|v| v + rng.gen_range(-eps..=eps)).collect();
            let ga = CubicalFiltration::new(8, 8, vals).unwrap();
            let gb = CubicalFiltration::new(8, 8, pert).unwrap();
            let (a0, a1) = compute_persistence(&ga).unwrap();
            let (b0, b1) = compute_persistence(&gb).unwrap();
            for (a, b) in [(&a0, &b0), (&a1, &b1)] {
                for (from, to) in [(a, b), (b, a)] {
                    for p in &from.points {
                        let to_diag = (p.birth - p.death) / 2.0;
                        let nearest = to
                            .points
                            .iter()
                            .map(|q| (p.birth - q.birth).abs().max((p.death - q.death).abs()))
                            .fold(f64::INFINITY, f64::min);
                        assert!(
                            nearest <= eps + 1e-12 || to_diag <= eps + 1e-12,
                            "point ({}, {}) moved more than eps",
                            p.birth,
                            p.death
                        );
                    }
                }
            }
        }
    }
}
