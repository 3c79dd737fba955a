//! Cubical persistent homology of scalar pixel grids under the superlevel
//! filtration: structures appear at high values first. Pixels are vertices,
//! components merge over 8-connectivity; cycles come from the complementary
//! 4-connected sweep, the standard pairing that keeps duality exact on 2D
//! grids. All diagram values are grid values copied verbatim, so oracle
//! comparisons can demand exact float equality.

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct DiagramPoint {
    pub birth: f64,
    pub death: f64,
    /// Row-major index of the pixel whose value equals birth.
    pub birth_px: usize,
    /// Row-major index of the pixel whose value equals death.
    pub death_px: usize,
    pub essential: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PersistenceDiagram {
    pub dim: usize,
    pub points: Vec<DiagramPoint>,
}

impl PersistenceDiagram {
    pub fn empty(dim: usize) -> Self {
        PersistenceDiagram { dim, points: Vec::new() }
    }

    /// Classes alive in the superlevel set at threshold t: a merged class
    /// counts for d < t ≤ b, an essential class for t ≤ b.
    pub fn alive_at(&self, t: f64) -> usize {
        self.points
            .iter()
            .filter(|p| t <= p.birth && (p.essential || p.death < t))
            .count()
    }

    /// (b, d) pairs sorted for multiset comparison.
    pub fn sorted_pairs(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self.points.iter().map(|p| (p.birth, p.death)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("diagram values are finite"));
        v
    }
}

/// A finite scalar grid swept from its maximum downwards.
pub struct CubicalFiltration {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl CubicalFiltration {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::invalid("cubical_filtration", "grid must be nonempty"));
        }
        if values.len() != h * w {
            return Err(Error::shape(
                "cubical_filtration",
                format!("{}x{} grid needs {} values, got {}", h, w, h * w, values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cubical_filtration", "grid values must be finite"));
        }
        Ok(CubicalFiltration { h, w, values })
    }

    /// Reads the trailing H×W plane of a [H, W] or [1, 1, H, W] tensor.
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let sh = t.shape();
        let (h, w) = match sh.len() {
            2 => (sh[0], sh[1]),
            4 if sh[0] == 1 && sh[1] == 1 => (sh[2], sh[3]),
            _ => {
                return Err(Error::shape(
                    "cubical_filtration",
                    format!("want [H, W] or [1, 1, H, W], got {:?}", sh),
                ));
            }
        };
        CubicalFiltration::new(h, w, t.data().iter().map(|v| v.as_f64()).collect())
    }

    pub fn from_mask(m: &Mask) -> Self {
        CubicalFiltration {
            h: m.h(),
            w: m.w(),
            values: m.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

struct UnionFind {
    parent: Vec<usize>,
    birth_val: Vec<f64>,
    birth_px: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), birth_val: vec![f64::NAN; n], birth_px: vec![usize::MAX; n] }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }
}

const OFFS8: [(isize, isize); 8] =
    [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
const OFFS4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];

/// Diagrams of dimensions 0 and 1 for the superlevel filtration.
///
/// Dim 0: pixels join in descending value order (ties by ascending index);
/// when components meet, the elder (higher birth value, then smaller birth
/// pixel) survives and the younger emits (its birth, current value). Dim 1 is
/// the mirrored sweep of the complement with a virtual outside node: a
/// complement component created at value d and absorbed at value b witnesses
/// a cycle (b, d). Non-essential points with b = d (zero persistence) are
/// dropped; the single essential dim-0 class dies at the global minimum.
pub fn compute_persistence(grid: &CubicalFiltration) -> Result<(PersistenceDiagram, PersistenceDiagram)> {
    let (h, w) = (grid.h, grid.w);
    let n = h * w;
    let v = &grid.values;

    // dim 0: descending sweep over the 8-connected foreground
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).expect("finite").then(a.cmp(&b)));
    let mut uf = UnionFind::new(n);
    let mut active = vec![false; n];
    let mut dim0 = Vec::new();
    for &p in &order {
        active[p] = true;
        uf.birth_val[p] = v[p];
        uf.birth_px[p] = p;
        let (py, px) = (p / w, p % w);
        for (dy, dx) in OFFS8 {
            let (ny, nx) = (py as isize + dy, px as isize + dx);
            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let q = ny as usize * w + nx as usize;
            if !active[q] {
                continue;
            }
            let rp = uf.find(p);
            let rq = uf.find(q);
            if rp == rq {
                continue;
            }
            // elder: higher birth value, ties to the smaller birth pixel
            let p_elder = match uf.birth_val[rp].partial_cmp(&uf.birth_val[rq]).expect("finite") {
                std::cmp::Ordering::Greater => true,
                std::cmp::Ordering::Less => false,
                std::cmp::Ordering::Equal => uf.birth_px[rp] < uf.birth_px[rq],
            };
            let (elder, younger) = if p_elder { (rp, rq) } else { (rq, rp) };
            if uf.birth_val[younger] > v[p] {
                dim0.push(DiagramPoint {
                    birth: uf.birth_val[younger],
                    death: v[p],
                    birth_px: uf.birth_px[younger],
                    death_px: p,
                    essential: false,
                });
            }
            uf.parent[younger] = elder;
        }
    }
    let root = uf.find(order[0]);
    let last = *order.last().expect("grid nonempty");
    dim0.push(DiagramPoint {
        birth: uf.birth_val[root],
        death: v[last],
        birth_px: uf.birth_px[root],
        death_px: last,
        essential: true,
    });

    // dim 1: mirrored ascending sweep over the 4-connected complement, with
    // a virtual outside node that border pixels join; a component absorbed
    // by an elder or by the outside closes a cycle
    let mut order1: Vec<usize> = (0..n).collect();
    order1.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite").then(b.cmp(&a)));
    let outside = n;
    let mut uf = UnionFind::new(n + 1);
    // eldest of all in the ascending sweep, so it survives every merge
    uf.birth_val[outside] = f64::NEG_INFINITY;
    let mut active = vec![false; n + 1];
    active[outside] = true;
    let mut dim1 = Vec::new();
    for &p in &order1 {
        active[p] = true;
        uf.birth_val[p] = v[p];
        uf.birth_px[p] = p;
        let (py, px) = (p / w, p % w);
        let on_border = py == 0 || px == 0 || py == h - 1 || px == w - 1;
        let mut neighbors: Vec<usize> = Vec::with_capacity(5);
        if on_border {
            neighbors.push(outside);
        }
        for (dy, dx) in OFFS4 {
            let (ny, nx) = (py as isize + dy, px as isize + dx);
            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let q = ny as usize * w + nx as usize;
            if active[q] {
                neighbors.push(q);
            }
        }
        for q in neighbors {
            let rp = uf.find(p);
            let rq = uf.find(q);
            if rp == rq {
                continue;
            }
            // elder in the ascending sweep: smaller birth value, ties to the
            // pixel joining earlier (larger index); the outside is eldest
            let p_elder = match uf.birth_val[rp].partial_cmp(&uf.birth_val[rq]).expect("finite") {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => uf.birth_px[rp] > uf.birth_px[rq],
            };
            let (elder, younger) = if p_elder { (rp, rq) } else { (rq, rp) };
            if v[p] > uf.birth_val[younger] {
                dim1.push(DiagramPoint {
                    birth: v[p],
                    death: uf.birth_val[younger],
                    birth_px: p,
                    death_px: uf.birth_px[younger],
                    essential: false,
                });
            }
            uf.parent[younger] = elder;
        }
    }

    Ok((PersistenceDiagram { dim: 0, points: dim0 }, PersistenceDiagram { dim: 1, points: dim1 }))
}

/// β0 = 8-connected foreground components, β1 = 4-connected background
/// components that never touch the image border (holes).
pub fn betti_numbers(mask: &Mask) -> (usize, usize) {
    let (h, w) = (mask.h(), mask.w());
    let mut seen = vec![false; h * w];
    let mut b0 = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        b0 += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (py, px) = (p / w, p % w);
            for (dy, dx) in OFFS8 {
                let (ny, nx) = (py as isize + dy, px as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if !seen[q] && mask.data()[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    let mut seen = vec![false; h * w];
    let mut b1 = 0;
    for start in 0..h * w {
        if seen[start] || mask.data()[start] {
            continue;
        }
        let mut enclosed = true;
        seen[start] = true;
        stack.push(start);
        let mut comp = vec![start];
        while let Some(p) = stack.pop() {
            let (py, px) = (p / w, p % w);
            if py == 0 || px == 0 || py == h - 1 || px == w - 1 {
                enclosed = false;
            }
            for (dy, dx) in OFFS4 {
                let (ny, nx) = (py as isize + dy, px as isize + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if !seen[q] && !mask.data()[q] {
                    seen[q] = true;
                    stack.push(q);
                    comp.push(q);
                }
            }
        }
        if enclosed {
            b1 += 1;
        }
    }
    (b0, b1)
}

/// Plain-text dump: one `dim b d birth_px death_px` line per point, dim 0
/// first, in computation order. Values use shortest-roundtrip formatting.
pub fn diagrams_to_text(dim0: &PersistenceDiagram, dim1: &PersistenceDiagram) -> String {
    let mut s = String::new();
    for dgm in [dim0, dim1] {
        for p in &dgm.points {
            s.push_str(&format!("{} {} {} {} {}\n", dgm.dim, p.birth, p.death, p.birth_px, p.death_px));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, v: Vec<f64>) -> CubicalFiltration {
        CubicalFiltration::new(h, w, v).unwrap()
    }

    #[test]
    fn constant_grid_has_one_essential_class() {
        let g = grid(3, 3, vec![0.8; 9]);
        let (d0, d1) = compute_persistence(&g).unwrap();
        assert_eq!(d0.points.len(), 1);
        let p = &d0.points[0];
        assert!(p.essential);
        assert_eq!((p.birth, p.death), (0.8, 0.8));
        assert!(d1.points.is_empty());
    }

    #[test]
    fn annulus_has_one_component_and_one_cycle() {
        let m = Mask::from_picture(
            ".....
             .###.
             .#.#.
             .###.
             .....",
        )
        .unwrap();
        let g = CubicalFiltration::from_mask(&m);
        let (d0, d1) = compute_persistence(&g).unwrap();
        assert_eq!(d0.sorted_pairs(), vec![(1.0, 0.0)]);
        assert!(d0.points[0].essential);
        assert_eq!(d1.sorted_pairs(), vec![(1.0, 0.0)]);
        let cyc = &d1.points[0];
        assert_eq!(g.values()[cyc.birth_px], 1.0);
        assert_eq!(g.values()[cyc.death_px], 0.0);
        assert_eq!(cyc.death_px, 2 * 5 + 2); // the hole pixel
        // betti agreement at the mid-threshold
        assert_eq!(betti_numbers(&m), (1, 1));
        assert_eq!(d0.alive_at(0.5), 1);
        assert_eq!(d1.alive_at(0.5), 1);
    }

    #[test]
    fn two_blobs_merge_through_background() {
        // 0.9 blob and 0.7 blob on 0.1 background
        let g = grid(
            3,
            5,
            vec![
                0.9, 0.9, 0.1, 0.7, 0.7, //
                0.9, 0.9, 0.1, 0.7, 0.7, //
                0.1, 0.1, 0.1, 0.1, 0.1,
            ],
        );
        let (d0, d1) = compute_persistence(&g).unwrap();
        assert_eq!(d0.sorted_pairs(), vec![(0.7, 0.1), (0.9, 0.1)]);
        let ess: Vec<bool> = d0.points.iter().map(|p| p.essential).collect();
        assert_eq!(ess.iter().filter(|&&e| e).count(), 1);
        let essential = d0.points.iter().find(|p| p.essential).unwrap();
        assert_eq!(essential.birth, 0.9);
        assert_eq!(essential.death, 0.1);
        let merged = d0.points.iter().find(|p| !p.essential).unwrap();
        assert_eq!(g.values()[merged.birth_px], 0.7);
        assert_eq!(g.values()[merged.death_px], 0.1);
        assert!(d1.points.is_empty());
        assert_eq!(d0.alive_at(0.5), 2);
        assert_eq!(d0.alive_at(0.1), 1);
    }

    #[test]
    fn gap_ring_cycle_spans_gap_to_hole_values() {
        // ring of 1s with a 0.5 gap pixel; hole pixel at 0.2 on 0 background
        let g = grid(
            5,
            5,
            vec![
                0.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 1.0, 1.0, 1.0, 0.0, //
                0.0, 1.0, 0.2, 0.5, 0.0, //
                0.0, 1.0, 1.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0,
            ],
        );
        let (_, d1) = compute_persistence(&g).unwrap();
        assert_eq!(d1.sorted_pairs(), vec![(0.5, 0.2)]);
        let p = &d1.points[0];
        assert_eq!(p.birth_px, 2 * 5 + 3); // the gap pixel closes the loop
        assert_eq!(p.death_px, 2 * 5 + 2); // the hole pixel fills it
        assert_eq!(d1.alive_at(0.5), 1);
        assert_eq!(d1.alive_at(0.2), 0);
        assert_eq!(d1.alive_at(0.6), 0);
    }

    #[test]
    fn two_disjoint_annuli() {
        let m = Mask::from_picture(
            "...........
             .###...###.
             .#.#...#.#.
             .###...###.
             ...........",
        )
        .unwrap();
        assert_eq!(betti_numbers(&m), (2, 2));
        let (d0, d1) = compute_persistence(&CubicalFiltration::from_mask(&m)).unwrap();
        assert_eq!(d0.alive_at(0.5), 2);
        assert_eq!(d1.alive_at(0.5), 2);
        assert_eq!(d1.sorted_pairs(), vec![(1.0, 0.0), (1.0, 0.0)]);
    }

    #[test]
    fn betti_hand_cases() {
        let full = Mask::new(4, 4, vec![true; 16]).unwrap();
        assert_eq!(betti_numbers(&full), (1, 0));
        let empty = Mask::zeros(4, 4);
        assert_eq!(betti_numbers(&empty), (0, 0));
        // diagonal pixels are 8-connected for foreground
        let diag = Mask::from_picture(
            "#..
             .#.
             ..#",
        )
        .unwrap();
        assert_eq!(betti_numbers(&diag), (1, 0));
        // but the background crosses diagonals only 4-connectedly, so a
        // diagonal foreground ring still encloses its center
        let cross = Mask::from_picture(
            ".#.
             #.#
             .#.",
        )
        .unwrap();
        assert_eq!(betti_numbers(&cross), (1, 1));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(CubicalFiltration::new(0, 3, vec![]).is_err());
        assert!(CubicalFiltration::new(2, 2, vec![1.0; 3]).is_err());
        assert!(CubicalFiltration::new(1, 2, vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn single_pixel_grid() {
        let g = grid(1, 1, vec![0.3]);
        let (d0, d1) = compute_persistence(&g).unwrap();
        assert_eq!(d0.sorted_pairs(), vec![(0.3, 0.3)]);
        assert!(d0.points[0].essential);
        assert!(d1.points.is_empty());
    }

    #[test]
    fn dump_format() {
        let g = grid(1, 2, vec![0.75, 0.25]);
        let (d0, d1) = compute_persistence(&g).unwrap();
        let text = diagrams_to_text(&d0, &d1);
        assert_eq!(text, "0 0.75 0.25 0 1\n");
    }
}
