//! Binary masks over pixel grids, shared by the topology code and metrics.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::invalid("mask", "extents must be positive"));
        }
        if data.len() != h * w {
            return Err(Error::shape("mask", format!("{}x{} grid needs {} booleans, got {}", h, w, h * w, data.len())));
        }
        Ok(Mask { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Mask { h, w, data: vec![false; h * w] }
    }

    /// Thresholds the trailing H×W plane of a rank-2 or rank-4 single-plane
    /// tensor: foreground where value ≥ thr.
    pub fn from_threshold<T: Element>(t: &Tensor<T>, thr: f64) -> Result<Self> {
        let sh = t.shape();
        let (h, w) = match sh.len() {
            2 => (sh[0], sh[1]),
            4 if sh[0] == 1 && sh[1] == 1 => (sh[2], sh[3]),
            _ => {
                return Err(Error::shape("mask", format!("want [H, W] or [1, 1, H, W], got {:?}", sh)));
            }
        };
        let data = t.data().iter().map(|v| v.as_f64() >= thr).collect();
        Mask::new(h, w, data)
    }

    /// Parses a string picture: '#' is foreground, '.' background; rows are
    /// lines. Test and fixture helper.
    pub fn from_picture(s: &str) -> Result<Self> {
        let rows: Vec<&str> = s.trim().lines().map(str::trim).collect();
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.chars().count());
        let mut data = Vec::with_capacity(h * w);
        for r in &rows {
            if r.chars().count() != w {
                return Err(Error::invalid("mask", "ragged picture rows"));
            }
            for c in r.chars() {
                match c {
                    '#' => data.push(true),
                    '.' => data.push(false),
                    _ => return Err(Error::invalid("mask", format!("unexpected character {:?}", c))),
                }
            }
        }
        Mask::new(h, w, data)
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.w + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&b| !b)
    }

    /// Foreground pixel coordinates as (y, x).
    pub fn ones(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if self.data[y * self.w + x] {
                    out.push((y, x));
                }
            }
        }
        out
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.h == other.h && self.w == other.w
    }
}
