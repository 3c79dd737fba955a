//! Dense row-major tensors with shared storage and an optional gradient slot.
//!
//! Storage is `f32` in normal use; the same code instantiates with `f64` for
//! gradient checking. Reductions always accumulate in `f64` regardless of the
//! storage type.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::Path;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Scalar types the tensor engine runs on.
pub trait Element:
    num_traits::Float + num_traits::NumAssignOps + fmt::Debug + fmt::Display + Default + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense tensor handle. Clones share storage, so a clone held by a tape
/// record sees parameter updates and accumulates into the same gradient.
pub struct Tensor<T: Element = f32> {
    shape: Vec<usize>,
    data: Rc<RefCell<Vec<T>>>,
    grad: Rc<RefCell<Option<Vec<T>>>>,
    requires_grad: Rc<Cell<bool>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            grad: Rc::clone(&self.grad),
            requires_grad: Rc::clone(&self.requires_grad),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("requires_grad", &self.requires_grad.get())
            .finish()
    }
}

impl<T: Element> Tensor<T> {
    /// Builds a tensor from raw data. The element count must match the shape
    /// product and every value must be finite.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "from_vec",
                format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "from_vec" });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Rc::new(RefCell::new(data)),
            grad: Rc::new(RefCell::new(None)),
            requires_grad: Rc::new(Cell::new(false)),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![T::zero(); numel]).expect("zeros is always valid")
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel])
    }

    pub fn scalar(value: T) -> Result<Self> {
        Tensor::from_vec(&[1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad.get()
    }

    pub fn set_requires_grad(&self, flag: bool) {
        self.requires_grad.set(flag);
    }

    /// Marks the tensor as a trainable leaf and returns it.
    pub fn trainable(self) -> Self {
        self.set_requires_grad(true);
        self
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.data.borrow_mut()
    }

    /// Scalar extraction; errors unless the tensor has exactly one element.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::shape("item", format!("shape {:?} is not scalar", self.shape)));
        }
        Ok(self.data.borrow()[0])
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.borrow().iter().map(|v| v.as_f64()).collect()
    }

    /// Current gradient, cloned; zeros when nothing has been accumulated yet.
    pub fn grad(&self) -> Vec<T> {
        match self.grad.borrow().as_ref() {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.numel()],
        }
    }

    pub fn has_grad(&self) -> bool {
        self.grad.borrow().is_some()
    }

    /// Adds `delta` into the gradient slot, allocating it on first use.
    pub fn accumulate_grad(&self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.grad.borrow_mut();
        let g = slot.get_or_insert_with(|| vec![T::zero(); delta.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += *di;
        }
    }

    /// Adds into a single gradient element, allocating the slot on first use.
    pub fn accumulate_grad_at(&self, index: usize, delta: T) {
        let n = self.numel();
        debug_assert!(index < n);
        let mut slot = self.grad.borrow_mut();
        let g = slot.get_or_insert_with(|| vec![T::zero(); n]);
        g[index] += delta;
    }

    /// Resets the gradient to zeros (keeps the allocation).
    pub fn zero_grad(&self) {
        let mut slot = self.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => g.iter_mut().for_each(|v| *v = T::zero()),
            None => *slot = Some(vec![T::zero(); self.numel()]),
        }
    }

    /// Scales the accumulated gradient in place. Under momentum SGD this is
    /// equivalent to giving the parameter its own learning rate of s*lr.
    pub fn scale_grad(&self, s: f64) {
        if let Some(g) = self.grad.borrow_mut().as_mut() {
            for v in g.iter_mut() {
                *v = T::from_f64(v.as_f64() * s);
            }
        }
    }

    /// Deep copy with fresh storage; gradient and flags are not carried over.
    pub fn detached_copy(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::new(RefCell::new(self.data.borrow().clone())),
            grad: Rc::new(RefCell::new(None)),
            requires_grad: Rc::new(Cell::new(false)),
        }
    }

    /// Element-type conversion with fresh storage.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data: Vec<U> = self.data.borrow().iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor {
            shape: self.shape.clone(),
            data: Rc::new(RefCell::new(data)),
            grad: Rc::new(RefCell::new(None)),
            requires_grad: Rc::new(Cell::new(false)),
        }
    }

    pub fn same_storage(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.data, &other.data)
    }
}

// ── Raw tensor file format ──────────────────────────────────────────────────
//
// magic "DSTN" | u32 rank | rank x u32 extents | little-endian f32 payload,
// row-major. The payload is always f32 on disk regardless of in-memory type.

const DSTN_MAGIC: &[u8; 4] = b"DSTN";

impl<T: Element> Tensor<T> {
    pub fn write_dstn<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(DSTN_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &e in &self.shape {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in self.data.borrow().iter() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save_dstn(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_dstn(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_dstn<R: std::io::Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DSTN_MAGIC {
            return Err(Error::format("DSTN", format!("bad magic {:?}", magic)));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let rank = u32::from_le_bytes(word) as usize;
        if rank > 8 {
            return Err(Error::format("DSTN", format!("implausible rank {}", rank)));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut word)?;
            shape.push(u32::from_le_bytes(word) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut payload = vec![0u8; numel * 4];
        r.read_exact(&mut payload)?;
        let mut data = Vec::with_capacity(numel);
        for chunk in payload.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            data.push(T::from_f64(v as f64));
        }
        Tensor::from_vec(&shape, data)
    }

    pub fn load_dstn(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Tensor::read_dstn(&mut r)
    }
}

/// Row-major offset helpers for 4-D \[B, C, H, W\] tensors.
#[inline]
pub fn idx4(c_dim: usize, h_dim: usize, w_dim: usize, b: usize, c: usize, y: usize, x: usize) -> usize {
    ((b * c_dim + c) * h_dim + y) * w_dim + x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_count_and_finiteness() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2], vec![1.0, f32::NAN]).is_err());
        assert!(Tensor::<f32>::from_vec(&[2], vec![1.0, f32::INFINITY]).is_err());
    }

    #[test]
    fn clones_share_data_and_grad() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let u = t.clone();
        u.data_mut()[0] = 5.0;
        assert_eq!(t.to_vec(), vec![5.0, 2.0]);
        u.accumulate_grad(&[1.0, 1.0]);
        t.accumulate_grad(&[2.0, 0.0]);
        assert_eq!(t.grad(), vec![3.0, 1.0]);
        t.zero_grad();
        assert_eq!(u.grad(), vec![0.0, 0.0]);
    }

    #[test]
    fn scale_grad_scales_in_place_and_ignores_empty_slots() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        t.scale_grad(0.5);
        assert!(!t.has_grad());
        t.accumulate_grad(&[4.0, -2.0]);
        t.scale_grad(0.25);
        assert_eq!(t.grad(), vec![1.0, -0.5]);
    }

    #[test]
    fn dstn_roundtrip_exact() {
        let t = Tensor::<f32>::from_vec(&[1, 2, 3], vec![0.5, -1.25, 3.0, 0.0, 7.5, -0.125]).unwrap();
        let mut buf = Vec::new();
        t.write_dstn(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"DSTN");
        assert_eq!(buf.len(), 4 + 4 + 3 * 4 + 6 * 4);
        let back = Tensor::<f32>::read_dstn(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), &[1, 2, 3]);
        assert_eq!(back.to_vec(), t.to_vec());
    }

    #[test]
    fn dstn_rejects_bad_magic() {
        let buf = b"XSTN\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f".to_vec();
        assert!(Tensor::<f32>::read_dstn(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn item_requires_scalar() {
        let t = Tensor::<f32>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert!(t.item().is_err());
        let s = Tensor::<f32>::scalar(4.0).unwrap();
        assert_eq!(s.item().unwrap(), 4.0);
    }
}
