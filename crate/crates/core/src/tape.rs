//! Reverse-mode tape. One tape records one forward pass; `backward` consumes
//! it and replays the records in reverse, accumulating into the gradient slot
//! of every participating tensor exactly once per record.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub(crate) struct Record<T: Element> {
    out: Tensor<T>,
    back: Box<dyn FnOnce(&[T])>,
}

pub struct Tape<T: Element = f32> {
    records: Vec<Record<T>>,
    recording: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    /// A recording tape for a forward pass that will be differentiated.
    pub fn new() -> Self {
        Tape { records: Vec::new(), recording: true }
    }

    /// A non-recording tape: same op surface, no backward bookkeeping.
    pub fn eval() -> Self {
        Tape { records: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    /// Registers a backward closure for `out`. The closure receives the
    /// upstream gradient of `out` and must accumulate into the inputs it
    /// captured. No-op when not recording or when nothing needs gradients.
    pub(crate) fn push(&mut self, needs_grad: bool, out: &Tensor<T>, back: impl FnOnce(&[T]) + 'static) {
        if self.recording && needs_grad {
            out.set_requires_grad(true);
            self.records.push(Record { out: out.clone(), back: Box::new(back) });
        }
    }

    /// Seeds `loss` with gradient one and replays the tape in reverse.
    /// Consumes the tape; parameter gradients accumulate across calls on
    /// fresh tapes until the caller resets them.
    pub fn backward(mut self, loss: &Tensor<T>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss.shape()),
            ));
        }
        if !self.recording {
            return Err(Error::invalid("backward", "tape was created in eval mode"));
        }
        loss.accumulate_grad(&[T::one()]);
        for rec in self.records.drain(..).rev() {
            let upstream = rec.out.grad();
            (rec.back)(&upstream);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::<f32>::new();
        let t = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert!(tape.backward(&t).is_err());
    }

    #[test]
    fn eval_tape_records_nothing() {
        let mut tape = Tape::<f32>::eval();
        let x = Tensor::from_vec(&[1], vec![2.0]).unwrap().trainable();
        let y = crate::ops::mul(&mut tape, &x, &x).unwrap();
        assert_eq!(tape.num_records(), 0);
        assert!(!y.requires_grad());
    }
}
