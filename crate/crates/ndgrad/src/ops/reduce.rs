use crate::error::Result;
use crate::real::Real;
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

impl<T: Real> Tape<T> {
    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let total: T = self.node(ix).value.data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum { x: ix }, &[ix])
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.index(x)?;
        let data = self.node(ix).value.data();
        let total: T = data.iter().copied().sum();
        let value = Tensor::scalar(total / T::of(data.len() as f64));
        self.push(value, Op::Mean { x: ix }, &[ix])
    }
}
