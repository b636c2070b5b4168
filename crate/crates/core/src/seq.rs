//! Plain row-major time-series matrix: one row per timestep.
//!
//! This is the data-pipeline counterpart of a rank-2 tensor. It is `Send`,
//! cheap to slice by row, and converts to/from tensors at the model
//! boundary.

use crate::error::{Error, Result};
use crate::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Seq {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Real>,
}

impl Seq {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        crate::ndgrad::count_alloc(rows * cols);
        Seq {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "{rows}x{cols} does not cover {} elements",
                data.len()
            )));
        }
        crate::ndgrad::count_alloc(data.len());
        Ok(Seq { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[Real] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [Real] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> Real {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Real) {
        self.data[r * self.cols + c] = v;
    }

    pub fn col(&self, c: usize) -> Vec<Real> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.data.clone(), &[self.rows, self.cols])
            .expect("dimensions are consistent by construction")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::Shape(format!(
                "expected a rank-2 tensor, got {:?}",
                t.shape()
            )));
        }
        Ok(Seq {
            rows: t.shape()[0],
            cols: t.shape()[1],
            data: t.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_tensor() {
        let s = Seq::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = s.to_tensor();
        assert_eq!(Seq::from_tensor(&t).unwrap(), s);
        assert_eq!(s.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(s.col(2), vec![3.0, 6.0]);
    }

    #[test]
    fn rejects_inconsistent_dims() {
        assert!(Seq::from_vec(2, 2, vec![1.0]).is_err());
    }
}
