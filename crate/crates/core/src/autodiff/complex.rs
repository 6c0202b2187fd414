//! Complex tensors on a real tape.
//!
//! A complex value is a pair of real nodes with congruent shapes; every
//! operation differentiates with respect to real and imaginary parts as
//! independent reals, so no Wirtinger calculus is involved.

use crate::error::{BeamError, Result};
use crate::scalar::Real;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Slope of the split complex leaky ReLU on the negative half-axis.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

/// Complex value held outside a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct CTensor<T = f64> {
    pub re: Tensor<T>,
    pub im: Tensor<T>,
}

impl<T: Real> CTensor<T> {
    pub fn new(re: Tensor<T>, im: Tensor<T>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(BeamError::Shape {
                op: "CTensor::new",
                lhs: re.shape(),
                rhs: im.shape(),
            });
        }
        Ok(Self { re, im })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            re: Tensor::zeros(rows, cols),
            im: Tensor::zeros(rows, cols),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.re.shape()
    }
}

impl<T: Real> Tape<T> {
    pub fn cparam(&mut self, v: CTensor<T>) -> CVar {
        CVar {
            re: self.param(v.re),
            im: self.param(v.im),
        }
    }

    pub fn cconstant(&mut self, v: CTensor<T>) -> CVar {
        CVar {
            re: self.constant(v.re),
            im: self.constant(v.im),
        }
    }

    pub fn cvalue(&self, z: CVar) -> CTensor<T> {
        CTensor {
            re: self.value(z.re).clone(),
            im: self.value(z.im).clone(),
        }
    }

    pub fn c_add(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar {
            re: self.add(a.re, b.re)?,
            im: self.add(a.im, b.im)?,
        })
    }

    pub fn c_scale(&mut self, a: CVar, s: T) -> CVar {
        CVar {
            re: self.scale(a.re, s),
            im: self.scale(a.im, s),
        }
    }

    /// `x (m x k) * w (k x n)`, both complex.
    pub fn c_matmul(&mut self, x: CVar, w: CVar) -> Result<CVar> {
        let rr = self.matmul(x.re, w.re)?;
        let ii = self.matmul(x.im, w.im)?;
        let ri = self.matmul(x.re, w.im)?;
        let ir = self.matmul(x.im, w.re)?;
        Ok(CVar {
            re: self.sub(rr, ii)?,
            im: self.add(ri, ir)?,
        })
    }

    /// Complex `x` times a real matrix `w`.
    pub fn c_matmul_real(&mut self, x: CVar, w: Var) -> Result<CVar> {
        Ok(CVar {
            re: self.matmul(x.re, w)?,
            im: self.matmul(x.im, w)?,
        })
    }

    /// Real matrix `a` times complex `x`.
    pub fn real_matmul_c(&mut self, a: Var, x: CVar) -> Result<CVar> {
        Ok(CVar {
            re: self.matmul(a, x.re)?,
            im: self.matmul(a, x.im)?,
        })
    }

    pub fn c_leaky_relu(&mut self, a: CVar) -> CVar {
        let s = T::lit(LEAKY_SLOPE);
        CVar {
            re: self.leaky_relu(a.re, s),
            im: self.leaky_relu(a.im, s),
        }
    }

    pub fn c_relu(&mut self, a: CVar) -> CVar {
        CVar {
            re: self.relu(a.re),
            im: self.relu(a.im),
        }
    }

    pub fn c_modulus(&mut self, a: CVar) -> Result<Var> {
        self.modulus(a.re, a.im)
    }

    /// `|a|^2` without the square root.
    pub fn c_abs_sqr(&mut self, a: CVar) -> Result<Var> {
        let r2 = self.square(a.re);
        let i2 = self.square(a.im);
        self.add(r2, i2)
    }

    pub fn real_part(&self, a: CVar) -> Var {
        a.re
    }

    pub fn c_concat_cols(&mut self, parts: &[CVar]) -> Result<CVar> {
        let re: Vec<Var> = parts.iter().map(|p| p.re).collect();
        let im: Vec<Var> = parts.iter().map(|p| p.im).collect();
        Ok(CVar {
            re: self.concat_cols(&re)?,
            im: self.concat_cols(&im)?,
        })
    }

    pub fn c_gather_rows(&mut self, a: CVar, idx: Vec<usize>) -> Result<CVar> {
        Ok(CVar {
            re: self.gather_rows(a.re, idx.clone())?,
            im: self.gather_rows(a.im, idx)?,
        })
    }

    pub fn c_row_scale(&mut self, a: CVar, s: Var) -> Result<CVar> {
        Ok(CVar {
            re: self.row_scale(a.re, s)?,
            im: self.row_scale(a.im, s)?,
        })
    }

    pub fn c_group_sum(&mut self, a: CVar, group: usize) -> Result<CVar> {
        Ok(CVar {
            re: self.group_sum(a.re, group)?,
            im: self.group_sum(a.im, group)?,
        })
    }

    pub fn c_slice_cols(&mut self, a: CVar, start: usize, len: usize) -> Result<CVar> {
        Ok(CVar {
            re: self.slice_cols(a.re, start, len)?,
            im: self.slice_cols(a.im, start, len)?,
        })
    }
}
