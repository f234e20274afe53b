use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_mismatch, Result};
use crate::operator::SamplingOperator;
use crate::spectral::Vector;

mod vec_serde {
    use super::Vector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Matrix sensing with a few entries known exactly:
/// `||A(X) - b|| <= delta`, `X_ij = d_ij` on the fixed set, `||X|| <= R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingProblem {
    pub op: SamplingOperator,
    #[serde(with = "vec_serde")]
    pub b: Vector,
    pub delta: f64,
    #[serde(default)]
    pub fixed_entries: Vec<FixedEntry>,
    pub spectral_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedEntry {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl SensingProblem {
    pub fn shape(&self) -> (usize, usize) {
        self.op.shape()
    }

    pub fn validate(&self) -> Result<()> {
        self.op.validate()?;
        if self.b.len() != self.op.len() {
            return Err(shape_mismatch(self.op.len(), self.b.len()));
        }
        if !(self.delta >= 0.0) {
            return Err(invalid(format!("noise radius must be >= 0, got {}", self.delta)));
        }
        if !(self.spectral_radius > 0.0) {
            return Err(invalid("spectral radius must be positive"));
        }
        if !self.b.iter().all(|v| v.is_finite()) {
            return Err(invalid("measurements contain non-finite values"));
        }
        self.fixed_operator()?;
        Ok(())
    }

    /// The entry sampler `B` over the fixed set, with its values `d`.
    pub fn fixed_operator(&self) -> Result<(SamplingOperator, Vector)> {
        let (rows, cols) = self.shape();
        let idx = self.fixed_entries.iter().map(|e| (e.row, e.col)).collect();
        let op = SamplingOperator::mask(rows, cols, idx)?;
        let d = Vector::from_iterator(
            self.fixed_entries.len(),
            self.fixed_entries.iter().map(|e| e.value),
        );
        Ok((op, d))
    }
}

/// A linear constraint block `E(X) = g` or `E(X) <= g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearBlock {
    pub op: SamplingOperator,
    #[serde(with = "vec_serde")]
    pub rhs: Vector,
}

impl LinearBlock {
    fn validate(&self, n: usize) -> Result<()> {
        self.op.validate()?;
        if self.op.shape() != (n, n) {
            return Err(shape_mismatch(format!("{n}x{n}"), format!("{:?}", self.op.shape())));
        }
        if self.rhs.len() != self.op.len() {
            return Err(shape_mismatch(self.op.len(), self.rhs.len()));
        }
        if let SamplingOperator::Mask { symmetric: false, .. } = self.op {
            return Err(invalid("constraint masks on symmetric matrices must be symmetric"));
        }
        Ok(())
    }
}

/// PSD completion: `X >= 0`, `||A(X) - b|| <= delta`, `E1(X) = g1`,
/// `E2(X) <= g2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdCompletionProblem {
    pub n: usize,
    pub op: SamplingOperator,
    #[serde(with = "vec_serde")]
    pub b: Vector,
    pub delta: f64,
    #[serde(default)]
    pub eq: Option<LinearBlock>,
    #[serde(default)]
    pub ineq: Option<LinearBlock>,
}

impl PsdCompletionProblem {
    pub fn validate(&self) -> Result<()> {
        self.op.validate()?;
        if self.op.shape() != (self.n, self.n) {
            return Err(shape_mismatch(
                format!("{0}x{0}", self.n),
                format!("{:?}", self.op.shape()),
            ));
        }
        if let SamplingOperator::Mask { symmetric: false, .. } = self.op {
            return Err(invalid("PSD completion needs a symmetric mask"));
        }
        if self.b.len() != self.op.len() {
            return Err(shape_mismatch(self.op.len(), self.b.len()));
        }
        if !(self.delta >= 0.0) {
            return Err(invalid(format!("noise radius must be >= 0, got {}", self.delta)));
        }
        for blk in self.eq.iter().chain(self.ineq.iter()) {
            blk.validate(self.n)?;
        }
        Ok(())
    }
}
