use crate::error::{Error, Result};

use super::Penalty;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyBlock {
    pub offset: usize,
    pub len: usize,
    pub penalty: Penalty,
}

/// A block-separable penalty `ρ(z) = Σ_b ρ_b(z_b)` over contiguous blocks that
/// tile `0..len` exactly.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeparablePenalty {
    blocks: Vec<PenaltyBlock>,
    len: usize,
}

impl SeparablePenalty {
    pub fn new() -> Self {
        Self::default()
    }

    /// A single penalty applied to the whole vector.
    pub fn uniform(len: usize, penalty: Penalty) -> Result<Self> {
        let mut s = Self::new();
        s.push(len, penalty)?;
        Ok(s)
    }

    /// Builds from explicit blocks, checking that they tile `0..total_len`
    /// without gaps or overlaps.
    pub fn from_blocks(total_len: usize, mut blocks: Vec<PenaltyBlock>) -> Result<Self> {
        blocks.sort_by_key(|b| b.offset);
        let mut s = Self::new();
        for b in blocks {
            if b.offset != s.len {
                return Err(Error::Argument(format!(
                    "penalty blocks must tile the vector: block at offset {} but previous blocks end at {}",
                    b.offset, s.len
                )));
            }
            s.push(b.len, b.penalty)?;
        }
        if s.len != total_len {
            return Err(Error::dim("separable penalty length", total_len, s.len));
        }
        Ok(s)
    }

    /// Appends a block of `len` coordinates. Zero-length blocks are dropped.
    pub fn push(&mut self, len: usize, penalty: Penalty) -> Result<()> {
        if len == 0 {
            return Ok(());
        }
        penalty.check_dim(len)?;
        self.blocks.push(PenaltyBlock {
            offset: self.len,
            len,
            penalty,
        });
        self.len += len;
        Ok(())
    }

    /// Appends every block of `other`, shifted to the current end.
    pub fn extend(&mut self, other: &SeparablePenalty) -> Result<()> {
        for b in &other.blocks {
            self.push(b.len, b.penalty.clone())?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[PenaltyBlock] {
        &self.blocks
    }

    fn check(&self, got: usize) -> Result<()> {
        if got != self.len {
            return Err(Error::dim("separable penalty", self.len, got));
        }
        Ok(())
    }

    pub fn eval(&self, z: &[f64]) -> Result<f64> {
        self.check(z.len())?;
        Ok(self
            .blocks
            .iter()
            .map(|b| b.penalty.eval_unchecked(&z[b.offset..b.offset + b.len]))
            .sum())
    }

    pub fn prox(&self, gamma: f64, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len())?;
        if !(gamma > 0.0) {
            return Err(Error::Argument(format!("gamma must be positive, got {gamma}")));
        }
        let mut out = vec![0.0; z.len()];
        for b in &self.blocks {
            let r = b.offset..b.offset + b.len;
            b.penalty.prox_into(gamma, &z[r.clone()], &mut out[r]);
        }
        Ok(out)
    }

    pub fn prox_conjugate(&self, sigma: f64, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z.len())?;
        if !(sigma > 0.0) {
            return Err(Error::Argument(format!("sigma must be positive, got {sigma}")));
        }
        let mut out = vec![0.0; z.len()];
        let mut scratch = vec![0.0; z.len()];
        self.prox_conjugate_into(sigma, z, &mut out, &mut scratch);
        Ok(out)
    }

    /// Allocation-free blockwise conjugate prox; all slices have length `len()`.
    pub(crate) fn prox_conjugate_into(&self, sigma: f64, z: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        for b in &self.blocks {
            let r = b.offset..b.offset + b.len;
            b.penalty
                .prox_conjugate_into(sigma, &z[r.clone()], &mut out[r.clone()], &mut scratch[r]);
        }
    }

    /// Largest blockwise distance from `g` to `∂ρ(z)`.
    pub fn subgradient_distance(&self, z: &[f64], g: &[f64], tol: f64) -> Result<f64> {
        self.check(z.len())?;
        self.check(g.len())?;
        Ok(self
            .blocks
            .iter()
            .map(|b| {
                let r = b.offset..b.offset + b.len;
                b.penalty.subgradient_distance_unchecked(&z[r.clone()], &g[r], tol)
            })
            .fold(0.0, f64::max))
    }

    /// Diagonal Hessian of a purely quadratic separable penalty.
    pub fn quadratic_diagonal(&self) -> Option<Vec<f64>> {
        let mut diag = Vec::with_capacity(self.len);
        for b in &self.blocks {
            let h = b.penalty.quadratic_diagonal()?;
            diag.extend(std::iter::repeat_n(h, b.len));
        }
        Some(diag)
    }
}
