//! Affine address/schedule generators expressed as recurrences.

use serde::{Deserialize, Serialize};

use crate::affine::{AffineExpr, BoxDomain};
use crate::error::{Error, Result};

/// Hardware limit on generator dimensionality.
pub const MAX_AG_DIMS: usize = 6;

/// Recurrence form of an affine function over a box: start at `offset`,
/// and whenever level `i` is the outermost counter to increment, add
/// `deltas[i]`. Levels are listed innermost first. With `modulus`, the
/// running value wraps into `[0, modulus)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgConfig {
    pub ranges: Vec<i64>,
    pub deltas: Vec<i64>,
    pub offset: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<i64>,
}

/// `d_0 = s_0`, `d_i = s_i - sum_{j<i} s_j (r_j - 1)`.
pub fn compile_affine_to_deltas(strides: &[i64], ranges: &[i64], offset: i64) -> Result<AgConfig> {
    if strides.len() != ranges.len() {
        return Err(Error::Mapping(format!("{} strides for {} ranges", strides.len(), ranges.len())));
    }
    if strides.len() > MAX_AG_DIMS {
        return Err(Error::Mapping(format!("{} loop levels exceed the generator limit of {MAX_AG_DIMS}", strides.len())));
    }
    if let Some(r) = ranges.iter().find(|&&r| r < 1) {
        return Err(Error::Mapping(format!("generator range {r} < 1")));
    }
    let mut deltas = Vec::with_capacity(strides.len());
    let mut span = 0i64;
    for (s, r) in strides.iter().zip(ranges) {
        deltas.push(s - span);
        span += s * (r - 1);
    }
    Ok(AgConfig { ranges: ranges.to_vec(), deltas, offset, modulus: None })
}

impl AgConfig {
    /// Generator for `expr` over `domain` (outermost first).
    pub fn for_expr(expr: &AffineExpr, domain: &BoxDomain) -> Result<AgConfig> {
        let strides: Vec<i64> = domain.dims.iter().rev().map(|d| expr.coeff(&d.name)).collect();
        let ranges: Vec<i64> = domain.dims.iter().rev().map(|d| d.extent).collect();
        let offset = expr.eval(domain, &domain.first_point())?;
        if ranges.is_empty() {
            return Ok(AgConfig { ranges: vec![1], deltas: vec![0], offset, modulus: None });
        }
        compile_affine_to_deltas(&strides, &ranges, offset)
    }

    pub fn with_modulus(mut self, m: i64) -> AgConfig {
        self.offset = self.offset.rem_euclid(m);
        self.deltas = self.deltas.iter().map(|d| d.rem_euclid(m)).collect();
        self.modulus = Some(m);
        self
    }

    pub fn len(&self) -> usize {
        self.ranges.iter().product::<i64>() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies the delta of `level` to `value`.
    pub fn advance(&self, value: i64, level: usize) -> i64 {
        let v = value + self.deltas[level];
        match self.modulus {
            Some(m) if v >= m => v - m,
            _ => v,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_deltas() {
        assert_eq!(compile_affine_to_deltas(&[2, 16], &[4, 4], 0).unwrap().deltas, vec![2, 10]);
        assert_eq!(compile_affine_to_deltas(&[1, 64], &[64, 64], 0).unwrap().deltas, vec![1, 1]);
        assert_eq!(compile_affine_to_deltas(&[7], &[5], 3).unwrap().deltas, vec![7]);
        assert!(compile_affine_to_deltas(&[1; 7], &[2; 7], 0).is_err());
    }
}
