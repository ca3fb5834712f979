//! Ordered parameter-index subsets and the materialization caps that go with
//! them.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{FimError, Result};

/// Default cap on `P` for full Jacobian/Hessian materialization.
pub const DEFAULT_MAX_PARAMS: usize = 512;
/// Default cap on `P_s` for materializing `P_s⁴` covariance tensors.
pub const DEFAULT_MAX_TENSOR_SUBSET: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_params: usize,
    pub max_tensor_subset: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            max_params: DEFAULT_MAX_PARAMS,
            max_tensor_subset: DEFAULT_MAX_TENSOR_SUBSET,
        }
    }
}

impl Limits {
    pub fn check_params(&self, size: usize) -> Result<()> {
        if size > self.max_params {
            return Err(FimError::CapExceeded {
                what: "parameter subset",
                size,
                cap: self.max_params,
            });
        }
        Ok(())
    }

    pub fn check_tensor(&self, size: usize) -> Result<()> {
        if size > self.max_tensor_subset {
            return Err(FimError::CapExceeded {
                what: "covariance tensor subset",
                size,
                cap: self.max_tensor_subset,
            });
        }
        Ok(())
    }
}

/// An ordered list of distinct flat parameter indices, validated against `P`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Subset {
    indices: Vec<usize>,
    num_params: usize,
}

impl Subset {
    pub fn all(num_params: usize) -> Self {
        Subset {
            indices: (0..num_params).collect(),
            num_params,
        }
    }

    pub fn new(indices: Vec<usize>, num_params: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in &indices {
            if i >= num_params {
                return Err(FimError::IndexOutOfRange {
                    index: i,
                    num_params,
                });
            }
            if !seen.insert(i) {
                return Err(FimError::DuplicateIndex(i));
            }
        }
        Ok(Subset {
            indices,
            num_params,
        })
    }

    pub fn range(range: std::ops::Range<usize>, num_params: usize) -> Result<Self> {
        Self::new(range.collect(), num_params)
    }

    /// Parses `all`, `W<k>` / `layer<k>` (all entries of weight matrix `k`),
    /// or a comma list of indices and ranges (`a-b` inclusive, `a..b`
    /// exclusive), e.g. `0-3,7,10..12`.
    ///
    /// `layer_ranges[k]` gives the flat range of each layer.
    pub fn parse(spec: &str, layer_ranges: &[std::ops::Range<usize>], num_params: usize) -> Result<Self> {
        let bad = || FimError::InvalidSubsetSpec(spec.to_string());
        let s = spec.trim();
        if s.is_empty() {
            return Err(bad());
        }
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::all(num_params));
        }
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim) {
            let lower = part.to_ascii_lowercase();
            let layer = lower
                .strip_prefix("layer")
                .or_else(|| lower.strip_prefix('w'));
            if let Some(k) = layer {
                let k: usize = k.parse().map_err(|_| bad())?;
                let r = layer_ranges.get(k).ok_or_else(bad)?;
                out.extend(r.clone());
            } else if let Some((a, b)) = part.split_once("..") {
                let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a >= b {
                    return Err(bad());
                }
                out.extend(a..b);
            } else if let Some((a, b)) = part.split_once('-') {
                let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            } else {
                out.push(part.parse().map_err(|_| bad())?);
            }
        }
        Self::new(out, num_params)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.num_params && self.indices.iter().enumerate().all(|(k, &i)| k == i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(Subset::new(vec![0, 2], 3).is_ok());
        assert_eq!(
            Subset::new(vec![3], 3),
            Err(FimError::IndexOutOfRange {
                index: 3,
                num_params: 3
            })
        );
        assert_eq!(Subset::new(vec![1, 1], 3), Err(FimError::DuplicateIndex(1)));
        assert!(Subset::all(4).is_full());
        assert!(!Subset::new(vec![1, 0], 2).unwrap().is_full());
    }

    #[test]
    fn parse_forms() {
        let layers = vec![0..4, 4..7];
        let p = 7;
        assert_eq!(Subset::parse("all", &layers, p).unwrap(), Subset::all(7));
        assert_eq!(Subset::parse("W1", &layers, p).unwrap().indices(), &[4, 5, 6]);
        assert_eq!(Subset::parse("layer0", &layers, p).unwrap().len(), 4);
        assert_eq!(Subset::parse("0-2, 5", &layers, p).unwrap().indices(), &[0, 1, 2, 5]);
        assert_eq!(Subset::parse("1..3", &layers, p).unwrap().indices(), &[1, 2]);
        assert!(Subset::parse("W2", &layers, p).is_err());
        assert!(Subset::parse("x", &layers, p).is_err());
        assert!(Subset::parse("3-1", &layers, p).is_err());
        assert!(Subset::parse("0-7", &layers, p).is_err());
    }
}
