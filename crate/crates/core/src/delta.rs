//! Gap coding of sparse positions.

use crate::error::{Error, Result};

/// First delta is the absolute first position; the rest are successive gaps.
pub fn delta_encode(positions: &[usize]) -> Result<Vec<u64>> {
    let mut out = Vec::with_capacity(positions.len());
    let mut prev: Option<usize> = None;
    for (i, &p) in positions.iter().enumerate() {
        match prev {
            None => out.push(p as u64),
            Some(q) if p > q => out.push((p - q) as u64),
            Some(q) => {
                return Err(Error::InvalidArgument(format!(
                    "positions must be strictly increasing: {q} then {p} at index {i}"
                )))
            }
        }
        prev = Some(p);
    }
    Ok(out)
}

/// Running prefix sums of `deltas`.
pub fn delta_decode(deltas: &[u64]) -> Vec<usize> {
    deltas
        .iter()
        .scan(0u64, |acc, &d| {
            *acc += d;
            Some(*acc as usize)
        })
        .collect()
}
