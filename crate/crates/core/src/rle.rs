//! Run-length encoding of binary bitmaps.
//!
//! Row-major, alternating run lengths starting with the count of zeros (which
//! may be 0). The runs of a valid encoding sum to exactly `height * width`.

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RleError {
    #[error("runs sum to {found}, expected {expected}")]
    Checksum { expected: usize, found: usize },
}

pub fn encode(bits: impl IntoIterator<Item = bool>) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut length = 0u32;
    for bit in bits {
        if bit != current {
            runs.push(length);
            current = bit;
            length = 0;
        }
        length += 1;
    }
    runs.push(length);
    runs
}

pub fn decode(runs: &[u32], total: usize) -> Result<Vec<bool>, RleError> {
    let found: usize = runs.iter().map(|&r| r as usize).sum();
    if found != total {
        return Err(RleError::Checksum { expected: total, found });
    }
    let mut out = Vec::with_capacity(total);
    for (k, &run) in runs.iter().enumerate() {
        out.extend(std::iter::repeat_n(k % 2 == 1, run as usize));
    }
    Ok(out)
}
