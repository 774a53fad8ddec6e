//! Parsing of byte quantities and problem-size ranges.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SizeError {
    #[error("`{0}` is not a byte quantity (expected e.g. 4096, 16KiB, 8MiB, 1GiB)")]
    Bytes(String),
    #[error("`{0}` is not a size (expected e.g. 1000, 4k, 16M)")]
    Size(String),
    #[error("`{0}` is not a size range (expected START:STOP:*FACTOR or a comma list)")]
    Range(String),
    #[error("size range `{0}` is empty")]
    EmptyRange(String),
}

/// `4096`, `16KiB`, `8MiB`, `1GiB` (also `KB`/`MB`/`GB` and `K`/`M`/`G`, all binary).
pub fn parse_bytes(text: &str) -> Result<u64, SizeError> {
    let t = text.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (digits, unit) = t.split_at(split);
    let value: u64 = digits.parse().map_err(|_| SizeError::Bytes(text.into()))?;
    let shift = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 0,
        "k" | "kb" | "kib" => 10,
        "m" | "mb" | "mib" => 20,
        "g" | "gb" | "gib" => 30,
        _ => return Err(SizeError::Bytes(text.into())),
    };
    value
        .checked_mul(1 << shift)
        .ok_or_else(|| SizeError::Bytes(text.into()))
}

/// Comma-separated [`parse_bytes`] list.
pub fn parse_byte_list(text: &str) -> Result<Vec<u64>, SizeError> {
    text.split(',').map(parse_bytes).collect()
}

/// A problem size: digits with an optional binary suffix `k`, `M`, `G`.
pub fn parse_size(text: &str) -> Result<u64, SizeError> {
    let t = text.trim();
    let (digits, shift) = match t.chars().last() {
        Some('k' | 'K') => (&t[..t.len() - 1], 10),
        Some('m' | 'M') => (&t[..t.len() - 1], 20),
        Some('g' | 'G') => (&t[..t.len() - 1], 30),
        _ => (t, 0),
    };
    let v: u64 = digits.parse().map_err(|_| SizeError::Size(text.into()))?;
    v.checked_mul(1 << shift)
        .filter(|&v| v > 0)
        .ok_or_else(|| SizeError::Size(text.into()))
}

/// `START:STOP:*FACTOR` (geometric, STOP inclusive), or a comma list of sizes.
/// The result is sorted and deduplicated.
pub fn parse_size_range(text: &str) -> Result<Vec<u64>, SizeError> {
    let mut sizes = if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(SizeError::Range(text.into()));
        };
        let start = parse_size(start)?;
        let stop = parse_size(stop)?;
        let factor: u64 = step
            .trim()
            .strip_prefix('*')
            .and_then(|f| f.parse().ok())
            .filter(|&f| f >= 2)
            .ok_or_else(|| SizeError::Range(text.into()))?;
        let mut sizes = Vec::new();
        let mut n = start;
        while n <= stop {
            sizes.push(n);
            match n.checked_mul(factor) {
                Some(next) => n = next,
                None => break,
            }
        }
        sizes
    } else {
        text.split(',').map(parse_size).collect::<Result<Vec<_>, _>>()?
    };
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.is_empty() {
        return Err(SizeError::EmptyRange(text.into()));
    }
    Ok(sizes)
}
