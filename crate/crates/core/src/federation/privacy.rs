//! Scans wire bytes for raw training rows.

use std::collections::HashMap;

use crate::dataio::Dataset;

/// Canonical byte encoding of a feature row: each value as a big-endian
/// IEEE-754 double, in column order.
pub fn row_encoding(row: &[f64]) -> Vec<u8> {
    row.iter().flat_map(|v| v.to_be_bytes()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrivacyHit {
    /// Byte offset of the match in the scanned buffer.
    pub offset: usize,
    /// Row index in the dataset.
    pub row: usize,
}

/// Every position where some row's canonical encoding appears in `bytes`,
/// checked at every byte offset (not just 8-byte aligned ones).
pub fn scan_transcript(bytes: &[u8], data: &Dataset) -> Vec<PrivacyHit> {
    let d = data.n_features();
    let width = 8 * d;
    if d == 0 || bytes.len() < width {
        return Vec::new();
    }
    let encoded: Vec<Vec<u8>> = data.rows().map(row_encoding).collect();
    // Index by the first feature so most offsets cost a single lookup.
    let mut by_prefix: HashMap<[u8; 8], Vec<usize>> = HashMap::new();
    for (i, e) in encoded.iter().enumerate() {
        let key: [u8; 8] = e[..8].try_into().expect("width >= 8");
        by_prefix.entry(key).or_default().push(i);
    }
    let mut hits = Vec::new();
    for offset in 0..=bytes.len() - width {
        let key: [u8; 8] = bytes[offset..offset + 8].try_into().expect("8 bytes");
        if let Some(rows) = by_prefix.get(&key) {
            let window = &bytes[offset..offset + width];
            hits.extend(rows.iter().filter(|&&r| encoded[r] == window).map(|&row| PrivacyHit { offset, row }));
        }
    }
    hits
}
