//! Synthetic flow-like fixtures: labelled Gaussian blobs, including one with
//! the class counts of the CIC-IDS 2017 variant used for the reference runs.

use rand_distr::{Distribution, Normal};

use crate::dataio::{ColumnSchema, Dataset, LabelMap};
use crate::error::Result;
use crate::rng;

/// Class sizes in label-map order (Benign, Bot, Brute Force, DoS,
/// Infiltration, Port Scan, Web Attack).
pub const CIC_IDS2017_COUNTS: [usize; 7] = [22728, 1966, 2767, 18984, 36, 7946, 2180];

#[derive(Debug, Clone)]
pub struct BlobSpec {
    pub class_counts: Vec<usize>,
    pub n_features: usize,
    /// Distance of each class centre from the origin.
    pub separation: f64,
    pub std_dev: f64,
    pub seed: u64,
}

impl BlobSpec {
    /// `per_class` rows for each of `n_classes` classes, 4 features, centres
    /// 4σ out along distinct signed axes.
    pub fn balanced(n_classes: usize, per_class: usize, seed: u64) -> Self {
        Self {
            class_counts: vec![per_class; n_classes],
            n_features: 4,
            separation: 4.0,
            std_dev: 1.0,
            seed,
        }
    }
}

/// Centre of class `c`: `±separation` along axis `c / 2 mod d`, so the first
/// `2d` classes sit on distinct axis directions. Further classes shift out.
fn centre(c: usize, d: usize, separation: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    let axis = (c / 2) % d;
    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
    let ring = (c / (2 * d)) as f64 + 1.0;
    v[axis] = sign * separation * ring;
    v
}

pub fn gaussian_blobs(spec: &BlobSpec, label_map: LabelMap) -> Result<Dataset> {
    let d = spec.n_features;
    let schema = ColumnSchema::new((0..d).map(|i| format!("feature_{i}")).collect(), "Label")?;
    let noise = Normal::new(0.0, spec.std_dev)
        .map_err(|e| crate::Error::InvalidArgument(format!("std_dev: {e}")))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (c, &n) in spec.class_counts.iter().enumerate() {
        let mut rng = rng::stream(spec.seed, &[0x424C_4F42, c as u64]);
        let mu = centre(c, d, spec.separation);
        for _ in 0..n {
            rows.push(mu.iter().map(|m| m + noise.sample(&mut rng)).collect());
            labels.push(c);
        }
    }
    Dataset::from_rows(schema, label_map, rows, labels)
}

/// Blobs named after the seven traffic classes, sized like the reference
/// CIC-IDS 2017 extract.
pub fn cic_ids2017_like(seed: u64) -> Result<Dataset> {
    let spec = BlobSpec {
        class_counts: CIC_IDS2017_COUNTS.to_vec(),
        ..BlobSpec::balanced(7, 0, seed)
    };
    gaussian_blobs(&spec, LabelMap::cic_ids2017())
}

/// Generic class names `class_0..class_{k-1}`.
pub fn numbered_labels(k: usize) -> LabelMap {
    LabelMap::new((0..k).map(|i| format!("class_{i}"))).expect("distinct names")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_counts_and_determinism() {
        let spec = BlobSpec::balanced(3, 10, 5);
        let a = gaussian_blobs(&spec, numbered_labels(3)).unwrap();
        let b = gaussian_blobs(&spec, numbered_labels(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.class_counts(), vec![10, 10, 10]);
        assert_eq!(a.n_features(), 4);
    }

    #[test]
    fn centres_are_distinct() {
        let cs: Vec<Vec<f64>> = (0..9).map(|c| centre(c, 4, 4.0)).collect();
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                assert_ne!(cs[i], cs[j]);
            }
        }
    }

    #[test]
    fn reference_fixture_matches_class_table() {
        let d = cic_ids2017_like(0).unwrap();
        assert_eq!(d.n_rows(), 56607);
        assert_eq!(d.class_counts(), CIC_IDS2017_COUNTS.to_vec());
    }
}
