//! `LSF1` feature store, little-endian:
//!
//! ```text
//! "LSF1" | u32 version=1 | u32 N | u32 d | u32 class_count
//! N*d f32 features, row-major | N u32 labels
//! ```

use std::path::Path;

use super::{ExampleSource, FeatureDataset};
use crate::error::{Error, Result};
use crate::io::{read_file, to_u32, write_file, ByteReader, ByteWriter};
use crate::numerics::DenseMatrix;

const MAGIC: &[u8; 4] = b"LSF1";
const VERSION: u32 = 1;

pub fn store_to_bytes(data: &FeatureDataset) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.magic(MAGIC);
    w.u32(VERSION);
    w.u32(to_u32(data.len(), "example count")?);
    w.u32(to_u32(data.dim(), "dimension")?);
    w.u32(data.class_count());
    w.f32s(data.feature_matrix().data());
    for &l in data.labels() {
        w.u32(l);
    }
    Ok(w.into_bytes())
}

pub fn store_from_bytes(bytes: &[u8]) -> Result<FeatureDataset> {
    let mut r = ByteReader::new(bytes);
    r.expect_magic(MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(at, format!("unsupported version {version}")));
    }
    let n = r.u32("example count")? as usize;
    let d = r.u32("dimension")? as usize;
    let class_count = r.u32("class count")?;
    if n == 0 {
        return Err(Error::parse(8, "store holds no examples"));
    }
    let total = n
        .checked_mul(d)
        .ok_or_else(|| Error::parse(12, "N*d overflows"))?;
    let features = r.f32s(total, "features")?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.offset();
        let l = r.u32("label")?;
        if l >= class_count {
            return Err(Error::parse(
                at,
                format!("label {l} >= class count {class_count}"),
            ));
        }
        labels.push(l);
    }
    r.finish()?;
    FeatureDataset::new(DenseMatrix::new(n, d, features)?, labels, class_count)
}

pub fn save_feature_store(data: &FeatureDataset, path: &Path) -> Result<()> {
    write_file(path, &store_to_bytes(data)?)
}

pub fn load_feature_store(path: &Path) -> Result<FeatureDataset> {
    store_from_bytes(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FeatureDataset {
        let f = DenseMatrix::new(2, 3, vec![0.5, 1.0, 0.0, 2.25, -3.0, 7.0]).unwrap();
        FeatureDataset::new(f, vec![1, 0], 2).unwrap()
    }

    #[test]
    fn size_matches_layout() {
        // 5 header words (20) + 2*3 f32 features (24) + 2 u32 labels (8)
        assert_eq!(store_to_bytes(&sample()).unwrap().len(), 52);
    }

    #[test]
    fn round_trip_via_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.lsf");
        save_feature_store(&sample(), &p).unwrap();
        assert_eq!(load_feature_store(&p).unwrap(), sample());
    }

    #[test]
    fn bad_magic_at_offset_zero() {
        let mut b = store_to_bytes(&sample()).unwrap();
        b[..4].copy_from_slice(b"XXXX");
        match store_from_bytes(&b) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let b = store_to_bytes(&sample()).unwrap();
        for cut in [0, 3, 7, 20, 30, 51] {
            match store_from_bytes(&b[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset <= cut as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut long = b.clone();
        long.push(0);
        assert!(matches!(store_from_bytes(&long), Err(Error::Parse { offset: 52, .. })));
    }

    #[test]
    fn label_out_of_range_reports_its_offset() {
        let mut b = store_to_bytes(&sample()).unwrap();
        b[48..52].copy_from_slice(&5u32.to_le_bytes());
        match store_from_bytes(&b) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 48),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn bytes_round_trip(
            rows in 1usize..6, cols in 1usize..5, seed in any::<u64>()
        ) {
            let mut rng = crate::numerics::SeededRng::new(seed);
            let feats: Vec<f64> = (0..rows * cols).map(|_| rng.normal() as f32 as f64).collect();
            let labels: Vec<u32> = (0..rows).map(|_| rng.below(3) as u32).collect();
            let ds = FeatureDataset::new(DenseMatrix::new(rows, cols, feats).unwrap(), labels, 3).unwrap();
            let bytes = store_to_bytes(&ds).unwrap();
            let back = store_from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &ds);
            prop_assert_eq!(store_to_bytes(&back).unwrap(), bytes);
        }
    }
}
