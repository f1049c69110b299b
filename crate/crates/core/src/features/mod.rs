//! Embedding vectors shared by every modality, plus synthetic generation and
//! import of precomputed features.

pub(crate) mod synth;
mod text;

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::shard;
use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub use text::CaptionEmbedder;
pub use synth::{
    appearance_of, family_of, synth_embed, Modality, SynthComponents, APPEARANCE_COUNT,
    MIN_SYNTH_DIM,
};

/// A point in the shared embedding space. Equality compares values bit
/// for bit; the unit-norm flag is a cache and does not take part.
#[derive(Clone, Debug)]
pub struct FeatureVec {
    values: Vec<f32>,
    normalized: bool,
}

impl PartialEq for FeatureVec {
    fn eq(&self, other: &Self) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl FeatureVec {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Dimension("feature vector must have dim > 0".into()));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("feature vector".into()));
        }
        Ok(FeatureVec {
            values,
            normalized: false,
        })
    }

    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&x| x as f32).collect())
    }

    /// Marks a vector as unit-norm without touching its values; used when
    /// loading data that was normalized at write time.
    pub(crate) fn assume_normalized(mut self) -> Self {
        self.normalized = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&x| f64::from(x)).collect()
    }

    /// As a `1×dim` tensor.
    pub fn to_row(&self) -> Tensor {
        Tensor::row(self.to_f64()).expect("non-empty")
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&x| f64::from(x) * f64::from(x))
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &FeatureVec) -> Result<f64> {
        self.check_dim(other)?;
        Ok(dot_f32(&self.values, &other.values))
    }

    pub fn cosine(&self, other: &FeatureVec) -> Result<f64> {
        let d = self.dot(other)?;
        let n = self.norm() * other.norm();
        if n == 0.0 {
            return Err(Error::Degenerate("cosine of a zero vector".into()));
        }
        Ok(d / n)
    }

    fn check_dim(&self, other: &FeatureVec) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "feature dims differ: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// f64-accumulated dot product of two f32 slices.
pub(crate) fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

pub fn l2_normalize(v: &FeatureVec) -> Result<FeatureVec> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::Degenerate("cannot normalize a zero vector".into()));
    }
    let values = v
        .values
        .iter()
        .map(|&x| (f64::from(x) / n) as f32)
        .collect();
    Ok(FeatureVec {
        values,
        normalized: true,
    })
}

/// One aligned visual / tactile / caption-text observation.
#[derive(Clone, Debug, PartialEq)]
pub struct TriModalSample {
    pub id: u64,
    pub visual: FeatureVec,
    pub tactile: FeatureVec,
    pub text: FeatureVec,
    pub caption: String,
    /// Ground-truth material label, when known.
    pub material: Option<u64>,
}

impl TriModalSample {
    pub fn new(
        id: u64,
        visual: FeatureVec,
        tactile: FeatureVec,
        text: FeatureVec,
        caption: impl Into<String>,
    ) -> Result<Self> {
        if visual.dim() != tactile.dim() || visual.dim() != text.dim() {
            return Err(Error::Dimension(format!(
                "sample {id}: visual/tactile/text dims {}/{}/{}",
                visual.dim(),
                tactile.dim(),
                text.dim()
            )));
        }
        Ok(TriModalSample {
            id,
            visual,
            tactile,
            text,
            caption: caption.into(),
            material: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.visual.dim()
    }
}

/// Image and caption features of one imported entry.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePair {
    pub visual: FeatureVec,
    pub text: FeatureVec,
}

/// Reads every `(r_v, r_l)` pair from a shard file.
///
/// With `normalize` set, vectors are re-normalized on load; otherwise they
/// are returned exactly as stored.
pub fn import_features(
    path: &Path,
    expected_dim: usize,
    normalize: bool,
) -> Result<BTreeMap<u64, FeaturePair>> {
    let shard = shard::read_shard(path)?;
    if shard.dim != expected_dim && !shard.entries.is_empty() {
        return Err(Error::format(
            shard::DIM_OFFSET,
            format!("feature dim {} does not match expected {expected_dim}", shard.dim),
        ));
    }
    let mut table = BTreeMap::new();
    for e in shard.entries {
        let (visual, text) = if normalize {
            (l2_normalize(&e.r_v)?, l2_normalize(&e.r_l)?)
        } else {
            (e.r_v, e.r_l)
        };
        if table.insert(e.id, FeaturePair { visual, text }).is_some() {
            return Err(Error::Argument(format!("duplicate id {} in {}", e.id, path.display())));
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_three_four() {
        let v = l2_normalize(&FeatureVec::new(vec![3.0, 4.0]).unwrap()).unwrap();
        assert!((v.values()[0] - 0.6).abs() < 1e-7);
        assert!((v.values()[1] - 0.8).abs() < 1e-7);
        assert!(v.is_normalized());
    }

    #[test]
    fn normalize_unit_is_identity() {
        let u = FeatureVec::new(vec![0.6, 0.8, 0.0]).unwrap();
        let n = l2_normalize(&u).unwrap();
        for (a, b) in u.values().iter().zip(n.values()) {
            assert!((f64::from(*a) - f64::from(*b)).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_zero_is_degenerate() {
        let z = FeatureVec::new(vec![0.0, 0.0]).unwrap();
        assert!(matches!(l2_normalize(&z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn trimodal_rejects_mixed_dims() {
        let a = FeatureVec::new(vec![1.0; 4]).unwrap();
        let b = FeatureVec::new(vec![1.0; 5]).unwrap();
        assert!(TriModalSample::new(0, a.clone(), b, a, "x").is_err());
    }
}
