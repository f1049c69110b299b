//! Order-insensitive caption embedding.

use super::synth::{unit, SynthComponents};
use super::FeatureVec;
use crate::corpus::TactileCaption;
use crate::error::Result;
use crate::hash::fnv1a;

/// Embeds a caption as the normalized sum of fixed per-word directions.
/// Adjectives are summed in sorted order, so any reordering of the same
/// set gives bit-identical output.
#[derive(Clone, Copy, Debug)]
pub struct CaptionEmbedder {
    comps: SynthComponents,
}

impl CaptionEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        Ok(CaptionEmbedder {
            comps: SynthComponents::new(dim)?,
        })
    }

    /// Unnormalized bag-of-words sum.
    pub fn bag(&self, words: &[String]) -> Vec<f64> {
        let mut sorted: Vec<&str> = words.iter().map(String::as_str).collect();
        sorted.sort_unstable();
        let mut acc = vec![0.0; self.comps.dim()];
        for w in sorted {
            for (a, d) in acc.iter_mut().zip(self.comps.word_direction(fnv1a(w.as_bytes()))) {
                *a += d;
            }
        }
        acc
    }

    pub fn embed(&self, caption: &TactileCaption) -> Result<FeatureVec> {
        Ok(FeatureVec::from_f64(&unit(self.bag(caption.adjectives())))?.assume_normalized())
    }
}
