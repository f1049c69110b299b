//! External-knowledge corpus: recaptioning, validation, sampling, shards.

pub mod caption;
pub mod captioner;
pub mod sampling;
pub mod shard;
mod stats;
pub mod synthetic;

pub use caption::{validate_caption, TactileCaption};
pub use captioner::{recaption, Captioner, StubCaptioner, WireCaptioner};
pub use sampling::stratified_sample;
pub use shard::{build_shards, load_corpus, read_shard, Shard, ShardSet};
pub use stats::{vocab_stats, VocabStats};

use crate::error::{Error, Result};
use crate::features::{l2_normalize, FeatureVec};

/// One row of a visual dataset manifest before recaptioning.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: u64,
    pub class_name: String,
    pub source_caption: String,
    pub image_ref: Option<String>,
}

fn check_field(what: &str, s: &str) -> Result<()> {
    if s.contains(['\t', '\n', '\r']) {
        return Err(Error::Argument(format!("{what} contains a tab or newline: {s:?}")));
    }
    Ok(())
}

impl ManifestRecord {
    pub fn new(
        id: u64,
        class_name: impl Into<String>,
        source_caption: impl Into<String>,
        image_ref: Option<String>,
    ) -> Result<Self> {
        let class_name = class_name.into();
        let source_caption = source_caption.into();
        if class_name.trim().is_empty() {
            return Err(Error::Argument(format!("record {id}: class name is empty")));
        }
        check_field("class name", &class_name)?;
        check_field("source caption", &source_caption)?;
        Ok(ManifestRecord {
            id,
            class_name,
            source_caption,
            image_ref,
        })
    }

    /// Parses `id<TAB>class<TAB>caption[<TAB>image_ref]`.
    pub fn parse_line(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&cols.len()) {
            return Err(Error::Argument(format!(
                "manifest line needs 3 or 4 tab-separated columns: {line:?}"
            )));
        }
        let id = cols[0]
            .parse()
            .map_err(|_| Error::Argument(format!("bad record id {:?}", cols[0])))?;
        Self::new(id, cols[1], cols[2], cols.get(3).map(|s| s.to_string()))
    }
}

/// A recaptioned corpus item with its image and caption features.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub id: u64,
    pub class_name: String,
    pub caption: TactileCaption,
    pub r_v: FeatureVec,
    pub r_l: FeatureVec,
}

impl CorpusEntry {
    /// Builds an entry, normalizing both feature vectors unless they are
    /// already flagged unit-norm.
    pub fn new(
        id: u64,
        class_name: impl Into<String>,
        caption: TactileCaption,
        r_v: FeatureVec,
        r_l: FeatureVec,
    ) -> Result<Self> {
        if r_v.dim() != r_l.dim() {
            return Err(Error::Dimension(format!(
                "entry {id}: r_v dim {} vs r_l dim {}",
                r_v.dim(),
                r_l.dim()
            )));
        }
        let class_name = class_name.into();
        check_field("class name", &class_name)?;
        let norm = |v: FeatureVec| if v.is_normalized() { Ok(v) } else { l2_normalize(&v) };
        Ok(CorpusEntry {
            id,
            class_name,
            caption,
            r_v: norm(r_v)?,
            r_l: norm(r_l)?,
        })
    }

    /// Entry read back from a shard: values are kept bit-for-bit.
    pub(crate) fn from_stored(
        id: u64,
        class_name: String,
        caption: TactileCaption,
        r_v: FeatureVec,
        r_l: FeatureVec,
    ) -> Self {
        CorpusEntry {
            id,
            class_name,
            caption,
            r_v,
            r_l,
        }
    }

    pub fn dim(&self) -> usize {
        self.r_v.dim()
    }
}
