//! Synthetic visual manifests and tri-modal datasets with material labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::captioner::StubCaptioner;
use super::{CorpusEntry, ManifestRecord, TactileCaption};
use crate::error::{Error, Result};
use crate::features::synth::unit;
use crate::features::{
    appearance_of, l2_normalize, synth_embed, CaptionEmbedder, FeatureVec, Modality,
    SynthComponents, TriModalSample,
};
use crate::hash::{derive_seed, fnv1a};

pub const CLASS_NAMES: &[&str] = &[
    "sofa", "wallet", "barrel", "teddy bear", "hammer", "wine bottle", "sweater", "brick",
    "basketball", "notebook", "bucket", "rocking chair", "saucepan", "umbrella", "sandal",
    "pillow", "vase", "keyboard", "backpack", "mailbox", "towel", "violin", "helmet", "drum",
    "boot", "teapot", "bench", "ladle", "envelope", "candle", "scarf", "crate", "mug",
    "glove", "tile", "ruler", "blanket", "paddle", "jar", "skateboard", "cardigan", "bowl",
    "doormat", "flask", "sponge", "lampshade", "shelf", "tray",
];

const SOURCE_TEMPLATES: &[&str] = &[
    "a photo of a {} on a table",
    "a close-up of a {} in a room",
    "a {} lying on the floor",
    "a {} photographed outdoors",
    "a worn {} near a window",
];

pub fn class_name(i: usize) -> String {
    let base = CLASS_NAMES[i % CLASS_NAMES.len()];
    match i / CLASS_NAMES.len() {
        0 => base.to_string(),
        k => format!("{base} {k}"),
    }
}

/// `classes × per_class` manifest records with sequential ids.
pub fn synthetic_manifest(classes: usize, per_class: usize) -> Vec<ManifestRecord> {
    let mut out = Vec::with_capacity(classes * per_class);
    for c in 0..classes {
        let name = class_name(c);
        for k in 0..per_class {
            let id = out.len() as u64;
            let caption = SOURCE_TEMPLATES[k % SOURCE_TEMPLATES.len()].replace("{}", &name);
            out.push(
                ManifestRecord::new(id, name.clone(), caption, Some(format!("synthetic/{id}.jpg")))
                    .expect("synthetic fields are clean"),
            );
        }
    }
    out
}

/// Weight of the object-class direction in visual and text vectors.
pub const CLASS_WEIGHT: f64 = 0.6;
/// Weight of the caption bag-of-words in text vectors.
pub const CAPTION_WEIGHT: f64 = 1.0;
/// Extra weight of the appearance direction in visual vectors.
pub const LOOK_WEIGHT: f64 = 1.0;

/// Parameters of the synthetic embedding world.
///
/// On top of the material geometry of [`synth_embed`], images and caption
/// text of one object class share a class direction, and caption text adds
/// the bag-of-words embedding of its adjectives. Touch sees only the
/// material.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthWorld {
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
    pub class_weight: f64,
    pub caption_weight: f64,
    pub look_weight: f64,
}

impl SynthWorld {
    pub fn new(dim: usize, noise: f64, seed: u64) -> Self {
        SynthWorld {
            dim,
            noise,
            seed,
            class_weight: CLASS_WEIGHT,
            caption_weight: CAPTION_WEIGHT,
            look_weight: LOOK_WEIGHT,
        }
    }

    pub fn material_of(class: &str) -> u64 {
        StubCaptioner::material_of(class)
    }

    fn blend(&self, base: FeatureVec, extra: &[(f64, Vec<f64>)]) -> Result<FeatureVec> {
        let mut v = base.to_f64();
        for (w, dir) in extra {
            v.iter_mut().zip(dir).for_each(|(x, d)| *x += w * d);
        }
        l2_normalize(&FeatureVec::from_f64(&v)?)
    }

    fn class_direction(&self, class: &str) -> Result<Vec<f64>> {
        Ok(SynthComponents::new(self.dim)?.class_direction(fnv1a(class.as_bytes())))
    }

    pub fn visual(&self, class: &str, inst: u64) -> Result<FeatureVec> {
        let base = synth_embed(Modality::Visual, Self::material_of(class), inst, self.dim, self.noise)?;
        let look = SynthComponents::new(self.dim)?.appearance_direction(appearance_of(inst));
        self.blend(
            base,
            &[(self.class_weight, self.class_direction(class)?), (self.look_weight, look)],
        )
    }

    pub fn tactile(&self, class: &str, inst: u64) -> Result<FeatureVec> {
        synth_embed(Modality::Tactile, Self::material_of(class), inst, self.dim, self.noise)
    }

    pub fn text(&self, class: &str, caption: &TactileCaption, inst: u64) -> Result<FeatureVec> {
        let base = synth_embed(Modality::Text, Self::material_of(class), inst, self.dim, self.noise)?;
        let words = unit(CaptionEmbedder::new(self.dim)?.bag(caption.adjectives()));
        self.blend(
            base,
            &[
                (self.class_weight, self.class_direction(class)?),
                (self.caption_weight, words),
            ],
        )
    }

    fn corpus_instance(&self, id: u64) -> u64 {
        derive_seed("corpus", &[self.seed, id])
    }

    fn sample_instance(&self, id: u64) -> u64 {
        derive_seed("sample", &[self.seed, id])
    }

    /// Appearance index of a corpus entry's image.
    pub fn corpus_appearance(&self, id: u64) -> u64 {
        appearance_of(self.corpus_instance(id))
    }

    /// Appearance index of a sample's image.
    pub fn sample_appearance(&self, id: u64) -> u64 {
        appearance_of(self.sample_instance(id))
    }

    /// Image and caption features for a recaptioned manifest record.
    pub fn corpus_entry(&self, record: &ManifestRecord, caption: TactileCaption) -> Result<CorpusEntry> {
        let inst = self.corpus_instance(record.id);
        let r_v = self.visual(&record.class_name, inst)?;
        let r_l = self.text(&record.class_name, &caption, inst)?;
        CorpusEntry::new(record.id, record.class_name.clone(), caption, r_v, r_l)
    }

    /// A visuo-tactile observation of `class`, with its ground-truth caption
    /// and caption embedding.
    pub fn sample(&self, id: u64, class: &str) -> Result<TriModalSample> {
        let inst = self.sample_instance(id);
        let caption = StubCaptioner::caption_for(class);
        let mut s = TriModalSample::new(
            id,
            self.visual(class, inst)?,
            self.tactile(class, inst)?,
            self.text(class, &caption, inst)?,
            caption.to_string(),
        )?;
        s.material = Some(Self::material_of(class));
        Ok(s)
    }

    /// `n` samples with classes drawn uniformly from the first `classes`
    /// class names; ids start at `first_id`.
    pub fn samples(&self, n: usize, classes: usize, first_id: u64) -> Result<Vec<TriModalSample>> {
        let pool: Vec<usize> = (0..classes.max(1)).collect();
        self.samples_from(n, &pool, first_id)
    }

    /// `n` samples with classes drawn uniformly from `class_ids`.
    pub fn samples_from(&self, n: usize, class_ids: &[usize], first_id: u64) -> Result<Vec<TriModalSample>> {
        if class_ids.is_empty() {
            return Err(Error::Argument("no classes to sample from".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("classes", &[self.seed, first_id]));
        (0..n)
            .map(|i| {
                let c = class_name(class_ids[rng.random_range(0..class_ids.len())]);
                self.sample(first_id + i as u64, &c)
            })
            .collect()
    }
}

/// Weights of the fixed linear mix used as the text target of the aligned
/// dataset: `L = normalize(VISUAL_MIX·V + TACTILE_MIX·T)`.
pub const VISUAL_MIX: f64 = 0.8;
pub const TACTILE_MIX: f64 = 0.2;

/// Samples whose text embedding is a fixed linear mix of their visual and
/// tactile embeddings. Every sample draws its own material from
/// `materials` and its own instance noise, so targets are all distinct.
pub fn aligned_samples(n: usize, dim: usize, noise: f64, materials: u64, seed: u64) -> Result<Vec<TriModalSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed("aligned", &[seed]));
    (0..n)
        .map(|i| {
            let m = rng.random_range(0..materials.max(1));
            let inst = derive_seed("aligned-inst", &[seed, i as u64]);
            let v = synth_embed(Modality::Visual, m, inst, dim, noise)?;
            let t = synth_embed(Modality::Tactile, m, inst, dim, noise)?;
            let mix: Vec<f64> = v
                .to_f64()
                .iter()
                .zip(t.to_f64())
                .map(|(a, b)| VISUAL_MIX * a + TACTILE_MIX * b)
                .collect();
            let l = l2_normalize(&FeatureVec::from_f64(&mix)?)?;
            let mut s = TriModalSample::new(i as u64, v, t, l, format!("aligned {i}"))?;
            s.material = Some(m);
            Ok(s)
        })
        .collect()
}
