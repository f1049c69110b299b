//! Deterministic synthetic embeddings with known ground truth.
//!
//! Every vector is assembled from seeded random unit directions:
//!
//! * a *family* direction shared by materials `2f` and `2f + 1`, and a
//!   *unique* direction per material. The material prototype used by the
//!   visual and text kinds is `normalize(family + unique)`.
//! * Touch mostly resolves the family: the tactile prototype is
//!   `normalize(family + TACTILE_DETAIL · unique)`, so sibling materials feel
//!   alike.
//! * a kind-specific offset per `(kind, material)`, weighted by
//!   `OFFSET_WEIGHT`.
//! * visual vectors add one of `APPEARANCE_COUNT` appearance directions,
//!   chosen by the instance seed and independent of the material.
//!
//! The signal is normalized, blended with a unit noise direction as
//! `sqrt(1 - noise²)·signal + noise·n`, and normalized again.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::FeatureVec;
use crate::error::{Error, Result};
use crate::hash::derive_seed;

pub const MIN_SYNTH_DIM: usize = 8;
pub const APPEARANCE_COUNT: u64 = 8;
pub const TACTILE_DETAIL: f64 = 0.35;
pub const OFFSET_WEIGHT: f64 = 0.5;
pub const APPEARANCE_WEIGHT: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Visual,
    Tactile,
    Text,
}

impl Modality {
    fn tag(self) -> u64 {
        match self {
            Modality::Visual => 0,
            Modality::Tactile => 1,
            Modality::Text => 2,
        }
    }
}

pub fn family_of(material_id: u64) -> u64 {
    material_id / 2
}

pub fn appearance_of(instance_seed: u64) -> u64 {
    derive_seed("appearance", &[instance_seed]) % APPEARANCE_COUNT
}

/// The seeded unit directions that synthetic vectors are built from.
#[derive(Clone, Copy, Debug)]
pub struct SynthComponents {
    dim: usize,
}

impl SynthComponents {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < MIN_SYNTH_DIM {
            return Err(Error::Config(format!(
                "synthetic embeddings need dim >= {MIN_SYNTH_DIM}, got {dim}"
            )));
        }
        Ok(SynthComponents { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn direction(&self, tag: &str, parts: &[u64]) -> Vec<f64> {
        let mut key = parts.to_vec();
        key.push(self.dim as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tag, &key));
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        unit(v)
    }

    pub fn family_direction(&self, family: u64) -> Vec<f64> {
        self.direction("family", &[family])
    }

    pub fn unique_direction(&self, material_id: u64) -> Vec<f64> {
        self.direction("unique", &[material_id])
    }

    pub fn kind_offset(&self, kind: Modality, material_id: u64) -> Vec<f64> {
        self.direction("offset", &[kind.tag(), material_id])
    }

    pub fn appearance_direction(&self, appearance: u64) -> Vec<f64> {
        self.direction("look", &[appearance])
    }

    /// Direction shared by everything depicting one object class.
    pub fn class_direction(&self, class_key: u64) -> Vec<f64> {
        self.direction("class", &[class_key])
    }

    /// Direction of one caption word in the text space.
    pub fn word_direction(&self, word_key: u64) -> Vec<f64> {
        self.direction("word", &[word_key])
    }

    pub fn noise_direction(&self, kind: Modality, material_id: u64, instance_seed: u64) -> Vec<f64> {
        self.direction("noise", &[kind.tag(), material_id, instance_seed])
    }

    /// Unit prototype that `kind` sees for a material.
    pub fn prototype(&self, kind: Modality, material_id: u64) -> Vec<f64> {
        let fam = self.family_direction(family_of(material_id));
        let uniq = self.unique_direction(material_id);
        let detail = if kind == Modality::Tactile {
            TACTILE_DETAIL
        } else {
            1.0
        };
        unit(fam.iter().zip(&uniq).map(|(f, u)| f + detail * u).collect())
    }

    /// Noise-free unit signal for one instance.
    pub fn signal(&self, kind: Modality, material_id: u64, instance_seed: u64) -> Vec<f64> {
        let proto = self.prototype(kind, material_id);
        let off = self.kind_offset(kind, material_id);
        let mut s: Vec<f64> = proto
            .iter()
            .zip(&off)
            .map(|(p, o)| p + OFFSET_WEIGHT * o)
            .collect();
        if kind == Modality::Visual {
            let look = self.appearance_direction(appearance_of(instance_seed));
            s.iter_mut()
                .zip(&look)
                .for_each(|(x, a)| *x += APPEARANCE_WEIGHT * a);
        }
        unit(s)
    }
}

pub(crate) fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Deterministic synthetic embedding; a pure function of its arguments.
pub fn synth_embed(
    kind: Modality,
    material_id: u64,
    instance_seed: u64,
    dim: usize,
    noise: f64,
) -> Result<FeatureVec> {
    let comps = SynthComponents::new(dim)?;
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::Config(format!("noise must lie in [0, 1), got {noise}")));
    }
    let signal = comps.signal(kind, material_id, instance_seed);
    let v = if noise == 0.0 {
        signal
    } else {
        let n = comps.noise_direction(kind, material_id, instance_seed);
        let keep = (1.0 - noise * noise).sqrt();
        unit(signal.iter().zip(&n).map(|(s, e)| keep * s + noise * e).collect())
    };
    Ok(FeatureVec::from_f64(&v)?.assume_normalized())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_bitwise() {
        let a = synth_embed(Modality::Visual, 3, 17, 32, 0.3).unwrap();
        let b = synth_embed(Modality::Visual, 3, 17, 32, 0.3).unwrap();
        assert_eq!(a, b);
        let c = synth_embed(Modality::Visual, 3, 18, 32, 0.3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn small_dim_rejected() {
        assert!(matches!(
            synth_embed(Modality::Text, 0, 0, 7, 0.0),
            Err(Error::Config(_))
        ));
        assert!(synth_embed(Modality::Text, 0, 0, 8, 1.0).is_err());
    }

    #[test]
    fn unit_norm_and_self_cosine() {
        for kind in [Modality::Visual, Modality::Tactile, Modality::Text] {
            let v = synth_embed(kind, 5, 9, 48, 0.4).unwrap();
            assert!((v.norm() - 1.0).abs() < 1e-6);
            assert!((v.cosine(&v).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_free_cross_kind_cosine_matches_component_recomputation() {
        let dim = 64;
        let c = SynthComponents::new(dim).unwrap();
        let (m, inst) = (4, 21);
        // Rebuild both vectors from the raw directions, independently of
        // `signal`.
        let fam = c.family_direction(2);
        let uniq = c.unique_direction(m);
        let off_t = c.kind_offset(Modality::Text, m);
        let off_k = c.kind_offset(Modality::Tactile, m);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let text_proto: Vec<f64> = fam.iter().zip(&uniq).map(|(f, u)| f + u).collect();
        let tac_proto: Vec<f64> = fam.iter().zip(&uniq).map(|(f, u)| f + 0.35 * u).collect();
        let (nt, nk) = (norm(&text_proto), norm(&tac_proto));
        let text: Vec<f64> = (0..dim).map(|i| text_proto[i] / nt + 0.5 * off_t[i]).collect();
        let tac: Vec<f64> = (0..dim).map(|i| tac_proto[i] / nk + 0.5 * off_k[i]).collect();
        let want = text.iter().zip(&tac).map(|(a, b)| a * b).sum::<f64>() / (norm(&text) * norm(&tac));

        let a = synth_embed(Modality::Text, m, inst, dim, 0.0).unwrap();
        let b = synth_embed(Modality::Tactile, m, inst, dim, 0.0).unwrap();
        assert!((a.cosine(&b).unwrap() - want).abs() < 1e-6);
    }

    #[test]
    fn within_material_beats_cross_material() {
        let dim = 64;
        let (mut same, mut cross) = (0.0, 0.0);
        for i in 0..1000u64 {
            let m = i % 40;
            let other = (m + 7) % 40;
            let v = synth_embed(Modality::Visual, m, i, dim, 0.2).unwrap();
            let t_same = synth_embed(Modality::Tactile, m, i + 5000, dim, 0.2).unwrap();
            let t_cross = synth_embed(Modality::Tactile, other, i + 9000, dim, 0.2).unwrap();
            same += v.cosine(&t_same).unwrap();
            cross += v.cosine(&t_cross).unwrap();
        }
        assert!(same / 1000.0 > cross / 1000.0 + 0.1, "{same} vs {cross}");
    }

    #[test]
    fn appearance_confound_links_different_materials() {
        let dim = 64;
        // two visual instances sharing an appearance but not a material
        let (mut i, mut j) = (0u64, 1u64);
        while appearance_of(j) != appearance_of(i) {
            j += 1;
        }
        let a = synth_embed(Modality::Visual, 0, i, dim, 0.0).unwrap();
        let b = synth_embed(Modality::Visual, 10, j, dim, 0.0).unwrap();
        i = j + 1;
        while appearance_of(i) == appearance_of(j) {
            i += 1;
        }
        let c = synth_embed(Modality::Visual, 10, i, dim, 0.0).unwrap();
        assert!(a.cosine(&b).unwrap() > 0.25);
        assert!(c.cosine(&b).unwrap() > a.cosine(&b).unwrap());
    }
}
