//! Class-stratified subset selection.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ManifestRecord;
use crate::error::{Error, Result};
use crate::hash::{derive_seed, fnv1a};

/// How many records each class contributes to a subset of `target`.
///
/// Classes no larger than the even share give everything they have and the
/// shortfall is re-split over the rest. Once every remaining class can meet
/// the share, the leftover `target mod classes` records go one each to the
/// first classes in a seeded shuffle.
pub fn class_quotas(
    class_sizes: &BTreeMap<String, usize>,
    target: usize,
    seed: u64,
) -> Result<BTreeMap<String, usize>> {
    let total: usize = class_sizes.values().sum();
    if target > total {
        return Err(Error::Argument(format!(
            "subset size {target} exceeds manifest size {total}"
        )));
    }
    let mut order: Vec<&String> = class_sizes.keys().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed("remainder", &[seed])));

    let mut quotas = BTreeMap::new();
    let mut remaining = target;
    let mut active = order;
    while !active.is_empty() {
        let share = remaining / active.len();
        let (small, rest): (Vec<&String>, Vec<&String>) =
            active.iter().partition(|c| class_sizes[**c] <= share);
        if small.is_empty() {
            let extra = remaining % active.len();
            for (pos, class) in active.iter().enumerate() {
                quotas.insert((*class).clone(), share + usize::from(pos < extra));
            }
            break;
        }
        for class in small {
            let n = class_sizes[class];
            quotas.insert(class.clone(), n);
            remaining -= n;
        }
        active = rest;
    }
    Ok(quotas)
}

/// Picks `target_size` records stratified by class; selection is seeded and
/// the result keeps manifest order.
pub fn stratified_sample(
    manifest: &[ManifestRecord],
    target_size: usize,
    seed: u64,
) -> Result<Vec<ManifestRecord>> {
    let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.iter().enumerate() {
        by_class.entry(r.class_name.clone()).or_default().push(i);
    }
    let sizes = by_class.iter().map(|(k, v)| (k.clone(), v.len())).collect();
    let quotas = class_quotas(&sizes, target_size, seed)?;

    let mut picked = Vec::with_capacity(target_size);
    for (class, members) in &by_class {
        let q = quotas[class];
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed("within", &[seed, fnv1a(class.as_bytes())]));
        picked.extend(index::sample(&mut rng, members.len(), q).into_iter().map(|i| members[i]));
    }
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| manifest[i].clone()).collect())
}
