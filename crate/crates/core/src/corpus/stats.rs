use std::collections::{BTreeMap, BTreeSet};

use super::TactileCaption;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabStats {
    pub unique_word_count: usize,
    pub unique_caption_count: usize,
    /// Most frequent adjectives, by count descending then word.
    pub top_words: Vec<(String, usize)>,
}

/// Word and canonical-caption counts over a set of captions.
pub fn vocab_stats<'a>(
    captions: impl IntoIterator<Item = &'a TactileCaption>,
    top_k: usize,
) -> VocabStats {
    let mut words: BTreeMap<&str, usize> = BTreeMap::new();
    let mut canon = BTreeSet::new();
    for c in captions {
        for w in c.adjectives() {
            *words.entry(w.as_str()).or_insert(0) += 1;
        }
        canon.insert(c.canonical());
    }
    let mut ranked: Vec<(String, usize)> =
        words.iter().map(|(w, &n)| (w.to_string(), n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    VocabStats {
        unique_word_count: words.len(),
        unique_caption_count: canon.len(),
        top_words: ranked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_caption;

    #[test]
    fn reordered_sets_count_once() {
        let a = validate_caption("soft, fuzzy, dense, firm, light").unwrap();
        let b = validate_caption("light, firm, dense, fuzzy, soft").unwrap();
        let s = vocab_stats([&a, &b], 3);
        assert_eq!(s.unique_caption_count, 1);
        assert_eq!(s.unique_word_count, 5);
        assert_eq!(s.top_words[0], ("dense".to_string(), 2));
    }

    #[test]
    fn nine_unique_words() {
        let a = validate_caption("soft,fuzzy,a,b,c").unwrap();
        let b = validate_caption("soft,x,y,z,w").unwrap();
        let s = vocab_stats([&a, &b], 10);
        assert_eq!(s.unique_word_count, 9);
        assert_eq!(s.unique_caption_count, 2);
        assert_eq!(s.top_words[0], ("soft".to_string(), 2));
    }
}
