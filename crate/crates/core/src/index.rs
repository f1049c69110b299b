//! Exact cosine top-K search over corpus embeddings.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};

use crate::corpus::{CorpusEntry, Shard, TactileCaption};
use crate::error::{Error, Result};
use crate::features::{FeatureVec, l2_normalize};

/// Which corpus embedding the index is keyed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KeyMode {
    /// Caption embeddings `r_l`.
    #[default]
    Text,
    /// Image embeddings `r_v`.
    Image,
}

impl KeyMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(KeyMode::Text),
            "image" => Ok(KeyMode::Image),
            _ => Err(Error::Argument(format!("key mode must be text or image, got {s:?}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KeyMode::Text => "text",
            KeyMode::Image => "image",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub id: u64,
    /// Cosine between the query and the key row.
    pub score: f64,
    pub class_name: String,
    pub caption: TactileCaption,
    pub r_v: FeatureVec,
    pub r_l: FeatureVec,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
}

impl RetrievalResult {
    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.hits.iter().map(|h| h.id).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.hits.iter().map(|h| h.score).collect()
    }
}

/// Immutable brute-force index. Key rows are unit-normalized at build; the
/// other modality is kept alongside so hits can hand back both vectors.
#[derive(Clone, Debug)]
pub struct VectorIndex {
    dim: usize,
    key: KeyMode,
    keys: Vec<f32>,
    others: Vec<f32>,
    ids: Vec<u64>,
    class_names: Vec<String>,
    captions: Vec<TactileCaption>,
}

/// A candidate ordered so that "greater" means "ranks earlier".
#[derive(Clone, Copy, Debug, PartialEq)]
struct Ranked {
    score: f64,
    id: u64,
    row: usize,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl VectorIndex {
    pub fn build(shards: &[Shard], key: KeyMode) -> Result<Self> {
        let dim = shards.iter().find(|s| !s.entries.is_empty()).map_or(0, |s| s.dim);
        let n: usize = shards.iter().map(|s| s.entries.len()).sum();
        let mut entries = Vec::with_capacity(n);
        for s in shards {
            if !s.entries.is_empty() && s.dim != dim {
                return Err(Error::Dimension(format!(
                    "shard dim {} does not match index dim {dim}",
                    s.dim
                )));
            }
            entries.extend(s.entries.iter());
        }
        Self::from_entries(entries, key)
    }

    pub fn from_entries<'a>(
        entries: impl IntoIterator<Item = &'a CorpusEntry>,
        key: KeyMode,
    ) -> Result<Self> {
        let mut idx = VectorIndex {
            dim: 0,
            key,
            keys: Vec::new(),
            others: Vec::new(),
            ids: Vec::new(),
            class_names: Vec::new(),
            captions: Vec::new(),
        };
        let mut seen = BTreeSet::new();
        for e in entries {
            if idx.ids.is_empty() {
                idx.dim = e.dim();
            } else if e.dim() != idx.dim {
                return Err(Error::Dimension(format!(
                    "entry {} has dim {}, index dim is {}",
                    e.id,
                    e.dim(),
                    idx.dim
                )));
            }
            if !seen.insert(e.id) {
                return Err(Error::Argument(format!("duplicate entry id {}", e.id)));
            }
            let (k, o) = match key {
                KeyMode::Text => (&e.r_l, &e.r_v),
                KeyMode::Image => (&e.r_v, &e.r_l),
            };
            idx.keys.extend_from_slice(l2_normalize(k)?.values());
            idx.others.extend_from_slice(o.values());
            idx.ids.push(e.id);
            idx.class_names.push(e.class_name.clone());
            idx.captions.push(e.caption.clone());
        }
        Ok(idx)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn key_mode(&self) -> KeyMode {
        self.key
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn captions(&self) -> &[TactileCaption] {
        &self.captions
    }

    pub fn key_row(&self, i: usize) -> &[f32] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    /// Bytes held by the vector payloads and id array.
    pub fn payload_bytes(&self) -> usize {
        Self::estimated_payload_bytes(self.len(), self.dim)
    }

    pub fn estimated_payload_bytes(n: usize, dim: usize) -> usize {
        n * (2 * dim * 4 + 8)
    }

    fn unit_query(&self, query: &FeatureVec) -> Result<Vec<f64>> {
        if query.dim() != self.dim {
            return Err(Error::Dimension(format!(
                "query dim {} does not match index dim {}",
                query.dim(),
                self.dim
            )));
        }
        let n = query.norm();
        if n == 0.0 {
            return Err(Error::Degenerate("query vector is zero".into()));
        }
        Ok(query.to_f64().into_iter().map(|x| x / n).collect())
    }

    fn score(&self, row: usize, q: &[f64]) -> f64 {
        self.key_row(row)
            .iter()
            .zip(q)
            .map(|(&a, &b)| f64::from(a) * b)
            .sum()
    }

    fn check_k(k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::Argument("k must be at least 1".into()));
        }
        Ok(())
    }

    fn hit(&self, r: Ranked) -> Hit {
        let key = FeatureVec::new(self.key_row(r.row).to_vec())
            .expect("stored rows are finite")
            .assume_normalized();
        let other = FeatureVec::new(self.others[r.row * self.dim..(r.row + 1) * self.dim].to_vec())
            .expect("stored rows are finite");
        let (r_v, r_l) = match self.key {
            KeyMode::Text => (other, key),
            KeyMode::Image => (key, other),
        };
        Hit {
            id: r.id,
            score: r.score,
            class_name: self.class_names[r.row].clone(),
            caption: self.captions[r.row].clone(),
            r_v,
            r_l,
        }
    }

    /// Exact top-`k` by cosine, selected with a bounded min-heap. Ties go
    /// to the lower entry id.
    pub fn topk(&self, query: &FeatureVec, k: usize) -> Result<RetrievalResult> {
        Self::check_k(k)?;
        if self.is_empty() {
            return Ok(RetrievalResult::default());
        }
        let q = self.unit_query(query)?;
        let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
        for row in 0..self.len() {
            let cand = Ranked {
                score: self.score(row, &q),
                id: self.ids[row],
                row,
            };
            if heap.len() < k {
                heap.push(Reverse(cand));
            } else if let Some(worst) = heap.peek() {
                if cand > worst.0 {
                    heap.pop();
                    heap.push(Reverse(cand));
                }
            }
        }
        let ranked: Vec<Ranked> = heap.into_sorted_vec().into_iter().map(|r| r.0).collect();
        Ok(RetrievalResult {
            hits: ranked.into_iter().map(|r| self.hit(r)).collect(),
        })
    }

    /// Reference implementation: score everything, stable sort by
    /// `(-score, id)`.
    pub fn oracle_topk(&self, query: &FeatureVec, k: usize) -> Result<RetrievalResult> {
        Self::check_k(k)?;
        if self.is_empty() {
            return Ok(RetrievalResult::default());
        }
        let q = self.unit_query(query)?;
        let mut all: Vec<Ranked> = (0..self.len())
            .map(|row| Ranked {
                score: self.score(row, &q),
                id: self.ids[row],
                row,
            })
            .collect();
        all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
        all.truncate(k);
        Ok(RetrievalResult {
            hits: all.into_iter().map(|r| self.hit(r)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn caption() -> TactileCaption {
        TactileCaption::new(&["soft", "smooth", "dense", "firm", "light"]).unwrap()
    }

    fn entry(id: u64, v: &[f32]) -> CorpusEntry {
        let fv = FeatureVec::new(v.to_vec()).unwrap();
        CorpusEntry::new(id, "thing", caption(), fv.clone(), fv).unwrap()
    }

    fn random_entries(n: usize, dim: usize, seed: u64) -> Vec<CorpusEntry> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
                entry(i as u64, &v)
            })
            .collect()
    }

    fn fv(v: &[f32]) -> FeatureVec {
        FeatureVec::new(v.to_vec()).unwrap()
    }

    #[test]
    fn two_dimensional_example() {
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let es = [entry(1, &[1.0, 0.0]), entry(2, &[0.0, 1.0]), entry(3, &[s, s])];
        let idx = VectorIndex::from_entries(&es, KeyMode::Text).unwrap();
        for res in [idx.topk(&fv(&[1.0, 0.0]), 3), idx.oracle_topk(&fv(&[1.0, 0.0]), 3)] {
            let res = res.unwrap();
            assert_eq!(res.ids(), [1, 3, 2]);
            let want = [1.0, 0.70710678, 0.0];
            for (got, w) in res.scores().iter().zip(want) {
                assert!((got - w).abs() < 1e-6, "{got} vs {w}");
            }
        }
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = VectorIndex::build(&[], KeyMode::Text).unwrap();
        assert!(idx.is_empty());
        assert!(idx.topk(&fv(&[1.0, 2.0, 3.0]), 5).unwrap().is_empty());
    }

    #[test]
    fn k_beyond_n_and_zero_k() {
        let es = random_entries(4, 6, 1);
        let idx = VectorIndex::from_entries(&es, KeyMode::Text).unwrap();
        let q = fv(&[1.0; 6]);
        assert_eq!(idx.topk(&q, 10).unwrap().len(), 4);
        assert!(matches!(idx.topk(&q, 0), Err(Error::Argument(_))));
        assert!(matches!(idx.topk(&fv(&[1.0; 5]), 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn stored_row_is_rank_one() {
        let es = random_entries(200, 16, 2);
        let idx = VectorIndex::from_entries(&es, KeyMode::Text).unwrap();
        let res = idx.topk(&es[57].r_l, 1).unwrap();
        assert_eq!(res.hits[0].id, 57);
        assert!((res.hits[0].score - 1.0).abs() < 1e-6);
        for i in 0..idx.len() {
            let n: f64 = idx.key_row(i).iter().map(|&x| f64::from(x).powi(2)).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn ties_go_to_lower_id() {
        let es = [entry(9, &[1.0, 0.0]), entry(4, &[1.0, 0.0]), entry(6, &[1.0, 0.0])];
        let idx = VectorIndex::from_entries(&es, KeyMode::Text).unwrap();
        assert_eq!(idx.topk(&fv(&[1.0, 0.0]), 2).unwrap().ids(), [4, 6]);
        assert_eq!(idx.oracle_topk(&fv(&[1.0, 0.0]), 2).unwrap().ids(), [4, 6]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let es = [entry(1, &[1.0, 0.0]), entry(1, &[0.0, 1.0])];
        assert!(VectorIndex::from_entries(&es, KeyMode::Text).is_err());
    }

    #[test]
    fn image_key_returns_both_vectors() {
        let v = FeatureVec::new(vec![1.0, 0.0]).unwrap();
        let l = FeatureVec::new(vec![0.0, 1.0]).unwrap();
        let e = CorpusEntry::new(5, "x", caption(), v, l).unwrap();
        let idx = VectorIndex::from_entries([&e], KeyMode::Image).unwrap();
        let h = &idx.topk(&fv(&[1.0, 0.0]), 1).unwrap().hits[0];
        assert_eq!(h.score, 1.0);
        assert_eq!(h.r_v.values(), &[1.0, 0.0]);
        assert_eq!(h.r_l.values(), &[0.0, 1.0]);
    }

    #[test]
    fn memory_budget_at_paper_scale() {
        // raw payload: 150k key rows of 768 f32 plus their u64 ids
        let raw = 150_000 * (768 * 4 + 8);
        assert!(VectorIndex::estimated_payload_bytes(150_000, 768) <= 2 * raw);
        let es = random_entries(10, 8, 3);
        let idx = VectorIndex::from_entries(&es, KeyMode::Text).unwrap();
        assert_eq!(idx.payload_bytes(), 10 * (64 + 8));
    }

    #[test]
    fn build_is_deterministic() {
        let es = random_entries(30, 8, 4);
        let shards = [
            Shard { dim: 8, entries: es[..20].to_vec() },
            Shard { dim: 8, entries: es[20..].to_vec() },
        ];
        let a = VectorIndex::build(&shards, KeyMode::Text).unwrap();
        let b = VectorIndex::build(&shards, KeyMode::Text).unwrap();
        assert_eq!(a.ids(), b.ids());
        assert_eq!(a.keys, b.keys);
        let bad = [Shard { dim: 8, entries: es[..2].to_vec() }, Shard {
            dim: 4,
            entries: random_entries(1, 4, 9).into_iter().map(|mut e| {
                e.id = 99;
                e
            }).collect(),
        }];
        assert!(matches!(VectorIndex::build(&bad, KeyMode::Text), Err(Error::Dimension(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn heap_matches_oracle(n in 1usize..300, dim in 2usize..12, k in 1usize..33, seed in 0u64..10_000) {
                let es = random_entries(n, dim, seed);
                let idx = VectorIndex::from_entries(&es, KeyMode::Text).unwrap();
                let q = random_entries(1, dim, seed ^ 0xabcd).remove(0).r_l;
                let a = idx.topk(&q, k).unwrap();
                let b = idx.oracle_topk(&q, k).unwrap();
                prop_assert_eq!(a.ids(), b.ids());
                for (x, y) in a.scores().iter().zip(b.scores()) {
                    prop_assert!((x - y).abs() < 1e-6);
                }
                prop_assert!(a.scores().windows(2).all(|w| w[0] >= w[1]));
            }

            #[test]
            fn scale_invariant_ids(seed in 0u64..10_000, c in 0.01f32..100.0) {
                let es = random_entries(100, 8, seed);
                let idx = VectorIndex::from_entries(&es, KeyMode::Text).unwrap();
                let q: Vec<f32> = es[0].r_v.values().iter().map(|x| x * 0.3 + 0.1).collect();
                let scaled: Vec<f32> = q.iter().map(|x| x * c).collect();
                prop_assert_eq!(
                    idx.topk(&fv(&q), 10).unwrap().ids(),
                    idx.topk(&fv(&scaled), 10).unwrap().ids()
                );
            }

            #[test]
            fn monotone_in_k(seed in 0u64..10_000, k in 1usize..20) {
                let es = random_entries(50, 6, seed);
                let idx = VectorIndex::from_entries(&es, KeyMode::Text).unwrap();
                let q = random_entries(1, 6, seed + 1).remove(0).r_l;
                let small = idx.topk(&q, k).unwrap();
                let big = idx.topk(&q, k + 1).unwrap();
                prop_assert_eq!(&big.hits[..small.len()], &small.hits[..]);
            }
        }
    }
}
