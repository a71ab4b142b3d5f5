//! Similar-case retrieval over labeled crawl records.
//!
//! Each stored record carries four embeddings (domain, network, HTML and
//! the full text). A query keeps the entries of one label whose best
//! per-category cosine (over domain, network and HTML) clears the
//! threshold, then picks a relevant but diverse subset of them with greedy
//! Maximal Marginal Relevance on the full-text vectors.
//!
//! The index is a flat list scanned linearly; stores are expected to hold
//! thousands of entries, not millions.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbedError, Embedder, EmbeddingVector};
use crate::jsonl::{self, Appender, JsonlError};
use crate::records::{self, canonical_text, prompt_view_capped, Category, CrawlRecord, Label, RecordError, RecordId, PROMPT_VIEW_CAP};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("record {0} is already stored")]
    DuplicateId(RecordId),
    #[error("cannot store an unlabeled record")]
    Unlabeled,
    #[error("invalid retrieval parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Io(#[from] JsonlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub threshold: f64,
    pub lambda: f64,
    pub per_label_k: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self {
            threshold: 0.65,
            lambda: 0.7,
            per_label_k: 5,
        }
    }
}

impl RetrievalParams {
    pub fn validate(&self) -> Result<(), StoreError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(StoreError::Params(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(StoreError::Params(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryVectors {
    #[serde(rename = "Domain")]
    pub domain: EmbeddingVector,
    #[serde(rename = "Network")]
    pub network: EmbeddingVector,
    #[serde(rename = "Html")]
    pub html: EmbeddingVector,
    #[serde(rename = "Full")]
    pub full: EmbeddingVector,
}

impl CategoryVectors {
    pub fn get(&self, category: Category) -> &EmbeddingVector {
        match category {
            Category::Domain => &self.domain,
            Category::Network => &self.network,
            Category::Html => &self.html,
            Category::Full => &self.full,
        }
    }

    pub fn dims(&self) -> usize {
        self.full.dims()
    }

    fn consistent(&self) -> bool {
        Category::ALL.iter().all(|&c| self.get(c).dims() == self.dims())
    }

    /// Embeds the four canonical texts of `record` in one batch.
    pub async fn for_record(record: &CrawlRecord, embedder: &dyn Embedder) -> Result<Self, EmbedError> {
        let texts: Vec<String> = Category::ALL.iter().map(|&c| canonical_text(record, c)).collect();
        let mut v = embedder.embed_batch(&texts).await?.into_iter();
        let mut next = || v.next().ok_or_else(|| EmbedError::Malformed("embedder returned too few vectors".into()));
        Ok(Self {
            domain: next()?,
            network: next()?,
            html: next()?,
            full: next()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredEntry {
    pub record_id: RecordId,
    pub label: Label,
    pub vectors: CategoryVectors,
    pub prompt_view: String,
    pub record: CrawlRecord,
}

/// One line of the vector sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorLine {
    pub record_id: RecordId,
    pub label: Label,
    pub dims: usize,
    pub vectors: CategoryVectors,
}

/// Best cosine over the domain, network and HTML categories.
pub fn candidate_score(query: &CategoryVectors, entry: &CategoryVectors) -> Result<f64, EmbedError> {
    let mut best = f64::NEG_INFINITY;
    for c in Category::EVIDENCE {
        best = best.max(cosine(query.get(c), entry.get(c))?);
    }
    Ok(best)
}

/// Entries with `label` whose [`candidate_score`] is at least `threshold`,
/// by descending score, ties to the lower record id.
pub fn threshold_filter<'a, I>(
    query: &CategoryVectors,
    entries: I,
    label: Label,
    threshold: f64,
) -> Result<Vec<(&'a StoredEntry, f64)>, EmbedError>
where
    I: IntoIterator<Item = &'a StoredEntry>,
{
    let mut out = Vec::new();
    for e in entries.into_iter().filter(|e| e.label == label) {
        let score = candidate_score(query, &e.vectors)?;
        if score >= threshold {
            out.push((e, score));
        }
    }
    // Scores are finite; partial_cmp keeps 0.0 and -0.0 tied.
    out.sort_by(|(a, sa), (b, sb)| {
        sb.partial_cmp(sa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.record_id.cmp(&b.record_id))
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct MmrCandidate<'a> {
    pub id: RecordId,
    pub vector: &'a EmbeddingVector,
}

/// Greedy Maximal Marginal Relevance.
///
/// The first pick is the candidate most similar to `query`; each later pick
/// maximizes `lambda * cos(d, query) - (1 - lambda) * max_s cos(d, s)` over
/// the already selected `s`. Ties go to the lower id. Returns
/// `min(k, candidates.len())` ids in selection order.
pub fn mmr_select(
    query: &EmbeddingVector,
    candidates: &[MmrCandidate<'_>],
    k: usize,
    lambda: f64,
) -> Result<Vec<RecordId>, EmbedError> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by_key(|&i| candidates[i].id);
    let relevance = order
        .iter()
        .map(|&i| cosine(candidates[i].vector, query))
        .collect::<Result<Vec<_>, _>>()?;

    let n = order.len();
    let take = k.min(n);
    let mut chosen = vec![false; n];
    let mut redundancy = vec![f64::NEG_INFINITY; n];
    let mut picked = Vec::with_capacity(take);

    for step in 0..take {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if chosen[j] {
                continue;
            }
            let score = if step == 0 {
                relevance[j]
            } else {
                lambda * relevance[j] - (1.0 - lambda) * redundancy[j]
            };
            // Strict comparison over id-ascending order keeps the lower id on ties.
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        let (winner, _) = best.expect("take <= remaining candidates");
        chosen[winner] = true;
        picked.push(candidates[order[winner]].id);
        let winner_vec = candidates[order[winner]].vector;
        for j in 0..n {
            if !chosen[j] {
                redundancy[j] = redundancy[j].max(cosine(candidates[order[j]].vector, winner_vec)?);
            }
        }
    }
    Ok(picked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedCase {
    pub record_id: RecordId,
    pub score: f64,
    pub prompt_view: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievedExamples {
    pub successes: Vec<RetrievedCase>,
    pub failures: Vec<RetrievedCase>,
}

impl RetrievedExamples {
    pub fn success_views(&self) -> Vec<String> {
        self.successes.iter().map(|c| c.prompt_view.clone()).collect()
    }

    pub fn failure_views(&self) -> Vec<String> {
        self.failures.iter().map(|c| c.prompt_view.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.successes.is_empty() && self.failures.is_empty()
    }
}

#[derive(Debug)]
struct StoreFiles {
    records_path: PathBuf,
    records: Appender,
    vectors: Appender,
}

#[derive(Debug, Default)]
struct Index {
    entries: Vec<Arc<StoredEntry>>,
    ids: HashSet<RecordId>,
}

/// Labeled crawl records with their embeddings.
///
/// Reads run concurrently against the current entries; inserts are
/// serialized through one writer and, for file-backed stores, appended to
/// the record file and the vector sidecar before becoming visible.
#[derive(Debug)]
pub struct CaseStore {
    embedder: Arc<dyn Embedder>,
    view_cap: usize,
    index: RwLock<Index>,
    writer: tokio::sync::Mutex<Option<StoreFiles>>,
}

/// Outcome of opening a file-backed store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpenReport {
    pub loaded: usize,
    /// Records whose vectors were missing from the sidecar and recomputed.
    pub reembedded: usize,
    pub skipped_unlabeled: usize,
    pub truncated_lines: usize,
}

impl CaseStore {
    pub fn in_memory(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            view_cap: PROMPT_VIEW_CAP,
            index: RwLock::new(Index::default()),
            writer: tokio::sync::Mutex::new(None),
        }
    }

    pub fn with_view_cap(mut self, cap: usize) -> Self {
        self.view_cap = cap;
        self
    }

    /// Opens (creating if needed) a store backed by a record file and a
    /// vector sidecar. Sidecar vectors are reused when present with the
    /// embedder's dimensionality; anything else is re-embedded and appended.
    pub async fn open(
        embedder: Arc<dyn Embedder>,
        records_path: &Path,
        vectors_path: &Path,
    ) -> Result<(Self, OpenReport), StoreError> {
        let mut report = OpenReport::default();
        let records = if records_path.exists() {
            let loaded = records::load(records_path)?;
            report.truncated_lines += loaded.truncated_tail;
            loaded.items
        } else {
            Vec::new()
        };
        let mut sidecar: HashMap<RecordId, VectorLine> = HashMap::new();
        if vectors_path.exists() {
            let loaded = jsonl::read::<VectorLine>(vectors_path)?;
            report.truncated_lines += loaded.truncated_tail;
            sidecar.extend(loaded.items.into_iter().map(|l| (l.record_id, l)));
        }

        let store = Self::in_memory(embedder);
        let mut vectors_out = Appender::open(vectors_path)?;
        for record in records {
            if record.label == Label::Unlabeled {
                report.skipped_unlabeled += 1;
                continue;
            }
            let vectors = match sidecar.remove(&record.id) {
                Some(line) if line.dims == store.embedder.dims() && line.vectors.consistent() => line.vectors,
                _ => {
                    let v = CategoryVectors::for_record(&record, store.embedder.as_ref()).await?;
                    vectors_out.append(&VectorLine {
                        record_id: record.id,
                        label: record.label,
                        dims: v.dims(),
                        vectors: v.clone(),
                    })?;
                    report.reembedded += 1;
                    v
                }
            };
            store.push(record, vectors)?;
            report.loaded += 1;
        }
        *store.writer.lock().await = Some(StoreFiles {
            records_path: records_path.to_path_buf(),
            records: Appender::open(records_path)?,
            vectors: vectors_out,
        });
        Ok((store, report))
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self, label: Label) -> usize {
        self.index.read().unwrap().entries.iter().filter(|e| e.label == label).count()
    }

    pub fn contains(&self, id: RecordId) -> bool {
        self.index.read().unwrap().ids.contains(&id)
    }

    pub fn max_record_id(&self) -> Option<RecordId> {
        self.index.read().unwrap().entries.iter().map(|e| e.record_id).max()
    }

    /// The entries present right now.
    pub fn snapshot(&self) -> Vec<Arc<StoredEntry>> {
        self.index.read().unwrap().entries.clone()
    }

    pub fn get(&self, id: RecordId) -> Option<Arc<StoredEntry>> {
        self.index.read().unwrap().entries.iter().find(|e| e.record_id == id).cloned()
    }

    /// Labels `record`, embeds its categories, persists it (file-backed
    /// stores) and adds it to the index.
    pub async fn insert(&self, mut record: CrawlRecord, label: Label) -> Result<Arc<StoredEntry>, StoreError> {
        if label == Label::Unlabeled {
            return Err(StoreError::Unlabeled);
        }
        let mut writer = self.writer.lock().await;
        if self.contains(record.id) {
            return Err(StoreError::DuplicateId(record.id));
        }
        record.set_label(label)?;
        let vectors = CategoryVectors::for_record(&record, self.embedder.as_ref()).await?;
        if let Some(files) = writer.as_mut() {
            files.records.append(&record)?;
            files.vectors.append(&VectorLine {
                record_id: record.id,
                label,
                dims: vectors.dims(),
                vectors: vectors.clone(),
            })?;
        }
        self.push(record, vectors)
    }

    /// Adds an entry whose vectors were computed elsewhere. Nothing is
    /// persisted.
    pub fn insert_precomputed(&self, record: CrawlRecord, vectors: CategoryVectors) -> Result<Arc<StoredEntry>, StoreError> {
        if record.label == Label::Unlabeled {
            return Err(StoreError::Unlabeled);
        }
        self.push(record, vectors)
    }

    fn push(&self, record: CrawlRecord, vectors: CategoryVectors) -> Result<Arc<StoredEntry>, StoreError> {
        if vectors.dims() != self.embedder.dims() || !vectors.consistent() {
            return Err(EmbedError::DimensionMismatch(vectors.dims(), self.embedder.dims()).into());
        }
        let entry = Arc::new(StoredEntry {
            record_id: record.id,
            label: record.label,
            prompt_view: prompt_view_capped(&record, self.view_cap),
            vectors,
            record,
        });
        let mut index = self.index.write().unwrap();
        if !index.ids.insert(entry.record_id) {
            return Err(StoreError::DuplicateId(entry.record_id));
        }
        index.entries.push(entry.clone());
        Ok(entry)
    }

    pub async fn query_vectors(&self, record: &CrawlRecord) -> Result<CategoryVectors, EmbedError> {
        CategoryVectors::for_record(record, self.embedder.as_ref()).await
    }

    pub fn threshold_candidates(
        &self,
        query: &CategoryVectors,
        label: Label,
        params: &RetrievalParams,
    ) -> Result<Vec<(Arc<StoredEntry>, f64)>, EmbedError> {
        let index = self.index.read().unwrap();
        let hits = threshold_filter(query, index.entries.iter().map(Arc::as_ref), label, params.threshold)?;
        let by_id: HashMap<RecordId, &Arc<StoredEntry>> = index.entries.iter().map(|e| (e.record_id, e)).collect();
        Ok(hits.into_iter().map(|(e, s)| (by_id[&e.record_id].clone(), s)).collect())
    }

    /// Up to `per_label_k` successes and failures similar to the query, in
    /// MMR order.
    pub async fn retrieve_examples(&self, query: &CrawlRecord, params: &RetrievalParams) -> Result<RetrievedExamples, StoreError> {
        params.validate()?;
        let vectors = self.query_vectors(query).await?;
        Ok(self.retrieve_with_vectors(&vectors, params)?)
    }

    pub fn retrieve_with_vectors(&self, query: &CategoryVectors, params: &RetrievalParams) -> Result<RetrievedExamples, EmbedError> {
        let pick = |label| -> Result<Vec<RetrievedCase>, EmbedError> {
            let candidates = self.threshold_candidates(query, label, params)?;
            let mmr_input: Vec<MmrCandidate> = candidates
                .iter()
                .map(|(e, _)| MmrCandidate {
                    id: e.record_id,
                    vector: &e.vectors.full,
                })
                .collect();
            let ids = mmr_select(&query.full, &mmr_input, params.per_label_k, params.lambda)?;
            let by_id: HashMap<RecordId, &(Arc<StoredEntry>, f64)> = candidates.iter().map(|c| (c.0.record_id, c)).collect();
            Ok(ids
                .into_iter()
                .map(|id| {
                    let (e, score) = by_id[&id];
                    RetrievedCase {
                        record_id: id,
                        score: *score,
                        prompt_view: e.prompt_view.clone(),
                    }
                })
                .collect())
        };
        Ok(RetrievedExamples {
            successes: pick(Label::Success)?,
            failures: pick(Label::Failed)?,
        })
    }

    pub async fn records_path(&self) -> Option<PathBuf> {
        self.writer.lock().await.as_ref().map(|f| f.records_path.clone())
    }
}

/// Rebuilds the vector sidecar from the record file. Returns the number of
/// labeled records indexed.
pub async fn reindex(embedder: &dyn Embedder, records_path: &Path, vectors_path: &Path) -> Result<usize, StoreError> {
    let loaded = records::load(records_path)?;
    let mut lines = Vec::new();
    for record in loaded.items.iter().filter(|r| r.label != Label::Unlabeled) {
        let vectors = CategoryVectors::for_record(record, embedder).await?;
        lines.push(VectorLine {
            record_id: record.id,
            label: record.label,
            dims: vectors.dims(),
            vectors,
        });
    }
    jsonl::write_all(vectors_path, &lines)?;
    Ok(lines.len())
}

pub fn load_sidecar(path: &Path) -> Result<Vec<VectorLine>, StoreError> {
    Ok(jsonl::read(path)?.items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::LocalEmbedder;
    use crate::records::fixtures::record;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(values.to_vec())
    }

    fn entry(id: RecordId, label: Label, d: &[f64], n: &[f64], h: &[f64], f: &[f64]) -> StoredEntry {
        let mut r = record(id);
        r.label = label;
        StoredEntry {
            record_id: id,
            label,
            vectors: CategoryVectors {
                domain: v(d),
                network: v(n),
                html: v(h),
                full: v(f),
            },
            prompt_view: format!("view-{id}"),
            record: r,
        }
    }

    #[tokio::test]
    async fn self_query_scores_one_everywhere() {
        let store = CaseStore::in_memory(Arc::new(LocalEmbedder::new(64)));
        let r = record(7);
        let entry = store.insert(r.clone(), Label::Success).await.unwrap();
        let q = store.query_vectors(&r).await.unwrap();
        for c in Category::ALL {
            assert!((cosine(q.get(c), entry.vectors.get(c)).unwrap() - 1.0).abs() < 1e-12);
        }
        let hits = store.threshold_candidates(&q, Label::Success, &RetrievalParams::default()).unwrap();
        assert_eq!(hits.len(), 1);
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
    }

    #[tokio::test]
    async fn duplicate_ids_and_unlabeled_inserts_fail() {
        let store = CaseStore::in_memory(Arc::new(LocalEmbedder::new(64)));
        store.insert(record(1), Label::Success).await.unwrap();
        assert!(matches!(store.insert(record(1), Label::Failed).await, Err(StoreError::DuplicateId(1))));
        assert!(matches!(store.insert(record(2), Label::Unlabeled).await, Err(StoreError::Unlabeled)));
        assert_eq!(store.len(), 1);
    }

    #[tokio::test]
    async fn empty_store_yields_nothing() {
        let store = CaseStore::in_memory(Arc::new(LocalEmbedder::new(64)));
        let found = store.retrieve_examples(&record(1), &RetrievalParams::default()).await.unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn one_matching_category_is_enough() {
        let q = CategoryVectors {
            domain: v(&[1.0, 0.0, 0.0]),
            network: v(&[1.0, 0.0, 0.0]),
            html: v(&[1.0, 0.0, 0.0]),
            full: v(&[1.0, 0.0, 0.0]),
        };
        let e = entry(1, Label::Success, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 1.0, 0.0]);
        let hits = threshold_filter(&q, [&e], Label::Success, 0.65).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].1, 1.0);
    }

    #[test]
    fn six_entry_threshold_fixture() {
        // Query is e1 in every category. Per-entry best cosine, by hand:
        //   1: domain (1,0)        -> 1.0
        //   2: network (1,1)       -> 0.7071
        //   3: html (2,1)          -> 2/sqrt5 = 0.8944
        //   4: all (1,2)           -> 1/sqrt5 = 0.4472
        //   5: domain (0.65,0.76)  -> 0.65/sqrt(0.4225+0.5776) = 0.6499
        //   6: network (4,4)       -> 0.7071, exact tie with 2
        let q = CategoryVectors {
            domain: v(&[1.0, 0.0]),
            network: v(&[1.0, 0.0]),
            html: v(&[1.0, 0.0]),
            full: v(&[1.0, 0.0]),
        };
        let off = [0.0, 1.0];
        let entries = vec![
            entry(1, Label::Success, &[1.0, 0.0], &off, &off, &off),
            entry(2, Label::Success, &off, &[1.0, 1.0], &off, &off),
            entry(3, Label::Success, &off, &off, &[2.0, 1.0], &off),
            entry(4, Label::Success, &[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0], &off),
            entry(5, Label::Success, &[0.65, 0.76], &off, &off, &off),
            entry(6, Label::Success, &off, &[4.0, 4.0], &off, &off),
        ];
        let hits = threshold_filter(&q, &entries, Label::Success, 0.65).unwrap();
        let ids: Vec<_> = hits.iter().map(|(e, _)| e.record_id).collect();
        assert_eq!(ids, vec![1, 3, 2, 6]);
        assert!((hits[1].1 - 0.894427).abs() < 1e-6);
    }

    #[test]
    fn other_label_is_never_returned() {
        let q = CategoryVectors {
            domain: v(&[1.0, 0.0]),
            network: v(&[1.0, 0.0]),
            html: v(&[1.0, 0.0]),
            full: v(&[1.0, 0.0]),
        };
        let a = entry(1, Label::Failed, &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]);
        assert!(threshold_filter(&q, [&a], Label::Success, 0.0).unwrap().is_empty());
    }

    #[test]
    fn mmr_with_lambda_one_is_top_k() {
        let q = v(&[1.0, 0.0, 0.0]);
        let vs = [v(&[0.9, 0.1, 0.0]), v(&[0.5, 0.5, 0.0]), v(&[0.95, 0.0, 0.05]), v(&[0.0, 0.0, 1.0])];
        let cands: Vec<_> = vs
            .iter()
            .enumerate()
            .map(|(i, vector)| MmrCandidate { id: i as RecordId + 10, vector })
            .collect();
        assert_eq!(mmr_select(&q, &cands, 3, 1.0).unwrap(), vec![12, 10, 11]);
        assert_eq!(mmr_select(&q, &cands, 10, 1.0).unwrap().len(), 4);
        assert!(mmr_select(&q, &cands, 0, 0.7).unwrap().is_empty());
    }

    #[test]
    fn mmr_prefers_diversity_after_the_seed() {
        let q = v(&[1.0, 1.0, 0.0]);
        // Two near-duplicates close to the query and one different but relevant.
        let a = v(&[1.0, 0.9, 0.0]);
        let b = v(&[1.0, 0.92, 0.0]);
        let c = v(&[1.0, 0.0, 0.3]);
        let cands = [
            MmrCandidate { id: 1, vector: &a },
            MmrCandidate { id: 2, vector: &b },
            MmrCandidate { id: 3, vector: &c },
        ];
        assert_eq!(mmr_select(&q, &cands, 2, 0.3).unwrap(), vec![2, 3]);
        assert_eq!(mmr_select(&q, &cands, 2, 1.0).unwrap(), vec![2, 1]);
    }

    #[test]
    fn mmr_breaks_ties_by_lower_id() {
        let q = v(&[1.0, 0.0]);
        let same = v(&[1.0, 1.0]);
        let cands = [
            MmrCandidate { id: 9, vector: &same },
            MmrCandidate { id: 4, vector: &same },
            MmrCandidate { id: 6, vector: &same },
        ];
        assert_eq!(mmr_select(&q, &cands, 3, 0.7).unwrap(), vec![4, 6, 9]);
    }

    #[test]
    fn params_validation() {
        assert!(RetrievalParams { threshold: 1.5, ..Default::default() }.validate().is_err());
        assert!(RetrievalParams { lambda: -0.1, ..Default::default() }.validate().is_err());
        let d = RetrievalParams::default();
        assert_eq!((d.threshold, d.lambda, d.per_label_k), (0.65, 0.7, 5));
    }

    #[tokio::test]
    async fn file_backed_store_survives_reopen_and_reindex() {
        let dir = tempfile::tempdir().unwrap();
        let rp = dir.path().join("records.jsonl");
        let vp = dir.path().join("vectors.jsonl");
        let emb: Arc<dyn Embedder> = Arc::new(LocalEmbedder::new(32));
        {
            let (store, report) = CaseStore::open(emb.clone(), &rp, &vp).await.unwrap();
            assert_eq!(report.loaded, 0);
            store.insert(record(1), Label::Success).await.unwrap();
            store.insert(record(2), Label::Failed).await.unwrap();
        }
        let (store, report) = CaseStore::open(emb.clone(), &rp, &vp).await.unwrap();
        assert_eq!(report.loaded, 2);
        assert_eq!(report.reembedded, 0);
        assert_eq!(store.count(Label::Success), 1);
        let before = load_sidecar(&vp).unwrap();
        std::fs::remove_file(&vp).unwrap();
        assert_eq!(reindex(emb.as_ref(), &rp, &vp).await.unwrap(), 2);
        assert_eq!(load_sidecar(&vp).unwrap(), before);
    }
}
