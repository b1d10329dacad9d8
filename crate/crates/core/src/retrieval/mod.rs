//! Similar-utterance retrieval over the training set: Okapi BM25 over
//! tokens, or cosine similarity over cached first-stage vectors.

mod bm25;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

pub use bm25::{RetrievalIndex, DEFAULT_B, DEFAULT_K1};

use crate::corpus::tokenize;
use crate::error::{contract, Error, Result};
use crate::prompts::RepresentationCache;

/// One ranked document.
#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub doc: usize,
    pub utterance_id: String,
    pub score: f64,
}

/// Top `k` of `scores` by descending score, ties to the smaller index,
/// skipping `excluded` positions.
fn rank(scores: &[f64], excluded: &[bool], k: usize) -> Result<Vec<(usize, f64)>> {
    let available = excluded.iter().filter(|e| !**e).count();
    contract!(k >= 1, "k must be at least 1");
    contract!(
        k <= available,
        "k = {k} exceeds the {available} candidates left after exclusions"
    );
    let mut cand: Vec<(usize, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded[*i])
        .map(|(i, &s)| (i, s))
        .collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, order);
        cand.truncate(k);
    }
    cand.sort_by(order);
    Ok(cand)
}

fn exclusion_mask<'a>(
    n: usize,
    lookup: impl Fn(&str) -> Option<usize>,
    exclusions: impl IntoIterator<Item = &'a str>,
) -> Vec<bool> {
    let mut mask = vec![false; n];
    for id in exclusions {
        if let Some(d) = lookup(id) {
            mask[d] = true;
        }
    }
    mask
}

/// Highest-scoring `k` documents for `query` under BM25.
pub fn top_k_similar<'a>(
    index: &RetrievalIndex,
    query: &[String],
    k: usize,
    exclusions: impl IntoIterator<Item = &'a str>,
) -> Result<Vec<Hit>> {
    let scores = index.score_all(query);
    let mask = exclusion_mask(index.num_docs(), |id| index.doc_id(id), exclusions);
    Ok(rank(&scores, &mask, k)?
        .into_iter()
        .map(|(doc, score)| Hit {
            doc,
            utterance_id: index.utterance_id(doc).to_string(),
            score,
        })
        .collect())
}

/// Cached vectors of the retrievable utterances, in sorted id order.
#[derive(Clone, Debug)]
pub struct CosineIndex {
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    cosine_with_norms(a, na, b, nb)
}

fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

impl CosineIndex {
    /// Restricts `cache` to `ids` (normally the training utterances).
    pub fn from_cache<'a>(cache: &RepresentationCache, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let ids: BTreeSet<&str> = ids.into_iter().collect();
        contract!(!ids.is_empty(), "cannot index an empty corpus");
        let mut out = Self {
            ids: Vec::with_capacity(ids.len()),
            vectors: Vec::with_capacity(ids.len()),
            norms: Vec::with_capacity(ids.len()),
        };
        for id in ids {
            let v = cache.get(id)?.to_vec();
            out.norms.push(v.iter().map(|x| x * x).sum::<f64>().sqrt());
            out.vectors.push(v);
            out.ids.push(id.to_string());
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn doc_id(&self, utterance_id: &str) -> Option<usize> {
        self.ids.binary_search_by(|d| d.as_str().cmp(utterance_id)).ok()
    }

    pub fn score_all(&self, query: &[f64]) -> Vec<f64> {
        let nq = query.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.vectors
            .iter()
            .zip(&self.norms)
            .map(|(v, &nv)| cosine_with_norms(query, nq, v, nv))
            .collect()
    }
}

/// Highest-cosine `k` cached vectors for `query`.
pub fn cosine_similar<'a>(
    index: &CosineIndex,
    query: &[f64],
    k: usize,
    exclusions: impl IntoIterator<Item = &'a str>,
) -> Result<Vec<Hit>> {
    let scores = index.score_all(query);
    let mask = exclusion_mask(index.len(), |id| index.doc_id(id), exclusions);
    Ok(rank(&scores, &mask, k)?
        .into_iter()
        .map(|(doc, score)| Hit {
            doc,
            utterance_id: index.ids[doc].clone(),
            score,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RetrieverKind {
    Bm25,
    Cosine,
}

impl FromStr for RetrieverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm25" => Ok(Self::Bm25),
            "cosine" => Ok(Self::Cosine),
            _ => Err(Error::Config(format!("unknown retriever {s:?} (bm25 | cosine)"))),
        }
    }
}

impl fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Bm25 => "bm25",
            Self::Cosine => "cosine",
        })
    }
}

#[derive(Clone, Debug)]
pub enum Retriever {
    Bm25(RetrievalIndex),
    Cosine(CosineIndex),
}

impl Retriever {
    /// Ranks by text under BM25 or by `vector` under cosine.
    pub fn search<'a>(
        &self,
        text: &str,
        vector: &[f64],
        k: usize,
        exclusions: impl IntoIterator<Item = &'a str>,
    ) -> Result<Vec<Hit>> {
        match self {
            Self::Bm25(idx) => top_k_similar(idx, &tokenize(text), k, exclusions),
            Self::Cosine(idx) => cosine_similar(idx, vector, k, exclusions),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarSample {
    pub utterance_id: String,
    pub score: f64,
    pub representation: Vec<f64>,
    pub label: usize,
}

/// The `k` retrieved neighbours of one target, best first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimilarSampleSet {
    pub samples: Vec<SimilarSample>,
}

impl SimilarSampleSet {
    pub fn assemble(hits: &[Hit], cache: &RepresentationCache, labels: &BTreeMap<String, usize>) -> Result<Self> {
        let samples = hits
            .iter()
            .map(|h| {
                Ok(SimilarSample {
                    utterance_id: h.utterance_id.clone(),
                    score: h.score,
                    representation: cache.get(&h.utterance_id)?.to_vec(),
                    label: *labels
                        .get(&h.utterance_id)
                        .ok_or_else(|| Error::Contract(format!("no label for {}", h.utterance_id)))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
