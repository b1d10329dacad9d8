use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::corpus::{tokenize, Conversation};
use crate::error::{contract, Error, Result};

pub const DEFAULT_K1: f64 = 1.5;
pub const DEFAULT_B: f64 = 0.75;

const MAGIC: &[u8; 8] = b"MPLPBM25";
const VERSION: u32 = 1;

/// Inverted index for Okapi BM25.
///
/// Documents are numbered in sorted utterance-id order, so the index (and
/// every score) is independent of the order documents were supplied in.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalIndex {
    pub k1: f64,
    pub b: f64,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    avg_len: f64,
    /// term → (doc, tf), sorted by doc.
    postings: BTreeMap<String, Vec<(u32, u32)>>,
}

fn average(lens: &[u32]) -> f64 {
    lens.iter().map(|&l| l as f64).sum::<f64>() / lens.len() as f64
}

impl RetrievalIndex {
    /// Indexes `(utterance_id, text)` pairs.
    pub fn build<I, S, T>(docs: I, k1: f64, b: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        let mut sorted: Vec<(String, Vec<String>)> = docs
            .into_iter()
            .map(|(id, text)| (id.into(), tokenize(text.as_ref())))
            .collect();
        contract!(!sorted.is_empty(), "cannot index an empty corpus");
        sorted.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::Validation(format!("duplicate document id {}", w[0].0)));
        }
        let mut postings: BTreeMap<String, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_ids = Vec::with_capacity(sorted.len());
        let mut doc_lens = Vec::with_capacity(sorted.len());
        for (doc, (id, tokens)) in sorted.into_iter().enumerate() {
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term).or_default().push((doc as u32, n));
            }
            doc_ids.push(id);
            doc_lens.push(tokens.len() as u32);
        }
        let avg_len = average(&doc_lens);
        Ok(Self {
            k1,
            b,
            doc_ids,
            doc_lens,
            avg_len,
            postings,
        })
    }

    /// Indexes every utterance of `train`.
    pub fn from_conversations(train: &[Conversation], k1: f64, b: f64) -> Result<Self> {
        Self::build(
            train
                .iter()
                .flat_map(|c| c.utterances.iter().map(|u| (u.utterance_id.clone(), u.text.as_str()))),
            k1,
            b,
        )
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_id(&self, utterance_id: &str) -> Option<usize> {
        self.doc_ids.binary_search_by(|d| d.as_str().cmp(utterance_id)).ok()
    }

    pub fn utterance_id(&self, doc: usize) -> &str {
        &self.doc_ids[doc]
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_lens[doc]
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn term_freq(&self, term: &str, doc: usize) -> u32 {
        self.postings
            .get(term)
            .and_then(|p| {
                p.binary_search_by_key(&(doc as u32), |&(d, _)| d)
                    .ok()
                    .map(|i| p[i].1)
            })
            .unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc: usize) -> f64 {
        let tf = tf as f64;
        let norm = 1.0 - self.b + self.b * self.doc_lens[doc] as f64 / self.avg_len;
        idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
    }

    /// BM25 of one document; repeated query terms count once per occurrence.
    pub fn bm25_score(&self, query: &[String], doc: usize) -> Result<f64> {
        if doc >= self.num_docs() {
            return Err(Error::Index(format!("document {doc} of {}", self.num_docs())));
        }
        let mut s = 0.0;
        for term in query {
            let tf = self.term_freq(term, doc);
            if tf > 0 {
                s += self.term_weight(self.idf(term), tf, doc);
            }
        }
        Ok(s)
    }

    /// Scores of every document, accumulated through the postings in query
    /// order so each entry equals [`Self::bm25_score`] exactly.
    pub fn score_all(&self, query: &[String]) -> Vec<f64> {
        let mut scores = vec![0.0; self.num_docs()];
        for term in query {
            let Some(p) = self.postings.get(term) else {
                continue;
            };
            let idf = self.idf(term);
            for &(doc, tf) in p {
                scores[doc as usize] += self.term_weight(idf, tf, doc as usize);
            }
        }
        scores
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.k1.to_le_bytes());
        buf.extend_from_slice(&self.b.to_le_bytes());
        buf.extend_from_slice(&(self.doc_ids.len() as u32).to_le_bytes());
        for (id, len) in self.doc_ids.iter().zip(&self.doc_lens) {
            write_str(&mut buf, id);
            buf.extend_from_slice(&len.to_le_bytes());
        }
        buf.extend_from_slice(&(self.postings.len() as u32).to_le_bytes());
        for (term, p) in &self.postings {
            write_str(&mut buf, term);
            buf.extend_from_slice(&(p.len() as u32).to_le_bytes());
            for &(d, tf) in p {
                buf.extend_from_slice(&d.to_le_bytes());
                buf.extend_from_slice(&tf.to_le_bytes());
            }
        }
        fs::File::create(path)?.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut r = Reader { bytes: &bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format(format!("{}: not a BM25 index", path.display())));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported index version {version}")));
        }
        let k1 = r.f64()?;
        let b = r.f64()?;
        let n = r.u32()? as usize;
        let mut doc_ids = Vec::with_capacity(n);
        let mut doc_lens = Vec::with_capacity(n);
        for _ in 0..n {
            doc_ids.push(r.string()?);
            doc_lens.push(r.u32()?);
        }
        let n_terms = r.u32()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..n_terms {
            let term = r.string()?;
            let len = r.u32()? as usize;
            let mut p = Vec::with_capacity(len);
            for _ in 0..len {
                let d = r.u32()?;
                if d as usize >= n {
                    return Err(Error::Format(format!("posting for document {d} of {n}")));
                }
                p.push((d, r.u32()?));
            }
            postings.insert(term, p);
        }
        if r.pos != bytes.len() || n == 0 {
            return Err(Error::Format("trailing or missing index data".into()));
        }
        let avg_len = average(&doc_lens);
        Ok(Self {
            k1,
            b,
            doc_ids,
            doc_lens,
            avg_len,
            postings,
        })
    }
}

fn write_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated index file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }
}
