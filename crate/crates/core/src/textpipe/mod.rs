//! Corpus ingestion: sentence segmentation, tokenisation, vocabulary,
//! embedding initialisation, split handling, and synthetic corpora for
//! desk-scale experiments.
//!
//! Documents move through two stages. A [`RawCorpus`] holds string tokens
//! and label names straight from disk (or the synthetic generator); once a
//! [`Vocabulary`] is built from the training split, [`index_corpus`] maps
//! everything to dense word ids and class indices, producing the
//! [`Corpus`] the graph builder consumes. Unseen words map to the reserved
//! OOV id, which keeps test documents from novel vocabulary usable — the
//! point of the inductive setting.

mod ingest;
mod synthetic;
mod vocab;

pub use ingest::{
    load_corpus_dir, load_corpus_file, load_embeddings, read_corpus_records, segment_sentences,
    split_train_val, tokenize, write_corpus_file, write_corpus_dir,
};
pub use synthetic::{generate_synthetic, SyntheticSpec, SyntheticTask};
pub use vocab::{build_vocab, EmbeddingTable, Vocabulary, OOV_TOKEN};

use crate::error::{Error, Result};

/// Which partition a document belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// A document before vocabulary indexing: string tokens, string label.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDocument {
    pub id: String,
    pub label: String,
    pub split: Split,
    /// Tokenised sentences; every sentence is non-empty.
    pub sentences: Vec<Vec<String>>,
}

/// A loaded corpus prior to indexing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCorpus {
    pub documents: Vec<RawDocument>,
}

impl RawCorpus {
    /// Label names in their canonical (sorted, deduplicated) order; the
    /// position of a name is its class index after indexing.
    pub fn label_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.documents.iter().map(|d| d.label.clone()).collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn docs_in(&self, split: Split) -> impl Iterator<Item = &RawDocument> {
        self.documents.iter().filter(move |d| d.split == split)
    }
}

/// A document with dense word ids and a class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub label: usize,
    pub split: Split,
    /// Sentences as word ids; every sentence is non-empty.
    pub sentences: Vec<Vec<usize>>,
}

/// Indexed corpus ready for graph construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub num_classes: usize,
    /// Class index -> label name.
    pub labels: Vec<String>,
}

impl Corpus {
    pub fn docs_in(&self, split: Split) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(move |d| d.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.docs_in(split).count()
    }
}

/// Map a raw corpus onto vocabulary ids and dense class indices.
///
/// Labels are indexed by the sorted order of their names so the mapping
/// does not depend on document order. A label seen only outside the
/// training split still gets an index; the classifier simply never
/// learns it.
pub fn index_corpus(raw: &RawCorpus, vocab: &Vocabulary) -> Result<Corpus> {
    let labels = raw.label_names();
    if labels.len() < 2 {
        return Err(Error::config(format!(
            "corpus needs at least 2 distinct labels, found {}",
            labels.len()
        )));
    }
    index_corpus_with_labels(raw, vocab, &labels)
}

/// Index against a fixed label set (e.g. the one a checkpoint was
/// trained with). Unknown labels are an error; unknown words map to the
/// OOV id as usual.
pub fn index_corpus_with_labels(
    raw: &RawCorpus,
    vocab: &Vocabulary,
    labels: &[String],
) -> Result<Corpus> {
    let documents = raw
        .documents
        .iter()
        .map(|d| {
            let label = labels
                .iter()
                .position(|l| *l == d.label)
                .ok_or_else(|| Error::config(format!("unknown label {:?} in document {:?}", d.label, d.id)))?;
            Ok(Document {
                id: d.id.clone(),
                label,
                split: d.split,
                sentences: d
                    .sentences
                    .iter()
                    .map(|s| s.iter().map(|w| vocab.id_of(w)).collect())
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { documents, num_classes: labels.len(), labels: labels.to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(label: &str, split: Split, sents: &[&[&str]]) -> RawDocument {
        RawDocument {
            id: format!("{label}-{}", sents.len()),
            label: label.to_string(),
            split,
            sentences: sents
                .iter()
                .map(|s| s.iter().map(|w| w.to_string()).collect())
                .collect(),
        }
    }

    #[test]
    fn labels_index_by_sorted_name() {
        let corpus = RawCorpus {
            documents: vec![
                raw("zebra", Split::Train, &[&["a", "b"]]),
                raw("apple", Split::Train, &[&["a", "a"]]),
            ],
        };
        let vocab = build_vocab(&corpus, 1);
        let indexed = index_corpus(&corpus, &vocab).unwrap();
        assert_eq!(indexed.labels, vec!["apple", "zebra"]);
        assert_eq!(indexed.documents[0].label, 1);
        assert_eq!(indexed.documents[1].label, 0);
    }

    #[test]
    fn single_label_corpus_is_rejected() {
        let corpus = RawCorpus { documents: vec![raw("only", Split::Train, &[&["a"]])] };
        let vocab = build_vocab(&corpus, 1);
        assert!(index_corpus(&corpus, &vocab).is_err());
    }
}
