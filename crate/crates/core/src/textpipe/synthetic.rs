use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RawCorpus, RawDocument, Split};
use crate::error::{Error, Result};

/// Labelling rule for generated corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticTask {
    /// The label is determined by which class keyword appears anywhere
    /// in the document. Linearly separable under a sum readout.
    Bag,
    /// Two marker words, one eligible per sentence; the label is 1 iff
    /// exactly one marker is present. Requires combining evidence across
    /// sentences, which a disjoint (local-only) graph cannot do under a
    /// sum readout.
    CrossSentenceXor,
}

impl SyntheticTask {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "bag" => Ok(SyntheticTask::Bag),
            "xor" | "cross_sentence_xor" => Ok(SyntheticTask::CrossSentenceXor),
            other => Err(Error::config(format!("unknown synthetic task {other:?}"))),
        }
    }
}

/// Shape of a generated corpus.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub num_docs: usize,
    pub num_classes: usize,
    pub vocab_size: usize,
    pub sentences_per_doc: usize,
    pub tokens_per_sentence: usize,
    pub task: SyntheticTask,
    /// Fraction of documents tagged as test; the rest start as train.
    pub test_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_docs: 200,
            num_classes: 2,
            vocab_size: 30,
            sentences_per_doc: 2,
            tokens_per_sentence: 8,
            task: SyntheticTask::Bag,
            test_fraction: 0.3,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.vocab_size < 10 {
            return Err(Error::config("synthetic vocab_size must be at least 10"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("synthetic corpora need at least 2 classes"));
        }
        if self.num_docs < 4 {
            return Err(Error::config("synthetic corpora need at least 4 documents"));
        }
        if self.sentences_per_doc == 0 || self.tokens_per_sentence == 0 {
            return Err(Error::config("documents must have sentences and tokens"));
        }
        if self.task == SyntheticTask::CrossSentenceXor {
            if self.sentences_per_doc < 2 {
                return Err(Error::config("cross_sentence_xor needs at least 2 sentences"));
            }
            if self.num_classes != 2 {
                return Err(Error::config("cross_sentence_xor is a binary task"));
            }
        }
        if self.num_classes + 1 >= self.vocab_size {
            return Err(Error::config("vocab too small for the class keywords plus fillers"));
        }
        if !(0.0..1.0).contains(&self.test_fraction) || self.test_fraction == 0.0 {
            return Err(Error::config("test_fraction must be in (0, 1)"));
        }
        Ok(())
    }
}

fn word(i: usize) -> String {
    format!("w{i}")
}

fn label(c: usize) -> String {
    format!("c{c:02}")
}

/// Generate a deterministic corpus: same spec and seed give a
/// byte-identical result.
///
/// Words `w0..w{C-1}` are reserved as markers/keywords (`bag` uses one
/// per class; `cross_sentence_xor` uses `w0` = X and `w1` = Y); filler
/// tokens are drawn uniformly from the remaining vocabulary.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<RawCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reserved = match spec.task {
        SyntheticTask::Bag => spec.num_classes,
        SyntheticTask::CrossSentenceXor => 2,
    };
    let fillers: Vec<String> = (reserved..spec.vocab_size).map(word).collect();

    let mut documents = Vec::with_capacity(spec.num_docs);
    for doc_idx in 0..spec.num_docs {
        let mut sentences: Vec<Vec<String>> = (0..spec.sentences_per_doc)
            .map(|_| {
                (0..spec.tokens_per_sentence)
                    .map(|_| fillers[rng.gen_range(0..fillers.len())].clone())
                    .collect()
            })
            .collect();
        let y = match spec.task {
            SyntheticTask::Bag => {
                let y = rng.gen_range(0..spec.num_classes);
                let s = rng.gen_range(0..spec.sentences_per_doc);
                let t = rng.gen_range(0..spec.tokens_per_sentence);
                sentences[s][t] = word(y);
                y
            }
            SyntheticTask::CrossSentenceXor => {
                let has_x = rng.gen_bool(0.5);
                let has_y = rng.gen_bool(0.5);
                if has_x {
                    let t = rng.gen_range(0..spec.tokens_per_sentence);
                    sentences[0][t] = word(0);
                }
                if has_y {
                    let t = rng.gen_range(0..spec.tokens_per_sentence);
                    sentences[1][t] = word(1);
                }
                usize::from(has_x != has_y)
            }
        };
        documents.push(RawDocument {
            id: format!("syn{doc_idx:05}"),
            label: label(y),
            split: Split::Train,
            sentences,
        });
    }

    // Seeded split into train/test; the validation split is carved from
    // the training set later, at training time.
    let mut order: Vec<usize> = (0..spec.num_docs).collect();
    order.shuffle(&mut rng);
    let test_count = ((spec.test_fraction * spec.num_docs as f64).round() as usize)
        .clamp(1, spec.num_docs - 1);
    for &i in order.iter().take(test_count) {
        documents[i].split = Split::Test;
    }
    Ok(RawCorpus { documents })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bag_label_matches_contained_keyword() {
        let spec = SyntheticSpec { num_docs: 50, ..Default::default() };
        let corpus = generate_synthetic(&spec, 11).unwrap();
        for doc in &corpus.documents {
            let y: usize = doc.label[1..].parse().unwrap();
            let all: Vec<&String> = doc.sentences.iter().flatten().collect();
            assert!(all.contains(&&word(y)), "keyword for {y} missing in {:?}", doc.id);
            for other in 0..spec.num_classes {
                if other != y {
                    assert!(!all.contains(&&word(other)));
                }
            }
        }
    }

    #[test]
    fn xor_label_is_exactly_marker_xor() {
        let spec = SyntheticSpec {
            num_docs: 200,
            task: SyntheticTask::CrossSentenceXor,
            ..Default::default()
        };
        let corpus = generate_synthetic(&spec, 23).unwrap();
        let mut ones = 0;
        for doc in &corpus.documents {
            let has_x = doc.sentences[0].contains(&word(0));
            let has_y = doc.sentences[1].contains(&word(1));
            let y: usize = doc.label[1..].parse().unwrap();
            assert_eq!(y, usize::from(has_x != has_y));
            ones += y;
        }
        // Both labels should actually occur.
        assert!(ones > 0 && ones < corpus.documents.len());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default();
        assert_eq!(generate_synthetic(&spec, 5).unwrap(), generate_synthetic(&spec, 5).unwrap());
    }

    #[test]
    fn both_splits_are_populated() {
        let corpus = generate_synthetic(&SyntheticSpec::default(), 1).unwrap();
        assert!(corpus.docs_in(Split::Train).count() > 0);
        assert!(corpus.docs_in(Split::Test).count() > 0);
    }

    #[test]
    fn preconditions_are_enforced() {
        let bad = SyntheticSpec { vocab_size: 5, ..Default::default() };
        assert!(generate_synthetic(&bad, 0).is_err());
        let bad = SyntheticSpec {
            task: SyntheticTask::CrossSentenceXor,
            sentences_per_doc: 1,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
        let bad = SyntheticSpec {
            task: SyntheticTask::CrossSentenceXor,
            num_classes: 3,
            ..Default::default()
        };
        assert!(generate_synthetic(&bad, 0).is_err());
    }
}
