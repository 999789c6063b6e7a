use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{RawCorpus, Split};
use crate::autodiff::Tensor;

/// Token used for the reserved out-of-vocabulary id.
pub const OOV_TOKEN: &str = "<oov>";

/// Bijective word <-> id map with a reserved OOV id at the end.
///
/// Ids are assigned by descending training-split count, ties broken
/// lexicographically, so the mapping is a pure function of the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, usize>,
    id_to_word: Vec<String>,
    counts: Vec<u64>,
    oov_id: usize,
}

impl Vocabulary {
    /// Number of ids, including the OOV slot.
    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the OOV slot always exists
    }

    pub fn oov_id(&self) -> usize {
        self.oov_id
    }

    /// Id for a word, falling back to the OOV id.
    pub fn id_of(&self, word: &str) -> usize {
        self.word_to_id.get(word).copied().unwrap_or(self.oov_id)
    }

    /// Whether the word is in-vocabulary (not mapped to OOV).
    pub fn contains(&self, word: &str) -> bool {
        self.word_to_id.contains_key(word)
    }

    pub fn word_of(&self, id: usize) -> &str {
        &self.id_to_word[id]
    }

    pub fn count_of(&self, id: usize) -> u64 {
        self.counts[id]
    }

    /// Words in id order, including the OOV sentinel. Checkpoints store
    /// this list and rebuild the map with [`Vocabulary::from_words`].
    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }

    /// Rebuild from an id-ordered word list whose last entry is the OOV
    /// sentinel. Counts are not recoverable and read as zero.
    pub fn from_words(words: Vec<String>) -> Self {
        assert!(!words.is_empty(), "word list must at least contain the OOV sentinel");
        assert_eq!(words.last().map(String::as_str), Some(OOV_TOKEN), "missing OOV sentinel");
        let oov_id = words.len() - 1;
        let word_to_id = words[..oov_id]
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let counts = vec![0; words.len()];
        Vocabulary { word_to_id, id_to_word: words, counts, oov_id }
    }
}

/// Build the vocabulary from training-split token counts.
///
/// Every word with count >= `min_count` gets an id; everything else maps
/// to the reserved OOV id. An empty training split yields just the OOV
/// slot.
pub fn build_vocab(corpus: &RawCorpus, min_count: u64) -> Vocabulary {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus.docs_in(Split::Train) {
        for sentence in &doc.sentences {
            for word in sentence {
                *counts.entry(word.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<(&str, u64)> =
        counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut word_to_id = HashMap::with_capacity(kept.len());
    let mut id_to_word = Vec::with_capacity(kept.len() + 1);
    let mut count_vec = Vec::with_capacity(kept.len() + 1);
    for (i, (word, count)) in kept.iter().enumerate() {
        word_to_id.insert(word.to_string(), i);
        id_to_word.push(word.to_string());
        count_vec.push(*count);
    }
    let oov_id = id_to_word.len();
    id_to_word.push(OOV_TOKEN.to_string());
    count_vec.push(0);
    Vocabulary { word_to_id, id_to_word, counts: count_vec, oov_id }
}

/// Initial node features: one `d0`-dimensional row per vocabulary id.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
}

impl EmbeddingTable {
    /// All rows drawn uniformly from [-0.01, 0.01] with a seeded
    /// generator; loading a pretrained file overwrites the rows it covers
    /// (see `load_embeddings`).
    pub fn random(vocab: &Vocabulary, d0: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EmbeddingTable { matrix: Tensor::uniform(vocab.len(), d0, -0.01, 0.01, &mut rng) }
    }

    pub fn d0(&self) -> usize {
        self.matrix.cols()
    }
}
