use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::{EmbeddingTable, Vocabulary};
use super::{RawCorpus, RawDocument, Split};
use crate::error::{Error, Result};

/// Separator between pre-split sentences in a corpus record (ASCII unit
/// separator).
pub const SENTENCE_SEP: char = '\u{1F}';

/// Rule-based sentence splitter: break after `.`, `!` or `?` followed by
/// whitespace. Text without a terminator is a single sentence.
pub fn segment_sentences(raw_text: &str) -> Result<Vec<String>> {
    if raw_text.trim().is_empty() {
        return Err(Error::EmptyDocument { id: String::new() });
    }
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = raw_text.chars().peekable();
    while let Some(ch) = chars.next() {
        current.push(ch);
        if matches!(ch, '.' | '!' | '?') && chars.peek().is_some_and(|c| c.is_whitespace()) {
            let trimmed = current.trim();
            if !trimmed.is_empty() {
                sentences.push(trimmed.to_string());
            }
            current.clear();
            while chars.peek().is_some_and(|c| c.is_whitespace()) {
                chars.next();
            }
        }
    }
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    Ok(sentences)
}

/// Lowercase tokens split on whitespace, with punctuation stripped from
/// both ends; tokens with no alphanumeric content are dropped.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .filter_map(|raw| {
            let stripped = raw.trim_matches(|c: char| !c.is_alphanumeric());
            if stripped.is_empty() {
                None
            } else {
                Some(stripped.to_lowercase())
            }
        })
        .collect()
}

/// Parse one corpus file into documents with the given split tag.
///
/// Record format per line: `<id>\t<label>\t<text>`, where `<text>` either
/// carries pre-split sentences separated by the unit separator or is
/// segmented by [`segment_sentences`]. A document whose sentences all
/// tokenise to nothing is an error, never a silent empty document.
pub fn read_corpus_records(content: &str, split: Split) -> Result<Vec<RawDocument>> {
    let mut docs = Vec::new();
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(label), Some(text)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(Error::parse(lineno + 1, "expected <id>\\t<label>\\t<text>"));
        };
        let sentence_strings: Vec<String> = if text.contains(SENTENCE_SEP) {
            text.split(SENTENCE_SEP).map(str::to_string).collect()
        } else {
            segment_sentences(text).map_err(|_| Error::EmptyDocument { id: id.to_string() })?
        };
        let sentences: Vec<Vec<String>> = sentence_strings
            .iter()
            .map(|s| tokenize(s))
            .filter(|tokens| !tokens.is_empty())
            .collect();
        if sentences.is_empty() {
            return Err(Error::EmptyDocument { id: id.to_string() });
        }
        docs.push(RawDocument {
            id: id.to_string(),
            label: label.to_string(),
            split,
            sentences,
        });
    }
    Ok(docs)
}

pub fn load_corpus_file(path: &Path, split: Split) -> Result<Vec<RawDocument>> {
    read_corpus_records(&fs::read_to_string(path)?, split)
}

/// Load a corpus directory: `train.tsv` and `test.tsv` are required,
/// `val.tsv` is optional.
pub fn load_corpus_dir(dir: &Path) -> Result<RawCorpus> {
    let mut documents = Vec::new();
    for (file, split, required) in [
        ("train.tsv", Split::Train, true),
        ("val.tsv", Split::Val, false),
        ("test.tsv", Split::Test, true),
    ] {
        let path = dir.join(file);
        if path.exists() {
            documents.extend(load_corpus_file(&path, split)?);
        } else if required {
            return Err(Error::config(format!("missing {} in {}", file, dir.display())));
        }
    }
    Ok(RawCorpus { documents })
}

/// Serialise documents in the record format (tokens space-joined,
/// sentences separated by the unit separator).
pub fn write_corpus_file(path: &Path, docs: &[&RawDocument]) -> Result<()> {
    let mut out = String::new();
    for doc in docs {
        let text: Vec<String> = doc.sentences.iter().map(|s| s.join(" ")).collect();
        out.push_str(&format!("{}\t{}\t{}\n", doc.id, doc.label, text.join("\u{1F}")));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write a corpus as a directory with one file per populated split.
pub fn write_corpus_dir(dir: &Path, corpus: &RawCorpus) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (file, split) in
        [("train.tsv", Split::Train), ("val.tsv", Split::Val), ("test.tsv", Split::Test)]
    {
        let docs: Vec<&RawDocument> = corpus.docs_in(split).collect();
        if !docs.is_empty() || split != Split::Val {
            write_corpus_file(&dir.join(file), &docs)?;
        }
    }
    Ok(())
}

/// Retag `round(fraction * N)` (at least one) randomly chosen training
/// documents as validation, with a seeded shuffle for determinism.
pub fn split_train_val(corpus: &mut RawCorpus, fraction: f64, seed: u64) -> Result<(usize, usize)> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::config(format!("validation fraction must be in (0, 1), got {fraction}")));
    }
    let train_idx: Vec<usize> = corpus
        .documents
        .iter()
        .enumerate()
        .filter(|(_, d)| d.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    let n = train_idx.len();
    if n < 2 {
        return Err(Error::config(format!("need at least 2 training documents, found {n}")));
    }
    let mut shuffled = train_idx;
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val_count = ((fraction * n as f64).round() as usize).max(1);
    for &i in &shuffled[..val_count] {
        corpus.documents[i].split = Split::Val;
    }
    Ok((n - val_count, val_count))
}

/// Read a GloVe-layout embedding file (`word v1 .. vd` per line) into a
/// table over the vocabulary.
///
/// Every row starts from the seeded uniform [-0.01, 0.01] initialisation;
/// rows for in-vocabulary words found in the file are overwritten, so
/// missing words (and the OOV slot) keep their random rows regardless of
/// file order.
pub fn load_embeddings(
    path: Option<&Path>,
    vocab: &Vocabulary,
    d0: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab, d0, seed);
    let Some(path) = path else {
        return Ok(table);
    };
    let content = fs::read_to_string(path)?;
    for (lineno, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else {
            return Err(Error::parse(lineno + 1, "missing word"));
        };
        let values: Vec<&str> = fields.collect();
        if values.is_empty() {
            return Err(Error::parse(lineno + 1, "expected word followed by vector values"));
        }
        if values.len() != d0 {
            return Err(Error::config(format!(
                "embedding dimension mismatch at line {}: file has {}, expected {}",
                lineno + 1,
                values.len(),
                d0
            )));
        }
        if !vocab.contains(word) {
            continue;
        }
        let row = vocab.id_of(word);
        for (c, v) in values.iter().enumerate() {
            let parsed: f64 = v.parse().map_err(|_| {
                Error::parse(lineno + 1, format!("non-numeric embedding value {v:?}"))
            })?;
            table.matrix.set(row, c, parsed);
        }
    }
    Ok(table)
}
