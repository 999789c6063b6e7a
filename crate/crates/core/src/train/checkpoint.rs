use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::TrainConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{LayerParams, ModelParams};

const MAGIC: &str = "docgnn-checkpoint v1";

/// Best-validation snapshot of a training run, with everything needed to
/// evaluate unseen documents: parameters, config, vocabulary and label
/// set.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub epoch: usize,
    pub val_accuracy: f64,
    /// Vocabulary words in id order, ending with the OOV sentinel.
    pub vocab_words: Vec<String>,
    /// Label names in class-index order.
    pub labels: Vec<String>,
}

/// Text checkpoint format: a version line, scalar header lines, the
/// config, label and vocab sections, then one `[tensor <name> <rows>
/// <cols>]` block per parameter. Floats are written with Rust's shortest
/// round-trip formatting, so save -> load -> save is bit-exact.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("epoch {}\n", ckpt.epoch));
    out.push_str(&format!("val_accuracy {}\n", ckpt.val_accuracy));
    out.push_str("[config]\n");
    out.push_str(&ckpt.config.to_config_string());
    out.push_str("[labels]\n");
    for label in &ckpt.labels {
        out.push_str(label);
        out.push('\n');
    }
    out.push_str("[vocab]\n");
    for word in &ckpt.vocab_words {
        out.push_str(word);
        out.push('\n');
    }
    for (name, tensor) in ckpt.params.named_tensors() {
        assert!(tensor.all_finite(), "refusing to checkpoint non-finite tensor {name}");
        out.push_str(&format!("[tensor {} {} {}]\n", name, tensor.rows(), tensor.cols()));
        for r in 0..tensor.rows() {
            let row: Vec<String> = tensor.row(r).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out.push_str("[end]\n");
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let content = fs::read_to_string(path)?;
    let mut lines = content.lines().enumerate();

    let expect = |got: Option<(usize, &str)>, what: &str| -> Result<(usize, String)> {
        got.map(|(n, s)| (n, s.to_string()))
            .ok_or_else(|| Error::parse(0, format!("unexpected end of checkpoint, wanted {what}")))
    };

    let (n, magic) = expect(lines.next(), "magic")?;
    if magic != MAGIC {
        return Err(Error::parse(n + 1, format!("bad checkpoint magic {magic:?}")));
    }
    let (n, epoch_line) = expect(lines.next(), "epoch")?;
    let epoch: usize = epoch_line
        .strip_prefix("epoch ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(n + 1, "bad epoch line"))?;
    let (n, acc_line) = expect(lines.next(), "val_accuracy")?;
    let val_accuracy: f64 = acc_line
        .strip_prefix("val_accuracy ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(n + 1, "bad val_accuracy line"))?;

    let (n, header) = expect(lines.next(), "[config]")?;
    if header != "[config]" {
        return Err(Error::parse(n + 1, "expected [config]"));
    }
    let mut config = TrainConfig::default();
    let mut labels = Vec::new();
    let mut vocab_words = Vec::new();
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();

    #[derive(PartialEq)]
    enum Section {
        Config,
        Labels,
        Vocab,
        Tensor,
        End,
    }
    let mut section = Section::Config;
    let mut tensor_name = String::new();
    let mut tensor_rows = 0usize;
    let mut tensor_cols = 0usize;
    let mut tensor_data: Vec<f64> = Vec::new();

    let flush_tensor = |name: &mut String,
                            rows: usize,
                            cols: usize,
                            data: &mut Vec<f64>,
                            tensors: &mut BTreeMap<String, Tensor>,
                            lineno: usize|
     -> Result<()> {
        if !name.is_empty() {
            if data.len() != rows * cols {
                return Err(Error::parse(
                    lineno,
                    format!("tensor {name} has {} values, expected {}", data.len(), rows * cols),
                ));
            }
            tensors.insert(std::mem::take(name), Tensor::new(rows, cols, std::mem::take(data)));
        }
        Ok(())
    };

    for (lineno, line) in lines {
        let human = lineno + 1;
        if line == "[end]" {
            flush_tensor(&mut tensor_name, tensor_rows, tensor_cols, &mut tensor_data, &mut tensors, human)?;
            section = Section::End;
            continue;
        }
        if line == "[labels]" {
            section = Section::Labels;
            continue;
        }
        if line == "[vocab]" {
            section = Section::Vocab;
            continue;
        }
        if let Some(rest) = line.strip_prefix("[tensor ") {
            flush_tensor(&mut tensor_name, tensor_rows, tensor_cols, &mut tensor_data, &mut tensors, human)?;
            let rest = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::parse(human, "unterminated tensor header"))?;
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 3 {
                return Err(Error::parse(human, "tensor header needs name, rows, cols"));
            }
            tensor_name = parts[0].to_string();
            tensor_rows = parts[1].parse().map_err(|_| Error::parse(human, "bad tensor rows"))?;
            tensor_cols = parts[2].parse().map_err(|_| Error::parse(human, "bad tensor cols"))?;
            tensor_data = Vec::with_capacity(tensor_rows * tensor_cols);
            section = Section::Tensor;
            continue;
        }
        match section {
            Section::Config => {
                let trimmed = line.trim();
                if trimmed.is_empty() {
                    continue;
                }
                let Some((key, value)) = trimmed.split_once('=') else {
                    return Err(Error::parse(human, "expected key = value in [config]"));
                };
                config.set(key.trim(), value.trim())?;
            }
            Section::Labels => labels.push(line.to_string()),
            Section::Vocab => vocab_words.push(line.to_string()),
            Section::Tensor => {
                for field in line.split_whitespace() {
                    let v: f64 = field
                        .parse()
                        .map_err(|_| Error::parse(human, format!("bad float {field:?}")))?;
                    tensor_data.push(v);
                }
            }
            Section::End => {
                return Err(Error::parse(human, "content after [end]"));
            }
        }
    }
    if section != Section::End {
        return Err(Error::parse(0, "missing [end] marker"));
    }

    let take = |tensors: &mut BTreeMap<String, Tensor>, name: &str| -> Result<Tensor> {
        tensors
            .remove(name)
            .ok_or_else(|| Error::config(format!("checkpoint missing tensor {name:?}")))
    };
    let embedding = take(&mut tensors, "embedding")?;
    let input_proj = take(&mut tensors, "input_proj")?;
    let mut layers = Vec::with_capacity(config.layers);
    for k in 0..config.layers {
        layers.push(LayerParams {
            w1: take(&mut tensors, &format!("layer{k}.w1"))?,
            w2: take(&mut tensors, &format!("layer{k}.w2"))?,
            w3: take(&mut tensors, &format!("layer{k}.w3"))?,
            w_att: take(&mut tensors, &format!("layer{k}.w_att"))?,
            attn: take(&mut tensors, &format!("layer{k}.attn"))?,
        });
    }
    let readout_w = take(&mut tensors, "readout_w")?;
    let readout_b = take(&mut tensors, "readout_b")?;
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::config(format!("unexpected tensor {extra:?} in checkpoint")));
    }

    Ok(Checkpoint {
        params: ModelParams { embedding, input_proj, layers, readout_w, readout_b },
        config,
        epoch,
        val_accuracy,
        vocab_words,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::EmbeddingTable;

    fn sample_checkpoint() -> Checkpoint {
        let config = TrainConfig { hidden: 4, d0: 3, layers: 2, ..TrainConfig::default() };
        let table = EmbeddingTable {
            matrix: Tensor::from_rows(&[
                vec![0.1, -0.2, 0.3],
                vec![1.0 / 3.0, 2.0f64.sqrt(), -1e-17],
            ]),
        };
        let params = ModelParams::init(&table, config.hidden, config.layers, 2, 9);
        Checkpoint {
            params,
            config,
            epoch: 17,
            val_accuracy: 0.8125,
            vocab_words: vec!["alpha".into(), "<oov>".into()],
            labels: vec!["c00".into(), "c01".into()],
        }
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join("docgnn_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.epoch, ckpt.epoch);
        assert_eq!(loaded.val_accuracy.to_bits(), ckpt.val_accuracy.to_bits());
        assert_eq!(loaded.config, ckpt.config);
        assert_eq!(loaded.vocab_words, ckpt.vocab_words);
        assert_eq!(loaded.labels, ckpt.labels);
        for ((name_a, a), (_, b)) in
            ckpt.params.named_tensors().iter().zip(loaded.params.named_tensors())
        {
            assert!(a.bit_eq(b), "tensor {name_a} changed across the roundtrip");
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = std::env::temp_dir().join("docgnn_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("truncated.ckpt");
        let ckpt = sample_checkpoint();
        save_checkpoint(&path, &ckpt).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        let cut = content.len() / 2;
        std::fs::write(&path, &content[..cut]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
