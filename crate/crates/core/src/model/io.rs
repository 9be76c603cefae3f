//! JSON parameter dump. Only non-zero weight rows are written; floats are
//! emitted in shortest round-trip form, so load(save(m)) == m bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LinearTextClassifier, TrainConfig};
use crate::error::{Error, Result};

pub const FORMAT: &str = "seedmatch-linear";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Dump {
    format: String,
    version: u32,
    dim: usize,
    classes: Vec<String>,
    config: TrainConfig,
    seed: u64,
    bias: Vec<f64>,
    /// `(feature, per-class weights)` for every non-zero row.
    weights: Vec<(u32, Vec<f64>)>,
    loss_trace: Vec<f64>,
    warnings: Vec<String>,
}

impl LinearTextClassifier {
    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let dump = Dump {
            format: FORMAT.to_owned(),
            version: VERSION,
            dim: self.dim,
            classes: self.classes.clone(),
            config: self.config,
            seed: self.config.seed,
            bias: self.bias.clone(),
            weights: self.nonzero_rows().map(|(j, row)| (j, row.to_vec())).collect(),
            loss_trace: self.loss_trace.clone(),
            warnings: self.warnings.clone(),
        };
        let mut bytes = serde_json::to_vec(&dump)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let dump: Dump = serde_json::from_slice(bytes)?;
        if dump.format != FORMAT {
            return Err(Error::ModelFormat(format!("unexpected format `{}`", dump.format)));
        }
        if dump.version != VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {}", dump.version)));
        }
        if dump.dim != dump.config.dim {
            return Err(Error::ModelFormat("header dim disagrees with config".into()));
        }
        let k = dump.classes.len();
        let mut weights = vec![0.0; dump.dim * k];
        for (j, row) in dump.weights {
            if j as usize >= dump.dim || row.len() != k {
                return Err(Error::ModelFormat(format!("bad weight row {j}")));
            }
            weights[j as usize * k..(j as usize + 1) * k].copy_from_slice(&row);
        }
        let mut model = LinearTextClassifier::from_parameters(dump.classes, dump.config, weights, dump.bias)?;
        model.loss_trace = dump.loss_trace;
        model.warnings = dump.warnings;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        LinearTextClassifier::from_json_bytes(&bytes)
    }

    /// SHA-256 of the parameter dump, hex encoded.
    pub fn checksum(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json_bytes()?)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{train, Example};

    #[test]
    fn dump_round_trips_exactly() {
        let cfg = TrainConfig { dim: 256, ..TrainConfig::default() };
        let examples: Vec<Example> = (0..40)
            .map(|i| Example::new(&[format!("w{}", i % 7), format!("v{}", i % 3)], i % 3, cfg.dim))
            .collect();
        let classes = vec!["a".to_owned(), "b".to_owned(), "c".to_owned()];
        let model = train(&examples, &classes, &cfg).unwrap();
        let bytes = model.to_json_bytes().unwrap();
        let back = LinearTextClassifier::from_json_bytes(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.to_json_bytes().unwrap(), bytes);
        assert_eq!(back.checksum().unwrap(), model.checksum().unwrap());
    }

    #[test]
    fn rejects_foreign_dumps() {
        assert!(LinearTextClassifier::from_json_bytes(b"{}").is_err());
        let cfg = TrainConfig { dim: 16, ..TrainConfig::default() };
        let model = LinearTextClassifier::from_parameters(vec!["a".into()], cfg, vec![0.0; 16], vec![0.0]).unwrap();
        let text = String::from_utf8(model.to_json_bytes().unwrap()).unwrap();
        let bumped = text.replace("\"version\":1", "\"version\":9");
        assert!(matches!(
            LinearTextClassifier::from_json_bytes(bumped.as_bytes()),
            Err(Error::ModelFormat(_))
        ));
    }
}
