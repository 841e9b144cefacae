//! JSON checkpoints for embedder and classifier parameters.
//!
//! Flat shape-annotated arrays keyed by tensor name, so checkpoints stay
//! readable and diffable. Serialization order is fixed, which makes
//! seeded runs byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use primfit_core::embedder::{ClassifierParams, EmbedderParams};
use primfit_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
struct TensorJson {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    hidden: usize,
    dim: usize,
    classes: usize,
    embedder: BTreeMap<String, TensorJson>,
    classifier: BTreeMap<String, TensorJson>,
}

fn tensor_map(tensors: &[(&'static str, &Tensor)]) -> BTreeMap<String, TensorJson> {
    tensors
        .iter()
        .map(|(name, t)| {
            (
                (*name).to_string(),
                TensorJson {
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                },
            )
        })
        .collect()
}

pub fn save_checkpoint(
    embedder: &EmbedderParams,
    classifier: &ClassifierParams,
    path: &Path,
) -> Result<(), CliError> {
    let ckpt = Checkpoint {
        hidden: embedder.hidden,
        dim: embedder.dim,
        classes: classifier.classes,
        embedder: tensor_map(&embedder.tensors()),
        classifier: tensor_map(&classifier.tensors()),
    };
    let mut text = serde_json::to_string_pretty(&ckpt)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))
}

fn take(
    map: &mut BTreeMap<String, TensorJson>,
    name: &str,
    path: &Path,
) -> Result<Tensor, CliError> {
    let t = map
        .remove(name)
        .ok_or_else(|| CliError::Io(format!("{}: missing tensor {name:?}", path.display())))?;
    Tensor::new(t.shape, t.data)
        .map_err(|e| CliError::Io(format!("{}: tensor {name:?}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> Result<(EmbedderParams, ClassifierParams), CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    let mut e = ckpt.embedder;
    let mut c = ckpt.classifier;
    let embedder = EmbedderParams {
        hidden: ckpt.hidden,
        dim: ckpt.dim,
        w1: take(&mut e, "w1", path)?,
        b1: take(&mut e, "b1", path)?,
        w2: take(&mut e, "w2", path)?,
        b2: take(&mut e, "b2", path)?,
        wp: take(&mut e, "wp", path)?,
        bp: take(&mut e, "bp", path)?,
        w3: take(&mut e, "w3", path)?,
        b3: take(&mut e, "b3", path)?,
        w4: take(&mut e, "w4", path)?,
        b4: take(&mut e, "b4", path)?,
    };
    let classifier = ClassifierParams {
        classes: ckpt.classes,
        weight: take(&mut c, "weight", path)?,
        bias: take(&mut c, "bias", path)?,
    };
    if !embedder.all_finite() {
        return Err(CliError::Io(format!(
            "{}: checkpoint contains non-finite values",
            path.display()
        )));
    }
    let expected_w1 = [3usize, embedder.hidden];
    if embedder.w1.shape() != expected_w1 {
        return Err(CliError::Io(format!(
            "{}: w1 shape {:?} does not match hidden={}",
            path.display(),
            embedder.w1.shape(),
            embedder.hidden
        )));
    }
    Ok((embedder, classifier))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn round_trip_exact() {
        let d = tempdir().unwrap();
        let p = d.path().join("c.json");
        let e = EmbedderParams::init(7, 16, 8).unwrap();
        let c = ClassifierParams::init(7, 8, 3).unwrap();
        save_checkpoint(&e, &c, &p).unwrap();
        let (e2, c2) = load_checkpoint(&p).unwrap();
        for ((n1, t1), (n2, t2)) in e.tensors().iter().zip(e2.tensors().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            assert_eq!(t1.data(), t2.data());
        }
        assert_eq!(c.weight.data(), c2.weight.data());
        assert_eq!(c.bias.data(), c2.bias.data());
        assert_eq!(c2.classes, 3);
    }

    #[test]
    fn save_is_deterministic() {
        let d = tempdir().unwrap();
        let e = EmbedderParams::init(1, 8, 4).unwrap();
        let c = ClassifierParams::init(1, 4, 2).unwrap();
        let p1 = d.path().join("a.json");
        let p2 = d.path().join("b.json");
        save_checkpoint(&e, &c, &p1).unwrap();
        save_checkpoint(&e, &c, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn missing_tensor_is_error() {
        let d = tempdir().unwrap();
        let p = d.path().join("c.json");
        let e = EmbedderParams::init(7, 8, 4).unwrap();
        let c = ClassifierParams::init(7, 4, 2).unwrap();
        save_checkpoint(&e, &c, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap().replace("\"w1\"", "\"wx\"");
        fs::write(&p, text).unwrap();
        let err = load_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("w1"), "{err}");
    }
}
