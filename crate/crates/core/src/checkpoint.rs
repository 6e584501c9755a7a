//! Predictor checkpoint persistence on top of the LTNS container.

use std::path::Path;

use crate::diffusion::{ConvNetPredictor, LinearPredictor, NoisePredictor};
use crate::error::{Error, Result};
use crate::ltns;

/// Save a predictor as a checkpoint directory with a manifest.
pub fn save_predictor(dir: impl AsRef<Path>, predictor: &NoisePredictor) -> Result<()> {
    match predictor {
        NoisePredictor::Linear(p) => ltns::write_checkpoint(
            dir,
            serde_json::json!({"kind": "linear", "coef": p.coef}),
            &[],
        ),
        NoisePredictor::ConvNet(p) => {
            let names = ConvNetPredictor::param_names();
            let params = p.params();
            let tensors: Vec<(&str, &crate::tensor::RealTensor)> =
                names.iter().copied().zip(params).collect();
            ltns::write_checkpoint(
                dir,
                serde_json::json!({
                    "kind": "convnet",
                    "channels": p.channels,
                    "hidden": p.hidden,
                    "embed_dim": p.embed_dim,
                }),
                &tensors,
            )
        }
    }
}

/// Load a predictor checkpoint directory.
pub fn load_predictor(dir: impl AsRef<Path>) -> Result<NoisePredictor> {
    let (meta, tensors) = ltns::read_checkpoint(&dir)?;
    match meta.get("kind").and_then(|v| v.as_str()) {
        Some("linear") => {
            let coef = meta
                .get("coef")
                .and_then(|v| v.as_f64())
                .ok_or_else(|| Error::config("linear predictor manifest missing coef"))?;
            Ok(NoisePredictor::Linear(LinearPredictor { coef }))
        }
        Some("convnet") => {
            let get = |k: &str| -> Result<usize> {
                meta.get(k)
                    .and_then(|v| v.as_u64())
                    .map(|v| v as usize)
                    .ok_or_else(|| Error::config(format!("predictor manifest missing {k}")))
            };
            let mut p = ConvNetPredictor::init(0, get("channels")?, get("hidden")?, get("embed_dim")?);
            let lookup: std::collections::HashMap<String, crate::tensor::RealTensor> =
                tensors.into_iter().collect();
            for (name, slot) in ConvNetPredictor::param_names()
                .into_iter()
                .zip(p.params_mut())
            {
                *slot = lookup
                    .get(name)
                    .ok_or_else(|| Error::config(format!("predictor checkpoint missing {name}")))?
                    .clone();
            }
            Ok(NoisePredictor::ConvNet(p))
        }
        other => Err(Error::config(format!(
            "unknown predictor checkpoint kind {other:?}"
        ))),
    }
}
