//! RoBERTa-family encoders for `affect-core`.
//!
//! Checkpoints are read from disk in the Hugging Face layout (`config.json`,
//! `model.safetensors` or `pytorch_model.bin`, and `tokenizer.json` or
//! `vocab.json` + `merges.txt`). Nothing is downloaded: a named model such as
//! `cardiffnlp/twitter-roberta-base-emotion` resolves to
//! `$AFFECT_WEIGHTS_DIR/cardiffnlp/twitter-roberta-base-emotion`, and
//! `local:<path>` points at a directory directly.

mod backbone;
pub mod model;
pub mod scaffold;
mod tokenize;

use std::path::PathBuf;
use std::sync::Arc;

use affect_core::encoders::{Backbone, EncoderError, EncoderRegistry, EncoderSpec};

pub use backbone::{checkpoint_dir, serialize_params, RobertaBackbone, RobertaSession};
pub use model::RobertaConfig;
pub use tokenize::TextTokenizer;

/// Directory holding named checkpoints.
pub const WEIGHTS_ENV: &str = "AFFECT_WEIGHTS_DIR";

/// Prefix for checkpoints addressed by path.
pub const LOCAL_PREFIX: &str = "local:";

/// The four pretrained encoders of the reference system, with whether each one
/// is a sentence-embedding model.
pub const REFERENCE_ENCODERS: [(&str, bool); 4] = [
    ("roberta-base", false),
    ("cardiffnlp/twitter-roberta-base-emotion", false),
    ("cardiffnlp/twitter-roberta-base-sentiment-latest", false),
    ("princeton-nlp/unsup-simcse-roberta-base", true),
];

/// Resolves a registered name to its checkpoint directory.
pub fn resolve(name: &str) -> Result<PathBuf, EncoderError> {
    if let Some(path) = name.strip_prefix(LOCAL_PREFIX) {
        return Ok(PathBuf::from(path));
    }
    let root = std::env::var_os(WEIGHTS_ENV).ok_or_else(|| EncoderError::EncoderLoadFailure {
        name: name.to_string(),
        reason: format!("set {WEIGHTS_ENV} to the directory holding pretrained checkpoints"),
    })?;
    let dir = checkpoint_dir(&PathBuf::from(root), name);
    if !dir.is_dir() {
        return Err(EncoderError::EncoderLoadFailure {
            name: name.to_string(),
            reason: format!("no checkpoint at {}", dir.display()),
        });
    }
    Ok(dir)
}

fn load(spec: &EncoderSpec) -> Result<Arc<dyn Backbone>, EncoderError> {
    let dir = resolve(&spec.name)?;
    log::info!("loading {} from {}", spec.name, dir.display());
    Ok(Arc::new(RobertaBackbone::load(&dir, spec)?))
}

/// Adds the reference encoders and the `local:` prefix to `registry`.
///
/// `local:` checkpoints are allowed `native_sentence` pooling since the registry
/// cannot tell what they were trained for.
pub fn register_roberta(registry: &mut EncoderRegistry) {
    for (name, sentence) in REFERENCE_ENCODERS {
        registry.register(name, sentence, load);
    }
    registry.register_prefix(LOCAL_PREFIX, true, load);
}

/// Built-in encoders plus everything from [`register_roberta`].
pub fn registry() -> EncoderRegistry {
    let mut reg = EncoderRegistry::builtin();
    register_roberta(&mut reg);
    reg
}
