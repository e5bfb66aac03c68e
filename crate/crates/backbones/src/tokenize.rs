use std::path::Path;

use tokenizers::decoders::byte_level::ByteLevel as ByteLevelDecoder;
use tokenizers::models::bpe::BPE;
use tokenizers::pre_tokenizers::byte_level::ByteLevel;
use tokenizers::processors::roberta::RobertaProcessing;
use tokenizers::{AddedToken, Tokenizer, TruncationParams};

const SPECIALS: [&str; 5] = ["<s>", "</s>", "<pad>", "<unk>", "<mask>"];

/// Byte-level BPE tokenizer that wraps every text in `<s> … </s>` and keeps at
/// most `max_tokens` ids (special tokens included), dropping the tail.
#[derive(Clone)]
pub struct TextTokenizer {
    inner: Tokenizer,
}

impl std::fmt::Debug for TextTokenizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TextTokenizer").field("vocab", &self.inner.get_vocab_size(true)).finish()
    }
}

impl TextTokenizer {
    /// Prefers `tokenizer.json`; otherwise builds the standard RoBERTa pipeline
    /// from `vocab.json` + `merges.txt`.
    pub fn from_dir(dir: &Path, max_tokens: usize) -> Result<Self, String> {
        let json = dir.join("tokenizer.json");
        let mut inner = if json.exists() {
            Tokenizer::from_file(&json).map_err(|e| format!("{}: {e}", json.display()))?
        } else {
            let vocab = dir.join("vocab.json");
            let merges = dir.join("merges.txt");
            if !vocab.exists() || !merges.exists() {
                return Err(format!("no tokenizer.json or vocab.json + merges.txt in {}", dir.display()));
            }
            from_vocab_merges(&vocab, &merges)?
        };
        inner.with_padding(None);
        inner
            .with_truncation(Some(TruncationParams { max_length: max_tokens, ..Default::default() }))
            .map_err(|e| e.to_string())?;
        Ok(Self { inner })
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, String> {
        let enc = self.inner.encode(text, true).map_err(|e| e.to_string())?;
        Ok(enc.get_ids().to_vec())
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.inner.token_to_id(token)
    }
}

fn from_vocab_merges(vocab: &Path, merges: &Path) -> Result<Tokenizer, String> {
    let path = |p: &Path| p.to_string_lossy().into_owned();
    let bpe = BPE::from_file(&path(vocab), &path(merges)).build().map_err(|e| e.to_string())?;
    let mut tok = Tokenizer::new(bpe);
    let id = |t: &str| tok.token_to_id(t).ok_or_else(|| format!("{} lacks `{t}`", vocab.display()));
    let (cls, sep) = (id("<s>")?, id("</s>")?);
    tok.with_pre_tokenizer(Some(ByteLevel::new(false, true, true)));
    tok.with_decoder(Some(ByteLevelDecoder::default()));
    tok.with_post_processor(Some(RobertaProcessing::new(("</s>".into(), sep), ("<s>".into(), cls))));
    let specials: Vec<AddedToken> = SPECIALS
        .iter()
        .filter(|t| tok.token_to_id(t).is_some())
        .map(|t| AddedToken::from(*t, true))
        .collect();
    tok.add_special_tokens(specials).map_err(|e| e.to_string())?;
    Ok(tok)
}
