//! Closed-form stand-in for a transformer backbone.
//!
//! Each whitespace token (lower-cased, wrapped as `<tok>`) contributes one count per
//! character trigram, hashed with FNV-1a into [`TOY_DIM`] buckets. Token rows are
//! pooled like transformer token states and the pooled vector is L2-normalised.

use ndarray::{Array1, Array2};

use super::{pool, Backbone, EncoderError, Pooling};

pub const TOY_NAME: &str = "toy";
pub const TOY_DIM: usize = 64;

#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pooling: Pooling,
    max_tokens: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ToyEncoder {
    pub fn new(pooling: Pooling, max_tokens: usize) -> Self {
        Self { pooling, max_tokens }
    }

    /// Bucket index of each trigram of one token.
    pub fn token_buckets(token: &str) -> Vec<usize> {
        let padded: Vec<char> =
            std::iter::once('<').chain(token.chars()).chain(std::iter::once('>')).collect();
        padded
            .windows(3)
            .map(|w| {
                let s: String = w.iter().collect();
                (fnv1a(s.as_bytes()) % TOY_DIM as u64) as usize
            })
            .collect()
    }

    /// Per-token count rows after head truncation to `max_tokens`.
    pub fn token_rows(&self, text: &str) -> Array2<f64> {
        let tokens: Vec<String> =
            text.split_whitespace().take(self.max_tokens).map(str::to_lowercase).collect();
        let mut rows = Array2::zeros((tokens.len(), TOY_DIM));
        for (i, tok) in tokens.iter().enumerate() {
            for b in Self::token_buckets(tok) {
                rows[[i, b]] += 1.0;
            }
        }
        rows
    }

    /// Un-normalised whole-text counts; additive over tokens.
    pub fn raw_counts(&self, text: &str) -> Array1<f64> {
        self.token_rows(text).sum_axis(ndarray::Axis(0))
    }

    fn embed(&self, text: &str) -> Result<Array1<f64>, EncoderError> {
        let rows = self.token_rows(text);
        if rows.nrows() == 0 {
            return Err(EncoderError::EmptySequence);
        }
        let sentence = rows.sum_axis(ndarray::Axis(0));
        let mut v = pool(rows.view(), None, self.pooling, Some(sentence.view()))?;
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            v /= norm;
        }
        Ok(v)
    }
}

impl Backbone for ToyEncoder {
    fn name(&self) -> &str {
        TOY_NAME
    }

    fn dim(&self) -> usize {
        TOY_DIM
    }

    fn encode(&self, texts: &[String]) -> Result<Array2<f64>, EncoderError> {
        if texts.is_empty() {
            return Err(EncoderError::NoTexts);
        }
        let mut out = Array2::zeros((texts.len(), TOY_DIM));
        for (i, t) in texts.iter().enumerate() {
            out.row_mut(i).assign(&self.embed(t)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(p: Pooling) -> ToyEncoder {
        ToyEncoder::new(p, 256)
    }

    #[test]
    fn identical_texts_identical_rows() {
        let e = enc(Pooling::MeanTokens);
        let m = e.encode(&["same words".into(), "other".into(), "same words".into()]).unwrap();
        assert_eq!(m.row(0), m.row(2));
        assert_ne!(m.row(0), m.row(1));
    }

    #[test]
    fn repeated_token_doubles_raw_counts() {
        // closed form: "a" → trigram "<a>" only, so every count of "a a" is twice that of "a"
        let e = enc(Pooling::MeanTokens);
        let one = e.raw_counts("a");
        let two = e.raw_counts("a a");
        assert_eq!(one.sum(), 1.0);
        assert_eq!(two, &one * 2.0);
        let b = ToyEncoder::token_buckets("a")[0];
        assert_eq!(one[b], 1.0);
        // after pooling and normalisation the two coincide
        for p in [Pooling::MeanTokens, Pooling::NativeSentence, Pooling::ClsToken] {
            let m = enc(p).encode(&["a".into(), "a a".into()]).unwrap();
            assert_eq!(m.row(0), m.row(1));
            assert_eq!(m[[0, b]], 1.0);
        }
    }

    #[test]
    fn single_token_mean_equals_token_embedding() {
        let e = enc(Pooling::MeanTokens);
        let rows = e.token_rows("empathy");
        let norm = rows.row(0).dot(&rows.row(0)).sqrt();
        let expected = rows.row(0).to_owned() / norm;
        let got = e.encode(&["empathy".into()]).unwrap();
        assert_eq!(got.row(0), expected);
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let e = enc(Pooling::MeanTokens);
        let m = e.encode(&["I felt really sad reading this story".into()]).unwrap();
        assert!((m.row(0).dot(&m.row(0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn truncation_keeps_the_head() {
        let e = ToyEncoder::new(Pooling::MeanTokens, 8);
        let long = format!("{} {}", "alpha ".repeat(8), "omega ".repeat(50));
        let m = e.encode(&[long, "alpha".into()]).unwrap();
        assert_eq!(m.row(0), m.row(1));
    }

    #[test]
    fn whitespace_only_text_is_an_empty_sequence() {
        let e = enc(Pooling::MeanTokens);
        assert!(matches!(e.encode(&["  ".into()]), Err(EncoderError::EmptySequence)));
        assert!(matches!(e.encode(&[]), Err(EncoderError::NoTexts)));
    }
}
