use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

use super::{EncoderError, Pooling};

/// Reduces per-token states to one vector.
///
/// `mask[i] == false` marks row `i` as padding. `sentence` is the backbone's own
/// sentence vector, required for [`Pooling::NativeSentence`].
pub fn pool(
    tokens: ArrayView2<'_, f64>,
    mask: Option<&[bool]>,
    strategy: Pooling,
    sentence: Option<ArrayView1<'_, f64>>,
) -> Result<Array1<f64>, EncoderError> {
    if tokens.nrows() == 0 {
        return Err(EncoderError::EmptySequence);
    }
    match strategy {
        Pooling::ClsToken => Ok(tokens.row(0).to_owned()),
        Pooling::MeanTokens => {
            // Running mean: a sequence of identical rows pools to that row exactly.
            let mut mean = Array1::<f64>::zeros(tokens.ncols());
            let mut count = 0usize;
            for (i, row) in tokens.axis_iter(Axis(0)).enumerate() {
                if mask.is_none_or(|m| m.get(i).copied().unwrap_or(false)) {
                    count += 1;
                    let k = count as f64;
                    mean.zip_mut_with(&row, |m, &x| *m += (x - *m) / k);
                }
            }
            if count == 0 {
                return Err(EncoderError::EmptySequence);
            }
            Ok(mean)
        }
        Pooling::NativeSentence => {
            sentence.map(|s| s.to_owned()).ok_or(EncoderError::MissingSentenceVector)
        }
    }
}
