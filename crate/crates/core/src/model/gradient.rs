use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging;
use crate::model::Classifier;
use crate::pipeline::Pipeline;
use crate::preprocess;

/// Loss gradient with respect to the model input, and its per-byte sign.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputGradient {
    /// d(loss)/d(resized pixel), `S × S` row-major.
    pub pixels: Vec<f64>,
    /// Sign of d(loss)/d(byte) for every byte of the original sample; bytes
    /// removed by the entropy filter, or with zero gradient, get 0.
    pub sign: Vec<i8>,
}

/// Backpropagate the cross-entropy of `label` to the bytes of `x`.
///
/// The resized-pixel gradient is pulled back through the exact adjoint of
/// the bilinear resize, read row-major over the first `len` pixels of the
/// B2IMG grid, and scattered to the original byte offsets of whatever the
/// entropy filter kept.
pub fn input_gradient(
    model: &Classifier,
    pipeline: &Pipeline,
    x: &[u8],
    label: usize,
) -> Result<InputGradient> {
    if x.is_empty() {
        return Err(Error::Precondition("input gradient of empty sample".into()));
    }
    // map from model-visible byte index to original offset
    let (visible, offsets): (Vec<u8>, Option<Vec<std::ops::Range<usize>>>) = match &pipeline.preprocess {
        Some(cfg) => {
            let ranges = preprocess::kept_ranges(x, cfg);
            let mut v = Vec::new();
            for r in &ranges {
                v.extend_from_slice(&x[r.clone()]);
            }
            (v, Some(ranges))
        }
        None => (x.to_vec(), None),
    };
    let img = imaging::bytes_to_input(&visible, pipeline.input_side)?;
    let pixels = model.loss_input_gradient(&img, label)?;
    let mut sign = vec![0i8; x.len()];
    if visible.is_empty() {
        return Ok(InputGradient { pixels, sign });
    }
    let side = imaging::image_side(visible.len());
    let grid = imaging::resize_transpose(&pixels, pipeline.input_side, side)?;
    let per_byte = &grid[..visible.len()];
    match offsets {
        None => {
            for (s, &g) in sign.iter_mut().zip(per_byte) {
                *s = sign_of(g);
            }
        }
        Some(ranges) => {
            let mut k = 0;
            for r in ranges {
                for off in r {
                    sign[off] = sign_of(per_byte[k]);
                    k += 1;
                }
            }
        }
    }
    Ok(InputGradient { pixels, sign })
}

fn sign_of(g: f64) -> i8 {
    if g > 0.0 {
        1
    } else if g < 0.0 {
        -1
    } else {
        0
    }
}
