//! Generator, discriminator and recognizer networks, CTC decoding and
//! checkpointing.

mod bundle;
mod charset;
pub mod conv;
mod norm;
pub mod layers;
mod networks;

pub use bundle::{ModelBundle, ModelSpecs, NamedParam, Network, Provenance, FORMAT_VERSION};
pub use charset::{decode_labels, encode_transcription, Charset};
pub use layers::{Ctx, Mode, ParamKind};
pub use networks::{
    Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, Recognizer, RecognizerSpec,
    GENERATOR_CONV_LAYERS,
};

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};
use crate::image::LineImage;

/// Stacks same-sized images into a `(batch, 1, H, W)` tensor.
pub fn images_to_tensor(images: &[LineImage], device: &Device) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::Contract("empty image batch".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dims() != (h, w) {
            return Err(Error::Contract(format!("batch mixes sizes {:?} and {:?}", (h, w), img.dims())));
        }
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::from_vec(data, (images.len(), 1, h, w), device)?)
}

/// Inverse of [`images_to_tensor`]; values are clamped into `[0, 1]`.
pub fn tensor_to_images(t: &Tensor) -> Result<Vec<LineImage>> {
    let (b, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(Error::Contract(format!("expected one channel, got {c}")));
    }
    let flat: Vec<f32> = t.flatten_all()?.to_vec1()?;
    flat.chunks(h * w)
        .take(b)
        .map(|chunk| LineImage::from_vec_clamped(h, w, chunk.to_vec()))
        .collect()
}

/// Arg-max class of every frame.
pub fn best_path<R: AsRef<[f32]>>(frames: &[R]) -> Vec<usize> {
    frames
        .iter()
        .map(|row| {
            let row = row.as_ref();
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Merges adjacent repeats, then drops blanks.
pub fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Best-path CTC decoding.
pub fn greedy_ctc_decode<R: AsRef<[f32]>>(frames: &[R], charset: &Charset) -> String {
    decode_labels(&collapse_path(&best_path(frames), charset.blank_index()), charset)
}
