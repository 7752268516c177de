use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::ForwardCtx;
use crate::models::{write_atomically, Model};
use crate::tensor::Tensor;

/// One output channel of a convolution layer as an 8-bit image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMap {
    pub layer: usize,
    pub layer_name: String,
    pub channel: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

fn to_gray(values: &[f32]) -> Vec<u8> {
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    values.iter().map(|&v| ((v - lo) / (hi - lo) * 255.0).round() as u8).collect()
}

/// Run `frame` (`[H, W, C]`, values in `[0, 1]`) through the per-frame
/// extractor and capture every channel of the convolution layers at
/// `layers` (0-based positions in the extractor). Each map is min-max
/// scaled to `[0, 255]`; constant maps become all zeros.
pub fn dump_feature_maps(model: &Model<f32>, frame: &Tensor<f32>, layers: &[usize]) -> Result<Vec<FeatureMap>> {
    let extractor = model.frame_extractor().ok_or_else(|| {
        Error::usage(format!("{} has no per-frame convolutional extractor", model.variant()))
    })?;
    let stack = extractor.layers();
    for &i in layers {
        let layer = stack.get(i).ok_or_else(|| {
            Error::usage(format!("layer {i} does not exist (extractor has {} layers)", stack.len()))
        })?;
        if !layer.kind().is_convolutional() {
            return Err(Error::usage(format!("layer {i} ('{}') is not convolutional", layer.name())));
        }
    }
    let input = model.config().input;
    frame.expect_dims(&[input.height, input.width, input.channels], "frame")?;
    let last = layers.iter().copied().max().unwrap_or(0);
    let mut ctx = ForwardCtx::inference();
    let mut x = frame.clone();
    let mut maps = Vec::new();
    for (i, layer) in stack.iter().enumerate().take(last + 1) {
        x = layer.forward(&x, &mut ctx)?.0;
        if !layers.contains(&i) {
            continue;
        }
        let d = x.dims();
        let (h, w, c) = (d[0], d[1], d[2]);
        for ch in 0..c {
            let values: Vec<f32> = (0..h * w).map(|p| x.data()[p * c + ch]).collect();
            maps.push(FeatureMap {
                layer: i,
                layer_name: layer.name().to_string(),
                channel: ch,
                height: h,
                width: w,
                pixels: to_gray(&values),
            });
        }
    }
    Ok(maps)
}

/// Binary PGM (P5).
pub fn write_pgm(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let mut header = String::new();
    let _ = write!(header, "P5\n{} {}\n255\n", map.width, map.height);
    let mut bytes = header.into_bytes();
    bytes.extend_from_slice(&map.pixels);
    write_atomically(path.as_ref(), &bytes)
}
