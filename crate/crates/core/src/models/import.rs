//! Pretrained VGG backbone import.
//!
//! The weight file is an `STNETCKP` container whose tensors are named after
//! the VGG-16 convolution layers, `block{b}_conv{i}.kernel` with shape
//! `[3, 3, C_in, C_out]` and `block{b}_conv{i}.bias` with shape `[C_out]`.
//! Kernels are expected in cross-correlation orientation, the layout most
//! frameworks export; they are flipped on import because this crate's
//! convolutions use the flipped-kernel (true convolution) convention.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::checkpoint::{decode, encode, write_atomically};
use super::{Model, VggConfig, EXTRACTOR};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Names and shapes of every backbone tensor for `cfg` on `channels`-channel
/// input.
pub fn vgg_name_table(cfg: &VggConfig, channels: usize) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut c_in = channels;
    for (b, (&width, &convs)) in cfg.widths.iter().zip(&cfg.convs).enumerate() {
        for j in 0..convs {
            let layer = format!("block{}_conv{}", b + 1, j + 1);
            out.push((format!("{layer}.kernel"), vec![3, 3, c_in, width]));
            out.push((format!("{layer}.bias"), vec![width]));
            c_in = width;
        }
    }
    out
}

/// Write an external weight file (tensors in cross-correlation orientation).
pub fn write_weight_file(path: impl AsRef<Path>, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let header = serde_json::json!({ "kind": "vgg_weights", "kernel_orientation": "cross_correlation" });
    let refs: Vec<(String, &Tensor<f32>)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_atomically(path.as_ref(), &encode(&header, &refs)?)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ImportReport {
    /// Convolution layers whose kernel or bias was replaced.
    pub loaded: Vec<String>,
    /// File entries with no counterpart in the model.
    pub skipped: Vec<String>,
}

fn flip_spatial(t: &Tensor<f32>) -> Tensor<f32> {
    let d = t.dims();
    let (kh, kw, block) = (d[0], d[1], d[2] * d[3]);
    let mut out = t.clone();
    for p in 0..kh {
        for q in 0..kw {
            let src = (p * kw + q) * block;
            let dst = ((kh - 1 - p) * kw + (kw - 1 - q)) * block;
            out.data_mut()[dst..dst + block].copy_from_slice(&t.data()[src..src + block]);
        }
    }
    out
}

/// Replace matching backbone parameters. All shapes are validated before
/// anything is written, so an import error leaves the model untouched. An
/// empty (zero-byte) file is a no-op.
pub fn import_external_weights(model: &mut Model<f32>, path: impl AsRef<Path>) -> Result<ImportReport> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    if bytes.is_empty() {
        return Ok(ImportReport::default());
    }
    let file = decode(&bytes).map_err(|e| e.context(path.display().to_string()))?;
    let names = model.param_names();
    let prefix = format!("{EXTRACTOR}.");
    let has_backbone = model.frame_extractor().is_some() && model.variant() == super::Variant::LrcnVgg;

    let mut plan: Vec<(usize, Tensor<f32>)> = Vec::new();
    let mut loaded = BTreeSet::new();
    let mut report = ImportReport::default();
    let current: Vec<Vec<usize>> = model.named_params().iter().map(|(_, t)| t.dims().to_vec()).collect();
    for (name, tensor) in file.tensors {
        let slot = if has_backbone { names.iter().position(|n| *n == format!("{prefix}{name}")) } else { None };
        let Some(slot) = slot else {
            report.skipped.push(name);
            continue;
        };
        if tensor.dims() != current[slot].as_slice() {
            return Err(Error::Import(format!(
                "'{name}': file shape {:?}, model shape {:?}",
                tensor.dims(),
                current[slot]
            )));
        }
        let value = if name.ends_with(".kernel") { flip_spatial(&tensor) } else { tensor };
        loaded.insert(name.rsplit_once('.').map_or(name.clone(), |(layer, _)| layer.to_string()));
        plan.push((slot, value));
    }
    let written: BTreeSet<usize> = plan.iter().map(|(s, _)| *s).collect();
    let mut params = model.params_mut();
    for (slot, value) in plan {
        *params[slot] = value;
    }
    drop(params);
    let backbone_slots = names.iter().filter(|n| n.starts_with(&prefix)).count();
    if has_backbone && backbone_slots > 0 && written.len() == backbone_slots {
        model.set_pretrained_backbone(true);
    }
    report.loaded = loaded.into_iter().collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_is_an_involution_and_moves_corners() {
        let t = Tensor::new(vec![3, 3, 1, 1], (0..9).map(|v| v as f32).collect()).unwrap();
        let f = flip_spatial(&t);
        assert_eq!(f.data()[0], 8.0);
        assert_eq!(f.data()[4], 4.0);
        assert_eq!(flip_spatial(&f), t);
    }

    #[test]
    fn vgg16_table_has_thirteen_layers() {
        let table = vgg_name_table(&VggConfig::default(), 3);
        assert_eq!(table.len(), 26);
        assert_eq!(table[0], ("block1_conv1.kernel".to_string(), vec![3, 3, 3, 64]));
        assert_eq!(table[25], ("block5_conv3.bias".to_string(), vec![512]));
        let params: usize = table.iter().map(|(_, d)| d.iter().product::<usize>()).sum();
        assert_eq!(params, 14_714_688);
    }
}
