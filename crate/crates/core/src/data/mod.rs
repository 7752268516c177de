//! Clip preprocessing, the on-disk frame container, dataset manifests,
//! splits and the synthetic two-class motion dataset.

mod container;
mod frames;
mod manifest;
mod split;
mod synthetic;

use std::path::Path;

use crate::error::{Error, Result};
use crate::models::InputShape;
use crate::tensor::Tensor;

pub use container::{
    decode_frames, encode_frames, read_frame_container, write_frame_container, FRAME_MAGIC, FRAME_VERSION,
};
pub use frames::{normalize, one_hot, prepare_clip, resize_bilinear, sample_frame_indices};
pub use manifest::{DatasetManifest, ManifestEntry, MANIFEST_VERSION};
pub use split::{split_dataset, Split, SplitSpec};
pub use synthetic::{generate_synthetic_dataset, write_dataset, SyntheticConfig};

pub const NONVIOLENT: usize = 0;
pub const VIOLENT: usize = 1;
pub const CLASS_NAMES: [&str; 2] = ["nonviolent", "violent"];

/// A clip of 8-bit frames `[T, H, W, C]`, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<u8>,
    shape: [usize; 4],
    pub label: usize,
    pub clip_id: String,
    pub fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<u8>, shape: [usize; 4], label: usize, clip_id: String, fps: f64) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("frame sequence shape {shape:?} has a zero dimension")));
        }
        if frames.len() != shape.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "{} frame bytes do not fill shape {shape:?}",
                frames.len()
            )));
        }
        if label > VIOLENT {
            return Err(Error::Label(format!("label {label} is not 0 (nonviolent) or 1 (violent)")));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::format(format!("frame rate {fps} is not a positive number")));
        }
        Ok(FrameSequence { frames, shape, label, clip_id, fps })
    }

    /// `[T, H, W, C]`.
    pub fn dims(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Frames `[start, end)` as a new sequence.
    pub fn window(&self, start: usize, end: usize) -> Result<FrameSequence> {
        if start >= end || end > self.len() {
            return Err(Error::shape(format!("window [{start}, {end}) outside {} frames", self.len())));
        }
        let step: usize = self.shape[1..].iter().product();
        let mut shape = self.shape;
        shape[0] = end - start;
        FrameSequence::new(self.frames[start * step..end * step].to_vec(), shape, self.label, self.clip_id.clone(), self.fps)
    }
}

/// One model-ready clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip_id: String,
    pub clip: Tensor<f32>,
    pub label: usize,
}

/// Preprocessed clips held in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_sequences(seqs: &[FrameSequence], input: &InputShape) -> Result<Self> {
        let samples = seqs
            .iter()
            .map(|s| {
                Ok(Sample { clip_id: s.clip_id.clone(), clip: prepare_clip(s, input)?, label: s.label })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { samples })
    }

    /// Read every container listed in `manifest` (paths relative to `root`).
    pub fn load(root: impl AsRef<Path>, manifest: &DatasetManifest, input: &InputShape) -> Result<Self> {
        let root = root.as_ref();
        let mut samples = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let seq = read_frame_container(root.join(&entry.path))?;
            if seq.label != entry.label {
                return Err(Error::integrity(format!(
                    "'{}': manifest label {} but container label {}",
                    entry.path, entry.label, seq.label
                )));
            }
            samples.push(Sample { clip_id: seq.clip_id.clone(), clip: prepare_clip(&seq, input)?, label: seq.label });
        }
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}
