use serde::{Deserialize, Serialize};

use crate::data::{prepare_clip, FrameSequence};
use crate::error::{Error, Result};
use crate::models::Model;

use super::argmax;

/// Frames per stream window.
pub const STREAM_WINDOW: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamWindowResult {
    pub start: usize,
    pub label: usize,
    pub probabilities: Vec<f32>,
}

/// Start frames of every full window: `0, stride, 2·stride, …`, in total
/// `floor((total − window) / stride) + 1` of them.
pub fn window_starts(total: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 || window == 0 {
        return Err(Error::usage("window and stride must be at least 1"));
    }
    if total < window {
        return Err(Error::InsufficientFrames(format!(
            "stream has {total} frames, a window needs {window}"
        )));
    }
    Ok((0..=(total - window) / stride).map(|i| i * stride).collect())
}

/// Classify each `window`-frame slice of `stream`. Every window goes through
/// the same preprocessing as training clips.
pub fn sliding_window_classify(
    model: &Model<f32>,
    stream: &FrameSequence,
    window: usize,
    stride: usize,
) -> Result<Vec<StreamWindowResult>> {
    let input = model.config().input;
    window_starts(stream.len(), window, stride)?
        .into_iter()
        .map(|start| {
            let clip = prepare_clip(&stream.window(start, start + window)?, &input)?;
            let p = model.predict_clip(&clip)?;
            Ok(StreamWindowResult { start, label: argmax(p.data()), probabilities: p.into_data() })
        })
        .collect()
}
