//! The five classifiers, assembled from layer primitives.
//!
//! Every model body maps one clip `[T, H, W, C]` to two logits; the softmax
//! head is applied here, outside the layer graph, so training can use the
//! fused softmax/cross-entropy gradient.

mod checkpoint;
mod config;
mod import;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    Activation, BiLstm, Cache, Conv, ConvLstm, ConvLstmCell, Dense, Dropout, EncoderBlock, Flatten, ForwardCtx, Layer,
    MaxPool, MeanOverTime, Padding, PositionalEncoding, Sequential, TimeDistributed,
};
use crate::tensor::{Float, Tensor};

pub use checkpoint::{load_checkpoint, load_checkpoint_for, read_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use config::{
    C3dConfig, CnnConfig, ConvLstmConfig, InputShape, LrcnConfig, ModelConfig, TransformerConfig, Variant, VggConfig,
};
pub(crate) use checkpoint::write_atomically;
pub use import::{import_external_weights, vgg_name_table, write_weight_file, ImportReport};

/// Name of the time-distributed per-frame extractor inside a model body.
pub const EXTRACTOR: &str = "extractor";

pub struct Model<T: Float = f32> {
    config: ModelConfig,
    body: Sequential<T>,
    pretrained_backbone: bool,
}

fn custom_cnn<T: Float>(cfg: &CnnConfig, channels: usize, rng: &mut ChaCha8Rng) -> Result<Sequential<T>> {
    let mut s = Sequential::new("cnn");
    let mut c_in = channels;
    for (i, &f) in cfg.filters.iter().enumerate() {
        s.push(Conv::new_2d(format!("conv{}", i + 1), cfg.kernel, c_in, f, Padding::Valid, Activation::Relu, rng)?);
        s.push(MaxPool::new(format!("pool{}", i + 1), vec![2, 2])?);
        c_in = f;
    }
    s.push(Flatten::new("flatten"));
    Ok(s)
}

fn vgg<T: Float>(cfg: &VggConfig, channels: usize, rng: &mut ChaCha8Rng) -> Result<Sequential<T>> {
    let mut s = Sequential::new("vgg");
    let mut c_in = channels;
    for (b, (&width, &convs)) in cfg.widths.iter().zip(&cfg.convs).enumerate() {
        for j in 0..convs {
            let name = format!("block{}_conv{}", b + 1, j + 1);
            s.push(Conv::new_2d(name, 3, c_in, width, Padding::Same, Activation::Relu, rng)?);
            c_in = width;
        }
        if b < cfg.pooled_blocks {
            s.push(MaxPool::new(format!("block{}_pool", b + 1), vec![2, 2])?);
        }
    }
    s.push(Flatten::new("flatten"));
    Ok(s)
}

fn feature_width<T: Float>(layer: &dyn Layer<T>, frame: &[usize]) -> Result<usize> {
    Ok(layer.output_dims(frame)?.iter().product())
}

fn assemble<T: Float>(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Sequential<T>> {
    let InputShape { frames, height, width, channels } = cfg.input;
    let frame = [height, width, channels];
    let mut body = Sequential::new("model");
    match cfg.variant {
        Variant::ConvLstm => {
            let c = &cfg.convlstm;
            let cell = ConvLstmCell::new("cell", c.kernel, channels, c.filters, height, width, rng)?;
            body.push(ConvLstm::new("convlstm", cell));
            body.push(MaxPool::new("pool", vec![2, 2])?);
            body.push(Flatten::new("flatten"));
            let n = feature_width(&body, &cfg.input.dims())?;
            body.push(Dense::new("output", n, cfg.classes, Activation::Identity, rng)?);
        }
        Variant::LrcnCustomCnn => {
            let cnn = custom_cnn::<T>(&cfg.cnn, channels, rng)?;
            let n = feature_width(&cnn, &frame)?;
            body.push(TimeDistributed::new(EXTRACTOR, Box::new(cnn)));
            body.push(BiLstm::new("bilstm", n, cfg.lrcn.lstm_hidden, false, rng)?);
            body.push(Dense::new("output", 2 * cfg.lrcn.lstm_hidden, cfg.classes, Activation::Identity, rng)?);
        }
        Variant::LrcnVgg => {
            let backbone = vgg::<T>(&cfg.vgg, channels, rng)?;
            let n = feature_width(&backbone, &frame)?;
            body.push(TimeDistributed::new(EXTRACTOR, Box::new(backbone)));
            let l = &cfg.lrcn;
            body.push(BiLstm::new("bilstm", n, l.lstm_hidden, false, rng)?);
            body.push(Dense::new("hidden", 2 * l.lstm_hidden, l.head_hidden, Activation::Relu, rng)?);
            body.push(Dense::new("output", l.head_hidden, cfg.classes, Activation::Identity, rng)?);
        }
        Variant::C3d => {
            let c = &cfg.c3d;
            let k = [c.kernel; 3];
            let pool = vec![c.pool; 3];
            body.push(Conv::new_3d("conv1", k, channels, c.filters[0], Padding::Valid, Activation::Relu, rng)?);
            body.push(MaxPool::new("pool1", pool.clone())?);
            body.push(Conv::new_3d("conv2", k, c.filters[0], c.filters[1], Padding::Valid, Activation::Relu, rng)?);
            body.push(MaxPool::new("pool2", pool)?);
            body.push(Flatten::new("flatten"));
            let n = feature_width(&body, &cfg.input.dims())?;
            body.push(Dense::new("hidden", n, c.dense, Activation::Relu, rng)?);
            body.push(Dropout::new("dropout", c.dropout)?);
            body.push(Dense::new("output", c.dense, cfg.classes, Activation::Identity, rng)?);
        }
        Variant::CnnTransformer => {
            let t = &cfg.transformer;
            let cnn = custom_cnn::<T>(&cfg.cnn, channels, rng)?;
            let n = feature_width(&cnn, &frame)?;
            body.push(TimeDistributed::new(EXTRACTOR, Box::new(cnn)));
            body.push(Dense::new("embed", n, t.d_model, Activation::Identity, rng)?);
            body.push(PositionalEncoding::new("position"));
            for b in 0..t.blocks {
                body.push(EncoderBlock::new(format!("encoder{}", b + 1), t.d_model, t.heads, t.d_ff, rng)?);
            }
            body.push(MeanOverTime::new("mean"));
            body.push(Dense::new("output", t.d_model, cfg.classes, Activation::Identity, rng)?);
        }
    }
    let out = body.output_dims(&[frames, height, width, channels])?;
    if out != [cfg.classes] {
        return Err(Error::config(format!("model body produces {out:?}, expected [{}]", cfg.classes)));
    }
    Ok(body)
}

impl<T: Float> Model<T> {
    /// Build and initialize from `seed`. Weights are glorot-uniform, biases
    /// zero, LSTM/ConvLSTM forget-gate biases +1.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let body = assemble(config, &mut rng).map_err(|e| match e {
            Error::Shape(msg) => Error::Config(format!(
                "{} does not fit input {}: {msg}",
                config.variant, config.input
            )),
            other => other,
        })?;
        Ok(Model { config: config.clone(), body, pretrained_backbone: false })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn body(&self) -> &Sequential<T> {
        &self.body
    }

    /// Top-level layer labels; the softmax head is shown on the last entry.
    pub fn blueprint(&self) -> Vec<String> {
        let mut labels = self.body.blueprint();
        if let Some(last) = labels.last_mut() {
            last.push_str("+softmax");
        }
        labels
    }

    pub fn param_count(&self) -> usize {
        (&self.body as &dyn Layer<T>).param_count()
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.body.params()
    }

    pub fn param_names(&self) -> Vec<String> {
        self.body.params().into_iter().map(|(n, _)| n).collect()
    }

    /// Same order as [`Model::named_params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.body.params_mut()
    }

    /// True once all backbone convolutions were replaced by imported weights.
    pub fn pretrained_backbone(&self) -> bool {
        self.pretrained_backbone
    }

    pub(crate) fn set_pretrained_backbone(&mut self, value: bool) {
        self.pretrained_backbone = value;
    }

    /// Whether reports must carry the "untrained backbone" flag.
    pub fn untrained_backbone(&self) -> bool {
        self.config.variant == Variant::LrcnVgg && !self.pretrained_backbone
    }

    /// Per-frame convolutional extractor, for the variants that have one.
    pub fn frame_extractor(&self) -> Option<&Sequential<T>> {
        self.body
            .layers()
            .iter()
            .find(|l| l.name() == EXTRACTOR)
            .and_then(|l| l.as_any().downcast_ref::<TimeDistributed<T>>())
            .and_then(|td| td.inner().as_any().downcast_ref::<Sequential<T>>())
    }

    fn check_clip(&self, clip: &Tensor<T>) -> Result<()> {
        clip.expect_dims(&self.config.input.dims(), "clip")
    }

    /// Logits `[classes]` for one clip, with the cache for [`Model::backward`].
    pub fn forward_logits(&self, clip: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)> {
        self.check_clip(clip)?;
        self.body.forward(clip, ctx)
    }

    /// Parameter gradients, in [`Model::named_params`] order, given the
    /// gradient of the loss with respect to the logits.
    pub fn backward(&self, cache: &Cache, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        Ok(self.body.backward(cache, grad_logits)?.params)
    }

    /// Class probabilities `[B, classes]` for a batch `[B, T, H, W, C]`.
    pub fn forward(&self, batch: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<Tensor<T>> {
        let dims = batch.dims();
        if dims.len() != 5 || dims[1..] != self.config.input.dims() {
            return Err(Error::shape(format!(
                "batch {} does not match [B, {}]",
                batch.shape(),
                self.config.input
            )));
        }
        let mut rows = Vec::with_capacity(dims[0]);
        for b in 0..dims[0] {
            let (logits, _) = self.body.forward(&batch.index_axis0(b)?, ctx)?;
            rows.push(logits.softmax()?);
        }
        Tensor::stack(&rows)
    }

    /// Deterministic eval-mode probabilities.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(batch, &mut ForwardCtx::inference())
    }

    /// Probabilities `[classes]` for one clip in eval mode.
    pub fn predict_clip(&self, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let (logits, _) = self.forward_logits(clip, &mut ForwardCtx::inference())?;
        logits.softmax()
    }
}

/// Total scalar parameter count.
pub fn count_parameters<T: Float>(model: &Model<T>) -> usize {
    model.param_count()
}

/// Parameters of the default (full-size) configurations, computed by
/// shape arithmetic and frozen.
pub fn full_param_count(variant: Variant) -> usize {
    match variant {
        Variant::ConvLstm => 947_650,
        Variant::LrcnCustomCnn => 1_767_522,
        Variant::LrcnVgg => 19_567_170,
        Variant::C3d => 14_512_034,
        Variant::CnnTransformer => 398_562,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_models_build_and_emit_distributions() {
        for v in Variant::ALL {
            let m = Model::<f32>::build(&ModelConfig::desk(v), 1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let dims = m.config().input.dims();
            let batch = Tensor::uniform(vec![2, dims[0], dims[1], dims[2], dims[3]], 1.0, &mut rng).unwrap();
            let p = m.predict(&batch).unwrap();
            assert_eq!(p.dims(), &[2, 2]);
            for row in p.data().chunks(2) {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-6, "{v}");
            }
        }
    }

    #[test]
    fn parameter_names_are_unique() {
        for v in Variant::ALL {
            let m = Model::<f32>::build(&ModelConfig::desk(v), 1).unwrap();
            let mut names = m.param_names();
            let n = names.len();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), n, "{v}");
        }
    }

    #[test]
    fn too_deep_extractor_is_config_error() {
        let mut cfg = ModelConfig::desk(Variant::LrcnCustomCnn);
        cfg.cnn.filters = vec![4, 4, 4, 4];
        let err = Model::<f32>::build(&cfg, 0).err().unwrap();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn wrong_batch_shape_is_shape_error() {
        let m = Model::<f32>::build(&ModelConfig::desk(Variant::C3d), 1).unwrap();
        let x = Tensor::zeros(vec![1, 15, 24, 24, 3]).unwrap();
        assert!(matches!(m.predict(&x), Err(Error::Shape(_))));
    }
}
