//! Layer primitives with analytic backward passes.
//!
//! A layer never stores forward state on itself. `forward` returns the
//! output together with an opaque [`Cache`]; `backward` consumes that cache.
//! One layer instance can therefore serve any number of concurrent
//! evaluations, each holding its own caches.

mod activation;
mod attention;
mod conv;
mod convlstm;
mod dense;
mod dropout;
mod encoder;
mod init;
mod lstm;
mod norm;
mod pool;
mod reshape;
mod sequential;
mod time_distributed;

use std::any::Any;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub use activation::{activation_forward, Activation, ActivationLayer};
pub use attention::{attention_backward, attention_with_cache, scaled_dot_attention, AttentionCache, MultiHeadAttention};
pub use conv::{conv2d_forward, conv3d_forward, Conv, ConvRank, Padding};
pub use convlstm::{convlstm_cell_step, ConvLstm, ConvLstmCell, ConvLstmStepCache};
pub use dense::{dense_forward, Dense};
pub use dropout::{dropout_forward, dropout_with_mask, Dropout};
pub use encoder::{positional_encoding, EncoderBlock, PositionalEncoding};
pub use init::glorot_limit;
pub use lstm::{bilstm_forward, lstm_forward, BiLstm, Direction, Lstm, LstmState, LstmStepCache};
pub use norm::LayerNorm;
pub use pool::{maxpool_forward, MaxPool};
pub use reshape::{flatten, Flatten, MeanOverTime};
pub use sequential::Sequential;
pub use time_distributed::{time_distributed, TimeDistributed};

/// Train mode enables dropout; eval mode is deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-call forward context: mode, whether to keep backward caches, and the
/// random stream dropout masks are drawn from.
pub struct ForwardCtx {
    pub mode: Mode,
    pub caching: bool,
    rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn new(mode: Mode, caching: bool, seed: u64) -> Self {
        ForwardCtx { mode, caching, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Eval mode without caches: plain inference.
    pub fn inference() -> Self {
        ForwardCtx::new(Mode::Eval, false, 0)
    }

    /// Train mode with caches, dropout stream seeded by `seed`.
    pub fn training(seed: u64) -> Self {
        ForwardCtx::new(Mode::Train, true, seed)
    }

    /// Eval mode with caches, for gradient checks and analysis.
    pub fn eval_with_cache() -> Self {
        ForwardCtx::new(Mode::Eval, true, 0)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Opaque forward state handed back to `backward`.
#[derive(Default)]
pub struct Cache(Option<Box<dyn Any + Send + Sync>>);

impl Cache {
    pub fn empty() -> Self {
        Cache(None)
    }

    pub(crate) fn store<C: Any + Send + Sync>(ctx: &ForwardCtx, value: C) -> Self {
        if ctx.caching {
            Cache(Some(Box::new(value)))
        } else {
            Cache(None)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_none()
    }

    pub(crate) fn get<C: Any>(&self, layer: &str) -> Result<&C> {
        self.0
            .as_ref()
            .and_then(|b| b.downcast_ref::<C>())
            .ok_or_else(|| {
                Error::usage(format!(
                    "backward on '{layer}' without a forward cache (run forward with caching enabled)"
                ))
            })
    }
}

/// Gradient with respect to the layer input and each parameter, the latter
/// in [`Layer::params`] order.
#[derive(Debug, Clone)]
pub struct Grads<T> {
    pub input: Tensor<T>,
    pub params: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    Conv3d,
    MaxPool,
    Dense,
    Activation,
    Flatten,
    Dropout,
    TimeDistributed,
    Sequential,
    BiLstm,
    ConvLstm,
    MultiHeadAttention,
    LayerNorm,
    EncoderBlock,
    PositionalEncoding,
    MeanOverTime,
}

impl LayerKind {
    pub fn is_convolutional(self) -> bool {
        matches!(self, LayerKind::Conv2d | LayerKind::Conv3d)
    }
}

pub trait Layer<T: Float>: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> LayerKind;

    /// Short blueprint label such as `conv3d(64)+relu`.
    fn describe(&self) -> String;

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>>;

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx) -> Result<(Tensor<T>, Cache)>;

    fn backward(&self, cache: &Cache, grad_out: &Tensor<T>) -> Result<Grads<T>>;

    /// Parameters with local names, in a fixed order.
    fn params(&self) -> Vec<(String, &Tensor<T>)> {
        Vec::new()
    }

    /// Same order as [`Layer::params`].
    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }

    fn as_any(&self) -> &dyn Any;
}

impl<T: Float> dyn Layer<T> {
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }
}
