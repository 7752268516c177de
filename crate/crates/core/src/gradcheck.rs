//! Finite-difference verification of every layer's backward pass.
//!
//! Each case is a scalar probe `f(vars) = Σ r ∘ y` for a fixed random
//! projection `r`, where `vars` are the layer input(s) followed by every
//! parameter. Analytic gradients from `backward` are compared with central
//! differences in 64-bit arithmetic.

use std::fmt;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::layers::{
    attention_backward, attention_with_cache, Activation, ActivationLayer, BiLstm, Conv, ConvLstm, ConvLstmCell, Dense,
    Dropout, EncoderBlock, Flatten, ForwardCtx, Layer, LayerNorm, Lstm, LstmState, MaxPool, MeanOverTime, Mode,
    MultiHeadAttention, Padding, PositionalEncoding, Sequential, TimeDistributed,
};
use crate::tensor::{finite_difference_gradient, Tensor};

/// Tolerances for one suite run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Tolerance {
    pub eps: f64,
    pub max_relative_error: f64,
    /// Elements with `|analytic| + |numeric|` below this are not compared.
    pub exempt_below: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { eps: 1e-5, max_relative_error: 1e-4, exempt_below: 1e-8 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub case: String,
    pub seed: u64,
    pub coordinates: usize,
    pub max_relative_error: f64,
    /// Variable holding the worst element.
    pub worst: String,
    /// Analytic and numeric values at the worst element.
    pub worst_pair: (f64, f64),
    pub passed: bool,
}

impl fmt::Display for CaseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} seed {:<3} coords {:>5}  max rel err {:.2e} ({}: {:.3e} vs {:.3e})",
            if self.passed { "ok  " } else { "FAIL" },
            self.case,
            self.seed,
            self.coordinates,
            self.max_relative_error,
            self.worst,
            self.worst_pair.0,
            self.worst_pair.1
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub tolerance: Tolerance,
    pub results: Vec<CaseResult>,
    #[serde(serialize_with = "secs")]
    pub elapsed: Duration,
}

fn secs<S: serde::Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.results.iter().filter(|r| !r.passed)
    }

    /// Distinct case names in run order.
    pub fn cases(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.results {
            if !out.contains(&r.case.as_str()) {
                out.push(&r.case);
            }
        }
        out
    }
}

trait Probe {
    fn vars(&self) -> Vec<(String, Tensor<f64>)>;
    fn value(&mut self, vars: &[Tensor<f64>]) -> Result<f64>;
    fn gradient(&mut self, vars: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>;
}

/// A [`Layer`] with one input, probed through `forward`/`backward`.
struct LayerProbe {
    layer: Box<dyn Layer<f64>>,
    input: Tensor<f64>,
    projection: Tensor<f64>,
    mode: Mode,
}

impl LayerProbe {
    fn new(layer: Box<dyn Layer<f64>>, input_dims: &[usize], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut layer = layer;
        for p in layer.params_mut() {
            *p = Tensor::uniform(p.dims().to_vec(), 0.5, rng)?;
        }
        let input = Tensor::uniform(input_dims.to_vec(), 1.0, rng)?;
        let out = layer.output_dims(input_dims)?;
        let projection = Tensor::uniform(out, 1.0, rng)?;
        Ok(LayerProbe { layer, input, projection, mode })
    }

    fn load(&mut self, vars: &[Tensor<f64>]) {
        for (p, v) in self.layer.params_mut().into_iter().zip(&vars[1..]) {
            *p = v.clone();
        }
    }
}

impl Probe for LayerProbe {
    fn vars(&self) -> Vec<(String, Tensor<f64>)> {
        let mut out = vec![("input".to_string(), self.input.clone())];
        out.extend(self.layer.params().into_iter().map(|(n, t)| (n, t.clone())));
        out
    }

    fn value(&mut self, vars: &[Tensor<f64>]) -> Result<f64> {
        self.load(vars);
        let mut ctx = ForwardCtx::new(self.mode, false, 0);
        let (y, _) = self.layer.forward(&vars[0], &mut ctx)?;
        y.dot(&self.projection)
    }

    fn gradient(&mut self, vars: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
        self.load(vars);
        let mut ctx = ForwardCtx::new(self.mode, true, 0);
        let (_, cache) = self.layer.forward(&vars[0], &mut ctx)?;
        let grads = self.layer.backward(&cache, &self.projection)?;
        let mut out = vec![grads.input];
        out.extend(grads.params);
        Ok(out)
    }
}

/// One LSTM step with the projection applied to both `h_t` and `c_t`.
struct LstmStepProbe {
    vars: Vec<(String, Tensor<f64>)>,
    r_h: Tensor<f64>,
    r_c: Tensor<f64>,
}

impl LstmStepProbe {
    fn new(inputs: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let u = |d: Vec<usize>, rng: &mut ChaCha8Rng| Tensor::uniform(d, 0.8, rng);
        let vars = vec![
            ("input".to_string(), u(vec![inputs], rng)?),
            ("h_prev".to_string(), u(vec![hidden], rng)?),
            ("c_prev".to_string(), u(vec![hidden], rng)?),
            ("w_input".to_string(), u(vec![inputs, 4 * hidden], rng)?),
            ("w_hidden".to_string(), u(vec![hidden, 4 * hidden], rng)?),
            ("bias".to_string(), u(vec![4 * hidden], rng)?),
        ];
        Ok(LstmStepProbe { vars, r_h: u(vec![hidden], rng)?, r_c: u(vec![hidden], rng)? })
    }

    fn cell(vars: &[Tensor<f64>]) -> Result<Lstm<f64>> {
        Lstm::from_params("lstm", vars[3].clone(), vars[4].clone(), vars[5].clone())
    }
}

impl Probe for LstmStepProbe {
    fn vars(&self) -> Vec<(String, Tensor<f64>)> {
        self.vars.clone()
    }

    fn value(&mut self, vars: &[Tensor<f64>]) -> Result<f64> {
        let state = LstmState { h: vars[1].clone(), c: vars[2].clone() };
        let (next, _) = Self::cell(vars)?.step(&vars[0], &state)?;
        Ok(next.h.dot(&self.r_h)? + next.c.dot(&self.r_c)?)
    }

    fn gradient(&mut self, vars: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
        let cell = Self::cell(vars)?;
        let state = LstmState { h: vars[1].clone(), c: vars[2].clone() };
        let (_, cache) = cell.step(&vars[0], &state)?;
        let g = cell.step_backward(&cache, &self.r_h, &self.r_c)?;
        let mut out = vec![g.input, g.h_prev, g.c_prev];
        out.extend(g.params);
        Ok(out)
    }
}

/// One ConvLSTM cell step, all inputs and parameters (peepholes included)
/// randomized.
struct ConvLstmStepProbe {
    vars: Vec<(String, Tensor<f64>)>,
    r_h: Tensor<f64>,
    r_c: Tensor<f64>,
}

impl ConvLstmStepProbe {
    fn new(hw: [usize; 2], c_in: usize, filters: usize, k: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let template = ConvLstmCell::<f64>::new("cell", k, c_in, filters, hw[0], hw[1], rng)?;
        let state = vec![hw[0], hw[1], filters];
        let mut vars = vec![
            ("input".to_string(), Tensor::uniform(vec![hw[0], hw[1], c_in], 0.8, rng)?),
            ("h_prev".to_string(), Tensor::uniform(state.clone(), 0.8, rng)?),
            ("c_prev".to_string(), Tensor::uniform(state.clone(), 0.8, rng)?),
        ];
        for (name, t) in template.params() {
            vars.push((name, Tensor::uniform(t.dims().to_vec(), 0.5, rng)?));
        }
        Ok(ConvLstmStepProbe {
            vars,
            r_h: Tensor::uniform(state.clone(), 1.0, rng)?,
            r_c: Tensor::uniform(state, 1.0, rng)?,
        })
    }

    fn cell(vars: &[Tensor<f64>]) -> Result<ConvLstmCell<f64>> {
        ConvLstmCell::from_params(
            "cell",
            vars[3].clone(),
            vars[4].clone(),
            [vars[5].clone(), vars[6].clone(), vars[7].clone()],
            vars[8].clone(),
        )
    }
}

impl Probe for ConvLstmStepProbe {
    fn vars(&self) -> Vec<(String, Tensor<f64>)> {
        self.vars.clone()
    }

    fn value(&mut self, vars: &[Tensor<f64>]) -> Result<f64> {
        let (h, c, _) = Self::cell(vars)?.step(&vars[0], &vars[1], &vars[2])?;
        Ok(h.dot(&self.r_h)? + c.dot(&self.r_c)?)
    }

    fn gradient(&mut self, vars: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
        let cell = Self::cell(vars)?;
        let (_, _, cache) = cell.step(&vars[0], &vars[1], &vars[2])?;
        let g = cell.step_backward(&cache, &self.r_h, &self.r_c)?;
        let mut out = vec![g.input, g.h_prev, g.c_prev];
        out.extend(g.params);
        Ok(out)
    }
}

/// `softmax(QKᵀ/√d_k)V` with independent Q, K, V.
struct AttentionProbe {
    vars: Vec<(String, Tensor<f64>)>,
    projection: Tensor<f64>,
}

impl AttentionProbe {
    fn new(t_q: usize, t_k: usize, d_k: usize, d_v: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let vars = vec![
            ("q".to_string(), Tensor::uniform(vec![t_q, d_k], 1.0, rng)?),
            ("k".to_string(), Tensor::uniform(vec![t_k, d_k], 1.0, rng)?),
            ("v".to_string(), Tensor::uniform(vec![t_k, d_v], 1.0, rng)?),
        ];
        Ok(AttentionProbe { vars, projection: Tensor::uniform(vec![t_q, d_v], 1.0, rng)? })
    }
}

impl Probe for AttentionProbe {
    fn vars(&self) -> Vec<(String, Tensor<f64>)> {
        self.vars.clone()
    }

    fn value(&mut self, vars: &[Tensor<f64>]) -> Result<f64> {
        attention_with_cache(&vars[0], &vars[1], &vars[2])?.0.dot(&self.projection)
    }

    fn gradient(&mut self, vars: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
        let (_, cache) = attention_with_cache(&vars[0], &vars[1], &vars[2])?;
        let (dq, dk, dv) = attention_backward(&cache, &self.projection)?;
        Ok(vec![dq, dk, dv])
    }
}

/// Largest relative error and the `(analytic, numeric)` pair it came from.
fn compare(analytic: &Tensor<f64>, numeric: &Tensor<f64>, tol: &Tolerance) -> (f64, (f64, f64)) {
    let mut worst = (0.0f64, (0.0, 0.0));
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        if a.abs() + n.abs() < tol.exempt_below {
            continue;
        }
        let rel = (a - n).abs() / a.abs().max(n.abs());
        if rel > worst.0 {
            worst = (rel, (a, n));
        }
    }
    worst
}

fn run_probe(case: &str, seed: u64, probe: &mut dyn Probe, tol: &Tolerance) -> Result<CaseResult> {
    let named = probe.vars();
    let vars: Vec<Tensor<f64>> = named.iter().map(|(_, t)| t.clone()).collect();
    let analytic = probe.gradient(&vars)?;
    let mut result = CaseResult {
        case: case.to_string(),
        seed,
        coordinates: 0,
        max_relative_error: 0.0,
        worst: "-".into(),
        worst_pair: (0.0, 0.0),
        passed: true,
    };
    for (i, (name, _)) in named.iter().enumerate() {
        let mut scratch = vars.clone();
        let numeric = finite_difference_gradient(
            |t: &Tensor<f64>| {
                scratch[i] = t.clone();
                probe.value(&scratch)
            },
            &vars[i],
            tol.eps,
        )?;
        let (err, pair) = compare(&analytic[i], &numeric, tol);
        result.coordinates += numeric.len();
        if err >= result.max_relative_error {
            result.max_relative_error = err;
            result.worst = name.clone();
            result.worst_pair = pair;
        }
    }
    result.passed = result.max_relative_error <= tol.max_relative_error;
    Ok(result)
}

fn layer_case(
    layer: Box<dyn Layer<f64>>,
    input_dims: &[usize],
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Box<dyn Probe>> {
    Ok(Box::new(LayerProbe::new(layer, input_dims, mode, rng)?))
}

type CaseBuilder = fn(&mut ChaCha8Rng) -> Result<Box<dyn Probe>>;

fn cases() -> Vec<(&'static str, CaseBuilder)> {
    vec![
        ("conv2d valid relu", |rng| {
            let l = Conv::new_2d("conv", 3, 2, 3, Padding::Valid, Activation::Relu, rng)?;
            layer_case(Box::new(l), &[5, 6, 2], Mode::Eval, rng)
        }),
        ("conv2d same", |rng| {
            let l = Conv::new_2d("conv", 3, 2, 2, Padding::Same, Activation::Identity, rng)?;
            layer_case(Box::new(l), &[4, 5, 2], Mode::Eval, rng)
        }),
        ("conv3d valid relu", |rng| {
            let l = Conv::new_3d("conv", [2, 3, 3], 2, 2, Padding::Valid, Activation::Relu, rng)?;
            layer_case(Box::new(l), &[3, 4, 5, 2], Mode::Eval, rng)
        }),
        ("conv3d same", |rng| {
            let l = Conv::new_3d("conv", [3, 3, 3], 1, 2, Padding::Same, Activation::Tanh, rng)?;
            layer_case(Box::new(l), &[3, 3, 4, 1], Mode::Eval, rng)
        }),
        ("maxpool2d", |rng| layer_case(Box::new(MaxPool::new("pool", vec![2, 2])?), &[5, 4, 2], Mode::Eval, rng)),
        ("maxpool3d", |rng| {
            layer_case(Box::new(MaxPool::new("pool", vec![2, 2, 2])?), &[4, 4, 5, 2], Mode::Eval, rng)
        }),
        ("dense relu", |rng| {
            layer_case(Box::new(Dense::new("dense", 6, 4, Activation::Relu, rng)?), &[6], Mode::Eval, rng)
        }),
        ("dense rows sigmoid", |rng| {
            layer_case(Box::new(Dense::new("dense", 5, 3, Activation::Sigmoid, rng)?), &[4, 5], Mode::Eval, rng)
        }),
        ("relu", |rng| {
            layer_case(Box::new(ActivationLayer::new("act", Activation::Relu)), &[3, 4], Mode::Eval, rng)
        }),
        ("sigmoid", |rng| {
            layer_case(Box::new(ActivationLayer::new("act", Activation::Sigmoid)), &[3, 4], Mode::Eval, rng)
        }),
        ("tanh", |rng| {
            layer_case(Box::new(ActivationLayer::new("act", Activation::Tanh)), &[3, 4], Mode::Eval, rng)
        }),
        ("softmax", |rng| {
            layer_case(Box::new(ActivationLayer::new("act", Activation::Softmax)), &[3, 4], Mode::Eval, rng)
        }),
        ("dropout train fixed mask", |rng| {
            let mask = vec![true, false, true, true, false, true, false, true, true, false, true, true];
            layer_case(Box::new(Dropout::with_fixed_mask("drop", 0.5, mask)?), &[3, 4], Mode::Train, rng)
        }),
        ("flatten", |rng| layer_case(Box::new(Flatten::new("flat")), &[2, 3, 2], Mode::Eval, rng)),
        ("time distributed conv2d", |rng| {
            let inner = Conv::new_2d("conv", 3, 2, 2, Padding::Valid, Activation::Relu, rng)?;
            let l = TimeDistributed::new("td", Box::new(inner));
            layer_case(Box::new(l), &[3, 4, 4, 2], Mode::Eval, rng)
        }),
        ("time distributed cnn stack", |rng| {
            let mut s = Sequential::new("cnn");
            s.push(Conv::new_2d("conv", 3, 1, 2, Padding::Valid, Activation::Relu, rng)?)
                .push(MaxPool::new("pool", vec![2, 2])?)
                .push(Flatten::new("flat"));
            layer_case(Box::new(TimeDistributed::new("td", Box::new(s))), &[2, 6, 6, 1], Mode::Eval, rng)
        }),
        ("lstm step", |rng| Ok(Box::new(LstmStepProbe::new(3, 4, rng)?))),
        ("bilstm sequences", |rng| {
            layer_case(Box::new(BiLstm::new("bilstm", 3, 3, true, rng)?), &[4, 3], Mode::Eval, rng)
        }),
        ("bilstm final", |rng| {
            layer_case(Box::new(BiLstm::new("bilstm", 3, 4, false, rng)?), &[5, 3], Mode::Eval, rng)
        }),
        ("convlstm cell 1x2x2x1", |rng| Ok(Box::new(ConvLstmStepProbe::new([2, 2], 1, 1, 3, rng)?))),
        ("convlstm cell 3x3x2 f2", |rng| Ok(Box::new(ConvLstmStepProbe::new([3, 3], 2, 2, 3, rng)?))),
        ("convlstm sequence", |rng| {
            let cell = ConvLstmCell::new("cell", 3, 1, 2, 3, 3, rng)?;
            layer_case(Box::new(ConvLstm::new("convlstm", cell)), &[3, 3, 3, 1], Mode::Eval, rng)
        }),
        ("scaled dot attention", |rng| Ok(Box::new(AttentionProbe::new(3, 4, 2, 3, rng)?))),
        ("multi-head attention", |rng| {
            layer_case(Box::new(MultiHeadAttention::new("mha", 4, 2, rng)?), &[3, 4], Mode::Eval, rng)
        }),
        ("layer norm", |rng| layer_case(Box::new(LayerNorm::new("ln", 5)?), &[3, 5], Mode::Eval, rng)),
        ("positional encoding", |rng| {
            layer_case(Box::new(PositionalEncoding::new("pe")), &[3, 4], Mode::Eval, rng)
        }),
        ("encoder block", |rng| {
            layer_case(Box::new(EncoderBlock::new("enc", 4, 2, 6, rng)?), &[3, 4], Mode::Eval, rng)
        }),
        ("mean over time", |rng| layer_case(Box::new(MeanOverTime::new("mean")), &[4, 3], Mode::Eval, rng)),
    ]
}

/// Names of every case the suite runs.
pub fn case_names() -> Vec<&'static str> {
    cases().into_iter().map(|(n, _)| n).collect()
}

/// Run one named case for one seed.
pub fn run_case(name: &str, seed: u64, tol: Tolerance) -> Result<CaseResult> {
    let (name, build) = cases()
        .into_iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| crate::Error::usage(format!("unknown gradient case '{name}'")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = build(&mut rng)?;
    run_probe(name, seed, probe.as_mut(), &tol)
}

/// Run every case once per seed.
pub fn run_gradient_suite(seeds: &[u64], tol: Tolerance) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut results = Vec::new();
    for (name, build) in cases() {
        for &seed in seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut probe = build(&mut rng)?;
            results.push(run_probe(name, seed, probe.as_mut(), &tol)?);
        }
    }
    Ok(SuiteReport { tolerance: tol, results, elapsed: start.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_exempts_tiny_pairs() {
        let tol = Tolerance::default();
        let a = Tensor::from_vec(vec![1e-10, 1.0]).unwrap();
        let n = Tensor::from_vec(vec![-1e-10, 1.0 + 1e-6]).unwrap();
        assert!(compare(&a, &n, &tol).0 < 2e-6);
    }

    #[test]
    fn broken_gradient_is_detected() {
        struct Wrong;
        impl Probe for Wrong {
            fn vars(&self) -> Vec<(String, Tensor<f64>)> {
                vec![("x".into(), Tensor::from_vec(vec![1.0, 2.0]).unwrap())]
            }
            fn value(&mut self, v: &[Tensor<f64>]) -> Result<f64> {
                Ok(v[0].data().iter().map(|x| x * x).sum())
            }
            fn gradient(&mut self, v: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>> {
                Ok(vec![v[0].clone()])
            }
        }
        let r = run_probe("wrong", 0, &mut Wrong, &Tolerance::default()).unwrap();
        assert!(!r.passed);
        assert!((r.max_relative_error - 0.5).abs() < 1e-6);
    }
}
