//! Minimal feed-forward stack: tanh MLPs with exact analytic gradients,
//! Adam/SGD optimizers, and the two-stage embedding/value composition
//! used by every trained model.
//!
//! Parameters live in one flat `Vec<f64>` per model, embedding weights
//! first, value weights after — freezing the embedding just shrinks the
//! trainable window onto that array. All arithmetic is f64 and every
//! code path is deterministic, which is what lets the acceptance suite
//! compare runs bitwise.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{oracle_bbox, oracle_transform};
use crate::error::{Error, Result};
use crate::geom::Point;

/// Layer sizes of one MLP, input dimension first. Hidden layers apply
/// tanh; the output layer is affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidParameter(
                "an MLP needs at least input and output sizes".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter("zero-width layer".into()));
        }
        Ok(MlpSpec { layer_sizes })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// (weight offset, bias offset, fan_in, fan_out) for layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize, usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.layer_sizes[k] * self.layer_sizes[k + 1] + self.layer_sizes[k + 1];
        }
        let fan_in = self.layer_sizes[l];
        let fan_out = self.layer_sizes[l + 1];
        (off, off + fan_in * fan_out, fan_in, fan_out)
    }
}

/// Glorot-uniform weights (±√(6/(fan_in+fan_out))), zero biases.
pub fn init_params(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut params = vec![0.0; spec.n_params()];
    for l in 0..spec.n_layers() {
        let (w_off, _, fan_in, fan_out) = spec.layer_offsets(l);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut params[w_off..w_off + fan_in * fan_out] {
            *w = rng.gen_range(-limit..limit);
        }
    }
    params
}

/// Post-activation values of every layer, input included; enough to
/// backpropagate (tanh' = 1 − a²).
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

pub fn forward(spec: &MlpSpec, params: &[f64], input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    if input.len() != spec.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has {} components, spec expects {}",
            input.len(),
            spec.input_dim()
        )));
    }
    if params.len() != spec.n_params() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters given, spec needs {}",
            params.len(),
            spec.n_params()
        )));
    }
    let n_layers = spec.n_layers();
    let mut activations = Vec::with_capacity(n_layers + 1);
    activations.push(input.to_vec());
    for l in 0..n_layers {
        let (w_off, b_off, fan_in, fan_out) = spec.layer_offsets(l);
        let prev = &activations[l];
        let mut next = vec![0.0; fan_out];
        for (i, out) in next.iter_mut().enumerate() {
            let row = &params[w_off + i * fan_in..w_off + (i + 1) * fan_in];
            let mut acc = params[b_off + i];
            for (w, a) in row.iter().zip(prev) {
                acc += w * a;
            }
            *out = if l + 1 < n_layers { acc.tanh() } else { acc };
        }
        activations.push(next);
    }
    let output = activations.last().unwrap().clone();
    Ok((output, ForwardCache { activations }))
}

/// Accumulate d(output_grad · output)/d(params) into `param_grad` and
/// return the gradient with respect to the input.
pub fn backward_into(
    spec: &MlpSpec,
    params: &[f64],
    cache: &ForwardCache,
    output_grad: &[f64],
    param_grad: &mut [f64],
) -> Vec<f64> {
    let n_layers = spec.n_layers();
    assert_eq!(cache.activations.len(), n_layers + 1, "stale cache");
    assert_eq!(output_grad.len(), spec.output_dim());
    assert_eq!(param_grad.len(), spec.n_params());

    let mut delta = output_grad.to_vec();
    for l in (0..n_layers).rev() {
        let (w_off, b_off, fan_in, fan_out) = spec.layer_offsets(l);
        let prev = &cache.activations[l];
        let mut input_grad = vec![0.0; fan_in];
        for i in 0..fan_out {
            let d = delta[i];
            param_grad[b_off + i] += d;
            let row_off = w_off + i * fan_in;
            for j in 0..fan_in {
                param_grad[row_off + j] += d * prev[j];
                input_grad[j] += d * params[row_off + j];
            }
        }
        if l > 0 {
            // prev was produced by a tanh hidden layer.
            for (g, a) in input_grad.iter_mut().zip(prev) {
                *g *= 1.0 - a * a;
            }
        }
        delta = input_grad;
    }
    delta
}

/// Fresh (param_grad, input_grad) pair for one backward pass.
pub fn backward(
    spec: &MlpSpec,
    params: &[f64],
    cache: &ForwardCache,
    output_grad: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let mut param_grad = vec![0.0; spec.n_params()];
    let input_grad = backward_into(spec, params, cache, output_grad, &mut param_grad);
    (param_grad, input_grad)
}

/// Fold the affine map `out -> scale ⊙ out + offset` into the network's
/// (affine) output layer, exactly. Used to standardize the range of a
/// trained embedding before freezing it.
pub fn rescale_output_affine(spec: &MlpSpec, params: &mut [f64], scale: &[f64], offset: &[f64]) {
    let last = spec.n_layers() - 1;
    let (w_off, b_off, fan_in, fan_out) = spec.layer_offsets(last);
    assert_eq!(scale.len(), fan_out);
    assert_eq!(offset.len(), fan_out);
    for i in 0..fan_out {
        for w in &mut params[w_off + i * fan_in..w_off + (i + 1) * fan_in] {
            *w *= scale[i];
        }
        params[b_off + i] = scale[i] * params[b_off + i] + offset[i];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub hyper: AdamHyper,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(hyper: AdamHyper, n_params: usize) -> Self {
        AdamState {
            hyper,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any state.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    assert_eq!(params.len(), state.m.len());
    assert_eq!(grad.len(), state.m.len());
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NanGradient);
    }
    state.step += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grad[i];
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok(())
}

/// The optimizers the trainers know about.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn adam(hyper: AdamHyper, n_params: usize) -> Self {
        Optimizer::Adam(AdamState::new(hyper, n_params))
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        match self {
            Optimizer::Adam(state) => adam_step(state, params, grad),
            Optimizer::Sgd { lr } => {
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NanGradient);
                }
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
                Ok(())
            }
        }
    }
}

/// How the first stage of a model turns a map position into the 2-D
/// input of the value network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EmbeddingKind {
    /// No embedding stage: the (normalized) position feeds a trainable
    /// embedding net composed with the value net, all unfrozen.
    #[serde(rename = "none")]
    None,
    /// Hand-designed unfolding of map1, parameterised by alpha.
    #[serde(rename = "oracle")]
    Oracle { alpha: f64 },
    /// Frozen net trained by the time-proximity classifier.
    #[serde(rename = "timeprox")]
    Timeprox,
    /// Frozen net trained on successor-feature targets.
    #[serde(rename = "sf")]
    Sf,
}

impl EmbeddingKind {
    pub fn tag(&self) -> &'static str {
        match self {
            EmbeddingKind::None => "none",
            EmbeddingKind::Oracle { .. } => "oracle",
            EmbeddingKind::Timeprox => "timeprox",
            EmbeddingKind::Sf => "sf",
        }
    }
}

/// A value model: an embedding stage followed by a value MLP, with all
/// parameters in one flat array (embedding first, value after).
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageModel {
    pub map_id: String,
    pub width: f64,
    pub height: f64,
    pub kind: EmbeddingKind,
    /// None exactly when the embedding is the oracle transform.
    pub emb_spec: Option<MlpSpec>,
    /// Frozen embeddings are excluded from the trainable window.
    pub frozen: bool,
    pub value_spec: MlpSpec,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelCache {
    emb: Option<ForwardCache>,
    value: ForwardCache,
}

impl TwoStageModel {
    /// Compose an embedding network with a value head. The embedding
    /// output is fed to the value net as-is (its output layer is affine,
    /// so an identity 2→2 embedding is a true no-op).
    pub fn compose(
        map_id: &str,
        width: f64,
        height: f64,
        kind: EmbeddingKind,
        emb_spec: MlpSpec,
        emb_params: Vec<f64>,
        frozen: bool,
        value_spec: MlpSpec,
        value_params: Vec<f64>,
    ) -> Result<Self> {
        if emb_spec.output_dim() != value_spec.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "embedding outputs {} dims, value net expects {}",
                emb_spec.output_dim(),
                value_spec.input_dim()
            )));
        }
        if emb_params.len() != emb_spec.n_params() || value_params.len() != value_spec.n_params() {
            return Err(Error::DimensionMismatch(
                "parameter count does not match spec".into(),
            ));
        }
        let mut params = emb_params;
        params.extend_from_slice(&value_params);
        Ok(TwoStageModel {
            map_id: map_id.to_string(),
            width,
            height,
            kind,
            emb_spec: Some(emb_spec),
            frozen,
            value_spec,
            params,
        })
    }

    /// Baseline: embedding and value nets composed and trained jointly.
    pub fn baseline(
        map_id: &str,
        width: f64,
        height: f64,
        emb_sizes: &[usize],
        value_sizes: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let emb_spec = MlpSpec::new(emb_sizes.to_vec())?;
        let value_spec = MlpSpec::new(value_sizes.to_vec())?;
        let emb_params = init_params(&emb_spec, rng);
        let value_params = init_params(&value_spec, rng);
        Self::compose(
            map_id,
            width,
            height,
            EmbeddingKind::None,
            emb_spec,
            emb_params,
            false,
            value_spec,
            value_params,
        )
    }

    /// Oracle embedding (map1 only) under a fresh value head.
    pub fn with_oracle(
        map_id: &str,
        width: f64,
        height: f64,
        alpha: f64,
        value_sizes: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if map_id != "map1" {
            return Err(Error::InvalidParameter(format!(
                "the oracle embedding is defined for map1 only, not {map_id}"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!(
                "oracle alpha must be in [0, 1], got {alpha}"
            )));
        }
        let value_spec = MlpSpec::new(value_sizes.to_vec())?;
        if value_spec.input_dim() != 2 {
            return Err(Error::DimensionMismatch(
                "oracle embedding produces 2 dims".into(),
            ));
        }
        let params = init_params(&value_spec, rng);
        Ok(TwoStageModel {
            map_id: map_id.to_string(),
            width,
            height,
            kind: EmbeddingKind::Oracle { alpha },
            emb_spec: None,
            frozen: true,
            value_spec,
            params,
        })
    }

    /// A trained, frozen embedding net under a fresh value head.
    pub fn with_frozen_embedding(
        map_id: &str,
        width: f64,
        height: f64,
        kind: EmbeddingKind,
        emb_spec: MlpSpec,
        emb_params: Vec<f64>,
        value_sizes: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let value_spec = MlpSpec::new(value_sizes.to_vec())?;
        let value_params = init_params(&value_spec, rng);
        Self::compose(
            map_id,
            width,
            height,
            kind,
            emb_spec,
            emb_params,
            true,
            value_spec,
            value_params,
        )
    }

    fn emb_len(&self) -> usize {
        self.emb_spec.as_ref().map(|s| s.n_params()).unwrap_or(0)
    }

    fn normalize(&self, p: Point) -> [f64; 2] {
        [
            2.0 * p.x / self.width - 1.0,
            2.0 * p.y / self.height - 1.0,
        ]
    }

    /// The unfolded plane grows with alpha; normalize by its bounding
    /// box so the value net's inputs stay in [-1, 1]^2. At alpha = 0
    /// this is exactly the standard map normalization.
    fn oracle_features(&self, alpha: f64, s: Point) -> [f64; 2] {
        let t = oracle_transform(alpha, s);
        let bbox = oracle_bbox(alpha);
        [
            2.0 * (t.x - bbox.min.x) / bbox.width() - 1.0,
            2.0 * (t.y - bbox.min.y) / bbox.height() - 1.0,
        ]
    }

    /// 2-D embedding of a map position (the value net's input).
    pub fn embed(&self, s: Point) -> Vec<f64> {
        match (&self.kind, &self.emb_spec) {
            (EmbeddingKind::Oracle { alpha }, _) => self.oracle_features(*alpha, s).to_vec(),
            (_, Some(spec)) => {
                let input = self.normalize(s);
                forward(spec, &self.params[..self.emb_len()], &input)
                    .expect("embedding spec/params are validated on construction")
                    .0
            }
            (_, None) => unreachable!("non-oracle model without embedding net"),
        }
    }

    pub fn predict(&self, s: Point) -> f64 {
        self.predict_cached(s).0
    }

    pub fn predict_cached(&self, s: Point) -> (f64, ModelCache) {
        let (emb_out, emb_cache) = match (&self.kind, &self.emb_spec) {
            (EmbeddingKind::Oracle { alpha }, _) => {
                (self.oracle_features(*alpha, s).to_vec(), None)
            }
            (_, Some(spec)) => {
                let input = self.normalize(s);
                let (out, cache) = forward(spec, &self.params[..self.emb_len()], &input)
                    .expect("embedding spec/params are validated on construction");
                (out, Some(cache))
            }
            (_, None) => unreachable!("non-oracle model without embedding net"),
        };
        let (out, value_cache) = forward(&self.value_spec, &self.params[self.emb_len()..], &emb_out)
            .expect("value spec/params are validated on construction");
        (
            out[0],
            ModelCache {
                emb: emb_cache,
                value: value_cache,
            },
        )
    }

    pub fn n_trainable(&self) -> usize {
        if self.frozen {
            self.value_spec.n_params()
        } else {
            self.params.len()
        }
    }

    pub fn trainable_mut(&mut self) -> &mut [f64] {
        let start = if self.frozen { self.emb_len() } else { 0 };
        &mut self.params[start..]
    }

    /// Accumulate `dout * d(prediction)/d(trainable params)` into `grad`.
    /// When the embedding is frozen the chain rule stops at the value
    /// net's input, which is exactly the semi-two-stage training scheme.
    pub fn backward(&self, cache: &ModelCache, dout: f64, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.n_trainable());
        let emb_len = self.emb_len();
        let value_grad_off = if self.frozen { 0 } else { emb_len };
        let input_grad = backward_into(
            &self.value_spec,
            &self.params[emb_len..],
            &cache.value,
            &[dout],
            &mut grad[value_grad_off..],
        );
        if !self.frozen {
            if let (Some(spec), Some(emb_cache)) = (&self.emb_spec, &cache.emb) {
                backward_into(
                    spec,
                    &self.params[..emb_len],
                    emb_cache,
                    &input_grad,
                    &mut grad[..emb_len],
                );
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&ModelFile::from(self))?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        file.into_model()
    }
}

/// On-disk form: layer sizes, activation tag, frozen/trainable split,
/// flat parameter arrays in full double precision.
#[derive(Debug, Serialize, Deserialize)]
pub struct ModelFile {
    pub map_id: String,
    pub width: f64,
    pub height: f64,
    pub mode: String,
    pub activation: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding: Option<StageFile>,
    pub value: StageFile,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StageFile {
    pub layer_sizes: Vec<usize>,
    pub frozen: bool,
    pub params: Vec<f64>,
}

impl From<&TwoStageModel> for ModelFile {
    fn from(m: &TwoStageModel) -> Self {
        let emb_len = m.emb_len();
        ModelFile {
            map_id: m.map_id.clone(),
            width: m.width,
            height: m.height,
            mode: m.kind.tag().to_string(),
            activation: "tanh".to_string(),
            oracle_alpha: match m.kind {
                EmbeddingKind::Oracle { alpha } => Some(alpha),
                _ => None,
            },
            embedding: m.emb_spec.as_ref().map(|spec| StageFile {
                layer_sizes: spec.layer_sizes.clone(),
                frozen: m.frozen,
                params: m.params[..emb_len].to_vec(),
            }),
            value: StageFile {
                layer_sizes: m.value_spec.layer_sizes.clone(),
                frozen: false,
                params: m.params[emb_len..].to_vec(),
            },
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<TwoStageModel> {
        let value_spec = MlpSpec::new(self.value.layer_sizes.clone())?;
        if self.value.params.len() != value_spec.n_params() {
            return Err(Error::DimensionMismatch(
                "value parameter count does not match layer sizes".into(),
            ));
        }
        match self.mode.as_str() {
            "oracle" => {
                let alpha = self.oracle_alpha.ok_or_else(|| {
                    Error::Parse {
                        what: "model file".into(),
                        detail: "oracle mode without oracle_alpha".into(),
                    }
                })?;
                Ok(TwoStageModel {
                    map_id: self.map_id,
                    width: self.width,
                    height: self.height,
                    kind: EmbeddingKind::Oracle { alpha },
                    emb_spec: None,
                    frozen: true,
                    value_spec,
                    params: self.value.params,
                })
            }
            mode @ ("none" | "timeprox" | "sf") => {
                let emb = self.embedding.ok_or_else(|| Error::Parse {
                    what: "model file".into(),
                    detail: format!("mode {mode} requires an embedding net"),
                })?;
                let emb_spec = MlpSpec::new(emb.layer_sizes.clone())?;
                if emb.params.len() != emb_spec.n_params() {
                    return Err(Error::DimensionMismatch(
                        "embedding parameter count does not match layer sizes".into(),
                    ));
                }
                let kind = match mode {
                    "none" => EmbeddingKind::None,
                    "timeprox" => EmbeddingKind::Timeprox,
                    _ => EmbeddingKind::Sf,
                };
                TwoStageModel::compose(
                    &self.map_id,
                    self.width,
                    self.height,
                    kind,
                    emb_spec,
                    emb.params,
                    emb.frozen,
                    value_spec,
                    self.value.params,
                )
            }
            other => Err(Error::Parse {
                what: "model file".into(),
                detail: format!("unknown mode `{other}`"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = MlpSpec::new(vec![2, 4, 3]).unwrap();
        let params = vec![0.0; spec.n_params()];
        let (out, _) = forward(&spec, &params, &[0.3, -0.7]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_affine_layer() {
        let spec = MlpSpec::new(vec![2, 1]).unwrap();
        // Layout: weights (a, b) then bias (c).
        let params = vec![1.5, -2.0, 0.25];
        let (out, _) = forward(&spec, &params, &[3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(out[0], 1.5 * 3.0 - 2.0 * 4.0 + 0.25, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let spec = MlpSpec::new(vec![2, 1]).unwrap();
        let params = vec![0.0; spec.n_params()];
        assert!(forward(&spec, &params, &[1.0, 2.0, 3.0]).is_err());
        assert!(forward(&spec, &params[..2], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn output_bounded_by_final_affine_layer() {
        // Hidden activations are tanh-bounded, so for every input
        // |out_i| <= sum_j |W_ij| + |b_i| on the last layer.
        let spec = MlpSpec::new(vec![2, 20, 20, 20, 2]).unwrap();
        let mut r = rng(42);
        let params = init_params(&spec, &mut r);
        let (w_off, b_off, fan_in, fan_out) = spec.layer_offsets(spec.n_layers() - 1);
        let bounds: Vec<f64> = (0..fan_out)
            .map(|i| {
                params[w_off + i * fan_in..w_off + (i + 1) * fan_in]
                    .iter()
                    .map(|w| w.abs())
                    .sum::<f64>()
                    + params[b_off + i].abs()
            })
            .collect();
        for _ in 0..200 {
            let input = [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)];
            let (out, _) = forward(&spec, &params, &input).unwrap();
            for (o, b) in out.iter().zip(&bounds) {
                assert!(o.is_finite() && o.abs() <= b + 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let spec = MlpSpec::new(vec![2, 8, 1]).unwrap();
        let mut r = rng(3);
        let params = init_params(&spec, &mut r);
        let a = forward(&spec, &params, &[0.2, -0.4]).unwrap().0;
        let b = forward(&spec, &params, &[0.2, -0.4]).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_match_central_differences() {
        let shapes: [&[usize]; 3] = [&[2, 3, 1], &[3, 5, 4, 2], &[1, 4, 1]];
        let mut r = rng(7);
        for sizes in shapes {
            let spec = MlpSpec::new(sizes.to_vec()).unwrap();
            let mut params = init_params(&spec, &mut r);
            for p in params.iter_mut() {
                *p += r.gen_range(-0.1..0.1);
            }
            let input: Vec<f64> = (0..spec.input_dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
            let out_grad: Vec<f64> = (0..spec.output_dim()).map(|_| r.gen_range(-1.0..1.0)).collect();

            let (_, cache) = forward(&spec, &params, &input).unwrap();
            let (pgrad, igrad) = backward(&spec, &params, &cache, &out_grad);

            let scalar = |params: &[f64], input: &[f64]| -> f64 {
                let (out, _) = forward(&spec, params, input).unwrap();
                out.iter().zip(&out_grad).map(|(o, g)| o * g).sum()
            };
            let h = 1e-5;
            for i in 0..params.len() {
                let mut pp = params.clone();
                let mut pm = params.clone();
                pp[i] += h;
                pm[i] -= h;
                let fd = (scalar(&pp, &input) - scalar(&pm, &input)) / (2.0 * h);
                let denom = fd.abs().max(pgrad[i].abs()).max(1e-6);
                assert!(
                    (fd - pgrad[i]).abs() / denom < 1e-4,
                    "param {i}: fd {fd} vs analytic {}",
                    pgrad[i]
                );
            }
            for j in 0..input.len() {
                let mut ip = input.clone();
                let mut im = input.clone();
                ip[j] += h;
                im[j] -= h;
                let fd = (scalar(&params, &ip) - scalar(&params, &im)) / (2.0 * h);
                let denom = fd.abs().max(igrad[j].abs()).max(1e-6);
                assert!((fd - igrad[j]).abs() / denom < 1e-4);
            }
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grad() {
        let spec = MlpSpec::new(vec![2, 6, 2]).unwrap();
        let mut r = rng(9);
        let params = init_params(&spec, &mut r);
        let (_, cache) = forward(&spec, &params, &[0.5, 0.5]).unwrap();
        let (pgrad, igrad) = backward(&spec, &params, &cache, &[0.0, 0.0]);
        assert!(pgrad.iter().all(|&g| g == 0.0));
        assert!(igrad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_net_weight_gradient_is_the_input() {
        let spec = MlpSpec::new(vec![3, 1]).unwrap();
        let params = vec![0.1, 0.2, 0.3, 0.0];
        let input = [2.0, -1.0, 0.5];
        let (_, cache) = forward(&spec, &params, &input).unwrap();
        let (pgrad, _) = backward(&spec, &params, &cache, &[1.0]);
        assert_eq!(&pgrad[..3], &input);
        assert_eq!(pgrad[3], 1.0); // bias
    }

    #[test]
    fn adam_first_step_closed_form() {
        let hyper = AdamHyper::default();
        let mut state = AdamState::new(hyper, 3);
        let mut params = vec![1.0, -2.0, 0.0];
        let grad = vec![0.5, -0.25, 3.0];
        adam_step(&mut state, &mut params, &grad).unwrap();
        for ((p, p0), g) in params.iter().zip(&[1.0, -2.0, 0.0]).zip(&grad) {
            let expected = p0 - hyper.lr * g / (g.abs() + hyper.eps);
            assert_abs_diff_eq!(*p, expected, epsilon = 1e-12);
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn adam_zero_grad_leaves_params_unchanged() {
        let mut state = AdamState::new(AdamHyper::default(), 2);
        let mut params = vec![0.7, -0.3];
        for _ in 0..50 {
            adam_step(&mut state, &mut params, &[0.0, 0.0]).unwrap();
        }
        assert_eq!(params, vec![0.7, -0.3]);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut state = AdamState::new(AdamHyper::default(), 1);
        let mut params = vec![0.0];
        assert!(adam_step(&mut state, &mut params, &[f64::NAN]).is_err());
    }

    #[test]
    fn identity_embedding_composes_to_value_net_alone() {
        let emb_spec = MlpSpec::new(vec![2, 2]).unwrap();
        // Identity weights, zero bias: W = I.
        let emb_params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let value_spec = MlpSpec::new(vec![2, 30, 30, 1]).unwrap();
        let mut r = rng(13);
        let value_params = init_params(&value_spec, &mut r);
        let model = TwoStageModel::compose(
            "map1",
            400.0,
            300.0,
            EmbeddingKind::None,
            emb_spec,
            emb_params,
            false,
            value_spec.clone(),
            value_params.clone(),
        )
        .unwrap();
        for s in [Point::new(10.0, 20.0), Point::new(350.0, 280.0)] {
            let normalized = model.normalize(s);
            let direct = forward(&value_spec, &value_params, &normalized).unwrap().0[0];
            assert_abs_diff_eq!(model.predict(s), direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn baseline_equals_hand_built_stack() {
        // The unfrozen composition is one deterministic affine chain with
        // activation pattern (tanh, tanh, tanh, identity, tanh, tanh,
        // identity); rebuild it by hand and compare.
        let mut r = rng(31);
        let model = TwoStageModel::baseline(
            "map1",
            400.0,
            300.0,
            &[2, 20, 20, 20, 2],
            &[2, 30, 30, 1],
            &mut r,
        )
        .unwrap();
        let sizes = [2usize, 20, 20, 20, 2, 30, 30, 1];
        let tanh_after = [true, true, true, false, true, true, false];
        for s in [Point::new(123.0, 45.0), Point::new(399.0, 299.0)] {
            let mut act: Vec<f64> = model.normalize(s).to_vec();
            let mut off = 0;
            for l in 0..7 {
                let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
                let w = &model.params[off..off + fan_in * fan_out];
                let b = &model.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
                let mut next = vec![0.0; fan_out];
                for i in 0..fan_out {
                    let mut acc = b[i];
                    for j in 0..fan_in {
                        acc += w[i * fan_in + j] * act[j];
                    }
                    next[i] = if tanh_after[l] { acc.tanh() } else { acc };
                }
                act = next;
                off += fan_in * fan_out + fan_out;
            }
            assert_abs_diff_eq!(model.predict(s), act[0], epsilon = 1e-13);
        }
    }

    #[test]
    fn frozen_embedding_is_not_trainable() {
        let mut r = rng(17);
        let emb_spec = MlpSpec::new(vec![2, 20, 20, 20, 2]).unwrap();
        let emb_params = init_params(&emb_spec, &mut r);
        let model = TwoStageModel::with_frozen_embedding(
            "map2",
            400.0,
            300.0,
            EmbeddingKind::Sf,
            emb_spec.clone(),
            emb_params.clone(),
            &[2, 30, 30, 1],
            &mut r,
        )
        .unwrap();
        assert_eq!(model.n_trainable(), model.value_spec.n_params());

        // The gradient never touches embedding coordinates: the trainable
        // window starts after them, and `backward` writes only into it.
        let (_, cache) = model.predict_cached(Point::new(100.0, 100.0));
        let mut grad = vec![0.0; model.n_trainable()];
        model.backward(&cache, 1.0, &mut grad);
        assert!(grad.iter().any(|&g| g != 0.0));
        assert_eq!(&model.params[..emb_spec.n_params()], &emb_params[..]);
    }

    #[test]
    fn unfrozen_composition_gradient_matches_finite_differences() {
        let mut r = rng(23);
        let mut model = TwoStageModel::baseline(
            "map1",
            400.0,
            300.0,
            &[2, 5, 2],
            &[2, 4, 1],
            &mut r,
        )
        .unwrap();
        let s = Point::new(222.0, 111.0);
        let (_, cache) = model.predict_cached(s);
        let mut grad = vec![0.0; model.n_trainable()];
        model.backward(&cache, 1.0, &mut grad);
        let h = 1e-6;
        for i in 0..model.params.len() {
            let orig = model.params[i];
            model.params[i] = orig + h;
            let up = model.predict(s);
            model.params[i] = orig - h;
            let down = model.predict(s);
            model.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() < 1e-4 * fd.abs().max(1.0),
                "param {i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn oracle_mode_requires_map1() {
        let mut r = rng(2);
        assert!(TwoStageModel::with_oracle("map2", 400.0, 300.0, 1.0, &[2, 30, 30, 1], &mut r).is_err());
        assert!(TwoStageModel::with_oracle("map1", 400.0, 300.0, 1.0, &[2, 30, 30, 1], &mut r).is_ok());
    }

    #[test]
    fn model_file_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = rng(5);
        let model = TwoStageModel::baseline(
            "map3",
            400.0,
            300.0,
            &[2, 20, 20, 20, 2],
            &[2, 30, 30, 1],
            &mut r,
        )
        .unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = TwoStageModel::load(&path).unwrap();
        assert_eq!(loaded, model);

        let oracle =
            TwoStageModel::with_oracle("map1", 400.0, 300.0, 0.5, &[2, 30, 30, 1], &mut r).unwrap();
        oracle.save(&path).unwrap();
        assert_eq!(TwoStageModel::load(&path).unwrap(), oracle);
    }
}
