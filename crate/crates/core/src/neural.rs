//! Direct-sum neural semantics: noun states are free vectors, boxes are
//! small feed-forward maps on the concatenation of their wires' slices,
//! overlap is a dot product, and discarding drops coordinates.
//!
//! Schemas: `Linear` is a single matrix with no bias and no nonlinearity;
//! `Flat` is one affine layer followed by the activation; `Hidden(d1..dn)`
//! stacks `n + 1` such layers with latent width `d_i * dim_per_noun`.
//! Activations are written out directly: `relu(x) = max(0, x)` and the
//! smooth `mish(x) = x * tanh(ln(1 + e^x))`.

use crate::backend::{BackendError, CompiledExample, SemanticBackend};
use crate::ir::{Diagram, Node};
use crate::params::{ParamKey, ParameterStore};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Linear,
    Flat,
    Hidden(Vec<usize>),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Mish,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Mish => x * softplus(x).tanh(),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Mish => {
                let sp = softplus(x);
                let t = sp.tanh();
                let sigma = 1.0 / (1.0 + (-x).exp());
                t + x * (1.0 - t * t) * sigma
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    // Stable ln(1 + e^x).
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub dim: usize,
    pub schema: Schema,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub tie_synonyms: bool,
}

fn default_activation() -> Activation {
    Activation::Mish
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            dim: 12,
            schema: Schema::Flat,
            activation: Activation::Mish,
            tie_synonyms: false,
        }
    }
}

/// Affine-layer chain for a box on `k` wires.
struct NetShape {
    dims: Vec<(usize, usize)>,
    bias: bool,
    act: bool,
}

impl NetShape {
    fn for_box(cfg: &NeuralConfig, wires: usize) -> NetShape {
        let io = wires * cfg.dim;
        match &cfg.schema {
            Schema::Linear => NetShape { dims: vec![(io, io)], bias: false, act: false },
            Schema::Flat => NetShape { dims: vec![(io, io)], bias: true, act: true },
            Schema::Hidden(latent) => {
                let mut dims = Vec::with_capacity(latent.len() + 1);
                let mut prev = io;
                for &h in latent {
                    dims.push((prev, h * cfg.dim));
                    prev = h * cfg.dim;
                }
                dims.push((prev, io));
                NetShape { dims, bias: true, act: true }
            }
        }
    }

    fn param_len(&self) -> usize {
        self.dims
            .iter()
            .map(|(i, o)| i * o + if self.bias { *o } else { 0 })
            .sum()
    }
}

struct BoxCache {
    /// Input to each affine layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each affine layer.
    zs: Vec<Vec<f64>>,
}

fn box_forward(
    shape: &NetShape,
    act: Activation,
    params: &[f64],
    x: &[f64],
) -> (Vec<f64>, BoxCache) {
    let mut inputs = Vec::with_capacity(shape.dims.len());
    let mut zs = Vec::with_capacity(shape.dims.len());
    let mut cur = x.to_vec();
    let mut offset = 0;
    for &(din, dout) in &shape.dims {
        let w = &params[offset..offset + din * dout];
        offset += din * dout;
        let b = if shape.bias {
            let b = &params[offset..offset + dout];
            offset += dout;
            Some(b)
        } else {
            None
        };
        let mut z = vec![0.0; dout];
        for r in 0..dout {
            let row = &w[r * din..(r + 1) * din];
            let mut acc = if let Some(b) = b { b[r] } else { 0.0 };
            for (wv, xv) in row.iter().zip(&cur) {
                acc += wv * xv;
            }
            z[r] = acc;
        }
        inputs.push(cur);
        cur = if shape.act { z.iter().map(|&v| act.apply(v)).collect() } else { z.clone() };
        zs.push(z);
    }
    (cur, BoxCache { inputs, zs })
}

/// Backward through one box: writes parameter gradients into `grad_slice`
/// and returns the gradient at the box input.
fn box_backward(
    shape: &NetShape,
    act: Activation,
    params: &[f64],
    cache: &BoxCache,
    dy: &[f64],
    grad_slice: &mut [f64],
) -> Vec<f64> {
    let mut d = dy.to_vec();
    // Walk affine layers in reverse, tracking each one's parameter offset.
    let mut offsets = Vec::with_capacity(shape.dims.len());
    let mut offset = 0;
    for &(din, dout) in &shape.dims {
        offsets.push(offset);
        offset += din * dout + if shape.bias { dout } else { 0 };
    }
    for (li, &(din, dout)) in shape.dims.iter().enumerate().rev() {
        let z = &cache.zs[li];
        let x = &cache.inputs[li];
        let dz: Vec<f64> = if shape.act {
            d.iter().zip(z).map(|(dv, &zv)| dv * act.derivative(zv)).collect()
        } else {
            d.clone()
        };
        let w = &params[offsets[li]..offsets[li] + din * dout];
        let gw = &mut grad_slice[offsets[li]..offsets[li] + din * dout];
        for r in 0..dout {
            let dzr = dz[r];
            if dzr != 0.0 {
                for c in 0..din {
                    gw[r * din + c] += dzr * x[c];
                }
            }
        }
        if shape.bias {
            let gb = &mut grad_slice[offsets[li] + din * dout..offsets[li] + din * dout + dout];
            for r in 0..dout {
                gb[r] += dz[r];
            }
        }
        let mut dx = vec![0.0; din];
        for r in 0..dout {
            let dzr = dz[r];
            if dzr != 0.0 {
                let row = &w[r * din..(r + 1) * din];
                for c in 0..din {
                    dx[c] += dzr * row[c];
                }
            }
        }
        d = dx;
    }
    d
}

/// Dot product overlap between equal-length vectors.
pub fn comp_overlap(u: &[f64], v: &[f64]) -> Result<f64, BackendError> {
    if u.len() != v.len() {
        return Err(BackendError::LengthMismatch(u.len(), v.len()));
    }
    Ok(u.iter().zip(v).map(|(a, b)| a * b).sum())
}

pub struct NeuralBackend {
    pub cfg: NeuralConfig,
}

struct StoryTrace {
    vector: Vec<f64>,
}

impl NeuralBackend {
    pub fn new(cfg: NeuralConfig) -> Self {
        NeuralBackend { cfg }
    }

    fn forward(
        &self,
        diagram: &Diagram,
        params: &ParameterStore,
    ) -> Result<StoryTrace, BackendError> {
        let d = self.cfg.dim;
        let mut vec = vec![0.0; diagram.wire_count() * d];
        for layer in &diagram.layers {
            match &layer.node {
                Node::Frame(f) => {
                    return Err(BackendError::Ir(crate::ir::IrError::ContainsFrames {
                        word: f.word.clone(),
                    }))
                }
                Node::Box(b) => {
                    if b.adjoint {
                        return Err(BackendError::AdjointUnsupported);
                    }
                    let key = ParamKey::new(&b.word, b.shape.clone());
                    let values = params.get(&key)?;
                    if b.role == crate::ir::BoxRole::NounState {
                        let w = layer.wires[0];
                        vec[w * d..(w + 1) * d].copy_from_slice(values);
                    } else {
                        let shape = NetShape::for_box(&self.cfg, b.shape.len());
                        let x: Vec<f64> = layer
                            .wires
                            .iter()
                            .flat_map(|&w| vec[w * d..(w + 1) * d].iter().copied())
                            .collect();
                        let (y, _) = box_forward(&shape, self.cfg.activation, values, &x);
                        for (j, &w) in layer.wires.iter().enumerate() {
                            vec[w * d..(w + 1) * d].copy_from_slice(&y[j * d..(j + 1) * d]);
                        }
                    }
                }
            }
        }
        Ok(StoryTrace { vector: vec })
    }

    /// The concatenated per-wire vectors after all layers.
    pub fn evaluate_story_vector(
        &self,
        diagram: &Diagram,
        params: &ParameterStore,
    ) -> Result<Vec<f64>, BackendError> {
        Ok(self.forward(diagram, params)?.vector)
    }

    fn question_slice(&self, story: &[f64], wire_map: &[usize; 2]) -> Vec<f64> {
        let d = self.cfg.dim;
        let mut out = Vec::with_capacity(2 * d);
        for &w in wire_map {
            out.extend_from_slice(&story[w * d..(w + 1) * d]);
        }
        out
    }

    /// Backward through a story: `d_vector` is the gradient at the final
    /// story vector; parameter gradients go to `grad` via `layout`.
    fn backward(
        &self,
        diagram: &Diagram,
        params: &ParameterStore,
        mut d_vector: Vec<f64>,
        layout: &HashMap<ParamKey, std::ops::Range<usize>>,
        grad: &mut [f64],
    ) -> Result<(), BackendError> {
        let d = self.cfg.dim;
        // Recompute intermediate slices by replay: store the input of each
        // layer during a fresh forward pass.
        let mut vec = vec![0.0; diagram.wire_count() * d];
        let mut layer_inputs: Vec<Vec<f64>> = Vec::with_capacity(diagram.layers.len());
        for layer in &diagram.layers {
            if let Node::Box(b) = &layer.node {
                let values = params.get(&ParamKey::new(&b.word, b.shape.clone()))?;
                if b.role == crate::ir::BoxRole::NounState {
                    layer_inputs.push(Vec::new());
                    let w = layer.wires[0];
                    vec[w * d..(w + 1) * d].copy_from_slice(values);
                } else {
                    let x: Vec<f64> = layer
                        .wires
                        .iter()
                        .flat_map(|&w| vec[w * d..(w + 1) * d].iter().copied())
                        .collect();
                    layer_inputs.push(x.clone());
                    let shape = NetShape::for_box(&self.cfg, b.shape.len());
                    let (y, _) = box_forward(&shape, self.cfg.activation, values, &x);
                    for (j, &w) in layer.wires.iter().enumerate() {
                        vec[w * d..(w + 1) * d].copy_from_slice(&y[j * d..(j + 1) * d]);
                    }
                }
            }
        }
        for (li, layer) in diagram.layers.iter().enumerate().rev() {
            if let Node::Box(b) = &layer.node {
                let key = params.canonical_key(&ParamKey::new(&b.word, b.shape.clone()));
                let range = layout[&key].clone();
                if b.role == crate::ir::BoxRole::NounState {
                    let w = layer.wires[0];
                    for (i, g) in d_vector[w * d..(w + 1) * d].iter().enumerate() {
                        grad[range.start + i] += g;
                    }
                    // The write overwrote whatever was on the wire before.
                    for v in &mut d_vector[w * d..(w + 1) * d] {
                        *v = 0.0;
                    }
                } else {
                    let values = params.get(&ParamKey::new(&b.word, b.shape.clone()))?;
                    let shape = NetShape::for_box(&self.cfg, b.shape.len());
                    let x = &layer_inputs[li];
                    let (_, cache) = box_forward(&shape, self.cfg.activation, values, x);
                    let dy: Vec<f64> = layer
                        .wires
                        .iter()
                        .flat_map(|&w| d_vector[w * d..(w + 1) * d].iter().copied())
                        .collect();
                    let mut gslice = vec![0.0; values.len()];
                    let dx = box_backward(
                        &shape,
                        self.cfg.activation,
                        values,
                        &cache,
                        &dy,
                        &mut gslice,
                    );
                    for (i, g) in gslice.iter().enumerate() {
                        grad[range.start + i] += g;
                    }
                    for (j, &w) in layer.wires.iter().enumerate() {
                        d_vector[w * d..(w + 1) * d].copy_from_slice(&dx[j * d..(j + 1) * d]);
                    }
                }
            }
        }
        Ok(())
    }
}

impl SemanticBackend for NeuralBackend {
    fn name(&self) -> &'static str {
        "neural"
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::to_value(serde_json::json!({"kind": "neural", "dim": self.cfg.dim,
            "schema": self.cfg.schema, "activation": self.cfg.activation,
            "tie_synonyms": self.cfg.tie_synonyms}))
        .unwrap()
    }

    fn param_len(&self, key: &ParamKey) -> usize {
        if key.shape.len() == 1 && is_noun_key(key) {
            self.cfg.dim
        } else {
            NetShape::for_box(&self.cfg, key.shape.len()).param_len()
        }
    }

    fn init_params(
        &self,
        examples: &[CompiledExample],
        seed: u64,
        tie_synonyms: bool,
    ) -> ParameterStore {
        let mut keys = Vec::new();
        let mut noun_keys = std::collections::BTreeSet::new();
        for ex in examples {
            for diagram in [&ex.story, &ex.yes_assertion, &ex.no_assertion] {
                for layer in &diagram.layers {
                    if let Node::Box(b) = &layer.node {
                        let key = ParamKey::new(&b.word, b.shape.clone());
                        if b.role == crate::ir::BoxRole::NounState {
                            noun_keys.insert(key.clone());
                        }
                        if !keys.contains(&key) {
                            keys.push(key);
                        }
                    }
                }
            }
        }
        let mut store = ParameterStore::new(tie_synonyms);
        let canon: std::collections::BTreeSet<ParamKey> =
            keys.iter().map(|k| store.canonical_key(k)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for key in canon {
            let values = if noun_keys.contains(&key) {
                let bound = 1.0 / (self.cfg.dim as f64).sqrt();
                (0..self.cfg.dim).map(|_| rng.gen_range(-bound..bound)).collect()
            } else {
                let shape = NetShape::for_box(&self.cfg, key.shape.len());
                let mut values = Vec::with_capacity(shape.param_len());
                for &(din, dout) in &shape.dims {
                    let bound = 1.0 / (din as f64).sqrt();
                    for _ in 0..din * dout {
                        values.push(rng.gen_range(-bound..bound));
                    }
                    if shape.bias {
                        values.extend(std::iter::repeat(0.0).take(dout));
                    }
                }
                values
            };
            store.insert(key, values);
        }
        store
    }

    fn overlap_pair(
        &self,
        example: &CompiledExample,
        params: &ParameterStore,
    ) -> Result<(f64, f64), BackendError> {
        let story = self.evaluate_story_vector(&example.story, params)?;
        let slice = self.question_slice(&story, &example.wire_map);
        let a_yes = self.evaluate_story_vector(&example.yes_assertion, params)?;
        let a_no = self.evaluate_story_vector(&example.no_assertion, params)?;
        Ok((comp_overlap(&slice, &a_yes)?, comp_overlap(&slice, &a_no)?))
    }

    fn overlap_pair_grad(
        &self,
        example: &CompiledExample,
        params: &ParameterStore,
        upstream: (f64, f64),
        grad: &mut [f64],
    ) -> Result<(f64, f64), BackendError> {
        let d = self.cfg.dim;
        let layout: HashMap<ParamKey, std::ops::Range<usize>> =
            params.layout().into_iter().collect();
        let story_trace = self.forward(&example.story, params)?;
        let slice = self.question_slice(&story_trace.vector, &example.wire_map);
        let yes_trace = self.forward(&example.yes_assertion, params)?;
        let no_trace = self.forward(&example.no_assertion, params)?;
        let oy = comp_overlap(&slice, &yes_trace.vector)?;
        let on = comp_overlap(&slice, &no_trace.vector)?;

        // d(u.v) = v du + u dv, with u the projected story slice.
        let mut d_story = vec![0.0; story_trace.vector.len()];
        for (j, &w) in example.wire_map.iter().enumerate() {
            for i in 0..d {
                d_story[w * d + i] += upstream.0 * yes_trace.vector[j * d + i]
                    + upstream.1 * no_trace.vector[j * d + i];
            }
        }
        self.backward(&example.story, params, d_story, &layout, grad)?;

        let d_yes: Vec<f64> = slice.iter().map(|&v| upstream.0 * v).collect();
        self.backward(&example.yes_assertion, params, d_yes, &layout, grad)?;
        let d_no: Vec<f64> = slice.iter().map(|&v| upstream.1 * v).collect();
        self.backward(&example.no_assertion, params, d_no, &layout, grad)?;
        Ok((oy, on))
    }
}

/// Noun-state keys are those whose word is not a verb, shell or question
/// word. Decided from the vocabulary plus the shell suffixes.
fn is_noun_key(key: &ParamKey) -> bool {
    let w = key.word.as_str();
    let vocab = crate::grammar::Vocabulary::get();
    if vocab.verb_class(w).is_some() || w == "in" {
        return false;
    }
    if w.ends_with("_top") || w.ends_with("_bot") || w.contains("_mid_") {
        return false;
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{BoxNode, Layer, WireType};

    #[test]
    fn comp_overlap_basics() {
        assert_eq!(comp_overlap(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let u = [3.0, -4.0];
        assert_eq!(comp_overlap(&u, &u).unwrap(), 25.0);
        assert_eq!(comp_overlap(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(), 20.0);
        assert!(comp_overlap(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn linear_box_scales_state() {
        let cfg = NeuralConfig {
            dim: 2,
            schema: Schema::Linear,
            activation: Activation::Relu,
            tie_synonyms: false,
        };
        let backend = NeuralBackend::new(cfg);
        let mut d = Diagram::new(vec![("Andrew".into(), WireType::P)]);
        d.layers.push(Layer {
            node: Node::Box(BoxNode::noun_state("Andrew", WireType::P)),
            wires: vec![0],
        });
        d.layers.push(Layer {
            node: Node::Box(BoxNode::plain("moved", vec![WireType::P])),
            wires: vec![0],
        });
        let mut store = ParameterStore::new(false);
        store.insert(ParamKey::new("Andrew", vec![WireType::P]), vec![1.0, -1.0]);
        // 2x2 matrix = 2*I
        store.insert(ParamKey::new("moved", vec![WireType::P]), vec![2.0, 0.0, 0.0, 2.0]);
        let v = backend.evaluate_story_vector(&d, &store).unwrap();
        assert_eq!(v, vec![2.0, -2.0]);
    }

    #[test]
    fn untouched_wire_slices_pass_through() {
        let cfg = NeuralConfig {
            dim: 2,
            schema: Schema::Linear,
            activation: Activation::Relu,
            tie_synonyms: false,
        };
        let backend = NeuralBackend::new(cfg);
        let mut d = Diagram::new(vec![
            ("Andrew".into(), WireType::P),
            ("park".into(), WireType::L),
            ("milk".into(), WireType::O),
        ]);
        for (w, (name, ty)) in d.nouns.clone().iter().enumerate() {
            d.layers.push(Layer {
                node: Node::Box(BoxNode::noun_state(name.clone(), *ty)),
                wires: vec![w],
            });
        }
        d.layers.push(Layer {
            node: Node::Box(BoxNode::plain("grabbed", vec![WireType::P, WireType::O])),
            wires: vec![0, 2],
        });
        let mut store = ParameterStore::new(false);
        store.insert(ParamKey::new("Andrew", vec![WireType::P]), vec![1.0, 2.0]);
        store.insert(ParamKey::new("park", vec![WireType::L]), vec![5.0, 6.0]);
        store.insert(ParamKey::new("milk", vec![WireType::O]), vec![3.0, 4.0]);
        let mut w = vec![0.0; 16];
        for i in 0..4 {
            w[i * 4 + i] = -1.0;
        }
        store.insert(ParamKey::new("grabbed", vec![WireType::P, WireType::O]), w);
        let v = backend.evaluate_story_vector(&d, &store).unwrap();
        // Wire 1 slice is bit-identical; wires 0 and 2 negated.
        assert_eq!(v, vec![-1.0, -2.0, 5.0, 6.0, -3.0, -4.0]);
    }

    #[test]
    fn empty_layer_list_concatenates_states() {
        let cfg = NeuralConfig { dim: 2, ..NeuralConfig::default() };
        let backend = NeuralBackend::new(cfg);
        let mut d =
            Diagram::new(vec![("Andrew".into(), WireType::P), ("park".into(), WireType::L)]);
        for (w, (name, ty)) in d.nouns.clone().iter().enumerate() {
            d.layers.push(Layer {
                node: Node::Box(BoxNode::noun_state(name.clone(), *ty)),
                wires: vec![w],
            });
        }
        let mut store = ParameterStore::new(false);
        store.insert(ParamKey::new("Andrew", vec![WireType::P]), vec![1.0, 2.0]);
        store.insert(ParamKey::new("park", vec![WireType::L]), vec![3.0, 4.0]);
        let v = backend.evaluate_story_vector(&d, &store).unwrap();
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn mish_matches_definition() {
        for x in [-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let direct = x * ((1.0f64 + x.exp()).ln()).tanh();
            assert!((Activation::Mish.apply(x) - direct).abs() < 1e-12);
        }
    }
}
