//! Quantum semantics: one qubit per noun, boxes as parametrized unitaries,
//! assertion overlaps via reduced density matrices.
//!
//! Single-wire boxes use the Euler parametrization `Rz(a) Rx(b) Rz(c)`
//! (three parameters, fully expressive up to phase). Multi-wire boxes use
//! stacked layers of the Sim circuit-4 ansatz: a wall of `Rx` rotations, a
//! wall of `Rz` rotations, then a descending cascade of controlled-`Rx`
//! gates, `3k - 1` parameters per layer on `k` qubits.
//!
//! States are unitaries applied to `|0...0>`. Discarding is a partial
//! trace: an assertion is scored as `<a| rho |a>` with `rho` the story
//! state reduced to the question wires. Gradients are computed in reverse
//! mode by an adjoint sweep over the layer sequence; finite differences are
//! only ever a test oracle.

use crate::backend::{BackendError, CompiledExample, SemanticBackend};
use crate::ir::{Diagram, Node};
use crate::params::{ParamError, ParamKey, ParameterStore};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct QuantumConfig {
    /// Fixed to 1 in this version.
    #[serde(default = "default_qubits_per_noun")]
    pub qubits_per_noun: usize,
    /// Sim4 layers stacked per multi-wire box.
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Share parameters across oracle synonym classes.
    #[serde(default)]
    pub tie_synonyms: bool,
}

fn default_qubits_per_noun() -> usize {
    1
}

fn default_layers() -> usize {
    3
}

impl Default for QuantumConfig {
    fn default() -> Self {
        QuantumConfig { qubits_per_noun: 1, layers: 3, tie_synonyms: false }
    }
}

/// Dense complex square matrix, row-major.
#[derive(Clone, PartialEq, Debug)]
pub struct CMat {
    pub dim: usize,
    pub a: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(dim: usize) -> CMat {
        CMat { dim, a: vec![ZERO; dim * dim] }
    }

    pub fn identity(dim: usize) -> CMat {
        let mut m = CMat::zeros(dim);
        for i in 0..dim {
            m.a[i * dim + i] = ONE;
        }
        m
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.a[r * self.dim + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.a[r * self.dim + c] = v;
    }

    pub fn mul(&self, rhs: &CMat) -> CMat {
        debug_assert_eq!(self.dim, rhs.dim);
        let d = self.dim;
        let mut out = CMat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let v = self.a[i * d + k];
                if v == ZERO {
                    continue;
                }
                for j in 0..d {
                    out.a[i * d + j] += v * rhs.a[k * d + j];
                }
            }
        }
        out
    }

    pub fn dagger(&self) -> CMat {
        let d = self.dim;
        let mut out = CMat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.a[j * d + i] = self.a[i * d + j].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.a[i * self.dim + i]).sum()
    }

    pub fn matvec(&self, v: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(v.len(), self.dim);
        let d = self.dim;
        let mut out = vec![ZERO; d];
        for i in 0..d {
            let mut acc = ZERO;
            for j in 0..d {
                acc += self.a[i * d + j] * v[j];
            }
            out[i] = acc;
        }
        out
    }
}

fn rz(theta: f64) -> CMat {
    let h = theta / 2.0;
    let mut m = CMat::zeros(2);
    m.set(0, 0, Complex64::from_polar(1.0, -h));
    m.set(1, 1, Complex64::from_polar(1.0, h));
    m
}

fn drz(theta: f64) -> CMat {
    let h = theta / 2.0;
    let i = Complex64::new(0.0, 1.0);
    let mut m = CMat::zeros(2);
    m.set(0, 0, -i / 2.0 * Complex64::from_polar(1.0, -h));
    m.set(1, 1, i / 2.0 * Complex64::from_polar(1.0, h));
    m
}

fn rx(theta: f64) -> CMat {
    let h = theta / 2.0;
    let (s, c) = h.sin_cos();
    let mi = Complex64::new(0.0, -1.0);
    let mut m = CMat::zeros(2);
    m.set(0, 0, Complex64::new(c, 0.0));
    m.set(0, 1, mi * s);
    m.set(1, 0, mi * s);
    m.set(1, 1, Complex64::new(c, 0.0));
    m
}

fn drx(theta: f64) -> CMat {
    let h = theta / 2.0;
    let (s, c) = h.sin_cos();
    let mi = Complex64::new(0.0, -1.0);
    let mut m = CMat::zeros(2);
    m.set(0, 0, Complex64::new(-s / 2.0, 0.0));
    m.set(0, 1, mi * (c / 2.0));
    m.set(1, 0, mi * (c / 2.0));
    m.set(1, 1, Complex64::new(-s / 2.0, 0.0));
    m
}

/// One elementary parametrized gate acting on local qubits of a box.
struct Gate {
    /// Local qubit indices, most significant first.
    qubits: Vec<usize>,
    mat: CMat,
    /// Derivative in the gate's angle, when parametrized.
    dmat: Option<CMat>,
}

/// Embeds a gate on `qubits` (subset of `0..k`) into a `2^k` dense matrix.
fn embed(gate: &CMat, qubits: &[usize], k: usize) -> CMat {
    let dim = 1usize << k;
    let g = qubits.len();
    let mut out = CMat::zeros(dim);
    // Position of each local gate qubit inside the k-qubit index.
    let shifts: Vec<usize> = qubits.iter().map(|&q| k - 1 - q).collect();
    let gate_mask: usize = shifts.iter().map(|&s| 1usize << s).sum();
    for row_rest in 0..dim {
        if row_rest & gate_mask != 0 {
            continue;
        }
        for gr in 0..(1 << g) {
            let mut row = row_rest;
            for (j, &s) in shifts.iter().enumerate() {
                if (gr >> (g - 1 - j)) & 1 == 1 {
                    row |= 1 << s;
                }
            }
            for gc in 0..(1 << g) {
                let v = gate.get(gr, gc);
                if v == ZERO {
                    continue;
                }
                let mut col = row_rest;
                for (j, &s) in shifts.iter().enumerate() {
                    if (gc >> (g - 1 - j)) & 1 == 1 {
                        col |= 1 << s;
                    }
                }
                out.set(row, col, v);
            }
        }
    }
    out
}

fn crx_gate(theta: f64) -> (CMat, CMat) {
    // Control is the first (most significant) local qubit.
    let r = rx(theta);
    let dr = drx(theta);
    let mut m = CMat::identity(4);
    let mut dm = CMat::zeros(4);
    for i in 0..2 {
        for j in 0..2 {
            m.set(2 + i, 2 + j, r.get(i, j));
            dm.set(2 + i, 2 + j, dr.get(i, j));
        }
    }
    (m, dm)
}

/// Number of parameters for a box over `k` wires.
pub fn param_count(k: usize, layers: usize) -> usize {
    if k == 1 {
        3
    } else {
        layers * (3 * k - 1)
    }
}

fn gate_sequence(k: usize, layers: usize, params: &[f64]) -> Vec<Gate> {
    let mut gates = Vec::new();
    if k == 1 {
        gates.push(Gate { qubits: vec![0], mat: rz(params[0]), dmat: Some(drz(params[0])) });
        gates.push(Gate { qubits: vec![0], mat: rx(params[1]), dmat: Some(drx(params[1])) });
        gates.push(Gate { qubits: vec![0], mat: rz(params[2]), dmat: Some(drz(params[2])) });
        return gates;
    }
    let per_layer = 3 * k - 1;
    for layer in 0..layers {
        let p = &params[layer * per_layer..(layer + 1) * per_layer];
        for q in 0..k {
            gates.push(Gate { qubits: vec![q], mat: rx(p[q]), dmat: Some(drx(p[q])) });
        }
        for q in 0..k {
            gates.push(Gate { qubits: vec![q], mat: rz(p[k + q]), dmat: Some(drz(p[k + q])) });
        }
        // Controlled-Rx cascade from the bottom of the register upward.
        for (c, i) in (0..k - 1).rev().enumerate() {
            let (m, dm) = crx_gate(p[2 * k + c]);
            gates.push(Gate { qubits: vec![i + 1, i], mat: m, dmat: Some(dm) });
        }
    }
    gates
}

/// A box unitary together with its per-parameter derivatives.
pub struct BoxUnitary {
    pub u: CMat,
    pub du: Vec<CMat>,
}

/// Builds the dense unitary for a `k`-wire box: Euler for `k = 1`, stacked
/// Sim4 layers otherwise.
pub fn box_unitary(k: usize, layers: usize, params: &[f64]) -> Result<BoxUnitary, ParamError> {
    let expected = param_count(k, layers);
    if params.len() != expected {
        return Err(ParamError::WrongParamLength {
            key: ParamKey::new("<box>", vec![]),
            expected,
            got: params.len(),
        });
    }
    let gates = gate_sequence(k, layers, params);
    let dim = 1usize << k;
    let embedded: Vec<CMat> = gates.iter().map(|g| embed(&g.mat, &g.qubits, k)).collect();
    // prefix[j] = G_j ... G_1, suffix[j] = G_m ... G_{j+1}
    let m = gates.len();
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(CMat::identity(dim));
    for g in &embedded {
        let last = prefix.last().unwrap();
        prefix.push(g.mul(last));
    }
    let mut suffix = vec![CMat::identity(dim); m + 1];
    for j in (0..m).rev() {
        suffix[j] = suffix[j + 1].mul(&embedded[j]);
    }
    let u = prefix[m].clone();
    let mut du = Vec::new();
    for (j, gate) in gates.iter().enumerate() {
        if let Some(dmat) = &gate.dmat {
            let dg = embed(dmat, &gate.qubits, k);
            du.push(suffix[j + 1].mul(&dg).mul(&prefix[j]));
        }
    }
    Ok(BoxUnitary { u, du })
}

/// Statevector over the noun wires; wire 0 is the most significant bit.
#[derive(Clone, PartialEq, Debug)]
pub struct StateVector {
    pub n: usize,
    pub amps: Vec<Complex64>,
}

impl StateVector {
    pub fn zero_state(n: usize) -> StateVector {
        let mut amps = vec![ZERO; 1 << n];
        amps[0] = ONE;
        StateVector { n, amps }
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }
}

fn wire_masks(wires: &[usize], n: usize) -> Vec<usize> {
    wires.iter().map(|&w| 1usize << (n - 1 - w)).collect()
}

fn local_patterns(masks: &[usize]) -> Vec<usize> {
    let k = masks.len();
    (0..(1usize << k))
        .map(|l| {
            let mut p = 0;
            for (j, &m) in masks.iter().enumerate() {
                if (l >> (k - 1 - j)) & 1 == 1 {
                    p |= m;
                }
            }
            p
        })
        .collect()
}

/// Applies a dense `2^k` unitary to the statevector on the given wires.
pub fn apply_dense(state: &mut StateVector, u: &CMat, wires: &[usize]) {
    let n = state.n;
    let k = wires.len();
    debug_assert_eq!(u.dim, 1 << k);
    let masks = wire_masks(wires, n);
    let gate_mask: usize = masks.iter().sum();
    let patterns = local_patterns(&masks);
    let dim = 1usize << n;
    let kd = 1usize << k;
    let mut buf = vec![ZERO; kd];
    for base in 0..dim {
        if base & gate_mask != 0 {
            continue;
        }
        for (l, &p) in patterns.iter().enumerate() {
            buf[l] = state.amps[base | p];
        }
        for (r, &p) in patterns.iter().enumerate() {
            let mut acc = ZERO;
            for c in 0..kd {
                acc += u.a[r * kd + c] * buf[c];
            }
            state.amps[base | p] = acc;
        }
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// `lambda = |a>_wires <a|_wires psi`: the projector onto the local state
/// `a` on `wires`, applied to `psi`.
fn project_onto(state: &StateVector, a: &[Complex64], wires: &[usize]) -> StateVector {
    let n = state.n;
    let masks = wire_masks(wires, n);
    let gate_mask: usize = masks.iter().sum();
    let patterns = local_patterns(&masks);
    let dim = 1usize << n;
    let mut out = StateVector { n, amps: vec![ZERO; dim] };
    for base in 0..dim {
        if base & gate_mask != 0 {
            continue;
        }
        let mut s = ZERO;
        for (l, &p) in patterns.iter().enumerate() {
            s += a[l].conj() * state.amps[base | p];
        }
        for (l, &p) in patterns.iter().enumerate() {
            out.amps[base | p] = a[l] * s;
        }
    }
    out
}

/// Density matrix of `state` reduced to `keep` wires (in the given order),
/// tracing out everything else.
pub fn reduced_density(state: &StateVector, keep: &[usize]) -> CMat {
    let n = state.n;
    let k = keep.len();
    let masks = wire_masks(keep, n);
    let keep_mask: usize = masks.iter().sum();
    let patterns = local_patterns(&masks);
    let dim = 1usize << n;
    let kd = 1usize << k;
    let mut rho = CMat::zeros(kd);
    let mut buf = vec![ZERO; kd];
    for base in 0..dim {
        if base & keep_mask != 0 {
            continue;
        }
        for (l, &p) in patterns.iter().enumerate() {
            buf[l] = state.amps[base | p];
        }
        for r in 0..kd {
            for c in 0..kd {
                rho.a[r * kd + c] += buf[r] * buf[c].conj();
            }
        }
    }
    rho
}

pub struct QuantumBackend {
    pub cfg: QuantumConfig,
}

impl QuantumBackend {
    pub fn new(cfg: QuantumConfig) -> Self {
        QuantumBackend { cfg }
    }

    fn unitaries<'a>(
        &self,
        diagram: &'a Diagram,
        params: &ParameterStore,
        cache: &'a mut HashMap<ParamKey, BoxUnitary>,
    ) -> Result<(), BackendError> {
        for layer in &diagram.layers {
            let key = ParamKey::new(layer.node.word(), layer.node.shape().to_vec());
            let canon = params.canonical_key(&key);
            if !cache.contains_key(&canon) {
                let values = params.get(&key)?;
                let bu = box_unitary(key.shape.len(), self.cfg.layers, values).map_err(|e| {
                    match e {
                        ParamError::WrongParamLength { expected, got, .. } => {
                            BackendError::Params(ParamError::WrongParamLength {
                                key: canon.clone(),
                                expected,
                                got,
                            })
                        }
                        other => BackendError::Params(other),
                    }
                })?;
                cache.insert(canon, bu);
            }
        }
        Ok(())
    }

    /// Amplitudes of the diagram's layers applied in order to `|0...0>`.
    pub fn evaluate_story(
        &self,
        diagram: &Diagram,
        params: &ParameterStore,
    ) -> Result<StateVector, BackendError> {
        let mut cache = HashMap::new();
        self.unitaries(diagram, params, &mut cache)?;
        let mut state = StateVector::zero_state(diagram.wire_count());
        for layer in &diagram.layers {
            let key = params.canonical_key(&ParamKey::new(
                layer.node.word(),
                layer.node.shape().to_vec(),
            ));
            let bu = &cache[&key];
            let adjoint = matches!(&layer.node, Node::Box(b) if b.adjoint);
            if adjoint {
                apply_dense(&mut state, &bu.u.dagger(), &layer.wires);
            } else {
                apply_dense(&mut state, &bu.u, &layer.wires);
            }
        }
        Ok(state)
    }

    /// `<a| rho |a>` with `rho` the story state reduced to the mapped wires
    /// and `|a>` the assertion circuit's state.
    pub fn assertion_overlap(
        &self,
        story_state: &StateVector,
        assertion: &Diagram,
        wire_map: &[usize],
        params: &ParameterStore,
    ) -> Result<f64, BackendError> {
        check_wire_map(wire_map, story_state.n, assertion.wire_count())?;
        let a = self.evaluate_story(assertion, params)?;
        let rho = reduced_density(story_state, wire_map);
        let ra = rho.matvec(&a.amps);
        Ok(inner(&a.amps, &ra).re)
    }

    /// Gradient of `<psi| P |psi>`-type observables via one backward sweep.
    /// `bra` must hold `sum_i upstream_i M_i |psi>` for the final `psi`.
    fn adjoint_sweep(
        &self,
        diagram: &Diagram,
        params: &ParameterStore,
        final_state: &StateVector,
        bra: StateVector,
        layout: &HashMap<ParamKey, std::ops::Range<usize>>,
        grad: &mut [f64],
    ) -> Result<(), BackendError> {
        let mut cache = HashMap::new();
        self.unitaries(diagram, params, &mut cache)?;
        let mut ket = final_state.clone();
        let mut bra = bra;
        for layer in diagram.layers.iter().rev() {
            let key = params.canonical_key(&ParamKey::new(
                layer.node.word(),
                layer.node.shape().to_vec(),
            ));
            let bu = &cache[&key];
            let adjoint = matches!(&layer.node, Node::Box(b) if b.adjoint);
            let u = if adjoint { bu.u.dagger() } else { bu.u.clone() };
            let udag = u.dagger();
            apply_dense(&mut ket, &udag, &layer.wires);
            let range = layout[&key].clone();
            for (i, du) in bu.du.iter().enumerate() {
                let dmat = if adjoint { du.dagger() } else { du.clone() };
                let mut t = ket.clone();
                apply_dense(&mut t, &dmat, &layer.wires);
                grad[range.start + i] += 2.0 * inner(&bra.amps, &t.amps).re;
            }
            apply_dense(&mut bra, &udag, &layer.wires);
        }
        Ok(())
    }
}

fn check_wire_map(wire_map: &[usize], n: usize, assertion_wires: usize) -> Result<(), BackendError> {
    let distinct = wire_map.iter().collect::<std::collections::HashSet<_>>().len() == wire_map.len();
    if wire_map.len() != assertion_wires || !distinct || wire_map.iter().any(|&w| w >= n) {
        return Err(BackendError::WireMapInvalid(wire_map.to_vec(), n));
    }
    Ok(())
}

impl SemanticBackend for QuantumBackend {
    fn name(&self) -> &'static str {
        "quantum"
    }

    fn config_json(&self) -> serde_json::Value {
        serde_json::json!({"kind": "quantum", "qubits_per_noun": self.cfg.qubits_per_noun,
            "layers": self.cfg.layers, "tie_synonyms": self.cfg.tie_synonyms,
            "ansatz": "sim4", "single_wire": "euler"})
    }

    fn param_len(&self, key: &ParamKey) -> usize {
        param_count(key.shape.len(), self.cfg.layers)
    }

    fn init_params(
        &self,
        examples: &[CompiledExample],
        seed: u64,
        tie_synonyms: bool,
    ) -> ParameterStore {
        let mut keys = Vec::new();
        for ex in examples {
            crate::backend::diagram_keys(&ex.story, &mut keys);
            crate::backend::diagram_keys(&ex.yes_assertion, &mut keys);
            crate::backend::diagram_keys(&ex.no_assertion, &mut keys);
        }
        let mut store = ParameterStore::new(tie_synonyms);
        let canon: std::collections::BTreeSet<ParamKey> =
            keys.iter().map(|k| store.canonical_key(k)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for key in canon {
            let len = self.param_len(&key);
            let values: Vec<f64> =
                (0..len).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
            store.insert(key, values);
        }
        store
    }

    fn overlap_pair(
        &self,
        example: &CompiledExample,
        params: &ParameterStore,
    ) -> Result<(f64, f64), BackendError> {
        let state = self.evaluate_story(&example.story, params)?;
        let oy =
            self.assertion_overlap(&state, &example.yes_assertion, &example.wire_map, params)?;
        let on =
            self.assertion_overlap(&state, &example.no_assertion, &example.wire_map, params)?;
        Ok((oy, on))
    }

    fn overlap_pair_grad(
        &self,
        example: &CompiledExample,
        params: &ParameterStore,
        upstream: (f64, f64),
        grad: &mut [f64],
    ) -> Result<(f64, f64), BackendError> {
        check_wire_map(&example.wire_map, example.story.wire_count(), 2)?;
        let layout: HashMap<ParamKey, std::ops::Range<usize>> =
            params.layout().into_iter().collect();
        let state = self.evaluate_story(&example.story, params)?;
        let a_yes = self.evaluate_story(&example.yes_assertion, params)?;
        let a_no = self.evaluate_story(&example.no_assertion, params)?;
        let rho = reduced_density(&state, &example.wire_map);
        let ry = rho.matvec(&a_yes.amps);
        let rn = rho.matvec(&a_no.amps);
        let oy = inner(&a_yes.amps, &ry).re;
        let on = inner(&a_no.amps, &rn).re;

        // Story side: o = <psi| P_a |psi> with P_a the embedded assertion
        // projector; both assertions share one sweep through linearity.
        let ly = project_onto(&state, &a_yes.amps, &example.wire_map);
        let ln = project_onto(&state, &a_no.amps, &example.wire_map);
        let mut bra = StateVector { n: state.n, amps: vec![ZERO; 1 << state.n] };
        for i in 0..bra.amps.len() {
            bra.amps[i] = ly.amps[i] * upstream.0 + ln.amps[i] * upstream.1;
        }
        self.adjoint_sweep(&example.story, params, &state, bra, &layout, grad)?;

        // Assertion side: o = <a| rho |a> with rho fixed.
        let bra_yes = StateVector { n: a_yes.n, amps: ry.iter().map(|v| v * upstream.0).collect() };
        self.adjoint_sweep(&example.yes_assertion, params, &a_yes, bra_yes, &layout, grad)?;
        let bra_no = StateVector { n: a_no.n, amps: rn.iter().map(|v| v * upstream.1).collect() };
        self.adjoint_sweep(&example.no_assertion, params, &a_no, bra_no, &layout, grad)?;
        Ok((oy, on))
    }
}
