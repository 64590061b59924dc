//! The evaluation contract shared by the quantum and neural semantics.
//!
//! An example compiles to a flat story circuit, the two assertion circuits
//! of its question, and the story wires the assertion connects to. A
//! backend turns these plus a [`ParameterStore`] into the pair of
//! assertion overlaps; the answer is the argmax, with ties broken to `no`.

use crate::grammar::{build_assertion_pair, build_story_diagram, Question, Story};
use crate::ir::{Diagram, IrError};
use crate::params::{ParamError, ParamKey, ParameterStore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn negate(self) -> Answer {
        match self {
            Answer::Yes => Answer::No,
            Answer::No => Answer::Yes,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Answer::Yes => "yes",
            Answer::No => "no",
        }
    }
}

impl std::str::FromStr for Answer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "yes" => Ok(Answer::Yes),
            "no" => Ok(Answer::No),
            other => Err(format!("not an answer: {other}")),
        }
    }
}

/// Argmax over the overlap pair; exact ties answer `no`.
pub fn decide(overlap_yes: f64, overlap_no: f64) -> Answer {
    if overlap_yes > overlap_no {
        Answer::Yes
    } else {
        Answer::No
    }
}

/// Cross-entropy of the softmax over the raw overlap pair against the gold
/// answer. Returns the loss and its gradient in the two overlaps.
pub fn overlap_loss(overlap_yes: f64, overlap_no: f64, gold: Answer) -> (f64, (f64, f64)) {
    let m = overlap_yes.max(overlap_no);
    let ey = (overlap_yes - m).exp();
    let en = (overlap_no - m).exp();
    let z = ey + en;
    let p_yes = ey / z;
    let p_no = en / z;
    let (loss, dy, dn) = match gold {
        Answer::Yes => (-p_yes.ln(), p_yes - 1.0, p_no),
        Answer::No => (-p_no.ln(), p_yes, p_no - 1.0),
    };
    (loss, (dy, dn))
}

#[derive(Error, Debug)]
pub enum BackendError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("wire map {0:?} invalid for a {1}-wire story")]
    WireMapInvalid(Vec<usize>, usize),
    #[error("question noun `{0}` does not occur in the story")]
    QuestionNounMissing(String),
    #[error("adjoint boxes are not supported by the neural semantics")]
    AdjointUnsupported,
    #[error("overlap length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

/// A story+question compiled to flat circuits, ready for evaluation.
#[derive(Clone, Debug)]
pub struct CompiledExample {
    pub id: u64,
    pub story: Diagram,
    pub yes_assertion: Diagram,
    pub no_assertion: Diagram,
    /// Story wires for the assertion's (person, location) wires.
    pub wire_map: [usize; 2],
    /// Label to train against (the corrupted one where applicable).
    pub gold: Answer,
    /// Label under the uncorrupted oracle.
    pub truth: Answer,
}

impl CompiledExample {
    pub fn compile(
        id: u64,
        story: &Story,
        question: &Question,
        gold: Answer,
        truth: Answer,
    ) -> Result<CompiledExample, BackendError> {
        let diagram = build_story_diagram(story).sandwich_expand()?;
        let (yes, no) = build_assertion_pair(question);
        let person = story
            .wire_of(&question.person)
            .ok_or_else(|| BackendError::QuestionNounMissing(question.person.clone()))?;
        let location = story
            .wire_of(&question.location)
            .ok_or_else(|| BackendError::QuestionNounMissing(question.location.clone()))?;
        Ok(CompiledExample {
            id,
            story: diagram,
            yes_assertion: yes,
            no_assertion: no,
            wire_map: [person, location],
            gold,
            truth,
        })
    }
}

/// Backend identification and hyperparameters, serialized into manifests.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Quantum(crate::quantum::QuantumConfig),
    Neural(crate::neural::NeuralConfig),
}

impl BackendConfig {
    pub fn build(&self) -> Box<dyn SemanticBackend> {
        match self {
            BackendConfig::Quantum(cfg) => Box::new(crate::quantum::QuantumBackend::new(cfg.clone())),
            BackendConfig::Neural(cfg) => Box::new(crate::neural::NeuralBackend::new(cfg.clone())),
        }
    }
}

/// Evaluation semantics: overlaps and their parameter gradients.
///
/// Evaluation is pure given `(example, params)` and safe to run from many
/// threads. Gradients are written into a flat vector aligned with
/// `params.layout()` so batch accumulation has a fixed reduction order.
pub trait SemanticBackend: Send + Sync {
    fn name(&self) -> &'static str;

    fn config_json(&self) -> serde_json::Value;

    /// Parameter vector length for one box identity.
    fn param_len(&self, key: &ParamKey) -> usize;

    /// Seeded initial parameters for every key of the given examples.
    fn init_params(&self, examples: &[CompiledExample], seed: u64, tie_synonyms: bool)
        -> ParameterStore;

    /// The `(yes, no)` assertion overlap pair.
    fn overlap_pair(
        &self,
        example: &CompiledExample,
        params: &ParameterStore,
    ) -> Result<(f64, f64), BackendError>;

    /// Overlaps plus `upstream.0 * d(o_yes)/dθ + upstream.1 * d(o_no)/dθ`
    /// accumulated into `grad` (aligned with `params.layout()`).
    fn overlap_pair_grad(
        &self,
        example: &CompiledExample,
        params: &ParameterStore,
        upstream: (f64, f64),
        grad: &mut [f64],
    ) -> Result<(f64, f64), BackendError>;

    fn predict(
        &self,
        example: &CompiledExample,
        params: &ParameterStore,
    ) -> Result<Answer, BackendError> {
        let (oy, on) = self.overlap_pair(example, params)?;
        Ok(decide(oy, on))
    }

    /// Loss and gradient of one example, accumulated into `grad`.
    fn loss_grad(
        &self,
        example: &CompiledExample,
        params: &ParameterStore,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64, BackendError> {
        let (oy, on) = self.overlap_pair(example, params)?;
        let (loss, (dy, dn)) = overlap_loss(oy, on, example.gold);
        self.overlap_pair_grad(example, params, (scale * dy, scale * dn), grad)?;
        Ok(loss)
    }
}

/// Collects every parameter key of a flat diagram.
pub fn diagram_keys(diagram: &Diagram, out: &mut Vec<ParamKey>) {
    for layer in &diagram.layers {
        let key = ParamKey::new(layer.node.word(), layer.node.shape().to_vec());
        if !out.contains(&key) {
            out.push(key);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_answer_no() {
        assert_eq!(decide(0.5, 0.5), Answer::No);
        assert_eq!(decide(0.6, 0.5), Answer::Yes);
        assert_eq!(decide(0.4, 0.5), Answer::No);
    }

    #[test]
    fn argmax_invariant_under_rescale_and_shift() {
        let cases = [(0.3, 0.7), (0.9, 0.2), (0.0, 0.0), (1.0, 0.999)];
        for (a, b) in cases {
            for c in [0.5, 2.0, 10.0] {
                assert_eq!(decide(a, b), decide(c * a, c * b));
            }
            assert_eq!(decide(a, b), decide(a + 0.3, b + 0.3));
        }
    }

    #[test]
    fn loss_at_equal_overlaps_is_ln2() {
        let (loss, (dy, dn)) = overlap_loss(0.0, 0.0, Answer::Yes);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((dy + 0.5).abs() < 1e-15);
        assert!((dn - 0.5).abs() < 1e-15);
    }
}
