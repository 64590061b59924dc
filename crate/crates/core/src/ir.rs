//! Text circuit intermediate representation.
//!
//! A [`Diagram`] is an ordered set of typed noun wires together with a
//! sequence of layers. Each layer places a node (a plain [`BoxNode`] or a
//! higher-order [`FrameNode`] with filled holes) on a subset of the wires.
//! All nodes are wire-count preserving, so a diagram denotes an endomorphism
//! on its noun wires applied to the product of its noun states.
//!
//! Frames are eliminated by [`Diagram::sandwich_expand`], which rewrites each
//! frame into a `_top` box, its hole contents, `_mid` boxes between holes,
//! and a `_bot` box, recursing innermost-first.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::ops::Range;
use thiserror::Error;

/// The three base wire kinds of the story fragment.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum WireType {
    /// Person
    P,
    /// Object
    O,
    /// Location
    L,
}

impl WireType {
    pub fn letter(self) -> char {
        match self {
            WireType::P => 'P',
            WireType::O => 'O',
            WireType::L => 'L',
        }
    }
}

impl fmt::Display for WireType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum BoxRole {
    /// Opens a noun wire; shape is always a single wire.
    NounState,
    Plain,
}

/// A first-order box: an endomorphism on the wires given by its shape.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct BoxNode {
    pub word: String,
    pub shape: Vec<WireType>,
    pub role: BoxRole,
    /// Daggered occurrence. Parameters are shared with the undaggered box.
    pub adjoint: bool,
}

impl BoxNode {
    pub fn plain(word: impl Into<String>, shape: Vec<WireType>) -> Self {
        BoxNode { word: word.into(), shape, role: BoxRole::Plain, adjoint: false }
    }

    pub fn noun_state(word: impl Into<String>, ty: WireType) -> Self {
        BoxNode { word: word.into(), shape: vec![ty], role: BoxRole::NounState, adjoint: false }
    }
}

/// A frame hole: which positions of the frame shape it exposes, and the
/// fragment that fills it. Contents are typed over local wires
/// `0..positions.len()` and may not reach into any other hole.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Hole {
    pub positions: Vec<usize>,
    pub content: Fragment,
}

/// A higher-order box with holes, e.g. `to[moved]` or `back[to[moved]]`.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct FrameNode {
    pub word: String,
    pub shape: Vec<WireType>,
    pub holes: Vec<Hole>,
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Node {
    Box(BoxNode),
    Frame(FrameNode),
}

impl Node {
    pub fn word(&self) -> &str {
        match self {
            Node::Box(b) => &b.word,
            Node::Frame(f) => &f.word,
        }
    }

    pub fn shape(&self) -> &[WireType] {
        match self {
            Node::Box(b) => &b.shape,
            Node::Frame(f) => &f.shape,
        }
    }

    pub fn is_frame(&self) -> bool {
        matches!(self, Node::Frame(_))
    }
}

/// A node placed on specific wires of the enclosing diagram or fragment.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Layer {
    pub node: Node,
    pub wires: Vec<usize>,
}

/// An open diagram over local wires, as found inside frame holes.
/// Unlike [`Diagram`], a fragment has no noun states of its own.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Fragment {
    pub wire_types: Vec<WireType>,
    pub layers: Vec<Layer>,
}

impl Fragment {
    /// Fragment holding a single node spanning all its wires in order.
    pub fn single(node: Node) -> Self {
        let wire_types = node.shape().to_vec();
        let wires = (0..wire_types.len()).collect();
        Fragment { wire_types, layers: vec![Layer { node, wires }] }
    }
}

/// A closed text circuit: noun wires in discourse order plus layers.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
pub struct Diagram {
    /// `(noun token, wire type)` per wire, in first-mention order.
    pub nouns: Vec<(String, WireType)>,
    pub layers: Vec<Layer>,
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum IrError {
    #[error("wire kinds {found:?} do not match node shape {expected:?} for `{word}`")]
    TypeMismatch { word: String, expected: Vec<WireType>, found: Vec<WireType> },
    #[error("wire index {index} out of range for {wires} wires (node `{word}`)")]
    IndexOutOfRange { word: String, index: usize, wires: usize },
    #[error("duplicate wire index {index} in placement of `{word}`")]
    DuplicateWire { word: String, index: usize },
    #[error("frame `{word}` has an unfilled or ill-typed hole")]
    UnfilledHole { word: String },
    #[error("operation requires a flat diagram but `{word}` is a frame")]
    ContainsFrames { word: String },
    #[error("first layer touching wire {wire} is not its noun state")]
    MissingNounState { wire: usize },
    #[error("swap spans have different type signatures: {a:?} vs {b:?}")]
    SignatureMismatch { a: Vec<WireType>, b: Vec<WireType> },
    #[error("swap spans overlap: {a:?} and {b:?}")]
    OverlappingSpans { a: Range<usize>, b: Range<usize> },
    #[error("layer span {span:?} out of range for {len} layers")]
    SpanOutOfRange { span: Range<usize>, len: usize },
    #[error("swap result violates diagram invariants: {0}")]
    InvalidResult(Box<IrError>),
}

fn check_placement(node: &Node, wires: &[usize], wire_types: &[WireType]) -> Result<(), IrError> {
    if wires.is_empty() {
        return Err(IrError::IndexOutOfRange { word: node.word().to_string(), index: 0, wires: 0 });
    }
    for (n, &w) in wires.iter().enumerate() {
        if w >= wire_types.len() {
            return Err(IrError::IndexOutOfRange {
                word: node.word().to_string(),
                index: w,
                wires: wire_types.len(),
            });
        }
        if wires[..n].contains(&w) {
            return Err(IrError::DuplicateWire { word: node.word().to_string(), index: w });
        }
    }
    let found: Vec<WireType> = wires.iter().map(|&w| wire_types[w]).collect();
    if found != node.shape() {
        return Err(IrError::TypeMismatch {
            word: node.word().to_string(),
            expected: node.shape().to_vec(),
            found,
        });
    }
    check_node(node)
}

fn check_node(node: &Node) -> Result<(), IrError> {
    match node {
        Node::Box(b) => {
            let ok = match b.role {
                BoxRole::NounState => b.shape.len() == 1,
                BoxRole::Plain => !b.shape.is_empty(),
            };
            if ok {
                Ok(())
            } else {
                Err(IrError::TypeMismatch {
                    word: b.word.clone(),
                    expected: b.shape.clone(),
                    found: vec![],
                })
            }
        }
        Node::Frame(f) => {
            if f.holes.is_empty() {
                return Err(IrError::UnfilledHole { word: f.word.clone() });
            }
            let mut seen = vec![false; f.shape.len()];
            for hole in &f.holes {
                if hole.positions.is_empty() || hole.content.layers.is_empty() {
                    return Err(IrError::UnfilledHole { word: f.word.clone() });
                }
                let mut sig = Vec::with_capacity(hole.positions.len());
                for &p in &hole.positions {
                    if p >= f.shape.len() || seen[p] {
                        return Err(IrError::UnfilledHole { word: f.word.clone() });
                    }
                    seen[p] = true;
                    sig.push(f.shape[p]);
                }
                if hole.content.wire_types != sig {
                    return Err(IrError::TypeMismatch {
                        word: f.word.clone(),
                        expected: sig,
                        found: hole.content.wire_types.clone(),
                    });
                }
                for layer in &hole.content.layers {
                    check_placement(&layer.node, &layer.wires, &hole.content.wire_types)?;
                }
            }
            Ok(())
        }
    }
}

impl Diagram {
    pub fn new(nouns: Vec<(String, WireType)>) -> Self {
        Diagram { nouns, layers: Vec::new() }
    }

    pub fn wire_count(&self) -> usize {
        self.nouns.len()
    }

    pub fn wire_types(&self) -> Vec<WireType> {
        self.nouns.iter().map(|(_, t)| *t).collect()
    }

    pub fn is_flat(&self) -> bool {
        self.layers.iter().all(|l| !l.node.is_frame())
    }

    /// Returns a new diagram with `node` appended as the last layer on
    /// `wires`. The input is left unchanged.
    pub fn append_node(&self, node: Node, wires: Vec<usize>) -> Result<Diagram, IrError> {
        check_placement(&node, &wires, &self.wire_types())?;
        let mut out = self.clone();
        out.layers.push(Layer { node, wires });
        Ok(out)
    }

    /// Structural type check: every placement is distinct, in range and
    /// shape-correct, and every frame hole is filled and well typed.
    pub fn validate(&self) -> Result<(), IrError> {
        let types = self.wire_types();
        for layer in &self.layers {
            check_placement(&layer.node, &layer.wires, &types)?;
        }
        Ok(())
    }

    /// [`Diagram::validate`] plus the story-form conditions: the first layer
    /// touching each wire is that noun's noun state, and every wire is opened.
    pub fn validate_story_form(&self) -> Result<(), IrError> {
        self.validate()?;
        let mut opened = vec![false; self.wire_count()];
        for layer in &self.layers {
            let is_state = matches!(
                &layer.node,
                Node::Box(b) if b.role == BoxRole::NounState && !b.adjoint
            );
            for &w in &layer.wires {
                if !opened[w] {
                    let name_ok = is_state && layer.node.word() == self.nouns[w].0;
                    if !name_ok {
                        return Err(IrError::MissingNounState { wire: w });
                    }
                    opened[w] = true;
                }
            }
        }
        if let Some(w) = opened.iter().position(|&o| !o) {
            return Err(IrError::MissingNounState { wire: w });
        }
        Ok(())
    }

    /// Rewrites every frame into plain boxes: `{word}_top` on the frame
    /// shape, then each hole's contents (recursively expanded), a
    /// `{word}_mid_i` layer between consecutive holes, and `{word}_bot`.
    /// Noun wires and their order are untouched.
    pub fn sandwich_expand(&self) -> Result<Diagram, IrError> {
        self.validate()?;
        let mut out = Diagram::new(self.nouns.clone());
        for layer in &self.layers {
            expand_layer(layer, &mut out.layers)?;
        }
        Ok(out)
    }

    /// Reverses the layers and marks every box as the adjoint of its
    /// original. An involution: `d.dagger()?.dagger()? == d`.
    pub fn dagger(&self) -> Result<Diagram, IrError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter().rev() {
            match &layer.node {
                Node::Frame(f) => {
                    return Err(IrError::ContainsFrames { word: f.word.clone() });
                }
                Node::Box(b) => {
                    let mut b = b.clone();
                    b.adjoint = !b.adjoint;
                    layers.push(Layer { node: Node::Box(b), wires: layer.wires.clone() });
                }
            }
        }
        Ok(Diagram { nouns: self.nouns.clone(), layers })
    }

    /// The ordered wire types over the sorted set of wires a span touches.
    pub fn span_signature(&self, span: &Range<usize>) -> Result<Vec<WireType>, IrError> {
        if span.end > self.layers.len() || span.start > span.end {
            return Err(IrError::SpanOutOfRange { span: span.clone(), len: self.layers.len() });
        }
        let mut wires: Vec<usize> =
            self.layers[span.clone()].iter().flat_map(|l| l.wires.iter().copied()).collect();
        wires.sort_unstable();
        wires.dedup();
        Ok(wires.into_iter().map(|w| self.nouns[w].1).collect())
    }

    /// Exchanges two contiguous layer spans with equal type signatures.
    /// Swapping a span with itself is the identity.
    pub fn swap_fragment(
        &self,
        span_a: Range<usize>,
        span_b: Range<usize>,
    ) -> Result<Diagram, IrError> {
        let sig_a = self.span_signature(&span_a)?;
        let sig_b = self.span_signature(&span_b)?;
        if span_a == span_b {
            return Ok(self.clone());
        }
        if span_a.start < span_b.end && span_b.start < span_a.end {
            return Err(IrError::OverlappingSpans { a: span_a, b: span_b });
        }
        if sig_a != sig_b {
            return Err(IrError::SignatureMismatch { a: sig_a, b: sig_b });
        }
        let (first, second) =
            if span_a.start < span_b.start { (span_a, span_b) } else { (span_b, span_a) };
        let mut layers = Vec::with_capacity(self.layers.len());
        layers.extend_from_slice(&self.layers[..first.start]);
        layers.extend_from_slice(&self.layers[second.clone()]);
        layers.extend_from_slice(&self.layers[first.end..second.start]);
        layers.extend_from_slice(&self.layers[first.clone()]);
        layers.extend_from_slice(&self.layers[second.end..]);
        let out = Diagram { nouns: self.nouns.clone(), layers };
        out.validate_story_form().map_err(|e| IrError::InvalidResult(Box::new(e)))?;
        Ok(out)
    }

    /// Deterministic textual form: a noun header line, then one line per
    /// layer as `word@[i,j,...]`.
    pub fn serialize_text(&self) -> String {
        let mut s = String::from("nouns:");
        for (name, ty) in &self.nouns {
            s.push(' ');
            s.push_str(name);
            s.push(':');
            s.push(ty.letter());
        }
        s.push('\n');
        for layer in &self.layers {
            s.push_str(&render_node(&layer.node));
            s.push_str("@[");
            let idx: Vec<String> = layer.wires.iter().map(|w| w.to_string()).collect();
            s.push_str(&idx.join(","));
            s.push_str("]\n");
        }
        s
    }

    /// The multiset of inner (non-frame, non-shell) words, used to state
    /// what [`Diagram::sandwich_expand`] preserves.
    pub fn plain_word_multiset(&self) -> Vec<String> {
        let mut words = Vec::new();
        fn visit_fragment(frag: &Fragment, words: &mut Vec<String>) {
            for layer in &frag.layers {
                visit_node(&layer.node, words);
            }
        }
        fn visit_node(node: &Node, words: &mut Vec<String>) {
            match node {
                Node::Box(b) => words.push(b.word.clone()),
                Node::Frame(f) => {
                    for hole in &f.holes {
                        visit_fragment(&hole.content, words);
                    }
                }
            }
        }
        for layer in &self.layers {
            visit_node(&layer.node, &mut words);
        }
        words.sort();
        words
    }
}

fn expand_layer(layer: &Layer, out: &mut Vec<Layer>) -> Result<(), IrError> {
    match &layer.node {
        Node::Box(_) => {
            out.push(layer.clone());
            Ok(())
        }
        Node::Frame(f) => {
            let shell = |suffix: String| Layer {
                node: Node::Box(BoxNode::plain(format!("{}{}", f.word, suffix), f.shape.clone())),
                wires: layer.wires.clone(),
            };
            out.push(shell("_top".into()));
            for (i, hole) in f.holes.iter().enumerate() {
                for inner in &hole.content.layers {
                    // Map hole-local wire indices onto the enclosing wires.
                    let wires: Vec<usize> =
                        inner.wires.iter().map(|&lw| layer.wires[hole.positions[lw]]).collect();
                    expand_layer(&Layer { node: inner.node.clone(), wires }, out)?;
                }
                if i + 1 < f.holes.len() {
                    out.push(shell(format!("_mid_{i}")));
                }
            }
            out.push(shell("_bot".into()));
            Ok(())
        }
    }
}

fn render_node(node: &Node) -> String {
    match node {
        Node::Box(b) => {
            if b.adjoint {
                format!("{}†", b.word)
            } else {
                b.word.clone()
            }
        }
        Node::Frame(f) => {
            let mut inner = Vec::new();
            for hole in &f.holes {
                inner.push(render_fragment(&hole.content));
            }
            format!("{}[{}]", f.word, inner.join(" | "))
        }
    }
}

fn render_fragment(frag: &Fragment) -> String {
    // Elide wire indices for the common single-node fragment spanning the
    // whole hole in order; spell them out otherwise.
    if frag.layers.len() == 1 {
        let layer = &frag.layers[0];
        let spans_all = layer.wires.len() == frag.wire_types.len()
            && layer.wires.iter().enumerate().all(|(i, &w)| i == w);
        if spans_all {
            return render_node(&layer.node);
        }
    }
    frag.layers
        .iter()
        .map(|l| {
            let idx: Vec<String> = l.wires.iter().map(|w| w.to_string()).collect();
            format!("{}@[{}]", render_node(&l.node), idx.join(","))
        })
        .collect::<Vec<_>>()
        .join("; ")
}
