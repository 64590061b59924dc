//! Canonical story structures: nouns become typed indices, verbs become
//! class ids, and sentence order is canonicalized up to the commutation of
//! sentences over disjoint noun sets. Two stories that differ only in
//! synonym choice or in commuting sentence order get equal keys.
//!
//! The key is a greedy lexicographically-minimal linearization of the
//! dependency DAG (sentences ordered only when they share a noun), with
//! noun indices assigned at first use. Ties between interchangeable
//! sentences are broken by their downstream dependency profile, which is
//! order-independent.

use crate::grammar::{Particle, Question, SentenceAst, Story};
use serde::{Deserialize, Serialize};

/// Oracle synonym classes: all four movement verbs collapse together, the
/// six grab verbs collapse together, and the particle verbs stand alone.
pub fn verb_class_id(ast: &SentenceAst) -> &'static str {
    match ast {
        SentenceAst::Move { .. } => "MV",
        SentenceAst::ObjectAction { particle: Some(Particle::Up), .. } => "PK",
        SentenceAst::ObjectAction { particle: Some(Particle::Down), .. } => "PT",
        SentenceAst::ObjectAction { .. } => "GR",
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct StructureGraph {
    pub key: String,
}

fn sentence_nouns(ast: &SentenceAst) -> [(String, char); 2] {
    match ast {
        SentenceAst::Move { person, location, .. } => {
            [(person.clone(), 'P'), (location.clone(), 'L')]
        }
        SentenceAst::ObjectAction { person, object, .. } => {
            [(person.clone(), 'P'), (object.clone(), 'O')]
        }
    }
}

/// Canonical structure of a story plus its question.
pub fn structure_key(story: &Story, question: &Question) -> StructureGraph {
    let n = story.sentences.len();
    // deps[j] = sentences i < j sharing a noun with j.
    let mut deps: Vec<Vec<usize>> = vec![Vec::new(); n];
    for j in 0..n {
        let nj = sentence_nouns(&story.sentences[j]);
        for i in 0..j {
            let ni = sentence_nouns(&story.sentences[i]);
            if ni.iter().any(|(a, _)| nj.iter().any(|(b, _)| a == b)) {
                deps[j].push(i);
            }
        }
    }
    // Downstream profile: sorted multiset of kinds reachable from each
    // node, an order-free tiebreaker for interchangeable sentences.
    let mut succs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, ds) in deps.iter().enumerate() {
        for &i in ds {
            succs[i].push(j);
        }
    }
    fn profile(i: usize, succs: &[Vec<usize>], kinds: &[&'static str], memo: &mut Vec<Option<String>>) -> String {
        if let Some(p) = &memo[i] {
            return p.clone();
        }
        let mut parts: Vec<String> =
            succs[i].iter().map(|&j| format!("{}{}", kinds[j], profile(j, succs, kinds, memo))).collect();
        parts.sort();
        let p = parts.concat();
        memo[i] = Some(p.clone());
        p
    }
    let kinds: Vec<&'static str> = story.sentences.iter().map(verb_class_id).collect();
    let mut memo = vec![None; n];
    let profiles: Vec<String> =
        (0..n).map(|i| profile(i, &succs, &kinds, &mut memo)).collect();

    // Greedy minimal linearization with on-the-fly noun indexing.
    let mut noun_index: Vec<(String, char)> = Vec::new();
    let index_of = |name: &str, ty: char, assign: bool, noun_index: &mut Vec<(String, char)>| {
        if let Some(i) = noun_index.iter().position(|(nm, _)| nm == name) {
            format!("{ty}{i}")
        } else if assign {
            noun_index.push((name.to_string(), ty));
            format!("{ty}{}", noun_index.len() - 1)
        } else {
            format!("{ty}?")
        }
    };
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut parts: Vec<String> = Vec::with_capacity(n + 1);
    for _ in 0..n {
        let mut best: Option<(String, usize)> = None;
        for j in 0..n {
            if done[j] || deps[j].iter().any(|&i| !done[i]) {
                continue;
            }
            let nouns = sentence_nouns(&story.sentences[j]);
            let back = matches!(&story.sentences[j], SentenceAst::Move { back: true, .. });
            // Tentative key: indices of already-seen nouns, '?' for fresh.
            let label = format!(
                "{}{}({},{})|{}",
                kinds[j],
                if back { "b" } else { "" },
                index_of(&nouns[0].0, nouns[0].1, false, &mut noun_index),
                index_of(&nouns[1].0, nouns[1].1, false, &mut noun_index),
                profiles[j],
            );
            if best.as_ref().map(|(l, _)| label < *l).unwrap_or(true) {
                best = Some((label, j));
            }
        }
        let (_, j) = best.expect("acyclic dependency order");
        done[j] = true;
        order.push(j);
        let nouns = sentence_nouns(&story.sentences[j]);
        let back = matches!(&story.sentences[j], SentenceAst::Move { back: true, .. });
        let a = index_of(&nouns[0].0, nouns[0].1, true, &mut noun_index);
        let b = index_of(&nouns[1].0, nouns[1].1, true, &mut noun_index);
        parts.push(format!("{}{}({a},{b})", kinds[j], if back { "b" } else { "" }));
    }
    let qp = index_of(&question.person, 'P', true, &mut noun_index);
    let ql = index_of(&question.location, 'L', true, &mut noun_index);
    parts.push(format!("?({qp},{ql})"));
    StructureGraph { key: parts.join(";") }
}
