//! Substitutivity dataset: unique story structures are mined from a
//! productivity-style pool, then each structure emits one base example
//! (class-representative verbs) and four variants at increasing synonym
//! distance. The stratum is the variant tier: movement-verb replacements
//! first, total replacements as tiebreak, by construction monotone in the
//! tier index.

use super::structure::{structure_key, StructureGraph};
use super::{
    finish_example, hard_tail_tract_head, gen_productivity, DatasetBundle, DatasetError,
    LabeledExample, ProductivityConfig, TaskKind,
};
use crate::grammar::{SentenceAst, Story};
use crate::params::synonym_representative;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const MOVEMENT_SYNONYMS: [&str; 4] = ["moved", "went", "travelled", "journeyed"];
const GRAB_SYNONYMS: [&str; 6] = ["discarded", "dropped", "left", "grabbed", "took", "got"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubstitutivityConfig {
    /// Unique structures to sample (the paper's run used 500).
    pub n_structures: usize,
    pub variants_per_structure: usize,
    /// Pool the structures are mined from.
    pub pool: ProductivityConfig,
    /// Tiers assigned to the train split; the rest are test.
    pub train_tiers: Vec<i32>,
    pub valid_fraction: f64,
}

impl Default for SubstitutivityConfig {
    fn default() -> Self {
        SubstitutivityConfig {
            n_structures: 500,
            variants_per_structure: 4,
            pool: ProductivityConfig {
                // Structures come from one distribution; depth strata are
                // not the substitutivity strata.
                train_depths: (2, 5),
                test_depths: (6, 7),
                train_per_stratum: 400,
                test_per_stratum: 120,
                emit_twin: false,
                ..ProductivityConfig::default()
            },
            train_tiers: vec![0, 1],
            valid_fraction: 0.2,
        }
    }
}

/// Positions of replaceable verbs: movement verbs and grab verbs. The
/// particle verbs have no same-shape synonyms and stay fixed.
fn replaceable(story: &Story) -> (Vec<usize>, Vec<usize>) {
    let mut movement = Vec::new();
    let mut grab = Vec::new();
    for (i, s) in story.sentences.iter().enumerate() {
        match s {
            SentenceAst::Move { .. } => movement.push(i),
            SentenceAst::ObjectAction { particle: None, .. } => grab.push(i),
            _ => {}
        }
    }
    (movement, grab)
}

fn with_verb(ast: &SentenceAst, verb: &str) -> SentenceAst {
    let mut out = ast.clone();
    match &mut out {
        SentenceAst::Move { verb: v, .. } => *v = verb.to_string(),
        SentenceAst::ObjectAction { verb: v, .. } => *v = verb.to_string(),
    }
    out
}

/// The base instance of a structure: every verb replaced by its class
/// representative.
fn to_base(story: &Story) -> Story {
    let sentences = story
        .sentences
        .iter()
        .map(|s| with_verb(s, synonym_representative(s.verb())))
        .collect();
    Story::from_sentences(sentences)
}

/// Movement and total replacement counts of a variant against its base.
pub fn synonym_distance(base: &Story, variant: &Story) -> (usize, usize) {
    let mut movement = 0;
    let mut total = 0;
    for (a, b) in base.sentences.iter().zip(&variant.sentences) {
        if a.verb() != b.verb() {
            total += 1;
            if matches!(a, SentenceAst::Move { .. }) {
                movement += 1;
            }
        }
    }
    (movement, total)
}

fn variant_at_tier(
    base: &Story,
    tier: usize,
    max_tier: usize,
    rng: &mut ChaCha8Rng,
) -> Story {
    let (movement, grab) = replaceable(base);
    let frac = tier as f64 / max_tier as f64;
    let m_target = ((movement.len() as f64) * frac).round() as usize;
    let g_target = ((grab.len() as f64) * frac).round() as usize;
    // Every variant differs from the base in at least one verb.
    let m_target = if m_target == 0 && g_target == 0 { 1.min(movement.len()) } else { m_target };
    let mut sentences = base.sentences.clone();
    let mut mv = movement.clone();
    mv.shuffle(rng);
    for &i in mv.iter().take(m_target) {
        let current = sentences[i].verb().to_string();
        let alternates: Vec<&&str> =
            MOVEMENT_SYNONYMS.iter().filter(|v| **v != current).collect();
        let pick = alternates[rng.gen_range(0..alternates.len())];
        sentences[i] = with_verb(&sentences[i], pick);
    }
    let mut gr = grab.clone();
    gr.shuffle(rng);
    for &i in gr.iter().take(g_target) {
        let current = sentences[i].verb().to_string();
        let alternates: Vec<&&str> = GRAB_SYNONYMS.iter().filter(|v| **v != current).collect();
        let pick = alternates[rng.gen_range(0..alternates.len())];
        sentences[i] = with_verb(&sentences[i], pick);
    }
    Story::from_sentences(sentences)
}

pub fn gen_substitutivity(
    cfg: &SubstitutivityConfig,
    seed: u64,
) -> Result<DatasetBundle, DatasetError> {
    if cfg.n_structures == 0 || cfg.variants_per_structure == 0 {
        return Err(DatasetError::InfeasibleConfig("structure counts must be positive".into()));
    }
    let pool = gen_productivity(&cfg.pool, seed ^ 0x5b5_u64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Dedupe the pool by structure, bucketing by (depth, answer) so the
    // selection stays balanced.
    let mut seen: BTreeMap<StructureGraph, ()> = BTreeMap::new();
    let mut buckets: BTreeMap<(usize, bool), Vec<LabeledExample>> = BTreeMap::new();
    let all: Vec<&LabeledExample> = pool
        .train
        .iter()
        .chain(&pool.test)
        .chain(&pool.valid_v)
        .chain(&pool.valid_c)
        .collect();
    for ex in all {
        let key = structure_key(&ex.story, &ex.question);
        if seen.contains_key(&key) {
            continue;
        }
        seen.insert(key, ());
        buckets
            .entry((ex.n_sentences, ex.answer == crate::backend::Answer::Yes))
            .or_default()
            .push(ex.clone());
    }
    let available: usize = buckets.values().map(Vec::len).sum();
    if available < cfg.n_structures {
        return Err(DatasetError::NotEnoughStructures {
            requested: cfg.n_structures,
            found: available,
        });
    }
    // Round-robin across buckets for balance.
    let mut selected: Vec<LabeledExample> = Vec::with_capacity(cfg.n_structures);
    let mut bucket_lists: Vec<Vec<LabeledExample>> = buckets.into_values().collect();
    for list in &mut bucket_lists {
        list.shuffle(&mut rng);
    }
    'outer: loop {
        let mut progressed = false;
        for list in &mut bucket_lists {
            if let Some(ex) = list.pop() {
                selected.push(ex);
                progressed = true;
                if selected.len() == cfg.n_structures {
                    break 'outer;
                }
            }
        }
        if !progressed {
            break;
        }
    }

    let max_tier = cfg.variants_per_structure;
    let mut next_id = 0u64;
    let mut by_tier: Vec<Vec<LabeledExample>> = vec![Vec::new(); max_tier + 1];
    for ex in &selected {
        let base_story = to_base(&ex.story);
        let base = finish_example(next_id, base_story.clone(), ex.question.clone(), 0, false)?;
        next_id += 1;
        by_tier[0].push(base);
        for tier in 1..=max_tier {
            let story = variant_at_tier(&base_story, tier, max_tier, &mut rng);
            debug_assert_eq!(
                structure_key(&story, &ex.question),
                structure_key(&base_story, &ex.question)
            );
            let variant =
                finish_example(next_id, story, ex.question.clone(), tier as i32, false)?;
            next_id += 1;
            by_tier[tier].push(variant);
        }
    }

    let mut train = Vec::new();
    let mut valid_v = Vec::new();
    let mut test = Vec::new();
    let mut valid_c = Vec::new();
    for (tier, mut examples) in by_tier.into_iter().enumerate() {
        examples.shuffle(&mut rng);
        let n_valid = (examples.len() as f64 * cfg.valid_fraction).round() as usize;
        let (valid, rest) = examples.split_at(n_valid);
        if cfg.train_tiers.contains(&(tier as i32)) {
            valid_v.extend_from_slice(valid);
            train.extend_from_slice(rest);
        } else {
            valid_c.extend_from_slice(valid);
            test.extend_from_slice(rest);
        }
    }
    let train_strata = cfg.train_tiers.clone();
    let test_strata: Vec<i32> =
        (0..=max_tier as i32).filter(|t| !cfg.train_tiers.contains(t)).collect();
    let (valid_a, valid_b) = hard_tail_tract_head(&valid_v, &valid_c, &train_strata, &test_strata);
    Ok(DatasetBundle {
        task: TaskKind::Substitutivity,
        seed,
        config: serde_json::to_value(cfg).unwrap(),
        train,
        test,
        valid_v,
        valid_a,
        valid_b,
        valid_c,
        train_prime: None,
        train_strata,
        test_strata,
        class_prior: 0.5,
    })
}
