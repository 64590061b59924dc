//! The symbolic task oracle, the four seeded dataset generators, strata
//! bookkeeping, validation-split schemes, and dataset file IO.
//!
//! Every example carries its difficulty stratum (sentence count for
//! productivity, non-base pair count for systematicity, synonym tier for
//! substitutivity) plus the support depth: how many sentences sit between
//! the answer-providing sentence and the end of the story.

mod sampler;
mod structure;
mod substitutivity;
mod systematicity;

pub use sampler::{sample_story, SamplerConfig, StoryTarget};
pub use structure::{structure_key, StructureGraph};
pub use substitutivity::{gen_substitutivity, synonym_distance, SubstitutivityConfig};
pub use systematicity::{assign_group, gen_systematicity, non_base_pairs, pair_profile, NounGroups, SystematicityConfig};

use crate::backend::Answer;
use crate::grammar::{
    parse_question, parse_sentence, render_question, Question, SentenceAst, Story,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Productivity,
    Systematicity,
    Substitutivity,
    Overgeneralisation,
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TaskKind::Productivity => "productivity",
            TaskKind::Systematicity => "systematicity",
            TaskKind::Substitutivity => "substitutivity",
            TaskKind::Overgeneralisation => "overgeneralisation",
        };
        write!(f, "{s}")
    }
}

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum DatasetError {
    #[error("question person `{0}` does not occur in the story")]
    PersonNotInStory(String),
    #[error("infeasible generator config: {0}")]
    InfeasibleConfig(String),
    #[error("only {found} unique structures available, {requested} requested")]
    NotEnoughStructures { requested: usize, found: usize },
    #[error("no corrupted examples in bundle")]
    NoCorruptedExamples,
    #[error("unknown validation scheme `{0}`")]
    UnknownScheme(String),
    #[error("dataset io: {0}")]
    Io(String),
    #[error("dataset parse: {0}")]
    Parse(String),
}

/// The dataset atom: a story, its question, the (possibly corrupted) label
/// and the strata metadata.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: u64,
    pub story: Story,
    pub question: Question,
    pub answer: Answer,
    pub n_sentences: usize,
    pub n_nouns: usize,
    pub support_depth: usize,
    pub stratum: i32,
    pub corrupted: bool,
}

impl LabeledExample {
    /// The uncorrupted oracle label.
    pub fn true_answer(&self) -> Answer {
        if self.corrupted {
            self.answer.negate()
        } else {
            self.answer
        }
    }
}

/// Answers `Is person x in place y?` against the story: yes iff the last
/// movement of the person ends at the location; a person who never moves is
/// nowhere in particular, so the answer is no.
pub fn oracle_answer(story: &Story, question: &Question) -> Result<Answer, DatasetError> {
    let mentioned = story.sentences.iter().any(|s| s.person() == question.person);
    if !mentioned {
        return Err(DatasetError::PersonNotInStory(question.person.clone()));
    }
    let last_move = story.sentences.iter().rev().find_map(|s| match s {
        SentenceAst::Move { person, location, .. } if *person == question.person => {
            Some(location.clone())
        }
        _ => None,
    });
    Ok(match last_move {
        Some(loc) if loc == question.location => Answer::Yes,
        _ => Answer::No,
    })
}

/// Index (from the end, zero-based) of the sentence that settles the
/// answer: the person's last movement, falling back to their last mention.
pub fn support_depth(story: &Story, question: &Question) -> Result<usize, DatasetError> {
    let n = story.sentences.len();
    let mut last_mention = None;
    let mut last_move = None;
    for (i, s) in story.sentences.iter().enumerate() {
        if s.person() == question.person {
            last_mention = Some(i);
            if matches!(s, SentenceAst::Move { .. }) {
                last_move = Some(i);
            }
        }
    }
    let idx = last_move
        .or(last_mention)
        .ok_or_else(|| DatasetError::PersonNotInStory(question.person.clone()))?;
    Ok(n - 1 - idx)
}

/// Validation scheme names from the extended-validation table.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Scheme {
    V,
    A,
    B,
    C,
    AB,
    All,
}

impl std::str::FromStr for Scheme {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "V" => Ok(Scheme::V),
            "A" => Ok(Scheme::A),
            "B" => Ok(Scheme::B),
            "C" => Ok(Scheme::C),
            "AB" => Ok(Scheme::AB),
            "ALL" => Ok(Scheme::All),
            other => Err(DatasetError::UnknownScheme(other.to_string())),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::V => "V",
            Scheme::A => "A",
            Scheme::B => "B",
            Scheme::C => "C",
            Scheme::AB => "AB",
            Scheme::All => "All",
        };
        write!(f, "{s}")
    }
}

/// A generated dataset: train/test plus the four validation subsets, the
/// optional twin set drawn from the train distribution, and provenance.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub task: TaskKind,
    pub seed: u64,
    pub config: serde_json::Value,
    pub train: Vec<LabeledExample>,
    pub test: Vec<LabeledExample>,
    pub valid_v: Vec<LabeledExample>,
    pub valid_a: Vec<LabeledExample>,
    pub valid_b: Vec<LabeledExample>,
    pub valid_c: Vec<LabeledExample>,
    /// Twin set from the train distribution (Train'), never trained on.
    pub train_prime: Option<Vec<LabeledExample>>,
    pub train_strata: Vec<i32>,
    pub test_strata: Vec<i32>,
    /// Majority-class prior of the labels; 0.5 unless the task biases it.
    pub class_prior: f64,
}

impl DatasetBundle {
    pub fn splits(&self) -> Vec<(&'static str, &Vec<LabeledExample>)> {
        let mut v = vec![
            ("train", &self.train),
            ("test", &self.test),
            ("valid_v", &self.valid_v),
            ("valid_a", &self.valid_a),
            ("valid_b", &self.valid_b),
            ("valid_c", &self.valid_c),
        ];
        if let Some(tp) = &self.train_prime {
            v.push(("train_prime", tp));
        }
        v
    }

    /// The example list a validation scheme evaluates on.
    pub fn validation_set(&self, scheme: Scheme) -> Vec<LabeledExample> {
        match scheme {
            Scheme::V => self.valid_v.clone(),
            Scheme::A => self.valid_a.clone(),
            Scheme::B => self.valid_b.clone(),
            Scheme::C => self.valid_c.clone(),
            Scheme::AB => {
                let mut out = self.valid_a.clone();
                out.extend(self.valid_b.iter().cloned());
                out
            }
            Scheme::All => {
                let mut out = self.valid_v.clone();
                out.extend(self.valid_c.iter().cloned());
                out
            }
        }
    }
}

pub fn assign_validation_scheme(
    bundle: &DatasetBundle,
    scheme: Scheme,
) -> Result<Vec<LabeledExample>, DatasetError> {
    Ok(bundle.validation_set(scheme))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProductivityConfig {
    pub train_depths: (usize, usize),
    pub test_depths: (usize, usize),
    pub train_per_stratum: usize,
    pub test_per_stratum: usize,
    /// Per-stratum fraction reserved for validation.
    pub valid_fraction: f64,
    pub max_nouns: usize,
    pub emit_twin: bool,
    /// Optional vocabulary restriction: use only the first `n` people /
    /// locations / objects. `None` keeps the full vocabulary.
    #[serde(default)]
    pub n_people: Option<usize>,
    #[serde(default)]
    pub n_locations: Option<usize>,
    #[serde(default)]
    pub n_objects: Option<usize>,
    #[serde(default)]
    pub n_movement_verbs: Option<usize>,
    #[serde(default)]
    pub n_grab_verbs: Option<usize>,
    #[serde(default)]
    pub support_profile: SupportProfile,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

impl Default for ProductivityConfig {
    fn default() -> Self {
        ProductivityConfig {
            train_depths: (2, 5),
            test_depths: (6, 10),
            train_per_stratum: 150,
            test_per_stratum: 80,
            valid_fraction: 0.2,
            max_nouns: 10,
            emit_twin: true,
            n_people: None,
            n_locations: None,
            n_objects: None,
            n_movement_verbs: None,
            n_grab_verbs: None,
            support_profile: SupportProfile::Uniform,
            sampler: SamplerConfig::default(),
        }
    }
}

impl ProductivityConfig {
    fn check(&self) -> Result<(), DatasetError> {
        if self.train_depths.0 < 2 || self.train_depths.0 > self.train_depths.1 {
            return Err(DatasetError::InfeasibleConfig(
                "train depths must satisfy 2 <= lo <= hi".into(),
            ));
        }
        if self.test_depths.0 <= self.train_depths.1 {
            return Err(DatasetError::InfeasibleConfig(
                "test depths must be strictly deeper than train depths".into(),
            ));
        }
        if self.train_per_stratum == 0 || self.test_per_stratum == 0 {
            return Err(DatasetError::InfeasibleConfig("per-stratum counts must be > 0".into()));
        }
        if self.max_nouns < 4 {
            return Err(DatasetError::InfeasibleConfig("max_nouns must be at least 4".into()));
        }
        if !(0.0..1.0).contains(&self.valid_fraction) {
            return Err(DatasetError::InfeasibleConfig("valid_fraction must be in [0,1)".into()));
        }
        Ok(())
    }
}

/// Atoms available for story sampling; test pools are restricted to what
/// the train split exercised, so test stays inside the train set's
/// compositional closure.
#[derive(Clone, Debug)]
pub struct AtomPools {
    pub people: Vec<String>,
    pub objects: Vec<String>,
    pub locations: Vec<String>,
    pub movement_verbs: Vec<String>,
    pub grab_verbs: Vec<String>,
    pub allow_back: bool,
    pub allow_picked: bool,
    pub allow_put: bool,
}

impl AtomPools {
    pub fn full() -> AtomPools {
        AtomPools {
            people: crate::grammar::PEOPLE.iter().map(|s| s.to_string()).collect(),
            objects: crate::grammar::OBJECTS.iter().map(|s| s.to_string()).collect(),
            locations: crate::grammar::LOCATIONS.iter().map(|s| s.to_string()).collect(),
            movement_verbs: crate::grammar::Vocabulary::get()
                .movement_verbs()
                .iter()
                .map(|s| s.to_string())
                .collect(),
            grab_verbs: crate::grammar::GRAB_VERBS.iter().map(|s| s.to_string()).collect(),
            allow_back: true,
            allow_picked: true,
            allow_put: true,
        }
    }

    /// Pools restricted to the atoms that occur in `examples`.
    pub fn from_examples(examples: &[LabeledExample]) -> AtomPools {
        let mut people = BTreeSet::new();
        let mut objects = BTreeSet::new();
        let mut locations = BTreeSet::new();
        let mut movement = BTreeSet::new();
        let mut grab = BTreeSet::new();
        let mut allow_back = false;
        let mut allow_picked = false;
        let mut allow_put = false;
        for ex in examples {
            for s in &ex.story.sentences {
                match s {
                    SentenceAst::Move { person, location, verb, back } => {
                        people.insert(person.clone());
                        locations.insert(location.clone());
                        movement.insert(verb.clone());
                        allow_back |= back;
                    }
                    SentenceAst::ObjectAction { person, object, verb, particle } => {
                        people.insert(person.clone());
                        objects.insert(object.clone());
                        match particle {
                            None => {
                                grab.insert(verb.clone());
                            }
                            Some(crate::grammar::Particle::Up) => allow_picked = true,
                            Some(crate::grammar::Particle::Down) => allow_put = true,
                        }
                    }
                }
            }
        }
        AtomPools {
            people: people.into_iter().collect(),
            objects: objects.into_iter().collect(),
            locations: locations.into_iter().collect(),
            movement_verbs: movement.into_iter().collect(),
            grab_verbs: grab.into_iter().collect(),
            allow_back,
            allow_picked,
            allow_put,
        }
    }
}

fn finish_example(
    id: u64,
    story: Story,
    question: Question,
    stratum: i32,
    corrupted: bool,
) -> Result<LabeledExample, DatasetError> {
    let answer = oracle_answer(&story, &question)?;
    let support = support_depth(&story, &question)?;
    Ok(LabeledExample {
        id,
        n_sentences: story.sentences.len(),
        n_nouns: story.nouns.len(),
        support_depth: support,
        stratum,
        corrupted,
        answer: if corrupted { answer.negate() } else { answer },
        story,
        question,
    })
}

/// How support depths are allocated within a stratum: `Uniform` spreads
/// them evenly; `Shallow` halves the quota per extra depth, closer to the
/// natural skew of sampled stories.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportProfile {
    #[default]
    Uniform,
    Shallow,
}

/// Per-stratum targets with an even answer split and support depths
/// allocated per the profile (largest remainders go to shallow supports).
fn stratum_plan(depth: usize, count: usize, profile: SupportProfile) -> Vec<(Answer, usize)> {
    let n_yes = count / 2;
    let weights: Vec<f64> = match profile {
        SupportProfile::Uniform => vec![1.0; depth],
        SupportProfile::Shallow => (0..depth).map(|s| 0.5f64.powi(s as i32)).collect(),
    };
    let total: f64 = weights.iter().sum();
    let mut plan = Vec::with_capacity(count);
    for (answer, m) in [(Answer::Yes, n_yes), (Answer::No, count - n_yes)] {
        let mut quotas: Vec<usize> =
            weights.iter().map(|w| (w / total * m as f64).floor() as usize).collect();
        let mut assigned: usize = quotas.iter().sum();
        let mut s = 0;
        while assigned < m {
            quotas[s % depth] += 1;
            assigned += 1;
            s += 1;
        }
        for (s, &quota) in quotas.iter().enumerate() {
            for _ in 0..quota {
                plan.push((answer, s));
            }
        }
    }
    plan
}

pub fn gen_productivity(
    cfg: &ProductivityConfig,
    seed: u64,
) -> Result<DatasetBundle, DatasetError> {
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_id = 0u64;
    let mut full_pools = AtomPools::full();
    if let Some(n) = cfg.n_people {
        full_pools.people.truncate(n.max(2));
    }
    if let Some(n) = cfg.n_locations {
        full_pools.locations.truncate(n.max(2));
    }
    if let Some(n) = cfg.n_objects {
        full_pools.objects.truncate(n.max(1));
    }
    if let Some(n) = cfg.n_movement_verbs {
        full_pools.movement_verbs.truncate(n.max(1));
    }
    if let Some(n) = cfg.n_grab_verbs {
        full_pools.grab_verbs.truncate(n.max(1));
    }

    let gen_stratum = |depth: usize,
                           count: usize,
                           pools: &AtomPools,
                           rng: &mut ChaCha8Rng,
                           next_id: &mut u64|
     -> Result<Vec<LabeledExample>, DatasetError> {
        let mut out = Vec::with_capacity(count);
        for (answer, support) in stratum_plan(depth, count, cfg.support_profile) {
            let target = StoryTarget { depth, answer, support };
            let mut attempts = 0;
            let ex = loop {
                let (story, question) =
                    sample_story(&cfg.sampler, pools, cfg.max_nouns, target, rng)?;
                let ex = finish_example(*next_id, story, question, depth as i32, false)?;
                if ex.answer == answer && ex.support_depth == support && ex.n_nouns <= cfg.max_nouns
                {
                    break ex;
                }
                attempts += 1;
                if attempts > 200 {
                    return Err(DatasetError::InfeasibleConfig(format!(
                        "cannot hit depth {depth} answer {answer:?} support {support}"
                    )));
                }
            };
            *next_id += 1;
            out.push(ex);
        }
        Ok(out)
    };

    let mut train = Vec::new();
    let mut valid_v = Vec::new();
    for depth in cfg.train_depths.0..=cfg.train_depths.1 {
        let mut all = gen_stratum(depth, cfg.train_per_stratum, &full_pools, &mut rng, &mut next_id)?;
        all.shuffle(&mut rng);
        let n_valid = (all.len() as f64 * cfg.valid_fraction).round() as usize;
        valid_v.extend(all.drain(..n_valid));
        train.extend(all);
    }
    // Test atoms come from what train actually used, keeping the test set
    // inside the train set's compositional closure.
    let train_pools = AtomPools::from_examples(&train);
    let mut test = Vec::new();
    let mut valid_c = Vec::new();
    for depth in cfg.test_depths.0..=cfg.test_depths.1 {
        let mut all =
            gen_stratum(depth, cfg.test_per_stratum, &train_pools, &mut rng, &mut next_id)?;
        all.shuffle(&mut rng);
        let n_valid = (all.len() as f64 * cfg.valid_fraction).round() as usize;
        valid_c.extend(all.drain(..n_valid));
        test.extend(all);
    }
    let train_strata: Vec<i32> =
        (cfg.train_depths.0..=cfg.train_depths.1).map(|d| d as i32).collect();
    let test_strata: Vec<i32> =
        (cfg.test_depths.0..=cfg.test_depths.1).map(|d| d as i32).collect();
    let (valid_a, valid_b) = hard_tail_tract_head(&valid_v, &valid_c, &train_strata, &test_strata);

    let train_prime = if cfg.emit_twin {
        let mut twin = Vec::new();
        for depth in cfg.train_depths.0..=cfg.train_depths.1 {
            twin.extend(gen_stratum(
                depth,
                cfg.train_per_stratum,
                &train_pools,
                &mut rng,
                &mut next_id,
            )?);
        }
        Some(twin)
    } else {
        None
    };

    Ok(DatasetBundle {
        task: TaskKind::Productivity,
        seed,
        config: serde_json::to_value(cfg).unwrap(),
        train,
        test,
        valid_v,
        valid_a,
        valid_b,
        valid_c,
        train_prime,
        train_strata,
        test_strata,
        class_prior: 0.5,
    })
}

/// Recomputes the A/B validation halves for an externally re-split pool,
/// as cross-validation does per fold.
pub fn fold_tails(
    valid_v: &[LabeledExample],
    valid_c: &[LabeledExample],
    train_strata: &[i32],
    test_strata: &[i32],
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    hard_tail_tract_head(valid_v, valid_c, train_strata, test_strata)
}

/// Valid A is the hard tail of Valid V (top two train strata, or the
/// deeper half when only one stratum exists); Valid B is the tractable
/// head of Valid C (bottom two test strata).
pub(crate) fn hard_tail_tract_head(
    valid_v: &[LabeledExample],
    valid_c: &[LabeledExample],
    train_strata: &[i32],
    test_strata: &[i32],
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let a_strata: Vec<i32> = if train_strata.len() >= 2 {
        train_strata[train_strata.len() - 2..].to_vec()
    } else {
        train_strata.to_vec()
    };
    let b_strata: Vec<i32> =
        test_strata.iter().copied().take(2.min(test_strata.len())).collect();
    let mut valid_a: Vec<LabeledExample> =
        valid_v.iter().filter(|e| a_strata.contains(&e.stratum)).cloned().collect();
    if train_strata.len() < 2 && !valid_a.is_empty() {
        // Single train stratum: fall back to the deeper-by-sentence half.
        let mut depths: Vec<usize> = valid_a.iter().map(|e| e.n_sentences).collect();
        depths.sort_unstable();
        let median = depths[depths.len() / 2];
        let harder: Vec<LabeledExample> =
            valid_a.iter().filter(|e| e.n_sentences >= median).cloned().collect();
        if !harder.is_empty() {
            valid_a = harder;
        }
    }
    let valid_b: Vec<LabeledExample> =
        valid_c.iter().filter(|e| b_strata.contains(&e.stratum)).cloned().collect();
    (valid_a, valid_b)
}

/// Corrupts nested fractions of the train split, stratified per answer
/// class and sentence count: the examples corrupted at 10% are corrupted in
/// every larger fraction. Validation and test splits stay uncorrupted.
pub fn gen_overgeneralisation(
    base: &DatasetBundle,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<DatasetBundle>, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // One fixed corruption order per (class, depth) cell; prefixes give the
    // nesting property.
    let mut cells: std::collections::BTreeMap<(bool, usize), Vec<usize>> = Default::default();
    for (i, ex) in base.train.iter().enumerate() {
        cells.entry((ex.answer == Answer::Yes, ex.n_sentences)).or_default().push(i);
    }
    for order in cells.values_mut() {
        order.shuffle(&mut rng);
    }
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(DatasetError::InfeasibleConfig(format!(
                "corruption fraction {fraction} outside [0,1]"
            )));
        }
        let mut bundle = base.clone();
        bundle.task = TaskKind::Overgeneralisation;
        bundle.config = serde_json::json!({
            "base": base.config,
            "corruption_fraction": fraction,
        });
        for order in cells.values() {
            let k = (fraction * order.len() as f64).round() as usize;
            for &i in order.iter().take(k) {
                let ex = &mut bundle.train[i];
                ex.corrupted = true;
                ex.answer = ex.answer.negate();
            }
        }
        out.push(bundle);
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// File format: one JSON record per line plus a sidecar manifest.
// ---------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: u64,
    pub story_lines: Vec<String>,
    pub question: String,
    pub answer: Answer,
    pub n_sentences: usize,
    pub n_nouns: usize,
    pub support_depth: usize,
    pub stratum: i32,
    pub corrupted: bool,
    pub split: String,
}

impl DatasetRecord {
    pub fn from_example(ex: &LabeledExample, split: &str) -> DatasetRecord {
        DatasetRecord {
            id: ex.id,
            story_lines: ex.story.render_lines(),
            question: render_question(&ex.question),
            answer: ex.answer,
            n_sentences: ex.n_sentences,
            n_nouns: ex.n_nouns,
            support_depth: ex.support_depth,
            stratum: ex.stratum,
            corrupted: ex.corrupted,
            split: split.to_string(),
        }
    }

    pub fn to_example(&self) -> Result<LabeledExample, DatasetError> {
        let mut sentences = Vec::with_capacity(self.story_lines.len());
        for line in &self.story_lines {
            sentences.push(parse_sentence(line).map_err(|e| DatasetError::Parse(e.to_string()))?);
        }
        let story = Story::from_sentences(sentences);
        let question =
            parse_question(&self.question).map_err(|e| DatasetError::Parse(e.to_string()))?;
        Ok(LabeledExample {
            id: self.id,
            story,
            question,
            answer: self.answer,
            n_sentences: self.n_sentences,
            n_nouns: self.n_nouns,
            support_depth: self.support_depth,
            stratum: self.stratum,
            corrupted: self.corrupted,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BundleManifest {
    pub task: TaskKind,
    pub seed: u64,
    pub config: serde_json::Value,
    pub train_strata: Vec<i32>,
    pub test_strata: Vec<i32>,
    pub class_prior: f64,
    pub counts: serde_json::Value,
    pub content_hash: String,
}

fn split_file(split: &str) -> String {
    format!("{split}.jsonl")
}

pub fn write_bundle(dir: &Path, bundle: &DatasetBundle) -> Result<String, DatasetError> {
    std::fs::create_dir_all(dir).map_err(|e| DatasetError::Io(e.to_string()))?;
    let mut hasher = Sha256::new();
    let mut counts = serde_json::Map::new();
    for (split, examples) in bundle.splits() {
        let mut body = String::new();
        for ex in examples {
            let record = DatasetRecord::from_example(ex, split);
            body.push_str(&serde_json::to_string(&record).unwrap());
            body.push('\n');
        }
        hasher.update(split.as_bytes());
        hasher.update(body.as_bytes());
        std::fs::write(dir.join(split_file(split)), body)
            .map_err(|e| DatasetError::Io(e.to_string()))?;
        counts.insert(split.to_string(), serde_json::json!(examples.len()));
    }
    let digest = hasher.finalize();
    let content_hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let manifest = BundleManifest {
        task: bundle.task,
        seed: bundle.seed,
        config: bundle.config.clone(),
        train_strata: bundle.train_strata.clone(),
        test_strata: bundle.test_strata.clone(),
        class_prior: bundle.class_prior,
        counts: serde_json::Value::Object(counts),
        content_hash: content_hash.clone(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| DatasetError::Io(e.to_string()))?;
    Ok(content_hash)
}

pub fn read_bundle(dir: &Path) -> Result<DatasetBundle, DatasetError> {
    let manifest: BundleManifest = serde_json::from_str(
        &std::fs::read_to_string(dir.join("manifest.json"))
            .map_err(|e| DatasetError::Io(e.to_string()))?,
    )
    .map_err(|e| DatasetError::Parse(e.to_string()))?;
    let read_split = |split: &str| -> Result<Vec<LabeledExample>, DatasetError> {
        let path = dir.join(split_file(split));
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io(e.to_string()))?;
        let mut out = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let record: DatasetRecord =
                serde_json::from_str(line).map_err(|e| DatasetError::Parse(e.to_string()))?;
            out.push(record.to_example()?);
        }
        Ok(out)
    };
    let train_prime = {
        let tp = read_split("train_prime")?;
        if tp.is_empty() {
            None
        } else {
            Some(tp)
        }
    };
    Ok(DatasetBundle {
        task: manifest.task,
        seed: manifest.seed,
        config: manifest.config,
        train: read_split("train")?,
        test: read_split("test")?,
        valid_v: read_split("valid_v")?,
        valid_a: read_split("valid_a")?,
        valid_b: read_split("valid_b")?,
        valid_c: read_split("valid_c")?,
        train_prime,
        train_strata: manifest.train_strata,
        test_strata: manifest.test_strata,
        class_prior: manifest.class_prior,
    })
}
