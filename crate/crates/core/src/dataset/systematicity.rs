//! Systematicity dataset: people and locations are split into indexed
//! groups with a base pairing set (the designated person paired with every
//! location, and every person with the designated location). Training
//! examples only ever exhibit base `(person, location)` pairs; test strata
//! count how many distinct non-base pairs an example exhibits. Object
//! interactions are ignored for pair counting.

use super::sampler::SamplerConfig;
use super::{
    finish_example, hard_tail_tract_head, AtomPools, DatasetBundle, DatasetError, LabeledExample,
    TaskKind,
};
use crate::backend::Answer;
use crate::grammar::{Particle, Question, SentenceAst, Story, LOCATIONS, PEOPLE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Indexed noun groups. Positive ids name explicit member sets; each group
/// also induces its complement under the negated id.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NounGroups {
    pub base_person: usize,
    pub base_location: usize,
    pub people_groups: Vec<(i32, Vec<usize>)>,
    pub location_groups: Vec<(i32, Vec<usize>)>,
}

impl Default for NounGroups {
    fn default() -> Self {
        NounGroups {
            base_person: 0,
            base_location: 0,
            people_groups: vec![
                (1, vec![0]),
                (2, vec![3, 4, 5, 6, 7]),
                (3, vec![1, 2]),
                (4, vec![1, 2, 3]),
            ],
            location_groups: vec![
                (1, vec![0]),
                (2, vec![3, 4, 5, 6, 7]),
                (3, vec![1, 2]),
                (4, vec![1, 2, 3]),
            ],
        }
    }
}

/// Smallest group (by member count, then |id|) containing every given
/// index; negative ids are the complements of the positive groups.
pub fn assign_group(
    members: &[usize],
    groups: &[(i32, Vec<usize>)],
    universe: usize,
) -> Option<i32> {
    let mut candidates: Vec<(usize, i32)> = Vec::new();
    for (id, set) in groups {
        if members.iter().all(|m| set.contains(m)) {
            candidates.push((set.len(), *id));
        }
        let complement: Vec<usize> = (0..universe).filter(|i| !set.contains(i)).collect();
        if members.iter().all(|m| complement.contains(m)) {
            candidates.push((complement.len(), -*id));
        }
    }
    candidates.sort_by_key(|&(len, id)| (len, id.abs(), id < 0));
    candidates.first().map(|&(_, id)| id)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SystematicityConfig {
    pub groups: NounGroups,
    /// Examples per stratum; stratum 0 is the train distribution.
    pub per_stratum: usize,
    pub strata: Vec<i32>,
    pub depths: (usize, usize),
    pub valid_fraction: f64,
    pub max_nouns: usize,
    /// Target share of `no` answers; the base construction leans `no`.
    pub no_prior: f64,
    #[serde(default)]
    pub sampler: SamplerConfig,
}

impl Default for SystematicityConfig {
    fn default() -> Self {
        SystematicityConfig {
            groups: NounGroups::default(),
            per_stratum: 200,
            strata: vec![0, 1, 2, 3],
            depths: (2, 6),
            valid_fraction: 0.2,
            max_nouns: 10,
            no_prior: 0.516,
            sampler: SamplerConfig::default(),
        }
    }
}

/// Distinct `(person, location)` pairs exhibited by movements plus the
/// question pair. Object interactions never count.
pub fn pair_profile(story: &Story, question: &Question) -> BTreeSet<(String, String)> {
    let mut pairs = BTreeSet::new();
    for s in &story.sentences {
        if let SentenceAst::Move { person, location, .. } = s {
            pairs.insert((person.clone(), location.clone()));
        }
    }
    pairs.insert((question.person.clone(), question.location.clone()));
    pairs
}

fn is_base_pair(groups: &NounGroups, person: &str, location: &str) -> bool {
    person == PEOPLE[groups.base_person] || location == LOCATIONS[groups.base_location]
}

/// Count of distinct non-base pairs: the example's systematicity stratum.
pub fn non_base_pairs(groups: &NounGroups, story: &Story, question: &Question) -> usize {
    pair_profile(story, question)
        .iter()
        .filter(|(p, l)| !is_base_pair(groups, p, l))
        .count()
}

struct PairPlan {
    /// Move sequence in story order; the question person's last move (when
    /// they move at all) is the final element.
    moves: Vec<(String, String)>,
    question: Question,
    /// The question person never moves and needs one object mention.
    person_object_only: bool,
}

fn plan_pairs(
    groups: &NounGroups,
    stratum: usize,
    answer: Answer,
    rng: &mut ChaCha8Rng,
) -> Option<PairPlan> {
    let base_p = PEOPLE[groups.base_person].to_string();
    let base_l = LOCATIONS[groups.base_location].to_string();
    let other_people: Vec<String> = (0..PEOPLE.len())
        .filter(|&i| i != groups.base_person)
        .map(|i| PEOPLE[i].to_string())
        .collect();
    let other_locations: Vec<String> = (0..LOCATIONS.len())
        .filter(|&i| i != groups.base_location)
        .map(|i| LOCATIONS[i].to_string())
        .collect();

    let sample_base_pair = |rng: &mut ChaCha8Rng| -> (String, String) {
        if rng.gen_bool(0.5) {
            let l = if rng.gen_bool(0.2) { base_l.clone() } else { other_locations.choose(rng).unwrap().clone() };
            (base_p.clone(), l)
        } else {
            let p = if rng.gen_bool(0.2) { base_p.clone() } else { other_people.choose(rng).unwrap().clone() };
            (p, base_l.clone())
        }
    };

    // Question pair: base for stratum 0, usually one of the planned
    // non-base pairs otherwise.
    let question_nonbase = stratum >= 1 && rng.gen_bool(0.75);
    let question_pair = if question_nonbase {
        (other_people.choose(rng)?.clone(), other_locations.choose(rng)?.clone())
    } else {
        sample_base_pair(rng)
    };

    // Distinct non-base pairs, including the question pair when non-base.
    let mut non_base: Vec<(String, String)> = Vec::new();
    if question_nonbase {
        non_base.push(question_pair.clone());
    }
    let mut guard = 0;
    while non_base.len() < stratum {
        let p = other_people.choose(rng)?.clone();
        let l = other_locations.choose(rng)?.clone();
        if !non_base.contains(&(p.clone(), l.clone())) {
            non_base.push((p, l));
        }
        guard += 1;
        if guard > 300 {
            return None;
        }
    }

    let question =
        Question { person: question_pair.0.clone(), location: question_pair.1.clone() };
    match answer {
        Answer::Yes => {
            // Last move of the person is exactly the question pair.
            let mut earlier: Vec<(String, String)> =
                non_base.iter().filter(|p| **p != question_pair).cloned().collect();
            for _ in 0..rng.gen_range(0..=1) {
                earlier.push(sample_base_pair(rng));
            }
            earlier.shuffle(rng);
            earlier.push(question_pair);
            Some(PairPlan { moves: earlier, question, person_object_only: false })
        }
        Answer::No => {
            // Prefer a moved-away construction: the person visits the
            // question location, then finishes somewhere base-compatible.
            let final_pair = if question_pair.1 != base_l {
                Some((question_pair.0.clone(), base_l.clone()))
            } else if question_pair.0 == base_p {
                other_locations.choose(rng).map(|l| (base_p.clone(), l.clone()))
            } else {
                None
            };
            match final_pair {
                Some(final_pair) => {
                    let mut earlier: Vec<(String, String)> =
                        non_base.iter().filter(|p| **p != final_pair).cloned().collect();
                    if !earlier.contains(&question_pair) {
                        earlier.push(question_pair.clone());
                    }
                    for _ in 0..rng.gen_range(0..=1) {
                        let extra = sample_base_pair(rng);
                        if extra != final_pair {
                            earlier.push(extra);
                        }
                    }
                    earlier.shuffle(rng);
                    earlier.push(final_pair);
                    Some(PairPlan { moves: earlier, question, person_object_only: false })
                }
                None => {
                    // Base question about the base location with a non-base
                    // person: they never move; someone else provides the
                    // location mention (a base pair).
                    let mut moves: Vec<(String, String)> = non_base
                        .iter()
                        .filter(|(p, _)| *p != question_pair.0)
                        .cloned()
                        .collect();
                    if moves.len() < non_base.len() {
                        // A planned non-base pair involved the person; the
                        // construction cannot keep the stratum exact.
                        return None;
                    }
                    let mention_p = other_people
                        .iter()
                        .filter(|p| **p != question_pair.0)
                        .choose_stable(rng)?
                        .clone();
                    moves.push((mention_p, base_l.clone()));
                    moves.shuffle(rng);
                    Some(PairPlan { moves, question, person_object_only: true })
                }
            }
        }
    }
}

trait ChooseStable<T> {
    fn choose_stable(self, rng: &mut ChaCha8Rng) -> Option<T>;
}

impl<'a, T: Clone, I: Iterator<Item = &'a T>> ChooseStable<T> for I
where
    T: 'a,
{
    fn choose_stable(self, rng: &mut ChaCha8Rng) -> Option<T> {
        let items: Vec<&T> = self.collect();
        if items.is_empty() {
            None
        } else {
            Some(items[rng.gen_range(0..items.len())].clone())
        }
    }
}

pub fn gen_systematicity(
    cfg: &SystematicityConfig,
    seed: u64,
) -> Result<DatasetBundle, DatasetError> {
    if cfg.depths.0 < 2 || cfg.depths.0 > cfg.depths.1 {
        return Err(DatasetError::InfeasibleConfig("bad depth range".into()));
    }
    if !cfg.strata.contains(&0) {
        return Err(DatasetError::InfeasibleConfig("strata must include 0 (train)".into()));
    }
    if !(0.0..=1.0).contains(&cfg.no_prior) {
        return Err(DatasetError::InfeasibleConfig("no_prior outside [0,1]".into()));
    }
    let max_stratum = *cfg.strata.iter().max().unwrap() as usize;
    if max_stratum + 1 > cfg.depths.1 {
        return Err(DatasetError::InfeasibleConfig(format!(
            "stratum {max_stratum} needs stories deeper than {}",
            cfg.depths.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pools = AtomPools::full();
    let mut next_id = 0u64;

    let mut per_stratum: Vec<Vec<LabeledExample>> = Vec::new();
    for &stratum in &cfg.strata {
        let stratum = stratum as usize;
        let n_no = (cfg.per_stratum as f64 * cfg.no_prior).round() as usize;
        let mut examples = Vec::with_capacity(cfg.per_stratum);
        for i in 0..cfg.per_stratum {
            let answer = if i < n_no { Answer::No } else { Answer::Yes };
            let mut attempts = 0;
            let ex = loop {
                if let Some(ex) =
                    try_build(cfg, stratum, answer, &pools, next_id, &mut rng)?
                {
                    break ex;
                }
                attempts += 1;
                if attempts > 800 {
                    return Err(DatasetError::InfeasibleConfig(format!(
                        "cannot generate stratum {stratum} answer {answer:?}"
                    )));
                }
            };
            next_id += 1;
            examples.push(ex);
        }
        examples.shuffle(&mut rng);
        per_stratum.push(examples);
    }

    let mut train = Vec::new();
    let mut valid_v = Vec::new();
    let mut test = Vec::new();
    let mut valid_c = Vec::new();
    for (examples, &stratum) in per_stratum.into_iter().zip(&cfg.strata) {
        let n_valid = (examples.len() as f64 * cfg.valid_fraction).round() as usize;
        let (valid, rest) = examples.split_at(n_valid);
        if stratum == 0 {
            valid_v.extend_from_slice(valid);
            train.extend_from_slice(rest);
        } else {
            valid_c.extend_from_slice(valid);
            test.extend_from_slice(rest);
        }
    }
    let train_strata = vec![0];
    let test_strata: Vec<i32> = cfg.strata.iter().copied().filter(|&s| s != 0).collect();
    let (valid_a, valid_b) = hard_tail_tract_head(&valid_v, &valid_c, &train_strata, &test_strata);
    let labels_no = train.iter().chain(&test).filter(|e| e.answer == Answer::No).count() as f64;
    let total = (train.len() + test.len()) as f64;
    Ok(DatasetBundle {
        task: TaskKind::Systematicity,
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
        class_prior: labels_no / total,
    })
}

fn try_build(
    cfg: &SystematicityConfig,
    stratum: usize,
    answer: Answer,
    pools: &AtomPools,
    id: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<LabeledExample>, DatasetError> {
    let plan = match plan_pairs(&cfg.groups, stratum, answer, rng) {
        Some(p) => p,
        None => return Ok(None),
    };
    let min_depth =
        (plan.moves.len() + usize::from(plan.person_object_only)).max(cfg.depths.0);
    if min_depth > cfg.depths.1 {
        return Ok(None);
    }
    let depth = rng.gen_range(min_depth..=cfg.depths.1);

    // Choose slots for the moves, keeping plan order; everything else is an
    // object-action filler, one of which must mention a never-moving
    // question person.
    let mut slot_indices: Vec<usize> = (0..depth).collect();
    slot_indices.shuffle(rng);
    let mut move_slots: Vec<usize> = slot_indices[..plan.moves.len()].to_vec();
    move_slots.sort_unstable();
    let mut slots: Vec<Option<SentenceAst>> = vec![None; depth];
    for (slot, (person, location)) in move_slots.iter().zip(&plan.moves) {
        let verb = pools.movement_verbs[rng.gen_range(0..pools.movement_verbs.len())].clone();
        let back = rng.gen_bool(cfg.sampler.p_back);
        slots[*slot] = Some(SentenceAst::Move {
            person: person.clone(),
            location: location.clone(),
            verb,
            back,
        });
    }
    let filler_slots: Vec<usize> =
        (0..depth).filter(|i| slots[*i].is_none()).collect();
    let mention_slot = if plan.person_object_only { filler_slots.first().copied() } else { None };
    for i in filler_slots {
        let person = if Some(i) == mention_slot {
            plan.question.person.clone()
        } else {
            PEOPLE[rng.gen_range(0..PEOPLE.len())].to_string()
        };
        let object = pools.objects[rng.gen_range(0..pools.objects.len())].clone();
        let s = match rng.gen_range(0..8) {
            0 => SentenceAst::ObjectAction {
                person,
                object,
                verb: "picked".into(),
                particle: Some(Particle::Up),
            },
            1 => SentenceAst::ObjectAction {
                person,
                object,
                verb: "put".into(),
                particle: Some(Particle::Down),
            },
            _ => SentenceAst::ObjectAction {
                person,
                object,
                verb: pools.grab_verbs[rng.gen_range(0..pools.grab_verbs.len())].clone(),
                particle: None,
            },
        };
        slots[i] = Some(s);
    }
    let sentences: Vec<SentenceAst> = slots.into_iter().map(Option::unwrap).collect();
    let story = Story::from_sentences(sentences);
    if story.nouns.len() > cfg.max_nouns {
        return Ok(None);
    }
    if story.wire_of(&plan.question.location).is_none() {
        return Ok(None);
    }
    let ex = finish_example(id, story, plan.question.clone(), stratum as i32, false)?;
    if ex.answer != answer {
        return Ok(None);
    }
    if non_base_pairs(&cfg.groups, &ex.story, &ex.question) != stratum {
        return Ok(None);
    }
    Ok(Some(ex))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smallest_group_wins() {
        let groups = NounGroups::default();
        // Bill and Clara are people 1 and 2: inside groups 3, 4 and the
        // complement of group 2; group 3 is the smallest.
        let got = assign_group(&[1, 2], &groups.people_groups, PEOPLE.len());
        assert_eq!(got, Some(3));
    }

    #[test]
    fn base_pairs_are_stratum_zero() {
        let cfg = SystematicityConfig::default();
        let story = Story::from_sentences(vec![
            SentenceAst::Move {
                person: "Andrew".into(),
                location: "office".into(),
                verb: "moved".into(),
                back: false,
            },
            SentenceAst::Move {
                person: "Bill".into(),
                location: "kitchen".into(),
                verb: "went".into(),
                back: false,
            },
        ]);
        let q = Question { person: "Bill".into(), location: "kitchen".into() };
        // Andrew is the base person, kitchen the base location.
        assert_eq!(non_base_pairs(&cfg.groups, &story, &q), 0);
    }
}
