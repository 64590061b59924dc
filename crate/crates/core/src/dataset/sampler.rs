//! Seeded story sampler: draws sentences one at a time, steering the draw
//! so the finished story hits a requested answer class and support depth.
//!
//! Constraints honoured by construction:
//! - the question person's answer-settling sentence lands exactly
//!   `support` sentences before the end;
//! - the question location is always mentioned somewhere in the story
//!   (assertions connect to existing wires only);
//! - the noun count never exceeds the cap.

use super::DatasetError;
use crate::backend::Answer;
use crate::dataset::AtomPools;
use crate::grammar::{Particle, Question, SentenceAst, Story};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Probability a filler sentence is a movement.
    pub p_move: f64,
    /// Probability a movement is a `back` movement.
    pub p_back: f64,
    /// Probability of introducing a new person for a filler subject.
    pub p_new_person: f64,
    /// Probability of introducing a new location/object in a filler.
    pub p_new_noun: f64,
    /// Probability a `no`-class question targets a person who never moves.
    pub p_no_by_object_only: f64,
    /// Probability a `no`-class question (about a moved person) targets a
    /// location that person visited earlier, rather than one they never
    /// entered.
    pub p_no_revisit: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            p_move: 0.6,
            p_back: 0.25,
            p_new_person: 0.35,
            p_new_noun: 0.45,
            p_no_by_object_only: 0.3,
            p_no_revisit: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StoryTarget {
    pub depth: usize,
    pub answer: Answer,
    /// Sentences between the answer-settling sentence and the end.
    pub support: usize,
}

struct Draft<'a> {
    cfg: &'a SamplerConfig,
    pools: &'a AtomPools,
    max_nouns: usize,
    people: Vec<String>,
    locations: Vec<String>,
    objects: Vec<String>,
}

impl<'a> Draft<'a> {
    fn noun_count(&self) -> usize {
        self.people.len() + self.locations.len() + self.objects.len()
    }

    fn can_add_noun(&self) -> bool {
        self.noun_count() < self.max_nouns
    }

    fn pick_person(&mut self, rng: &mut ChaCha8Rng, exclude: Option<&str>) -> String {
        let fresh: Vec<&String> = self
            .pools
            .people
            .iter()
            .filter(|p| !self.people.contains(p))
            .collect();
        let existing: Vec<&String> =
            self.people.iter().filter(|p| Some(p.as_str()) != exclude).collect();
        let take_new = !fresh.is_empty()
            && self.can_add_noun()
            && (existing.is_empty() || rng.gen_bool(self.cfg.p_new_person));
        if take_new {
            let p = fresh[rng.gen_range(0..fresh.len())].clone();
            self.people.push(p.clone());
            p
        } else if !existing.is_empty() {
            existing[rng.gen_range(0..existing.len())].clone()
        } else {
            // Cap reached with everyone excluded: fall back to any person.
            self.people[rng.gen_range(0..self.people.len())].clone()
        }
    }

    fn pick_from(
        pool: &[String],
        known: &mut Vec<String>,
        can_add: bool,
        p_new: f64,
        rng: &mut ChaCha8Rng,
        exclude: Option<&str>,
    ) -> Option<String> {
        let fresh: Vec<&String> = pool.iter().filter(|x| !known.contains(x)).collect();
        let existing: Vec<&String> =
            known.iter().filter(|x| Some(x.as_str()) != exclude).collect();
        let take_new =
            !fresh.is_empty() && can_add && (existing.is_empty() || rng.gen_bool(p_new));
        if take_new {
            let x = fresh[rng.gen_range(0..fresh.len())].clone();
            known.push(x.clone());
            Some(x)
        } else if !existing.is_empty() {
            Some(existing[rng.gen_range(0..existing.len())].clone())
        } else if !known.is_empty() {
            Some(known[rng.gen_range(0..known.len())].clone())
        } else {
            None
        }
    }

    fn pick_location(&mut self, rng: &mut ChaCha8Rng, exclude: Option<&str>) -> Option<String> {
        let can_add = self.can_add_noun();
        Draft::pick_from(&self.pools.locations, &mut self.locations, can_add, self.cfg.p_new_noun, rng, exclude)
    }

    fn pick_object(&mut self, rng: &mut ChaCha8Rng) -> Option<String> {
        let can_add = self.can_add_noun();
        Draft::pick_from(&self.pools.objects, &mut self.objects, can_add, self.cfg.p_new_noun, rng, None)
    }

    fn movement_verb(&self, rng: &mut ChaCha8Rng) -> String {
        self.pools.movement_verbs[rng.gen_range(0..self.pools.movement_verbs.len())].clone()
    }

    fn move_sentence(&mut self, rng: &mut ChaCha8Rng, person: String, location: String) -> SentenceAst {
        SentenceAst::Move {
            person,
            location,
            verb: self.movement_verb(rng),
            back: self.pools.allow_back && rng.gen_bool(self.cfg.p_back),
        }
    }

    fn object_sentence(&mut self, rng: &mut ChaCha8Rng, person: String) -> Option<SentenceAst> {
        let object = self.pick_object(rng)?;
        let mut choices: Vec<u8> = Vec::new();
        if !self.pools.grab_verbs.is_empty() {
            choices.push(0);
        }
        if self.pools.allow_picked {
            choices.push(1);
        }
        if self.pools.allow_put {
            choices.push(2);
        }
        let (verb, particle) = match choices.choose(rng)? {
            0 => (self.pools.grab_verbs[rng.gen_range(0..self.pools.grab_verbs.len())].clone(), None),
            1 => ("picked".to_string(), Some(Particle::Up)),
            _ => ("put".to_string(), Some(Particle::Down)),
        };
        Some(SentenceAst::ObjectAction { person, object, verb, particle })
    }

    /// A filler sentence; `avoid_move_by` blocks later movements of the
    /// question person so the answer-settling sentence stays last.
    fn filler(&mut self, rng: &mut ChaCha8Rng, avoid_move_by: Option<&str>, avoid_mention: Option<&str>) -> SentenceAst {
        for _ in 0..16 {
            let want_move = rng.gen_bool(self.cfg.p_move);
            if want_move {
                let person = self.pick_person(rng, avoid_mention);
                if Some(person.as_str()) != avoid_move_by && Some(person.as_str()) != avoid_mention
                {
                    if let Some(location) = self.pick_location(rng, None) {
                        return self.move_sentence(rng, person, location);
                    }
                }
            } else {
                let person = self.pick_person(rng, avoid_mention);
                if Some(person.as_str()) != avoid_mention {
                    if let Some(s) = self.object_sentence(rng, person) {
                        return s;
                    }
                }
            }
        }
        // Object pools can be empty under restricted closures; fall back to
        // a movement by someone other than the protected person.
        let person = self.pick_person(rng, avoid_mention.or(avoid_move_by));
        let location =
            self.pick_location(rng, None).unwrap_or_else(|| self.pools.locations[0].clone());
        if Some(person.as_str()) == avoid_move_by || Some(person.as_str()) == avoid_mention {
            // Last resort: an object action cannot exist without objects, so
            // accept a move by a brand-new person even past the noun cap.
            let fallback = self
                .pools
                .people
                .iter()
                .find(|p| !self.people.contains(p))
                .cloned()
                .unwrap_or_else(|| person.clone());
            if !self.people.contains(&fallback) {
                self.people.push(fallback.clone());
            }
            return self.move_sentence(rng, fallback, location);
        }
        self.move_sentence(rng, person, location)
    }
}

/// Draws one story and question meeting the target exactly.
pub fn sample_story(
    cfg: &SamplerConfig,
    pools: &AtomPools,
    max_nouns: usize,
    target: StoryTarget,
    rng: &mut ChaCha8Rng,
) -> Result<(Story, Question), DatasetError> {
    if target.depth < 2 {
        return Err(DatasetError::InfeasibleConfig(
            "stories need at least two sentences to balance answers".into(),
        ));
    }
    if target.support >= target.depth {
        return Err(DatasetError::InfeasibleConfig(format!(
            "support depth {} requires more than {} sentences",
            target.support, target.depth
        )));
    }
    if pools.people.len() < 2 || pools.locations.len() < 2 {
        return Err(DatasetError::InfeasibleConfig(
            "need at least two people and two locations".into(),
        ));
    }
    let d = target.depth;
    let idx_answer = d - 1 - target.support;
    let mut draft = Draft {
        cfg,
        pools,
        max_nouns,
        people: Vec::new(),
        locations: Vec::new(),
        objects: Vec::new(),
    };
    let mut sentences: Vec<Option<SentenceAst>> = vec![None; d];
    let person = draft.pick_person(rng, None);

    let object_only = target.answer == Answer::No
        && !pools.objects.is_empty()
        && rng.gen_bool(cfg.p_no_by_object_only);

    let question = if object_only {
        // The person only ever touches objects; their last mention settles
        // the answer. Some other movement provides the target location.
        let obj = draft
            .object_sentence(rng, person.clone())
            .ok_or_else(|| DatasetError::InfeasibleConfig("no objects available".into()))?;
        sentences[idx_answer] = Some(obj);
        for i in 0..d {
            if i == idx_answer {
                continue;
            }
            let s = if i < idx_answer {
                // May mention the person (earlier object actions) but must
                // not move them.
                draft.filler(rng, Some(&person), None)
            } else {
                draft.filler(rng, Some(&person), Some(&person))
            };
            sentences[i] = Some(s);
        }
        // Guarantee a location exists: force the first non-answer slot to a
        // movement by someone else if none landed.
        if draft.locations.is_empty() {
            let slot = if idx_answer == 0 { 1 } else { 0 };
            let other = draft.pick_person(rng, Some(&person));
            let location = Draft::pick_from(
                &pools.locations,
                &mut draft.locations,
                true,
                1.0,
                rng,
                None,
            )
            .expect("location pool nonempty");
            sentences[slot] = Some(draft.move_sentence(rng, other, location));
        }
        let location = draft.locations[rng.gen_range(0..draft.locations.len())].clone();
        Question { person: person.clone(), location }
    } else {
        let final_location = draft
            .pick_location(rng, None)
            .ok_or_else(|| DatasetError::InfeasibleConfig("no locations available".into()))?;
        sentences[idx_answer] =
            Some(draft.move_sentence(rng, person.clone(), final_location.clone()));
        for i in 0..d {
            if i == idx_answer {
                continue;
            }
            let s = if i < idx_answer {
                // Anything goes before the answer, including moves by the
                // question person.
                let subj_is_person = rng.gen_bool(0.4);
                if subj_is_person {
                    if rng.gen_bool(cfg.p_move) {
                        match draft.pick_location(rng, None) {
                            Some(loc) => draft.move_sentence(rng, person.clone(), loc),
                            None => draft.filler(rng, None, None),
                        }
                    } else {
                        draft
                            .object_sentence(rng, person.clone())
                            .unwrap_or_else(|| draft.filler(rng, None, None))
                    }
                } else {
                    draft.filler(rng, None, None)
                }
            } else {
                draft.filler(rng, Some(&person), None)
            };
            sentences[i] = Some(s);
        }
        match target.answer {
            Answer::Yes => Question { person: person.clone(), location: final_location },
            Answer::No => {
                // Ask about a mentioned location that is not where the
                // person ended up; plant one if none exists. Split the
                // candidates by whether the person passed through them.
                let visited: Vec<String> = sentences
                    .iter()
                    .flatten()
                    .filter_map(|s| match s {
                        SentenceAst::Move { person: p, location, .. } if *p == person => {
                            Some(location.clone())
                        }
                        _ => None,
                    })
                    .collect();
                let all_others: Vec<String> = draft
                    .locations
                    .iter()
                    .filter(|l| **l != final_location)
                    .cloned()
                    .collect();
                let revisits: Vec<String> =
                    all_others.iter().filter(|l| visited.contains(l)).cloned().collect();
                let fresh: Vec<String> =
                    all_others.iter().filter(|l| !visited.contains(l)).cloned().collect();
                let mut others: Vec<String> = if revisits.is_empty() || fresh.is_empty() {
                    all_others
                } else if rng.gen_bool(cfg.p_no_revisit) {
                    revisits
                } else {
                    fresh
                };
                if others.is_empty() {
                    let planted = Draft::pick_from(
                        &pools.locations,
                        &mut draft.locations,
                        true,
                        1.0,
                        rng,
                        Some(&final_location),
                    )
                    .filter(|l| *l != final_location)
                    .ok_or_else(|| {
                        DatasetError::InfeasibleConfig("need a second location".into())
                    })?;
                    let slot = if idx_answer == 0 { 1 } else { 0 };
                    let s = if slot < idx_answer {
                        draft.move_sentence(rng, person.clone(), planted.clone())
                    } else {
                        let other = draft.pick_person(rng, Some(&person));
                        draft.move_sentence(rng, other, planted.clone())
                    };
                    sentences[slot] = Some(s);
                    others.push(planted);
                }
                let location = others[rng.gen_range(0..others.len())].clone();
                Question { person: person.clone(), location }
            }
        }
    };

    let sentences: Vec<SentenceAst> = sentences.into_iter().map(Option::unwrap).collect();
    let story = Story::from_sentences(sentences);
    debug_assert!(story.wire_of(&question.location).is_some());
    Ok((story, question))
}

