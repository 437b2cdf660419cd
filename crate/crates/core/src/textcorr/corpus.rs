use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{invalid, Result};
use crate::rng::rng_from_seed;

/// A slot grammar for synthetic gloss sentences. Each sentence picks a topic,
/// then fills the slots in order from that topic's options; slots past
/// `required_slots` are skipped with probability `skip_prob`. Every gloss
/// belongs to exactly one (topic, slot) pair, so sentences never repeat a
/// gloss and word order is recoverable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrammarConfig {
    pub topics: usize,
    pub slots: usize,
    pub options: usize,
    pub required_slots: usize,
    pub skip_prob: f64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            topics: 6,
            slots: 6,
            options: 2,
            required_slots: 3,
            skip_prob: 0.3,
        }
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.topics == 0 || self.slots == 0 || self.options == 0 {
            errs.push("grammar topics, slots and options must be positive".into());
        }
        if self.required_slots == 0 || self.required_slots > self.slots {
            errs.push(format!(
                "grammar.required_slots must be in 1..={}, got {}",
                self.slots, self.required_slots
            ));
        }
        if !(0.0..=1.0).contains(&self.skip_prob) {
            errs.push(format!("grammar.skip_prob must be in [0, 1], got {}", self.skip_prob));
        }
        errs
    }

    fn gloss(topic: usize, slot: usize, option: usize) -> String {
        format!("t{topic}s{slot}o{option}")
    }

    /// All glosses of the grammar, in a fixed order.
    pub fn vocabulary(&self) -> Vocabulary {
        let mut all = Vec::new();
        for t in 0..self.topics {
            for s in 0..self.slots {
                for o in 0..self.options {
                    all.push(Self::gloss(t, s, o));
                }
            }
        }
        Vocabulary::build(&[all.join(" ")]).expect("non-empty corpus")
    }

    pub fn max_sentence_len(&self) -> usize {
        self.slots
    }
}

/// `n` sentences drawn from the grammar.
pub fn gloss_corpus(grammar: &GrammarConfig, n: usize, seed: u64) -> Result<Vec<String>> {
    let errs = grammar.validate();
    if !errs.is_empty() {
        return invalid(errs.join("; "));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let topic = rng.random_range(0..grammar.topics);
        let mut words = Vec::with_capacity(grammar.slots);
        for s in 0..grammar.slots {
            let skip = rng.random::<f64>() < grammar.skip_prob;
            let option = rng.random_range(0..grammar.options);
            if s < grammar.required_slots || !skip {
                words.push(GrammarConfig::gloss(topic, s, option));
            }
        }
        out.push(words.join(" "));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentences_are_in_vocabulary_without_repeats() {
        let g = GrammarConfig::default();
        let vocab = g.vocabulary();
        assert_eq!(vocab.len(), 5 + g.topics * g.slots * g.options);
        let corpus = gloss_corpus(&g, 200, 4).unwrap();
        assert_eq!(corpus, gloss_corpus(&g, 200, 4).unwrap());
        for s in &corpus {
            let ids = vocab.encode(s);
            vocab.validate(ids.ids()).unwrap();
            assert_eq!(ids.adjacent_repeats(), 0);
            assert!(ids.ids().len() >= g.required_slots && ids.ids().len() <= g.max_sentence_len());
        }
    }
}
