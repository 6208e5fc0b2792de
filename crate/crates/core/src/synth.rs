//! Template-grammar corpus with known gold bracketing.
//!
//! ```text
//! S   → NP VP .
//! NP  → det n | det adj n | det n PP
//! VP  → v NP | v | v PP | adv v NP
//! PP  → p NP            (no nested PP)
//! ```
//!
//! Every NP draws a noun class; its det, adj and n agree with it. Verbs and
//! prepositions prefer objects of their own class. Words within a class are
//! Zipf-distributed. Gold trees are binary and labeled, with the final "."
//! attached at the root.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::tree::Tree;

/// Word classes and their sizes; 200 types in total including ".".
pub const WORD_CLASSES: [(&str, usize); 6] = [
    ("det", 10),
    ("adj", 40),
    ("n", 70),
    ("v", 49),
    ("p", 15),
    ("adv", 15),
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            sentences: 2000,
            max_len: 10,
            seed: 0,
        }
    }
}

pub fn vocabulary() -> Vec<String> {
    let mut out: Vec<String> = WORD_CLASSES
        .iter()
        .flat_map(|&(c, n)| (0..n).map(move |i| format!("{c}{i}")))
        .collect();
    out.push(".".into());
    out
}

/// Number of noun classes.
pub const NOUN_CLASSES: usize = 5;

/// Probability that a verb or preposition takes an object of its own class.
const SELECTION: f64 = 0.8;

const DET: usize = 0;
const ADJ: usize = 1;
const N: usize = 2;
const V: usize = 3;
const P: usize = 4;
const ADV: usize = 5;

struct Generator {
    rng: ChaCha8Rng,
    /// Per word class: Zipf over all words, and over the words of one noun class.
    zipf: Vec<(WeightedIndex<f64>, WeightedIndex<f64>)>,
}

impl Generator {
    fn leaf(class: usize, i: usize) -> Tree {
        Tree::leaf(0, format!("{}{i}", WORD_CLASSES[class].0))
    }

    fn word(&mut self, class: usize) -> (Tree, usize) {
        let i = self.zipf[class].0.sample(&mut self.rng);
        (Self::leaf(class, i), i % NOUN_CLASSES)
    }

    fn agreeing(&mut self, class: usize, noun_class: usize) -> Tree {
        let j = self.zipf[class].1.sample(&mut self.rng);
        Self::leaf(class, noun_class + NOUN_CLASSES * j)
    }

    fn object_class(&mut self, preferred: usize) -> usize {
        if self.rng.gen_bool(SELECTION) {
            preferred
        } else {
            self.rng.gen_range(0..NOUN_CLASSES)
        }
    }

    fn base_np(&mut self, c: usize) -> Tree {
        let det = self.agreeing(DET, c);
        if self.rng.gen_bool(0.4) {
            let adj = self.agreeing(ADJ, c);
            let n = self.agreeing(N, c);
            Tree::labeled("NP", vec![det, Tree::labeled("NBAR", vec![adj, n])])
        } else {
            let n = self.agreeing(N, c);
            Tree::labeled("NP", vec![det, n])
        }
    }

    fn np(&mut self, c: usize) -> Tree {
        if self.rng.gen_bool(0.2) {
            let inner = self.base_np(c);
            let pp = self.pp();
            Tree::labeled("NP", vec![inner, pp])
        } else {
            self.base_np(c)
        }
    }

    fn pp(&mut self) -> Tree {
        let (p, pref) = self.word(P);
        let c = self.object_class(pref);
        let np = self.base_np(c);
        Tree::labeled("PP", vec![p, np])
    }

    fn transitive(&mut self) -> Tree {
        let (v, pref) = self.word(V);
        let c = self.object_class(pref);
        let np = self.np(c);
        Tree::labeled("VP", vec![v, np])
    }

    fn vp(&mut self) -> Tree {
        match self.rng.gen_range(0..20) {
            0..=9 => self.transitive(),
            10..=12 => self.word(V).0,
            13..=16 => {
                let v = self.word(V).0;
                let pp = self.pp();
                Tree::labeled("VP", vec![v, pp])
            }
            _ => {
                let adv = self.word(ADV).0;
                let vp = self.transitive();
                Tree::labeled("VP", vec![adv, vp])
            }
        }
    }

    fn sentence(&mut self) -> Tree {
        let c = self.rng.gen_range(0..NOUN_CLASSES);
        let np = self.np(c);
        let vp = self.vp();
        let mut t = Tree::labeled("S", vec![Tree::labeled("S", vec![np, vp]), Tree::leaf(0, ".")]);
        t.reindex();
        t
    }
}

/// `cfg.sentences` gold trees with at most `cfg.max_len` tokens each.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<Tree>> {
    if cfg.max_len < 4 {
        return Err(Error::Invalid("the grammar needs max_len ≥ 4".into()));
    }
    let zipf_over = |n: usize| WeightedIndex::new((1..=n).map(|r| 1.0 / r as f64)).expect("positive weights");
    let zipf = WORD_CLASSES
        .iter()
        .map(|&(_, n)| (zipf_over(n), zipf_over(n / NOUN_CLASSES)))
        .collect();
    let mut g = Generator {
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        zipf,
    };
    let mut out = Vec::with_capacity(cfg.sentences);
    while out.len() < cfg.sentences {
        let t = g.sentence();
        if t.num_leaves() <= cfg.max_len {
            out.push(t);
        }
    }
    Ok(out)
}

pub fn sentences(trees: &[Tree]) -> Vec<Sentence> {
    trees
        .iter()
        .map(|t| Sentence::new(t.tokens()).expect("generated trees have tokens"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn corpus_shape() {
        let trees = generate(&SynthConfig::default()).unwrap();
        assert_eq!(trees.len(), 2000);
        assert_eq!(vocabulary().len(), 200);
        let vocab: HashSet<String> = vocabulary().into_iter().collect();
        for t in &trees {
            assert!(t.num_leaves() <= 10 && t.num_leaves() >= 4);
            assert!(t.is_binary());
            assert_eq!(t.children()[1], Tree::leaf(t.num_leaves() - 1, "."));
            assert!(t.tokens().iter().all(|w| vocab.contains(w)));
        }
        assert_eq!(trees, generate(&SynthConfig::default()).unwrap());
    }

    #[test]
    fn noun_phrases_agree() {
        let class = |w: &str| w.trim_start_matches(char::is_alphabetic).parse::<usize>().unwrap() % NOUN_CLASSES;
        for t in generate(&SynthConfig { sentences: 200, ..SynthConfig::default() }).unwrap() {
            for (range, label) in t.constituents() {
                if label == Some("NP") {
                    let words: Vec<String> = t.tokens()[range.0..range.1].to_vec();
                    if words.iter().all(|w| !w.starts_with('p')) {
                        let classes: HashSet<usize> = words.iter().map(|w| class(w)).collect();
                        assert_eq!(classes.len(), 1, "{words:?}");
                    }
                }
            }
        }
    }
}
