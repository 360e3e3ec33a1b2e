//! Deterministic synthetic cased corpus.
//!
//! Sentences come from a second-order Markov chain over word classes; each
//! class emits words with Zipf-shaped weights. Word forms are concatenated
//! consonant-vowel syllables, so frequent words are short and forms share
//! pieces. A share of the vocabulary is always capitalized, a few words are
//! acronyms, some take either case, and sentence-initial words are
//! capitalized.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ClientShard;
use crate::error::{Error, Result};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const SUCCESSORS: usize = 5;
const MIN_LEN: usize = 2;
const MAX_LEN: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub types: usize,
    pub tokens: usize,
    pub classes: usize,
    pub seed: u64,
    /// Zipf exponent of within-class emission weights.
    #[serde(default = "zipf")]
    pub zipf: f64,
}

fn zipf() -> f64 {
    1.0
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { types: 10_000, tokens: 1_000_000, classes: 40, seed: 1, zipf: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Case {
    Lower,
    Title,
    Upper,
    /// Title case with the given probability.
    Either(f64),
}

/// A sampled synthetic language.
#[derive(Clone, Debug)]
pub struct SynthLanguage {
    forms: Vec<String>,
    case: Vec<Case>,
    class_words: Vec<Vec<usize>>,
    emit: Vec<WeightedIndex<f64>>,
    /// Successor classes and weights per (c₋₂, c₋₁) context; `classes` marks
    /// the sentence start.
    next: Vec<(Vec<usize>, WeightedIndex<f64>)>,
    end: Vec<f64>,
    classes: usize,
}

/// The `i`-th syllable word in bijective base |CV|.
pub fn word_form(mut i: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut syl = Vec::new();
    loop {
        let d = i % base;
        syl.push(d);
        if i < base {
            break;
        }
        i = i / base - 1;
    }
    let mut s = String::new();
    for d in syl.into_iter().rev() {
        s.push(CONSONANTS[d / VOWELS.len()] as char);
        s.push(VOWELS[d % VOWELS.len()] as char);
    }
    s
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl SynthLanguage {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        if cfg.types < cfg.classes || cfg.classes == 0 || !(cfg.zipf > 0.0) {
            return Err(Error::Config("synthetic corpus needs types ≥ classes ≥ 1 and a positive exponent".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let forms: Vec<String> = (0..cfg.types).map(word_form).collect();
        let case: Vec<Case> = (0..cfg.types)
            .map(|_| match rng.gen_range(0..100) {
                0..=79 => Case::Lower,
                80..=91 => Case::Title,
                92..=93 => Case::Upper,
                _ => Case::Either(rng.gen_range(0.2..0.8)),
            })
            .collect();
        let mut class_words = vec![Vec::new(); cfg.classes];
        for w in 0..cfg.types {
            class_words[w % cfg.classes].push(w);
        }
        let emit = class_words
            .iter()
            .map(|ws| {
                let weights: Vec<f64> = (0..ws.len()).map(|r| (r as f64 + 1.0).powf(-cfg.zipf)).collect();
                WeightedIndex::new(weights).expect("positive weights")
            })
            .collect();
        let contexts = (cfg.classes + 1) * (cfg.classes + 1);
        let next = (0..contexts)
            .map(|_| {
                let succ: Vec<usize> = (0..SUCCESSORS).map(|_| rng.gen_range(0..cfg.classes)).collect();
                let weights: Vec<f64> = (0..SUCCESSORS).map(|_| rng.gen_range(0.1..1.0f64).powi(2)).collect();
                (succ, WeightedIndex::new(weights).expect("positive weights"))
            })
            .collect();
        let end = (0..cfg.classes).map(|_| rng.gen_range(0.04..0.25)).collect();
        Ok(SynthLanguage { forms, case, class_words, emit, next, end, classes: cfg.classes })
    }

    pub fn forms(&self) -> &[String] {
        &self.forms
    }

    fn surface(&self, w: usize, initial: bool, rng: &mut impl Rng) -> String {
        let form = &self.forms[w];
        match self.case[w] {
            Case::Upper => form.to_uppercase(),
            Case::Title => capitalize(form),
            Case::Either(p) if rng.gen::<f64>() < p => capitalize(form),
            _ if initial => capitalize(form),
            _ => form.clone(),
        }
    }

    pub fn sentence(&self, rng: &mut impl Rng) -> Vec<String> {
        let k = self.classes;
        let (mut c2, mut c1) = (k, k);
        let mut out = Vec::new();
        loop {
            let (succ, dist) = &self.next[c2 * (k + 1) + c1];
            let c = succ[dist.sample(rng)];
            let w = self.class_words[c][self.emit[c].sample(rng)];
            out.push(self.surface(w, out.is_empty(), rng));
            if out.len() >= MAX_LEN || (out.len() >= MIN_LEN && rng.gen::<f64>() < self.end[c]) {
                return out;
            }
            c2 = c1;
            c1 = c;
        }
    }

    /// Sentences until at least `tokens` tokens, from stream `stream`.
    pub fn corpus(&self, tokens: usize, seed: u64, stream: u64) -> Vec<Vec<String>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut out = Vec::new();
        let mut n = 0;
        while n < tokens {
            let s = self.sentence(&mut rng);
            n += s.len();
            out.push(s);
        }
        out
    }
}

/// Splits `sentences` into clients of 1..=`max_per_client` consecutive
/// sentences, with ids `c000000`, `c000001`, …
pub fn split_clients(sentences: &[Vec<String>], max_per_client: usize, seed: u64) -> Vec<ClientShard> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut at = 0;
    while at < sentences.len() {
        let n = rng.gen_range(1..=max_per_client.max(1)).min(sentences.len() - at);
        out.push(ClientShard { id: format!("c{:06}", out.len()), sentences: sentences[at..at + n].to_vec() });
        at += n;
    }
    out
}
