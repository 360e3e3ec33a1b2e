//! Lexicon composition fixtures, language enumeration and piece teachers.

use std::sync::Arc;

use fedgram_core::ngram::{extract_topology, BackoffAutomaton, NGramTopology, StateId};
use fedgram_core::wordpiece::{piece_table, ComposedTopology, LexiconFst, LEX_ROOT};
use fedgram_core::{LanguageModel, SymbolId, SymbolTable, EOS, UNK};
use rand::seq::SliceRandom;
use rand::Rng;

use super::segment::{random_inventory, random_string};
use super::HashTeacher;

pub struct Instance {
    pub lexicon: Arc<LexiconFst>,
    pub words: Arc<NGramTopology>,
    pub composed: ComposedTopology,
}

pub fn instance<R: Rng>(rng: &mut R, vocab: usize, order: usize) -> Instance {
    let alphabet = ['a', 'b', 'c'];
    let mut tokens: Vec<String> = Vec::new();
    while tokens.len() < vocab {
        let w = random_string(rng, &alphabet, 1, 3);
        if !tokens.contains(&w) {
            tokens.push(w);
        }
    }
    let ws = Arc::new(SymbolTable::from_tokens(tokens.iter().map(String::as_str)));
    let extra = rng.gen_range(0..4);
    let inv = random_inventory(rng, &alphabet, extra);
    let lexicon = Arc::new(LexiconFst::build(ws.clone(), Arc::new(piece_table(&inv)), &inv).unwrap());
    let ids: Vec<SymbolId> = ws.words().collect();
    let corpus: Vec<Vec<SymbolId>> = (0..rng.gen_range(1..8))
        .map(|_| (0..rng.gen_range(0..4)).map(|_| *ids.choose(rng).unwrap()).collect())
        .collect();
    let words = Arc::new(extract_topology(&corpus, order, ws, &vec![1; order]).unwrap());
    let composed = ComposedTopology::new(lexicon.clone(), words.clone()).unwrap();
    Instance { lexicon, words, composed }
}

pub fn accepts_at_end<A: BackoffAutomaton>(a: &A, mut q: StateId) -> bool {
    loop {
        if a.is_final(q) {
            return true;
        }
        match a.backoff(q) {
            Some(p) => q = p,
            None => return false,
        }
    }
}

/// Reads `pieces` in B; Some(final state) if every piece is readable.
pub fn run<A: BackoffAutomaton>(a: &A, pieces: &[SymbolId]) -> Option<StateId> {
    pieces.iter().try_fold(a.initial(), |q, &x| a.next_state(q, x))
}

pub fn check_language(inst: &Instance, depth: usize) {
    let b = &inst.composed;
    let labels: Vec<SymbolId> = inst.lexicon.pieces().labels().filter(|&x| x > UNK).collect();
    let mut frontier: Vec<Vec<SymbolId>> = vec![Vec::new()];
    for _ in 0..depth {
        let mut next = Vec::new();
        for seq in &frontier {
            for &x in &labels {
                let mut s = seq.clone();
                s.push(x);
                let words = inst.lexicon.transduce(&s);
                let accepted = run(b, &s).filter(|&q| b.pair(q).0 == LEX_ROOT && accepts_at_end(b, q));
                assert_eq!(accepted.is_some(), words.is_some(), "{s:?}");
                if let (Some(q), Some(ws)) = (accepted, words) {
                    let qa = ws.iter().fold(inst.words.initial(), |q, &y| inst.words.step(q, y));
                    assert_eq!(b.pair(q).1, qa, "{s:?}");
                    let spelled: Vec<SymbolId> = ws.iter().flat_map(|&y| inst.lexicon.spell(y).unwrap()).collect();
                    assert_eq!(spelled, s);
                }
                next.push(s);
            }
        }
        frontier = next;
    }
}

/// Word teacher without `<unk>` mass, ending every sentence after `max_words`.
pub struct ShortTeacher(pub HashTeacher, pub usize);

impl LanguageModel for ShortTeacher {
    type State = Vec<SymbolId>;

    fn symbols(&self) -> &SymbolTable {
        &self.0.symbols
    }

    fn start(&self) -> Vec<SymbolId> {
        Vec::new()
    }

    fn advance(&self, state: &mut Vec<SymbolId>, token: SymbolId) {
        state.push(token);
    }

    fn distribution(&self, state: &Vec<SymbolId>, out: &mut [f64]) {
        if state.len() >= self.1 {
            out.fill(0.0);
            out[EOS as usize] = 1.0;
            return;
        }
        self.0.distribution(state, out);
        out[UNK as usize] = 0.0;
        let total: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= total);
    }
}

/// Piece teacher induced by a word teacher: each word's pieces share its
/// probability through the conditionals of its canonical spelling.
pub struct PieceTeacher<'a, W> {
    words: &'a W,
    lexicon: &'a LexiconFst,
    spellings: Vec<(SymbolId, Vec<SymbolId>)>,
}

impl<'a, W: LanguageModel<State = Vec<SymbolId>>> PieceTeacher<'a, W> {
    pub fn new(words: &'a W, lexicon: &'a LexiconFst) -> Self {
        let spellings = words.symbols().words().filter_map(|y| Some((y, lexicon.spell(y)?))).collect();
        PieceTeacher { words, lexicon, spellings }
    }
}

impl<W: LanguageModel<State = Vec<SymbolId>>> LanguageModel for PieceTeacher<'_, W> {
    type State = (Vec<SymbolId>, Vec<SymbolId>);

    fn symbols(&self) -> &SymbolTable {
        self.lexicon.pieces()
    }

    fn start(&self) -> Self::State {
        (Vec::new(), Vec::new())
    }

    fn advance(&self, state: &mut Self::State, token: SymbolId) {
        state.1.push(token);
        if let Some((y, _)) = self.spellings.iter().find(|(_, s)| *s == state.1) {
            state.0.push(*y);
            state.1.clear();
        }
    }

    fn distribution(&self, state: &Self::State, out: &mut [f64]) {
        let mut wd = vec![0.0; self.words.symbols().len()];
        self.words.distribution(&state.0, &mut wd);
        out.fill(0.0);
        let k = state.1.len();
        let mut mass = 0.0;
        for (y, s) in &self.spellings {
            if s.len() > k && s[..k] == state.1[..] {
                out[s[k] as usize] += wd[*y as usize];
                mass += wd[*y as usize];
            }
        }
        if k == 0 {
            out[EOS as usize] = wd[EOS as usize];
            mass += wd[EOS as usize];
        }
        out.iter_mut().for_each(|p| *p /= mass);
    }
}

/// All sentences of at most two words with their probabilities.
pub fn enumerate<M: LanguageModel<State = Vec<SymbolId>>>(m: &M) -> (Vec<Vec<SymbolId>>, Vec<f64>) {
    let mut sents = Vec::new();
    let mut probs = Vec::new();
    let mut stack = vec![(Vec::new(), 1.0)];
    let mut dist = vec![0.0; m.symbols().len()];
    while let Some((s, p)) = stack.pop() {
        m.distribution(&s, &mut dist);
        if dist[EOS as usize] > 0.0 {
            sents.push(s.clone());
            probs.push(p * dist[EOS as usize]);
        }
        for y in m.symbols().words() {
            if dist[y as usize] > 0.0 {
                let mut t = s.clone();
                t.push(y);
                stack.push((t, p * dist[y as usize]));
            }
        }
    }
    (sents, probs)
}
