use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ngram::counts::ExpectedCounts;
use crate::ngram::topology::{ArcStore, BackoffAutomaton, NGramTopology, StateId, ROOT};
use crate::symbols::{SymbolId, UNK};
use crate::wordpiece::lexicon::{LexiconFst, LEX_ROOT};

/// Piece-level automaton B = M ∘ A with backoff edges.
///
/// States are pairs (lexicon state, word state) reachable from
/// (lexicon root, initial word state). A piece arc completing word y at
/// (q1, q2) exists when y is explicit at q2; an output-free arc exists when
/// some word reachable from its lexicon target is explicit at q2. The backoff
/// edge of (q1, q2) leads to (q1, backoff(q2)).
#[derive(Clone, Debug)]
pub struct ComposedTopology {
    lexicon: Arc<LexiconFst>,
    words: Arc<NGramTopology>,
    pairs: Vec<(StateId, StateId)>,
    index: HashMap<(StateId, StateId), StateId>,
    arcs: ArcStore,
    /// Lexicon arc behind each composed arc.
    lex_arc: Vec<usize>,
    completes: Vec<bool>,
    backoff: Vec<Option<StateId>>,
    initial: StateId,
}

impl ComposedTopology {
    pub fn new(lexicon: Arc<LexiconFst>, words: Arc<NGramTopology>) -> Result<Self> {
        if lexicon.words() != words.symbols() {
            return Err(Error::Alphabet("lexicon and word topology use different vocabularies".into()));
        }
        // Sorted lexicon ranks of the explicit words at each word state.
        let ranks: Vec<Vec<u32>> = (0..words.num_states() as StateId)
            .map(|q| {
                let mut r: Vec<u32> = words
                    .arcs()
                    .labels(q)
                    .iter()
                    .map(|&y| lexicon.rank(y))
                    .filter(|&r| r != u32::MAX)
                    .collect();
                r.sort_unstable();
                r
            })
            .collect();
        let any_in = |q2: StateId, (lo, hi): (u32, u32)| {
            let r = &ranks[q2 as usize];
            let i = r.partition_point(|&x| x < lo);
            i < r.len() && r[i] < hi
        };
        let mut pairs = Vec::new();
        let mut index = HashMap::new();
        let mut queue = VecDeque::new();
        let mut intern = |p: (StateId, StateId), pairs: &mut Vec<_>, queue: &mut VecDeque<_>| -> StateId {
            *index.entry(p).or_insert_with(|| {
                pairs.push(p);
                queue.push_back(p);
                (pairs.len() - 1) as StateId
            })
        };
        let initial = intern((LEX_ROOT, words.initial()), &mut pairs, &mut queue);
        let m = lexicon.arcs();
        let wa = words.arcs();
        let mut lists: Vec<Vec<(SymbolId, StateId, usize)>> = Vec::new();
        let mut backoff = Vec::new();
        while let Some((q1, q2)) = queue.pop_front() {
            let mut list = Vec::new();
            for a in m.range(q1) {
                let d1 = m.dest(a);
                let dest = match lexicon.output(a) {
                    Some(y) => wa.find(q2, y).map(|b| (d1, wa.dest(b))),
                    None => any_in(q2, lexicon.reach(d1)).then_some((d1, q2)),
                };
                if let Some(d) = dest {
                    list.push((m.label(a), intern(d, &mut pairs, &mut queue), a));
                }
            }
            lists.push(list);
            backoff.push(if q2 == ROOT {
                None
            } else {
                Some(intern((q1, words.backoff_state(q2)), &mut pairs, &mut queue))
            });
            if q1 == LEX_ROOT {
                // Resumption target after an out-of-lexicon word.
                intern((LEX_ROOT, words.step(q2, UNK)), &mut pairs, &mut queue);
            }
        }
        let mut lex_arc = Vec::new();
        let mut plain = Vec::with_capacity(lists.len());
        for list in lists {
            lex_arc.extend(list.iter().map(|e| e.2));
            plain.push(list.into_iter().map(|e| (e.0, e.1)).collect());
        }
        let completes = lex_arc.iter().map(|&a| lexicon.output(a).is_some()).collect();
        Ok(ComposedTopology {
            completes,
            lexicon,
            words,
            pairs,
            index,
            arcs: ArcStore::from_lists(plain)?,
            lex_arc,
            backoff,
            initial,
        })
    }

    pub fn lexicon(&self) -> &Arc<LexiconFst> {
        &self.lexicon
    }

    pub fn word_topology(&self) -> &Arc<NGramTopology> {
        &self.words
    }

    /// Originating (lexicon state, word state) pair.
    pub fn pair(&self, q: StateId) -> (StateId, StateId) {
        self.pairs[q as usize]
    }

    pub fn state(&self, q1: StateId, q2: StateId) -> Option<StateId> {
        self.index.get(&(q1, q2)).copied()
    }

    /// Word output of composed arc `a`, if it completes a word.
    pub fn output(&self, a: usize) -> Option<SymbolId> {
        self.lexicon.output(self.lex_arc[a])
    }

    /// Moves counts from B onto the word topology A.
    ///
    /// The count of word y at word state q is the count on the arc reading
    /// x_y at (q_y, q); output-free arcs carry nothing over. Sentence-end
    /// counts at (root, q) become end counts at q, origin mass at boundary
    /// states moves to their word state, and unreadable mass becomes `<unk>`
    /// read from the boundary's word state.
    pub fn transfer_counts(&self, counts: &ExpectedCounts) -> Result<ExpectedCounts> {
        counts.validate(self)?;
        let a = &*self.words;
        let wa = a.arcs();
        let mut out = ExpectedCounts::for_automaton(a);
        for q in 0..self.num_states() as StateId {
            let (q1, q2) = self.pair(q);
            for b in self.arcs.range(q) {
                let Some(y) = self.output(b) else { continue };
                let (qy, xa) = self
                    .lexicon
                    .completing(y)
                    .ok_or_else(|| Error::Contract(format!("word id {y} has no completing lexicon arc")))?;
                if qy != q1 || self.lexicon.arcs().label(xa) != self.arcs.label(b) {
                    return Err(Error::Contract(format!("word id {y} is completed by two lexicon arcs")));
                }
                let target = wa
                    .find(q2, y)
                    .ok_or_else(|| Error::Contract(format!("word id {y} is not explicit at word state {q2}")))?;
                out.arc[target] += counts.arc[b];
            }
            let i = q as usize;
            if q1 == LEX_ROOT {
                out.end[q2 as usize] += counts.end[i];
                out.origin[q2 as usize] += counts.origin[i];
                if counts.lost[i] > 0.0 {
                    let r = a.reading_state(q2, UNK);
                    let arc = wa.find(r, UNK).ok_or_else(|| Error::Contract("<unk> is not readable".into()))?;
                    out.arc[arc] += counts.lost[i];
                }
            } else if counts.end[i] != 0.0 || counts.origin[i] != 0.0 || counts.lost[i] != 0.0 {
                return Err(Error::Contract(format!("word-level mass at inner state {q}")));
            }
        }
        Ok(out)
    }
}

impl BackoffAutomaton for ComposedTopology {
    fn arcs(&self) -> &ArcStore {
        &self.arcs
    }

    fn initial(&self) -> StateId {
        self.initial
    }

    fn backoff(&self, q: StateId) -> Option<StateId> {
        self.backoff[q as usize]
    }

    fn is_final(&self, q: StateId) -> bool {
        let (q1, q2) = self.pairs[q as usize];
        q1 == LEX_ROOT && self.words.is_final(q2)
    }

    fn alphabet_len(&self) -> usize {
        self.lexicon.pieces().len()
    }

    fn word_arc_mask(&self) -> Option<&[bool]> {
        Some(&self.completes)
    }

    fn is_boundary(&self, q: StateId) -> bool {
        self.pairs[q as usize].0 == LEX_ROOT
    }

    /// Skips through the next word-final piece and resumes after `<unk>`.
    fn resume_after_invalid(&self, boundary: StateId, rest: &[SymbolId]) -> Option<(usize, StateId)> {
        let skip = rest.iter().position(|&x| self.lexicon.is_word_final(x))? + 1;
        let (_, q2) = self.pairs[boundary as usize];
        let q = self.state(LEX_ROOT, self.words.step(q2, UNK))?;
        Some((skip, q))
    }
}
