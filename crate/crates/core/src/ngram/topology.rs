use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::symbols::{SymbolId, SymbolTable, BOS, EOS};

pub type StateId = u32;

/// The empty-context state of every n-gram topology.
pub const ROOT: StateId = 0;

/// Labeled transitions stored per state, sorted by label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArcStore {
    start: Vec<u32>,
    label: Vec<SymbolId>,
    dest: Vec<StateId>,
}

impl ArcStore {
    /// Builds from per-state `(label, dest)` lists; each list is sorted here.
    pub fn from_lists(mut lists: Vec<Vec<(SymbolId, StateId)>>) -> Result<Self> {
        let mut store = ArcStore {
            start: Vec::with_capacity(lists.len() + 1),
            ..Default::default()
        };
        store.start.push(0);
        for (q, list) in lists.iter_mut().enumerate() {
            list.sort_unstable();
            for w in list.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Contract(format!(
                        "state {q} has two arcs labeled {}",
                        w[0].0
                    )));
                }
            }
            for &(x, d) in list.iter() {
                store.label.push(x);
                store.dest.push(d);
            }
            store.start.push(store.label.len() as u32);
        }
        Ok(store)
    }

    pub fn range(&self, q: StateId) -> Range<usize> {
        self.start[q as usize] as usize..self.start[q as usize + 1] as usize
    }

    pub fn labels(&self, q: StateId) -> &[SymbolId] {
        &self.label[self.range(q)]
    }

    pub fn label(&self, arc: usize) -> SymbolId {
        self.label[arc]
    }

    pub fn dest(&self, arc: usize) -> StateId {
        self.dest[arc]
    }

    /// State owning `arc`.
    pub fn source(&self, arc: usize) -> StateId {
        (self.start.partition_point(|&s| s as usize <= arc) - 1) as StateId
    }

    pub fn len(&self) -> usize {
        self.label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.start.len() - 1
    }

    pub fn find(&self, q: StateId, x: SymbolId) -> Option<usize> {
        let r = self.range(q);
        let base = r.start;
        self.label[r].binary_search(&x).ok().map(|i| base + i)
    }
}

/// A deterministic automaton with failure (backoff) transitions.
///
/// Implemented by n-gram topologies and by the composed piece-level topology,
/// so counting works on either.
pub trait BackoffAutomaton: Sync {
    fn arcs(&self) -> &ArcStore;
    fn initial(&self) -> StateId;
    fn backoff(&self, q: StateId) -> Option<StateId>;
    fn is_final(&self, q: StateId) -> bool;
    /// Size of the label alphabet (the symbol table length).
    fn alphabet_len(&self) -> usize;

    fn num_states(&self) -> usize {
        self.arcs().num_states()
    }

    /// Reading arc for `x` from `q`, following backoff edges.
    fn reading_arc(&self, mut q: StateId, x: SymbolId) -> Option<usize> {
        loop {
            if let Some(a) = self.arcs().find(q, x) {
                return Some(a);
            }
            q = self.backoff(q)?;
        }
    }

    fn next_state(&self, q: StateId, x: SymbolId) -> Option<StateId> {
        self.reading_arc(q, x).map(|a| self.arcs().dest(a))
    }

    /// Per-arc flags telling which arcs complete a word; `None` means all of
    /// them do (word-level automata).
    fn word_arc_mask(&self) -> Option<&[bool]> {
        None
    }

    /// Whether `q` sits at a word boundary; piece-level automata override this.
    fn is_boundary(&self, _q: StateId) -> bool {
        true
    }

    /// Recovery after an unreadable symbol: how many of `rest` to skip and the
    /// state to resume in, given the last boundary state. `None` stops the sentence.
    fn resume_after_invalid(&self, _boundary: StateId, _rest: &[SymbolId]) -> Option<(usize, StateId)> {
        None
    }
}

/// Unweighted backoff n-gram skeleton.
///
/// States are the empty context (id 0), the sentence-start context and every
/// registered n-gram of length ≤ n−1 that does not end in `</s>`, ordered by
/// context length then ids, so a backoff target always has a smaller id.
/// Every alphabet symbol is readable at the root.
#[derive(Clone, Debug)]
pub struct NGramTopology {
    order: usize,
    symbols: Arc<SymbolTable>,
    contexts: Vec<Vec<SymbolId>>,
    backoff: Vec<StateId>,
    is_final: Vec<bool>,
    arcs: ArcStore,
    index: HashMap<Vec<SymbolId>, StateId>,
    initial: StateId,
}

impl PartialEq for NGramTopology {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.symbols == other.symbols
            && self.contexts == other.contexts
            && self.is_final == other.is_final
            && self.arcs == other.arcs
    }
}

impl NGramTopology {
    /// Builds the smallest prefix- and suffix-closed topology containing
    /// `ngrams` and every alphabet unigram.
    pub fn from_ngrams<I>(symbols: Arc<SymbolTable>, order: usize, ngrams: I) -> Result<Self>
    where
        I: IntoIterator<Item = Vec<SymbolId>>,
    {
        if order == 0 {
            return Err(Error::Invalid("n-gram order must be ≥ 1".into()));
        }
        let n_sym = symbols.len() as SymbolId;
        let mut set: BTreeSet<Vec<SymbolId>> = BTreeSet::new();
        for g in ngrams {
            validate_ngram(&g, order, n_sym)?;
            close_into(&mut set, g);
        }
        for x in symbols.labels().chain([EOS]) {
            set.insert(vec![x]);
        }
        Self::from_closed_set(symbols, order, &set)
    }

    /// Builds from a set already closed under prefixes and suffixes; returns
    /// an error naming the first n-gram that breaks closure.
    pub fn from_closed_ngrams(
        symbols: Arc<SymbolTable>,
        order: usize,
        set: &BTreeSet<Vec<SymbolId>>,
    ) -> Result<Self> {
        let n_sym = symbols.len() as SymbolId;
        for g in set {
            validate_ngram(g, order, n_sym)?;
            if g.len() > 1 {
                let prefix = &g[..g.len() - 1];
                if !(prefix == [BOS] || set.contains(prefix)) {
                    return Err(Error::Invalid(format!("n-gram {g:?} lacks its prefix")));
                }
                if !set.contains(&g[1..]) {
                    return Err(Error::Invalid(format!("n-gram {g:?} lacks its suffix")));
                }
            }
        }
        for x in symbols.labels().chain([EOS]) {
            if !set.contains(&vec![x]) {
                return Err(Error::Invalid(format!(
                    "unigram {} missing",
                    symbols.token(x)
                )));
            }
        }
        Self::from_closed_set(symbols, order, set)
    }

    fn from_closed_set(
        symbols: Arc<SymbolTable>,
        order: usize,
        set: &BTreeSet<Vec<SymbolId>>,
    ) -> Result<Self> {
        let mut contexts: Vec<Vec<SymbolId>> = vec![Vec::new()];
        if order >= 2 {
            contexts.push(vec![BOS]);
        }
        contexts.extend(
            set.iter()
                .filter(|g| g.len() < order && *g.last().unwrap() != EOS)
                .cloned(),
        );
        contexts.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        let index: HashMap<Vec<SymbolId>, StateId> = contexts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.clone(), i as StateId))
            .collect();
        let backoff: Vec<StateId> = contexts
            .iter()
            .map(|c| if c.is_empty() { ROOT } else { index[&c[1..]] })
            .collect();
        let mut is_final = vec![false; contexts.len()];
        is_final[ROOT as usize] = true;
        let mut lists: Vec<Vec<(SymbolId, StateId)>> = vec![Vec::new(); contexts.len()];
        for g in set {
            let (last, ctx) = g.split_last().unwrap();
            let q = index[ctx];
            if *last == EOS {
                is_final[q as usize] = true;
                continue;
            }
            let tail = if g.len() >= order { &g[g.len() + 1 - order..] } else { &g[..] };
            let dest = longest_state_suffix(&index, tail);
            lists[q as usize].push((*last, dest));
        }
        let initial = if order >= 2 { index[&vec![BOS]] } else { ROOT };
        Ok(NGramTopology {
            order,
            symbols,
            contexts,
            backoff,
            is_final,
            arcs: ArcStore::from_lists(lists)?,
            index,
            initial,
        })
    }

    /// Root-only topology (every alphabet symbol readable at the empty context).
    pub fn unigram(symbols: Arc<SymbolTable>, order: usize) -> Result<Self> {
        Self::from_ngrams(symbols, order, std::iter::empty())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn symbols(&self) -> &Arc<SymbolTable> {
        &self.symbols
    }

    pub fn context(&self, q: StateId) -> &[SymbolId] {
        &self.contexts[q as usize]
    }

    pub fn state(&self, context: &[SymbolId]) -> Option<StateId> {
        self.index.get(context).copied()
    }

    /// State for an arbitrary history: the longest suffix (≤ n−1 tokens) that is a state.
    pub fn state_for_history(&self, history: &[SymbolId]) -> StateId {
        let keep = self.order.saturating_sub(1).min(history.len());
        longest_state_suffix(&self.index, &history[history.len() - keep..])
    }

    pub fn check_state(&self, q: StateId) -> Result<()> {
        if (q as usize) < self.contexts.len() {
            Ok(())
        } else {
            Err(Error::Contract(format!("unknown state id {q}")))
        }
    }

    /// Parent on the backoff chain; the root maps to itself.
    pub fn backoff_state(&self, q: StateId) -> StateId {
        self.backoff[q as usize]
    }

    /// Every registered n-gram, including `… </s>` entries, sorted by length then ids.
    pub fn ngrams(&self) -> Vec<Vec<SymbolId>> {
        let mut out = Vec::with_capacity(self.ngram_count());
        for q in 0..self.num_states() as StateId {
            let ctx = self.context(q);
            for &x in self.arcs.labels(q) {
                let mut g = ctx.to_vec();
                g.push(x);
                out.push(g);
            }
            if self.is_final[q as usize] {
                let mut g = ctx.to_vec();
                g.push(EOS);
                out.push(g);
            }
        }
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        out
    }

    /// Number of n-grams (arcs plus sentence-end entries).
    pub fn ngram_count(&self) -> usize {
        self.arcs.len() + self.is_final.iter().filter(|&&f| f).count()
    }

    /// Count of unigram entries (root arcs plus `</s>`).
    pub fn unigram_count(&self) -> usize {
        self.arcs.labels(ROOT).len() + 1
    }

    /// State reached after reading `x` from `q`; every alphabet symbol is
    /// readable at the root, so this only fails for out-of-range ids.
    pub fn step(&self, q: StateId, x: SymbolId) -> StateId {
        self.next_state(q, x).unwrap_or(ROOT)
    }

    /// First state on the backoff chain from `q` where `x` is explicit
    /// (`</s>` counts as explicit at final states).
    pub fn reading_state(&self, mut q: StateId, x: SymbolId) -> StateId {
        loop {
            let explicit = if x == EOS {
                self.is_final[q as usize]
            } else {
                self.arcs.find(q, x).is_some()
            };
            if explicit || q == ROOT {
                return q;
            }
            q = self.backoff[q as usize];
        }
    }

    /// For every arc of a non-root state, the index of the same-label arc at
    /// its backoff state (label closure guarantees it exists).
    pub fn parent_arcs(&self) -> Vec<u32> {
        let mut out = vec![u32::MAX; self.arcs.len()];
        for q in 1..self.num_states() as StateId {
            let p = self.backoff[q as usize];
            for a in self.arcs.range(q) {
                out[a] = self
                    .arcs
                    .find(p, self.arcs.label(a))
                    .expect("label closure") as u32;
            }
        }
        out
    }

    /// Children lists of the backoff tree.
    pub fn children(&self) -> Vec<Vec<StateId>> {
        let mut out = vec![Vec::new(); self.num_states()];
        for q in 1..self.num_states() as StateId {
            out[self.backoff[q as usize] as usize].push(q);
        }
        out
    }

    /// Maps every n-gram through `f` into a topology over `symbols`, merging
    /// collisions (used to erase case).
    pub fn map_symbols<F>(&self, symbols: Arc<SymbolTable>, f: F) -> Result<NGramTopology>
    where
        F: Fn(SymbolId) -> SymbolId,
    {
        let mapped = self
            .ngrams()
            .into_iter()
            .map(|g| g.into_iter().map(&f).collect::<Vec<_>>());
        NGramTopology::from_ngrams(symbols, self.order, mapped)
    }

    /// Union of the n-gram sets of two topologies over the same symbols.
    pub fn union(&self, other: &NGramTopology) -> Result<NGramTopology> {
        if self.symbols != other.symbols {
            return Err(Error::Alphabet("topologies use different symbol tables".into()));
        }
        let order = self.order.max(other.order);
        NGramTopology::from_ngrams(
            self.symbols.clone(),
            order,
            self.ngrams().into_iter().chain(other.ngrams()),
        )
    }
}

impl BackoffAutomaton for NGramTopology {
    fn arcs(&self) -> &ArcStore {
        &self.arcs
    }

    fn initial(&self) -> StateId {
        self.initial
    }

    fn backoff(&self, q: StateId) -> Option<StateId> {
        (q != ROOT).then(|| self.backoff[q as usize])
    }

    fn is_final(&self, q: StateId) -> bool {
        self.is_final[q as usize]
    }

    fn alphabet_len(&self) -> usize {
        self.symbols.len()
    }
}

fn validate_ngram(g: &[SymbolId], order: usize, n_sym: SymbolId) -> Result<()> {
    if g.is_empty() || g.len() > order {
        return Err(Error::Invalid(format!(
            "n-gram {g:?} has length outside 1..={order}"
        )));
    }
    for (i, &x) in g.iter().enumerate() {
        if x >= n_sym {
            return Err(Error::Invalid(format!("n-gram {g:?} uses unknown id {x}")));
        }
        if x == BOS && i != 0 {
            return Err(Error::Invalid(format!("n-gram {g:?} has <s> after the start")));
        }
        if x == EOS && i + 1 != g.len() {
            return Err(Error::Invalid(format!("n-gram {g:?} has </s> before the end")));
        }
    }
    if *g.last().unwrap() == BOS {
        return Err(Error::Invalid("<s> is never predicted".into()));
    }
    Ok(())
}

fn close_into(set: &mut BTreeSet<Vec<SymbolId>>, g: Vec<SymbolId>) {
    if set.contains(&g) {
        return;
    }
    let n = g.len();
    for i in 0..n {
        for j in i + 1..=n {
            let sub = &g[i..j];
            if sub == [BOS] {
                continue;
            }
            if !set.contains(sub) {
                set.insert(sub.to_vec());
            }
        }
    }
}

fn longest_state_suffix(index: &HashMap<Vec<SymbolId>, StateId>, tail: &[SymbolId]) -> StateId {
    for i in 0..tail.len() {
        if let Some(&q) = index.get(&tail[i..]) {
            return q;
        }
    }
    ROOT
}
