//! Relative-entropy pruning with a count budget.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ngram::model::{complete_backoff, BackoffNGramModel};
use crate::ngram::topology::{BackoffAutomaton, NGramTopology, StateId, ROOT};
use crate::symbols::{SymbolId, BOS, EOS};

/// Chain-rule probability of a context: from the initial state when it starts
/// with `<s>`, otherwise from the empty context.
pub fn history_prob(model: &BackoffNGramModel, context: &[SymbolId]) -> f64 {
    let t = model.topology();
    let (mut q, rest) = match context.first() {
        Some(&BOS) => (t.initial(), &context[1..]),
        _ => (ROOT, context),
    };
    let mut p = 1.0;
    for &x in rest {
        p *= model.prob(q, x);
        q = t.step(q, x);
    }
    p
}

/// Stolcke's relative-entropy cost of removing the explicit n-gram `ctx·x`
/// (x may be `</s>`), keeping other explicit weights and renormalizing the
/// backoff weight of `ctx`.
pub fn removal_score(model: &BackoffNGramModel, q: StateId, x: SymbolId) -> f64 {
    let t = model.topology();
    let arcs = t.arcs();
    let parent = t.backoff_state(q);
    let mut explicit = 0.0;
    let mut lower = 0.0;
    for a in arcs.range(q) {
        explicit += model.arc_weight(a);
        lower += model.prob(parent, arcs.label(a));
    }
    if t.is_final(q) {
        explicit += model.final_weight(q);
        lower += model.prob(parent, EOS);
    }
    let p = model.prob(q, x);
    let p_low = model.prob(parent, x);
    let bo = model.backoff_weight(q);
    let bo_new = (1.0 - explicit + p) / (1.0 - lower + p_low);
    let backed_off = bo * (1.0 - lower);
    let term_x = if p > 0.0 { p * (p.ln() - (bo_new * p_low).ln()) } else { 0.0 };
    let term_rest = if backed_off > 0.0 { backed_off * (bo.ln() - bo_new.ln()) } else { 0.0 };
    history_prob(model, t.context(q)) * (term_x + term_rest)
}

#[derive(Clone, Debug, PartialEq)]
struct Candidate {
    score: f64,
    order: usize,
    context: String,
    label: String,
    ngram: Vec<SymbolId>,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.order.cmp(&other.order))
            .then_with(|| self.context.cmp(&other.context))
            .then_with(|| self.label.cmp(&other.label))
            .then_with(|| self.ngram.cmp(&other.ngram))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Removes the lowest-scoring removable n-grams until at most `max_ngrams`
/// remain. Unigrams are never removed; an n-gram is removable once no
/// retained n-gram extends it on either side. Scores come from the input
/// model; retained explicit weights are kept and backoff weights recomputed.
pub fn prune(model: &BackoffNGramModel, max_ngrams: usize, max_unigrams: usize) -> Result<BackoffNGramModel> {
    let t = model.topology();
    let unigrams = t.unigram_count();
    if unigrams > max_unigrams || unigrams > max_ngrams {
        return Err(Error::Invalid(format!(
            "budget ({max_ngrams} n-grams, {max_unigrams} unigrams) cannot hold the {unigrams} unigrams"
        )));
    }
    let mut total = t.ngram_count();
    if total <= max_ngrams {
        return Ok(model.clone());
    }
    let sym = t.symbols();
    let all = t.ngrams();
    let mut ext: HashMap<&[SymbolId], usize> = HashMap::new();
    let mut left: HashMap<&[SymbolId], usize> = HashMap::new();
    for g in &all {
        if g.len() >= 2 {
            *ext.entry(&g[..g.len() - 1]).or_default() += 1;
            *left.entry(&g[1..]).or_default() += 1;
        }
    }
    let make = |g: &[SymbolId]| -> Candidate {
        let (x, ctx) = g.split_last().unwrap();
        let q = t.state(ctx).expect("context is a state");
        Candidate {
            score: removal_score(model, q, *x),
            order: g.len(),
            context: ctx.iter().map(|&i| sym.token(i)).collect::<Vec<_>>().join(" "),
            label: sym.token(*x).to_string(),
            ngram: g.to_vec(),
        }
    };
    let removable = |g: &[SymbolId], ext: &HashMap<&[SymbolId], usize>, left: &HashMap<&[SymbolId], usize>| {
        g.len() >= 2 && ext.get(g).copied().unwrap_or(0) == 0 && left.get(g).copied().unwrap_or(0) == 0
    };
    let mut queue: BTreeSet<Candidate> = all
        .iter()
        .filter(|g| removable(g, &ext, &left))
        .map(|g| make(g))
        .collect();
    let mut removed: BTreeSet<Vec<SymbolId>> = BTreeSet::new();
    while total > max_ngrams {
        let Some(c) = queue.pop_first() else { break };
        let g = c.ngram;
        total -= 1;
        if let Some(e) = ext.get_mut(&g[..g.len() - 1]) {
            *e -= 1;
        }
        if let Some(l) = left.get_mut(&g[1..]) {
            *l -= 1;
        }
        for nb in [&g[..g.len() - 1], &g[1..]] {
            if nb.len() >= 2 && nb != [BOS] && !removed.contains(nb) && removable(nb, &ext, &left) {
                queue.insert(make(nb));
            }
        }
        removed.insert(g);
    }
    let kept: BTreeSet<Vec<SymbolId>> = all.into_iter().filter(|g| !removed.contains(g)).collect();
    let pruned = Arc::new(NGramTopology::from_closed_ngrams(sym.clone(), t.order(), &kept)?);
    let arcs = pruned.arcs();
    let n = pruned.num_states();
    let mut arc_weight = vec![0.0; arcs.len()];
    let mut final_weight = vec![0.0; n];
    for q in 0..n as StateId {
        let old = t.state(pruned.context(q)).expect("kept context");
        for a in arcs.range(q) {
            arc_weight[a] = model.arc_weight(t.arcs().find(old, arcs.label(a)).expect("kept arc"));
        }
        final_weight[q as usize] = model.final_weight(old);
    }
    let fixed_arc = vec![true; arcs.len()];
    complete_backoff(pruned.clone(), arc_weight, final_weight, &fixed_arc, &vec![true; n])
}
