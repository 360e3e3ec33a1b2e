//! Count-trained baseline: backoff Kneser–Ney on a given topology.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::Result;
use crate::ngram::build::count_ngrams;
use crate::ngram::model::{complete_backoff, BackoffNGramModel};
use crate::ngram::topology::{BackoffAutomaton, NGramTopology, StateId, ROOT};
use crate::symbols::{SymbolId, BOS, EOS};

/// Trains absolute-discount backoff weights with Kneser–Ney continuation
/// counts for lower orders. N-grams of the topology that never occur in
/// `corpus` become transparent (they carry the backed-off probability).
pub fn train_kneser_ney(topology: Arc<NGramTopology>, corpus: &[Vec<SymbolId>]) -> Result<BackoffNGramModel> {
    let order = topology.order();
    let raw = count_ngrams(corpus, order, topology.symbols().len());
    let mut cont: HashMap<&[SymbolId], u64> = HashMap::new();
    for g in raw.keys() {
        if g.len() >= 2 {
            *cont.entry(&g[1..]).or_default() += 1;
        }
    }
    let count = |g: &[SymbolId]| -> u64 {
        if g.len() == order || g[0] == BOS {
            raw.get(g).copied().unwrap_or(0)
        } else {
            cont.get(g).copied().unwrap_or(0)
        }
    };
    let mut n1 = vec![0u64; order + 1];
    let mut n2 = vec![0u64; order + 1];
    let mut totals: HashMap<&[SymbolId], u64> = HashMap::new();
    for g in raw.keys() {
        let c = count(g);
        match c {
            1 => n1[g.len()] += 1,
            2 => n2[g.len()] += 1,
            _ => {}
        }
        if c > 0 {
            *totals.entry(&g[..g.len() - 1]).or_default() += c;
        }
    }
    let discount: Vec<f64> = (0..=order)
        .map(|k| {
            let (a, b) = (n1[k] as f64, n2[k] as f64);
            if a + 2.0 * b > 0.0 && a > 0.0 { (a / (a + 2.0 * b)).clamp(0.1, 0.9) } else { 0.5 }
        })
        .collect();

    let arcs = topology.arcs();
    let n = topology.num_states();
    let mut arc_weight = vec![0.0; arcs.len()];
    let mut final_weight = vec![0.0; n];
    let mut fixed_arc = vec![false; arcs.len()];
    let mut fixed_final = vec![false; n];

    // Root: discounted continuation counts interpolated with a uniform floor.
    let root_total = totals.get(&[][..]).copied().unwrap_or(0) as f64;
    let n_outcomes = (arcs.range(ROOT).len() + 1) as f64;
    let d = discount[1];
    let root_prob = |c: u64, seen: f64| -> f64 {
        if root_total == 0.0 {
            1.0 / n_outcomes
        } else {
            (c as f64 - d).max(0.0) / root_total + d * seen / root_total / n_outcomes
        }
    };
    let seen = arcs
        .range(ROOT)
        .map(|a| arcs.label(a))
        .chain([EOS])
        .filter(|&x| count(&[x]) > 0)
        .count() as f64;
    let mut g = Vec::with_capacity(order);
    for a in arcs.range(ROOT) {
        arc_weight[a] = root_prob(count(&[arcs.label(a)]), seen);
        fixed_arc[a] = true;
    }
    final_weight[ROOT as usize] = root_prob(count(&[EOS]), seen);
    fixed_final[ROOT as usize] = true;

    for q in 1..n as StateId {
        let ctx = topology.context(q);
        let total = totals.get(ctx).copied().unwrap_or(0) as f64;
        if total == 0.0 {
            continue;
        }
        let d = discount[ctx.len() + 1];
        for a in arcs.range(q) {
            g.clear();
            g.extend_from_slice(ctx);
            g.push(arcs.label(a));
            let c = count(&g);
            if c > 0 {
                arc_weight[a] = (c as f64 - d) / total;
                fixed_arc[a] = true;
            }
        }
        if topology.is_final(q) {
            g.clear();
            g.extend_from_slice(ctx);
            g.push(EOS);
            let c = count(&g);
            if c > 0 {
                final_weight[q as usize] = (c as f64 - d) / total;
                fixed_final[q as usize] = true;
            }
        }
    }
    complete_backoff(topology, arc_weight, final_weight, &fixed_arc, &fixed_final)
}
