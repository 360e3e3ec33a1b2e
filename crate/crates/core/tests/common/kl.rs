//! Brute-force fitting of a small incomplete bigram topology.

use std::sync::Arc;

use fedgram_core::ngram::{BackoffAutomaton, BackoffNGramModel, ExpectedCounts, NGramTopology, StateId};
use fedgram_core::{SymbolId, SymbolTable, BOS, EOS};

/// Teacher mass per (origin state, symbol), including `</s>`.
pub type Mass = Vec<(StateId, Vec<f64>)>;

pub fn attribute(t: &NGramTopology, mass: &Mass) -> ExpectedCounts {
    let mut c = ExpectedCounts::for_automaton(t);
    for (o, d) in mass {
        for (x, &m) in d.iter().enumerate() {
            let x = x as SymbolId;
            if m == 0.0 {
                continue;
            }
            let r = t.reading_state(*o, x);
            if x == EOS {
                c.end[r as usize] += m;
            } else {
                c.arc[t.arcs().find(r, x).unwrap()] += m;
            }
            c.origin[*o as usize] += m;
        }
    }
    c
}

pub fn objective(m: &BackoffNGramModel, mass: &Mass) -> f64 {
    let mut f = 0.0;
    for (o, d) in mass {
        for (x, &v) in d.iter().enumerate() {
            if v > 0.0 {
                f -= v * m.prob(*o, x as SymbolId).ln();
            }
        }
    }
    f
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Root entries (<unk>, a, b, </s>) from 3 logits; state [a] keeps w(b|a) from 1 logit.
pub fn build(t: &Arc<NGramTopology>, z: &[f64]) -> BackoffNGramModel {
    let root = softmax(&[0.0, z[0], z[1], z[2]]);
    let wab = 1.0 / (1.0 + (-z[3]).exp());
    let arcs = t.arcs();
    let mut w = vec![0.0; arcs.len()];
    for (i, x) in [2u32, 3, 4].iter().enumerate() {
        w[arcs.find(0, *x).unwrap()] = root[i];
    }
    let mut f = vec![0.0; t.num_states()];
    f[0] = root[3];
    let qa = t.state(&[3]).unwrap();
    let a = arcs.find(qa, 4).unwrap();
    w[a] = wab;
    let mut fixed = vec![true; arcs.len()];
    fixed[a] = true;
    let mut fixed_f = vec![false; t.num_states()];
    fixed_f[0] = true;
    fedgram_core::ngram::complete_backoff(t.clone(), w, f, &fixed, &fixed_f).unwrap()
}

pub fn brute_force(t: &Arc<NGramTopology>, mass: &Mass) -> f64 {
    let mut best = (f64::INFINITY, vec![0.0; 4]);
    let grid: Vec<f64> = (-4..=4).map(|i| i as f64).collect();
    for &a in &grid {
        for &b in &grid {
            for &c in &grid {
                for &d in &grid {
                    let z = vec![a, b, c, d];
                    let f = objective(&build(t, &z), mass);
                    if f < best.0 {
                        best = (f, z);
                    }
                }
            }
        }
    }
    // Pattern search refinement.
    let mut step = 0.5;
    while step > 1e-7 {
        let mut improved = false;
        for i in 0..4 {
            for s in [step, -step] {
                let mut z = best.1.clone();
                z[i] += s;
                let f = objective(&build(t, &z), mass);
                if f < best.0 {
                    best = (f, z);
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best.0
}

/// Bigram topology with every (context, label) pair explicit.
pub fn complete_bigram(table: &Arc<SymbolTable>) -> NGramTopology {
    let ctxs: Vec<SymbolId> = [BOS].into_iter().chain(table.labels().filter(|&x| x != BOS)).collect();
    let mut ngrams = Vec::new();
    for &h in &ctxs {
        for x in table.labels().filter(|&x| x != BOS).chain([EOS]) {
            ngrams.push(vec![h, x]);
        }
    }
    NGramTopology::from_ngrams(table.clone(), 2, ngrams).unwrap()
}
