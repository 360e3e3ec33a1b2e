use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ngram::model::{complete_backoff, BackoffNGramModel};
use crate::ngram::topology::{BackoffAutomaton, StateId};
use crate::symbols::EOS;

/// Linear mixture `mix·a + (1−mix)·b` on the union topology.
///
/// Every explicit entry of the union gets the mixture of the two models'
/// backoff-evaluated probabilities at that context; backoff weights are then
/// recomputed so each state normalizes.
pub fn interpolate(a: &BackoffNGramModel, b: &BackoffNGramModel, mix: f64) -> Result<BackoffNGramModel> {
    if a.symbols() != b.symbols() {
        return Err(Error::Alphabet("interpolated models use different vocabularies".into()));
    }
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::Invalid(format!("mixture weight {mix} outside [0, 1]")));
    }
    let (ta, tb) = (a.topology(), b.topology());
    let union = Arc::new(ta.union(tb)?);
    let arcs = union.arcs();
    let n = union.num_states();
    let mut arc_weight = vec![0.0; arcs.len()];
    let mut final_weight = vec![0.0; n];
    for q in 0..n as StateId {
        let ctx = union.context(q);
        let qa = ta.state_for_history(ctx);
        let qb = tb.state_for_history(ctx);
        for arc in arcs.range(q) {
            let x = arcs.label(arc);
            arc_weight[arc] = mix * a.prob(qa, x) + (1.0 - mix) * b.prob(qb, x);
        }
        if union.is_final(q) {
            final_weight[q as usize] = mix * a.prob(qa, EOS) + (1.0 - mix) * b.prob(qb, EOS);
        }
    }
    let fixed_arc = vec![true; arcs.len()];
    let fixed_final = vec![true; n];
    complete_backoff(union, arc_weight, final_weight, &fixed_arc, &fixed_final)
}
