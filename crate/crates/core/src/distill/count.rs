use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::ngram::counts::ExpectedCounts;
use crate::ngram::topology::{BackoffAutomaton, StateId};
use crate::par::{self, Execution};
use crate::symbols::{SymbolId, BOS, EOS};

/// The counting step: expected counts of `teacher` on `automaton` over `samples`.
///
/// At every counted prefix the automaton sits in some state q'; for each
/// symbol x the teacher probability p(x | prefix) is added to the arc that
/// reads x from q' after following backoff edges (sentence end likewise, at
/// the first final state on the chain). Sentences of length ≥ `max_len` are
/// treated as truncated and only their proper prefixes are counted.
pub fn expected_counts<M, A>(
    teacher: &M,
    automaton: &A,
    samples: &[Vec<SymbolId>],
    max_len: Option<usize>,
    exec: Execution,
) -> Result<ExpectedCounts>
where
    M: LanguageModel + ?Sized,
    A: BackoffAutomaton,
{
    let mut out = count_many(teacher, &[automaton as &dyn BackoffAutomaton], samples, None, max_len, exec)?;
    Ok(out.pop().unwrap())
}

/// Counts on several automata in one pass, sharing teacher evaluations.
/// Optional `weights` scale each sample's contribution.
pub fn count_many<M>(
    teacher: &M,
    automata: &[&dyn BackoffAutomaton],
    samples: &[Vec<SymbolId>],
    weights: Option<&[f64]>,
    max_len: Option<usize>,
    exec: Execution,
) -> Result<Vec<ExpectedCounts>>
where
    M: LanguageModel + ?Sized,
{
    let v = teacher.symbols().len();
    for a in automata {
        if a.alphabet_len() != v {
            return Err(Error::Alphabet(format!(
                "teacher has {v} symbols but the automaton reads {}",
                a.alphabet_len()
            )));
        }
    }
    if let Some(w) = weights {
        if w.len() != samples.len() {
            return Err(Error::Contract("one weight per sample required".into()));
        }
    }
    if let Some(x) = samples.iter().flatten().find(|&&x| x as usize >= v || x == BOS || x == EOS) {
        return Err(Error::Alphabet(format!("sample symbol {x} cannot be read")));
    }
    // Fixed chunking (never thread-dependent) keeps sums bit-identical.
    let chunk = samples.len().div_ceil(64).max(16);
    let acc = par::fold_chunks(
        exec,
        samples,
        chunk,
        || Scratch::new(automata, v),
        |s, i, sample| {
            let w = weights.map_or(1.0, |w| w[i]);
            let truncated = max_len.is_some_and(|m| sample.len() >= m);
            s.count_sentence(teacher, automata, sample, w, truncated);
        },
        |total, part| {
            for (t, p) in total.counts.iter_mut().zip(&part.counts) {
                t.add(p);
            }
        },
    );
    Ok(acc.counts)
}

enum Track {
    Active(StateId),
    /// Skipping `n` more symbols, then resuming at the state.
    Skipping(usize, StateId),
    Stopped,
}

struct Scratch {
    counts: Vec<ExpectedCounts>,
    marks: Vec<Vec<u32>>,
    epoch: u32,
    dist: Vec<f64>,
}

impl Scratch {
    fn new(automata: &[&dyn BackoffAutomaton], v: usize) -> Self {
        Scratch {
            counts: automata.iter().map(|a| ExpectedCounts::for_automaton(*a)).collect(),
            marks: vec![vec![0; v]; automata.len()],
            epoch: 0,
            dist: Vec::new(),
        }
    }

    fn count_sentence<M: LanguageModel + ?Sized>(
        &mut self,
        teacher: &M,
        automata: &[&dyn BackoffAutomaton],
        sample: &[SymbolId],
        w: f64,
        truncated: bool,
    ) {
        let v = teacher.symbols().len();
        let rows = if truncated { sample.len() } else { sample.len() + 1 };
        self.dist.resize(rows * v, 0.0);
        teacher.prefix_distributions(sample, rows, &mut self.dist[..rows * v]);
        let mut track: Vec<Track> = automata.iter().map(|a| Track::Active(a.initial())).collect();
        let mut boundary: Vec<StateId> = automata.iter().map(|a| a.initial()).collect();
        for i in 0..rows {
            self.epoch = self.epoch.wrapping_add(1);
            if self.epoch == 0 {
                self.marks.iter_mut().for_each(|m| m.fill(0));
                self.epoch = 1;
            }
            let dist = &self.dist[i * v..(i + 1) * v];
            for (k, a) in automata.iter().enumerate() {
                if let Track::Active(q) = track[k] {
                    if a.is_boundary(q) {
                        boundary[k] = q;
                    }
                    accumulate(*a, q, boundary[k], dist, w, &mut self.counts[k], &mut self.marks[k], self.epoch);
                }
            }
            if i == sample.len() {
                break;
            }
            let x = sample[i];
            for (k, a) in automata.iter().enumerate() {
                track[k] = match track[k] {
                    Track::Active(q) => match a.next_state(q, x) {
                        Some(d) => Track::Active(d),
                        None => match a.resume_after_invalid(boundary[k], &sample[i..]) {
                            Some((1, r)) => Track::Active(r),
                            Some((n, r)) => Track::Skipping(n - 1, r),
                            None => Track::Stopped,
                        },
                    },
                    Track::Skipping(1, r) => Track::Active(r),
                    Track::Skipping(n, r) => Track::Skipping(n - 1, r),
                    Track::Stopped => Track::Stopped,
                };
            }
        }
    }
}

/// Distributes one prefix's teacher distribution over the backoff chain of `q`.
#[allow(clippy::too_many_arguments)]
fn accumulate(
    a: &dyn BackoffAutomaton,
    q: StateId,
    boundary: StateId,
    dist: &[f64],
    w: f64,
    counts: &mut ExpectedCounts,
    marks: &mut [u32],
    epoch: u32,
) {
    let arcs = a.arcs();
    let mask = a.word_arc_mask();
    let mut word = 0.0;
    let mut claimed = 0usize;
    let mut end_read = false;
    let mut s = q;
    loop {
        let r = arcs.range(s);
        let labels = arcs.labels(s);
        for (j, &x) in labels.iter().enumerate() {
            let m = &mut marks[x as usize];
            if *m != epoch {
                *m = epoch;
                let p = dist[x as usize];
                counts.arc[r.start + j] += w * p;
                claimed += 1;
                if mask.is_none_or(|m| m[r.start + j]) {
                    word += p;
                }
            }
        }
        if !end_read && a.is_final(s) {
            end_read = true;
            claimed += 1;
            let p = dist[EOS as usize];
            counts.end[s as usize] += w * p;
            word += p;
        }
        match a.backoff(s) {
            Some(p) => s = p,
            None => break,
        }
    }
    // Every symbol but <s> read: nothing is lost.
    let lost = if claimed + 1 == dist.len() {
        0.0
    } else {
        let mut l = if end_read { 0.0 } else { dist[EOS as usize] };
        for (x, &p) in dist.iter().enumerate().skip(2) {
            if marks[x] != epoch {
                l += p;
            }
        }
        l
    };
    counts.lost[boundary as usize] += w * lost;
    counts.origin[boundary as usize] += w * (word + lost);
}
