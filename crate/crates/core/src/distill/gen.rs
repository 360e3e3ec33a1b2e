use std::sync::Arc;

use crate::distill::cased::{CapModel, CasedTeacher};
use crate::distill::count::count_many;
use crate::distill::kl::{kl_minimize, KlConfig};
use crate::distill::sample::sample_corpus;
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::ngram::build::extract_topology;
use crate::ngram::interpolate::interpolate;
use crate::ngram::model::BackoffNGramModel;
use crate::ngram::topology::{BackoffAutomaton, NGramTopology};
use crate::par::{self, Execution};
use crate::symbols::{SymbolId, SymbolTable};
use crate::wordpiece::compose::ComposedTopology;
use crate::wordpiece::lexicon::LexiconFst;

/// Settings shared by the distillation steps.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    /// Number of sampled sentences k.
    pub samples: usize,
    pub max_len: usize,
    pub seed: u64,
    /// Order of self-inferred topologies.
    pub order: usize,
    /// Minimum count per n-gram length for self-inferred topologies.
    pub min_counts: Vec<u64>,
    /// Weight of A_e when interpolating A_e and A_i.
    pub mix: f64,
    pub kl: KlConfig,
    pub exec: Execution,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            samples: 10_000,
            max_len: 50,
            seed: 0,
            order: 3,
            min_counts: vec![1, 2, 2],
            mix: 0.5,
            kl: KlConfig::default(),
            exec: Execution::default(),
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("sample count must be ≥ 1".into()));
        }
        if self.max_len == 0 || self.order == 0 {
            return Err(Error::Config("max_len and order must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config(format!("mix {} outside [0, 1]", self.mix)));
        }
        if !(self.kl.tol > 0.0) {
            return Err(Error::Config("KL tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// The four models of one Gen run. `a_e` is `None` without a supplement,
/// in which case A_m and A_r are built from A_i alone.
#[derive(Clone, Debug)]
pub struct GenOutput {
    pub a_e: Option<BackoffNGramModel>,
    pub a_i: BackoffNGramModel,
    pub a_m: BackoffNGramModel,
    pub a_r: BackoffNGramModel,
}

/// Topology of the n-grams in `samples` meeting the count thresholds.
pub fn infer_topology(
    samples: &[Vec<SymbolId>],
    order: usize,
    symbols: Arc<SymbolTable>,
    min_counts: &[u64],
) -> Result<NGramTopology> {
    extract_topology(samples, order, symbols, min_counts)
}

/// Truecases uncased id sentences into ids of the cap model's cased table.
pub fn truecase_samples(cap: &CapModel, samples: &[Vec<SymbolId>], exec: Execution) -> Vec<Vec<SymbolId>> {
    let us = cap.uncased_symbols();
    let cs = cap.cased_symbols();
    par::map(exec, samples, |_, s| cs.encode(&cap.truecase(&us.decode(s))))
}

/// Counting plus KL minimization of `teacher` on each topology.
pub fn approximate<M: LanguageModel + ?Sized>(
    teacher: &M,
    topologies: &[Arc<NGramTopology>],
    samples: &[Vec<SymbolId>],
    cfg: &DistillConfig,
) -> Result<Vec<BackoffNGramModel>> {
    let autos: Vec<&dyn BackoffAutomaton> = topologies.iter().map(|t| &**t as &dyn BackoffAutomaton).collect();
    let counts = count_many(teacher, &autos, samples, None, Some(cfg.max_len), cfg.exec)?;
    topologies
        .iter()
        .zip(&counts)
        .map(|(t, c)| kl_minimize(t.clone(), c, &cfg.kl).map(|r| r.0))
        .collect()
}

/// Gen with a word-level uncased teacher.
///
/// Samples k uncased sentences once and truecases them with `cap`; A_e is
/// the capitalization-reweighted approximation on the supplement topology,
/// A_i the same on a topology inferred from the truecased samples,
/// A_m = interpolate(A_e, A_i, mix), and A_r the approximation on A_m's
/// topology. The cap model's cased vocabulary defines the output alphabet.
pub fn gen_word<M: LanguageModel + ?Sized>(
    teacher: &M,
    supplement: Option<&NGramTopology>,
    cap: &CapModel,
    cfg: &DistillConfig,
) -> Result<GenOutput> {
    cfg.validate()?;
    let samples = sample_corpus(teacher, cfg.samples, cfg.max_len, cfg.seed, cfg.exec);
    gen_word_from_samples(teacher, &samples, supplement, cap, cfg)
}

/// [`gen_word`] over previously drawn uncased samples.
pub fn gen_word_from_samples<M: LanguageModel + ?Sized>(
    teacher: &M,
    samples: &[Vec<SymbolId>],
    supplement: Option<&NGramTopology>,
    cap: &CapModel,
    cfg: &DistillConfig,
) -> Result<GenOutput> {
    cfg.validate()?;
    let cs = cap.cased_symbols().clone();
    let cased = truecase_samples(cap, samples, cfg.exec);
    let tt = CasedTeacher::new(teacher, cap)?;
    let t_i = Arc::new(infer_topology(&cased, cfg.order, cs.clone(), &cfg.min_counts)?);
    let (a_e, a_i) = match supplement {
        Some(t) => {
            if t.symbols() != &cs {
                return Err(Error::Alphabet("supplement topology is not over the cap model's cased vocabulary".into()));
            }
            let mut m = approximate(&tt, &[Arc::new(t.clone()), t_i], &cased, cfg)?;
            let a_i = m.pop().unwrap();
            (Some(m.pop().unwrap()), a_i)
        }
        None => (None, approximate(&tt, &[t_i], &cased, cfg)?.pop().unwrap()),
    };
    let a_m = match &a_e {
        Some(e) => interpolate(e, &a_i, cfg.mix)?,
        None => a_i.clone(),
    };
    let a_r = approximate(&tt, &[a_m.topology().clone()], &cased, cfg)?.pop().unwrap();
    Ok(GenOutput { a_e, a_i, a_m, a_r })
}

/// Gen with a piece-level uncased teacher.
///
/// For each target word model A (the supplement, the word-level A_i, then
/// A_m): A's topology is lowercased, composed with the lexicon, counted on
/// with the piece samples, the counts are transferred back and KL-minimized
/// into an uncased word model, which finally serves as the teacher for a
/// capitalization-reweighted approximation on A's cased topology.
pub fn gen_wordpiece<M: LanguageModel + ?Sized>(
    teacher: &M,
    lexicon: Arc<LexiconFst>,
    supplement: &NGramTopology,
    word_inferred: &NGramTopology,
    cap: &CapModel,
    cfg: &DistillConfig,
) -> Result<GenOutput> {
    cfg.validate()?;
    if teacher.symbols() != &**lexicon.pieces() {
        return Err(Error::Alphabet("piece teacher and lexicon use different piece tables".into()));
    }
    if lexicon.words() != cap.uncased_symbols() {
        return Err(Error::Alphabet("lexicon words differ from the cap model's uncased table".into()));
    }
    let samples = sample_corpus(teacher, cfg.samples, cfg.max_len, cfg.seed, cfg.exec);
    let piece_step = |targets: &[&NGramTopology], salt: u64| -> Result<Vec<BackoffNGramModel>> {
        let lowered: Vec<Arc<NGramTopology>> = targets
            .iter()
            .map(|t| t.map_symbols(cap.uncased_symbols().clone(), |y| cap.lower(y)).map(Arc::new))
            .collect::<Result<_>>()?;
        let composed: Vec<ComposedTopology> = lowered
            .iter()
            .map(|t| ComposedTopology::new(lexicon.clone(), t.clone()))
            .collect::<Result<_>>()?;
        let autos: Vec<&dyn BackoffAutomaton> = composed.iter().map(|b| b as &dyn BackoffAutomaton).collect();
        let counts = count_many(teacher, &autos, &samples, None, Some(cfg.max_len), cfg.exec)?;
        let mut out = Vec::new();
        for (k, (b, c)) in composed.iter().zip(&counts).enumerate() {
            let word_counts = b.transfer_counts(c)?;
            let (a_u, _) = kl_minimize(lowered[k].clone(), &word_counts, &cfg.kl)?;
            let seed = cfg.seed ^ (salt + k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let sub = DistillConfig { seed, ..cfg.clone() };
            let word_samples = sample_corpus(&a_u, sub.samples, sub.max_len, sub.seed, sub.exec);
            let cased = truecase_samples(cap, &word_samples, cfg.exec);
            let tt = CasedTeacher::new(&a_u, cap)?;
            out.extend(approximate(&tt, &[Arc::new(targets[k].clone())], &cased, &sub)?);
        }
        Ok(out)
    };
    let mut first = piece_step(&[supplement, word_inferred], 0)?;
    let a_i = first.pop().unwrap();
    let a_e = first.pop().unwrap();
    let a_m = interpolate(&a_e, &a_i, cfg.mix)?;
    let a_r = piece_step(&[&a_m.topology().clone()], 2)?.pop().unwrap();
    Ok(GenOutput { a_e: Some(a_e), a_i, a_m, a_r })
}
