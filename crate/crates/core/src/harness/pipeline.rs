//! The desk pipeline: collect unigrams, train under FedAvg, distill with
//! Gen, and evaluate against a count-trained baseline.
//!
//! Stages cache their random or expensive outputs (corpus files, unigram
//! table, checkpoint, sample cache) under the output directory; a rerun
//! reuses them and reproduces the downstream artifacts byte for byte. Each
//! cached file has a stamp under `.stamps/` holding the configuration it was
//! built from; a cache whose stamp differs is rebuilt.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::config::ExperimentConfig;
use super::eval::{evaluate, word_units, EvalReport};
use crate::corpus::synth::{split_clients, SynthLanguage};
use crate::corpus::{read_corpus, read_shards, write_corpus, write_shards, ClientShard};
use crate::distill::{expected_counts, gen_word_from_samples, lowercase, truecase_samples, CasedTeacher, read_samples, sample_corpus, write_samples, CapModel, GenOutput, UnigramTailTeacher};
use crate::error::{Error, Result};
use crate::fedsim::{collect_in_rounds, encode_shards, metrics_csv, read_unigram_tsv, run_fedavg, ConvergenceTracker, RoundMetrics};
use crate::neural::{self, CifgLstm};
use crate::ngram::arpa::write_arpa;
use crate::ngram::build::extract_topology;
use crate::ngram::counts::ExpectedCounts;
use crate::ngram::model::BackoffNGramModel;
use crate::ngram::smoothing::train_kneser_ney;
use crate::ngram::topology::NGramTopology;
use crate::par::Execution;
use crate::symbols::{SymbolId, SymbolTable};

/// Training, held-out and supplemental text.
#[derive(Clone, Debug)]
pub struct Data {
    pub shards: Vec<ClientShard>,
    pub heldout: Vec<Vec<String>>,
    pub supplement: Vec<Vec<String>>,
}

impl Data {
    pub fn train_sentences(&self) -> impl Iterator<Item = &Vec<String>> {
        self.shards.iter().flat_map(|s| &s.sentences)
    }
}

/// Vocabularies derived from the collected unigrams.
#[derive(Clone, Debug)]
pub struct Vocab {
    /// Cased words, most frequent first.
    pub cased: Arc<SymbolTable>,
    /// Lowercased forms of `cased`.
    pub uncased: Arc<SymbolTable>,
    /// Most frequent uncased words, modeled by the neural model.
    pub head: Arc<SymbolTable>,
    /// Collected weight per uncased id.
    pub uncased_weights: Vec<f64>,
}

/// Cased vocabulary of the `max_words` heaviest tokens, the lowercase table
/// over it and the head table of the `head_words` heaviest lowercased words.
pub fn build_vocab(ranked: &[(String, f64)], max_words: usize, head_words: usize) -> Vocab {
    let cased = SymbolTable::from_tokens(ranked.iter().take(max_words).map(|(t, _)| t.as_str()));
    let uncased = CapModel::lowercase_table(&cased);
    let mut weights = vec![0.0; uncased.len()];
    for (t, w) in ranked.iter().take(max_words) {
        weights[uncased.id(&lowercase(t)) as usize] += w;
    }
    let mut by_weight: Vec<SymbolId> = uncased.words().collect();
    by_weight.sort_by(|&a, &b| weights[b as usize].total_cmp(&weights[a as usize]).then(a.cmp(&b)));
    let head = SymbolTable::from_tokens(by_weight.iter().take(head_words).map(|&x| uncased.token(x)));
    Vocab { cased: Arc::new(cased), uncased: Arc::new(uncased), head: Arc::new(head), uncased_weights: weights }
}

pub fn lowercase_corpus<'a, I: IntoIterator<Item = &'a Vec<String>>>(sentences: I) -> Vec<Vec<String>> {
    sentences.into_iter().map(|s| s.iter().map(|t| lowercase(t)).collect()).collect()
}

/// Models compared by the desk report.
#[derive(Clone, Debug)]
pub struct DeskReport {
    pub rows: Vec<(String, EvalReport)>,
    pub ngrams: Vec<(String, usize)>,
}

impl DeskReport {
    pub fn get(&self, name: &str) -> Option<&EvalReport> {
        self.rows.iter().find(|r| r.0 == name).map(|r| &r.1)
    }

    /// Relative perplexity difference of `name` from the baseline.
    pub fn relative_ppl(&self, name: &str) -> Option<f64> {
        let b = self.get("baseline")?.perplexity;
        Some((self.get(name)?.perplexity - b) / b)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},ngrams\n", EvalReport::CSV_HEADER);
        for ((name, r), (_, n)) in self.rows.iter().zip(&self.ngrams) {
            let _ = writeln!(out, "{},{n}", r.csv_row(name));
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>9} {:>12} {:>12} {:>8} {:>8}", "model", "ngrams", "perplexity", "SLL^e", "top-1", "top-k");
        for ((name, r), (_, n)) in self.rows.iter().zip(&self.ngrams) {
            let _ = writeln!(out, "{name:<10} {n:>9} {:>12.4} {:>12.4} {:>8.4} {:>8.4}", r.perplexity, r.sll_e, r.top1, r.topk);
        }
        if let Some(b) = self.get("baseline") {
            let _ = writeln!(out, "\nOOV rate {:.6} over {} words", b.oov_rate, b.words);
            for (name, _) in &self.rows {
                if name != "baseline" {
                    let rel = self.relative_ppl(name).unwrap_or(f64::NAN);
                    let dir = if rel < 0.0 { "below" } else { "above" };
                    let _ = writeln!(out, "{name}: perplexity {:.2}% {dir} baseline", rel.abs() * 100.0);
                }
            }
        }
        out
    }
}

/// A configured run rooted at an output directory.
pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub out: PathBuf,
    pub exec: Execution,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig, out: impl Into<PathBuf>, exec: Execution) -> Result<Self> {
        cfg.validate()?;
        let out = out.into();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        Ok(Pipeline { cfg, out, exec })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn stamp_path(&self, name: &str) -> PathBuf {
        self.out.join(".stamps").join(name)
    }

    fn is_fresh(&self, name: &str, key: &str) -> bool {
        self.path(name).exists() && std::fs::read_to_string(self.stamp_path(name)).is_ok_and(|k| k == key)
    }

    fn stamp(&self, name: &str, key: &str) -> Result<()> {
        let dir = self.out.join(".stamps");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write(&self.stamp_path(name), key)
    }

    /// Drops the cached artifact `name` so the next call rebuilds it.
    pub fn invalidate(&self, name: &str) -> Result<()> {
        let p = self.stamp_path(name);
        match std::fs::remove_file(&p) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(&p, e)),
            _ => Ok(()),
        }
    }

    fn data_key(&self) -> String {
        format!("[data]\n{}", toml::to_string(&self.cfg.data).expect("config serializes"))
    }

    fn unigram_key(&self) -> String {
        format!("{}[vocab]\n{}", self.data_key(), toml::to_string(&self.cfg.vocab).expect("config serializes"))
    }

    fn model_key(&self) -> String {
        let model = toml::to_string(&self.cfg.model).expect("config serializes");
        let fed = toml::to_string(&self.cfg.fed).expect("config serializes");
        format!("{}[model]\n{model}[fed]\n{fed}", self.unigram_key())
    }

    fn samples_key(&self) -> String {
        let d = &self.cfg.distill;
        format!("{}[samples]\nsamples = {}\nmax_len = {}\nseed = {}\n", self.model_key(), d.samples, d.max_len, d.seed)
    }

    /// Corpus files; a synthetic corpus is generated once under `data/`.
    pub fn data(&self) -> Result<Data> {
        let d = &self.cfg.data;
        let Some(syn) = &d.synthetic else {
            let (shards, heldout, supplement) = (d.shards.as_ref(), d.heldout.as_ref(), d.supplement.as_ref());
            let missing = || Error::Config("data paths missing".into());
            return Ok(Data {
                shards: read_shards(shards.ok_or_else(missing)?)?,
                heldout: read_corpus(heldout.ok_or_else(missing)?)?,
                supplement: read_corpus(supplement.ok_or_else(missing)?)?,
            });
        };
        let dir = self.path("data");
        let (shard_dir, heldout, supplement) = (dir.join("shards"), dir.join("heldout.txt"), dir.join("supplement.txt"));
        let key = self.data_key();
        if !self.is_fresh("data", &key) {
            let lang = SynthLanguage::new(syn)?;
            let train = lang.corpus(syn.tokens, syn.seed, 0);
            write_shards(&shard_dir, &split_clients(&train, d.max_sentences_per_client, syn.seed))?;
            write_corpus(&heldout, &lang.corpus(d.heldout_tokens, syn.seed, 1))?;
            write_corpus(&supplement, &lang.corpus(d.supplement_tokens, syn.seed, 2))?;
            self.stamp("data", &key)?;
        }
        Ok(Data { shards: read_shards(&shard_dir)?, heldout: read_corpus(&heldout)?, supplement: read_corpus(&supplement)? })
    }

    /// Clipped cased unigrams (`unigrams.tsv`) and per-round collection
    /// statistics (`unigram_rounds.csv`).
    pub fn unigrams(&self, data: &Data) -> Result<Vec<(String, f64)>> {
        let path = self.path("unigrams.tsv");
        let key = self.unigram_key();
        if self.is_fresh("unigrams.tsv", &key) {
            return read_unigram_tsv(&read(&path)?);
        }
        let v = &self.cfg.vocab;
        let (acc, rounds) = collect_in_rounds(&data.shards, None, v.lambda, v.clients_per_round, v.seed)?;
        let mut tracker = ConvergenceTracker::new(v.novelty_window)?;
        let rows: Vec<RoundMetrics> = rounds.into_iter().map(|r| RoundMetrics::from(&tracker.push(r))).collect();
        write(&self.path("unigram_rounds.csv"), &metrics_csv(&rows))?;
        write(&path, &acc.to_tsv())?;
        self.stamp("unigrams.tsv", &key)?;
        Ok(acc.ranked())
    }

    pub fn vocab(&self, unigrams: &[(String, f64)]) -> Vocab {
        build_vocab(unigrams, self.cfg.vocab.max_words, self.cfg.vocab.head_words)
    }

    /// FedAvg-trained uncased head model (`model.ckpt`, `train_metrics.csv`).
    pub fn train(&self, data: &Data, vocab: &Vocab) -> Result<CifgLstm> {
        let path = self.path("model.ckpt");
        let key = self.model_key();
        if self.is_fresh("model.ckpt", &key) {
            let m = neural::load(&path)?;
            if **m.symbols_arc() != *vocab.head {
                return Err(Error::Alphabet("cached checkpoint vocabulary differs from the configured head vocabulary".into()));
            }
            return Ok(m);
        }
        let lowered: Vec<ClientShard> = data
            .shards
            .iter()
            .map(|s| ClientShard { id: s.id.clone(), sentences: lowercase_corpus(&s.sentences) })
            .collect();
        let shards = encode_shards(&lowered, &vocab.head);
        let heldout = word_units(&vocab.head, &lowercase_corpus(&data.heldout));
        let init = CifgLstm::init(self.cfg.model.cifg(vocab.head.len()), vocab.head.clone(), self.cfg.model.seed)?;
        let run = run_fedavg(init, &shards, &heldout, &self.cfg.fed, self.cfg.vocab.novelty_window, self.exec)?;
        write(&self.path("train_metrics.csv"), &metrics_csv(&run.metrics))?;
        neural::save(&run.model, &path)?;
        self.stamp("model.ckpt", &key)?;
        Ok(run.model)
    }

    /// Cased Kneser–Ney model of the supplement (`cap.arpa`).
    pub fn cap_model(&self, data: &Data, vocab: &Vocab) -> Result<CapModel> {
        let enc: Vec<Vec<SymbolId>> = data.supplement.iter().map(|s| vocab.cased.encode(s)).collect();
        let topo = extract_topology(&enc, self.cfg.distill.cap_order, vocab.cased.clone(), &[1])?;
        let model = train_kneser_ney(Arc::new(topo), &enc)?;
        write(&self.path("cap.arpa"), &write_arpa(&model))?;
        CapModel::new(Arc::new(model), vocab.uncased.clone(), self.cfg.distill.cap_floor)
    }

    pub fn teacher(&self, model: CifgLstm, vocab: &Vocab) -> Result<UnigramTailTeacher<CifgLstm>> {
        UnigramTailTeacher::new(model, vocab.uncased.clone(), &vocab.uncased_weights)
    }

    /// Uncased teacher samples (`samples.txt`, one sentence per line).
    pub fn samples<M: crate::LanguageModel>(&self, teacher: &M) -> Result<Vec<Vec<SymbolId>>> {
        let path = self.path("samples.txt");
        let key = self.samples_key();
        if self.is_fresh("samples.txt", &key) {
            return read_samples(teacher.symbols(), &read(&path)?);
        }
        let d = &self.cfg.distill;
        let s = sample_corpus(teacher, d.samples, d.max_len, d.seed, self.exec);
        write(&path, &write_samples(teacher.symbols(), &s))?;
        self.stamp("samples.txt", &key)?;
        Ok(s)
    }

    /// Supplement topology T_e over the cased vocabulary.
    pub fn supplement_topology(&self, data: &Data, vocab: &Vocab) -> Result<NGramTopology> {
        let enc: Vec<Vec<SymbolId>> = data.supplement.iter().map(|s| vocab.cased.encode(s)).collect();
        extract_topology(&enc, self.cfg.distill.order, vocab.cased.clone(), &self.cfg.distill.min_counts)
    }

    /// Cased counting on the supplement topology over the sample cache;
    /// writes the counts dump `counts.tsv`.
    pub fn distill_counts(&self, data: &Data, vocab: &Vocab, teacher: &UnigramTailTeacher<CifgLstm>, cap: &CapModel) -> Result<ExpectedCounts> {
        let samples = self.samples(teacher)?;
        let t_e = self.supplement_topology(data, vocab)?;
        let cased = truecase_samples(cap, &samples, self.exec);
        let tt = CasedTeacher::new(teacher, cap)?;
        let counts = expected_counts(&tt, &t_e, &cased, Some(self.cfg.distill.max_len), self.exec)?;
        write(&self.path("counts.tsv"), &counts.dump(&t_e))?;
        Ok(counts)
    }

    /// Gen over cached samples; writes `A_e.arpa` … `A_r.arpa`.
    pub fn gen(&self, data: &Data, vocab: &Vocab, teacher: &UnigramTailTeacher<CifgLstm>, cap: &CapModel) -> Result<GenOutput> {
        let samples = self.samples(teacher)?;
        let t_e = self.supplement_topology(data, vocab)?;
        let out = gen_word_from_samples(teacher, &samples, Some(&t_e), cap, &self.cfg.distill.to_config(self.exec))?;
        for (name, m) in self.named(&out) {
            write(&self.path(&format!("{name}.arpa")), &write_arpa(m))?;
        }
        Ok(out)
    }

    fn named<'a>(&self, out: &'a GenOutput) -> Vec<(&'static str, &'a BackoffNGramModel)> {
        let mut v = Vec::new();
        if let Some(e) = &out.a_e {
            v.push(("A_e", e));
        }
        v.extend([("A_i", &out.a_i), ("A_m", &out.a_m), ("A_r", &out.a_r)]);
        v
    }

    /// Kneser–Ney on `topology` from the cased training text (`baseline.arpa`).
    pub fn baseline(&self, data: &Data, vocab: &Vocab, topology: &Arc<NGramTopology>) -> Result<BackoffNGramModel> {
        let enc: Vec<Vec<SymbolId>> = data.train_sentences().map(|s| vocab.cased.encode(s)).collect();
        let m = train_kneser_ney(topology.clone(), &enc)?;
        write(&self.path("baseline.arpa"), &write_arpa(&m))?;
        Ok(m)
    }

    /// Runs every stage and writes `report.txt` and `report.csv`.
    pub fn run(&self) -> Result<DeskReport> {
        let data = self.data()?;
        let unigrams = self.unigrams(&data)?;
        let vocab = self.vocab(&unigrams);
        let model = self.train(&data, &vocab)?;
        let cap = self.cap_model(&data, &vocab)?;
        let teacher = self.teacher(model, &vocab)?;
        let gen = self.gen(&data, &vocab, &teacher, &cap)?;
        let baseline = self.baseline(&data, &vocab, gen.a_m.topology())?;
        let units = word_units(&vocab.cased, &data.heldout);
        let mut models = self.named(&gen);
        models.push(("baseline", &baseline));
        let mut rows = Vec::new();
        let mut ngrams = Vec::new();
        for (name, m) in models {
            rows.push((name.to_string(), evaluate(m, &units, self.cfg.eval.k, self.exec)?));
            ngrams.push((name.to_string(), m.topology().ngram_count()));
        }
        let report = DeskReport { rows, ngrams };
        write(&self.path("report.txt"), &report.to_text())?;
        write(&self.path("report.csv"), &report.to_csv())?;
        Ok(report)
    }
}
