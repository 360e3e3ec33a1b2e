//! `fedgram`: command-line driver for the federated n-gram pipeline.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use fedgram_core::corpus::{read_corpus, read_shards};
use fedgram_core::distill::{CapModel, DEFAULT_CAP_FLOOR};
use fedgram_core::error::Category;
use fedgram_core::fedsim::{collect_unigrams, read_unigram_tsv};
use fedgram_core::harness::{evaluate, word_units, EvalReport, ExperimentConfig, Pipeline};
use fedgram_core::ngram::{read_arpa, BackoffAutomaton};
use fedgram_core::wordpiece::{piece_table, ComposedTopology, LexiconFst, WordPieceInventory};
use fedgram_core::{neural, Error, Execution, LanguageModel, SymbolTable};

#[derive(Parser)]
#[command(name = "fedgram", version, about = "Federated n-gram language model pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; cached artifacts are reused from here.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Seed of the stage being run.
    #[arg(long)]
    seed: Option<u64>,
    /// Run sequentially.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Collect clipped unigram counts from client shards.
    CollectUnigrams {
        #[command(flatten)]
        common: Common,
        /// Shard directory; bypasses the config and pools every client.
        #[arg(long)]
        shards: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Build a word-piece inventory from a unigram table.
    BuildInventory {
        #[command(flatten)]
        common: Common,
        /// Unigram table; defaults to `<out>/unigrams.tsv`.
        #[arg(long)]
        unigrams: Option<PathBuf>,
        /// Target inventory size.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train the neural model with federated averaging.
    TrainFed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Sample the teacher and dump expected counts on the supplement topology.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        order: Option<usize>,
    },
    /// Compose the lexicon of an inventory with a word model's topology.
    Compose {
        #[command(flatten)]
        common: Common,
        /// Word-piece inventory file.
        #[arg(long)]
        inventory: PathBuf,
        /// Word model (ARPA) whose topology is composed.
        #[arg(long)]
        model: PathBuf,
    },
    /// Distill A_e, A_i, A_m and A_r into ARPA files.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        order: Option<usize>,
    },
    /// Evaluate a model on a corpus, or run the full desk report.
    Eval {
        #[command(flatten)]
        common: Common,
        /// ARPA file or neural checkpoint; without it the full pipeline runs.
        #[arg(long, requires = "corpus")]
        model: Option<PathBuf>,
        /// Evaluation corpus, one sentence per line.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Top-k accuracy cutoff.
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Restore case in lowercased sentences with a cap model.
    Truecase {
        /// Cased ARPA model.
        #[arg(long)]
        cap: PathBuf,
        /// Input sentences; one per line.
        #[arg(long)]
        input: PathBuf,
        /// Floor for cased variants the cap model has not seen.
        #[arg(long)]
        floor: Option<f64>,
        /// Output directory for `truecased.txt`; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedgram: {e}");
            ExitCode::from(match e.category() {
                Category::Usage => 1,
                Category::Data => 2,
                Category::Numeric => 3,
            })
        }
    }
}

fn pipeline(c: &Common, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<Pipeline, Error> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::desk(),
    };
    edit(&mut cfg);
    Pipeline::new(cfg, &c.out, exec(c))
}

fn exec(c: &Common) -> Execution {
    if c.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::CollectUnigrams { common, shards: Some(dir), lambda } => {
            let lambda = lambda.unwrap_or(ExperimentConfig::desk().vocab.lambda);
            let acc = collect_unigrams(&read_shards(&dir)?, None, lambda)?;
            write(&common.out.join("unigrams.tsv"), &acc.to_tsv())?;
            println!("{} clients, {} types", acc.clients, acc.counts.len());
        }
        Command::CollectUnigrams { common, shards: None, lambda } => {
            let p = pipeline(&common, |c| {
                c.vocab.lambda = lambda.unwrap_or(c.vocab.lambda);
                c.vocab.seed = common.seed.unwrap_or(c.vocab.seed);
            })?;
            let u = p.unigrams(&p.data()?)?;
            println!("{} types", u.len());
        }
        Command::BuildInventory { common, unigrams, size } => {
            let cfg = match &common.config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::desk(),
            };
            let size = size
                .or(cfg.wordpiece.map(|w| w.inventory_size))
                .ok_or_else(|| Error::Config("inventory size missing: pass --size or set wordpiece.inventory_size".into()))?;
            let path = unigrams.unwrap_or_else(|| common.out.join("unigrams.tsv"));
            let inv = WordPieceInventory::build(&read_unigram_tsv(&read(&path)?)?, size)?;
            write(&common.out.join("inventory.tsv"), &inv.to_text())?;
            println!("{} pieces", inv.len());
        }
        Command::TrainFed { common, lambda } => {
            let p = pipeline(&common, |c| {
                c.vocab.lambda = lambda.unwrap_or(c.vocab.lambda);
                if let Some(s) = common.seed {
                    c.model.seed = s;
                    c.fed.seed = s;
                }
            })?;
            let data = p.data()?;
            let vocab = p.vocab(&p.unigrams(&data)?);
            let m = p.train(&data, &vocab)?;
            println!("{} parameters, vocabulary {}", m.num_params(), m.symbols().len());
        }
        Command::Distill { common, samples, order } => {
            let p = pipeline(&common, |c| edit_distill(c, common.seed, samples, order))?;
            let data = p.data()?;
            let vocab = p.vocab(&p.unigrams(&data)?);
            let model = p.train(&data, &vocab)?;
            let cap = p.cap_model(&data, &vocab)?;
            let teacher = p.teacher(model, &vocab)?;
            let counts = p.distill_counts(&data, &vocab, &teacher, &cap)?;
            println!("counted mass {:.3}", counts.origin_total());
        }
        Command::Compose { common, inventory, model } => {
            let inv = WordPieceInventory::from_text(&read(&inventory)?)?;
            let words = read_arpa(&read(&model)?)?;
            let topo = words.topology().clone();
            let pieces = Arc::new(piece_table(&inv));
            let lex = Arc::new(LexiconFst::build(topo.symbols().clone(), pieces.clone(), &inv)?);
            let b = ComposedTopology::new(lex, topo)?;
            write(&common.out.join("composed.tsv"), &composed_dump(&b, &pieces))?;
            println!("{} states, {} arcs", b.num_states(), b.arcs().len());
        }
        Command::Gen { common, samples, order } => {
            let p = pipeline(&common, |c| edit_distill(c, common.seed, samples, order))?;
            let data = p.data()?;
            let vocab = p.vocab(&p.unigrams(&data)?);
            let model = p.train(&data, &vocab)?;
            let cap = p.cap_model(&data, &vocab)?;
            let teacher = p.teacher(model, &vocab)?;
            let out = p.gen(&data, &vocab, &teacher, &cap)?;
            println!("A_m {} n-grams, A_r {} n-grams", out.a_m.topology().ngram_count(), out.a_r.topology().ngram_count());
        }
        Command::Eval { common, model: None, .. } => {
            let p = pipeline(&common, |c| {
                if let Some(s) = common.seed {
                    c.distill.seed = s;
                }
            })?;
            print!("{}", p.run()?.to_text());
        }
        Command::Eval { common, model: Some(model), corpus, k } => {
            let corpus = read_corpus(corpus.as_ref().expect("clap enforces --corpus"))?;
            let report = if model.extension().is_some_and(|e| e == "ckpt") {
                let m = neural::load(&model)?;
                evaluate(&m, &word_units(m.symbols(), &corpus), k, exec(&common))?
            } else {
                let m = read_arpa(&read(&model)?)?;
                evaluate(&m, &word_units(m.symbols(), &corpus), k, exec(&common))?
            };
            let name = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            write(&common.out.join("eval.txt"), &report.to_string())?;
            write(&common.out.join("eval.csv"), &format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row(&name)))?;
            print!("{report}");
        }
        Command::Truecase { cap, input, floor, out } => {
            let m = read_arpa(&read(&cap)?)?;
            let uncased = Arc::new(CapModel::lowercase_table(m.symbols()));
            let cap = CapModel::new(Arc::new(m), uncased, floor.unwrap_or(DEFAULT_CAP_FLOOR))?;
            let mut text = String::new();
            for s in read_corpus(&input)? {
                text.push_str(&cap.truecase(&s).join(" "));
                text.push('\n');
            }
            match out {
                Some(dir) => write(&dir.join("truecased.txt"), &text)?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}

fn edit_distill(c: &mut ExperimentConfig, seed: Option<u64>, samples: Option<usize>, order: Option<usize>) {
    let d = &mut c.distill;
    d.seed = seed.unwrap_or(d.seed);
    d.samples = samples.unwrap_or(d.samples);
    if let Some(n) = order {
        d.order = n;
        d.min_counts.resize(n, *d.min_counts.last().unwrap_or(&1));
    }
}

/// Arcs as `state<TAB>piece<TAB>dest<TAB>word`, `-` when no word completes;
/// backoff edges use the label `<backoff>`.
fn composed_dump(b: &ComposedTopology, pieces: &SymbolTable) -> String {
    use std::fmt::Write as _;
    let words = b.word_topology().symbols();
    let arcs = b.arcs();
    let mut out = String::new();
    for q in 0..b.num_states() as u32 {
        for a in arcs.range(q) {
            let w = b.output(a).map_or("-", |y| words.token(y));
            let _ = writeln!(out, "{q}\t{}\t{}\t{w}", pieces.token(arcs.label(a)), arcs.dest(a));
        }
        if let Some(r) = b.backoff(q) {
            let _ = writeln!(out, "{q}\t<backoff>\t{r}\t-");
        }
    }
    out
}
