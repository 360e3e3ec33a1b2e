//! ARPA text format. Probabilities are stored as log10 with eight decimals;
//! `-99` stands for probability zero.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ngram::model::BackoffNGramModel;
use crate::ngram::topology::{BackoffAutomaton, NGramTopology, StateId};
use crate::symbols::{is_reserved_token, SymbolId, SymbolTable, BOS, EOS, UNK_TOKEN};

const ZERO_LOG10: f64 = -99.0;

fn fmt_log10(p: f64) -> String {
    if p <= 0.0 {
        return "-99".to_string();
    }
    let v = p.log10();
    let s = format!("{v:.8}");
    if s == "-0.00000000" { "0.00000000".to_string() } else { s }
}

fn parse_log10(s: &str, line: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::parse(line, format!("bad number {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite log probability {s}")));
    }
    if v <= ZERO_LOG10 {
        return Ok(0.0);
    }
    Ok(10f64.powf(v))
}

pub fn write_arpa(model: &BackoffNGramModel) -> String {
    let t = model.topology();
    let sym = t.symbols();
    let mut sections: Vec<Vec<(Vec<SymbolId>, f64, Option<f64>)>> = vec![Vec::new(); t.order()];
    let bo_of = |g: &[SymbolId]| -> Option<f64> {
        if g.len() >= t.order() || *g.last().unwrap() == EOS {
            return None;
        }
        t.state(g).map(|s| model.backoff_weight(s))
    };
    let bos_bo = t.state(&[BOS]).map(|s| model.backoff_weight(s));
    sections[0].push((vec![BOS], 0.0, bos_bo));
    let arcs = t.arcs();
    for q in 0..t.num_states() as StateId {
        let ctx = t.context(q);
        for a in arcs.range(q) {
            let mut g = ctx.to_vec();
            g.push(arcs.label(a));
            let bo = bo_of(&g);
            sections[g.len() - 1].push((g, model.arc_weight(a), bo));
        }
        if t.is_final(q) {
            let mut g = ctx.to_vec();
            g.push(EOS);
            sections[g.len() - 1].push((g, model.final_weight(q), None));
        }
    }
    let mut out = String::from("\\data\\\n");
    for (k, s) in sections.iter().enumerate() {
        let _ = writeln!(out, "ngram {}={}", k + 1, s.len());
    }
    for (k, mut s) in sections.into_iter().enumerate() {
        s.sort_by(|a, b| a.0.cmp(&b.0));
        let _ = write!(out, "\n\\{}-grams:\n", k + 1);
        for (g, p, bo) in s {
            let words: Vec<&str> = g.iter().map(|&x| sym.token(x)).collect();
            let lp = if g == [BOS] { "-99".to_string() } else { fmt_log10(p) };
            match bo {
                Some(b) => {
                    let _ = writeln!(out, "{lp}\t{}\t{}", words.join(" "), fmt_log10(b));
                }
                None => {
                    let _ = writeln!(out, "{lp}\t{}", words.join(" "));
                }
            }
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

/// Parses ARPA text. The n-gram set must be closed under prefixes and
/// suffixes; missing `</s>`/`<unk>` unigrams get probability zero.
pub fn read_arpa(text: &str) -> Result<BackoffNGramModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    // Header.
    let mut saw_data = false;
    let mut counts: Vec<usize> = Vec::new();
    let mut first_section: Option<(usize, usize)> = None;
    for (ln, l) in lines.by_ref() {
        if l.is_empty() {
            continue;
        }
        if !saw_data {
            if l == "\\data\\" {
                saw_data = true;
                continue;
            }
            return Err(Error::parse(ln, "expected \\data\\ header"));
        }
        if let Some(rest) = l.strip_prefix("ngram ") {
            let (k, c) = rest
                .split_once('=')
                .ok_or_else(|| Error::parse(ln, "malformed ngram count line"))?;
            let k: usize = k.trim().parse().map_err(|_| Error::parse(ln, "bad order"))?;
            let c: usize = c.trim().parse().map_err(|_| Error::parse(ln, "bad count"))?;
            if k != counts.len() + 1 {
                return Err(Error::parse(ln, format!("ngram {k} out of sequence")));
            }
            counts.push(c);
            continue;
        }
        let k = section_order(l).ok_or_else(|| Error::parse(ln, format!("unexpected line {l:?}")))?;
        first_section = Some((ln, k));
        break;
    }
    let order = counts.len();
    if order == 0 {
        return Err(Error::parse(1, "no ngram counts in header"));
    }
    let mut entries: Vec<Vec<(usize, Vec<String>, f64, Option<f64>)>> = vec![Vec::new(); order];
    let mut current = first_section;
    let mut ended = false;
    let mut section_start = current.map(|c| c.0).unwrap_or(0);
    let check_count = |k: usize, got: usize, ln: usize| -> Result<()> {
        if got != counts[k - 1] {
            return Err(Error::parse(
                ln,
                format!("\\{k}-grams: header declares {} entries, found {got}", counts[k - 1]),
            ));
        }
        Ok(())
    };
    let mut expected_next = 1;
    if let Some((ln, k)) = current {
        if k != 1 {
            return Err(Error::parse(ln, "sections must start with \\1-grams:"));
        }
        expected_next = 2;
    }
    for (ln, l) in lines {
        if l.is_empty() {
            continue;
        }
        if l == "\\end\\" {
            if let Some((_, k)) = current {
                check_count(k, entries[k - 1].len(), section_start)?;
            }
            ended = true;
            break;
        }
        if let Some(k) = section_order(l) {
            if let Some((_, prev)) = current {
                check_count(prev, entries[prev - 1].len(), section_start)?;
            }
            if k != expected_next || k > order {
                return Err(Error::parse(ln, format!("unexpected section \\{k}-grams:")));
            }
            expected_next += 1;
            current = Some((ln, k));
            section_start = ln;
            continue;
        }
        let (_, k) = current.ok_or_else(|| Error::parse(ln, "entry outside a section"))?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != k + 1 && fields.len() != k + 2 {
            return Err(Error::parse(ln, format!("expected {k} tokens in a {k}-gram entry")));
        }
        let p = parse_log10(fields[0], ln)?;
        let words: Vec<String> = fields[1..=k].iter().map(|s| s.to_string()).collect();
        let bo = if fields.len() == k + 2 { Some(parse_log10(fields[k + 1], ln)?) } else { None };
        entries[k - 1].push((ln, words, p, bo));
    }
    if !ended {
        return Err(Error::parse(text.lines().count(), "missing \\end\\"));
    }
    if expected_next <= order {
        return Err(Error::parse(text.lines().count(), format!("missing \\{expected_next}-grams: section")));
    }
    build_model(order, entries)
}

fn section_order(l: &str) -> Option<usize> {
    l.strip_prefix('\\')?.strip_suffix("-grams:")?.parse().ok()
}

type Entry = (usize, Vec<String>, f64, Option<f64>);

fn build_model(order: usize, entries: Vec<Vec<Entry>>) -> Result<BackoffNGramModel> {
    let mut symbols = SymbolTable::new();
    for (_, w, _, _) in &entries[0] {
        if !is_reserved_token(&w[0]) {
            symbols.add(&w[0]);
        }
    }
    let symbols = Arc::new(symbols);
    let mut set: BTreeSet<Vec<SymbolId>> = BTreeSet::new();
    let mut probs: HashMap<Vec<SymbolId>, (f64, usize)> = HashMap::new();
    let mut backoffs: HashMap<Vec<SymbolId>, f64> = HashMap::new();
    for section in &entries {
        for (ln, words, p, bo) in section {
            let mut g = Vec::with_capacity(words.len());
            for w in words {
                let id = symbols
                    .get(w)
                    .ok_or_else(|| Error::parse(*ln, format!("token {w:?} has no unigram entry")))?;
                g.push(id);
            }
            if let Some(b) = bo {
                if *b <= 0.0 {
                    return Err(Error::parse(*ln, "backoff weight of zero"));
                }
                backoffs.insert(g.clone(), *b);
            }
            if g == [BOS] {
                continue;
            }
            if probs.insert(g.clone(), (*p, *ln)).is_some() {
                return Err(Error::parse(*ln, "duplicate n-gram"));
            }
            set.insert(g);
        }
    }
    for x in [EOS, symbols.get(UNK_TOKEN).unwrap()] {
        if set.insert(vec![x]) {
            probs.insert(vec![x], (0.0, 0));
        }
    }
    let topology = NGramTopology::from_closed_ngrams(symbols.clone(), order, &set).map_err(|e| {
        let ln = first_unclosed(&set, &probs);
        Error::parse(ln, e.to_string())
    })?;
    let topology = Arc::new(topology);
    let arcs = topology.arcs();
    let n = topology.num_states();
    let mut arc_weight = vec![0.0; arcs.len()];
    let mut final_weight = vec![0.0; n];
    let mut backoff_weight = vec![1.0; n];
    for q in 0..n as StateId {
        let ctx = topology.context(q).to_vec();
        for a in arcs.range(q) {
            let mut g = ctx.clone();
            g.push(arcs.label(a));
            arc_weight[a] = probs[&g].0;
        }
        if topology.is_final(q) {
            let mut g = ctx.clone();
            g.push(EOS);
            final_weight[q as usize] = probs[&g].0;
        }
        if q != 0 {
            backoff_weight[q as usize] = backoffs.get(&ctx).copied().unwrap_or(1.0);
        }
    }
    BackoffNGramModel::new(topology, arc_weight, backoff_weight, final_weight)
}

fn first_unclosed(set: &BTreeSet<Vec<SymbolId>>, probs: &HashMap<Vec<SymbolId>, (f64, usize)>) -> usize {
    let mut worst = usize::MAX;
    for g in set {
        if g.len() > 1 {
            let prefix = &g[..g.len() - 1];
            let ok = (prefix == [BOS] || set.contains(prefix)) && set.contains(&g[1..]);
            if !ok {
                worst = worst.min(probs.get(g).map(|p| p.1).unwrap_or(0));
            }
        }
    }
    if worst == usize::MAX { 0 } else { worst }
}
