use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Piece strings with unigram probabilities.
///
/// Pieces are plain substrings; whether a piece ends a word is carried by the
/// piece token (see [`piece_token`]), not by the inventory.
#[derive(Clone, Debug, PartialEq)]
pub struct WordPieceInventory {
    pieces: Vec<String>,
    log_probs: Vec<f64>,
    index: HashMap<String, u32>,
    max_chars: usize,
}

impl WordPieceInventory {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Invalid("empty piece inventory".into()));
        }
        let mut pieces = Vec::with_capacity(entries.len());
        let mut log_probs = Vec::with_capacity(entries.len());
        let mut index = HashMap::new();
        let mut total = 0.0;
        let mut max_chars = 0;
        for (piece, p) in entries {
            if piece.is_empty() {
                return Err(Error::Invalid("empty piece".into()));
            }
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Invalid(format!("piece {piece:?} has probability {p}")));
            }
            if index.insert(piece.clone(), pieces.len() as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate piece {piece:?}")));
            }
            total += p;
            max_chars = max_chars.max(piece.chars().count());
            pieces.push(piece);
            log_probs.push(p.ln());
        }
        if total > 1.0 + 1e-9 {
            return Err(Error::Invalid(format!("piece probabilities sum to {total}")));
        }
        Ok(WordPieceInventory { pieces, log_probs, index, max_chars })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn piece(&self, i: u32) -> &str {
        &self.pieces[i as usize]
    }

    pub fn get(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn log_prob(&self, i: u32) -> f64 {
        self.log_probs[i as usize]
    }

    pub fn prob(&self, i: u32) -> f64 {
        self.log_probs[i as usize].exp()
    }

    pub fn total_prob(&self) -> f64 {
        self.log_probs.iter().map(|l| l.exp()).sum()
    }

    /// Best segmentation: highest product of piece probabilities, then fewest
    /// pieces, then lexicographically smallest piece sequence.
    pub fn segment(&self, word: &str) -> Result<Vec<u32>> {
        let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
        let n = bounds.len() - 1;
        if n == 0 {
            return Err(Error::Invalid("cannot segment an empty word".into()));
        }
        if let Some(c) = bounds.windows(2).map(|w| &word[w[0]..w[1]]).find(|c| !self.index.contains_key(*c)) {
            return Err(Error::Invalid(format!("character {c:?} is not covered by the inventory")));
        }
        // best[j] = (score, pieces, start char, piece id) for the prefix of j chars.
        let mut best: Vec<Option<(f64, usize, usize, u32)>> = vec![None; n + 1];
        best[0] = Some((0.0, 0, 0, 0));
        for j in 1..=n {
            let lo = j.saturating_sub(self.max_chars);
            for i in lo..j {
                let Some((score, count, _, _)) = best[i] else { continue };
                let Some(id) = self.get(&word[bounds[i]..bounds[j]]) else { continue };
                let cand = (score + self.log_probs[id as usize], count + 1, i, id);
                let better = match best[j] {
                    None => true,
                    Some(cur) => self.compare(&best, cand, cur) == Ordering::Less,
                };
                if better {
                    best[j] = Some(cand);
                }
            }
        }
        let mut out = Vec::new();
        let mut j = n;
        while j > 0 {
            let (_, _, i, id) = best[j].ok_or_else(|| Error::Invalid(format!("word {word:?} cannot be segmented")))?;
            out.push(id);
            j = i;
        }
        out.reverse();
        Ok(out)
    }

    /// Orders candidate paths ending at the same position (Less = preferred).
    fn compare(
        &self,
        best: &[Option<(f64, usize, usize, u32)>],
        a: (f64, usize, usize, u32),
        b: (f64, usize, usize, u32),
    ) -> Ordering {
        score_order(a.0, b.0).then(a.1.cmp(&b.1)).then_with(|| {
            let pa = self.path(best, a);
            let pb = self.path(best, b);
            pa.iter()
                .map(|&i| self.piece(i))
                .cmp(pb.iter().map(|&i| self.piece(i)))
        })
    }

    fn path(&self, best: &[Option<(f64, usize, usize, u32)>], last: (f64, usize, usize, u32)) -> Vec<u32> {
        let mut out = vec![last.3];
        let mut j = last.2;
        while j > 0 {
            let (_, _, i, id) = best[j].expect("reachable prefix");
            out.push(id);
            j = i;
        }
        out.reverse();
        out
    }

    pub fn segment_str(&self, word: &str) -> Result<Vec<&str>> {
        Ok(self.segment(word)?.into_iter().map(|i| self.piece(i)).collect())
    }

    /// Inventory file: one `piece<TAB>ln-prob` line per piece, pieces escaped.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (p, l) in self.pieces.iter().zip(&self.log_probs) {
            let _ = writeln!(out, "{}\t{}", escape(p), l);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (p, l) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, "expected piece<TAB>log-probability"))?;
            let l: f64 = l.trim().parse().map_err(|_| Error::parse(i + 1, format!("bad log probability {l:?}")))?;
            if !l.is_finite() {
                return Err(Error::parse(i + 1, "non-finite log probability"));
            }
            let (piece, final_marker) = unescape(p).map_err(|m| Error::parse(i + 1, m))?;
            if final_marker {
                return Err(Error::parse(i + 1, "inventory pieces carry no word marker"));
            }
            entries.push((piece, l.exp()));
        }
        Self::new(entries)
    }

    /// Builds an inventory from weighted words.
    ///
    /// Seeds with every character plus the most frequent substrings of 2..=8
    /// characters (scored by frequency × length), runs four rounds of Viterbi
    /// re-estimation, keeps the most probable non-character pieces up to
    /// `target_size`, and re-estimates once more. Characters are never dropped.
    pub fn build(unigrams: &[(String, f64)], target_size: usize) -> Result<Self> {
        let mut chars: BTreeMap<String, f64> = BTreeMap::new();
        let mut subs: HashMap<String, f64> = HashMap::new();
        for (w, c) in unigrams {
            if *c <= 0.0 || w.is_empty() {
                continue;
            }
            let b: Vec<usize> = w.char_indices().map(|(i, _)| i).chain([w.len()]).collect();
            let n = b.len() - 1;
            for i in 0..n {
                *chars.entry(w[b[i]..b[i + 1]].to_string()).or_default() += c;
                for j in i + 2..=(i + SEED_MAX_CHARS).min(n) {
                    *subs.entry(w[b[i]..b[j]].to_string()).or_default() += c;
                }
            }
        }
        if chars.is_empty() {
            return Err(Error::Invalid("no characters in the unigram list".into()));
        }
        if target_size < chars.len() {
            return Err(Error::Invalid(format!(
                "target size {target_size} is below the {} distinct characters",
                chars.len()
            )));
        }
        let room = target_size - chars.len();
        let mut seeds: Vec<(String, f64)> = subs
            .into_iter()
            .map(|(s, f)| {
                let len = s.chars().count() as f64;
                (s, f * len)
            })
            .collect();
        seeds.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        seeds.truncate((room * SEED_FACTOR).max(room));
        let mut weights: Vec<(String, f64)> = chars.iter().map(|(c, f)| (c.clone(), *f)).collect();
        weights.extend(seeds);
        let is_char: HashMap<String, bool> = weights.iter().map(|(p, _)| (p.clone(), chars.contains_key(p))).collect();
        let mut inv = Self::normalized(weights)?;
        for _ in 0..EM_ROUNDS {
            inv = inv.reestimate(unigrams, &is_char)?;
        }
        if inv.len() > target_size {
            let mut others: Vec<(String, f64)> = inv
                .pieces
                .iter()
                .zip(&inv.log_probs)
                .filter(|(p, _)| !is_char[*p])
                .map(|(p, l)| (p.clone(), *l))
                .collect();
            others.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            others.truncate(room);
            let mut keep: Vec<(String, f64)> = chars.keys().map(|c| (c.clone(), inv.prob(inv.get(c).unwrap()))).collect();
            keep.extend(others.into_iter().map(|(p, l)| (p, l.exp())));
            inv = Self::normalized(keep)?;
        }
        inv.reestimate(unigrams, &is_char)
    }

    fn normalized(mut weights: Vec<(String, f64)>) -> Result<Self> {
        let total: f64 = weights.iter().map(|w| w.1).sum();
        weights.iter_mut().for_each(|w| w.1 /= total);
        Self::new(weights)
    }

    /// One Viterbi re-estimation round; unused non-character pieces are dropped
    /// and unused characters keep a half count.
    fn reestimate(&self, unigrams: &[(String, f64)], is_char: &HashMap<String, bool>) -> Result<Self> {
        let mut counts = vec![0.0; self.len()];
        for (w, c) in unigrams {
            if *c <= 0.0 || w.is_empty() {
                continue;
            }
            for id in self.segment(w)? {
                counts[id as usize] += c;
            }
        }
        let entries: Vec<(String, f64)> = self
            .pieces
            .iter()
            .zip(counts)
            .filter_map(|(p, c)| {
                if c > 0.0 {
                    Some((p.clone(), c))
                } else if is_char.get(p).copied().unwrap_or(p.chars().count() == 1) {
                    Some((p.clone(), CHAR_FLOOR))
                } else {
                    None
                }
            })
            .collect();
        Self::normalized(entries)
    }
}

const SEED_MAX_CHARS: usize = 8;
const SEED_FACTOR: usize = 4;
const EM_ROUNDS: usize = 4;
const CHAR_FLOOR: f64 = 0.5;

/// Higher score first; sums of the same log-probabilities in a different
/// order count as equal.
pub fn score_order(a: f64, b: f64) -> Ordering {
    if (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0) {
        Ordering::Equal
    } else {
        b.total_cmp(&a)
    }
}

/// Word-final marker appended to the last piece of every word.
pub const WORD_END: char = '_';

/// Serialized piece token: escaped piece text, plus a trailing `_` when the
/// piece ends its word.
pub fn piece_token(piece: &str, word_final: bool) -> String {
    let mut s = escape(piece);
    if word_final {
        s.push(WORD_END);
    }
    s
}

/// Escapes `\` and `_` so the marker stays unambiguous.
pub fn escape(piece: &str) -> String {
    let mut s = String::with_capacity(piece.len() + 1);
    for ch in piece.chars() {
        if ch == '\\' || ch == WORD_END {
            s.push('\\');
        }
        s.push(ch);
    }
    s
}

/// Inverse of [`piece_token`]: the piece text and whether it ends a word.
pub fn unescape(token: &str) -> std::result::Result<(String, bool), String> {
    let mut out = String::with_capacity(token.len());
    let mut chars = token.chars().peekable();
    let mut word_final = false;
    while let Some(ch) = chars.next() {
        match ch {
            '\\' => match chars.next() {
                Some(c) => out.push(c),
                None => return Err(format!("dangling escape in {token:?}")),
            },
            WORD_END if chars.peek().is_none() => word_final = true,
            WORD_END => return Err(format!("unescaped marker inside {token:?}")),
            c => out.push(c),
        }
    }
    if out.is_empty() {
        return Err(format!("empty piece token {token:?}"));
    }
    Ok((out, word_final))
}
