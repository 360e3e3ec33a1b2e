use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ngram::topology::{ArcStore, StateId};
use crate::symbols::{SymbolId, SymbolTable};
use crate::wordpiece::inventory::{piece_token, unescape, WordPieceInventory};

/// Root state of the lexicon; it is both initial and final.
pub const LEX_ROOT: StateId = 0;

/// Sequential transducer from piece tokens to words.
///
/// A trie over canonical segmentations: every arc inside a word outputs
/// nothing, and the arc reading a word's last piece outputs the word and
/// returns to the root. Because the output depends on the whole spelled
/// prefix, no two trie states are equivalent and the trie is minimal.
#[derive(Clone, Debug)]
pub struct LexiconFst {
    pieces: Arc<SymbolTable>,
    words: Arc<SymbolTable>,
    arcs: ArcStore,
    output: Vec<Option<SymbolId>>,
    /// (q_y, arc index) per word id, `None` for reserved ids.
    completing: Vec<Option<(StateId, usize)>>,
    /// Words in depth-first order; R[q] is the contiguous rank range `reach[q]`.
    rank: Vec<u32>,
    reach: Vec<(u32, u32)>,
    word_final: Vec<bool>,
    /// Arc entering each non-root state.
    parent_arc: Vec<usize>,
}

impl LexiconFst {
    /// Maps each vocabulary word's canonical segmentation to the word.
    /// `pieces` must contain every piece token those segmentations use.
    pub fn build(words: Arc<SymbolTable>, pieces: Arc<SymbolTable>, inventory: &WordPieceInventory) -> Result<Self> {
        // Trie nodes keyed by their piece-token path.
        let mut nodes: BTreeMap<Vec<SymbolId>, StateId> = BTreeMap::new();
        nodes.insert(Vec::new(), LEX_ROOT);
        let mut paths: Vec<(SymbolId, Vec<SymbolId>)> = Vec::new();
        let mut failures = Vec::new();
        for y in words.words() {
            let word = words.token(y);
            let seg = match inventory.segment(word) {
                Ok(seg) => seg,
                Err(e) => {
                    failures.push(format!("{word} ({e})"));
                    continue;
                }
            };
            let mut path = Vec::with_capacity(seg.len());
            for (i, &p) in seg.iter().enumerate() {
                let tok = piece_token(inventory.piece(p), i + 1 == seg.len());
                match pieces.get(&tok) {
                    Some(id) => path.push(id),
                    None => {
                        failures.push(format!("{word} (piece token {tok} not in the piece table)"));
                        break;
                    }
                }
            }
            if path.len() == seg.len() {
                paths.push((y, path));
            }
        }
        if !failures.is_empty() {
            failures.truncate(20);
            return Err(Error::Invalid(format!("unsegmentable words: {}", failures.join(", "))));
        }
        for (_, path) in &paths {
            for k in 1..path.len() {
                let next = nodes.len() as StateId;
                nodes.entry(path[..k].to_vec()).or_insert(next);
            }
        }
        let n = nodes.len();
        let mut lists: Vec<Vec<(SymbolId, StateId, Option<SymbolId>)>> = vec![Vec::new(); n];
        for (prefix, &q) in &nodes {
            if let Some((&last, head)) = prefix.split_last() {
                lists[nodes[head] as usize].push((last, q, None));
            }
        }
        for (y, path) in &paths {
            let (&last, head) = path.split_last().unwrap();
            lists[nodes[head] as usize].push((last, LEX_ROOT, Some(*y)));
        }
        let mut output = Vec::new();
        let mut plain = Vec::with_capacity(n);
        for list in &mut lists {
            list.sort_by_key(|e| e.0);
            if list.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Contract("lexicon is not input-deterministic".into()));
            }
            output.extend(list.iter().map(|e| e.2));
            plain.push(list.iter().map(|e| (e.0, e.1)).collect());
        }
        let arcs = ArcStore::from_lists(plain)?;
        let mut parent_arc = vec![usize::MAX; n];
        for a in 0..arcs.len() {
            if output[a].is_none() {
                parent_arc[arcs.dest(a) as usize] = a;
            }
        }
        let mut completing = vec![None; words.len()];
        for q in 0..n as StateId {
            for a in arcs.range(q) {
                if let Some(y) = output[a] {
                    if completing[y as usize].replace((q, a)).is_some() {
                        return Err(Error::Contract(format!("word {} is output twice", words.token(y))));
                    }
                }
            }
        }
        // Depth-first ranks: the words below a trie node form a contiguous range.
        let mut rank = vec![u32::MAX; words.len()];
        let mut reach = vec![(0u32, 0u32); n];
        let mut next_rank = 0u32;
        let mut stack = vec![(LEX_ROOT, false)];
        while let Some((q, done)) = stack.pop() {
            if done {
                reach[q as usize].1 = next_rank;
                continue;
            }
            reach[q as usize].0 = next_rank;
            stack.push((q, true));
            let mut children = Vec::new();
            for a in arcs.range(q) {
                match output[a] {
                    Some(y) => {
                        rank[y as usize] = next_rank;
                        next_rank += 1;
                    }
                    None => children.push(arcs.dest(a)),
                }
            }
            for &c in children.iter().rev() {
                stack.push((c, false));
            }
        }
        let word_final = pieces
            .tokens()
            .iter()
            .map(|t| unescape(t).map(|(_, f)| f).unwrap_or(false))
            .collect();
        Ok(LexiconFst { pieces, words, arcs, output, completing, rank, reach, word_final, parent_arc })
    }

    pub fn pieces(&self) -> &Arc<SymbolTable> {
        &self.pieces
    }

    pub fn words(&self) -> &Arc<SymbolTable> {
        &self.words
    }

    pub fn arcs(&self) -> &ArcStore {
        &self.arcs
    }

    pub fn num_states(&self) -> usize {
        self.arcs.num_states()
    }

    pub fn output(&self, arc: usize) -> Option<SymbolId> {
        self.output[arc]
    }

    /// The unique (q_y, arc) whose output is `y`.
    pub fn completing(&self, y: SymbolId) -> Option<(StateId, usize)> {
        self.completing.get(y as usize).copied().flatten()
    }

    /// Depth-first rank of word `y` (`u32::MAX` if the lexicon lacks it).
    pub fn rank(&self, y: SymbolId) -> u32 {
        self.rank[y as usize]
    }

    /// Rank range of R[q], the words reachable from `q` along output-free arcs.
    pub fn reach(&self, q: StateId) -> (u32, u32) {
        self.reach[q as usize]
    }

    /// Whether piece id `x` is a word-final piece token.
    pub fn is_word_final(&self, x: SymbolId) -> bool {
        self.word_final.get(x as usize).copied().unwrap_or(false)
    }

    /// Transduces a piece sequence; `None` if it is not a concatenation of words.
    pub fn transduce(&self, pieces: &[SymbolId]) -> Option<Vec<SymbolId>> {
        let mut q = LEX_ROOT;
        let mut out = Vec::new();
        for &x in pieces {
            let a = self.arcs.find(q, x)?;
            if let Some(y) = self.output[a] {
                out.push(y);
            }
            q = self.arcs.dest(a);
        }
        (q == LEX_ROOT).then_some(out)
    }

    /// Canonical piece ids of word `y`, read back from the trie.
    pub fn spell(&self, y: SymbolId) -> Option<Vec<SymbolId>> {
        let (mut q, a) = self.completing(y)?;
        let mut rev = vec![self.arcs.label(a)];
        while q != LEX_ROOT {
            let arc = self.parent_arc[q as usize];
            rev.push(self.arcs.label(arc));
            q = self.arcs.source(arc);
        }
        rev.reverse();
        Some(rev)
    }
}

/// Piece symbol table with both the inner and the word-final token of every
/// inventory piece, in inventory order.
pub fn piece_table(inventory: &WordPieceInventory) -> SymbolTable {
    let mut t = SymbolTable::new();
    for p in inventory.pieces() {
        t.add(&piece_token(p, false));
        t.add(&piece_token(p, true));
    }
    t
}

/// Piece tokens of a word sentence under canonical segmentation, plus for
/// each piece the index of its word.
pub fn segment_sentence<S: AsRef<str>>(
    inventory: &WordPieceInventory,
    words: &[S],
) -> Result<(Vec<String>, Vec<usize>)> {
    let mut toks = Vec::new();
    let mut owner = Vec::new();
    for (i, w) in words.iter().enumerate() {
        let seg = inventory.segment(w.as_ref())?;
        for (k, &p) in seg.iter().enumerate() {
            toks.push(piece_token(inventory.piece(p), k + 1 == seg.len()));
            owner.push(i);
        }
    }
    Ok((toks, owner))
}

/// Joins piece tokens back into words; a trailing unfinished word is kept.
pub fn detokenize<S: AsRef<str>>(pieces: &[S]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for t in pieces {
        let (p, fin) = unescape(t.as_ref()).map_err(Error::Invalid)?;
        cur.push_str(&p);
        if fin {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    Ok(out)
}
