//! Word-piece segmentation by exhaustive search.

use fedgram_core::wordpiece::{score_order, WordPieceInventory};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn random_string<R: Rng>(rng: &mut R, alphabet: &[char], lo: usize, hi: usize) -> String {
    (0..rng.gen_range(lo..=hi)).map(|_| *alphabet.choose(rng).unwrap()).collect()
}

/// Single characters plus `extra` random longer pieces, total mass 0.9.
pub fn random_inventory<R: Rng>(rng: &mut R, alphabet: &[char], extra: usize) -> WordPieceInventory {
    let mut pieces: Vec<String> = alphabet.iter().map(|c| c.to_string()).collect();
    while pieces.len() < alphabet.len() + extra {
        let p = random_string(rng, alphabet, 2, 4);
        if !pieces.contains(&p) {
            pieces.push(p);
        }
    }
    let w: Vec<f64> = pieces.iter().map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    WordPieceInventory::new(pieces.into_iter().zip(w.iter().map(|v| 0.9 * v / total)).collect()).unwrap()
}

/// Best split by exhaustive enumeration: highest log-probability sum
/// (equal up to rounding), then fewest pieces, then smallest sequence.
pub fn exhaustive(inv: &WordPieceInventory, word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    let mut best: Option<(f64, Vec<String>)> = None;
    for mask in 0u32..(1 << (n - 1)) {
        let mut pieces = Vec::new();
        let mut cur = String::new();
        for (i, &c) in chars.iter().enumerate() {
            cur.push(c);
            if i + 1 == n || mask & (1 << i) != 0 {
                pieces.push(std::mem::take(&mut cur));
            }
        }
        let Some(ids) = pieces.iter().map(|p| inv.get(p)).collect::<Option<Vec<u32>>>() else { continue };
        let score = ids.iter().fold(0.0, |s, &i| s + inv.log_prob(i));
        let better = match &best {
            None => true,
            Some((bs, bp)) => score_order(score, *bs).then((pieces.len(), &pieces).cmp(&(bp.len(), bp))).is_lt(),
        };
        if better {
            best = Some((score, pieces));
        }
    }
    best.unwrap().1
}
