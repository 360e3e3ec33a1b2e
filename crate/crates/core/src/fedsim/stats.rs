use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};

/// Two-sample chi-squared homogeneity statistic
/// Σₓ (aₓ/A − bₓ/B)² / ((aₓ+bₓ)/(A+B)) over the union support, skipping
/// empty cells. An empty side contributes zero shares.
pub fn z_statistic<K: Ord>(a: &BTreeMap<K, f64>, b: &BTreeMap<K, f64>) -> Result<f64> {
    let ta: f64 = a.values().sum();
    let tb: f64 = b.values().sum();
    if ta + tb <= 0.0 {
        return Err(Error::Invalid("both unigram count maps are empty".into()));
    }
    let share = |v: f64, t: f64| if t > 0.0 { v / t } else { 0.0 };
    let keys: BTreeSet<&K> = a.keys().chain(b.keys()).collect();
    let mut z = 0.0;
    for k in keys {
        let x = a.get(k).copied().unwrap_or(0.0);
        let y = b.get(k).copied().unwrap_or(0.0);
        if x + y <= 0.0 {
            continue;
        }
        let d = share(x, ta) - share(y, tb);
        z += d * d / ((x + y) / (ta + tb));
    }
    Ok(z)
}

/// Per-round convergence metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundStats {
    pub round: usize,
    /// Z between cumulative counts after ⌊k/2⌋ and k rounds (None at k = 1).
    pub z_stat: Option<f64>,
    pub unique: usize,
    pub novel: bool,
    pub novelty_ma: f64,
}

/// Tracks cumulative unigram counts over rounds.
#[derive(Clone, Debug)]
pub struct ConvergenceTracker<K: Ord + Clone> {
    window: usize,
    rounds: Vec<BTreeMap<K, f64>>,
    full: BTreeMap<K, f64>,
    half: BTreeMap<K, f64>,
    half_rounds: usize,
    novel: Vec<bool>,
    snapshots: Vec<(usize, BTreeMap<K, f64>)>,
}

impl<K: Ord + Clone> ConvergenceTracker<K> {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("novelty window must be ≥ 1".into()));
        }
        Ok(ConvergenceTracker {
            window,
            rounds: Vec::new(),
            full: BTreeMap::new(),
            half: BTreeMap::new(),
            half_rounds: 0,
            novel: Vec::new(),
            snapshots: Vec::new(),
        })
    }

    /// Adds one round's counts and returns that round's metrics.
    pub fn push(&mut self, counts: BTreeMap<K, f64>) -> RoundStats {
        let mut novel = false;
        for (k, &v) in &counts {
            if v <= 0.0 {
                continue;
            }
            let e = self.full.entry(k.clone()).or_insert(0.0);
            if *e <= 0.0 {
                novel = true;
            }
            *e += v;
        }
        self.rounds.push(counts);
        self.novel.push(novel);
        let k = self.rounds.len();
        while self.half_rounds < k / 2 {
            for (key, &v) in &self.rounds[self.half_rounds] {
                *self.half.entry(key.clone()).or_insert(0.0) += v;
            }
            self.half_rounds += 1;
        }
        if k.is_power_of_two() {
            self.snapshots.push((k, self.full.clone()));
        }
        let z_stat = if k >= 2 { z_statistic(&self.half, &self.full).ok() } else { None };
        let lo = k.saturating_sub(self.window);
        let recent = &self.novel[lo..];
        let novelty_ma = recent.iter().filter(|n| **n).count() as f64 / recent.len() as f64;
        RoundStats { round: k, z_stat, unique: self.unique(), novel, novelty_ma }
    }

    pub fn unique(&self) -> usize {
        self.full.values().filter(|v| **v > 0.0).count()
    }

    pub fn cumulative(&self) -> &BTreeMap<K, f64> {
        &self.full
    }

    /// Cumulative counts at rounds 1, 2, 4, …
    pub fn snapshots(&self) -> &[(usize, BTreeMap<K, f64>)] {
        &self.snapshots
    }
}

/// One CSV row of round metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub z_stat: Option<f64>,
    pub unique_unigrams: usize,
    pub novelty_ma: f64,
    pub sll_e: Option<f64>,
}

pub const METRICS_HEADER: &str = "round,z_stat,unique_unigrams,novelty_ma,sll_e";

pub fn metrics_csv(rows: &[RoundMetrics]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{:.6},{}\n", r.round, opt(r.z_stat), r.unique_unigrams, r.novelty_ma, opt(r.sll_e)));
    }
    out
}

impl From<&RoundStats> for RoundMetrics {
    fn from(s: &RoundStats) -> Self {
        RoundMetrics { round: s.round, z_stat: s.z_stat, unique_unigrams: s.unique, novelty_ma: s.novelty_ma, sll_e: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(v: &[(&'static str, f64)]) -> BTreeMap<&'static str, f64> {
        v.iter().cloned().collect()
    }

    #[test]
    fn identical_maps_are_homogeneous() {
        let a = m(&[("x", 3.0), ("y", 5.0)]);
        assert!(z_statistic(&a, &a).unwrap() <= 1e-12);
        assert!(z_statistic::<&str>(&BTreeMap::new(), &BTreeMap::new()).is_err());
    }

    #[test]
    fn novelty_decays_after_first_round() {
        let mut t = ConvergenceTracker::new(10).unwrap();
        let mut last = 1.0;
        for r in 1..=11 {
            let counts = if r == 1 { m(&[("a", 1.0), ("b", 2.0)]) } else { m(&[("a", 1.0)]) };
            let s = t.push(counts);
            assert!(s.novelty_ma <= last);
            last = s.novelty_ma;
        }
        assert_eq!(last, 0.0);
        assert_eq!(t.snapshots().iter().map(|s| s.0).collect::<Vec<_>>(), [1, 2, 4, 8]);
    }

    #[test]
    fn always_novel_is_one() {
        let mut t = ConvergenceTracker::new(4).unwrap();
        for r in 0..20u32 {
            let s = t.push([(r, 1.0)].into_iter().collect());
            assert_eq!(s.novelty_ma, 1.0);
            assert_eq!(s.unique, r as usize + 1);
        }
    }

    #[test]
    fn csv_layout() {
        let rows = [RoundMetrics { round: 1, z_stat: None, unique_unigrams: 2, novelty_ma: 1.0, sll_e: Some(-3.5) }];
        assert_eq!(metrics_csv(&rows), "round,z_stat,unique_unigrams,novelty_ma,sll_e\n1,,2,1.000000,-3.500000000\n");
    }
}
