//! Filling null-homotopic words over the generating set with relations of `V_{d,k}` of
//! bounded length, each verified by evaluation.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{CanonicalTreePair, GeneratingSet, PairKey};
use crate::error::{Error, Result};

/// Lexicographic progress measure of a partial product.
type Rank = (usize, usize, bool);

/// Replacement of `before` at `position` by `after`; `before · after⁻¹` is trivial in `V_{d,k}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SigmaStep {
    pub position: usize,
    pub before: Vec<u32>,
    pub after: Vec<u32>,
}

impl SigmaStep {
    /// Cancellation of an adjacent inverse pair.
    pub fn is_free(&self, sigma: &GeneratingSet) -> bool {
        self.after.is_empty() && self.before.len() == 2 && sigma.inverse_id(self.before[0]) == self.before[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleConfig {
    /// Longest segment examined while reading the word.
    pub window: usize,
    /// Longest segment examined once the greedy pass is stuck.
    pub fallback_window: usize,
    pub max_steps: usize,
    /// Products of two generators are tabulated when `|Σ|²` is at most this.
    pub pair_table_limit: usize,
    /// Longest rung word allowed while combing.
    pub max_rung: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { window: 6, fallback_window: 10, max_steps: 200_000, pair_table_limit: 4_000_000, max_rung: 40 }
    }
}

impl OracleConfig {
    /// `L`: no emitted relation is longer.
    pub fn max_relator(&self) -> usize {
        (self.window.max(self.fallback_window) + 3).max(2 * self.max_rung + 2)
    }
}

pub struct FillOracle<'a> {
    sigma: &'a GeneratingSet,
    cfg: OracleConfig,
    /// Values of length-two words that are neither trivial nor generators.
    pairs: Option<HashMap<PairKey, [u32; 2]>>,
}

impl<'a> FillOracle<'a> {
    pub fn new(sigma: &'a GeneratingSet, cfg: OracleConfig) -> Self {
        let n = sigma.len();
        let pairs = (n * n <= cfg.pair_table_limit).then(|| {
            let rows: Vec<Vec<(PairKey, [u32; 2])>> = (0..n as u32)
                .into_par_iter()
                .map(|a| {
                    let x = sigma.get(a);
                    (0..n as u32)
                        .filter_map(|b| {
                            let v = x.mul(sigma.get(b));
                            (!v.is_identity() && sigma.lookup(&v).is_none()).then(|| (v.key(), [a, b]))
                        })
                        .collect()
                })
                .collect();
            let mut map = HashMap::new();
            for (k, w) in rows.into_iter().flatten() {
                map.entry(k).or_insert(w);
            }
            map
        });
        FillOracle { sigma, cfg, pairs }
    }

    pub fn config(&self) -> OracleConfig {
        self.cfg
    }

    pub fn sigma(&self) -> &GeneratingSet {
        self.sigma
    }

    /// A word of length at most two for `v`.
    pub fn short_word(&self, v: &CanonicalTreePair) -> Option<Vec<u32>> {
        if v.is_identity() {
            return Some(Vec::new());
        }
        if let Some(s) = self.sigma.lookup(v) {
            return Some(vec![s]);
        }
        match &self.pairs {
            Some(p) => p.get(&v.key()).map(|w| w.to_vec()),
            None => self.sigma.short_word(v),
        }
    }

    fn word3(&self, v: &CanonicalTreePair) -> Option<Vec<u32>> {
        self.pairs.as_ref()?;
        if v.carets() > 3 * self.sigma.c_sigma() {
            return None;
        }
        (0..self.sigma.len() as u32).find_map(|a| {
            let rest = self.sigma.get(self.sigma.inverse_id(a)).mul(v);
            let w = self.short_word(&rest)?;
            (w.len() == 2).then(|| vec![a, w[0], w[1]])
        })
    }

    /// A strictly shorter word for a segment of length `len` with value `v`.
    fn shorter(&self, v: &CanonicalTreePair, len: usize, allow3: bool) -> Option<Vec<u32>> {
        if v.is_identity() {
            return Some(Vec::new());
        }
        if len < 2 {
            return None;
        }
        if let Some(s) = self.sigma.lookup(v) {
            return Some(vec![s]);
        }
        if len >= 3 {
            if let Some(w) = self.short_word(v) {
                return Some(w);
            }
        }
        if allow3 && len >= 4 {
            return self.word3(v);
        }
        None
    }

    /// Steps rewriting `word` to the empty word.
    pub fn fill(&self, word: &[u32]) -> Result<Vec<SigmaStep>> {
        if !self.sigma.evaluate(word).is_identity() {
            return Err(Error::NotNullHomotopic);
        }
        let mut steps = Vec::new();
        let mut stack: Vec<u32> = Vec::with_capacity(word.len());
        for &x in word {
            stack.push(x);
            self.reduce_top(&mut stack, &mut steps)?;
        }
        while !stack.is_empty() {
            let found = self
                .reduction_anywhere(&stack, false)
                .or_else(|| self.tightening(&stack))
                .or_else(|| self.reduction_anywhere(&stack, true));
            let Some((start, len, rep)) = found else {
                self.comb(&mut stack, &mut steps)?;
                break;
            };
            self.apply(&mut stack, &mut steps, start, len, rep)?;
            let tail = stack.split_off(start);
            for x in tail {
                stack.push(x);
                self.reduce_top(&mut stack, &mut steps)?;
            }
        }
        Ok(steps)
    }

    /// Letters `c_1, c_2, …` with `⋯ c_2 c_1 g = 1`. Each step multiplies on the left by the
    /// generator, or failing that the product of two generators, that minimizes the caret count
    /// of the running product; ties go to the smallest ids.
    fn descent(&self, g: &CanonicalTreePair) -> Result<Vec<u32>> {
        let rank = |h: &CanonicalTreePair| (h.carets(), exposed_depth(h), !h.is_identity());
        let n = self.sigma.len() as u32;
        let mut out = Vec::new();
        let mut g = g.clone();
        while !g.is_identity() {
            let current = rank(&g);
            let (c, next) = (0..n)
                .map(|c| (c, self.sigma.get(c).mul(&g)))
                .min_by_key(|(c, h)| (rank(h), *c))
                .expect("nonempty generating set");
            if rank(&next) < current {
                out.push(c);
                g = next;
                continue;
            }
            // (rank, first letter, second letter, product)
            let mut best: Option<(Rank, u32, u32, CanonicalTreePair)> = None;
            let pairs = if self.pairs.is_some() { n } else { 0 };
            for b in 0..pairs {
                let bg = self.sigma.get(b).mul(&g);
                for a in 0..n {
                    let h = self.sigma.get(a).mul(&bg);
                    let r = rank(&h);
                    if r < current && best.as_ref().is_none_or(|x| r < x.0) {
                        best = Some((r, b, a, h));
                    }
                }
            }
            let Some((_, b, a, h)) = best else {
                return Err(Error::Budget(format!("no word of length two lowers the caret count {}", g.carets())));
            };
            out.push(b);
            out.push(a);
            g = h;
        }
        Ok(out)
    }

    /// A short word for a rung value: at most three letters when available, else the inverse
    /// of its descent.
    fn rung_word(&self, v: &CanonicalTreePair) -> Result<Vec<u32>> {
        if let Some(w) = self.short_word(v).or_else(|| self.word3(v)) {
            return Ok(w);
        }
        Ok(self.descent(v)?.iter().map(|&c| self.sigma.inverse_id(c)).collect())
    }

    /// Fills the residual word by combing. The prefix value `g` is represented by
    /// `c_1⁻¹ ⋯ c_r⁻¹` for its descent; appending a letter `y` is absorbed by a ladder run from
    /// right to left whose rungs `g_t y h_u⁻¹` are words of length at most two (three when
    /// needed), `g_t` and `h_u` being the partial descents of `g` and `g y`.
    fn comb(&self, stack: &mut Vec<u32>, steps: &mut Vec<SigmaStep>) -> Result<()> {
        let letters = std::mem::take(stack);
        let params = self.sigma.params();
        let mut word: Vec<u32> = letters.clone();
        let mut prefix = CanonicalTreePair::identity(params);
        let mut g_desc: Vec<u32> = Vec::new();
        for &y in &letters {
            let h = prefix.mul(self.sigma.get(y));
            let h_desc = self.descent(&h)?;
            let (mut t, mut u) = (g_desc.len(), h_desc.len());
            let mut rung_val = self.sigma.get(y).clone();
            let mut rung: Vec<u32> = vec![y];
            while t > 0 || u > 0 {
                let gl = (t > 0).then(|| self.sigma.get(self.sigma.inverse_id(g_desc[t - 1])));
                let hl = (u > 0).then(|| self.sigma.get(h_desc[u - 1]));
                let mut options: Vec<(bool, bool, CanonicalTreePair)> = Vec::new();
                if let (Some(a), Some(b)) = (gl, hl) {
                    options.push((true, true, a.mul(&rung_val).mul(b)));
                }
                if let Some(a) = gl {
                    options.push((true, false, a.mul(&rung_val)));
                }
                if let Some(b) = hl {
                    options.push((false, true, rung_val.mul(b)));
                }
                let (take_g, take_h, v) = options
                    .iter()
                    .min_by_key(|(g, h, v)| (v.carets(), !v.is_identity(), !(*g && *h)))
                    .expect("at least one side remains");
                let (take_g, take_h) = (*take_g, *take_h);
                let new_rung = self.rung_word(v)?;
                if new_rung.len() > self.cfg.max_rung {
                    return Err(Error::Budget(format!(
                        "combing rung of length {} exceeds the relator bound",
                        new_rung.len()
                    )));
                }
                let mut start = t;
                let mut before = Vec::new();
                if take_g {
                    start -= 1;
                    before.push(self.sigma.inverse_id(g_desc[t - 1]));
                }
                before.extend(&rung);
                let mut after = new_rung.clone();
                if take_h {
                    after.push(self.sigma.inverse_id(h_desc[u - 1]));
                }
                *stack = word;
                self.apply(stack, steps, start, before.len(), after)?;
                word = std::mem::take(stack);
                rung_val = v.clone();
                rung = new_rung;
                t -= take_g as usize;
                u -= take_h as usize;
            }
            debug_assert!(rung.is_empty());
            prefix = h;
            g_desc = h_desc;
        }
        debug_assert!(word.is_empty());
        Ok(())
    }

    fn apply(
        &self,
        stack: &mut Vec<u32>,
        steps: &mut Vec<SigmaStep>,
        start: usize,
        len: usize,
        rep: Vec<u32>,
    ) -> Result<()> {
        if steps.len() >= self.cfg.max_steps {
            return Err(Error::Budget(format!("more than {} relator steps", self.cfg.max_steps)));
        }
        let before: Vec<u32> = stack.splice(start..start + len, rep.iter().copied()).collect();
        steps.push(SigmaStep { position: start, before, after: rep });
        Ok(())
    }

    fn reduce_top(&self, stack: &mut Vec<u32>, steps: &mut Vec<SigmaStep>) -> Result<()> {
        while let Some((start, len, rep)) = self.reduction_at_top(stack) {
            self.apply(stack, steps, start, len, rep)?;
        }
        Ok(())
    }

    fn reduction_at_top(&self, stack: &[u32]) -> Option<(usize, usize, Vec<u32>)> {
        let m = stack.len();
        if m >= 2 && self.sigma.inverse_id(stack[m - 2]) == stack[m - 1] {
            return Some((m - 2, 2, Vec::new()));
        }
        let mut acc = CanonicalTreePair::identity(self.sigma.params());
        for len in 1..=self.cfg.window.min(m) {
            acc = self.sigma.get(stack[m - len]).mul(&acc);
            if let Some(rep) = self.shorter(&acc, len, false) {
                return Some((m - len, len, rep));
            }
        }
        None
    }

    fn reduction_anywhere(&self, stack: &[u32], allow3: bool) -> Option<(usize, usize, Vec<u32>)> {
        let m = stack.len();
        let w = self.cfg.fallback_window.min(m);
        // the residual is trivial, so it vanishes in one step when short enough
        if m <= w {
            return Some((0, m, Vec::new()));
        }
        (0..m).find_map(|start| {
            let mut acc = CanonicalTreePair::identity(self.sigma.params());
            (1..=w.min(m - start)).find_map(|len| {
                acc = acc.mul(self.sigma.get(stack[start + len - 1]));
                self.shorter(&acc, len, allow3).map(|rep| (start, len, rep))
            })
        })
    }

    /// The two-letter rewrite `y_j y_{j+1} → c d` that most lowers the caret count of the
    /// prefix value it alters. The sum of prefix caret counts strictly drops, so repeated
    /// tightening terminates.
    fn tightening(&self, stack: &[u32]) -> Option<(usize, usize, Vec<u32>)> {
        let params = self.sigma.params();
        let mut prefix = vec![CanonicalTreePair::identity(params)];
        for &y in stack {
            let next = prefix.last().expect("nonempty").mul(self.sigma.get(y));
            prefix.push(next);
        }
        let per_position: Vec<Option<(usize, usize, [u32; 2])>> = (1..stack.len())
            .into_par_iter()
            .map(|j| {
                let v = self.sigma.get(stack[j - 1]).mul(self.sigma.get(stack[j]));
                let current = prefix[j].carets();
                let mut best: Option<(usize, usize, [u32; 2])> = None;
                for c in 0..self.sigma.len() as u32 {
                    let pc = prefix[j - 1].mul(self.sigma.get(c));
                    let kc = pc.carets();
                    if kc >= current || best.is_some_and(|b| b.1 <= kc) {
                        continue;
                    }
                    let rest = self.sigma.get(self.sigma.inverse_id(c)).mul(&v);
                    if let Some(d) = self.sigma.lookup(&rest) {
                        best = Some((j - 1, kc, [c, d]));
                    }
                }
                best.map(|(start, kc, w)| (start, current - kc, w))
            })
            .collect();
        per_position
            .into_iter()
            .flatten()
            .max_by_key(|&(start, gain, _)| (gain, std::cmp::Reverse(start)))
            .map(|(start, _, w)| (start, 2, w.to_vec()))
    }
}

/// Smallest total level of the images of the children of an exposed domain caret; zero when
/// the domain tree has no caret.
fn exposed_depth(g: &CanonicalTreePair) -> usize {
    let pieces = g.diagram().pieces();
    let d = g.params().d;
    let mut best = usize::MAX;
    let mut i = 0;
    while i + d <= pieces.len() {
        let parent = pieces[i].src.parent();
        let block = &pieces[i..i + d];
        let sibling = pieces[i].src.level() >= 2
            && pieces[i].src.last() == Some(0)
            && block.iter().all(|p| p.src.parent() == parent);
        if sibling {
            best = best.min(block.iter().map(|p| p.dst.level()).sum());
            i += d;
        } else {
            i += 1;
        }
    }
    if best == usize::MAX {
        0
    } else {
        best
    }
}

/// Replays `steps` on `word`, checking each segment and each relation by evaluation.
/// Returns the final word, or the index of the first invalid step.
pub fn replay(
    sigma: &GeneratingSet,
    word: &[u32],
    steps: &[SigmaStep],
    max_relator: usize,
) -> std::result::Result<Vec<u32>, usize> {
    let mut w = word.to_vec();
    for (i, s) in steps.iter().enumerate() {
        let end = s.position + s.before.len();
        if end > w.len() || w[s.position..end] != s.before[..] || s.before.len() + s.after.len() > max_relator {
            return Err(i);
        }
        if sigma.evaluate(&s.before) != sigma.evaluate(&s.after) {
            return Err(i);
        }
        w.splice(s.position..end, s.after.iter().copied());
    }
    Ok(w)
}
