//! The compact presentation of `AAut_D(T_{d,k})` as a rewriting system. Every step replaces
//! a segment by an equal segment, the two together forming an instance of one relator family,
//! and costs one unit of area.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aaut::{Aaut, DecoratedElement};
use crate::error::{Error, Result};
use crate::localgroup::{random_local, random_portrait, Portrait};
use crate::perm::Perm;
use crate::thompson::{anchors, FillOracle, GeneratingSet, OracleConfig};
use crate::tree::{TreeParams, Vertex};

/// A generator of weight one: an element of `Σ` or a finitely supported compact element.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Letter {
    Sigma(u32),
    Compact(Portrait),
}

impl Letter {
    pub fn is_sigma(&self) -> bool {
        matches!(self, Letter::Sigma(_))
    }
}

pub type Word = Vec<Letter>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "R_Sigma")]
    RSigma,
    #[serde(rename = "R_D")]
    RD,
    #[serde(rename = "R_1")]
    R1,
    #[serde(rename = "R_2")]
    R2,
    #[serde(rename = "R_3")]
    R3,
    #[serde(rename = "free")]
    Free,
}

impl Family {
    pub const ALL: [Family; 6] = [Family::RSigma, Family::RD, Family::R1, Family::R2, Family::R3, Family::Free];

    pub fn name(self) -> &'static str {
        match self {
            Family::RSigma => "R_Sigma",
            Family::RD => "R_D",
            Family::R1 => "R_1",
            Family::R2 => "R_2",
            Family::R3 => "R_3",
            Family::Free => "free",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub position: usize,
    pub family: Family,
    pub before: Word,
    pub after: Word,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RewriteTrace {
    pub steps: Vec<Step>,
}

impl RewriteTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn count(&self, family: Family) -> usize {
        self.steps.iter().filter(|s| s.family == family).count()
    }

    /// Area: one per relator application; free reductions only when charged.
    pub fn cost(&self, charge_free: bool) -> usize {
        self.steps.iter().filter(|s| charge_free || s.family != Family::Free).count()
    }

    /// Steps of the compact families `R_D, R_1, R_2, R_3`.
    pub fn compact_part(&self) -> usize {
        self.steps.iter().filter(|s| !matches!(s.family, Family::RSigma | Family::Free)).count()
    }

    fn extend_shifted(&mut self, other: RewriteTrace, offset: usize) {
        self.steps.extend(other.steps.into_iter().map(|mut s| {
            s.position += offset;
            s
        }));
    }
}

/// `R_2` data: each label at a base vertex together with a word over `Σ` for it.
#[derive(Clone, Debug)]
pub struct RelatorTables {
    /// Longest `R_2` word per component.
    pub r: Vec<usize>,
    /// `C_i = 2d + max(2, r_i)`.
    pub c: Vec<usize>,
    pub words: BTreeMap<(Vertex, Perm), Vec<u32>>,
}

impl RelatorTables {
    pub fn c_max(&self) -> usize {
        self.c.iter().copied().max().unwrap_or(0)
    }

    pub fn r_max(&self) -> usize {
        self.r.iter().copied().max().unwrap_or(0)
    }
}

/// Vertices whose labels are traded for `Σ`-words: the `a_i`, and for `k = 1` also the
/// children of `a_1`, whose cylinders the raising generators collapse onto.
pub fn base_vertices(params: TreeParams) -> Vec<Vertex> {
    let mut out: Vec<Vertex> = (0..params.k).map(|i| Vertex::top(i as u8)).collect();
    if params.k == 1 {
        out.extend(anchors(params));
    }
    out
}

/// Outcome of converting one compact element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompactReport {
    pub kappa: usize,
    pub word_len: usize,
    pub cost: usize,
    /// `C·κ`, the bound on both length and cost.
    pub bound: usize,
    /// Recursion nodes at which `Σ κ(ũ_ℓ) ≤ κ(u)` was checked.
    pub nodes_checked: usize,
}

/// Outcome of moving compact letters to the left.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub u: Portrait,
    pub s: Vec<u32>,
    pub trace: RewriteTrace,
    pub bound: usize,
}

#[derive(Clone, Debug)]
pub struct FillReport {
    pub trace: RewriteTrace,
    pub length: usize,
    /// Steps spent normalizing and converting compact letters.
    pub nlogn_part: usize,
    /// Steps spent inside `V_{d,k}`.
    pub delta_part: usize,
    pub free_steps: usize,
    pub kappa_u: usize,
}

impl FillReport {
    pub fn area(&self, charge_free: bool) -> usize {
        self.nlogn_part + self.delta_part + if charge_free { self.free_steps } else { 0 }
    }
}

/// `⌈log2 n⌉·⌈n/2⌉ + n`.
pub fn normalize_bound(n: usize) -> usize {
    let log = if n <= 1 { 0 } else { (usize::BITS - (n - 1).leading_zeros()) as usize };
    log * n.div_ceil(2) + n
}

/// The rewriting system for fixed `(d, k, D, Σ)`.
pub struct Presentation<'a> {
    aaut: Aaut,
    sigma: &'a GeneratingSet,
    tables: RelatorTables,
    sigma_elems: Vec<DecoratedElement>,
    oracle_cfg: OracleConfig,
    oracle: OnceLock<FillOracle<'a>>,
}

impl<'a> Presentation<'a> {
    pub fn new(aaut: Aaut, sigma: &'a GeneratingSet, oracle_cfg: OracleConfig) -> Result<Self> {
        aaut.params().check_same(&sigma.params())?;
        let params = aaut.params();
        let mut words = BTreeMap::new();
        let mut r = vec![0; params.k];
        for x in base_vertices(params) {
            for &pi in aaut.group().elements() {
                if pi.is_identity() {
                    continue;
                }
                let u = Portrait::single(params, &x, pi)?;
                let v = aaut.portrait_pair(&u)?;
                let w = match sigma.lookup(&v) {
                    Some(s) => vec![s],
                    None => sigma.short_word(&v).ok_or_else(|| {
                        Error::Generation(format!("no word of length at most two for a label at {x}"))
                    })?,
                };
                let i = x.component().expect("base vertices are not the root");
                r[i] = r[i].max(w.len());
                words.insert((x.clone(), pi), w);
            }
        }
        let c = r.iter().map(|&ri| 2 * params.d + ri.max(2)).collect();
        let tables = RelatorTables { r, c, words };
        let sigma_elems = sigma.elements().iter().map(|s| aaut.from_pair(s)).collect();
        let p = Presentation { aaut, sigma, tables, sigma_elems, oracle_cfg, oracle: OnceLock::new() };
        p.check_relator_lengths()?;
        Ok(p)
    }

    /// Every relator instance has bounded length.
    fn check_relator_lengths(&self) -> Result<()> {
        if 1 + self.tables.r_max() > self.max_relator_len(Family::R2) {
            return Err(Error::Generation("R_2 words longer than the table bound".into()));
        }
        Ok(())
    }

    /// Length bound per family: `R_D ≤ 3`, `R_1 ≤ 4`, `R_2 ≤ 1 + max r_i`, `R_3 ≤ 4`, `R_Σ ≤ L`.
    pub fn max_relator_len(&self, family: Family) -> usize {
        match family {
            Family::RD => 3,
            Family::R1 | Family::R3 => 4,
            Family::R2 => 1 + self.tables.r_max(),
            Family::RSigma => self.oracle_cfg.max_relator(),
            Family::Free => 2,
        }
    }

    pub fn aaut(&self) -> &Aaut {
        &self.aaut
    }

    pub fn sigma(&self) -> &GeneratingSet {
        self.sigma
    }

    pub fn tables(&self) -> &RelatorTables {
        &self.tables
    }

    pub fn params(&self) -> TreeParams {
        self.aaut.params()
    }

    pub fn oracle(&self) -> &FillOracle<'a> {
        self.oracle.get_or_init(|| FillOracle::new(self.sigma, self.oracle_cfg))
    }

    pub fn inverse_letter(&self, l: &Letter) -> Letter {
        match l {
            Letter::Sigma(s) => Letter::Sigma(self.sigma.inverse_id(*s)),
            Letter::Compact(u) => Letter::Compact(u.inverse()),
        }
    }

    pub fn inverse_word(&self, w: &[Letter]) -> Word {
        w.iter().rev().map(|l| self.inverse_letter(l)).collect()
    }

    pub fn letter_value(&self, l: &Letter) -> Result<DecoratedElement> {
        match l {
            Letter::Sigma(s) => self
                .sigma_elems
                .get(*s as usize)
                .cloned()
                .ok_or_else(|| Error::UnknownGenerator(format!("generator id {s}"))),
            Letter::Compact(u) => self.aaut.from_portrait(u),
        }
    }

    /// Product of the letters, leftmost acting last.
    pub fn evaluate(&self, w: &[Letter]) -> Result<DecoratedElement> {
        w.iter().try_fold(self.aaut.identity(), |acc, l| Ok(self.aaut.mul(&acc, &self.letter_value(l)?)))
    }

    /// `[u]`, or the empty word for the identity.
    pub fn compact_word(u: &Portrait) -> Word {
        if u.is_identity() {
            Vec::new()
        } else {
            vec![Letter::Compact(u.clone())]
        }
    }

    fn product(&self, letters: &[Letter]) -> Option<Portrait> {
        letters.iter().try_fold(Portrait::identity(self.params()), |acc, l| match l {
            Letter::Compact(u) => acc.mul(u).ok(),
            Letter::Sigma(_) => None,
        })
    }

    // ---------------------------------------------------------------- single moves

    /// Replaces `data.0` at `position` by `data.1` after checking the family instance.
    pub fn apply_move(&self, w: &[Letter], family: Family, position: usize, after: Word) -> Result<(Word, Step)> {
        let len = self.segment_len(w, family, position, &after)?;
        let before = w[position..position + len].to_vec();
        let step = Step { position, family, before, after };
        if !self.check_instance(&step) {
            return Err(Error::Precondition(format!("not an instance of {}", family.name())));
        }
        let mut out = w[..position].to_vec();
        out.extend(step.after.iter().cloned());
        out.extend_from_slice(&w[position + len..]);
        Ok((out, step))
    }

    /// Length of the replaced segment implied by the family and the replacement.
    fn segment_len(&self, w: &[Letter], family: Family, position: usize, after: &[Letter]) -> Result<usize> {
        if position > w.len() {
            return Err(Error::Precondition(format!("position {position} outside a word of length {}", w.len())));
        }
        let rest = w.len() - position;
        let len = match family {
            Family::Free => 2,
            Family::RD => match after.len() {
                0 => {
                    if matches!(w.get(position), Some(Letter::Compact(u)) if u.is_identity()) {
                        1
                    } else {
                        2
                    }
                }
                1 => 2,
                _ => 1,
            },
            Family::R1 => {
                if after.len() == 3 {
                    1
                } else {
                    3
                }
            }
            Family::R3 => 2,
            Family::R2 => {
                if after.len() == 1 {
                    self.tables.words.values().map(|x| x.len()).find(|&l| l <= rest).unwrap_or(1)
                } else {
                    1
                }
            }
            Family::RSigma => {
                return Err(Error::Unsupported("R_Sigma moves come from the filling oracle".into()));
            }
        };
        if len > rest {
            return Err(Error::Precondition(format!("segment of length {len} at {position} runs past the end")));
        }
        Ok(len)
    }

    /// Whether `before · after⁻¹` is, up to rotation and inversion, an instance of the family.
    pub fn check_instance(&self, step: &Step) -> bool {
        let total = step.before.len() + step.after.len();
        if total > self.max_relator_len(step.family) {
            return false;
        }
        match step.family {
            Family::Free => {
                let pair = if step.after.is_empty() { &step.before } else { &step.after };
                let other = if step.after.is_empty() { &step.after } else { &step.before };
                other.is_empty() && pair.len() == 2 && self.inverse_letter(&pair[0]) == pair[1]
            }
            Family::RD => match (self.product(&step.before), self.product(&step.after)) {
                (Some(a), Some(b)) => a == b,
                _ => false,
            },
            Family::RSigma => {
                let ids = |w: &[Letter]| -> Option<Vec<u32>> {
                    w.iter()
                        .map(|l| match l {
                            Letter::Sigma(s) => Some(*s),
                            Letter::Compact(_) => None,
                        })
                        .collect()
                };
                match (ids(&step.before), ids(&step.after)) {
                    (Some(a), Some(b)) => self.sigma.evaluate(&a) == self.sigma.evaluate(&b),
                    _ => false,
                }
            }
            Family::R1 | Family::R2 | Family::R3 => {
                let mut rel = step.before.clone();
                rel.extend(self.inverse_word(&step.after));
                let inv = self.inverse_word(&rel);
                [rel, inv].iter().any(|r| (0..r.len()).any(|k| self.is_relator(step.family, &rotate(r, k))))
            }
        }
    }

    fn is_relator(&self, family: Family, r: &[Letter]) -> bool {
        match (family, r) {
            // σ u1 σ⁻¹ u2⁻¹ with u1 trivial on the domain tree of σ
            (Family::R1, [Letter::Sigma(s), Letter::Compact(u1), Letter::Sigma(t), Letter::Compact(x)]) => {
                *t == self.sigma.inverse_id(*s)
                    && matches!(self.aaut.conj_compact(self.sigma.get(*s), u1), Ok(u2) if u2.inverse() == *x)
            }
            // σ1 u1 σ2⁻¹ u2⁻¹ with (u2, σ2) the exchange of (σ1, u1)
            (Family::R3, [Letter::Sigma(s1), Letter::Compact(u1), Letter::Sigma(t), Letter::Compact(x)]) => {
                matches!(self.aaut.exchange(self.sigma, *s1, u1), Ok((u2, Some(s2))) if self.sigma.inverse_id(s2) == *t && u2.inverse() == *x)
            }
            (Family::R3, [Letter::Sigma(s1), Letter::Compact(u1), Letter::Compact(x)]) => {
                matches!(self.aaut.exchange(self.sigma, *s1, u1), Ok((u2, None)) if u2.inverse() == *x)
            }
            // u w_u⁻¹
            (Family::R2, [Letter::Compact(u), rest @ ..]) => {
                let mut labels = u.labels();
                let (Some((x, pi)), None) = (labels.next(), labels.next()) else {
                    return false;
                };
                let Some(wu) = self.tables.words.get(&(x, pi)) else {
                    return false;
                };
                let expected: Word = wu.iter().rev().map(|&s| Letter::Sigma(self.sigma.inverse_id(s))).collect();
                rest == expected.as_slice()
            }
            _ => false,
        }
    }

    /// Replays the trace, re-checking each step. `Err(i)` names the first failing step;
    /// `Err(len)` means the steps replay but do not end at `target`.
    pub fn verify_trace(
        &self,
        source: &[Letter],
        trace: &RewriteTrace,
        target: &[Letter],
    ) -> std::result::Result<(), usize> {
        let mut w = source.to_vec();
        for (i, s) in trace.steps.iter().enumerate() {
            let end = s.position + s.before.len();
            if end > w.len() || w[s.position..end] != s.before[..] || !self.check_instance(s) {
                return Err(i);
            }
            w.splice(s.position..end, s.after.iter().cloned());
        }
        if w != target {
            return Err(trace.steps.len());
        }
        Ok(())
    }

    // ---------------------------------------------------------------- compact letters

    /// `Σ`-word for a compact element supported below `a_i`, of length and cost at most `C_i·κ(u)`.
    pub fn rewrite_local(&self, i: usize, u: &Portrait) -> Result<(Vec<u32>, RewriteTrace, CompactReport)> {
        let params = self.params();
        if i >= params.k || u.nontrivial_components().iter().any(|&c| c != i) {
            return Err(Error::Precondition(format!("portrait not supported below a{}", i + 1)));
        }
        let mut rw = Rewriter::new(self, Self::compact_word(u));
        if !u.is_identity() {
            rw.rewrite_at(0, &Vertex::top(i as u8), u.clone())?;
        }
        let bound = self.tables.c[i] * u.kappa();
        self.finish_compact(rw, u, bound)
    }

    /// `Σ`-word for any compact element: split by component, then convert each.
    pub fn compact_to_sigma(&self, u: &Portrait) -> Result<(Vec<u32>, RewriteTrace, CompactReport)> {
        let mut rw = Rewriter::new(self, Self::compact_word(u));
        if !u.is_identity() {
            rw.compact_at(0, u.clone())?;
        }
        let bound = self.tables.c_max() * u.kappa();
        self.finish_compact(rw, u, bound)
    }

    fn finish_compact(
        &self,
        rw: Rewriter<'_, 'a>,
        u: &Portrait,
        bound: usize,
    ) -> Result<(Vec<u32>, RewriteTrace, CompactReport)> {
        let nodes = rw.nodes;
        let (word, trace) = (rw.word, rw.trace);
        let ids: Vec<u32> = word
            .iter()
            .map(|l| match l {
                Letter::Sigma(s) => Ok(*s),
                Letter::Compact(_) => Err(Error::Precondition("compact letter left after conversion".into())),
            })
            .collect::<Result<_>>()?;
        let report =
            CompactReport { kappa: u.kappa(), word_len: ids.len(), cost: trace.len(), bound, nodes_checked: nodes };
        if ids.len() > bound || trace.len() > bound + self.params().k {
            return Err(Error::Precondition(format!(
                "conversion exceeded its bound: length {}, cost {}, bound {bound}",
                ids.len(),
                trace.len()
            )));
        }
        Ok((ids, trace, report))
    }

    // ---------------------------------------------------------------- normalization

    /// Moves every compact letter to the front: `w = u·s` with `s` over `Σ`, using at most
    /// `⌈log2 n⌉·⌈n/2⌉ + n` steps.
    pub fn normalize_left(&self, w: &[Letter]) -> Result<Normalized> {
        let mut rw = Rewriter::new(self, w.to_vec());
        let (has_u, len) = rw.normalize(0, w.len())?;
        debug_assert_eq!(len, rw.word.len());
        let bound = normalize_bound(w.len());
        if rw.trace.len() > bound {
            return Err(Error::Precondition(format!("normalization took {} steps, bound {bound}", rw.trace.len())));
        }
        let (u, rest) = match (has_u, rw.word.first()) {
            (true, Some(Letter::Compact(u))) => (u.clone(), &rw.word[1..]),
            _ => (Portrait::identity(self.params()), &rw.word[..]),
        };
        let s = rest
            .iter()
            .map(|l| match l {
                Letter::Sigma(s) => *s,
                Letter::Compact(_) => unreachable!("normal form has one leading compact letter"),
            })
            .collect();
        Ok(Normalized { u, s, trace: rw.trace, bound })
    }

    // ---------------------------------------------------------------- filling

    /// A trace from a null-homotopic word to the empty word.
    pub fn fill(&self, w: &[Letter]) -> Result<FillReport> {
        if !self.evaluate(w)?.is_identity() {
            return Err(Error::NotNullHomotopic);
        }
        let norm = self.normalize_left(w)?;
        let mut trace = norm.trace;
        let kappa_u = norm.u.kappa();
        let mut ids = Vec::new();
        if !norm.u.is_identity() {
            let (wu, t, _) = self.compact_to_sigma(&norm.u)?;
            trace.extend_shifted(t, 0);
            ids = wu;
        }
        ids.extend(&norm.s);
        let nlogn_part = trace.len();
        let mut free_steps = 0;
        let mut delta_part = 0;
        for s in self.oracle().fill(&ids)? {
            let family = if s.is_free(self.sigma) {
                free_steps += 1;
                Family::Free
            } else {
                delta_part += 1;
                Family::RSigma
            };
            let letters = |v: &[u32]| v.iter().map(|&x| Letter::Sigma(x)).collect::<Word>();
            trace.steps.push(Step {
                position: s.position,
                family,
                before: letters(&s.before),
                after: letters(&s.after),
            });
        }
        Ok(FillReport { trace, length: w.len(), nlogn_part, delta_part, free_steps, kappa_u })
    }
}

/// One filled loop of a profile run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileSample {
    pub n: usize,
    pub index: usize,
    pub kind: LoopKind,
    pub length: usize,
    pub area: usize,
    pub nlogn_part: usize,
    pub delta_part: usize,
    pub free_steps: usize,
}

/// Aggregate over the samples of one length.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    pub n: usize,
    pub samples: usize,
    pub mean_area: f64,
    pub max_area: usize,
    pub nlogn_part: usize,
    pub delta_part: usize,
    /// `max nlogn_part / (n·log2 n)` over the samples.
    pub c_hat: f64,
}

/// `n·log2 n`, at least `1`.
pub fn nlogn(n: usize) -> f64 {
    let n = n.max(2) as f64;
    n * n.log2()
}

/// Deterministic per-sample generator: the stream is derived from `(n, index)` so samples can
/// be computed in any order.
pub fn sample_rng(seed: u64, n: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | index as u64);
    rng
}

/// Aggregates samples into one row per length, in the order of `lengths`; lengths without
/// samples are skipped.
pub fn profile_rows(lengths: &[usize], samples: &[ProfileSample]) -> Vec<ProfileRow> {
    lengths
        .iter()
        .filter_map(|&n| {
            let s: Vec<&ProfileSample> = samples.iter().filter(|x| x.n == n).collect();
            if s.is_empty() {
                return None;
            }
            Some(ProfileRow {
                n,
                samples: s.len(),
                mean_area: s.iter().map(|x| x.area as f64).sum::<f64>() / s.len() as f64,
                max_area: s.iter().map(|x| x.area).max().unwrap_or(0),
                nlogn_part: s.iter().map(|x| x.nlogn_part).max().unwrap_or(0),
                delta_part: s.iter().map(|x| x.delta_part).max().unwrap_or(0),
                c_hat: s.iter().map(|x| x.nlogn_part as f64 / nlogn(x.length)).fold(0.0, f64::max),
            })
        })
        .collect()
}

impl Presentation<'_> {
    /// Generates loop `index` of nominal length `n`, fills it and replays the trace.
    pub fn fill_sample(
        &self,
        n: usize,
        index: usize,
        seed: u64,
        charge_free: bool,
    ) -> Result<(Word, FillReport, ProfileSample)> {
        let mut rng = sample_rng(seed, n, index);
        let kind = LoopKind::ALL[index % LoopKind::ALL.len()];
        let w = self.random_loop(n, kind, &mut rng)?;
        let f = self.fill(&w)?;
        self.verify_trace(&w, &f.trace, &[])
            .map_err(|i| Error::Precondition(format!("trace step {i} failed replay")))?;
        let sample = ProfileSample {
            n,
            index,
            kind,
            length: w.len(),
            area: f.area(charge_free),
            nlogn_part: f.nlogn_part,
            delta_part: f.delta_part,
            free_steps: f.free_steps,
        };
        Ok((w, f, sample))
    }

    /// Fills `samples` generated loops for each length, cycling through the loop kinds, and
    /// checks every trace with [`Presentation::verify_trace`].
    pub fn dehn_profile(
        &self,
        lengths: &[usize],
        samples: usize,
        seed: u64,
        charge_free: bool,
    ) -> Result<(Vec<ProfileRow>, Vec<ProfileSample>)> {
        let jobs: Vec<(usize, usize)> = lengths.iter().flat_map(|&n| (0..samples).map(move |i| (n, i))).collect();
        let samples: Vec<ProfileSample> = jobs
            .par_iter()
            .map(|&(n, index)| self.fill_sample(n, index, seed, charge_free).map(|r| r.2))
            .collect::<Result<_>>()?;
        Ok((profile_rows(lengths, &samples), samples))
    }
}

/// Families of generated null-homotopic words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum LoopKind {
    /// `x · (u s)⁻¹` with `u s` the left normal form of a random word `x`.
    Regrouped,
    /// A product of conjugates of random `R_1` and `R_3` instances.
    Conjugates,
    /// `[a, b]` for words `a, b` supported in disjoint top cylinders.
    Commutator,
}

impl LoopKind {
    pub const ALL: [LoopKind; 3] = [LoopKind::Regrouped, LoopKind::Conjugates, LoopKind::Commutator];
}

impl<'a> Presentation<'a> {
    /// A generator of `Σ` with probability one half, otherwise a compact letter with
    /// `1 ≤ κ ≤ max_kappa`.
    pub fn random_letter<R: Rng>(&self, max_kappa: usize, rng: &mut R) -> Letter {
        if rng.gen_bool(0.5) {
            Letter::Sigma(rng.gen_range(0..self.sigma.len() as u32))
        } else {
            let n = rng.gen_range(1..=max_kappa.max(1));
            Letter::Compact(random_portrait(self.params(), self.aaut.group(), n, rng))
        }
    }

    pub fn random_word<R: Rng>(&self, n: usize, rng: &mut R) -> Word {
        (0..n).map(|_| self.random_letter(3, rng)).collect()
    }

    /// A null-homotopic word of length close to `n`.
    pub fn random_loop<R: Rng>(&self, n: usize, kind: LoopKind, rng: &mut R) -> Result<Word> {
        match kind {
            LoopKind::Regrouped => {
                let x = self.random_word(n / 2, rng);
                let norm = self.normalize_left(&x)?;
                let mut y = Self::compact_word(&norm.u);
                y.extend(norm.s.iter().map(|&s| Letter::Sigma(s)));
                let mut w = x;
                w.extend(self.inverse_word(&y));
                Ok(w)
            }
            LoopKind::Conjugates => {
                let mut w = Vec::new();
                while w.len() < n {
                    let s = rng.gen_range(0..self.sigma.len() as u32);
                    let u = random_portrait(self.params(), self.aaut.group(), rng.gen_range(1..=3), rng);
                    let (u2, s2) = self.aaut.exchange(self.sigma, s, &u)?;
                    // σ u σ2⁻¹ u2⁻¹
                    let mut rel = vec![Letter::Sigma(s), Letter::Compact(u)];
                    rel.extend(s2.map(|t| Letter::Sigma(self.sigma.inverse_id(t))));
                    rel.push(Letter::Compact(u2.inverse()));
                    let budget = n.saturating_sub(w.len() + rel.len()) / 2;
                    let g = self.random_word(rng.gen_range(0..=budget.min(4)), rng);
                    w.extend(g.iter().cloned());
                    w.extend(rel);
                    w.extend(self.inverse_word(&g));
                }
                Ok(w)
            }
            LoopKind::Commutator => {
                if self.params().k < 2 {
                    return self.random_loop(n, LoopKind::Regrouped, rng);
                }
                let side = |i: u8, rng: &mut R| -> Word {
                    let pool: Vec<u32> = (0..self.sigma.len() as u32)
                        .filter(|&s| {
                            self.sigma.get(s).diagram().pieces().iter().all(|p| {
                                let inside =
                                    p.src.component() == Some(i as usize) && p.dst.component() == Some(i as usize);
                                inside || (p.src == p.dst && p.src.level() == 1)
                            })
                        })
                        .collect();
                    (0..n / 4)
                        .map(|_| {
                            if rng.gen_bool(0.5) && !pool.is_empty() {
                                Letter::Sigma(pool[rng.gen_range(0..pool.len())])
                            } else {
                                let a = random_local(self.params().d, self.aaut.group(), rng.gen_range(1..=3), rng);
                                Letter::Compact(Portrait::component_portrait(self.params(), i as usize, a))
                            }
                        })
                        .collect()
                };
                let a = side(0, rng);
                let b = side(1, rng);
                let mut w = a.clone();
                w.extend(b.iter().cloned());
                w.extend(self.inverse_word(&a));
                w.extend(self.inverse_word(&b));
                Ok(w)
            }
        }
    }
}

fn rotate(r: &[Letter], k: usize) -> Word {
    r[k..].iter().chain(&r[..k]).cloned().collect()
}

/// Carets of the support of `u` at or below `x`.
fn carets_below(u: &Portrait, x: &Vertex) -> usize {
    let (tree, _) = u.support_tree();
    tree.carets().iter().filter(|c| x.is_prefix_of(c)).count()
}

/// A word under rewriting together with its trace.
struct Rewriter<'p, 'a> {
    p: &'p Presentation<'a>,
    word: Word,
    trace: RewriteTrace,
    nodes: usize,
}

impl<'p, 'a> Rewriter<'p, 'a> {
    fn new(p: &'p Presentation<'a>, word: Word) -> Self {
        Rewriter { p, word, trace: RewriteTrace::default(), nodes: 0 }
    }

    /// Applies a step already known to be an instance; returns the change in length.
    fn step(&mut self, position: usize, family: Family, len: usize, after: Word) -> isize {
        let before: Word = self.word.splice(position..position + len, after.iter().cloned()).collect();
        let delta = after.len() as isize - len as isize;
        let s = Step { position, family, before, after };
        debug_assert!(self.p.check_instance(&s), "{family:?} step is not an instance");
        self.trace.steps.push(s);
        delta
    }

    fn compact(u: Portrait) -> Letter {
        Letter::Compact(u)
    }

    /// Splits the compact letter at `pos` into `[a, b]`, `a·b = u`.
    fn split(&mut self, pos: usize, a: Portrait, b: Portrait) {
        self.step(pos, Family::RD, 1, vec![Self::compact(a), Self::compact(b)]);
    }

    /// Converts the compact letter `u` at `pos`; returns the length of the resulting word.
    fn compact_at(&mut self, pos: usize, u: Portrait) -> Result<usize> {
        let params = self.p.params();
        let comps = u.nontrivial_components();
        let parts: Vec<Portrait> =
            comps.iter().map(|&i| Portrait::component_portrait(params, i, u.component(i).clone())).collect();
        let mut rest = u;
        let mut at = pos;
        for (idx, part) in parts.iter().enumerate() {
            if idx + 1 < parts.len() {
                let tail = part.inverse().mul(&rest)?;
                self.split(at, part.clone(), tail.clone());
                rest = tail;
            }
            let i = comps[idx];
            at += self.rewrite_at(at, &Vertex::top(i as u8), part.clone())?;
        }
        Ok(at - pos)
    }

    /// Rewrites `u`, supported below `x`, sitting at `pos`. Returns the length of the word
    /// produced. The word has at most `C·n` letters and costs at most `C·n` steps, with `n`
    /// the number of support carets at or below `x`.
    fn rewrite_at(&mut self, pos: usize, x: &Vertex, u: Portrait) -> Result<usize> {
        let params = self.p.params();
        let p = self.p;
        let n = carets_below(&u, x);
        self.nodes += 1;
        let top = u.top_label(x).filter(|pi| !pi.is_identity());
        let (rest, ubar) = match top {
            Some(pi) => {
                let ubar = Portrait::single(params, x, pi)?;
                let rest = u.mul(&ubar.inverse())?;
                (rest, Some((ubar, pi)))
            }
            None => (u, None),
        };
        let mut len = 0;
        if let Some((ubar, pi)) = ubar {
            if rest.is_identity() {
                len += self.trade_label(pos, x, pi)?;
                return Ok(len);
            }
            self.split(pos, rest.clone(), ubar);
            // convert the label first so positions of the remainder are unaffected
            self.trade_label(pos + 1, x, pi)?;
        }
        // split the remainder by the cylinders below x
        let parts: Vec<(usize, Portrait)> = (0..params.d)
            .filter_map(|ell| {
                let part = rest.restrict(&x.child(ell as u8)).expect("restriction below a vertex");
                (!part.is_identity()).then_some((ell, part))
            })
            .collect();
        let mut remainder = rest;
        let mut at = pos;
        let mut raised_total = 0;
        let raising = anchors(params).contains(x);
        for (idx, (ell, part)) in parts.iter().enumerate() {
            if idx + 1 < parts.len() {
                let tail = part.inverse().mul(&remainder)?;
                self.split(at, part.clone(), tail.clone());
                remainder = tail;
            }
            let produced = if raising {
                let d = p
                    .sigma
                    .raising_id(x, *ell)
                    .ok_or_else(|| Error::Generation(format!("raising generator at {x}, {ell} missing")))?;
                let raised = p.aaut.level_raise_at(x, *ell, part)?;
                raised_total += carets_below(&raised, x);
                let dinv = p.sigma.inverse_id(d);
                self.step(
                    at,
                    Family::R1,
                    1,
                    vec![Letter::Sigma(dinv), Letter::Compact(raised.clone()), Letter::Sigma(d)],
                );
                2 + self.rewrite_at(at + 1, x, raised)?
            } else {
                let child = x.child(*ell as u8);
                raised_total += carets_below(part, &child);
                self.rewrite_at(at, &child, part.clone())?
            };
            at += produced;
        }
        if raised_total + 1 > n {
            return Err(Error::Precondition(format!("caret sum {raised_total} below {x} is not below {n}")));
        }
        len += at - pos;
        if let Some(pi) = top {
            len += self.p.tables.words[&(x.clone(), pi)].len();
        }
        Ok(len)
    }

    /// `R_2`: the single label `pi` at `x`, sitting at `pos`, becomes its table word.
    fn trade_label(&mut self, pos: usize, x: &Vertex, pi: Perm) -> Result<usize> {
        let w = self
            .p
            .tables
            .words
            .get(&(x.clone(), pi))
            .ok_or_else(|| Error::Precondition(format!("no R_2 word for a label at {x}")))?
            .clone();
        let n = w.len();
        self.step(pos, Family::R2, 1, w.into_iter().map(Letter::Sigma).collect());
        Ok(n)
    }

    /// Normalizes `word[start..start + len]` into `[u] s`; returns whether `u` is present and
    /// the new length.
    fn normalize(&mut self, start: usize, len: usize) -> Result<(bool, usize)> {
        match len {
            0 => return Ok((false, 0)),
            1 => return Ok((!self.word[start].is_sigma(), 1)),
            _ => {}
        }
        let half = len / 2;
        let (hl, ll) = self.normalize(start, half)?;
        let (hr, lr) = self.normalize(start + ll, len - half)?;
        let mut total = (ll + lr) as isize;
        if !hr {
            return Ok((hl, ll + lr));
        }
        let mut p = start + ll;
        let stop = start + hl as usize;
        let identity = |w: &Word, p: usize| matches!(&w[p], Letter::Compact(u) if u.is_identity());
        if !identity(&self.word, p) {
            while p > stop {
                let (Letter::Sigma(s1), Letter::Compact(u1)) = (&self.word[p - 1], &self.word[p]) else {
                    unreachable!("left part is in normal form");
                };
                let (u2, s2) = self.p.aaut.exchange(self.p.sigma, *s1, u1)?;
                let mut after = vec![Letter::Compact(u2)];
                after.extend(s2.map(Letter::Sigma));
                total += self.step(p - 1, Family::R3, 2, after);
                p -= 1;
            }
        }
        // merge with the left compact letter, eliding a trivial result
        let has_u = if identity(&self.word, p) {
            total += self.step(p, Family::RD, 1, Vec::new());
            hl
        } else if hl {
            let (Letter::Compact(a), Letter::Compact(b)) = (&self.word[p - 1], &self.word[p]) else {
                unreachable!("two compact letters meet");
            };
            let m = a.mul(b)?;
            let trivial = m.is_identity();
            total += self.step(p - 1, Family::RD, 2, Rewriter::compact_word(m));
            !trivial
        } else {
            true
        };
        Ok((has_u, total as usize))
    }

    fn compact_word(u: Portrait) -> Word {
        if u.is_identity() {
            Vec::new()
        } else {
            vec![Letter::Compact(u)]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perm::PermGroup;
    use crate::thompson::{CanonicalTreePair, GenerationCheck};
    use std::sync::OnceLock as Lock;

    fn sigma22() -> &'static GeneratingSet {
        static S: Lock<GeneratingSet> = Lock::new();
        S.get_or_init(|| GeneratingSet::build(TreeParams::new(2, 2).unwrap(), 2, GenerationCheck::Skip).unwrap())
    }

    fn pres() -> Presentation<'static> {
        let params = TreeParams::new(2, 2).unwrap();
        let aaut = Aaut::new(params, PermGroup::symmetric(2).unwrap()).unwrap();
        Presentation::new(aaut, sigma22(), OracleConfig::default()).unwrap()
    }

    fn single(v: &str) -> Portrait {
        let swap = Perm::from_images(&[1, 0]).unwrap();
        Portrait::single(TreeParams::new(2, 2).unwrap(), &v.parse().unwrap(), swap).unwrap()
    }

    #[test]
    fn tables_have_single_letters() {
        let p = pres();
        assert_eq!(p.tables().r, vec![1, 1]);
        assert_eq!(p.tables().c, vec![6, 6]);
    }

    #[test]
    fn local_rewriting_examples() {
        let p = pres();
        let (w, t, _) = p.rewrite_local(0, &Portrait::identity(p.params())).unwrap();
        assert!(w.is_empty() && t.is_empty());
        let (w, t, _) = p.rewrite_local(0, &single("a1")).unwrap();
        assert_eq!((w.len(), t.len()), (1, 1));
        assert_eq!(t.steps[0].family, Family::R2);
        let u = single("a1.b1");
        let (w, t, r) = p.rewrite_local(0, &u).unwrap();
        assert!(w.len() <= 12 && t.len() <= 12, "{r:?}");
        let word: Word = w.iter().map(|&s| Letter::Sigma(s)).collect();
        assert_eq!(p.evaluate(&word).unwrap(), p.aaut().from_portrait(&u).unwrap());
        assert_eq!(p.verify_trace(&[Letter::Compact(u)], &t, &word), Ok(()));
        assert!(p.rewrite_local(1, &single("a1")).is_err());
    }

    #[test]
    fn exchange_move_and_free_move() {
        let p = pres();
        let delta = p.sigma().lookup(&CanonicalTreePair::delta(p.params(), 0, 0).unwrap()).unwrap();
        let u = single("a2");
        let w = vec![Letter::Sigma(delta), Letter::Compact(u.clone())];
        let (u2, s2) = p.aaut().exchange(p.sigma(), delta, &u).unwrap();
        let mut after = vec![Letter::Compact(u2)];
        after.extend(s2.map(Letter::Sigma));
        let (out, step) = p.apply_move(&w, Family::R3, 0, after).unwrap();
        assert_eq!(p.evaluate(&out).unwrap(), p.evaluate(&w).unwrap());
        assert_eq!(step.family, Family::R3);
        let n = p.normalize_left(&w).unwrap();
        assert_eq!(n.trace.len(), 1);
        let uu = vec![Letter::Compact(u.clone()), Letter::Compact(u.inverse())];
        let (out, _) = p.apply_move(&uu, Family::RD, 0, Vec::new()).unwrap();
        assert!(out.is_empty());
        assert!(p.apply_move(&w, Family::RD, 0, Vec::new()).is_err());
    }

    #[test]
    fn corrupted_trace_is_rejected() {
        let p = pres();
        let u = single("a1.b2.b1");
        let (w, mut t, _) = p.rewrite_local(0, &u).unwrap();
        let word: Word = w.iter().map(|&s| Letter::Sigma(s)).collect();
        let src = vec![Letter::Compact(u)];
        assert_eq!(p.verify_trace(&src, &t, &word), Ok(()));
        t.steps[1].position += 1;
        assert_eq!(p.verify_trace(&src, &t, &word), Err(1));
    }

    #[test]
    fn normal_bound_values() {
        assert_eq!(normalize_bound(1), 1);
        assert_eq!(normalize_bound(2), 3);
        assert_eq!(normalize_bound(256), 8 * 128 + 256);
        assert_eq!(normalize_bound(5), 3 * 3 + 5);
    }
}
