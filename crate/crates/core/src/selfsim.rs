//! Self-similar groups given by a wreath recursion on the rooted `d`-ary tree.
//!
//! A word `l_1 l_2 .. l_n` acts as `l_1 ∘ .. ∘ l_n`, so the rightmost letter acts first and
//! sections obey `(gh)_x = g_{h(x)} h_x`. Vertices are 0-based letter sequences.
//!
//! Finite-depth images are stored as [`Table`]s: the permutation induced on the `d^n` leaves
//! of the depth-`n` tree, with leaf `x_1 .. x_n` at index `Σ x_i d^{n-i}`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::localgroup::LocalAut;
use crate::perm::Perm;
use crate::tree::{Path, MAX_ARITY};

/// A generator letter, possibly inverted.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Gen {
    pub index: u16,
    pub inverse: bool,
}

impl Gen {
    pub fn inv(self) -> Gen {
        Gen { index: self.index, inverse: !self.inverse }
    }
}

/// A freely reduced word over the generators and their inverses. The empty word is the identity.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct GroupWord(Vec<Gen>);

impl GroupWord {
    pub fn identity() -> Self {
        GroupWord(Vec::new())
    }

    pub fn from_letters(letters: impl IntoIterator<Item = Gen>) -> Self {
        let mut w = GroupWord::identity();
        for l in letters {
            w.push(l);
        }
        w
    }

    fn push(&mut self, l: Gen) {
        if self.0.last() == Some(&l.inv()) {
            self.0.pop();
        } else {
            self.0.push(l);
        }
    }

    pub fn letters(&self) -> &[Gen] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `self · other`, freely reduced.
    pub fn mul(&self, other: &GroupWord) -> GroupWord {
        let mut w = self.clone();
        for &l in &other.0 {
            w.push(l);
        }
        w
    }

    pub fn inverse(&self) -> GroupWord {
        GroupWord(self.0.iter().rev().map(|l| l.inv()).collect())
    }
}

/// One entry of a wreath recursion: the root permutation and the section words.
#[derive(Clone, Debug, PartialEq, Eq)]
struct GenDef {
    name: String,
    perm: Perm,
    sections: Vec<GroupWord>,
}

/// A finite wreath recursion `ψ: G → G ≀ Sym(d)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WreathSpec {
    d: usize,
    gens: Vec<GenDef>,
}

/// Names accepted by [`WreathSpec::builtin`].
pub const BUILTIN_SPECS: &[&str] =
    &["trivial", "grigorchuk", "gupta-sidki", "fabrykowski-gupta", "odometer", "lamplighter"];

const GRIGORCHUK: &str = "\
degree 2
gen a: perm=(1 2); sections=[e,e]
gen b: perm=(); sections=[a,c]
gen c: perm=(); sections=[a,d]
gen d: perm=(); sections=[e,b]
";

const GUPTA_SIDKI: &str = "\
degree 3
gen a: perm=(1 2 3); sections=[e,e,e]
gen t: perm=(); sections=[a,a^-1,t]
";

const FABRYKOWSKI_GUPTA: &str = "\
degree 3
gen a: perm=(1 2 3); sections=[e,e,e]
gen b: perm=(); sections=[a,e,b]
";

const ODOMETER: &str = "\
degree 2
gen a: perm=(1 2); sections=[e,a]
";

const LAMPLIGHTER: &str = "\
degree 2
gen a: perm=(1 2); sections=[a,b]
gen b: perm=(); sections=[a,b]
";

impl WreathSpec {
    /// Parse the text format:
    ///
    /// ```text
    /// degree 2
    /// gen a: perm=(1 2); sections=[e,e]
    /// gen b: perm=(); sections=[a,c]
    /// ```
    ///
    /// Points are 1-based; `e` is the identity; a section is a word such as `a^-1 t`.
    pub fn parse(text: &str) -> Result<WreathSpec> {
        let mut d = None;
        let mut raw: Vec<(String, String, Vec<String>)> = Vec::new();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("degree") {
                let rest = rest.trim().trim_start_matches('=').trim();
                d = Some(rest.parse::<usize>().map_err(|_| Error::Parse(format!("degree {rest:?}")))?);
            } else if let Some(rest) = line.strip_prefix("gen ") {
                let (name, body) =
                    rest.split_once(':').ok_or_else(|| Error::Parse(format!("missing ':' in {line:?}")))?;
                let mut perm = None;
                let mut secs = None;
                for field in body.split(';') {
                    let field = field.trim();
                    if let Some(p) = field.strip_prefix("perm=") {
                        perm = Some(p.trim().to_string());
                    } else if let Some(s) = field.strip_prefix("sections=") {
                        let s = s.trim();
                        let inner = s
                            .strip_prefix('[')
                            .and_then(|s| s.strip_suffix(']'))
                            .ok_or_else(|| Error::Parse(format!("sections must be bracketed: {s:?}")))?;
                        secs = Some(inner.split(',').map(|x| x.trim().to_string()).collect());
                    } else if !field.is_empty() {
                        return Err(Error::Parse(format!("unknown field {field:?}")));
                    }
                }
                let perm = perm.ok_or_else(|| Error::Parse(format!("missing perm in {line:?}")))?;
                let secs = secs.ok_or_else(|| Error::Parse(format!("missing sections in {line:?}")))?;
                raw.push((name.trim().to_string(), perm, secs));
            } else {
                return Err(Error::Parse(format!("unrecognized line {line:?}")));
            }
        }
        let d = d.ok_or_else(|| Error::Parse("missing degree line".into()))?;
        if !(2..=MAX_ARITY).contains(&d) {
            return Err(Error::InvalidParams(format!("degree {d} outside 2..={MAX_ARITY}")));
        }
        let names: Vec<String> = raw.iter().map(|r| r.0.clone()).collect();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n == "e" || n.contains(|c: char| c.is_whitespace() || c == '^' || c == '*') {
                return Err(Error::Parse(format!("invalid generator name {n:?}")));
            }
            if names[..i].contains(n) {
                return Err(Error::Parse(format!("duplicate generator {n:?}")));
            }
        }
        let mut spec = WreathSpec { d, gens: Vec::new() };
        for (name, _, _) in &raw {
            spec.gens.push(GenDef { name: name.clone(), perm: Perm::identity(d), sections: Vec::new() });
        }
        for (i, (_, perm, secs)) in raw.iter().enumerate() {
            if secs.len() != d {
                return Err(Error::Parse(format!("generator {} needs {d} sections", names[i])));
            }
            spec.gens[i].perm = Perm::from_cycles(d, perm)?;
            spec.gens[i].sections = secs.iter().map(|s| spec.word(s)).collect::<Result<_>>()?;
        }
        Ok(spec)
    }

    pub fn builtin(name: &str) -> Result<WreathSpec> {
        let text = match name {
            "trivial" => "degree 2\n",
            "grigorchuk" => GRIGORCHUK,
            "gupta-sidki" => GUPTA_SIDKI,
            "fabrykowski-gupta" => FABRYKOWSKI_GUPTA,
            "odometer" => ODOMETER,
            "lamplighter" => LAMPLIGHTER,
            _ => return Err(Error::UnknownGenerator(format!("no built-in spec {name:?}"))),
        };
        WreathSpec::parse(text)
    }

    pub fn degree(&self) -> usize {
        self.d
    }

    pub fn generator_count(&self) -> usize {
        self.gens.len()
    }

    pub fn generator_name(&self, i: usize) -> &str {
        &self.gens[i].name
    }

    pub fn generator(&self, i: usize) -> GroupWord {
        GroupWord(vec![Gen { index: i as u16, inverse: false }])
    }

    /// Generators followed by their inverses, skipping inverses of involutory letters is not
    /// attempted: words stay freely reduced only.
    pub fn letters(&self) -> Vec<Gen> {
        let n = self.gens.len() as u16;
        (0..n)
            .map(|index| Gen { index, inverse: false })
            .chain((0..n).map(|index| Gen { index, inverse: true }))
            .collect()
    }

    /// Parse a word: tokens separated by spaces or `*`, each `name` or `name^-1`; `e` is the
    /// identity; a token made of single-letter names may be run together, as in `abc`.
    pub fn word(&self, text: &str) -> Result<GroupWord> {
        let mut w = GroupWord::identity();
        for tok in text.split(|c: char| c.is_whitespace() || c == '*').filter(|t| !t.is_empty()) {
            let (base, inverse) = match tok.strip_suffix("^-1") {
                Some(b) => (b, true),
                None => (tok, false),
            };
            if base == "e" || base == "1" {
                continue;
            }
            if let Some(i) = self.index_of(base) {
                w.push(Gen { index: i, inverse });
                continue;
            }
            let chars: Vec<String> = base.chars().map(String::from).collect();
            let idx: Option<Vec<u16>> = chars.iter().map(|c| self.index_of(c)).collect();
            let idx = idx.ok_or_else(|| Error::UnknownGenerator(base.to_string()))?;
            let last = idx.len() - 1;
            for (j, i) in idx.into_iter().enumerate() {
                w.push(Gen { index: i, inverse: inverse && j == last });
            }
        }
        Ok(w)
    }

    fn index_of(&self, name: &str) -> Option<u16> {
        self.gens.iter().position(|g| g.name == name).map(|i| i as u16)
    }

    pub fn format_word(&self, w: &GroupWord) -> String {
        if w.is_empty() {
            return "e".into();
        }
        w.0.iter()
            .map(|l| {
                let n = &self.gens[l.index as usize].name;
                if l.inverse {
                    format!("{n}^-1")
                } else {
                    n.clone()
                }
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn letter_perm(&self, l: Gen) -> Perm {
        let p = self.gens[l.index as usize].perm;
        if l.inverse {
            p.inverse()
        } else {
            p
        }
    }

    /// `(g^-1)_x = (g_{g^-1(x)})^-1`.
    fn letter_section(&self, l: Gen, x: u8) -> GroupWord {
        let g = &self.gens[l.index as usize];
        if l.inverse {
            g.sections[g.perm.inverse().apply(x) as usize].inverse()
        } else {
            g.sections[x as usize].clone()
        }
    }

    fn check_letter(&self, x: u8) -> Result<()> {
        if (x as usize) < self.d {
            Ok(())
        } else {
            Err(Error::InvalidVertex(format!("letter {x} outside alphabet of size {}", self.d)))
        }
    }

    /// Root permutation of `w`.
    pub fn perm(&self, w: &GroupWord) -> Perm {
        w.0.iter().fold(Perm::identity(self.d), |acc, &l| acc.compose(&self.letter_perm(l)))
    }

    /// Section at a single letter.
    fn section1(&self, w: &GroupWord, x: u8) -> GroupWord {
        let mut parts = Vec::with_capacity(w.len());
        let mut y = x;
        for &l in w.0.iter().rev() {
            parts.push(self.letter_section(l, y));
            y = self.letter_perm(l).apply(y);
        }
        let mut out = GroupWord::identity();
        for p in parts.iter().rev() {
            for &l in &p.0 {
                out.push(l);
            }
        }
        out
    }

    /// The section `g_v`, defined by `g(vw) = g(v) g_v(w)`.
    pub fn section(&self, w: &GroupWord, v: &[u8]) -> Result<GroupWord> {
        let mut cur = w.clone();
        for &x in v {
            self.check_letter(x)?;
            cur = self.section1(&cur, x);
        }
        Ok(cur)
    }

    /// The image `g(v)`.
    pub fn act(&self, w: &GroupWord, v: &[u8]) -> Result<Path> {
        let mut out = Path::with_capacity(v.len());
        let mut cur = w.clone();
        for &x in v {
            self.check_letter(x)?;
            out.push(self.perm(&cur).apply(x));
            cur = self.section1(&cur, x);
        }
        Ok(out)
    }

    /// The labels of `w` at vertices of level below `depth`.
    pub fn truncation(&self, w: &GroupWord, depth: usize) -> LocalAut {
        if depth == 0 {
            return LocalAut::identity();
        }
        let children: Vec<LocalAut> =
            (0..self.d as u8).map(|x| self.truncation(&self.section1(w, x), depth - 1)).collect();
        LocalAut::graft(self.perm(w), &children)
    }

    pub fn random_word<R: Rng>(&self, len: usize, rng: &mut R) -> GroupWord {
        let letters = self.letters();
        let mut w = GroupWord::identity();
        if letters.is_empty() {
            return w;
        }
        while w.len() < len {
            w.push(letters[rng.gen_range(0..letters.len())]);
        }
        w
    }

    fn leaves(&self, n: usize) -> Result<usize> {
        let leaves = (self.d as u64).checked_pow(n as u32).filter(|&l| l <= 1 << 16);
        leaves.map(|l| l as usize).ok_or_else(|| Error::Budget(format!("depth {n} tree too large")))
    }

    /// Depth-`n` tables of every letter, in the order of [`WreathSpec::letters`].
    pub fn letter_tables(&self, n: usize) -> Result<Vec<Table>> {
        self.leaves(n)?;
        let letters = self.letters();
        let mut cur: Vec<Table> = letters.iter().map(|_| Table::identity(1)).collect();
        for depth in 1..=n {
            let below = self.d.pow(depth as u32 - 1);
            let word_table = |w: &GroupWord, prev: &[Table]| {
                w.0.iter().fold(Table::identity(below), |acc, l| {
                    let j = letters.iter().position(|m| m == l).expect("letter listed");
                    acc.compose(&prev[j])
                })
            };
            let next: Vec<Table> = letters
                .iter()
                .map(|&l| {
                    let pi = self.letter_perm(l);
                    let mut img = vec![0u16; below * self.d];
                    for x in 0..self.d as u8 {
                        let sec = word_table(&self.letter_section(l, x), &cur);
                        let base = pi.apply(x) as usize * below;
                        for r in 0..below {
                            img[x as usize * below + r] = (base + sec.0[r] as usize) as u16;
                        }
                    }
                    Table(img)
                })
                .collect();
            cur = next;
        }
        Ok(cur)
    }

    /// Depth-`n` table of a word.
    pub fn table(&self, w: &GroupWord, n: usize) -> Result<Table> {
        let letters = self.letters();
        let tabs = self.letter_tables(n)?;
        Ok(w.0.iter().fold(Table::identity(self.leaves(n)?), |acc, l| {
            acc.compose(&tabs[letters.iter().position(|m| m == l).expect("letter listed")])
        }))
    }

    /// `[G : G_n]`: the number of distinct actions of `G` on the depth-`n` tree.
    pub fn level_image_size(&self, n: usize, budget: &Budget) -> Result<usize> {
        Ok(self.pattern_set(n, budget)?.len())
    }

    /// All depth-`m` tables of the group.
    pub fn pattern_set(&self, m: usize, budget: &Budget) -> Result<PatternSet> {
        let gens = self.letter_tables(m)?;
        let patterns = closure(&gens, self.leaves(m)?, budget)?;
        Ok(PatternSet { d: self.d, m, patterns })
    }

    /// Size of the depth-`m` image of the level-`n` stabilizer `G_n` (`n ≤ m`), enumerated by
    /// closing its Schreier generators rather than dividing image sizes.
    pub fn stabilizer_image_size(&self, n: usize, m: usize, budget: &Budget) -> Result<usize> {
        if n > m {
            return Err(Error::Precondition(format!("stabilizer level {n} exceeds depth {m}")));
        }
        let gens = self.letter_tables(m)?;
        let leaves = self.leaves(m)?;
        let shift = self.d.pow((m - n) as u32);
        let project =
            |t: &Table| -> Vec<u16> { (0..leaves / shift).map(|i| (t.0[i * shift] as usize / shift) as u16).collect() };
        let id = Table::identity(leaves);
        let mut reps: HashMap<Vec<u16>, Table> = HashMap::new();
        reps.insert(project(&id), id.clone());
        let mut queue = VecDeque::from([id]);
        let mut schreier: HashSet<Table> = HashSet::new();
        while let Some(r) = queue.pop_front() {
            for g in &gens {
                let y = g.compose(&r);
                let key = project(&y);
                match reps.get(&key) {
                    Some(rep) => {
                        let s = rep.inverse().compose(&y);
                        if !s.is_identity() {
                            schreier.insert(s);
                        }
                    }
                    None => {
                        if reps.len() >= budget.max_elements {
                            return Err(Error::Budget(format!("more than {} cosets", budget.max_elements)));
                        }
                        reps.insert(key, y.clone());
                        queue.push_back(y);
                    }
                }
            }
        }
        let schreier: Vec<Table> = schreier.into_iter().collect();
        Ok(closure(&schreier, leaves, budget)?.len())
    }

    /// Finite-depth check of `H_{n+1} ≅ H_n × .. × H_n`: the depth-`(n+2)` image of `H_{n+1}`
    /// must have the size of the `d`-fold product of depth-`(n+1)` images of `H_n`.
    pub fn stab_image_identity(&self, n: usize, budget: &Budget) -> Result<StabReport> {
        let lhs = self.stabilizer_image_size(n + 1, n + 2, budget)? as u128;
        let factor = self.stabilizer_image_size(n, n + 1, budget)? as u128;
        let rhs = factor.pow(self.d as u32);
        Ok(StabReport { n, d: self.d, lhs, factor, rhs, holds: lhs == rhs })
    }

    /// Compare two computations of `[H ≀ Sym(d) : H]` at branching level `s`.
    ///
    /// The pattern count takes `d!·|P_s|^d` depth-`(s+1)` patterns of the wreath extension over
    /// `N_{s+1}` patterns of `H`. The branch count corrects `d!·N_s^d / N_{s+1}` by the finite
    /// defect `|Img_{s+1}(H_s)|^d / |Img_{s+2}(H_{s+1})|`, which is `1` exactly when the
    /// stabilizer splitting holds one level down. Both must be exact and agree.
    pub fn index_identity_check(&self, s: usize, budget: &Budget) -> Result<IndexReport> {
        let d = self.d as u32;
        let n_s = self.level_image_size(s, budget)? as u128;
        let n_s1 = self.level_image_size(s + 1, budget)? as u128;
        let fact: u128 = (1..=self.d as u128).product();
        let wreath_patterns = fact * (self.pattern_set(s, budget)?.len() as u128).pow(d);
        let stab = self.stab_image_identity(s, budget)?;
        let formula = Ratio::new(fact * n_s.pow(d), n_s1);
        let pattern_side = Ratio::new(wreath_patterns, n_s1);
        let branch_side = Ratio::new(fact * n_s.pow(d) * stab.rhs, n_s1 * stab.lhs);
        let holds = formula.is_integer()
            && pattern_side.is_integer()
            && branch_side.is_integer()
            && pattern_side == branch_side
            && formula == pattern_side;
        Ok(IndexReport {
            s,
            d: self.d,
            level_s: n_s,
            level_s1: n_s1,
            wreath_patterns,
            formula,
            pattern_side,
            branch_side,
            holds,
        })
    }

    /// The nucleus, by fixed-point iteration over exact finite-state equality.
    pub fn nucleus(&self, budget: &Budget) -> Result<Nucleus> {
        let mut seeds: Vec<GroupWord> = vec![GroupWord::identity()];
        seeds.extend(self.letters().into_iter().map(|l| GroupWord(vec![l])));
        let (sys, mut members) = self.recurrent_closure(&seeds, budget)?;
        let mut current = sys.representatives(&members);
        for round in 1..=budget.max_rounds {
            let mut seeds = current.clone();
            for x in &current {
                for y in &current {
                    seeds.push(x.mul(y));
                }
            }
            let (sys, next) = self.recurrent_closure(&seeds, budget)?;
            let grew = next.len() != members.len();
            members = next;
            current = sys.representatives(&members);
            if current.len() > budget.max_nucleus {
                return Err(Error::Budget(format!(
                    "not verified contracting: nucleus candidate exceeds {} elements",
                    budget.max_nucleus
                )));
            }
            if !grew {
                current.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
                return Ok(Nucleus { elements: current, rounds: round });
            }
        }
        Err(Error::Budget(format!("not verified contracting: no fixed point after {} rounds", budget.max_rounds)))
    }

    /// Classes reachable from recurrent classes of the section closure of `seeds`.
    fn recurrent_closure(&self, seeds: &[GroupWord], budget: &Budget) -> Result<(StateSystem, Vec<usize>)> {
        let sys = StateSystem::build(self, seeds, budget)?;
        let recurrent: Vec<usize> = (0..sys.class_count).filter(|&c| sys.reaches(c, c)).collect();
        let mut seen = vec![false; sys.class_count];
        let mut stack = recurrent;
        while let Some(c) = stack.pop() {
            if std::mem::replace(&mut seen[c], true) {
                continue;
            }
            stack.extend(sys.class_edges[c].iter().copied());
        }
        let members = (0..sys.class_count).filter(|&c| seen[c]).collect();
        Ok((sys, members))
    }

    /// Check that `set` is closed under sections and that every pairwise product has all its
    /// sections at depth `|classes|` inside `set`.
    pub fn verify_nucleus(&self, set: &[GroupWord], budget: &Budget) -> Result<bool> {
        let mut seeds = set.to_vec();
        for x in set {
            for y in set {
                seeds.push(x.mul(y));
            }
        }
        let sys = StateSystem::build(self, &seeds, budget)?;
        let inside: HashSet<usize> = set.iter().map(|w| sys.class_of(w)).collect();
        if inside.len() != set.len() {
            return Ok(false);
        }
        if inside.iter().any(|&c| sys.class_edges[c].iter().any(|e| !inside.contains(e))) {
            return Ok(false);
        }
        for w in &seeds[set.len()..] {
            let mut frontier: HashSet<usize> = HashSet::from([sys.class_of(w)]);
            for _ in 0..sys.class_count {
                frontier = frontier.iter().flat_map(|&c| sys.class_edges[c].iter().copied()).collect();
            }
            if !frontier.is_subset(&inside) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Exact equality of two words, decided on their (finite) section closure.
    pub fn words_equal(&self, a: &GroupWord, b: &GroupWord, budget: &Budget) -> Result<bool> {
        let sys = StateSystem::build(self, &[a.clone(), b.clone()], budget)?;
        Ok(sys.class_of(a) == sys.class_of(b))
    }
}

/// Section-closed set of words with bisimulation classes.
struct StateSystem {
    index: HashMap<GroupWord, usize>,
    words: Vec<GroupWord>,
    class: Vec<usize>,
    class_count: usize,
    class_edges: Vec<Vec<usize>>,
}

impl StateSystem {
    fn build(spec: &WreathSpec, seeds: &[GroupWord], budget: &Budget) -> Result<StateSystem> {
        let mut index: HashMap<GroupWord, usize> = HashMap::new();
        let mut words: Vec<GroupWord> = Vec::new();
        let mut perms: Vec<Perm> = Vec::new();
        let mut secs: Vec<Vec<usize>> = Vec::new();
        let mut queue = VecDeque::new();
        let mut intern = |w: GroupWord, words: &mut Vec<GroupWord>, queue: &mut VecDeque<usize>| -> Result<usize> {
            if let Some(&i) = index.get(&w) {
                return Ok(i);
            }
            if words.len() >= budget.max_elements {
                return Err(Error::Budget(format!(
                    "not verified contracting: section closure exceeds {} words",
                    budget.max_elements
                )));
            }
            let i = words.len();
            index.insert(w.clone(), i);
            words.push(w);
            queue.push_back(i);
            Ok(i)
        };
        for w in seeds {
            intern(w.clone(), &mut words, &mut queue)?;
        }
        while let Some(i) = queue.pop_front() {
            let w = words[i].clone();
            if perms.len() <= i {
                perms.resize(i + 1, Perm::identity(spec.d));
                secs.resize(i + 1, Vec::new());
            }
            perms[i] = spec.perm(&w);
            secs[i] = (0..spec.d as u8)
                .map(|x| intern(spec.section1(&w, x), &mut words, &mut queue))
                .collect::<Result<_>>()?;
        }
        let index: HashMap<GroupWord, usize> = words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        let mut class: Vec<usize> = {
            let mut ids: HashMap<Perm, usize> = HashMap::new();
            perms
                .iter()
                .map(|p| {
                    let n = ids.len();
                    *ids.entry(*p).or_insert(n)
                })
                .collect()
        };
        let mut count = class.iter().copied().max().map_or(0, |c| c + 1);
        loop {
            let mut ids: HashMap<(usize, Vec<usize>), usize> = HashMap::new();
            let next: Vec<usize> = (0..words.len())
                .map(|i| {
                    let key = (class[i], secs[i].iter().map(|&j| class[j]).collect());
                    let n = ids.len();
                    *ids.entry(key).or_insert(n)
                })
                .collect();
            let next_count = ids.len();
            class = next;
            if next_count == count {
                break;
            }
            count = next_count;
        }
        let mut class_edges: Vec<Vec<usize>> = vec![Vec::new(); count];
        for i in 0..words.len() {
            for &j in &secs[i] {
                class_edges[class[i]].push(class[j]);
            }
        }
        for e in &mut class_edges {
            e.sort_unstable();
            e.dedup();
        }
        Ok(StateSystem { index, words, class, class_count: count, class_edges })
    }

    fn class_of(&self, w: &GroupWord) -> usize {
        self.class[self.index[w]]
    }

    /// Is there a path of length at least one from `a` to `b`?
    fn reaches(&self, a: usize, b: usize) -> bool {
        let mut seen = vec![false; self.class_count];
        let mut stack: Vec<usize> = self.class_edges[a].clone();
        while let Some(c) = stack.pop() {
            if c == b {
                return true;
            }
            if !std::mem::replace(&mut seen[c], true) {
                stack.extend(self.class_edges[c].iter().copied());
            }
        }
        false
    }

    /// Shortest word (then lexicographically least) in each listed class.
    fn representatives(&self, classes: &[usize]) -> Vec<GroupWord> {
        let mut best: HashMap<usize, &GroupWord> = HashMap::new();
        for (i, w) in self.words.iter().enumerate() {
            let e = best.entry(self.class[i]).or_insert(w);
            if (w.len(), w) < (e.len(), *e) {
                *e = w;
            }
        }
        classes.iter().map(|c| best[c].clone()).collect()
    }
}

/// Limits for closure enumeration and nucleus iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Budget {
    pub max_elements: usize,
    pub max_rounds: usize,
    pub max_nucleus: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { max_elements: 2_000_000, max_rounds: 8, max_nucleus: 500 }
    }
}

/// A permutation of the leaves of a finite tree.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Table(pub Vec<u16>);

impl Table {
    pub fn identity(leaves: usize) -> Table {
        Table((0..leaves as u16).collect())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Table) -> Table {
        Table(other.0.iter().map(|&i| self.0[i as usize]).collect())
    }

    pub fn inverse(&self) -> Table {
        let mut out = vec![0u16; self.0.len()];
        for (i, &x) in self.0.iter().enumerate() {
            out[x as usize] = i as u16;
        }
        Table(out)
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &x)| i == x as usize)
    }

    /// Table of a local automorphism on the depth-`m` tree.
    pub fn of_local(a: &LocalAut, d: usize, m: usize) -> Table {
        let leaves = d.pow(m as u32);
        let mut out = Vec::with_capacity(leaves);
        let mut path = vec![0u8; m];
        for i in 0..leaves {
            let mut r = i;
            for j in (0..m).rev() {
                path[j] = (r % d) as u8;
                r /= d;
            }
            let img = a.apply(&path);
            out.push(img.iter().fold(0usize, |acc, &x| acc * d + x as usize) as u16);
        }
        Table(out)
    }

    /// Section at child `x`, as a table one level shallower.
    pub fn child_section(&self, d: usize, x: usize) -> Table {
        let below = self.0.len() / d;
        Table(self.0[x * below..(x + 1) * below].iter().map(|&y| (y as usize % below) as u16).collect())
    }

    /// Restriction to the tree one level shallower.
    pub fn truncate(&self, d: usize) -> Table {
        Table((0..self.0.len() / d).map(|i| (self.0[i * d] as usize / d) as u16).collect())
    }
}

/// Closure of a set of tables under composition, by breadth-first search from the identity.
pub fn closure(gens: &[Table], leaves: usize, budget: &Budget) -> Result<HashSet<Table>> {
    let id = Table::identity(leaves);
    let mut seen = HashSet::from([id.clone()]);
    let mut queue = VecDeque::from([id]);
    while let Some(t) = queue.pop_front() {
        for g in gens {
            let y = g.compose(&t);
            if !seen.contains(&y) {
                if seen.len() >= budget.max_elements {
                    return Err(Error::Budget(format!("closure exceeds {} elements", budget.max_elements)));
                }
                seen.insert(y.clone());
                queue.push_back(y);
            }
        }
    }
    Ok(seen)
}

/// The depth-`m` image of a group.
#[derive(Clone, Debug)]
pub struct PatternSet {
    d: usize,
    m: usize,
    patterns: HashSet<Table>,
}

impl PatternSet {
    pub fn level(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn contains(&self, t: &Table) -> bool {
        self.patterns.contains(t)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Table> {
        self.patterns.iter()
    }

    /// First vertex `v` with `|v| + m ≤ depth` whose section of `a` has a depth-`m` table
    /// outside the set. Sections closer to the fringe than `m` are not tested.
    pub fn first_violation(&self, a: &LocalAut, depth: usize) -> Result<Option<Path>> {
        if depth < self.m {
            return Err(Error::Precondition(format!("depth {depth} below pattern level {}", self.m)));
        }
        let mut stack = vec![Path::new()];
        while let Some(v) = stack.pop() {
            if !self.contains(&Table::of_local(&a.section(&v), self.d, self.m)) {
                return Ok(Some(v));
            }
            if v.len() + self.m < depth {
                for x in (0..self.d as u8).rev() {
                    let mut c = v.clone();
                    c.push(x);
                    stack.push(c);
                }
            }
        }
        Ok(None)
    }

    /// Whether every testable section of `a` (truncated at `depth`) has its pattern in the set.
    pub fn in_closure(&self, a: &LocalAut, depth: usize) -> Result<bool> {
        Ok(self.first_violation(a, depth)?.is_none())
    }
}

/// An exact nonnegative fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Ratio {
        fn gcd(a: u128, b: u128) -> u128 {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        let g = gcd(num, den).max(1);
        Ratio { num: num / g, den: den / g }
    }

    pub fn is_integer(&self) -> bool {
        self.den == 1
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StabReport {
    pub n: usize,
    pub d: usize,
    /// `|Img_{n+2}(H_{n+1})|`.
    pub lhs: u128,
    /// `|Img_{n+1}(H_n)|`.
    pub factor: u128,
    pub rhs: u128,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IndexReport {
    pub s: usize,
    pub d: usize,
    pub level_s: u128,
    pub level_s1: u128,
    pub wreath_patterns: u128,
    pub formula: Ratio,
    pub pattern_side: Ratio,
    pub branch_side: Ratio,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Nucleus {
    pub elements: Vec<GroupWord>,
    pub rounds: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grig() -> WreathSpec {
        WreathSpec::builtin("grigorchuk").unwrap()
    }

    #[test]
    fn sections_and_action() {
        let g = grig();
        let b = g.word("b").unwrap();
        assert_eq!(g.section(&b, &[0]).unwrap(), g.word("a").unwrap());
        assert_eq!(g.section(&b, &[1]).unwrap(), g.word("c").unwrap());
        let a = g.word("a").unwrap();
        assert_eq!(&g.act(&a, &[0, 1, 1, 0]).unwrap()[..], &[1, 1, 1, 0]);
        assert!(g.section(&GroupWord::identity(), &[1, 0, 1]).unwrap().is_empty());
        assert!(g.section(&b, &[2]).is_err());
        assert!(g.word("z").is_err());
        assert_eq!(g.format_word(&g.word("ab^-1 c").unwrap()), "a b^-1 c");
    }

    #[test]
    fn grigorchuk_relations_hold_exactly() {
        let g = grig();
        let budget = Budget::default();
        for (x, y) in [("bc", "d"), ("cd", "b"), ("aa", "e"), ("bb", "e"), ("adadadad", "e")] {
            assert!(g.words_equal(&g.word(x).unwrap(), &g.word(y).unwrap(), &budget).unwrap(), "{x} = {y}");
        }
        assert!(!g.words_equal(&g.word("ad").unwrap(), &g.word("da").unwrap(), &budget).unwrap());
    }

    #[test]
    fn level_images() {
        let budget = Budget::default();
        let g = grig();
        let sizes: Vec<usize> = (0..=4).map(|n| g.level_image_size(n, &budget).unwrap()).collect();
        assert_eq!(sizes[..2], [1, 2]);
        assert!(sizes.windows(2).all(|w| w[1] % w[0] == 0));
        let t = WreathSpec::builtin("trivial").unwrap();
        assert!((0..4).all(|n| t.level_image_size(n, &budget).unwrap() == 1));
        let o = WreathSpec::builtin("odometer").unwrap();
        assert_eq!(o.level_image_size(5, &budget).unwrap(), 32);
    }

    #[test]
    fn tables_agree_with_truncations() {
        let g = grig();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let w = g.random_word(12, &mut rng);
            assert_eq!(g.table(&w, 5).unwrap(), Table::of_local(&g.truncation(&w, 5), 2, 5));
        }
    }

    #[test]
    fn nuclei() {
        let budget = Budget::default();
        let g = grig();
        let n = g.nucleus(&budget).unwrap();
        let names: Vec<String> = n.elements.iter().map(|w| g.format_word(w)).collect();
        assert_eq!(names, ["e", "a", "b", "c", "d"]);
        assert!(g.verify_nucleus(&n.elements, &budget).unwrap());
        let t = WreathSpec::builtin("trivial").unwrap();
        assert_eq!(t.nucleus(&budget).unwrap().elements, vec![GroupWord::identity()]);
        let o = WreathSpec::builtin("odometer").unwrap();
        assert_eq!(o.nucleus(&budget).unwrap().elements.len(), 3);
        let small = Budget { max_elements: 20_000, max_rounds: 6, max_nucleus: 200 };
        let l = WreathSpec::builtin("lamplighter").unwrap();
        assert!(matches!(l.nucleus(&small), Err(Error::Budget(_))));
    }

    #[test]
    fn branch_identities() {
        let budget = Budget::default();
        let g = grig();
        let r = g.index_identity_check(3, &budget).unwrap();
        assert!(r.holds, "{r:?}");
        assert!(g.stab_image_identity(3, &budget).unwrap().holds);
        let t = WreathSpec::builtin("trivial").unwrap();
        let r = t.index_identity_check(2, &budget).unwrap();
        assert!(r.holds && r.formula == Ratio::new(2, 1));
        let o = WreathSpec::builtin("odometer").unwrap();
        assert!(!o.index_identity_check(1, &budget).unwrap().holds);
        assert!(!o.stab_image_identity(1, &budget).unwrap().holds);
    }

    #[test]
    fn pattern_membership() {
        let budget = Budget::default();
        let g = grig();
        let p = g.pattern_set(4, &budget).unwrap();
        assert!(p.in_closure(&LocalAut::identity(), 6).unwrap());
        assert!(p.in_closure(&LocalAut::identity(), 2).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = g.random_word(30, &mut rng);
        let t = g.truncation(&w, 6);
        assert!(p.in_closure(&t, 6).unwrap());
    }

    #[test]
    fn parse_errors() {
        assert!(WreathSpec::parse("gen a: perm=(1 2); sections=[e,e]").is_err());
        assert!(WreathSpec::parse("degree 2\ngen a: perm=(1 2); sections=[e]").is_err());
        assert!(WreathSpec::parse("degree 2\ngen a: perm=(1 2); sections=[e,q]").is_err());
        assert!(WreathSpec::parse("degree 2\ngen a: perm=(1 3); sections=[e,e]").is_err());
    }
}
