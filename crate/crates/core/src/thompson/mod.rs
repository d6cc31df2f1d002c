//! The Higman–Thompson group `V_{d,k}`: tree pairs, reduction, the raising generators, the
//! saturated generating set `Σ` and Cayley-ball exploration.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use smallvec::SmallVec;

use crate::diagram::{Diagram, Merge, Piece};
use crate::error::{Error, Result};
use crate::localgroup::LocalAut;
use crate::tree::{permutations, CompleteSubtree, TreeParams, Vertex};

mod oracle;
pub use oracle::{replay, FillOracle, OracleConfig, SigmaStep};

/// A possibly unreduced tree pair: leaf `i` of the domain maps to leaf `images[i]` of the
/// range (leaves in planar order).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreePair {
    domain: CompleteSubtree,
    range: CompleteSubtree,
    images: Vec<usize>,
}

impl TreePair {
    pub fn new(domain: CompleteSubtree, range: CompleteSubtree, images: Vec<usize>) -> Result<Self> {
        domain.params().check_same(&range.params())?;
        let n = domain.params().leaf_count(domain.caret_count());
        if range.caret_count() != domain.caret_count() {
            return Err(Error::InvalidPair("domain and range have different leaf counts".into()));
        }
        let mut seen = vec![false; n];
        if images.len() != n || images.iter().any(|&j| j >= n || std::mem::replace(&mut seen[j], true)) {
            return Err(Error::InvalidPair("leaf map is not a bijection".into()));
        }
        Ok(TreePair { domain, range, images })
    }

    /// From explicit leaf pairs.
    pub fn from_map(domain: CompleteSubtree, range: CompleteSubtree, map: &[(Vertex, Vertex)]) -> Result<Self> {
        let dl = domain.leaves();
        let rl = range.leaves();
        if map.len() != dl.len() {
            return Err(Error::InvalidPair(format!("{} leaf pairs for {} leaves", map.len(), dl.len())));
        }
        let mut images = vec![usize::MAX; dl.len()];
        for (x, y) in map {
            let i = dl.binary_search(x).map_err(|_| Error::InvalidPair(format!("{x} is not a domain leaf")))?;
            let j = rl.binary_search(y).map_err(|_| Error::InvalidPair(format!("{y} is not a range leaf")))?;
            if images[i] != usize::MAX {
                return Err(Error::InvalidPair(format!("{x} mapped twice")));
            }
            images[i] = j;
        }
        TreePair::new(domain, range, images)
    }

    pub fn domain(&self) -> &CompleteSubtree {
        &self.domain
    }

    pub fn range(&self) -> &CompleteSubtree {
        &self.range
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    fn unreduced(&self) -> Diagram {
        let rl = self.range.leaves();
        let pieces = self
            .domain
            .leaves()
            .into_iter()
            .zip(&self.images)
            .map(|(src, &j)| Piece { src, dst: rl[j].clone(), act: LocalAut::identity() })
            .collect();
        Diagram::from_sorted_unchecked(self.domain.params(), pieces)
    }

    /// `true` when no caret of the domain maps in order onto a caret of the range.
    pub fn is_reduced(&self) -> bool {
        self.unreduced().fusable_groups(Merge::Order).is_empty()
    }

    pub fn canonicalize(&self) -> CanonicalTreePair {
        CanonicalTreePair(self.unreduced().reduced(Merge::Order))
    }

    /// Reduction with the removal order chosen at random.
    pub fn canonicalize_randomly<R: Rng>(&self, rng: &mut R) -> CanonicalTreePair {
        CanonicalTreePair(self.unreduced().reduce_randomly(Merge::Order, rng))
    }
}

/// An element of `V_{d,k}` in reduced form. Equality of values is equality of elements.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalTreePair(Diagram);

/// Compact byte encoding of a canonical pair, used as a hash key in large searches.
pub type PairKey = SmallVec<[u8; 24]>;

impl CanonicalTreePair {
    pub fn identity(params: TreeParams) -> Self {
        CanonicalTreePair(Diagram::identity(params))
    }

    /// Accepts an order-preserving diagram (trivial local actions) and reduces it.
    pub fn from_diagram(d: Diagram) -> Result<Self> {
        if !d.has_trivial_actions() {
            return Err(Error::InvalidPair("local actions present; not an element of V".into()));
        }
        Ok(CanonicalTreePair(d.reduced(Merge::Order)))
    }

    pub fn diagram(&self) -> &Diagram {
        &self.0
    }

    pub fn params(&self) -> TreeParams {
        self.0.params()
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_identity()
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &CanonicalTreePair) -> Result<CanonicalTreePair> {
        Ok(CanonicalTreePair(self.0.compose(&other.0, Merge::Order)?))
    }

    /// `self ∘ other`, panicking on a parameter mismatch.
    pub fn mul(&self, other: &CanonicalTreePair) -> CanonicalTreePair {
        self.compose(other).expect("same parameters")
    }

    pub fn inverse(&self) -> CanonicalTreePair {
        CanonicalTreePair(self.0.inverse(Merge::Order))
    }

    /// Caret count κ of the reduced pair.
    pub fn carets(&self) -> usize {
        self.0.carets()
    }

    pub fn domain_tree(&self) -> CompleteSubtree {
        self.0.domain_tree()
    }

    pub fn range_tree(&self) -> CompleteSubtree {
        self.0.range_tree()
    }

    pub fn leaf_map(&self) -> Vec<(Vertex, Vertex)> {
        self.0.pieces().iter().map(|p| (p.src.clone(), p.dst.clone())).collect()
    }

    pub fn to_tree_pair(&self) -> TreePair {
        let range = self.range_tree();
        let rl = range.leaves();
        let images = self.0.pieces().iter().map(|p| rl.binary_search(&p.dst).expect("range leaf")).collect();
        TreePair { domain: self.domain_tree(), range, images }
    }

    pub fn apply(&self, v: &Vertex) -> Option<Vertex> {
        self.0.apply(v)
    }

    /// Preorder caret bits of both trees followed by the leaf images.
    pub fn key(&self) -> PairKey {
        let params = self.params();
        let mut bits = BitWriter::default();
        let dom = self.domain_tree();
        let ran = self.range_tree();
        for t in [&dom, &ran] {
            for a in 0..params.k {
                write_shape(t, &Vertex::top(a as u8), params.d, &mut bits);
            }
        }
        let mut out = bits.finish();
        let rl = ran.leaves();
        out.extend(self.0.pieces().iter().map(|p| rl.binary_search(&p.dst).expect("range leaf") as u8));
        out
    }

    pub fn from_key(params: TreeParams, key: &[u8]) -> Result<Self> {
        let mut bits = BitReader { data: key, pos: 0 };
        let mut trees = Vec::with_capacity(2);
        for _ in 0..2 {
            let mut carets = BTreeSet::new();
            for a in 0..params.k {
                read_shape(&mut bits, Vertex::top(a as u8), params.d, &mut carets)?;
            }
            trees.push(CompleteSubtree::validate(params, carets)?);
        }
        let start = bits.pos.div_ceil(8);
        let ran = trees.pop().expect("two trees");
        let dom = trees.pop().expect("two trees");
        let images = key[start..].iter().map(|&x| x as usize).collect();
        Ok(TreePair::new(dom, ran, images)?.canonicalize())
    }

    /// `δ_{i,j}` (0-based, `k ≥ 2`): carries the cylinder below `a_i b_j` onto `a_i`.
    pub fn delta(params: TreeParams, i: usize, j: usize) -> Result<Self> {
        if params.k < 2 {
            return Err(Error::Unsupported("delta(i, j) needs k >= 2; use delta_single_root".into()));
        }
        if i >= params.k || j >= params.d {
            return Err(Error::InvalidParams(format!("delta index ({i}, {j}) out of range")));
        }
        let next = (i + 1) % params.k;
        let ai = Vertex::top(i as u8);
        let an = Vertex::top(next as u8);
        let mut pieces = Vec::new();
        for l in 0..params.k {
            if l != i && l != next {
                pieces.push(identity_piece(Vertex::top(l as u8), Vertex::top(l as u8)));
            }
        }
        pieces.push(identity_piece(an.clone(), an.child(j as u8)));
        for l in 0..params.d as u8 {
            if l as usize == j {
                pieces.push(identity_piece(ai.child(l), ai.clone()));
            } else {
                pieces.push(identity_piece(ai.child(l), an.child(l)));
            }
        }
        Ok(CanonicalTreePair(Diagram::from_pieces(params, pieces, Merge::Order)?))
    }

    /// Single-root variant (0-based `j, m`): carries the cylinder below `a_1 b_j b_m` onto
    /// `a_1 b_j`; the remaining leaves are matched in boundary order.
    pub fn delta_single_root(params: TreeParams, j: usize, m: usize) -> Result<Self> {
        if j >= params.d || m >= params.d {
            return Err(Error::InvalidParams(format!("delta index ({j}, {m}) out of range")));
        }
        let a1 = Vertex::top(0);
        let bj = a1.child(j as u8);
        let jn = ((j + 1) % params.d) as u8;
        let dom = CompleteSubtree::validate(params, [a1.clone(), bj.clone()])?;
        let ran = CompleteSubtree::validate(params, [a1.clone(), a1.child(jn)])?;
        let special = bj.child(m as u8);
        let rest_dom: Vec<Vertex> =
            dom.leaves().into_iter().filter(|v| *v != special && v.component() == Some(0)).collect();
        let rest_ran: Vec<Vertex> = ran.leaves().into_iter().filter(|v| *v != bj && v.component() == Some(0)).collect();
        let mut pieces = vec![identity_piece(special, bj)];
        pieces.extend(rest_dom.into_iter().zip(rest_ran).map(|(x, y)| identity_piece(x, y)));
        for l in 1..params.k {
            pieces.push(identity_piece(Vertex::top(l as u8), Vertex::top(l as u8)));
        }
        Ok(CanonicalTreePair(Diagram::from_pieces(params, pieces, Merge::Order)?))
    }
}

fn identity_piece(src: Vertex, dst: Vertex) -> Piece {
    Piece { src, dst, act: LocalAut::identity() }
}

#[derive(Default)]
struct BitWriter {
    out: PairKey,
    bit: usize,
}

impl BitWriter {
    fn push(&mut self, b: bool) {
        if self.bit.is_multiple_of(8) {
            self.out.push(0);
        }
        if b {
            *self.out.last_mut().expect("pushed") |= 1 << (self.bit % 8);
        }
        self.bit += 1;
    }

    fn finish(self) -> PairKey {
        self.out
    }
}

struct BitReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl BitReader<'_> {
    fn next(&mut self) -> Result<bool> {
        let byte = self.data.get(self.pos / 8).ok_or_else(|| Error::Parse("truncated pair key".into()))?;
        let b = byte >> (self.pos % 8) & 1 == 1;
        self.pos += 1;
        Ok(b)
    }
}

fn write_shape(t: &CompleteSubtree, v: &Vertex, d: usize, bits: &mut BitWriter) {
    let caret = t.is_caret(v);
    bits.push(caret);
    if caret {
        for b in 0..d as u8 {
            write_shape(t, &v.child(b), d, bits);
        }
    }
}

fn read_shape(bits: &mut BitReader, v: Vertex, d: usize, carets: &mut BTreeSet<Vertex>) -> Result<()> {
    if bits.next()? {
        for b in 0..d as u8 {
            read_shape(bits, v.child(b), d, carets)?;
        }
        carets.insert(v);
    }
    Ok(())
}

/// Vertices at which the raising generators operate: the `a_i` when `k ≥ 2`, otherwise
/// the `a_1 b_j`.
pub fn anchors(params: TreeParams) -> Vec<Vertex> {
    if params.k >= 2 {
        (0..params.k as u8).map(Vertex::top).collect()
    } else {
        (0..params.d as u8).map(|j| Vertex::top(0).child(j)).collect()
    }
}

/// The raising generator carrying the cylinder below `anchor·b_ℓ` onto `anchor`.
pub fn raising_element(params: TreeParams, anchor: &Vertex, ell: usize) -> Result<CanonicalTreePair> {
    match (params.k >= 2, anchor.level()) {
        (true, 1) => CanonicalTreePair::delta(params, anchor.letters()[0] as usize, ell),
        (false, 2) => CanonicalTreePair::delta_single_root(params, anchor.letters()[1] as usize, ell),
        _ => Err(Error::InvalidParams(format!("{anchor} is not an anchor"))),
    }
}

/// Every raising generator, in anchor order.
pub fn raising_elements(params: TreeParams) -> Result<Vec<CanonicalTreePair>> {
    let mut out = Vec::new();
    for a in anchors(params) {
        for ell in 0..params.d {
            out.push(raising_element(params, &a, ell)?);
        }
    }
    Ok(out)
}

/// Every reduced pair with exactly `n` carets.
pub fn enumerate_canonical(params: TreeParams, n: usize) -> Vec<CanonicalTreePair> {
    let trees = CompleteSubtree::enumerate(params, n);
    let perms = permutations(params.leaf_count(n));
    let mut out = Vec::new();
    for dom in &trees {
        for ran in &trees {
            for p in &perms {
                let pair = TreePair { domain: dom.clone(), range: ran.clone(), images: p.clone() };
                let diag = pair.unreduced();
                if diag.fusable_groups(Merge::Order).is_empty() {
                    out.push(CanonicalTreePair(diag));
                }
            }
        }
    }
    out
}

/// Adds, for every `(ψ, T, T')` present, every element `(ψ', u(T), T')` with `u` a tree
/// automorphism, until no new `(domain, range)` pair appears.
pub fn saturate(set: &BTreeSet<CanonicalTreePair>) -> BTreeSet<CanonicalTreePair> {
    let mut out = set.clone();
    let mut done: HashSet<(CompleteSubtree, CompleteSubtree)> = HashSet::new();
    let mut pending: Vec<(CompleteSubtree, CompleteSubtree)> =
        set.iter().map(|s| (s.domain_tree(), s.range_tree())).collect();
    while let Some((dom, ran)) = pending.pop() {
        for image in dom.automorphism_images(false) {
            if !done.insert((image.clone(), ran.clone())) {
                continue;
            }
            for p in permutations(ran.leaves().len()) {
                let c = TreePair { domain: image.clone(), range: ran.clone(), images: p }.canonicalize();
                if !out.contains(&c) {
                    pending.push((c.domain_tree(), c.range_tree()));
                    out.insert(c);
                }
            }
        }
    }
    out
}

/// `true` when the saturation quantifier holds for `set`.
pub fn is_saturated(set: &BTreeSet<CanonicalTreePair>) -> bool {
    let mut seen = HashSet::new();
    set.iter().all(|s| {
        let (dom, ran) = (s.domain_tree(), s.range_tree());
        dom.automorphism_images(false).into_iter().all(|image| {
            if !seen.insert((image.clone(), ran.clone())) {
                return true;
            }
            permutations(ran.leaves().len()).into_iter().all(|p| {
                let c = TreePair { domain: image.clone(), range: ran.clone(), images: p }.canonicalize();
                c.is_identity() || set.contains(&c)
            })
        })
    })
}

/// Default caret bound: two, or three on the single-root tree where two carets do not
/// reach every three-caret element.
pub fn default_caret_bound(params: TreeParams) -> usize {
    if params.k == 1 {
        3
    } else {
        2
    }
}

/// Exhaustive when the `q + 1` caret elements are few, otherwise 2000 samples.
pub fn default_generation_check(params: TreeParams, q: usize) -> GenerationCheck {
    let trees = CompleteSubtree::enumerate(params, q + 1).len();
    let leaves = params.leaf_count(q + 1);
    let count = (1..=leaves).fold((trees * trees) as f64, |acc, i| acc * i as f64);
    if count <= 200_000.0 {
        GenerationCheck::Exhaustive
    } else {
        GenerationCheck::Sampled { samples: 2000, seed: 0 }
    }
}

/// How `build_sigma` certifies generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenerationCheck {
    /// Every reduced pair with `q + 1` carets.
    Exhaustive,
    /// Uniformly drawn tree pairs with `q + 1` carets.
    Sampled {
        samples: usize,
        seed: u64,
    },
    Skip,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GenerationReport {
    pub checked: usize,
    pub max_witness_length: usize,
    /// Number of checked elements by shortest witness length found.
    pub witness_histogram: Vec<usize>,
}

/// A finite, inverse-closed, saturated generating set of `V_{d,k}` (identity excluded).
#[derive(Clone, Debug)]
pub struct GeneratingSet {
    params: TreeParams,
    q: usize,
    elements: Vec<CanonicalTreePair>,
    index: HashMap<CanonicalTreePair, u32>,
    inverses: Vec<u32>,
    raising: HashMap<(Vertex, usize), u32>,
    generation: GenerationReport,
}

impl GeneratingSet {
    /// All reduced pairs with at most `q` carets together with the raising generators,
    /// saturated and closed under inverses, with generation certified by `check`.
    pub fn build(params: TreeParams, q: usize, check: GenerationCheck) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidParams("the caret bound q must be at least 2".into()));
        }
        let mut set: BTreeSet<CanonicalTreePair> = (0..=q).flat_map(|n| enumerate_canonical(params, n)).collect();
        set.extend(raising_elements(params)?);
        let set = close(set);
        let mut gs = GeneratingSet::from_elements(params, q, set.into_iter().filter(|s| !s.is_identity()).collect())?;
        gs.generation = gs.check_generation(check)?;
        Ok(gs)
    }

    /// Wraps an explicit set; it must be inverse-closed and contain the raising generators.
    pub fn from_elements(params: TreeParams, q: usize, mut elements: Vec<CanonicalTreePair>) -> Result<Self> {
        elements.sort_by(|a, b| a.carets().cmp(&b.carets()).then_with(|| a.cmp(b)));
        elements.dedup();
        let index: HashMap<CanonicalTreePair, u32> =
            elements.iter().enumerate().map(|(i, e)| (e.clone(), i as u32)).collect();
        let inverses = elements
            .iter()
            .map(|e| {
                index
                    .get(&e.inverse())
                    .copied()
                    .ok_or_else(|| Error::Generation("set is not closed under inverses".into()))
            })
            .collect::<Result<Vec<u32>>>()?;
        let mut raising = HashMap::new();
        for a in anchors(params) {
            for ell in 0..params.d {
                let r = raising_element(params, &a, ell)?;
                let id = *index
                    .get(&r)
                    .ok_or_else(|| Error::Generation(format!("raising generator at {a}, {ell} missing")))?;
                raising.insert((a.clone(), ell), id);
            }
        }
        Ok(GeneratingSet { params, q, elements, index, inverses, raising, generation: GenerationReport::default() })
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn caret_bound(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[CanonicalTreePair] {
        &self.elements
    }

    pub fn get(&self, id: u32) -> &CanonicalTreePair {
        &self.elements[id as usize]
    }

    pub fn lookup(&self, v: &CanonicalTreePair) -> Option<u32> {
        self.index.get(v).copied()
    }

    pub fn inverse_id(&self, id: u32) -> u32 {
        self.inverses[id as usize]
    }

    pub fn raising_id(&self, anchor: &Vertex, ell: usize) -> Option<u32> {
        self.raising.get(&(anchor.clone(), ell)).copied()
    }

    /// `C_Σ`: the largest caret count in the set.
    pub fn c_sigma(&self) -> usize {
        self.elements.iter().map(CanonicalTreePair::carets).max().unwrap_or(0)
    }

    pub fn generation_report(&self) -> &GenerationReport {
        &self.generation
    }

    /// Product of a word of ids, leftmost letter acting last.
    pub fn evaluate(&self, word: &[u32]) -> CanonicalTreePair {
        word.iter().fold(CanonicalTreePair::identity(self.params), |acc, &s| acc.mul(self.get(s)))
    }

    /// A word of length at most two over the set equal to `v`, if one exists.
    pub fn short_word(&self, v: &CanonicalTreePair) -> Option<Vec<u32>> {
        if v.is_identity() {
            return Some(Vec::new());
        }
        if let Some(id) = self.lookup(v) {
            return Some(vec![id]);
        }
        if v.carets() > 2 * self.c_sigma() {
            return None;
        }
        self.elements.iter().enumerate().find_map(|(i, _)| {
            let rest = self.get(self.inverses[i]).mul(v);
            self.lookup(&rest).map(|r| vec![i as u32, r])
        })
    }

    fn check_generation(&self, check: GenerationCheck) -> Result<GenerationReport> {
        let targets: Vec<CanonicalTreePair> = match check {
            GenerationCheck::Skip => return Ok(GenerationReport::default()),
            GenerationCheck::Exhaustive => enumerate_canonical(self.params, self.q + 1),
            GenerationCheck::Sampled { samples, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..samples).map(|_| random_canonical(self.params, self.q + 1, &mut rng)).collect()
            }
        };
        let mut lengths: Vec<Option<usize>> = targets
            .par_iter()
            .map(|v| if self.lookup(v).is_some() { Some(1) } else { self.routed_word(v).map(|w| w.len()) })
            .collect();
        if lengths.iter().any(Option::is_none) {
            let ball = self.witness_ball()?;
            let index: HashMap<&[u8], usize> = ball.iter().map(|(k, l)| (k.as_slice(), *l)).collect();
            lengths = targets.par_iter().map(|v| self.witness_length(v, &ball, &index)).collect();
        }
        let mut report = GenerationReport { checked: targets.len(), ..Default::default() };
        for (v, len) in targets.iter().zip(lengths) {
            let len = len.ok_or_else(|| {
                Error::Generation(format!(
                    "no short product witness for an element with {} carets; raise q",
                    v.carets()
                ))
            })?;
            report.max_witness_length = report.max_witness_length.max(len);
            if report.witness_histogram.len() <= len {
                report.witness_histogram.resize(len + 1, 0);
            }
            report.witness_histogram[len] += 1;
        }
        Ok(report)
    }

    /// The largest Cayley ball (keys in BFS order with lengths) within `WITNESS_BALL_LIMIT`.
    fn witness_ball(&self) -> Result<Vec<(PairKey, usize)>> {
        let mut radius = 1;
        let mut size = 1 + self.len();
        while size.saturating_mul(self.len()) <= WITNESS_BALL_LIMIT && radius < 8 {
            radius += 1;
            size = size.saturating_mul(self.len());
        }
        let report = bfs_ball(self, radius, usize::MAX, true)?;
        Ok(report.elements.into_iter().map(|(e, l)| (e.key(), l)).collect())
    }

    /// Length of some product witness for `v`: a ball lookup, the constructive two- or
    /// three-factor route through a tree with two exposed carets, then a meet-in-the-middle
    /// pass through the ball.
    fn witness_length(
        &self,
        v: &CanonicalTreePair,
        ball: &[(PairKey, usize)],
        index: &HashMap<&[u8], usize>,
    ) -> Option<usize> {
        if let Some(&l) = index.get(v.key().as_slice()) {
            return Some(l);
        }
        if let Some(w) = self.routed_word(v) {
            return Some(w.len());
        }
        let params = self.params;
        ball.iter().find_map(|(k, l)| {
            let x = CanonicalTreePair::from_key(params, k).expect("ball keys decode");
            index.get(x.inverse().mul(v).key().as_slice()).map(|m| l + m)
        })
    }

    /// A word of two or three generators for `v`, routed through a tree with as many carets
    /// as `v` and two exposed carets. Each factor matches one exposed caret in order, so it
    /// reduces to fewer carets.
    pub fn routed_word(&self, v: &CanonicalTreePair) -> Option<Vec<u32>> {
        let n = v.carets();
        let (s, e, f) = CompleteSubtree::enumerate(self.params, n).into_iter().find_map(|t| {
            let ex = exposed_carets(&t);
            (ex.len() >= 2).then(|| (t.clone(), ex[0].clone(), ex[1].clone()))
        })?;
        let d = self.params.d;
        let (dom, ran) = (v.domain_tree(), v.range_tree());
        let map = v.leaf_map();
        let psi: HashMap<Vertex, Vertex> = map.iter().cloned().collect();
        let psi_inv: HashMap<Vertex, Vertex> = map.iter().map(|(x, y)| (y.clone(), x.clone())).collect();
        let ce = children(&e, d);
        let cf = children(&f, d);
        for c in exposed_carets(&dom) {
            let a = children(&c, d);
            for c2 in exposed_carets(&ran) {
                let b: Vec<Vertex> = children(&c2, d).iter().map(|y| psi_inv[y].clone()).collect();
                if a.iter().all(|x| !b.contains(x)) {
                    let beta = pair_with(&dom, &s, &[(&a, &ce), (&b, &cf)])?;
                    let alpha = v.mul(&beta.inverse());
                    if let (Some(x), Some(y)) = (self.lookup(&alpha), self.lookup(&beta)) {
                        return Some(vec![x, y]);
                    }
                    continue;
                }
                let z: Vec<Vertex> =
                    dom.leaves().into_iter().filter(|x| !a.contains(x) && !b.contains(x)).take(d).collect();
                if z.len() < d {
                    continue;
                }
                let beta = pair_with(&dom, &s, &[(&a, &ce), (&z, &cf)])?;
                let c2_children = children(&c2, d);
                let psi_z: Vec<Vertex> = z.iter().map(|x| psi[x].clone()).collect();
                let alpha = pair_with(&s, &ran, &[(&ce, &c2_children), (&cf, &psi_z)])?;
                let gamma = alpha.inverse().mul(v).mul(&beta.inverse());
                if let (Some(x), Some(y), Some(w)) = (self.lookup(&alpha), self.lookup(&gamma), self.lookup(&beta)) {
                    return Some(vec![x, y, w]);
                }
            }
        }
        None
    }
}

fn children(v: &Vertex, d: usize) -> Vec<Vertex> {
    (0..d as u8).map(|b| v.child(b)).collect()
}

/// Carets whose children are all leaves.
fn exposed_carets(t: &CompleteSubtree) -> Vec<Vertex> {
    let d = t.params().d;
    t.carets().iter().filter(|c| children(c, d).iter().all(|x| !t.is_caret(x))).cloned().collect()
}

/// The pair `dom → ran` sending each listed leaf block onto its target block in order and
/// the remaining leaves onto the remaining leaves in boundary order.
fn pair_with(
    dom: &CompleteSubtree,
    ran: &CompleteSubtree,
    blocks: &[(&Vec<Vertex>, &Vec<Vertex>)],
) -> Option<CanonicalTreePair> {
    let dl = dom.leaves();
    let rl = ran.leaves();
    let mut images = vec![usize::MAX; dl.len()];
    let mut used = vec![false; rl.len()];
    for (from, to) in blocks {
        for (x, y) in from.iter().zip(to.iter()) {
            let i = dl.binary_search(x).ok()?;
            let j = rl.binary_search(y).ok()?;
            if images[i] != usize::MAX || used[j] {
                return None;
            }
            images[i] = j;
            used[j] = true;
        }
    }
    let mut free = (0..rl.len()).filter(|&j| !used[j]);
    for img in images.iter_mut().filter(|i| **i == usize::MAX) {
        *img = free.next()?;
    }
    Some(TreePair::new(dom.clone(), ran.clone(), images).ok()?.canonicalize())
}

/// Ball size up to which generation witnesses are searched exhaustively.
const WITNESS_BALL_LIMIT: usize = 400_000;

fn close(mut set: BTreeSet<CanonicalTreePair>) -> BTreeSet<CanonicalTreePair> {
    loop {
        let sat = saturate(&set);
        let mut closed = sat.clone();
        closed.extend(sat.iter().map(CanonicalTreePair::inverse));
        if closed.len() == set.len() {
            return closed;
        }
        set = closed;
    }
}

/// A random complete subtree with `n` carets, grown at uniformly chosen leaves.
pub fn random_tree<R: Rng>(params: TreeParams, n: usize, rng: &mut R) -> CompleteSubtree {
    let mut carets = BTreeSet::new();
    while carets.len() < n {
        let t = CompleteSubtree::from_carets_unchecked(params, carets.clone());
        let leaves = t.leaves();
        carets.insert(leaves[rng.gen_range(0..leaves.len())].clone());
    }
    CompleteSubtree::from_carets_unchecked(params, carets)
}

/// A random reduced pair with exactly `n` carets (rejection sampling over random pairs).
pub fn random_canonical<R: Rng>(params: TreeParams, n: usize, rng: &mut R) -> CanonicalTreePair {
    loop {
        let dom = random_tree(params, n, rng);
        let ran = random_tree(params, n, rng);
        let mut images: Vec<usize> = (0..params.leaf_count(n)).collect();
        images.shuffle(rng);
        let pair = TreePair { domain: dom, range: ran, images };
        if pair.is_reduced() {
            return pair.canonicalize();
        }
    }
}

/// A random element with at most `n` carets (reduction may lower the count).
pub fn random_element<R: Rng>(params: TreeParams, n: usize, rng: &mut R) -> CanonicalTreePair {
    let dom = random_tree(params, n, rng);
    let ran = random_tree(params, n, rng);
    let mut images: Vec<usize> = (0..params.leaf_count(n)).collect();
    images.shuffle(rng);
    TreePair { domain: dom, range: ran, images }.canonicalize()
}

/// Outcome of a breadth-first exploration of the Cayley ball.
#[derive(Clone, Debug, Default)]
pub struct BallReport {
    pub requested_radius: usize,
    pub completed_radius: usize,
    /// Number of elements at each exact word length `0..=completed_radius`.
    pub sphere_sizes: Vec<usize>,
    pub c_sigma: usize,
    /// Elements with `κ(v) > C_Σ·|v|`.
    pub violations: usize,
    /// Largest `κ(v) / |v|` seen.
    pub max_ratio: f64,
    pub budget_exceeded: bool,
    pub peak_bytes_estimate: usize,
    /// `(element, length)` in BFS order when collection was requested.
    pub elements: Vec<(CanonicalTreePair, usize)>,
}

/// Approximate resident bytes per stored key, including hash-table overhead.
const BYTES_PER_KEY: usize = 2 * std::mem::size_of::<PairKey>() + 16;

/// Exact word lengths on the ball of radius `r`. Keeps only the last two spheres, which is
/// enough because the generating set is inverse-closed. Stops before a sphere whose
/// predicted size breaks `budget_bytes`.
pub fn bfs_ball(sigma: &GeneratingSet, radius: usize, budget_bytes: usize, collect: bool) -> Result<BallReport> {
    let params = sigma.params();
    let c = sigma.c_sigma();
    let id = CanonicalTreePair::identity(params);
    let mut report = BallReport { requested_radius: radius, c_sigma: c, sphere_sizes: vec![1], ..Default::default() };
    if collect {
        report.elements.push((id.clone(), 0));
    }
    let mut prev: HashSet<PairKey> = HashSet::new();
    let mut cur: HashSet<PairKey> = HashSet::from([id.key()]);
    let mut frontier: Vec<PairKey> = vec![id.key()];
    let mut growth = sigma.len() as f64;
    for r in 1..=radius {
        let predicted = (frontier.len() as f64 * growth) as usize;
        let needed = (prev.len() + cur.len() + 2 * predicted) * BYTES_PER_KEY;
        if needed > budget_bytes {
            report.budget_exceeded = true;
            return Ok(report);
        }
        let chunks: Vec<Vec<(PairKey, usize)>> = frontier
            .par_chunks(256)
            .map(|chunk| {
                let mut out = Vec::new();
                for key in chunk {
                    let x = CanonicalTreePair::from_key(params, key).expect("stored keys decode");
                    for s in sigma.elements() {
                        let y = x.mul(s);
                        let k = y.key();
                        if !prev.contains(&k) && !cur.contains(&k) {
                            out.push((k, y.carets()));
                        }
                    }
                }
                out
            })
            .collect();
        let mut next: HashSet<PairKey> = HashSet::new();
        let mut next_frontier = Vec::new();
        for (k, carets) in chunks.into_iter().flatten() {
            if next.contains(&k) {
                continue;
            }
            if carets > c * r {
                report.violations += 1;
            }
            report.max_ratio = report.max_ratio.max(carets as f64 / r as f64);
            if collect {
                report.elements.push((CanonicalTreePair::from_key(params, &k)?, r));
            }
            next.insert(k.clone());
            next_frontier.push(k);
            if (prev.len() + cur.len() + next.len()) * BYTES_PER_KEY > budget_bytes {
                report.budget_exceeded = true;
                return Ok(report);
            }
        }
        growth = next_frontier.len() as f64 / frontier.len().max(1) as f64;
        report.peak_bytes_estimate =
            report.peak_bytes_estimate.max((prev.len() + cur.len() + next.len()) * BYTES_PER_KEY);
        report.sphere_sizes.push(next_frontier.len());
        report.completed_radius = r;
        prev = std::mem::take(&mut cur);
        cur = next;
        frontier = next_frontier;
    }
    Ok(report)
}
