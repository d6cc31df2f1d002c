//! Almost automorphisms with local action in `D`: decorated diagrams, the `g = u·v`
//! decomposition, membership in the compact part, and the conjugation and exchange
//! computations used by the rewriting engine.

use std::collections::HashMap;

use rand::Rng;

use crate::diagram::{Diagram, Merge, Piece};
use crate::error::{Error, Result};
use crate::localgroup::{random_portrait, LocalAut, Portrait};
use crate::perm::{Perm, PermGroup};
use crate::thompson::{raising_element, random_element, CanonicalTreePair, GeneratingSet};
use crate::tree::{TreeParams, Vertex};

/// An element of `AAut_D(T_{d,k})` with finitely supported local action, stored in the
/// normal form whose pieces are the maximal cylinders on which it acts through `W(D)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DecoratedElement(Diagram);

impl DecoratedElement {
    pub fn diagram(&self) -> &Diagram {
        &self.0
    }

    pub fn params(&self) -> TreeParams {
        self.0.params()
    }

    pub fn is_identity(&self) -> bool {
        self.0.is_identity()
    }

    pub fn apply(&self, v: &Vertex) -> Option<Vertex> {
        self.0.apply(v)
    }

    /// Prefix-action comparison, independent of the normal form.
    pub fn acts_like(&self, other: &DecoratedElement) -> bool {
        self.0.acts_like(&other.0)
    }
}

/// `g = u·v` with `v` order-preserving and `u` in `D_∞^k`, trivial on the range tree of `v`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decomposition {
    pub u: Portrait,
    pub v: CanonicalTreePair,
}

/// Canonical label of a coset `gΛ`, `Λ = D_∞^k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CosetKey {
    domain: Vec<Vertex>,
    range: Vec<u32>,
}

const OPEN: u32 = u32::MAX - 1;
const CLOSE: u32 = u32::MAX;

/// Arithmetic in `AAut_D(T_{d,k})` for fixed `(d, k, D)`.
#[derive(Clone, Debug)]
pub struct Aaut {
    params: TreeParams,
    group: PermGroup,
}

impl Aaut {
    pub fn new(params: TreeParams, group: PermGroup) -> Result<Self> {
        if group.degree() != params.d {
            return Err(Error::InvalidParams(format!(
                "local group of degree {} on a {}-ary tree",
                group.degree(),
                params.d
            )));
        }
        Ok(Aaut { params, group })
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn group(&self) -> &PermGroup {
        &self.group
    }

    fn merge(&self) -> Merge<'_> {
        Merge::Local(&self.group)
    }

    pub fn identity(&self) -> DecoratedElement {
        DecoratedElement(Diagram::identity(self.params))
    }

    /// Validates the local labels against `D` and normalizes.
    pub fn element(&self, d: Diagram) -> Result<DecoratedElement> {
        self.params.check_same(&d.params())?;
        for p in d.pieces() {
            if !p.act.labels_in(&self.group) {
                return Err(Error::LabelOutsideGroup(format!("below {}", p.dst)));
            }
        }
        Ok(DecoratedElement(d.reduced(self.merge())))
    }

    pub fn from_pieces(&self, pieces: Vec<Piece>) -> Result<DecoratedElement> {
        self.element(Diagram::from_pieces(self.params, pieces, self.merge())?)
    }

    pub fn from_pair(&self, v: &CanonicalTreePair) -> DecoratedElement {
        DecoratedElement(v.diagram().clone().reduced(self.merge()))
    }

    pub fn from_portrait(&self, u: &Portrait) -> Result<DecoratedElement> {
        self.params.check_same(&u.params())?;
        u.check_in(&self.group)?;
        Ok(DecoratedElement(Diagram::from_portrait(u).reduced(self.merge())))
    }

    /// `g1 ∘ g2`.
    pub fn compose(&self, g1: &DecoratedElement, g2: &DecoratedElement) -> Result<DecoratedElement> {
        Ok(DecoratedElement(g1.0.compose(&g2.0, self.merge())?))
    }

    pub fn mul(&self, g1: &DecoratedElement, g2: &DecoratedElement) -> DecoratedElement {
        self.compose(g1, g2).expect("same parameters")
    }

    pub fn inverse(&self, g: &DecoratedElement) -> DecoratedElement {
        DecoratedElement(g.0.inverse(self.merge()))
    }

    /// Equality of normal forms.
    pub fn equals(&self, g1: &DecoratedElement, g2: &DecoratedElement) -> bool {
        g1 == g2
    }

    /// `v` is the order-preserving shadow of the normal form, `u` its local actions placed
    /// below the range leaves.
    pub fn decompose(&self, g: &DecoratedElement) -> Decomposition {
        let v = CanonicalTreePair::from_diagram(g.0.shadow()).expect("shadow has trivial actions");
        Decomposition { u: g.0.decoration_portrait(), v }
    }

    pub fn reconstruct(&self, dec: &Decomposition) -> Result<DecoratedElement> {
        let u = self.from_portrait(&dec.u)?;
        self.compose(&u, &self.from_pair(&dec.v))
    }

    /// Membership in `D_∞^k`, read off the prefix action: level-preserving, level one fixed,
    /// every induced child permutation in `D`.
    pub fn in_compact(&self, g: &DecoratedElement) -> bool {
        let depth = g.0.stable_level() + 1;
        let Some(images) = g.0.level_table(depth) else {
            return false;
        };
        if images.iter().any(|y| y.level() != depth) {
            return false;
        }
        let d = self.params.d;
        // images of the vertices at each level, derived from the deepest level by prefixes
        for level in 1..depth {
            let block = d.pow((depth - level) as u32);
            let parents: Vec<&Vertex> = images.iter().step_by(block).collect();
            for (parent, chunk) in parents.iter().zip(images.chunks(block)) {
                let p = parent.prefix(level);
                if chunk.iter().any(|y| !p.is_prefix_of(y)) {
                    return false;
                }
            }
            if level == 1 && parents.iter().enumerate().any(|(a, y)| y.letters()[0] as usize != a) {
                return false;
            }
            // child permutation at each vertex of level `level`
            let child_block = block / d;
            for chunk in images.chunks(block) {
                let mut pi = [0usize; crate::tree::MAX_ARITY];
                for (j, c) in chunk.chunks(child_block).enumerate() {
                    pi[j] = c[0].letters()[level] as usize;
                }
                match Perm::from_images(&pi[..d]) {
                    Ok(p) if self.group.contains(&p) => {}
                    _ => return false,
                }
            }
        }
        true
    }

    /// `σ u σ⁻¹` for `u` carrying no label at a caret of the domain tree of `σ`: labels at
    /// `x·w` for a domain leaf `x` move to `σ(x)·w`.
    pub fn conj_compact(&self, sigma: &CanonicalTreePair, u: &Portrait) -> Result<Portrait> {
        self.params.check_same(&sigma.params())?;
        let dom = sigma.domain_tree();
        let map = sigma.leaf_map();
        let mut labels = Vec::new();
        for (v, p) in u.labels() {
            if dom.is_caret(&v) {
                return Err(Error::Precondition(format!("label at {v}, a caret of the conjugator's domain tree")));
            }
            let (x, y) = map.iter().find(|(x, _)| x.is_prefix_of(&v)).expect("domain leaves cover the tree");
            labels.push((y.concat(x.suffix_in(&v).expect("prefix")), p));
        }
        Portrait::from_labels(self.params, labels)
    }

    /// Conjugation by the raising generator at `anchor`: `u` supported below `anchor·b_ℓ`
    /// becomes supported below `anchor` with one caret fewer.
    pub fn level_raise_at(&self, anchor: &Vertex, ell: usize, u: &Portrait) -> Result<Portrait> {
        let target = anchor.child(ell as u8);
        if let Some((v, _)) = u.labels().find(|(v, _)| !target.is_prefix_of(v)) {
            return Err(Error::Precondition(format!("label at {v} outside the cylinder below {target}")));
        }
        let delta = raising_element(self.params, anchor, ell)?;
        self.conj_compact(&delta, u)
    }

    /// `δ_{i,j} u δ_{i,j}⁻¹` (0-based, `k ≥ 2`).
    pub fn level_raise(&self, i: usize, j: usize, u: &Portrait) -> Result<Portrait> {
        if self.params.k < 2 {
            return Err(Error::Unsupported("level_raise(i, j) needs k >= 2; use level_raise_at".into()));
        }
        self.level_raise_at(&Vertex::top(i as u8), j, u)
    }

    /// `σ1·u1 = u2·σ2` with `σ2` in the saturated set (`None` when `σ2` is trivial).
    pub fn exchange(&self, sigma: &GeneratingSet, s1: u32, u1: &Portrait) -> Result<(Portrait, Option<u32>)> {
        let s = sigma.get(s1);
        let mut pieces = Vec::with_capacity(s.diagram().pieces().len());
        for p in s.diagram().pieces() {
            let x = u1.apply_inverse(&p.src);
            let i = x.component().expect("non-root leaf");
            let act = u1.component(i).section(x.branch());
            pieces.push(Piece { src: x, dst: p.dst.clone(), act });
        }
        pieces.sort();
        let raw = Diagram::from_pieces(self.params, pieces, Merge::Order)?;
        let s2 = CanonicalTreePair::from_diagram(raw.shadow())?;
        let u2 = raw.decoration_portrait();
        if s2.is_identity() {
            return Ok((u2, None));
        }
        let id = sigma
            .lookup(&s2)
            .ok_or_else(|| Error::NotInSigma("exchanged generator missing; the set is not saturated".into()))?;
        Ok((u2, Some(id)))
    }

    /// Label of the coset `gΛ`: the domain leaves of the normal form of `g⁻¹` and its range
    /// tree labeled by domain index, minimized over `D` at every caret.
    pub fn coset_key(&self, g: &DecoratedElement) -> CosetKey {
        let h = self.inverse(g);
        let pieces = h.0.pieces();
        let domain: Vec<Vertex> = pieces.iter().map(|p| p.src.clone()).collect();
        let by_dst: HashMap<&Vertex, u32> = pieces.iter().enumerate().map(|(i, p)| (&p.dst, i as u32)).collect();
        let tree = h.0.range_tree();
        let mut range = Vec::new();
        for a in 0..self.params.k {
            range.extend(self.canonical_subtree(&Vertex::top(a as u8), &tree, &by_dst));
        }
        CosetKey { domain, range }
    }

    fn canonical_subtree(
        &self,
        v: &Vertex,
        tree: &crate::tree::CompleteSubtree,
        by_dst: &HashMap<&Vertex, u32>,
    ) -> Vec<u32> {
        if !tree.is_caret(v) {
            return vec![by_dst[v]];
        }
        let kids: Vec<Vec<u32>> =
            (0..self.params.d as u8).map(|b| self.canonical_subtree(&v.child(b), tree, by_dst)).collect();
        let best = self
            .group
            .elements()
            .iter()
            .map(|pi| {
                let mut s = vec![OPEN];
                for j in 0..self.params.d as u8 {
                    s.extend_from_slice(&kids[pi.apply(j) as usize]);
                }
                s.push(CLOSE);
                s
            })
            .min()
            .expect("group has the identity");
        best
    }

    /// `u` as an element of `V_{d,k}`: it permutes the leaves of its support tree.
    pub fn portrait_pair(&self, u: &Portrait) -> Result<CanonicalTreePair> {
        self.params.check_same(&u.params())?;
        let (tree, _) = u.support_tree();
        let pieces =
            tree.leaves().into_iter().map(|y| Piece { dst: u.apply(&y), src: y, act: LocalAut::identity() }).collect();
        CanonicalTreePair::from_diagram(Diagram::from_pieces(self.params, pieces, Merge::Order)?)
    }

    /// `g = u·v` with `v` having at most `nv` carets and `u` exactly `nu` support carets.
    pub fn random_element<R: Rng>(&self, nv: usize, nu: usize, rng: &mut R) -> DecoratedElement {
        let v = random_element(self.params, nv, rng);
        let u = random_portrait(self.params, &self.group, nu, rng);
        let u = self.from_portrait(&u).expect("labels drawn from D");
        self.mul(&u, &self.from_pair(&v))
    }
}

/// Outcome of the coset-graph exploration of `V_{d,k}/D_∞^k`.
#[derive(Clone, Debug, Default)]
pub struct CosetBallReport {
    pub requested_radius: usize,
    pub completed_radius: usize,
    /// Cosets at each exact distance from the base coset.
    pub sphere_sizes: Vec<usize>,
    /// `(from, to, generator)` among discovered cosets.
    pub edges: Vec<(u32, u32, u32)>,
    /// Key matches confirmed by membership of `g2⁻¹ g1` in the compact part.
    pub confirmed_matches: usize,
    /// Key matches the membership test rejected, plus base-coset stabilizer mismatches.
    pub violations: usize,
    pub stabilizer_checks: usize,
    pub budget_exceeded: bool,
}

/// BFS on cosets `gΛ` under left multiplication by the generators. Every coset key match is
/// confirmed with `in_compact(g2⁻¹ g1)`, and every generated `g` is checked for
/// `gΛ = Λ ⟺ in_compact(g)`.
pub fn coset_ball(aaut: &Aaut, sigma: &GeneratingSet, radius: usize, max_cosets: usize) -> Result<CosetBallReport> {
    aaut.params.check_same(&sigma.params())?;
    let gens: Vec<DecoratedElement> = sigma.elements().iter().map(|s| aaut.from_pair(s)).collect();
    let id = aaut.identity();
    let base = aaut.coset_key(&id);
    let mut reps: Vec<DecoratedElement> = vec![id];
    let mut index: HashMap<CosetKey, u32> = HashMap::from([(base.clone(), 0)]);
    let mut report = CosetBallReport { requested_radius: radius, sphere_sizes: vec![1], ..Default::default() };
    let mut frontier: Vec<u32> = vec![0];
    for r in 1..=radius {
        let mut next = Vec::new();
        for &c in &frontier {
            for (sid, s) in gens.iter().enumerate() {
                let g = aaut.mul(s, &reps[c as usize]);
                let key = aaut.coset_key(&g);
                let fixes_base = key == base;
                report.stabilizer_checks += 1;
                if fixes_base != aaut.in_compact(&g) {
                    report.violations += 1;
                }
                let target = match index.get(&key) {
                    Some(&t) => {
                        let rel = aaut.mul(&aaut.inverse(&reps[t as usize]), &g);
                        if aaut.in_compact(&rel) {
                            report.confirmed_matches += 1;
                        } else {
                            report.violations += 1;
                        }
                        t
                    }
                    None => {
                        if reps.len() >= max_cosets {
                            report.budget_exceeded = true;
                            return Ok(report);
                        }
                        let t = reps.len() as u32;
                        index.insert(key, t);
                        reps.push(g);
                        next.push(t);
                        t
                    }
                };
                report.edges.push((c, target, sid as u32));
            }
        }
        report.sphere_sizes.push(next.len());
        report.completed_radius = r;
        frontier = next;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thompson::GenerationCheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx() -> Aaut {
        Aaut::new(TreeParams::new(2, 2).unwrap(), PermGroup::symmetric(2).unwrap()).unwrap()
    }

    fn swap() -> Perm {
        Perm::from_images(&[1, 0]).unwrap()
    }

    fn at(s: &str) -> Vertex {
        s.parse().unwrap()
    }

    fn single(v: &str) -> Portrait {
        Portrait::single(TreeParams::new(2, 2).unwrap(), &at(v), swap()).unwrap()
    }

    #[test]
    fn decomposition_of_swap_times_delta() {
        let a = ctx();
        let delta = CanonicalTreePair::delta(a.params(), 0, 0).unwrap();
        let u = single("a1");
        let g = a.mul(&a.from_portrait(&u).unwrap(), &a.from_pair(&delta));
        let dec = a.decompose(&g);
        assert_eq!(dec.u, u);
        assert_eq!(dec.v, delta);
        assert_eq!(a.reconstruct(&dec).unwrap(), g);
        assert!(!a.in_compact(&a.from_pair(&delta)));
        assert!(a.in_compact(&a.from_portrait(&single("a1.b2")).unwrap()));
        assert!(a.in_compact(&a.identity()));
        let pair = a.portrait_pair(&single("a1.b2")).unwrap();
        assert_eq!(a.from_pair(&pair), a.from_portrait(&single("a1.b2")).unwrap());
        assert_eq!(pair.carets(), 2);
    }

    #[test]
    fn conjugation_examples() {
        let a = ctx();
        let delta = CanonicalTreePair::delta(a.params(), 0, 0).unwrap();
        assert_eq!(a.conj_compact(&delta, &single("a1.b1.b1")).unwrap(), single("a1.b1"));
        assert!(a.conj_compact(&delta, &single("a1")).is_err());
        assert_eq!(a.level_raise(0, 0, &single("a1.b1")).unwrap(), single("a1"));
        assert_eq!(a.level_raise(0, 0, &single("a1.b1.b2")).unwrap(), single("a1.b2"));
        assert!(a.level_raise(0, 0, &single("a1.b2")).is_err());
        let id = Portrait::identity(a.params());
        assert!(a.level_raise(0, 0, &id).unwrap().is_identity());
    }

    #[test]
    fn exchange_rebuilds_the_product() {
        let a = ctx();
        let sigma = GeneratingSet::build(a.params(), 2, GenerationCheck::Skip).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let s1 = rng.gen_range(0..sigma.len() as u32);
            let u1 = random_portrait(a.params(), a.group(), rng.gen_range(0..6), &mut rng);
            let (u2, s2) = a.exchange(&sigma, s1, &u1).unwrap();
            let lhs = a.mul(&a.from_pair(sigma.get(s1)), &a.from_portrait(&u1).unwrap());
            let s2 = s2.map_or(a.identity(), |s| a.from_pair(sigma.get(s)));
            let rhs = a.mul(&a.from_portrait(&u2).unwrap(), &s2);
            assert_eq!(lhs, rhs);
            assert!(lhs.acts_like(&rhs));
        }
    }

    #[test]
    fn coset_keys_are_right_invariant() {
        let a = ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let g = a.random_element(4, 3, &mut rng);
            let lam = a.from_portrait(&random_portrait(a.params(), a.group(), 4, &mut rng)).unwrap();
            assert_eq!(a.coset_key(&g), a.coset_key(&a.mul(&g, &lam)));
            assert_eq!(a.coset_key(&g) == a.coset_key(&a.identity()), a.in_compact(&g));
        }
    }
}
