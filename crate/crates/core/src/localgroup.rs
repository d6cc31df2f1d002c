//! Finitely supported `D`-labeled automorphisms: local automorphisms of the `d`-ary tree,
//! portraits in `W_k(D)` (level one fixed) and depth-truncated stand-ins for the compact group.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::perm::{Perm, PermGroup};
use crate::tree::{CompleteSubtree, Path, TreeParams, Vertex};

/// A finitely supported automorphism of the `d`-ary tree. The label at `p` permutes the
/// children of `p`; absent labels are the identity.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocalAut {
    labels: BTreeMap<Path, Perm>,
}

impl LocalAut {
    pub fn identity() -> Self {
        LocalAut::default()
    }

    /// Build from labels, dropping identity ones.
    pub fn from_labels(labels: impl IntoIterator<Item = (Path, Perm)>) -> Self {
        LocalAut { labels: labels.into_iter().filter(|(_, p)| !p.is_identity()).collect() }
    }

    /// The automorphism acting by `p` at its root only.
    pub fn root_label(p: Perm) -> Self {
        LocalAut::from_labels([(Path::new(), p)])
    }

    pub fn is_identity(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, p: &[u8]) -> Option<&Perm> {
        self.labels.get(p)
    }

    pub fn labels(&self) -> impl Iterator<Item = (&Path, &Perm)> {
        self.labels.iter()
    }

    pub fn support_size(&self) -> usize {
        self.labels.len()
    }

    pub fn apply(&self, w: &[u8]) -> Path {
        if self.labels.is_empty() {
            return Path::from_slice(w);
        }
        let mut out = Path::with_capacity(w.len());
        for i in 0..w.len() {
            let c = w[i];
            out.push(match self.labels.get(&w[..i]) {
                Some(p) => p.apply(c),
                None => c,
            });
        }
        out
    }

    pub fn apply_inverse(&self, w: &[u8]) -> Path {
        if self.labels.is_empty() {
            return Path::from_slice(w);
        }
        let mut src = Path::with_capacity(w.len());
        for &c in w {
            let x = match self.labels.get(&src[..]) {
                Some(p) => p.inverse().apply(c),
                None => c,
            };
            src.push(x);
        }
        src
    }

    /// `self ∘ other`: `other` acts first.
    pub fn compose(&self, other: &LocalAut) -> LocalAut {
        if self.is_identity() {
            return other.clone();
        }
        if other.is_identity() {
            return self.clone();
        }
        let mut labels = BTreeMap::new();
        for (v, pb) in &other.labels {
            let p = match self.labels.get(&other.apply(v)[..]) {
                Some(pa) => pa.compose(pb),
                None => *pb,
            };
            if !p.is_identity() {
                labels.insert(v.clone(), p);
            }
        }
        for (w, pa) in &self.labels {
            let v = other.apply_inverse(w);
            if !other.labels.contains_key(&v) {
                labels.insert(v, *pa);
            }
        }
        LocalAut { labels }
    }

    pub fn inverse(&self) -> LocalAut {
        LocalAut { labels: self.labels.iter().map(|(v, p)| (self.apply(v), p.inverse())).collect() }
    }

    /// The section at `s`: `self(s·w) = self(s)·section(w)`.
    pub fn section(&self, s: &[u8]) -> LocalAut {
        let labels = self
            .labels
            .range(Path::from_slice(s)..)
            .take_while(|(k, _)| k.starts_with(s))
            .map(|(k, p)| (Path::from_slice(&k[s.len()..]), *p))
            .collect();
        LocalAut { labels }
    }

    /// Labels at `s` and below, kept in place.
    pub fn restrict_below(&self, s: &[u8]) -> LocalAut {
        let labels = self
            .labels
            .range(Path::from_slice(s)..)
            .take_while(|(k, _)| k.starts_with(s))
            .map(|(k, p)| (k.clone(), *p))
            .collect();
        LocalAut { labels }
    }

    /// Root label `pi` with section `children[j]` at child `j`.
    pub fn graft(pi: Perm, children: &[LocalAut]) -> LocalAut {
        let mut labels = BTreeMap::new();
        if !pi.is_identity() {
            labels.insert(Path::new(), pi);
        }
        for (j, c) in children.iter().enumerate() {
            for (k, p) in &c.labels {
                let mut key = Path::with_capacity(k.len() + 1);
                key.push(j as u8);
                key.extend_from_slice(k);
                labels.insert(key, *p);
            }
        }
        LocalAut { labels }
    }

    /// Labels at proper descendants of the root, kept in place.
    pub fn without_root_label(&self) -> LocalAut {
        let mut labels = self.labels.clone();
        labels.remove(&Path::new()[..]);
        LocalAut { labels }
    }

    /// Number of levels on which the action is nontrivial.
    pub fn depth(&self) -> usize {
        self.labels.keys().map(|k| k.len() + 1).max().unwrap_or(0)
    }

    /// Carets of the minimal subtree (rooted here) below which every section is trivial:
    /// the prefix closure of the labeled vertices.
    pub fn support_carets(&self) -> BTreeSet<Path> {
        let mut out = BTreeSet::new();
        for k in self.labels.keys() {
            for len in (0..=k.len()).rev() {
                if !out.insert(Path::from_slice(&k[..len])) {
                    break;
                }
            }
        }
        out
    }

    pub fn caret_count(&self) -> usize {
        self.support_carets().len()
    }

    pub fn labels_in(&self, group: &PermGroup) -> bool {
        self.labels.values().all(|p| p.degree() == group.degree() && group.contains(p))
    }
}

impl fmt::Debug for LocalAut {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.labels.iter().map(|(k, p)| (k.as_slice(), p))).finish()
    }
}

/// A finitely supported element of `W_k(D)`: one local automorphism below each `a_i`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Portrait {
    params: TreeParams,
    comps: Vec<LocalAut>,
}

impl Portrait {
    pub fn identity(params: TreeParams) -> Self {
        Portrait { params, comps: vec![LocalAut::identity(); params.k] }
    }

    pub fn from_components(params: TreeParams, comps: Vec<LocalAut>) -> Result<Self> {
        if comps.len() != params.k {
            return Err(Error::InvalidParams(format!("{} components for k = {}", comps.len(), params.k)));
        }
        for c in &comps {
            if let Some((v, p)) =
                c.labels().find(|(v, p)| p.degree() != params.d || v.iter().any(|&x| x as usize >= params.d))
            {
                return Err(Error::InvalidPerm(format!("label {p:?} at relative path {v:?}")));
            }
        }
        Ok(Portrait { params, comps })
    }

    /// Labels at non-root vertices; identity labels are dropped.
    pub fn from_labels(params: TreeParams, labels: impl IntoIterator<Item = (Vertex, Perm)>) -> Result<Self> {
        let mut comps: Vec<BTreeMap<Path, Perm>> = vec![BTreeMap::new(); params.k];
        for (v, p) in labels {
            v.validate(&params)?;
            let i = v.component().ok_or_else(|| Error::InvalidVertex("portraits carry no root label".into()))?;
            if p.degree() != params.d {
                return Err(Error::InvalidPerm(format!("label at {v} has degree {}", p.degree())));
            }
            if comps[i].insert(Path::from_slice(v.branch()), p).is_some() {
                return Err(Error::InvalidParams(format!("duplicate label at {v}")));
            }
        }
        let comps = comps.into_iter().map(LocalAut::from_labels).collect();
        Ok(Portrait { params, comps })
    }

    /// Single label `p` at `v`.
    pub fn single(params: TreeParams, v: &Vertex, p: Perm) -> Result<Self> {
        Portrait::from_labels(params, [(v.clone(), p)])
    }

    /// Places `a` below `a_i`.
    pub fn component_portrait(params: TreeParams, i: usize, a: LocalAut) -> Self {
        let mut u = Portrait::identity(params);
        u.comps[i] = a;
        u
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn components(&self) -> &[LocalAut] {
        &self.comps
    }

    pub fn component(&self, i: usize) -> &LocalAut {
        &self.comps[i]
    }

    pub fn into_components(self) -> Vec<LocalAut> {
        self.comps
    }

    pub fn is_identity(&self) -> bool {
        self.comps.iter().all(LocalAut::is_identity)
    }

    /// Indices of components carrying labels.
    pub fn nontrivial_components(&self) -> Vec<usize> {
        (0..self.params.k).filter(|&i| !self.comps[i].is_identity()).collect()
    }

    pub fn labels(&self) -> impl Iterator<Item = (Vertex, Perm)> + '_ {
        self.comps.iter().enumerate().flat_map(|(i, c)| {
            c.labels().map(move |(p, perm)| {
                let mut v = Vertex::top(i as u8);
                v = v.concat(p);
                (v, *perm)
            })
        })
    }

    pub fn top_label(&self, v: &Vertex) -> Option<Perm> {
        let i = v.component()?;
        self.comps.get(i)?.label(v.branch()).copied()
    }

    pub fn apply(&self, v: &Vertex) -> Vertex {
        match v.component() {
            None => Vertex::root(),
            Some(i) => Vertex::top(i as u8).concat(&self.comps[i].apply(v.branch())),
        }
    }

    pub fn apply_inverse(&self, v: &Vertex) -> Vertex {
        match v.component() {
            None => Vertex::root(),
            Some(i) => Vertex::top(i as u8).concat(&self.comps[i].apply_inverse(v.branch())),
        }
    }

    /// `self ∘ other`.
    pub fn mul(&self, other: &Portrait) -> Result<Portrait> {
        self.params.check_same(&other.params)?;
        let comps = self.comps.iter().zip(&other.comps).map(|(a, b)| a.compose(b)).collect();
        Ok(Portrait { params: self.params, comps })
    }

    pub fn inverse(&self) -> Portrait {
        Portrait { params: self.params, comps: self.comps.iter().map(LocalAut::inverse).collect() }
    }

    /// The minimal complete subtree with trivial leaf sections, and its caret count.
    pub fn support_tree(&self) -> (CompleteSubtree, usize) {
        let mut carets = BTreeSet::new();
        for (i, c) in self.comps.iter().enumerate() {
            for p in c.support_carets() {
                carets.insert(Vertex::top(i as u8).concat(&p));
            }
        }
        let n = carets.len();
        (CompleteSubtree::from_carets_unchecked(self.params, carets), n)
    }

    /// Caret count `κ` of the support tree.
    pub fn kappa(&self) -> usize {
        self.comps.iter().map(LocalAut::caret_count).sum()
    }

    /// Deepest level of a vertex moved by the portrait.
    pub fn depth(&self) -> usize {
        self.comps.iter().map(|c| if c.is_identity() { 0 } else { 1 + c.depth() }).max().unwrap_or(0)
    }

    /// Labels at `v` and below. Requires that `u` fixes `v` and carries no label strictly
    /// between `a_i` and `v`.
    pub fn restrict(&self, v: &Vertex) -> Result<Portrait> {
        let i = v.component().ok_or_else(|| Error::Precondition("restriction to the root".into()))?;
        let b = v.branch();
        for len in 0..b.len() {
            if self.comps[i].label(&b[..len]).is_some() {
                return Err(Error::Precondition(format!("label above {v} inside its component")));
            }
        }
        Ok(Portrait::component_portrait(self.params, i, self.comps[i].restrict_below(b)))
    }

    pub fn labels_in(&self, group: &PermGroup) -> bool {
        self.comps.iter().all(|c| c.labels_in(group))
    }

    pub fn check_in(&self, group: &PermGroup) -> Result<()> {
        for (v, p) in self.labels() {
            if !group.contains(&p) {
                return Err(Error::LabelOutsideGroup(format!("{v}: {p:?}")));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Portrait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.labels().map(|(v, p)| (v.to_string(), p))).finish()
    }
}

/// A level-truncated automorphism in `W_k(D)`: labels at every vertex of levels `1..=m`,
/// which fixes the action down to level `m + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncatedAutomorphism {
    params: TreeParams,
    depth: usize,
    labels: BTreeMap<Vertex, Perm>,
}

impl TruncatedAutomorphism {
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn labels(&self) -> &BTreeMap<Vertex, Perm> {
        &self.labels
    }

    pub fn label_count(&self) -> usize {
        self.labels.len()
    }

    /// The finitely supported representative with identity labels below level `m`.
    pub fn to_portrait(&self) -> Portrait {
        Portrait::from_labels(self.params, self.labels.iter().map(|(v, p)| (v.clone(), *p)))
            .expect("validated at sampling")
    }

    pub fn is_identity(&self) -> bool {
        self.labels.values().all(Perm::is_identity)
    }
}

/// Uniform labels from `D` at every vertex of levels `1..=m`.
pub fn sample_truncated<R: Rng>(
    params: TreeParams,
    group: &PermGroup,
    m: usize,
    rng: &mut R,
) -> Result<TruncatedAutomorphism> {
    if m == 0 {
        return Err(Error::InvalidParams("truncation depth must be at least 1".into()));
    }
    if group.degree() != params.d {
        return Err(Error::InvalidParams("local group degree differs from d".into()));
    }
    let mut labels = BTreeMap::new();
    for level in 1..=m {
        for v in params.level_vertices(level) {
            labels.insert(v, random_element(group, rng));
        }
    }
    Ok(TruncatedAutomorphism { params, depth: m, labels })
}

/// A finitely supported element of the coset of `t`: `t`'s labels, uniform labels on the next
/// `extra` levels, identity below.
pub fn lift_random<R: Rng>(t: &TruncatedAutomorphism, group: &PermGroup, extra: usize, rng: &mut R) -> Portrait {
    let mut labels: Vec<(Vertex, Perm)> = t.labels.iter().map(|(v, p)| (v.clone(), *p)).collect();
    for level in t.depth + 1..=t.depth + extra {
        for v in t.params.level_vertices(level) {
            labels.push((v, random_element(group, rng)));
        }
    }
    Portrait::from_labels(t.params, labels).expect("levels are disjoint")
}

/// `|D|^κ(T)`: the number of `D`-labelings of the carets of `T`, i.e. the index of the
/// pointwise stabilizer of `T` in `W_k(D)`.
pub fn truncation_index(tree: &CompleteSubtree, group: &PermGroup) -> Result<u128> {
    (group.order() as u128)
        .checked_pow(tree.caret_count() as u32)
        .ok_or_else(|| Error::Budget("truncation index overflows u128".into()))
}

pub fn random_element<R: Rng>(group: &PermGroup, rng: &mut R) -> Perm {
    group.elements()[rng.gen_range(0..group.order())]
}

pub fn random_nontrivial<R: Rng>(group: &PermGroup, rng: &mut R) -> Option<Perm> {
    if group.is_trivial() {
        return None;
    }
    Some(group.elements()[rng.gen_range(1..group.order())])
}

/// A random local automorphism with exactly `n` support carets (`n ≥ 1`, `D` nontrivial).
/// The caret tree grows at random leaves; caret-tree leaves get nontrivial labels, inner
/// carets get uniform labels.
pub fn random_local<R: Rng>(d: usize, group: &PermGroup, n: usize, rng: &mut R) -> LocalAut {
    if n == 0 || group.is_trivial() {
        return LocalAut::identity();
    }
    let mut carets: Vec<Path> = vec![Path::new()];
    let mut set: BTreeSet<Path> = carets.iter().cloned().collect();
    while carets.len() < n {
        let parent = carets[rng.gen_range(0..carets.len())].clone();
        let mut child = parent;
        child.push(rng.gen_range(0..d) as u8);
        if set.insert(child.clone()) {
            carets.push(child);
        }
    }
    let labels = set.iter().map(|c| {
        let has_child = (0..d as u8).any(|b| {
            let mut ch = c.clone();
            ch.push(b);
            set.contains(&ch)
        });
        let p = if has_child {
            random_element(group, rng)
        } else {
            random_nontrivial(group, rng).expect("nontrivial group")
        };
        (c.clone(), p)
    });
    LocalAut::from_labels(labels)
}

/// A random portrait whose nontrivial components are drawn by [`random_local`] with caret
/// counts summing to `n`.
pub fn random_portrait<R: Rng>(params: TreeParams, group: &PermGroup, n: usize, rng: &mut R) -> Portrait {
    let mut counts = vec![0usize; params.k];
    for _ in 0..n {
        counts[rng.gen_range(0..params.k)] += 1;
    }
    let comps = counts.iter().map(|&c| random_local(params.d, group, c, rng)).collect();
    Portrait { params, comps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p22() -> TreeParams {
        TreeParams::new(2, 2).unwrap()
    }

    fn swap() -> Perm {
        Perm::from_images(&[1, 0]).unwrap()
    }

    fn at(s: &str) -> Vertex {
        s.parse().unwrap()
    }

    #[test]
    fn swap_at_a1_moves_its_children() {
        let u = Portrait::single(p22(), &at("a1"), swap()).unwrap();
        assert_eq!(u.apply(&at("a1.b1")), at("a1.b2"));
        assert_eq!(u.apply(&at("a2.b1")), at("a2.b1"));
        assert_eq!(u.apply(&at("a1")), at("a1"));
    }

    #[test]
    fn products_transport_labels() {
        let s1 = Portrait::single(p22(), &at("a1"), swap()).unwrap();
        let s11 = Portrait::single(p22(), &at("a1.b1"), swap()).unwrap();
        assert!(s1.mul(&s1).unwrap().is_identity());
        // The left factor acts last, so the label at a1.b1 is carried to a1.b2.
        let p = s11.mul(&s1).unwrap();
        let labels: Vec<String> = p.labels().map(|(v, _)| v.to_string()).collect();
        assert_eq!(labels, vec!["a1", "a1.b2"]);
        for v in p22().level_vertices(3) {
            assert_eq!(p.apply(&v), s11.apply(&s1.apply(&v)));
        }
    }

    #[test]
    fn support_tree_counts() {
        assert_eq!(Portrait::identity(p22()).kappa(), 0);
        assert_eq!(Portrait::single(p22(), &at("a1"), swap()).unwrap().kappa(), 1);
        let u = Portrait::single(p22(), &at("a1.b1"), swap()).unwrap();
        let (t, n) = u.support_tree();
        assert_eq!(n, 2);
        assert!(t.is_caret(&at("a1")) && t.is_caret(&at("a1.b1")));
    }

    #[test]
    fn restrict_keeps_the_subtree() {
        let u = Portrait::from_labels(p22(), [(at("a1.b1"), swap()), (at("a2.b1"), swap())]).unwrap();
        let r = u.restrict(&at("a1")).unwrap();
        assert_eq!(r.labels().count(), 1);
        assert_eq!(r.top_label(&at("a1.b1")), Some(swap()));
        let top = Portrait::from_labels(p22(), [(at("a1"), swap()), (at("a1.b1"), swap())]).unwrap();
        assert!(top.restrict(&at("a1.b1")).is_err());
    }

    #[test]
    fn truncation_sampling() {
        let g = PermGroup::symmetric(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = sample_truncated(p22(), &g, 2, &mut rng).unwrap();
        assert_eq!(t.label_count(), 6);
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_truncated(p22(), &g, 2, &mut rng2).unwrap(), t);
        let triv = PermGroup::trivial(2).unwrap();
        assert!(sample_truncated(p22(), &triv, 3, &mut rng).unwrap().is_identity());
        let lifted = lift_random(&t, &g, 2, &mut rng);
        for v in p22().level_vertices(3) {
            assert_eq!(lifted.apply(&v), t.to_portrait().apply(&v));
        }
    }

    #[test]
    fn truncation_index_values() {
        let s2 = PermGroup::symmetric(2).unwrap();
        let s3 = PermGroup::symmetric(3).unwrap();
        let p32 = TreeParams::new(3, 2).unwrap();
        assert_eq!(truncation_index(&CompleteSubtree::root_only(p22()), &s2).unwrap(), 1);
        let t1 = CompleteSubtree::validate(p22(), [at("a1")]).unwrap();
        assert_eq!(truncation_index(&t1, &s2).unwrap(), 2);
        let t2 = CompleteSubtree::validate(p32, [at("a1"), at("a1.b2")]).unwrap();
        assert_eq!(truncation_index(&t2, &s3).unwrap(), 36);
    }

    #[test]
    fn random_local_has_exact_kappa() {
        let g = PermGroup::symmetric(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for n in 1..15 {
            assert_eq!(random_local(3, &g, n, &mut rng).caret_count(), n);
        }
    }
}
