//! The quasi-regular rooted tree `T_{d,k}`: vertices, complete rooted subtrees and the
//! planar boundary order.
//!
//! A vertex is a word whose first letter is one of the `k` root letters `a_1..a_k` and
//! whose remaining letters are among the `d` branch letters `b_1..b_d`. Letters are stored
//! 0-based; the text form is 1-based (`a1.b2.b1`).

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Largest supported branching arity. Local permutations are stored inline.
pub const MAX_ARITY: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TreeParams {
    pub d: usize,
    pub k: usize,
}

impl TreeParams {
    pub fn new(d: usize, k: usize) -> Result<Self> {
        if !(2..=MAX_ARITY).contains(&d) {
            return Err(Error::InvalidParams(format!("arity d = {d} outside 2..={MAX_ARITY}")));
        }
        if k == 0 || k > 255 {
            return Err(Error::InvalidParams(format!("root degree k = {k} outside 1..=255")));
        }
        Ok(TreeParams { d, k })
    }

    /// Leaf count of a complete subtree with `carets` carets: `(d-1)·κ + k`.
    pub fn leaf_count(&self, carets: usize) -> usize {
        (self.d - 1) * carets + self.k
    }

    pub(crate) fn check_same(&self, other: &TreeParams) -> Result<()> {
        if self != other {
            return Err(Error::ParamMismatch(*self, *other));
        }
        Ok(())
    }

    /// All vertices of the given level (level 0 is the root), in planar order.
    pub fn level_vertices(&self, level: usize) -> Vec<Vertex> {
        if level == 0 {
            return vec![Vertex::root()];
        }
        let mut out: Vec<Vertex> = (0..self.k).map(|a| Vertex::top(a as u8)).collect();
        for _ in 1..level {
            out = out.iter().flat_map(|v| (0..self.d).map(move |b| v.child(b as u8))).collect();
        }
        out
    }
}

/// Path of branch letters inside a copy of the `d`-ary tree.
pub type Path = SmallVec<[u8; 15]>;

/// A vertex of `T_{d,k}`. The empty word is the root.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vertex(Path);

/// Relative position of two vertices in the boundary order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryOrder {
    Less,
    Greater,
    /// One vertex is a prefix of the other; their cylinders are nested.
    Prefix,
}

impl Vertex {
    pub fn root() -> Self {
        Vertex(Path::new())
    }

    /// The level-one vertex `a_{i+1}`.
    pub fn top(a: u8) -> Self {
        let mut p = Path::new();
        p.push(a);
        Vertex(p)
    }

    pub fn from_letters(letters: &[u8]) -> Self {
        Vertex(Path::from_slice(letters))
    }

    pub fn letters(&self) -> &[u8] {
        &self.0
    }

    pub fn level(&self) -> usize {
        self.0.len()
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the root letter, `None` for the root.
    pub fn component(&self) -> Option<usize> {
        self.0.first().map(|&a| a as usize)
    }

    /// Branch letters after the root letter.
    pub fn branch(&self) -> &[u8] {
        if self.0.is_empty() {
            &[]
        } else {
            &self.0[1..]
        }
    }

    pub fn child(&self, letter: u8) -> Vertex {
        let mut p = self.0.clone();
        p.push(letter);
        Vertex(p)
    }

    pub fn parent(&self) -> Option<Vertex> {
        if self.0.is_empty() {
            return None;
        }
        let mut p = self.0.clone();
        p.pop();
        Some(Vertex(p))
    }

    pub fn last(&self) -> Option<u8> {
        self.0.last().copied()
    }

    pub fn concat(&self, tail: &[u8]) -> Vertex {
        let mut p = self.0.clone();
        p.extend_from_slice(tail);
        Vertex(p)
    }

    /// `true` when `self` is a (not necessarily proper) prefix of `other`.
    pub fn is_prefix_of(&self, other: &Vertex) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    /// Letters of `other` after the prefix `self`, if `self` is a prefix of `other`.
    pub fn suffix_in<'a>(&self, other: &'a Vertex) -> Option<&'a [u8]> {
        if self.is_prefix_of(other) {
            Some(&other.0[self.0.len()..])
        } else {
            None
        }
    }

    pub fn prefix(&self, len: usize) -> Vertex {
        Vertex(Path::from_slice(&self.0[..len]))
    }

    pub fn validate(&self, params: &TreeParams) -> Result<()> {
        for (i, &x) in self.0.iter().enumerate() {
            let bound = if i == 0 { params.k } else { params.d };
            if x as usize >= bound {
                return Err(Error::InvalidVertex(format!("{self} in T_{{{},{}}}", params.d, params.k)));
            }
        }
        Ok(())
    }
}

/// Boundary order of two vertices: compare the first letters after the longest common
/// prefix, or report that one is a prefix of the other.
pub fn boundary_compare(p: &Vertex, q: &Vertex) -> BoundaryOrder {
    for (x, y) in p.0.iter().zip(q.0.iter()) {
        match x.cmp(y) {
            Ordering::Less => return BoundaryOrder::Less,
            Ordering::Greater => return BoundaryOrder::Greater,
            Ordering::Equal => {}
        }
    }
    BoundaryOrder::Prefix
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &x) in self.0.iter().enumerate() {
            if i == 0 {
                write!(f, "a{}", x + 1)?;
            } else {
                write!(f, ".b{}", x + 1)?;
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_root() {
            write!(f, "<root>")
        } else {
            write!(f, "{self}")
        }
    }
}

impl FromStr for Vertex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "root" {
            return Ok(Vertex::root());
        }
        let mut p = Path::new();
        for (i, tok) in s.split('.').enumerate() {
            let (tag, num) = tok.split_at(1.min(tok.len()));
            let expected = if i == 0 { "a" } else { "b" };
            if tag != expected {
                return Err(Error::Parse(format!("vertex {s:?}: expected '{expected}' letter in {tok:?}")));
            }
            let n: usize = num.parse().map_err(|_| Error::Parse(format!("vertex {s:?}: bad index in {tok:?}")))?;
            if n == 0 || n > 256 {
                return Err(Error::Parse(format!("vertex {s:?}: index out of range in {tok:?}")));
            }
            p.push((n - 1) as u8);
        }
        Ok(Vertex(p))
    }
}

impl Serialize for Vertex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Vertex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A finite complete rooted subtree, stored as its sorted set of carets. The root with its
/// `k` children is implicit and not counted as a caret.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct CompleteSubtree {
    params: TreeParams,
    carets: BTreeSet<Vertex>,
}

impl CompleteSubtree {
    pub fn root_only(params: TreeParams) -> Self {
        CompleteSubtree { params, carets: BTreeSet::new() }
    }

    /// Accepts a caret set iff it is prefix-closed and avoids the root.
    pub fn validate<I: IntoIterator<Item = Vertex>>(params: TreeParams, carets: I) -> Result<Self> {
        let carets: BTreeSet<Vertex> = carets.into_iter().collect();
        for c in &carets {
            if c.is_root() {
                return Err(Error::InvalidTree("the root cannot be listed as a caret".into()));
            }
            c.validate(&params)?;
            if c.level() > 1 {
                let parent = c.parent().expect("non-root");
                if !carets.contains(&parent) {
                    return Err(Error::InvalidTree(format!("caret {c} present without its parent {parent}")));
                }
            }
        }
        Ok(CompleteSubtree { params, carets })
    }

    pub(crate) fn from_carets_unchecked(params: TreeParams, carets: BTreeSet<Vertex>) -> Self {
        CompleteSubtree { params, carets }
    }

    /// The smallest complete subtree having all given vertices as vertices.
    pub fn spanning(params: TreeParams, vertices: impl IntoIterator<Item = Vertex>) -> Self {
        let mut carets = BTreeSet::new();
        for v in vertices {
            for len in 1..v.level() {
                carets.insert(v.prefix(len));
            }
        }
        CompleteSubtree { params, carets }
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn carets(&self) -> &BTreeSet<Vertex> {
        &self.carets
    }

    /// Number of carets κ(T).
    pub fn caret_count(&self) -> usize {
        self.carets.len()
    }

    pub fn is_caret(&self, v: &Vertex) -> bool {
        self.carets.contains(v)
    }

    /// `true` when `v` is a vertex of the tree (root, a caret, or a leaf).
    pub fn contains_vertex(&self, v: &Vertex) -> bool {
        match v.parent() {
            None => true,
            Some(p) => p.is_root() || self.carets.contains(&p),
        }
    }

    pub fn is_leaf(&self, v: &Vertex) -> bool {
        !v.is_root() && self.contains_vertex(v) && !self.carets.contains(v)
    }

    /// Leaves in left-to-right planar order.
    pub fn leaves(&self) -> Vec<Vertex> {
        let mut out = Vec::with_capacity(self.params.leaf_count(self.carets.len()));
        for a in 0..self.params.k {
            self.collect_leaves(Vertex::top(a as u8), &mut out);
        }
        out
    }

    fn collect_leaves(&self, v: Vertex, out: &mut Vec<Vertex>) {
        if self.carets.contains(&v) {
            for b in 0..self.params.d {
                self.collect_leaves(v.child(b as u8), out);
            }
        } else {
            out.push(v);
        }
    }

    /// The caret-set union: the smallest complete subtree containing both inputs.
    pub fn common_refinement(&self, other: &CompleteSubtree) -> Result<CompleteSubtree> {
        self.params.check_same(&other.params)?;
        let carets = self.carets.union(&other.carets).cloned().collect();
        Ok(CompleteSubtree { params: self.params, carets })
    }

    pub fn contains(&self, other: &CompleteSubtree) -> bool {
        other.carets.is_subset(&self.carets)
    }

    /// Maximal level among the leaves.
    pub fn depth(&self) -> usize {
        self.carets.iter().map(|c| c.level() + 1).max().unwrap_or(1)
    }

    /// Every complete subtree with exactly `carets` carets, sorted.
    pub fn enumerate(params: TreeParams, carets: usize) -> Vec<CompleteSubtree> {
        let mut layer: BTreeSet<BTreeSet<Vertex>> = BTreeSet::new();
        layer.insert(BTreeSet::new());
        for _ in 0..carets {
            let mut next = BTreeSet::new();
            for set in &layer {
                let t = CompleteSubtree { params, carets: set.clone() };
                for leaf in t.leaves() {
                    let mut s = set.clone();
                    s.insert(leaf);
                    next.insert(s);
                }
            }
            layer = next;
        }
        layer.into_iter().map(|carets| CompleteSubtree { params, carets }).collect()
    }

    /// All images of this tree under automorphisms of `T_{d,k}`. When `fix_top` is set the
    /// level-one vertices are not permuted.
    pub fn automorphism_images(&self, fix_top: bool) -> BTreeSet<CompleteSubtree> {
        let k = self.params.k;
        // images of each level-one subtree, as caret paths relative to its top vertex
        let comps: Vec<BTreeSet<BTreeSet<Path>>> = (0..k).map(|a| self.subtree_images(&Vertex::top(a as u8))).collect();
        let perms: Vec<Vec<usize>> = if fix_top { vec![(0..k).collect()] } else { permutations(k) };
        let mut out = BTreeSet::new();
        for perm in perms {
            let mut partial: Vec<BTreeSet<Vertex>> = vec![BTreeSet::new()];
            for (a, imgs) in comps.iter().enumerate() {
                let target = Vertex::top(perm[a] as u8);
                let mut next = Vec::with_capacity(partial.len() * imgs.len());
                for base in &partial {
                    for img in imgs {
                        let mut s = base.clone();
                        s.extend(img.iter().map(|rel| target.concat(rel)));
                        next.push(s);
                    }
                }
                partial = next;
            }
            out.extend(partial.into_iter().map(|carets| CompleteSubtree { params: self.params, carets }));
        }
        out
    }

    fn subtree_images(&self, v: &Vertex) -> BTreeSet<BTreeSet<Path>> {
        let mut out = BTreeSet::new();
        if !self.carets.contains(v) {
            out.insert(BTreeSet::new());
            return out;
        }
        let d = self.params.d;
        let children: Vec<BTreeSet<BTreeSet<Path>>> = (0..d).map(|b| self.subtree_images(&v.child(b as u8))).collect();
        for perm in permutations(d) {
            // child b moves to position perm[b]
            let mut partial: Vec<BTreeSet<Path>> = vec![{
                let mut s = BTreeSet::new();
                s.insert(Path::new());
                s
            }];
            for (b, imgs) in children.iter().enumerate() {
                let mut next = Vec::with_capacity(partial.len() * imgs.len());
                for base in &partial {
                    for img in imgs {
                        let mut s = base.clone();
                        for rel in img {
                            let mut p = Path::new();
                            p.push(perm[b] as u8);
                            p.extend_from_slice(rel);
                            s.insert(p);
                        }
                        next.push(s);
                    }
                }
                partial = next;
            }
            out.extend(partial);
        }
        out
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("pivot");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> Vertex {
        s.parse().unwrap()
    }

    fn tree(p: TreeParams, cs: &[&str]) -> CompleteSubtree {
        CompleteSubtree::validate(p, cs.iter().map(|s| v(s))).unwrap()
    }

    #[test]
    fn leaves_match_caret_formula() {
        let p22 = TreeParams::new(2, 2).unwrap();
        let t = CompleteSubtree::root_only(p22);
        assert_eq!(t.leaves(), vec![v("a1"), v("a2")]);
        let t = tree(p22, &["a1"]);
        assert_eq!(t.leaves(), vec![v("a1.b1"), v("a1.b2"), v("a2")]);
        let p32 = TreeParams::new(3, 2).unwrap();
        let t = tree(p32, &["a1", "a1.b2"]);
        assert_eq!(t.leaves().len(), 6);
        assert_eq!(t.leaves().len(), p32.leaf_count(2));
    }

    #[test]
    fn refinement_cases() {
        let p = TreeParams::new(2, 2).unwrap();
        let r = CompleteSubtree::root_only(p);
        assert_eq!(r.common_refinement(&r).unwrap(), r);
        let a1 = tree(p, &["a1"]);
        let a2 = tree(p, &["a2"]);
        assert_eq!(a1.common_refinement(&a2).unwrap(), tree(p, &["a1", "a2"]));
        let deep = tree(p, &["a1", "a1.b1"]);
        assert_eq!(a1.common_refinement(&deep).unwrap(), deep);
        let other = CompleteSubtree::root_only(TreeParams::new(3, 2).unwrap());
        assert!(r.common_refinement(&other).is_err());
    }

    #[test]
    fn boundary_order_examples() {
        assert_eq!(boundary_compare(&v("a1.b1"), &v("a1.b2")), BoundaryOrder::Less);
        assert_eq!(boundary_compare(&v("a1"), &v("a1.b1")), BoundaryOrder::Prefix);
        assert_eq!(boundary_compare(&v("a2.b1.b1"), &v("a1.b2")), BoundaryOrder::Greater);
    }

    #[test]
    fn validate_rejects_bad_sets() {
        let p = TreeParams::new(2, 2).unwrap();
        assert!(CompleteSubtree::validate(p, vec![]).is_ok());
        assert!(CompleteSubtree::validate(p, vec![v("a1.b1")]).is_err());
        assert!(CompleteSubtree::validate(p, vec![Vertex::root()]).is_err());
        assert!(CompleteSubtree::validate(p, vec![v("a1"), v("a1.b2")]).is_ok());
        assert!(CompleteSubtree::validate(p, vec![v("a3")]).is_err());
    }

    #[test]
    fn vertex_text_roundtrip() {
        for s in ["a1", "a2.b1.b2", "a1.b3"] {
            assert_eq!(v(s).to_string(), s);
        }
        assert!(Vertex::from_str("b1").is_err());
        assert!(Vertex::from_str("a1.a2").is_err());
        assert_eq!(v(""), Vertex::root());
    }

    #[test]
    fn enumerate_counts() {
        let p = TreeParams::new(2, 2).unwrap();
        assert_eq!(CompleteSubtree::enumerate(p, 0).len(), 1);
        assert_eq!(CompleteSubtree::enumerate(p, 1).len(), 2);
        assert_eq!(CompleteSubtree::enumerate(p, 2).len(), 5);
        // forests of two binary trees with three internal nodes: Catalan(4)
        assert_eq!(CompleteSubtree::enumerate(p, 3).len(), 14);
    }

    #[test]
    fn automorphism_images_of_single_caret() {
        let p = TreeParams::new(2, 2).unwrap();
        let t = tree(p, &["a1"]);
        let imgs = t.automorphism_images(false);
        assert_eq!(imgs.len(), 2);
        assert_eq!(t.automorphism_images(true).len(), 1);
        let t = tree(p, &["a1", "a1.b1"]);
        // a1.b1 or a1.b2 under a1, and the mirrored pair under a2
        assert_eq!(t.automorphism_images(false).len(), 4);
        assert_eq!(t.automorphism_images(true).len(), 2);
    }
}
