//! Piecewise description of an almost automorphism: finitely many cylinders mapped onto
//! cylinders, each followed by a finitely supported local automorphism.

use rand::Rng;

use crate::error::{Error, Result};
use crate::localgroup::{LocalAut, Portrait};
use crate::perm::{Perm, PermGroup};
use crate::tree::{CompleteSubtree, TreeParams, Vertex};

/// `g(src·w) = dst·act(w)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Piece {
    pub src: Vertex,
    pub dst: Vertex,
    pub act: LocalAut,
}

/// Which sibling groups may be fused into one piece.
#[derive(Clone, Copy, Debug)]
pub enum Merge<'a> {
    /// Only order-preserving fusion: the `V_{d,k}` normal form.
    Order,
    /// Fusion whenever the induced child permutation lies in `D`.
    Local(&'a PermGroup),
}

impl Merge<'_> {
    fn allows(&self, pi: &Perm) -> bool {
        match self {
            Merge::Order => pi.is_identity(),
            Merge::Local(g) => g.contains(pi),
        }
    }
}

/// Pieces sorted by source; sources are the leaves of one complete subtree, destinations
/// the leaves of another.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Diagram {
    params: TreeParams,
    pieces: Vec<Piece>,
}

impl Diagram {
    pub fn identity(params: TreeParams) -> Self {
        let pieces = (0..params.k as u8)
            .map(|a| Piece { src: Vertex::top(a), dst: Vertex::top(a), act: LocalAut::identity() })
            .collect();
        Diagram { params, pieces }
    }

    /// Validates that sources and destinations are leaf sets of complete subtrees, then
    /// reduces.
    pub fn from_pieces(params: TreeParams, mut pieces: Vec<Piece>, merge: Merge) -> Result<Self> {
        pieces.sort();
        for p in &pieces {
            p.src.validate(&params)?;
            p.dst.validate(&params)?;
            if p.act
                .labels()
                .any(|(path, perm)| perm.degree() != params.d || path.iter().any(|&x| x as usize >= params.d))
            {
                return Err(Error::InvalidPair(format!("local action at {} has the wrong degree", p.src)));
            }
        }
        check_leaf_set(params, pieces.iter().map(|p| &p.src), "domain")?;
        check_leaf_set(params, pieces.iter().map(|p| &p.dst), "range")?;
        Ok(Diagram { params, pieces }.reduced(merge))
    }

    /// Pieces assumed valid and sorted.
    pub(crate) fn from_sorted_unchecked(params: TreeParams, pieces: Vec<Piece>) -> Self {
        Diagram { params, pieces }
    }

    pub fn from_portrait(u: &Portrait) -> Self {
        let pieces = u
            .components()
            .iter()
            .enumerate()
            .map(|(i, a)| Piece { src: Vertex::top(i as u8), dst: Vertex::top(i as u8), act: a.clone() })
            .collect();
        Diagram { params: u.params(), pieces }
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn is_identity(&self) -> bool {
        self.pieces.len() == self.params.k && self.pieces.iter().all(|p| p.src == p.dst && p.act.is_identity())
    }

    pub fn has_trivial_actions(&self) -> bool {
        self.pieces.iter().all(|p| p.act.is_identity())
    }

    pub fn domain_tree(&self) -> CompleteSubtree {
        CompleteSubtree::spanning(self.params, self.pieces.iter().map(|p| p.src.clone()))
    }

    pub fn range_tree(&self) -> CompleteSubtree {
        CompleteSubtree::spanning(self.params, self.pieces.iter().map(|p| p.dst.clone()))
    }

    /// Caret count of the domain tree (equal to that of the range tree).
    pub fn carets(&self) -> usize {
        (self.pieces.len() - self.params.k) / (self.params.d - 1)
    }

    pub fn max_src_level(&self) -> usize {
        self.pieces.iter().map(|p| p.src.level()).max().unwrap_or(0)
    }

    pub fn max_dst_level(&self) -> usize {
        self.pieces.iter().map(|p| p.dst.level()).max().unwrap_or(0)
    }

    pub fn act_depth(&self) -> usize {
        self.pieces.iter().map(|p| p.act.depth()).max().unwrap_or(0)
    }

    /// Level from which `g(x·w) = g(x)·w` for every vertex `x` at that level.
    pub fn stable_level(&self) -> usize {
        self.pieces.iter().map(|p| p.src.level() + p.act.depth()).max().unwrap_or(1).max(1)
    }

    /// Index of the piece whose source is a prefix of `x`.
    pub fn piece_index(&self, x: &Vertex) -> Option<usize> {
        let i = self.pieces.partition_point(|p| p.src <= *x);
        (i > 0 && self.pieces[i - 1].src.is_prefix_of(x)).then(|| i - 1)
    }

    /// Image of `x`; `None` if `x` lies strictly inside the domain tree.
    pub fn apply(&self, x: &Vertex) -> Option<Vertex> {
        let p = &self.pieces[self.piece_index(x)?];
        let tail = p.src.suffix_in(x).expect("prefix");
        Some(p.dst.concat(&p.act.apply(tail)))
    }

    pub fn inverse(&self, merge: Merge) -> Diagram {
        let mut pieces: Vec<Piece> = self
            .pieces
            .iter()
            .map(|p| Piece { src: p.dst.clone(), dst: p.src.clone(), act: p.act.inverse() })
            .collect();
        pieces.sort();
        Diagram { params: self.params, pieces }.reduced(merge)
    }

    /// `self ∘ other`: `other` acts first.
    pub fn compose(&self, other: &Diagram, merge: Merge) -> Result<Diagram> {
        self.params.check_same(&other.params)?;
        let mut out = Vec::with_capacity(self.pieces.len() + other.pieces.len());
        for Piece { src: x, dst: y, act: a } in &other.pieces {
            let start = self.pieces.partition_point(|p| p.src < *y);
            if start > 0 && self.pieces[start - 1].src.is_prefix_of(y) {
                let Piece { dst: t, act: b, src: z } = &self.pieces[start - 1];
                let s = z.suffix_in(y).expect("prefix");
                out.push(Piece { src: x.clone(), dst: t.concat(&b.apply(s)), act: b.section(s).compose(a) });
                continue;
            }
            for Piece { src: z, dst: t, act: b } in self.pieces[start..].iter().take_while(|p| y.is_prefix_of(&p.src)) {
                let s = y.suffix_in(z).expect("prefix");
                let pre = a.apply_inverse(s);
                out.push(Piece { src: x.concat(&pre), dst: t.clone(), act: b.compose(&a.section(&pre)) });
            }
        }
        out.sort();
        Ok(Diagram { params: self.params, pieces: out }.reduced(merge))
    }

    /// Fuses sibling groups bottom-up until none remains; the result is the unique normal
    /// form whose pieces are the maximal fusable cylinders.
    pub fn reduced(self, merge: Merge) -> Diagram {
        let d = self.params.d;
        let mut stack: Vec<Piece> = Vec::with_capacity(self.pieces.len());
        for piece in self.pieces {
            stack.push(piece);
            while stack.len() >= d {
                let start = stack.len() - d;
                match fusion(&stack[start..], d, merge) {
                    Some(fused) => {
                        stack.truncate(start);
                        stack.push(fused);
                    }
                    None => break,
                }
            }
        }
        Diagram { params: self.params, pieces: stack }
    }

    /// Start indices of every fusable sibling group.
    pub fn fusable_groups(&self, merge: Merge) -> Vec<usize> {
        let d = self.params.d;
        (0..self.pieces.len().saturating_sub(d - 1))
            .filter(|&i| fusion(&self.pieces[i..i + d], d, merge).is_some())
            .collect()
    }

    /// Fuses the group starting at `i`; panics if it is not fusable.
    pub fn fuse_at(&mut self, i: usize, merge: Merge) {
        let d = self.params.d;
        let fused = fusion(&self.pieces[i..i + d], d, merge).expect("fusable group");
        self.pieces.splice(i..i + d, [fused]);
    }

    /// Splits piece `i` into its `d` children.
    pub fn expand_at(&mut self, i: usize) {
        let p = self.pieces[i].clone();
        let root = p.act.label(&[]).copied();
        let children: Vec<Piece> = (0..self.params.d as u8)
            .map(|j| Piece {
                src: p.src.child(j),
                dst: p.dst.child(root.map_or(j, |r| r.apply(j))),
                act: p.act.section(&[j]),
            })
            .collect();
        self.pieces.splice(i..=i, children);
    }

    /// Fuses random fusable groups until none remains.
    pub fn reduce_randomly<R: Rng>(mut self, merge: Merge, rng: &mut R) -> Diagram {
        loop {
            let groups = self.fusable_groups(merge);
            if groups.is_empty() {
                return self;
            }
            let i = groups[rng.gen_range(0..groups.len())];
            self.fuse_at(i, merge);
        }
    }

    /// Expands `steps` randomly chosen pieces.
    pub fn expand_randomly<R: Rng>(mut self, steps: usize, rng: &mut R) -> Diagram {
        for _ in 0..steps {
            let i = rng.gen_range(0..self.pieces.len());
            self.expand_at(i);
        }
        self
    }

    /// Images of every vertex at `level`, in order; `None` when the level is too shallow.
    pub fn level_table(&self, level: usize) -> Option<Vec<Vertex>> {
        self.params.level_vertices(level).iter().map(|v| self.apply(v)).collect()
    }

    /// Prefix-action equality: compare images of every vertex at a level beyond which both
    /// elements act by suffix-preserving translation.
    pub fn acts_like(&self, other: &Diagram) -> bool {
        if self.params != other.params {
            return false;
        }
        let level = self.stable_level().max(other.stable_level()) + 1;
        self.params.level_vertices(level).iter().all(|v| self.apply(v) == other.apply(v))
    }

    /// The order-preserving shadow: same leaf map, trivial local actions.
    pub fn shadow(&self) -> Diagram {
        let pieces = self
            .pieces
            .iter()
            .map(|p| Piece { src: p.src.clone(), dst: p.dst.clone(), act: LocalAut::identity() })
            .collect();
        Diagram { params: self.params, pieces }
    }

    /// The portrait applying each piece's local action below its destination, if every
    /// destination has level at least one (always true).
    pub fn decoration_portrait(&self) -> Portrait {
        let labels = self
            .pieces
            .iter()
            .flat_map(|p| p.act.labels().map(move |(path, perm)| (p.dst.concat(path), *perm)).collect::<Vec<_>>());
        Portrait::from_labels(self.params, labels).expect("destinations are distinct leaves")
    }
}

/// The fused piece if `group` consists of all children `p·j` of one non-root `p`, mapped
/// onto all children of one non-root `q` by an allowed permutation.
fn fusion(group: &[Piece], d: usize, merge: Merge) -> Option<Piece> {
    let p = group[0].src.parent()?;
    let q = group[0].dst.parent()?;
    if p.is_root() || q.is_root() {
        return None;
    }
    let mut images = [0usize; crate::tree::MAX_ARITY];
    for (j, piece) in group.iter().enumerate() {
        if piece.src.level() != p.level() + 1 || piece.src.last() != Some(j as u8) || !p.is_prefix_of(&piece.src) {
            return None;
        }
        if piece.dst.level() != q.level() + 1 || !q.is_prefix_of(&piece.dst) {
            return None;
        }
        images[j] = piece.dst.last().expect("non-root") as usize;
    }
    let pi = Perm::from_images(&images[..d]).ok()?;
    if !merge.allows(&pi) {
        return None;
    }
    let acts: Vec<LocalAut> = group.iter().map(|g| g.act.clone()).collect();
    Some(Piece { src: p, dst: q, act: LocalAut::graft(pi, &acts) })
}

fn check_leaf_set<'a>(params: TreeParams, leaves: impl Iterator<Item = &'a Vertex> + Clone, what: &str) -> Result<()> {
    let mut given: Vec<Vertex> = leaves.clone().cloned().collect();
    if given.iter().any(Vertex::is_root) {
        return Err(Error::InvalidPair(format!("{what} contains the root as a leaf")));
    }
    given.sort();
    let tree = CompleteSubtree::spanning(params, given.iter().cloned());
    if tree.leaves() != given {
        return Err(Error::InvalidPair(format!("{what} vertices are not the leaves of a complete subtree")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn at(s: &str) -> Vertex {
        s.parse().unwrap()
    }

    fn piece(s: &str, d: &str) -> Piece {
        Piece { src: at(s), dst: at(d), act: LocalAut::identity() }
    }

    #[test]
    fn padded_identity_reduces() {
        let p = TreeParams::new(2, 2).unwrap();
        let g = Diagram::from_pieces(
            p,
            vec![piece("a1.b1", "a1.b1"), piece("a1.b2", "a1.b2"), piece("a2", "a2")],
            Merge::Order,
        )
        .unwrap();
        assert!(g.is_identity());
        let swap = Diagram::from_pieces(
            p,
            vec![piece("a1.b1", "a1.b2"), piece("a1.b2", "a1.b1"), piece("a2", "a2")],
            Merge::Order,
        )
        .unwrap();
        assert_eq!(swap.carets(), 1);
        let s2 = PermGroup::symmetric(2).unwrap();
        let fused = swap.clone().reduced(Merge::Local(&s2));
        assert_eq!(fused.carets(), 0);
        assert!(fused.acts_like(&swap));
    }

    #[test]
    fn rejects_non_leaf_sets() {
        let p = TreeParams::new(2, 2).unwrap();
        assert!(Diagram::from_pieces(p, vec![piece("a1.b1", "a1"), piece("a2", "a2")], Merge::Order).is_err());
    }

    #[test]
    fn compose_matches_pointwise_action() {
        let p = TreeParams::new(2, 2).unwrap();
        let g = Diagram::from_pieces(
            p,
            vec![piece("a1.b1", "a1"), piece("a1.b2", "a2.b2"), piece("a2", "a2.b1")],
            Merge::Order,
        )
        .unwrap();
        let h = g.compose(&g, Merge::Order).unwrap();
        for v in p.level_vertices(6) {
            assert_eq!(h.apply(&v), g.apply(&g.apply(&v).unwrap()));
        }
        assert!(g.compose(&g.inverse(Merge::Order), Merge::Order).unwrap().is_identity());
    }

    #[test]
    fn random_reduction_orders_agree() {
        let p = TreeParams::new(3, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Diagram::from_pieces(
            p,
            vec![piece("a1.b1", "a2"), piece("a1.b2", "a1.b3"), piece("a1.b3", "a1.b1"), piece("a2", "a1.b2")],
            Merge::Order,
        )
        .unwrap();
        for _ in 0..50 {
            let big = g.clone().expand_randomly(6, &mut rng);
            assert_eq!(big.reduce_randomly(Merge::Order, &mut rng), g);
        }
    }
}
