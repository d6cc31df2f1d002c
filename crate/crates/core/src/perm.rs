//! Permutations of `{0..d}` and the finite local group `D ≤ Sym(d)`.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use crate::error::{Error, Result};
use crate::tree::MAX_ARITY;

/// A permutation of `{0, .., n-1}` stored inline (`n ≤ 8`).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Perm {
    n: u8,
    img: [u8; MAX_ARITY],
}

impl Perm {
    pub fn identity(n: usize) -> Perm {
        let mut img = [0u8; MAX_ARITY];
        for (i, x) in img.iter_mut().enumerate() {
            *x = i as u8;
        }
        Perm { n: n as u8, img }
    }

    /// Build from 0-based images.
    pub fn from_images(images: &[usize]) -> Result<Perm> {
        let n = images.len();
        if n == 0 || n > MAX_ARITY {
            return Err(Error::InvalidPerm(format!("degree {n} unsupported")));
        }
        let mut seen = [false; MAX_ARITY];
        let mut p = Perm::identity(n);
        for (i, &x) in images.iter().enumerate() {
            if x >= n || seen[x] {
                return Err(Error::InvalidPerm(format!("{images:?} is not a bijection")));
            }
            seen[x] = true;
            p.img[i] = x as u8;
        }
        Ok(p)
    }

    /// Build from 1-based one-line notation, e.g. `[2, 1]`.
    pub fn from_one_line(images: &[usize]) -> Result<Perm> {
        if images.contains(&0) {
            return Err(Error::InvalidPerm(format!("{images:?}: one-line notation is 1-based")));
        }
        let zero: Vec<usize> = images.iter().map(|&x| x - 1).collect();
        Perm::from_images(&zero)
    }

    /// Parse cycle notation over 1-based points, e.g. `(1 2)(3 4)` or `()`.
    pub fn from_cycles(n: usize, text: &str) -> Result<Perm> {
        let mut img: Vec<usize> = (0..n).collect();
        let mut rest = text.trim();
        while !rest.is_empty() {
            let open = rest.strip_prefix('(').ok_or_else(|| Error::Parse(format!("cycle notation {text:?}")))?;
            let close = open.find(')').ok_or_else(|| Error::Parse(format!("unclosed cycle in {text:?}")))?;
            let pts: Vec<usize> = open[..close]
                .split([' ', ','])
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<usize>().map_err(|_| Error::Parse(format!("cycle point {s:?}"))))
                .collect::<Result<_>>()?;
            for w in 0..pts.len() {
                let (a, b) = (pts[w], pts[(w + 1) % pts.len()]);
                if a == 0 || a > n || b == 0 || b > n {
                    return Err(Error::InvalidPerm(format!("point out of range in {text:?}")));
                }
                img[a - 1] = b - 1;
            }
            rest = open[close + 1..].trim_start();
        }
        Perm::from_images(&img)
    }

    pub fn degree(&self) -> usize {
        self.n as usize
    }

    #[inline]
    pub fn apply(&self, x: u8) -> u8 {
        self.img[x as usize]
    }

    /// `self ∘ other`: apply `other` first.
    #[inline]
    pub fn compose(&self, other: &Perm) -> Perm {
        debug_assert_eq!(self.n, other.n);
        let mut out = *self;
        for i in 0..self.n as usize {
            out.img[i] = self.img[other.img[i] as usize];
        }
        out
    }

    pub fn inverse(&self) -> Perm {
        let mut out = *self;
        for i in 0..self.n as usize {
            out.img[self.img[i] as usize] = i as u8;
        }
        out
    }

    pub fn is_identity(&self) -> bool {
        (0..self.n as usize).all(|i| self.img[i] as usize == i)
    }

    pub fn images(&self) -> &[u8] {
        &self.img[..self.n as usize]
    }

    /// 1-based one-line notation.
    pub fn one_line(&self) -> Vec<usize> {
        self.images().iter().map(|&x| x as usize + 1).collect()
    }
}

impl fmt::Debug for Perm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.one_line())
    }
}

/// A permutation group `D ≤ Sym(d)` materialized by closure from its generators, with
/// multiplication and inverse tables.
#[derive(Clone, Debug)]
pub struct PermGroup {
    degree: usize,
    elements: Vec<Perm>,
    index: HashMap<Perm, usize>,
    mul: Vec<u32>,
    inv: Vec<u32>,
    generators: Vec<Perm>,
}

/// Orders beyond `8!` cannot occur; the cap guards against misuse.
const MAX_ORDER: usize = 40_320;

impl PermGroup {
    pub fn generated_by(degree: usize, generators: &[Perm]) -> Result<PermGroup> {
        if !(1..=MAX_ARITY).contains(&degree) {
            return Err(Error::InvalidParams(format!("group degree {degree}")));
        }
        if let Some(g) = generators.iter().find(|g| g.degree() != degree) {
            return Err(Error::InvalidPerm(format!("generator {g:?} has wrong degree")));
        }
        let id = Perm::identity(degree);
        let mut elements = vec![id];
        let mut index = HashMap::from([(id, 0usize)]);
        let mut queue = VecDeque::from([id]);
        while let Some(x) = queue.pop_front() {
            for g in generators {
                let y = g.compose(&x);
                if let std::collections::hash_map::Entry::Vacant(e) = index.entry(y) {
                    e.insert(elements.len());
                    elements.push(y);
                    queue.push_back(y);
                    if elements.len() > MAX_ORDER {
                        return Err(Error::Budget("local group too large".into()));
                    }
                }
            }
        }
        let n = elements.len();
        let mut mul = vec![0u32; n * n];
        for (i, a) in elements.iter().enumerate() {
            for (j, b) in elements.iter().enumerate() {
                mul[i * n + j] = index[&a.compose(b)] as u32;
            }
        }
        let inv = elements.iter().map(|a| index[&a.inverse()] as u32).collect();
        Ok(PermGroup { degree, elements, index, mul, inv, generators: generators.to_vec() })
    }

    pub fn trivial(degree: usize) -> Result<PermGroup> {
        PermGroup::generated_by(degree, &[])
    }

    /// The full symmetric group, generated by a transposition and an `n`-cycle.
    pub fn symmetric(degree: usize) -> Result<PermGroup> {
        if degree == 1 {
            return PermGroup::trivial(1);
        }
        let mut t: Vec<usize> = (0..degree).collect();
        t.swap(0, 1);
        let c: Vec<usize> = (0..degree).map(|i| (i + 1) % degree).collect();
        PermGroup::generated_by(degree, &[Perm::from_images(&t)?, Perm::from_images(&c)?])
    }

    /// Parse `sym<d>`, `trivial<d>`, `alt<d>` or a `;`-separated list of one-line generators
    /// such as `2,1,3;1,3,2`.
    pub fn parse(text: &str, degree: usize) -> Result<PermGroup> {
        let t = text.trim().to_ascii_lowercase();
        if let Some(rest) = t.strip_prefix("sym") {
            let n = if rest.is_empty() { degree } else { rest.parse().map_err(|_| Error::Parse(text.into()))? };
            check_degree(n, degree)?;
            return PermGroup::symmetric(n);
        }
        if let Some(rest) = t.strip_prefix("trivial") {
            let n = if rest.is_empty() { degree } else { rest.parse().map_err(|_| Error::Parse(text.into()))? };
            check_degree(n, degree)?;
            return PermGroup::trivial(n);
        }
        if let Some(rest) = t.strip_prefix("alt") {
            let n = if rest.is_empty() { degree } else { rest.parse().map_err(|_| Error::Parse(text.into()))? };
            check_degree(n, degree)?;
            let gens: Vec<Perm> = (0..n.saturating_sub(2))
                .map(|i| {
                    let mut img: Vec<usize> = (0..n).collect();
                    img[i] = i + 1;
                    img[i + 1] = i + 2;
                    img[i + 2] = i;
                    Perm::from_images(&img)
                })
                .collect::<Result<_>>()?;
            return PermGroup::generated_by(n, &gens);
        }
        let gens: Vec<Perm> = t
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|g| {
                let imgs: Vec<usize> = g
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| Error::Parse(format!("generator {g:?}"))))
                    .collect::<Result<_>>()?;
                Perm::from_one_line(&imgs)
            })
            .collect::<Result<_>>()?;
        PermGroup::generated_by(degree, &gens)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Perm] {
        &self.elements
    }

    pub fn generators(&self) -> &[Perm] {
        &self.generators
    }

    pub fn contains(&self, p: &Perm) -> bool {
        self.index.contains_key(p)
    }

    pub fn index_of(&self, p: &Perm) -> Option<usize> {
        self.index.get(p).copied()
    }

    /// Table product of element indices: `elements[i] ∘ elements[j]`.
    pub fn mul_index(&self, i: usize, j: usize) -> usize {
        self.mul[i * self.elements.len() + j] as usize
    }

    pub fn inv_index(&self, i: usize) -> usize {
        self.inv[i] as usize
    }

    pub fn is_trivial(&self) -> bool {
        self.elements.len() == 1
    }
}

fn check_degree(n: usize, degree: usize) -> Result<()> {
    if n != degree {
        return Err(Error::InvalidParams(format!("group degree {n} does not match arity {degree}")));
    }
    Ok(())
}
