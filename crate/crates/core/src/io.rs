//! JSON forms of elements, portraits and rewrite traces.
//!
//! Vertices use the dotted text form (`a1.b2`); permutations use 1-based one-line notation.
//! A tree is written as its sorted caret list, a leaf bijection as `[domain leaf, range leaf]`
//! pairs, and a decoration as `[vertex, permutation]` labels below domain leaves.

use serde::{Deserialize, Serialize};

use crate::aaut::{Aaut, DecoratedElement};
use crate::diagram::{Diagram, Merge, Piece};
use crate::error::{Error, Result};
use crate::localgroup::{LocalAut, Portrait};
use crate::perm::Perm;
use crate::presentation::{Family, Letter, RewriteTrace, Step};
use crate::thompson::{CanonicalTreePair, TreePair};
use crate::tree::{CompleteSubtree, Path, TreeParams, Vertex};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementJson {
    pub domain: Vec<Vertex>,
    pub range: Vec<Vertex>,
    pub map: Vec<[Vertex; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decorations: Vec<(Vertex, Vec<usize>)>,
}

pub type PortraitJson = Vec<(Vertex, Vec<usize>)>;

fn perm_from_json(d: usize, images: &[usize]) -> Result<Perm> {
    if images.len() != d {
        return Err(Error::InvalidPerm(format!("{images:?} has degree {}, expected {d}", images.len())));
    }
    Perm::from_one_line(images)
}

pub fn portrait_to_json(u: &Portrait) -> PortraitJson {
    u.labels().map(|(v, p)| (v, p.one_line())).collect()
}

pub fn portrait_from_json(params: TreeParams, json: &PortraitJson) -> Result<Portrait> {
    let labels = json.iter().map(|(v, p)| Ok((v.clone(), perm_from_json(params.d, p)?))).collect::<Result<Vec<_>>>()?;
    Portrait::from_labels(params, labels)
}

fn diagram_to_json(g: &Diagram) -> ElementJson {
    let mut decorations = Vec::new();
    for piece in g.pieces() {
        for (path, p) in piece.act.labels() {
            decorations.push((piece.src.concat(path), p.one_line()));
        }
    }
    ElementJson {
        domain: g.domain_tree().carets().iter().cloned().collect(),
        range: g.range_tree().carets().iter().cloned().collect(),
        map: g.pieces().iter().map(|p| [p.src.clone(), p.dst.clone()]).collect(),
        decorations,
    }
}

pub fn pair_to_json(v: &CanonicalTreePair) -> ElementJson {
    diagram_to_json(v.diagram())
}

pub fn element_to_json(g: &DecoratedElement) -> ElementJson {
    diagram_to_json(g.diagram())
}

/// Pieces described by a JSON element, after checking both trees and the bijection.
fn pieces_from_json(params: TreeParams, json: &ElementJson) -> Result<Vec<Piece>> {
    let dom = CompleteSubtree::validate(params, json.domain.iter().cloned())?;
    let ran = CompleteSubtree::validate(params, json.range.iter().cloned())?;
    let map: Vec<(Vertex, Vertex)> = json.map.iter().map(|[a, b]| (a.clone(), b.clone())).collect();
    let pair = TreePair::from_map(dom, ran, &map)?;
    let dom_leaves = pair.domain().leaves();
    let ran_leaves = pair.range().leaves();
    let mut pieces: Vec<Piece> = dom_leaves
        .iter()
        .zip(pair.images())
        .map(|(src, &j)| Piece { src: src.clone(), dst: ran_leaves[j].clone(), act: LocalAut::identity() })
        .collect();
    let mut labels: Vec<Vec<(Path, Perm)>> = vec![Vec::new(); pieces.len()];
    for (v, images) in &json.decorations {
        let i = pieces
            .iter()
            .position(|p| p.src.is_prefix_of(v))
            .ok_or_else(|| Error::InvalidVertex(format!("decoration at {v} is not below a domain leaf")))?;
        let rel = pieces[i].src.suffix_in(v).expect("prefix checked");
        labels[i].push((Path::from_slice(rel), perm_from_json(params.d, images)?));
    }
    for (piece, l) in pieces.iter_mut().zip(labels) {
        piece.act = LocalAut::from_labels(l);
    }
    Ok(pieces)
}

pub fn pair_from_json(params: TreeParams, json: &ElementJson) -> Result<CanonicalTreePair> {
    if !json.decorations.is_empty() {
        return Err(Error::Precondition("tree pair JSON carries decorations".into()));
    }
    CanonicalTreePair::from_diagram(Diagram::from_pieces(params, pieces_from_json(params, json)?, Merge::Order)?)
}

pub fn element_from_json(aaut: &Aaut, json: &ElementJson) -> Result<DecoratedElement> {
    aaut.from_pieces(pieces_from_json(aaut.params(), json)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LetterJson {
    Sigma(u32),
    Compact(PortraitJson),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepJson {
    pub position: usize,
    pub family: Family,
    pub before: Vec<LetterJson>,
    pub after: Vec<LetterJson>,
}

pub fn letter_to_json(l: &Letter) -> LetterJson {
    match l {
        Letter::Sigma(s) => LetterJson::Sigma(*s),
        Letter::Compact(u) => LetterJson::Compact(portrait_to_json(u)),
    }
}

pub fn letter_from_json(params: TreeParams, l: &LetterJson) -> Result<Letter> {
    Ok(match l {
        LetterJson::Sigma(s) => Letter::Sigma(*s),
        LetterJson::Compact(u) => Letter::Compact(portrait_from_json(params, u)?),
    })
}

pub fn word_to_json(w: &[Letter]) -> Vec<LetterJson> {
    w.iter().map(letter_to_json).collect()
}

pub fn word_from_json(params: TreeParams, w: &[LetterJson]) -> Result<Vec<Letter>> {
    w.iter().map(|l| letter_from_json(params, l)).collect()
}

/// One JSON object per line, one line per step.
pub fn trace_to_jsonl(trace: &RewriteTrace) -> String {
    let mut out = String::new();
    for s in &trace.steps {
        let json = StepJson {
            position: s.position,
            family: s.family,
            before: word_to_json(&s.before),
            after: word_to_json(&s.after),
        };
        out.push_str(&serde_json::to_string(&json).expect("step serializes"));
        out.push('\n');
    }
    out
}

pub fn trace_from_jsonl(params: TreeParams, text: &str) -> Result<RewriteTrace> {
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let s: StepJson = serde_json::from_str(line).map_err(|e| Error::Parse(format!("trace line {}: {e}", i + 1)))?;
        steps.push(Step {
            position: s.position,
            family: s.family,
            before: word_from_json(params, &s.before)?,
            after: word_from_json(params, &s.after)?,
        });
    }
    Ok(RewriteTrace { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localgroup::random_portrait;
    use crate::perm::PermGroup;
    use crate::thompson::random_element;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn delta_json_shape() {
        let p = TreeParams::new(2, 2).unwrap();
        let delta = CanonicalTreePair::delta(p, 0, 0).unwrap();
        let json = serde_json::to_value(pair_to_json(&delta)).unwrap();
        assert_eq!(json["domain"], serde_json::json!(["a1"]));
        assert_eq!(json["range"], serde_json::json!(["a2"]));
        assert!(json.get("decorations").is_none());
    }

    #[test]
    fn round_trips() {
        let p = TreeParams::new(3, 2).unwrap();
        let aaut = Aaut::new(p, PermGroup::symmetric(3).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 0..8 {
            let v = random_element(p, n, &mut rng);
            let text = serde_json::to_string(&pair_to_json(&v)).unwrap();
            assert_eq!(pair_from_json(p, &serde_json::from_str(&text).unwrap()).unwrap(), v);
            let g = aaut.random_element(n, 3, &mut rng);
            let text = serde_json::to_string(&element_to_json(&g)).unwrap();
            assert_eq!(element_from_json(&aaut, &serde_json::from_str(&text).unwrap()).unwrap(), g);
            let u = random_portrait(p, aaut.group(), n, &mut rng);
            assert_eq!(portrait_from_json(p, &portrait_to_json(&u)).unwrap(), u);
        }
    }

    #[test]
    fn malformed_elements_are_rejected() {
        let p = TreeParams::new(2, 2).unwrap();
        let bad: ElementJson = serde_json::from_str(r#"{"domain":["a1"],"range":[],"map":[["a2","a1"]]}"#).unwrap();
        assert!(pair_from_json(p, &bad).is_err());
        assert!(portrait_from_json(p, &vec![("a1".parse().unwrap(), vec![1, 2, 3])]).is_err());
    }
}
