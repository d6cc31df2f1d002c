use aaut_core::aaut::Aaut;
use aaut_core::io::{element_from_json, element_to_json, pair_from_json, pair_to_json};
use aaut_core::localgroup::random_portrait;
use aaut_core::perm::PermGroup;
use aaut_core::selfsim::{Budget, Table, WreathSpec};
use aaut_core::thompson::{random_element, random_tree, CanonicalTreePair};
use aaut_core::tree::{TreeParams, Vertex};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn params() -> impl Strategy<Value = TreeParams> {
    prop_oneof![Just((2, 2)), Just((3, 2)), Just((2, 1)), Just((2, 3))]
        .prop_map(|(d, k)| TreeParams::new(d, k).unwrap())
}

fn ctx(p: TreeParams) -> Aaut {
    Aaut::new(p, PermGroup::symmetric(p.d).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leaf_count_formula(p in params(), n in 0usize..12, seed: u64) {
        let t = random_tree(p, n, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(t.caret_count(), n);
        prop_assert_eq!(t.leaves().len(), (p.d - 1) * n + p.k);
    }

    #[test]
    fn vertex_text_round_trip(p in params(), len in 1usize..8, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Vertex::top(rng.gen_range(0..p.k) as u8);
        while v.level() < len {
            v = v.child(rng.gen_range(0..p.d) as u8);
        }
        prop_assert_eq!(v.to_string().parse::<Vertex>().unwrap(), v);
    }

    #[test]
    fn thompson_group_laws(p in params(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_element(p, rng.gen_range(0..6), &mut rng);
        let b = random_element(p, rng.gen_range(0..6), &mut rng);
        let c = random_element(p, rng.gen_range(0..6), &mut rng);
        prop_assert_eq!(a.mul(&b).mul(&c), a.mul(&b.mul(&c)));
        prop_assert!(a.mul(&a.inverse()).is_identity());
        prop_assert_eq!(CanonicalTreePair::from_key(p, &a.key()).unwrap(), a.clone());
        prop_assert_eq!(a.to_tree_pair().canonicalize(), a);
    }

    #[test]
    fn decorated_group_laws(p in params(), seed: u64) {
        let aaut = ctx(p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = aaut.random_element(rng.gen_range(0..5), rng.gen_range(0..5), &mut rng);
        let h = aaut.random_element(rng.gen_range(0..5), rng.gen_range(0..5), &mut rng);
        let f = aaut.random_element(rng.gen_range(0..5), rng.gen_range(0..5), &mut rng);
        prop_assert_eq!(aaut.mul(&aaut.mul(&g, &h), &f), aaut.mul(&g, &aaut.mul(&h, &f)));
        prop_assert!(aaut.mul(&g, &aaut.inverse(&g)).is_identity());
        let dec = aaut.decompose(&g);
        prop_assert_eq!(aaut.reconstruct(&dec).unwrap(), g.clone());
        prop_assert_eq!(aaut.in_compact(&g), dec.v.is_identity());
    }

    #[test]
    fn coset_keys_ignore_compact_factors(p in params(), seed: u64) {
        let aaut = ctx(p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = aaut.random_element(rng.gen_range(0..5), rng.gen_range(0..4), &mut rng);
        let u = random_portrait(p, aaut.group(), rng.gen_range(0..6), &mut rng);
        let gu = aaut.mul(&g, &aaut.from_portrait(&u).unwrap());
        prop_assert_eq!(aaut.coset_key(&g), aaut.coset_key(&gu));
    }

    #[test]
    fn json_round_trips(p in params(), seed: u64) {
        let aaut = ctx(p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_element(p, rng.gen_range(0..7), &mut rng);
        prop_assert_eq!(pair_from_json(p, &pair_to_json(&v)).unwrap(), v);
        let g = aaut.random_element(rng.gen_range(0..5), rng.gen_range(0..5), &mut rng);
        prop_assert_eq!(element_from_json(&aaut, &element_to_json(&g)).unwrap(), g);
    }
}

fn branch_specs() -> impl Strategy<Value = &'static str> {
    prop_oneof![Just("grigorchuk"), Just("gupta-sidki"), Just("fabrykowski-gupta")]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn section_recursion(name in branch_specs(), len in 0usize..30, seed: u64) {
        let spec = WreathSpec::builtin(name).unwrap();
        let d = spec.degree() as u8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = spec.random_word(len, &mut rng);
        let vw: Vec<u8> = (0..6).map(|_| rng.gen_range(0..d)).collect();
        let cut = rng.gen_range(0..=6);
        let (v, w) = vw.split_at(cut);
        let mut expected = spec.act(&g, v).unwrap();
        expected.extend_from_slice(&spec.act(&spec.section(&g, v).unwrap(), w).unwrap());
        prop_assert_eq!(spec.act(&g, &vw).unwrap(), expected);
        // Sections of a product are products of matching sections.
        let h = spec.random_word(len, &mut rng);
        let hv = spec.act(&h, v).unwrap();
        let lhs = spec.section(&g.mul(&h), v).unwrap();
        let rhs = spec.section(&g, &hv).unwrap().mul(&spec.section(&h, v).unwrap());
        prop_assert!(spec.words_equal(&lhs, &rhs, &Budget::default()).unwrap());
    }

    #[test]
    fn fault_detection_is_monotone(seed: u64) {
        let spec = WreathSpec::builtin("grigorchuk").unwrap();
        let budget = Budget::default();
        let p3 = spec.pattern_set(3, &budget).unwrap();
        let p4 = spec.pattern_set(4, &budget).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = spec.random_word(20, &mut rng);
        let t = spec.truncation(&g, 6);
        let swap = aaut_core::perm::Perm::from_images(&[1, 0]).unwrap();
        let path: Vec<u8> = (0..rng.gen_range(0..3)).map(|_| rng.gen_range(0..2)).collect();
        let mut labels: Vec<_> = t.labels().map(|(k, v)| (k.clone(), *v)).collect();
        match labels.iter_mut().find(|(k, _)| k[..] == path[..]) {
            Some((_, v)) => *v = v.compose(&swap),
            None => labels.push((path.iter().copied().collect(), swap)),
        }
        let faulty = aaut_core::localgroup::LocalAut::from_labels(labels);
        if !p3.in_closure(&faulty, 6).unwrap() {
            prop_assert!(!p4.in_closure(&faulty, 6).unwrap());
        }
    }
}

#[test]
fn pattern_sets_are_closed_under_sections() {
    let budget = Budget::default();
    for name in ["grigorchuk", "fabrykowski-gupta", "gupta-sidki"] {
        let spec = WreathSpec::builtin(name).unwrap();
        let d = spec.degree();
        for m in 1..=3 {
            let big = spec.pattern_set(m, &budget).unwrap();
            let small = spec.pattern_set(m - 1, &budget).unwrap();
            for t in big.iter() {
                assert!(small.contains(&t.truncate(d)));
                for x in 0..d {
                    assert!(small.contains(&t.child_section(d, x)), "{name} level {m}");
                }
            }
        }
    }
}

#[test]
fn branch_identities_for_the_test_matrix() {
    let budget = Budget::default();
    let cases = [("grigorchuk", 3), ("trivial", 1), ("trivial", 3)];
    for (name, s) in cases {
        let spec = WreathSpec::builtin(name).unwrap();
        let r = spec.index_identity_check(s, &budget).unwrap();
        assert!(r.holds, "{name} at {s}: {r:?}");
        assert!(r.pattern_side.num > 0 && r.pattern_side.is_integer());
        assert!(spec.stab_image_identity(s, &budget).unwrap().holds);
    }
}

#[test]
fn grigorchuk_sections_have_group_patterns() {
    let spec = WreathSpec::builtin("grigorchuk").unwrap();
    let p = spec.pattern_set(4, &Budget::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..20 {
        let g = spec.random_word(25, &mut rng);
        let v: Vec<u8> = (0..3).map(|_| rng.gen_range(0..2)).collect();
        let s = spec.section(&g, &v).unwrap();
        assert!(p.contains(&spec.table(&s, 4).unwrap()));
        assert_eq!(Table::of_local(&spec.truncation(&s, 4), 2, 4), spec.table(&s, 4).unwrap());
    }
}
