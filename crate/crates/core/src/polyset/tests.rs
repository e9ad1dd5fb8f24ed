use super::*;
use proptest::prelude::*;

fn b() -> ParamBinding {
    ParamBinding::new()
}

fn s(text: &str) -> IntSet {
    IntSet::parse(text).unwrap()
}

/// Brute-force reference over the box `[-R, R]^d`.
const R: i64 = 6;

fn all_points(d: usize) -> Vec<Point> {
    let mut out = vec![vec![]];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                (-R..=R).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

fn holds(cs: &[Constraint], dims: &[String], p: &[i64]) -> bool {
    cs.iter().all(|c| {
        let v = c.expr.eval_with(|n| dims.iter().position(|d| d == n).map(|k| p[k])).unwrap();
        match c.kind {
            ConstraintKind::Zero => v == 0,
            ConstraintKind::NonNegative => v >= 0,
        }
    })
}

/// Random bounded disjuncts over `d` dims named x0.. within `[-R, R]`.
fn arb_disjuncts(d: usize) -> impl Strategy<Value = Vec<Vec<Constraint>>> {
    let names: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
    let one = prop::collection::vec(
        (prop::collection::vec(-2i64..=2, d), -4i64..=4, prop::bool::weighted(0.15)),
        0..4,
    )
    .prop_map(move |rows| {
        let mut cs = Vec::new();
        for n in &names {
            cs.push(Constraint::ge(AffineExpr::var(n), AffineExpr::constant(-R + 2)));
            cs.push(Constraint::le(AffineExpr::var(n), AffineExpr::constant(R - 2)));
        }
        for (coeffs, k, is_eq) in rows {
            let mut e = AffineExpr::constant(k);
            for (n, c) in names.iter().zip(&coeffs) {
                e.add_term(n, *c);
            }
            let kind = if is_eq { ConstraintKind::Zero } else { ConstraintKind::NonNegative };
            cs.push(Constraint { expr: e, kind });
        }
        cs
    });
    prop::collection::vec(one, 1..3)
}

fn tuple(d: usize) -> Tuple {
    Tuple { name: "S".into(), dims: (0..d).map(|k| format!("x{k}")).collect() }
}

fn oracle(ds: &[Vec<Constraint>], d: usize) -> Vec<Point> {
    let t = tuple(d);
    all_points(d).into_iter().filter(|p| ds.iter().any(|cs| holds(cs, &t.dims, p))).collect()
}

#[test]
fn parse_display_round_trip() {
    let a = s("[M, N] -> { S[i, j] : 0 <= i < M and 0 <= j < N }");
    assert_eq!(a.params(), &["M".to_string(), "N".to_string()]);
    let again = IntSet::parse(&a.to_string()).unwrap();
    let bind = b().with("M", 3).with("N", 4);
    assert_eq!(a.points(&bind).unwrap(), again.points(&bind).unwrap());
    assert_eq!(a.cardinality(&bind).unwrap(), 12);
}

#[test]
fn triangular_count_and_extremes() {
    let t = s("[N] -> { S[i, j] : 0 <= i < N and 0 <= j <= i }");
    let bind = b().with("N", 10);
    assert_eq!(t.cardinality(&bind).unwrap(), 55);
    assert_eq!(t.lexmin(&bind).unwrap(), Some(vec![0, 0]));
    assert_eq!(t.lexmax(&bind).unwrap(), Some(vec![9, 9]));
}

#[test]
fn unbound_parameter_is_an_error() {
    let t = s("[N] -> { S[i] : 0 <= i < N }");
    assert_eq!(t.cardinality(&b()), Err(SetError::UnboundParam("N".into())));
}

#[test]
fn unbounded_set_is_reported() {
    let t = s("{ S[i, j] : i >= 0 and 0 <= j <= 3 }");
    assert!(matches!(t.cardinality(&b()), Err(SetError::Unbounded(_))));
}

#[test]
fn overlapping_union_counts_each_point_once() {
    let u = s("{ S[i, j] : 0 <= i < 4 and 0 <= j < 4 or 2 <= i < 6 and 2 <= j < 6 }");
    assert_eq!(u.cardinality(&b()).unwrap(), 16 + 16 - 4);
    let disjoint = u.make_disjoint().unwrap();
    assert_eq!(disjoint.cardinality(&b()).unwrap(), 28);
}

#[test]
fn strided_projection_keeps_parity() {
    let even = s("{ S[i, e] : i = 2e and 0 <= i <= 10 }").project_out("e").unwrap();
    assert_eq!(even.points(&b()).unwrap(), (0..=10).step_by(2).map(|v| vec![v]).collect::<Vec<_>>());
    let ex = s("{ S[i] : exists (e : i = 3e + 1) and 0 <= i < 12 }");
    assert_eq!(ex.cardinality(&b()).unwrap(), 4);
    assert!(ex.to_string().contains("exists"));
}

#[test]
fn access_relation_image() {
    let dom = s("[N] -> { S[i, k] : 0 <= i < N and 0 <= k < N }");
    let acc = IntRelation::parse("[N] -> { S[i, k] -> A[i + k] }").unwrap();
    let img = acc.apply(&dom).unwrap();
    assert_eq!(img.cardinality(&b().with("N", 5)).unwrap(), 9);
    let mapped = IntRelation::from_map(
        dom.tuple().clone(),
        dom.params(),
        "A",
        &[AffineExpr::var("i").add(&AffineExpr::var("k"))],
        Some(&dom),
    )
    .unwrap();
    assert_eq!(mapped.range().cardinality(&b().with("N", 5)).unwrap(), 9);
    assert_eq!(mapped.domain().cardinality(&b().with("N", 5)).unwrap(), 25);
}

#[test]
fn relation_pairs_and_identity() {
    let id = IntRelation::identity(Tuple::new("S", &["i"]), &[]).unwrap();
    let dom = s("{ S[i] : 0 <= i < 3 }");
    let r = id.intersect_domain(&dom).unwrap();
    assert_eq!(r.pairs(&b()).unwrap(), vec![(vec![0], vec![0]), (vec![1], vec![1]), (vec![2], vec![2])]);
}

#[test]
fn lex_comparison_sets() {
    let sq = s("{ S[i, j] : 0 <= i < 3 and 0 <= j < 3 }");
    assert_eq!(sq.lex_le_point(&[1, 1]).unwrap().cardinality(&b()).unwrap(), 5);
    assert_eq!(sq.lex_lt_point(&[1, 1]).unwrap().cardinality(&b()).unwrap(), 4);
    assert_eq!(sq.lex_ge_point(&[1, 1]).unwrap().cardinality(&b()).unwrap(), 5);
}

#[test]
fn space_mismatch_rejected() {
    let a = s("{ S[i] : 0 <= i < 3 }");
    let c = s("{ T[i] : 0 <= i < 3 }");
    assert!(matches!(a.intersect(&c), Err(SetError::SpaceMismatch(_))));
}

#[test]
fn unknown_variable_rejected() {
    let err = IntSet::from_constraints(
        Tuple::new("S", &["i"]),
        &[],
        &[Constraint::ge(AffineExpr::var("q"), AffineExpr::constant(0))],
    );
    assert_eq!(err, Err(SetError::UnknownVar("q".into())));
}

#[test]
fn binding_parses() {
    let bind = ParamBinding::parse("M=64, N=3").unwrap();
    assert_eq!(bind.get("M"), Some(64));
    assert_eq!(bind.to_string(), "M=64,N=3");
    assert!(ParamBinding::parse("M").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn count_and_points_match_oracle(ds in arb_disjuncts(3)) {
        let set = IntSet::from_disjuncts(tuple(3), &[], &ds).unwrap();
        let expect = oracle(&ds, 3);
        prop_assert_eq!(set.points(&b()).unwrap(), expect.clone());
        prop_assert_eq!(set.cardinality(&b()).unwrap(), expect.len() as u64);
        prop_assert_eq!(set.lexmin(&b()).unwrap(), expect.first().cloned());
        prop_assert_eq!(set.lexmax(&b()).unwrap(), expect.last().cloned());
    }

    #[test]
    fn boolean_ops_match_oracle(a in arb_disjuncts(2), c in arb_disjuncts(2)) {
        let sa = IntSet::from_disjuncts(tuple(2), &[], &a).unwrap();
        let sc = IntSet::from_disjuncts(tuple(2), &[], &c).unwrap();
        let pa = oracle(&a, 2);
        let pc = oracle(&c, 2);
        let inter: Vec<Point> = pa.iter().filter(|p| pc.contains(p)).cloned().collect();
        let diff: Vec<Point> = pa.iter().filter(|p| !pc.contains(p)).cloned().collect();
        let mut uni: Vec<Point> = pa.iter().chain(&pc).cloned().collect();
        uni.sort();
        uni.dedup();
        prop_assert_eq!(sa.intersect(&sc).unwrap().points(&b()).unwrap(), inter);
        prop_assert_eq!(sa.subtract(&sc).unwrap().points(&b()).unwrap(), diff);
        prop_assert_eq!(sa.union(&sc).unwrap().points(&b()).unwrap(), uni.clone());
        let dj = sa.union(&sc).unwrap().make_disjoint().unwrap();
        let total: u64 = dj
            .parts()
            .iter()
            .map(|p| {
                IntSet::from_parts(dj.tuple().clone(), vec![], vec![p.clone()]).cardinality(&b()).unwrap()
            })
            .sum();
        prop_assert_eq!(total, uni.len() as u64);
    }

    #[test]
    fn projection_matches_oracle(ds in arb_disjuncts(3), k in 0usize..3) {
        let set = IntSet::from_disjuncts(tuple(3), &[], &ds).unwrap();
        let proj = set.project_out(&format!("x{k}")).unwrap();
        let mut expect: Vec<Point> = oracle(&ds, 3)
            .into_iter()
            .map(|mut p| { p.remove(k); p })
            .collect();
        expect.sort();
        expect.dedup();
        prop_assert_eq!(proj.cardinality(&b()).unwrap(), expect.len() as u64);
        prop_assert_eq!(proj.points(&b()).unwrap(), expect);
    }

    #[test]
    fn lex_prefix_sets_match_oracle(ds in arb_disjuncts(2), px in -4i64..=4, py in -4i64..=4) {
        let set = IntSet::from_disjuncts(tuple(2), &[], &ds).unwrap();
        let pts = oracle(&ds, 2);
        let le: Vec<Point> = pts.iter().filter(|p| **p <= vec![px, py]).cloned().collect();
        let lt: Vec<Point> = pts.iter().filter(|p| **p < vec![px, py]).cloned().collect();
        let ge: Vec<Point> = pts.iter().filter(|p| **p >= vec![px, py]).cloned().collect();
        prop_assert_eq!(set.lex_le_point(&[px, py]).unwrap().points(&b()).unwrap(), le);
        prop_assert_eq!(set.lex_lt_point(&[px, py]).unwrap().points(&b()).unwrap(), lt);
        prop_assert_eq!(set.lex_ge_point(&[px, py]).unwrap().points(&b()).unwrap(), ge);
    }

    #[test]
    fn printed_form_reparses(ds in arb_disjuncts(2)) {
        let set = IntSet::from_disjuncts(tuple(2), &[], &ds).unwrap();
        let again = IntSet::parse(&set.to_string()).unwrap();
        prop_assert_eq!(again.points(&b()).unwrap(), set.points(&b()).unwrap());
    }
}
