use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::loopdsl::parse;
use crate::polyset::Tuple;
use crate::simcache::{trace, trace_working_set};
use crate::synth::random_nest;

const MATMUL: &str = include_str!("../../../../nests/matmul.pdl");
const GEMM: &str = include_str!("../../../../nests/gemm.pdl");

fn bind(m: i64, n: i64, k: i64) -> ParamBinding {
    ParamBinding::new().with("M", m).with("N", n).with("K", k)
}

fn d2(r: &WorkingSetReport) -> (u64, u64) {
    let id = r.dependences.iter().find(|d| d.source_ref == 1 && d.target_ref == 1).unwrap().id;
    let get = |v| r.entries.iter().find(|e| e.dependence == id && e.variant == v).unwrap().elements;
    (get(WsVariant::Min), get(WsVariant::Max))
}

#[test]
fn running_example_min_and_max() {
    let nest = parse(MATMUL).unwrap();
    let r = working_sets(&nest, &bind(4, 3, 4), WsOptions::default()).unwrap();
    assert_eq!(d2(&r), (11, 16));
    let d = r.dependences.iter().find(|d| d.source_ref == 1 && d.target_ref == 1).unwrap();
    assert_eq!(d.source, vec![0, 0, 0]);
    assert_eq!(d.min_target, Some(vec![0, 1, 0]));
    assert_eq!(d.max_target, Some(vec![0, 2, 0]));
}

#[test]
fn closed_form_sweep_over_k() {
    let nest = parse(MATMUL).unwrap();
    for k in [2, 4, 8, 16] {
        let r = working_sets(&nest, &bind(3, 5, k), WsOptions::default()).unwrap();
        assert_eq!(d2(&r), (2 * k as u64 + 3, 5 * k as u64 + 5 + 1), "K = {k}");
    }
}

#[test]
fn bytes_follow_datatype_size() {
    let nest = parse(MATMUL).unwrap();
    let r = working_sets(&nest, &bind(2, 2, 2), WsOptions { datatype_size: 8, sample_outer: false }).unwrap();
    assert!(r.entries.iter().all(|e| e.bytes == 8 * e.elements));
    assert_eq!(r.summary.entries, r.entries.len());
}

#[test]
fn footprint_of_whole_and_trivial_sets() {
    let p = extract_polyhedral(&parse(MATMUL).unwrap()).unwrap();
    let rels: Vec<&IntRelation> = p.refs.iter().map(|r| &r.relation).collect();
    let b = bind(4, 4, 4);
    assert_eq!(footprint(&rels, &p.domain, &b).unwrap(), 48);
    let empty = IntSet::empty(p.space(), &p.params);
    assert_eq!(footprint(&rels, &empty, &b).unwrap(), 0);
    let one = IntSet::from_point(Tuple::new("S", &["i", "j", "k"]), &[0, 0, 0]).unwrap();
    assert_eq!(footprint(&rels, &one, &b).unwrap(), 3);
}

#[test]
fn parallel_footprint_covers_all_parallel_iterations() {
    let nest = parse(GEMM).unwrap();
    let (m, n, k) = (4u64, 3u64, 5u64);
    let r = working_sets(&nest, &bind(m as i64, n as i64, k as i64), WsOptions::default()).unwrap();
    let d3 = r.dependences.iter().find(|d| d.source_ref == 2 && d.target_ref == 2).unwrap();
    assert!(d3.spans_parallel);
    let e = r.entries.iter().find(|e| e.dependence == d3.id).unwrap();
    assert_eq!(e.variant, WsVariant::Par);
    assert_eq!(e.elements, m * k + k * n + m * n);
    assert_eq!(r.entries.iter().filter(|e| e.dependence == d3.id).count(), 1);
}

#[test]
fn sampling_outer_prefix_never_shrinks() {
    let src = "param N; array A[N][N]; array B[N];\n\
               for (i = 0; i < N; i++) parallel for (j = 0; j <= i; j++) B[j] += A[i][j];";
    let nest = parse(src).unwrap();
    let b = ParamBinding::new().with("N", 6);
    let plain = working_sets(&nest, &b, WsOptions::default()).unwrap();
    let sampled = working_sets(&nest, &b, WsOptions { sample_outer: true, ..WsOptions::default() }).unwrap();
    for (x, y) in plain.entries.iter().zip(&sampled.entries) {
        assert!(y.elements >= x.elements);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn min_and_max_match_trace(seed in any::<u64>()) {
        let (src, b) = random_nest(&mut ChaCha8Rng::seed_from_u64(seed), 3);
        let nest = parse(&src).unwrap();
        let r = working_sets(&nest, &b, WsOptions::default()).unwrap();
        let t = trace(&nest, &b).unwrap();
        for d in &r.dependences {
            let get = |v| r.entries.iter().find(|e| e.dependence == d.id && e.variant == v).unwrap().elements;
            let (lo, hi) = (get(WsVariant::Min), get(WsVariant::Max));
            prop_assert!(lo <= hi);
            let tmin = d.min_target.as_ref().unwrap();
            let tmax = d.max_target.as_ref().unwrap();
            prop_assert_eq!(lo, trace_working_set(&t, &d.source, tmin), "{}", src);
            prop_assert_eq!(hi, trace_working_set(&t, &d.source, tmax), "{}", src);
        }
    }
}
