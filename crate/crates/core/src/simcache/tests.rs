use proptest::prelude::*;

use super::*;
use crate::cachemap::{CacheLevel, MachineModel};
use crate::loopdsl::{parse, AccessKind};
use crate::polyset::ParamBinding;

const MATMUL: &str = include_str!("../../../../nests/matmul.pdl");

fn bind(m: i64, n: i64, k: i64) -> ParamBinding {
    ParamBinding::new().with("M", m).with("N", n).with("K", k)
}

/// Levels given in elements of 4 bytes.
fn machine(sizes: &[u64]) -> MachineModel {
    MachineModel {
        levels: sizes
            .iter()
            .enumerate()
            .map(|(l, &s)| CacheLevel {
                name: format!("L{}", l + 1),
                size: s * 4,
                latency: 4 + 10 * l as u64,
                bandwidth: 64,
                shared: false,
                cores: 1,
            })
            .collect(),
        memory_latency: 200,
        memory_bandwidth: 16,
        datatype_size: 4,
    }
}

#[test]
fn matmul_two_by_two_by_hand() {
    let nest = parse(MATMUL).unwrap();
    let b = bind(2, 2, 2);
    let mut a = Arrays::zeros(&nest, &b).unwrap();
    let ai = a.index_of("A").unwrap();
    let bi = a.index_of("B").unwrap();
    a.data[ai] = vec![1.0, 2.0, 3.0, 4.0];
    a.data[bi] = vec![5.0, 6.0, 7.0, 8.0];
    run(&nest, &b, &mut a, &mut NullObserver).unwrap();
    assert_eq!(a.get("C").unwrap(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn zero_extent_loop_is_a_no_op() {
    let nest = parse(MATMUL).unwrap();
    let b = bind(3, 3, 0);
    let before = Arrays::seeded(&nest, &b, 7).unwrap();
    assert_eq!(execute(&nest, &b, 7).unwrap(), before);
    assert!(trace(&nest, &b).unwrap().is_empty());
}

#[test]
fn execution_is_deterministic() {
    let nest = parse(MATMUL).unwrap();
    let b = bind(3, 4, 5);
    assert_eq!(execute(&nest, &b, 11).unwrap(), execute(&nest, &b, 11).unwrap());
    assert_ne!(execute(&nest, &b, 11).unwrap(), execute(&nest, &b, 12).unwrap());
    assert_eq!(trace(&nest, &b).unwrap(), trace(&nest, &b).unwrap());
}

#[test]
fn trace_order_and_references() {
    let nest = parse(MATMUL).unwrap();
    let t = trace(&nest, &bind(2, 2, 3)).unwrap();
    assert_eq!(t.len(), 4 * 12);
    assert_eq!(t.n_instances(), 12);
    for i in 1..t.n_instances() {
        assert!(t.point(i - 1) < t.point(i));
    }
    let refs: Vec<u32> = t.records()[..4].iter().map(|r| r.reference).collect();
    assert_eq!(refs, vec![0, 1, 2, 3]);
    assert_eq!(t.records()[3].kind, AccessKind::Write);
    assert_eq!(t.point(1), &[0, 0, 1]);
}

#[test]
fn trace_working_sets_of_the_running_example() {
    let nest = parse(MATMUL).unwrap();
    let t = trace(&nest, &bind(4, 4, 4)).unwrap();
    assert_eq!(trace_working_set(&t, &[0, 0, 0], &[0, 1, 0]), 11);
    assert_eq!(trace_working_set(&t, &[0, 0, 0], &[0, 3, 0]), 4 * 4 + 4 + 1);
    assert_eq!(trace_working_set(&t, &[1, 2, 3], &[1, 2, 3]), 3);
    assert_eq!(trace_working_set(&t, &[0, 0, 0], &[3, 3, 3]), 48);
    assert_eq!(trace_working_set(&t, &[2, 0, 0], &[1, 0, 0]), 0);
}

#[test]
fn trace_dump_round_trips() {
    let nest = parse(MATMUL).unwrap();
    let t = trace(&nest, &bind(2, 3, 2)).unwrap();
    let mut buf = Vec::new();
    t.write_to(&mut buf).unwrap();
    assert_eq!(Trace::read_from(buf.as_slice()).unwrap(), t);
    assert!(Trace::read_from("# other\n".as_bytes()).is_err());
}

#[test]
fn out_of_bounds_is_reported() {
    let nest = parse("param N; array A[N];\nfor (i = 0; i <= N; i++) A[i] = 1.0;").unwrap();
    let err = execute(&nest, &ParamBinding::new().with("N", 3), 0).unwrap_err();
    assert!(matches!(err, SimError::OutOfBounds { ref index, .. } if index == &vec![3]));
}

#[test]
fn single_access_misses_everywhere() {
    let s = simulate_records(
        &[Record { instance: 0, array: 0, element: 0, kind: AccessKind::Read, reference: 0 }],
        &machine(&[2, 4]),
        SimOptions { keep_serviced: true, ..SimOptions::default() },
    );
    assert_eq!(s.levels.iter().map(|l| l.misses).collect::<Vec<_>>(), vec![1, 1]);
    assert_eq!(s.memory, 1);
    assert_eq!(s.serviced, vec![2]);
    assert_eq!(s.cost, 14 + 200);
}

fn reads(elements: &[u64]) -> Vec<Record> {
    elements
        .iter()
        .map(|&e| Record { instance: 0, array: 0, element: e, kind: AccessKind::Read, reference: 0 })
        .collect()
}

#[test]
fn reuse_within_capacity_hits_first_level() {
    let trace: Vec<u64> = (0..4).chain(0..4).collect();
    let s = simulate_records(&reads(&trace), &machine(&[4, 8]), SimOptions::default());
    assert_eq!(s.levels[0].hits, 4);
    assert_eq!(s.levels[0].misses, 4);
}

#[test]
fn lru_thrash_on_cyclic_trace() {
    let trace: Vec<u64> = (0..30).map(|k| k % 3).collect();
    let s = simulate_records(&reads(&trace), &machine(&[2]), SimOptions::default());
    assert_eq!(s.levels[0].hits, 0);
    assert_eq!(s.memory, 30);
}

#[test]
fn victims_are_demoted_one_level() {
    // 0 1 2 evicts 0 from L1 into L2, so the next access to 0 hits L2
    let s = simulate_records(&reads(&[0, 1, 2, 0]), &machine(&[2, 4]), SimOptions { keep_serviced: true, ..SimOptions::default() });
    assert_eq!(s.serviced, vec![2, 2, 2, 1]);
    assert_eq!(s.levels[1].hits, 1);
}

#[test]
fn streaming_without_reuse_never_hits() {
    let trace: Vec<u64> = (0..100).collect();
    let s = simulate_records(&reads(&trace), &machine(&[4, 16]), SimOptions::default());
    assert_eq!(s.levels.iter().map(|l| l.hits).sum::<u64>(), 0);
    assert_eq!(s.memory, 100);
}

#[test]
fn streaming_simulation_matches_recorded_trace() {
    let nest = parse(MATMUL).unwrap();
    let b = bind(5, 4, 6);
    let m = machine(&[8, 32, 64]);
    let t = trace(&nest, &b).unwrap();
    assert_eq!(simulate(&nest, &b, &m, SimOptions::default()).unwrap(), simulate_trace(&t, &m, SimOptions::default()));
}

#[test]
fn line_granularity_groups_elements() {
    let s = simulate_records(&reads(&[0, 1, 2, 3]), &machine(&[8]), SimOptions { line_elements: 4, keep_serviced: false });
    assert_eq!(s.levels[0].hits, 3);
}

proptest! {
    #[test]
    fn exclusive_residency(trace in prop::collection::vec(0u64..24, 0..200)) {
        let mut sim = CacheSim::new(&machine(&[3, 7, 12]), SimOptions::default());
        for &e in &trace {
            sim.access(0, e);
            prop_assert!(sim.residency_is_exclusive());
        }
    }

    #[test]
    fn cost_is_monotone_in_each_level_size(
        trace in prop::collection::vec(0u64..40, 1..300),
        sizes in (1u64..8, 1u64..16, 1u64..32),
        level in 0usize..3,
        grow in 1u64..16,
    ) {
        let base = [sizes.0, sizes.0 + sizes.1, sizes.0 + sizes.1 + sizes.2];
        let mut bigger = base;
        bigger[level] += grow;
        for l in level + 1..3 {
            bigger[l] = bigger[l].max(bigger[l - 1] + 1);
        }
        let r = reads(&trace);
        let small = simulate_records(&r, &machine(&base), SimOptions::default());
        let large = simulate_records(&r, &machine(&bigger), SimOptions::default());
        prop_assert!(large.cost <= small.cost);
    }

    #[test]
    fn hits_and_misses_account_for_every_access(trace in prop::collection::vec(0u64..30, 0..200)) {
        let s = simulate_records(&reads(&trace), &machine(&[2, 5, 9]), SimOptions::default());
        let hits: u64 = s.levels.iter().map(|l| l.hits).sum();
        prop_assert_eq!(hits + s.memory, trace.len() as u64);
        prop_assert_eq!(s.levels[0].misses, trace.len() as u64 - s.levels[0].hits);
        for w in s.levels.windows(2) {
            prop_assert_eq!(w[1].misses, w[0].misses - w[1].hits);
        }
    }
}
