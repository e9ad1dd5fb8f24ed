use super::*;
use crate::loopdsl::{parse, print_nest};
use crate::simcache::execute;

const GEMM_RELU: &str = include_str!("../../../../nests/gemm_relu.pdl");
const CONV_RELU6: &str = include_str!("../../../../nests/conv_relu6.pdl");

const DECLS: &str = "param M, N, K;\narray C[M][N];\narray A[M][K];\narray B[K][N];\narray r[M];\n";
const GEMM_LOOP: &str = "for (i = 0; i < M; i++) { for (j = 0; j < N; j++) { for (k = 0; k < K; k++) {\n  S: C[i][j] += A[i][k] * B[k][j];\n} } }\n";
const RELU_LOOP: &str = "for (i = 0; i < M; i++) { for (j = 0; j < N; j++) {\n  R: C[i][j] = max(C[i][j], 0);\n} }\n";

fn bind(m: i64, n: i64, k: i64) -> ParamBinding {
    ParamBinding::new().with("M", m).with("N", n).with("K", k)
}

fn conv_binding() -> ParamBinding {
    let mut b = ParamBinding::new();
    for (p, v) in [("nImg", 1), ("nBOfm", 2), ("nBIfm", 2), ("ofh", 3), ("ofw", 3), ("kh", 2), ("kw", 3)] {
        b.set(p, v);
    }
    b
}

fn pair(src: &str) -> OperatorPair {
    OperatorPair::from_program(&parse(src).unwrap()).unwrap()
}

fn labels(nest: &LoopNest) -> Vec<String> {
    nest.statements().iter().map(|c| c.stmt.label.clone()).collect()
}

fn assert_bitwise_equal(a: &LoopNest, b: &LoopNest, binding: &ParamBinding, seeds: u64) {
    for seed in 0..seeds {
        let x = execute(a, binding, seed).unwrap();
        let y = execute(b, binding, seed).unwrap();
        for (n, (u, v)) in x.names.iter().zip(x.data.iter().zip(&y.data)) {
            assert!(u.iter().zip(v).all(|(p, q)| p.to_bits() == q.to_bits()), "array {n} differs at seed {seed}");
        }
    }
}

#[test]
fn write_set_of_matmul_is_all_of_c() {
    let p = pair(GEMM_RELU);
    let heavy = p.sub(vec![p.heavy.clone()]);
    let w = write_set(&heavy, &bind(3, 5, 2)).unwrap();
    assert_eq!(w.len(), 1);
    assert_eq!(cardinality(&w), 15);
}

#[test]
fn write_set_of_column_slab() {
    let src = format!("{DECLS}for (i = 0; i < M; i++) {{ for (j = 0; j < N; j++) {{\n  T: C[i][0] += A[i][j];\n}} }}\n");
    let nest = parse(&src).unwrap();
    let b = bind(6, 4, 1);
    let w = write_set(&nest, &b).unwrap();
    // enumeration oracle
    let mut expected = BTreeSet::new();
    for i in 0..6 {
        for _j in 0..4 {
            expected.insert(vec![i, 0]);
        }
    }
    assert_eq!(w["C"], expected);
    assert_eq!(cardinality(&w), 6);
}

#[test]
fn gemm_relu_is_fusable() {
    let p = pair(GEMM_RELU);
    assert_eq!(p.order, Order::HeavyFirst);
    let d = can_fuse(&p, &bind(4, 4, 4)).unwrap();
    assert_eq!(d, FusionDecision { fusable: true, failed: None, witness: None });
}

#[test]
fn gemm_relu_peels_last_k() {
    let b = bind(3, 5, 4);
    let p = pair(GEMM_RELU);
    let fused = fuse(&p, &b).unwrap();
    let text = print_nest(&fused);
    assert!(text.contains("for (k = 0; k < K - 1; k++)"), "{text}");
    assert!(text.contains("S_peel: C[i][j] += A[i][K - 1] * B[K - 1][j];"), "{text}");
    assert!(text.contains("R: C[i][j] = max(C[i][j], 0.0);"), "{text}");
    assert_eq!(labels(&fused), ["S", "S_peel", "R"]);
    // the fused nest is one loop nest and keeps the parallel i loop
    assert_eq!(fused.body.len(), 1);
    assert!(matches!(&fused.body[0], Node::Loop(l) if l.parallel && l.iter == "i"));
    assert_bitwise_equal(&p.unfused(), &fused, &b, 20);
}

#[test]
fn unfused_reproduces_the_program() {
    let nest = parse(GEMM_RELU).unwrap();
    assert_eq!(pair(GEMM_RELU).unfused().body, nest.body);
    let ew_first = parse(&format!("{DECLS}{RELU_LOOP}{GEMM_LOOP}")).unwrap();
    let p = OperatorPair::from_program(&ew_first).unwrap();
    assert_eq!(p.order, Order::ElementwiseFirst);
    assert_eq!(p.unfused().body, ew_first.body);
}

#[test]
fn elementwise_first_peels_first_iteration() {
    let src = format!("{DECLS}{RELU_LOOP}{GEMM_LOOP}");
    let p = pair(&src);
    let b = bind(4, 3, 5);
    let fused = fuse(&p, &b).unwrap();
    let text = print_nest(&fused);
    assert!(text.contains("for (k = 1; k < K; k++)"), "{text}");
    assert_eq!(labels(&fused), ["R", "S_peel", "S"]);
    assert_bitwise_equal(&p.unfused(), &fused, &b, 20);
}

#[test]
fn reduction_extent_one_leaves_only_the_peel() {
    let b = bind(3, 3, 1);
    let p = pair(GEMM_RELU);
    let fused = fuse(&p, &b).unwrap();
    assert!(fused.find_loop("k").is_none());
    assert_eq!(labels(&fused), ["S_peel", "R"]);
    assert_bitwise_equal(&p.unfused(), &fused, &b, 10);
}

#[test]
fn nested_reductions_split_recursively() {
    let src = "param M, N, K;\narray C[M][N];\narray A[M][N][K][K];\n\
               for (i = 0; i < M; i++) { for (j = 0; j < N; j++) { for (p = 0; p < K; p++) { for (q = 0; q < K; q++) {\n\
                 S: C[i][j] += A[i][j][p][q];\n} } } }\n\
               for (i = 0; i < M; i++) { for (j = 0; j < N; j++) {\n  R: C[i][j] = max(C[i][j], 0);\n} }\n";
    let b = bind(2, 3, 3);
    let p = pair(src);
    let fused = fuse(&p, &b).unwrap();
    assert_eq!(labels(&fused), ["S", "S_p1", "S_peel", "R"]);
    assert_bitwise_equal(&p.unfused(), &fused, &b, 10);
}

#[test]
fn conv_relu6_is_bitwise_equal() {
    let b = conv_binding();
    let p = pair(CONV_RELU6);
    assert_eq!(can_fuse(&p, &b).unwrap().failed, None);
    let fused = fuse(&p, &b).unwrap();
    // reductions outside the microkernel are ifm_tile, kj and ki
    assert_eq!(labels(&fused), ["S", "S_p1", "S_p2", "S_peel", "R"]);
    let text = print_nest(&fused);
    assert!(text.contains("min(max(output[img][ofm_tile][oj][oi][ofm], 0.0), 6.0)"), "{text}");
    assert_bitwise_equal(&p.unfused(), &fused, &b, 50);
}

#[test]
fn row_sum_is_not_elementwise() {
    let src = format!(
        "{DECLS}{GEMM_LOOP}for (i = 0; i < M; i++) {{ for (j = 0; j < N; j++) {{\n  R: C[i][0] += C[i][j];\n}} }}\n"
    );
    let b = bind(3, 4, 2);
    let d = can_fuse(&pair(&src), &b).unwrap();
    // the row sum writes only column 0, so condition (1) fails first
    assert_eq!(d.failed, Some(FailedCondition::WriteSetsDiffer));
    assert_eq!(d.witness.as_deref(), Some("C[0][1] written only by the heavy operator"));

    let src = format!(
        "{DECLS}for (i = 0; i < M; i++) {{ for (j = 0; j < N; j++) {{\n  S: r[i] += A[i][j];\n}} }}\n\
         for (i = 0; i < M; i++) {{ for (j = 0; j < N; j++) {{\n  R: r[i] = max(r[i], 0);\n}} }}\n"
    );
    let d = can_fuse(&pair(&src), &b).unwrap();
    assert_eq!(d.failed, Some(FailedCondition::NotElementwise));
    assert_eq!(d.witness.as_deref(), Some("|I| = 12, |W| = 3"));
    assert!(!d.fusable);
}

#[test]
fn intervening_read_blocks_fusion() {
    let src = format!("{DECLS}{GEMM_LOOP}P: r[0] = C[0][0];\n{RELU_LOOP}");
    let nest = parse(&src).unwrap();
    let b = bind(2, 2, 2);
    let d = can_fuse(&pair(&src), &b).unwrap();
    assert_eq!(d.failed, Some(FailedCondition::InterveningAccess));
    assert_eq!(d.witness.as_deref(), Some("P accesses C[0][0]"));
    assert!(matches!(fuse(&pair(&src), &b), Err(FusionError::NotFusable(_))));
    let (kept, d2) = fuse_or_keep(&nest, &b).unwrap();
    assert_eq!(kept, nest);
    assert_eq!(d2, d);
}

#[test]
fn intervening_code_elsewhere_moves_after_the_fused_nest() {
    let src = format!("{DECLS}{GEMM_LOOP}P: r[0] = A[0][0];\n{RELU_LOOP}");
    let b = bind(2, 3, 2);
    let p = pair(&src);
    let fused = fuse(&p, &b).unwrap();
    assert_eq!(labels(&fused), ["S", "S_peel", "R", "P"]);
    assert_bitwise_equal(&p.unfused(), &fused, &b, 5);
}

#[test]
fn strict_inputs_flag_checks_elementwise_inputs() {
    let src = "param M, N, K;\narray C[M][N];\narray A[M][K];\narray B[K][N];\narray D[M][N];\n\
               for (i = 0; i < M; i++) { for (j = 0; j < N; j++) { for (k = 0; k < K; k++) {\n  S: C[i][j] += A[i][k] * B[k][j];\n} } }\n\
               P: D[1][1] = 2;\n\
               for (i = 0; i < M; i++) { for (j = 0; j < N; j++) {\n  R: C[i][j] = C[i][j] + D[i][j];\n} }\n";
    let b = bind(2, 2, 2);
    let p = pair(src);
    assert!(can_fuse(&p, &b).unwrap().fusable);
    let d = can_fuse_with(&p, &b, FusionOptions { strict_inputs: true }).unwrap();
    assert_eq!(d.failed, Some(FailedCondition::InterveningAccess));
    assert_eq!(d.witness.as_deref(), Some("P writes D[1][1], an input of the element-wise operator"));
}

#[test]
fn transposed_elementwise_indices_are_reexpressed() {
    let src = "param M, N, K;\narray C[M][N];\narray A[M][K];\narray B[K][N];\n\
               for (i = 0; i < M; i++) { for (j = 0; j < N; j++) { for (k = 0; k < K; k++) {\n  S: C[i][j] += A[i][k] * B[k][j];\n} } }\n\
               for (a = 0; a < N; a++) { for (b = 0; b < M; b++) {\n  R: C[b][a] = C[b][a] * 2;\n} }\n";
    let b = bind(3, 2, 3);
    let p = pair(src);
    let fused = fuse(&p, &b).unwrap();
    assert!(print_nest(&fused).contains("R: C[i][j] = C[i][j] * 2.0;"));
    assert_bitwise_equal(&p.unfused(), &fused, &b, 5);
}

#[test]
fn scaled_write_access_is_rejected_as_non_invertible() {
    let src = "param M, K;\narray C[2 * M];\narray A[M][K];\n\
               for (i = 0; i < M; i++) { for (k = 0; k < K; k++) {\n  S: C[2 * i] += A[i][k];\n} }\n\
               for (a = 0; a < M; a++) {\n  R: C[2 * a] = max(C[2 * a], 0);\n}\n";
    let d = can_fuse(&pair(src), &ParamBinding::new().with("M", 3).with("K", 2)).unwrap();
    assert_eq!(d.failed, Some(FailedCondition::NonInvertible));
    assert_eq!(d.witness.as_deref(), Some("element-wise iterator `a` is not recoverable from the write index"));
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]

    #[test]
    fn fusion_preserves_outputs(m in 1i64..5, n in 1i64..5, k in 1i64..6, seed in 0u64..1000, ew_first in proptest::bool::ANY) {
        let src = if ew_first { format!("{DECLS}{RELU_LOOP}{GEMM_LOOP}") } else { format!("{DECLS}{GEMM_LOOP}{RELU_LOOP}") };
        let b = bind(m, n, k);
        let p = pair(&src);
        let fused = fuse(&p, &b).unwrap();
        let x = execute(&p.unfused(), &b, seed).unwrap();
        let y = execute(&fused, &b, seed).unwrap();
        proptest::prop_assert_eq!(x, y);
        // heavy statements are duplicated only into the peel, ew ones never
        let l = labels(&fused);
        proptest::prop_assert_eq!(l.iter().filter(|s| s.starts_with('R')).count(), 1);
        proptest::prop_assert_eq!(l.len(), if k == 1 { 2 } else { 3 });
    }
}
