use proptest::prelude::*;

use super::*;
use crate::corpus::Document;

fn list(qid: &str, ids: &[&str]) -> RankedList {
    let hits = ids
        .iter()
        .enumerate()
        .map(|(i, d)| Hit {
            doc_id: d.to_string(),
            score: -(i as f32),
        })
        .collect();
    RankedList::new(qid, hits, ids.len())
}

fn qrels(rows: &[(&str, &str, u32)]) -> QrelSet {
    let mut q = QrelSet::new();
    for &(a, b, g) in rows {
        q.insert(a, b, g);
    }
    q
}

#[test]
fn ndcg_hand_example() {
    let q = qrels(&[("q", "d1", 2), ("q", "d2", 1)]);
    let v = ndcg_at_k(&list("q", &["d2", "d1"]), &q, 10, Gain::Linear);
    let dcg = 1.0 + 2.0 / 3f64.log2();
    let idcg = 2.0 + 1.0 / 3f64.log2();
    assert!((v - dcg / idcg).abs() < 1e-15);
    assert!((v - 0.85972).abs() < 5e-6, "{v}");
    assert_eq!(ndcg_at_k(&list("q", &["d1", "d2"]), &q, 10, Gain::Linear), 1.0);
    assert_eq!(ndcg_at_k(&list("q", &["x", "y"]), &q, 10, Gain::Linear), 0.0);
    assert_eq!(ndcg_at_k(&list("other", &["d1"]), &q, 10, Gain::Linear), 0.0);
}

#[test]
fn recall_and_mrr_definitions() {
    let q = qrels(&[("q", "a", 1), ("q", "b", 1), ("q", "c", 1), ("q", "d", 1)]);
    assert_eq!(recall_at_k(&list("q", &["a", "x"]), &q, 10, 1), 0.25);
    assert_eq!(recall_at_k(&list("q", &["a", "b", "c", "d"]), &q, 10, 1), 1.0);
    assert_eq!(recall_at_k(&list("q", &[]), &q, 10, 1), 0.0);
    assert_eq!(mrr_at_k(&list("q", &["a"]), &q, 10, 1), 1.0);
    assert!((mrr_at_k(&list("q", &["x", "y", "c"]), &q, 10, 1) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(mrr_at_k(&list("q", &["x", "y", "c"]), &q, 2, 1), 0.0);

    let graded = qrels(&[("q", "a", 1), ("q", "b", 2)]);
    assert_eq!(recall_at_k(&list("q", &["a"]), &graded, 10, 2), 0.0);
    assert_eq!(mrr_at_k(&list("q", &["a", "b"]), &graded, 10, 2), 0.5);
}

#[test]
fn metric_names_parse() {
    let specs = MetricSpec::parse_list("ndcg@10, recall@100,mrr@10,ndcg_exp@5").unwrap();
    let names: Vec<String> = specs.iter().map(ToString::to_string).collect();
    assert_eq!(names, ["ndcg@10", "recall@100", "mrr@10", "ndcg_exp@5"]);
    assert!("map@10".parse::<MetricSpec>().is_err());
    assert!("ndcg@0".parse::<MetricSpec>().is_err());
    assert!("ndcg".parse::<MetricSpec>().is_err());
}

#[test]
fn run_means_and_missing_queries() {
    let q = qrels(&[("q1", "a", 1), ("q2", "b", 1)]);
    let run = RunResult::new("ds", vec![list("q1", &["a"]), list("q2", &["x"])], 10);
    let spec = [MetricSpec::new(MetricKind::Ndcg(Gain::Linear), 10)];
    assert_eq!(evaluate_run(&run, &q, &spec).unwrap().values[0].1, 0.5);

    let partial = RunResult::new("ds", vec![list("q1", &["a"])], 10);
    let m = evaluate_run(&partial, &q, &spec).unwrap();
    assert_eq!((m.num_queries, m.values[0].1), (2, 0.5));

    let deep = [MetricSpec::new(MetricKind::Recall, 100)];
    assert!(evaluate_run(&run, &q, &deep).is_err());
}

#[test]
fn zero_relevant_queries_are_configurable() {
    let q = qrels(&[("q1", "a", 1), ("q2", "b", 0)]);
    let run = RunResult::new("ds", vec![list("q1", &["a"])], 10);
    let spec = [MetricSpec::new(MetricKind::Mrr, 10)];
    assert_eq!(evaluate_run(&run, &q, &spec).unwrap().values[0].1, 0.5);
    let skip = EvalOptions {
        include_zero_relevant: false,
    };
    assert_eq!(evaluate_run_with(&run, &q, &spec, skip).unwrap().values[0].1, 1.0);
}

fn ds(name: &str, v: f64) -> DatasetMetrics {
    DatasetMetrics {
        dataset: name.into(),
        num_queries: 1,
        values: vec![("ndcg@10".into(), v)],
    }
}

#[test]
fn aggregation() {
    let r = aggregate_reports(vec![ds("A", 0.4), ds("B", 0.6)], Some("B")).unwrap();
    assert!((r.average[0] - 0.5).abs() < 1e-15);
    assert_eq!(r.average_without.as_ref().unwrap().1[0], 0.4);
    let table = r.to_table();
    assert!(table.contains("Avg\t0.5000"));
    assert!(table.contains("Avg w/o B\t0.4000"));
    assert!(r.to_key_values().contains("avg.ndcg@10=0.500000"));

    assert!(aggregate_reports(vec![ds("A", 0.4)], Some("A")).is_err());
    assert!(aggregate_reports(vec![ds("A", 0.4)], Some("Z")).is_err());
    assert!(aggregate_reports(vec![], None).is_err());
}

#[test]
fn median_conventions() {
    assert_eq!(median(&mut [9, 5, 7]), Some(7.0));
    assert_eq!(median(&mut [8, 4]), Some(6.0));
    assert_eq!(median(&mut []), None);

    let corpus = Corpus::from_documents([
        Document::new("a", "", "one two three"),
        Document::new("b", "", "one"),
        Document::new("c", "", "one two three four five"),
    ])
    .unwrap();
    let run = RunResult::new("ds", vec![list("q", &["a", "b", "c"])], 10);
    assert_eq!(median_topk_doc_length(&run, &corpus, 10).unwrap(), 3.0);
    assert_eq!(median_topk_doc_length(&run, &corpus, 2).unwrap(), 2.0);
    let bad = RunResult::new("ds", vec![list("q", &["zzz"])], 10);
    assert!(matches!(median_topk_doc_length(&bad, &corpus, 10), Err(Error::UnknownDocument(_))));
}

#[test]
fn run_file_round_trip() {
    let lists = vec![
        RankedList::new(
            "q2",
            vec![
                Hit { doc_id: "d1".into(), score: 0.123_456_78 },
                Hit { doc_id: "d0".into(), score: -1.5e-7 },
            ],
            2,
        ),
        RankedList::new("q1", vec![Hit { doc_id: "d9".into(), score: 1.0 }], 1),
    ];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.trec");
    write_run_file(&lists, "gtr", &p).unwrap();
    assert_eq!(read_run_file(&p).unwrap(), lists);
}

fn arb_case() -> impl Strategy<Value = (Vec<u32>, Vec<usize>)> {
    // grades for 12 docs, and a ranking permutation prefix
    (
        proptest::collection::vec(0u32..=5, 12),
        Just((0..12).collect::<Vec<usize>>()).prop_shuffle(),
    )
}

fn build(grades: &[u32], order: &[usize]) -> (QrelSet, RankedList) {
    let mut q = QrelSet::new();
    for (i, &g) in grades.iter().enumerate() {
        q.insert("q", format!("d{i:02}"), g);
    }
    let ids: Vec<String> = order.iter().map(|i| format!("d{i:02}")).collect();
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    (q, list("q", &refs))
}

proptest! {
    #[test]
    fn metrics_in_unit_range_and_monotone_in_k((grades, order) in arb_case()) {
        let (q, l) = build(&grades, &order);
        let mut prev = (0.0, 0.0, 0.0);
        for k in 1..=12 {
            let cur = (
                ndcg_at_k(&l, &q, k, Gain::Linear),
                recall_at_k(&l, &q, k, 1),
                mrr_at_k(&l, &q, k, 1),
            );
            for v in [cur.0, cur.1, cur.2] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
            prop_assert!(cur.1 >= prev.1 && cur.2 >= prev.2);
            prev = cur;
        }
    }

    #[test]
    fn swapping_relevant_upward_never_hurts((grades, order) in arb_case()) {
        let (q, l) = build(&grades, &order);
        let g = |i: usize| q.grade("q", &l.hits[i].doc_id);
        for pos in (1..12).filter(|&p| g(p) > 0 && g(p - 1) == 0) {
            let mut better = l.clone();
            better.hits.swap(pos, pos - 1);
            for k in [1usize, 3, 5, 10] {
                prop_assert!(ndcg_at_k(&better, &q, k, Gain::Linear) >= ndcg_at_k(&l, &q, k, Gain::Linear));
                prop_assert!(recall_at_k(&better, &q, k, 1) >= recall_at_k(&l, &q, k, 1));
                prop_assert!(mrr_at_k(&better, &q, k, 1) >= mrr_at_k(&l, &q, k, 1));
            }
        }
    }

    #[test]
    fn gains_agree_on_binary_grades(bits in proptest::collection::vec(0u32..=1, 12), order in Just((0..12).collect::<Vec<usize>>()).prop_shuffle()) {
        let (q, l) = build(&bits, &order);
        prop_assert_eq!(ndcg_at_k(&l, &q, 10, Gain::Linear), ndcg_at_k(&l, &q, 10, Gain::Exponential));
    }

    #[test]
    fn relabeling_ids_is_invariant((grades, order) in arb_case()) {
        let (q, l) = build(&grades, &order);
        let mut q2 = QrelSet::new();
        for (i, &g) in grades.iter().enumerate() {
            q2.insert("q", format!("x{}", 100 - i), g);
        }
        let ids: Vec<String> = order.iter().map(|i| format!("x{}", 100 - i)).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let l2 = list("q", &refs);
        prop_assert_eq!(ndcg_at_k(&l, &q, 10, Gain::Linear), ndcg_at_k(&l2, &q2, 10, Gain::Linear));
        prop_assert_eq!(recall_at_k(&l, &q, 5, 2), recall_at_k(&l2, &q2, 5, 2));
    }
}
