mod common;

use common::{corpus, oracle_topk, random_objects, random_query};
use mcx_core::engine::{execute_batch, execute_partitioned, merge_topk, BatchRequest, ExecutionMode, Selector};
use mcx_core::index::{build_index, partition_dataset};
use mcx_core::select::{full_scan_counts, sort_topk};
use proptest::prelude::*;

#[test]
fn large_batch_matches_oracle() {
    let mut rng = common::rng(2024);
    let domains = [8, 32, 500, 3, 32];
    let objects = random_objects(&mut rng, 100_000, &domains);
    let index = build_index(&objects, None).unwrap();
    let queries: Vec<_> = (0..512)
        .map(|i| random_query(&mut rng, i, &domains, common::KS[i as usize % 3]))
        .collect();
    let res = execute_batch(&index, &BatchRequest::new(queries.clone()).workers(4)).unwrap();
    for (q, r) in queries.iter().zip(&res.results) {
        assert_eq!(r, &oracle_topk(&objects, q), "query {}", q.id());
    }
    let t = res.timings;
    assert!(t.lookup_ns + t.match_ns + t.select_ns + t.merge_ns <= t.total_ns);
}

#[test]
fn modes_selectors_and_knobs_agree() {
    for inst in corpus(7, 25, 6) {
        let base = execute_batch(
            &inst.index,
            &BatchRequest::new(inst.queries.clone()).mode(ExecutionMode::Sequential),
        )
        .unwrap()
        .results;
        for (q, r) in inst.queries.iter().zip(&base) {
            assert_eq!(r, &oracle_topk(&inst.objects, q));
        }
        for (workers, chunk, per_task) in [(2, 4096, 2), (3, 7, 1), (8, 64, 5)] {
            let req = BatchRequest::new(inst.queries.clone())
                .workers(workers)
                .chunk_size(chunk)
                .spans_per_task(per_task);
            assert_eq!(execute_batch(&inst.index, &req).unwrap().results, base);
        }
        for selector in [Selector::Bucket, Selector::Sort] {
            let req = BatchRequest::new(inst.queries.clone()).selector(selector).workers(2);
            assert_eq!(execute_batch(&inst.index, &req).unwrap().results, base, "{selector}");
        }
    }
}

#[test]
fn partitioning_is_invisible() {
    for inst in corpus(11, 15, 5) {
        let n = inst.num_objects();
        let req = BatchRequest::new(inst.queries.clone()).workers(2);
        let whole = execute_batch(&inst.index, &req).unwrap().results;
        for cap in [n, n.div_ceil(2), n.div_ceil(6), 1000, 37] {
            let parts = partition_dataset(&inst.objects, cap.max(1), None).unwrap();
            let merged = execute_partitioned(&parts, &req).unwrap();
            assert_eq!(merged.results, whole, "capacity {cap}");
            let t = merged.timings;
            assert!(t.lookup_ns + t.match_ns + t.select_ns + t.merge_ns <= t.total_ns);
        }
    }
}

#[test]
fn small_partition_cases() {
    let mut rng = common::rng(5);
    let domains = [3, 3, 3];
    let objects = random_objects(&mut rng, 36, &domains);
    let queries: Vec<_> = (0..30).map(|i| random_query(&mut rng, i, &domains, 1 + i as usize % 5)).collect();
    let req = BatchRequest::new(queries.clone());
    let whole = execute_batch(&build_index(&objects, None).unwrap(), &req).unwrap();
    let six = execute_partitioned(&partition_dataset(&objects, 6, None).unwrap(), &req).unwrap();
    assert_eq!(six.results, whole.results);
    let one = execute_partitioned(&partition_dataset(&objects, 36, None).unwrap(), &req).unwrap();
    assert_eq!(one.results, whole.results);

    let ten = &objects[..10];
    let parts = partition_dataset(ten, 4, None).unwrap();
    let sizes: Vec<u32> = parts.iter().map(|p| p.index.num_objects()).collect();
    assert_eq!(sizes, vec![4, 4, 2]);
    for q in &queries {
        let merged = execute_partitioned(&parts, &BatchRequest::new(vec![q.clone()])).unwrap();
        let counts = full_scan_counts(q, ten);
        let nonzero = counts.iter().filter(|&&c| c > 0).count();
        let expect = if nonzero >= q.k() {
            sort_topk(&counts, q.k()).unwrap()[q.k() - 1].count
        } else {
            0
        };
        assert_eq!(merged.results[0].threshold, expect);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_equals_global_sort(
        counts in proptest::collection::vec(0u32..20, 1..200),
        cap in 1usize..50,
        k in 1usize..30,
    ) {
        let lists: Vec<Vec<_>> = counts
            .chunks(cap)
            .enumerate()
            .map(|(p, c)| {
                let mut local = sort_topk(c, k.min(c.len())).unwrap();
                local.retain(|h| h.count > 0);
                local
                    .into_iter()
                    .map(|h| mcx_core::Hit::new(h.id + (p * cap) as u32, h.count))
                    .collect()
            })
            .collect();
        let merged = merge_topk(0, &lists, k).unwrap();
        let mut expect = sort_topk(&counts, k.min(counts.len())).unwrap();
        expect.retain(|h| h.count > 0);
        prop_assert_eq!(merged.entries, expect);
    }
}
