mod common;

use common::{mutate, myers_distance, nearest_by_scan, random_seq, LETTERS};
use mcx_core::sa::{
    count_lower_bound, edit_distance, shared_gram_count, SequenceIndex, ESCALATION_SCHEDULE,
};
use rand::Rng;

fn text(s: &[u8]) -> String {
    String::from_utf8(s.to_vec()).unwrap()
}

#[test]
fn bit_parallel_oracle_agrees_with_dp() {
    let mut rng = common::rng(1);
    for _ in 0..3000 {
        let len = rng.random_range(0..50);
        let a = random_seq(&mut rng, len, b"abcd");
        let len = rng.random_range(0..50);
        let b = random_seq(&mut rng, len, b"abcd");
        assert_eq!(myers_distance(&a, &b), edit_distance(&text(&a), &text(&b)));
    }
}

#[test]
fn certified_answers_are_nearest() {
    let mut rng = common::rng(2);
    let base: Vec<Vec<u8>> = (0..10_000).map(|_| random_seq(&mut rng, 40, b"abcdefgh")).collect();
    let idx = SequenceIndex::build(base.iter().map(|s| text(s)).collect(), 3).unwrap();
    let mut certified = 0;
    for _ in 0..1000 {
        let src = &base[rng.random_range(0..base.len())];
        let edits = rng.random_range(2..12);
        let q = mutate(&mut rng, src, edits, b"abcdefgh");
        let out = idx.verify(&text(&q), 32).unwrap();
        let (_, best) = nearest_by_scan(&q, &base);
        if out.certified {
            certified += 1;
            assert_eq!(out.best_distance, best);
        }
    }
    assert!(certified > 0);
}

#[test]
fn escalation_always_finds_nearest() {
    let mut rng = common::rng(3);
    let base: Vec<Vec<u8>> = (0..3000).map(|_| random_seq(&mut rng, 30, LETTERS)).collect();
    let idx = SequenceIndex::build(base.iter().map(|s| text(s)).collect(), 3).unwrap();
    for _ in 0..200 {
        let src = &base[rng.random_range(0..base.len())];
        let edits = rng.random_range(0..20);
        let q = mutate(&mut rng, src, edits, LETTERS);
        let ans = idx.search(&text(&q), &ESCALATION_SCHEDULE).unwrap();
        assert!(ans.certified);
        assert_eq!(ans.best_distance, nearest_by_scan(&q, &base).1);
    }
}

#[test]
fn gram_bound_holds_on_random_pairs() {
    let mut rng = common::rng(4);
    for _ in 0..5000 {
        let len = rng.random_range(0..40);
        let a = random_seq(&mut rng, len, b"abc");
        let b = if rng.random_bool(0.5) {
            let edits = rng.random_range(0..5);
            mutate(&mut rng, &a, edits, b"abc")
        } else {
            let len = rng.random_range(0..40);
            random_seq(&mut rng, len, b"abc")
        };
        let n = rng.random_range(1..5);
        let tau = myers_distance(&a, &b);
        let mc = shared_gram_count(&text(&a), &text(&b), n).unwrap() as i64;
        assert!(mc >= count_lower_bound(b.len(), a.len(), n, tau));
    }
}
