use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const EXAMPLE: &str = "A,B,C\n1,2,1\n2,1,2\n1,2,2\n";
const Q1: &str = r#"{"items":[{"attr":"A","lo":1,"hi":2},{"attr":"B","lo":1,"hi":1},{"attr":"C","lo":2,"hi":3}]}"#;

fn mcx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcx"))
        .args(args)
        .env_remove("MCX_WORKERS")
        .output()
        .expect("run mcx")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &TempDir, name: &str, contents: impl AsRef<[u8]>) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, contents).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn build_example(dir: &TempDir) -> PathBuf {
    let data = write(dir, "example.csv", EXAMPLE);
    let index = dir.path().join("example.mcix");
    let o = mcx(&["build", "--dataset", s(&data), "--adapter", "relational", "--index", s(&index)]);
    assert!(o.status.success(), "{}", stderr(&o));
    index
}

/// Small deterministic relational table and range queries over it.
fn fuzz_corpus(dir: &TempDir) -> (PathBuf, PathBuf) {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = move |m: u64| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state % m
    };
    let mut csv = String::from("a,b,c,d\n");
    for _ in 0..2000 {
        let row: Vec<String> = (0..4).map(|_| next(12).to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    let mut queries = String::new();
    for i in 0..60 {
        let mut items = Vec::new();
        for a in 0..4 {
            if next(4) == 0 {
                continue;
            }
            let lo = next(12);
            let hi = lo + next(4);
            items.push(format!(r#"{{"attr":{a},"lo":{lo},"hi":{hi}}}"#));
        }
        let k = [1, 10, 100][i % 3];
        queries.push_str(&format!(r#"{{"k":{k},"items":[{}]}}"#, items.join(",")));
        queries.push('\n');
    }
    (write(dir, "fuzz.csv", csv), write(dir, "fuzz.jsonl", queries))
}

#[test]
fn running_example_has_six_keywords() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "example.csv", EXAMPLE);
    let index = dir.path().join("example.mcix");
    let stats = dir.path().join("stats.json");
    let o = mcx(&[
        "build", "--dataset", s(&data), "--adapter", "relational", "--index", s(&index), "--stats-out", s(&stats),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&stats).unwrap()).unwrap();
    // (A,1) (A,2) (B,1) (B,2) (C,1) (C,2)
    assert_eq!(v["keywords"], 6);
    assert_eq!(v["objects"], 3);
    assert_eq!(v["longest_list"], 2);
    assert!(stdout(&o).contains("keywords 6"));
}

#[test]
fn builds_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let mut vec = Vec::new();
    for i in 0..200u32 {
        vec.extend_from_slice(&4u32.to_le_bytes());
        for d in 0..4u32 {
            vec.extend_from_slice(&(((i * 7 + d * 13) % 17) as f32 / 3.0).to_le_bytes());
        }
    }
    let data = write(&dir, "v.bin", vec);
    for adapter in ["relational", "vectors-pstable", "vectors-rbh"] {
        let data = if adapter == "relational" { write(&dir, "t.csv", EXAMPLE) } else { data.clone() };
        let a = dir.path().join("a.mcix");
        let b = dir.path().join("b.mcix");
        for out in [&a, &b] {
            let o = mcx(&["build", "--dataset", s(&data), "--adapter", adapter, "--seed", "7", "--index", s(out)]);
            assert!(o.status.success(), "{adapter}: {}", stderr(&o));
        }
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap(), "{adapter}");
        assert_eq!(
            fs::read(dir.path().join("a.mcix.encoder.json")).unwrap(),
            fs::read(dir.path().join("b.mcix.encoder.json")).unwrap(),
            "{adapter}"
        );
    }
}

#[test]
fn empty_dataset_is_rejected() {
    let dir = TempDir::new().unwrap();
    let index = dir.path().join("x.mcix");
    for (name, adapter) in [("e.csv", "relational"), ("e.bin", "vectors-rbh"), ("e.txt", "sequences")] {
        let data = write(&dir, name, "");
        let o = mcx(&["build", "--dataset", s(&data), "--adapter", adapter, "--index", s(&index)]);
        assert_eq!(o.status.code(), Some(2), "{adapter}");
        assert!(stderr(&o).contains("no records"), "{adapter}: {}", stderr(&o));
    }
}

#[test]
fn malformed_lines_are_located() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "bad.csv", "a,b\n1,2\n3,x\n");
    let schema = write(&dir, "bad.json", r#"{"attributes":[{"name":"a","kind":"integer"},{"name":"b","kind":"integer"}]}"#);
    let index = dir.path().join("x.mcix");
    let o = mcx(&[
        "build", "--dataset", s(&data), "--adapter", "relational", "--schema", s(&schema), "--index", s(&index),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let data = write(&dir, "short.bin", [3u8, 0, 0, 0, 0, 0]);
    let o = mcx(&["build", "--dataset", s(&data), "--adapter", "vectors-pstable", "--index", s(&index)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("record 1"), "{}", stderr(&o));
}

#[test]
fn running_example_query() {
    let dir = TempDir::new().unwrap();
    let index = build_example(&dir);
    let queries = write(&dir, "q.jsonl", format!("{Q1}\n"));
    for selector in ["cpq", "bucket", "sort"] {
        let o = mcx(&["query", "--index", s(&index), "--queries", s(&queries), "--selector", selector]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o), "{\"query_id\":0,\"topk\":[{\"id\":1,\"count\":3}],\"threshold\":3}\n");
    }
}

#[test]
fn no_queries_no_output() {
    let dir = TempDir::new().unwrap();
    let index = build_example(&dir);
    let queries = write(&dir, "q.jsonl", "");
    let o = mcx(&["query", "--index", s(&index), "--queries", s(&queries)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
}

#[test]
fn oracle_agrees_on_fuzz_corpus() {
    let dir = TempDir::new().unwrap();
    let (data, queries) = fuzz_corpus(&dir);
    let index = dir.path().join("fuzz.mcix");
    let o = mcx(&["build", "--dataset", s(&data), "--adapter", "relational", "--index", s(&index)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut outputs = Vec::new();
    for extra in [&[][..], &["--workers", "3"], &["--partition-capacity", "333"], &["--selector", "bucket"]] {
        let mut args = vec!["query", "--index", s(&index), "--queries", s(&queries), "--oracle"];
        args.extend_from_slice(extra);
        let o = mcx(&args);
        assert_eq!(o.status.code(), Some(0), "{extra:?}: {}", stderr(&o));
        assert_eq!(stdout(&o).lines().count(), 60);
        outputs.push(stdout(&o));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn estimate_m_table() {
    let o = mcx(&["estimate-m", "--eps", "0.06", "--delta", "0.06"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("s,m_binomial"));
    let rows: Vec<(f64, u32)> = lines
        .map(|l| {
            let (s, m) = l.split_once(',').unwrap();
            (s.parse().unwrap(), m.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 19);
    let m = |s: f64| rows.iter().find(|r| (r.0 - s).abs() < 1e-9).unwrap().1;
    assert!(m(0.3).abs_diff(m(0.7)) <= 1);
    let peak = rows.iter().max_by_key(|r| r.1).unwrap();
    assert!((peak.0 - 0.5).abs() < 1e-9);
    assert!(stderr(&o).contains("2174"));

    let o = mcx(&["estimate-m", "--mode", "hoeffding"]);
    assert_eq!(stdout(&o).trim(), "2174");
}

#[test]
fn bench_hashes_agree() {
    let dir = TempDir::new().unwrap();
    let (data, queries) = fuzz_corpus(&dir);
    let o = mcx(&[
        "bench", "--dataset", s(&data), "--adapter", "relational", "--queries", s(&queries), "--k", "10",
        "--workers", "1,4", "--repeats", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut rows = csv::Reader::from_reader(out.as_bytes());
    let header: Vec<String> = rows.headers().unwrap().iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let recs: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), 6);
    let hash = &recs[0][col("result_hash")];
    assert_eq!(hash.len(), 64);
    for r in &recs {
        assert_eq!(&r[col("result_hash")], hash);
        let n = |c: &str| r[col(c)].parse::<u128>().unwrap();
        let stages: u128 = ["build_ns", "load_ns", "lookup_ns", "match_ns", "select_ns", "merge_ns"]
            .iter()
            .map(|c| n(c))
            .sum();
        assert!(stages <= n("total_ns"));
    }
}

#[test]
fn encoder_mismatch_is_refused() {
    let dir = TempDir::new().unwrap();
    let index = build_example(&dir);
    let other = write(&dir, "other.csv", "A,B,C\n1,1,1\n");
    let other_index = dir.path().join("other.mcix");
    let o = mcx(&["build", "--dataset", s(&other), "--adapter", "relational", "--index", s(&other_index)]);
    assert!(o.status.success());
    fs::copy(dir.path().join("other.mcix.encoder.json"), dir.path().join("example.mcix.encoder.json")).unwrap();
    let queries = write(&dir, "q.jsonl", format!("{Q1}\n"));
    let o = mcx(&["query", "--index", s(&index), "--queries", s(&queries)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("refusing"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(mcx(&["query"]).status.code(), Some(1));
    assert_eq!(mcx(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mcx(&["estimate-m", "--eps", "0"]).status.code(), Some(1));
    assert_eq!(mcx(&["--help"]).status.code(), Some(0));
    let dir = TempDir::new().unwrap();
    let index = build_example(&dir);
    let queries = write(&dir, "q.jsonl", format!("{Q1}\n"));
    let o = mcx(&["query", "--index", s(&index), "--queries", s(&queries), "--k", "0"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sequence_pipeline_finds_nearest() {
    let dir = TempDir::new().unwrap();
    let seqs = ["kitten", "sitting", "mitten", "fitting", "bitten"];
    let data = write(&dir, "s.txt", seqs.join("\n") + "\n");
    let index = dir.path().join("s.mcix");
    let o = mcx(&["build", "--dataset", s(&data), "--adapter", "sequences", "--n", "2", "--index", s(&index)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let queries = write(&dir, "q.jsonl", "{\"sequence\":\"sittin\"}\n{\"sequence\":\"zzz\"}\n");
    let o = mcx(&["query", "--index", s(&index), "--queries", s(&queries), "--dataset", s(&data), "--k", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["nearest"]["id"], 1);
    assert_eq!(lines[0]["nearest"]["distance"], 1);
    assert_eq!(lines[0]["nearest"]["certified"], true);
    // no shared grams: empty top-k, nearest still found by scan
    assert_eq!(lines[1]["topk"], serde_json::json!([]));
    assert_eq!(lines[1]["nearest"]["distance"], 6);
}
