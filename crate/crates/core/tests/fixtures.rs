use std::path::{Path, PathBuf};

use dtseg_core::dataio::{
    format_plaintext, format_rewrites, load_coherence_cache, load_embedding_cache, load_head, load_plaintext,
    load_rewrites, load_structured, write_coherence_cache, write_embedding_cache, write_head, write_report, DataError,
    ReportRow,
};
use dtseg_core::ncum::ProjectionHead;
use dtseg_core::rewrite::apply_map;
use dtseg_core::scoring::{relevance_series, CoherenceSeries};
use dtseg_core::segmenters::texttiling;
use dtseg_core::RunConfig;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

#[test]
fn shipped_caches_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let emb = load_embedding_cache(&fixture("tiling.dtse")).unwrap();
    let coh = load_coherence_cache(&fixture("tiling.dtsc")).unwrap();
    let (e2, c2) = (dir.path().join("e.dtse"), dir.path().join("c.dtsc"));
    write_embedding_cache(&e2, &emb).unwrap();
    write_coherence_cache(&c2, &coh).unwrap();
    assert_eq!(
        std::fs::read(&e2).unwrap(),
        std::fs::read(fixture("tiling.dtse")).unwrap()
    );
    assert_eq!(
        std::fs::read(&c2).unwrap(),
        std::fs::read(fixture("tiling.dtsc")).unwrap()
    );
    assert_eq!(emb.keys().collect::<Vec<_>>(), ["tiling-1", "tiling-2"]);
}

#[test]
fn shipped_corpus_and_cache_agree() {
    let corpus = load_plaintext(&fixture("tiling.txt")).unwrap();
    let emb = load_embedding_cache(&fixture("tiling.dtse")).unwrap();
    let cfg = RunConfig::default();
    for d in &corpus.dialogues {
        let e = &emb[&d.id];
        assert_eq!(e.n(), d.len());
        let rel = relevance_series(e, &CoherenceSeries::zeros(d.gap_count()), 0.0)
            .unwrap()
            .series;
        let seg = texttiling(&rel, &cfg).unwrap();
        assert_eq!(Some(&seg), d.gold.as_ref(), "{}", d.id);
    }
}

#[test]
fn plaintext_file_round_trip() {
    for name in ["tiling.txt", "shopping.txt", "eval_n5.txt"] {
        let text = std::fs::read_to_string(fixture(name)).unwrap();
        let corpus = load_plaintext(&fixture(name)).unwrap();
        assert_eq!(format_plaintext(&corpus.dialogues).unwrap(), text, "{name}");
    }
}

#[test]
fn shopping_rewrites_preserve_structure() {
    let corpus = load_plaintext(&fixture("shopping.txt")).unwrap();
    let map = load_rewrites(&fixture("shopping.rewrites.jsonl")).unwrap();
    assert_eq!(
        format_rewrites(&map),
        std::fs::read_to_string(fixture("shopping.rewrites.jsonl")).unwrap()
    );
    let d = corpus.dialogues[0].clone();
    let r = apply_map(d.clone(), &map, true).unwrap();
    assert_eq!(r.len(), 7);
    assert_eq!(r.gold, d.gold);
    assert_eq!(r.utterances[2].text, "Yes please.");
    assert_eq!(
        r.resolved_texts()[2],
        "Yes, I would like directions to the Stanford Shopping Center at 773 Alger Dr, please."
    );
    assert_eq!(
        r.resolved_texts()[6],
        "Schedule my sister's doctor appointment for 4pm today please."
    );
}

#[test]
fn head_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.dtsh");
    let head = ProjectionHead::from_parts(2, vec![0.5, -1.25, 3.0, 1e-300], vec![0.1, -0.2], true).unwrap();
    write_head(&path, &head).unwrap();
    assert_eq!(load_head(&path).unwrap(), head);
}

#[test]
fn loader_errors_carry_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.jsonl");
    std::fs::write(
        &p,
        "{\"id\":\"a\",\"utterances\":[\"x\"]}\n\n{\"id\":\"b\",\"utterances\":[\"y\"],\"extra\":1}\n",
    )
    .unwrap();
    match load_structured(&p) {
        Err(DataError::MalformedRecord { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let missing = dir.path().join("missing.dtse");
    assert!(matches!(load_embedding_cache(&missing), Err(DataError::Io { .. })));
}

#[test]
fn report_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.txt");
    let rows = vec![ReportRow {
        method: "ours".into(),
        corpus: "dialseg711".into(),
        dialogues: 711,
        pk: 0.1142,
        wd: 0.1297,
    }];
    let jsonl = write_report(&rows, &path).unwrap();
    let table = std::fs::read_to_string(&path).unwrap();
    assert!(table.contains("11.42") && table.contains("12.97"), "{table}");
    let back: ReportRow = serde_json::from_str(std::fs::read_to_string(jsonl).unwrap().trim()).unwrap();
    assert_eq!(back, rows[0]);
}
