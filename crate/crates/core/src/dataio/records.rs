use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{malformed, read_text, record_lines, DataError};
use crate::ncum::PairSet;
use crate::rewrite::{RewriteError, RewriteMap};
use crate::types::Segmentation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewriteRecord {
    pub id: String,
    pub index: usize,
    pub text: String,
}

pub fn parse_rewrites(text: &str) -> Result<RewriteMap, DataError> {
    let mut map = RewriteMap::new();
    for (line, raw) in record_lines(text) {
        let rec: RewriteRecord = serde_json::from_str(raw).map_err(|e| malformed(line, e))?;
        if rec.index == 0 {
            return Err(malformed(line, "index is 1-based; got 0"));
        }
        match map.insert(rec.id, rec.index, rec.text) {
            Ok(()) => {}
            Err(RewriteError::DuplicateKey { id, index }) => return Err(DataError::DuplicateKey { id, index, line }),
            Err(RewriteError::EmptyText { .. }) => return Err(malformed(line, "empty rewrite text")),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(map)
}

pub fn load_rewrites(path: &Path) -> Result<RewriteMap, DataError> {
    parse_rewrites(&read_text(path)?)
}

pub fn format_rewrites(map: &RewriteMap) -> String {
    map.iter()
        .map(|(id, index, text)| {
            let rec = RewriteRecord {
                id: id.to_string(),
                index,
                text: text.to_string(),
            };
            serde_json::to_string(&rec).expect("record serializes") + "\n"
        })
        .collect()
}

/// Predicted boundaries for one dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisRecord {
    pub id: String,
    pub n: usize,
    pub boundaries: Vec<usize>,
}

impl HypothesisRecord {
    pub fn new(id: impl Into<String>, seg: &Segmentation) -> Self {
        Self {
            id: id.into(),
            n: seg.n(),
            boundaries: seg.boundaries().to_vec(),
        }
    }

    pub fn segmentation(&self) -> Result<Segmentation, crate::types::DialogueError> {
        Segmentation::new(self.n, self.boundaries.clone())
    }
}

pub fn parse_hypotheses(text: &str) -> Result<Vec<HypothesisRecord>, DataError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, raw) in record_lines(text) {
        let rec: HypothesisRecord = serde_json::from_str(raw).map_err(|e| malformed(line, e))?;
        rec.segmentation()
            .map_err(|source| DataError::Dialogue { line, source })?;
        if !seen.insert(rec.id.clone()) {
            return Err(DataError::DuplicateId { id: rec.id, line });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_hypotheses(path: &Path) -> Result<Vec<HypothesisRecord>, DataError> {
    parse_hypotheses(&read_text(path)?)
}

pub fn format_hypotheses(records: &[HypothesisRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// One mined pair; `label` is `"+"` or `"-"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub anchor: usize,
    pub other: usize,
    pub label: String,
}

pub fn pair_records(id: &str, pairs: &PairSet) -> Vec<PairRecord> {
    let rec = |(a, o): &(usize, usize), label: &str| PairRecord {
        id: id.to_string(),
        anchor: *a,
        other: *o,
        label: label.to_string(),
    };
    pairs
        .positives
        .iter()
        .map(|p| rec(p, "+"))
        .chain(pairs.negatives.iter().map(|p| rec(p, "-")))
        .collect()
}

pub fn format_pairs(records: &[PairRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Raw gap scores for one dialogue, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceRecord {
    pub id: String,
    pub scores: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub zero_norm_gaps: Vec<usize>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rewrite_records() {
        let text = concat!(
            "{\"id\":\"d\",\"index\":3,\"text\":\"Yes, I would like directions.\"}\n",
            "\n",
            "{\"id\":\"d\",\"index\":1,\"text\":\"Hi.\"}\n",
        );
        let m = parse_rewrites(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.get("d", 3), Some("Yes, I would like directions."));
        assert_eq!(parse_rewrites(&format_rewrites(&m)).unwrap(), m);
    }

    #[test]
    fn rewrite_errors() {
        let dup = "{\"id\":\"d\",\"index\":1,\"text\":\"a\"}\n{\"id\":\"d\",\"index\":1,\"text\":\"b\"}\n";
        assert!(matches!(
            parse_rewrites(dup),
            Err(DataError::DuplicateKey { line: 2, index: 1, .. })
        ));
        assert!(matches!(
            parse_rewrites("{\"id\":\"d\",\"index\":0,\"text\":\"a\"}"),
            Err(DataError::MalformedRecord { line: 1, .. })
        ));
        assert!(matches!(
            parse_rewrites("{\"id\":\"d\",\"index\":2,\"text\":\"\"}"),
            Err(DataError::MalformedRecord { .. })
        ));
        assert!(matches!(
            parse_rewrites("not json"),
            Err(DataError::MalformedRecord { .. })
        ));
    }

    #[test]
    fn hypotheses() {
        let recs = vec![
            HypothesisRecord::new("a", &Segmentation::new(5, vec![2]).unwrap()),
            HypothesisRecord::new("b", &Segmentation::whole(1)),
        ];
        let text = format_hypotheses(&recs);
        assert_eq!(text.lines().next().unwrap(), r#"{"id":"a","n":5,"boundaries":[2]}"#);
        assert_eq!(parse_hypotheses(&text).unwrap(), recs);
        assert!(matches!(
            parse_hypotheses(r#"{"id":"a","n":3,"boundaries":[3]}"#),
            Err(DataError::Dialogue { line: 1, .. })
        ));
    }

    #[test]
    fn pairs_to_records() {
        let p = PairSet {
            positives: vec![(1, 2)],
            negatives: vec![(1, 5)],
        };
        let recs = pair_records("z", &p);
        assert_eq!(
            format_pairs(&recs),
            "{\"id\":\"z\",\"anchor\":1,\"other\":2,\"label\":\"+\"}\n{\"id\":\"z\",\"anchor\":1,\"other\":5,\"label\":\"-\"}\n"
        );
    }
}
