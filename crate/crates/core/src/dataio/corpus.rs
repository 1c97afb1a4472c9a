use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{malformed, read_text, record_lines, DataError};
use crate::types::{validate_dialogue, Dialogue, DialogueError, Segmentation, Utterance};

/// Gold boundary marker in the plaintext format.
pub const SEPARATOR: &str = "=====";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Plain,
    Structured,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub format: CorpusFormat,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }
}

struct Pending {
    first_line: usize,
    texts: Vec<String>,
    boundaries: Vec<usize>,
    separator_line: Option<usize>,
}

impl Pending {
    fn new(line: usize) -> Self {
        Self {
            first_line: line,
            texts: Vec::new(),
            boundaries: Vec::new(),
            separator_line: None,
        }
    }

    fn finish(self, id: String) -> Result<Dialogue, DataError> {
        if let Some(line) = self.separator_line {
            return Err(DataError::SeparatorAtEdge { line });
        }
        let line = self.first_line;
        let d = Dialogue::from_texts(id, self.texts)
            .with_gold(self.boundaries)
            .map_err(|source| DataError::Dialogue { line, source })?;
        validate_dialogue(d).map_err(|source| DataError::Dialogue { line, source })
    }
}

/// One utterance per line, `=====` between topic segments, blank lines
/// between dialogues. Ids are `{stem}-{ordinal}` counting from 1.
pub fn parse_plaintext(text: &str, stem: &str) -> Result<Corpus, DataError> {
    let mut dialogues = Vec::new();
    let mut pending: Option<Pending> = None;
    let close = |p: Pending, dialogues: &mut Vec<Dialogue>| -> Result<(), DataError> {
        let id = format!("{stem}-{}", dialogues.len() + 1);
        dialogues.push(p.finish(id)?);
        Ok(())
    };
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if line.trim().is_empty() {
            if let Some(p) = pending.take() {
                close(p, &mut dialogues)?;
            }
            continue;
        }
        let p = pending.get_or_insert_with(|| Pending::new(line_no));
        if line == SEPARATOR {
            if p.texts.is_empty() {
                return Err(DataError::SeparatorAtEdge { line: line_no });
            }
            if p.separator_line.is_some() {
                return Err(DataError::Dialogue {
                    line: line_no,
                    source: DialogueError::DuplicateBoundary(p.texts.len()),
                });
            }
            p.separator_line = Some(line_no);
            continue;
        }
        if p.separator_line.take().is_some() {
            p.boundaries.push(p.texts.len());
        }
        p.texts.push(line.to_string());
    }
    if let Some(p) = pending.take() {
        close(p, &mut dialogues)?;
    }
    if dialogues.is_empty() {
        return Err(DataError::EmptyFile);
    }
    Ok(Corpus {
        dialogues,
        format: CorpusFormat::Plain,
    })
}

pub fn load_plaintext(path: &Path) -> Result<Corpus, DataError> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dialogue");
    parse_plaintext(&read_text(path)?, stem)
}

/// Writes original texts and gold boundaries; ids and rewrites are not
/// representable in this format.
pub fn format_plaintext(dialogues: &[Dialogue]) -> Result<String, DataError> {
    let mut out = String::new();
    for (k, d) in dialogues.iter().enumerate() {
        if k > 0 {
            out.push('\n');
        }
        let gold = d.gold.clone().unwrap_or_else(|| Segmentation::whole(d.len()));
        for u in &d.utterances {
            if u.text.contains('\n') || u.text.trim_end() == SEPARATOR || u.text.trim().is_empty() {
                return Err(DataError::Unrepresentable(format!(
                    "utterance {} of `{}` cannot be written as a plaintext line",
                    u.index, d.id
                )));
            }
            out.push_str(&u.text);
            out.push('\n');
            if gold.is_boundary(u.index) {
                out.push_str(SEPARATOR);
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// One JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuredRecord {
    pub id: String,
    pub utterances: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roles: Option<Vec<String>>,
}

impl StructuredRecord {
    fn into_dialogue(self, line: usize) -> Result<Dialogue, DataError> {
        let n = self.utterances.len();
        if let Some(roles) = &self.roles {
            if roles.len() != n {
                return Err(malformed(line, format!("{} roles for {} utterances", roles.len(), n)));
            }
        }
        let mut roles = self.roles.map(|r| r.into_iter().map(Some).collect::<Vec<_>>());
        let utterances = self
            .utterances
            .into_iter()
            .enumerate()
            .map(|(i, text)| Utterance {
                index: i + 1,
                speaker: roles.as_mut().and_then(|r| r[i].take()),
                text,
                rewritten: None,
            })
            .collect();
        let gold = self
            .boundaries
            .map(|b| Segmentation::new(n, b))
            .transpose()
            .map_err(|source| DataError::Dialogue { line, source })?;
        let d = Dialogue {
            id: self.id,
            utterances,
            gold,
        };
        validate_dialogue(d).map_err(|source| DataError::Dialogue { line, source })
    }

    pub fn from_dialogue(d: &Dialogue) -> Self {
        let roles: Option<Vec<String>> = d.utterances.iter().map(|u| u.speaker.clone()).collect();
        Self {
            id: d.id.clone(),
            utterances: d.utterances.iter().map(|u| u.text.clone()).collect(),
            boundaries: d.gold.as_ref().map(|g| g.boundaries().to_vec()),
            roles,
        }
    }
}

pub fn parse_structured(text: &str) -> Result<Corpus, DataError> {
    let mut seen = BTreeSet::new();
    let mut dialogues = Vec::new();
    for (line, raw) in record_lines(text) {
        let rec: StructuredRecord = serde_json::from_str(raw).map_err(|e| malformed(line, e))?;
        if !seen.insert(rec.id.clone()) {
            return Err(DataError::DuplicateId { id: rec.id, line });
        }
        dialogues.push(rec.into_dialogue(line)?);
    }
    if dialogues.is_empty() {
        return Err(DataError::EmptyFile);
    }
    Ok(Corpus {
        dialogues,
        format: CorpusFormat::Structured,
    })
}

pub fn load_structured(path: &Path) -> Result<Corpus, DataError> {
    parse_structured(&read_text(path)?)
}

pub fn format_structured(dialogues: &[Dialogue]) -> String {
    dialogues
        .iter()
        .map(|d| {
            let mut s = serde_json::to_string(&StructuredRecord::from_dialogue(d)).expect("record serializes");
            s.push('\n');
            s
        })
        .collect()
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, DataError> {
    match format {
        CorpusFormat::Plain => load_plaintext(path),
        CorpusFormat::Structured => load_structured(path),
    }
}
