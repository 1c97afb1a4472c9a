//! On-disk formats: dialogue corpora, binary embedding/coherence/head files,
//! rewrite records, hypothesis and pair streams, and evaluation reports.
//!
//! All external indices are 1-based. Loaders reject malformed input and
//! report the line number (text formats) or byte offset (binary formats).

mod cache;
mod corpus;
mod records;
mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::rewrite::RewriteError;
use crate::types::DialogueError;

pub use cache::{
    decode_coherence_cache, decode_embedding_cache, decode_head, encode_coherence_cache, encode_embedding_cache,
    encode_head, load_coherence_cache, load_embedding_cache, load_head, write_coherence_cache, write_embedding_cache,
    write_head, CACHE_VERSION, COHERENCE_MAGIC, EMBEDDING_MAGIC, HEAD_MAGIC,
};
pub use corpus::{
    format_plaintext, format_structured, load_corpus, load_plaintext, load_structured, parse_plaintext,
    parse_structured, Corpus, CorpusFormat, StructuredRecord,
};
pub use records::{
    format_hypotheses, format_pairs, format_rewrites, load_hypotheses, load_rewrites, pair_records, parse_hypotheses,
    parse_rewrites, HypothesisRecord, PairRecord, RelevanceRecord, RewriteRecord,
};
pub use report::{format_table, write_report, ReportRow};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file contains no records")]
    EmptyFile,
    #[error("line {line}: separator at the start or end of a dialogue")]
    SeparatorAtEdge { line: usize },
    #[error("line {line}: malformed record: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: duplicate dialogue id `{id}`")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: duplicate rewrite key ({id}, {index})")]
    DuplicateKey { id: String, index: usize, line: usize },
    #[error("line {line}: {source}")]
    Dialogue {
        line: usize,
        #[source]
        source: DialogueError,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("truncated file: needed {needed} bytes at offset {offset}, {available} available")]
    TruncatedFile {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{count} unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
    #[error("entry `{id}` has dimension {found}, expected {expected}")]
    DimensionMismatchAcrossEntries { id: String, expected: usize, found: usize },
    #[error("non-finite value at offset {offset}")]
    NonFiniteValue { offset: usize },
    #[error("invalid UTF-8 in id at offset {offset}")]
    BadUtf8 { offset: usize },
    #[error("duplicate cache entry `{id}` at offset {offset}")]
    DuplicateEntry { id: String, offset: usize },
    #[error("invalid cache entry at offset {offset}: {reason}")]
    BadEntry { offset: usize, reason: String },
    #[error("cannot serialize: {0}")]
    Unrepresentable(String),
    #[error("no results to report")]
    EmptyResults,
    #[error(transparent)]
    Rewrite(#[from] RewriteError),
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    std::fs::write(path, bytes).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Non-blank lines of a line-delimited record stream, numbered from 1.
pub(crate) fn record_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub(crate) fn malformed(line: usize, reason: impl std::fmt::Display) -> DataError {
    DataError::MalformedRecord {
        line,
        reason: reason.to_string(),
    }
}
