//! Document ingestion, tokenization and fixed-size overlapping chunking.
//!
//! Corpus files are line-delimited JSON: one flat object per line carrying
//! `doc_id`, `title`, `body`, an optional `page_no` and `source_tag`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default chunk window, in tokens.
pub const DEFAULT_CHUNK_SIZE: usize = 256;
/// Default overlap between consecutive chunks, in tokens.
pub const DEFAULT_CHUNK_OVERLAP: usize = 32;

/// Seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn now() -> Self {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Timestamp(secs)
    }

    /// Seconds elapsed since `earlier`, saturating at zero.
    pub fn since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub title: String,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_no: Option<u32>,
    #[serde(default)]
    pub source_tag: String,
}

/// An indexed span of a document.
///
/// `hit_heat` is the accumulated evidence-frequency score of the chunk; it
/// always lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    pub token_start: usize,
    pub token_end: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub page_no: Option<u32>,
    pub hit_heat: f64,
    pub created_at: Timestamp,
}

impl ChunkRecord {
    /// Builds a free-standing chunk whose token range covers its whole text.
    pub fn from_text(chunk_id: impl Into<String>, doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        let n = tokenize(&text).len();
        ChunkRecord {
            chunk_id: chunk_id.into(),
            doc_id: doc_id.into(),
            text,
            token_start: 0,
            token_end: n.max(1),
            page_no: None,
            hit_heat: 0.0,
            created_at: Timestamp::default(),
        }
    }
}

/// A token together with its byte span in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits `text` into lowercase tokens with byte spans.
///
/// Tokens are runs of alphanumeric characters. A hyphen joins two
/// alphanumeric runs (`1-2g`, `covid-19`) and a dot joins two digits (`1.5`).
pub fn tokenize_spans(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;

    for (k, &(pos, c)) in chars.iter().enumerate() {
        let joins = || {
            let prev = k.checked_sub(1).map(|p| chars[p].1);
            let next = chars.get(k + 1).map(|n| n.1);
            match (c, prev, next) {
                ('-', Some(p), Some(n)) => p.is_alphanumeric() && n.is_alphanumeric(),
                ('.', Some(p), Some(n)) => p.is_ascii_digit() && n.is_ascii_digit(),
                _ => false,
            }
        };
        if c.is_alphanumeric() || (start.is_some() && joins()) {
            start.get_or_insert(pos);
        } else if let Some(s) = start.take() {
            out.push(Token {
                text: text[s..pos].to_lowercase(),
                start: s,
                end: pos,
            });
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: text[s..].to_lowercase(),
            start: s,
            end: text.len(),
        });
    }
    out
}

/// Lowercased tokens of `text`; duplicates are preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|t| t.text).collect()
}

/// Splits text into sentence-level chunks.
///
/// Boundaries are `.`, `!`, `?` and `;` followed by whitespace or the end of
/// input, their full-width forms, and newlines. A dot inside a number such
/// as `1.5g` is not a boundary. Returned slices are trimmed and non-empty.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut begin = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((pos, c)) = iter.next() {
        let next = iter.peek().map(|&(_, n)| n);
        let boundary = match c {
            '\n' | '。' | '！' | '？' | '；' => true,
            '.' | '!' | '?' | ';' => next.map_or(true, char::is_whitespace),
            _ => false,
        };
        if boundary {
            let end = pos + c.len_utf8();
            let piece = text[begin..end].trim();
            if !piece.is_empty() && piece.chars().any(char::is_alphanumeric) {
                out.push(piece);
            }
            begin = end;
        }
    }
    let tail = text[begin..].trim();
    if !tail.is_empty() && tail.chars().any(char::is_alphanumeric) {
        out.push(tail);
    }
    out
}

/// Cuts a document into overlapping token windows.
///
/// The window advances by `chunk_size - chunk_overlap` tokens; the final
/// window may be shorter. Chunk ids are `"{doc_id}#{token_start}"`.
pub fn chunk_document(doc: &Document, chunk_size: usize, chunk_overlap: usize) -> Result<Vec<ChunkRecord>> {
    if chunk_size == 0 || chunk_size <= chunk_overlap {
        return Err(Error::InvalidConfig(format!(
            "chunk_size ({chunk_size}) must exceed chunk_overlap ({chunk_overlap})"
        )));
    }
    let tokens = tokenize_spans(&doc.body);
    let total = tokens.len();
    let stride = chunk_size - chunk_overlap;
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < total {
        let end = (start + chunk_size).min(total);
        let text = &doc.body[tokens[start].start..tokens[end - 1].end];
        chunks.push(ChunkRecord {
            chunk_id: format!("{}#{}", doc.doc_id, start),
            doc_id: doc.doc_id.clone(),
            text: text.to_string(),
            token_start: start,
            token_end: end,
            page_no: doc.page_no,
            hit_heat: 0.0,
            created_at: Timestamp::default(),
        });
        if end == total {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

/// Number of chunks [`chunk_document`] produces for a document of `tokens` tokens.
pub fn expected_chunk_count(tokens: usize, chunk_size: usize, chunk_overlap: usize) -> usize {
    if tokens == 0 {
        0
    } else if tokens <= chunk_size {
        1
    } else {
        let stride = chunk_size - chunk_overlap;
        (tokens - chunk_size).div_ceil(stride) + 1
    }
}

/// Parses corpus text (one JSON object per line). Blank lines are skipped.
pub fn parse_corpus(content: &str, path: &Path) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let doc: Document = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if doc.body.trim().is_empty() {
            return Err(parse_err("body is empty".into()));
        }
        if doc.doc_id.is_empty() {
            return Err(parse_err("doc_id is empty".into()));
        }
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::DuplicateId(doc.doc_id));
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Loads every document of a corpus file, in file order.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path)?;
    parse_corpus(&content, path)
}

/// Writes documents in the corpus line format.
pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let mut out = String::new();
    for doc in docs {
        out.push_str(&serde_json::to_string(doc)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc_with_tokens(n: usize) -> Document {
        let body = (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        Document {
            doc_id: "d".into(),
            title: String::new(),
            body,
            page_no: Some(3),
            source_tag: "test".into(),
        }
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Cefazolin 1-2g IV"), vec!["cefazolin", "1-2g", "iv"]);
        assert_eq!(tokenize("q8h, q8h"), vec!["q8h", "q8h"]);
        assert_eq!(tokenize("COVID-19 -- 1.5g. end-"), vec!["covid-19", "1.5g", "end"]);
    }

    #[test]
    fn sentences_respect_decimal_points() {
        assert_eq!(
            split_sentences("Give 1.5g IV. Repeat q8h; monitor.\nStop"),
            vec!["Give 1.5g IV.", "Repeat q8h;", "monitor.", "Stop"]
        );
        assert!(split_sentences("  . ").is_empty());
    }

    #[test]
    fn chunk_examples() {
        let one = chunk_document(&doc_with_tokens(256), 256, 32).unwrap();
        assert_eq!(one.len(), 1);

        let two = chunk_document(&doc_with_tokens(480), 256, 32).unwrap();
        let starts: Vec<_> = two.iter().map(|c| c.token_start).collect();
        assert_eq!(starts, vec![0, 224]);
        assert_eq!(two[1].token_end, 480);
        assert_eq!(two[0].chunk_id, "d#0");
        assert_eq!(two[0].page_no, Some(3));

        let empty = Document {
            body: "  ,; ".into(),
            ..doc_with_tokens(1)
        };
        assert!(chunk_document(&empty, 256, 32).unwrap().is_empty());
    }

    #[test]
    fn chunk_rejects_bad_config() {
        let doc = doc_with_tokens(10);
        assert!(matches!(chunk_document(&doc, 32, 32), Err(Error::InvalidConfig(_))));
        assert!(matches!(chunk_document(&doc, 8, 9), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn corpus_parsing() {
        let path = Path::new("corpus.jsonl");
        let ok = "{\"doc_id\":\"a\",\"title\":\"t\",\"body\":\"x y\",\"source_tag\":\"s\"}\n\
                  {\"doc_id\":\"b\",\"title\":\"t\",\"body\":\"z\",\"page_no\":124,\"source_tag\":\"s\"}\n";
        let docs = parse_corpus(ok, path).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[1].page_no, Some(124));

        let bad = format!("{ok}{{\"doc_id\":\"c\",\"body\":}}\n");
        match parse_corpus(&bad, path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let dup = format!("{ok}{{\"doc_id\":\"a\",\"body\":\"again\"}}\n");
        assert!(matches!(parse_corpus(&dup, path), Err(Error::DuplicateId(id)) if id == "a"));
    }

    proptest! {
        #[test]
        fn chunks_cover_document(n in 0usize..700, size in 2usize..64, overlap_frac in 0.0f64..0.9) {
            let overlap = ((size as f64) * overlap_frac) as usize;
            prop_assume!(overlap < size);
            let doc = doc_with_tokens(n);
            let chunks = chunk_document(&doc, size, overlap).unwrap();
            prop_assert_eq!(chunks.len(), expected_chunk_count(n, size, overlap));

            let tokens = tokenize(&doc.body);
            let mut rebuilt: Vec<String> = Vec::new();
            for (i, c) in chunks.iter().enumerate() {
                prop_assert!(c.token_start < c.token_end);
                prop_assert!(c.token_end - c.token_start <= size);
                let chunk_tokens = tokenize(&c.text);
                prop_assert_eq!(&chunk_tokens[..], &tokens[c.token_start..c.token_end]);
                if i > 0 {
                    prop_assert_eq!(chunks[i - 1].token_end - c.token_start, overlap);
                }
                rebuilt.extend(chunk_tokens.into_iter().skip(if i == 0 { 0 } else { overlap }));
            }
            prop_assert_eq!(rebuilt, tokens);
            prop_assert_eq!(chunks, chunk_document(&doc, size, overlap).unwrap());
        }

        #[test]
        fn tokenize_is_lowercase_and_deterministic(s in "\\PC{0,60}") {
            let a = tokenize(&s);
            prop_assert_eq!(&a, &tokenize(&s));
            for t in &a {
                prop_assert!(!t.is_empty());
                prop_assert_eq!(t, &t.to_lowercase());
            }
        }
    }
}
