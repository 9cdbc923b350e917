//! Document ingestion: Gutenberg boilerplate stripping, rule-based sentence
//! segmentation and the line-delimited document record format.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Abbreviations that never end a sentence, compared lowercased without the
/// final period.
pub const ABBREVIATIONS: &[&str] = &["mr", "mrs", "dr", "st", "vs", "etc", "i.e", "e.g"];

const TERMINATORS: &[char] = &['.', '!', '?'];
const CLOSERS: &[char] = &['"', '\'', '\u{201D}', '\u{2019}', ')', ']', '\u{BB}', '_', '*'];
const OPENERS: &[char] = &['"', '\'', '\u{201C}', '\u{2018}', '\u{AB}'];

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub token_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub sentences: Vec<Sentence>,
    pub source_path: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DocumentStats {
    pub sentence_count: usize,
    pub token_count: usize,
    pub mean_sentence_length: f64,
}

impl Document {
    /// Segments `body` into a document. Fails when the body has no content.
    pub fn from_text(
        id: impl Into<String>,
        title: impl Into<String>,
        body: &str,
        source_path: impl Into<String>,
    ) -> Result<Self> {
        if body.trim().is_empty() {
            return Err(Error::EmptyBody);
        }
        let sentences = segment_sentences(body);
        if sentences.is_empty() {
            return Err(Error::NoSentences);
        }
        Ok(Document {
            id: id.into(),
            title: title.into(),
            sentences,
            source_path: source_path.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.sentences.iter().map(|s| s.text.as_str()).collect()
    }
}

/// Reads a UTF-8 text file and segments its body.
///
/// With `strip_boilerplate`, everything up to and including the
/// `*** START OF` line and from the `*** END OF` line onwards is dropped.
pub fn load_document(path: impl AsRef<Path>, strip_boilerplate: bool) -> Result<Document> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::read(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::NotUtf8(path.to_path_buf()))?;
    let text = text.strip_prefix('\u{FEFF}').unwrap_or(&text);

    let stem = file_stem(path);
    let title = gutenberg_title(text).unwrap_or_else(|| stem.clone());
    let body = if strip_boilerplate {
        strip_gutenberg_boilerplate(text)
    } else {
        text
    };
    Document::from_text(
        sanitize_id(&stem),
        title,
        body,
        path.to_string_lossy().into_owned(),
    )
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "doc".to_string())
}

/// Identifier [`load_document`] assigns to the file at `path`.
pub fn document_id(path: impl AsRef<Path>) -> String {
    sanitize_id(&file_stem(path.as_ref()))
}

/// Returns the body between the Gutenberg start and end marker lines.
/// Missing markers leave the corresponding end of the text untouched.
pub fn strip_gutenberg_boilerplate(text: &str) -> &str {
    let mut start = 0;
    let mut end = text.len();
    let mut offset = 0;
    let mut seen_start = false;
    for line in text.split_inclusive('\n') {
        let upper = line.to_uppercase();
        if !seen_start && upper.contains("*** START OF") {
            start = offset + line.len();
            seen_start = true;
        } else if upper.contains("*** END OF") && offset >= start {
            end = offset;
            break;
        }
        offset += line.len();
    }
    &text[start..end.max(start)]
}

fn gutenberg_title(text: &str) -> Option<String> {
    text.lines()
        .take(200)
        .find_map(|l| l.trim().strip_prefix("Title:"))
        .map(|t| t.trim().to_string())
        .filter(|t| !t.is_empty())
}

fn sanitize_id(stem: &str) -> String {
    let id: String = stem
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if id.is_empty() {
        "doc".to_string()
    } else {
        id
    }
}

/// Deterministic rule-based segmentation.
///
/// A sentence ends at a run of `.`, `!` or `?` (plus any closing quotes or
/// brackets) that is followed by whitespace and then an uppercase letter or
/// an opening quote, unless the period closes a listed abbreviation. Blank
/// lines always end a sentence. Internal whitespace is collapsed to single
/// spaces.
pub fn segment_sentences(text: &str) -> Vec<Sentence> {
    let mut out = Vec::new();
    for para in paragraphs(text) {
        for piece in split_paragraph(para) {
            let tokens: Vec<&str> = piece.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            out.push(Sentence {
                index: out.len(),
                text: tokens.join(" "),
                token_count: tokens.len(),
            });
        }
    }
    out
}

fn paragraphs(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim().is_empty() {
            if let Some(s) = start.take() {
                out.push(&text[s..offset]);
            }
        } else if start.is_none() {
            start = Some(offset);
        }
        offset += line.len();
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

fn split_paragraph(para: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = para.char_indices().collect();
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let (_, c) = chars[i];
        if !TERMINATORS.contains(&c) {
            i += 1;
            continue;
        }
        let run_start = i;
        let mut j = i;
        while j + 1 < chars.len() && TERMINATORS.contains(&chars[j + 1].1) {
            j += 1;
        }
        while j + 1 < chars.len() && CLOSERS.contains(&chars[j + 1].1) {
            j += 1;
        }
        let end = j + 1;
        let mut k = end;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        let boundary = k > end
            && k < chars.len()
            && (chars[k].1.is_uppercase() || OPENERS.contains(&chars[k].1))
            && !(c == '.' && j == run_start && is_abbreviation(&chars[..run_start]));
        if boundary {
            let byte_end = chars[end].0;
            pieces.push(&para[start..byte_end]);
            start = byte_end;
            i = k;
        } else {
            i = end;
        }
    }
    pieces.push(&para[start..]);
    pieces
}

fn is_abbreviation(before: &[(usize, char)]) -> bool {
    let word: String = before
        .iter()
        .rev()
        .take_while(|(_, c)| !c.is_whitespace())
        .map(|(_, c)| *c)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .skip_while(|c| OPENERS.contains(c) || *c == '(' || *c == '[')
        .collect::<String>()
        .to_lowercase();
    ABBREVIATIONS.contains(&word.as_str())
}

pub fn corpus_stats(doc: &Document) -> DocumentStats {
    let sentence_count = doc.sentences.len();
    let token_count = doc.sentences.iter().map(|s| s.token_count).sum();
    let mean_sentence_length = if sentence_count == 0 {
        0.0
    } else {
        token_count as f64 / sentence_count as f64
    };
    DocumentStats {
        sentence_count,
        token_count,
        mean_sentence_length,
    }
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

fn unescape_field(s: &str, line: usize) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            other => {
                return Err(Error::MalformedDocument {
                    line,
                    reason: format!("bad escape \\{}", other.map(String::from).unwrap_or_default()),
                })
            }
        }
    }
    Ok(out)
}

/// Renders the document record: a `#doc` header then one line per sentence.
pub fn document_to_string(doc: &Document) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#doc {}\t{}", escape_field(&doc.id), escape_field(&doc.title));
    for s in &doc.sentences {
        let _ = writeln!(out, "{}\t{}\t{}", s.index, s.token_count, escape_field(&s.text));
    }
    out
}

pub fn write_document(doc: &Document, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(document_to_string(doc).as_bytes())
}

pub fn read_document(r: impl BufRead, source_path: &str) -> Result<Document> {
    let malformed = |line: usize, reason: &str| Error::MalformedDocument {
        line,
        reason: reason.to_string(),
    };
    let mut lines = r.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::EmptyBody)?;
    let header = header.map_err(|e| Error::read(source_path, e))?;
    let rest = header
        .strip_prefix("#doc ")
        .ok_or_else(|| malformed(1, "missing #doc header"))?;
    let (id, title) = rest
        .split_once('\t')
        .ok_or_else(|| malformed(1, "header lacks title field"))?;
    let mut sentences = Vec::new();
    for (lineno, line) in lines {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::read(source_path, e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(idx), Some(tc), Some(text)) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed(lineno, "expected 3 tab-separated fields"));
        };
        let index: usize = idx.parse().map_err(|_| malformed(lineno, "bad index"))?;
        let token_count: usize = tc.parse().map_err(|_| malformed(lineno, "bad token count"))?;
        let text = unescape_field(text, lineno)?;
        if index != sentences.len() {
            return Err(malformed(lineno, "sentence indices not contiguous"));
        }
        if token_count == 0 || text.split_whitespace().count() != token_count {
            return Err(malformed(lineno, "token count does not match text"));
        }
        sentences.push(Sentence {
            index,
            text,
            token_count,
        });
    }
    if sentences.is_empty() {
        return Err(Error::NoSentences);
    }
    Ok(Document {
        id: unescape_field(id, 1)?,
        title: unescape_field(title, 1)?,
        sentences,
        source_path: source_path.to_string(),
    })
}
