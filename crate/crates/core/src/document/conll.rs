//! Reader for the CoNLL-2012 column format (subset).
//!
//! Token lines are whitespace separated: document id, part number, word
//! index, word, ..., coreference. With twelve or more columns the speaker is
//! taken from column 9 (the full OntoNotes layout), otherwise from column 4.
//! Blank lines end sentences; `#begin`/`#end` lines end documents. Every
//! (document, part) pair becomes its own [`Document`], with id `name_part`
//! and genre taken from the first path component of the name.

use std::collections::{BTreeMap, HashMap};

use super::{Document, DocumentError, Span};

/// One bracket event in a coreference cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bracket {
    Open(u32),
    Close(u32),
    Single(u32),
}

/// Parses a coreference cell such as `(12`, `12)`, `(3)`, `(1|(2)` or `-`.
pub fn parse_coref_cell(cell: &str) -> Result<Vec<Bracket>, String> {
    if cell == "-" || cell == "_" {
        return Ok(vec![]);
    }
    let bytes = cell.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let digits = |i: &mut usize| -> Result<u32, String> {
        let start = *i;
        while *i < bytes.len() && bytes[*i].is_ascii_digit() {
            *i += 1;
        }
        cell[start..*i]
            .parse()
            .map_err(|_| format!("expected cluster id in {cell:?}"))
    };
    while i < bytes.len() {
        match bytes[i] {
            b'|' => i += 1,
            b'(' => {
                i += 1;
                let id = digits(&mut i)?;
                if i < bytes.len() && bytes[i] == b')' {
                    i += 1;
                    out.push(Bracket::Single(id));
                } else {
                    out.push(Bracket::Open(id));
                }
            }
            b'0'..=b'9' => {
                let id = digits(&mut i)?;
                if i < bytes.len() && bytes[i] == b')' {
                    i += 1;
                    out.push(Bracket::Close(id));
                } else {
                    return Err(format!("cluster id without bracket in {cell:?}"));
                }
            }
            _ => return Err(format!("unexpected character in coreference cell {cell:?}")),
        }
    }
    Ok(out)
}

/// Resolves bracket events per token into mentions `(cluster id, span)`.
///
/// A close bracket matches the most recent unmatched open bracket with the
/// same id. Returned in order of completion.
pub fn match_brackets(events: &[(usize, Vec<Bracket>)]) -> Result<Vec<(u32, Span)>, String> {
    let mut open: HashMap<u32, Vec<usize>> = HashMap::new();
    let mut out = Vec::new();
    for (tok, brackets) in events {
        for b in brackets {
            match *b {
                Bracket::Open(id) => open.entry(id).or_default().push(*tok),
                Bracket::Single(id) => out.push((id, Span::new(*tok, *tok))),
                Bracket::Close(id) => {
                    let start = open
                        .get_mut(&id)
                        .and_then(|s| s.pop())
                        .ok_or_else(|| format!("token {tok}: close bracket for cluster {id} without open"))?;
                    out.push((id, Span::new(start, *tok)));
                }
            }
        }
    }
    let mut dangling: Vec<u32> = open.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| *k).collect();
    if !dangling.is_empty() {
        dangling.sort();
        return Err(format!("unclosed brackets for clusters {dangling:?}"));
    }
    Ok(out)
}

#[derive(Default)]
struct Pending {
    name: String,
    part: String,
    columns: usize,
    tokens: Vec<String>,
    speakers: Vec<String>,
    sentence_starts: Vec<usize>,
    events: Vec<(usize, Vec<Bracket>)>,
    first_line: usize,
}

impl Pending {
    fn finish(self) -> Result<Document, DocumentError> {
        let at = |msg: String| DocumentError::AtLine {
            line: self.first_line,
            msg: format!("document {} part {}: {msg}", self.name, self.part),
        };
        let mentions = match_brackets(&self.events).map_err(at)?;
        let mut by_id: BTreeMap<u32, Vec<Span>> = BTreeMap::new();
        for (id, span) in mentions {
            let c = by_id.entry(id).or_default();
            if !c.contains(&span) {
                c.push(span);
            }
        }
        let clusters: Vec<Vec<Span>> = by_id.into_values().filter(|c| c.len() >= 2).collect();
        let genre = self.name.split('/').next().unwrap_or("").to_string();
        let doc_id = format!("{}_{}", self.name, self.part);
        Document::new(doc_id, self.tokens, self.sentence_starts, self.speakers, genre, clusters)
    }
}

pub fn parse_conll_skeleton(text: &str) -> Result<Vec<Document>, DocumentError> {
    let mut docs = Vec::new();
    let mut cur: Option<Pending> = None;
    let mut sentence_open = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.starts_with('#') {
            if let Some(p) = cur.take() {
                docs.push(p.finish()?);
            }
            sentence_open = false;
            continue;
        }
        if line.is_empty() {
            sentence_open = false;
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 6 {
            return Err(DocumentError::AtLine {
                line: lineno,
                msg: format!("expected at least 6 columns, found {}", cols.len()),
            });
        }
        let same_doc = cur.as_ref().is_some_and(|p| p.name == cols[0] && p.part == cols[1]);
        if !same_doc {
            if let Some(p) = cur.take() {
                docs.push(p.finish()?);
            }
            cur = Some(Pending {
                name: cols[0].to_string(),
                part: cols[1].to_string(),
                columns: cols.len(),
                first_line: lineno,
                ..Pending::default()
            });
            sentence_open = false;
        }
        let p = cur.as_mut().expect("document in progress");
        if cols.len() != p.columns {
            return Err(DocumentError::AtLine {
                line: lineno,
                msg: format!("inconsistent column count: {} vs {}", cols.len(), p.columns),
            });
        }
        if !sentence_open {
            p.sentence_starts.push(p.tokens.len());
            sentence_open = true;
        }
        let coref = parse_coref_cell(cols[cols.len() - 1]).map_err(|msg| DocumentError::AtLine { line: lineno, msg })?;
        let speaker_col = if cols.len() >= 12 { 9 } else { 4 };
        let tok = p.tokens.len();
        p.tokens.push(cols[3].to_string());
        p.speakers.push(cols[speaker_col].to_string());
        if !coref.is_empty() {
            p.events.push((tok, coref));
        }
    }
    if let Some(p) = cur.take() {
        docs.push(p.finish()?);
    }
    Ok(docs)
}
