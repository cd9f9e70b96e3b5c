//! The two toy languages: a C-like structured language open at the C
//! interface and a register machine open at the Asm interface, with
//! line-oriented text formats, printers and syntactic linking.

pub mod miniasm;
pub mod minic;

use std::fmt;

/// A global variable definition shared by both languages: a name, a
/// constness flag and 64-bit initial values (one per 8-byte slot).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDef {
    pub name: String,
    pub read_only: bool,
    pub init: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parse error at {}:{}: {}", self.line, self.col, self.msg)
    }
}

impl std::error::Error for ParseError {}

impl ParseError {
    pub fn new(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
        ParseError { line, col, msg: msg.into() }
    }
}

/// Strip comments (`;` to end of line) and produce trimmed, non-empty
/// lines paired with their 1-based line numbers.
pub(crate) fn logical_lines(src: &str) -> Vec<(usize, String)> {
    src.lines()
        .enumerate()
        .filter_map(|(i, raw)| {
            let no_comment = match raw.find(';') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let t = no_comment.trim();
            if t.is_empty() {
                None
            } else {
                Some((i + 1, t.to_string()))
            }
        })
        .collect()
}
