//! Restricted indentation-based key/value documents.
//!
//! The accepted language is a small subset of block-style YAML:
//!
//! * mappings (`key: value`), keys made of `[A-Za-z0-9_.-]`;
//! * block sequences (`- item`), whose items may be scalars or mappings;
//! * flow sequences of scalars (`[a, b, "c"]`);
//! * plain, double-quoted and single-quoted scalars;
//! * literal block scalars (`|` and `|-`);
//! * `#` comments and blank lines.
//!
//! Anchors, aliases, tags, flow mappings, folded scalars and multi-document
//! streams are rejected. Indentation is spaces only. CRLF is normalized to LF.
//! Every node remembers the line and column it started at so schema layers can
//! report precise positions.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{line}:{column}: {reason}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(String),
    Seq(Vec<Node>),
    Map(Vec<Entry>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub value: Value,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub pos: Pos,
    pub node: Node,
}

impl Node {
    pub fn as_scalar(&self) -> Option<&str> {
        match &self.value {
            Value::Scalar(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_seq(&self) -> Option<&[Node]> {
        match &self.value {
            Value::Seq(items) => Some(items),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&[Entry]> {
        match &self.value {
            Value::Map(entries) => Some(entries),
            _ => None,
        }
    }

    pub fn get(&self, key: &str) -> Option<&Node> {
        self.as_map()?.iter().find(|e| e.key == key).map(|e| &e.node)
    }

    pub fn kind_name(&self) -> &'static str {
        match self.value {
            Value::Scalar(_) => "scalar",
            Value::Seq(_) => "sequence",
            Value::Map(_) => "mapping",
        }
    }
}

struct Line {
    no: usize,
    indent: usize,
    content: String,
    raw: String,
}

impl Line {
    fn is_blank_or_comment(&self) -> bool {
        self.content.is_empty() || self.content.starts_with('#')
    }
}

fn err<T>(line: usize, column: usize, reason: impl Into<String>) -> Result<T, SyntaxError> {
    Err(SyntaxError { line, column, reason: reason.into() })
}

/// Parses a whole document. The root may be a mapping or a sequence.
pub fn parse(text: &str) -> Result<Node, SyntaxError> {
    let normalized;
    let text = if text.contains('\r') {
        normalized = text.replace("\r\n", "\n");
        if let Some(off) = normalized.find('\r') {
            let line = normalized[..off].matches('\n').count() + 1;
            return err(line, 1, "bare carriage return");
        }
        normalized.as_str()
    } else {
        text
    };

    let mut lines = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let indent = raw.bytes().take_while(|&b| b == b' ').count();
        let content = raw[indent..].trim_end().to_string();
        lines.push(Line { no: i + 1, indent, content, raw: raw.to_string() });
    }

    let mut p = Parser { lines, idx: 0 };
    let Some(first) = p.next_significant()? else {
        return err(1, 1, "empty document");
    };
    let first_indent = p.lines[first].indent;
    if first_indent != 0 {
        return err(p.lines[first].no, first_indent + 1, "unexpected indentation");
    }
    let root = p.parse_block(0)?;
    if let Some(i) = p.next_significant()? {
        let l = &p.lines[i];
        return err(l.no, l.indent + 1, "unexpected content after document");
    }
    Ok(root)
}

struct Parser {
    lines: Vec<Line>,
    idx: usize,
}

fn is_key_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-')
}

/// Byte offset of the `:` that ends a mapping key, if `s` starts with one.
fn key_colon(s: &str) -> Option<usize> {
    let end = s.find(|c: char| !is_key_char(c)).unwrap_or(s.len());
    if end == 0 || !s[end..].starts_with(':') {
        return None;
    }
    let after = &s[end + 1..];
    if after.is_empty() || after.starts_with(' ') {
        Some(end)
    } else {
        None
    }
}

fn is_seq_item(content: &str) -> bool {
    content == "-" || content.starts_with("- ")
}

/// Drops a trailing `# comment` from plain text; `#` only starts a comment at
/// the beginning or after whitespace.
fn strip_comment(s: &str) -> &str {
    if s.starts_with('#') {
        return "";
    }
    match s.find(" #") {
        Some(i) => s[..i].trim_end(),
        None => s,
    }
}

impl Parser {
    fn next_significant(&mut self) -> Result<Option<usize>, SyntaxError> {
        while self.idx < self.lines.len() {
            let l = &self.lines[self.idx];
            if !l.is_blank_or_comment() {
                if l.content.starts_with('\t') {
                    return err(l.no, l.indent + 1, "tab character in indentation");
                }
                if l.indent == 0 && (l.content == "---" || l.content == "...") {
                    return err(l.no, 1, "multi-document streams are not supported");
                }
                return Ok(Some(self.idx));
            }
            self.idx += 1;
        }
        Ok(None)
    }

    fn parse_block(&mut self, indent: usize) -> Result<Node, SyntaxError> {
        let i = self.next_significant()?.expect("caller checked a line exists");
        if is_seq_item(&self.lines[i].content) {
            self.parse_seq(indent)
        } else {
            self.parse_map(indent)
        }
    }

    fn parse_map(&mut self, indent: usize) -> Result<Node, SyntaxError> {
        let start = self.next_significant()?.expect("caller checked a line exists");
        let pos = Pos { line: self.lines[start].no, column: indent + 1 };
        let mut entries: Vec<Entry> = Vec::new();
        while let Some(i) = self.next_significant()? {
            let (no, line_indent) = (self.lines[i].no, self.lines[i].indent);
            if line_indent < indent {
                break;
            }
            if line_indent > indent {
                return err(no, line_indent + 1, "unexpected indentation");
            }
            let content = self.lines[i].content.clone();
            if is_seq_item(&content) {
                return err(no, indent + 1, "sequence item where a mapping key was expected");
            }
            let Some(colon) = key_colon(&content) else {
                return err(no, indent + 1, "expected `key: value`");
            };
            let key = &content[..colon];
            let key_pos = Pos { line: no, column: indent + 1 };
            if entries.iter().any(|e| e.key == key) {
                return err(no, indent + 1, format!("duplicate key `{key}`"));
            }
            let after = &content[colon + 1..];
            let lead = after.len() - after.trim_start().len();
            let rest = after.trim_start();
            let value_col = indent + colon + 2 + lead;
            self.idx = i + 1;

            let node = if strip_comment(rest).is_empty() {
                match self.next_significant()? {
                    Some(j) if self.lines[j].indent > indent => {
                        let child = self.lines[j].indent;
                        self.parse_block(child)?
                    }
                    _ => return err(no, value_col, format!("missing value for `{key}`")),
                }
            } else if rest.starts_with('|') {
                self.parse_block_scalar(indent, rest, no, value_col)?
            } else {
                parse_inline(rest, no, value_col)?
            };
            entries.push(Entry { key: key.to_string(), pos: key_pos, node });
        }
        Ok(Node { value: Value::Map(entries), pos })
    }

    fn parse_seq(&mut self, indent: usize) -> Result<Node, SyntaxError> {
        let start = self.next_significant()?.expect("caller checked a line exists");
        let pos = Pos { line: self.lines[start].no, column: indent + 1 };
        let mut items = Vec::new();
        while let Some(i) = self.next_significant()? {
            let (no, line_indent) = (self.lines[i].no, self.lines[i].indent);
            if line_indent < indent {
                break;
            }
            if line_indent > indent {
                return err(no, line_indent + 1, "unexpected indentation");
            }
            let content = self.lines[i].content.clone();
            if !is_seq_item(&content) {
                return err(no, indent + 1, "expected sequence item `- `");
            }
            let after = &content[1..];
            let off = 1 + (after.len() - after.trim_start().len());
            let rest = after.trim_start();
            if strip_comment(rest).is_empty() {
                self.idx = i + 1;
                match self.next_significant()? {
                    Some(j) if self.lines[j].indent > indent => {
                        let child = self.lines[j].indent;
                        items.push(self.parse_block(child)?);
                    }
                    _ => return err(no, indent + 1, "empty sequence item"),
                }
            } else if key_colon(rest).is_some() {
                // `- key: value` opens a mapping whose keys align with `key`.
                let child = indent + off;
                let l = &mut self.lines[i];
                l.indent = child;
                l.content = rest.to_string();
                items.push(self.parse_map(child)?);
            } else if is_seq_item(rest) {
                return err(no, indent + off + 1, "nested inline sequences are not supported");
            } else {
                self.idx = i + 1;
                items.push(parse_inline(rest, no, indent + off + 1)?);
            }
        }
        Ok(Node { value: Value::Seq(items), pos })
    }

    fn parse_block_scalar(
        &mut self,
        parent_indent: usize,
        header: &str,
        no: usize,
        col: usize,
    ) -> Result<Node, SyntaxError> {
        let chomp_strip = match strip_comment(header) {
            "|" => false,
            "|-" => true,
            _ => return err(no, col, "unsupported block scalar header (only `|` and `|-`)"),
        };
        let mut body: Vec<&str> = Vec::new();
        let mut content_indent: Option<usize> = None;
        let mut j = self.idx;
        while j < self.lines.len() {
            let l = &self.lines[j];
            if l.content.is_empty() {
                body.push("");
                j += 1;
                continue;
            }
            if l.indent <= parent_indent {
                break;
            }
            let ci = *content_indent.get_or_insert(l.indent);
            if l.indent < ci {
                return err(l.no, l.indent + 1, "block scalar line is less indented than its first line");
            }
            body.push(&l.raw[ci..]);
            j += 1;
        }
        while body.last() == Some(&"") {
            body.pop();
        }
        // Blank lines trailing the block belong to the surrounding document.
        let consumed = j;
        let mut text = body.join("\n");
        if !chomp_strip && !text.is_empty() {
            text.push('\n');
        }
        self.idx = consumed;
        Ok(Node { value: Value::Scalar(text), pos: Pos { line: no, column: col } })
    }
}

fn parse_inline(text: &str, line: usize, column: usize) -> Result<Node, SyntaxError> {
    let pos = Pos { line, column };
    let first = text.chars().next().unwrap_or(' ');
    match first {
        '"' | '\'' => {
            let (value, used) = parse_quoted(text, line, column)?;
            expect_only_comment(&text[used..], line, column + used)?;
            Ok(Node { value: Value::Scalar(value), pos })
        }
        '[' => parse_flow_seq(text, line, column),
        '{' => err(line, column, "flow mappings are not supported"),
        '&' | '*' | '!' => err(line, column, "anchors, aliases and tags are not supported"),
        '>' => err(line, column, "folded block scalars are not supported"),
        '%' | '@' | '`' => err(line, column, format!("reserved indicator `{first}`")),
        _ => {
            let plain = strip_comment(text);
            if let Some(i) = plain.find(": ") {
                return err(line, column + i, "unexpected `: ` inside a plain scalar");
            }
            Ok(Node { value: Value::Scalar(plain.to_string()), pos })
        }
    }
}

fn expect_only_comment(rest: &str, line: usize, column: usize) -> Result<(), SyntaxError> {
    let trimmed = rest.trim_start();
    if trimmed.is_empty() || (trimmed.starts_with('#') && trimmed.len() < rest.len()) {
        Ok(())
    } else {
        err(line, column, "unexpected characters after quoted scalar")
    }
}

/// Parses a quoted scalar at the start of `text`; returns the decoded value
/// and the number of bytes consumed including both quotes.
fn parse_quoted(text: &str, line: usize, column: usize) -> Result<(String, usize), SyntaxError> {
    let quote = text.as_bytes()[0] as char;
    let mut out = String::new();
    let mut chars = text.char_indices().skip(1).peekable();
    while let Some((i, c)) = chars.next() {
        if c == quote {
            if quote == '\'' && matches!(chars.peek(), Some((_, '\''))) {
                chars.next();
                out.push('\'');
                continue;
            }
            return Ok((out, i + 1));
        }
        if c == '\\' && quote == '"' {
            let Some((j, e)) = chars.next() else { break };
            match e {
                '\\' => out.push('\\'),
                '"' => out.push('"'),
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                '0' => out.push('\0'),
                'u' => {
                    let hex: String = (0..4).filter_map(|_| chars.next().map(|(_, h)| h)).collect();
                    let ch = u32::from_str_radix(&hex, 16).ok().filter(|_| hex.len() == 4).and_then(char::from_u32);
                    match ch {
                        Some(ch) => out.push(ch),
                        None => return err(line, column + j, "invalid `\\u` escape"),
                    }
                }
                _ => return err(line, column + j, format!("unknown escape `\\{e}`")),
            }
            continue;
        }
        out.push(c);
    }
    err(line, column, "unterminated quoted scalar")
}

fn parse_flow_seq(text: &str, line: usize, column: usize) -> Result<Node, SyntaxError> {
    let mut items = Vec::new();
    let mut i = 1;
    let bytes = text.as_bytes();
    let skip_ws = |i: &mut usize| {
        while *i < bytes.len() && bytes[*i] == b' ' {
            *i += 1;
        }
    };
    skip_ws(&mut i);
    if i < bytes.len() && bytes[i] == b']' {
        expect_only_comment(&text[i + 1..], line, column + i + 1)?;
        return Ok(Node { value: Value::Seq(items), pos: Pos { line, column } });
    }
    loop {
        skip_ws(&mut i);
        if i >= bytes.len() {
            return err(line, column, "unterminated flow sequence");
        }
        let item_col = column + i;
        let item_pos = Pos { line, column: item_col };
        match bytes[i] {
            b'"' | b'\'' => {
                let (v, used) = parse_quoted(&text[i..], line, item_col)?;
                items.push(Node { value: Value::Scalar(v), pos: item_pos });
                i += used;
            }
            b'[' | b'{' => return err(line, item_col, "nested flow collections are not supported"),
            b',' | b']' => return err(line, item_col, "empty flow sequence item"),
            _ => {
                let end = text[i..].find([',', ']']).map(|e| i + e).unwrap_or(text.len());
                let v = text[i..end].trim_end();
                if v.contains('#') || v.contains(": ") {
                    return err(line, item_col, "invalid plain scalar in flow sequence");
                }
                items.push(Node { value: Value::Scalar(v.to_string()), pos: item_pos });
                i = end;
            }
        }
        skip_ws(&mut i);
        match bytes.get(i) {
            Some(b',') => i += 1,
            Some(b']') => {
                expect_only_comment(&text[i + 1..], line, column + i + 1)?;
                return Ok(Node { value: Value::Seq(items), pos: Pos { line, column } });
            }
            _ => return err(line, column + i, "expected `,` or `]` in flow sequence"),
        }
    }
}

/// Whether `s` can be written as a plain scalar and read back unchanged.
pub fn is_plain_safe(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '/') => {}
        _ => return false,
    }
    s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-' | '/' | '+'))
}

/// Canonical scalar text: plain when safe, otherwise double-quoted.
pub struct Scalar<'a>(pub &'a str);

impl fmt::Display for Scalar<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if is_plain_safe(self.0) {
            return f.write_str(self.0);
        }
        f.write_str("\"")?;
        for c in self.0.chars() {
            match c {
                '\\' => f.write_str("\\\\")?,
                '"' => f.write_str("\\\"")?,
                '\n' => f.write_str("\\n")?,
                '\t' => f.write_str("\\t")?,
                '\r' => f.write_str("\\r")?,
                c if (c as u32) < 0x20 || c == '\u{7f}' => write!(f, "\\u{:04x}", c as u32)?,
                c => write!(f, "{c}")?,
            }
        }
        f.write_str("\"")
    }
}
