//! Diagnosis and minimal-edit repair of malformed JSON session files.
//!
//! The repair pipeline handles three fault families: stray bytes that are not
//! valid UTF-8, missing punctuation (commas, closing quotes), and documents
//! cut short before their closing brackets. Anything else is reported and the
//! file is declared unrepairable.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Maximum number of repair passes over one document.
pub const MAX_PASSES: usize = 100;

const EXCERPT_RADIUS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosticKind {
    NonUtf8Byte,
    MissingComma,
    MissingBrace,
    MissingBracket,
    MissingQuote,
    TruncatedDocument,
    UnknownToken,
}

impl fmt::Display for DiagnosticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub byte_offset: usize,
    pub kind: DiagnosticKind,
    /// Up to 40 bytes of context around the offset, lossily decoded.
    pub excerpt: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RepairOutcome {
    Repaired,
    Unrepairable,
    CleanAsIs,
    SkippedEmpty,
}

impl fmt::Display for RepairOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairLog {
    pub file: String,
    /// Each diagnostic that triggered an edit, with a description of the edit.
    pub applied: Vec<(Diagnostic, String)>,
    pub outcome: RepairOutcome,
    /// Problems left over when the outcome is `Unrepairable`.
    pub residual: Vec<Diagnostic>,
}

impl RepairLog {
    pub fn diagnostics(&self) -> impl Iterator<Item = &Diagnostic> {
        self.applied.iter().map(|(d, _)| d).chain(self.residual.iter())
    }
}

fn is_valid_json(bytes: &[u8]) -> bool {
    parse_error(bytes).is_none()
}

/// The parse error for `bytes`, if any. String contents are checked for
/// valid UTF-8 as well.
fn parse_error(bytes: &[u8]) -> Option<serde_json::Error> {
    serde_json::from_slice::<serde_json::Value>(bytes).err()
}

fn excerpt(bytes: &[u8], offset: usize) -> String {
    let lo = offset.saturating_sub(EXCERPT_RADIUS).min(bytes.len());
    let hi = (offset + EXCERPT_RADIUS).min(bytes.len());
    String::from_utf8_lossy(&bytes[lo..hi]).into_owned()
}

/// Removes every byte that is not part of a valid UTF-8 sequence.
///
/// Returns the cleaned bytes and, for every cleaned byte plus one
/// past-the-end slot, its offset in the input.
fn strip_invalid_utf8(bytes: &[u8]) -> (Vec<u8>, Vec<usize>, Vec<usize>) {
    let mut clean = Vec::with_capacity(bytes.len());
    let mut origin = Vec::with_capacity(bytes.len() + 1);
    let mut removed = Vec::new();
    let mut pos = 0;
    for chunk in bytes.utf8_chunks() {
        let valid = chunk.valid().as_bytes();
        clean.extend_from_slice(valid);
        origin.extend(pos..pos + valid.len());
        pos += valid.len();
        let invalid = chunk.invalid();
        removed.extend(pos..pos + invalid.len());
        pos += invalid.len();
    }
    origin.push(bytes.len());
    (clean, origin, removed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Container {
    Object,
    Array,
}

impl Container {
    fn closer(self) -> u8 {
        match self {
            Container::Object => b'}',
            Container::Array => b']',
        }
    }

    fn missing_kind(self) -> DiagnosticKind {
        match self {
            Container::Object => DiagnosticKind::MissingBrace,
            Container::Array => DiagnosticKind::MissingBracket,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    RootValue,
    /// Just after `{`.
    KeyOrClose,
    /// Just after `[`.
    ValueOrClose,
    /// After a comma inside an object.
    Key,
    /// After a comma inside an array.
    ArrayValue,
    Colon,
    /// After a colon.
    MemberValue,
    CommaOrClose,
    Done,
}

impl Expect {
    /// States in which the current member is incomplete.
    fn is_dangling(self) -> bool {
        matches!(
            self,
            Expect::Key | Expect::ArrayValue | Expect::Colon | Expect::MemberValue
        )
    }
}

struct Frame {
    container: Container,
    /// Output length to roll back to when the current member must be dropped.
    member_start: usize,
    /// Issue count when the current member started.
    issues_mark: usize,
}

#[derive(Debug, Clone)]
struct Finding {
    offset: usize,
    kind: DiagnosticKind,
    note: &'static str,
}

/// One structural pass over valid UTF-8 text. Fixes are edits that were made;
/// issues are problems that were left in place.
struct Walker<'a> {
    input: &'a [u8],
    out: Vec<u8>,
    stack: Vec<Frame>,
    expect: Expect,
    last_value_end: usize,
    fixes: Vec<Finding>,
    issues: Vec<Finding>,
}

enum TokenEnd {
    Complete(usize),
    /// An incomplete token ran into end of input.
    Partial,
    Invalid(usize),
}

fn scan_number(input: &[u8], start: usize) -> TokenEnd {
    let mut end = start;
    while end < input.len() && matches!(input[end], b'0'..=b'9' | b'-' | b'+' | b'.' | b'e' | b'E') {
        end += 1;
    }
    if is_json_number(&input[start..end]) {
        TokenEnd::Complete(end)
    } else if end == input.len() {
        TokenEnd::Partial
    } else {
        TokenEnd::Invalid(end)
    }
}

fn is_json_number(s: &[u8]) -> bool {
    let mut i = 0;
    if s.get(i) == Some(&b'-') {
        i += 1;
    }
    match s.get(i) {
        Some(b'0') => i += 1,
        Some(b'1'..=b'9') => {
            while s.get(i).is_some_and(u8::is_ascii_digit) {
                i += 1;
            }
        }
        _ => return false,
    }
    if s.get(i) == Some(&b'.') {
        i += 1;
        let digits = i;
        while s.get(i).is_some_and(u8::is_ascii_digit) {
            i += 1;
        }
        if i == digits {
            return false;
        }
    }
    if matches!(s.get(i), Some(b'e' | b'E')) {
        i += 1;
        if matches!(s.get(i), Some(b'+' | b'-')) {
            i += 1;
        }
        let digits = i;
        while s.get(i).is_some_and(u8::is_ascii_digit) {
            i += 1;
        }
        if i == digits {
            return false;
        }
    }
    i == s.len()
}

fn scan_literal(input: &[u8], start: usize) -> TokenEnd {
    let mut end = start;
    while end < input.len() && input[end].is_ascii_alphanumeric() {
        end += 1;
    }
    let word = &input[start..end];
    if matches!(word, b"true" | b"false" | b"null") {
        TokenEnd::Complete(end)
    } else if end == input.len()
        && [&b"true"[..], b"false", b"null"].iter().any(|l| l.starts_with(word))
    {
        TokenEnd::Partial
    } else {
        TokenEnd::Invalid(end.max(start + 1))
    }
}

impl<'a> Walker<'a> {
    fn new(input: &'a [u8]) -> Self {
        Walker {
            input,
            out: Vec::with_capacity(input.len() + 16),
            stack: Vec::new(),
            expect: Expect::RootValue,
            last_value_end: 0,
            fixes: Vec::new(),
            issues: Vec::new(),
        }
    }

    fn fix(&mut self, offset: usize, kind: DiagnosticKind, note: &'static str) {
        self.fixes.push(Finding { offset, kind, note });
    }

    fn issue(&mut self, offset: usize, kind: DiagnosticKind, note: &'static str) {
        self.issues.push(Finding { offset, kind, note });
    }

    fn top(&self) -> Option<Container> {
        self.stack.last().map(|f| f.container)
    }

    fn set_member_start(&mut self, at: usize) {
        let mark = self.issues.len();
        if let Some(f) = self.stack.last_mut() {
            f.member_start = at;
            f.issues_mark = mark;
        }
    }

    /// Called before any value or key token. Inserts a comma directly after
    /// the previous value when two values sit side by side.
    fn before_value(&mut self, offset: usize) {
        if self.expect == Expect::CommaOrClose {
            if let Some(container) = self.top() {
                let at = self.last_value_end;
                self.out.insert(at, b',');
                self.set_member_start(at);
                self.fix(offset, DiagnosticKind::MissingComma, "inserted ','");
                self.expect = match container {
                    Container::Object => Expect::Key,
                    Container::Array => Expect::ArrayValue,
                };
            }
        }
        match self.expect {
            Expect::Done => self.issue(offset, DiagnosticKind::UnknownToken, "content after document end"),
            Expect::Colon => self.issue(offset, DiagnosticKind::UnknownToken, "missing ':'"),
            _ => {}
        }
    }

    fn after_value(&mut self) {
        self.last_value_end = self.out.len();
        self.expect = if self.stack.is_empty() {
            Expect::Done
        } else {
            Expect::CommaOrClose
        };
    }

    fn expects_key(&self) -> bool {
        matches!(self.expect, Expect::Key | Expect::KeyOrClose)
            || (self.expect == Expect::CommaOrClose && self.top() == Some(Container::Object))
    }

    fn open(&mut self, container: Container) {
        self.stack.push(Frame {
            container,
            member_start: self.out.len(),
            issues_mark: self.issues.len(),
        });
        self.expect = match container {
            Container::Object => Expect::KeyOrClose,
            Container::Array => Expect::ValueOrClose,
        };
    }

    /// Drops a dangling member. Before a closer only a bare trailing comma
    /// is dropped; at end of input any member cut short goes. Members holding
    /// unrecognized tokens are never dropped.
    fn drop_dangling(&mut self, at_eof: bool) -> bool {
        let droppable = if at_eof {
            self.expect.is_dangling()
        } else {
            matches!(self.expect, Expect::Key | Expect::ArrayValue)
        };
        match self.stack.last() {
            Some(f) if droppable && f.issues_mark == self.issues.len() => {
                self.out.truncate(f.member_start);
                true
            }
            _ => false,
        }
    }

    fn close_top(&mut self) {
        if let Some(frame) = self.stack.pop() {
            self.out.push(frame.container.closer());
            self.after_value();
        }
    }

    fn walk(mut self) -> Self {
        let input = self.input;
        let mut i = 0;
        while i < input.len() {
            let b = input[i];
            match b {
                b' ' | b'\t' | b'\n' | b'\r' => {
                    self.out.push(b);
                    i += 1;
                }
                b'{' | b'[' => {
                    if self.expects_key() {
                        self.issue(i, DiagnosticKind::UnknownToken, "object key must be a string");
                    }
                    self.before_value(i);
                    self.out.push(b);
                    self.open(if b == b'{' {
                        Container::Object
                    } else {
                        Container::Array
                    });
                    i += 1;
                }
                b'}' | b']' => {
                    let want = if b == b'}' {
                        Container::Object
                    } else {
                        Container::Array
                    };
                    match self.stack.iter().rposition(|f| f.container == want) {
                        None => {
                            self.issue(i, DiagnosticKind::UnknownToken, "unmatched closer");
                            self.out.push(b);
                            i += 1;
                        }
                        Some(depth) => {
                            while self.stack.len() > depth + 1 {
                                if self.drop_dangling(false) {
                                    self.fix(i, DiagnosticKind::UnknownToken, "dropped trailing ','");
                                }
                                let kind = self.top().map(Container::missing_kind);
                                self.close_top();
                                if let Some(kind) = kind {
                                    self.fix(i, kind, "inserted missing closer");
                                }
                            }
                            if self.drop_dangling(false) {
                                self.fix(i, DiagnosticKind::UnknownToken, "dropped trailing ','");
                            }
                            self.close_top();
                            i += 1;
                        }
                    }
                }
                b',' => {
                    if self.expect == Expect::CommaOrClose {
                        let at = self.out.len();
                        self.set_member_start(at);
                        self.out.push(b',');
                        self.expect = match self.top() {
                            Some(Container::Object) => Expect::Key,
                            _ => Expect::ArrayValue,
                        };
                    } else {
                        self.issue(i, DiagnosticKind::UnknownToken, "unexpected ','");
                        self.out.push(b',');
                    }
                    i += 1;
                }
                b':' => {
                    if self.expect == Expect::Colon {
                        self.expect = Expect::MemberValue;
                    } else {
                        self.issue(i, DiagnosticKind::UnknownToken, "unexpected ':'");
                    }
                    self.out.push(b':');
                    i += 1;
                }
                b'"' => {
                    let is_key = self.expects_key();
                    self.before_value(i);
                    let Some(end) = self.string(i) else {
                        // Cut short by truncation, like a partial number.
                        i = input.len();
                        continue;
                    };
                    i = end;
                    if is_key {
                        self.last_value_end = self.out.len();
                        self.expect = Expect::Colon;
                    } else {
                        self.after_value();
                    }
                }
                b'-' | b'0'..=b'9' | b'a'..=b'z' | b'A'..=b'Z' => {
                    let scanned = if b == b'-' || b.is_ascii_digit() {
                        scan_number(input, i)
                    } else {
                        scan_literal(input, i)
                    };
                    match scanned {
                        TokenEnd::Partial => {
                            // Cut short by truncation; the member is dropped at end of input.
                            i = input.len();
                        }
                        TokenEnd::Complete(end) => {
                            if self.expects_key() {
                                self.issue(i, DiagnosticKind::UnknownToken, "object key must be a string");
                            }
                            self.before_value(i);
                            self.out.extend_from_slice(&input[i..end]);
                            self.after_value();
                            i = end;
                        }
                        TokenEnd::Invalid(end) => {
                            self.issue(i, DiagnosticKind::UnknownToken, "invalid literal");
                            self.out.extend_from_slice(&input[i..end]);
                            i = end;
                        }
                    }
                }
                _ => {
                    self.issue(i, DiagnosticKind::UnknownToken, "unexpected character");
                    let len = utf8_len(b);
                    let end = (i + len).min(input.len());
                    self.out.extend_from_slice(&input[i..end]);
                    i = end;
                }
            }
        }
        self.finish();
        self
    }

    /// Copies the string starting at `start`, closing it at the end of its
    /// line when the closing quote is missing. Returns `None` without copying
    /// anything when the string runs into end of input.
    fn string(&mut self, start: usize) -> Option<usize> {
        let input = self.input;
        let mut j = start + 1;
        loop {
            match input.get(j) {
                None => return None,
                Some(b'"') => {
                    self.out.extend_from_slice(&input[start..=j]);
                    return Some(j + 1);
                }
                Some(b'\\') if j + 1 == input.len() => return None,
                Some(b'\\') if input[j + 1] != b'\n' => j += 2,
                Some(b'\\') => {
                    // A dangling escape would swallow the inserted quote.
                    self.out.extend_from_slice(&input[start..j]);
                    self.out.push(b'"');
                    self.fix(j, DiagnosticKind::MissingQuote, "dropped dangling escape and closed string");
                    return Some(j + 1);
                }
                Some(b'\n') => {
                    let mut body_end = j;
                    while body_end > start + 1 && input[body_end - 1] == b'\r' {
                        body_end -= 1;
                    }
                    self.out.extend_from_slice(&input[start..body_end]);
                    self.out.push(b'"');
                    self.fix(j, DiagnosticKind::MissingQuote, "closed string at end of line");
                    return Some(body_end);
                }
                Some(_) => j += 1,
            }
        }
    }

    fn finish(&mut self) {
        let end = self.input.len();
        if self.stack.is_empty() && self.expect == Expect::RootValue {
            self.issue(end, DiagnosticKind::TruncatedDocument, "no value in document");
            return;
        }
        while let Some(container) = self.top() {
            if self.drop_dangling(true) {
                self.fix(end, DiagnosticKind::TruncatedDocument, "dropped member cut off by truncation");
            }
            self.close_top();
            self.fix(end, container.missing_kind(), "appended missing closer");
        }
    }
}

fn utf8_len(first: u8) -> usize {
    match first {
        0xF0..=0xF7 => 4,
        0xE0..=0xEF => 3,
        0xC0..=0xDF => 2,
        _ => 1,
    }
}

/// Byte offset of a serde_json error position in `bytes`.
fn error_offset(bytes: &[u8], err: &serde_json::Error) -> usize {
    let (line, column) = (err.line(), err.column());
    if line == 0 {
        return bytes.len();
    }
    let mut offset = 0;
    for (n, l) in bytes.split_inclusive(|&b| b == b'\n').enumerate() {
        if n + 1 == line {
            return (offset + column.saturating_sub(1)).min(bytes.len());
        }
        offset += l.len();
    }
    bytes.len()
}

/// Lists every malformation in `bytes`. The result is empty exactly when the
/// bytes are well-formed UTF-8 JSON.
pub fn diagnose(bytes: &[u8]) -> Vec<Diagnostic> {
    let Some(err) = parse_error(bytes) else {
        return Vec::new();
    };
    let (clean, origin, removed) = strip_invalid_utf8(bytes);
    let mut out: Vec<Diagnostic> = removed
        .iter()
        .map(|&off| Diagnostic {
            byte_offset: off,
            kind: DiagnosticKind::NonUtf8Byte,
            excerpt: excerpt(bytes, off),
        })
        .collect();
    let walked = Walker::new(&clean).walk();
    for f in walked.fixes.iter().chain(walked.issues.iter()) {
        let off = origin[f.offset.min(clean.len())];
        out.push(Diagnostic {
            byte_offset: off,
            kind: f.kind,
            excerpt: excerpt(bytes, off),
        });
    }
    if out.is_empty() {
        let off = error_offset(bytes, &err);
        out.push(Diagnostic {
            byte_offset: off,
            kind: DiagnosticKind::UnknownToken,
            excerpt: excerpt(bytes, off),
        });
    }
    out.sort_by_key(|d| d.byte_offset);
    out
}

/// Repairs `bytes` in place of a manual fix-up. The returned log's `file`
/// field is left empty for the caller to fill.
pub fn repair(bytes: &[u8]) -> (Vec<u8>, RepairLog) {
    let mut log = RepairLog {
        file: String::new(),
        applied: Vec::new(),
        outcome: RepairOutcome::CleanAsIs,
        residual: Vec::new(),
    };
    if bytes.is_empty() {
        log.outcome = RepairOutcome::SkippedEmpty;
        return (Vec::new(), log);
    }
    if is_valid_json(bytes) {
        return (bytes.to_vec(), log);
    }
    let original_len = bytes.len();
    let (mut current, origin, removed) = strip_invalid_utf8(bytes);
    for &off in &removed {
        log.applied.push((
            Diagnostic {
                byte_offset: off,
                kind: DiagnosticKind::NonUtf8Byte,
                excerpt: excerpt(bytes, off),
            },
            "deleted non-UTF-8 byte".to_string(),
        ));
    }
    for pass in 0..MAX_PASSES {
        if is_valid_json(&current) {
            log.outcome = RepairOutcome::Repaired;
            return (current, log);
        }
        let walked = Walker::new(&current).walk();
        for f in &walked.fixes {
            // Offsets from later passes refer to already-edited text.
            let off = if pass == 0 {
                origin[f.offset.min(origin.len() - 1)]
            } else {
                f.offset.min(original_len)
            };
            log.applied.push((
                Diagnostic {
                    byte_offset: off,
                    kind: f.kind,
                    excerpt: excerpt(&current, f.offset),
                },
                f.note.to_string(),
            ));
        }
        if walked.out == current {
            break;
        }
        current = walked.out;
    }
    if is_valid_json(&current) {
        log.outcome = RepairOutcome::Repaired;
    } else {
        log.outcome = RepairOutcome::Unrepairable;
        log.residual = diagnose(&current)
            .into_iter()
            .map(|mut d| {
                d.byte_offset = d.byte_offset.min(original_len);
                d
            })
            .collect();
    }
    (current, log)
}
