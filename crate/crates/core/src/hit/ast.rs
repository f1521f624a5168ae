//! Syntax tree for block-structured input cards.

use serde::{Deserialize, Serialize};

/// A position in source text. Lines and columns are 1-based, `offset` is a
/// byte offset into the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Span {
    pub start: Pos,
    pub end: Pos,
}

impl Span {
    pub fn new(start: Pos, end: Pos) -> Self {
        Self { start, end }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Scalar,
    QuotedString,
    Number,
    Boolean,
    List,
}

/// A parameter value. `raw` is the exact source text (quotes included);
/// `kind` is derived from it and never alters it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitValue {
    pub raw: String,
    pub kind: ValueKind,
}

impl HitValue {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let kind = classify(&raw);
        Self { raw, kind }
    }

    /// The value with surrounding quotes removed.
    pub fn unquoted(&self) -> &str {
        let r = self.raw.as_str();
        if r.len() >= 2 {
            let first = r.as_bytes()[0];
            if (first == b'\'' || first == b'"') && r.as_bytes()[r.len() - 1] == first {
                return &r[1..r.len() - 1];
            }
        }
        r
    }

    /// Whitespace-separated items of a list value (or the single scalar).
    pub fn items(&self) -> Vec<&str> {
        self.unquoted().split_whitespace().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.unquoted().trim().is_empty()
    }
}

fn classify(raw: &str) -> ValueKind {
    let quoted = raw.len() >= 2
        && (raw.starts_with('\'') && raw.ends_with('\'') || raw.starts_with('"') && raw.ends_with('"'));
    if quoted {
        let inner = &raw[1..raw.len() - 1];
        if inner.split_whitespace().count() > 1 {
            return ValueKind::List;
        }
        return ValueKind::QuotedString;
    }
    if raw.parse::<f64>().is_ok() {
        return ValueKind::Number;
    }
    match raw.to_ascii_lowercase().as_str() {
        "true" | "false" | "yes" | "no" | "on" | "off" => ValueKind::Boolean,
        _ => ValueKind::Scalar,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitParam {
    pub name: String,
    pub value: HitValue,
    /// Comment lines immediately preceding the parameter, `#` included.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comments: Vec<String>,
    /// Comment on the same line after the value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inline_comment: Option<String>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitBlock {
    pub name: String,
    pub params: Vec<HitParam>,
    pub children: Vec<HitBlock>,
    /// Comment lines immediately preceding the block opener.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comments: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header_comment: Option<String>,
    /// Comments after the last item and before the closer.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trailing_comments: Vec<String>,
    /// Opener used the legacy `[./name]` form.
    #[serde(default)]
    pub legacy: bool,
    pub span: Span,
}

impl HitBlock {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            params: Vec::new(),
            children: Vec::new(),
            comments: Vec::new(),
            header_comment: None,
            trailing_comments: Vec::new(),
            legacy: false,
            span: Span::default(),
        }
    }

    /// First parameter with the given name.
    pub fn param(&self, name: &str) -> Option<&HitValue> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn child(&self, name: &str) -> Option<&HitBlock> {
        self.children.iter().find(|c| c.name == name)
    }

    pub fn with_param(mut self, name: &str, raw: &str) -> Self {
        self.params.push(HitParam {
            name: name.to_string(),
            value: HitValue::new(raw),
            comments: Vec::new(),
            inline_comment: None,
            span: Span::default(),
        });
        self
    }

    pub fn with_child(mut self, child: HitBlock) -> Self {
        self.children.push(child);
        self
    }

    fn strip_comments(&mut self) {
        self.comments.clear();
        self.header_comment = None;
        self.trailing_comments.clear();
        for p in &mut self.params {
            p.comments.clear();
            p.inline_comment = None;
        }
        for c in &mut self.children {
            c.strip_comments();
        }
    }

    fn walk<'a>(&'a self, out: &mut Vec<&'a HitBlock>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HitDocument {
    pub blocks: Vec<HitBlock>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trailing_comments: Vec<String>,
    #[serde(default)]
    pub source_name: String,
}

impl HitDocument {
    pub fn block(&self, name: &str) -> Option<&HitBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Every block in document order, depth first.
    pub fn all_blocks(&self) -> Vec<&HitBlock> {
        let mut out = Vec::new();
        for b in &self.blocks {
            b.walk(&mut out);
        }
        out
    }

    /// A copy with every comment removed.
    pub fn strip_comments(&self) -> HitDocument {
        let mut doc = self.clone();
        doc.trailing_comments.clear();
        for b in &mut doc.blocks {
            b.strip_comments();
        }
        doc
    }

    /// Structural equality: block names, nesting, parameter names and raw
    /// values, and comments, in order. Spans, the legacy flag and the source
    /// name are ignored.
    pub fn structurally_eq(&self, other: &HitDocument) -> bool {
        self.trailing_comments == other.trailing_comments
            && blocks_eq(&self.blocks, &other.blocks, true)
    }

    /// Structural equality with comments ignored.
    pub fn same_structure(&self, other: &HitDocument) -> bool {
        blocks_eq(&self.blocks, &other.blocks, false)
    }
}

fn blocks_eq(a: &[HitBlock], b: &[HitBlock], comments: bool) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| block_eq(x, y, comments))
}

fn block_eq(a: &HitBlock, b: &HitBlock, comments: bool) -> bool {
    if a.name != b.name || a.params.len() != b.params.len() {
        return false;
    }
    if comments
        && (a.comments != b.comments
            || a.header_comment != b.header_comment
            || a.trailing_comments != b.trailing_comments)
    {
        return false;
    }
    let params_eq = a.params.iter().zip(&b.params).all(|(p, q)| {
        p.name == q.name
            && p.value.raw == q.value.raw
            && (!comments || (p.comments == q.comments && p.inline_comment == q.inline_comment))
    });
    params_eq && blocks_eq(&a.children, &b.children, comments)
}
