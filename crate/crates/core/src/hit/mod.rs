//! Parsing, serialization and linting of block-structured (HIT) input cards.
//!
//! Grammar: blocks open with `[Name]` or the legacy `[./Name]` and close with
//! `[]` or `[../]`; parameters are `name = value` with bare, single-quoted or
//! double-quoted values (quoted values may span lines); `#` starts a comment
//! running to end of line. Comments attach to the block or parameter that
//! follows them.

mod ast;
pub mod lint;
mod parse;
mod serialize;

use serde::{Deserialize, Serialize};

pub use ast::{HitBlock, HitDocument, HitParam, HitValue, Pos, Span, ValueKind};
pub use lint::{lint, LintConfig, LintConfigError, Ruleset};
pub use parse::{
    parse, parse_named, RULE_INVALID_LINE, RULE_PARAM_OUTSIDE_BLOCK, RULE_UNBALANCED_BRACKET, RULE_UNCLOSED_BLOCK,
    RULE_UNMATCHED_CLOSER, RULE_UNTERMINATED_STRING,
};
pub use serialize::serialize;

/// File extension for input cards.
pub const CARD_EXTENSION: &str = "i";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rule_id: String,
    pub severity: Severity,
    pub message: String,
    pub span: Span,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(
            f,
            "{}:{}: {} [{}]: {}",
            self.span.start.line, self.span.start.col, sev, self.rule_id, self.message
        )
    }
}

/// Parse then lint. Returns every parse error, or the lint diagnostics of a
/// parsed document; `Ok` carries the document only when no error-severity
/// diagnostic was produced.
pub fn check(text: &str, rules: &Ruleset) -> Result<(HitDocument, Vec<Diagnostic>), Vec<Diagnostic>> {
    let doc = parse(text)?;
    let diags = lint(&doc, rules);
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(diags);
    }
    Ok((doc, diags))
}
