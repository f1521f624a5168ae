use super::ast::{HitBlock, HitDocument, HitParam, HitValue, Pos, Span};
use super::{Diagnostic, Severity};

pub const RULE_UNCLOSED_BLOCK: &str = "unclosed_block";
pub const RULE_UNMATCHED_CLOSER: &str = "unmatched_closer";
pub const RULE_UNBALANCED_BRACKET: &str = "unbalanced_bracket";
pub const RULE_UNTERMINATED_STRING: &str = "unterminated_string";
pub const RULE_PARAM_OUTSIDE_BLOCK: &str = "param_outside_block";
pub const RULE_INVALID_LINE: &str = "invalid_line";

struct Line<'a> {
    text: &'a str,
    number: usize,
    offset: usize,
}

fn split_lines(text: &str) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let body = raw.strip_suffix('\n').unwrap_or(raw);
        let body = body.strip_suffix('\r').unwrap_or(body);
        out.push(Line { text: body, number: i + 1, offset });
        offset += raw.len();
    }
    out
}

fn pos(line: &Line<'_>, byte_col: usize) -> Pos {
    Pos {
        line: line.number,
        col: byte_col + 1,
        offset: line.offset + byte_col,
    }
}

fn line_span(line: &Line<'_>) -> Span {
    Span::new(pos(line, 0), pos(line, line.text.len()))
}

fn error(rule: &str, message: String, span: Span) -> Diagnostic {
    Diagnostic {
        rule_id: rule.to_string(),
        severity: Severity::Error,
        message,
        span,
    }
}

/// Splits `rest` into (content before a comment, comment text starting at `#`).
fn split_comment(rest: &str) -> (&str, Option<&str>) {
    match rest.find('#') {
        Some(i) => (&rest[..i], Some(rest[i..].trim_end())),
        None => (rest, None),
    }
}

fn is_param_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(|c| c.is_whitespace() || c == '[' || c == ']' || c == '\'' || c == '"')
}

/// Parses card text into a document. Never panics; on failure every problem
/// found is reported as an error-severity diagnostic.
pub fn parse(text: &str) -> Result<HitDocument, Vec<Diagnostic>> {
    parse_named(text, "")
}

pub fn parse_named(text: &str, source_name: &str) -> Result<HitDocument, Vec<Diagnostic>> {
    let lines = split_lines(text);
    let mut diags = Vec::new();
    let mut doc = HitDocument {
        source_name: source_name.to_string(),
        ..HitDocument::default()
    };
    let mut stack: Vec<HitBlock> = Vec::new();
    let mut pending: Vec<String> = Vec::new();

    let mut i = 0;
    while i < lines.len() {
        let line = &lines[i];
        i += 1;
        let trimmed = line.text.trim_start();
        let indent = line.text.len() - trimmed.len();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            pending.push(trimmed.trim_end().to_string());
            continue;
        }

        if trimmed.starts_with('[') {
            let Some(close) = trimmed.find(']') else {
                diags.push(error(
                    RULE_UNBALANCED_BRACKET,
                    format!("block marker `{}` has no closing `]`", trimmed.trim_end()),
                    line_span(line),
                ));
                continue;
            };
            let inner = trimmed[1..close].trim();
            let (junk, comment) = split_comment(&trimmed[close + 1..]);
            if !junk.trim().is_empty() {
                diags.push(error(
                    RULE_INVALID_LINE,
                    format!("unexpected text `{}` after block marker", junk.trim()),
                    line_span(line),
                ));
                continue;
            }
            let start = pos(line, indent);
            let end = pos(line, indent + close + 1);
            if inner.is_empty() || inner == "../" || inner == ".." {
                match stack.pop() {
                    Some(mut block) => {
                        block.trailing_comments.append(&mut pending);
                        block.span.end = end;
                        // closer comments are folded into trailing comments
                        if let Some(c) = comment {
                            block.trailing_comments.push(c.to_string());
                        }
                        match stack.last_mut() {
                            Some(parent) => parent.children.push(block),
                            None => doc.blocks.push(block),
                        }
                    }
                    None => diags.push(error(
                        RULE_UNMATCHED_CLOSER,
                        "block closer without a matching opener".to_string(),
                        Span::new(start, end),
                    )),
                }
                continue;
            }
            let (name, legacy) = match inner.strip_prefix("./") {
                Some(n) => (n.trim(), true),
                None => (inner, false),
            };
            let mut block = HitBlock::new(name);
            block.legacy = legacy;
            block.comments = std::mem::take(&mut pending);
            block.header_comment = comment.map(str::to_string);
            block.span = Span::new(start, end);
            stack.push(block);
            continue;
        }

        // parameter line
        let Some(eq) = trimmed.find('=') else {
            diags.push(error(
                RULE_INVALID_LINE,
                format!("expected `name = value`, found `{}`", trimmed.trim_end()),
                line_span(line),
            ));
            continue;
        };
        let name = trimmed[..eq].trim();
        if !is_param_name(name) {
            diags.push(error(
                RULE_INVALID_LINE,
                format!("invalid parameter name `{name}`"),
                line_span(line),
            ));
            continue;
        }
        let after = &trimmed[eq + 1..];
        let value_col = indent + eq + 1 + (after.len() - after.trim_start().len());
        let after = after.trim_start();
        let param_start = pos(line, indent);

        let (raw, end, comment) = if let Some(q) = after.chars().next().filter(|c| *c == '\'' || *c == '"') {
            // quoted value, possibly spanning several lines
            let mut raw = String::new();
            let mut seg_line = line;
            let mut seg = &after[1..];
            let mut seg_col = value_col + 1;
            raw.push(q);
            let found = loop {
                if let Some(k) = seg.find(q) {
                    raw.push_str(&seg[..=k]);
                    break Some((seg_line, seg_col + k + 1, &seg[k + 1..]));
                }
                raw.push_str(seg);
                if i >= lines.len() {
                    break None;
                }
                raw.push('\n');
                seg_line = &lines[i];
                i += 1;
                seg = seg_line.text;
                seg_col = 0;
            };
            match found {
                Some((end_line, end_col, rest)) => {
                    let (junk, comment) = split_comment(rest);
                    if !junk.trim().is_empty() {
                        diags.push(error(
                            RULE_INVALID_LINE,
                            format!("unexpected text `{}` after quoted value", junk.trim()),
                            line_span(end_line),
                        ));
                        continue;
                    }
                    (raw, pos(end_line, end_col), comment)
                }
                None => {
                    diags.push(error(
                        RULE_UNTERMINATED_STRING,
                        format!("quoted value for `{name}` is never closed"),
                        Span::new(pos(line, value_col), pos(line, line.text.len())),
                    ));
                    continue;
                }
            }
        } else {
            let (value, comment) = split_comment(after);
            let value = value.trim_end();
            (value.to_string(), pos(line, value_col + value.len()), comment)
        };

        let param = HitParam {
            name: name.to_string(),
            value: HitValue::new(raw),
            comments: std::mem::take(&mut pending),
            inline_comment: comment.map(str::to_string),
            span: Span::new(param_start, end),
        };
        match stack.last_mut() {
            Some(block) => block.params.push(param),
            None => diags.push(error(
                RULE_PARAM_OUTSIDE_BLOCK,
                format!("parameter `{name}` appears outside any block"),
                param.span,
            )),
        }
    }

    for block in stack.iter().rev() {
        diags.push(error(
            RULE_UNCLOSED_BLOCK,
            format!("block `{}` opened on line {} is never closed", block.name, block.span.start.line),
            block.span,
        ));
    }
    if !diags.is_empty() {
        diags.sort_by(|a, b| a.span.cmp(&b.span).then_with(|| a.rule_id.cmp(&b.rule_id)));
        return Err(diags);
    }
    doc.trailing_comments = pending;
    Ok(doc)
}
