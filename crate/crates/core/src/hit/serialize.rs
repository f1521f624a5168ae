use std::fmt::Write;

use super::ast::{HitBlock, HitDocument};

const INDENT: &str = "  ";

/// Renders a document in canonical form: two-space indentation per nesting
/// level, `[name]` / `[]` markers (legacy markers are normalized), one blank
/// line between top-level blocks and a single trailing newline.
pub fn serialize(doc: &HitDocument) -> String {
    let mut out = String::new();
    for (i, block) in doc.blocks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        write_block(&mut out, block, 0);
    }
    if !doc.trailing_comments.is_empty() {
        if !doc.blocks.is_empty() {
            out.push('\n');
        }
        for c in &doc.trailing_comments {
            out.push_str(c);
            out.push('\n');
        }
    }
    out
}

fn write_block(out: &mut String, block: &HitBlock, depth: usize) {
    let pad = INDENT.repeat(depth);
    let inner = INDENT.repeat(depth + 1);
    for c in &block.comments {
        let _ = writeln!(out, "{pad}{c}");
    }
    let _ = write!(out, "{pad}[{}]", block.name);
    if let Some(c) = &block.header_comment {
        let _ = write!(out, " {c}");
    }
    out.push('\n');
    for p in &block.params {
        for c in &p.comments {
            let _ = writeln!(out, "{inner}{c}");
        }
        if p.value.raw.is_empty() {
            let _ = write!(out, "{inner}{} =", p.name);
        } else {
            let _ = write!(out, "{inner}{} = {}", p.name, p.value.raw);
        }
        if let Some(c) = &p.inline_comment {
            let _ = write!(out, " {c}");
        }
        out.push('\n');
    }
    for child in &block.children {
        write_block(out, child, depth + 1);
    }
    for c in &block.trailing_comments {
        let _ = writeln!(out, "{inner}{c}");
    }
    let _ = writeln!(out, "{pad}[]");
}
