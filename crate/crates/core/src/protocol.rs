//! Extraction of labeled fenced sections from model output.
//!
//! Models are asked to answer with sections like
//!
//! ````text
//! ```hit heat.i
//! [Mesh]
//! ...
//! ```
//! ````
//!
//! The info string after the opening fence is split on whitespace; a block
//! matches a label when any of its info tokens equals the label.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock {
    pub info: Vec<String>,
    pub body: String,
}

impl FencedBlock {
    pub fn has_label(&self, label: &str) -> bool {
        self.info.iter().any(|t| t == label)
    }
}

/// All fenced blocks in order of appearance. An unterminated trailing block
/// runs to end of text.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock> {
    let mut out = Vec::new();
    let mut current: Option<(Vec<String>, usize, Vec<&str>)> = None;
    for line in text.lines() {
        let trimmed = line.trim_start();
        let ticks = trimmed.chars().take_while(|c| *c == '`').count();
        match current.as_mut() {
            None if ticks >= 3 => {
                let info = trimmed[ticks..].split_whitespace().map(str::to_string).collect();
                current = Some((info, ticks, Vec::new()));
            }
            None => {}
            Some((_, open, _)) if ticks >= *open && trimmed[ticks..].trim().is_empty() => {
                let (info, _, lines) = current.take().expect("open block");
                out.push(FencedBlock {
                    info,
                    body: join_body(&lines),
                });
            }
            Some((_, _, lines)) => lines.push(line),
        }
    }
    if let Some((info, _, lines)) = current {
        out.push(FencedBlock {
            info,
            body: join_body(&lines),
        });
    }
    out
}

fn join_body(lines: &[&str]) -> String {
    let mut s = lines.join("\n");
    if !s.is_empty() {
        s.push('\n');
    }
    s
}

/// Body of the first block carrying `label`.
pub fn labeled_block(text: &str, label: &str) -> Option<String> {
    fenced_blocks(text).into_iter().find(|b| b.has_label(label)).map(|b| b.body)
}
