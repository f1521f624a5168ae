use std::collections::VecDeque;
use std::io::{BufRead, Write};

use super::{render_plan, AlignedSpec};

/// The user's answer to a proposed specification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Confirmation {
    Confirm,
    /// Requested changes, passed back to the model.
    Edit(String),
    Abort,
}

/// Channel for confirming the aligned specification.
pub trait Interaction {
    /// In non-interactive mode the first proposal is accepted unasked.
    fn is_interactive(&self) -> bool;
    fn review(&mut self, spec: &AlignedSpec) -> Confirmation;
}

pub struct NonInteractive;

impl Interaction for NonInteractive {
    fn is_interactive(&self) -> bool {
        false
    }

    fn review(&mut self, _spec: &AlignedSpec) -> Confirmation {
        Confirmation::Confirm
    }
}

/// Answers from a fixed list; aborts once the list runs out.
#[derive(Debug, Default)]
pub struct Scripted {
    answers: VecDeque<Confirmation>,
    pub seen: Vec<AlignedSpec>,
}

impl Scripted {
    pub fn new(answers: impl IntoIterator<Item = Confirmation>) -> Self {
        Self {
            answers: answers.into_iter().collect(),
            seen: Vec::new(),
        }
    }
}

impl Interaction for Scripted {
    fn is_interactive(&self) -> bool {
        true
    }

    fn review(&mut self, spec: &AlignedSpec) -> Confirmation {
        self.seen.push(spec.clone());
        self.answers.pop_front().unwrap_or(Confirmation::Abort)
    }
}

/// Prompts on a terminal (or any reader/writer pair).
pub struct Terminal<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> Terminal<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }

    fn read_line(&mut self) -> Option<String> {
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(line.trim().to_string()),
        }
    }
}

impl<R: BufRead, W: Write> Interaction for Terminal<R, W> {
    fn is_interactive(&self) -> bool {
        true
    }

    fn review(&mut self, spec: &AlignedSpec) -> Confirmation {
        let _ = writeln!(
            self.output,
            "\nRequirement:\n{}\n\nCard plan:\n{}\n",
            spec.requirement.trim(),
            render_plan(&spec.card_plan)
        );
        loop {
            let _ = write!(self.output, "[c]onfirm, [e]dit or [a]bort? ");
            let _ = self.output.flush();
            let Some(answer) = self.read_line() else {
                return Confirmation::Abort;
            };
            match answer.to_ascii_lowercase().as_str() {
                "c" | "confirm" | "y" | "yes" => return Confirmation::Confirm,
                "a" | "abort" | "q" | "quit" => return Confirmation::Abort,
                "e" | "edit" => {
                    let _ = write!(self.output, "Describe the changes: ");
                    let _ = self.output.flush();
                    match self.read_line() {
                        Some(text) if !text.is_empty() => return Confirmation::Edit(text),
                        Some(_) => continue,
                        None => return Confirmation::Abort,
                    }
                }
                _ => continue,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::CardTask;

    fn spec() -> AlignedSpec {
        AlignedSpec {
            requirement: "Heat a rod.".into(),
            card_plan: vec![CardTask {
                filename: "rod.i".into(),
                task_description: "steady conduction".into(),
                is_main_app: true,
            }],
            confirmed: false,
            auto_confirmed: false,
        }
    }

    #[test]
    fn terminal_answers() {
        let mut out = Vec::new();
        let mut t = Terminal::new(&b"what\ne\n\ne\nfiner mesh\n"[..], &mut out);
        assert_eq!(t.review(&spec()), Confirmation::Edit("finer mesh".into()));
        let mut t = Terminal::new(&b"confirm\n"[..], Vec::new());
        assert_eq!(t.review(&spec()), Confirmation::Confirm);
        let mut t = Terminal::new(&b""[..], Vec::new());
        assert_eq!(t.review(&spec()), Confirmation::Abort);
        assert!(String::from_utf8(out).unwrap().contains("rod.i: steady conduction"));
    }

    #[test]
    fn scripted_runs_out_into_abort() {
        let mut s = Scripted::new([Confirmation::Confirm]);
        assert_eq!(s.review(&spec()), Confirmation::Confirm);
        assert_eq!(s.review(&spec()), Confirmation::Abort);
        assert_eq!(s.seen.len(), 2);
    }
}
