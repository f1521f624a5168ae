//! Prompt templates. Defaults are compiled in; a templates directory may
//! override any of them with a `<name>.txt` file. Placeholders are written
//! `{{name}}`.

use std::collections::BTreeMap;
use std::path::Path;

pub const SYSTEM: &str = "system";
pub const ALIGN: &str = "align";
pub const ALIGN_FEEDBACK: &str = "align_feedback";
pub const QUERY: &str = "query";
pub const ARCHITECT: &str = "architect";
pub const CORRECT: &str = "correct";
pub const ESCALATE: &str = "escalate";
pub const ANNOTATE: &str = "annotate";

const DEFAULTS: [(&str, &str); 8] = [
    (SYSTEM, include_str!("../templates/system.txt")),
    (ALIGN, include_str!("../templates/align.txt")),
    (ALIGN_FEEDBACK, include_str!("../templates/align_feedback.txt")),
    (QUERY, include_str!("../templates/query.txt")),
    (ARCHITECT, include_str!("../templates/architect.txt")),
    (CORRECT, include_str!("../templates/correct.txt")),
    (ESCALATE, include_str!("../templates/escalate.txt")),
    (ANNOTATE, include_str!("../templates/annotate.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    texts: BTreeMap<String, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            texts: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Templates {
    /// Defaults, with any `<name>.txt` found in `dir` taking precedence.
    pub fn load(dir: Option<&Path>) -> std::io::Result<Self> {
        let mut t = Self::default();
        if let Some(dir) = dir {
            for (name, _) in DEFAULTS {
                let path = dir.join(format!("{name}.txt"));
                if path.is_file() {
                    t.texts.insert(name.to_string(), std::fs::read_to_string(&path)?);
                }
            }
        }
        Ok(t)
    }

    pub fn names() -> impl Iterator<Item = &'static str> {
        DEFAULTS.iter().map(|(k, _)| *k)
    }

    pub fn set(&mut self, name: &str, text: &str) {
        self.texts.insert(name.to_string(), text.to_string());
    }

    /// Renders `name`, substituting each `{{key}}` from `vars`.
    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        let mut out = self.texts.get(name).cloned().unwrap_or_default();
        for (key, value) in vars {
            out = out.replace(&format!("{{{{{key}}}}}"), value);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_placeholders() {
        let t = Templates::default();
        let s = t.render(ALIGN, &[("request", "A rod of length 1 m.")]);
        assert!(s.contains("A rod of length 1 m."));
        assert!(!s.contains("{{request}}"));
    }

    #[test]
    fn directory_overrides_default() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("query.txt"), "Q: {{task}}").unwrap();
        let t = Templates::load(Some(dir.path())).unwrap();
        assert_eq!(t.render(QUERY, &[("task", "x")]), "Q: x");
        assert_eq!(t.render(ALIGN, &[]), Templates::default().render(ALIGN, &[]));
    }
}
