//! Rule-based checks over a parsed card.
//!
//! The rule set is a reconstruction of the kind of structural checks a
//! correction loop needs before handing a card to the solver; it does not
//! know about actual object registries. Every rule has a stable string id
//! and can be switched off through [`LintConfig`].

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{HitBlock, HitDocument};
use super::{Diagnostic, Severity};

pub const DUPLICATE_PARAM: &str = "duplicate_param";
pub const MISSING_TYPE: &str = "missing_type";
pub const UNKNOWN_TOP_BLOCK: &str = "unknown_top_block";
pub const EMPTY_VALUE: &str = "empty_value";
pub const DUPLICATE_BLOCK: &str = "duplicate_block";

pub const ALL_RULES: [&str; 5] = [DUPLICATE_PARAM, MISSING_TYPE, UNKNOWN_TOP_BLOCK, EMPTY_VALUE, DUPLICATE_BLOCK];

/// Top-level block names accepted by default.
pub const DEFAULT_TOP_BLOCKS: &[&str] = &[
    "Adaptivity",
    "AuxKernels",
    "AuxScalarKernels",
    "AuxVariables",
    "BCs",
    "Bounds",
    "Constraints",
    "Contact",
    "Controls",
    "Dampers",
    "Debug",
    "DGKernels",
    "DiracKernels",
    "Distributions",
    "Executioner",
    "Executors",
    "FVBCs",
    "FVInterfaceKernels",
    "FVKernels",
    "Functions",
    "FunctorMaterials",
    "GlobalParams",
    "GrayDiffusiveRadiation",
    "ICs",
    "InterfaceKernels",
    "Kernels",
    "Materials",
    "Mesh",
    "MeshGenerators",
    "MeshModifiers",
    "Modules",
    "MultiApps",
    "NodalKernels",
    "NodalNormals",
    "Outputs",
    "Physics",
    "Postprocessors",
    "Preconditioning",
    "Problem",
    "Reporters",
    "Samplers",
    "ScalarKernels",
    "Stochastic",
    "Tensor",
    "ThermalContact",
    "Transfers",
    "UserObjects",
    "Variables",
    "VectorPostprocessors",
];

/// Blocks whose sub-blocks each declare an object and therefore need `type`.
pub const DEFAULT_TYPED_COLLECTIONS: &[&str] = &[
    "AuxKernels",
    "AuxScalarKernels",
    "BCs",
    "Constraints",
    "Dampers",
    "DGKernels",
    "DiracKernels",
    "Distributions",
    "FVBCs",
    "FVInterfaceKernels",
    "FVKernels",
    "Functions",
    "FunctorMaterials",
    "InterfaceKernels",
    "Kernels",
    "Materials",
    "MeshGenerators",
    "MultiApps",
    "NodalKernels",
    "Postprocessors",
    "Preconditioning",
    "Reporters",
    "Samplers",
    "ScalarKernels",
    "Transfers",
    "UserObjects",
    "VectorPostprocessors",
];

/// Top-level blocks that themselves need `type`.
pub const DEFAULT_TYPED_BLOCKS: &[&str] = &["Executioner"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LintConfigError {
    #[error("unknown lint rule `{0}` (known rules: duplicate_param, missing_type, unknown_top_block, empty_value, duplicate_block)")]
    UnknownRule(String),
}

/// Declarative lint configuration, as read from the config file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LintConfig {
    /// Rule ids to turn off.
    pub disabled: Vec<String>,
    /// Replaces the default top-level allow-list when set.
    pub allowed_top_blocks: Option<Vec<String>>,
    /// Names added to the top-level allow-list.
    pub extra_top_blocks: Vec<String>,
    pub typed_collections: Option<Vec<String>>,
    pub typed_blocks: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ruleset {
    enabled: BTreeSet<&'static str>,
    allowed_top_blocks: BTreeSet<String>,
    typed_collections: BTreeSet<String>,
    typed_blocks: BTreeSet<String>,
}

impl Default for Ruleset {
    fn default() -> Self {
        Self {
            enabled: ALL_RULES.into_iter().collect(),
            allowed_top_blocks: DEFAULT_TOP_BLOCKS.iter().map(|s| s.to_string()).collect(),
            typed_collections: DEFAULT_TYPED_COLLECTIONS.iter().map(|s| s.to_string()).collect(),
            typed_blocks: DEFAULT_TYPED_BLOCKS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn rule_id(name: &str) -> Result<&'static str, LintConfigError> {
    ALL_RULES
        .into_iter()
        .find(|r| *r == name)
        .ok_or_else(|| LintConfigError::UnknownRule(name.to_string()))
}

impl Ruleset {
    pub fn from_config(config: &LintConfig) -> Result<Self, LintConfigError> {
        let mut rules = Ruleset::default();
        for name in &config.disabled {
            rules.enabled.remove(rule_id(name)?);
        }
        if let Some(list) = &config.allowed_top_blocks {
            rules.allowed_top_blocks = list.iter().cloned().collect();
        }
        rules.allowed_top_blocks.extend(config.extra_top_blocks.iter().cloned());
        if let Some(list) = &config.typed_collections {
            rules.typed_collections = list.iter().cloned().collect();
        }
        if let Some(list) = &config.typed_blocks {
            rules.typed_blocks = list.iter().cloned().collect();
        }
        Ok(rules)
    }

    pub fn with_only(names: &[&str]) -> Result<Self, LintConfigError> {
        let mut rules = Ruleset::default();
        rules.enabled.clear();
        for n in names {
            rules.enabled.insert(rule_id(n)?);
        }
        Ok(rules)
    }

    pub fn is_enabled(&self, rule: &str) -> bool {
        self.enabled.contains(rule)
    }

    pub fn allow_top_block(&mut self, name: &str) {
        self.allowed_top_blocks.insert(name.to_string());
    }
}

fn diag(rule: &'static str, message: String, span: super::ast::Span) -> Diagnostic {
    Diagnostic {
        rule_id: rule.to_string(),
        severity: Severity::Error,
        message,
        span,
    }
}

/// Runs every enabled rule. Output is sorted by span, then rule id.
pub fn lint(doc: &HitDocument, rules: &Ruleset) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if rules.is_enabled(UNKNOWN_TOP_BLOCK) {
        for b in &doc.blocks {
            let head = b.name.split('/').next().unwrap_or(&b.name);
            if !rules.allowed_top_blocks.contains(head) {
                out.push(diag(
                    UNKNOWN_TOP_BLOCK,
                    format!("unknown top-level block `[{}]`", b.name),
                    b.span,
                ));
            }
        }
    }
    if rules.is_enabled(DUPLICATE_BLOCK) {
        duplicate_blocks(&doc.blocks, "", &mut out);
    }
    for b in &doc.blocks {
        lint_block(b, None, 0, rules, &mut out);
    }
    out.sort_by(|a, b| a.span.cmp(&b.span).then_with(|| a.rule_id.cmp(&b.rule_id)));
    out
}

fn duplicate_blocks(blocks: &[HitBlock], parent: &str, out: &mut Vec<Diagnostic>) {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for b in blocks {
        if let Some(first_line) = seen.get(b.name.as_str()) {
            out.push(diag(
                DUPLICATE_BLOCK,
                format!("block `{}{}` already defined on line {}", parent, b.name, first_line),
                b.span,
            ));
        } else {
            seen.insert(&b.name, b.span.start.line);
        }
        duplicate_blocks(&b.children, &format!("{parent}{}/", b.name), out);
    }
}

fn lint_block(block: &HitBlock, parent: Option<&HitBlock>, depth: usize, rules: &Ruleset, out: &mut Vec<Diagnostic>) {
    if rules.is_enabled(DUPLICATE_PARAM) {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for p in &block.params {
            if let Some(line) = seen.get(p.name.as_str()) {
                out.push(diag(
                    DUPLICATE_PARAM,
                    format!("parameter `{}` in `[{}]` already set on line {}", p.name, block.name, line),
                    p.span,
                ));
            } else {
                seen.insert(&p.name, p.span.start.line);
            }
        }
    }
    if rules.is_enabled(EMPTY_VALUE) {
        for p in &block.params {
            if p.value.is_empty() {
                out.push(diag(
                    EMPTY_VALUE,
                    format!("parameter `{}` in `[{}]` has an empty value", p.name, block.name),
                    p.span,
                ));
            }
        }
    }
    if rules.is_enabled(MISSING_TYPE) {
        // only direct children of a top-level collection declare objects
        let needs_type = match (depth, parent) {
            (0, _) => rules.typed_blocks.contains(&block.name),
            (1, Some(parent)) => rules.typed_collections.contains(&parent.name),
            _ => false,
        };
        if needs_type && block.param("type").is_none() {
            let what = match parent {
                Some(p) => format!("`[{}/{}]`", p.name, block.name),
                None => format!("`[{}]`", block.name),
            };
            out.push(diag(MISSING_TYPE, format!("{what} declares no `type`"), block.span));
        }
    }
    for child in &block.children {
        lint_block(child, Some(block), depth + 1, rules, out);
    }
}
