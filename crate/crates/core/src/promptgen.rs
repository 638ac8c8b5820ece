//! Systematic prompt enumeration over a hierarchical descriptor library.
//!
//! A depth-first traversal walks the categories in order, pruning partial
//! assignments as soon as they contain a forbidden pair, then renders each
//! surviving assignment through the library template and deduplicates on a
//! canonicalized form of the text.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("library has no categories")]
    NoCategories,
    #[error("category \"{0}\" has no options")]
    EmptyCategory(String),
    #[error("duplicate option \"{option}\" in category \"{category}\"")]
    DuplicateOption { category: String, option: String },
    #[error("rule references unknown {what} \"{name}\"")]
    UnknownReference { what: &'static str, name: String },
    #[error("rule pairs category \"{0}\" with itself")]
    SelfRule(String),
    #[error("template is missing slot {{{0}}}")]
    MissingSlot(String),
    #[error("prompt parse: {0}")]
    Json(#[from] serde_json::Error),
}

/// One descriptor dimension with its named options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub options: Vec<String>,
}

/// Ordered categories plus a sentence template with one `{category}` slot
/// per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorLibrary {
    pub categories: Vec<Category>,
    pub template: String,
    #[serde(default)]
    pub rules: Vec<CompatibilityRule>,
}

/// A forbidden pair of options across two distinct categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityRule {
    /// (category, option)
    pub a: (String, String),
    /// (category, option)
    pub b: (String, String),
}

/// A complete assignment with its rendered text and dedup key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    /// One option per category, in library category order.
    pub assignment: Vec<(String, String)>,
    pub rendered: String,
    pub canonical_key: String,
}

impl DescriptorLibrary {
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let lib: DescriptorLibrary = serde_json::from_str(text)?;
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.categories.is_empty() {
            return Err(PromptError::NoCategories);
        }
        for cat in &self.categories {
            if cat.options.is_empty() {
                return Err(PromptError::EmptyCategory(cat.name.clone()));
            }
            for (i, opt) in cat.options.iter().enumerate() {
                if cat.options[..i].contains(opt) {
                    return Err(PromptError::DuplicateOption {
                        category: cat.name.clone(),
                        option: opt.clone(),
                    });
                }
            }
            if !self.template.contains(&format!("{{{}}}", cat.name)) {
                return Err(PromptError::MissingSlot(cat.name.clone()));
            }
        }
        for rule in &self.rules {
            rule.validate(self)?;
        }
        Ok(())
    }

    fn category(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn combination_count(&self) -> usize {
        self.categories.iter().map(|c| c.options.len()).product()
    }

    /// Renders the template for a complete assignment.
    pub fn render(&self, assignment: &[(String, String)]) -> String {
        let mut out = self.template.clone();
        for (cat, opt) in assignment {
            out = out.replace(&format!("{{{cat}}}"), opt);
        }
        out
    }
}

impl CompatibilityRule {
    fn validate(&self, lib: &DescriptorLibrary) -> Result<(), PromptError> {
        if self.a.0 == self.b.0 {
            return Err(PromptError::SelfRule(self.a.0.clone()));
        }
        for (cat_name, opt_name) in [&self.a, &self.b] {
            let cat = lib.category(cat_name).ok_or(PromptError::UnknownReference {
                what: "category",
                name: cat_name.clone(),
            })?;
            if !cat.options.contains(opt_name) {
                return Err(PromptError::UnknownReference {
                    what: "option",
                    name: format!("{cat_name}={opt_name}"),
                });
            }
        }
        Ok(())
    }
}

/// True unless some rule's pair is fully present in the partial assignment.
pub fn check_compat(assignment: &[(String, String)], rules: &[CompatibilityRule]) -> bool {
    let has = |pair: &(String, String)| {
        assignment
            .iter()
            .any(|(c, o)| c == &pair.0 && o == &pair.1)
    };
    !rules.iter().any(|r| has(&r.a) && has(&r.b))
}

/// A pluggable acceptance predicate applied to fully rendered prompts.
/// Stands in for an external naturalness validator; the default accepts
/// everything.
pub type ValidationHook<'a> = dyn Fn(&PromptRecord) -> bool + 'a;

/// Depth-first enumeration in category order with rule pruning, followed by
/// canonical-key deduplication. Output order is traversal order.
pub fn enumerate_prompts(
    lib: &DescriptorLibrary,
    rules: &[CompatibilityRule],
) -> Result<Vec<PromptRecord>, PromptError> {
    enumerate_prompts_with(lib, rules, &|_| true)
}

pub fn enumerate_prompts_with(
    lib: &DescriptorLibrary,
    rules: &[CompatibilityRule],
    accept: &ValidationHook<'_>,
) -> Result<Vec<PromptRecord>, PromptError> {
    lib.validate()?;
    for rule in rules {
        rule.validate(lib)?;
    }
    let mut out = Vec::new();
    let mut partial: Vec<(String, String)> = Vec::with_capacity(lib.categories.len());
    dfs(lib, rules, accept, &mut partial, 0, &mut out);
    Ok(dedup(out))
}

fn dfs(
    lib: &DescriptorLibrary,
    rules: &[CompatibilityRule],
    accept: &ValidationHook<'_>,
    partial: &mut Vec<(String, String)>,
    depth: usize,
    out: &mut Vec<PromptRecord>,
) {
    if depth == lib.categories.len() {
        let rendered = lib.render(partial);
        let record = PromptRecord {
            assignment: partial.clone(),
            canonical_key: canonical_key(&rendered),
            rendered,
        };
        if accept(&record) {
            out.push(record);
        }
        return;
    }
    let cat = &lib.categories[depth];
    for opt in &cat.options {
        partial.push((cat.name.clone(), opt.clone()));
        if check_compat(partial, rules) {
            dfs(lib, rules, accept, partial, depth + 1, out);
        }
        partial.pop();
    }
}

fn canonical_key(rendered: &str) -> String {
    rendered
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Keeps the first occurrence of each canonical key; order is stable.
pub fn dedup(records: Vec<PromptRecord>) -> Vec<PromptRecord> {
    let mut seen = std::collections::HashSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert(r.canonical_key.clone()))
        .collect()
}

/// JSONL serialization of enumerated prompts.
pub fn to_jsonl(records: &[PromptRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("prompt record serializes"))
        .collect::<Vec<_>>()
        .join("\n")
        + if records.is_empty() { "" } else { "\n" }
}
