//! Prompt templates with `{name}` placeholders.
//!
//! Built-in templates are compiled in from `prompts/*.txt`; a directory of
//! same-named files can override any of them.

use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PromptKind {
    SummaryExtract,
    EntityExtract,
    RelationExtract,
    AnswerSimplify,
    SegmentSummary,
    NodeAggregate,
    MemoryAction,
    QueryRewrite,
    AnswerGenerate,
}

impl PromptKind {
    pub const ALL: [PromptKind; 9] = [
        PromptKind::SummaryExtract,
        PromptKind::EntityExtract,
        PromptKind::RelationExtract,
        PromptKind::AnswerSimplify,
        PromptKind::SegmentSummary,
        PromptKind::NodeAggregate,
        PromptKind::MemoryAction,
        PromptKind::QueryRewrite,
        PromptKind::AnswerGenerate,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            PromptKind::SummaryExtract => "summary_extract.txt",
            PromptKind::EntityExtract => "entity_extract.txt",
            PromptKind::RelationExtract => "relation_extract.txt",
            PromptKind::AnswerSimplify => "answer_simplify.txt",
            PromptKind::SegmentSummary => "segment_summary.txt",
            PromptKind::NodeAggregate => "node_aggregate.txt",
            PromptKind::MemoryAction => "memory_action.txt",
            PromptKind::QueryRewrite => "query_rewrite.txt",
            PromptKind::AnswerGenerate => "answer_generate.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            PromptKind::SummaryExtract => include_str!("../prompts/summary_extract.txt"),
            PromptKind::EntityExtract => include_str!("../prompts/entity_extract.txt"),
            PromptKind::RelationExtract => include_str!("../prompts/relation_extract.txt"),
            PromptKind::AnswerSimplify => include_str!("../prompts/answer_simplify.txt"),
            PromptKind::SegmentSummary => include_str!("../prompts/segment_summary.txt"),
            PromptKind::NodeAggregate => include_str!("../prompts/node_aggregate.txt"),
            PromptKind::MemoryAction => include_str!("../prompts/memory_action.txt"),
            PromptKind::QueryRewrite => include_str!("../prompts/query_rewrite.txt"),
            PromptKind::AnswerGenerate => include_str!("../prompts/answer_generate.txt"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: Vec<(PromptKind, String)>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self { templates: PromptKind::ALL.iter().map(|k| (*k, k.builtin().to_string())).collect() }
    }
}

impl PromptSet {
    /// Built-ins, overridden by any matching file in `dir`.
    pub fn load_dir(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::default();
        for (kind, text) in &mut set.templates {
            let path = dir.join(kind.file_name());
            if path.exists() {
                *text = std::fs::read_to_string(path)?;
            }
        }
        Ok(set)
    }

    pub fn template(&self, kind: PromptKind) -> &str {
        self.templates.iter().find(|(k, _)| *k == kind).map(|(_, t)| t.as_str()).expect("all kinds present")
    }

    /// Substitute `{name}` placeholders in a single pass; substituted values
    /// are never rescanned.
    pub fn render(&self, kind: PromptKind, vars: &[(&str, &str)]) -> String {
        render(self.template(kind), vars)
    }
}

pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'outer: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        for (name, value) in vars {
            if after.starts_with(name) && after[name.len()..].starts_with('}') {
                out.push_str(value);
                rest = &after[name.len() + 1..];
                continue 'outer;
            }
        }
        out.push('{');
        rest = after;
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_fills_named_placeholders_once() {
        let out = render("a {x} b {y} {z} {", &[("x", "{y}"), ("y", "Y")]);
        assert_eq!(out, "a {y} b Y {z} {");
    }

    #[test]
    fn builtins_carry_their_placeholders() {
        let set = PromptSet::default();
        assert!(set.template(PromptKind::SummaryExtract).contains("{message}"));
        assert!(set.template(PromptKind::RelationExtract).contains("{entities}"));
        for k in [PromptKind::EntityExtract, PromptKind::RelationExtract] {
            assert!(set.template(k).contains("{previous messages}"));
            assert!(set.template(k).contains("{current message}"));
        }
        let s = set.render(PromptKind::AnswerSimplify, &[("question", "Q?"), ("answer", "A.")]);
        assert!(s.ends_with("- Question: Q?\n- Original Answer: A.\n- Simplified Answer:\n"));
    }

    #[test]
    fn directory_overrides() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("query_rewrite.txt"), "Q={query}").unwrap();
        let set = PromptSet::load_dir(dir.path()).unwrap();
        assert_eq!(set.render(PromptKind::QueryRewrite, &[("query", "x")]), "Q=x");
        assert!(set.template(PromptKind::SummaryExtract).contains("{message}"));
    }
}
