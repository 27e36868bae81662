use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_PARAPHRASE: &str = include_str!("../../templates/paraphrase.v1.txt");
pub const DEFAULT_INJECT: &str = include_str!("../../templates/inject.v1.txt");
pub const DEFAULT_FEWSHOTS: &str = include_str!("../../templates/fewshots.v1.jsonl");

/// Separator used when a tag list is rendered into a prompt. Tag names may
/// themselves contain commas.
pub const TAG_SEPARATOR: &str = "; ";

/// A worked tag-injection example shown to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fewshot {
    pub caption: String,
    pub tags: Vec<String>,
    pub output: String,
}

pub fn parse_fewshots(text: &str, path: Option<&Path>) -> Result<Vec<Fewshot>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

pub fn render_fewshots(fewshots: &[Fewshot]) -> String {
    fewshots
        .iter()
        .map(|f| {
            format!(
                "Caption: {}\nTags: {}\nHallucinated caption: {}\n",
                one_line(&f.caption),
                f.tags.join(TAG_SEPARATOR),
                one_line(&f.output)
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Collapses whitespace so a value cannot break the line structure of a
/// prompt. Case is preserved.
pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Substitutes `{{name}}` placeholders in a single left-to-right pass.
/// Any placeholder without a value is an error; substituted values are
/// never re-scanned.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| Error::Render("unterminated `{{`".into()))?;
        let name = after[..end].trim();
        let value = values
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Render(format!("unresolved placeholder `{{{{{name}}}}}`")))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Prompt templates and examples for one augmentation run.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub paraphrase: String,
    pub inject: String,
    pub fewshots: Vec<Fewshot>,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            paraphrase: DEFAULT_PARAPHRASE.to_string(),
            inject: DEFAULT_INJECT.to_string(),
            fewshots: parse_fewshots(DEFAULT_FEWSHOTS, None).expect("bundled fewshots parse"),
        }
    }
}

impl PromptSet {
    /// Loads any of the three files that are given; the bundled versions
    /// fill in the rest.
    pub fn load(paraphrase: Option<&Path>, inject: Option<&Path>, fewshots: Option<&Path>) -> Result<Self> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let mut set = Self::default();
        if let Some(p) = paraphrase {
            set.paraphrase = read(p)?;
        }
        if let Some(p) = inject {
            set.inject = read(p)?;
        }
        if let Some(p) = fewshots {
            set.fewshots = parse_fewshots(&read(p)?, Some(p))?;
        }
        Ok(set)
    }

    pub fn paraphrase_prompt(&self, caption: &str) -> Result<String> {
        render(&self.paraphrase, &[("caption", &one_line(caption))])
    }

    pub fn inject_prompt(&self, caption: &str, tags: &[String], fewshots: &[Fewshot]) -> Result<String> {
        render(
            &self.inject,
            &[
                ("caption", &one_line(caption)),
                ("tags", &tags.join(TAG_SEPARATOR)),
                ("fewshots", &render_fewshots(fewshots)),
            ],
        )
    }
}
