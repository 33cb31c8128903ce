//! Minimal `{placeholder}` templates for prompt files.
//!
//! Prompt wording is data, not code: the exact texts live under
//! `fixtures/templates/` and are loaded at run time, so they can be swapped
//! per experiment without recompiling.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("template is missing required placeholder {0}")]
    MissingPlaceholder(String),
}

/// A prompt template with `{name}` placeholders.
#[derive(Debug, Clone)]
pub struct Template {
    text: String,
}

impl Template {
    pub fn new(text: impl Into<String>) -> Self {
        Template { text: text.into() }
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        // Prompt files are authored with trailing newlines; those are not
        // part of the prompt.
        Ok(Template::new(text.trim_end_matches('\n')))
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Errors unless every `{name}` in `placeholders` appears in the text.
    pub fn require(&self, placeholders: &[&str]) -> Result<(), TemplateError> {
        for name in placeholders {
            let token = format!("{{{name}}}");
            if !self.text.contains(&token) {
                return Err(TemplateError::MissingPlaceholder(token));
            }
        }
        Ok(())
    }

    /// Replaces each `{name}` with its value. Unknown placeholders are left
    /// alone, so templates can be rendered in stages.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.text.clone();
        for (name, value) in vars {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_placeholders() {
        let t = Template::new("question:\n{question}\n\nanswer as {format}");
        let out = t.render(&[("question", "2+2?"), ("format", "text")]);
        assert_eq!(out, "question:\n2+2?\n\nanswer as text");
    }

    #[test]
    fn require_rejects_missing_placeholder() {
        let t = Template::new("no placeholders here");
        assert!(t.require(&["question"]).is_err());
        let ok = Template::new("q: {question}");
        assert!(ok.require(&["question"]).is_ok());
    }

    #[test]
    fn staged_rendering_leaves_unknown_tokens() {
        let t = Template::new("{a} and {b}");
        assert_eq!(t.render(&[("a", "x")]), "x and {b}");
    }
}
