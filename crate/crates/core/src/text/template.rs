//! The designed prompt: a role preamble, restriction rules, and a word limit,
//! rendered around a single API-call name.

use serde::{Deserialize, Serialize};

use super::TextError;
use crate::corpus::ApiCall;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub identity_preamble: String,
    pub rules: Vec<String>,
    pub length_limit_words: usize,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            identity_preamble: "You are an experienced software security analyst who studies \
                                the runtime behavior of Windows programs."
                .to_string(),
            rules: vec![
                "Do not open with boilerplate that merely names the call as a Windows API; \
                 start directly with what it does."
                    .to_string(),
                "Write plain natural-language sentences without special symbols such as \\n or \
                 \\t and without markup formats."
                    .to_string(),
                "Cover the call's purpose, typical usage, and any security-relevant behavior."
                    .to_string(),
            ],
            length_limit_words: 100,
        }
    }
}

/// Deterministically renders the prompt for one API call. The rendered text
/// contains the call name exactly once.
pub fn render_prompt(template: &PromptTemplate, api: &ApiCall) -> Result<String, TextError> {
    if template.length_limit_words == 0 {
        return Err(TextError::InvalidWordLimit);
    }
    let mut out = String::new();
    out.push_str(&template.identity_preamble);
    out.push('\n');
    if !template.rules.is_empty() {
        out.push_str("Follow these rules:\n");
        for (i, rule) in template.rules.iter().enumerate() {
            out.push_str(&format!("{}. {}\n", i + 1, rule));
        }
    }
    out.push_str(&format!(
        "Explain the API call \"{}\" in at most {} words.",
        api.as_str(),
        template.length_limit_words
    ));

    let occurrences = out.matches(api.as_str()).count();
    if occurrences != 1 {
        return Err(TextError::TemplateInvalid {
            detail: format!(
                "rendered prompt contains the API name {} times, expected exactly once",
                occurrences
            ),
        });
    }
    Ok(out)
}
