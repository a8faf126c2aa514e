//! Prompt assets and slot substitution.
//!
//! Assets are stored verbatim. Slots are `{name}` markers; only the names
//! passed to [`Prompt::render`] are replaced, so JSON braces in the agent
//! prompt survive untouched.

/// A prompt template.
#[derive(Debug, Clone, Copy)]
pub struct Prompt {
    pub text: &'static str,
    /// `{{` and `}}` render as literal braces.
    pub doubled_braces: bool,
}

pub const GENERATE: Prompt = Prompt {
    text: include_str!("../prompts/generate.txt"),
    doubled_braces: false,
};

pub const REFINE: Prompt = Prompt {
    text: include_str!("../prompts/refine.txt"),
    doubled_braces: false,
};

pub const VERIFY: Prompt = Prompt {
    text: include_str!("../prompts/verify.txt"),
    doubled_braces: true,
};

pub const AGENT: Prompt = Prompt {
    text: include_str!("../prompts/agent.txt"),
    doubled_braces: false,
};

/// Tool input schemas, one class per operator.
pub const TOOLS: &str = include_str!("../prompts/tools.txt");

impl Prompt {
    /// Single left-to-right pass: substituted values are never rescanned.
    pub fn render(&self, slots: &[(&str, &str)]) -> String {
        let text = self.text;
        let mut out = String::with_capacity(text.len() + 256);
        let mut rest = text;
        while let Some(pos) = rest.find(['{', '}']) {
            out.push_str(&rest[..pos]);
            let tail = &rest[pos..];
            if self.doubled_braces && (tail.starts_with("{{") || tail.starts_with("}}")) {
                out.push_str(&tail[..1]);
                rest = &tail[2..];
                continue;
            }
            let slot = tail.strip_prefix('{').and_then(|t| {
                slots.iter().find_map(|(name, value)| {
                    t.strip_prefix(name)
                        .and_then(|after| after.strip_prefix('}'))
                        .map(|after| (*value, after))
                })
            });
            match slot {
                Some((value, after)) => {
                    out.push_str(value);
                    rest = after;
                }
                None => {
                    out.push_str(&tail[..1]);
                    rest = &tail[1..];
                }
            }
        }
        out.push_str(rest);
        out
    }

    /// Slot names present in the template.
    pub fn slots(&self) -> Vec<&'static str> {
        let mut names = Vec::new();
        let mut rest = self.text;
        while let Some(pos) = rest.find('{') {
            let tail = &rest[pos + 1..];
            if self.doubled_braces && tail.starts_with('{') {
                rest = &tail[1..];
                continue;
            }
            let end = tail
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .unwrap_or(tail.len());
            if end > 0 && tail[end..].starts_with('}') && !names.contains(&&tail[..end]) {
                names.push(&tail[..end]);
            }
            rest = tail;
        }
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_inventory() {
        assert_eq!(
            GENERATE.slots(),
            ["transform_chain_str", "input_table_str", "target_table_str"]
        );
        assert_eq!(REFINE.slots(), ["transform_chain", "task_instruction"]);
        assert_eq!(VERIFY.slots(), ["transform_chain_str", "instruction", "intent_text"]);
        assert_eq!(AGENT.slots(), ["USER_INTENT", "SOURCETABLE"]);
    }

    #[test]
    fn values_are_not_rescanned() {
        let p = Prompt {
            text: "a {x} b {y} {{z}}",
            doubled_braces: true,
        };
        assert_eq!(p.render(&[("x", "{y}"), ("y", "Y")]), "a {y} b Y {z}");
        let raw = Prompt {
            text: "{\"k\": {x}}",
            doubled_braces: false,
        };
        assert_eq!(raw.render(&[("x", "1")]), "{\"k\": 1}");
    }
}
