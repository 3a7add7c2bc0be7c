//! Named prompt sections loaded from the bundled template file.
//!
//! The file is a sequence of `[[section.name]]` headers, each followed by the
//! section body up to the next header. Bodies may contain `{slot}` markers
//! that the renderer substitutes in a single pass, so braces inside
//! substituted values are never re-interpreted.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::ComposeError;

const TEMPLATE_SOURCE: &str = include_str!("../../templates/contrastive.txt");

static REGISTRY: OnceLock<HashMap<String, String>> = OnceLock::new();

fn registry() -> &'static HashMap<String, String> {
    REGISTRY.get_or_init(|| parse_sections(TEMPLATE_SOURCE))
}

fn parse_sections(source: &str) -> HashMap<String, String> {
    let mut sections = HashMap::new();
    let mut name: Option<&str> = None;
    let mut body: Vec<&str> = Vec::new();
    let mut flush = |name: Option<&str>, body: &mut Vec<&str>| {
        if let Some(name) = name {
            let text = body.join("\n");
            sections.insert(name.to_string(), text.trim_end_matches('\n').to_string());
        }
        body.clear();
    };
    for line in source.lines() {
        match line.strip_prefix("[[").and_then(|rest| rest.strip_suffix("]]")) {
            Some(header) => {
                flush(name, &mut body);
                name = Some(header);
            }
            None => body.push(line),
        }
    }
    flush(name, &mut body);
    sections
}

/// Looks up a template section by name.
pub fn section(name: &str) -> Result<&'static str, ComposeError> {
    registry()
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| ComposeError::Template(format!("missing template section {name:?}")))
}

/// Substitutes every `{slot}` in `template` from `slots`. Slot names are
/// lowercase identifiers; any other braced text passes through literally.
/// A slot name without a binding is a template error.
pub fn render(template: &str, slots: &[(&str, &str)]) -> Result<String, ComposeError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_slot_name(&after[..close]) => {
                let name = &after[..close];
                let value = slots
                    .iter()
                    .find(|(key, _)| *key == name)
                    .map(|(_, value)| *value)
                    .ok_or_else(|| ComposeError::Template(format!("unbound slot {{{name}}}")))?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn is_slot_name(text: &str) -> bool {
    !text.is_empty() && text.chars().all(|c| c.is_ascii_lowercase() || c == '_')
}
