use super::GeneratorError;

pub const SUMMARIZE_TEMPLATE: &str = include_str!("../../assets/prompts/summarize.txt");
/// Generation prompt used during adversarial training: own summary plus
/// neighbourhood summary.
pub const LEARNING_TEMPLATE: &str = include_str!("../../assets/prompts/learning.txt");
/// Agent prompt used by the opinion and spread simulators.
pub const SIMULATION_TEMPLATE: &str = include_str!("../../assets/prompts/simulation.txt");

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

/// Splits `template` into literal text and `{name}` slots.
fn scan(template: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if is_name(&after[..close]) => {
                out.push(Piece::Literal(&rest[..open]));
                out.push(Piece::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push(Piece::Literal(&rest[..=open]));
                rest = after;
            }
        }
    }
    out.push(Piece::Literal(rest));
    out
}

/// Distinct placeholder names in order of first appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for piece in scan(template) {
        if let Piece::Slot(name) = piece {
            if !out.iter().any(|n| n == name) {
                out.push(name.to_string());
            }
        }
    }
    out
}

/// Substitutes every placeholder in one pass; values are inserted verbatim
/// and never rescanned. Every placeholder must be given and every given
/// name must occur.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, GeneratorError> {
    let names = placeholders(template);
    if let Some((k, _)) = values.iter().find(|(k, _)| !names.iter().any(|n| n == k)) {
        return Err(GeneratorError::Template(format!("template has no placeholder {{{k}}}")));
    }
    if let Some(missing) = names.iter().find(|n| !values.iter().any(|(k, _)| k == n)) {
        return Err(GeneratorError::Template(format!("no value for {{{missing}}}")));
    }
    let mut out = String::with_capacity(template.len());
    for piece in scan(template) {
        match piece {
            Piece::Literal(s) => out.push_str(s),
            Piece::Slot(name) => {
                let v = values.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).unwrap_or_default();
                out.push_str(v);
            }
        }
    }
    Ok(out)
}
