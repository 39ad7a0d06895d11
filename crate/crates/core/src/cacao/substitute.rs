//! Placeholder substitution for command templates.

use std::collections::BTreeMap;

use thiserror::Error;

use super::Variable;

#[derive(Debug, Error, PartialEq)]
pub enum SubstituteError {
    #[error("unbound placeholder `{0}`")]
    Unbound(String),
}

/// Replaces every `__name__` placeholder in `template` with the bound
/// variable's value. Bytes outside placeholders are left untouched.
///
/// A placeholder is a `__`-delimited span whose inner text is a valid
/// variable name. Delimiters that do not form a placeholder (for example
/// `____` or `__a b__`) pass through unchanged.
pub fn substitute_variables(
    template: &str,
    bindings: &BTreeMap<String, Variable>,
) -> Result<String, SubstituteError> {
    let mut out = String::with_capacity(template.len());
    let bytes = template.as_bytes();
    let mut i = 0;

    while i < bytes.len() {
        if bytes[i] == b'_' && i + 1 < bytes.len() && bytes[i + 1] == b'_' {
            if let Some((name, end)) = scan_placeholder(template, i) {
                match bindings.get(name) {
                    Some(var) => out.push_str(&var.value),
                    None => return Err(SubstituteError::Unbound(name.to_string())),
                }
                i = end;
                continue;
            }
        }
        // Advance one UTF-8 character.
        let ch_len = template[i..].chars().next().map(char::len_utf8).unwrap_or(1);
        out.push_str(&template[i..i + ch_len]);
        i += ch_len;
    }

    Ok(out)
}

/// Tries to read a `__name__` placeholder starting at byte `start`, which
/// points at an opening `__`. Returns the placeholder (with delimiters) and
/// the byte index just past it, taking the earliest closing `__` that forms
/// a valid variable name.
fn scan_placeholder(template: &str, start: usize) -> Option<(&str, usize)> {
    let bytes = template.as_bytes();
    let mut j = start + 2;
    while j < bytes.len() {
        if bytes[j] == b'_' && j + 1 < bytes.len() && bytes[j + 1] == b'_' {
            let candidate = &template[start..j + 2];
            if super::is_variable_name(candidate) {
                return Some((candidate, j + 2));
            }
        }
        let b = bytes[j];
        if !(b.is_ascii_alphanumeric() || b == b'_' || b == b'-') {
            return None;
        }
        j += 1;
    }
    None
}
