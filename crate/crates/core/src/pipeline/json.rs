//! Lenient extraction of JSON from model replies.

use serde_json::{Deserializer, Value};

/// The first complete JSON object or array in `text`, ignoring any prose
/// or code fences around it.
pub fn extract_json(text: &str) -> Option<Value> {
    for (i, c) in text.char_indices() {
        if c != '{' && c != '[' {
            continue;
        }
        let mut stream = Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v)) = stream.next() {
            return Some(v);
        }
    }
    None
}

/// A JSON array from `text`. A bare comma-separated run of objects (no
/// enclosing brackets) is accepted too.
pub fn extract_array(text: &str) -> Option<Vec<Value>> {
    let start = text.find(['{', '['])?;
    if text[start..].starts_with('{') {
        if let Some(end) = text.rfind('}') {
            let wrapped = format!("[{}]", &text[start..=end]);
            if let Ok(Value::Array(items)) = serde_json::from_str(&wrapped) {
                return Some(items);
            }
        }
    }
    match extract_json(text)? {
        Value::Array(items) => Some(items),
        obj @ Value::Object(_) => Some(vec![obj]),
        _ => None,
    }
}
