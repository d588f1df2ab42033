use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Python packages generated code may import by default.
pub const DEFAULT_ALLOWED_IMPORTS: [&str; 27] = [
    "requests",
    "zipfile",
    "os",
    "pandas",
    "numpy",
    "sympy",
    "json",
    "bs4",
    "pubchempy",
    "xml",
    "yahoo_finance",
    "Bio",
    "sklearn",
    "scipy",
    "pydub",
    "io",
    "PIL",
    "chess",
    "PyPDF2",
    "pptx",
    "torch",
    "datetime",
    "csv",
    "fractions",
    "matplotlib",
    "pickle",
    "cv2",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportPolicy {
    allowed: BTreeSet<String>,
}

impl Default for ImportPolicy {
    fn default() -> Self {
        ImportPolicy::new(DEFAULT_ALLOWED_IMPORTS)
    }
}

impl ImportPolicy {
    pub fn new<I, S>(allowed: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ImportPolicy { allowed: allowed.into_iter().map(Into::into).collect() }
    }

    pub fn allowed(&self) -> impl Iterator<Item = &str> {
        self.allowed.iter().map(String::as_str)
    }

    /// A module is allowed when it, or one of its parent packages, is listed.
    pub fn allows(&self, module: &str) -> bool {
        if module.is_empty() || module.split('.').any(str::is_empty) {
            return false;
        }
        let mut prefix = String::new();
        for part in module.split('.') {
            if !prefix.is_empty() {
                prefix.push('.');
            }
            prefix.push_str(part);
            if self.allowed.contains(&prefix) {
                return true;
            }
        }
        false
    }

    /// First disallowed module imported by `code`, found by a static scan of
    /// `import`/`from` statements and literal `__import__` calls.
    pub fn first_violation(&self, code: &str) -> Option<String> {
        imported_modules(code).into_iter().find(|m| !self.allows(m))
    }
}

fn is_module_char(c: char) -> bool {
    c == '_' || c == '.' || c.is_alphanumeric()
}

/// Modules named by import statements in `code`, in order.
pub fn imported_modules(code: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in code.lines() {
        let line = line.split('#').next().unwrap_or("");
        for stmt in line.split(';') {
            let stmt = stmt.trim();
            if let Some(rest) = stmt.strip_prefix("import ") {
                for item in rest.split(',') {
                    let name = item.split_whitespace().next().unwrap_or("");
                    out.push(name.trim_matches(|c: char| c == '(' || c == ')').to_owned());
                }
            } else if let Some(rest) = stmt.strip_prefix("from ") {
                let mut words = rest.split_whitespace();
                if let (Some(module), Some("import")) = (words.next(), words.next()) {
                    // relative imports are never allowed
                    if module.starts_with('.') {
                        out.push(String::new());
                    } else {
                        out.push(module.to_owned());
                    }
                }
            }
            let mut rest = stmt;
            while let Some(pos) = rest.find("__import__(") {
                rest = &rest[pos + "__import__(".len()..];
                let arg = rest.trim_start().trim_start_matches(['"', '\'']);
                let name: String = arg.chars().take_while(|c| is_module_char(*c)).collect();
                out.push(name);
            }
        }
    }
    out
}
