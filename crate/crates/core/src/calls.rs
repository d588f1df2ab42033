//! Syntactic tool-call extraction from agent code.
//!
//! Works on source text only, so statistics can be computed for trajectories
//! whose code never ran. String literals and comments are skipped; a call site
//! is a bare identifier followed by `(` that is neither an attribute access nor
//! a `def`/`class` name.

#[derive(Debug, Clone, PartialEq, Eq)]
struct Ident<'a> {
    name: &'a str,
    after_dot: bool,
    after_def: bool,
    call: bool,
}

#[derive(Debug)]
struct Unterminated;

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

fn is_string_prefix(s: &str) -> bool {
    s.len() <= 2
        && !s.is_empty()
        && s.chars().all(|c| matches!(c.to_ascii_lowercase(), 'r' | 'b' | 'f' | 'u'))
}

/// Skip a string literal whose opening quote starts at `i`. Returns the index
/// just past the closing quote and, for f-strings, the `[start, end)` char
/// ranges of the replacement fields.
fn skip_string(
    chars: &[(usize, char)],
    mut i: usize,
    fstring: bool,
) -> Result<(usize, Vec<(usize, usize)>), Unterminated> {
    let quote = chars[i].1;
    let triple = i + 2 < chars.len() && chars[i + 1].1 == quote && chars[i + 2].1 == quote;
    i += if triple { 3 } else { 1 };
    let mut fields = Vec::new();
    while i < chars.len() {
        let c = chars[i].1;
        if c == '\\' {
            i += 2;
            continue;
        }
        if fstring && c == '{' {
            if chars.get(i + 1).is_some_and(|n| n.1 == '{') {
                i += 2;
                continue;
            }
            i += 1;
            let start = i;
            let mut depth = 1;
            while depth > 0 {
                let &(_, c) = chars.get(i).ok_or(Unterminated)?;
                match c {
                    '{' => depth += 1,
                    '}' => depth -= 1,
                    '\'' | '"' if c != quote => {
                        i = skip_string(chars, i, false)?.0;
                        continue;
                    }
                    '\n' if !triple => return Err(Unterminated),
                    _ => {}
                }
                i += 1;
            }
            fields.push((start, i - 1));
            continue;
        }
        if triple {
            if c == quote
                && i + 2 < chars.len()
                && chars[i + 1].1 == quote
                && chars[i + 2].1 == quote
            {
                return Ok((i + 3, fields));
            }
        } else if c == quote {
            return Ok((i + 1, fields));
        } else if c == '\n' {
            return Err(Unterminated);
        }
        i += 1;
    }
    Err(Unterminated)
}

fn lex(code: &str) -> Result<Vec<Ident<'_>>, Unterminated> {
    let chars: Vec<(usize, char)> = code.char_indices().collect();
    let mut out: Vec<Ident<'_>> = Vec::new();
    let mut last_sig: Option<char> = None;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i].1;
        if c == '#' {
            while i < chars.len() && chars[i].1 != '\n' {
                i += 1;
            }
            continue;
        }
        if c == '\'' || c == '"' {
            i = skip_string(&chars, i, false)?.0;
            last_sig = Some('"');
            continue;
        }
        if c.is_ascii_digit() {
            // numeric literal, suffixes and all (`0x1f`, `1e5`, `3j`)
            while i < chars.len() && (is_ident_continue(chars[i].1) || chars[i].1 == '.') {
                i += 1;
            }
            last_sig = Some('0');
            continue;
        }
        if is_ident_start(c) {
            let start = chars[i].0;
            let mut j = i;
            while j < chars.len() && is_ident_continue(chars[j].1) {
                j += 1;
            }
            let end = chars.get(j).map_or(code.len(), |(b, _)| *b);
            let name = &code[start..end];
            if j < chars.len() && matches!(chars[j].1, '\'' | '"') && is_string_prefix(name) {
                let (end, fields) = skip_string(&chars, j, name.contains(['f', 'F']))?;
                // replacement fields of an f-string are ordinary expressions
                for (a, b) in fields {
                    out.extend(lex(&code[chars[a].0..chars[b].0])?);
                }
                i = end;
                last_sig = Some('"');
                continue;
            }
            let mut k = j;
            while k < chars.len() && matches!(chars[k].1, ' ' | '\t') {
                k += 1;
            }
            let call = k < chars.len() && chars[k].1 == '(';
            let after_def = out
                .last()
                .is_some_and(|p| matches!(p.name, "def" | "class") && last_sig == Some('a'));
            out.push(Ident { name, after_dot: last_sig == Some('.'), after_def, call });
            last_sig = Some('a');
            i = j;
            continue;
        }
        if !c.is_whitespace() {
            last_sig = Some(c);
        }
        i += 1;
    }
    Ok(out)
}

fn identifier_scan(code: &str) -> impl Iterator<Item = &str> {
    code.split(|c: char| !is_ident_continue(c))
        .filter(|t| t.chars().next().is_some_and(is_ident_start))
}

/// Registered tool names called in `code`, in order of appearance with
/// duplicates kept. Code that cannot be lexed (an unterminated string) falls
/// back to matching every identifier token.
pub fn extract_tool_calls<S: AsRef<str>>(code: &str, registry: &[S]) -> Vec<String> {
    let registered = |name: &str| registry.iter().any(|r| r.as_ref() == name);
    match lex(code) {
        Ok(idents) => idents
            .into_iter()
            .filter(|t| t.call && !t.after_dot && !t.after_def && registered(t.name))
            .map(|t| t.name.to_owned())
            .collect(),
        Err(Unterminated) => identifier_scan(code)
            .filter(|t| registered(t))
            .map(str::to_owned)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REG: [&str; 3] = ["objectlocation", "image_qa", "final_answer"];

    #[test]
    fn order_preserved() {
        let code = "boxes = objectlocation(image='a.png', object='dog')\nprint(image_qa(image='a.png', question='color?'))";
        assert_eq!(extract_tool_calls(code, &REG), vec!["objectlocation", "image_qa"]);
    }

    #[test]
    fn string_literal_is_not_a_call() {
        assert!(extract_tool_calls("print('image_qa(x)')", &REG).is_empty());
        assert!(extract_tool_calls("s = \"\"\"\nobjectlocation(a)\n\"\"\"", &REG).is_empty());
        assert!(extract_tool_calls("x = f'image_qa({q})'", &REG).is_empty());
    }

    #[test]
    fn empty_code() {
        assert!(extract_tool_calls("", &REG).is_empty());
    }

    #[test]
    fn duplicates_kept_and_methods_skipped() {
        let code = "a = image_qa(q=1)\nb = image_qa (q=2)\nobj.final_answer(3)\ndef objectlocation(x): pass";
        assert_eq!(extract_tool_calls(code, &REG), vec!["image_qa", "image_qa"]);
    }

    #[test]
    fn comments_ignored() {
        assert!(extract_tool_calls("# final_answer(1)\n", &REG).is_empty());
    }

    #[test]
    fn unterminated_string_falls_back_to_token_scan() {
        let code = "x = image_qa(q='unclosed)\nfinal_answer";
        assert_eq!(extract_tool_calls(code, &REG), vec!["image_qa", "final_answer"]);
    }

    #[test]
    fn fstring_fields_are_code() {
        assert_eq!(extract_tool_calls("x = f'{image_qa(q)}'", &REG), vec!["image_qa"]);
        assert_eq!(extract_tool_calls("x = f\"{{image_qa(q)}} {final_answer(f'{y}')}\"", &REG), vec!["final_answer"]);
        assert!(extract_tool_calls("x = f'{image_qa}'", &REG).is_empty());
    }

    #[test]
    fn numeric_literals_swallow_their_suffix() {
        assert!(extract_tool_calls("x = 0image_qa(1)", &REG).is_empty());
        assert_eq!(extract_tool_calls("y = 1e5 + image_qa(2)", &REG), vec!["image_qa"]);
    }
}
