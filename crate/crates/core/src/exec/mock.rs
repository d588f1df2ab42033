//! In-process executor for tests and offline replay.
//!
//! Interprets a small, deterministic subset of Python: imports (checked
//! against the allowlist), assignments, `print`, literals and f-strings,
//! arithmetic, tool calls with positional or keyword arguments, `raise`,
//! and `open(path, "w").write(...)` / `with open(...) as f:` file writes.
//! Other compound statements (`def`, `for`, `if`, ...) are skipped with their
//! bodies. Variables persist across `execute` calls on the same session.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value as Json};

use super::protocol::{ExecErrorInfo, ExecResult};
use super::{
    list_files, next_session_id, ExecError, ExecOutcome, ImportPolicy, Session, SessionFactory, Workdir,
    POLICY_VIOLATION,
};
use crate::tools::{ToolContext, ToolError, ToolHost, ToolOutput};

/// Keyword arguments in call order.
type Kwargs = Vec<(String, Value)>;

#[derive(Debug, Clone, PartialEq)]
enum Value {
    None,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    List(Vec<Value>),
    File(PathBuf),
    Builtin(&'static str),
    Tool(String),
    Method(Box<Value>, String),
}

const BUILTINS: [&str; 8] = ["print", "str", "len", "int", "float", "open", "round", "repr"];

fn py_float(f: f64) -> String {
    if f.is_finite() && f.fract() == 0.0 && f.abs() < 1e16 {
        format!("{f:.1}")
    } else if f.is_nan() {
        "nan".into()
    } else if f.is_infinite() {
        if f > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{f:?}")
    }
}

fn py_repr_str(s: &str) -> String {
    let mut out = String::from("'");
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

impl Value {
    fn type_name(&self) -> &'static str {
        match self {
            Value::None => "NoneType",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "str",
            Value::List(_) => "list",
            Value::File(_) => "TextIOWrapper",
            Value::Builtin(_) | Value::Tool(_) => "function",
            Value::Method(..) => "method",
        }
    }

    fn to_str(&self) -> String {
        match self {
            Value::Str(s) => s.clone(),
            other => other.repr(),
        }
    }

    fn repr(&self) -> String {
        match self {
            Value::None => "None".into(),
            Value::Bool(true) => "True".into(),
            Value::Bool(false) => "False".into(),
            Value::Int(i) => i.to_string(),
            Value::Float(f) => py_float(*f),
            Value::Str(s) => py_repr_str(s),
            Value::List(items) => {
                format!("[{}]", items.iter().map(Value::repr).collect::<Vec<_>>().join(", "))
            }
            Value::File(p) => format!("<_io.TextIOWrapper name='{}'>", p.display()),
            Value::Builtin(n) => format!("<built-in function {n}>"),
            Value::Tool(n) => format!("<function {n}>"),
            Value::Method(_, n) => format!("<method {n}>"),
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Value::None => Json::Null,
            Value::Bool(b) => Json::Bool(*b),
            Value::Int(i) => Json::from(*i),
            Value::Float(f) => serde_json::Number::from_f64(*f).map_or(Json::Null, Json::Number),
            Value::Str(s) => Json::String(s.clone()),
            Value::List(items) => Json::Array(items.iter().map(Value::to_json).collect()),
            other => Json::String(other.to_str()),
        }
    }
}

/// A Python exception raised inside the mock.
#[derive(Debug)]
struct Raise {
    kind: String,
    message: String,
}

fn raise(kind: &str, message: impl Into<String>) -> Raise {
    Raise { kind: kind.into(), message: message.into() }
}

enum Flow {
    Raise(Raise),
    Final(String),
}

impl From<Raise> for Flow {
    fn from(r: Raise) -> Self {
        Flow::Raise(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Str { text: String, fmt: bool },
    Int(i64),
    Float(f64),
    Ident(String),
    Op(&'static str),
}

const OPS: [&str; 19] = [
    "==", "!=", "+=", "-=", "*=", "<=", ">=", "(", ")", "[", "]", ",", "=", "+", "-", "*", "/", ".", ":",
];

fn unescape(raw: &str) -> String {
    let mut out = String::new();
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some('\'') => out.push('\''),
            Some('"') => out.push('"'),
            Some('\n') => {}
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Returns the literal body and the index just past the closing quote.
fn scan_string(chars: &[char], start: usize) -> Result<(String, usize), Raise> {
    let q = chars[start];
    let triple = chars.get(start + 1) == Some(&q) && chars.get(start + 2) == Some(&q);
    let mut i = start + if triple { 3 } else { 1 };
    let body_start = i;
    while i < chars.len() {
        let c = chars[i];
        if c == '\\' {
            i += 2;
            continue;
        }
        if c == q && (!triple || (chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q))) {
            let body: String = chars[body_start..i].iter().collect();
            return Ok((body, i + if triple { 3 } else { 1 }));
        }
        if c == '\n' && !triple {
            break;
        }
        i += 1;
    }
    Err(raise("SyntaxError", "unterminated string literal"))
}

fn tokenize(src: &str) -> Result<Vec<Tok>, Raise> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        if c == '"' || c == '\'' {
            let (body, next) = scan_string(&chars, i)?;
            toks.push(Tok::Str { text: unescape(&body), fmt: false });
            i = next;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.' || chars[i] == '_') {
                i += 1;
            }
            let lit: String = chars[start..i].iter().filter(|c| **c != '_').collect();
            if let Ok(n) = lit.parse::<i64>() {
                toks.push(Tok::Int(n));
            } else if let Ok(f) = lit.parse::<f64>() {
                toks.push(Tok::Float(f));
            } else {
                return Err(raise("SyntaxError", format!("invalid number literal `{lit}`")));
            }
            continue;
        }
        if c == '_' || c.is_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i] == '_' || chars[i].is_alphanumeric()) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            let is_prefix = word.len() <= 2 && word.chars().all(|c| "rRbBfFuU".contains(c));
            if is_prefix && matches!(chars.get(i), Some('"') | Some('\'')) {
                let (body, next) = scan_string(&chars, i)?;
                let raw = word.contains(['r', 'R']);
                let text = if raw { body } else { unescape(&body) };
                toks.push(Tok::Str { text, fmt: word.contains(['f', 'F']) });
                i = next;
                continue;
            }
            toks.push(Tok::Ident(word));
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let op = OPS
            .iter()
            .find(|op| rest.starts_with(**op))
            .ok_or_else(|| raise("NotImplementedError", format!("mock executor cannot parse `{c}`")))?;
        toks.push(Tok::Op(op));
        i += op.len();
    }
    Ok(toks)
}

/// Split source into logical lines `(indent, text, line_number)`, joining
/// bracketed continuations and multi-line strings.
fn logical_lines(code: &str) -> Vec<(usize, String, usize)> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut depth = 0i32;
    let mut quote: Option<(char, bool)> = None;
    let mut start_line = 1;
    let mut line_no = 1;
    let chars: Vec<char> = code.chars().collect();
    let mut i = 0;
    let flush = |cur: &mut String, start_line: usize, out: &mut Vec<(usize, String, usize)>| {
        if !cur.trim().is_empty() {
            let indent = cur.chars().take_while(|c| *c == ' ' || *c == '\t').count();
            out.push((indent, cur.trim().to_owned(), start_line));
        }
        cur.clear();
    };
    while i < chars.len() {
        let c = chars[i];
        if cur.trim().is_empty() && quote.is_none() && depth == 0 {
            start_line = line_no;
        }
        match quote {
            Some((q, triple)) => {
                cur.push(c);
                if c == '\\' && i + 1 < chars.len() {
                    cur.push(chars[i + 1]);
                    if chars[i + 1] == '\n' {
                        line_no += 1;
                    }
                    i += 2;
                    continue;
                }
                if c == '\n' {
                    line_no += 1;
                }
                if c == q {
                    if !triple {
                        quote = None;
                    } else if chars.get(i + 1) == Some(&q) && chars.get(i + 2) == Some(&q) {
                        cur.push(q);
                        cur.push(q);
                        i += 2;
                        quote = None;
                    }
                } else if c == '\n' && !triple {
                    quote = None;
                }
            }
            None => match c {
                '#' => {
                    while i + 1 < chars.len() && chars[i + 1] != '\n' {
                        i += 1;
                    }
                }
                '"' | '\'' => {
                    let triple = chars.get(i + 1) == Some(&c) && chars.get(i + 2) == Some(&c);
                    cur.push(c);
                    if triple {
                        cur.push(c);
                        cur.push(c);
                        i += 2;
                    }
                    quote = Some((c, triple));
                }
                '(' | '[' | '{' => {
                    depth += 1;
                    cur.push(c);
                }
                ')' | ']' | '}' => {
                    depth -= 1;
                    cur.push(c);
                }
                '\\' if chars.get(i + 1) == Some(&'\n') => {
                    cur.push(' ');
                    line_no += 1;
                    i += 1;
                }
                '\n' => {
                    line_no += 1;
                    if depth <= 0 {
                        depth = 0;
                        flush(&mut cur, start_line, &mut out);
                    } else {
                        cur.push(' ');
                    }
                }
                ';' if depth == 0 => {
                    let indent = cur.chars().take_while(|c| *c == ' ' || *c == '\t').count();
                    flush(&mut cur, start_line, &mut out);
                    cur.push_str(&" ".repeat(indent));
                }
                c => cur.push(c),
            },
        }
        i += 1;
    }
    flush(&mut cur, start_line, &mut out);
    out
}

struct Interp<'a> {
    vars: &'a mut HashMap<String, Value>,
    stdout: String,
    tools: &'a dyn ToolHost,
    ctx: ToolContext,
    final_answer: Option<String>,
}

struct Parser<'t> {
    toks: &'t [Tok],
    pos: usize,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, op: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Op(o)) if *o == op) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: &str) -> Result<(), Raise> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(raise("SyntaxError", format!("expected `{op}`")))
        }
    }

    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

impl Interp<'_> {
    fn lookup(&self, name: &str) -> Result<Value, Raise> {
        if let Some(v) = self.vars.get(name) {
            return Ok(v.clone());
        }
        match name {
            "None" => return Ok(Value::None),
            "True" => return Ok(Value::Bool(true)),
            "False" => return Ok(Value::Bool(false)),
            _ => {}
        }
        if self.tools.registry().contains(name) {
            return Ok(Value::Tool(name.to_owned()));
        }
        if let Some(b) = BUILTINS.iter().find(|b| **b == name) {
            return Ok(Value::Builtin(b));
        }
        Err(raise("NameError", format!("name '{name}' is not defined")))
    }

    fn expr(&mut self, p: &mut Parser<'_>) -> Result<Value, Flow> {
        let mut lhs = self.term(p)?;
        loop {
            let op = if p.eat("+") {
                "+"
            } else if p.eat("-") {
                "-"
            } else {
                return Ok(lhs);
            };
            let rhs = self.term(p)?;
            lhs = binop(op, lhs, rhs)?;
        }
    }

    fn term(&mut self, p: &mut Parser<'_>) -> Result<Value, Flow> {
        let mut lhs = self.unary(p)?;
        loop {
            let op = if p.eat("*") {
                "*"
            } else if p.eat("/") {
                "/"
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary(p)?;
            lhs = binop(op, lhs, rhs)?;
        }
    }

    fn unary(&mut self, p: &mut Parser<'_>) -> Result<Value, Flow> {
        if p.eat("-") {
            return Ok(match self.unary(p)? {
                Value::Int(i) => Value::Int(-i),
                Value::Float(f) => Value::Float(-f),
                other => {
                    return Err(raise("TypeError", format!("bad operand type for unary -: '{}'", other.type_name())).into())
                }
            });
        }
        self.postfix(p)
    }

    fn postfix(&mut self, p: &mut Parser<'_>) -> Result<Value, Flow> {
        let mut v = self.primary(p)?;
        loop {
            if p.eat("(") {
                let (pos, kw) = self.args(p)?;
                v = self.call(v, pos, kw)?;
            } else if p.eat(".") {
                match p.peek() {
                    Some(Tok::Ident(name)) => {
                        p.pos += 1;
                        v = Value::Method(Box::new(v), name.clone());
                    }
                    _ => return Err(raise("SyntaxError", "expected attribute name").into()),
                }
            } else if p.eat("[") {
                let idx = self.expr(p)?;
                p.expect("]")?;
                v = index(&v, &idx)?;
            } else {
                return Ok(v);
            }
        }
    }

    fn args(&mut self, p: &mut Parser<'_>) -> Result<(Vec<Value>, Kwargs), Flow> {
        let mut pos = Vec::new();
        let mut kw = Vec::new();
        while !p.eat(")") {
            if let (Some(Tok::Ident(name)), Some(Tok::Op("="))) = (p.toks.get(p.pos), p.toks.get(p.pos + 1)) {
                p.pos += 2;
                kw.push((name.clone(), self.expr(p)?));
            } else {
                if !kw.is_empty() {
                    return Err(raise("SyntaxError", "positional argument follows keyword argument").into());
                }
                pos.push(self.expr(p)?);
            }
            if !p.eat(",") {
                p.expect(")")?;
                break;
            }
        }
        Ok((pos, kw))
    }

    fn primary(&mut self, p: &mut Parser<'_>) -> Result<Value, Flow> {
        let tok = p.peek().cloned().ok_or_else(|| raise("SyntaxError", "unexpected end of expression"))?;
        p.pos += 1;
        Ok(match tok {
            Tok::Int(i) => Value::Int(i),
            Tok::Float(f) => Value::Float(f),
            Tok::Str { text, fmt } => {
                let mut s = if fmt { self.format(&text)? } else { text };
                // implicit concatenation of adjacent literals
                while let Some(Tok::Str { text, fmt }) = p.peek().cloned() {
                    p.pos += 1;
                    s.push_str(&if fmt { self.format(&text)? } else { text });
                }
                Value::Str(s)
            }
            Tok::Ident(name) => self.lookup(&name)?,
            Tok::Op("(") => {
                let v = self.expr(p)?;
                p.expect(")")?;
                v
            }
            Tok::Op("[") => {
                let mut items = Vec::new();
                while !p.eat("]") {
                    items.push(self.expr(p)?);
                    if !p.eat(",") {
                        p.expect("]")?;
                        break;
                    }
                }
                Value::List(items)
            }
            Tok::Op(op) => return Err(raise("SyntaxError", format!("unexpected `{op}`")).into()),
        })
    }

    fn format(&mut self, template: &str) -> Result<String, Flow> {
        let mut out = String::new();
        let mut rest = template;
        while let Some(pos) = rest.find(['{', '}']) {
            out.push_str(&rest[..pos]);
            let c = rest.as_bytes()[pos];
            if rest[pos + 1..].starts_with(c as char) {
                out.push(c as char);
                rest = &rest[pos + 2..];
                continue;
            }
            if c == b'}' {
                return Err(raise("SyntaxError", "f-string: single '}' is not allowed").into());
            }
            let close = rest[pos..]
                .find('}')
                .ok_or_else(|| raise("SyntaxError", "f-string: expecting '}'"))?;
            let inner = &rest[pos + 1..pos + close];
            let (inner, conv) = match inner.find("!r") {
                Some(i) => (&inner[..i], true),
                None => (inner.split(':').next().unwrap_or(inner), false),
            };
            let toks = tokenize(inner)?;
            let mut sub = Parser { toks: &toks, pos: 0 };
            let v = self.expr(&mut sub)?;
            out.push_str(&if conv { v.repr() } else { v.to_str() });
            rest = &rest[pos + close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }

    fn call(&mut self, callee: Value, pos: Vec<Value>, kw: Kwargs) -> Result<Value, Flow> {
        match callee {
            Value::Tool(name) => self.call_tool(&name, pos, kw),
            Value::Builtin(name) => self.call_builtin(name, pos, kw),
            Value::Method(recv, method) => match (*recv, method.as_str()) {
                (Value::File(path), "write") => {
                    let text = pos.first().map(Value::to_str).unwrap_or_default();
                    use std::io::Write;
                    let mut f = std::fs::OpenOptions::new()
                        .append(true)
                        .open(&path)
                        .map_err(|e| raise("OSError", e.to_string()))?;
                    f.write_all(text.as_bytes()).map_err(|e| raise("OSError", e.to_string()))?;
                    Ok(Value::Int(text.chars().count() as i64))
                }
                (Value::File(_), "close") => Ok(Value::None),
                (Value::Str(s), "strip") => Ok(Value::Str(s.trim().to_owned())),
                (Value::Str(s), "upper") => Ok(Value::Str(s.to_uppercase())),
                (Value::Str(s), "lower") => Ok(Value::Str(s.to_lowercase())),
                (Value::List(mut items), "append") => {
                    items.extend(pos);
                    Ok(Value::None)
                }
                (recv, m) => Err(raise(
                    "NotImplementedError",
                    format!("mock executor does not support '{}.{m}'", recv.type_name()),
                )
                .into()),
            },
            other => Err(raise("TypeError", format!("'{}' object is not callable", other.type_name())).into()),
        }
    }

    fn call_builtin(&mut self, name: &str, pos: Vec<Value>, kw: Kwargs) -> Result<Value, Flow> {
        let arg0 = || pos.first().cloned().ok_or_else(|| raise("TypeError", format!("{name}() missing argument")));
        match name {
            "print" => {
                let mut sep = " ".to_owned();
                let mut end = "\n".to_owned();
                for (k, v) in &kw {
                    match k.as_str() {
                        "sep" => sep = v.to_str(),
                        "end" => end = v.to_str(),
                        _ => {}
                    }
                }
                let line = pos.iter().map(Value::to_str).collect::<Vec<_>>().join(&sep);
                self.stdout.push_str(&line);
                self.stdout.push_str(&end);
                Ok(Value::None)
            }
            "str" => Ok(Value::Str(pos.first().map(Value::to_str).unwrap_or_default())),
            "repr" => Ok(Value::Str(arg0()?.repr())),
            "len" => match arg0()? {
                Value::Str(s) => Ok(Value::Int(s.chars().count() as i64)),
                Value::List(l) => Ok(Value::Int(l.len() as i64)),
                other => Err(raise("TypeError", format!("object of type '{}' has no len()", other.type_name())).into()),
            },
            "int" => match arg0()? {
                Value::Int(i) => Ok(Value::Int(i)),
                Value::Float(f) => Ok(Value::Int(f.trunc() as i64)),
                Value::Bool(b) => Ok(Value::Int(b as i64)),
                Value::Str(s) => s
                    .trim()
                    .parse()
                    .map(Value::Int)
                    .map_err(|_| raise("ValueError", format!("invalid literal for int() with base 10: {}", py_repr_str(&s))).into()),
                other => Err(raise("TypeError", format!("int() argument must be a string or a number, not '{}'", other.type_name())).into()),
            },
            "float" => match arg0()? {
                Value::Int(i) => Ok(Value::Float(i as f64)),
                Value::Float(f) => Ok(Value::Float(f)),
                Value::Str(s) => s
                    .trim()
                    .parse()
                    .map(Value::Float)
                    .map_err(|_| raise("ValueError", format!("could not convert string to float: {}", py_repr_str(&s))).into()),
                other => Err(raise("TypeError", format!("float() argument must be a string or a number, not '{}'", other.type_name())).into()),
            },
            "round" => {
                let digits = match pos.get(1) {
                    Some(Value::Int(d)) => Some(*d),
                    _ => None,
                };
                match (arg0()?, digits) {
                    (Value::Int(i), _) => Ok(Value::Int(i)),
                    (Value::Float(f), None) => Ok(Value::Int(f.round() as i64)),
                    (Value::Float(f), Some(d)) => {
                        let m = 10f64.powi(d as i32);
                        Ok(Value::Float((f * m).round() / m))
                    }
                    (other, _) => Err(raise("TypeError", format!("type {} doesn't define __round__", other.type_name())).into()),
                }
            }
            "open" => {
                let path = match arg0()? {
                    Value::Str(s) => s,
                    other => return Err(raise("TypeError", format!("expected str path, not {}", other.type_name())).into()),
                };
                let mode = pos
                    .get(1)
                    .cloned()
                    .or_else(|| kw.iter().find(|(k, _)| k == "mode").map(|(_, v)| v.clone()))
                    .map(|v| v.to_str())
                    .unwrap_or_else(|| "r".into());
                let full = self.ctx.resolve(&path);
                if mode.contains('w') || mode.contains('a') {
                    if let Some(parent) = full.parent() {
                        std::fs::create_dir_all(parent).map_err(|e| raise("OSError", e.to_string()))?;
                    }
                    let mut opts = std::fs::OpenOptions::new();
                    opts.create(true).write(true);
                    if mode.contains('w') {
                        opts.truncate(true);
                    } else {
                        opts.append(true);
                    }
                    opts.open(&full).map_err(|e| raise("OSError", e.to_string()))?;
                } else if !full.exists() {
                    return Err(raise(
                        "FileNotFoundError",
                        format!("[Errno 2] No such file or directory: {}", py_repr_str(&path)),
                    )
                    .into());
                }
                Ok(Value::File(full))
            }
            _ => Err(raise("NameError", format!("name '{name}' is not defined")).into()),
        }
    }

    fn call_tool(&mut self, name: &str, pos: Vec<Value>, kw: Kwargs) -> Result<Value, Flow> {
        let keyword: Map<String, Json> = kw.into_iter().map(|(k, v)| (k, v.to_json())).collect();
        let positional = pos.iter().map(Value::to_json).collect();
        let args = self
            .tools
            .registry()
            .bind_args(name, positional, keyword)
            .map_err(|e| raise("TypeError", e.to_string()))?;
        match self.tools.call(name, &args, &self.ctx) {
            Ok(ToolOutput::FinalAnswer(answer)) => Err(Flow::Final(answer)),
            Ok(out) => Ok(Value::Str(out.as_return_text().to_owned())),
            Err(e @ ToolError::ArgMismatch { .. }) => Err(raise("TypeError", e.to_string()).into()),
            Err(e) => Err(raise("ToolError", e.to_string()).into()),
        }
    }

    fn statement(&mut self, text: &str) -> Result<(), Flow> {
        let toks = tokenize(text)?;
        let Some(first) = toks.first() else { return Ok(()) };
        if let Tok::Ident(word) = first {
            match word.as_str() {
                "import" | "from" | "pass" | "return" | "break" | "continue" | "global" | "nonlocal" | "del" | "assert" => {
                    return Ok(())
                }
                "raise" => {
                    let mut p = Parser { toks: &toks[1..], pos: 0 };
                    if p.done() {
                        return Err(raise("RuntimeError", "No active exception to reraise").into());
                    }
                    let kind = match p.peek() {
                        Some(Tok::Ident(k)) => k.clone(),
                        _ => return Err(raise("TypeError", "exceptions must derive from BaseException").into()),
                    };
                    p.pos += 1;
                    let mut message = String::new();
                    if p.eat("(") {
                        let (pos, _) = self.args(&mut p)?;
                        message = pos.first().map(Value::to_str).unwrap_or_default();
                    }
                    return Err(raise(&kind, message).into());
                }
                _ => {}
            }
        }
        // assignment / augmented assignment to a plain name
        if let (Tok::Ident(name), Some(Tok::Op(op))) = (first, toks.get(1)) {
            if matches!(*op, "=" | "+=" | "-=" | "*=") {
                let mut p = Parser { toks: &toks[2..], pos: 0 };
                let rhs = self.expr(&mut p)?;
                if !p.done() {
                    return Err(raise("NotImplementedError", format!("mock executor cannot evaluate `{text}`")).into());
                }
                let value = match *op {
                    "=" => rhs,
                    aug => binop(&aug[..1], self.lookup(name)?, rhs)?,
                };
                self.vars.insert(name.clone(), value);
                return Ok(());
            }
        }
        let mut p = Parser { toks: &toks, pos: 0 };
        self.expr(&mut p)?;
        if !p.done() {
            return Err(raise("NotImplementedError", format!("mock executor cannot evaluate `{text}`")).into());
        }
        Ok(())
    }

    fn run(&mut self, code: &str) -> Result<(), (Flow, usize)> {
        let lines = logical_lines(code);
        let base = lines.first().map_or(0, |l| l.0);
        let mut skip_deeper_than: Option<usize> = None;
        let mut with_block: Option<usize> = None;
        for (indent, text, line_no) in &lines {
            let indent = indent.saturating_sub(base);
            if let Some(level) = skip_deeper_than {
                if indent > level {
                    continue;
                }
                skip_deeper_than = None;
            }
            if let Some(level) = with_block {
                if indent <= level {
                    with_block = None;
                }
            }
            let at = |f: Flow| (f, *line_no);
            if let Some(header) = text.strip_suffix(':') {
                if let Some(rest) = header.strip_prefix("with ") {
                    let (expr, target) = rest.rsplit_once(" as ").ok_or_else(|| {
                        at(raise("NotImplementedError", "mock executor supports only `with ... as name:`").into())
                    })?;
                    self.statement(&format!("{} = {}", target.trim(), expr.trim())).map_err(at)?;
                    with_block = Some(indent);
                } else {
                    skip_deeper_than = Some(indent);
                }
                continue;
            }
            self.statement(text).map_err(at)?;
        }
        Ok(())
    }
}

fn binop(op: &str, lhs: Value, rhs: Value) -> Result<Value, Raise> {
    use Value::*;
    let unsupported = |l: &Value, r: &Value| {
        raise(
            "TypeError",
            format!("unsupported operand type(s) for {op}: '{}' and '{}'", l.type_name(), r.type_name()),
        )
    };
    Ok(match (op, &lhs, &rhs) {
        ("+", Str(a), Str(b)) => Str(format!("{a}{b}")),
        ("+", List(a), List(b)) => List(a.iter().chain(b).cloned().collect()),
        ("*", Str(s), Int(n)) | ("*", Int(n), Str(s)) => Str(s.repeat((*n).max(0) as usize)),
        (_, Int(a), Int(b)) => match op {
            "+" => a.checked_add(*b).map(Int).ok_or_else(|| raise("OverflowError", "integer overflow"))?,
            "-" => a.checked_sub(*b).map(Int).ok_or_else(|| raise("OverflowError", "integer overflow"))?,
            "*" => a.checked_mul(*b).map(Int).ok_or_else(|| raise("OverflowError", "integer overflow"))?,
            _ => {
                if *b == 0 {
                    return Err(raise("ZeroDivisionError", "division by zero"));
                }
                Float(*a as f64 / *b as f64)
            }
        },
        (_, Int(_) | Float(_), Int(_) | Float(_)) => {
            let a = if let Int(i) = lhs { i as f64 } else if let Float(f) = lhs { f } else { unreachable!() };
            let b = if let Int(i) = rhs { i as f64 } else if let Float(f) = rhs { f } else { unreachable!() };
            match op {
                "+" => Float(a + b),
                "-" => Float(a - b),
                "*" => Float(a * b),
                _ => {
                    if b == 0.0 {
                        return Err(raise("ZeroDivisionError", "float division by zero"));
                    }
                    Float(a / b)
                }
            }
        }
        _ => return Err(unsupported(&lhs, &rhs)),
    })
}

fn index(v: &Value, idx: &Value) -> Result<Value, Raise> {
    let Value::Int(i) = idx else {
        return Err(raise("TypeError", "indices must be integers"));
    };
    let pick = |len: usize| -> Result<usize, Raise> {
        let j = if *i < 0 { len as i64 + i } else { *i };
        if j < 0 || j as usize >= len {
            Err(raise("IndexError", "index out of range"))
        } else {
            Ok(j as usize)
        }
    };
    match v {
        Value::List(items) => Ok(items[pick(items.len())?].clone()),
        Value::Str(s) => {
            let chars: Vec<char> = s.chars().collect();
            Ok(Value::Str(chars[pick(chars.len())?].to_string()))
        }
        other => Err(raise("TypeError", format!("'{}' object is not subscriptable", other.type_name()))),
    }
}

/// In-process session; see the module docs for the supported subset.
pub struct MockSession {
    id: String,
    workdir: Workdir,
    policy: ImportPolicy,
    vars: HashMap<String, Value>,
    next_request: u64,
}

impl MockSession {
    pub fn open(policy: ImportPolicy, workdir_root: Option<&Path>) -> Result<Self, ExecError> {
        let id = next_session_id("mock");
        let workdir = Workdir::create(workdir_root, &id)?;
        Ok(MockSession { id, workdir, policy, vars: HashMap::new(), next_request: 0 })
    }
}

impl Session for MockSession {
    fn id(&self) -> &str {
        &self.id
    }

    fn workdir(&self) -> &Path {
        self.workdir.path()
    }

    fn execute(&mut self, code: &str, tools: &dyn ToolHost) -> Result<ExecOutcome, ExecError> {
        self.next_request += 1;
        let id = format!("r{}", self.next_request);
        if let Some(module) = self.policy.first_violation(code) {
            let result = ExecResult {
                id,
                error: Some(ExecErrorInfo::new(POLICY_VIOLATION, format!("import of `{module}` is not allowed"))),
                ..Default::default()
            };
            return Ok(ExecOutcome { result, final_answer: None });
        }
        let before = list_files(self.workdir.path());
        let mut interp = Interp {
            vars: &mut self.vars,
            stdout: String::new(),
            tools,
            ctx: ToolContext::new(self.workdir.path()),
            final_answer: None,
        };
        let error = match interp.run(code) {
            Ok(()) => None,
            Err((Flow::Final(answer), _)) => {
                interp.final_answer = Some(answer);
                None
            }
            Err((Flow::Raise(r), line)) => Some(ExecErrorInfo {
                trace: format!("Traceback (most recent call last):\n  line {line}\n{}: {}", r.kind, r.message),
                kind: r.kind,
                message: r.message,
            }),
        };
        let stdout = std::mem::take(&mut interp.stdout);
        let final_answer = interp.final_answer.take();
        let after = list_files(self.workdir.path());
        let result = ExecResult {
            id,
            stdout,
            error,
            files_created: after.difference(&before).cloned().collect(),
            duration_ms: 0,
            state_reset: false,
        };
        Ok(ExecOutcome { result, final_answer })
    }
}

#[derive(Debug, Clone, Default)]
pub struct MockFactory {
    pub policy: ImportPolicy,
    pub workdir_root: Option<PathBuf>,
}

impl MockFactory {
    pub fn new(policy: ImportPolicy) -> Self {
        MockFactory { policy, workdir_root: None }
    }
}

impl SessionFactory for MockFactory {
    fn open(&self) -> Result<Box<dyn Session>, ExecError> {
        Ok(Box::new(MockSession::open(self.policy.clone(), self.workdir_root.as_deref())?))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::{Gateway, ScriptedProvider};
    use crate::tools::{ToolRegistry, Toolset};

    fn toolset() -> Toolset {
        let gw = Gateway::live(Arc::new(ScriptedProvider::new("s", |_| Ok("tool says hi".into()))));
        Toolset::new(ToolRegistry::standard(), Arc::new(gw))
    }

    fn session() -> MockSession {
        MockSession::open(ImportPolicy::default(), None).unwrap()
    }

    fn run(s: &mut MockSession, code: &str) -> ExecOutcome {
        s.execute(code, &toolset()).unwrap()
    }

    #[test]
    fn state_persists_between_calls() {
        let mut s = session();
        assert!(run(&mut s, "x=41").result.ok());
        assert_eq!(run(&mut s, "print(x+1)").result.stdout, "42\n");
    }

    #[test]
    fn sessions_are_isolated() {
        let mut a = session();
        let mut b = session();
        run(&mut a, "x = 1");
        let out = run(&mut b, "print(x)");
        assert_eq!(out.result.error.unwrap().kind, "NameError");
        assert_ne!(a.workdir(), b.workdir());
    }

    #[test]
    fn print_and_literals() {
        let mut s = session();
        let out = run(&mut s, "print('hi')\nprint(1, 2.5, [1, 'a'], None, True, sep=',')\nprint(7 / 2, 2 * 3.0)");
        assert_eq!(out.result.stdout, "hi\n1,2.5,[1, 'a'],None,True\n3.5 6.0\n");
        assert!(out.result.error.is_none());
    }

    #[test]
    fn f_strings_and_concat() {
        let mut s = session();
        let out = run(&mut s, "n = 3\nname = 'bob'\nprint(f\"{name} has {n + 1} cats, {name!r}\")\nprint('a' 'b' + \"c\")");
        assert_eq!(out.result.stdout, "bob has 4 cats, 'bob'\nabc\n");
    }

    #[test]
    fn disallowed_import_is_policy_violation_and_keeps_state() {
        let mut s = session();
        run(&mut s, "y = 5");
        let out = run(&mut s, "import socket");
        assert_eq!(out.result.error.unwrap().kind, POLICY_VIOLATION);
        assert_eq!(run(&mut s, "print(y)").result.stdout, "5\n");
    }

    #[test]
    fn raise_stops_execution_keeps_prior_output() {
        let mut s = session();
        let out = run(&mut s, "print('before')\nraise ValueError(\"bad input\")\nprint('after')");
        assert_eq!(out.result.stdout, "before\n");
        let err = out.result.error.unwrap();
        assert_eq!((err.kind.as_str(), err.message.as_str()), ("ValueError", "bad input"));
        assert!(err.trace.contains("line 2"));
    }

    #[test]
    fn tool_calls_and_final_answer() {
        let mut s = session();
        let out = run(
            &mut s,
            "ans = ask_search_agent(query=\"capital of France\")\nprint(ans)\nfinal_answer(ans)\nprint('unreached')",
        );
        assert_eq!(out.result.stdout, "tool says hi\n");
        assert_eq!(out.final_answer.as_deref(), Some("tool says hi"));
        assert!(out.result.ok());
    }

    #[test]
    fn bad_tool_arguments_raise() {
        let mut s = session();
        let out = run(&mut s, "objectlocation(image='a.png')");
        assert_eq!(out.result.error.unwrap().kind, "TypeError");
    }

    #[test]
    fn file_writes_are_reported() {
        let mut s = session();
        let out = run(
            &mut s,
            "open('.cache/a.csv', 'w').write(\"x,y\\n1,2\\n\")\nwith open(\".cache/b.txt\", \"w\") as f:\n    f.write('one')\n    f.write('two')\nprint('done')",
        );
        assert!(out.result.ok(), "{:?}", out.result.error);
        assert_eq!(out.result.files_created, vec![".cache/a.csv", ".cache/b.txt"]);
        assert_eq!(std::fs::read_to_string(s.workdir().join(".cache/a.csv")).unwrap(), "x,y\n1,2\n");
        assert_eq!(std::fs::read_to_string(s.workdir().join(".cache/b.txt")).unwrap(), "onetwo");
        assert_eq!(out.result.stdout, "done\n");
    }

    #[test]
    fn compound_statements_are_skipped() {
        let mut s = session();
        let out = run(&mut s, "def f(x):\n    return x\nfor i in range(3):\n    print(i)\nprint('end')");
        assert_eq!(out.result.stdout, "end\n");
    }

    #[test]
    fn multiline_calls_join() {
        let mut s = session();
        let out = run(&mut s, "print(\n  'a',\n  'b'\n)");
        assert_eq!(out.result.stdout, "a b\n");
    }

    #[test]
    fn unknown_name_is_name_error() {
        let mut s = session();
        let err = run(&mut s, "print(undefined_thing)").result.error.unwrap();
        assert_eq!(err.kind, "NameError");
        assert_eq!(err.message, "name 'undefined_thing' is not defined");
    }

    #[test]
    fn unsupported_constructs_are_reported() {
        let mut s = session();
        let err = run(&mut s, "import numpy as np\nprint(np.mean([1, 2]))").result.error.unwrap();
        assert_eq!(err.kind, "NameError");
        let err = run(&mut s, "x = {1: 2}").result.error.unwrap();
        assert_eq!(err.kind, "NotImplementedError");
    }
}
