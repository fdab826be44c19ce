use std::collections::{BTreeMap, BTreeSet};

use super::{ChannelDecl, Diagnostic, Drive, FluidDecl, InputDecl, NetlistDocument, NodeDecl, Severity};
use crate::expr::{is_identifier, BoolExpr};

/// A parsed document plus any warnings raised on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub document: NetlistDocument,
    pub warnings: Vec<Diagnostic>,
}

#[derive(Debug, Clone)]
struct Token<'a> {
    text: &'a str,
    line: usize,
    column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RefKind {
    Node,
    Input,
    Outlet,
}

struct Reference {
    kind: RefKind,
    name: String,
    line: usize,
    column: usize,
    context: String,
}

#[derive(Default)]
struct State {
    doc: NetlistDocument,
    diags: Vec<Diagnostic>,
    refs: Vec<Reference>,
    terminal_users: BTreeMap<String, String>,
}

impl State {
    fn error(&mut self, tok: &Token<'_>, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            severity: Severity::Error,
            line: tok.line,
            column: tok.column,
            message: message.into(),
            token: tok.text.to_string(),
        });
    }

    fn reference(&mut self, kind: RefKind, tok: &Token<'_>, name: &str, context: String) {
        self.refs.push(Reference { kind, name: name.to_string(), line: tok.line, column: tok.column, context });
    }

    fn claim_terminal(&mut self, node: &str, user: String, tok: &Token<'_>) -> bool {
        if let Some(prev) = self.terminal_users.get(node) {
            let msg = format!("node `{node}` is already the terminal of {prev}");
            self.error(tok, msg);
            return false;
        }
        self.terminal_users.insert(node.to_string(), user);
        true
    }
}

fn tokenize(line: &str, line_no: usize) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<(usize, usize)> = None;
    for (col, (byte, ch)) in line.char_indices().enumerate() {
        if ch.is_whitespace() {
            if let Some((b, c)) = start.take() {
                out.push(Token { text: &line[b..byte], line: line_no, column: c + 1 });
            }
        } else if start.is_none() {
            start = Some((byte, col));
        }
    }
    if let Some((b, c)) = start {
        out.push(Token { text: &line[b..], line: line_no, column: c + 1 });
    }
    out
}

fn strip_comment(line: &str) -> &str {
    line.find('#').map_or(line, |i| &line[..i])
}

/// `key=value` arguments of one statement.
struct Args<'a> {
    values: BTreeMap<&'a str, (Token<'a>, &'a str)>,
    ok: bool,
}

fn key_values<'a>(st: &mut State, tokens: &[Token<'a>], allowed: &[&str]) -> Args<'a> {
    let mut values = BTreeMap::new();
    let mut ok = true;
    for tok in tokens {
        let Some((k, v)) = tok.text.split_once('=') else {
            st.error(tok, format!("expected key=value, one of {}", allowed.join(", ")));
            ok = false;
            continue;
        };
        if !allowed.contains(&k) {
            st.error(tok, format!("unknown key `{k}`, expected one of {}", allowed.join(", ")));
            ok = false;
            continue;
        }
        let key = k;
        if values.contains_key(key) {
            st.error(tok, format!("duplicate key `{key}`"));
            ok = false;
            continue;
        }
        values.insert(key, (tok.clone(), v));
    }
    Args { values, ok }
}

impl<'a> Args<'a> {
    fn number(&mut self, st: &mut State, key: &str, positive: bool) -> Option<f64> {
        let (tok, v) = self.values.get(key)?.clone();
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() && (!positive || x > 0.0) => Some(x),
            Ok(_) if positive => {
                st.error(&tok, format!("`{key}` must be a positive number"));
                self.ok = false;
                None
            }
            _ => {
                st.error(&tok, format!("`{key}` is not a finite number"));
                self.ok = false;
                None
            }
        }
    }

    fn require(&mut self, st: &mut State, key: &str, stmt: &Token<'_>) -> bool {
        if self.values.contains_key(key) {
            true
        } else {
            st.error(stmt, format!("`{}` requires `{key}=`", stmt.text));
            self.ok = false;
            false
        }
    }
}

fn identifier(st: &mut State, tokens: &[Token<'_>], index: usize, stmt: &Token<'_>, what: &str) -> Option<String> {
    match tokens.get(index) {
        Some(t) if is_identifier(t.text) => Some(t.text.to_string()),
        Some(t) => {
            st.error(t, format!("invalid {what} `{}`", t.text));
            None
        }
        None => {
            st.error(stmt, format!("`{}` is missing its {what}", stmt.text));
            None
        }
    }
}

fn node_arg(st: &mut State, args: &Args<'_>, key: &str) -> Option<(Token<'static>, String)> {
    let (tok, v) = args.values.get(key)?;
    if !is_identifier(v) {
        st.error(tok, format!("invalid node id `{v}`"));
        return None;
    }
    let owned = Token { text: "", line: tok.line, column: tok.column };
    Some((owned, v.to_string()))
}

fn parse_line(st: &mut State, tokens: &[Token<'_>], raw: &str) {
    let stmt = &tokens[0];
    let rest = &tokens[1..];
    match stmt.text {
        "fluid" => {
            let Some(id) = identifier(st, rest, 0, stmt, "fluid id") else { return };
            let mut args = key_values(st, &rest[1..], &["viscosity"]);
            if !args.require(st, "viscosity", stmt) {
                return;
            }
            let Some(viscosity) = args.number(st, "viscosity", true) else { return };
            if st.doc.fluid.is_some() {
                st.error(stmt, "only one fluid declaration is supported");
                return;
            }
            st.doc.fluid = Some(FluidDecl { id, viscosity });
        }
        "node" => {
            let Some(id) = identifier(st, rest, 0, stmt, "node id") else { return };
            let mut tail: Vec<Token<'_>> = rest[1..].to_vec();
            let junction = match tail.iter().position(|t| t.text == "junction") {
                Some(i) => {
                    tail.remove(i);
                    true
                }
                None => false,
            };
            let mut args = key_values(st, &tail, &["x", "y"]);
            let has = args.require(st, "x", stmt) & args.require(st, "y", stmt);
            let x = args.number(st, "x", false);
            let y = args.number(st, "y", false);
            if !has || !args.ok {
                return;
            }
            if st.doc.nodes.contains_key(&id) {
                st.error(&rest[0], format!("duplicate node id `{id}`"));
                return;
            }
            st.doc.nodes.insert(id, NodeDecl { x: x.unwrap(), y: y.unwrap(), junction });
        }
        "channel" => {
            let Some(id) = identifier(st, rest, 0, stmt, "channel id") else { return };
            let from = identifier(st, rest, 1, stmt, "first node");
            let to = identifier(st, rest, 2, stmt, "second node");
            let (Some(from), Some(to)) = (from, to) else { return };
            let mut args = key_values(st, &rest[3..], &["width", "depth", "length"]);
            let has = args.require(st, "width", stmt) & args.require(st, "depth", stmt);
            let width = args.number(st, "width", true);
            let depth = args.number(st, "depth", true);
            let length = args.number(st, "length", true);
            if !has || !args.ok {
                return;
            }
            if st.doc.channels.contains_key(&id) {
                st.error(&rest[0], format!("duplicate channel id `{id}`"));
                return;
            }
            st.reference(RefKind::Node, &rest[1], &from, format!("channel `{id}`"));
            st.reference(RefKind::Node, &rest[2], &to, format!("channel `{id}`"));
            st.doc.channels.insert(id, ChannelDecl { from, to, width: width.unwrap(), depth: depth.unwrap(), length });
        }
        "input" => {
            let Some(label) = identifier(st, rest, 0, stmt, "label") else { return };
            let mut args = key_values(st, &rest[1..], &["node", "pressure", "flow"]);
            if !args.require(st, "node", stmt) {
                return;
            }
            let drive = match (args.values.contains_key("pressure"), args.values.contains_key("flow")) {
                (true, false) => args.number(st, "pressure", false).map(Drive::Pressure),
                (false, true) => args.number(st, "flow", false).map(Drive::Flow),
                _ => {
                    st.error(stmt, "`input` needs exactly one of `pressure=` or `flow=`");
                    return;
                }
            };
            let node = node_arg(st, &args, "node");
            let (Some(drive), Some((ntok, node))) = (drive, node) else { return };
            if !args.ok {
                return;
            }
            if st.doc.inputs.contains_key(&label) || st.doc.outlets.contains_key(&label) {
                st.error(&rest[0], format!("duplicate label `{label}`"));
                return;
            }
            if !st.claim_terminal(&node, format!("input `{label}`"), &ntok) {
                return;
            }
            st.reference(RefKind::Node, &ntok, &node, format!("input `{label}`"));
            st.doc.inputs.insert(label, InputDecl { node, drive });
        }
        "outlet" => {
            let Some(label) = identifier(st, rest, 0, stmt, "label") else { return };
            let mut args = key_values(st, &rest[1..], &["node"]);
            if !args.require(st, "node", stmt) {
                return;
            }
            let Some((ntok, node)) = node_arg(st, &args, "node") else { return };
            if !args.ok {
                return;
            }
            if st.doc.inputs.contains_key(&label) || st.doc.outlets.contains_key(&label) {
                st.error(&rest[0], format!("duplicate label `{label}`"));
                return;
            }
            if !st.claim_terminal(&node, format!("outlet `{label}`"), &ntok) {
                return;
            }
            st.reference(RefKind::Node, &ntok, &node, format!("outlet `{label}`"));
            st.doc.outlets.insert(label, node);
        }
        "drain" => {
            let mut args = key_values(st, rest, &["node"]);
            if !args.require(st, "node", stmt) {
                return;
            }
            let Some((ntok, node)) = node_arg(st, &args, "node") else { return };
            if !args.ok {
                return;
            }
            if !st.claim_terminal(&node, "a drain".into(), &ntok) {
                return;
            }
            st.reference(RefKind::Node, &ntok, &node, "drain".into());
            st.doc.drains.insert(node);
        }
        "inject" => {
            let Some(label) = identifier(st, rest, 0, stmt, "label") else { return };
            let args = key_values(st, &rest[1..], &["t"]);
            let mut args = args;
            if !args.require(st, "t", stmt) || !args.ok {
                return;
            }
            let (ttok, list) = args.values["t"].clone();
            let mut times = Vec::new();
            for part in list.split(',') {
                match part.parse::<f64>() {
                    Ok(t) if t.is_finite() && t >= 0.0 => times.push(t),
                    _ => {
                        st.error(&ttok, format!("invalid injection time `{part}`"));
                        return;
                    }
                }
            }
            if times.windows(2).any(|w| w[1] < w[0]) {
                st.error(&ttok, "injection times must be sorted");
                return;
            }
            if st.doc.injections.contains_key(&label) {
                st.error(&rest[0], format!("duplicate injection schedule for `{label}`"));
                return;
            }
            st.reference(RefKind::Input, &rest[0], &label, "inject".into());
            st.doc.injections.insert(label, times);
        }
        "expect" => {
            let Some(label) = identifier(st, rest, 0, stmt, "label") else { return };
            let Some(first) = rest.get(1) else {
                st.error(&rest[0], "`expect` is missing its expression");
                return;
            };
            let start_byte = raw.char_indices().nth(first.column - 1).map_or(raw.len(), |(b, _)| b);
            let text = raw[start_byte..].trim_end();
            let expr = match BoolExpr::parse(text) {
                Ok(e) => e,
                Err(e) => {
                    let column = first.column + text[..e.offset].chars().count();
                    let token = text[e.offset..].split_whitespace().next().unwrap_or("").to_string();
                    st.diags.push(Diagnostic {
                        severity: Severity::Error,
                        line: first.line,
                        column,
                        message: format!("invalid expression: {}", e.message),
                        token,
                    });
                    return;
                }
            };
            if st.doc.expectations.contains_key(&label) {
                st.error(&rest[0], format!("duplicate expectation for `{label}`"));
                return;
            }
            st.reference(RefKind::Outlet, &rest[0], &label, "expect".into());
            for var in expr.variables() {
                let offset = find_identifier(text, &var).unwrap_or(0);
                let tok = Token { text: "", line: first.line, column: first.column + text[..offset].chars().count() };
                st.reference(RefKind::Input, &tok, &var, format!("expectation for `{label}`"));
            }
            st.doc.expectations.insert(label, expr);
        }
        other => st.error(stmt, format!("unknown statement `{other}`")),
    }
}

fn find_identifier(text: &str, name: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    text.match_indices(name).map(|(i, _)| i).find(|&i| {
        let before = i == 0 || !is_word(bytes[i - 1]);
        let end = i + name.len();
        let after = end >= bytes.len() || !is_word(bytes[end]);
        before && after
    })
}

/// Parse netlist text, reporting every problem found rather than stopping at
/// the first.
pub fn parse_netlist(text: &str) -> Result<Parsed, Vec<Diagnostic>> {
    let mut st = State::default();
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw);
        let tokens = tokenize(line, i + 1);
        if tokens.is_empty() {
            continue;
        }
        parse_line(&mut st, &tokens, line);
    }

    let refs = std::mem::take(&mut st.refs);
    for r in refs {
        let found = match r.kind {
            RefKind::Node => st.doc.nodes.contains_key(&r.name),
            RefKind::Input => st.doc.inputs.contains_key(&r.name),
            RefKind::Outlet => st.doc.outlets.contains_key(&r.name),
        };
        if !found {
            let what = match r.kind {
                RefKind::Node => "undeclared node",
                RefKind::Input => "undeclared input",
                RefKind::Outlet => "undeclared outlet",
            };
            st.diags.push(Diagnostic {
                severity: Severity::Error,
                line: r.line,
                column: r.column,
                message: format!("{} references {what} `{}`", r.context, r.name),
                token: r.name,
            });
        }
    }

    let mut warnings = Vec::new();
    if st.doc.fluid.is_none() {
        warnings.push(Diagnostic {
            severity: Severity::Warning,
            line: 1,
            column: 1,
            message: format!("no fluid declared; using viscosity {} Pa·s", super::DEFAULT_VISCOSITY),
            token: String::new(),
        });
    }
    let used: BTreeSet<&str> = st.doc.channels.values().flat_map(|c| [c.from.as_str(), c.to.as_str()]).collect();
    for id in st.doc.nodes.keys() {
        if !used.contains(id.as_str()) {
            warnings.push(Diagnostic {
                severity: Severity::Warning,
                line: 1,
                column: 1,
                message: format!("node `{id}` is not connected to any channel"),
                token: id.clone(),
            });
        }
    }

    st.diags.sort_by_key(|d| (d.line, d.column));
    if st.diags.iter().any(|d| d.severity == Severity::Error) {
        st.diags.extend(warnings);
        return Err(st.diags);
    }
    Ok(Parsed { document: st.doc, warnings })
}
