//! Boolean expressions over input labels.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! or   = xor { '+' xor }
//! xor  = and { '^' and }
//! and  = atom { '*' atom }
//! atom = identifier | '0' | '1' | '(' or ')'
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BoolExpr {
    Const(bool),
    Var(String),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Xor(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message} at offset {offset}")]
pub struct ExprError {
    /// Byte offset into the parsed text.
    pub offset: usize,
    pub message: String,
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl BoolExpr {
    pub fn parse(text: &str) -> Result<Self, ExprError> {
        let tokens = lex(text)?;
        let mut p = Parser { tokens, pos: 0, len: text.len() };
        let e = p.or()?;
        if let Some((off, tok)) = p.tokens.get(p.pos) {
            return Err(ExprError { offset: *off, message: format!("unexpected `{tok}`") });
        }
        Ok(e)
    }

    pub fn eval(&self, env: &BTreeMap<String, bool>) -> Result<bool, String> {
        Ok(match self {
            BoolExpr::Const(b) => *b,
            BoolExpr::Var(v) => *env.get(v).ok_or_else(|| format!("unbound variable `{v}`"))?,
            BoolExpr::And(a, b) => a.eval(env)? & b.eval(env)?,
            BoolExpr::Xor(a, b) => a.eval(env)? ^ b.eval(env)?,
            BoolExpr::Or(a, b) => a.eval(env)? | b.eval(env)?,
        })
    }

    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut BTreeSet<String>) {
        match self {
            BoolExpr::Const(_) => {}
            BoolExpr::Var(v) => {
                out.insert(v.clone());
            }
            BoolExpr::And(a, b) | BoolExpr::Xor(a, b) | BoolExpr::Or(a, b) => {
                a.collect(out);
                b.collect(out);
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            BoolExpr::Or(..) => 1,
            BoolExpr::Xor(..) => 2,
            BoolExpr::And(..) => 3,
            _ => 4,
        }
    }
}

impl fmt::Display for BoolExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b, op) = match self {
            BoolExpr::Const(v) => return write!(f, "{}", u8::from(*v)),
            BoolExpr::Var(v) => return f.write_str(v),
            BoolExpr::And(a, b) => (a, b, "*"),
            BoolExpr::Xor(a, b) => (a, b, "^"),
            BoolExpr::Or(a, b) => (a, b, "+"),
        };
        let p = self.precedence();
        // Operators associate to the left, so only a right operand of equal
        // precedence needs parentheses.
        if a.precedence() < p {
            write!(f, "({a})")?;
        } else {
            write!(f, "{a}")?;
        }
        f.write_str(op)?;
        if b.precedence() <= p {
            write!(f, "({b})")
        } else {
            write!(f, "{b}")
        }
    }
}

fn lex(text: &str) -> Result<Vec<(usize, String)>, ExprError> {
    let mut out = Vec::new();
    let mut it = text.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        match c {
            c if c.is_whitespace() => {}
            '(' | ')' | '*' | '+' | '^' => out.push((i, c.to_string())),
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let mut s = c.to_string();
                while let Some(&(_, d)) = it.peek() {
                    if d.is_ascii_alphanumeric() || d == '_' {
                        s.push(d);
                        it.next();
                    } else {
                        break;
                    }
                }
                out.push((i, s));
            }
            other => return Err(ExprError { offset: i, message: format!("unexpected character `{other}`") }),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, String)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(|(_, t)| t.as_str())
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.len, |(o, _)| *o)
    }

    fn binary(
        &mut self,
        op: &str,
        next: fn(&mut Self) -> Result<BoolExpr, ExprError>,
        make: fn(Box<BoolExpr>, Box<BoolExpr>) -> BoolExpr,
    ) -> Result<BoolExpr, ExprError> {
        let mut lhs = next(self)?;
        while self.peek() == Some(op) {
            self.pos += 1;
            let rhs = next(self)?;
            lhs = make(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<BoolExpr, ExprError> {
        self.binary("+", Self::xor, BoolExpr::Or)
    }

    fn xor(&mut self) -> Result<BoolExpr, ExprError> {
        self.binary("^", Self::and, BoolExpr::Xor)
    }

    fn and(&mut self) -> Result<BoolExpr, ExprError> {
        self.binary("*", Self::atom, BoolExpr::And)
    }

    fn atom(&mut self) -> Result<BoolExpr, ExprError> {
        let offset = self.offset();
        let Some(tok) = self.peek().map(str::to_string) else {
            return Err(ExprError { offset, message: "unexpected end of expression".into() });
        };
        self.pos += 1;
        match tok.as_str() {
            "(" => {
                let e = self.or()?;
                if self.peek() != Some(")") {
                    return Err(ExprError { offset: self.offset(), message: "expected `)`".into() });
                }
                self.pos += 1;
                Ok(e)
            }
            "0" => Ok(BoolExpr::Const(false)),
            "1" => Ok(BoolExpr::Const(true)),
            t if is_identifier(t) => Ok(BoolExpr::Var(tok)),
            t => Err(ExprError { offset, message: format!("unexpected `{t}`") }),
        }
    }
}
