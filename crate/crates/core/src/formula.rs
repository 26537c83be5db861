//! Equation compilation: LaTeX-ish source is normalised to a small ASCII-math
//! language, parsed into [`MathAst`], and emitted as an operator graph whose
//! operand order survives traversal.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::json;
use thiserror::Error;

use crate::doc_model::{Block, BlockBody, Provenance, SourceDocument};
use crate::graph::{EdgeSpec, GraphUnit, Node, NodeType, RelationType, TypedGraph};
use crate::layout::Diagnostic;
use crate::text::collapse_whitespace;

pub const CALLS: &[&str] = &["log", "log2", "exp", "min", "max", "abs", "sqrt", "sum"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("unsupported construct {0}")]
    UnsupportedConstruct(String),
    #[error("parse error at byte {offset}: expected one of {expected:?}")]
    Parse { offset: usize, expected: Vec<String> },
    #[error("node {0} is not an operator")]
    NotAnOperator(String),
    #[error("malformed formula graph at {0}")]
    Malformed(String),
}

// ---------------------------------------------------------------------------
// normalisation

const GREEK: &[&str] = &[
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "kappa", "lambda", "mu", "nu", "xi", "pi",
    "rho", "sigma", "tau", "phi", "chi", "psi", "omega", "Gamma", "Delta", "Theta", "Lambda", "Sigma", "Phi", "Psi",
    "Omega",
];

struct Scanner<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn command(&mut self) -> String {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
            self.bump();
        }
        self.src[start..self.pos].to_string()
    }

    /// Content of a `{...}` group, or a single character when no brace follows.
    fn group(&mut self) -> Result<String, FormulaError> {
        self.skip_ws();
        match self.peek() {
            Some('{') => {
                self.bump();
                let start = self.pos;
                let mut depth = 1;
                while let Some(c) = self.bump() {
                    match c {
                        '{' => depth += 1,
                        '}' => {
                            depth -= 1;
                            if depth == 0 {
                                return Ok(self.src[start..self.pos - 1].to_string());
                            }
                        }
                        _ => {}
                    }
                }
                Err(FormulaError::UnsupportedConstruct("unbalanced {".into()))
            }
            Some('\\') => {
                let start = self.pos;
                self.bump();
                self.command();
                Ok(self.src[start..self.pos].to_string())
            }
            Some(c) => {
                self.bump();
                Ok(c.to_string())
            }
            None => Err(FormulaError::UnsupportedConstruct("missing group".into())),
        }
    }

    /// The body operand of `\sum`: everything up to the next top-level `+`,
    /// `-`, `=`, `)` or `,`.
    fn sum_body(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        let mut depth = 0i32;
        while let Some(c) = self.peek() {
            match c {
                '(' | '{' => depth += 1,
                ')' | '}' if depth == 0 => break,
                ')' | '}' => depth -= 1,
                '+' | '-' | '=' | ',' if depth == 0 => break,
                _ => {}
            }
            self.bump();
        }
        self.src[start..self.pos].trim().to_string()
    }
}

fn is_alnum_token(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric())
}

fn norm(src: &str) -> Result<String, FormulaError> {
    let mut sc = Scanner { src, pos: 0 };
    let mut out = String::new();
    while let Some(c) = sc.bump() {
        match c {
            '\\' => {
                let name = sc.command();
                if name.is_empty() {
                    match sc.bump() {
                        Some(',' | ';' | '!' | ' ' | ':') => out.push(' '),
                        Some('{') => out.push('('),
                        Some('}') => out.push(')'),
                        other => {
                            return Err(FormulaError::UnsupportedConstruct(format!(
                                "\\{}",
                                other.map(String::from).unwrap_or_default()
                            )))
                        }
                    }
                    continue;
                }
                match name.as_str() {
                    "frac" => {
                        let a = norm(&sc.group()?)?;
                        let b = norm(&sc.group()?)?;
                        out.push_str(&format!("({a})/({b})"));
                    }
                    "cdot" | "times" => out.push_str(" * "),
                    "div" => out.push_str(" / "),
                    "left" | "right" => {}
                    "log" => {
                        let save = sc.pos;
                        sc.skip_ws();
                        if sc.peek() == Some('_') {
                            sc.bump();
                            let base = sc.group()?;
                            if base.trim() == "2" {
                                out.push_str("log2");
                            } else {
                                return Err(FormulaError::UnsupportedConstruct(format!("\\log_{{{base}}}")));
                            }
                        } else {
                            sc.pos = save;
                            out.push_str("log");
                        }
                    }
                    "exp" | "min" | "max" => out.push_str(&name),
                    "sqrt" => {
                        let a = norm(&sc.group()?)?;
                        out.push_str(&format!("sqrt({a})"));
                    }
                    "mathrm" | "text" | "operatorname" => {
                        let a = sc.group()?;
                        if !is_alnum_token(a.trim()) {
                            return Err(FormulaError::UnsupportedConstruct(format!("\\{name}{{{a}}}")));
                        }
                        out.push_str(a.trim());
                    }
                    "sum" => {
                        sc.skip_ws();
                        if sc.bump() != Some('_') {
                            return Err(FormulaError::UnsupportedConstruct("\\sum without bounds".into()));
                        }
                        let lower = sc.group()?;
                        let Some((idx, lo)) = lower.split_once('=') else {
                            return Err(FormulaError::UnsupportedConstruct(format!("\\sum_{{{lower}}}")));
                        };
                        sc.skip_ws();
                        if sc.bump() != Some('^') {
                            return Err(FormulaError::UnsupportedConstruct("\\sum without upper bound".into()));
                        }
                        let hi = sc.group()?;
                        let body = sc.sum_body();
                        out.push_str(&format!(
                            "sum({},{},{},{})",
                            collapse_whitespace(&norm(idx)?),
                            collapse_whitespace(&norm(lo)?),
                            collapse_whitespace(&norm(&hi)?),
                            collapse_whitespace(&norm(&body)?)
                        ));
                    }
                    g if GREEK.contains(&g) => out.push_str(g),
                    other => return Err(FormulaError::UnsupportedConstruct(format!("\\{other}"))),
                }
            }
            '_' => {
                let sub = if sc.peek() == Some('{') {
                    sc.group()?
                } else {
                    match sc.bump() {
                        Some(ch) => ch.to_string(),
                        None => String::new(),
                    }
                };
                let sub = sub.trim();
                if !is_alnum_token(sub) {
                    return Err(FormulaError::UnsupportedConstruct(format!("_{{{sub}}}")));
                }
                out.push('_');
                out.push_str(sub);
            }
            '^' => {
                sc.skip_ws();
                if sc.peek() == Some('{') {
                    let e = norm(&sc.group()?)?;
                    out.push_str(&format!("^({e})"));
                } else {
                    out.push('^');
                }
            }
            '{' => out.push('('),
            '}' => out.push(')'),
            '−' => out.push('-'),
            '×' | '·' => out.push_str(" * "),
            '÷' => out.push_str(" / "),
            c if c.is_ascii() => out.push(c),
            other => return Err(FormulaError::UnsupportedConstruct(other.to_string())),
        }
    }
    Ok(out)
}

/// Normalise equation source to ASCII-math. Idempotent on its own output.
pub fn normalize_math(src: &str) -> Result<String, FormulaError> {
    Ok(collapse_whitespace(&norm(src)?))
}

// ---------------------------------------------------------------------------
// AST

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Eq,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
            BinOp::Eq => "=",
        }
    }

    fn from_symbol(s: &str) -> Option<BinOp> {
        Some(match s {
            "+" => BinOp::Add,
            "-" => BinOp::Sub,
            "*" => BinOp::Mul,
            "/" => BinOp::Div,
            "^" => BinOp::Pow,
            "=" => BinOp::Eq,
            _ => return None,
        })
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Eq => 1,
            BinOp::Add | BinOp::Sub => 2,
            BinOp::Mul | BinOp::Div => 3,
            BinOp::Pow => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MathAst {
    Binary(BinOp, Box<MathAst>, Box<MathAst>),
    Neg(Box<MathAst>),
    Call(String, Vec<MathAst>),
    Var { name: String, subscript: Option<String> },
    Const(String),
}

impl MathAst {
    pub fn bin(op: BinOp, a: MathAst, b: MathAst) -> MathAst {
        MathAst::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn var(name: &str) -> MathAst {
        match name.split_once('_') {
            Some((n, s)) => MathAst::Var {
                name: n.into(),
                subscript: Some(s.into()),
            },
            None => MathAst::Var {
                name: name.into(),
                subscript: None,
            },
        }
    }

    pub fn num(v: &str) -> MathAst {
        MathAst::Const(v.into())
    }

    pub fn children(&self) -> Vec<&MathAst> {
        match self {
            MathAst::Binary(_, a, b) => vec![a, b],
            MathAst::Neg(a) => vec![a],
            MathAst::Call(_, args) => args.iter().collect(),
            _ => Vec::new(),
        }
    }

    pub fn is_operator(&self) -> bool {
        matches!(self, MathAst::Binary(..) | MathAst::Neg(_) | MathAst::Call(..))
    }

    fn precedence(&self) -> u8 {
        match self {
            MathAst::Binary(op, ..) => op.precedence(),
            MathAst::Neg(_) => 4,
            _ => 6,
        }
    }

    /// Symbol text of a variable, `name` or `name_sub`.
    pub fn symbol(&self) -> Option<String> {
        match self {
            MathAst::Var { name, subscript } => Some(match subscript {
                Some(s) => format!("{name}_{s}"),
                None => name.clone(),
            }),
            _ => None,
        }
    }

    /// Fully parenthesised form, unambiguous without precedence rules.
    pub fn canonical(&self) -> String {
        match self {
            MathAst::Binary(op, a, b) => format!("({} {} {})", a.canonical(), op.symbol(), b.canonical()),
            MathAst::Neg(a) => format!("(-{})", a.canonical()),
            MathAst::Call(name, args) => {
                format!("{name}({})", args.iter().map(MathAst::canonical).collect::<Vec<_>>().join(","))
            }
            MathAst::Var { .. } => self.symbol().unwrap(),
            MathAst::Const(v) => v.clone(),
        }
    }

    pub fn eval(&self, env: &HashMap<String, f64>) -> Option<f64> {
        let mut env = env.clone();
        self.eval_in(&mut env)
    }

    fn eval_in(&self, env: &mut HashMap<String, f64>) -> Option<f64> {
        Some(match self {
            MathAst::Const(v) => v.parse().ok()?,
            MathAst::Var { .. } => *env.get(&self.symbol()?)?,
            MathAst::Neg(a) => -a.eval_in(env)?,
            MathAst::Binary(op, a, b) => {
                let y = b.eval_in(env)?;
                if *op == BinOp::Eq {
                    return Some(y);
                }
                let x = a.eval_in(env)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => x / y,
                    BinOp::Pow => x.powf(y),
                    BinOp::Eq => unreachable!(),
                }
            }
            MathAst::Call(name, args) if name == "sum" => {
                let idx = args.first()?.symbol()?;
                let lo = args.get(1)?.eval_in(env)?.round() as i64;
                let hi = args.get(2)?.eval_in(env)?.round() as i64;
                let saved = env.get(&idx).copied();
                let mut total = 0.0;
                for i in lo..=hi {
                    env.insert(idx.clone(), i as f64);
                    total += args.get(3)?.eval_in(env)?;
                }
                match saved {
                    Some(v) => env.insert(idx, v),
                    None => env.remove(&idx),
                };
                total
            }
            MathAst::Call(name, args) => {
                let vals: Vec<f64> = args.iter().map(|a| a.eval_in(env)).collect::<Option<_>>()?;
                match name.as_str() {
                    "log" => vals[0].ln(),
                    "log2" => vals[0].log2(),
                    "exp" => vals[0].exp(),
                    "abs" => vals[0].abs(),
                    "sqrt" => vals[0].sqrt(),
                    "min" => vals.iter().copied().fold(f64::INFINITY, f64::min),
                    "max" => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    _ => return None,
                }
            }
        })
    }
}

fn wrap(s: String, parens: bool) -> String {
    if parens {
        format!("({s})")
    } else {
        s
    }
}

impl fmt::Display for MathAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MathAst::Binary(BinOp::Div, a, b) => write!(f, "({a})/({b})"),
            MathAst::Binary(BinOp::Pow, a, b) => {
                let l = wrap(a.to_string(), a.precedence() <= 5);
                let r = wrap(b.to_string(), b.precedence() < 4);
                write!(f, "{l}^{r}")
            }
            MathAst::Binary(op, a, b) => {
                let p = op.precedence();
                let l = wrap(a.to_string(), a.precedence() < p);
                let r = wrap(b.to_string(), b.precedence() <= p);
                write!(f, "{l} {} {r}", op.symbol())
            }
            MathAst::Neg(a) => write!(f, "-{}", wrap(a.to_string(), a.precedence() < 4)),
            MathAst::Call(name, args) => {
                write!(f, "{name}({})", args.iter().map(ToString::to_string).collect::<Vec<_>>().join(","))
            }
            MathAst::Var { .. } => write!(f, "{}", self.symbol().unwrap()),
            MathAst::Const(v) => write!(f, "{v}"),
        }
    }
}

// ---------------------------------------------------------------------------
// parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Sym(char),
    End,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, FormulaError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            out.push((start, Tok::Num(src[start..i].to_string())));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'_' && bytes[i + 1].is_ascii_alphanumeric() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_alphanumeric() {
                    i += 1;
                }
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
        } else if b"+-*/^=(),".contains(&c) {
            out.push((i, Tok::Sym(c as char)));
            i += 1;
        } else {
            return Err(FormulaError::Parse {
                offset: i,
                expected: vec!["number".into(), "identifier".into(), "operator".into()],
            });
        }
    }
    out.push((src.len(), Tok::End));
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, FormulaError> {
        Err(FormulaError::Parse {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Sym(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn equation(&mut self) -> Result<MathAst, FormulaError> {
        let mut lhs = self.additive()?;
        while self.eat('=') {
            let rhs = self.additive()?;
            lhs = MathAst::bin(BinOp::Eq, lhs, rhs);
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<MathAst, FormulaError> {
        let mut lhs = self.multiplicative()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.multiplicative()?;
            lhs = MathAst::bin(op, lhs, rhs);
        }
    }

    fn multiplicative(&mut self) -> Result<MathAst, FormulaError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = MathAst::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<MathAst, FormulaError> {
        if self.eat('-') {
            Ok(MathAst::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<MathAst, FormulaError> {
        let base = self.primary()?;
        if self.eat('^') {
            let exp = self.power_rhs()?;
            Ok(MathAst::bin(BinOp::Pow, base, exp))
        } else {
            Ok(base)
        }
    }

    fn power_rhs(&mut self) -> Result<MathAst, FormulaError> {
        if self.eat('-') {
            Ok(MathAst::Neg(Box::new(self.power_rhs()?)))
        } else {
            self.power()
        }
    }

    fn primary(&mut self) -> Result<MathAst, FormulaError> {
        const EXPECTED: &[&str] = &["number", "identifier", "(", "-"];
        match self.peek().clone() {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(MathAst::Const(v))
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if *self.peek() == Tok::Sym('(') {
                    if !CALLS.contains(&name.as_str()) {
                        return self.fail(&["operator", ")", "end of input"]);
                    }
                    let call_at = self.offset();
                    self.pos += 1;
                    let mut args = vec![self.equation()?];
                    while self.eat(',') {
                        args.push(self.equation()?);
                    }
                    if !self.eat(')') {
                        return self.fail(&[",", ")"]);
                    }
                    if name == "sum" && (args.len() != 4 || !matches!(args[0], MathAst::Var { .. })) {
                        return Err(FormulaError::Parse {
                            offset: call_at,
                            expected: vec!["sum(index,lo,hi,body)".into()],
                        });
                    }
                    Ok(MathAst::Call(name, args))
                } else {
                    Ok(MathAst::var(&name))
                }
            }
            Tok::Sym('(') => {
                self.pos += 1;
                let inner = self.equation()?;
                if !self.eat(')') {
                    return self.fail(&[")"]);
                }
                Ok(inner)
            }
            _ => self.fail(EXPECTED),
        }
    }
}

pub fn parse_expression(src: &str) -> Result<MathAst, FormulaError> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let ast = p.equation()?;
    if *p.peek() != Tok::End {
        return p.fail(&["operator", "end of input"]);
    }
    Ok(ast)
}

// ---------------------------------------------------------------------------
// graph emission

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FormulaSubgraph {
    pub block_id: String,
    pub root: String,
    pub operator_nodes: Vec<String>,
    pub variable_nodes: Vec<String>,
    pub constant_nodes: Vec<String>,
    /// Operand-of and precedes edges, as indices into the unit's edges.
    pub op_edges: Vec<usize>,
    pub def_edges: Vec<usize>,
}

/// Paragraphs an equation's symbols may be defined in, in search order.
#[derive(Debug, Clone, Default)]
pub struct DefinitionContext {
    pub doc_id: String,
    /// Same-clause paragraphs, nearest first.
    pub same_clause: Vec<(String, String)>,
    /// Paragraphs of the nearest preceding definitions/symbols section.
    pub definitions_block: Vec<(String, String)>,
}

fn definitions_title() -> &'static Regex {
    static R: OnceLock<Regex> = OnceLock::new();
    R.get_or_init(|| Regex::new(r"(?i)definitions|symbols|abbreviations").unwrap())
}

impl DefinitionContext {
    /// Context for the equation at `pos` in `ordered` (reading order).
    pub fn for_equation(doc: &SourceDocument, ordered: &[&Block], pos: usize) -> Self {
        let clause = &ordered[pos].prov.clause_id;
        let mut same: Vec<(usize, usize, String, String)> = Vec::new();
        for (i, b) in ordered.iter().enumerate() {
            if let BlockBody::Paragraph { text, .. } = &b.body {
                if &b.prov.clause_id == clause {
                    same.push((i.abs_diff(pos), i, b.id.clone(), text.clone()));
                }
            }
        }
        same.sort();
        let def_section = ordered[..pos].iter().rev().find(|b| {
            matches!(&b.body, BlockBody::Section { title, .. } if definitions_title().is_match(title))
        });
        let definitions_block = def_section
            .map(|s| {
                ordered
                    .iter()
                    .filter_map(|b| match &b.body {
                        BlockBody::Paragraph { text, parent_section } if parent_section == &s.id => {
                            Some((b.id.clone(), text.clone()))
                        }
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default();
        DefinitionContext {
            doc_id: doc.id.clone(),
            same_clause: same.into_iter().map(|(_, _, id, t)| (id, t)).collect(),
            definitions_block,
        }
    }
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// True when `text` contains `symbol` as a whole word followed by
/// "is", "denotes" or "represents".
fn defines_symbol(text: &str, symbol: &str) -> bool {
    if symbol.is_empty() {
        return false;
    }
    text.match_indices(symbol).any(|(at, _)| {
        if text[..at].chars().next_back().is_some_and(is_word) {
            return false;
        }
        let rest = &text[at + symbol.len()..];
        let trimmed = rest.trim_start();
        if trimmed.len() == rest.len() {
            return false;
        }
        ["is", "denotes", "represents"].iter().any(|verb| {
            trimmed.strip_prefix(verb).is_some_and(|after| !after.chars().next().is_some_and(is_word))
        })
    })
}

/// Find the defining paragraph for each `(var node id, symbol)`. Returns the
/// `defines` edges and a diagnostic per unmatched symbol.
pub fn link_symbol_definitions(
    vars: &[(String, String)],
    ctx: &DefinitionContext,
    block_id: &str,
) -> (Vec<EdgeSpec>, Vec<Diagnostic>) {
    let mut edges = Vec::new();
    let mut diags = Vec::new();
    for (var_id, symbol) in vars {
        let hit = ctx
            .same_clause
            .iter()
            .chain(&ctx.definitions_block)
            .find(|(_, text)| defines_symbol(text, symbol));
        match hit {
            Some((pid, _)) => {
                edges.push(EdgeSpec::new(var_id, format!("{}#{pid}", ctx.doc_id), RelationType::Defines));
            }
            None => diags.push(Diagnostic {
                doc_id: ctx.doc_id.clone(),
                block_id: block_id.to_string(),
                message: format!("no definition found for symbol {symbol}"),
            }),
        }
    }
    (edges, diags)
}

pub struct FormulaIds<'a> {
    pub doc_id: &'a str,
    pub block_id: &'a str,
    pub prov: &'a Provenance,
    pub label: Option<&'a str>,
}

fn op_name(ast: &MathAst) -> String {
    match ast {
        MathAst::Binary(op, ..) => op.symbol().to_string(),
        MathAst::Neg(_) => "neg".to_string(),
        MathAst::Call(name, _) => name.clone(),
        _ => unreachable!(),
    }
}

pub fn compile_formula(
    ast: &MathAst,
    ids: &FormulaIds,
    ctx: &DefinitionContext,
) -> (FormulaSubgraph, GraphUnit, Vec<Diagnostic>) {
    let base = format!("{}#{}", ids.doc_id, ids.block_id);
    let mut sub = FormulaSubgraph {
        block_id: ids.block_id.to_string(),
        ..Default::default()
    };
    let mut unit = GraphUnit::default();
    let mut vars: BTreeMap<String, String> = BTreeMap::new();
    let mut consts: BTreeMap<String, String> = BTreeMap::new();

    fn visit(
        ast: &MathAst,
        base: &str,
        ids: &FormulaIds,
        sub: &mut FormulaSubgraph,
        unit: &mut GraphUnit,
        vars: &mut BTreeMap<String, String>,
        consts: &mut BTreeMap<String, String>,
    ) -> String {
        match ast {
            MathAst::Var { name, subscript } => {
                let sym = ast.symbol().unwrap();
                vars.entry(sym.clone())
                    .or_insert_with(|| {
                        let id = format!("{base}/v/{sym}");
                        let mut node = Node::new(&id, NodeType::Variable, &sym)
                            .with_prov(ids.prov)
                            .with_attr("name", json!(name));
                        if let Some(s) = subscript {
                            node = node.with_attr("subscript", json!(s));
                        }
                        unit.nodes.push(node);
                        sub.variable_nodes.push(id.clone());
                        id
                    })
                    .clone()
            }
            MathAst::Const(v) => consts
                .entry(v.clone())
                .or_insert_with(|| {
                    let id = format!("{base}/k/{v}");
                    unit.nodes.push(
                        Node::new(&id, NodeType::Constant, v.as_str())
                            .with_prov(ids.prov)
                            .with_attr("value", json!(v)),
                    );
                    sub.constant_nodes.push(id.clone());
                    id
                })
                .clone(),
            _ => {
                let id = format!("{base}/op/{}", sub.operator_nodes.len());
                sub.operator_nodes.push(id.clone());
                let mut node = Node::new(&id, NodeType::Operator, op_name(ast))
                    .with_prov(ids.prov)
                    .with_attr("op", json!(op_name(ast)))
                    .with_attr("call", json!(matches!(ast, MathAst::Call(..))))
                    .with_attr("expr", json!(ast.to_string()));
                if let Some(l) = ids.label {
                    node = node.with_attr("label", json!(l));
                }
                if let MathAst::Binary(BinOp::Eq, lhs, _) = ast {
                    node = node.with_attr("lhs", json!(lhs.to_string()));
                }
                unit.nodes.push(node);
                let children: Vec<String> = ast
                    .children()
                    .into_iter()
                    .map(|c| visit(c, base, ids, sub, unit, vars, consts))
                    .collect();
                for (pos, child) in children.iter().enumerate() {
                    sub.op_edges.push(unit.edges.len());
                    unit.edges.push(
                        EdgeSpec::new(child, &id, RelationType::OperandOf).with_attr("position", json!(pos)),
                    );
                }
                for (pos, pair) in children.windows(2).enumerate() {
                    sub.op_edges.push(unit.edges.len());
                    unit.edges.push(
                        EdgeSpec::new(&pair[0], &pair[1], RelationType::Precedes)
                            .with_attr("parent", json!(id))
                            .with_attr("position", json!(pos)),
                    );
                }
                id
            }
        }
    }

    let root = visit(ast, &base, ids, &mut sub, &mut unit, &mut vars, &mut consts);
    sub.root = root;

    let var_list: Vec<(String, String)> = vars.into_iter().map(|(sym, id)| (id, sym)).collect();
    let (def_edges, diags) = link_symbol_definitions(&var_list, ctx, ids.block_id);
    for e in def_edges {
        sub.def_edges.push(unit.edges.len());
        unit.edges.push(e);
    }
    (sub, unit, diags)
}

/// Normalise, parse and compile one equation block.
pub fn compile_equation(
    doc_id: &str,
    block: &Block,
    math_src: &str,
    label: Option<&str>,
    ctx: &DefinitionContext,
) -> Result<(FormulaSubgraph, GraphUnit, Vec<Diagnostic>), FormulaError> {
    let ast = parse_expression(&normalize_math(math_src)?)?;
    let ids = FormulaIds {
        doc_id,
        block_id: &block.id,
        prov: &block.prov,
        label,
    };
    Ok(compile_formula(&ast, &ids, ctx))
}

/// Rebuild the expression rooted at operator node `op_id`.
pub fn subexpression_at(g: &TypedGraph, op_id: &str) -> Result<MathAst, FormulaError> {
    let idx = g
        .index_of(op_id)
        .ok_or_else(|| FormulaError::NotAnOperator(op_id.to_string()))?;
    if g.node(idx).node_type != NodeType::Operator {
        return Err(FormulaError::NotAnOperator(op_id.to_string()));
    }
    rebuild(g, idx)
}

fn rebuild(g: &TypedGraph, idx: usize) -> Result<MathAst, FormulaError> {
    let node = g.node(idx);
    let malformed = || FormulaError::Malformed(node.id.clone());
    match node.node_type {
        NodeType::Variable => Ok(MathAst::Var {
            name: node.attr_str("name").ok_or_else(malformed)?.to_string(),
            subscript: node.attr_str("subscript").map(str::to_string),
        }),
        NodeType::Constant => Ok(MathAst::Const(node.attr_str("value").ok_or_else(malformed)?.to_string())),
        NodeType::Operator => {
            let mut kids: Vec<(u64, usize)> = g
                .in_edges(idx)
                .filter(|e| e.rel == RelationType::OperandOf)
                .map(|e| Ok((e.attrs.get("position").and_then(|v| v.as_u64()).ok_or_else(malformed)?, e.src)))
                .collect::<Result<_, FormulaError>>()?;
            kids.sort();
            let children: Vec<MathAst> = kids.iter().map(|(_, c)| rebuild(g, *c)).collect::<Result<_, _>>()?;
            let op = node.attr_str("op").ok_or_else(malformed)?;
            let is_call = node.attrs.get("call").and_then(|v| v.as_bool()).unwrap_or(false);
            if is_call {
                return Ok(MathAst::Call(op.to_string(), children));
            }
            let mut it = children.into_iter();
            if op == "neg" {
                return Ok(MathAst::Neg(Box::new(it.next().ok_or_else(malformed)?)));
            }
            let bop = BinOp::from_symbol(op).ok_or_else(malformed)?;
            let (a, b) = (it.next().ok_or_else(malformed)?, it.next().ok_or_else(malformed)?);
            Ok(MathAst::bin(bop, a, b))
        }
        _ => Err(malformed()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn definition_sentences() {
        assert!(defines_symbol("where S denotes the signal power", "S"));
        assert!(defines_symbol("N_0 is the noise density.", "N_0"));
        assert!(!defines_symbol("SNR denotes the ratio", "S"));
        assert!(!defines_symbol("S isotropic", "S"));
        assert!(!defines_symbol("S: the power", "S"));
    }

    fn shannon() -> MathAst {
        use MathAst as M;
        M::bin(
            BinOp::Eq,
            M::var("C"),
            M::bin(
                BinOp::Mul,
                M::var("B"),
                M::Call(
                    "log2".into(),
                    vec![M::bin(BinOp::Add, M::num("1"), M::bin(BinOp::Div, M::var("S"), M::var("N")))],
                ),
            ),
        )
    }

    fn prov() -> Provenance {
        Provenance {
            doc_id: "D".into(),
            clause_id: "4.1".into(),
            page: 2,
            bbox: [0.0; 4],
            release_tag: None,
        }
    }

    fn compile(src: &str, ctx: &DefinitionContext) -> (FormulaSubgraph, GraphUnit, Vec<Diagnostic>) {
        let p = prov();
        let ids = FormulaIds {
            doc_id: "D",
            block_id: "eq1",
            prov: &p,
            label: Some("1"),
        };
        compile_formula(&parse_expression(src).unwrap(), &ids, ctx)
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_math("\\frac{S}{N}").unwrap(), "(S)/(N)");
        assert_eq!(
            normalize_math("C = B \\cdot \\log_2(1 + \\frac{S}{N})").unwrap(),
            "C = B * log2(1 + (S)/(N))"
        );
        assert_eq!(normalize_math("x_{i} + y^{2}").unwrap(), "x_i + y^(2)");
        assert_eq!(normalize_math("\\sum_{i=1}^{n} x_i").unwrap(), "sum(i,1,n,x_i)");
        assert_eq!(
            normalize_math("\\int f").unwrap_err(),
            FormulaError::UnsupportedConstruct("\\int".into())
        );
    }

    #[test]
    fn normalization_is_idempotent_on_fixture() {
        for s in ["C = B \\cdot \\log_2(1 + \\frac{S}{N})", "\\sqrt{x^{2} + 1} - \\max(a, b)", "\\sum_{k=0}^{K} w_k"] {
            let once = normalize_math(s).unwrap();
            assert_eq!(normalize_math(&once).unwrap(), once);
        }
    }

    #[test]
    fn precedence_and_associativity() {
        use MathAst as M;
        assert_eq!(
            parse_expression("1+2*3").unwrap(),
            M::bin(BinOp::Add, M::num("1"), M::bin(BinOp::Mul, M::num("2"), M::num("3")))
        );
        assert_eq!(
            parse_expression("2^3^2").unwrap(),
            M::bin(BinOp::Pow, M::num("2"), M::bin(BinOp::Pow, M::num("3"), M::num("2")))
        );
        assert_eq!(
            parse_expression("-2^2").unwrap(),
            M::Neg(Box::new(M::bin(BinOp::Pow, M::num("2"), M::num("2"))))
        );
        assert_eq!(parse_expression("C = B * log2(1 + (S)/(N))").unwrap(), shannon());
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match parse_expression("a + * b") {
            Err(FormulaError::Parse { offset, expected }) => {
                assert_eq!(offset, 4);
                assert!(expected.contains(&"identifier".to_string()));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_expression("f(x)").is_err());
        assert!(parse_expression("(a").is_err());
    }

    #[test]
    fn print_round_trip() {
        let s = shannon();
        assert_eq!(s.to_string(), "C = B * log2(1 + (S)/(N))");
        assert_eq!(parse_expression(&s.to_string()).unwrap(), s);
        assert_eq!(s.canonical(), "(C = (B * log2((1 + (S / N)))))");
    }

    #[test]
    fn shannon_evaluates() {
        let env = HashMap::from([("B".to_string(), 1.0), ("S".to_string(), 3.0), ("N".to_string(), 1.0)]);
        let rhs = parse_expression("B * log2(1 + (S)/(N))").unwrap();
        assert_eq!(rhs.eval(&env), Some(2.0));
        let sum = parse_expression("sum(i,1,4,i^2)").unwrap();
        assert_eq!(sum.eval(&HashMap::new()), Some(30.0));
    }

    #[test]
    fn graph_counts() {
        let ctx = DefinitionContext::default();
        let (sub, unit, _) = compile("a+b", &ctx);
        assert_eq!(sub.operator_nodes.len(), 1);
        assert_eq!(sub.variable_nodes.len(), 2);
        let count = |u: &GraphUnit, r| u.edges.iter().filter(|e| e.rel == r).count();
        assert_eq!(count(&unit, RelationType::OperandOf), 2);
        assert_eq!(count(&unit, RelationType::Precedes), 1);

        let (sub, unit, _) = compile("a+a", &ctx);
        assert_eq!(sub.variable_nodes.len(), 1);
        assert_eq!(count(&unit, RelationType::OperandOf), 2);

        let (sub, _, diags) = compile("C = B * log2(1 + (S)/(N))", &ctx);
        assert_eq!(sub.operator_nodes.len(), 5);
        assert_eq!(sub.variable_nodes.len(), 4);
        assert_eq!(sub.constant_nodes.len(), 1);
        assert_eq!(diags.len(), 4);
    }

    #[test]
    fn definitions_prefer_same_clause() {
        let ctx = DefinitionContext {
            doc_id: "D".into(),
            same_clause: vec![("p1".into(), "where B denotes the channel bandwidth".into())],
            definitions_block: vec![("p0".into(), "B is the occupied bandwidth.".into())],
        };
        let (sub, unit, diags) = compile("B * x", &ctx);
        assert_eq!(sub.def_edges.len(), 1);
        assert_eq!(unit.edges[sub.def_edges[0]].dst, "D#p1");
        assert_eq!(diags.len(), 1);
        assert!(diags[0].message.contains('x'));
    }

    #[test]
    fn subexpressions_rebuild() {
        let (sub, unit, _) = compile("C = B * log2(1 + (S)/(N))", &DefinitionContext::default());
        let g = TypedGraph::merge_units(vec![unit]).unwrap();
        assert_eq!(subexpression_at(&g, &sub.root).unwrap(), shannon());
        let log_node = sub
            .operator_nodes
            .iter()
            .find(|id| g.node_by_id(id).unwrap().text == "log2")
            .unwrap();
        let MathAst::Binary(_, _, rhs) = shannon() else { unreachable!() };
        let MathAst::Binary(_, _, call) = *rhs else { unreachable!() };
        assert_eq!(subexpression_at(&g, log_node).unwrap(), *call);
        assert!(matches!(
            subexpression_at(&g, &sub.variable_nodes[0]),
            Err(FormulaError::NotAnOperator(_))
        ));
    }
}
