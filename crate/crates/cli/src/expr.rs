//! Arithmetic expressions for user-supplied coefficients.
//!
//! Grammar: numbers, the variables `t x x_d u q`, `+ - * /`, unary minus,
//! parentheses and `exp(...)`. Nothing else is accepted; the grammar is kept
//! deliberately small so configs stay declarative.

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
    XDelay,
    U,
    Q,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::X => "x",
            Var::XDelay => "x_d",
            Var::U => "u",
            Var::Q => "q",
        }
    }
}

/// Variable values for one evaluation; unused ones may be left at zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct Vars {
    pub t: f64,
    pub x: f64,
    pub x_d: f64,
    pub u: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Exp(Box<Node>),
    Bin(Op, Box<Node>, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    source: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at offset {}: {}", self.position, self.message)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Sym(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // Exponent part, e.g. 1e-3.
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| ParseError { position: start, message: format!("bad number '{text}'") })?;
            out.push((start, Token::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Token::Ident(src[start..i].to_string())));
        } else if "+-*/()".contains(c) {
            out.push((i, Token::Sym(c)));
            i += 1;
        } else {
            return Err(ParseError { position: i, message: format!("unexpected character '{c}'") });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { position: self.offset(), message: message.into() })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Token::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.product()?;
        loop {
            let op = if self.eat('+') {
                Op::Add
            } else if self.eat('-') {
                Op::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.product()?));
        }
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                Op::Mul
            } else if self.eat('/') {
                Op::Div
            } else {
                return Ok(lhs);
            };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat('+') {
            return self.unary();
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Node::Num(v))
            }
            Some(Token::Sym('(')) => {
                self.pos += 1;
                let inner = self.sum()?;
                if !self.eat(')') {
                    return self.error("expected ')'");
                }
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                let var = match name.as_str() {
                    "t" => Var::T,
                    "x" => Var::X,
                    "x_d" => Var::XDelay,
                    "u" => Var::U,
                    "q" => Var::Q,
                    "exp" => {
                        if !self.eat('(') {
                            return self.error("expected '(' after exp");
                        }
                        let inner = self.sum()?;
                        if !self.eat(')') {
                            return self.error("expected ')'");
                        }
                        return Ok(Node::Exp(Box::new(inner)));
                    }
                    other => {
                        self.pos -= 1;
                        return self.error(format!("unknown name '{other}'"));
                    }
                };
                Ok(Node::Var(var))
            }
            Some(Token::Sym(c)) => self.error(format!("unexpected '{c}'")),
            None => self.error("unexpected end of expression"),
        }
    }
}

fn collect_vars(node: &Node, out: &mut Vec<Var>) {
    match node {
        Node::Num(_) => {}
        Node::Var(v) => {
            if !out.contains(v) {
                out.push(*v)
            }
        }
        Node::Neg(a) | Node::Exp(a) => collect_vars(a, out),
        Node::Bin(_, a, b) => {
            collect_vars(a, out);
            collect_vars(b, out);
        }
    }
}

fn eval(node: &Node, v: &Vars) -> f64 {
    match node {
        Node::Num(c) => *c,
        Node::Var(Var::T) => v.t,
        Node::Var(Var::X) => v.x,
        Node::Var(Var::XDelay) => v.x_d,
        Node::Var(Var::U) => v.u,
        Node::Var(Var::Q) => v.q,
        Node::Neg(a) => -eval(a, v),
        Node::Exp(a) => eval(a, v).exp(),
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, v), eval(b, v));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
                Op::Div => a / b,
            }
        }
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, end: src.len() };
        let root = p.sum()?;
        if p.pos != p.tokens.len() {
            return p.error("trailing input");
        }
        Ok(Expr { root, source: src.to_string() })
    }

    /// Parses and rejects variables outside `allowed`.
    pub fn parse_with(src: &str, allowed: &[Var]) -> Result<Self, ParseError> {
        let e = Self::parse(src)?;
        if let Some(v) = e.variables().into_iter().find(|v| !allowed.contains(v)) {
            let names: Vec<_> = allowed.iter().map(|v| v.name()).collect();
            return Err(ParseError {
                position: 0,
                message: format!("variable '{}' is not allowed here (allowed: {})", v.name(), names.join(", ")),
            });
        }
        Ok(e)
    }

    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        collect_vars(&self.root, &mut out);
        out
    }

    pub fn eval(&self, vars: &Vars) -> f64 {
        eval(&self.root, vars)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}
