//! A small arithmetic expression language in the variables `s` and `x`.
//!
//! Supports `+ - * / ^`, unary minus, numeric literals and the functions
//! `exp`, `ln`, `pow`, `min`, `max`. Expressions are parsed once into a tree
//! and evaluated directly.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    S,
    X,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!("unexpected trailing input in `{src}`")));
        }
        Ok(e)
    }

    pub fn eval(&self, s: f64, x: f64) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::S => s,
            Expr::X => x,
            Expr::Neg(a) => -a.eval(s, x),
            Expr::Add(a, b) => a.eval(s, x) + b.eval(s, x),
            Expr::Sub(a, b) => a.eval(s, x) - b.eval(s, x),
            Expr::Mul(a, b) => a.eval(s, x) * b.eval(s, x),
            Expr::Div(a, b) => a.eval(s, x) / b.eval(s, x),
            Expr::Pow(a, b) => pow(a.eval(s, x), b.eval(s, x)),
            Expr::Exp(a) => a.eval(s, x).exp(),
            Expr::Ln(a) => a.eval(s, x).ln(),
            Expr::Min(a, b) => a.eval(s, x).min(b.eval(s, x)),
            Expr::Max(a, b) => a.eval(s, x).max(b.eval(s, x)),
        }
    }

    pub fn uses_s(&self) -> bool {
        self.any(&|e| matches!(e, Expr::S))
    }

    pub fn uses_x(&self) -> bool {
        self.any(&|e| matches!(e, Expr::X))
    }

    fn any(&self, pred: &dyn Fn(&Expr) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            Expr::Num(_) | Expr::S | Expr::X => false,
            Expr::Neg(a) | Expr::Exp(a) | Expr::Ln(a) => a.any(pred),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => a.any(pred) || b.any(pred),
        }
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b == b.trunc() && b.abs() <= 64.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number `{text}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!(
                "unexpected character `{c}` in `{src}`"
            )));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek_op(&self, op: char) -> bool {
        matches!(self.tokens.get(self.pos), Some(Tok::Op(c)) if *c == op)
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.peek_op(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expr(format!("expected `{op}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.peek_op('+') {
                self.pos += 1;
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.peek_op('-') {
                self.pos += 1;
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.peek_op('*') {
                self.pos += 1;
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.peek_op('/') {
                self.pos += 1;
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_op('-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.peek_op('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_op('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn args(&mut self, n: usize, name: &str) -> Result<Vec<Expr>> {
        self.expect('(')?;
        let mut out = vec![self.expr()?];
        while self.peek_op(',') {
            self.pos += 1;
            out.push(self.expr()?);
        }
        self.expect(')')?;
        if out.len() != n {
            return Err(Error::Expr(format!(
                "`{name}` takes {n} argument(s), got {}",
                out.len()
            )));
        }
        Ok(out)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                match name.as_str() {
                    "s" => Ok(Expr::S),
                    "x" => Ok(Expr::X),
                    "exp" | "ln" => {
                        let mut a = self.args(1, &name)?;
                        let a = Box::new(a.remove(0));
                        Ok(if name == "exp" {
                            Expr::Exp(a)
                        } else {
                            Expr::Ln(a)
                        })
                    }
                    "pow" | "min" | "max" => {
                        let mut a = self.args(2, &name)?;
                        let b = Box::new(a.pop().unwrap());
                        let a = Box::new(a.pop().unwrap());
                        Ok(match name.as_str() {
                            "pow" => Expr::Pow(a, b),
                            "min" => Expr::Min(a, b),
                            _ => Expr::Max(a, b),
                        })
                    }
                    other => Err(Error::Expr(format!("unknown identifier `{other}`"))),
                }
            }
            Some(Tok::Op(c)) => Err(Error::Expr(format!("unexpected `{c}`"))),
            None => Err(Error::Expr("unexpected end of expression".into())),
        }
    }
}
