//! Closed-form scalar expressions over the independent variables.
//!
//! Supports `+ - * /`, unary minus, parentheses, real literals, axis
//! variables and the functions `sin cos exp tanh atan pow`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Number(f64),
    Sym(char),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

/// Splits model or expression text into tokens; `#` starts a comment.
pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            let line_no = li + 1;
            if c == '#' {
                break;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Token { tok: Tok::Ident(s), line: line_no, column });
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
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
                let s: String = chars[start..i].iter().collect();
                let v: f64 = s.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    column,
                    message: format!("malformed number `{s}`"),
                })?;
                out.push(Token { tok: Tok::Number(v), line: line_no, column });
                continue;
            }
            if "()+-*/,;:".contains(c) {
                out.push(Token { tok: Tok::Sym(c), line: line_no, column });
                i += 1;
                continue;
            }
            return Err(Error::Parse { line: line_no, column, message: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Atan,
    Pow,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "atan" => Func::Atan,
            "pow" => Func::Pow,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        if self == Func::Pow {
            2
        } else {
            1
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Atan => "atan",
            Func::Pow => "pow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Parsed expression; variables refer to positions in the variable list it
/// was parsed against.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    /// Parses a standalone expression over the named variables.
    pub fn parse(text: &str, vars: &[&str]) -> Result<Expr> {
        let tokens = tokenize(text)?;
        let mut p = ExprParser { tokens: &tokens, pos: 0, vars };
        let e = p.expr()?;
        if let Some(t) = tokens.get(p.pos) {
            return Err(Error::Parse {
                line: t.line,
                column: t.column,
                message: "unexpected trailing input in expression".into(),
            });
        }
        Ok(e)
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => vars[*i],
            Expr::Neg(e) => -e.eval(vars),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(vars), b.eval(vars));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                }
            }
            Expr::Call(f, args) => {
                let x = args[0].eval(vars);
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Tanh => x.tanh(),
                    Func::Atan => x.atan(),
                    Func::Pow => x.powf(args[1].eval(vars)),
                }
            }
        }
    }

    pub fn is_zero_literal(&self) -> bool {
        matches!(self, Expr::Num(v) if *v == 0.0)
    }

    /// Renders the expression back to source form using `vars` for names.
    pub fn display<'a>(&'a self, vars: &'a [String]) -> impl fmt::Display + 'a {
        ExprDisplay { expr: self, vars }
    }
}

struct ExprDisplay<'a> {
    expr: &'a Expr,
    vars: &'a [String],
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vars = self.vars;
        let sub = |e| ExprDisplay { expr: e, vars };
        match self.expr {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(i) => write!(f, "{}", self.vars[*i]),
            Expr::Neg(e) => write!(f, "(-{})", sub(e)),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({} {s} {})", sub(a), sub(b))
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{}", sub(a))?;
                }
                write!(f, ")")
            }
        }
    }
}

pub(crate) struct ExprParser<'t, 'v> {
    pub tokens: &'t [Token],
    pub pos: usize,
    pub vars: &'v [&'v str],
}

impl ExprParser<'_, '_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn error_here(&self, message: impl Into<String>) -> Error {
        let (line, column) = match self.tokens.get(self.pos).or_else(|| self.tokens.last()) {
            Some(t) => (t.line, t.column),
            None => (1, 1),
        };
        Error::Parse { line, column, message: message.into() }
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
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
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Number(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Sym('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error_here("expected `)`"));
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if let Some(func) = Func::from_name(&name) {
                    self.pos += 1;
                    if !self.eat('(') {
                        return Err(self.error_here(format!("expected `(` after `{name}`")));
                    }
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    if !self.eat(')') {
                        return Err(self.error_here("expected `)`"));
                    }
                    if args.len() != func.arity() {
                        return Err(self.error_here(format!(
                            "`{name}` takes {} argument(s), got {}",
                            func.arity(),
                            args.len()
                        )));
                    }
                    return Ok(Expr::Call(func, args));
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => {
                        self.pos += 1;
                        Ok(Expr::Var(i))
                    }
                    None => Err(self.error_here(format!("unknown name `{name}` in expression"))),
                }
            }
            Some(Tok::Sym(c)) => Err(self.error_here(format!("unexpected `{c}` in expression"))),
            None => Err(self.error_here("unexpected end of expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_functions() {
        let e = Expr::parse("1 + 2*x - -3/t", &["x", "t"]).unwrap();
        assert_eq!(e.eval(&[2.0, 1.5]), 1.0 + 4.0 + 2.0);
        let e = Expr::parse("0.42*cos(1.0*t)", &["t"]).unwrap();
        assert_eq!(e.eval(&[0.3]), 0.42 * (0.3f64).cos());
        let e = Expr::parse("pow(x, 3) + exp(-(x+2)*(x+2)) + tanh(atan(sin(x)))", &["x"]).unwrap();
        let x: f64 = 0.7;
        let want = x.powf(3.0) + (-(x + 2.0) * (x + 2.0)).exp() + x.sin().atan().tanh();
        assert_eq!(e.eval(&[x]), want);
        let e = Expr::parse("2.5e-1 * .5e1", &[]).unwrap();
        assert_eq!(e.eval(&[]), 1.25);
    }

    #[test]
    fn rejects_unknown_names_and_bad_syntax() {
        assert!(matches!(Expr::parse("y + 1", &["x"]), Err(Error::Parse { .. })));
        assert!(Expr::parse("sqrt(x)", &["x"]).is_err());
        assert!(Expr::parse("pow(x)", &["x"]).is_err());
        assert!(Expr::parse("(x + 1", &["x"]).is_err());
        assert!(Expr::parse("x ^ 2", &["x"]).is_err());
        assert!(Expr::parse("x x", &["x"]).is_err());
    }

    #[test]
    fn display_round_trips() {
        let vars = vec!["x".to_string(), "t".to_string()];
        let names: Vec<&str> = vars.iter().map(String::as_str).collect();
        let e = Expr::parse("-x*(1 - t)/pow(2, t) + cos(x)", &names).unwrap();
        let again = Expr::parse(&e.display(&vars).to_string(), &names).unwrap();
        assert_eq!(e, again);
    }
}
