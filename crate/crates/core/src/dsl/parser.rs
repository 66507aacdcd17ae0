//! Line-oriented parser for model files.
//!
//! ```text
//! # Lorenz
//! states: x = 1, y = 1, z = 1
//! params: sigma = 10, rho = 28, beta = 2.6666666666666665
//! dx/dt = sigma*(y - x)
//! dy/dt = x*(rho - z) - y
//! dz/dt = x*y - beta*z
//! ```
//!
//! Precedence from tightest: `^` (right associative), unary `-`, `* /`,
//! `+ -`. Default values after `=` in the header lines are optional.

use super::expr::{BinOp, Expr, ExprKind, Func, Span};
use super::{ModelDef, ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    Colon,
    Equals,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Num(v) => format!("number {v}"),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Slash => "'/'".into(),
            Tok::Caret => "'^'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Colon => "':'".into(),
            Tok::Equals => "'='".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        column,
        kind: ParseErrorKind::Syntax,
        message: message.into(),
    }
}

fn lex_line(text: &str, line: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            ':' => Some(Tok::Colon),
            '=' => Some(Tok::Equals),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token {
                tok,
                span: Span { line, column, len: 1 },
            });
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let name: String = chars[start..i].iter().collect();
            out.push(Token {
                tok: Tok::Ident(name),
                span: Span {
                    line,
                    column,
                    len: i - start,
                },
            });
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
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
            let literal: String = chars[start..i].iter().collect();
            let value: f64 = literal
                .parse()
                .map_err(|_| syntax(line, column, format!("malformed number '{literal}'")))?;
            out.push(Token {
                tok: Tok::Num(value),
                span: Span {
                    line,
                    column,
                    len: i - start,
                },
            });
            continue;
        }
        return Err(syntax(line, column, format!("unexpected character '{c}'")));
    }
    Ok(out)
}

fn is_valid_name(name: &str) -> bool {
    name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Scope<'a> {
    states: &'a [String],
    params: &'a [String],
}

struct ExprParser<'a> {
    tokens: &'a [Token],
    pos: usize,
    line: usize,
    end_column: usize,
    scope: &'a Scope<'a>,
}

impl<'a> ExprParser<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn bump(&mut self) -> Option<&'a Token> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    fn eof_error(&self, what: &str) -> ParseError {
        syntax(self.line, self.end_column, format!("unexpected end of line, expected {what}"))
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(t) = self.peek() {
            let op = match t.tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            let span = t.span;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(t) = self.peek() {
            let op = match t.tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::new(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), t.span);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(t) = self.peek() {
            if t.tok == Tok::Minus {
                self.pos += 1;
                let inner = self.unary()?;
                return Ok(Expr::new(ExprKind::Neg(Box::new(inner)), t.span));
            }
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if let Some(t) = self.peek() {
            if t.tok == Tok::Caret {
                self.pos += 1;
                let exponent = self.unary()?;
                return Ok(Expr::new(
                    ExprKind::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)),
                    t.span,
                ));
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(t) = self.bump() else {
            return Err(self.eof_error("an operand"));
        };
        match &t.tok {
            Tok::Num(v) => Ok(Expr::new(ExprKind::Const(*v), t.span)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.close_paren(t)?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if let Some(func) = Func::from_name(name) {
                    match self.peek() {
                        Some(open) if open.tok == Tok::LParen => {
                            self.pos += 1;
                            let arg = self.expr()?;
                            self.close_paren(open)?;
                            return Ok(Expr::new(ExprKind::Call(func, Box::new(arg)), t.span));
                        }
                        _ => {
                            return Err(syntax(
                                t.span.line,
                                t.span.column + t.span.len,
                                format!("function '{name}' must be followed by '('"),
                            ))
                        }
                    }
                }
                let kind = if let Some(i) = self.scope.states.iter().position(|s| s == name) {
                    ExprKind::State(i)
                } else if let Some(i) = self.scope.params.iter().position(|s| s == name) {
                    ExprKind::Param(i)
                } else if name == "t" {
                    ExprKind::Time
                } else {
                    return Err(ParseError {
                        line: t.span.line,
                        column: t.span.column,
                        kind: ParseErrorKind::UnknownIdentifier,
                        message: format!("unknown identifier '{name}'"),
                    });
                };
                Ok(Expr::new(kind, t.span))
            }
            other => Err(syntax(
                t.span.line,
                t.span.column,
                format!("expected an operand, found {}", other.describe()),
            )),
        }
    }

    fn close_paren(&mut self, open: &Token) -> Result<(), ParseError> {
        match self.bump() {
            Some(t) if t.tok == Tok::RParen => Ok(()),
            Some(t) => Err(syntax(
                t.span.line,
                t.span.column,
                format!(
                    "expected ')' to close the parenthesis opened at column {}, found {}",
                    open.span.column,
                    t.tok.describe()
                ),
            )),
            None => Err(syntax(
                self.line,
                self.end_column,
                format!("unclosed parenthesis opened at column {}", open.span.column),
            )),
        }
    }
}

struct Decl {
    name: String,
    default: Option<f64>,
    span: Span,
}

fn parse_decls(tokens: &[Token], line: usize, end_column: usize) -> Result<Vec<Decl>, ParseError> {
    let mut decls = Vec::new();
    let mut i = 0;
    loop {
        let Some(t) = tokens.get(i) else {
            return Err(syntax(line, end_column, "expected a name"));
        };
        let Tok::Ident(name) = &t.tok else {
            return Err(syntax(
                t.span.line,
                t.span.column,
                format!("expected a name, found {}", t.tok.describe()),
            ));
        };
        i += 1;
        let mut default = None;
        if tokens.get(i).is_some_and(|t| t.tok == Tok::Equals) {
            i += 1;
            let mut sign = 1.0;
            if tokens.get(i).is_some_and(|t| t.tok == Tok::Minus) {
                sign = -1.0;
                i += 1;
            }
            match tokens.get(i) {
                Some(Token {
                    tok: Tok::Num(v), ..
                }) => default = Some(sign * v),
                Some(t) => {
                    return Err(syntax(
                        t.span.line,
                        t.span.column,
                        format!("expected a number, found {}", t.tok.describe()),
                    ))
                }
                None => return Err(syntax(line, end_column, "expected a number")),
            }
            i += 1;
        }
        decls.push(Decl {
            name: name.clone(),
            default,
            span: t.span,
        });
        match tokens.get(i) {
            None => return Ok(decls),
            Some(t) if t.tok == Tok::Comma => i += 1,
            Some(t) => {
                return Err(syntax(
                    t.span.line,
                    t.span.column,
                    format!("expected ',' or end of line, found {}", t.tok.describe()),
                ))
            }
        }
    }
}

pub(super) fn parse(text: &str) -> Result<ModelDef, ParseError> {
    let mut lines = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens = lex_line(raw, line)?;
        if !tokens.is_empty() {
            lines.push((line, raw.chars().count() + 1, tokens));
        }
    }

    // Headers first so derivatives may reference names declared later.
    let mut states: Vec<Decl> = Vec::new();
    let mut params: Vec<Decl> = Vec::new();
    let mut derivative_lines = Vec::new();
    for (line, end, tokens) in &lines {
        let header = match (&tokens[0].tok, tokens.get(1).map(|t| &t.tok)) {
            (Tok::Ident(word), Some(Tok::Colon)) if word == "states" || word == "params" => {
                Some(word.as_str())
            }
            _ => None,
        };
        match header {
            Some(word) => {
                let decls = parse_decls(&tokens[2..], *line, *end)?;
                if word == "states" {
                    states.extend(decls);
                } else {
                    params.extend(decls);
                }
            }
            None => derivative_lines.push((*line, *end, tokens)),
        }
    }

    let mut seen: Vec<&Decl> = Vec::new();
    for d in states.iter().chain(&params) {
        let reserved = d.name == "t" || Func::from_name(&d.name).is_some();
        if reserved || !is_valid_name(&d.name) || seen.iter().any(|s| s.name == d.name) {
            let why = if reserved {
                format!("'{}' is reserved", d.name)
            } else {
                format!("'{}' is declared more than once", d.name)
            };
            return Err(ParseError {
                line: d.span.line,
                column: d.span.column,
                kind: ParseErrorKind::Duplicate,
                message: why,
            });
        }
        seen.push(d);
    }
    if states.is_empty() {
        return Err(ParseError {
            line: 1,
            column: 1,
            kind: ParseErrorKind::Syntax,
            message: "missing 'states:' header".into(),
        });
    }

    let state_names: Vec<String> = states.iter().map(|d| d.name.clone()).collect();
    let param_names: Vec<String> = params.iter().map(|d| d.name.clone()).collect();
    let scope = Scope {
        states: &state_names,
        params: &param_names,
    };

    let mut derivatives: Vec<Option<Expr>> = vec![None; state_names.len()];
    for (line, end, tokens) in derivative_lines {
        let (line, end) = (line, end);
        let head = &tokens[0];
        let target = match &head.tok {
            Tok::Ident(word) if word.len() > 1 && word.starts_with('d') => &word[1..],
            other => {
                return Err(syntax(
                    head.span.line,
                    head.span.column,
                    format!("expected a header or 'd<state>/dt = ...', found {}", other.describe()),
                ))
            }
        };
        let expect = |idx: usize, tok: Tok, what: &str| -> Result<(), ParseError> {
            match tokens.get(idx) {
                Some(t) if t.tok == tok => Ok(()),
                Some(t) => Err(syntax(
                    t.span.line,
                    t.span.column,
                    format!("expected {what}, found {}", t.tok.describe()),
                )),
                None => Err(syntax(line, end, format!("expected {what}"))),
            }
        };
        expect(1, Tok::Slash, "'/' in 'd<state>/dt'")?;
        expect(2, Tok::Ident("dt".into()), "'dt'")?;
        expect(3, Tok::Equals, "'='")?;
        let Some(index) = state_names.iter().position(|s| s == target) else {
            return Err(ParseError {
                line: head.span.line,
                column: head.span.column + 1,
                kind: ParseErrorKind::UnknownIdentifier,
                message: format!("derivative of undeclared state '{target}'"),
            });
        };
        if derivatives[index].is_some() {
            return Err(ParseError {
                line: head.span.line,
                column: head.span.column,
                kind: ParseErrorKind::Duplicate,
                message: format!("second definition of d{target}/dt"),
            });
        }
        let mut p = ExprParser {
            tokens: &tokens[4..],
            pos: 0,
            line,
            end_column: end,
            scope: &scope,
        };
        let expr = p.expr()?;
        if let Some(extra) = p.peek() {
            let message = if extra.tok == Tok::RParen {
                "unmatched ')'".to_string()
            } else {
                format!("unexpected {} after expression", extra.tok.describe())
            };
            return Err(syntax(extra.span.line, extra.span.column, message));
        }
        derivatives[index] = Some(expr);
    }

    let mut exprs = Vec::with_capacity(derivatives.len());
    for (i, d) in derivatives.into_iter().enumerate() {
        match d {
            Some(e) => exprs.push(e),
            None => {
                return Err(ParseError {
                    line: states[i].span.line,
                    column: states[i].span.column,
                    kind: ParseErrorKind::MissingDerivative,
                    message: format!("state '{}' has no d{}/dt equation", states[i].name, states[i].name),
                })
            }
        }
    }

    Ok(ModelDef {
        state_names,
        param_names,
        state_defaults: states.iter().map(|d| d.default).collect(),
        param_defaults: params.iter().map(|d| d.default).collect(),
        derivatives: exprs,
    })
}
