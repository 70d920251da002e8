//! Lexer and recursive-descent parser for the coefficient language.
//!
//! ```text
//! expr  := term (("+" | "-") term)*
//! term  := unary (("*" | "/") unary)*
//! unary := "-" unary | power
//! power := atom ("^" unary)?
//! atom  := number | ident | ident "(" expr ")" | "(" expr ")"
//! ```
//!
//! Both ASCII `-` and U+2212 `−` are accepted as the minus sign.

use super::{BinOp, Func, Node, NodeKind, ParseError};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(x) => format!("number {x}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    start: usize,
    end: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let single = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = single {
            i += 1;
            out.push(Token { tok, start, end: i });
            continue;
        }
        // U+2212 MINUS SIGN, UTF-8 e2 88 92
        if src[i..].starts_with('\u{2212}') {
            i += '\u{2212}'.len_utf8();
            out.push(Token { tok: Tok::Minus, start, end: i });
            continue;
        }
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                } else {
                    return Err(ParseError::Syntax {
                        offset: j,
                        found: describe_char(src, j),
                        expected: vec!["exponent digits".into()],
                    });
                }
            }
            let text = &src[start..i];
            let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
                offset: start,
                found: format!("`{text}`"),
                expected: vec!["number".into()],
            })?;
            out.push(Token { tok: Tok::Num(value), start, end: i });
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(src[start..i].to_string()), start, end: i });
            continue;
        }
        return Err(ParseError::Syntax {
            offset: start,
            found: describe_char(src, start),
            expected: vec!["number".into(), "identifier".into(), "`(`".into(), "`-`".into()],
        });
    }
    out.push(Token { tok: Tok::End, start: src.len(), end: src.len() });
    Ok(out)
}

fn describe_char(src: &str, offset: usize) -> String {
    match src[offset..].chars().next() {
        Some(ch) => format!("`{ch}`"),
        None => "end of input".into(),
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    n: usize,
    // tokens tried (and rejected) at the current position
    expected: Vec<&'static str>,
}

pub(super) fn parse_ast(src: &str, n: usize) -> Result<Node, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, n, expected: Vec::new() };
    let node = p.expr()?;
    if !p.check(&Tok::End, "end of input") {
        return Err(p.syntax_error());
    }
    Ok(node)
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        self.expected.clear();
        t
    }

    fn check(&mut self, tok: &Tok, desc: &'static str) -> bool {
        if std::mem::discriminant(&self.peek().tok) == std::mem::discriminant(tok) {
            true
        } else {
            if !self.expected.contains(&desc) {
                self.expected.push(desc);
            }
            false
        }
    }

    fn syntax_error(&self) -> ParseError {
        let t = self.peek();
        ParseError::Syntax {
            offset: t.start,
            found: t.tok.describe(),
            expected: self.expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.check(&Tok::Plus, "`+`") {
                BinOp::Add
            } else if self.check(&Tok::Minus, "`-`") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            self.advance();
            let rhs = self.term()?;
            let span = (lhs.span.0, rhs.span.1);
            lhs = Node { kind: NodeKind::Bin(op, Box::new(lhs), Box::new(rhs)), span };
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.check(&Tok::Star, "`*`") {
                BinOp::Mul
            } else if self.check(&Tok::Slash, "`/`") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            self.advance();
            let rhs = self.unary()?;
            let span = (lhs.span.0, rhs.span.1);
            lhs = Node { kind: NodeKind::Bin(op, Box::new(lhs), Box::new(rhs)), span };
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.check(&Tok::Minus, "`-`") {
            let start = self.advance().start;
            let inner = self.unary()?;
            let span = (start, inner.span.1);
            return Ok(Node { kind: NodeKind::Neg(Box::new(inner)), span });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.check(&Tok::Caret, "`^`") {
            self.advance();
            let exp = self.unary()?;
            let span = (base.span.0, exp.span.1);
            return Ok(Node { kind: NodeKind::Pow(Box::new(base), Box::new(exp)), span });
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let tok = self.peek().clone();
        match tok.tok {
            Tok::Num(x) => {
                self.advance();
                Ok(Node { kind: NodeKind::Num(x), span: (tok.start, tok.end) })
            }
            Tok::LParen => {
                self.advance();
                let inner = self.expr()?;
                if !self.check(&Tok::RParen, "`)`") {
                    return Err(self.syntax_error());
                }
                let close = self.advance();
                Ok(Node { kind: inner.kind, span: (tok.start, close.end) })
            }
            Tok::Ident(ref name) => {
                self.advance();
                if let Some(func) = Func::from_name(name) {
                    if !self.check(&Tok::LParen, "`(`") {
                        return Err(ParseError::Arity { offset: tok.start, name: name.clone(), expected: 1, found: 0 });
                    }
                    self.advance();
                    let mut args = Vec::new();
                    if self.check(&Tok::RParen, "`)`") {
                        return Err(ParseError::Arity { offset: tok.start, name: name.clone(), expected: 1, found: 0 });
                    }
                    loop {
                        args.push(self.expr()?);
                        if self.check(&Tok::Comma, "`,`") {
                            self.advance();
                            continue;
                        }
                        if !self.check(&Tok::RParen, "`)`") {
                            return Err(self.syntax_error());
                        }
                        break;
                    }
                    let close = self.advance();
                    if args.len() != 1 {
                        return Err(ParseError::Arity {
                            offset: tok.start,
                            name: name.clone(),
                            expected: 1,
                            found: args.len(),
                        });
                    }
                    let arg = args.pop().expect("one argument");
                    return Ok(Node { kind: NodeKind::Call(func, Box::new(arg)), span: (tok.start, close.end) });
                }
                let kind = self.variable(name, tok.start)?;
                if self.check(&Tok::LParen, "`(`") {
                    return Err(ParseError::UnknownIdentifier { offset: tok.start, name: format!("{name}(…)") });
                }
                Ok(Node { kind, span: (tok.start, tok.end) })
            }
            _ => {
                self.check(&Tok::Num(0.0), "number");
                self.check(&Tok::Ident(String::new()), "identifier");
                self.check(&Tok::LParen, "`(`");
                self.check(&Tok::Minus, "`-`");
                Err(self.syntax_error())
            }
        }
    }

    fn variable(&self, name: &str, offset: usize) -> Result<NodeKind, ParseError> {
        if name == "t" {
            return Ok(NodeKind::T);
        }
        if let Some(idx) = name.strip_prefix('q') {
            if !idx.is_empty() && idx.bytes().all(|b| b.is_ascii_digit()) && !idx.starts_with('0') {
                if let Ok(i) = idx.parse::<usize>() {
                    if (1..=self.n).contains(&i) {
                        return Ok(NodeKind::Q(i - 1));
                    }
                }
            }
        }
        Err(ParseError::UnknownIdentifier { offset, name: name.to_string() })
    }
}
