//! Parser for `.pproc` files: a header declaring purpose, input type and
//! view, and output kind, then a body expression.

use std::collections::BTreeMap;

use super::{BinOp, DeclaredView, Expr, OutputKind, ProcLangError, Processing};
use crate::pdtype::{ScalarType, ValidatedTypeDecl};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Float(f64),
    Str(String),
    Ident(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Dot,
    Eq,       // =
    Plus,
    Minus,
    Star,
    Slash,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Int(i) => format!("`{i}`"),
            Tok::Float(f) => format!("`{f}`"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Ident(w) => format!("`{w}`"),
            Tok::Eof => "end of input".into(),
            other => format!("{other:?}"),
        }
    }
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
}

impl<'a> Lexer<'a> {
    fn lex(text: &'a str, start_line: u32) -> Result<Vec<(Tok, u32)>, ProcLangError> {
        let mut lexer = Lexer {
            chars: text.chars().peekable(),
            line: start_line,
        };
        let mut out = Vec::new();
        loop {
            let (tok, line) = lexer.next_token()?;
            let end = tok == Tok::Eof;
            out.push((tok, line));
            if end {
                return Ok(out);
            }
        }
    }

    fn next_token(&mut self) -> Result<(Tok, u32), ProcLangError> {
        loop {
            match self.chars.peek() {
                None => return Ok((Tok::Eof, self.line)),
                Some('\n') => {
                    self.chars.next();
                    self.line += 1;
                }
                Some(c) if c.is_whitespace() => {
                    self.chars.next();
                }
                Some('/') => {
                    let mut ahead = self.chars.clone();
                    ahead.next();
                    if ahead.peek() == Some(&'/') {
                        while let Some(&c) = self.chars.peek() {
                            if c == '\n' {
                                break;
                            }
                            self.chars.next();
                        }
                    } else {
                        self.chars.next();
                        return Ok((Tok::Slash, self.line));
                    }
                }
                Some(_) => break,
            }
        }
        let line = self.line;
        let c = *self.chars.peek().unwrap();
        let tok = match c {
            '(' => self.single(Tok::LParen),
            ')' => self.single(Tok::RParen),
            '{' => self.single(Tok::LBrace),
            '}' => self.single(Tok::RBrace),
            ',' => self.single(Tok::Comma),
            ':' => self.single(Tok::Colon),
            '.' => self.single(Tok::Dot),
            '+' => self.single(Tok::Plus),
            '-' => self.single(Tok::Minus),
            '*' => self.single(Tok::Star),
            '=' => {
                self.chars.next();
                if self.chars.peek() == Some(&'=') {
                    self.chars.next();
                    Tok::EqEq
                } else {
                    Tok::Eq
                }
            }
            '!' => {
                self.chars.next();
                if self.chars.peek() == Some(&'=') {
                    self.chars.next();
                    Tok::NotEq
                } else {
                    return Err(ProcLangError::Syntax {
                        line,
                        expected: "`!=`".into(),
                        found: "`!`".into(),
                    });
                }
            }
            '<' => {
                self.chars.next();
                if self.chars.peek() == Some(&'=') {
                    self.chars.next();
                    Tok::Le
                } else {
                    Tok::Lt
                }
            }
            '>' => {
                self.chars.next();
                if self.chars.peek() == Some(&'=') {
                    self.chars.next();
                    Tok::Ge
                } else {
                    Tok::Gt
                }
            }
            '"' => {
                self.chars.next();
                let mut s = String::new();
                loop {
                    match self.chars.next() {
                        None | Some('\n') => {
                            return Err(ProcLangError::Syntax {
                                line,
                                expected: "closing `\"`".into(),
                                found: "end of line".into(),
                            })
                        }
                        Some('"') => break,
                        Some('\\') => match self.chars.next() {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some(c @ ('"' | '\\')) => s.push(c),
                            _ => {
                                return Err(ProcLangError::Syntax {
                                    line,
                                    expected: "escape `\\n`, `\\t`, `\\\"` or `\\\\`".into(),
                                    found: "other escape".into(),
                                })
                            }
                        },
                        Some(c) => s.push(c),
                    }
                }
                Tok::Str(s)
            }
            c if c.is_ascii_digit() => {
                let mut num = String::new();
                let mut is_float = false;
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_digit() {
                        num.push(c);
                        self.chars.next();
                    } else if c == '.' {
                        // A digit must follow for this to be a float literal;
                        // otherwise the dot belongs to something else.
                        let mut ahead = self.chars.clone();
                        ahead.next();
                        match ahead.peek() {
                            Some(d) if d.is_ascii_digit() => {
                                is_float = true;
                                num.push(c);
                                self.chars.next();
                            }
                            _ => break,
                        }
                    } else {
                        break;
                    }
                }
                if is_float {
                    Tok::Float(num.parse().map_err(|_| ProcLangError::Syntax {
                        line,
                        expected: "float literal".into(),
                        found: format!("`{num}`"),
                    })?)
                } else {
                    Tok::Int(num.parse().map_err(|_| ProcLangError::Syntax {
                        line,
                        expected: "integer literal".into(),
                        found: format!("`{num}`"),
                    })?)
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut word = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        word.push(c);
                        self.chars.next();
                    } else {
                        break;
                    }
                }
                Tok::Ident(word)
            }
            other => {
                return Err(ProcLangError::Syntax {
                    line,
                    expected: "expression".into(),
                    found: format!("`{other}`"),
                })
            }
        };
        Ok((tok, line))
    }

    fn single(&mut self, tok: Tok) -> Tok {
        self.chars.next();
        tok
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, u32)>,
    pos: usize,
    input_decl: &'a ValidatedTypeDecl,
    catalog: &'a BTreeMap<String, ValidatedTypeDecl>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn line(&self) -> u32 {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: &str) -> ProcLangError {
        ProcLangError::Syntax {
            line: self.line(),
            expected: expected.into(),
            found: self.peek().describe(),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ProcLangError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.err(expected))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ProcLangError> {
        match self.peek() {
            Tok::Ident(w) if w == kw => {
                self.bump();
                Ok(())
            }
            _ => Err(self.err(&format!("`{kw}`"))),
        }
    }

    fn ident(&mut self, expected: &str) -> Result<String, ProcLangError> {
        match self.peek().clone() {
            Tok::Ident(w) => {
                self.bump();
                Ok(w)
            }
            _ => Err(self.err(expected)),
        }
    }

    fn check_input_field(&self, field: &str) -> Result<(), ProcLangError> {
        if self.input_decl.field(field).is_none() {
            return Err(ProcLangError::UnknownField {
                type_name: self.input_decl.name.clone(),
                field: field.to_string(),
            });
        }
        Ok(())
    }

    // Precedence, loosest first: or, and, comparison, additive,
    // multiplicative, unary, primary. `if`, `let` parse at the top.
    fn expr(&mut self) -> Result<Expr, ProcLangError> {
        match self.peek() {
            Tok::Ident(w) if w == "if" => {
                self.bump();
                let cond = self.expr()?;
                self.expect_keyword("then")?;
                let then = self.expr()?;
                self.expect_keyword("else")?;
                let els = self.expr()?;
                Ok(Expr::If {
                    cond: Box::new(cond),
                    then: Box::new(then),
                    els: Box::new(els),
                })
            }
            Tok::Ident(w) if w == "let" => {
                self.bump();
                let name = self.ident("binding name")?;
                self.expect(Tok::Eq, "`=`")?;
                let value = self.expr()?;
                self.expect_keyword("in")?;
                let body = self.expr()?;
                Ok(Expr::Let {
                    name,
                    value: Box::new(value),
                    body: Box::new(body),
                })
            }
            _ => self.or_expr(),
        }
    }

    fn or_expr(&mut self) -> Result<Expr, ProcLangError> {
        let mut lhs = self.and_expr()?;
        while matches!(self.peek(), Tok::Ident(w) if w == "or") {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::Binary(BinOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ProcLangError> {
        let mut lhs = self.cmp_expr()?;
        while matches!(self.peek(), Tok::Ident(w) if w == "and") {
            self.bump();
            let rhs = self.cmp_expr()?;
            lhs = Expr::Binary(BinOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn cmp_expr(&mut self) -> Result<Expr, ProcLangError> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            Tok::EqEq => BinOp::Eq,
            Tok::NotEq => BinOp::Ne,
            Tok::Lt => BinOp::Lt,
            Tok::Le => BinOp::Le,
            Tok::Gt => BinOp::Gt,
            Tok::Ge => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add_expr()?;
        Ok(Expr::Binary(op, Box::new(lhs), Box::new(rhs)))
    }

    fn add_expr(&mut self) -> Result<Expr, ProcLangError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul_expr()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, ProcLangError> {
        let mut lhs = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary_expr()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary_expr(&mut self) -> Result<Expr, ProcLangError> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.unary_expr()?)))
            }
            Tok::Ident(w) if w == "not" => {
                self.bump();
                Ok(Expr::Not(Box::new(self.unary_expr()?)))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ProcLangError> {
        match self.peek().clone() {
            Tok::Int(i) => {
                self.bump();
                Ok(Expr::Int(i))
            }
            Tok::Float(f) => {
                self.bump();
                Ok(Expr::Float(f))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Str(s))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(w) => match w.as_str() {
                "true" => {
                    self.bump();
                    Ok(Expr::Bool(true))
                }
                "false" => {
                    self.bump();
                    Ok(Expr::Bool(false))
                }
                "in" => {
                    self.bump();
                    self.expect(Tok::Dot, "`.` after `in`")?;
                    let field = self.ident("field name")?;
                    self.check_input_field(&field)?;
                    Ok(Expr::Input(field))
                }
                "has" => {
                    self.bump();
                    self.expect(Tok::LParen, "`(`")?;
                    let field = self.ident("field name")?;
                    self.check_input_field(&field)?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Expr::Has(field))
                }
                "current_year" => {
                    self.bump();
                    self.expect(Tok::LParen, "`(`")?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(Expr::CurrentYear)
                }
                "fail" => {
                    self.bump();
                    if *self.peek() == Tok::LParen {
                        self.bump();
                        let msg = match self.peek().clone() {
                            Tok::Str(s) => {
                                self.bump();
                                s
                            }
                            _ => return Err(self.err("failure message string")),
                        };
                        self.expect(Tok::RParen, "`)`")?;
                        Ok(Expr::Fail(msg))
                    } else {
                        Ok(Expr::Fail("processing failed".into()))
                    }
                }
                "new" => {
                    self.bump();
                    let type_name = self.ident("type name")?;
                    let decl = self
                        .catalog
                        .get(&type_name)
                        .ok_or_else(|| ProcLangError::UnknownType(type_name.clone()))?
                        .clone();
                    self.expect(Tok::LBrace, "`{`")?;
                    let mut fields = Vec::new();
                    loop {
                        let field = self.ident("field name")?;
                        if decl.field(&field).is_none() {
                            return Err(ProcLangError::UnknownField {
                                type_name: type_name.clone(),
                                field,
                            });
                        }
                        self.expect(Tok::Colon, "`:`")?;
                        let value = self.expr()?;
                        fields.push((field, value));
                        match self.peek() {
                            Tok::Comma => {
                                self.bump();
                            }
                            Tok::RBrace => {
                                self.bump();
                                break;
                            }
                            _ => return Err(self.err("`,` or `}`")),
                        }
                    }
                    Ok(Expr::New { type_name, fields })
                }
                _ => {
                    self.bump();
                    Ok(Expr::Var(w))
                }
            },
            _ => Err(self.err("expression")),
        }
    }
}

/// Parse one `.pproc` source. The header is `purpose:`, `input:` and
/// `output:` lines in any order before the body; a missing purpose is a
/// hard rejection.
pub fn parse_processing(
    name: &str,
    text: &str,
    catalog: &BTreeMap<String, ValidatedTypeDecl>,
) -> Result<Processing, ProcLangError> {
    let mut purpose: Option<String> = None;
    let mut input: Option<(String, DeclaredView)> = None;
    let mut output: Option<OutputKind> = None;

    let mut body_start_line = 1u32;
    let mut body_text = String::new();
    let mut in_header = true;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx as u32 + 1;
        if in_header {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with("//") {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("purpose:") {
                purpose = Some(rest.trim().to_string());
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("input:") {
                input = Some(parse_input_header(rest.trim(), lineno)?);
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix("output:") {
                output = Some(parse_output_header(rest.trim(), lineno)?);
                continue;
            }
            in_header = false;
            body_start_line = lineno;
        }
        body_text.push_str(line);
        body_text.push('\n');
    }

    let purpose = purpose.filter(|p| !p.is_empty()).ok_or(ProcLangError::MissingPurpose)?;
    let (input_type, declared_view) = input.ok_or_else(|| ProcLangError::Syntax {
        line: 1,
        expected: "`input:` header".into(),
        found: "none".into(),
    })?;
    let output = output.ok_or_else(|| ProcLangError::Syntax {
        line: 1,
        expected: "`output:` header".into(),
        found: "none".into(),
    })?;

    let input_decl = catalog
        .get(&input_type)
        .ok_or_else(|| ProcLangError::UnknownType(input_type.clone()))?;
    if let DeclaredView::View(view) = &declared_view {
        if input_decl.view(view).is_none() {
            return Err(ProcLangError::UnknownView {
                type_name: input_type.clone(),
                view: view.clone(),
            });
        }
    }
    if let OutputKind::Pd(t) = &output {
        if !catalog.contains_key(t) {
            return Err(ProcLangError::UnknownType(t.clone()));
        }
    }

    let toks = Lexer::lex(&body_text, body_start_line)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        input_decl,
        catalog,
    };
    let body = parser.expr()?;
    if *parser.peek() != Tok::Eof {
        return Err(parser.err("end of input"));
    }

    let accessed = super::static_field_analysis(&body);
    Ok(Processing {
        name: name.to_string(),
        purpose,
        input_type,
        declared_view,
        output,
        body,
        accessed,
        approved: false,
    })
}

fn parse_input_header(text: &str, line: u32) -> Result<(String, DeclaredView), ProcLangError> {
    let mut parts = text.split_whitespace();
    let type_name = parts
        .next()
        .ok_or_else(|| ProcLangError::Syntax {
            line,
            expected: "input type name".into(),
            found: "nothing".into(),
        })?
        .to_string();
    let view = match (parts.next(), parts.next(), parts.next()) {
        (None, _, _) | (Some("all"), None, _) => DeclaredView::All,
        (Some("view"), Some(v), None) => DeclaredView::View(v.to_string()),
        _ => {
            return Err(ProcLangError::Syntax {
                line,
                expected: "`<type> [all | view <name>]`".into(),
                found: format!("`{text}`"),
            })
        }
    };
    Ok((type_name, view))
}

fn parse_output_header(text: &str, line: u32) -> Result<OutputKind, ProcLangError> {
    let mut parts = text.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("int"), None, _) => Ok(OutputKind::Scalar(ScalarType::Int)),
        (Some("float"), None, _) => Ok(OutputKind::Scalar(ScalarType::Float)),
        (Some("string"), None, _) => Ok(OutputKind::Scalar(ScalarType::String)),
        (Some("bool"), None, _) => Ok(OutputKind::Scalar(ScalarType::Bool)),
        (Some("pd"), Some(t), None) => Ok(OutputKind::Pd(t.to_string())),
        _ => Err(ProcLangError::Syntax {
            line,
            expected: "`int`, `float`, `string`, `bool` or `pd <type>`".into(),
            found: format!("`{text}`"),
        }),
    }
}
