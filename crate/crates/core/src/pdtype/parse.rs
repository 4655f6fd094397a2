//! Lexer and recursive-descent parser for `.pdt` type declaration files.

use std::collections::{BTreeMap, BTreeSet};

use super::{
    Duration, DurationUnit, FieldDecl, Grant, Origin, PdTypeError, ScalarType, Sensitivity,
    TypeDecl, ViewDecl,
};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    // Identifiers, keywords, durations and collection descriptors all lex
    // as words; the parser decides what shape is acceptable where.
    Word(String),
    LBrace,
    RBrace,
    Colon,
    Semi,
    Comma,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Semi => "`;`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: u32,
    col: u32,
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '/' | '-')
}

fn lex(text: &str) -> Result<Vec<Spanned>, PdTypeError> {
    let mut out = Vec::new();
    let mut line = 1u32;
    let mut col = 1u32;
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '\n' => {
                chars.next();
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => {
                chars.next();
                col += 1;
            }
            '/' if {
                let mut ahead = chars.clone();
                ahead.next();
                ahead.peek() == Some(&'/')
            } =>
            {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            '{' | '}' | ':' | ';' | ',' => {
                let tok = match c {
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    ':' => Tok::Colon,
                    ';' => Tok::Semi,
                    _ => Tok::Comma,
                };
                out.push(Spanned { tok, line, col });
                chars.next();
                col += 1;
            }
            c if is_word_char(c) => {
                let (start_line, start_col) = (line, col);
                let mut word = String::new();
                while let Some(&c) = chars.peek() {
                    if !is_word_char(c) {
                        break;
                    }
                    word.push(c);
                    chars.next();
                    col += 1;
                }
                out.push(Spanned {
                    tok: Tok::Word(word),
                    line: start_line,
                    col: start_col,
                });
            }
            other => {
                return Err(PdTypeError::Syntax {
                    line,
                    col,
                    expected: "identifier or punctuation".into(),
                    found: format!("`{other}`"),
                });
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: &str) -> PdTypeError {
        let t = self.peek();
        PdTypeError::Syntax {
            line: t.line,
            col: t.col,
            expected: expected.into(),
            found: t.tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<Spanned, PdTypeError> {
        if self.peek().tok == tok {
            Ok(self.bump())
        } else {
            Err(self.err(expected))
        }
    }

    fn word(&mut self, expected: &str) -> Result<(String, u32), PdTypeError> {
        match self.peek().tok.clone() {
            Tok::Word(w) => {
                let line = self.peek().line;
                self.bump();
                Ok((w, line))
            }
            _ => Err(self.err(expected)),
        }
    }

    /// A word that is a plain identifier: letters, digits, underscore,
    /// not starting with a digit.
    fn ident(&mut self, expected: &str) -> Result<(String, u32), PdTypeError> {
        let (line, col) = (self.peek().line, self.peek().col);
        let (w, wline) = self.word(expected)?;
        let ok = w
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
            && !w.starts_with(|c: char| c.is_ascii_digit());
        if ok {
            Ok((w, wline))
        } else {
            Err(PdTypeError::Syntax {
                line,
                col,
                expected: expected.into(),
                found: format!("`{w}`"),
            })
        }
    }

    fn type_decl(&mut self) -> Result<TypeDecl, PdTypeError> {
        self.keyword("type")?;
        let (name, _) = self.ident("type name")?;
        self.expect(Tok::LBrace, "`{`")?;

        let mut fields: Vec<FieldDecl> = Vec::new();
        let mut views: Vec<ViewDecl> = Vec::new();
        let mut consent: BTreeMap<String, Grant> = BTreeMap::new();
        let mut collection: BTreeMap<String, String> = BTreeMap::new();
        let mut origin = Origin::Subject;
        let mut ttl = Duration {
            magnitude: 1,
            unit: DurationUnit::Year,
        };
        let mut sensitivity = Sensitivity::High;

        loop {
            match self.peek().tok.clone() {
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Word(w) => match w.as_str() {
                    "fields" => {
                        self.bump();
                        fields = self.fields_block()?;
                    }
                    "view" => {
                        self.bump();
                        views.push(self.view_block(&views)?);
                    }
                    "consent" => {
                        self.bump();
                        consent = self.consent_block()?;
                    }
                    "collection" => {
                        self.bump();
                        collection = self.collection_block()?;
                    }
                    "origin" => {
                        self.bump();
                        self.expect(Tok::Colon, "`:`")?;
                        let (v, line) = self.word("origin kind")?;
                        origin = match v.as_str() {
                            "subject" => Origin::Subject,
                            "sysadmin" => Origin::Sysadmin,
                            "third_party" => Origin::ThirdParty,
                            _ => {
                                return Err(PdTypeError::Syntax {
                                    line,
                                    col: 0,
                                    expected: "`subject`, `sysadmin` or `third_party`".into(),
                                    found: format!("`{v}`"),
                                })
                            }
                        };
                        self.expect(Tok::Semi, "`;`")?;
                    }
                    "age" => {
                        self.bump();
                        self.expect(Tok::Colon, "`:`")?;
                        let (v, line) = self.word("duration like `1Y`")?;
                        ttl = duration_from_word(&v, line)?;
                        self.expect(Tok::Semi, "`;`")?;
                    }
                    "sensitivity" => {
                        self.bump();
                        self.expect(Tok::Colon, "`:`")?;
                        let (v, line) = self.word("sensitivity level")?;
                        sensitivity = match v.as_str() {
                            "low" => Sensitivity::Low,
                            "medium" => Sensitivity::Medium,
                            "high" => Sensitivity::High,
                            _ => {
                                return Err(PdTypeError::Syntax {
                                    line,
                                    col: 0,
                                    expected: "`low`, `medium` or `high`".into(),
                                    found: format!("`{v}`"),
                                })
                            }
                        };
                        self.expect(Tok::Semi, "`;`")?;
                    }
                    _ => {
                        return Err(self.err(
                            "`fields`, `view`, `consent`, `collection`, `origin`, `age` or `sensitivity`",
                        ))
                    }
                },
                _ => {
                    return Err(self.err("block keyword or `}`"));
                }
            }
        }

        views.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(TypeDecl {
            name,
            fields,
            views,
            default_consent: consent,
            collection,
            origin,
            ttl,
            sensitivity,
        })
    }

    fn keyword(&mut self, kw: &str) -> Result<(), PdTypeError> {
        match &self.peek().tok {
            Tok::Word(w) if w == kw => {
                self.bump();
                Ok(())
            }
            _ => Err(self.err(&format!("`{kw}`"))),
        }
    }

    fn fields_block(&mut self) -> Result<Vec<FieldDecl>, PdTypeError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut fields: Vec<FieldDecl> = Vec::new();
        loop {
            let (name, line) = self.ident("field name")?;
            if fields.iter().any(|f| f.name == name) {
                return Err(PdTypeError::DuplicateName {
                    kind: "field",
                    name,
                    line,
                });
            }
            self.expect(Tok::Colon, "`:`")?;
            let (ty_word, ty_line) = self.word("scalar type")?;
            let ty = match ty_word.as_str() {
                "string" => ScalarType::String,
                "int" => ScalarType::Int,
                "float" => ScalarType::Float,
                "bool" => ScalarType::Bool,
                "date" => ScalarType::Date,
                _ => {
                    return Err(PdTypeError::Syntax {
                        line: ty_line,
                        col: 0,
                        expected: "`string`, `int`, `float`, `bool` or `date`".into(),
                        found: format!("`{ty_word}`"),
                    })
                }
            };
            fields.push(FieldDecl { name, ty });
            match self.peek().tok {
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
        self.expect(Tok::Semi, "`;`")?;
        Ok(fields)
    }

    fn view_block(&mut self, existing: &[ViewDecl]) -> Result<ViewDecl, PdTypeError> {
        let (name, line) = self.ident("view name")?;
        if existing.iter().any(|v| v.name == name) {
            return Err(PdTypeError::DuplicateName {
                kind: "view",
                name,
                line,
            });
        }
        self.expect(Tok::LBrace, "`{`")?;
        let mut members = BTreeSet::new();
        loop {
            let (member, _) = self.ident("field name")?;
            members.insert(member);
            match self.peek().tok {
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
        self.expect(Tok::Semi, "`;`")?;
        Ok(ViewDecl { name, members })
    }

    fn consent_block(&mut self) -> Result<BTreeMap<String, Grant>, PdTypeError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut consent = BTreeMap::new();
        if self.peek().tok == Tok::RBrace {
            self.bump();
            self.expect(Tok::Semi, "`;`")?;
            return Ok(consent);
        }
        loop {
            let (purpose, line) = self.ident("purpose name")?;
            if consent.contains_key(&purpose) {
                return Err(PdTypeError::DuplicateName {
                    kind: "purpose",
                    name: purpose,
                    line,
                });
            }
            self.expect(Tok::Colon, "`:`")?;
            let (grant_word, _) = self.ident("`all`, `none` or a view name")?;
            let grant = match grant_word.as_str() {
                "all" => Grant::All,
                "none" => Grant::None,
                view => Grant::View(view.to_string()),
            };
            consent.insert(purpose, grant);
            match self.peek().tok {
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
        self.expect(Tok::Semi, "`;`")?;
        Ok(consent)
    }

    fn collection_block(&mut self) -> Result<BTreeMap<String, String>, PdTypeError> {
        self.expect(Tok::LBrace, "`{`")?;
        let mut collection = BTreeMap::new();
        if self.peek().tok == Tok::RBrace {
            self.bump();
            self.expect(Tok::Semi, "`;`")?;
            return Ok(collection);
        }
        loop {
            let (source, line) = self.ident("collection source name")?;
            if collection.contains_key(&source) {
                return Err(PdTypeError::DuplicateName {
                    kind: "collection source",
                    name: source,
                    line,
                });
            }
            self.expect(Tok::Colon, "`:`")?;
            let (descriptor, _) = self.word("collection descriptor")?;
            collection.insert(source, descriptor);
            match self.peek().tok {
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
        self.expect(Tok::Semi, "`;`")?;
        Ok(collection)
    }
}

fn duration_from_word(word: &str, line: u32) -> Result<Duration, PdTypeError> {
    let err = || PdTypeError::Syntax {
        line,
        col: 0,
        expected: "duration of shape `<digits><D|M|Y>` with positive magnitude".into(),
        found: format!("`{word}`"),
    };
    if word.len() < 2 {
        return Err(err());
    }
    let (digits, unit) = word.split_at(word.len() - 1);
    let unit = match unit {
        "D" => DurationUnit::Day,
        "M" => DurationUnit::Month,
        "Y" => DurationUnit::Year,
        _ => return Err(err()),
    };
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(err());
    }
    let magnitude: u32 = digits.parse().map_err(|_| err())?;
    if magnitude == 0 {
        return Err(err());
    }
    Ok(Duration { magnitude, unit })
}

/// Parse a standalone duration like `1Y` or `30D`. `0M` and negative
/// magnitudes are rejected.
pub fn parse_duration(text: &str) -> Result<Duration, PdTypeError> {
    duration_from_word(text.trim(), 1)
}

/// Parse all type declarations in a `.pdt` file. Trailing content that is
/// not a type declaration is a syntax error.
pub fn parse_type_file(text: &str) -> Result<Vec<TypeDecl>, PdTypeError> {
    let toks = lex(text)?;
    let mut parser = Parser { toks, pos: 0 };
    let mut decls = Vec::new();
    while parser.peek().tok != Tok::Eof {
        decls.push(parser.type_decl()?);
    }
    Ok(decls)
}
