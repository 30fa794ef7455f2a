//! Lexer and parser for `.presto` package files.

use crate::error::{Error, Result};
use crate::rewrite::{Literal, RewriteRule, RuleAtom, Term};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Quoted(String),
    Num(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Dot,
    ColonDash,
    Arrow,
    Colon,
}

#[derive(Debug, Clone)]
pub(crate) struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

pub(crate) fn lex(src: &str) -> Result<Vec<Spanned>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| Error::Parse { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let adv = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {
                adv(1, &mut i, &mut col);
                continue;
            }
            '%' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '(' | ')' | '{' | '}' | ',' => {
                let t = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '{' => Tok::LBrace,
                    '}' => Tok::RBrace,
                    _ => Tok::Comma,
                };
                out.push(Spanned { tok: t, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
                continue;
            }
            '.' => {
                out.push(Spanned { tok: Tok::Dot, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
                continue;
            }
            ':' if chars.get(i + 1) == Some(&'-') => {
                out.push(Spanned { tok: Tok::ColonDash, line: l0, col: c0 });
                adv(2, &mut i, &mut col);
                continue;
            }
            ':' => {
                out.push(Spanned { tok: Tok::Colon, line: l0, col: c0 });
                adv(1, &mut i, &mut col);
                continue;
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push(Spanned { tok: Tok::Arrow, line: l0, col: c0 });
                adv(2, &mut i, &mut col);
                continue;
            }
            '\'' | '"' => {
                let q = c;
                let mut s = String::new();
                i += 1;
                col += 1;
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(err(l0, c0, "unterminated quoted name".into())),
                        Some(&ch) if ch == q => {
                            i += 1;
                            col += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                            col += 1;
                        }
                    }
                }
                out.push(Spanned { tok: Tok::Quoted(s), line: l0, col: c0 });
                continue;
            }
            c if c.is_ascii_digit() => {
                let mut s = String::new();
                while i < chars.len()
                    && (chars[i].is_ascii_digit()
                        || (chars[i] == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())))
                {
                    s.push(chars[i]);
                    i += 1;
                    col += 1;
                }
                if i < chars.len() && is_ident_char(chars[i]) && chars[i] != '-' {
                    // digits followed by letters: an identifier like 2nd-pass
                    while i < chars.len() && is_ident_char(chars[i]) {
                        s.push(chars[i]);
                        i += 1;
                        col += 1;
                    }
                    out.push(Spanned { tok: Tok::Ident(s), line: l0, col: c0 });
                } else {
                    out.push(Spanned { tok: Tok::Num(s), line: l0, col: c0 });
                }
                continue;
            }
            c if is_ident_char(c) => {
                let mut s = String::new();
                while i < chars.len() {
                    let ch = chars[i];
                    if ch == '-' && chars.get(i + 1) == Some(&'>') {
                        break;
                    }
                    if is_ident_char(ch)
                        || (ch == ':' && chars.get(i + 1).is_some_and(|n| n.is_alphabetic()))
                    {
                        s.push(ch);
                        i += 1;
                        col += 1;
                    } else {
                        break;
                    }
                }
                out.push(Spanned { tok: Tok::Ident(s), line: l0, col: c0 });
                continue;
            }
            other => return Err(err(l0, c0, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

/// One parsed package statement.
#[derive(Debug, Clone)]
pub(crate) enum Stmt {
    Package(String),
    Fact { pred: String, args: Vec<String> },
    Part(PartBlock),
    Rule(RewriteRule),
}

#[derive(Debug, Clone, Default)]
pub(crate) struct PartBlock {
    pub complex: String,
    pub nodes: Vec<(String, String)>,
    pub edges: Vec<(String, usize, String, usize)>,
    pub binds: Vec<(String, String)>,
    pub sets: Vec<(String, String, String)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Located<T> {
    pub item: T,
    pub line: usize,
    pub col: usize,
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn loc(&self) -> (usize, usize) {
        match self.toks.get(self.pos).or(self.toks.last()) {
            Some(s) => (s.line, s.col),
            None => (1, 1),
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let (line, col) = self.loc();
        Err(Error::Parse {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|s| s.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, t: Tok) -> Result<()> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {t:?}, found {:?}", self.peek()))
        }
    }

    fn name(&mut self) -> Result<String> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) | Some(Tok::Quoted(s)) | Some(Tok::Num(s)) => {
                self.pos += 1;
                Ok(s)
            }
            other => self.err(format!("expected a name, found {other:?}")),
        }
    }

    fn term(&mut self) -> Result<Term> {
        match self.peek().cloned() {
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                if s.chars().next().is_some_and(|c| c.is_uppercase()) {
                    Ok(Term::Var(s))
                } else {
                    Ok(Term::Const(s))
                }
            }
            Some(Tok::Quoted(s)) | Some(Tok::Num(s)) => {
                self.pos += 1;
                Ok(Term::Const(s))
            }
            other => self.err(format!("expected a term, found {other:?}")),
        }
    }

    fn atom(&mut self) -> Result<RuleAtom> {
        let pred = match self.next() {
            Some(Tok::Ident(s)) => s,
            other => {
                self.pos -= 1;
                return self.err(format!("expected a predicate, found {other:?}"));
            }
        };
        self.expect(Tok::LParen)?;
        let mut args = vec![self.term()?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            args.push(self.term()?);
        }
        self.expect(Tok::RParen)?;
        Ok(RuleAtom { pred, args })
    }

    fn port_ref(&mut self) -> Result<(String, usize)> {
        let n = self.name()?;
        // `a.1` lexes as Ident("a") Dot Num("1"); `in1` is an entry port.
        if self.peek() == Some(&Tok::Dot) {
            if let Some(Tok::Num(p)) = self.toks.get(self.pos + 1).map(|s| s.tok.clone()) {
                self.pos += 2;
                return Ok((n, p.parse().unwrap_or(0)));
            }
        }
        Ok((n, 0))
    }

    fn part_block(&mut self, complex: String) -> Result<PartBlock> {
        let mut b = PartBlock {
            complex,
            ..Default::default()
        };
        self.expect(Tok::LBrace)?;
        loop {
            match self.next() {
                Some(Tok::RBrace) => break,
                Some(Tok::Ident(kw)) if kw == "node" => {
                    let local = self.name()?;
                    self.expect(Tok::Colon)?;
                    let concept = self.name()?;
                    b.nodes.push((local, concept));
                }
                Some(Tok::Ident(kw)) if kw == "edge" => {
                    let (f, fp) = self.port_ref()?;
                    self.expect(Tok::Arrow)?;
                    let (t, tp) = self.port_ref()?;
                    b.edges.push((f, fp, t, tp));
                }
                Some(Tok::Ident(kw)) if kw == "bind" => {
                    let key = self.name()?;
                    self.expect(Tok::Arrow)?;
                    let local = self.name()?;
                    b.binds.push((key, local));
                }
                Some(Tok::Ident(kw)) if kw == "set" => {
                    let local = self.name()?;
                    let key = self.name()?;
                    let val = self.name()?;
                    b.sets.push((local, key, val));
                }
                _ => {
                    self.pos -= 1;
                    return self.err("expected node, edge, bind, set or `}` in hasPart block");
                }
            }
            self.expect(Tok::Dot)?;
        }
        if self.peek() == Some(&Tok::Dot) {
            self.pos += 1;
        }
        Ok(b)
    }

    fn statement(&mut self) -> Result<Stmt> {
        let start = self.pos;
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "package")
            && self.toks.get(self.pos + 1).map(|s| &s.tok) != Some(&Tok::LParen)
        {
            self.pos += 1;
            let name = self.name()?;
            self.expect(Tok::Dot)?;
            return Ok(Stmt::Package(name));
        }
        let head = self.atom()?;
        if head.pred == "hasPart" && self.peek() == Some(&Tok::LBrace) {
            let complex = match &head.args[..] {
                [Term::Const(c)] => c.clone(),
                _ => return self.err("hasPart block takes one operator name"),
            };
            return Ok(Stmt::Part(self.part_block(complex)?));
        }
        if self.peek() == Some(&Tok::ColonDash) {
            self.pos += 1;
            let mut body = vec![self.literal()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                body.push(self.literal()?);
            }
            self.expect(Tok::Dot)?;
            let text = render_tokens(&self.toks[start..self.pos]);
            return Ok(Stmt::Rule(RewriteRule::new(head, body, text)));
        }
        self.expect(Tok::Dot)?;
        let args = head
            .args
            .into_iter()
            .map(|t| match t {
                Term::Const(c) | Term::Var(c) => c,
            })
            .collect::<Vec<_>>();
        if head.pred == "package" {
            return Ok(Stmt::Package(args.into_iter().next().unwrap_or_default()));
        }
        Ok(Stmt::Fact {
            pred: head.pred,
            args,
        })
    }

    fn literal(&mut self) -> Result<Literal> {
        let negated = matches!(self.peek(), Some(Tok::Ident(s)) if s == "not")
            && matches!(self.toks.get(self.pos + 1).map(|s| &s.tok), Some(Tok::Ident(_)));
        if negated {
            self.pos += 1;
        }
        Ok(Literal {
            negated,
            atom: self.atom()?,
        })
    }
}

fn render_tokens(toks: &[Spanned]) -> String {
    let mut s = String::new();
    for t in toks {
        match &t.tok {
            Tok::Ident(x) | Tok::Num(x) => {
                if s.ends_with(|c: char| c.is_alphanumeric()) {
                    s.push(' ');
                }
                s.push_str(x);
            }
            Tok::Quoted(x) => {
                s.push('\'');
                s.push_str(x);
                s.push('\'');
            }
            Tok::LParen => s.push('('),
            Tok::RParen => s.push(')'),
            Tok::LBrace => s.push('{'),
            Tok::RBrace => s.push('}'),
            Tok::Comma => s.push_str(", "),
            Tok::Dot => s.push('.'),
            Tok::ColonDash => s.push_str(" :- "),
            Tok::Arrow => s.push_str(" -> "),
            Tok::Colon => s.push(':'),
        }
    }
    s
}

pub(crate) fn parse(src: &str) -> Result<Vec<Located<Stmt>>> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0 };
    let mut out = Vec::new();
    while p.pos < p.toks.len() {
        let (line, col) = p.loc();
        let item = p.statement()?;
        out.push(Located { item, line, col });
    }
    Ok(out)
}
