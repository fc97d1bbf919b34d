//! Hand-written lexer and recursive-descent parser for the supported subset:
//!
//! ```text
//! query  := SELECT items FROM tables [WHERE pred (AND pred)*]
//!           [ORDER BY ord (, ord)*] [LIMIT int]
//! items  := * | item (, item)*
//! item   := [ident .] ident
//! tables := table (, table)*
//! table  := ident [ident]
//! pred   := colref op (colref | literal)
//! ord    := colref [ASC | DESC]
//! op     := = | != | < | <= | > | >=
//! ```
//!
//! Keywords are case-insensitive; identifiers are case-sensitive.

use super::ast::*;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(String),
    Str(String),
    Comma,
    Dot,
    Star,
    LParen,
    RParen,
    Semicolon,
    Op(CompareOp),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    /// 1-based character offset.
    offset: usize,
}

const KEYWORDS: &[&str] = &["SELECT", "FROM", "WHERE", "AND", "ORDER", "BY", "LIMIT", "ASC", "DESC"];

const UNSUPPORTED: &[&str] = &[
    "OR", "NOT", "GROUP", "HAVING", "JOIN", "INNER", "LEFT", "RIGHT", "OUTER", "FULL", "CROSS", "ON",
    "USING", "UNION", "INTERSECT", "EXCEPT", "DISTINCT", "IN", "LIKE", "BETWEEN", "IS", "NULL", "AS",
    "INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "ALTER", "WITH", "CASE", "EXISTS", "OFFSET",
];

fn is_keyword(word: &str, set: &[&str]) -> bool {
    set.iter().any(|k| k.eq_ignore_ascii_case(word))
}

fn syntax(offset: usize, message: impl Into<String>) -> Error {
    Error::SyntaxError { offset, message: message.into() }
}

fn unsupported(offset: usize, feature: impl Into<String>) -> Error {
    Error::UnsupportedFeature { offset, feature: feature.into() }
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let offset = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token { tok: Tok::Word(chars[start..i].iter().collect()), offset });
            continue;
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                if !chars.get(i).is_some_and(char::is_ascii_digit) {
                    return Err(syntax(i + 1, "expected digits after decimal point"));
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if chars.get(i).is_some_and(|c| c.is_ascii_alphabetic() || *c == '_') {
                return Err(syntax(i + 1, "malformed number"));
            }
            tokens.push(Token { tok: Tok::Number(chars[start..i].iter().collect()), offset });
            continue;
        } else if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(syntax(offset, "unterminated string literal")),
                    Some('\'') if chars.get(i + 1) == Some(&'\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some('\'') => {
                        i += 1;
                        break;
                    }
                    Some(ch) => {
                        s.push(*ch);
                        i += 1;
                    }
                }
            }
            tokens.push(Token { tok: Tok::Str(s), offset });
            continue;
        } else {
            let next = chars.get(i + 1).copied();
            let (tok, width) = match (c, next) {
                (',', _) => (Tok::Comma, 1),
                ('.', _) => (Tok::Dot, 1),
                ('*', _) => (Tok::Star, 1),
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                (';', _) => (Tok::Semicolon, 1),
                ('=', _) => (Tok::Op(CompareOp::Eq), 1),
                ('!', Some('=')) => (Tok::Op(CompareOp::NotEq), 2),
                ('<', Some('>')) => (Tok::Op(CompareOp::NotEq), 2),
                ('<', Some('=')) => (Tok::Op(CompareOp::LtEq), 2),
                ('<', _) => (Tok::Op(CompareOp::Lt), 1),
                ('>', Some('=')) => (Tok::Op(CompareOp::GtEq), 2),
                ('>', _) => (Tok::Op(CompareOp::Gt), 1),
                ('+' | '-' | '/' | '%' | '|', _) => {
                    return Err(unsupported(offset, format!("arithmetic operator `{c}`")))
                }
                _ => return Err(syntax(offset, format!("unexpected character `{c}`"))),
            };
            i += width;
            tok
        };
        tokens.push(Token { tok, offset });
    }
    tokens.push(Token { tok: Tok::Eof, offset: chars.len() + 1 });
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.at_keyword(kw) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        self.reject_unsupported()?;
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(syntax(self.peek().offset, format!("expected {kw}, found {}", describe(&self.peek().tok))))
        }
    }

    /// Fails with `UnsupportedFeature` when the next token starts a construct
    /// outside the subset.
    fn reject_unsupported(&self) -> Result<()> {
        let t = self.peek();
        match &t.tok {
            Tok::Word(w) if is_keyword(w, UNSUPPORTED) => {
                Err(unsupported(t.offset, w.to_ascii_uppercase()))
            }
            Tok::LParen => Err(unsupported(t.offset, "parenthesized expression or subquery")),
            _ => Ok(()),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        self.reject_unsupported()?;
        let t = self.peek().clone();
        match t.tok {
            Tok::Word(w) if !is_keyword(&w, KEYWORDS) => {
                self.advance();
                Ok(w)
            }
            other => Err(syntax(t.offset, format!("expected {what}, found {}", describe(&other)))),
        }
    }

    fn column_ref(&mut self) -> Result<(ColumnRef, usize)> {
        let offset = self.peek().offset;
        let first = self.ident("column name")?;
        if self.peek().tok == Tok::LParen {
            return Err(unsupported(offset, format!("function or aggregate `{first}(...)`")));
        }
        if self.peek().tok == Tok::Dot {
            self.advance();
            if self.peek().tok == Tok::Star {
                return Err(unsupported(self.peek().offset, "qualified `*`"));
            }
            let column = self.ident("column name")?;
            if self.peek().tok == Tok::LParen {
                return Err(unsupported(offset, "function call"));
            }
            Ok((ColumnRef::qualified(first, column), offset))
        } else {
            Ok((ColumnRef::bare(first), offset))
        }
    }

    fn query(&mut self) -> Result<QueryAst> {
        let t = self.peek().clone();
        if let Tok::Word(w) = &t.tok {
            if is_keyword(w, UNSUPPORTED) {
                return Err(unsupported(t.offset, w.to_ascii_uppercase()));
            }
        }
        self.expect_keyword("SELECT")?;

        let mut refs: Vec<(ColumnRef, usize)> = Vec::new();
        let select = if self.peek().tok == Tok::Star {
            self.advance();
            SelectList::Star
        } else {
            let mut items = Vec::new();
            loop {
                let (c, off) = self.column_ref()?;
                refs.push((c.clone(), off));
                items.push(c);
                if self.peek().tok != Tok::Comma {
                    break;
                }
                self.advance();
            }
            SelectList::Items(items)
        };

        self.expect_keyword("FROM")?;
        let mut from: Vec<TableRef> = Vec::new();
        loop {
            let offset = self.peek().offset;
            let name = self.ident("table name")?;
            self.reject_unsupported()?;
            let alias = match &self.peek().tok {
                Tok::Word(w) if !is_keyword(w, KEYWORDS) => Some(self.ident("alias")?),
                _ => None,
            };
            let table = TableRef { name, alias };
            if from.iter().any(|t| t.binding() == table.binding()) {
                return Err(syntax(offset, format!("table name or alias `{}` used twice", table.binding())));
            }
            from.push(table);
            if self.peek().tok != Tok::Comma {
                break;
            }
            self.advance();
        }

        let mut predicates = Vec::new();
        self.reject_unsupported()?;
        if self.eat_keyword("WHERE") {
            loop {
                predicates.push(self.predicate(&mut refs)?);
                self.reject_unsupported()?;
                if !self.eat_keyword("AND") {
                    break;
                }
            }
        }

        let mut order_by = Vec::new();
        self.reject_unsupported()?;
        if self.eat_keyword("ORDER") {
            self.expect_keyword("BY")?;
            loop {
                let (column, off) = self.column_ref()?;
                refs.push((column.clone(), off));
                let descending = if self.eat_keyword("DESC") {
                    true
                } else {
                    self.eat_keyword("ASC");
                    false
                };
                order_by.push(OrderItem { column, descending });
                if self.peek().tok != Tok::Comma {
                    break;
                }
                self.advance();
            }
        }

        let mut limit = None;
        self.reject_unsupported()?;
        if self.eat_keyword("LIMIT") {
            let t = self.advance();
            match t.tok {
                Tok::Number(n) => match n.parse::<u64>() {
                    Ok(v) if v > 0 => limit = Some(v),
                    _ => return Err(syntax(t.offset, "LIMIT needs a positive integer")),
                },
                other => return Err(syntax(t.offset, format!("expected integer, found {}", describe(&other)))),
            }
        }

        if self.peek().tok == Tok::Semicolon {
            self.advance();
        }
        self.reject_unsupported()?;
        let t = self.peek();
        if t.tok != Tok::Eof {
            return Err(syntax(t.offset, format!("unexpected {}", describe(&t.tok))));
        }

        for (c, offset) in &refs {
            if let Some(q) = &c.qualifier {
                if !from.iter().any(|t| t.binding() == q) {
                    return Err(syntax(*offset, format!("`{q}` does not name a table in FROM")));
                }
            }
        }
        Ok(QueryAst { select, from, predicates, order_by, limit })
    }

    fn predicate(&mut self, refs: &mut Vec<(ColumnRef, usize)>) -> Result<Predicate> {
        let (left, off) = self.column_ref()?;
        refs.push((left.clone(), off));
        let t = self.advance();
        let op = match t.tok {
            Tok::Op(op) => op,
            Tok::Word(w) if is_keyword(&w, UNSUPPORTED) => {
                return Err(unsupported(t.offset, w.to_ascii_uppercase()))
            }
            other => return Err(syntax(t.offset, format!("expected comparison operator, found {}", describe(&other)))),
        };
        let t = self.peek().clone();
        let right = match t.tok {
            Tok::Number(n) => {
                self.advance();
                let lit = if n.contains('.') {
                    Literal::Real(n.parse().map_err(|_| syntax(t.offset, "bad number"))?)
                } else {
                    Literal::Integer(n.parse().map_err(|_| syntax(t.offset, "integer out of range"))?)
                };
                Operand::Literal(lit)
            }
            Tok::Str(s) => {
                self.advance();
                Operand::Literal(Literal::Text(s))
            }
            Tok::Word(_) | Tok::LParen => {
                let (c, off) = self.column_ref()?;
                refs.push((c.clone(), off));
                Operand::Column(c)
            }
            other => return Err(syntax(t.offset, format!("expected column or literal, found {}", describe(&other)))),
        };
        Ok(Predicate { left, op, right })
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Word(w) => format!("`{w}`"),
        Tok::Number(n) => format!("number {n}"),
        Tok::Str(_) => "string literal".into(),
        Tok::Comma => "`,`".into(),
        Tok::Dot => "`.`".into(),
        Tok::Star => "`*`".into(),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Semicolon => "`;`".into(),
        Tok::Op(op) => format!("`{op}`"),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses one query of the supported subset.
pub fn parse_sql(text: &str) -> Result<QueryAst> {
    let tokens = lex(text)?;
    Parser { tokens, pos: 0 }.query()
}
