//! Tokenizer shared by the trace-set and source-program text formats.

use std::fmt;

use thiserror::Error;

/// A parse failure with a 1-based source position.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

// Longest symbols first.
const SYMBOLS: &[&str] = &[
    "->", "&&", "{", "}", "(", ")", ";", "=", ".", ",", ":",
];

/// Splits `text` into tokens. `#` and `//` start comments running to the end
/// of the line. A `-` immediately followed by a digit starts a negative
/// integer literal.
pub fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let bytes = line.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            let col = i + 1;
            if c.is_ascii_whitespace() {
                i += 1;
                continue;
            }
            if c == b'#' || line[i..].starts_with("//") {
                break;
            }
            if c.is_ascii_alphabetic() || c == b'_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(line[start..i].to_string()),
                    line: line_no,
                    col,
                });
                continue;
            }
            let negative =
                c == b'-' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit();
            if c.is_ascii_digit() || negative {
                let start = i;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let lit = &line[start..i];
                let value = lit.parse::<i64>().map_err(|_| {
                    ParseError::new(line_no, col, format!("integer literal `{lit}` out of range"))
                })?;
                out.push(Token {
                    tok: Tok::Int(value),
                    line: line_no,
                    col,
                });
                continue;
            }
            match SYMBOLS.iter().find(|s| line[i..].starts_with(**s)) {
                Some(sym) => {
                    out.push(Token {
                        tok: Tok::Sym(sym),
                        line: line_no,
                        col,
                    });
                    i += sym.len();
                }
                None => {
                    let ch = line[i..].chars().next().unwrap_or('?');
                    return Err(ParseError::new(
                        line_no,
                        col,
                        format!("unexpected character `{ch}`"),
                    ));
                }
            }
        }
    }
    Ok(out)
}

/// Cursor over a token slice with the usual expect/peek helpers.
pub struct Cursor<'t> {
    toks: &'t [Token],
    pos: usize,
    // position reported for errors at end of input
    eof: (usize, usize),
}

impl<'t> Cursor<'t> {
    pub fn new(toks: &'t [Token], eof: (usize, usize)) -> Self {
        Cursor { toks, pos: 0, eof }
    }

    pub fn peek(&self) -> Option<&'t Token> {
        self.toks.get(self.pos)
    }

    pub fn peek_tok(&self) -> Option<&'t Tok> {
        self.peek().map(|t| &t.tok)
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub fn here(&self) -> (usize, usize) {
        self.peek().map(|t| (t.line, t.col)).unwrap_or(self.eof)
    }

    pub fn error(&self, message: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError::new(line, col, message)
    }

    pub fn bump(&mut self) -> Option<&'t Token> {
        let t = self.toks.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub fn is_sym(&self, sym: &str) -> bool {
        matches!(self.peek_tok(), Some(Tok::Sym(s)) if *s == sym)
    }

    pub fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek_tok(), Some(Tok::Ident(s)) if s == kw)
    }

    pub fn eat_sym(&mut self, sym: &str) -> bool {
        if self.is_sym(sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn eat_keyword(&mut self, kw: &str) -> bool {
        if self.is_keyword(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    pub fn expect_sym(&mut self, sym: &str) -> Result<(), ParseError> {
        if self.eat_sym(sym) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{sym}`")))
        }
    }

    pub fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_keyword(kw) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{kw}`")))
        }
    }

    pub fn expect_ident(&mut self) -> Result<&'t Token, ParseError> {
        match self.peek() {
            Some(t @ Token { tok: Tok::Ident(_), .. }) => {
                self.pos += 1;
                Ok(t)
            }
            _ => Err(self.unexpected("an identifier")),
        }
    }

    pub fn expect_int(&mut self) -> Result<i64, ParseError> {
        match self.peek_tok() {
            Some(Tok::Int(n)) => {
                self.pos += 1;
                Ok(*n)
            }
            _ => Err(self.unexpected("an integer")),
        }
    }

    pub fn unexpected(&self, wanted: &str) -> ParseError {
        match self.peek() {
            Some(t) => ParseError::new(t.line, t.col, format!("expected {wanted}, found {}", t.tok)),
            None => self.error(format!("expected {wanted}, found end of input")),
        }
    }
}

pub fn ident_text(t: &Token) -> &str {
    match &t.tok {
        Tok::Ident(s) => s,
        _ => "",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arrow_and_negative_literals() {
        let toks = tokenize("ret A -> B (-42) # tail").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.tok.clone()).collect();
        assert_eq!(
            kinds,
            vec![
                Tok::Ident("ret".into()),
                Tok::Ident("A".into()),
                Tok::Sym("->"),
                Tok::Ident("B".into()),
                Tok::Sym("("),
                Tok::Int(-42),
                Tok::Sym(")"),
            ]
        );
        assert_eq!(toks[2].col, 7);
    }

    #[test]
    fn positions_are_one_based() {
        let err = tokenize("a\n  $").unwrap_err();
        assert_eq!((err.line, err.col), (2, 3));
    }

    #[test]
    fn extreme_literals() {
        let toks = tokenize("-9223372036854775808 9223372036854775807").unwrap();
        assert_eq!(toks[0].tok, Tok::Int(i64::MIN));
        assert_eq!(toks[1].tok, Tok::Int(i64::MAX));
        assert!(tokenize("9223372036854775808").is_err());
    }
}
