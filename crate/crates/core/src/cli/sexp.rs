//! S-expression reader with source locations.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Loc {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Loc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sexp {
    Sym(String, Loc),
    Str(String, Loc),
    Int(i64, Loc),
    List(Vec<Sexp>, Loc),
}

impl Sexp {
    pub fn loc(&self) -> Loc {
        match self {
            Sexp::Sym(_, l) | Sexp::Str(_, l) | Sexp::Int(_, l) | Sexp::List(_, l) => *l,
        }
    }

    pub fn as_sym(&self) -> Option<&str> {
        match self {
            Sexp::Sym(s, _) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexp]> {
        match self {
            Sexp::List(v, _) => Some(v),
            _ => None,
        }
    }

    /// `(head ...)` when the head is the given symbol.
    pub fn tagged(&self, head: &str) -> Option<&[Sexp]> {
        let items = self.as_list()?;
        match items.first() {
            Some(Sexp::Sym(s, _)) if s == head => Some(&items[1..]),
            _ => None,
        }
    }

    pub fn head(&self) -> Option<&str> {
        self.as_list()?.first()?.as_sym()
    }
}

impl fmt::Display for Sexp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexp::Sym(s, _) => f.write_str(s),
            Sexp::Str(s, _) => write!(f, "{s:?}"),
            Sexp::Int(i, _) => write!(f, "{i}"),
            Sexp::List(items, _) => {
                f.write_str("(")?;
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{it}")?;
                }
                f.write_str(")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{loc}: {msg}")]
pub struct ReadError {
    pub loc: Loc,
    pub msg: String,
}

struct Reader<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    loc: Loc,
}

impl Reader<'_> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.loc.line += 1;
            self.loc.col = 1;
        } else {
            self.loc.col += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c == ';' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn err(&self, loc: Loc, msg: impl Into<String>) -> ReadError {
        ReadError { loc, msg: msg.into() }
    }

    fn read(&mut self) -> Result<Option<Sexp>, ReadError> {
        self.skip_ws();
        let start = self.loc;
        let Some(&c) = self.chars.peek() else {
            return Ok(None);
        };
        match c {
            '(' => {
                self.bump();
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    match self.chars.peek() {
                        None => return Err(self.err(start, "unbalanced parenthesis")),
                        Some(')') => {
                            self.bump();
                            return Ok(Some(Sexp::List(items, start)));
                        }
                        Some(_) => items.push(self.read()?.unwrap()),
                    }
                }
            }
            ')' => Err(self.err(start, "unexpected ')'")),
            '"' => {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        None => return Err(self.err(start, "unterminated string")),
                        Some('"') => break,
                        Some('\\') => match self.bump() {
                            Some(c) => s.push(c),
                            None => return Err(self.err(start, "unterminated string")),
                        },
                        Some(c) => s.push(c),
                    }
                }
                Ok(Some(Sexp::Str(s, start)))
            }
            _ => {
                let mut s = String::new();
                while let Some(&c) = self.chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' || c == ';' {
                        break;
                    }
                    s.push(c);
                    self.bump();
                }
                match s.parse::<i64>() {
                    Ok(i) => Ok(Some(Sexp::Int(i, start))),
                    Err(_) => Ok(Some(Sexp::Sym(s, start))),
                }
            }
        }
    }
}

pub fn read_all(src: &str) -> Result<Vec<Sexp>, ReadError> {
    let mut r = Reader { chars: src.chars().peekable(), loc: Loc { line: 1, col: 1 } };
    let mut out = Vec::new();
    while let Some(s) = r.read()? {
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_nested_lists_and_comments() {
        let v = read_all("; hi\n(a (b \"c\") 3)\n").unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "(a (b \"c\") 3)");
        assert_eq!(v[0].loc(), Loc { line: 2, col: 1 });
    }

    #[test]
    fn reports_unbalanced() {
        let e = read_all("(a (b)").unwrap_err();
        assert_eq!(e.loc, Loc { line: 1, col: 1 });
        assert!(read_all(")").is_err());
    }
}
