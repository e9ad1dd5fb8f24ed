use super::{DslError, Pos};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    Punct(&'static str),
    Other(char),
    /// `#pragma omp parallel for ...` (the rest of the line is ignored).
    OmpParallelFor,
    /// `#pragma microkernel`; the call signature follows as ordinary tokens.
    PragmaMicrokernel,
    /// `#define NAME <integer>`
    Define(String, i64),
    Eof,
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
    pub start: usize,
    pub end: usize,
}

const PUNCTS: &[&str] = &[
    "+=", "-=", "++", "--", "<=", ">=", "==", "(", ")", "[", "]", "{", "}", ";", ",", ":", "=", "<", ">",
    "+", "-", "*", "/", "&",
];

struct Cursor<'a> {
    src: &'a str,
    i: usize,
    line: usize,
    line_start: usize,
}

impl Cursor<'_> {
    fn pos_at(&self, i: usize) -> Pos {
        Pos { line: self.line, col: i - self.line_start + 1 }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.i..].chars().next()
    }

    fn rest(&self) -> &str {
        &self.src[self.i..]
    }

    fn bump(&mut self) {
        if let Some(c) = self.peek() {
            self.i += c.len_utf8();
            if c == '\n' {
                self.line += 1;
                self.line_start = self.i;
            }
        }
    }

    fn skip_line(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }
}

pub(crate) fn lex(src: &str) -> Result<Vec<Token>, DslError> {
    let mut cur = Cursor { src, i: 0, line: 1, line_start: 0 };
    let mut out = Vec::new();
    loop {
        // whitespace and comments
        loop {
            match cur.peek() {
                Some(c) if c.is_whitespace() => cur.bump(),
                Some('/') if cur.rest().starts_with("//") => cur.skip_line(),
                Some('/') if cur.rest().starts_with("/*") => {
                    let pos = cur.pos_at(cur.i);
                    cur.bump();
                    cur.bump();
                    loop {
                        if cur.rest().starts_with("*/") {
                            cur.bump();
                            cur.bump();
                            break;
                        }
                        if cur.peek().is_none() {
                            return Err(DslError::Syntax { pos, msg: "unterminated comment".into() });
                        }
                        cur.bump();
                    }
                }
                _ => break,
            }
        }
        let start = cur.i;
        let pos = cur.pos_at(start);
        let Some(c) = cur.peek() else {
            out.push(Token { tok: Tok::Eof, pos, start, end: start });
            return Ok(out);
        };
        let push = |out: &mut Vec<Token>, tok, end| out.push(Token { tok, pos, start, end });
        if c == '#' {
            let line_end = cur.rest().find('\n').map_or(src.len(), |k| cur.i + k);
            let line = &src[start + 1..line_end];
            let words: Vec<&str> = line.split_whitespace().collect();
            match words.as_slice() {
                ["pragma", "microkernel", ..] => {
                    let off = line.find("microkernel").expect("keyword present") + "microkernel".len();
                    while cur.i < start + 1 + off {
                        cur.bump();
                    }
                    push(&mut out, Tok::PragmaMicrokernel, cur.i);
                }
                ["pragma", "omp", rest @ ..] if rest.contains(&"parallel") && rest.contains(&"for") => {
                    cur.skip_line();
                    push(&mut out, Tok::OmpParallelFor, cur.i);
                }
                ["define", name, value] if value.parse::<i64>().is_ok() => {
                    cur.skip_line();
                    push(&mut out, Tok::Define(name.to_string(), value.parse().expect("checked")), cur.i);
                }
                _ => cur.skip_line(),
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while matches!(cur.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                cur.bump();
            }
            push(&mut out, Tok::Ident(src[start..cur.i].to_string()), cur.i);
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && cur.rest()[1..].starts_with(|d: char| d.is_ascii_digit())) {
            let mut is_float = false;
            while let Some(d) = cur.peek() {
                if d.is_ascii_digit() {
                    cur.bump();
                } else if d == '.' && !is_float {
                    is_float = true;
                    cur.bump();
                } else if (d == 'e' || d == 'E')
                    && cur.rest()[1..].starts_with(|x: char| x.is_ascii_digit() || x == '-' || x == '+')
                {
                    is_float = true;
                    cur.bump();
                    cur.bump();
                } else {
                    break;
                }
            }
            let text = &src[start..cur.i];
            if matches!(cur.peek(), Some('f' | 'F')) {
                is_float = true;
                cur.bump();
            }
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| DslError::Syntax { pos, msg: format!("bad number `{text}`") })?)
            } else {
                Tok::Int(text.parse().map_err(|_| DslError::Syntax { pos, msg: format!("bad integer `{text}`") })?)
            };
            push(&mut out, tok, cur.i);
            continue;
        }
        if let Some(p) = PUNCTS.iter().find(|p| cur.rest().starts_with(**p)) {
            for _ in 0..p.len() {
                cur.bump();
            }
            push(&mut out, Tok::Punct(p), cur.i);
            continue;
        }
        cur.bump();
        push(&mut out, Tok::Other(c), cur.i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        lex(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn directives_and_numbers() {
        let t = toks("#include <x.h>\n#define B 16\n#pragma omp parallel for private(j)\nx += 1.5f; // c\n");
        assert_eq!(
            t,
            vec![
                Tok::Define("B".into(), 16),
                Tok::OmpParallelFor,
                Tok::Ident("x".into()),
                Tok::Punct("+="),
                Tok::Float(1.5),
                Tok::Punct(";"),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn positions_track_lines() {
        let t = lex("a\n  /* x\n y */ b").unwrap();
        assert_eq!(t[1].pos, Pos { line: 3, col: 7 });
    }
}
