//! Evaluator for the small Python string-expression subset generated stdio
//! tests use: string literals, integer literals, `+`, `*` and parentheses.
//!
//! `"1999 2\n" + "0" * 2000 + "\n" + "0" * 2000` evaluates to the expanded
//! string. Anything else is rejected.

use std::fmt::Write as _;

/// Upper bound on an evaluated value, in bytes.
pub const MAX_VALUE_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Str(String),
    Int(i64),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Str(String),
    Int(i64),
    Plus,
    Star,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut out = Vec::new();
    while i < chars.len() {
        let c = chars[i];
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push(Tok::Plus);
                i += 1;
            }
            '*' => {
                out.push(Tok::Star);
                i += 1;
            }
            '(' => {
                out.push(Tok::LParen);
                i += 1;
            }
            ')' => {
                out.push(Tok::RParen);
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().filter(|c| **c != '_').collect();
                let n = text
                    .parse::<i64>()
                    .map_err(|e| format!("bad integer {text:?}: {e}"))?;
                if i + 1 < chars.len() && chars[i] == '*' && chars[i + 1] == '*' {
                    // Exponent: only int ** int.
                    i += 2;
                    while i < chars.len() && chars[i] == ' ' {
                        i += 1;
                    }
                    let start = i;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                    let exp: u32 = chars[start..i]
                        .iter()
                        .collect::<String>()
                        .parse()
                        .map_err(|_| "bad exponent".to_string())?;
                    let v = n.checked_pow(exp).ok_or("integer overflow")?;
                    out.push(Tok::Int(v));
                } else {
                    out.push(Tok::Int(n));
                }
            }
            '"' | '\'' => {
                let (s, next) = lex_string(&chars, i)?;
                out.push(Tok::Str(s));
                i = next;
            }
            other => return Err(format!("unexpected character {other:?}")),
        }
    }
    Ok(out)
}

fn lex_string(chars: &[char], start: usize) -> Result<(String, usize), String> {
    let quote = chars[start];
    let triple = start + 2 < chars.len() && chars[start + 1] == quote && chars[start + 2] == quote;
    let mut i = if triple { start + 3 } else { start + 1 };
    let mut out = String::new();
    loop {
        if i >= chars.len() {
            return Err("unterminated string literal".into());
        }
        let c = chars[i];
        if c == quote {
            if !triple {
                return Ok((out, i + 1));
            }
            if i + 2 < chars.len() && chars[i + 1] == quote && chars[i + 2] == quote {
                return Ok((out, i + 3));
            }
            out.push(c);
            i += 1;
            continue;
        }
        if c == '\\' {
            let Some(&e) = chars.get(i + 1) else {
                return Err("dangling escape".into());
            };
            i += 2;
            match e {
                'n' => out.push('\n'),
                't' => out.push('\t'),
                'r' => out.push('\r'),
                '0' => out.push('\0'),
                '\\' => out.push('\\'),
                '\'' => out.push('\''),
                '"' => out.push('"'),
                '\n' => {}
                'x' => {
                    let hex: String = chars
                        .get(i..i + 2)
                        .ok_or("short \\x escape")?
                        .iter()
                        .collect();
                    let v = u32::from_str_radix(&hex, 16).map_err(|_| "bad \\x escape")?;
                    out.push(char::from_u32(v).ok_or("bad \\x escape")?);
                    i += 2;
                }
                'u' => {
                    let hex: String = chars
                        .get(i..i + 4)
                        .ok_or("short \\u escape")?
                        .iter()
                        .collect();
                    let v = u32::from_str_radix(&hex, 16).map_err(|_| "bad \\u escape")?;
                    out.push(char::from_u32(v).ok_or("bad \\u escape")?);
                    i += 4;
                }
                other => {
                    // Python keeps unknown escapes verbatim.
                    out.push('\\');
                    out.push(other);
                }
            }
            continue;
        }
        if c == '\n' && !triple {
            return Err("newline in string literal".into());
        }
        out.push(c);
        i += 1;
    }
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn sum(&mut self) -> Result<Value, String> {
        let mut acc = self.product()?;
        while self.peek() == Some(&Tok::Plus) {
            self.pos += 1;
            let rhs = self.product()?;
            acc = match (acc, rhs) {
                (Value::Str(mut a), Value::Str(b)) => {
                    if a.len() + b.len() > MAX_VALUE_LEN {
                        return Err("value too large".into());
                    }
                    a.push_str(&b);
                    Value::Str(a)
                }
                (Value::Int(a), Value::Int(b)) => {
                    Value::Int(a.checked_add(b).ok_or("integer overflow")?)
                }
                _ => return Err("cannot add str and int".into()),
            };
        }
        Ok(acc)
    }

    fn product(&mut self) -> Result<Value, String> {
        let mut acc = self.atom()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            let rhs = self.atom()?;
            acc = match (acc, rhs) {
                (Value::Str(s), Value::Int(n)) | (Value::Int(n), Value::Str(s)) => {
                    let n = n.max(0) as usize;
                    if s.len().saturating_mul(n) > MAX_VALUE_LEN {
                        return Err("value too large".into());
                    }
                    Value::Str(s.repeat(n))
                }
                (Value::Int(a), Value::Int(b)) => {
                    Value::Int(a.checked_mul(b).ok_or("integer overflow")?)
                }
                _ => return Err("cannot multiply str by str".into()),
            };
        }
        Ok(acc)
    }

    fn atom(&mut self) -> Result<Value, String> {
        let tok = self
            .toks
            .get(self.pos)
            .cloned()
            .ok_or("unexpected end of expression")?;
        self.pos += 1;
        match tok {
            Tok::Str(s) => {
                // Adjacent literals concatenate.
                let mut s = s;
                while let Some(Tok::Str(next)) = self.peek().cloned() {
                    s.push_str(&next);
                    self.pos += 1;
                }
                Ok(Value::Str(s))
            }
            Tok::Int(n) => Ok(Value::Int(n)),
            Tok::LParen => {
                let v = self.sum()?;
                if self.peek() != Some(&Tok::RParen) {
                    return Err("missing ')'".into());
                }
                self.pos += 1;
                Ok(v)
            }
            other => Err(format!("unexpected token {other:?}")),
        }
    }
}

pub fn eval(src: &str) -> Result<Value, String> {
    let toks = tokenize(src.trim())?;
    if toks.is_empty() {
        return Err("empty expression".into());
    }
    let mut p = Parser { toks, pos: 0 };
    let v = p.sum()?;
    if p.pos != p.toks.len() {
        return Err("trailing tokens".into());
    }
    Ok(v)
}

/// Evaluates to a string; integers are rendered as Python would print them.
pub fn eval_str(src: &str) -> Result<String, String> {
    match eval(src)? {
        Value::Str(s) => Ok(s),
        Value::Int(n) => Ok(n.to_string()),
    }
}

/// Renders `s` as a double-quoted literal that [`eval_str`] reads back.
pub fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn concatenation_and_repetition() {
        assert_eq!(
            eval_str(r#""2 2\n101\n000\n000""#).unwrap(),
            "2 2\n101\n000\n000"
        );
        let big = eval_str(r#""1999 2\n" + "0" * 2000 + "\n" + "0" * 2000"#).unwrap();
        assert_eq!(big.len(), "1999 2\n".len() + 2000 + 1 + 2000);
        assert_eq!(
            eval_str(r#""2 1999\n" + "0\n" * 2000"#)
                .unwrap()
                .lines()
                .count(),
            2001
        );
        assert_eq!(eval_str(r#"3 * 'ab'"#).unwrap(), "ababab");
        assert_eq!(eval_str(r#"("a" + "b") * 2"#).unwrap(), "abab");
        assert_eq!(eval_str("18").unwrap(), "18");
        assert_eq!(eval_str("'x' * 10**2").unwrap().len(), 100);
    }

    #[test]
    fn rejects_non_literals() {
        assert!(eval_str("input()").is_err());
        assert!(eval_str(r#""a" * "b""#).is_err());
        assert!(eval_str(r#""abc"#).is_err());
        assert!(eval_str(r#""a" * 10**9"#).is_err());
    }

    proptest! {
        #[test]
        fn quote_round_trips(s in "\\PC*") {
            prop_assert_eq!(eval_str(&quote(&s)).unwrap(), s);
        }
    }
}
