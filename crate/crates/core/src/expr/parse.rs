use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};

use super::{BinOp, Expr, Func};

/// Syntax error with the byte offset at which parsing stopped.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at offset {offset}: expected {expected}, found {found}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Clone, Debug, PartialEq)]
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
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Plus => "'+'".to_string(),
            Tok::Minus => "'-'".to_string(),
            Tok::Star => "'*'".to_string(),
            Tok::Slash => "'/'".to_string(),
            Tok::Caret => "'^'".to_string(),
            Tok::LParen => "'('".to_string(),
            Tok::RParen => "')'".to_string(),
            Tok::Comma => "','".to_string(),
            Tok::End => "end of input".to_string(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(usize, Tok), ParseError> {
        self.skip_ws();
        let bytes = self.src.as_bytes();
        let start = self.pos;
        let Some(&c) = bytes.get(start) else {
            return Ok((start, Tok::End));
        };
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
            self.pos += 1;
            return Ok((start, tok));
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut exp = end + 1;
                if exp < bytes.len() && (bytes[exp] == b'+' || bytes[exp] == b'-') {
                    exp += 1;
                }
                if exp < bytes.len() && bytes[exp].is_ascii_digit() {
                    while exp < bytes.len() && bytes[exp].is_ascii_digit() {
                        exp += 1;
                    }
                    end = exp;
                }
            }
            let text = &self.src[start..end];
            let value: f64 = text.parse().map_err(|_| ParseError {
                offset: start,
                expected: "number".to_string(),
                found: format!("'{text}'"),
            })?;
            self.pos = end;
            return Ok((start, Tok::Num(value)));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = start;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            self.pos = end;
            return Ok((start, Tok::Ident(self.src[start..end].to_string())));
        }
        let ch = self.src[start..].chars().next().unwrap_or('?');
        Err(ParseError {
            offset: start,
            expected: "token".to_string(),
            found: format!("'{ch}'"),
        })
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    tok: Tok,
    offset: usize,
}

impl<'a> Parser<'a> {
    fn advance(&mut self) -> Result<(), ParseError> {
        let (offset, tok) = self.lexer.next()?;
        self.offset = offset;
        self.tok = tok;
        Ok(())
    }

    fn error(&self, expected: &str) -> ParseError {
        ParseError {
            offset: self.offset,
            expected: expected.to_string(),
            found: self.tok.describe(),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if self.tok == tok {
            self.advance()
        } else {
            Err(self.error(expected))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.tok == Tok::Minus {
            self.advance()?;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.tok == Tok::Caret {
            self.advance()?;
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.advance()?;
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let name_offset = self.offset;
                self.advance()?;
                if self.tok != Tok::LParen {
                    return Ok(Expr::Var(name));
                }
                self.advance()?;
                let first = self.expr()?;
                if name == "pow" {
                    self.expect(Tok::Comma, "','")?;
                    let second = self.expr()?;
                    self.expect(Tok::RParen, "')'")?;
                    return Ok(Expr::Binary(BinOp::Pow, Box::new(first), Box::new(second)));
                }
                let func = Func::from_name(&name).ok_or_else(|| ParseError {
                    offset: name_offset,
                    expected: "function name".to_string(),
                    found: format!("'{name}'"),
                })?;
                self.expect(Tok::RParen, "')'")?;
                Ok(Expr::Call(func, Box::new(first)))
            }
            _ => Err(self.error("number, identifier or '('")),
        }
    }
}

/// Parses source text into an expression tree.
pub fn parse(source: &str) -> Result<Expr, ParseError> {
    let mut parser = Parser {
        lexer: Lexer { src: source, pos: 0 },
        tok: Tok::End,
        offset: 0,
    };
    parser.advance()?;
    let e = parser.expr()?;
    if parser.tok != Tok::End {
        return Err(parser.error("operator or end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn var(s: &str) -> Box<Expr> {
        Box::new(Expr::var(s))
    }

    #[test]
    fn function_application() {
        let e = parse("sin(u+f)").unwrap();
        assert_eq!(e, Expr::Call(Func::Sin, Box::new(Expr::Binary(BinOp::Add, var("u"), var("f")))));
    }

    #[test]
    fn abel_field_has_four_summands() {
        let e = parse("a + c*x + f*x^(eps-1) + g*x^eps").unwrap();
        let mut summands = 1;
        let mut cur = &e;
        while let Expr::Binary(BinOp::Add, lhs, _) = cur {
            summands += 1;
            cur = lhs;
        }
        assert_eq!(summands, 4);
    }

    #[test]
    fn unbalanced_parenthesis_offset() {
        let err = parse("2*)x").unwrap_err();
        assert_eq!(err.offset, 2);
        assert_eq!(err.found, "')'");
    }

    #[test]
    fn power_is_right_associative_and_tighter_than_minus() {
        assert_eq!(parse("2^3^2").unwrap(), Expr::Binary(
            BinOp::Pow,
            Box::new(Expr::Num(2.0)),
            Box::new(Expr::Binary(BinOp::Pow, Box::new(Expr::Num(3.0)), Box::new(Expr::Num(2.0)))),
        ));
        assert_eq!(parse("-x^2").unwrap(), Expr::Neg(Box::new(Expr::Binary(
            BinOp::Pow,
            var("x"),
            Box::new(Expr::Num(2.0)),
        ))));
        assert_eq!(parse("x^-2").unwrap(), Expr::Binary(
            BinOp::Pow,
            var("x"),
            Box::new(Expr::Neg(Box::new(Expr::Num(2.0)))),
        ));
    }

    #[test]
    fn whitespace_and_scientific_literals() {
        assert_eq!(parse("  1.5e-3 *\tx ").unwrap(), parse("1.5e-3*x").unwrap());
        assert_eq!(parse("2e3").unwrap(), Expr::Num(2000.0));
    }

    #[test]
    fn pow_function_form() {
        assert_eq!(parse("pow(x, 3)").unwrap(), parse("x^3").unwrap());
    }

    #[test]
    fn errors() {
        assert_eq!(parse("").unwrap_err().offset, 0);
        assert_eq!(parse("x +").unwrap_err().offset, 3);
        assert_eq!(parse("foo(x)").unwrap_err().offset, 0);
        assert_eq!(parse("(x").unwrap_err().expected, "')'");
        assert_eq!(parse("x y").unwrap_err().offset, 2);
        assert_eq!(parse("x # 2").unwrap_err().offset, 2);
        assert_eq!(parse("pow(x)").unwrap_err().expected, "','");
    }
}
