//! Boolean guard expressions over atomic propositions.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr  := and ( ("|" | "||" | "∨") and )*
//! and   := unary ( ("&" | "&&" | "∧") unary )*
//! unary := ("!" | "~" | "¬") unary | atom
//! atom  := "true" | "false" | IDENT | "(" expr ")"
//! ```

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Guard {
    True,
    False,
    Prop(String),
    Not(Box<Guard>),
    And(Box<Guard>, Box<Guard>),
    Or(Box<Guard>, Box<Guard>),
}

impl Guard {
    /// Evaluates the guard; `holds(p)` reports whether proposition `p` is true.
    pub fn eval(&self, holds: &dyn Fn(&str) -> bool) -> bool {
        match self {
            Guard::True => true,
            Guard::False => false,
            Guard::Prop(p) => holds(p),
            Guard::Not(g) => !g.eval(holds),
            Guard::And(a, b) => a.eval(holds) && b.eval(holds),
            Guard::Or(a, b) => a.eval(holds) || b.eval(holds),
        }
    }

    /// Every proposition named in the expression, in order of appearance.
    pub fn props(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_props(&mut out);
        out
    }

    fn collect_props<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Guard::True | Guard::False => {}
            Guard::Prop(p) => out.push(p),
            Guard::Not(g) => g.collect_props(out),
            Guard::And(a, b) | Guard::Or(a, b) => {
                a.collect_props(out);
                b.collect_props(out);
            }
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Guard::True => write!(f, "true"),
            Guard::False => write!(f, "false"),
            Guard::Prop(p) => write!(f, "{p}"),
            Guard::Not(g) => write!(f, "!{g}"),
            Guard::And(a, b) => write!(f, "({a} & {b})"),
            Guard::Or(a, b) => write!(f, "({a} | {b})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Ident(String),
    Not,
    And,
    Or,
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>, String> {
    let mut tokens = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '!' | '~' | '¬' => {
                chars.next();
                tokens.push(Token::Not);
            }
            '&' | '∧' => {
                chars.next();
                if c == '&' && chars.peek() == Some(&'&') {
                    chars.next();
                }
                tokens.push(Token::And);
            }
            '|' | '∨' => {
                chars.next();
                if c == '|' && chars.peek() == Some(&'|') {
                    chars.next();
                }
                tokens.push(Token::Or);
            }
            '(' => {
                chars.next();
                tokens.push(Token::LParen);
            }
            ')' => {
                chars.next();
                tokens.push(Token::RParen);
            }
            c if c.is_alphanumeric() || c == '_' => {
                let mut ident = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_alphanumeric() || c == '_' {
                        ident.push(c);
                        chars.next();
                    } else {
                        break;
                    }
                }
                tokens.push(Token::Ident(ident));
            }
            other => return Err(format!("unexpected character {other:?} in guard")),
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Guard, String> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Token::Or) {
            self.next();
            let rhs = self.and()?;
            lhs = Guard::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Guard, String> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Token::And) {
            self.next();
            let rhs = self.unary()?;
            lhs = Guard::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Guard, String> {
        match self.next() {
            Some(Token::Not) => Ok(Guard::Not(Box::new(self.unary()?))),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                match self.next() {
                    Some(Token::RParen) => Ok(inner),
                    _ => Err("missing closing parenthesis".into()),
                }
            }
            Some(Token::Ident(id)) => Ok(match id.as_str() {
                "true" => Guard::True,
                "false" => Guard::False,
                _ => Guard::Prop(id),
            }),
            Some(t) => Err(format!("unexpected token {t:?}")),
            None => Err("unexpected end of guard".into()),
        }
    }
}

/// Parses a guard expression such as `!b & (a | goal)`.
pub fn parse_guard(src: &str) -> Result<Guard, String> {
    let tokens = tokenize(src)?;
    if tokens.is_empty() {
        return Err("empty guard".into());
    }
    let mut parser = Parser { tokens, pos: 0 };
    let guard = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        return Err(format!("trailing input in guard {src:?}"));
    }
    Ok(guard)
}
