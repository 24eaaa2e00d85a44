//! Hand-written lexer and recursive-descent parser for IPL.

use super::ast::{AttrPath, CmpOp, Effect, Expr, Operand, Policy, Root};
use super::PolicyError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Int(i64, String),
    Str(String),
    Op(CmpOp),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Semi,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Word(w) => format!("`{w}`"),
            Tok::Int(_, t) => format!("integer `{t}`"),
            Tok::Str(_) => "string literal".to_owned(),
            Tok::Op(op) => format!("`{}`", op.as_str()),
            Tok::LParen => "`(`".to_owned(),
            Tok::RParen => "`)`".to_owned(),
            Tok::LBracket => "`[`".to_owned(),
            Tok::RBracket => "`]`".to_owned(),
            Tok::Comma => "`,`".to_owned(),
            Tok::Dot => "`.`".to_owned(),
            Tok::Semi => "`;`".to_owned(),
            Tok::Eof => "end of input".to_owned(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

const KEYWORDS: &[&str] = &[
    "permit", "deny", "when", "and", "or", "not", "true", "false", "in", "matches",
];

fn is_word_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_word_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

fn advance(n: usize, i: &mut usize, col: &mut usize) {
    *i += n;
    *col += n;
}

fn lex(source: &str) -> Result<Vec<Spanned>, PolicyError> {
    let chars: Vec<char> = source.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, column, message: String| PolicyError::Parse {
        line,
        column,
        message,
    };

    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            c if c.is_whitespace() => {
                advance(1, &mut i, &mut col);
                continue;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    advance(1, &mut i, &mut col);
                }
                continue;
            }
            '(' | ')' | '[' | ']' | ',' | '.' | ';' => {
                let tok = match c {
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    ',' => Tok::Comma,
                    '.' => Tok::Dot,
                    _ => Tok::Semi,
                };
                advance(1, &mut i, &mut col);
                out.push(Spanned { tok, line: start_line, column: start_col });
            }
            '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (op, len) = match (c, next) {
                    ('=', Some('=')) => (CmpOp::Eq, 2),
                    ('!', Some('=')) => (CmpOp::Ne, 2),
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', _) => (CmpOp::Gt, 1),
                    _ => {
                        return Err(err(line, col, format!("unexpected character `{c}`")));
                    }
                };
                advance(len, &mut i, &mut col);
                out.push(Spanned { tok: Tok::Op(op), line: start_line, column: start_col });
            }
            '"' => {
                advance(1, &mut i, &mut col);
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None => {
                            return Err(err(start_line, start_col, "unterminated string".into()))
                        }
                        Some('"') => {
                            advance(1, &mut i, &mut col);
                            break;
                        }
                        Some('\\') => match chars.get(i + 1) {
                            Some(&e @ ('"' | '\\')) => {
                                s.push(e);
                                advance(2, &mut i, &mut col);
                            }
                            _ => return Err(err(line, col, "invalid escape sequence".into())),
                        },
                        Some('\n') => {
                            s.push('\n');
                            i += 1;
                            line += 1;
                            col = 1;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            advance(1, &mut i, &mut col);
                        }
                    }
                }
                out.push(Spanned { tok: Tok::Str(s), line: start_line, column: start_col });
            }
            c if c.is_ascii_digit()
                || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) =>
            {
                let begin = i;
                advance(1, &mut i, &mut col);
                while i < chars.len() && chars[i].is_ascii_digit() {
                    advance(1, &mut i, &mut col);
                }
                let text: String = chars[begin..i].iter().collect();
                let value = text
                    .parse::<i64>()
                    .map_err(|_| err(start_line, start_col, format!("integer `{text}` out of range")))?;
                out.push(Spanned { tok: Tok::Int(value, text), line: start_line, column: start_col });
            }
            c if is_word_start(c) => {
                let begin = i;
                while i < chars.len() && is_word_continue(chars[i]) {
                    advance(1, &mut i, &mut col);
                }
                let word: String = chars[begin..i].iter().collect();
                out.push(Spanned { tok: Tok::Word(word), line: start_line, column: start_col });
            }
            other => return Err(err(line, col, format!("unexpected character `{other}`"))),
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
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

    fn expected(&self, what: &str) -> PolicyError {
        let t = self.peek();
        PolicyError::Parse {
            line: t.line,
            column: t.column,
            message: format!("expected {what}, found {}", t.tok.describe()),
        }
    }

    fn at_word(&self, w: &str) -> bool {
        matches!(&self.peek().tok, Tok::Word(x) if x == w)
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if self.at_word(w) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), PolicyError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.expected(what))
        }
    }

    fn policies(&mut self) -> Result<Vec<Policy>, PolicyError> {
        let mut out = Vec::new();
        while self.peek().tok != Tok::Eof {
            out.push(self.policy()?);
        }
        Ok(out)
    }

    fn policy(&mut self) -> Result<Policy, PolicyError> {
        let effect = if self.eat_word("permit") {
            Effect::Permit
        } else if self.eat_word("deny") {
            Effect::Deny
        } else {
            return Err(self.expected("`permit` or `deny`"));
        };
        let id = match &self.peek().tok {
            Tok::Word(w) if !KEYWORDS.contains(&w.as_str()) => w.clone(),
            _ => return Err(self.expected("policy identifier")),
        };
        self.bump();
        if !self.eat_word("when") {
            return Err(self.expected("`when`"));
        }
        let condition = self.expr()?;
        self.expect(Tok::Semi, "`;`")?;
        Ok(Policy { id, effect, condition })
    }

    fn expr(&mut self) -> Result<Expr, PolicyError> {
        let mut items = vec![self.and_expr()?];
        while self.eat_word("or") {
            items.push(self.and_expr()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { Expr::Or(items) })
    }

    fn and_expr(&mut self) -> Result<Expr, PolicyError> {
        let mut items = vec![self.unary()?];
        while self.eat_word("and") {
            items.push(self.unary()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { Expr::And(items) })
    }

    fn unary(&mut self) -> Result<Expr, PolicyError> {
        if self.eat_word("not") {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, PolicyError> {
        if self.peek().tok == Tok::LParen {
            self.bump();
            let inner = self.expr()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(inner);
        }
        if self.eat_word("true") {
            return Ok(Expr::Bool(true));
        }
        if self.eat_word("false") {
            return Ok(Expr::Bool(false));
        }
        let lhs = self.operand()?;
        let op = match self.peek().tok {
            Tok::Op(op) => op,
            Tok::Word(ref w) if w == "in" => CmpOp::In,
            Tok::Word(ref w) if w == "matches" => CmpOp::Matches,
            _ => return Err(self.expected("comparison operator")),
        };
        self.bump();
        let rhs = self.operand()?;
        Ok(Expr::Cmp { lhs, op, rhs })
    }

    fn operand(&mut self) -> Result<Operand, PolicyError> {
        match self.peek().tok.clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(Operand::Str(s))
            }
            Tok::Int(v, _) => {
                self.bump();
                Ok(Operand::Int(v))
            }
            Tok::LBracket => {
                self.bump();
                let mut items = Vec::new();
                if self.peek().tok != Tok::RBracket {
                    loop {
                        match self.peek().tok.clone() {
                            Tok::Str(s) => {
                                self.bump();
                                items.push(s);
                            }
                            _ => return Err(self.expected("string literal")),
                        }
                        if self.peek().tok == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBracket, "`]`")?;
                Ok(Operand::Set(items))
            }
            Tok::Word(w) if !KEYWORDS.contains(&w.as_str()) => {
                self.bump();
                let mut segments = Vec::new();
                while self.peek().tok == Tok::Dot {
                    self.bump();
                    let seg = match &self.peek().tok {
                        Tok::Word(seg) => seg.clone(),
                        Tok::Int(_, text) => text.clone(),
                        _ => return Err(self.expected("attribute name")),
                    };
                    self.bump();
                    segments.push(seg);
                }
                Ok(Operand::Attr(AttrPath { root: Root::from_ident(&w), segments }))
            }
            _ => Err(self.expected("expression")),
        }
    }
}

pub(super) fn parse_policies(source: &str) -> Result<Vec<Policy>, PolicyError> {
    let toks = lex(source)?;
    Parser { toks, pos: 0 }.policies()
}

/// Parses a standalone condition expression (used by tests and tooling).
pub fn parse_expr(source: &str) -> Result<Expr, PolicyError> {
    let toks = lex(source)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.expected("end of input"));
    }
    Ok(e)
}
