//! Filter predicates: comparisons combined with `and` / `or` and parentheses.
//!
//! ```text
//! expr       := and_expr ( 'or' and_expr )*
//! and_expr   := term ( 'and' term )*
//! term       := '(' expr ')' | comparison
//! comparison := ident cmp literal
//! ```
//!
//! `and` binds tighter than `or`. Identifiers are plain (`Year`) or
//! backtick-quoted (`` `Amount Paid` ``); text literals use single or double quotes.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConditionError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown comparator '{found}' at {pos}")]
    UnknownComparator { pos: usize, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Gt,
    Ge,
    Lt,
    Le,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [
        CmpOp::Eq,
        CmpOp::Ne,
        CmpOp::Gt,
        CmpOp::Ge,
        CmpOp::Lt,
        CmpOp::Le,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Real(f64),
    Text(String),
    Bool(bool),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Compare {
        column: String,
        op: CmpOp,
        literal: Literal,
    },
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
}

/// Quote style for rendering text literals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuoteStyle {
    Single,
    Double,
}

impl Condition {
    pub fn compare(column: impl Into<String>, op: CmpOp, literal: Literal) -> Self {
        Condition::Compare {
            column: column.into(),
            op,
            literal,
        }
    }

    pub fn and(self, other: Condition) -> Self {
        Condition::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Condition) -> Self {
        Condition::Or(Box::new(self), Box::new(other))
    }

    /// Columns referenced, in order of appearance.
    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Condition::Compare { column, .. } => out.push(column),
            Condition::And(a, b) | Condition::Or(a, b) => {
                a.collect_columns(out);
                b.collect_columns(out);
            }
        }
    }

    /// Comparisons in order of appearance.
    pub fn comparisons(&self) -> Vec<(&str, CmpOp, &Literal)> {
        match self {
            Condition::Compare {
                column,
                op,
                literal,
            } => vec![(column.as_str(), *op, literal)],
            Condition::And(a, b) | Condition::Or(a, b) => {
                let mut v = a.comparisons();
                v.extend(b.comparisons());
                v
            }
        }
    }

    /// Render with the given quote style for text literals. Compound children
    /// are always parenthesized so the output re-parses to the same tree.
    pub fn render(&self, quotes: QuoteStyle, true_word: &str, false_word: &str) -> String {
        match self {
            Condition::Compare {
                column,
                op,
                literal,
            } => format!(
                "{} {} {}",
                render_ident(column),
                op.symbol(),
                render_literal(literal, quotes, true_word, false_word)
            ),
            Condition::And(a, b) => format!(
                "{} and {}",
                a.render_child(quotes, true_word, false_word),
                b.render_child(quotes, true_word, false_word)
            ),
            Condition::Or(a, b) => format!(
                "{} or {}",
                a.render_child(quotes, true_word, false_word),
                b.render_child(quotes, true_word, false_word)
            ),
        }
    }

    fn render_child(&self, quotes: QuoteStyle, t: &str, f: &str) -> String {
        match self {
            Condition::Compare { .. } => self.render(quotes, t, f),
            _ => format!("({})", self.render(quotes, t, f)),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(QuoteStyle::Single, "true", "false"))
    }
}

fn is_plain_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_') && !is_reserved(s)
}

fn is_reserved(s: &str) -> bool {
    matches!(
        s.to_ascii_lowercase().as_str(),
        "and" | "or" | "true" | "false" | "not" | "in"
    )
}

/// Plain identifiers stay bare; anything else is backtick-quoted.
pub fn render_ident(name: &str) -> String {
    if is_plain_ident(name) {
        name.to_string()
    } else {
        format!("`{name}`")
    }
}

pub fn render_literal(lit: &Literal, quotes: QuoteStyle, t: &str, f: &str) -> String {
    match lit {
        Literal::Int(i) => i.to_string(),
        Literal::Real(r) => crate::table::format_real(*r),
        Literal::Bool(b) => if *b { t } else { f }.to_string(),
        Literal::Text(s) => {
            let q = match quotes {
                QuoteStyle::Single => '\'',
                QuoteStyle::Double => '"',
            };
            let mut out = String::with_capacity(s.len() + 2);
            out.push(q);
            for c in s.chars() {
                if c == q || c == '\\' {
                    out.push('\\');
                }
                out.push(c);
            }
            out.push(q);
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Lit(Literal),
    Cmp(CmpOp),
    And,
    Or,
    LParen,
    RParen,
}

fn lex(s: &str) -> Result<Vec<(usize, Token)>, ConditionError> {
    let chars: Vec<(usize, char)> = s.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |pos: usize, message: String| ConditionError::Syntax { pos, message };
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        match c {
            '(' => {
                out.push((pos, Token::LParen));
                i += 1;
            }
            ')' => {
                out.push((pos, Token::RParen));
                i += 1;
            }
            '`' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j].1 != '`' {
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(err(pos, "unterminated backtick identifier".into()));
                }
                let name: String = chars[start..j].iter().map(|(_, c)| *c).collect();
                if name.is_empty() {
                    return Err(err(pos, "empty identifier".into()));
                }
                out.push((pos, Token::Ident(name)));
                i = j + 1;
            }
            '\'' | '"' => {
                let q = c;
                let mut j = i + 1;
                let mut text = String::new();
                loop {
                    if j >= chars.len() {
                        return Err(err(pos, "unterminated string literal".into()));
                    }
                    let ch = chars[j].1;
                    if ch == '\\' && j + 1 < chars.len() {
                        text.push(chars[j + 1].1);
                        j += 2;
                    } else if ch == q {
                        break;
                    } else {
                        text.push(ch);
                        j += 1;
                    }
                }
                out.push((pos, Token::Lit(Literal::Text(text))));
                i = j + 1;
            }
            '=' | '!' | '<' | '>' => {
                let mut j = i;
                while j < chars.len() && matches!(chars[j].1, '=' | '!' | '<' | '>') {
                    j += 1;
                }
                let sym: String = chars[i..j].iter().map(|(_, c)| *c).collect();
                let op = match sym.as_str() {
                    "==" => CmpOp::Eq,
                    "!=" => CmpOp::Ne,
                    ">" => CmpOp::Gt,
                    ">=" => CmpOp::Ge,
                    "<" => CmpOp::Lt,
                    "<=" => CmpOp::Le,
                    _ => return Err(ConditionError::UnknownComparator { pos, found: sym }),
                };
                out.push((pos, Token::Cmp(op)));
                i = j;
            }
            c if c.is_ascii_digit() || c == '.' || c == '-' || c == '+' => {
                let mut j = i + 1;
                while j < chars.len() {
                    let ch = chars[j].1;
                    let prev = chars[j - 1].1;
                    if ch.is_ascii_digit()
                        || ch == '.'
                        || ch == 'e'
                        || ch == 'E'
                        || ((ch == '-' || ch == '+') && (prev == 'e' || prev == 'E'))
                    {
                        j += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[i..j].iter().map(|(_, c)| *c).collect();
                let lit = parse_number(&text)
                    .ok_or_else(|| err(pos, format!("invalid number '{text}'")))?;
                out.push((pos, Token::Lit(lit)));
                i = j;
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].1.is_alphanumeric() || chars[j].1 == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().map(|(_, c)| *c).collect();
                let tok = match word.as_str() {
                    "and" | "AND" | "And" => Token::And,
                    "or" | "OR" | "Or" => Token::Or,
                    "true" | "True" | "TRUE" => Token::Lit(Literal::Bool(true)),
                    "false" | "False" | "FALSE" => Token::Lit(Literal::Bool(false)),
                    _ => Token::Ident(word),
                };
                out.push((pos, tok));
                i = j;
            }
            other => return Err(err(pos, format!("unexpected character '{other}'"))),
        }
    }
    Ok(out)
}

fn parse_number(text: &str) -> Option<Literal> {
    if !crate::table::is_decimal(text) {
        return None;
    }
    let digits = text.strip_prefix(['+', '-']).unwrap_or(text);
    if digits.bytes().all(|b| b.is_ascii_digit()) {
        if let Ok(i) = text.parse::<i64>() {
            return Some(Literal::Int(i));
        }
    }
    text.parse::<f64>().ok().map(Literal::Real)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn error(&self, message: impl Into<String>) -> ConditionError {
        ConditionError::Syntax {
            pos: self.offset(),
            message: message.into(),
        }
    }

    fn expr(&mut self) -> Result<Condition, ConditionError> {
        let mut lhs = self.and_expr()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            let rhs = self.and_expr()?;
            lhs = lhs.or(rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Condition, ConditionError> {
        let mut lhs = self.term()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = lhs.and(rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Condition, ConditionError> {
        match self.peek() {
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Token::RParen) {
                    return Err(self.error("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Token::Ident(_)) => self.comparison(),
            Some(_) => Err(self.error("expected column name or '('")),
            None => Err(self.error("unexpected end of condition")),
        }
    }

    fn comparison(&mut self) -> Result<Condition, ConditionError> {
        let column = match self.peek() {
            Some(Token::Ident(name)) => name.clone(),
            _ => return Err(self.error("expected column name")),
        };
        self.pos += 1;
        let op = match self.peek() {
            Some(Token::Cmp(op)) => *op,
            _ => return Err(self.error("expected comparator")),
        };
        self.pos += 1;
        let literal = match self.peek() {
            Some(Token::Lit(l)) => l.clone(),
            _ => return Err(self.error("expected literal")),
        };
        self.pos += 1;
        Ok(Condition::Compare {
            column,
            op,
            literal,
        })
    }
}

pub fn parse_condition(s: &str) -> Result<Condition, ConditionError> {
    if s.trim().is_empty() {
        return Err(ConditionError::Syntax {
            pos: 0,
            message: "empty condition".into(),
        });
    }
    let tokens = lex(s)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end: s.len(),
    };
    let cond = p.expr()?;
    if p.pos != p.tokens.len() {
        return Err(p.error("trailing input"));
    }
    Ok(cond)
}
