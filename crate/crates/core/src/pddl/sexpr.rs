//! Minimal s-expression reader with source positions.

use super::PddlError;

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Symbol(String),
    List(Vec<SExpr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SExpr {
    pub node: Node,
    pub line: usize,
    pub col: usize,
}

impl SExpr {
    pub fn symbol(&self) -> Option<&str> {
        match &self.node {
            Node::Symbol(s) => Some(s),
            Node::List(_) => None,
        }
    }

    pub fn list(&self) -> Option<&[SExpr]> {
        match &self.node {
            Node::List(items) => Some(items),
            Node::Symbol(_) => None,
        }
    }

    /// True when this node is a symbol equal to `kw`, ignoring ASCII case.
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.symbol().is_some_and(|s| s.eq_ignore_ascii_case(kw))
    }

    pub fn describe(&self) -> String {
        match &self.node {
            Node::Symbol(s) => format!("`{s}`"),
            Node::List(_) => "a list".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open,
    Close,
    Symbol(String),
}

fn tokenize(text: &str) -> Vec<(Token, usize, usize)> {
    let mut tokens = Vec::new();
    let mut line = 1;
    let mut col = 1;
    let mut chars = text.chars().peekable();
    let mut current = String::new();
    let mut start = (1, 1);

    let flush = |current: &mut String, tokens: &mut Vec<(Token, usize, usize)>, start: (usize, usize)| {
        if !current.is_empty() {
            tokens.push((Token::Symbol(std::mem::take(current)), start.0, start.1));
        }
    };

    while let Some(c) = chars.next() {
        match c {
            ';' => {
                flush(&mut current, &mut tokens, start);
                // comment runs to end of line
                for c in chars.by_ref() {
                    if c == '\n' {
                        line += 1;
                        col = 0;
                        break;
                    }
                }
            }
            '(' | ')' => {
                flush(&mut current, &mut tokens, start);
                let tok = if c == '(' { Token::Open } else { Token::Close };
                tokens.push((tok, line, col));
            }
            c if c.is_whitespace() => {
                flush(&mut current, &mut tokens, start);
                if c == '\n' {
                    line += 1;
                    col = 0;
                }
            }
            c => {
                if current.is_empty() {
                    start = (line, col);
                }
                current.push(c);
            }
        }
        col += 1;
    }
    flush(&mut current, &mut tokens, start);
    tokens
}

/// Parses exactly one top-level s-expression; trailing content is an error.
pub fn parse_one(text: &str) -> Result<SExpr, PddlError> {
    let tokens = tokenize(text);
    let mut pos = 0;
    let expr = parse_expr(&tokens, &mut pos, end_position(text))?;
    if let Some((tok, line, col)) = tokens.get(pos) {
        return Err(PddlError::Syntax {
            line: *line,
            col: *col,
            expected: "end of input".into(),
            found: token_text(tok),
        });
    }
    Ok(expr)
}

fn end_position(text: &str) -> (usize, usize) {
    let line = text.lines().count().max(1);
    let col = text.lines().last().map_or(1, |l| l.chars().count() + 1);
    (line, col)
}

fn token_text(tok: &Token) -> String {
    match tok {
        Token::Open => "`(`".into(),
        Token::Close => "`)`".into(),
        Token::Symbol(s) => format!("`{s}`"),
    }
}

fn parse_expr(tokens: &[(Token, usize, usize)], pos: &mut usize, eof: (usize, usize)) -> Result<SExpr, PddlError> {
    let Some((tok, line, col)) = tokens.get(*pos) else {
        return Err(PddlError::Syntax {
            line: eof.0,
            col: eof.1,
            expected: "an expression".into(),
            found: "end of input".into(),
        });
    };
    *pos += 1;
    match tok {
        Token::Symbol(s) => Ok(SExpr {
            node: Node::Symbol(s.clone()),
            line: *line,
            col: *col,
        }),
        Token::Close => Err(PddlError::Syntax {
            line: *line,
            col: *col,
            expected: "an expression".into(),
            found: "`)`".into(),
        }),
        Token::Open => {
            let mut items = Vec::new();
            loop {
                match tokens.get(*pos) {
                    None => {
                        return Err(PddlError::Syntax {
                            line: eof.0,
                            col: eof.1,
                            expected: "`)`".into(),
                            found: "end of input".into(),
                        })
                    }
                    Some((Token::Close, _, _)) => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => items.push(parse_expr(tokens, pos, eof)?),
                }
            }
            Ok(SExpr {
                node: Node::List(items),
                line: *line,
                col: *col,
            })
        }
    }
}
