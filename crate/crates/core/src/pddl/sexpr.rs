//! Lowercasing s-expression reader with source positions.

use super::PddlError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SExpr {
    Atom { text: String, line: usize, col: usize },
    List { items: Vec<SExpr>, line: usize, col: usize },
}

impl SExpr {
    pub fn pos(&self) -> (usize, usize) {
        match self {
            SExpr::Atom { line, col, .. } | SExpr::List { line, col, .. } => (*line, *col),
        }
    }

    pub fn atom(&self) -> Option<&str> {
        match self {
            SExpr::Atom { text, .. } => Some(text),
            _ => None,
        }
    }

    pub fn list(&self) -> Option<&[SExpr]> {
        match self {
            SExpr::List { items, .. } => Some(items),
            _ => None,
        }
    }

    /// First element when this is a list headed by an atom.
    pub fn head(&self) -> Option<&str> {
        self.list().and_then(|l| l.first()).and_then(SExpr::atom)
    }
}

/// Reads exactly one top-level form. `;` starts a comment to end of line.
pub fn read(source: &str) -> Result<SExpr, PddlError> {
    let mut stack: Vec<(Vec<SExpr>, usize, usize)> = Vec::new();
    let mut top: Option<SExpr> = None;
    let mut chars = source.char_indices().peekable();
    let (mut line, mut col) = (1usize, 0usize);

    while let Some((_, c)) = chars.next() {
        if c == '\n' {
            line += 1;
            col = 0;
            continue;
        }
        col += 1;
        if c.is_whitespace() {
            continue;
        }
        if c == ';' {
            while let Some(&(_, n)) = chars.peek() {
                if n == '\n' {
                    break;
                }
                chars.next();
            }
            continue;
        }
        if top.is_some() {
            return Err(PddlError::syntax(line, col, "unexpected content after the end of the domain"));
        }
        match c {
            '(' => stack.push((Vec::new(), line, col)),
            ')' => {
                let Some((items, l, c0)) = stack.pop() else {
                    return Err(PddlError::syntax(line, col, "unmatched ')'"));
                };
                let node = SExpr::List { items, line: l, col: c0 };
                match stack.last_mut() {
                    Some(parent) => parent.0.push(node),
                    None => top = Some(node),
                }
            }
            _ => {
                let (l, c0) = (line, col);
                let mut text = String::new();
                text.extend(c.to_lowercase());
                while let Some(&(_, n)) = chars.peek() {
                    if n.is_whitespace() || n == '(' || n == ')' || n == ';' {
                        break;
                    }
                    text.extend(n.to_lowercase());
                    chars.next();
                    col += 1;
                }
                let node = SExpr::Atom { text, line: l, col: c0 };
                match stack.last_mut() {
                    Some(parent) => parent.0.push(node),
                    None => return Err(PddlError::syntax(l, c0, "expected '(' at top level")),
                }
            }
        }
    }
    if let Some((_, l, c)) = stack.last() {
        return Err(PddlError::syntax(*l, *c, "unclosed '('"));
    }
    top.ok_or_else(|| PddlError::syntax(line, col, "empty input"))
}
