//! Recursive-descent parser for the objective DSL.
//!
//! ```text
//! expr   := term (("+"|"-") term)* ;
//! term   := factor ("*" factor)* ;
//! factor := ["-"] atom ;
//! atom   := number | "x" index | "y" index | "(" expr ")"
//!         | "abs(" expr ")" | "min(" expr "," expr ")" | "max(" expr "," expr ")"
//!         | "pow(" expr "," integer ")" ;
//! ```

use super::{ExprError, ExprProgram, Node};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> ExprError {
    ExprError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            col += 1;
            i += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Token {
                tok,
                line: start_line,
                col: start_col,
            });
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() {
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                if i >= chars.len() || !chars[i].is_ascii_digit() {
                    return Err(syntax(line, col + (i - start), "expected digits after decimal point"));
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    return Err(syntax(line, col + (i - start), "malformed exponent in number"));
                }
            }
            out.push(Token {
                tok: Tok::Num(chars[start..i].iter().collect()),
                line: start_line,
                col: start_col,
            });
        } else if c.is_ascii_alphabetic() {
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: start_line,
                col: start_col,
            });
        } else {
            return Err(syntax(line, col, format!("unexpected character `{c}`")));
        }
        col += i - start;
    }
    out.push(Token { tok: Tok::End, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    dim_x: usize,
    dim_y: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ExprError> {
        let t = self.next();
        if t.tok == want {
            Ok(())
        } else {
            Err(syntax(t.line, t.col, format!("expected {what}, found {}", describe(&t.tok))))
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.next();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.next();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.factor()?;
        while self.peek().tok == Tok::Star {
            self.next();
            lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Node, ExprError> {
        if self.peek().tok == Tok::Minus {
            self.next();
            return Ok(Node::Neg(Box::new(self.atom()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let t = self.next();
        match t.tok {
            Tok::Num(text) => text
                .parse::<f64>()
                .map(Node::Const)
                .map_err(|_| syntax(t.line, t.col, format!("invalid number `{text}`"))),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => self.ident(name, t.line, t.col),
            other => Err(syntax(t.line, t.col, format!("expected an operand, found {}", describe(&other)))),
        }
    }

    fn ident(&mut self, name: String, line: usize, col: usize) -> Result<Node, ExprError> {
        match name.as_str() {
            "abs" => {
                self.expect(Tok::LParen, "`(` after abs")?;
                let a = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(Node::Abs(Box::new(a)))
            }
            "min" | "max" => {
                self.expect(Tok::LParen, "`(`")?;
                let a = self.expr()?;
                self.expect(Tok::Comma, "`,`")?;
                let b = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(if name == "min" {
                    Node::Min(Box::new(a), Box::new(b))
                } else {
                    Node::Max(Box::new(a), Box::new(b))
                })
            }
            "pow" => {
                self.expect(Tok::LParen, "`(` after pow")?;
                let a = self.expr()?;
                self.expect(Tok::Comma, "`,`")?;
                let e = self.next();
                let n = match &e.tok {
                    Tok::Num(text) if text.bytes().all(|b| b.is_ascii_digit()) => match text.parse::<u32>() {
                        Ok(n) if n >= 1 => n,
                        _ => {
                            return Err(ExprError::NonIntegerExponent {
                                text: text.clone(),
                                line: e.line,
                                col: e.col,
                            })
                        }
                    },
                    Tok::Num(text) => {
                        return Err(ExprError::NonIntegerExponent {
                            text: text.clone(),
                            line: e.line,
                            col: e.col,
                        })
                    }
                    Tok::Minus => {
                        return Err(ExprError::NonIntegerExponent {
                            text: "-".into(),
                            line: e.line,
                            col: e.col,
                        })
                    }
                    other => {
                        return Err(syntax(e.line, e.col, format!("expected integer exponent, found {}", describe(other))))
                    }
                };
                self.expect(Tok::RParen, "`)`")?;
                Ok(Node::Pow(Box::new(a), n))
            }
            _ => {
                let (block, digits) = name.split_at(1);
                let block = block.chars().next().unwrap_or(' ');
                if (block == 'x' || block == 'y') && !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                    let index: usize = digits
                        .parse()
                        .map_err(|_| syntax(line, col, format!("variable index too large in `{name}`")))?;
                    let dim = if block == 'x' { self.dim_x } else { self.dim_y };
                    if index >= dim {
                        return Err(ExprError::IndexOutOfRange {
                            block,
                            index,
                            dim,
                            line,
                            col,
                        });
                    }
                    Ok(if block == 'x' { Node::X(index) } else { Node::Y(index) })
                } else {
                    Err(syntax(line, col, format!("unknown identifier `{name}`")))
                }
            }
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Num(s) => format!("number `{s}`"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Plus => "`+`".into(),
        Tok::Minus => "`-`".into(),
        Tok::Star => "`*`".into(),
        Tok::End => "end of input".into(),
    }
}

/// Parses a DSL string over `dim_x` x-variables and `dim_y` y-variables.
pub fn parse(text: &str, dim_x: usize, dim_y: usize) -> Result<ExprProgram, ExprError> {
    if dim_x == 0 || dim_y == 0 {
        return Err(ExprError::EmptyBlock { dim_x, dim_y });
    }
    let mut parser = Parser {
        toks: lex(text)?,
        pos: 0,
        dim_x,
        dim_y,
    };
    let root = parser.expr()?;
    let t = parser.peek().clone();
    if t.tok != Tok::End {
        return Err(syntax(t.line, t.col, format!("unexpected {}", describe(&t.tok))));
    }
    ExprProgram::new(root, dim_x, dim_y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(n: Node) -> Box<Node> {
        Box::new(n)
    }

    #[test]
    fn parses_convex_hull_objective() {
        let p = parse("x0*y0 - 2*abs(abs(y0)-1)", 1, 1).unwrap();
        let expected = Node::Sub(
            b(Node::Mul(b(Node::X(0)), b(Node::Y(0)))),
            b(Node::Mul(
                b(Node::Const(2.0)),
                b(Node::Abs(b(Node::Sub(b(Node::Abs(b(Node::Y(0)))), b(Node::Const(1.0)))))),
            )),
        );
        assert_eq!(p.root(), &expected);
    }

    #[test]
    fn parses_atoms_and_nested_min_objective() {
        assert_eq!(parse("x0", 1, 1).unwrap().root(), &Node::X(0));
        let p = parse("min(0, y0) - y0*min(abs(x0),1)", 1, 1).unwrap();
        assert!(matches!(p.root(), Node::Sub(a, _) if matches!(**a, Node::Min(..))));
        assert_eq!(parse("-x0", 1, 1).unwrap().root(), &Node::Neg(b(Node::X(0))));
        assert_eq!(parse("1.5e-3", 1, 1).unwrap().root(), &Node::Const(1.5e-3));
    }

    #[test]
    fn operators_are_left_associative() {
        let p = parse("x0 - y0 - 1", 1, 1).unwrap();
        assert_eq!(
            p.root(),
            &Node::Sub(b(Node::Sub(b(Node::X(0)), b(Node::Y(0)))), b(Node::Const(1.0)))
        );
    }

    #[test]
    fn reports_positions() {
        match parse("x0 +\n  * y0", 1, 1) {
            Err(ExprError::Syntax { line, col, .. }) => assert_eq!((line, col), (2, 3)),
            other => panic!("unexpected {other:?}"),
        }
        match parse("x0 + x3", 2, 1) {
            Err(ExprError::IndexOutOfRange { block, index, dim, line, col }) => {
                assert_eq!((block, index, dim, line, col), ('x', 3, 2, 1, 6))
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse("pow(x0, 2.5)", 1, 1), Err(ExprError::NonIntegerExponent { .. })));
        assert!(matches!(parse("pow(x0, 0)", 1, 1), Err(ExprError::NonIntegerExponent { .. })));
        assert!(matches!(parse("pow(x0, -2)", 1, 1), Err(ExprError::NonIntegerExponent { .. })));
        assert!(matches!(parse("x0 / y0", 1, 1), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("sqrt(x0)", 1, 1), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("--x0", 1, 1), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("(x0", 1, 1), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x0)", 1, 1), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse("x0", 0, 1), Err(ExprError::EmptyBlock { .. })));
    }

    fn arb_node(p: usize, r: usize) -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0u32..1000, 0u32..4).prop_map(|(m, e)| Node::Const(m as f64 / 10f64.powi(e as i32))),
            (0..p).prop_map(Node::X),
            (0..r).prop_map(Node::Y),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, c)| Node::Add(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(|(a, c)| Node::Sub(b(a), b(c))),
                (inner.clone(), inner.clone()).prop_map(|(a, c)| Node::Mul(b(a), b(c))),
                inner.clone().prop_map(|a| Node::Neg(b(a))),
                (inner.clone(), 1u32..5).prop_map(|(a, n)| Node::Pow(b(a), n)),
                inner.clone().prop_map(|a| Node::Abs(b(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, c)| Node::Min(b(a), b(c))),
                (inner.clone(), inner).prop_map(|(a, c)| Node::Max(b(a), b(c))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(node in arb_node(2, 2)) {
            let prog = ExprProgram::new(node, 2, 2).unwrap();
            let text = prog.to_string();
            let back = parse(&text, 2, 2).unwrap();
            prop_assert_eq!(back.root(), prog.root());
        }
    }
}
