//! Arithmetic expression language for config-declared coefficients.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right associative
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers are coordinates `x1`..`xp` (1-based), named constants bound at
//! parse time, or one of the functions `sqrt exp log abs sin cos pow min max`.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at offset {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: expected one of {expected:?}, found {found}")]
    Syntax { expected: Vec<String>, found: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("function `{function}` takes {expected} argument(s), found {found}")]
    Arity {
        function: String,
        expected: usize,
        found: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Abs,
    Sin,
    Cos,
    Pow,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "pow" => Func::Pow,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Pow | Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    /// Zero-based coordinate index.
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

impl Node {
    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        match self {
            Node::Num(v) => T::of(*v),
            Node::Var(i) => x.get(*i).copied().unwrap_or_else(T::nan),
            Node::Neg(a) => -a.eval(x),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(x), b.eval(x));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Node::Call(f, args) => {
                let a = args[0].eval(x);
                match f {
                    Func::Sqrt => a.sqrt(),
                    Func::Exp => a.exp(),
                    Func::Log => a.ln(),
                    Func::Abs => a.abs(),
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Pow => a.powf(args[1].eval(x)),
                    Func::Min => a.min(args[1].eval(x)),
                    Func::Max => a.max(args[1].eval(x)),
                }
            }
        }
    }

    /// Renumbers coordinates as if `x_{m+1}` were deleted; `None` when the
    /// tree reads that coordinate.
    fn without_var(&self, m: usize) -> Option<Node> {
        Some(match self {
            Node::Num(v) => Node::Num(*v),
            Node::Var(i) if *i == m => return None,
            Node::Var(i) => Node::Var(if *i > m { i - 1 } else { *i }),
            Node::Neg(a) => Node::Neg(Box::new(a.without_var(m)?)),
            Node::Bin(op, a, b) => Node::Bin(*op, Box::new(a.without_var(m)?), Box::new(b.without_var(m)?)),
            Node::Call(f, args) => Node::Call(
                *f,
                args.iter().map(|a| a.without_var(m)).collect::<Option<Vec<_>>>()?,
            ),
        })
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Num(_) => None,
            Node::Var(i) => Some(*i),
            Node::Neg(a) => a.max_var(),
            Node::Bin(_, a, b) => a.max_var().max(b.max_var()),
            Node::Call(_, args) => args.iter().filter_map(Node::max_var).max(),
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => write!(f, "{v}"),
            Node::Var(i) => write!(f, "x{}", i + 1),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    source: String,
    root: Node,
}

impl Expression {
    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    #[inline]
    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        self.root.eval(x)
    }

    /// Number of coordinates the expression needs (largest `xk` index).
    pub fn arity(&self) -> usize {
        self.root.max_var().map_or(0, |i| i + 1)
    }

    pub fn is_constant(&self) -> bool {
        self.root.max_var().is_none()
    }

    /// Same function expressed over the coordinates that remain after deleting
    /// coordinate `m` (zero-based). `None` if the expression reads `x_{m+1}`.
    pub fn without_coordinate(&self, m: usize) -> Option<Expression> {
        Some(Expression {
            source: self.source.clone(),
            root: self.root.without_var(m)?,
        })
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}

pub fn parse_expression(source: &str) -> Result<Expression, ParseError> {
    parse_expression_with(source, &HashMap::new())
}

/// Parses with named constants substituted as literals.
pub fn parse_expression_with(
    source: &str,
    constants: &HashMap<String, f64>,
) -> Result<Expression, ParseError> {
    let tokens = lex(source)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        constants,
        end: source.len(),
    };
    let root = p.expr()?;
    if let Some(tok) = p.peek() {
        return Err(p.syntax(tok.offset, &["operator", "end of input"], &tok.kind.describe()));
    }
    Ok(Expression {
        source: source.to_owned(),
        root,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl TokKind {
    fn describe(&self) -> String {
        match self {
            TokKind::Num(v) => format!("number {v}"),
            TokKind::Ident(s) => format!("identifier `{s}`"),
            TokKind::Op(c) => format!("`{c}`"),
            TokKind::LParen => "`(`".into(),
            TokKind::RParen => "`)`".into(),
            TokKind::Comma => "`,`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Tok {
    kind: TokKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Tok>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ParseError {
                    offset: start,
                    kind: ParseErrorKind::Syntax {
                        expected: vec!["number".into()],
                        found: format!("`{text}`"),
                    },
                })?;
                out.push(Tok {
                    kind: TokKind::Num(v),
                    offset: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Tok {
                    kind: TokKind::Ident(src[start..i].to_owned()),
                    offset: start,
                });
                continue;
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => out.push(Tok {
                kind: TokKind::Op(c as char),
                offset: start,
            }),
            b'(' => out.push(Tok {
                kind: TokKind::LParen,
                offset: start,
            }),
            b')' => out.push(Tok {
                kind: TokKind::RParen,
                offset: start,
            }),
            b',' => out.push(Tok {
                kind: TokKind::Comma,
                offset: start,
            }),
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    offset: start,
                    kind: ParseErrorKind::Syntax {
                        expected: vec!["number".into(), "identifier".into(), "operator".into()],
                        found: format!("`{ch}`"),
                    },
                });
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    constants: &'a HashMap<String, f64>,
    end: usize,
}

const OPERAND: &[&str] = &["number", "identifier", "`(`", "`-`"];

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Tok {
                kind: TokKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn syntax(&self, offset: usize, expected: &[&str], found: &str) -> ParseError {
        ParseError {
            offset,
            kind: ParseErrorKind::Syntax {
                expected: expected.iter().map(|s| s.to_string()).collect(),
                found: found.to_owned(),
            },
        }
    }

    fn expect(&mut self, kind: TokKind, name: &str) -> Result<(), ParseError> {
        match self.next() {
            Some(t) if t.kind == kind => Ok(()),
            Some(t) => Err(self.syntax(t.offset, &[name], &t.kind.describe())),
            None => Err(self.syntax(self.end, &[name], "end of input")),
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if op == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if op == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ParseError> {
        let tok = match self.next() {
            Some(t) => t,
            None => return Err(self.syntax(self.end, OPERAND, "end of input")),
        };
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Num(v)),
            TokKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokKind::RParen, "`)`")?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                let is_call = matches!(
                    self.peek(),
                    Some(Tok {
                        kind: TokKind::LParen,
                        ..
                    })
                );
                if is_call {
                    let func = Func::lookup(&name).ok_or_else(|| ParseError {
                        offset: tok.offset,
                        kind: ParseErrorKind::UnknownIdentifier(name.clone()),
                    })?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    loop {
                        match self.next() {
                            Some(Tok {
                                kind: TokKind::Comma,
                                ..
                            }) => args.push(self.expr()?),
                            Some(Tok {
                                kind: TokKind::RParen,
                                ..
                            }) => break,
                            Some(t) => {
                                return Err(self.syntax(t.offset, &["`,`", "`)`"], &t.kind.describe()))
                            }
                            None => return Err(self.syntax(self.end, &["`,`", "`)`"], "end of input")),
                        }
                    }
                    if args.len() != func.arity() {
                        return Err(ParseError {
                            offset: tok.offset,
                            kind: ParseErrorKind::Arity {
                                function: name,
                                expected: func.arity(),
                                found: args.len(),
                            },
                        });
                    }
                    return Ok(Node::Call(func, args));
                }
                if let Some(&v) = self.constants.get(&name) {
                    return Ok(Node::Num(v));
                }
                match coordinate_index(&name) {
                    Some(i) => Ok(Node::Var(i)),
                    None => Err(ParseError {
                        offset: tok.offset,
                        kind: ParseErrorKind::UnknownIdentifier(name),
                    }),
                }
            }
            other => Err(self.syntax(tok.offset, OPERAND, &other.describe())),
        }
    }
}

/// `x3` → `Some(2)`.
fn coordinate_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    match digits.parse::<usize>() {
        Ok(k) if k >= 1 => Some(k - 1),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn eval(src: &str, x: &[f64]) -> f64 {
        parse_expression(src).unwrap().eval(x)
    }

    #[test]
    fn evaluates_basic_expressions() {
        assert_eq!(eval("x1 + 2*x2", &[1.0, 3.0]), 7.0);
        assert_eq!(eval("sqrt(x1^2 + x2^2)", &[3.0, 4.0]), 5.0);
        assert_eq!(eval("max(x1, 2) - min(x1, 2)", &[5.0]), 3.0);
        assert_eq!(eval("pow(2, 10)", &[]), 1024.0);
        assert_eq!(eval("2.5e-1 * 4", &[]), 1.0);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval("-x1^2", &[3.0]), -9.0);
        assert_eq!(eval("2^3^2", &[]), 512.0);
        assert_eq!(eval("2^-1", &[]), 0.5);
        assert_eq!(eval("1 - 2 - 3", &[]), -4.0);
        assert_eq!(eval("8 / 4 / 2", &[]), 1.0);
        assert_eq!(eval("1 + 2 * 3", &[]), 7.0);
    }

    #[test]
    fn dangling_operator_reports_end_offset() {
        let err = parse_expression("x1 +").unwrap_err();
        assert_eq!(err.offset, 4);
        match err.kind {
            ParseErrorKind::Syntax { expected, found } => {
                assert!(expected.contains(&"number".to_string()));
                assert_eq!(found, "end of input");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_and_arity() {
        let err = parse_expression("2 * y").unwrap_err();
        assert_eq!(err.offset, 4);
        assert!(matches!(err.kind, ParseErrorKind::UnknownIdentifier(ref s) if s == "y"));
        let err = parse_expression("pow(x1)").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::Arity { expected: 2, found: 1, .. }));
        let err = parse_expression("x0").unwrap_err();
        assert!(matches!(err.kind, ParseErrorKind::UnknownIdentifier(_)));
        let err = parse_expression("(x1").unwrap_err();
        assert_eq!(err.offset, 3);
        let err = parse_expression("x1 x2").unwrap_err();
        assert_eq!(err.offset, 3);
    }

    #[test]
    fn constants_are_substituted() {
        let mut c = HashMap::new();
        c.insert("b12".to_string(), 0.5);
        let e = parse_expression_with("b12 * x2", &c).unwrap();
        assert_eq!(e.eval(&[0.0, 4.0]), 2.0);
        assert_eq!(e.arity(), 2);
    }

    #[test]
    fn domain_errors_are_non_finite() {
        assert!(eval("log(x1)", &[-1.0]).is_nan());
        assert!(eval("sqrt(x1)", &[-1.0]).is_nan());
        assert!(eval("1 / x1", &[0.0]).is_infinite());
    }

    #[test]
    fn deleting_a_coordinate_renumbers_the_rest() {
        let e = parse_expression("x1 + 10 * x3").unwrap();
        let r = e.without_coordinate(1).unwrap();
        assert_eq!(r.eval(&[1.0, 2.0]), 21.0);
        assert!(e.without_coordinate(2).is_none());
    }

    #[test]
    fn single_precision_eval() {
        let e = parse_expression("x1 * x1 + 1").unwrap();
        assert_eq!(e.eval(&[2.0f32]), 5.0f32);
    }

    fn arb_node() -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0.0f64..1e6).prop_map(Node::Num),
            (0usize..4).prop_map(Node::Var),
        ];
        leaf.prop_recursive(4, 32, 3, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div),
                        Just(BinOp::Pow)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Node::Bin(op, Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Node::Call(Func::Sqrt, vec![a])),
                (inner.clone(), inner).prop_map(|(a, b)| Node::Call(Func::Max, vec![a, b])),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(node in arb_node()) {
            let printed = node.to_string();
            let reparsed = parse_expression(&printed).unwrap();
            prop_assert_eq!(reparsed.root(), &node);
        }
    }
}
