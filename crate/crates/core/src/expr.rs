//! Scalar arithmetic expressions read from problem configs.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?          right-associative
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! So `-2^2` is `-(2^2)`, `2^3^2` is `2^(3^2)` and `2^-1` is `2^(-1)`.
//! Functions: `exp`, `log`, `sqrt`, `abs` (one argument), `min`, `max` (two).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: expected {expected}, found {found}")]
    Syntax {
        pos: usize,
        expected: String,
        found: String,
    },
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error: {func} undefined at argument {arg}")]
    Domain { func: &'static str, arg: f64 },
    #[error("non-finite result from {op}")]
    NonFinite { op: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
}

impl Func {
    pub const ALL: [Func; 6] = [Func::Exp, Func::Log, Func::Sqrt, Func::Abs, Func::Min, Func::Max];

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }
}

/// Expression tree, generic over how variables are referenced.
///
/// Parsed expressions use names ([`Expr`]); [`Expr::bind`] resolves them to
/// slot indices ([`BoundExpr`]) for evaluation in tight loops.
#[derive(Debug, Clone, PartialEq)]
pub enum Node<V> {
    Num(f64),
    Var(V),
    Neg(Box<Node<V>>),
    Binary(BinOp, Box<Node<V>>, Box<Node<V>>),
    Call(Func, Vec<Node<V>>),
}

pub type Expr = Node<String>;
pub type BoundExpr = Node<usize>;

/// Variable lookup for [`Expr::eval`].
pub trait Env {
    fn lookup(&self, name: &str) -> Option<f64>;
}

impl Env for HashMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Env for BTreeMap<String, f64> {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl Env for [(&str, f64)] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> Env for [(&str, f64); N] {
    fn lookup(&self, name: &str) -> Option<f64> {
        self.as_slice().lookup(name)
    }
}

fn finite(v: f64, op: &'static str) -> Result<f64, ExprError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::NonFinite { op })
    }
}

fn apply_binary(op: BinOp, a: f64, b: f64) -> Result<f64, ExprError> {
    let v = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(ExprError::Domain { func: "/", arg: b });
            }
            a / b
        }
        BinOp::Pow => {
            let v = a.powf(b);
            if v.is_nan() || (a == 0.0 && b < 0.0) {
                return Err(ExprError::Domain { func: "^", arg: a });
            }
            v
        }
    };
    finite(v, op.symbol())
}

fn apply_func(f: Func, args: &[f64]) -> Result<f64, ExprError> {
    let x = args[0];
    let v = match f {
        Func::Exp => x.exp(),
        Func::Log => {
            if x <= 0.0 {
                return Err(ExprError::Domain { func: "log", arg: x });
            }
            x.ln()
        }
        Func::Sqrt => {
            if x < 0.0 {
                return Err(ExprError::Domain { func: "sqrt", arg: x });
            }
            x.sqrt()
        }
        Func::Abs => x.abs(),
        Func::Min => x.min(args[1]),
        Func::Max => x.max(args[1]),
    };
    finite(v, f.name())
}

impl<V> Node<V> {
    fn eval_with<L>(&self, lookup: &L) -> Result<f64, ExprError>
    where
        L: Fn(&V) -> Result<f64, ExprError>,
    {
        match self {
            Node::Num(v) => Ok(*v),
            Node::Var(v) => lookup(v),
            Node::Neg(e) => Ok(-e.eval_with(lookup)?),
            Node::Binary(op, a, b) => {
                let a = a.eval_with(lookup)?;
                let b = b.eval_with(lookup)?;
                apply_binary(*op, a, b)
            }
            Node::Call(f, args) => {
                let mut vals = [0.0; 2];
                for (slot, a) in vals.iter_mut().zip(args) {
                    *slot = a.eval_with(lookup)?;
                }
                apply_func(*f, &vals[..args.len()])
            }
        }
    }

    fn visit_vars<'a>(&'a self, out: &mut impl FnMut(&'a V)) {
        match self {
            Node::Num(_) => {}
            Node::Var(v) => out(v),
            Node::Neg(e) => e.visit_vars(out),
            Node::Binary(_, a, b) => {
                a.visit_vars(out);
                b.visit_vars(out);
            }
            Node::Call(_, args) => args.iter().for_each(|a| a.visit_vars(out)),
        }
    }

    /// True when the tree has no variables at all.
    pub fn is_constant(&self) -> bool {
        let mut any = false;
        self.visit_vars(&mut |_| any = true);
        !any
    }
}

impl Expr {
    pub fn parse(text: &str) -> Result<Expr, ExprError> {
        Parser::new(text)?.parse_all()
    }

    pub fn num(v: f64) -> Expr {
        Node::Num(v)
    }

    pub fn var(name: &str) -> Expr {
        Node::Var(name.to_string())
    }

    pub fn eval<E: Env + ?Sized>(&self, env: &E) -> Result<f64, ExprError> {
        self.eval_with(&|name: &String| {
            env.lookup(name)
                .ok_or_else(|| ExprError::Unbound(name.clone()))
        })
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut set = BTreeSet::new();
        self.visit_vars(&mut |v| {
            set.insert(v.clone());
        });
        set
    }

    /// Resolve every variable to its position in `names`.
    pub fn bind(&self, names: &[String]) -> Result<BoundExpr, ExprError> {
        Ok(match self {
            Node::Num(v) => Node::Num(*v),
            Node::Var(v) => {
                let idx = names
                    .iter()
                    .position(|n| n == v)
                    .ok_or_else(|| ExprError::Unbound(v.clone()))?;
                Node::Var(idx)
            }
            Node::Neg(e) => Node::Neg(Box::new(e.bind(names)?)),
            Node::Binary(op, a, b) => {
                Node::Binary(*op, Box::new(a.bind(names)?), Box::new(b.bind(names)?))
            }
            Node::Call(f, args) => Node::Call(
                *f,
                args.iter()
                    .map(|a| a.bind(names))
                    .collect::<Result<_, _>>()?,
            ),
        })
    }

    /// Structural equality up to the literal bit patterns.
    pub fn same_structure(&self, other: &Expr) -> bool {
        match (self, other) {
            (Node::Num(a), Node::Num(b)) => a.to_bits() == b.to_bits(),
            (Node::Var(a), Node::Var(b)) => a == b,
            (Node::Neg(a), Node::Neg(b)) => a.same_structure(b),
            (Node::Binary(o1, a1, b1), Node::Binary(o2, a2, b2)) => {
                o1 == o2 && a1.same_structure(a2) && b1.same_structure(b2)
            }
            (Node::Call(f1, a1), Node::Call(f2, a2)) => {
                f1 == f2
                    && a1.len() == a2.len()
                    && a1.iter().zip(a2).all(|(x, y)| x.same_structure(y))
            }
            _ => false,
        }
    }
}

impl BoundExpr {
    pub fn eval_slots(&self, values: &[f64]) -> Result<f64, ExprError> {
        self.eval_with(&|&i: &usize| Ok(values[i]))
    }
}

// Printer precedence levels: sum 1, product 2, negation 3, power 4, atom 5.
fn level(e: &Expr) -> u8 {
    match e {
        Node::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        Node::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        Node::Neg(_) => 3,
        Node::Binary(BinOp::Pow, ..) => 4,
        Node::Num(v) if *v < 0.0 || v.is_sign_negative() => 3,
        _ => 5,
    }
}

fn write_at(f: &mut fmt::Formatter<'_>, e: &Expr, min_level: u8) -> fmt::Result {
    if level(e) < min_level {
        write!(f, "(")?;
        write!(f, "{e}")?;
        write!(f, ")")
    } else {
        write!(f, "{e}")
    }
}

/// Prints with the fewest parentheses that re-parse to the same tree.
/// Negative literals cannot come out of the parser and print as negations.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => write!(f, "{v}"),
            Node::Var(v) => write!(f, "{v}"),
            Node::Neg(e) => {
                write!(f, "-")?;
                write_at(f, e, 3)
            }
            Node::Binary(op, a, b) => {
                let (l, r) = match op {
                    BinOp::Add | BinOp::Sub => (1, 2),
                    BinOp::Mul | BinOp::Div => (2, 3),
                    BinOp::Pow => (5, 3),
                };
                write_at(f, a, l)?;
                match op {
                    BinOp::Pow => write!(f, "^")?,
                    _ => write!(f, " {} ", op.symbol())?,
                }
                write_at(f, b, r)
            }
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "number {v}"),
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Op(c) => write!(f, "`{c}`"),
            Tok::End => write!(f, "end of input"),
        }
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    at: usize,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
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
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| ExprError::Syntax {
                pos: start,
                expected: "a number".into(),
                found: format!("`{s}`"),
            })?;
            out.push((start, Tok::Num(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((start, Tok::Ident(chars[start..i].iter().collect())));
        } else if "+-*/^(),".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else {
            return Err(ExprError::Syntax {
                pos: i,
                expected: "an operator, number, identifier or parenthesis".into(),
                found: format!("`{c}`"),
            });
        }
    }
    out.push((chars.len(), Tok::End));
    Ok(out)
}

impl Parser {
    fn new(text: &str) -> Result<Self, ExprError> {
        Ok(Parser {
            toks: lex(text)?,
            at: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].1.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> ExprError {
        let (pos, tok) = &self.toks[self.at];
        ExprError::Syntax {
            pos: *pos,
            expected: expected.to_string(),
            found: tok.to_string(),
        }
    }

    fn expect(&mut self, c: char) -> Result<(), ExprError> {
        if *self.peek() == Tok::Op(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("`{c}`")))
        }
    }

    fn parse_all(&mut self) -> Result<Expr, ExprError> {
        let e = self.parse_sum()?;
        if *self.peek() != Tok::End {
            return Err(self.error("an operator or end of input"));
        }
        Ok(e)
    }

    fn parse_sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_product()?;
        loop {
            let op = match self.peek() {
                Tok::Op('+') => BinOp::Add,
                Tok::Op('-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.parse_product()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_product(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.parse_unary()?;
        loop {
            let op = match self.peek() {
                Tok::Op('*') => BinOp::Mul,
                Tok::Op('/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.parse_unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Op('-') {
            self.bump();
            return Ok(Node::Neg(Box::new(self.parse_unary()?)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr, ExprError> {
        let base = self.parse_primary()?;
        if *self.peek() == Tok::Op('^') {
            self.bump();
            let exp = self.parse_unary()?;
            return Ok(Node::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn parse_primary(&mut self) -> Result<Expr, ExprError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Node::Num(v))
            }
            Tok::Ident(name) => {
                let name_at = self.at;
                self.bump();
                if *self.peek() != Tok::Op('(') {
                    return Ok(Node::Var(name));
                }
                let func = Func::from_name(&name).ok_or_else(|| {
                    let pos = self.toks[name_at].0;
                    ExprError::Syntax {
                        pos,
                        expected: "one of exp, log, sqrt, abs, min, max".into(),
                        found: format!("function `{name}`"),
                    }
                })?;
                self.bump();
                let mut args = vec![self.parse_sum()?];
                while *self.peek() == Tok::Op(',') {
                    self.bump();
                    args.push(self.parse_sum()?);
                }
                if args.len() != func.arity() {
                    return Err(self.error(&format!(
                        "{} argument(s) for {}",
                        func.arity(),
                        func.name()
                    )));
                }
                self.expect(')')?;
                Ok(Node::Call(func, args))
            }
            Tok::Op('(') => {
                self.bump();
                let e = self.parse_sum()?;
                self.expect(')')?;
                Ok(e)
            }
            _ => Err(self.error("a number, identifier, function call or `(`")),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

/// Expressions travel through JSON as their printed text; plain numbers are also accepted.
impl serde::Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Visitor;

        impl serde::de::Visitor<'_> for Visitor {
            type Value = Expr;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "an expression string or a number")
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<Expr, E> {
                Expr::parse(v).map_err(|e| E::custom(format!("in expression `{v}`: {e}")))
            }

            fn visit_f64<E: serde::de::Error>(self, v: f64) -> Result<Expr, E> {
                if v < 0.0 {
                    Ok(Node::Neg(Box::new(Node::Num(-v))))
                } else {
                    Ok(Node::Num(v))
                }
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<Expr, E> {
                self.visit_f64(v as f64)
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<Expr, E> {
                self.visit_f64(v as f64)
            }
        }

        d.deserialize_any(Visitor)
    }
}
