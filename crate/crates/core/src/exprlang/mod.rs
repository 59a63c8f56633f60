//! A small arithmetic expression language for coefficient fields.
//!
//! Expressions are written over the state variables `x1..xd`, the reserved
//! time variable `t`, decimal literals, the binary operators `+ - * / ^`,
//! unary minus, and the functions `sin cos exp log sqrt tanh`.
//!
//! Precedence, from loosest to tightest:
//!
//! ```text
//! + -        left associative
//! * /        left associative
//! unary -
//! ^          right associative
//! ```
//!
//! so `-x1^2` is `-(x1^2)` and `2^3^2` is `2^(3^2)`.
//!
//! Derivatives are symbolic ([`Expr::differentiate`]); the result is not
//! simplified beyond constant folding and the usual `0`/`1` identities, and
//! its correctness is defined by evaluation.

mod diff;
mod parse;

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("variable index out of range: x{index} with dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
    #[error("point has dimension {got}, expression expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
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

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }

    fn apply(self, arg: f64) -> Result<f64, ExprError> {
        match self {
            Func::Sin => Ok(arg.sin()),
            Func::Cos => Ok(arg.cos()),
            Func::Exp => Ok(arg.exp()),
            Func::Tanh => Ok(arg.tanh()),
            Func::Log if arg <= 0.0 => Err(ExprError::Domain(format!(
                "log of non-positive value {arg}"
            ))),
            Func::Log => Ok(arg.ln()),
            Func::Sqrt if arg < 0.0 => Err(ExprError::Domain(format!(
                "sqrt of negative value {arg}"
            ))),
            Func::Sqrt => Ok(arg.sqrt()),
        }
    }
}

/// Syntax tree node. Variables are stored zero-based (`x1` is `Var(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Time,
    Neg(Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    pub fn num(value: f64) -> Node {
        Node::Num(value)
    }

    pub fn var(index: usize) -> Node {
        Node::Var(index)
    }

    pub fn neg(inner: Node) -> Node {
        match inner {
            Node::Num(v) => Node::Num(-v),
            Node::Neg(x) => *x,
            other => Node::Neg(Box::new(other)),
        }
    }

    pub fn add(lhs: Node, rhs: Node) -> Node {
        match (lhs, rhs) {
            (Node::Num(a), Node::Num(b)) => Node::Num(a + b),
            (Node::Num(z), x) | (x, Node::Num(z)) if z == 0.0 => x,
            (a, b) => Node::Binary(BinOp::Add, Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(lhs: Node, rhs: Node) -> Node {
        match (lhs, rhs) {
            (Node::Num(a), Node::Num(b)) => Node::Num(a - b),
            (x, Node::Num(z)) if z == 0.0 => x,
            (Node::Num(z), x) if z == 0.0 => Node::neg(x),
            (a, b) => Node::Binary(BinOp::Sub, Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(lhs: Node, rhs: Node) -> Node {
        match (lhs, rhs) {
            (Node::Num(a), Node::Num(b)) => Node::Num(a * b),
            (Node::Num(z), _) | (_, Node::Num(z)) if z == 0.0 => Node::Num(0.0),
            (Node::Num(o), x) | (x, Node::Num(o)) if o == 1.0 => x,
            (Node::Num(m), x) | (x, Node::Num(m)) if m == -1.0 => Node::neg(x),
            (a, b) => Node::Binary(BinOp::Mul, Box::new(a), Box::new(b)),
        }
    }

    pub fn div(lhs: Node, rhs: Node) -> Node {
        match (lhs, rhs) {
            (Node::Num(a), Node::Num(b)) if b != 0.0 => Node::Num(a / b),
            (x, Node::Num(o)) if o == 1.0 => x,
            (Node::Num(z), _) if z == 0.0 => Node::Num(0.0),
            (a, b) => Node::Binary(BinOp::Div, Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(base: Node, exponent: Node) -> Node {
        match (base, exponent) {
            (Node::Num(a), Node::Num(b)) if a.powf(b).is_finite() => Node::Num(a.powf(b)),
            (x, Node::Num(o)) if o == 1.0 => x,
            (_, Node::Num(z)) if z == 0.0 => Node::Num(1.0),
            (a, b) => Node::Binary(BinOp::Pow, Box::new(a), Box::new(b)),
        }
    }

    pub fn call(func: Func, arg: Node) -> Node {
        match arg {
            Node::Num(v) => match func.apply(v) {
                Ok(r) if r.is_finite() => Node::Num(r),
                _ => Node::Call(func, Box::new(Node::Num(v))),
            },
            other => Node::Call(func, Box::new(other)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Node::Num(v) if *v == 0.0)
    }

    /// True when the subtree does not reference state variable `index`.
    pub fn is_constant_in(&self, index: usize) -> bool {
        match self {
            Node::Num(_) | Node::Time => true,
            Node::Var(j) => *j != index,
            Node::Neg(x) | Node::Call(_, x) => x.is_constant_in(index),
            Node::Binary(_, a, b) => a.is_constant_in(index) && b.is_constant_in(index),
        }
    }

    pub fn uses_time(&self) -> bool {
        match self {
            Node::Time => true,
            Node::Num(_) | Node::Var(_) => false,
            Node::Neg(x) | Node::Call(_, x) => x.uses_time(),
            Node::Binary(_, a, b) => a.uses_time() || b.uses_time(),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Var(j) => Some(*j),
            Node::Num(_) | Node::Time => None,
            Node::Neg(x) | Node::Call(_, x) => x.max_var(),
            Node::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Node::Num(_) | Node::Var(_) | Node::Time => 1,
            Node::Neg(x) | Node::Call(_, x) => 1 + x.size(),
            Node::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    fn eval(&self, t: f64, x: &[f64]) -> Result<f64, ExprError> {
        let value = match self {
            Node::Num(v) => *v,
            Node::Var(j) => x[*j],
            Node::Time => t,
            Node::Neg(a) => -a.eval(t, x)?,
            Node::Call(f, a) => f.apply(a.eval(t, x)?)?,
            Node::Binary(op, a, b) => {
                let l = a.eval(t, x)?;
                let r = b.eval(t, x)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(ExprError::Domain("division by zero".into()));
                        }
                        l / r
                    }
                    BinOp::Pow => {
                        if l == 0.0 && r < 0.0 {
                            return Err(ExprError::Domain(
                                "zero raised to a negative power".into(),
                            ));
                        }
                        let p = l.powf(r);
                        if p.is_nan() {
                            return Err(ExprError::Domain(format!(
                                "{l} raised to non-integer power {r}"
                            )));
                        }
                        p
                    }
                }
            }
        };
        if value.is_nan() {
            return Err(ExprError::Domain("undefined intermediate value".into()));
        }
        Ok(value)
    }

    // Printing precedence; a negative literal prints with a leading minus and
    // therefore behaves like unary minus.
    fn print_precedence(&self) -> u8 {
        match self {
            Node::Binary(op, _, _) => op.precedence(),
            Node::Neg(_) => 3,
            Node::Num(v) if v.is_sign_negative() => 3,
            _ => 5,
        }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(v) => write!(f, "{v:?}"),
            Node::Var(j) => write!(f, "x{}", j + 1),
            Node::Time => write!(f, "t"),
            Node::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write(f)?;
                write!(f, ")")
            }
            Node::Neg(a) => {
                write!(f, "-")?;
                // `-2.0` would re-parse as a literal, so keep the structure visible.
                let wrap = a.print_precedence() < 3 || matches!(**a, Node::Num(v) if !v.is_sign_negative());
                write_wrapped(f, a, wrap)
            }
            Node::Binary(op, a, b) => {
                let p = op.precedence();
                let (wrap_l, wrap_r) = if *op == BinOp::Pow {
                    (a.print_precedence() <= p, b.print_precedence() < p)
                } else {
                    (a.print_precedence() < p, b.print_precedence() <= p)
                };
                write_wrapped(f, a, wrap_l)?;
                write!(f, " {} ", op.symbol())?;
                write_wrapped(f, b, wrap_r)
            }
        }
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, node: &Node, wrap: bool) -> fmt::Result {
    if wrap {
        write!(f, "(")?;
        node.write(f)?;
        write!(f, ")")
    } else {
        node.write(f)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f)
    }
}

/// A parsed expression together with the state dimension it was declared for.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    node: Node,
    dim: usize,
}

impl Expr {
    pub fn parse(source: &str, dim: usize) -> Result<Expr, ExprError> {
        let node = parse::parse(source, dim)?;
        Ok(Expr { node, dim })
    }

    /// Wraps a node built programmatically, checking variable indices.
    pub fn from_node(node: Node, dim: usize) -> Result<Expr, ExprError> {
        if let Some(j) = node.max_var() {
            if j >= dim {
                return Err(ExprError::VariableOutOfRange { index: j + 1, dim });
            }
        }
        Ok(Expr { node, dim })
    }

    pub fn constant(value: f64, dim: usize) -> Expr {
        Expr { node: Node::Num(value), dim }
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    pub fn into_node(self) -> Node {
        self.node
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn uses_time(&self) -> bool {
        self.node.uses_time()
    }

    pub fn is_zero(&self) -> bool {
        self.node.is_zero()
    }

    /// Evaluates with the time variable set to zero.
    pub fn evaluate(&self, point: &[f64]) -> Result<f64, ExprError> {
        self.evaluate_at(0.0, point)
    }

    pub fn evaluate_at(&self, t: f64, point: &[f64]) -> Result<f64, ExprError> {
        if point.len() != self.dim {
            return Err(ExprError::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        self.node.eval(t, point)
    }

    /// Exact partial derivative with respect to `x{variable}` (1-based).
    pub fn differentiate(&self, variable: usize) -> Result<Expr, ExprError> {
        if variable == 0 || variable > self.dim {
            return Err(ExprError::VariableOutOfRange {
                index: variable,
                dim: self.dim,
            });
        }
        Ok(Expr {
            node: diff::derivative(&self.node, variable - 1),
            dim: self.dim,
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.node.fmt(f)
    }
}
