use super::{BinOp, Func, Node};

/// Symbolic partial derivative with respect to the zero-based variable `var`.
pub(super) fn derivative(node: &Node, var: usize) -> Node {
    match node {
        Node::Num(_) | Node::Time => Node::num(0.0),
        Node::Var(j) => Node::num(if *j == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => Node::neg(derivative(a, var)),
        Node::Binary(op, a, b) => binary(*op, a, b, var),
        Node::Call(func, a) => {
            let inner = derivative(a, var);
            if inner.is_zero() {
                return Node::num(0.0);
            }
            let outer = match func {
                Func::Sin => Node::call(Func::Cos, (**a).clone()),
                Func::Cos => Node::neg(Node::call(Func::Sin, (**a).clone())),
                Func::Exp => Node::call(Func::Exp, (**a).clone()),
                Func::Log => return Node::div(inner, (**a).clone()),
                Func::Sqrt => {
                    return Node::div(
                        inner,
                        Node::mul(Node::num(2.0), Node::call(Func::Sqrt, (**a).clone())),
                    )
                }
                Func::Tanh => Node::sub(
                    Node::num(1.0),
                    Node::pow(Node::call(Func::Tanh, (**a).clone()), Node::num(2.0)),
                ),
            };
            Node::mul(outer, inner)
        }
    }
}

fn binary(op: BinOp, a: &Node, b: &Node, var: usize) -> Node {
    let da = derivative(a, var);
    let db = derivative(b, var);
    match op {
        BinOp::Add => Node::add(da, db),
        BinOp::Sub => Node::sub(da, db),
        BinOp::Mul => Node::add(
            Node::mul(da, b.clone()),
            Node::mul(a.clone(), db),
        ),
        BinOp::Div => Node::div(
            Node::sub(Node::mul(da, b.clone()), Node::mul(a.clone(), db)),
            Node::pow(b.clone(), Node::num(2.0)),
        ),
        BinOp::Pow => {
            if b.is_constant_in(var) {
                // d(u^c) = c u^(c-1) u'
                if da.is_zero() {
                    return Node::num(0.0);
                }
                let reduced = Node::pow(a.clone(), Node::sub(b.clone(), Node::num(1.0)));
                Node::mul(Node::mul(b.clone(), reduced), da)
            } else if a.is_constant_in(var) {
                // d(c^v) = c^v log(c) v'
                let power = Node::pow(a.clone(), b.clone());
                Node::mul(Node::mul(power, Node::call(Func::Log, a.clone())), db)
            } else {
                // d(u^v) = u^v (v' log u + v u' / u)
                let power = Node::pow(a.clone(), b.clone());
                let log_term = Node::mul(db, Node::call(Func::Log, a.clone()));
                let ratio_term = Node::div(Node::mul(b.clone(), da), a.clone());
                Node::mul(power, Node::add(log_term, ratio_term))
            }
        }
    }
}
