use mixsde::cli::RunConfig;
use mixsde::density::{kde_samples, Bandwidth};
use mixsde::exprlang::{Expr, Func, Node};
use mixsde::fields::VectorField;
use mixsde::hormander::lie_bracket;
use mixsde::malliavin::lh2_inner;
use mixsde::noise::Hurst;
use mixsde::norris::{quadratic_covariation, NorrisPartition};
use mixsde::paths::{SamplePath, TimeGrid};
use proptest::prelude::*;

const DIM: usize = 2;

fn smooth_tree() -> impl Strategy<Value = Node> {
    let leaf = prop_oneof![
        (-3.0..3.0f64).prop_map(|v| Node::num((v * 100.0).round() / 100.0)),
        (0..DIM).prop_map(Node::var),
    ];
    leaf.prop_recursive(5, 48, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::mul(a, b)),
            (inner.clone(), inner.clone())
                .prop_map(|(a, b)| Node::div(a, Node::add(Node::num(2.0), Node::mul(b.clone(), b)))),
            (inner.clone(), 2..4u32).prop_map(|(a, k)| Node::pow(a, Node::num(k as f64))),
            inner.clone().prop_map(Node::neg),
            inner.clone().prop_map(|a| Node::call(Func::Sin, a)),
            inner.clone().prop_map(|a| Node::call(Func::Cos, a)),
            inner.clone().prop_map(|a| Node::call(Func::Tanh, a)),
            inner.clone().prop_map(|a| Node::call(Func::Exp, Node::call(Func::Sin, a))),
            inner.prop_map(|a| Node::call(Func::Log, Node::add(Node::num(1.5), Node::call(Func::Cos, a)))),
        ]
    })
}

fn polynomial() -> impl Strategy<Value = Node> {
    proptest::collection::vec(-2.0..2.0f64, 6).prop_map(|c| {
        let (x, y) = (Node::var(0), Node::var(1));
        let monomials = [
            Node::num(1.0),
            x.clone(),
            y.clone(),
            Node::mul(x.clone(), x.clone()),
            Node::mul(x.clone(), y.clone()),
            Node::mul(y.clone(), y),
        ];
        monomials
            .into_iter()
            .zip(c)
            .map(|(m, k)| Node::mul(Node::num((k * 8.0).round() / 8.0), m))
            .reduce(Node::add)
            .unwrap()
    })
}

fn poly_field() -> impl Strategy<Value = VectorField> {
    (polynomial(), polynomial()).prop_map(|(a, b)| {
        VectorField::new(vec![Expr::from_node(a, DIM).unwrap(), Expr::from_node(b, DIM).unwrap()]).unwrap()
    })
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-1.0..1.0f64, DIM)
}

fn scalar_path(steps: usize) -> impl Strategy<Value = SamplePath> {
    proptest::collection::vec(-2.0..2.0f64, steps + 1)
        .prop_map(move |v| SamplePath::new(TimeGrid::new(1.0, steps).unwrap(), 1, v).unwrap())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn derivative_matches_central_difference(node in smooth_tree(), p in point(), var in 1..=DIM) {
        let e = Expr::from_node(node, DIM).unwrap();
        let d = e.differentiate(var).unwrap();
        let exact = d.evaluate(&p).unwrap();
        let h = 1e-5;
        let (mut up, mut dn) = (p.clone(), p.clone());
        up[var - 1] += h;
        dn[var - 1] -= h;
        let fd = (e.evaluate(&up).unwrap() - e.evaluate(&dn).unwrap()) / (2.0 * h);
        prop_assume!(exact.is_finite() && fd.is_finite() && exact.abs() < 1e6);
        prop_assert!((exact - fd).abs() <= 1e-4 * (1.0 + exact.abs()), "{e}: {exact} vs {fd}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn print_parse_is_idempotent(node in smooth_tree(), p in point()) {
        let e = Expr::from_node(node, DIM).unwrap();
        let printed = e.to_string();
        let once = Expr::parse(&printed, DIM).unwrap();
        prop_assert_eq!(once.to_string(), printed.clone());
        let (a, b) = (e.evaluate(&p).unwrap(), once.evaluate(&p).unwrap());
        prop_assert!(a == b || (a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{printed}");
    }

    #[test]
    fn bracket_antisymmetry(v in poly_field(), w in poly_field(), p in point()) {
        let vw = lie_bracket(&v, &w).unwrap().eval(0.0, &p).unwrap();
        let wv = lie_bracket(&w, &v).unwrap().eval(0.0, &p).unwrap();
        let sum: Vec<f64> = vw.iter().zip(&wv).map(|(a, b)| a + b).collect();
        prop_assert!(max_abs(&sum) <= 1e-12 * (1.0 + max_abs(&vw)));
    }

    #[test]
    fn bracket_jacobi(u in poly_field(), v in poly_field(), w in poly_field(), p in point()) {
        let br = |a: &VectorField, b: &VectorField| lie_bracket(a, b).unwrap();
        let terms = [
            br(&u, &br(&v, &w)).eval(0.0, &p).unwrap(),
            br(&v, &br(&w, &u)).eval(0.0, &p).unwrap(),
            br(&w, &br(&u, &v)).eval(0.0, &p).unwrap(),
        ];
        let scale = terms.iter().map(|t| max_abs(t)).fold(1.0, f64::max);
        let sum: Vec<f64> = (0..DIM).map(|i| terms.iter().map(|t| t[i]).sum()).collect();
        prop_assert!(max_abs(&sum) <= 1e-10 * scale, "{sum:?}");
    }

    #[test]
    fn holder_seminorm_triangle_and_monotone(p in scalar_path(64), q in scalar_path(64), theta in 0.05..0.9f64) {
        let s = p.try_add(&q).unwrap().holder_seminorm(theta);
        prop_assert!(s <= (p.holder_seminorm(theta) + q.holder_seminorm(theta)) * (1.0 + 1e-12));
        // every lag is at most the unit horizon, so |t-s|^{-θ} grows with θ
        prop_assert!(p.holder_seminorm(theta) <= p.holder_seminorm(theta + 0.05) * (1.0 + 1e-12));
    }

    #[test]
    fn covariation_is_bilinear(xi in scalar_path(64), eta in scalar_path(64), zeta in scalar_path(64), alpha in -3.0..3.0f64, block in 0..4usize) {
        let part = NorrisPartition::new(4, 16).unwrap();
        let v = |a: &SamplePath, b: &SamplePath| quadratic_covariation(a, b, block, &part).unwrap();
        let base = v(&xi, &zeta);
        let tol = 1e-12 * (1.0 + v(&xi, &xi) + v(&zeta, &zeta) + v(&eta, &eta)) * (1.0 + alpha.abs());
        prop_assert!((v(&xi.scaled(alpha), &zeta) - alpha * base).abs() <= tol);
        prop_assert!((v(&xi.try_add(&eta).unwrap(), &zeta) - base - v(&eta, &zeta)).abs() <= tol);
        prop_assert!(base * base <= v(&xi, &xi) * v(&zeta, &zeta) * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn lh2_norm_below_l2(levels in proptest::collection::vec(-2.0..2.0f64, 1..12), h in 0.55..0.95f64) {
        let steps = 256;
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let k = levels.len();
        let f = SamplePath::from_fn(grid, |t| levels[((t * k as f64) as usize).min(k - 1)]).unwrap();
        let lh2 = lh2_inner(&f, &f, Hurst::new(h).unwrap()).unwrap();
        let l2: f64 = f.values()[..steps].iter().map(|v| v * v).sum::<f64>() / steps as f64;
        prop_assert!(lh2 >= -1e-12);
        prop_assert!(lh2 <= l2 * (1.0 + 1e-10), "{lh2} > {l2}");
    }

    #[test]
    fn kde_has_unit_mass(xs in proptest::collection::vec(-5.0..5.0f64, 100..400), scale in 0.01..10.0f64) {
        let xs: Vec<f64> = xs.iter().map(|x| x * scale).collect();
        let table = kde_samples(&xs, Bandwidth::Auto).unwrap();
        prop_assert!((table.mass() - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn config_round_trips(h in 0.51..0.99f64, steps in 1..12u32, seed: u64, x in -5.0..5.0f64, n0 in 1..5usize) {
        let text = format!(
            "[system]\npreset = \"additive\"\n[run]\nhurst = {h:?}\nsteps = {}\nx0 = [{x:?}]\nseed = {seed}\n[hormander]\nn0 = {n0}\n",
            1usize << steps
        );
        let c = RunConfig::from_toml(&text).unwrap();
        prop_assert!(c.validate().is_ok());
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.fingerprint(), c.fingerprint());
    }
}

#[test]
fn parse_print_parse_corpus() {
    const CORPUS: [&str; 50] = [
        "0", "1", "x1", "-x1", "x1 + x2", "x1 - x2 - 1", "x1 * x2", "x1 / x2", "x1 ^ 2", "2 ^ 3 ^ 2",
        "-x1 ^ 2", "(-x1) ^ 2", "sin(x1)", "cos(x2) * sin(x1)", "exp(-x1^2)", "log(1 + x1^2)", "sqrt(1 + x2^2)",
        "tanh(x1 - x2)", "1 + 0.3 * tanh(x2)", "0.2 * cos(x1)", "0.5 * sin(x2)", "-0.5 * tanh(x1)",
        "1 + 0.5 * sin(x1)", "x1 * (x2 + 1)", "(x1 + x2) * (x1 - x2)", "x1 / (1 + x2 ^ 2)", "x1 - (x2 - x1)",
        "x1 / (x2 / 3)", "((x1))", "2 * x1 * x2", "x1^3 - 3*x1*x2^2", "exp(sin(x1)) + cos(exp(x2))",
        "1e-3 * x1", "2.5e2 + x2", "t * x1", "sin(t) + x2", "exp(-t) * x1", "x1 ^ 0.5", "(1 + x1) ^ (1 + x2)",
        "-(x1 + x2)", "--x1", "x1 * -x2", "1 / (1 + exp(-x1))", "cos(x1)^2 + sin(x1)^2", "tanh(tanh(x2))",
        "0.3 * x1 - 0.7 * x2 + 0.1", "x2 * x1 ^ 2 / 4", "log(2 + sin(x1 * x2))", "sqrt(x1^2 + x2^2 + 1)",
        "(x1 - 1) * (x2 + 2) * (x1 + x2)",
    ];
    let p = [0.37, -0.61];
    for src in CORPUS {
        let first = Expr::parse(src, DIM).unwrap_or_else(|e| panic!("{src}: {e}"));
        let printed = first.to_string();
        let second = Expr::parse(&printed, DIM).unwrap();
        assert_eq!(second.to_string(), printed, "{src}");
        let (a, b) = (first.evaluate_at(0.4, &p), second.evaluate_at(0.4, &p));
        match (a, b) {
            (Ok(a), Ok(b)) => assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{src}"),
            (a, b) => assert_eq!(a.is_err(), b.is_err(), "{src}"),
        }
    }
}
