use super::{Expr, Func};

fn num(v: f64) -> Expr {
    Expr::Num(v)
}

fn is(e: &Expr, v: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == v)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(v) => num(-v),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x + y),
        _ if is(&a, 0.0) => b,
        _ if is(&b, 0.0) => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x - y),
        _ if is(&b, 0.0) => a,
        _ if is(&a, 0.0) => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x * y),
        _ if is(&a, 0.0) || is(&b, 0.0) => num(0.0),
        _ if is(&a, 1.0) => b,
        _ if is(&b, 1.0) => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) if *y != 0.0 => num(x / y),
        _ if is(&a, 0.0) => num(0.0),
        _ if is(&b, 1.0) => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => num(x.powf(*y)),
        _ if is(&b, 1.0) => a,
        _ if is(&b, 0.0) => num(1.0),
        _ => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    Expr::Call(f, Box::new(a))
}

pub(super) fn derivative(e: &Expr, var: usize) -> Expr {
    let d = |x: &Expr| derivative(x, var);
    match e {
        Expr::Num(_) => num(0.0),
        Expr::Var(i) => num(if *i == var { 1.0 } else { 0.0 }),
        Expr::Neg(a) => neg(d(a)),
        Expr::Add(a, b) => add(d(a), d(b)),
        Expr::Sub(a, b) => sub(d(a), d(b)),
        Expr::Mul(a, b) => add(mul(d(a), (**b).clone()), mul((**a).clone(), d(b))),
        Expr::Div(a, b) => {
            // (a' b - a b') / b^2
            let top = sub(mul(d(a), (**b).clone()), mul((**a).clone(), d(b)));
            div(top, pow((**b).clone(), num(2.0)))
        }
        Expr::Pow(a, b) => {
            let db = d(b);
            let da = d(a);
            if let Expr::Num(p) = **b {
                // p a^(p-1) a'
                return mul(mul(num(p), pow((**a).clone(), num(p - 1.0))), da);
            }
            // a^b (b' log a + b a'/a)
            let first = mul(db, call(Func::Log, (**a).clone()));
            let second = div(mul((**b).clone(), da), (**a).clone());
            mul(e.clone(), add(first, second))
        }
        Expr::Call(f, a) => {
            let da = d(a);
            if is(&da, 0.0) {
                return num(0.0);
            }
            let a = (**a).clone();
            let outer = match f {
                Func::Sin => call(Func::Cos, a),
                Func::Cos => neg(call(Func::Sin, a)),
                Func::Tan => div(num(1.0), pow(call(Func::Cos, a), num(2.0))),
                Func::Exp => call(Func::Exp, a),
                Func::Log => div(num(1.0), a),
                Func::Sqrt => div(num(0.5), call(Func::Sqrt, a)),
                Func::Abs => call(Func::Sign, a),
                Func::Sign => num(0.0),
            };
            mul(outer, da)
        }
        Expr::Atan2(y, x) => {
            // d atan2(y, x) = (x y' - y x') / (x^2 + y^2)
            let top = sub(mul((**x).clone(), d(y)), mul((**y).clone(), d(x)));
            let bottom = add(pow((**x).clone(), num(2.0)), pow((**y).clone(), num(2.0)));
            div(top, bottom)
        }
    }
}
