//! Scalar expression trees over the coordinates `x1..xn`.
//!
//! Expressions are immutable once built. Besides plain evaluation they
//! support a *guarded* evaluation that reports when a branch point (an `if`
//! comparison, `abs`, `min`, `max`) is evaluated too close to its switching
//! surface, and symbolic differentiation that is total over the grammar
//! because exponents are always constants.

use std::fmt;

use crate::parse::{self, ParseError};

/// Comparison operator used by conditional nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Cmp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Lt => lhs < rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Ge => lhs >= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Le => "<=",
            Cmp::Gt => ">",
            Cmp::Ge => ">=",
        }
    }
}

/// Expression node. Variables are stored 0-based (`x1` is `Var(0)`).
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Sqrt(Box<Expr>),
    Abs(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    If {
        cmp: Cmp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
        then: Box<Expr>,
        otherwise: Box<Expr>,
    },
}

/// A branch point evaluated within the kink tolerance of its switching surface.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kink {
    /// Signed distance `lhs - rhs` of the offending comparison.
    pub gap: f64,
}

impl Expr {
    pub fn parse(text: &str, n: usize) -> Result<Expr, ParseError> {
        parse::parse_expr(text, n)
    }

    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    // Smart constructors fold constants and drop neutral elements. They keep
    // derivative trees small; they are not a simplifier.

    #[allow(clippy::should_implement_trait)]
    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            (Expr::Const(0.0), other) | (other, Expr::Const(0.0)) => other,
            (a, b) => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            (other, Expr::Const(0.0)) => other,
            (Expr::Const(0.0), other) => Expr::neg(other),
            (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
            (Expr::Const(1.0), other) | (other, Expr::Const(1.0)) => other,
            (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn div(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) if y != 0.0 && (x / y).is_finite() => {
                Expr::Const(x / y)
            }
            (Expr::Const(0.0), _) => Expr::Const(0.0),
            (other, Expr::Const(1.0)) => other,
            (a, b) => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, p: f64) -> Expr {
        if p == 0.0 {
            return Expr::Const(1.0);
        }
        if p == 1.0 {
            return a;
        }
        match a {
            Expr::Const(c) if powf(c, p).is_finite() => Expr::Const(powf(c, p)),
            other => Expr::Pow(Box::new(other), p),
        }
    }

    pub fn sqrt(a: Expr) -> Expr {
        match a {
            Expr::Const(c) if c >= 0.0 => Expr::Const(c.sqrt()),
            other => Expr::Sqrt(Box::new(other)),
        }
    }

    pub fn abs(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(c.abs()),
            other => Expr::Abs(Box::new(other)),
        }
    }

    pub fn min(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x.min(y)),
            (a, b) => Expr::Min(Box::new(a), Box::new(b)),
        }
    }

    pub fn max(a: Expr, b: Expr) -> Expr {
        match (a, b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x.max(y)),
            (a, b) => Expr::Max(Box::new(a), Box::new(b)),
        }
    }

    pub fn if_then(cmp: Cmp, lhs: Expr, rhs: Expr, then: Expr, otherwise: Expr) -> Expr {
        if let (Expr::Const(l), Expr::Const(r)) = (&lhs, &rhs) {
            return if cmp.holds(*l, *r) { then } else { otherwise };
        }
        if then == otherwise {
            return then;
        }
        Expr::If {
            cmp,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
            then: Box::new(then),
            otherwise: Box::new(otherwise),
        }
    }

    /// Largest variable index referenced, 0-based.
    pub fn max_var(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                best = Some(best.map_or(*i, |b| b.max(*i)));
            }
        });
        best
    }

    pub fn is_constant(&self) -> bool {
        self.max_var().is_none()
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sqrt(a) | Expr::Abs(a) => a.visit(f),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::If {
                lhs,
                rhs,
                then,
                otherwise,
                ..
            } => {
                lhs.visit(f);
                rhs.visit(f);
                then.visit(f);
                otherwise.visit(f);
            }
        }
    }

    /// Plain evaluation. Panics if a variable index exceeds `x.len()`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.eval_inner(x, None) {
            Ok(v) => v,
            Err(_) => unreachable!("unguarded evaluation cannot report a kink"),
        }
    }

    /// Evaluation that fails when any evaluated branch point lies within
    /// `kink_tol` of its switching surface. Untaken branches are not visited.
    pub fn eval_guarded(&self, x: &[f64], kink_tol: f64) -> Result<f64, Kink> {
        self.eval_inner(x, Some(kink_tol))
    }

    fn eval_inner(&self, x: &[f64], guard: Option<f64>) -> Result<f64, Kink> {
        let check = |gap: f64| -> Result<(), Kink> {
            match guard {
                Some(tol) if gap.abs() < tol => Err(Kink { gap }),
                _ => Ok(()),
            }
        };
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval_inner(x, guard)?,
            Expr::Add(a, b) => a.eval_inner(x, guard)? + b.eval_inner(x, guard)?,
            Expr::Sub(a, b) => a.eval_inner(x, guard)? - b.eval_inner(x, guard)?,
            Expr::Mul(a, b) => a.eval_inner(x, guard)? * b.eval_inner(x, guard)?,
            Expr::Div(a, b) => a.eval_inner(x, guard)? / b.eval_inner(x, guard)?,
            Expr::Pow(a, p) => powf(a.eval_inner(x, guard)?, *p),
            Expr::Sqrt(a) => a.eval_inner(x, guard)?.sqrt(),
            Expr::Abs(a) => {
                let v = a.eval_inner(x, guard)?;
                check(v)?;
                v.abs()
            }
            Expr::Min(a, b) => {
                let (u, v) = (a.eval_inner(x, guard)?, b.eval_inner(x, guard)?);
                check(u - v)?;
                u.min(v)
            }
            Expr::Max(a, b) => {
                let (u, v) = (a.eval_inner(x, guard)?, b.eval_inner(x, guard)?);
                check(u - v)?;
                u.max(v)
            }
            Expr::If {
                cmp,
                lhs,
                rhs,
                then,
                otherwise,
            } => {
                let (l, r) = (lhs.eval_inner(x, guard)?, rhs.eval_inner(x, guard)?);
                check(l - r)?;
                if cmp.holds(l, r) {
                    then.eval_inner(x, guard)?
                } else {
                    otherwise.eval_inner(x, guard)?
                }
            }
        })
    }

    /// Symbolic partial derivative with respect to variable `k` (0-based).
    ///
    /// Branch points differentiate per branch; the resulting tree keeps the
    /// original comparisons so guarded evaluation still detects kinks.
    pub fn diff(&self, k: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(i) => Expr::Const(if *i == k { 1.0 } else { 0.0 }),
            Expr::Neg(a) => Expr::neg(a.diff(k)),
            Expr::Add(a, b) => Expr::add(a.diff(k), b.diff(k)),
            Expr::Sub(a, b) => Expr::sub(a.diff(k), b.diff(k)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.diff(k), (**b).clone()),
                Expr::mul((**a).clone(), b.diff(k)),
            ),
            Expr::Div(a, b) => {
                let da = a.diff(k);
                let db = b.diff(k);
                if db == Expr::Const(0.0) {
                    Expr::div(da, (**b).clone())
                } else {
                    Expr::div(
                        Expr::sub(Expr::mul(da, (**b).clone()), Expr::mul((**a).clone(), db)),
                        Expr::pow((**b).clone(), 2.0),
                    )
                }
            }
            Expr::Pow(a, p) => Expr::mul(
                Expr::mul(Expr::Const(*p), Expr::pow((**a).clone(), p - 1.0)),
                a.diff(k),
            ),
            Expr::Sqrt(a) => Expr::div(
                a.diff(k),
                Expr::mul(Expr::Const(2.0), Expr::sqrt((**a).clone())),
            ),
            Expr::Abs(a) => {
                let da = a.diff(k);
                Expr::if_then(
                    Cmp::Ge,
                    (**a).clone(),
                    Expr::Const(0.0),
                    da.clone(),
                    Expr::neg(da),
                )
            }
            Expr::Min(a, b) => {
                Expr::if_then(Cmp::Le, (**a).clone(), (**b).clone(), a.diff(k), b.diff(k))
            }
            Expr::Max(a, b) => {
                Expr::if_then(Cmp::Ge, (**a).clone(), (**b).clone(), a.diff(k), b.diff(k))
            }
            Expr::If {
                cmp,
                lhs,
                rhs,
                then,
                otherwise,
            } => Expr::if_then(
                *cmp,
                (**lhs).clone(),
                (**rhs).clone(),
                then.diff(k),
                otherwise.diff(k),
            ),
        }
    }

    /// Symbolic gradient over `n` variables.
    pub fn gradient(&self, n: usize) -> Vec<Expr> {
        (0..n).map(|k| self.diff(k)).collect()
    }
}

// Integer exponents go through powi so that e.g. (-2)^3 stays real.
fn powf(base: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
        base.powi(p as i32)
    } else {
        base.powf(p)
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "(-{})", -c)
    } else {
        write!(f, "{c}")
    }
}

/// Fully parenthesised output that parses back to an equivalent tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write_const(f, *c),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, p) => {
                write!(f, "({a} ^ ")?;
                write_const(f, *p)?;
                write!(f, ")")
            }
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
            Expr::Abs(a) => write!(f, "abs({a})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::If {
                cmp,
                lhs,
                rhs,
                then,
                otherwise,
            } => write!(f, "if({lhs} {} {rhs}, {then}, {otherwise})", cmp.symbol()),
        }
    }
}
