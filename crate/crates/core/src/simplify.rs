//! Expression simplification.
//!
//! Three families live here:
//!
//! * [`light`] applies the small identity set used on instrumentation
//!   (`e + 0`, `0 + e`, `e - 0`, `e - e`, and re-association of `+`
//!   chains to the left).
//! * [`canon`] puts distance expressions into a linear normal form so that
//!   syntactic joins see through reordering and cancellation.
//! * [`cost`] folds the privacy-cost updates produced by the target
//!   transformation into readable form.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};

use crate::ast::*;
use crate::printer::print_expr;

/// Identity-based cleanup: `e + 0`, `0 + e`, `e - 0`, `e - e`, and left
/// re-association of sums.
pub fn light(e: &Expr) -> Expr {
    let e = e.map_children(&mut |c| light(c));
    match e {
        Expr::Bin(BinOp::Add, a, b) if b.is_zero() => *a,
        Expr::Bin(BinOp::Add, a, b) if a.is_zero() => *b,
        Expr::Bin(BinOp::Sub, a, b) if b.is_zero() => *a,
        Expr::Bin(BinOp::Sub, a, b) if a == b => num(0),
        Expr::Bin(BinOp::Add, a, b) => match *b {
            Expr::Bin(op @ (BinOp::Add | BinOp::Sub), x, y) => {
                light(&Expr::bin(op, Expr::add(*a, *x), *y))
            }
            b => Expr::add(*a, b),
        },
        other => other,
    }
}

/// Sum of atoms with rational coefficients plus a constant.
#[derive(Debug, Clone, Default)]
struct Lin {
    terms: BTreeMap<String, (Expr, Rational)>,
    constant: Rational,
}

impl Lin {
    fn constant(c: Rational) -> Lin {
        Lin {
            terms: BTreeMap::new(),
            constant: c,
        }
    }
    fn atom(e: Expr) -> Lin {
        let mut terms = BTreeMap::new();
        terms.insert(print_expr(&e), (e, Rational::one()));
        Lin {
            terms,
            constant: Rational::zero(),
        }
    }
    fn as_constant(&self) -> Option<Rational> {
        if self.terms.is_empty() {
            Some(self.constant)
        } else {
            None
        }
    }
    fn add_scaled(mut self, other: Lin, k: Rational) -> Lin {
        for (key, (e, c)) in other.terms {
            let entry = self.terms.entry(key).or_insert((e, Rational::zero()));
            entry.1 += c * k;
        }
        self.terms.retain(|_, (_, c)| !c.is_zero());
        self.constant += other.constant * k;
        self
    }
    fn scale(self, k: Rational) -> Lin {
        Lin::default().add_scaled(self, k)
    }
    fn to_expr(&self) -> Expr {
        let mut acc: Option<Expr> = None;
        for (atom, c) in self.terms.values() {
            let mag = c.abs();
            let term = if mag.is_one() {
                atom.clone()
            } else {
                Expr::mul(Expr::Num(mag), atom.clone())
            };
            acc = Some(match acc {
                None if c.is_negative() => Expr::sub(num(0), term),
                None => term,
                Some(a) if c.is_negative() => Expr::sub(a, term),
                Some(a) => Expr::add(a, term),
            });
        }
        match acc {
            None => Expr::Num(self.constant),
            Some(a) if self.constant.is_zero() => a,
            Some(a) if self.constant.is_negative() => Expr::sub(a, Expr::Num(-self.constant)),
            Some(a) => Expr::add(a, Expr::Num(self.constant)),
        }
    }
}

fn to_lin(e: &Expr) -> Lin {
    match e {
        Expr::Num(r) => Lin::constant(*r),
        Expr::Bin(BinOp::Add, a, b) => to_lin(a).add_scaled(to_lin(b), Rational::one()),
        Expr::Bin(BinOp::Sub, a, b) => to_lin(a).add_scaled(to_lin(b), -Rational::one()),
        Expr::Bin(BinOp::Mul, a, b) => {
            let (la, lb) = (to_lin(a), to_lin(b));
            match (la.as_constant(), lb.as_constant()) {
                (Some(k), _) => lb.scale(k),
                (_, Some(k)) => la.scale(k),
                _ => Lin::atom(Expr::mul(la.to_expr(), lb.to_expr())),
            }
        }
        Expr::Bin(BinOp::Div, a, b) => {
            let (la, lb) = (to_lin(a), to_lin(b));
            match lb.as_constant() {
                Some(k) if !k.is_zero() => la.scale(k.recip()),
                _ => Lin::atom(Expr::div(la.to_expr(), lb.to_expr())),
            }
        }
        Expr::Ternary(c, a, b) => {
            let (ca, cb) = (canon(a), canon(b));
            if ca == cb {
                to_lin(&ca)
            } else {
                Lin::atom(Expr::ternary((**c).clone(), ca, cb))
            }
        }
        other => Lin::atom(other.map_children(&mut |c| canon(c))),
    }
}

/// Linear normal form of a numeric expression. Atoms are ordered by their
/// printed form and the constant comes last; non-linear subterms and
/// ternaries are treated as atoms with canonical children.
pub fn canon(e: &Expr) -> Expr {
    to_lin(e).to_expr()
}

/// Inside a branch guarded by `guard`, replace ternaries on exactly that
/// condition by the branch taken.
pub fn collapse_under(e: &Expr, guard: &Expr, truth: bool) -> Expr {
    match e {
        Expr::Ternary(c, a, b) if **c == *guard => {
            collapse_under(if truth { a } else { b }, guard, truth)
        }
        _ => e.map_children(&mut |c| collapse_under(c, guard, truth)),
    }
}

fn is_num(e: &Expr, k: i64) -> bool {
    matches!(e, Expr::Num(r) if *r == Rational::from_integer(k))
}

/// Fold a privacy-cost expression. `abs`, division and addition are pushed
/// through ternaries before literals are folded; `a / (b / c)` becomes
/// `a * c / b`.
pub fn cost(e: &Expr) -> Expr {
    let e = e.map_children(&mut |c| cost(c));
    match e {
        Expr::Abs(inner) => match *inner {
            Expr::Num(r) => Expr::Num(r.abs()),
            Expr::Ternary(c, a, b) => cost(&Expr::ternary(*c, Expr::abs(*a), Expr::abs(*b))),
            other => Expr::abs(other),
        },
        Expr::Bin(op, a, b) => fold_bin(op, *a, *b),
        Expr::Ternary(_, a, b) if a == b => *a,
        other => other,
    }
}

fn fold_bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_num(), b.as_num()) {
        match op {
            BinOp::Add => return Expr::Num(x + y),
            BinOp::Sub => return Expr::Num(x - y),
            BinOp::Mul => return Expr::Num(x * y),
            BinOp::Div if !y.is_zero() => return Expr::Num(x / y),
            _ => {}
        }
    }
    match (op, a, b) {
        (BinOp::Add, a, b) if b.is_zero() => a,
        (BinOp::Add, a, b) if a.is_zero() => b,
        (BinOp::Sub, a, b) if b.is_zero() => a,
        (BinOp::Mul, a, _) if a.is_zero() => num(0),
        (BinOp::Mul, _, b) if b.is_zero() => num(0),
        (BinOp::Mul, a, b) if is_num(&a, 1) => b,
        (BinOp::Mul, a, b) if is_num(&b, 1) => a,
        (BinOp::Div, a, _) if a.is_zero() => num(0),
        (BinOp::Div, a, b) if is_num(&b, 1) => a,
        (BinOp::Div, Expr::Ternary(c, x, y), d) => {
            let t = Expr::ternary(
                *c,
                fold_bin(BinOp::Div, *x, d.clone()),
                fold_bin(BinOp::Div, *y, d),
            );
            cost(&t)
        }
        (BinOp::Div, a, Expr::Bin(BinOp::Div, n, d)) => {
            let numer = fold_bin(BinOp::Mul, a, *d);
            fold_bin(BinOp::Div, numer, *n)
        }
        (BinOp::Div, Expr::Bin(BinOp::Mul, k, x), Expr::Num(m))
            if k.as_num().is_some() && !m.is_zero() =>
        {
            let q = k.as_num().unwrap() / m;
            if q.is_integer() {
                fold_bin(BinOp::Mul, Expr::Num(q), *x)
            } else {
                Expr::div(Expr::Bin(BinOp::Mul, k, x), Expr::Num(m))
            }
        }
        (BinOp::Add, Expr::Ternary(c1, a1, b1), Expr::Ternary(c2, a2, b2)) if c1 == c2 => {
            cost(&Expr::ternary(
                *c1,
                fold_bin(BinOp::Add, *a1, *a2),
                fold_bin(BinOp::Add, *b1, *b2),
            ))
        }
        (BinOp::Add, a, Expr::Ternary(c, x, y)) if !matches!(a, Expr::Ternary(..)) => {
            cost(&Expr::ternary(
                *c,
                fold_bin(BinOp::Add, a.clone(), *x),
                fold_bin(BinOp::Add, a, *y),
            ))
        }
        (BinOp::Add, Expr::Ternary(c, x, y), b) => cost(&Expr::ternary(
            *c,
            fold_bin(BinOp::Add, *x, b.clone()),
            fold_bin(BinOp::Add, *y, b),
        )),
        (op, a, b) => Expr::bin(op, a, b),
    }
}

/// Normalization used to compare transformed programs against hand
/// transcriptions: [`light`] on every expression, and removal of no-op
/// self-assignments.
pub fn normalize_block(block: &[Cmd]) -> Vec<Cmd> {
    block
        .iter()
        .filter_map(|c| {
            let kind = match &c.kind {
                CmdKind::Assign(LValue::Var(x), Expr::Var(y)) if x == y => return None,
                CmdKind::Assign(LValue::Dist(x, v), Expr::Dist(d))
                    if d.base == *x && d.version == *v && d.index.is_none() =>
                {
                    return None
                }
                CmdKind::Assign(lv, e) => CmdKind::Assign(lv.clone(), light(e)),
                CmdKind::If(cond, a, b) => {
                    CmdKind::If(light(cond), normalize_block(a), normalize_block(b))
                }
                CmdKind::While(cond, body) => CmdKind::While(light(cond), normalize_block(body)),
                CmdKind::Assert(e) => CmdKind::Assert(light(e)),
                CmdKind::Return(e) => CmdKind::Return(light(e)),
                other => other.clone(),
            };
            Some(Cmd { kind, span: c.span })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_expr;

    fn p(s: &str) -> Expr {
        parse_expr(s).unwrap()
    }

    #[test]
    fn light_identities() {
        assert_eq!(light(&p("x + 0")), p("x"));
        assert_eq!(light(&p("0 + x")), p("x"));
        assert_eq!(light(&p("x - x")), p("0"));
        assert_eq!(
            light(&p("q[i] + ^q[i] + (eta + 2)")),
            p("q[i] + ^q[i] + eta + 2")
        );
        assert_eq!(light(&p("a - (b + c)")), p("a - (b + c)"));
    }

    #[test]
    fn canon_cancels_and_orders() {
        assert_eq!(canon(&p("^sum + ^q[i] + (0 - ^sum - ^q[i])")), p("0"));
        assert_eq!(canon(&p("2 + ^q[i]")), p("^q[i] + 2"));
        assert_eq!(canon(&p("^q[i] + 1 - 1")), p("^q[i]"));
        assert_eq!(canon(&p("0 - ^sum")), p("0 - ^sum"));
        assert_eq!(canon(&p("b ? 1 + 1 : 2")), p("2"));
        assert_eq!(canon(&p("(x + y) * 2")), p("2 * x + 2 * y"));
    }

    #[test]
    fn canon_is_idempotent_on_samples() {
        for s in [
            "a - 3 * b + c / 2",
            "x * y + 1",
            "b ? x + 0 : y",
            "1 - ^q[i]",
        ] {
            let once = canon(&p(s));
            assert_eq!(canon(&once), once, "{s}");
        }
    }

    #[test]
    fn collapse_selects_branch() {
        let e = p("(q[i] + eta > bq) ? 2 : 0");
        let g = p("q[i] + eta > bq");
        assert_eq!(collapse_under(&e, &g, true), p("2"));
        assert_eq!(collapse_under(&e, &g, false), p("0"));
        assert_eq!(collapse_under(&e, &p("x > 1"), true), e);
    }

    #[test]
    fn cost_folding_matches_expected_forms() {
        let omega = "q[i] + eta > bq || i = 0";
        let noisy = p(&format!(
            "({omega} ? 0 : v_eps) + abs({omega} ? 2 : 0) / (2 / eps)"
        ));
        assert_eq!(cost(&noisy), p(&format!("{omega} ? eps : v_eps")));
        assert_eq!(cost(&p("v_eps + abs(1) / (2 / eps)")), p("v_eps + eps / 2"));
        let svt = p("v_eps + abs(q[i] + eta2 >= Tt ? 2 : 0) / (4 * N / eps)");
        assert_eq!(
            cost(&svt),
            p("q[i] + eta2 >= Tt ? v_eps + 2 * eps / (4 * N) : v_eps")
        );
        assert_eq!(
            cost(&p("v_eps + abs(0 - ^sum) / (1 / eps)")),
            p("v_eps + abs(0 - ^sum) * eps")
        );
        assert_eq!(cost(&p("v_eps + abs(0) / (2 / eps)")), p("v_eps"));
    }
}
