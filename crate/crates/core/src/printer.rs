//! Pretty printer producing text accepted by [`crate::parser`].
//!
//! Parentheses are inserted only where the parser's precedence would
//! otherwise change the tree.

use std::fmt::{self, Write};

use num_integer::Integer;
use num_traits::Signed;

use crate::ast::*;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Ternary(..) => 0,
        Expr::Or(..) => 1,
        Expr::And(..) => 2,
        Expr::Cmp(..) => 3,
        Expr::Cons(..) => 4,
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 5,
        Expr::Bin(..) => 6,
        Expr::Not(_) => 7,
        Expr::Num(r) if r.is_negative() => 7,
        Expr::Num(r) if !is_decimal(r) => 7,
        Expr::Index(..) => 8,
        _ => 9,
    }
}

fn is_decimal(r: &Rational) -> bool {
    let mut d = *r.denom();
    while d % 2 == 0 {
        d /= 2;
    }
    while d % 5 == 0 {
        d /= 5;
    }
    d == 1
}

/// Format a rational as an integer, a terminating decimal, or `(n / d)`.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        return r.numer().to_string();
    }
    if !is_decimal(r) {
        return format!("({} / {})", r.numer(), r.denom());
    }
    let neg = r.is_negative();
    let a = r.abs();
    let whole = a.numer().div_floor(a.denom());
    let mut frac = a - Rational::from_integer(whole);
    let mut digits = String::new();
    while frac != Rational::from_integer(0) {
        frac *= Rational::from_integer(10);
        let d = frac.to_integer();
        digits.push(char::from(b'0' + d as u8));
        frac -= Rational::from_integer(d);
    }
    format!("{}{}.{}", if neg { "-" } else { "" }, whole, digits)
}

fn write_expr(out: &mut String, e: &Expr, min: u8) {
    let parens = precedence(e) < min;
    if parens {
        out.push('(');
    }
    match e {
        Expr::Num(r) => {
            let s = format_rational(r);
            if s.starts_with('(') {
                out.push_str(&s[1..s.len() - 1]);
            } else {
                out.push_str(&s);
            }
        }
        Expr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Var(x) => out.push_str(x),
        Expr::Hole => out.push('_'),
        Expr::Dist(d) => {
            out.push(d.version.sigil());
            out.push_str(&d.base);
            if let Some(i) = &d.index {
                out.push('[');
                write_expr(out, i, 0);
                out.push(']');
            }
        }
        Expr::Bin(op, a, b) => {
            let lvl = precedence(e);
            write_expr(out, a, lvl);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, b, lvl + 1);
        }
        Expr::Cmp(op, a, b) => {
            write_expr(out, a, 4);
            let _ = write!(out, " {} ", op.symbol());
            write_expr(out, b, 4);
        }
        Expr::And(a, b) => {
            write_expr(out, a, 2);
            out.push_str(" && ");
            write_expr(out, b, 3);
        }
        Expr::Or(a, b) => {
            write_expr(out, a, 1);
            out.push_str(" || ");
            write_expr(out, b, 2);
        }
        Expr::Not(a) => {
            out.push('!');
            write_expr(out, a, 7);
        }
        Expr::Ternary(c, a, b) => {
            write_expr(out, c, 1);
            out.push_str(" ? ");
            write_expr(out, a, 0);
            out.push_str(" : ");
            write_expr(out, b, 0);
        }
        Expr::Index(a, i) => {
            write_expr(out, a, 8);
            out.push('[');
            write_expr(out, i, 0);
            out.push(']');
        }
        Expr::Cons(a, b) => {
            write_expr(out, a, 5);
            out.push_str(" :: ");
            write_expr(out, b, 4);
        }
        Expr::Abs(a) => {
            out.push_str("abs(");
            write_expr(out, a, 0);
            out.push(')');
        }
    }
    if parens {
        out.push(')');
    }
}

pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e, 0);
    s
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_expr(self))
    }
}

pub fn print_selector(s: &Selector) -> String {
    match s {
        Selector::Aligned => "aligned".into(),
        Selector::Shadow => "shadow".into(),
        Selector::Cond(c, a, b) => {
            format!(
                "({}) ? {} : {}",
                print_expr(c),
                print_selector(a),
                print_selector(b)
            )
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_selector(self))
    }
}

pub fn print_distance(d: &Distance) -> String {
    match d {
        Distance::Star => "*".into(),
        Distance::Any => "-".into(),
        Distance::Num(e) => {
            let mut s = String::new();
            write_expr(&mut s, e, 5);
            s
        }
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_distance(self))
    }
}

pub fn print_type(t: &DistType) -> String {
    match &t.base {
        BaseType::List(elem) => format!("list {}", print_type(elem)),
        BaseType::Bool if t.aligned.is_zero() && t.shadow.is_zero() => "bool".into(),
        base => {
            let name = if *base == BaseType::Real {
                "real"
            } else {
                "bool"
            };
            format!(
                "{}<{}, {}>",
                name,
                print_distance(&t.aligned),
                print_distance(&t.shadow)
            )
        }
    }
}

impl fmt::Display for DistType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_type(self))
    }
}

fn print_pre_item(item: &PreItem) -> String {
    let mut s = String::new();
    match item {
        PreItem::AllDiffer(q) => s = format!("ALL_DIFFER({q})"),
        PreItem::OneDiffer(q) => s = format!("ONE_DIFFER({q})"),
        PreItem::Forall(k, body) => {
            let _ = write!(s, "forall {k}. ");
            write_expr(&mut s, body, 3);
        }
        PreItem::Fact(e) => write_expr(&mut s, e, 3),
    }
    s
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn write_block(out: &mut String, block: &[Cmd], depth: usize) {
    for c in block {
        write_cmd(out, c, depth);
    }
}

fn write_cmd(out: &mut String, c: &Cmd, depth: usize) {
    indent(out, depth);
    match &c.kind {
        CmdKind::Skip => out.push_str("skip;\n"),
        CmdKind::Assign(lv, e) => {
            let _ = writeln!(out, "{} := {};", lv.name(), print_expr(e));
        }
        CmdKind::Sample {
            var, scale, ann, ..
        } => {
            let _ = write!(out, "{} := lap({})", var, print_expr(scale));
            if let Some(a) = ann {
                let _ = write!(
                    out,
                    " {{ select: {}; dist: {} }}",
                    print_selector(&a.select),
                    print_expr(&a.dist)
                );
            }
            out.push_str(";\n");
        }
        CmdKind::If(cond, then, els) => {
            let _ = writeln!(out, "if ({}) {{", print_expr(cond));
            write_block(out, then, depth + 1);
            indent(out, depth);
            out.push('}');
            write_else(out, els, depth);
        }
        CmdKind::While(cond, body) => {
            let _ = writeln!(out, "while ({}) {{", print_expr(cond));
            write_block(out, body, depth + 1);
            indent(out, depth);
            out.push_str("}\n");
        }
        CmdKind::Return(e) => {
            let _ = writeln!(out, "return {};", print_expr(e));
        }
        CmdKind::Havoc(x) => {
            let _ = writeln!(out, "havoc {x};");
        }
        CmdKind::Assert(e) => {
            let _ = writeln!(out, "assert({});", print_expr(e));
        }
    }
}

fn write_else(out: &mut String, els: &[Cmd], depth: usize) {
    match els {
        [] => out.push('\n'),
        [Cmd {
            kind: CmdKind::If(cond, then, inner),
            ..
        }] => {
            let _ = writeln!(out, " else if ({}) {{", print_expr(cond));
            write_block(out, then, depth + 1);
            indent(out, depth);
            out.push('}');
            write_else(out, inner, depth);
        }
        _ => {
            out.push_str(" else {\n");
            write_block(out, els, depth + 1);
            indent(out, depth);
            out.push_str("}\n");
        }
    }
}

/// Print a block of commands at the given indentation depth.
pub fn print_block(block: &[Cmd], depth: usize) -> String {
    let mut s = String::new();
    write_block(&mut s, block, depth);
    s
}

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    let params: Vec<String> = p
        .params
        .iter()
        .map(|x| format!("{}: {}", x.name, print_type(&x.ty)))
        .collect();
    let _ = writeln!(out, "function {}({})", p.name, params.join(", "));
    let _ = writeln!(out, "  returns ({}: {})", p.ret.name, print_type(&p.ret.ty));
    let pre = if p.pre.is_empty() {
        "true".to_string()
    } else {
        p.pre
            .iter()
            .map(print_pre_item)
            .collect::<Vec<_>>()
            .join(" && ")
    };
    let _ = writeln!(out, "  precondition {pre}");
    if let Some(b) = &p.budget {
        let mut s = String::new();
        write_expr(&mut s, b, 5);
        let _ = writeln!(out, "  privacy {s}");
    }
    out.push_str("{\n");
    write_block(&mut out, &p.body, 1);
    out.push_str("}\n");
    out
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_program(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_expr, parse_program};

    #[test]
    fn skip_prints() {
        assert_eq!(print_block(&[Cmd::new(CmdKind::Skip)], 0), "skip;\n");
    }

    #[test]
    fn minimal_parens() {
        for src in [
            "a - (b - c)",
            "(a + b) * c",
            "!(a > b) || c",
            "(b ? 1 : 2) + 3",
            "x :: y :: z",
            "x :: y = z",
            "(x = y) :: z",
            "q[i] + ^q[i] + eta + 2 > bq + ~bq || i = 0",
            "0 - ^sum",
            "x - -3",
            "-0.5 * x",
        ] {
            let e = parse_expr(src).unwrap();
            assert_eq!(print_expr(&e), src);
        }
    }

    #[test]
    fn rationals() {
        assert_eq!(format_rational(&Rational::new(1, 2)), "0.5");
        assert_eq!(format_rational(&Rational::new(-3, 4)), "-0.75");
        assert_eq!(format_rational(&Rational::new(1, 3)), "(1 / 3)");
        assert_eq!(format_rational(&Rational::from_integer(7)), "7");
    }

    #[test]
    fn program_round_trip() {
        let src = "function f(eps: real<0, 0>, q: list real<*, *>) returns (out: list bool) precondition ALL_DIFFER(q) && forall k. ^q[k] >= 0 && eps > 0 privacy 2 * eps {
            i := 0;
            if (i < 1) { skip; } else if (i > 2) { i := 1; } else { i := 2; }
            while (i < 3) { e := lap(2 / eps) { select: (q[i] + e > 1) ? shadow : aligned; dist: (q[i] + e > 1) ? 2 : 0 }; i := i + 1; }
            return out; }";
        let p = parse_program(src).unwrap();
        let printed = print_program(&p);
        let q = parse_program(&printed).unwrap();
        assert_eq!(p, q);
        assert_eq!(printed, print_program(&q));
    }
}
