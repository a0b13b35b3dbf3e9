//! SMT-LIB2 export and the external solver bridge.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};

use super::lra::Q;
use super::{Obligation, Validity, Witness};
use crate::ast::*;
use crate::printer::print_expr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot emit SMT-LIB: {0}")]
pub struct EmitError(pub String);

#[derive(Default)]
struct Emitter {
    reals: BTreeMap<String, ()>,
    bools: BTreeMap<String, ()>,
}

fn sym(name: &str) -> String {
    format!("|{}|", name.replace(['|', '\\'], "_"))
}

fn literal(r: &Rational) -> String {
    let n = r.numer().abs();
    let body = if r.is_integer() {
        format!("{n}.0")
    } else {
        format!("(/ {n}.0 {}.0)", r.denom())
    };
    if r.is_negative() {
        format!("(- {body})")
    } else {
        body
    }
}

/// Constant value of a variable-free numeric expression.
fn constant(e: &Expr) -> Option<Rational> {
    match e {
        Expr::Num(r) => Some(*r),
        Expr::Bin(op, a, b) => {
            let (x, y) = (constant(a)?, constant(b)?);
            match op {
                BinOp::Add => Some(x + y),
                BinOp::Sub => Some(x - y),
                BinOp::Mul => Some(x * y),
                BinOp::Div if y != Rational::zero() => Some(x / y),
                _ => None,
            }
        }
        _ => None,
    }
}

impl Emitter {
    fn atom(&mut self, name: String) -> String {
        let s = sym(&name);
        self.reals.insert(name, ());
        s
    }

    fn num(&mut self, e: &Expr) -> Result<String, EmitError> {
        if let Some(c) = constant(e) {
            return Ok(literal(&c));
        }
        Ok(match e {
            Expr::Var(x) => self.atom(x.clone()),
            Expr::Dist(d) => match &d.index {
                None => self.atom(format!("{}{}", d.version.sigil(), d.base)),
                Some(i) => self.atom(format!("{}{}@{}", d.version.sigil(), d.base, print_expr(i))),
            },
            Expr::Index(b, i) => match &**b {
                Expr::Var(q) => self.atom(format!("{q}@{}", print_expr(i))),
                other => {
                    return Err(EmitError(format!(
                        "list expression `{}`",
                        print_expr(other)
                    )))
                }
            },
            Expr::Bin(op, a, b) => {
                let linear = match op {
                    BinOp::Add | BinOp::Sub => true,
                    BinOp::Mul => constant(a).is_some() || constant(b).is_some(),
                    BinOp::Div => constant(b).is_some(),
                    BinOp::Mod => false,
                };
                if !linear {
                    return Ok(self.atom(print_expr(e)));
                }
                format!("({} {} {})", op.symbol(), self.num(a)?, self.num(b)?)
            }
            Expr::Ternary(c, a, b) => format!(
                "(ite {} {} {})",
                self.boolean(c)?,
                self.num(a)?,
                self.num(b)?
            ),
            Expr::Abs(a) => {
                let t = self.num(a)?;
                format!("(ite (>= {t} 0.0) {t} (- {t}))")
            }
            other => {
                return Err(EmitError(format!(
                    "`{}` in numeric position",
                    print_expr(other)
                )))
            }
        })
    }

    fn boolean(&mut self, e: &Expr) -> Result<String, EmitError> {
        Ok(match e {
            Expr::Bool(b) => b.to_string(),
            Expr::Var(x) => {
                self.bools.insert(x.clone(), ());
                sym(x)
            }
            Expr::Not(a) => format!("(not {})", self.boolean(a)?),
            Expr::And(a, b) => format!("(and {} {})", self.boolean(a)?, self.boolean(b)?),
            Expr::Or(a, b) => format!("(or {} {})", self.boolean(a)?, self.boolean(b)?),
            Expr::Ternary(c, a, b) => {
                format!(
                    "(ite {} {} {})",
                    self.boolean(c)?,
                    self.boolean(a)?,
                    self.boolean(b)?
                )
            }
            Expr::Cmp(op, a, b) => format!("({} {} {})", op.symbol(), self.num(a)?, self.num(b)?),
            other => {
                return Err(EmitError(format!(
                    "`{}` in boolean position",
                    print_expr(other)
                )))
            }
        })
    }
}

/// Render `¬(Ψ ⇒ φ)` as a QF_LRA script. Atom names are the printed forms
/// of the expressions they stand for, so naming is deterministic.
pub fn emit_smtlib(ob: &Obligation) -> Result<String, EmitError> {
    let mut em = Emitter::default();
    let hyp = em.boolean(&ob.hypothesis())?;
    let goal = em.boolean(&ob.goal.to_expr())?;
    let mut out = String::new();
    let _ = writeln!(out, "; {} obligation at {}", ob.kind, ob.span);
    out.push_str("(set-logic QF_LRA)\n");
    for name in em.reals.keys() {
        let _ = writeln!(out, "(declare-const {} Real)", sym(name));
    }
    for name in em.bools.keys() {
        let _ = writeln!(out, "(declare-const {} Bool)", sym(name));
    }
    let _ = writeln!(out, "(assert (not (=> {hyp} {goal})))");
    out.push_str("(check-sat)\n(get-model)\n");
    Ok(out)
}

/// Run a solver command on the script for `ob`. Any failure is reported
/// as `Unknown`.
pub(super) fn run_external(cmd: &str, ob: &Obligation, timeout: Duration) -> Validity {
    let script = match emit_smtlib(ob) {
        Ok(s) => s,
        Err(e) => return Validity::Unknown(e.to_string()),
    };
    match run_script(cmd, &script, timeout) {
        Ok(output) => interpret_reply(&output),
        Err(msg) => Validity::Unknown(msg),
    }
}

fn run_script(cmd: &str, script: &str, timeout: Duration) -> Result<String, String> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("cannot start solver: {e}"))?;
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = std::thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    if let Some(mut stdin) = child.stdin.take() {
        let _ = stdin.write_all(script.as_bytes());
    }
    let start = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) if start.elapsed() > timeout => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(format!("solver timed out after {:?}", timeout));
            }
            Ok(None) => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => return Err(format!("solver wait failed: {e}")),
        }
    }
    reader
        .join()
        .map_err(|_| "solver output reader panicked".to_string())
}

fn interpret_reply(output: &str) -> Validity {
    let mut lines = output.lines().map(str::trim).filter(|l| !l.is_empty());
    match lines.next() {
        Some("unsat") => Validity::Valid,
        Some("sat") => Validity::Invalid(parse_model(output)),
        Some("unknown") => Validity::Unknown("solver answered unknown".into()),
        Some(other) => Validity::Unknown(format!("unexpected solver reply `{other}`")),
        None => Validity::Unknown("solver produced no output".into()),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

fn tokenize(text: &str) -> Vec<String> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            '(' | ')' => {
                toks.push(c.to_string());
                chars.next();
            }
            '|' => {
                chars.next();
                let mut s = String::new();
                for d in chars.by_ref() {
                    if d == '|' {
                        break;
                    }
                    s.push(d);
                }
                toks.push(format!("|{s}|"));
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            _ => {
                let mut s = String::new();
                while let Some(&d) = chars.peek() {
                    if d == '(' || d == ')' || d.is_whitespace() {
                        break;
                    }
                    s.push(d);
                    chars.next();
                }
                toks.push(s);
            }
        }
    }
    toks
}

fn parse_sexps(toks: &[String]) -> Vec<Sexp> {
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    for t in toks {
        match t.as_str() {
            "(" => stack.push(Vec::new()),
            ")" if stack.len() > 1 => {
                let done = stack.pop().unwrap();
                stack.last_mut().unwrap().push(Sexp::List(done));
            }
            ")" => {}
            _ => stack.last_mut().unwrap().push(Sexp::Atom(t.clone())),
        }
    }
    while stack.len() > 1 {
        let done = stack.pop().unwrap();
        stack.last_mut().unwrap().push(Sexp::List(done));
    }
    stack.pop().unwrap()
}

fn decimal(s: &str) -> Option<Q> {
    let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
    let digits = format!("{whole}{frac}");
    let n: BigInt = digits.parse().ok()?;
    let mut d = BigInt::one();
    for _ in 0..frac.len() {
        d *= 10;
    }
    Some(Q::new(n, d))
}

fn value(e: &Sexp) -> Option<Q> {
    match e {
        Sexp::Atom(s) => decimal(s),
        Sexp::List(xs) => match xs.as_slice() {
            [Sexp::Atom(op), a] if op == "-" => Some(-value(a)?),
            [Sexp::Atom(op), a, b] if op == "/" => {
                let d = value(b)?;
                if d.is_zero() {
                    None
                } else {
                    Some(value(a)? / d)
                }
            }
            _ => None,
        },
    }
}

fn unquote(s: &str) -> String {
    s.trim_matches('|').to_string()
}

/// Extract `define-fun` entries from a `(get-model)` reply. Entries that
/// cannot be read are skipped.
fn parse_model(output: &str) -> Witness {
    let mut w = Witness::default();
    let mut visit = vec![parse_sexps(&tokenize(output))];
    while let Some(items) = visit.pop() {
        for item in items {
            if let Sexp::List(xs) = &item {
                if let [Sexp::Atom(df), Sexp::Atom(name), Sexp::List(args), Sexp::Atom(ty), body] =
                    xs.as_slice()
                {
                    if df == "define-fun" && args.is_empty() {
                        match (ty.as_str(), body) {
                            ("Real" | "Int", b) => {
                                if let Some(v) = value(b) {
                                    w.reals.insert(unquote(name), v);
                                }
                            }
                            ("Bool", Sexp::Atom(b)) => {
                                w.bools.insert(unquote(name), b == "true");
                            }
                            _ => {}
                        }
                        continue;
                    }
                }
                visit.push(xs.clone());
            }
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::super::{Goal, ObligationKind};
    use super::*;
    use crate::parser::parse_expr;

    fn ob(pre: &[PreItem], goal: Goal) -> Obligation {
        Obligation::new(ObligationKind::Odot, pre, &[], goal, Span::default())
    }

    #[test]
    fn script_declares_atoms() {
        let g = Goal::Iff(
            parse_expr("i < size").unwrap(),
            parse_expr("i + 0 < size + 0").unwrap(),
        );
        let s = emit_smtlib(&ob(&[], g)).unwrap();
        assert!(s.contains("(set-logic QF_LRA)"));
        assert!(s.contains("(declare-const |i| Real)"));
        assert!(s.contains("(declare-const |size| Real)"));
        assert!(s.contains("(check-sat)"));
    }

    #[test]
    fn list_reads_become_atoms() {
        let g = Goal::Holds(parse_expr("q[i] + 1 - ^q[i] >= q[i]").unwrap());
        let s = emit_smtlib(&ob(&[PreItem::AllDiffer("q".into())], g)).unwrap();
        assert!(s.contains("|^q@i|"));
        assert!(s.contains("|~q@i|"));
        assert!(s.contains("|q@i|"));
    }

    #[test]
    fn reads_models() {
        let reply = "sat\n(model\n (define-fun x () Real (- (/ 1.0 2.0)))\n (define-fun |^q@i| () Real 3.0)\n (define-fun b () Bool true))\n";
        match interpret_reply(reply) {
            Validity::Invalid(w) => {
                assert_eq!(w.reals["x"], Q::new((-1).into(), 2.into()));
                assert_eq!(w.reals["^q@i"], Q::from_integer(3.into()));
                assert!(w.bools["b"]);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(interpret_reply("unsat\n"), Validity::Valid);
        assert!(matches!(interpret_reply(""), Validity::Unknown(_)));
    }

    #[test]
    fn external_command_failures_are_unknown() {
        let g = Goal::Holds(parse_expr("x > 0").unwrap());
        let o = ob(&[], g);
        assert!(matches!(
            run_external("exit 3", &o, Duration::from_secs(5)),
            Validity::Unknown(_)
        ));
        assert!(matches!(
            run_external("sleep 5", &o, Duration::from_millis(100)),
            Validity::Unknown(_)
        ));
        assert_eq!(
            run_external("cat > /dev/null; echo unsat", &o, Duration::from_secs(5)),
            Validity::Valid
        );
    }
}
