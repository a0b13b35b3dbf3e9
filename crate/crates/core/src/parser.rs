//! Lexer and recursive-descent parser for `.sdp` programs.
//!
//! Operator precedence follows C: `?:` binds loosest, then `||`, `&&`,
//! comparisons (non-associative), `::` (right-associative), additive,
//! multiplicative, unary `!`/`-`, and postfix indexing.

use num_traits::Zero;

use crate::ast::*;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{span}: {message}{}", expected_suffix(.expected))]
pub struct ParseError {
    pub span: Span,
    pub message: String,
    pub expected: Vec<String>,
}

fn expected_suffix(expected: &[String]) -> String {
    if expected.is_empty() {
        String::new()
    } else {
        format!(" (expected {})", expected.join(" or "))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(Rational),
    Sym(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Number(n) => format!("number {n}"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

const SYMBOLS: [&str; 28] = [
    ":=", "::", "<=", ">=", "&&", "||", "(", ")", "{", "}", "[", "]", "<", ">", "=", ";", ",", ":",
    "?", "!", "+", "-", "*", "/", "^", "~", ".", "|",
];

fn lex(text: &str) -> Result<Vec<(Tok, Span)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let span = Span { line, col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            let word: String = chars[start..j].iter().collect();
            advance(&mut i, &mut line, &mut col, j - start);
            out.push((Tok::Ident(word), span));
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let int_part: String = chars[start..j].iter().collect();
            let mut frac_part = String::new();
            if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    frac_part.push(chars[j]);
                    j += 1;
                }
            }
            let value = decimal_to_rational(&int_part, &frac_part).ok_or_else(|| ParseError {
                span,
                message: "numeric literal out of range".into(),
                expected: vec![],
            })?;
            advance(&mut i, &mut line, &mut col, j - start);
            out.push((Tok::Number(value), span));
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let sym = SYMBOLS.iter().find(|s| rest.starts_with(**s));
        match sym {
            Some(s) => {
                advance(&mut i, &mut line, &mut col, s.len());
                out.push((Tok::Sym(s), span));
            }
            None => {
                return Err(ParseError {
                    span,
                    message: format!("unexpected character `{c}`"),
                    expected: vec![],
                })
            }
        }
    }
    out.push((Tok::Eof, Span { line, col }));
    Ok(out)
}

fn decimal_to_rational(int_part: &str, frac_part: &str) -> Option<Rational> {
    let digits = format!("{int_part}{frac_part}");
    let numer: i64 = digits.parse().ok()?;
    let denom = 10i64.checked_pow(frac_part.len() as u32)?;
    Some(Rational::new(numer, denom))
}

/// Whether commands only valid in transformed programs are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Source,
    Target,
}

const KEYWORDS: &[&str] = &[
    "function",
    "returns",
    "precondition",
    "privacy",
    "real",
    "bool",
    "list",
    "lap",
    "select",
    "dist",
    "aligned",
    "shadow",
    "if",
    "else",
    "while",
    "return",
    "skip",
    "havoc",
    "assert",
    "true",
    "false",
    "mod",
    "abs",
    "ALL_DIFFER",
    "ONE_DIFFER",
    "forall",
];

struct Parser {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    mode: Mode,
    next_site: usize,
    /// True where distance variables may be referenced (annotations,
    /// types, preconditions, and anywhere in target programs).
    allow_dist: bool,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }
    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].0
    }
    fn span(&self) -> Span {
        self.toks[self.pos].1
    }
    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }
    fn error<T>(&self, expected: &[&str]) -> PResult<T> {
        Err(ParseError {
            span: self.span(),
            message: format!("unexpected {}", self.peek().describe()),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        })
    }
    fn fail<T>(&self, span: Span, message: impl Into<String>) -> PResult<T> {
        Err(ParseError {
            span,
            message: message.into(),
            expected: vec![],
        })
    }
    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }
    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }
    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }
    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.bump();
            true
        } else {
            false
        }
    }
    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.error(&[&format!("`{s}`")])
        }
    }
    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            self.error(&[&format!("`{k}`")])
        }
    }
    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) && s != "_" => {
                self.bump();
                Ok(s)
            }
            _ => self.error(&["identifier"]),
        }
    }

    fn program(&mut self) -> PResult<Program> {
        self.expect_kw("function")?;
        let name = self.ident()?;
        self.expect_sym("(")?;
        let mut params = Vec::new();
        if !self.is_sym(")") {
            loop {
                params.push(self.param()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym(")")?;
        self.expect_kw("returns")?;
        self.expect_sym("(")?;
        let ret = self.param()?;
        self.expect_sym(")")?;
        self.expect_kw("precondition")?;
        let pre = self.precondition()?;
        let budget = if self.eat_kw("privacy") {
            self.allow_dist = false;
            Some(self.expr_level(5)?)
        } else {
            None
        };
        let body = self.block()?;
        if !matches!(self.peek(), Tok::Eof) {
            return self.error(&["end of input"]);
        }
        let body_span = self.span();
        match body.last() {
            Some(Cmd {
                kind: CmdKind::Return(_),
                ..
            }) => {}
            _ => return self.fail(body_span, "function body must end with `return`"),
        }
        let mut returns = 0;
        walk_cmds(&body, &mut |c| {
            if matches!(c.kind, CmdKind::Return(_)) {
                returns += 1;
            }
        });
        if returns != 1 {
            return self.fail(
                body_span,
                "exactly one `return` is allowed, in tail position",
            );
        }
        Ok(Program {
            name,
            params,
            ret,
            pre,
            budget,
            body,
        })
    }

    fn param(&mut self) -> PResult<Param> {
        let name = self.ident()?;
        self.expect_sym(":")?;
        let ty = self.ty()?;
        Ok(Param { name, ty })
    }

    fn ty(&mut self) -> PResult<DistType> {
        self.allow_dist = true;
        if self.eat_kw("list") {
            let elem = self.ty()?;
            return Ok(DistType::list(elem));
        }
        let base = if self.eat_kw("real") {
            BaseType::Real
        } else if self.eat_kw("bool") {
            BaseType::Bool
        } else {
            return self.error(&["`real`", "`bool`", "`list`"]);
        };
        if base == BaseType::Bool && !self.is_sym("<") {
            return Ok(DistType::bool());
        }
        self.expect_sym("<")?;
        let aligned = self.distance()?;
        self.expect_sym(",")?;
        let shadow = self.distance()?;
        self.expect_sym(">")?;
        Ok(DistType {
            base,
            aligned,
            shadow,
        })
    }

    fn distance(&mut self) -> PResult<Distance> {
        if self.is_sym("*") {
            self.bump();
            return Ok(Distance::Star);
        }
        if self.is_sym("-") && matches!(self.peek_at(1), Tok::Sym(",") | Tok::Sym(">")) {
            self.bump();
            return Ok(Distance::Any);
        }
        Ok(Distance::Num(self.expr_level(5)?))
    }

    fn precondition(&mut self) -> PResult<Vec<PreItem>> {
        self.allow_dist = true;
        let mut items = Vec::new();
        loop {
            let item = if self.eat_kw("ALL_DIFFER") || self.eat_kw("ONE_DIFFER") {
                let one = matches!(&self.toks[self.pos - 1].0, Tok::Ident(k) if k == "ONE_DIFFER");
                self.expect_sym("(")?;
                let q = self.ident()?;
                self.expect_sym(")")?;
                Some(if one {
                    PreItem::OneDiffer(q)
                } else {
                    PreItem::AllDiffer(q)
                })
            } else if self.eat_kw("forall") {
                let k = self.ident()?;
                self.expect_sym(".")?;
                let body = self.expr_level(3)?;
                Some(PreItem::Forall(k, body))
            } else {
                match self.expr_level(3)? {
                    Expr::Bool(true) => None,
                    e => Some(PreItem::Fact(e)),
                }
            };
            items.extend(item);
            if !self.eat_sym("&&") {
                break;
            }
        }
        self.allow_dist = false;
        Ok(items)
    }

    fn block(&mut self) -> PResult<Vec<Cmd>> {
        self.expect_sym("{")?;
        let mut cmds = Vec::new();
        while !self.is_sym("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.error(&["`}`"]);
            }
            cmds.push(self.command()?);
        }
        self.bump();
        Ok(cmds)
    }

    fn command(&mut self) -> PResult<Cmd> {
        let span = self.span();
        self.allow_dist = self.mode == Mode::Target;
        if self.eat_kw("skip") {
            self.expect_sym(";")?;
            return Ok(Cmd::at(CmdKind::Skip, span));
        }
        if self.eat_kw("if") {
            self.expect_sym("(")?;
            let cond = self.expr()?;
            self.expect_sym(")")?;
            let then = self.block()?;
            let els = if self.eat_kw("else") {
                if self.is_kw("if") {
                    vec![self.command()?]
                } else {
                    self.block()?
                }
            } else {
                Vec::new()
            };
            return Ok(Cmd::at(CmdKind::If(cond, then, els), span));
        }
        if self.eat_kw("while") {
            self.expect_sym("(")?;
            let cond = self.expr()?;
            self.expect_sym(")")?;
            let body = self.block()?;
            return Ok(Cmd::at(CmdKind::While(cond, body), span));
        }
        if self.eat_kw("return") {
            let e = self.expr()?;
            self.expect_sym(";")?;
            return Ok(Cmd::at(CmdKind::Return(e), span));
        }
        if self.is_kw("havoc") || self.is_kw("assert") {
            if self.mode == Mode::Source {
                return self.fail(
                    span,
                    "`havoc` and `assert` only appear in transformed programs",
                );
            }
            if self.eat_kw("havoc") {
                let x = self.ident()?;
                self.expect_sym(";")?;
                return Ok(Cmd::at(CmdKind::Havoc(x), span));
            }
            self.bump();
            self.expect_sym("(")?;
            self.allow_dist = true;
            let e = self.expr()?;
            self.expect_sym(")")?;
            self.expect_sym(";")?;
            return Ok(Cmd::at(CmdKind::Assert(e), span));
        }
        if self.is_sym("^") || self.is_sym("~") {
            if self.mode == Mode::Source {
                return self.fail(
                    span,
                    "distance variables cannot be assigned in source programs",
                );
            }
            let version = if self.eat_sym("^") {
                Version::Aligned
            } else {
                self.bump();
                Version::Shadow
            };
            let x = self.ident()?;
            self.expect_sym(":=")?;
            self.allow_dist = true;
            let e = self.expr()?;
            self.expect_sym(";")?;
            return Ok(Cmd::at(CmdKind::Assign(LValue::Dist(x, version), e), span));
        }
        let x = self.ident()?;
        self.expect_sym(":=")?;
        if self.eat_kw("lap") {
            self.expect_sym("(")?;
            let scale = self.expr()?;
            self.expect_sym(")")?;
            let ann = if self.is_sym("{") {
                self.annotation()?
            } else {
                None
            };
            self.expect_sym(";")?;
            let site = self.next_site;
            self.next_site += 1;
            return Ok(Cmd::at(
                CmdKind::Sample {
                    var: x,
                    scale,
                    site,
                    ann,
                },
                span,
            ));
        }
        self.allow_dist = self.mode == Mode::Target;
        let e = self.expr()?;
        self.expect_sym(";")?;
        Ok(Cmd::at(CmdKind::Assign(LValue::Var(x), e), span))
    }

    fn annotation(&mut self) -> PResult<Option<Annotation>> {
        let open = self.span();
        self.expect_sym("{")?;
        if self.eat_sym("}") {
            return Ok(None);
        }
        self.allow_dist = true;
        let mut select = None;
        let mut dist = None;
        loop {
            let span = self.span();
            let key = match self.bump() {
                Tok::Ident(k) => k,
                _ => return self.fail(span, "expected annotation key `select` or `dist`"),
            };
            self.expect_sym(":")?;
            match key.as_str() {
                "select" if select.is_none() => select = Some(self.selector()?),
                "dist" if dist.is_none() => dist = Some(self.expr()?),
                "select" | "dist" => {
                    return self.fail(span, format!("duplicate annotation key `{key}`"))
                }
                other => return self.fail(span, format!("unknown annotation key `{other}`")),
            }
            if self.eat_sym(";") {
                if self.is_sym("}") {
                    break;
                }
                continue;
            }
            break;
        }
        self.expect_sym("}")?;
        self.allow_dist = false;
        match (select, dist) {
            (Some(select), Some(dist)) => Ok(Some(Annotation { select, dist })),
            (None, _) => self.fail(open, "sample annotation is missing `select`"),
            (_, None) => self.fail(open, "sample annotation is missing `dist`"),
        }
    }

    fn selector(&mut self) -> PResult<Selector> {
        if self.eat_kw("aligned") {
            return Ok(Selector::Aligned);
        }
        if self.eat_kw("shadow") {
            return Ok(Selector::Shadow);
        }
        let cond = self.expr_level(1)?;
        self.expect_sym("?")?;
        let a = self.selector()?;
        self.expect_sym(":")?;
        let b = self.selector()?;
        Ok(Selector::Cond(cond, Box::new(a), Box::new(b)))
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.expr_level(0)
    }

    fn expr_level(&mut self, level: u8) -> PResult<Expr> {
        match level {
            0 => {
                let c = self.expr_level(1)?;
                if self.eat_sym("?") {
                    let a = self.expr_level(0)?;
                    self.expect_sym(":")?;
                    let b = self.expr_level(0)?;
                    Ok(Expr::ternary(c, a, b))
                } else {
                    Ok(c)
                }
            }
            1 | 2 => {
                let sym = if level == 1 { "||" } else { "&&" };
                let mut e = self.expr_level(level + 1)?;
                while self.eat_sym(sym) {
                    let r = self.expr_level(level + 1)?;
                    e = if level == 1 {
                        Expr::or(e, r)
                    } else {
                        Expr::and(e, r)
                    };
                }
                Ok(e)
            }
            3 => {
                let e = self.expr_level(4)?;
                let op = match self.peek() {
                    Tok::Sym("<") => CmpOp::Lt,
                    Tok::Sym(">") => CmpOp::Gt,
                    Tok::Sym("=") => CmpOp::Eq,
                    Tok::Sym("<=") => CmpOp::Le,
                    Tok::Sym(">=") => CmpOp::Ge,
                    _ => return Ok(e),
                };
                self.bump();
                let r = self.expr_level(4)?;
                if matches!(self.peek(), Tok::Sym("<" | ">" | "=" | "<=" | ">=")) {
                    return self.fail(self.span(), "comparisons do not chain; use parentheses");
                }
                Ok(Expr::cmp(op, e, r))
            }
            4 => {
                let e = self.expr_level(5)?;
                if self.eat_sym("::") {
                    let r = self.expr_level(4)?;
                    Ok(Expr::cons(e, r))
                } else {
                    Ok(e)
                }
            }
            5 | 6 => {
                let mut e = self.expr_level(level + 1)?;
                loop {
                    let op = match (level, self.peek()) {
                        (5, Tok::Sym("+")) => BinOp::Add,
                        (5, Tok::Sym("-")) => BinOp::Sub,
                        (6, Tok::Sym("*")) => BinOp::Mul,
                        (6, Tok::Sym("/")) => BinOp::Div,
                        (6, Tok::Ident(k)) if k == "mod" => BinOp::Mod,
                        _ => return Ok(e),
                    };
                    self.bump();
                    let r = self.expr_level(level + 1)?;
                    e = Expr::bin(op, e, r);
                }
            }
            7 => {
                if self.eat_sym("!") {
                    return Ok(Expr::not(self.expr_level(7)?));
                }
                if self.is_sym("-") {
                    self.bump();
                    if let Tok::Number(n) = self.peek().clone() {
                        if !matches!(self.peek_at(1), Tok::Sym("[")) {
                            self.bump();
                            return Ok(Expr::Num(-n));
                        }
                    }
                    let e = self.expr_level(7)?;
                    return Ok(Expr::sub(Expr::Num(Rational::zero()), e));
                }
                self.postfix()
            }
            _ => unreachable!("no expression level {level}"),
        }
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        while self.is_sym("[") {
            self.bump();
            let i = self.expr()?;
            self.expect_sym("]")?;
            e = Expr::index(e, i);
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Number(n) => {
                self.bump();
                Ok(Expr::Num(n))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Sym(s @ ("^" | "~")) => {
                if !self.allow_dist {
                    return self.fail(
                        span,
                        "distance variables may only appear in annotations and types",
                    );
                }
                self.bump();
                let version = if s == "^" {
                    Version::Aligned
                } else {
                    Version::Shadow
                };
                let base = self.ident()?;
                let index = if self.eat_sym("[") {
                    let i = self.expr()?;
                    self.expect_sym("]")?;
                    Some(Box::new(i))
                } else {
                    None
                };
                Ok(Expr::Dist(DistVar {
                    base,
                    version,
                    index,
                }))
            }
            Tok::Ident(k) => match k.as_str() {
                "true" | "false" => {
                    self.bump();
                    Ok(Expr::Bool(k == "true"))
                }
                "_" => {
                    self.bump();
                    Ok(Expr::Hole)
                }
                "forall" => self.fail(span, "nested quantifiers are not supported"),
                "abs" => {
                    if self.mode == Mode::Source {
                        return self.fail(span, "`abs` is not allowed in source programs");
                    }
                    self.bump();
                    self.expect_sym("(")?;
                    let e = self.expr()?;
                    self.expect_sym(")")?;
                    Ok(Expr::abs(e))
                }
                _ => Ok(Expr::Var(self.ident()?)),
            },
            _ => self.error(&["expression"]),
        }
    }
}

/// Parse a source program. Transformation-only commands are rejected.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    parse_with_mode(text, Mode::Source)
}

/// Parse a program that may contain `havoc`, `assert`, distance-variable
/// assignments and `abs`.
pub fn parse_target(text: &str) -> Result<Program, ParseError> {
    parse_with_mode(text, Mode::Target)
}

fn parse_with_mode(text: &str, mode: Mode) -> Result<Program, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        mode,
        next_site: 0,
        allow_dist: false,
    };
    p.program()
}

/// Parse a standalone expression (distance variables allowed).
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        mode: Mode::Target,
        next_site: 0,
        allow_dist: true,
    };
    let e = p.expr()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.error(&["end of input"]);
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p =
            parse_program("function f() returns (x: real<0,0>) precondition true { return 0; }")
                .unwrap();
        assert_eq!(p.name, "f");
        assert!(p.pre.is_empty());
        assert_eq!(p.body.len(), 1);
    }

    #[test]
    fn precedence_is_c_like() {
        let e = parse_expr("a + b * c > d || e = 0 && f < 1").unwrap();
        let expected = Expr::or(
            Expr::cmp(
                CmpOp::Gt,
                Expr::add(var("a"), Expr::mul(var("b"), var("c"))),
                var("d"),
            ),
            Expr::and(
                Expr::cmp(CmpOp::Eq, var("e"), num(0)),
                Expr::cmp(CmpOp::Lt, var("f"), num(1)),
            ),
        );
        assert_eq!(e, expected);
        let t = parse_expr("b ? 2 : c ? 1 : 0").unwrap();
        assert_eq!(
            t,
            Expr::ternary(var("b"), num(2), Expr::ternary(var("c"), num(1), num(0)))
        );
    }

    #[test]
    fn unary_minus_and_decimals() {
        assert_eq!(parse_expr("-3").unwrap(), num(-3));
        assert_eq!(parse_expr("0.25").unwrap(), Expr::Num(Rational::new(1, 4)));
        assert_eq!(parse_expr("-x").unwrap(), Expr::sub(num(0), var("x")));
        assert_eq!(
            parse_expr("^q[i] + ~x").unwrap(),
            Expr::add(
                dist_at("q", Version::Aligned, var("i")),
                dist("x", Version::Shadow)
            )
        );
    }

    #[test]
    fn comparisons_do_not_chain() {
        assert!(parse_expr("a < b < c").is_err());
    }

    #[test]
    fn annotation_errors_are_reported() {
        let base = |ann: &str| {
            format!("function f(eps: real<0,0>) returns (x: real<0,0>) precondition true {{ x := lap(1) {ann}; return 0; }}")
        };
        assert!(parse_program(&base("{ select: aligned; dist: 0 }")).is_ok());
        let e = parse_program(&base("{ select: aligned }")).unwrap_err();
        assert!(e.message.contains("missing `dist`"), "{e}");
        let e = parse_program(&base("{ dist: 0 }")).unwrap_err();
        assert!(e.message.contains("missing `select`"), "{e}");
        let e = parse_program(&base("{ choose: aligned; dist: 0 }")).unwrap_err();
        assert!(e.message.contains("unknown annotation key"), "{e}");
    }

    #[test]
    fn source_mode_rejects_target_commands() {
        let src = "function f() returns (x: real<0,0>) precondition true { havoc x; return 0; }";
        assert!(parse_program(src).is_err());
        assert!(parse_target(src).is_ok());
        let src = "function f() returns (x: real<0,0>) precondition true { x := ^y; return 0; }";
        assert!(parse_program(src).is_err());
    }

    #[test]
    fn errors_carry_spans() {
        let e = parse_program(
            "function f() returns (x: real<0,0>)\n precondition true { x := ; return 0; }",
        )
        .unwrap_err();
        assert_eq!(e.span.line, 2);
        assert!(!e.expected.is_empty());
        assert!(parse_program("").is_err());
    }

    #[test]
    fn selector_parses_conditions() {
        let src = "function f(q: list real<*,*>) returns (x: real<0,0>) precondition ALL_DIFFER(q) {
            x := lap(2) { select: (q[0] + x > 1 || x = 0) ? shadow : aligned; dist: (q[0] + x > 1) ? 2 : 0 };
            return 0; }";
        let p = parse_program(src).unwrap();
        let CmdKind::Sample { ann: Some(ann), .. } = &p.body[0].kind else {
            panic!()
        };
        assert!(matches!(&ann.select, Selector::Cond(_, a, b)
            if **a == Selector::Shadow && **b == Selector::Aligned));
        assert_eq!(p.pre, vec![PreItem::AllDiffer("q".into())]);
    }
}
