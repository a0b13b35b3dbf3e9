//! Concrete execution of source programs.
//!
//! Source programs run on the bytecode machine with a pluggable noise
//! source: a replayed trace (exact rationals), or seeded Laplace draws. On
//! top of that sit the consistency oracle relating a source run to the run
//! of its instrumented program, and a Monte-Carlo estimate of the output
//! probability ratio on a pair of adjacent inputs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering as AtOrd};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, ContinuousCDF};

use crate::ast::*;
use crate::machine::{
    compile, compile_with, dist_slot_name, eval_named, Code, Machine, Oracle, RunError, Scalar,
    Stop, Value,
};
use crate::typer::{Checked, Env};

/// The noise values drawn by one run, in order: `(site, value)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NoiseTrace {
    pub entries: Vec<(usize, Rational)>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("trace line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

impl NoiseTrace {
    /// One `site num/den` line per draw.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (site, v) in &self.entries {
            out.push_str(&format!("{site} {}/{}\n", v.numer(), v.denom()));
        }
        out
    }

    /// Parse the format written by [`NoiseTrace::to_text`]. Blank lines and
    /// `#` comments are skipped; a value without `/den` is an integer.
    pub fn parse(text: &str) -> Result<Self, TraceParseError> {
        let mut entries = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| TraceParseError {
                line: k + 1,
                message: m.to_string(),
            };
            let mut parts = line.split_whitespace();
            let (Some(site), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `site num/den`"));
            };
            let site: usize = site.parse().map_err(|_| bad("bad site id"))?;
            let (n, d) = value.split_once('/').unwrap_or((value, "1"));
            let n: i64 = n.parse().map_err(|_| bad("bad numerator"))?;
            let d: i64 = d.parse().map_err(|_| bad("bad denominator"))?;
            if d == 0 {
                return Err(bad("zero denominator"));
            }
            entries.push((site, Rational::new(n, d)));
        }
        Ok(NoiseTrace { entries })
    }
}

/// Supplies the value of each sampling instruction.
pub trait NoiseSource<S> {
    fn draw(&mut self, site: usize, scale: &S) -> Result<S, RunError>;
}

/// Replays recorded draws, checking that sites line up.
pub struct Replay<'a, S> {
    entries: &'a [(usize, S)],
    next: usize,
}

impl<'a, S> Replay<'a, S> {
    pub fn new(entries: &'a [(usize, S)]) -> Self {
        Replay { entries, next: 0 }
    }

    pub fn unused(&self) -> usize {
        self.entries.len() - self.next
    }
}

impl<S: Clone> NoiseSource<S> for Replay<'_, S> {
    fn draw(&mut self, site: usize, _: &S) -> Result<S, RunError> {
        let (got, v) = self
            .entries
            .get(self.next)
            .ok_or(RunError::TraceUnderflow(site))?;
        if *got != site {
            return Err(RunError::TraceMismatch {
                want: site,
                got: *got,
            });
        }
        self.next += 1;
        Ok(v.clone())
    }
}

/// A draw from `Lap(scale)` by inverting the CDF.
pub fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let u: f64 = rng.gen::<f64>() - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Seeded Laplace noise in floating point.
pub struct SeededLaplace {
    rng: ChaCha8Rng,
}

impl SeededLaplace {
    pub fn new(seed: u64) -> Self {
        SeededLaplace {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        SeededLaplace { rng }
    }
}

impl NoiseSource<f64> for SeededLaplace {
    fn draw(&mut self, _: usize, scale: &f64) -> Result<f64, RunError> {
        Ok(sample_laplace(&mut self.rng, *scale))
    }
}

/// Seeded Laplace noise rounded to multiples of `1/quantum`, for exact runs.
pub struct QuantizedLaplace {
    rng: ChaCha8Rng,
    quantum: i64,
}

impl QuantizedLaplace {
    pub fn new(seed: u64, quantum: i64) -> Self {
        assert!(quantum > 0, "quantum must be positive");
        QuantizedLaplace {
            rng: ChaCha8Rng::seed_from_u64(seed),
            quantum,
        }
    }
}

impl NoiseSource<Rational> for QuantizedLaplace {
    fn draw(&mut self, _: usize, scale: &Rational) -> Result<Rational, RunError> {
        let x = sample_laplace(&mut self.rng, scale.to_f64());
        let k = (x * self.quantum as f64).round();
        if !k.is_finite() || k.abs() > 1e15 {
            return Err(RunError::Overflow);
        }
        Ok(Rational::new(k as i64, self.quantum))
    }
}

/// Variable values by name.
type State<S> = BTreeMap<String, Value<S>>;

/// Result of running a source program.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRun<S> {
    pub output: Value<S>,
    pub trace: Vec<(usize, S)>,
    /// Named state when the program returned.
    pub env: BTreeMap<String, Value<S>>,
}

/// Adapts a noise source to the machine, recording draws and optionally
/// stopping before the draw with index `stop_at`.
struct Recorder<'a, S> {
    noise: &'a mut dyn NoiseSource<S>,
    trace: Vec<(usize, S)>,
    snapshots: Vec<Vec<Value<S>>>,
    keep_snapshots: bool,
    stop_at: Option<usize>,
}

impl<S: Scalar> Oracle<S> for Recorder<'_, S> {
    fn sample(&mut self, site: usize, scale: &S, slots: &[Value<S>]) -> Result<S, RunError> {
        if self.keep_snapshots {
            self.snapshots.push(slots.to_vec());
        }
        if self.stop_at == Some(self.trace.len()) {
            return Err(RunError::Halted);
        }
        let v = self.noise.draw(site, scale)?;
        self.trace.push((site, v.clone()));
        Ok(v)
    }

    fn havoc(&mut self, _: usize) -> Result<Option<S>, RunError> {
        Err(RunError::Compile("havoc in a source program".into()))
    }
}

fn named<S: Scalar>(code: &Code, slots: &[Value<S>]) -> BTreeMap<String, Value<S>> {
    code.slots
        .iter()
        .zip(slots)
        .filter(|(_, v)| **v != Value::Unset)
        .map(|(n, v)| (n.clone(), v.clone()))
        .collect()
}

/// A source program compiled once for repeated runs.
pub struct SourceRunner {
    program: Program,
    code: Code,
}

impl SourceRunner {
    pub fn new(p: &Program) -> Result<Self, RunError> {
        let mut names: Vec<String> = p.params.iter().map(|x| x.name.clone()).collect();
        names.push(p.ret.name.clone());
        Ok(SourceRunner {
            program: p.clone(),
            code: compile(&p.body, &names)?,
        })
    }

    fn start<S: Scalar>(
        &self,
        inputs: &BTreeMap<String, Value<S>>,
    ) -> Result<Vec<Value<S>>, RunError> {
        let mut slots = self.code.fresh_state::<S>().slots;
        for p in &self.program.params {
            let v = inputs
                .get(&p.name)
                .ok_or_else(|| RunError::Unset(p.name.clone()))?;
            if let Some(k) = self.code.slot(&p.name) {
                slots[k] = v.clone();
            }
        }
        if self.program.ret.ty.is_list() {
            if let Some(k) = self.code.slot(&self.program.ret.name) {
                slots[k] = Value::list(vec![]);
            }
        }
        Ok(slots)
    }

    fn exec<S: Scalar>(
        &self,
        inputs: &BTreeMap<String, Value<S>>,
        rec: &mut Recorder<'_, S>,
    ) -> Result<(Value<S>, Vec<Value<S>>), RunError> {
        let mut st = self.code.fresh_state::<S>();
        st.slots = self.start(inputs)?;
        let out = match Machine::new(&self.code).run(&mut st, rec)? {
            Stop::Returned(v) => v,
            Stop::Finished => Value::Unset,
            Stop::AssertFailed(span) => {
                return Err(RunError::Compile(format!("assertion at {span} failed")))
            }
            Stop::Suspended => return Err(RunError::Compile("source run suspended".into())),
        };
        Ok((out, st.slots))
    }

    pub fn run<S: Scalar>(
        &self,
        inputs: &BTreeMap<String, Value<S>>,
        noise: &mut dyn NoiseSource<S>,
    ) -> Result<SourceRun<S>, RunError> {
        let mut rec = Recorder {
            noise,
            trace: Vec::new(),
            snapshots: Vec::new(),
            keep_snapshots: false,
            stop_at: None,
        };
        let (output, slots) = self.exec(inputs, &mut rec)?;
        Ok(SourceRun {
            output,
            trace: rec.trace,
            env: named(&self.code, &slots),
        })
    }

    /// Named states just before each draw, plus the final state.
    fn snapshots<S: Scalar>(
        &self,
        inputs: &BTreeMap<String, Value<S>>,
        noise: &mut dyn NoiseSource<S>,
    ) -> Result<(Vec<State<S>>, State<S>), RunError> {
        let mut rec = Recorder {
            noise,
            trace: Vec::new(),
            snapshots: Vec::new(),
            keep_snapshots: true,
            stop_at: None,
        };
        let (_, slots) = self.exec(inputs, &mut rec)?;
        let snaps = rec.snapshots.iter().map(|s| named(&self.code, s)).collect();
        Ok((snaps, named(&self.code, &slots)))
    }

    /// Named state just before draw number `k`.
    fn state_before<S: Scalar>(
        &self,
        inputs: &BTreeMap<String, Value<S>>,
        noise: &mut dyn NoiseSource<S>,
        k: usize,
    ) -> Result<BTreeMap<String, Value<S>>, RunError> {
        let mut rec = Recorder {
            noise,
            trace: Vec::new(),
            snapshots: Vec::new(),
            keep_snapshots: true,
            stop_at: Some(k),
        };
        match self.exec(inputs, &mut rec) {
            Err(RunError::Halted) => Ok(named(
                &self.code,
                rec.snapshots.last().expect("halted at a sample"),
            )),
            Err(e) => Err(e),
            Ok(_) => Err(RunError::TraceUnderflow(k)),
        }
    }
}

/// Run a source program once. The whole trace must be consumed when
/// replaying.
pub fn run_source<S: Scalar>(
    p: &Program,
    inputs: &BTreeMap<String, Value<S>>,
    noise: &mut dyn NoiseSource<S>,
) -> Result<SourceRun<S>, RunError> {
    SourceRunner::new(p)?.run(inputs, noise)
}

/// Replay a trace exactly, rejecting unused entries.
pub fn replay_source(
    p: &Program,
    inputs: &BTreeMap<String, Value<Rational>>,
    trace: &NoiseTrace,
) -> Result<SourceRun<Rational>, RunError> {
    let mut noise = Replay::new(&trace.entries);
    let run = run_source(p, inputs, &mut noise)?;
    match noise.unused() {
        0 => Ok(run),
        n => Err(RunError::TraceOverflow(n)),
    }
}

/// Outcome of the consistency oracle.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Consistency {
    /// Human-readable discrepancies; empty when the runs agree.
    pub mismatches: Vec<String>,
}

impl Consistency {
    pub fn consistent(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Replays a trace through the instrumented program, recording states
/// before each draw and the evaluated annotation after it.
struct ProbeOracle<'a> {
    replay: Replay<'a, Rational>,
    snapshots: Vec<Vec<Value<Rational>>>,
    annotations: Vec<(bool, Rational)>,
}

impl Oracle<Rational> for ProbeOracle<'_> {
    fn sample(
        &mut self,
        site: usize,
        scale: &Rational,
        slots: &[Value<Rational>],
    ) -> Result<Rational, RunError> {
        self.snapshots.push(slots.to_vec());
        self.replay.draw(site, scale)
    }

    fn annotation(&mut self, _: usize, shadow: bool, dist: &Rational) {
        self.annotations.push((shadow, *dist));
    }

    fn havoc(&mut self, _: usize) -> Result<Option<Rational>, RunError> {
        Err(RunError::Compile("havoc in an instrumented program".into()))
    }
}

type Named = BTreeMap<String, Value<Rational>>;

fn lookup<'a>(env: &'a Named) -> impl Fn(&str) -> Option<Value<Rational>> + 'a {
    move |n| env.get(n).cloned()
}

/// Value of the `v` component of a distance in `env`, for element `index`
/// of a list when given. `None` means the component is not tracked.
fn component(
    d: &Distance,
    x: &str,
    v: Version,
    index: Option<usize>,
    env: &Named,
) -> Result<Option<Rational>, String> {
    let val = match d {
        Distance::Any => return Ok(None),
        Distance::Num(e) => {
            let e = match index {
                Some(k) => fill_hole(e, &num(k as i64)),
                None => e.clone(),
            };
            eval_named(&e, &lookup(env)).map_err(|err| format!("distance of `{x}`: {err}"))?
        }
        Distance::Star => {
            let slot = dist_slot_name(x, v);
            let whole = env
                .get(&slot)
                .cloned()
                .ok_or_else(|| format!("`{slot}` is unset"))?;
            match index {
                Some(k) => whole
                    .as_list()
                    .and_then(|l| l.get(k))
                    .cloned()
                    .ok_or_else(|| format!("`{slot}[{k}]` is missing"))?,
                None => whole,
            }
        }
    };
    val.as_num()
        .copied()
        .map(Some)
        .ok_or_else(|| format!("distance of `{x}` is not a number"))
}

/// Inputs of the related execution: each parameter shifted by its
/// `v` distance.
fn adjacent_inputs(p: &Program, inputs: &Named, v: Version) -> Result<Named, String> {
    let mut out = inputs.clone();
    for param in &p.params {
        let Some(value) = inputs.get(&param.name) else {
            continue;
        };
        let shifted = match (&param.ty.base, value) {
            (BaseType::List(elem), Value::List(items)) => {
                let mut next = Vec::with_capacity(items.len());
                for (k, item) in items.iter().enumerate() {
                    next.push(
                        match (
                            component(elem.component(v), &param.name, v, Some(k), inputs)?,
                            item,
                        ) {
                            (Some(d), Value::Num(x)) => Value::Num(x + d),
                            _ => item.clone(),
                        },
                    );
                }
                Value::list(next)
            }
            (BaseType::Real, Value::Num(x)) => {
                match component(param.ty.component(v), &param.name, v, None, inputs)? {
                    Some(d) => Value::Num(x + d),
                    None => value.clone(),
                }
            }
            _ => value.clone(),
        };
        out.insert(param.name.clone(), shifted);
    }
    Ok(out)
}

/// Check that `other`, the related execution, agrees with `orig` shifted
/// by the `v` distances of `env`.
fn compare(env: &Env, v: Version, orig: &Named, other: &Named, at: &str, out: &mut Vec<String>) {
    let mut note = |m: String| out.push(format!("{at}: {m}"));
    for (x, t) in env.iter() {
        let Some(mine) = orig.get(x) else { continue };
        let theirs = other.get(x);
        match (&t.base, mine) {
            (BaseType::Real, Value::Num(a)) => match component(t.component(v), x, v, None, orig) {
                Ok(Some(d)) => {
                    let want = Value::Num(a + d);
                    if theirs != Some(&want) {
                        note(format!(
                            "{} `{x}` is {}, expected {want}",
                            v.describe(),
                            show(theirs)
                        ));
                    }
                }
                Ok(None) => {}
                Err(m) => note(m),
            },
            (BaseType::Bool, _) if *t.component(v) != Distance::Any => {
                if theirs != Some(mine) {
                    note(format!(
                        "{} `{x}` is {}, expected {mine}",
                        v.describe(),
                        show(theirs)
                    ));
                }
            }
            (BaseType::List(elem), Value::List(items)) => {
                if *elem.component(v) == Distance::Any {
                    continue;
                }
                let Some(Value::List(other_items)) = theirs else {
                    note(format!("{} `{x}` is {}", v.describe(), show(theirs)));
                    continue;
                };
                if other_items.len() != items.len() {
                    note(format!(
                        "{} `{x}` has length {}, expected {}",
                        v.describe(),
                        other_items.len(),
                        items.len()
                    ));
                    continue;
                }
                for (k, item) in items.iter().enumerate() {
                    let want = match (component(elem.component(v), x, v, Some(k), orig), item) {
                        (Ok(Some(d)), Value::Num(a)) => Value::Num(a + d),
                        (Ok(_), _) => item.clone(),
                        (Err(m), _) => {
                            note(m);
                            continue;
                        }
                    };
                    if other_items[k] != want {
                        note(format!(
                            "{} `{x}[{k}]` is {}, expected {want}",
                            v.describe(),
                            other_items[k]
                        ));
                    }
                }
            }
            _ => {}
        }
    }
}

fn show(v: Option<&Value<Rational>>) -> String {
    v.map_or_else(|| "unset".to_string(), |v| v.to_string())
}

trait Describe {
    fn describe(self) -> &'static str;
}

impl Describe for Version {
    fn describe(self) -> &'static str {
        match self {
            Version::Aligned => "aligned",
            Version::Shadow => "shadow",
        }
    }
}

/// Relate a source run to the run of its instrumented program `c'` on the
/// same trace.
///
/// `inputs` holds the parameters and the distance inputs (`^q`, `~q`, ...).
/// Besides equal outputs, the distance variables of `c'` must describe two
/// concrete executions of the source program: the shadow execution on the
/// shadow-adjacent inputs with the same noise, and the aligned execution on
/// the aligned-adjacent inputs, whose noise is shifted by the evaluated
/// alignments and reset to the shadow noise wherever a selector picks the
/// shadow execution. They are compared before every draw and at the end.
///
/// Errors are reserved for traces that do not fit the source program;
/// every other disagreement is reported as a mismatch.
pub fn run_transformed_consistency(
    checked: &Checked,
    inputs: &Named,
    trace: &NoiseTrace,
) -> Result<Consistency, RunError> {
    let source = &checked.source;
    let runner = SourceRunner::new(source)?;
    let reference = {
        let mut noise = Replay::new(&trace.entries);
        let run = runner.run(inputs, &mut noise)?;
        if noise.unused() > 0 {
            return Err(RunError::TraceOverflow(noise.unused()));
        }
        run
    };
    let mut report = Consistency::default();

    let mut names: Vec<String> = source.params.iter().map(|x| x.name.clone()).collect();
    for d in &checked.dist_inputs {
        if d.role == DistRole::Input {
            names.push(dist_slot_name(&d.base, d.version));
        }
    }
    names.push(source.ret.name.clone());
    let code = match compile_with(&checked.program.body, &names, true) {
        Ok(c) => c,
        Err(e) => {
            report.mismatches.push(format!("instrumented program: {e}"));
            return Ok(report);
        }
    };
    let mut st = code.fresh_state::<Rational>();
    for (n, v) in inputs {
        if let Some(k) = code.slot(n) {
            st.slots[k] = v.clone();
        }
    }
    if source.ret.ty.is_list() {
        if let Some(k) = code.slot(&source.ret.name) {
            st.slots[k] = Value::list(vec![]);
        }
    }
    let mut probe = ProbeOracle {
        replay: Replay::new(&trace.entries),
        snapshots: Vec::new(),
        annotations: Vec::new(),
    };
    let stop = Machine::new(&code).run(&mut st, &mut probe);
    match stop {
        Ok(Stop::Returned(v)) if v == reference.output => {}
        Ok(Stop::Returned(v)) => report.mismatches.push(format!(
            "instrumented output {v}, source output {}",
            reference.output
        )),
        Ok(Stop::Finished) => report
            .mismatches
            .push("instrumented program did not return".into()),
        Ok(Stop::AssertFailed(span)) => {
            report.mismatches.push(format!("assertion at {span} fails"))
        }
        Ok(Stop::Suspended) => report
            .mismatches
            .push("instrumented program suspended".into()),
        Err(e) => report.mismatches.push(format!("instrumented program: {e}")),
    }
    if !report.consistent() {
        return Ok(report);
    }
    let final_orig = named(&code, &st.slots);
    let orig_snaps: Vec<Named> = probe.snapshots.iter().map(|s| named(&code, s)).collect();
    let annotations = probe.annotations;

    let versions: &[Version] = if checked.shadow_free {
        &[Version::Aligned]
    } else {
        &[Version::Aligned, Version::Shadow]
    };
    let adjacent: Vec<(Version, Named)> = match versions
        .iter()
        .map(|&v| adjacent_inputs(source, inputs, v).map(|i| (v, i)))
        .collect::<Result<Vec<_>, String>>()
    {
        Ok(a) => a,
        Err(m) => {
            report.mismatches.push(m);
            return Ok(report);
        }
    };

    for (v, adj) in &adjacent {
        if *v == Version::Shadow {
            match runner.snapshots(adj, &mut Replay::new(&trace.entries)) {
                Ok((snaps, last)) => {
                    for (k, orig) in orig_snaps.iter().enumerate() {
                        let site = trace.entries[k].0;
                        match (checked.site_envs.get(&site), snaps.get(k)) {
                            (Some(env), Some(s)) => compare(
                                env,
                                *v,
                                orig,
                                s,
                                &format!("draw {k}"),
                                &mut report.mismatches,
                            ),
                            (_, None) => report
                                .mismatches
                                .push(format!("draw {k}: shadow execution made fewer draws")),
                            _ => {}
                        }
                    }
                    compare(
                        &checked.final_env,
                        *v,
                        &final_orig,
                        &last,
                        "end",
                        &mut report.mismatches,
                    );
                }
                Err(e) => report.mismatches.push(format!("shadow execution: {e}")),
            }
            continue;
        }
        let mut noise: Vec<(usize, Rational)> = Vec::new();
        for (k, orig) in orig_snaps.iter().enumerate() {
            let (site, eta) = trace.entries[k];
            if let Some(env) = checked.site_envs.get(&site) {
                match runner.state_before(adj, &mut Replay::new(&noise), k) {
                    Ok(s) => compare(
                        env,
                        *v,
                        orig,
                        &s,
                        &format!("draw {k}"),
                        &mut report.mismatches,
                    ),
                    Err(e) => report
                        .mismatches
                        .push(format!("draw {k}: aligned execution: {e}")),
                }
            }
            let Some(&(shadow, n)) = annotations.get(k) else {
                report
                    .mismatches
                    .push(format!("draw {k}: no annotation recorded"));
                return Ok(report);
            };
            if shadow {
                noise = trace.entries[..k].to_vec();
            }
            noise.push((site, eta + n));
        }
        match runner.snapshots(adj, &mut Replay::new(&noise)) {
            Ok((_, last)) => compare(
                &checked.final_env,
                *v,
                &final_orig,
                &last,
                "end",
                &mut report.mismatches,
            ),
            Err(e) => report.mismatches.push(format!("aligned execution: {e}")),
        }
    }
    Ok(report)
}

/// Exact Clopper-Pearson interval for `hits` successes in `n` trials.
pub fn clopper_pearson(hits: u64, n: u64, alpha: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let (k, n) = (hits as f64, n as f64);
    let lo = if hits == 0 {
        0.0
    } else {
        Beta::new(k, n - k + 1.0)
            .expect("valid beta")
            .inverse_cdf(alpha / 2.0)
    };
    let hi = if hits as f64 == n {
        1.0
    } else {
        Beta::new(k + 1.0, n - k)
            .expect("valid beta")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioEstimate {
    pub trials: u64,
    pub hits: [u64; 2],
    /// Confidence intervals for the event probability on each input.
    pub intervals: [(f64, f64); 2],
    /// Bounds on `P1/P2` and `P2/P1` implied by the intervals.
    pub ratio_bounds: [(f64, f64); 2],
    /// `e^eps`.
    pub limit: f64,
    /// Some ratio is above `e^eps` with the requested confidence.
    pub violation: bool,
}

fn ratio_bounds(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let lo = if b.1 > 0.0 { a.0 / b.1 } else { 0.0 };
    let hi = if b.0 > 0.0 { a.1 / b.0 } else { f64::INFINITY };
    (lo, hi)
}

const CHUNKS: u64 = 16;

/// Estimate `P[event | in1] / P[event | in2]` by simulation.
///
/// Trials are split into fixed chunks, each with its own generator stream,
/// so the result does not depend on the number of worker threads. The two
/// intervals each get half of `1 - confidence`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_privacy_ratio(
    p: &Program,
    in1: &BTreeMap<String, Value<f64>>,
    in2: &BTreeMap<String, Value<f64>>,
    event: &(dyn Fn(&Value<f64>) -> bool + Sync),
    trials: u64,
    eps: f64,
    seed: u64,
    confidence: f64,
) -> Result<RatioEstimate, RunError> {
    let runner = SourceRunner::new(p)?;
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(CHUNKS as usize);
    let mut hits = [0u64; 2];
    for (which, inputs) in [in1, in2].into_iter().enumerate() {
        let next = AtomicUsize::new(0);
        let results: Vec<Result<u64, RunError>> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|_| {
                    s.spawn(|| -> Result<u64, RunError> {
                        let mut total = 0;
                        loop {
                            let c = next.fetch_add(1, AtOrd::Relaxed) as u64;
                            if c >= CHUNKS {
                                return Ok(total);
                            }
                            let n = trials / CHUNKS + u64::from(c < trials % CHUNKS);
                            let mut noise = SeededLaplace::with_stream(seed, c * 2 + which as u64);
                            for _ in 0..n {
                                if event(&runner.run(inputs, &mut noise)?.output) {
                                    total += 1;
                                }
                            }
                        }
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for r in results {
            hits[which] += r?;
        }
    }
    let alpha = (1.0 - confidence) / 2.0;
    let intervals = [
        clopper_pearson(hits[0], trials, alpha),
        clopper_pearson(hits[1], trials, alpha),
    ];
    let ratio = [
        ratio_bounds(intervals[0], intervals[1]),
        ratio_bounds(intervals[1], intervals[0]),
    ];
    let limit = eps.exp();
    Ok(RatioEstimate {
        trials,
        hits,
        intervals,
        ratio_bounds: ratio,
        limit,
        violation: ratio.iter().any(|(lo, _)| *lo > limit),
    })
}

/// Convert exact inputs for a floating-point run.
pub fn to_f64_inputs(inputs: &BTreeMap<String, Value<Rational>>) -> BTreeMap<String, Value<f64>> {
    fn conv(v: &Value<Rational>) -> Value<f64> {
        match v {
            Value::Unset => Value::Unset,
            Value::Num(r) => Value::Num(r.to_f64()),
            Value::Bool(b) => Value::Bool(*b),
            Value::List(items) => Value::list(items.iter().map(conv).collect()),
        }
    }
    inputs.iter().map(|(k, v)| (k.clone(), conv(v))).collect()
}

#[cfg(test)]
mod tests;
