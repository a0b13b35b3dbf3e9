use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use sdp_core::corpus::{self, Expect};
use sdp_core::interp::{run_source, QuantizedLaplace};
use sdp_core::synth::describe_annotations;
use sdp_core::target::verify::GridParseError;
use sdp_core::{
    apply_rewrites, bounded_verify, check_program, content_hash, emit_verifier_source,
    parse_program, parse_rewrite_rules, parse_target_file, print_program, render_target,
    run_transformed_consistency, synthesize_annotations, to_target, Checked, GridConfig,
    HarnessConfig, NoiseTrace, Rational, Solver, SolverConfig, SynthOptions, TargetProgram,
    TOOL_VERSION,
};

mod exit {
    pub const OK: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const TYPE: u8 = 3;
    pub const VERIFY: u8 = 4;
    pub const BUDGET: u8 = 5;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(
    name = "sdp",
    version,
    about = "Check, transform and verify alignment-annotated privacy programs"
)]
struct Cli {
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// External SMT solver command reading SMT-LIB2 on stdin. The
    /// SHADOWDP_SMT_CMD environment variable takes precedence.
    #[arg(long, global = true)]
    smt_cmd: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct GridArgs {
    /// Value of eps used during verification.
    #[arg(long, default_value = "1")]
    eps: String,
    /// `default`, `small`, or overrides such as `sizes=1,2;values=-1..1`.
    #[arg(long, default_value = "default")]
    grid: String,
    /// Give up after this many explored paths.
    #[arg(long)]
    max_paths: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Type check an annotated program.
    Check { path: PathBuf },
    /// Write the instrumented (`--stage instrumented`) or target program.
    Transform {
        path: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Stage::Target)]
        stage: Stage,
        /// File of `abs(e) <= bound` cost rewrites.
        #[arg(long)]
        rewrites: Option<PathBuf>,
    },
    /// Write a C verification harness for the target program.
    Emit {
        path: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// File of `abs(e) <= bound` cost rewrites.
        #[arg(long)]
        rewrites: Option<PathBuf>,
        /// Longest input list the harness accepts.
        #[arg(long, default_value_t = 32)]
        max_len: usize,
    },
    /// Bounded verification of a source or target program.
    Verify {
        path: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        /// File of `abs(e) <= bound` cost rewrites.
        #[arg(long)]
        rewrites: Option<PathBuf>,
        /// Also write the JSON report here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Search for sampling annotations of an unannotated program.
    Synth {
        path: PathBuf,
        #[arg(long, default_value_t = 200)]
        budget: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Accept the first candidate that type checks, without bounded
        /// verification.
        #[arg(long)]
        no_verify: bool,
    },
    /// Run the whole pipeline over every program of a corpus directory.
    CorpusRun {
        #[arg(default_value = "corpus")]
        dir: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        /// Seed for the random consistency runs.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Consistency runs per program.
        #[arg(long, default_value_t = 20)]
        runs: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Instrumented,
    Target,
}

/// A failure that maps to an exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
    location: Option<(u32, u32)>,
    rule: Option<&'static str>,
}

impl Failure {
    fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Failure {
            code,
            kind,
            message: message.into(),
            location: None,
            rule: None,
        }
    }

    fn json(&self) -> Json {
        json!({
            "kind": self.kind,
            "message": self.message,
            "rule": self.rule,
            "line": self.location.map(|l| l.0),
            "col": self.location.map(|l| l.1),
        })
    }
}

struct Input {
    path: PathBuf,
    text: String,
    hash: String,
}

impl Input {
    fn read(path: &Path) -> Result<Input> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let text =
            String::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
        let hash = content_hash(text.as_bytes());
        Ok(Input {
            path: path.to_path_buf(),
            text,
            hash,
        })
    }

    fn envelope(&self) -> Json {
        json!({ "tool_version": TOOL_VERSION, "input": self.path.display().to_string(), "input_sha256": self.hash })
    }
}

fn solver(cli: &Cli) -> Solver {
    let mut cfg = SolverConfig::from_env();
    if cfg.smt_cmd.is_none() {
        cfg.smt_cmd = cli.smt_cmd.clone().filter(|s| !s.trim().is_empty());
    }
    Solver::new(cfg)
}

fn parse_source(input: &Input) -> Result<sdp_core::Program, Failure> {
    parse_program(&input.text).map_err(|e| {
        let full = e.to_string();
        let message = full
            .strip_prefix(&format!("{}: ", e.span))
            .unwrap_or(&full)
            .to_string();
        let mut f = Failure::new(exit::PARSE, "parse", message);
        f.location = Some((e.span.line, e.span.col));
        f
    })
}

fn check(input: &Input, solver: &Solver) -> Result<Checked, Failure> {
    let p = parse_source(input)?;
    check_program(&p, solver).map_err(|e| Failure {
        code: exit::TYPE,
        kind: "type",
        message: e.message.clone(),
        location: Some((e.span.line, e.span.col)),
        rule: Some(e.rule),
    })
}

fn load_rules(
    path: &Option<PathBuf>,
) -> Result<Option<Vec<sdp_core::target::RewriteRule>>, Failure> {
    let Some(path) = path else { return Ok(None) };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(exit::USAGE, "io", format!("{}: {e}", path.display())))?;
    parse_rewrite_rules(&text)
        .map(Some)
        .map_err(|e| Failure::new(exit::PARSE, "parse", format!("{}: {e}", path.display())))
}

/// A target program from either a source file (checked and lowered) or a
/// target file written by `transform`.
fn load_target(
    input: &Input,
    solver: &Solver,
    rewrites: &Option<PathBuf>,
) -> Result<TargetProgram, Failure> {
    let rules = load_rules(rewrites)?;
    if parse_program(&input.text).is_err() {
        if let Ok(tp) = parse_target_file(&input.text) {
            if rules.is_some() {
                return Err(Failure::new(
                    exit::USAGE,
                    "usage",
                    "rewrites apply to source programs only",
                ));
            }
            return Ok(tp);
        }
    }
    let checked = check(input, solver)?;
    let tp = to_target(&checked);
    Ok(match rules {
        Some(rules) => apply_rewrites(&tp, &rules, solver),
        None => tp,
    })
}

fn grid(args: &GridArgs) -> Result<GridConfig, Failure> {
    let bad_grid = |e: GridParseError| Failure::new(exit::USAGE, "usage", format!("--grid: {e}"));
    let mut cfg = GridConfig::parse(&args.grid).map_err(bad_grid)?;
    cfg.eps = parse_eps(&args.eps)?;
    if let Some(m) = args.max_paths {
        cfg.max_paths = m;
    }
    Ok(cfg)
}

fn parse_eps(s: &str) -> Result<Rational, Failure> {
    let bad = || {
        Failure::new(
            exit::USAGE,
            "usage",
            format!("--eps: expected a positive number, got `{s}`"),
        )
    };
    let r = match s.split_once('/') {
        Some((n, d)) => {
            let (n, d): (i64, i64) = (
                n.trim().parse().map_err(|_| bad())?,
                d.trim().parse().map_err(|_| bad())?,
            );
            if d == 0 {
                return Err(bad());
            }
            Rational::new(n, d)
        }
        None => match s.trim().split_once('.') {
            Some((int, frac))
                if !frac.is_empty()
                    && frac.len() <= 9
                    && frac.bytes().all(|b| b.is_ascii_digit()) =>
            {
                let den = 10i64.pow(frac.len() as u32);
                let int: i64 = if int.is_empty() {
                    0
                } else {
                    int.parse().map_err(|_| bad())?
                };
                let frac: i64 = frac.parse().map_err(|_| bad())?;
                Rational::new(int * den + frac, den)
            }
            _ => Rational::from_integer(s.trim().parse().map_err(|_| bad())?),
        },
    };
    if r <= Rational::from_integer(0) {
        return Err(bad());
    }
    Ok(r)
}

fn write_out(out: &Option<PathBuf>, text: &str) -> Result<bool> {
    match out {
        Some(path) => {
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
            Ok(true)
        }
        None => Ok(false),
    }
}

struct Outcome {
    code: u8,
    json: Json,
    text: String,
}

fn failure_outcome(input: &Input, f: Failure) -> Outcome {
    let loc = f
        .location
        .map(|(l, c)| format!(":{l}:{c}"))
        .unwrap_or_default();
    let rule = f.rule.map(|r| format!("{r}: ")).unwrap_or_default();
    let mut json = input.envelope();
    json["status"] = json!("error");
    json["error"] = f.json();
    Outcome {
        code: f.code,
        json,
        text: format!(
            "{}{loc}: {} error: {rule}{}",
            input.path.display(),
            f.kind,
            f.message
        ),
    }
}

fn cmd_check(cli: &Cli, path: &Path) -> Result<Outcome> {
    let input = Input::read(path)?;
    Ok(match check(&input, &solver(cli)) {
        Err(f) => failure_outcome(&input, f),
        Ok(c) => {
            let s = c.summary();
            let mut json = input.envelope();
            json["status"] = json!("ok");
            json["program"] = json!(c.source.name);
            json["shadow_free"] = json!(c.shadow_free);
            json["obligations"] = json!({ "total": s.total, "valid": s.valid, "pc_raised": s.pc_raised, "open": s.open });
            Outcome {
                code: exit::OK,
                json,
                text: format!("{}: ok, {s}", path.display()),
            }
        }
    })
}

fn cmd_transform(
    cli: &Cli,
    path: &Path,
    out: &Option<PathBuf>,
    stage: Stage,
    rewrites: &Option<PathBuf>,
) -> Result<Outcome> {
    let input = Input::read(path)?;
    let solver = solver(cli);
    let result = (|| -> Result<String, Failure> {
        match stage {
            Stage::Instrumented => {
                if rewrites.is_some() {
                    return Err(Failure::new(
                        exit::USAGE,
                        "usage",
                        "rewrites apply to the target stage",
                    ));
                }
                let c = check(&input, &solver)?;
                Ok(print_program(&c.program))
            }
            Stage::Target => {
                parse_source(&input)?;
                Ok(render_target(&load_target(&input, &solver, rewrites)?))
            }
        }
    })();
    Ok(match result {
        Err(f) => failure_outcome(&input, f),
        Ok(text) => artifact(&input, out, text)?,
    })
}

fn artifact(input: &Input, out: &Option<PathBuf>, text: String) -> Result<Outcome> {
    let mut json = input.envelope();
    json["status"] = json!("ok");
    let shown = if write_out(out, &text)? {
        json["output"] = json!(out.as_ref().unwrap().display().to_string());
        format!("wrote {}", out.as_ref().unwrap().display())
    } else {
        json["text"] = json!(text);
        text
    };
    Ok(Outcome {
        code: exit::OK,
        json,
        text: shown,
    })
}

fn cmd_emit(
    cli: &Cli,
    path: &Path,
    out: &Option<PathBuf>,
    rewrites: &Option<PathBuf>,
    max_len: usize,
) -> Result<Outcome> {
    let input = Input::read(path)?;
    let result = load_target(&input, &solver(cli), rewrites).and_then(|tp| {
        let cfg = HarnessConfig {
            max_len,
            ..HarnessConfig::default()
        };
        emit_verifier_source(&tp, "c-harness", &cfg)
            .map_err(|e| Failure::new(exit::USAGE, "emit", e.to_string()))
    });
    Ok(match result {
        Err(f) => failure_outcome(&input, f),
        Ok(text) => artifact(&input, out, text)?,
    })
}

fn cmd_verify(
    cli: &Cli,
    path: &Path,
    args: &GridArgs,
    rewrites: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<Outcome> {
    let input = Input::read(path)?;
    let result = grid(args).and_then(|cfg| {
        let tp = load_target(&input, &solver(cli), rewrites)?;
        bounded_verify(&tp, &cfg).map_err(|e| Failure::new(exit::VERIFY, "verify", e.to_string()))
    });
    let report = match result {
        Err(f) => return Ok(failure_outcome(&input, f)),
        Ok(r) => r,
    };
    let mut json = input.envelope();
    json["status"] = json!(if report.pass() { "pass" } else { "fail" });
    json["report"] = report.to_json();
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&json)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let cost = report
        .max_cost
        .as_ref()
        .map(|(c, _)| sdp_core::printer::format_rational(c))
        .unwrap_or_else(|| "none".into());
    let budget = report
        .budget
        .as_ref()
        .map(sdp_core::printer::format_rational)
        .unwrap_or_else(|| "symbolic".into());
    let mut text = format!(
        "{}: {} ({} inputs, {} paths, max cost {cost} of {budget}{})",
        path.display(),
        if report.pass() { "pass" } else { "FAIL" },
        report.inputs,
        report.paths,
        if report.complete { "" } else { ", incomplete" },
    );
    for f in report.failures.iter().take(5) {
        let at = f.span.map(|s| format!(" at {s}")).unwrap_or_default();
        let inputs: Vec<String> = f
            .witness
            .inputs
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        let havoc: Vec<String> = f
            .witness
            .havoc
            .iter()
            .map(sdp_core::printer::format_rational)
            .collect();
        text.push_str(&format!(
            "\n  {}{at}: inputs {} havoc [{}]",
            f.message,
            inputs.join(" "),
            havoc.join(", ")
        ));
    }
    Ok(Outcome {
        code: if report.pass() {
            exit::OK
        } else {
            exit::VERIFY
        },
        json,
        text,
    })
}

fn cmd_synth(
    cli: &Cli,
    path: &Path,
    budget: usize,
    out: &Option<PathBuf>,
    no_verify: bool,
) -> Result<Outcome> {
    let input = Input::read(path)?;
    let p = match parse_source(&input) {
        Ok(p) => p,
        Err(f) => return Ok(failure_outcome(&input, f)),
    };
    let opts = if no_verify {
        SynthOptions { verify: None }
    } else {
        SynthOptions::default()
    };
    Ok(
        match synthesize_annotations(&p, budget, &solver(cli), &opts) {
            Err(e) => {
                let mut json = input.envelope();
                json["status"] = json!("exhausted");
                json["explored"] = json!(e.explored);
                json["space"] = json!(e.space.to_string());
                Outcome {
                    code: exit::BUDGET,
                    json,
                    text: format!("{}: {e}", path.display()),
                }
            }
            Ok(found) => {
                let text = print_program(&found.program);
                let lines = describe_annotations(&found.program);
                let mut o = artifact(&input, out, text)?;
                o.json["explored"] = json!(found.explored);
                o.json["space"] = json!(found.space.to_string());
                o.json["annotations"] = json!(lines);
                o.text = format!(
                    "found after {} of {} candidates\n{}\n{}",
                    found.explored,
                    found.space,
                    lines.join("\n"),
                    o.text
                );
                o
            }
        },
    )
}

fn random_pairs(c: &Checked, cfg: &GridConfig, runs: usize, seed: u64) -> Result<usize, String> {
    let tp = to_target(c);
    let inputs = sdp_core::target::grid_inputs(&tp, cfg).map_err(|e| e.to_string())?;
    if inputs.is_empty() {
        return Ok(0);
    }
    for k in 0..runs {
        let input = &inputs[(seed as usize).wrapping_add(k.wrapping_mul(7919)) % inputs.len()];
        let run = run_source(
            &c.source,
            input,
            &mut QuantizedLaplace::new(seed.wrapping_add(k as u64), 4),
        )
        .map_err(|e| e.to_string())?;
        let trace = NoiseTrace { entries: run.trace };
        let r = run_transformed_consistency(c, input, &trace).map_err(|e| e.to_string())?;
        if !r.consistent() {
            return Err(format!(
                "inconsistent on run {k}: {}",
                r.mismatches.join("; ")
            ));
        }
    }
    Ok(runs)
}

fn cmd_corpus_run(
    cli: &Cli,
    dir: &Path,
    args: &GridArgs,
    seed: u64,
    runs: usize,
) -> Result<Outcome> {
    let cfg = match grid(args) {
        Ok(c) => c,
        Err(f) => return Err(anyhow!(f.message)),
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "sdp"))
        .collect();
    files.sort();
    let solver = solver(cli);
    let mut rows = Vec::new();
    let mut text = Vec::new();
    let mut all_ok = true;
    for path in &files {
        let input = Input::read(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let expect = corpus::get(stem).map(|e| e.expect).unwrap_or(Expect::Pass);
        let start = std::time::Instant::now();
        let (verdict, detail) = match check(&input, &solver) {
            Err(f) => (
                "reject",
                format!(
                    "{}{}",
                    f.rule.map(|r| format!("{r}: ")).unwrap_or_default(),
                    f.message
                ),
            ),
            Ok(c) => {
                let summary = c.summary().to_string();
                match bounded_verify(&to_target(&c), &cfg) {
                    Err(e) => ("reject", e.to_string()),
                    Ok(r) if !r.pass() => ("reject", format!("{summary}; verification failed")),
                    Ok(r) => {
                        let cost = r
                            .max_cost
                            .map(|(c, _)| sdp_core::printer::format_rational(&c))
                            .unwrap_or_default();
                        match random_pairs(&c, &cfg, runs, seed) {
                            Ok(n) => (
                                "pass",
                                format!("{summary}; max cost {cost}; {n} consistent runs"),
                            ),
                            Err(m) => ("reject", m),
                        }
                    }
                }
            }
        };
        let expected = match expect {
            Expect::Pass => "pass",
            Expect::Reject => "reject",
        };
        let ok = verdict == expected;
        all_ok &= ok;
        let secs = start.elapsed().as_secs_f64();
        text.push(format!(
            "{:<14} {:<6} {} ({secs:.2}s) {detail}",
            stem,
            verdict,
            if ok { "as expected" } else { "UNEXPECTED" }
        ));
        rows.push(json!({
            "file": path.display().to_string(),
            "input_sha256": input.hash,
            "verdict": verdict,
            "expected": expected,
            "detail": detail,
            "seconds": secs,
        }));
    }
    Ok(Outcome {
        code: if all_ok { exit::OK } else { exit::VERIFY },
        json: json!({ "tool_version": TOOL_VERSION, "seed": seed, "programs": rows, "status": if all_ok { "ok" } else { "unexpected" } }),
        text: text.join("\n"),
    })
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Check { path } => cmd_check(cli, path),
        Command::Transform {
            path,
            out,
            stage,
            rewrites,
        } => cmd_transform(cli, path, out, *stage, rewrites),
        Command::Emit {
            path,
            out,
            rewrites,
            max_len,
        } => cmd_emit(cli, path, out, rewrites, *max_len),
        Command::Verify {
            path,
            grid,
            rewrites,
            out,
        } => cmd_verify(cli, path, grid, rewrites, out),
        Command::Synth {
            path,
            budget,
            out,
            no_verify,
        } => cmd_synth(cli, path, *budget, out, *no_verify),
        Command::CorpusRun {
            dir,
            grid,
            seed,
            runs,
        } => cmd_corpus_run(cli, dir, grid, *seed, *runs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(o) => {
            match cli.format {
                Format::Text => {
                    if o.code == exit::OK {
                        println!("{}", o.text);
                    } else {
                        eprintln!("{}", o.text);
                    }
                }
                Format::Json => println!(
                    "{}",
                    serde_json::to_string_pretty(&o.json).expect("serializable report")
                ),
            }
            ExitCode::from(o.code)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::USAGE)
        }
    }
}
