//! `whyfail`: explain why a MiniLang program fails its assertion.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use whyfail::engine::{self, Config};
use whyfail::minilang::{compile, TypedProgram};
use whyfail::testgen::{generate_tests, load_tests, run_suite, save_tests, TestCase};

#[derive(Parser)]
#[command(
    name = "whyfail",
    version,
    about = "Learns a likely invariant explaining an assertion failure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a predicate that separates passing from failing states.
    Explain(Common),
    /// Print suspiciousness scores and candidate observation points.
    Localize(Common),
    /// Run the suite and print the verdict partition.
    Run(Common),
    /// Write randomly generated tests.
    Gen(GenArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct Common {
    /// MiniLang source file.
    #[arg(long, env = "WHYFAIL_PROGRAM")]
    program: PathBuf,
    /// Test file; omitted means generated tests only.
    #[arg(long, env = "WHYFAIL_TESTS")]
    tests: Option<PathBuf>,
    /// Number of random tests added to the given ones.
    #[arg(long, env = "WHYFAIL_M", default_value_t = 0)]
    m: usize,
    /// Minimum suspiciousness for a statement to yield a candidate point.
    #[arg(long = "x-threshold", env = "WHYFAIL_X_THRESHOLD", default_value_t = whyfail::localization::DEFAULT_X_THRESHOLD)]
    x_threshold: f64,
    /// Features kept per point after prioritization.
    #[arg(long, env = "WHYFAIL_N", default_value_t = whyfail::featurization::DEFAULT_N)]
    n: usize,
    /// Largest feature combination tried.
    #[arg(long, env = "WHYFAIL_K", default_value_t = whyfail::featurization::DEFAULT_K)]
    k: usize,
    /// Largest accepted conjunction.
    #[arg(long = "max-clauses", env = "WHYFAIL_MAX_CLAUSES", default_value_t = engine::DEFAULT_MAX_CLAUSES)]
    max_clauses: usize,
    /// Seed for test generation and synthesis subsampling.
    #[arg(long, env = "WHYFAIL_SEED", default_value_t = 0)]
    seed: u64,
    /// Also write the JSON report here.
    #[arg(long, env = "WHYFAIL_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "WHYFAIL_FORMAT", value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct GenArgs {
    /// MiniLang source file.
    #[arg(long, env = "WHYFAIL_PROGRAM")]
    program: PathBuf,
    /// Number of tests.
    #[arg(long, env = "WHYFAIL_M", default_value_t = 10)]
    m: usize,
    #[arg(long, env = "WHYFAIL_SEED", default_value_t = 0)]
    seed: u64,
    /// Destination file; stdout when omitted.
    #[arg(long, env = "WHYFAIL_OUT")]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Config {
        Config {
            m: self.m,
            x_threshold: self.x_threshold,
            n: self.n,
            k: self.k,
            max_clauses: self.max_clauses,
            seed: self.seed,
            ..Config::default()
        }
    }

    fn load(&self) -> Result<(TypedProgram, Vec<TestCase>)> {
        let program = load_program(&self.program)?;
        let tests = match &self.tests {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read tests `{}`", path.display()))?;
                load_tests(&text, &program).with_context(|| format!("in `{}`", path.display()))?
            }
            None => Vec::new(),
        };
        Ok((program, tests))
    }

    /// Prints the report in the chosen format and writes the JSON copy.
    fn emit(&self, value: &serde_json::Value, text: &str) -> Result<()> {
        let pretty = serde_json::to_string_pretty(value)? + "\n";
        if let Some(out) = &self.out {
            fs::write(out, &pretty).with_context(|| format!("cannot write `{}`", out.display()))?;
        }
        match self.format {
            Format::Json => print!("{pretty}"),
            Format::Text => print!("{text}"),
        }
        Ok(())
    }
}

fn load_program(path: &Path) -> Result<TypedProgram> {
    let source = fs::read_to_string(path)
        .with_context(|| format!("cannot read program `{}`", path.display()))?;
    compile(&source).with_context(|| format!("in `{}`", path.display()))
}

fn explain(args: &Common) -> Result<ExitCode> {
    let (program, tests) = args.load()?;
    let result = engine::explain(&program, &tests, &args.config())?;
    args.emit(&serde_json::to_value(&result)?, &result.text())?;
    Ok(if result.explanation.is_some() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn localize(args: &Common) -> Result<ExitCode> {
    let (program, given) = args.load()?;
    let config = args.config();
    let tests = engine::assemble_tests(&program, &given, &config);
    let loc = engine::localize(&program, &tests, &config)?;
    let mut text = format!(
        "tests: {}\n\nline  stmt  ef  ep  score\n",
        loc.suite.summary()
    );
    let mut rows = Vec::new();
    for e in &loc.scores.entries {
        text.push_str(&format!(
            "{:>4}  {:>4}  {:>2}  {:>2}  {:.6}\n",
            e.location.line, e.location.ordinal, e.ef, e.ep, e.score
        ));
        rows.push(json!({
            "line": e.location.line,
            "ordinal": e.location.ordinal,
            "ef": e.ef,
            "ep": e.ep,
            "score": e.score,
        }));
    }
    text.push_str("\ncandidate points:\n");
    for p in &loc.points {
        text.push_str(&format!("  {p}\n"));
    }
    let points: Vec<_> = loc
        .points
        .iter()
        .map(
            |p| json!({"line": p.anchor.line, "ordinal": p.anchor.ordinal, "position": p.position}),
        )
        .collect();
    let value = json!({
        "suite": loc.suite.summary(),
        "scores": rows,
        "points": points,
    });
    args.emit(&value, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn run(args: &Common) -> Result<ExitCode> {
    let (program, given) = args.load()?;
    let tests = engine::assemble_tests(&program, &given, &args.config());
    let suite = run_suite(&program, &tests, &Default::default())?;
    let mut text = String::new();
    let mut verdicts = Vec::new();
    for (t, r) in suite.tests.iter().zip(&suite.runs) {
        text.push_str(&match &r.exception {
            Some(e) => format!("test {}: {:?} ({e})\n", t.id, r.verdict),
            None => format!("test {}: {:?}\n", t.id, r.verdict),
        });
        verdicts.push(json!({"test": t.id, "verdict": r.verdict, "exception": r.exception}));
    }
    text.push_str(&suite.summary());
    text.push('\n');
    let value = json!({
        "summary": suite.summary(),
        "passed": suite.passed,
        "failed": suite.failed,
        "irrelevant": suite.irrelevant,
        "verdicts": verdicts,
    });
    args.emit(&value, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn gen(args: &GenArgs) -> Result<ExitCode> {
    let program = load_program(&args.program)?;
    let text = save_tests(&generate_tests(&program, args.m, args.seed));
    match &args.out {
        Some(out) => {
            fs::write(out, text).with_context(|| format!("cannot write `{}`", out.display()))?
        }
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Explain(a) => explain(a),
        Command::Localize(a) => localize(a),
        Command::Run(a) => run(a),
        Command::Gen(a) => gen(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
