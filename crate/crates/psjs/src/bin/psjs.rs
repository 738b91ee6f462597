use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use psjs::casestudy::{self, GameVariant};
use psjs::model::{PsjsModel, Rational, Symbol};
use psjs::parse::{parse_model, parse_rational, ParseError};
use psjs::perf::{
    distributions, finiteness, space_probability, tail_expectation, Expectation, Pmf,
    Quantity,
};
use psjs::sim::{estimate, Budgets};
use psjs::solver::{termination_matrix, Method, SolveOptions, TermMatrix};
use psjs::transform::{normalise, serialise};

const SCHEMA: &str = "psjs/1";

#[derive(Parser)]
#[command(name = "psjs", version, about = "Analyser for probabilistic split-join systems")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Exit with code 3 if an iterative computation did not converge.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Kleene,
    Newton,
}

impl MethodArg {
    fn method(self) -> Method {
        match self {
            MethodArg::Kleene => Method::Kleene,
            MethodArg::Newton => Method::Newton,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Time,
    Work,
}

#[derive(Args)]
struct ModelArg {
    /// Model file in the textual pSJS format.
    file: PathBuf,
    /// Start symbol (defaults to the model's `start:` line). Join symbols
    /// are written `<q r>`.
    #[arg(long)]
    from: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a model, reporting its shape.
    Validate { file: PathBuf },
    /// Termination probabilities [sigma -> q] for all symbols and states.
    Term {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_enum, default_value_t = MethodArg::Newton)]
        method: MethodArg,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Probability of using finite space (terminating or bounded runs).
    Space {
        #[command(flatten)]
        model: ModelArg,
    },
    /// Distribution of termination time or total work up to a bound.
    Dist {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Sync state to condition on; omit for the total over all states.
        #[arg(long)]
        to: Option<String>,
        #[arg(long, default_value_t = 100)]
        max_k: usize,
    },
    /// Expected total work, or a lower bound on expected time.
    Expect {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Sync state to condition on (time only); omit for the total.
        #[arg(long)]
        to: Option<String>,
        /// Truncation bound for the time distribution.
        #[arg(long, default_value_t = 2000)]
        max_k: usize,
    },
    /// Finiteness verdict for expected work and time.
    Finite {
        #[command(flatten)]
        model: ModelArg,
    },
    /// Monte Carlo estimation of termination and performance measures.
    Simulate {
        #[command(flatten)]
        model: ModelArg,
        #[arg(long, default_value_t = 10000)]
        runs: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        max_steps: u64,
        #[arg(long, default_value_t = 100_000)]
        max_space: u64,
    },
    /// Serialise the model into a probabilistic pushdown system.
    Serialise { file: PathBuf },
    /// Add a fresh sink state so every terminating run ends in one state.
    Normalise { file: PathBuf },
    /// Generated case-study models and parameter sweeps.
    #[command(subcommand)]
    Casestudy(CaseStudyCmd),
}

#[derive(Subcommand)]
enum CaseStudyCmd {
    /// Parallel divide-and-conquer integration: E W_n and E T_n per
    /// starting oscillation.
    Divcon {
        #[arg(long, default_value_t = 10)]
        n_max: u32,
        /// Probability that a unit of oscillation survives a split.
        #[arg(long, default_value = "0.8")]
        p: String,
        #[arg(long, default_value_t = 3000)]
        max_k: usize,
        /// Write the generated model to this file.
        #[arg(long)]
        write_model: Option<PathBuf>,
    },
    /// Game-tree evaluation: seq, ybw, par over a parameter sweep.
    Gametree {
        /// Variants to analyse (seq is always included as the baseline).
        #[arg(long, value_enum, num_args = 1.., default_values_t = vec![Variant::Seq, Variant::Ybw, Variant::Par])]
        variant: Vec<Variant>,
        /// Sweep start:end:step over the branching probability p.
        #[arg(long, default_value = "0:0.3:0.05")]
        p_sweep: String,
        #[arg(long, default_value_t = 3000)]
        max_k: usize,
        /// Write the generated models to this directory.
        #[arg(long)]
        write_models: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Seq,
    Ybw,
    Par,
}

impl Variant {
    fn game(self) -> GameVariant {
        match self {
            Variant::Seq => GameVariant::Seq,
            Variant::Ybw => GameVariant::Ybw,
            Variant::Par => GameVariant::Par,
        }
    }
}

/// Error carrying the process exit code (1 usage, 2 invalid model,
/// 3 unconverged under --strict).
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }

    fn invalid(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError { code: 2, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    init_thread_pool();

    let mut out = Output { format: cli.format, converged: true };
    match run(&cli.command, &mut out) {
        Ok(()) => {
            if cli.strict && !out.converged {
                eprintln!("error: computation did not converge to tolerance");
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn init_thread_pool() {
    #[cfg(feature = "parallel")]
    if let Ok(n) = std::env::var("PSJS_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
}

struct Output {
    format: Format,
    /// And-accumulation of every convergence flag encountered.
    converged: bool,
}

impl Output {
    /// Emits one document: JSON as-is; table/CSV through the renderers.
    fn emit(&self, doc: &Value, table: String, csv: String) {
        match self.format {
            Format::Json => {
                let mut doc = doc.clone();
                doc["schema"] = json!(SCHEMA);
                println!("{}", serde_json::to_string_pretty(&doc).unwrap());
            }
            Format::Table => print!("{table}"),
            Format::Csv => print!("{csv}"),
        }
    }
}

fn load_model(path: &Path) -> Result<PsjsModel, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    parse_model(&text).map_err(|e| match e {
        ParseError::Syntax { line, col, message } => {
            CliError::invalid(format!("{}:{line}:{col}: {message}", path.display()))
        }
        ParseError::Invalid(diags) => {
            let lines: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
            CliError::invalid(lines.join("\n"))
        }
    })
}

fn parse_symbol(model: &PsjsModel, text: &str) -> Result<Symbol, CliError> {
    let text = text.trim();
    let sym = if let Some(inner) = text.strip_prefix('<').and_then(|t| t.strip_suffix('>')) {
        let parts: Vec<&str> = inner.split_whitespace().collect();
        match parts.as_slice() {
            [a, b] => Symbol::join(*a, *b),
            _ => return Err(CliError::usage(format!("malformed join symbol '{text}'"))),
        }
    } else {
        Symbol::basic(text)
    };
    if model.has_rules(&sym) {
        Ok(sym)
    } else {
        Err(CliError::usage(format!("'{sym}' is not a process symbol of the model")))
    }
}

fn start_symbol(model: &PsjsModel, arg: &ModelArg) -> Result<Symbol, CliError> {
    match (&arg.from, &model.start) {
        (Some(text), _) => parse_symbol(model, text),
        (None, Some(start)) => Ok(start.clone()),
        (None, None) => Err(CliError::usage(
            "model has no start symbol; pass --from",
        )),
    }
}

fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        "inf".into()
    } else {
        format!("{x:.12}")
    }
}

fn run(command: &Command, out: &mut Output) -> Result<(), CliError> {
    match command {
        Command::Validate { file } => validate_cmd(file, out),
        Command::Term { model, method, tol } => term_cmd(model, *method, *tol, out),
        Command::Space { model } => space_cmd(model, out),
        Command::Dist { model, kind, to, max_k } => dist_cmd(model, *kind, to.as_deref(), *max_k, out),
        Command::Expect { model, kind, to, max_k } => expect_cmd(model, *kind, to.as_deref(), *max_k, out),
        Command::Finite { model } => finite_cmd(model, out),
        Command::Simulate { model, runs, seed, max_steps, max_space } => {
            simulate_cmd(model, *runs, *seed, Budgets { max_steps: *max_steps, max_space: *max_space }, out)
        }
        Command::Serialise { file } => serialise_cmd(file, out),
        Command::Normalise { file } => normalise_cmd(file, out),
        Command::Casestudy(cmd) => casestudy_cmd(cmd, out),
    }
}

fn validate_cmd(file: &Path, out: &mut Output) -> Result<(), CliError> {
    let model = load_model(file)?;
    let doc = json!({
        "command": "validate",
        "valid": true,
        "process_symbols": model.process_symbols().len(),
        "sync_states": model.sync_states().len(),
        "rules": model.rules().len(),
        "flags": {
            "branching": model.flags.branching,
            "degree3": model.flags.degree3,
            "normalised": model.flags.normalised,
        },
        "start": model.start.as_ref().map(|s| s.to_string()),
    });
    let table = format!(
        "valid: {} process symbols, {} sync states, {} rules\n",
        model.process_symbols().len(),
        model.sync_states().len(),
        model.rules().len()
    );
    let csv = format!(
        "process_symbols,sync_states,rules\n{},{},{}\n",
        model.process_symbols().len(),
        model.sync_states().len(),
        model.rules().len()
    );
    out.emit(&doc, table, csv);
    Ok(())
}

fn term_doc(term: &TermMatrix) -> Value {
    let mut rows = serde_json::Map::new();
    for sym in term.symbols() {
        let mut row = serde_json::Map::new();
        for q in term.states() {
            row.insert(q.clone(), json!(term.get(sym, q)));
        }
        rows.insert(sym.to_string(), Value::Object(row));
    }
    json!({
        "values": rows,
        "method": format!("{:?}", term.method).to_lowercase(),
        "iterations": term.iterations,
        "converged": term.converged,
        "residual": term.residual,
    })
}

fn term_cmd(arg: &ModelArg, method: MethodArg, tol: f64, out: &mut Output) -> Result<(), CliError> {
    let model = load_model(&arg.file)?;
    let opts = SolveOptions { tol, ..SolveOptions::newton() };
    let term = termination_matrix(&model, method.method(), opts);
    out.converged &= term.converged;

    let symbols: Vec<Symbol> = match &arg.from {
        Some(text) => vec![parse_symbol(&model, text)?],
        None => term.symbols().to_vec(),
    };

    let mut doc = json!({ "command": "term" });
    doc.as_object_mut().unwrap().extend(term_doc(&term).as_object().unwrap().clone());

    let width = symbols.iter().map(|s| s.to_string().len()).max().unwrap_or(5).max(6);
    let mut table = format!("{:width$}", "symbol");
    for q in term.states() {
        table += &format!("  {q:>16}");
    }
    table += "\n";
    let mut csv = String::from("symbol,state,value\n");
    for sym in &symbols {
        table += &format!("{:width$}", sym.to_string());
        for q in term.states() {
            table += &format!("  {:>16.12}", term.get(sym, q));
            csv += &format!("{},{},{}\n", sym, q, fmt_f64(term.get(sym, q)));
        }
        table += "\n";
    }
    table += &format!(
        "method {:?}, {} iterations, converged {}, residual {:.3e}\n",
        term.method, term.iterations, term.converged, term.residual
    );
    out.emit(&doc, table, csv);
    Ok(())
}

fn space_cmd(arg: &ModelArg, out: &mut Output) -> Result<(), CliError> {
    let model = load_model(&arg.file)?;
    let start = start_symbol(&model, arg)?;
    let report = space_probability(&model, &start)?;
    let doc = json!({
        "command": "space",
        "from": start.to_string(),
        "p_finite": report.p_finite,
        "p_terminate": report.p_terminate,
        "p_bounded_nonterm": report.p_bounded_nonterm,
    });
    let table = format!(
        "P(S < inf)          = {:.12}\nP(termination)      = {:.12}\nP(bounded, no term) = {:.12}\n",
        report.p_finite, report.p_terminate, report.p_bounded_nonterm
    );
    let csv = format!(
        "p_finite,p_terminate,p_bounded_nonterm\n{},{},{}\n",
        fmt_f64(report.p_finite),
        fmt_f64(report.p_terminate),
        fmt_f64(report.p_bounded_nonterm)
    );
    out.emit(&doc, table, csv);
    Ok(())
}

/// The PMF for the requested conditioning: a single state, or the sum over
/// all original states.
fn select_pmf(
    table: &psjs::perf::DistTable,
    start: &Symbol,
    to: Option<&str>,
) -> Result<(Pmf, String), CliError> {
    match to {
        Some(q) => Ok((table.pmf(start, q)?, q.to_string())),
        None => {
            let mut mass: Vec<f64> = Vec::new();
            let mut cond = 0.0;
            for q in table.original_states.clone() {
                let Ok(pmf) = table.pmf(start, &q) else { continue };
                if mass.len() < pmf.mass.len() {
                    mass.resize(pmf.mass.len(), 0.0);
                }
                for (k, m) in pmf.mass.iter().enumerate() {
                    mass[k] += m;
                }
                cond += pmf.cond_prob;
            }
            if mass.is_empty() {
                return Err(CliError::invalid(format!(
                    "'{start}' terminates with probability zero"
                )));
            }
            let tail = (cond - mass.iter().sum::<f64>()).max(0.0);
            Ok((Pmf { mass, cond_prob: cond, tail }, "(any)".into()))
        }
    }
}

fn dist_cmd(
    arg: &ModelArg,
    kind: KindArg,
    to: Option<&str>,
    max_k: usize,
    out: &mut Output,
) -> Result<(), CliError> {
    let model = load_model(&arg.file)?;
    let start = start_symbol(&model, arg)?;
    let quantity = match kind {
        KindArg::Time => Quantity::Time,
        KindArg::Work => Quantity::Work,
    };
    let table = distributions(&model, quantity, max_k, (Method::Newton, SolveOptions::newton()));
    let (pmf, state) = select_pmf(&table, &start, to)?;

    let cond: Vec<f64> = pmf
        .mass
        .iter()
        .map(|m| if pmf.cond_prob > 0.0 { m / pmf.cond_prob } else { 0.0 })
        .collect();
    let doc = json!({
        "command": "dist",
        "kind": format!("{quantity:?}").to_lowercase(),
        "from": start.to_string(),
        "to": state,
        "cond_prob": pmf.cond_prob,
        "tail": pmf.tail,
        "normalised_applied": table.normalised_applied,
        "pmf": cond,
    });
    let mut t = format!("P({quantity:?} = k | run from {start} ends in {state}), cond. prob {:.12}\n", pmf.cond_prob);
    let mut csv = String::from("k,pmf,cdf\n");
    let mut cdf = 0.0;
    for (k, m) in cond.iter().enumerate() {
        cdf += m;
        if *m > 1e-15 || k + 1 == cond.len() {
            t += &format!("{k:6}  {m:.12}  cdf {cdf:.12}\n");
        }
        csv += &format!("{k},{m},{cdf}\n");
    }
    t += &format!("tail beyond K={}: {:.3e}\n", pmf.k_max(), pmf.tail / pmf.cond_prob.max(f64::MIN_POSITIVE));
    out.emit(&doc, t, csv);
    Ok(())
}

fn expect_cmd(
    arg: &ModelArg,
    kind: KindArg,
    to: Option<&str>,
    max_k: usize,
    out: &mut Output,
) -> Result<(), CliError> {
    let model = load_model(&arg.file)?;
    let start = start_symbol(&model, arg)?;
    match kind {
        KindArg::Work => {
            let e = psjs::perf::expected_work_psjs(&model, &start)?;
            let (finite, value) = match e {
                Expectation::Finite(w) => (true, Some(w)),
                Expectation::Infinite => (false, None),
            };
            let doc = json!({
                "command": "expect", "kind": "work", "from": start.to_string(),
                "finite": finite, "value": value,
            });
            let text = match e {
                Expectation::Finite(w) => format!("E[Work] = {w:.12}\n"),
                Expectation::Infinite => "E[Work] = inf\n".into(),
            };
            let csv = format!("finite,value\n{},{}\n", finite, value.map_or("inf".into(), fmt_f64));
            out.emit(&doc, text, csv);
        }
        KindArg::Time => {
            let table = distributions(&model, Quantity::Time, max_k, (Method::Newton, SolveOptions::newton()));
            let (pmf, state) = select_pmf(&table, &start, to)?;
            let (lb, converged) = tail_expectation(&pmf, pmf.cond_prob);
            out.converged &= converged;
            let doc = json!({
                "command": "expect", "kind": "time", "from": start.to_string(), "to": state,
                "lower_bound": lb, "converged": converged, "max_k": max_k,
            });
            let text = format!(
                "E[Time | ends in {state}] >= {lb:.12} (K = {max_k}, converged: {converged})\n"
            );
            let csv = format!("lower_bound,converged\n{},{}\n", fmt_f64(lb), converged);
            out.emit(&doc, text, csv);
        }
    }
    Ok(())
}

fn finite_cmd(arg: &ModelArg, out: &mut Output) -> Result<(), CliError> {
    let model = load_model(&arg.file)?;
    let start = start_symbol(&model, arg)?;
    let verdict = finiteness(&model, &start)?;
    let doc = json!({
        "command": "finite",
        "from": start.to_string(),
        "work_finite": verdict.work_finite,
        "time_finite": verdict.time_finite,
    });
    let word = |b: bool| if b { "finite" } else { "infinite" };
    let table = format!(
        "E[Work] is {}; E[Time] is {}\n",
        word(verdict.work_finite),
        word(verdict.time_finite)
    );
    let csv = format!("work_finite,time_finite\n{},{}\n", verdict.work_finite, verdict.time_finite);
    out.emit(&doc, table, csv);
    Ok(())
}

fn simulate_cmd(
    arg: &ModelArg,
    runs: u64,
    seed: u64,
    budgets: Budgets,
    out: &mut Output,
) -> Result<(), CliError> {
    let model = load_model(&arg.file)?;
    let start = start_symbol(&model, arg)?;
    let report = estimate(&model, &start, runs, seed, budgets);

    let mut doc = json!({ "command": "simulate", "from": start.to_string() });
    doc.as_object_mut()
        .unwrap()
        .insert("report".into(), serde_json::to_value(&report).unwrap());

    let mut table = format!("{runs} runs from {start}, seed {seed}\n");
    let mut csv = String::from("state,count,freq,se\n");
    for (q, est) in &report.terminated {
        table += &format!("  -> {q:10} freq {:.6} (se {:.6})\n", est.freq, est.se);
        csv += &format!("{q},{},{},{}\n", est.count, est.freq, est.se);
    }
    if report.frozen > 0 {
        table += &format!("  frozen: {}\n", report.frozen);
    }
    if report.cut_off > 0 {
        table += &format!("  cut off by budget: {}\n", report.cut_off);
    }
    if let Some(c) = &report.conditional {
        table += &format!(
            "  E[T] ~ {:.4} (se {:.4}), E[W] ~ {:.4} (se {:.4}), E[S] ~ {:.4}\n",
            c.mean_time, c.se_time, c.mean_work, c.se_work, c.mean_space
        );
    }
    out.emit(&doc, table, csv);
    Ok(())
}

fn serialise_cmd(file: &Path, out: &mut Output) -> Result<(), CliError> {
    let model = load_model(file)?;
    let (ppds, map) = serialise(&model);
    let doc = json!({
        "command": "serialise",
        "ppds": serde_json::to_value(&ppds).unwrap(),
        "map": serde_json::to_value(&map).unwrap(),
    });
    let mut table = format!(
        "pPDS with {} control states, {} stack symbols, {} rules\n",
        ppds.states.len(),
        ppds.alphabet.len(),
        ppds.rules.len()
    );
    let mut csv = String::from("state,top,next_state,push,prob\n");
    for r in &ppds.rules {
        table += &format!(
            "  {} {} -> {} {} : {}\n",
            r.state,
            r.top,
            r.next_state,
            if r.push.is_empty() { "(pop)".into() } else { r.push.join(" ") },
            r.prob
        );
        csv += &format!("{},{},{},{},{}\n", r.state, r.top, r.next_state, r.push.join(" "), r.prob);
    }
    out.emit(&doc, table, csv);
    Ok(())
}

fn normalise_cmd(file: &Path, out: &mut Output) -> Result<(), CliError> {
    let model = load_model(file)?;
    let normed = normalise(&model);
    let rendered = normed.model.render();
    let doc = json!({
        "command": "normalise",
        "sink": normed.sink,
        "model": rendered,
    });
    let csv = format!("sink\n{}\n", normed.sink);
    out.emit(&doc, rendered.clone(), csv);
    Ok(())
}

fn parse_prob(text: &str) -> Result<Rational, CliError> {
    parse_rational(text.trim())
        .ok_or_else(|| CliError::usage(format!("cannot parse probability '{text}'")))
}

fn parse_sweep(text: &str) -> Result<Vec<Rational>, CliError> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [single] => Ok(vec![parse_prob(single)?]),
        [start, end, step] => {
            let (start, end, step) = (parse_prob(start)?, parse_prob(end)?, parse_prob(step)?);
            if step <= Rational::from_integer(0.into()) {
                return Err(CliError::usage("sweep step must be positive"));
            }
            let mut ps = Vec::new();
            let mut p = start;
            while p <= end {
                ps.push(p.clone());
                p += step.clone();
            }
            Ok(ps)
        }
        _ => Err(CliError::usage("sweep must be 'p' or 'start:end:step'")),
    }
}

fn rat_f64(p: &Rational) -> f64 {
    num::ToPrimitive::to_f64(p).unwrap_or(f64::NAN)
}

fn casestudy_cmd(cmd: &CaseStudyCmd, out: &mut Output) -> Result<(), CliError> {
    match cmd {
        CaseStudyCmd::Divcon { n_max, p, max_k, write_model } => {
            let p = parse_prob(p)?;
            if let Some(path) = write_model {
                std::fs::write(path, casestudy::divcon(*n_max, &p).model.render())
                    .map_err(|e| CliError::usage(format!("cannot write model: {e}")))?;
            }
            let rows = casestudy::divcon_rows(*n_max, &p, *max_k)?;
            for r in &rows {
                out.converged &= r.time_converged;
            }
            let doc = json!({
                "command": "casestudy-divcon",
                "p": rat_f64(&p),
                "rows": serde_json::to_value(&rows).unwrap(),
            });
            let mut table = format!("divcon, p = {}\n{:>3}  {:>14}  {:>14}  {:>10}\n", p, "n", "E[W]", "E[T] (lb)", "W/T");
            let mut csv = String::from("n,EW,ET_lb,ET_converged,ratio\n");
            for r in &rows {
                table += &format!("{:>3}  {:>14.6}  {:>14.6}  {:>10.4}\n", r.n, r.work, r.time_lb, r.ratio);
                csv += &format!("{},{},{},{},{}\n", r.n, fmt_f64(r.work), fmt_f64(r.time_lb), r.time_converged, r.ratio);
            }
            out.emit(&doc, table, csv);
        }
        CaseStudyCmd::Gametree { variant, p_sweep, max_k, write_models } => {
            let ps = parse_sweep(p_sweep)?;
            let mut variants: Vec<GameVariant> = vec![GameVariant::Seq];
            for v in variant {
                if !variants.contains(&v.game()) {
                    variants.push(v.game());
                }
            }
            if let Some(dir) = write_models {
                std::fs::create_dir_all(dir)
                    .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
                for &v in &variants {
                    for p in &ps {
                        let cs = casestudy::game_tree(v, p);
                        let path = dir.join(format!("gametree-{}-p{}.psjs", v.name(), rat_f64(p)));
                        std::fs::write(path, cs.model.render())
                            .map_err(|e| CliError::usage(format!("cannot write model: {e}")))?;
                    }
                }
            }

            let rows = casestudy::game_tree_sweep(&variants, &ps, *max_k)?;
            for r in &rows {
                out.converged &= r.time_converged || !r.work_finite;
            }
            // Baseline times for the percentaged increase column.
            let seq_time: BTreeMap<String, f64> = rows
                .iter()
                .filter(|r| r.variant == "seq")
                .map(|r| (format!("{:.6}", r.p), r.time_lb))
                .collect();

            let doc = json!({
                "command": "casestudy-gametree",
                "rows": serde_json::to_value(&rows).unwrap(),
            });
            let mut table = format!(
                "{:>4}  {:>6}  {:>12}  {:>12}  {:>10}  {:>11}\n",
                "var", "p", "EW", "ET_lb", "converged", "pct_vs_seq"
            );
            let mut csv = String::from("variant,p,EW,ET_lb,ET_converged,pct_vs_seq\n");
            for r in &rows {
                let pct = seq_time
                    .get(&format!("{:.6}", r.p))
                    .map(|seq| 100.0 * (r.time_lb / seq - 1.0));
                let ew = r.work.map_or("inf".to_string(), |w| format!("{w:.6}"));
                let pct_s = pct.map_or(String::new(), |v| format!("{v:.4}"));
                table += &format!(
                    "{:>4}  {:>6.3}  {:>12}  {:>12.6}  {:>10}  {:>11}\n",
                    r.variant, r.p, ew, r.time_lb, r.time_converged, pct_s
                );
                csv += &format!(
                    "{},{},{},{},{},{}\n",
                    r.variant,
                    r.p,
                    r.work.map_or("inf".into(), fmt_f64),
                    fmt_f64(r.time_lb),
                    r.time_converged,
                    pct_s
                );
            }
            out.emit(&doc, table, csv);
        }
    }
    Ok(())
}
