use std::fs;
use std::io::IsTerminal;
use std::path::Path;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use anbverify::models::{self, ReproConfig};
use anbverify::parser::{parse, SourceSpec};
use anbverify::strand::{compile, Compiled, EventKind};
use anbverify::verifier::{format_trace, replay_trace, verify, Config, Report, Status};

const EXIT_SAFE: u8 = 0;
const EXIT_ATTACK: u8 = 1;
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(name = "anbverify", version, about = "Bounded Dolev-Yao verifier for AnB protocol models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify the goals of a model
    Verify(VerifyArgs),
    /// Parse and compile a model, reporting diagnostics
    Check {
        /// Path to an .anb file or a builtin model name
        model: String,
        /// Print the compiled role strands
        #[arg(long)]
        strands: bool,
    },
    /// List the bundled models
    Models {
        /// Print the source of one model
        #[arg(long)]
        show: Option<String>,
    },
    /// Run the bundled models against their expected verdicts
    Reproduce {
        /// Depth for single-session runs
        #[arg(long, default_value_t = 20)]
        depth: usize,
        /// Depth for the two-session atp-fixed run
        #[arg(long, default_value_t = 12)]
        two_session_depth: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Per-scenario cap on visited states for single-session rows
        #[arg(long)]
        max_states: Option<u64>,
        /// Per-scenario cap on visited states for the two-session row (0 for none)
        #[arg(long, default_value_t = models::TWO_SESSION_BUDGET)]
        two_session_max_states: u64,
    },
    /// Print the attack trace for one goal
    Trace(VerifyArgs),
}

#[derive(Args)]
struct VerifyArgs {
    /// Path to an .anb file or a builtin model name
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    #[arg(long, default_value_t = 20)]
    depth: usize,
    /// Restrict to these goal ids (repeatable)
    #[arg(long = "goal")]
    goals: Vec<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Include wall time and state totals
    #[arg(long)]
    stats: bool,
    /// Per-scenario cap on visited states
    #[arg(long)]
    max_states: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

struct Style {
    on: bool,
}

impl Style {
    fn detect() -> Self {
        let disabled = std::env::var("ANBVERIFY_COLOR").is_ok_and(|v| v == "0");
        Style { on: !disabled && std::io::stdout().is_terminal() }
    }

    fn paint(&self, text: &str) -> String {
        if !self.on {
            return text.to_string();
        }
        text.replace("ATTACK", "\x1b[1;31mATTACK\x1b[0m")
            .replace("MISMATCH", "\x1b[1;31mMISMATCH\x1b[0m")
            .replace(" safe", " \x1b[32msafe\x1b[0m")
    }
}

fn load_source(model: &str) -> Result<SourceSpec, String> {
    let path = Path::new(model);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| format!("{model}: {e}"))?;
        return Ok(SourceSpec::new(text, model));
    }
    models::builtin(model).map_err(|e| e.to_string())
}

fn load(model: &str) -> Result<Compiled, String> {
    let spec = load_source(model)?;
    let render = |ds: Vec<anbverify::diag::Diagnostic>| {
        ds.iter().map(|d| format!("{}:{d}", spec.origin)).collect::<Vec<_>>().join("\n")
    };
    let p = parse(&spec).map_err(render)?;
    compile(&p).map_err(render)
}

fn config(a: &VerifyArgs) -> Config {
    Config {
        sessions: a.sessions,
        max_depth: a.depth,
        goals: (!a.goals.is_empty()).then(|| a.goals.clone()),
        workers: a.workers,
        max_states: a.max_states,
        ..Config::default()
    }
}

fn run_verify(a: &VerifyArgs, style: &Style) -> Result<u8, String> {
    let c = load(&a.model)?;
    let report = verify(&c, &config(a)).map_err(|e| e.to_string())?;
    match a.format {
        Format::Json => println!("{}", pretty(&report.to_json(a.stats))),
        Format::Text => print!("{}", style.paint(&report.to_text(a.stats))),
    }
    Ok(exit_for(&report))
}

fn exit_for(report: &Report) -> u8 {
    if report.attacks() > 0 {
        EXIT_ATTACK
    } else {
        EXIT_SAFE
    }
}

fn run_trace(a: &VerifyArgs, style: &Style) -> Result<u8, String> {
    if a.goals.len() != 1 {
        return Err("trace needs exactly one --goal".into());
    }
    let c = load(&a.model)?;
    let report = verify(&c, &config(a)).map_err(|e| e.to_string())?;
    let v = &report.verdicts[0];
    let checked = match &v.status {
        Status::Attack(t) => Some(replay_trace(&c, &t.scenario, &t.steps, &v.goal_id, Config::default().compose_depth)),
        _ => None,
    };
    match a.format {
        Format::Json => {
            let mut out = report.to_json(a.stats)["goals"][0].clone();
            out["model"] = json!(report.model);
            if let Some(r) = &checked {
                out["self_check"] = json!(r.is_ok());
            }
            println!("{}", pretty(&out));
        }
        Format::Text => match &v.status {
            Status::Attack(t) => {
                println!("{} {} ({})", report.model, v.goal_id, v.kind);
                print!("{}", style.paint(&format_trace(t)));
                match &checked {
                    Some(Ok(_)) => println!("self-check: trace replays and violates {}", v.goal_id),
                    Some(Err(e)) => println!("self-check FAILED: {e}"),
                    None => {}
                }
            }
            other => println!("{} {}: {} (no trace)", report.model, v.goal_id, other.name()),
        },
    }
    if let Some(Err(e)) = &checked {
        return Err(format!("trace self-check failed: {e}"));
    }
    Ok(exit_for(&report))
}

fn run_check(model: &str, strands: bool) -> Result<u8, String> {
    let c = load(model)?;
    let p = &c.protocol;
    println!(
        "{}: ok ({} roles, {} actions, {} goals)",
        p.name,
        c.strands.len(),
        p.actions.len(),
        p.goals.len()
    );
    if strands {
        for s in &c.strands {
            println!("{}:", s.role);
            for e in &s.events {
                let (dir, arrow) = match e.kind {
                    EventKind::Send => ("send", "->"),
                    EventKind::Receive => ("recv", "<-"),
                };
                let shape = match &e.pattern {
                    Some(pat) => pat.to_string(),
                    None => e.template.to_string(),
                };
                println!("  {dir} {:<7} {arrow} {:<7} {shape}", e.action_label, e.counterpart);
                for f in &e.facts {
                    println!("      {:?} {} on {} peer {:?}", f.kind, f.goal_id, f.payload_template, f.peer);
                }
            }
        }
    }
    Ok(EXIT_SAFE)
}

fn run_models(show: Option<&str>) -> Result<u8, String> {
    if let Some(name) = show {
        let spec = models::builtin(name).map_err(|e| e.to_string())?;
        print!("{}", spec.text);
        return Ok(EXIT_SAFE);
    }
    for m in models::builtins() {
        let goals: Vec<&str> = m.expected.iter().map(|(g, _)| *g).collect();
        println!("{:<12} sessions {}  goals {}", m.name, m.sessions, goals.join(","));
    }
    Ok(EXIT_SAFE)
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let style = Style::detect();
    let result = match &cli.command {
        Command::Verify(a) => run_verify(a, &style),
        Command::Trace(a) => run_trace(a, &style),
        Command::Check { model, strands } => run_check(model, *strands),
        Command::Models { show } => run_models(show.as_deref()),
        Command::Reproduce { depth, two_session_depth, format, workers, max_states, two_session_max_states } => {
            let cfg = ReproConfig {
                depth: *depth,
                two_session_depth: *two_session_depth,
                workers: *workers,
                max_states: *max_states,
                two_session_max_states: (*two_session_max_states > 0).then_some(*two_session_max_states),
            };
            models::reproduce(&cfg).map_err(|e| e.to_string()).map(|r| {
                match format {
                    Format::Json => println!("{}", pretty(&r.to_json())),
                    Format::Text => print!("{}", style.paint(&r.to_text())),
                }
                if r.passed() {
                    EXIT_SAFE
                } else {
                    EXIT_ATTACK
                }
            })
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
