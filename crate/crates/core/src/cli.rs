//! Command-line driver.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::dataflow::{analyze, Analysis, HoistMode, Options};
use crate::error::{Error, Result};
use crate::frontend::ast::TranslationUnit;
use crate::frontend::parse_source;
use crate::rewriter::{default_output_path, rewrite};
use crate::simulator::{compare, simulate, SimConfig, SimMode, TransferLog};
use crate::source::SourceFile;

#[derive(Parser, Debug)]
#[command(
    name = "dart-omp",
    version,
    about = "Insert OpenMP target data mappings into offloading C code"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rewrite the input with data directives.
    Transform(Common),
    /// Print the planned directives without writing.
    Report(Common),
    /// Replay the input's data movement.
    Simulate(Common),
    /// Compare implicit mappings against the transformed program.
    Compare(Common),
}

#[derive(Args, Debug)]
struct Common {
    input: PathBuf,
    /// Output path for `transform` (default `<input>.ompdart.c`).
    #[arg(short = 'o', long = "output")]
    output: Option<PathBuf>,
    /// Element count or constant binding, e.g. `N=100`.
    #[arg(long = "size", value_name = "NAME=COUNT", value_parser = parse_binding)]
    sizes: Vec<(String, i64)>,
    /// Iterations assumed for loops without known bounds.
    #[arg(long = "trip-default", value_name = "K", default_value_t = 2)]
    trip_default: u64,
    /// How the simulator treats data directives in the input.
    #[arg(long, value_name = "implicit|annotated", value_parser = parse_mode, default_value = "annotated")]
    mode: SimMode,
    /// Leave this variable's device-to-host staleness unresolved.
    #[arg(long = "allow-stale", value_name = "VAR")]
    allow_stale: Vec<String>,
    /// Update placement: checked, innermost or unchecked.
    #[arg(long, value_parser = parse_hoist, default_value = "checked")]
    hoist: HoistMode,
    #[arg(long = "dump-cfg")]
    dump_cfg: bool,
    #[arg(long = "dump-accesses")]
    dump_accesses: bool,
    #[arg(short, long)]
    verbose: bool,
}

fn parse_binding(s: &str) -> std::result::Result<(String, i64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=COUNT, got '{s}'"))?;
    let k = k.trim();
    if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(format!("invalid name '{k}'"));
    }
    let v: i64 = v.trim().parse().map_err(|_| format!("invalid count '{v}'"))?;
    if v < 0 {
        return Err(format!("negative count for '{k}'"));
    }
    Ok((k.to_string(), v))
}

fn parse_mode(s: &str) -> std::result::Result<SimMode, String> {
    SimMode::parse(s).ok_or_else(|| format!("unknown mode '{s}'"))
}

fn parse_hoist(s: &str) -> std::result::Result<HoistMode, String> {
    HoistMode::parse(s).ok_or_else(|| format!("unknown hoist mode '{s}'"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Transform,
    Report,
    Simulate,
    Compare,
}

/// Everything one invocation needs.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub mode: RunMode,
    pub sim: SimConfig,
    pub options: Options,
    pub dump_cfg: bool,
    pub dump_accesses: bool,
    pub verbose: bool,
}

impl From<Cli> for RunConfig {
    fn from(cli: Cli) -> Self {
        let (mode, c) = match cli.command {
            Command::Transform(c) => (RunMode::Transform, c),
            Command::Report(c) => (RunMode::Report, c),
            Command::Simulate(c) => (RunMode::Simulate, c),
            Command::Compare(c) => (RunMode::Compare, c),
        };
        RunConfig {
            input: c.input,
            output: c.output,
            mode,
            sim: SimConfig {
                sizes: c.sizes.into_iter().collect(),
                trip_default: c.trip_default,
                mode: c.mode,
                ..SimConfig::default()
            },
            options: Options {
                hoist: c.hoist,
                allow_stale: c.allow_stale.into_iter().collect(),
            },
            dump_cfg: c.dump_cfg,
            dump_accesses: c.dump_accesses,
            verbose: c.verbose,
        }
    }
}

/// Parse arguments and run; returns the process exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let cfg = RunConfig::from(cli);
    let path = cfg.input.display().to_string();
    match run(&cfg, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.render(&path));
            e.exit_code()
        }
    }
}

fn warn(err: &mut dyn Write, path: &str, ds: &[crate::error::Diagnostic]) {
    for d in ds {
        let _ = writeln!(err, "{}", d.render(path));
    }
}

fn dumps(cfg: &RunConfig, tu: &TranslationUnit, file: &SourceFile, an: &Analysis, out: &mut dyn Write) -> Result<()> {
    if cfg.dump_cfg {
        for c in &an.cfgs {
            out.write_all(c.dump(tu, file).as_bytes())?;
        }
    }
    if cfg.dump_accesses {
        let mut s = String::new();
        for (c, acc) in an.cfgs.iter().zip(&an.accesses) {
            let _ = writeln!(s, "function {}", c.name);
            for m in acc {
                let (l, col) = file.line_col(tu.ast.span(m.ast).start);
                let _ = write!(s, "  {l}:{col} {} {} {} node {}", m.name, m.kind, m.space, m.cfg_node);
                if m.by_value {
                    s += " by-value";
                }
                if m.call.is_some() {
                    s += " call";
                }
                if m.via_offload_callee {
                    s += " offload-callee";
                }
                s.push('\n');
            }
        }
        out.write_all(s.as_bytes())?;
    }
    Ok(())
}

fn print_log(out: &mut dyn Write, title: &str, log: &TransferLog) -> Result<()> {
    writeln!(out, "{title}")?;
    write!(out, "{log}")?;
    Ok(())
}

/// Execute one configured invocation.
pub fn run(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let file = SourceFile::read(&cfg.input)?;
    let path = file.path.clone();
    let tu = parse_source(&file)?;
    match cfg.mode {
        RunMode::Simulate => {
            warn(err, &path, &tu.warnings);
            if cfg.dump_cfg || cfg.dump_accesses {
                let an = analyze(&tu, &file, &cfg.options)?;
                dumps(cfg, &tu, &file, &an, out)?;
            }
            let log = simulate(&tu, &file, &cfg.sim)?;
            print_log(out, &format!("{path} ({} mode)", cfg.sim.mode.name()), &log)
        }
        RunMode::Report | RunMode::Transform => {
            if cfg.mode == RunMode::Transform {
                crate::rewriter::check_precondition(&tu, &file)?;
            }
            let an = analyze(&tu, &file, &cfg.options)?;
            warn(err, &path, &an.warnings);
            dumps(cfg, &tu, &file, &an, out)?;
            if cfg.mode == RunMode::Report {
                out.write_all(an.report(&tu, &file).as_bytes())?;
                return Ok(());
            }
            let emitted = rewrite(&tu, &file, &an)?;
            let dest = cfg.output.clone().unwrap_or_else(|| default_output_path(&cfg.input));
            std::fs::write(&dest, &emitted.text)?;
            out.write_all(an.report(&tu, &file).as_bytes())?;
            writeln!(out, "wrote {}", dest.display())?;
            Ok(())
        }
        RunMode::Compare => {
            let implicit = simulate(
                &tu,
                &file,
                &SimConfig {
                    mode: SimMode::Implicit,
                    ..cfg.sim.clone()
                },
            )?;
            let annotated_cfg = SimConfig {
                mode: SimMode::Annotated,
                ..cfg.sim.clone()
            };
            // Inputs that already carry data directives are compared as written.
            let annotated = match crate::rewriter::check_precondition(&tu, &file) {
                Ok(()) => {
                    let an = analyze(&tu, &file, &cfg.options)?;
                    warn(err, &path, &an.warnings);
                    dumps(cfg, &tu, &file, &an, out)?;
                    let emitted = rewrite(&tu, &file, &an)?;
                    let f2 = SourceFile::new(path.clone(), emitted.text);
                    let tu2 = parse_source(&f2)?;
                    simulate(&tu2, &f2, &annotated_cfg)?
                }
                Err(Error::Precondition(_)) => {
                    warn(err, &path, &tu.warnings);
                    simulate(&tu, &file, &annotated_cfg)?
                }
                Err(e) => return Err(e),
            };
            print_log(out, "implicit", &implicit)?;
            print_log(out, "annotated", &annotated)?;
            write!(out, "{}", compare(&implicit, &annotated))?;
            if cfg.verbose {
                for e in &annotated.events {
                    writeln!(out, "  {} {} {} B line {}", e.dir, e.var, e.bytes, e.line)?;
                }
            }
            Ok(())
        }
    }
}
