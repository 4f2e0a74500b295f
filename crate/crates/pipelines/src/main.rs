use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use quasilie_core::expr::Expr;
use quasilie_core::fields::{integrate_path, zcc_report, PolyField, VectorSystem};
use quasilie_core::flows::{star_action, star_action_closed_form, FlowKind, FlowMap};
use quasilie_core::invariants::{f1, f2, f3, gcc_check, jet_of_family};
use quasilie_core::schemes::{bracket_exprs, membership, verify_scheme};
use quasilie_core::superposition::{verify_rule, VerifyOptions};

use quasilie_pipelines::config::Config;
use quasilie_pipelines::ode::{solve_generalised_abel, AbelSolveOptions};
use quasilie_pipelines::report::{config_hash, sci, Check, Report};
use quasilie_pipelines::scenarios::{self, ScenarioOptions, SCENARIOS};
use quasilie_pipelines::{PipelineError, Result};

#[derive(Parser)]
#[command(name = "quasilie", version, about = "Quasi-Lie schemes for first-order PDE systems")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Tolerance of the primary check.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// RK4 steps (per segment or per unit, depending on the verb).
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Write the main output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of randomised sweeps.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Zero-curvature residuals of `field` on `grid`.
    Zcc,
    /// Symbolic brackets [X_π, X_ν] of the field components at frozen t.
    Bracket,
    /// Transforms `field` by `flow` and checks trajectory transport along `path`.
    Transform,
    /// Decomposes `field` over `basis` on the time samples of `grid`.
    Membership,
    /// Checks the quasi-Lie scheme axioms of (`scheme.w_indices`, `basis`).
    SchemeVerify,
    /// Verifies `rule` for `field` from `initial` along `path`.
    Superpose,
    /// Tabulates F1, F2, F3 of the `abel` family on the time samples of `grid`.
    Invariants,
    /// Runs the generalised Chiellini pipeline on the `abel` family.
    SolveAbel,
    /// Built-in scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Subcommand)]
enum ScenarioAction {
    /// Runs one scenario, or all of them with `all`.
    Run { name: String },
    /// Lists the scenario names.
    List,
}

struct Ctx {
    cli: Cli,
    config: Option<(Config, Vec<u8>)>,
}

impl Ctx {
    fn config(&self) -> Result<&Config> {
        self.config
            .as_ref()
            .map(|(c, _)| c)
            .ok_or_else(|| PipelineError::Usage("this verb needs --config <file>".into()))
    }

    fn report(&self, name: &str) -> Report {
        let mut r = Report::new(name);
        if let Some((_, bytes)) = &self.config {
            r.provenance.config_hash = config_hash(bytes);
        }
        r.provenance.seed = Some(self.cli.seed);
        if let Some(s) = self.cli.steps {
            r.setting("steps", s as f64);
        }
        r
    }

    fn tol(&self, default: f64) -> f64 {
        self.cli.tol.unwrap_or(default)
    }

    fn emit(&self, text: &str) -> Result<()> {
        match &self.cli.out {
            Some(p) => std::fs::write(p, text)?,
            None => match std::io::stdout().write_all(text.as_bytes()) {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                other => other?,
            },
        }
        Ok(())
    }

    fn emit_report(&self, r: &Report) -> Result<()> {
        match self.cli.format {
            Format::Json => self.emit(&r.to_json()),
            Format::Csv => self.emit(&r.to_csv()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let config = match &cli.config {
        Some(p) => Some(Config::load(p)?),
        None => None,
    };
    let ctx = Ctx { cli, config };
    let report = match &ctx.cli.command {
        Command::Zcc => zcc(&ctx)?,
        Command::Bracket => bracket(&ctx)?,
        Command::Transform => transform(&ctx)?,
        Command::Membership => membership_verb(&ctx)?,
        Command::SchemeVerify => scheme_verify(&ctx)?,
        Command::Superpose => superpose(&ctx)?,
        Command::Invariants => return invariants(&ctx),
        Command::SolveAbel => return solve_abel(&ctx),
        Command::Scenario { action } => return scenario(&ctx, action),
    };
    ctx.emit_report(&report)?;
    Ok(report.pass)
}

fn zcc(ctx: &Ctx) -> Result<Report> {
    let cfg = ctx.config()?;
    let field = cfg.field()?;
    let tol = ctx.tol(1e-8);
    let r = zcc_report(&field, &cfg.sample_grid()?, tol)?;
    let mut report = ctx.report("zcc");
    for p in &r.pairs {
        report.check(Check::at_most(&format!("R[{}][{}]", p.pi, p.nu), p.max, tol));
        report.value(&format!("mean[{}][{}]", p.pi, p.nu), p.mean);
    }
    if let Some(w) = r.worst() {
        report.output("worst_t", format!("{:?}", w.worst_t));
        report.output("worst_x", format!("{:?}", w.worst_x));
    }
    Ok(report)
}

fn frozen(field: &PolyField, pi: usize) -> Vec<Expr> {
    (0..field.state_dim()).map(|i| field.bound_component(pi, i)).collect()
}

fn bracket(ctx: &Ctx) -> Result<Report> {
    let field = ctx.config()?.field()?;
    let sv = field.state_vars();
    let mut report = ctx.report("bracket");
    for pi in 0..field.time_dim() {
        for nu in pi + 1..field.time_dim() {
            let b = bracket_exprs(&frozen(&field, pi), &frozen(&field, nu), &sv);
            for (i, e) in b.iter().enumerate() {
                report.output(&format!("[X{pi},X{nu}][{i}]"), e.to_string());
            }
        }
    }
    Ok(report)
}

fn transform(ctx: &Ctx) -> Result<Report> {
    let cfg = ctx.config()?;
    let field = cfg.field()?;
    let flow = cfg.flow()?;
    let tol = ctx.tol(1e-6);
    let mut report = ctx.report("transform");
    let closed = match flow.kind() {
        FlowKind::Generated { .. } => None,
        _ => Some(star_action_closed_form(&flow, &field)?),
    };
    if let Some(t) = &closed {
        for (pi, row) in t.components().iter().enumerate() {
            for (i, e) in row.iter().enumerate() {
                report.output(&format!("components[{i}][{pi}]"), e.to_string());
            }
        }
    }
    if cfg.path.is_some() {
        let path = cfg.path(ctx.cli.steps)?;
        let x0 = cfg.initial()?.into_iter().next().ok_or_else(|| {
            PipelineError::Config("transport check needs one initial point".into())
        })?;
        let original = integrate_path(&field, &path, &x0)?;
        let y0 = flow.apply(path.start(), &x0)?;
        let moved = match &closed {
            Some(t) => integrate_path(t, &path, &y0)?,
            None => integrate_path(&star_action(&flow, &field)?, &path, &y0)?,
        };
        let mut dev = 0.0f64;
        for ((t, x), y) in original.times.iter().zip(&original.states).zip(&moved.states) {
            let hx = flow.apply(t, x)?;
            for (a, b) in hx.iter().zip(y) {
                dev = dev.max((a - b).abs());
            }
        }
        report.check(Check::at_most("transport_deviation", dev, tol));
    }
    Ok(report)
}

fn membership_verb(ctx: &Ctx) -> Result<Report> {
    let cfg = ctx.config()?;
    let tol = ctx.tol(1e-9);
    let m = membership(&cfg.field()?, &cfg.basis()?, &cfg.time_samples()?, tol)?;
    let mut report = ctx.report("membership");
    report.check(Check::at_most("membership_residual", m.worst_residual, tol));
    for (k, row) in m.coefficients.iter().enumerate() {
        for (pi, coeffs) in row.iter().enumerate() {
            for (j, c) in coeffs.iter().enumerate() {
                report.value(&format!("b[{k}][{pi}][{j}]"), *c);
            }
        }
    }
    Ok(report)
}

fn scheme_verify(ctx: &Ctx) -> Result<Report> {
    let cfg = ctx.config()?;
    let tol = ctx.tol(1e-8);
    let r = verify_scheme(&cfg.basis()?, &cfg.w_indices()?, tol)?;
    let mut report = ctx.report("scheme-verify");
    report
        .check(Check::at_most("w_in_v", r.w_in_v, tol))
        .check(Check::at_most("ww_in_w", r.ww_in_w, tol))
        .check(Check::at_most("wv_in_v", r.wv_in_v, tol));
    if let Some((i, j)) = r.worst_wv {
        report.output("worst_wv", format!("[{i}, {j}]"));
    }
    Ok(report)
}

fn superpose(ctx: &Ctx) -> Result<Report> {
    let cfg = ctx.config()?;
    let tol = ctx.tol(1e-6);
    let rule = cfg.rule()?;
    let field = cfg.field()?;
    let r = verify_rule(
        &rule,
        &field,
        &cfg.initial()?,
        &[cfg.path(ctx.cli.steps)?],
        &VerifyOptions { tol, algebra_dim: None },
    )?;
    let mut report = ctx.report("superpose");
    report
        .check(Check::at_most("rule_deviation", r.max_deviation, tol))
        .value("lambda_residual", r.lambda_residual)
        .value("samples", r.samples as f64)
        .output("rule", rule.name().to_string());
    for (k, l) in r.lambda.iter().enumerate() {
        report.value(&format!("lambda[{k}]"), *l);
    }
    for w in r.warnings {
        report.note(w);
    }
    Ok(report)
}

/// CSV table t, F1, F2, F3 on the main output and the JSON verdict on
/// stderr (`--format csv`), or the verdict alone (`--format json`).
fn invariants(ctx: &Ctx) -> Result<bool> {
    let cfg = ctx.config()?;
    let family = cfg.abel()?;
    let times: Vec<f64> = match &cfg.grid {
        Some(_) => cfg.time_samples()?.into_iter().map(|t| t[0]).collect(),
        None => (0..=20).map(|k| k as f64 / 20.0).collect(),
    };
    let tol = ctx.tol(1e-8);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "F1", "F2", "F3"])?;
    for &t in &times {
        let j = jet_of_family(&family, t)?;
        w.write_record([sci(t), sci(f1(&j)?), sci(f2(&j)?), sci(f3(&j)?)])?;
    }
    let table = String::from_utf8(w.into_inner().map_err(|e| PipelineError::Io(e.into_error()))?)
        .expect("CSV is UTF-8");
    let g = gcc_check(&family, &times, tol)?;
    let mut report = ctx.report("invariants");
    report
        .check(Check::at_most("gcc_drift_f1", g.drift_f1, tol))
        .check(Check::at_most("gcc_drift_f2", g.drift_f2, tol))
        .value("k1", g.k1)
        .value("k2", g.k2);
    match ctx.cli.format {
        Format::Csv => {
            ctx.emit(&table)?;
            eprint!("{}", report.to_json());
        }
        Format::Json => ctx.emit(&report.to_json())?,
    }
    Ok(report.pass)
}

/// Trajectory CSV on the main output and the JSON verdict on stderr
/// (`--format csv`), or the verdict alone (`--format json`).
fn solve_abel(ctx: &Ctx) -> Result<bool> {
    let cfg = ctx.config()?;
    let spec = cfg.abel.as_ref().ok_or_else(|| PipelineError::Config("missing key 'abel'".into()))?;
    let family = cfg.abel()?;
    let options = AbelSolveOptions {
        steps: ctx.cli.steps.or(spec.steps).unwrap_or(1000),
        agree_tol: ctx.tol(1e-5),
        ..AbelSolveOptions::default()
    };
    let sol = solve_generalised_abel(&family, spec.x0, spec.interval, &options)?;
    let mut report = sol.report.clone();
    let base = ctx.report("solve-abel");
    report.provenance = base.provenance;
    report.setting("steps", options.steps as f64);
    match ctx.cli.format {
        Format::Csv => {
            ctx.emit(&sol.to_csv())?;
            eprint!("{}", report.to_json());
        }
        Format::Json => ctx.emit(&report.to_json())?,
    }
    Ok(report.pass)
}

fn scenario(ctx: &Ctx, action: &ScenarioAction) -> Result<bool> {
    match action {
        ScenarioAction::List => {
            let mut text = String::new();
            for name in SCENARIOS {
                text.push_str(&format!("{name}\t{}\n", scenarios::describe(name).unwrap_or("")));
            }
            ctx.emit(&text)?;
            Ok(true)
        }
        ScenarioAction::Run { name } => {
            let parameters: BTreeMap<String, f64> = match &ctx.config {
                Some((c, _)) => c.parameters.clone(),
                None => BTreeMap::new(),
            };
            let opts = ScenarioOptions {
                tol: ctx.cli.tol,
                steps: ctx.cli.steps,
                seed: ctx.cli.seed,
                parameters,
            };
            let names: Vec<&str> = if name == "all" { SCENARIOS.to_vec() } else { vec![name.as_str()] };
            let mut reports = Vec::new();
            for n in names {
                reports.push(scenarios::run(n, &opts)?);
            }
            let pass = reports.iter().all(|r| r.pass);
            let text = match ctx.cli.format {
                Format::Json => reports.iter().map(Report::to_json).collect::<String>(),
                Format::Csv => {
                    let mut buf = Vec::new();
                    for (k, r) in reports.iter().enumerate() {
                        r.write_csv(&mut buf, k == 0)?;
                    }
                    String::from_utf8(buf).expect("CSV is UTF-8")
                }
            };
            ctx.emit(&text)?;
            for r in &reports {
                if let Some(t) = r.wall_time {
                    eprintln!("{}: {} in {:.3} s", r.scenario, if r.pass { "pass" } else { "FAIL" }, t.as_secs_f64());
                }
            }
            Ok(pass)
        }
    }
}
