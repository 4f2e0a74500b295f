//! Acceptance criteria 1 to 10. Each criterion prints one pass/fail line.
//! Criteria listed in `KNOWN_FAILURES` are expected to fail; the test
//! asserts that they still do, so a fix shows up as a test failure.

use std::time::{Duration, Instant};

use quasilie_core::expr::{differentiate, evaluate, parse};
use quasilie_core::fields::{integrate_to, PolyField, TimePath};
use quasilie_pipelines::report::Report;
use quasilie_pipelines::scenarios::{run, ScenarioOptions};

/// Criterion 5: F₃ is not annihilated by the displayed fundamental fields.
const KNOWN_FAILURES: &[usize] = &[5];

type Criterion = (usize, &'static str, Box<dyn Fn() -> Outcome>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn scenario(name: &str, seed: u64) -> Report {
    let opts = ScenarioOptions {
        seed,
        ..ScenarioOptions::default()
    };
    run(name, &opts).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn summary(r: &Report) -> String {
    let failed: Vec<String> = r
        .checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} = {:e} (tol {:e})", c.name, c.value, c.tol))
        .collect();
    if failed.is_empty() {
        format!("{}: {} checks pass", r.scenario, r.checks.len())
    } else {
        format!("{}: {}", r.scenario, failed.join("; "))
    }
}

fn timed(name: &str, limit: Duration, seed: u64) -> Outcome {
    let start = Instant::now();
    let r = scenario(name, seed);
    let elapsed = start.elapsed();
    Outcome {
        pass: r.pass && elapsed <= limit,
        detail: format!("{} in {:.2} s (limit {} s)", summary(&r), elapsed.as_secs_f64(), limit.as_secs()),
    }
}

fn combined(names: &[&str]) -> Outcome {
    let reports: Vec<Report> = names.iter().map(|n| scenario(n, 0)).collect();
    Outcome {
        pass: reports.iter().all(|r| r.pass),
        detail: reports.iter().map(summary).collect::<Vec<_>>().join(" | "),
    }
}

/// Error ratio of RK4 on step halving for dx/dt = F(t, x) with a closed form.
fn rk4_ratio(src: &str, x0: f64, t1: f64, exact: f64) -> f64 {
    let f = PolyField::parse(&["t"], &["x"], &[&[src]], &[]).unwrap();
    let err = |steps: usize| {
        let path = TimePath::new(vec![vec![0.0], vec![t1]], steps).unwrap();
        (integrate_to(&f, &path, &[x0]).unwrap()[0] - exact).abs()
    };
    err(20) / err(40)
}

fn numerics() -> Outcome {
    let ratios = [
        rk4_ratio("x", 1.0, 1.0, std::f64::consts::E),
        rk4_ratio("-2*t*x^2", 1.0, 2.0, 0.2),
    ];
    let corpus = [
        "sin(t)*exp(-t^2)",
        "sech(0.3*(t - 1))^2",
        "atan(exp(1.3*t))",
        "tanh(t)^3 - t",
        "(3 + 2*0.5*t)^(-0.5)",
        "cos(t)^2*ln(2 + t)",
        "sqrt(1 + t^2)/(2 + sin(t))",
        "t^3 - 6*t*exp(t/2)",
    ];
    let mut worst = 0.0f64;
    for src in corpus {
        let e = parse(src).unwrap();
        let d = differentiate(&e, "t");
        for k in 0..=20 {
            let t = -1.0 + 0.1 * k as f64;
            let h = 1e-5;
            let fd = (evaluate(&e, &[("t", t + h)]).unwrap() - evaluate(&e, &[("t", t - h)]).unwrap()) / (2.0 * h);
            let sym = evaluate(&d, &[("t", t)]).unwrap();
            worst = worst.max((fd - sym).abs() / (1.0 + sym.abs()));
        }
    }
    let ratios_ok = ratios.iter().all(|r| (12.0..=20.0).contains(r));
    Outcome {
        pass: ratios_ok && worst <= 1e-6,
        detail: format!(
            "RK4 halving ratios {:.2}, {:.2}; symbolic vs FD derivative {worst:e}",
            ratios[0], ratios[1]
        ),
    }
}

fn determinism() -> Outcome {
    let names = ["invariants", "riccati-superposition", "schemes", "sine-gordon"];
    let mut same = true;
    for name in names {
        let a = scenario(name, 7).to_json();
        let b = scenario(name, 7).to_json();
        same &= a == b;
    }
    Outcome {
        pass: same,
        detail: format!("byte-identical reruns of {}", names.join(", ")),
    }
}

#[test]
fn acceptance() {
    let criteria: Vec<Criterion> = vec![
        (1, "sine-Gordon ZCC identity", Box::new(|| timed("sine-gordon", Duration::from_secs(5), 0))),
        (2, "Bäcklund/KdV", Box::new(|| timed("bt-kdv", Duration::from_secs(60), 0))),
        (3, "Riccati superposition", Box::new(|| combined(&["riccati-superposition"]))),
        (4, "generalised Chiellini pipeline", Box::new(|| timed("gcc-abel", Duration::from_secs(2), 0))),
        (5, "invariant suite", Box::new(|| timed("invariants", Duration::from_secs(5), 0))),
        (6, "scheme axioms", Box::new(|| combined(&["schemes"]))),
        (7, "Abel PDE round trip", Box::new(|| combined(&["abel-pde"]))),
        (8, "Liouville and WZNW", Box::new(|| combined(&["liouville", "wznw-abelian"]))),
        (9, "numerics hygiene", Box::new(numerics)),
        (10, "determinism", Box::new(determinism)),
    ];
    let mut unexpected = Vec::new();
    for (n, title, check) in criteria {
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} [{title}]: {verdict}: {}", o.detail);
        if o.pass == KNOWN_FAILURES.contains(&n) {
            unexpected.push(n);
        }
    }
    assert!(unexpected.is_empty(), "criteria with unexpected outcome: {unexpected:?}");
}
