//! JSON configuration consumed by the CLI verbs.
//!
//! `field.components[i][π]` is X^i_π: rows are state indices, columns are
//! time indices.

use std::collections::BTreeMap;

use serde::Deserialize;

use quasilie_core::expr::{parse, Expr};
use quasilie_core::families::AbelCoefficients;
use quasilie_core::fields::{Axis, PolyField, SampleGrid, TimePath, DEFAULT_STEPS_PER_UNIT};
use quasilie_core::flows::GeneralisedFlow;
use quasilie_core::schemes::VectorFieldBasis;
use quasilie_core::superposition::SuperpositionRule;

use crate::error::{PipelineError, Result};

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dimensions: Option<Dimensions>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    pub time_vars: Option<Vec<String>>,
    pub state_vars: Option<Vec<String>>,
    pub field: Option<FieldSpec>,
    pub flow: Option<FlowSpec>,
    pub basis: Option<BasisSpec>,
    pub scheme: Option<SchemeSpec>,
    pub grid: Option<GridSpec>,
    pub path: Option<PathSpec>,
    #[serde(default)]
    pub checks: Vec<String>,
    pub initial: Option<Vec<Vec<f64>>>,
    pub rule: Option<RuleSpec>,
    pub abel: Option<AbelSpec>,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensions {
    pub n: usize,
    pub s: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub components: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowSpec {
    Identity,
    Affine {
        scale: String,
        #[serde(default = "zero")]
        shift: String,
        foot: Option<Vec<f64>>,
    },
    Explicit {
        forward: Vec<String>,
        inverse: Vec<String>,
        foot: Option<Vec<f64>>,
    },
    Generated {
        /// Generator components, laid out like `field.components`.
        components: Vec<Vec<String>>,
        foot: Vec<f64>,
    },
}

fn zero() -> String {
    "0".into()
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    /// `fields[j][i]`: component i of basis field j.
    pub fields: Vec<Vec<String>>,
    pub samples: Samples,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Samples {
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    pub count: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub w_indices: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Bounds for every time axis, then every state axis.
    #[serde(rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    pub resolution: Resolution,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Resolution {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSpec {
    pub points: Vec<Vec<f64>>,
    /// RK4 steps per segment; defaults to 1000 per unit length.
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum RuleSpec {
    /// `riccati`, `bernoulli:<nu>`, `bernoulli-printed` or `shift`.
    Named(String),
    Custom(CustomRule),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomRule {
    pub name: String,
    pub m: usize,
    pub n: usize,
    pub forward: Vec<String>,
    pub inverse: Option<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbelSpec {
    pub a: String,
    #[serde(default = "zero")]
    pub c: String,
    pub f: String,
    pub g: String,
    pub eps: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_interval")]
    pub interval: [f64; 2],
    pub steps: Option<usize>,
}

fn default_x0() -> f64 {
    0.2
}

fn default_interval() -> [f64; 2] {
    [0.0, 1.0]
}

fn expr_at(src: &str, at: &str) -> Result<Expr> {
    parse(src).map_err(|e| PipelineError::Config(format!("{at}: {e}")))
}

impl Config {
    /// Parses JSON text; syntax and schema errors carry line and column.
    pub fn from_json(text: &str) -> Result<Config> {
        serde_json::from_str(text)
            .map_err(|e| PipelineError::Config(format!("line {}, column {}: {e}", e.line(), e.column())))
    }

    pub fn load(path: &std::path::Path) -> Result<(Config, Vec<u8>)> {
        let bytes = std::fs::read(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| PipelineError::Config(format!("{}: not UTF-8: {e}", path.display())))?;
        Ok((Config::from_json(text)?, bytes))
    }

    fn require<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| PipelineError::Config(format!("missing key '{key}'")))
    }

    /// (n, s) from `dimensions` or, failing that, from the field shape.
    pub fn dims(&self) -> Result<(usize, usize)> {
        if let Some(d) = self.dimensions {
            return Ok((d.n, d.s));
        }
        let f = Config::require(&self.field, "field")?;
        Ok((f.components.len(), f.components.first().map_or(0, Vec::len)))
    }

    pub fn time_names(&self) -> Result<Vec<String>> {
        let (_, s) = self.dims()?;
        let names = match &self.time_vars {
            Some(v) => v.clone(),
            None if s == 1 => vec!["t".into()],
            None => (1..=s).map(|k| format!("t{k}")).collect(),
        };
        if names.len() != s {
            return Err(PipelineError::Config(format!("time_vars has {} names, s = {s}", names.len())));
        }
        Ok(names)
    }

    pub fn state_names(&self) -> Result<Vec<String>> {
        let (n, _) = self.dims()?;
        let names = match &self.state_vars {
            Some(v) => v.clone(),
            None if n == 1 => vec!["x".into()],
            None => (1..=n).map(|k| format!("x{k}")).collect(),
        };
        if names.len() != n {
            return Err(PipelineError::Config(format!("state_vars has {} names, n = {n}", names.len())));
        }
        Ok(names)
    }

    fn components(&self, rows: &[Vec<String>], key: &str) -> Result<Vec<Vec<Expr>>> {
        let (n, s) = self.dims()?;
        if rows.len() != n || rows.iter().any(|r| r.len() != s) {
            return Err(PipelineError::Config(format!("{key} must be an {n} x {s} array (state x time)")));
        }
        (0..s)
            .map(|pi| {
                (0..n)
                    .map(|i| expr_at(&rows[i][pi], &format!("{key}[{i}][{pi}]")))
                    .collect()
            })
            .collect()
    }

    pub fn field(&self) -> Result<PolyField> {
        let spec = Config::require(&self.field, "field")?;
        let components = self.components(&spec.components, "field.components")?;
        let (tv, sv) = (self.time_names()?, self.state_names()?);
        let tv: Vec<&str> = tv.iter().map(String::as_str).collect();
        let sv: Vec<&str> = sv.iter().map(String::as_str).collect();
        Ok(PolyField::new(&tv, &sv, components, self.parameters.clone())?)
    }

    pub fn flow(&self) -> Result<GeneralisedFlow> {
        let spec = Config::require(&self.flow, "flow")?;
        let (tv, sv) = (self.time_names()?, self.state_names()?);
        let tv: Vec<&str> = tv.iter().map(String::as_str).collect();
        let sv: Vec<&str> = sv.iter().map(String::as_str).collect();
        let with_foot = |flow: GeneralisedFlow, foot: &Option<Vec<f64>>| match foot {
            Some(f) => flow.with_foot(f.clone()),
            None => flow,
        };
        Ok(match spec {
            FlowSpec::Identity => GeneralisedFlow::identity(&tv, &sv),
            FlowSpec::Affine { scale, shift, foot } => {
                if sv.len() != 1 {
                    return Err(PipelineError::Config("affine flows need n = 1".into()));
                }
                let flow = GeneralisedFlow::affine(
                    &tv,
                    sv[0],
                    expr_at(scale, "flow.scale")?,
                    expr_at(shift, "flow.shift")?,
                    self.parameters.clone(),
                )?;
                with_foot(flow, foot)
            }
            FlowSpec::Explicit { forward, inverse, foot } => {
                let parse_all = |list: &[String], key: &str| -> Result<Vec<Expr>> {
                    list.iter()
                        .enumerate()
                        .map(|(i, s)| expr_at(s, &format!("flow.{key}[{i}]")))
                        .collect()
                };
                let flow = GeneralisedFlow::explicit(
                    &tv,
                    &sv,
                    parse_all(forward, "forward")?,
                    parse_all(inverse, "inverse")?,
                    self.parameters.clone(),
                )?;
                with_foot(flow, foot)
            }
            FlowSpec::Generated { components, foot } => {
                let comps = self.components(components, "flow.components")?;
                let generator = PolyField::new(&tv, &sv, comps, self.parameters.clone())?;
                GeneralisedFlow::generated(generator, foot.clone())?
            }
        })
    }

    pub fn basis(&self) -> Result<VectorFieldBasis> {
        let spec = Config::require(&self.basis, "basis")?;
        let sv = self.state_names()?;
        let sv: Vec<&str> = sv.iter().map(String::as_str).collect();
        let fields = spec
            .fields
            .iter()
            .enumerate()
            .map(|(j, row)| {
                row.iter()
                    .enumerate()
                    .map(|(i, s)| expr_at(s, &format!("basis.fields[{j}][{i}]")))
                    .collect()
            })
            .collect::<Result<Vec<Vec<Expr>>>>()?;
        if spec.samples.bounds.len() != sv.len() {
            return Err(PipelineError::Config("basis.samples.box needs one interval per state variable".into()));
        }
        let lo: Vec<f64> = spec.samples.bounds.iter().map(|b| b[0]).collect();
        let hi: Vec<f64> = spec.samples.bounds.iter().map(|b| b[1]).collect();
        let samples = quasilie_core::families::chebyshev_grid(&lo, &hi, spec.samples.count);
        Ok(VectorFieldBasis::new(&sv, fields, &self.parameters, samples)?)
    }

    pub fn w_indices(&self) -> Result<Vec<usize>> {
        Ok(Config::require(&self.scheme, "scheme")?.w_indices.clone())
    }

    fn axes(&self) -> Result<Vec<Axis>> {
        let spec = Config::require(&self.grid, "grid")?;
        let counts = match &spec.resolution {
            Resolution::Uniform(k) => vec![*k; spec.bounds.len()],
            Resolution::PerAxis(v) => v.clone(),
        };
        if counts.len() != spec.bounds.len() {
            return Err(PipelineError::Config("grid.resolution must match grid.box".into()));
        }
        Ok(spec
            .bounds
            .iter()
            .zip(counts)
            .map(|(b, k)| Axis::new(b[0], b[1], k))
            .collect())
    }

    /// Time axes followed by state axes.
    pub fn sample_grid(&self) -> Result<SampleGrid> {
        let (n, s) = self.dims()?;
        let mut axes = self.axes()?;
        if axes.len() != n + s {
            return Err(PipelineError::Config(format!("grid.box needs s + n = {} intervals", n + s)));
        }
        let state = axes.split_off(s);
        Ok(SampleGrid::new(axes, state))
    }

    /// Tensor grid over the time axes of `grid` (extra state axes ignored).
    pub fn time_samples(&self) -> Result<Vec<Vec<f64>>> {
        let (_, s) = self.dims()?;
        let axes = self.axes()?;
        if axes.len() < s {
            return Err(PipelineError::Config(format!("grid.box needs at least s = {s} intervals")));
        }
        let spec: Vec<(f64, f64, usize)> = axes[..s].iter().map(|a| (a.lo, a.hi, a.count)).collect();
        Ok(quasilie_core::schemes::time_grid(&spec))
    }

    pub fn path(&self, steps_override: Option<usize>) -> Result<TimePath> {
        let spec = Config::require(&self.path, "path")?;
        let points = spec.points.clone();
        Ok(match steps_override.or(spec.steps) {
            Some(k) => TimePath::new(points, k)?,
            None => TimePath::with_density(points, DEFAULT_STEPS_PER_UNIT)?,
        })
    }

    pub fn initial(&self) -> Result<Vec<Vec<f64>>> {
        Ok(Config::require(&self.initial, "initial")?.clone())
    }

    pub fn rule(&self) -> Result<SuperpositionRule> {
        match Config::require(&self.rule, "rule")? {
            RuleSpec::Named(name) => named_rule(name, self.dims()?.0),
            RuleSpec::Custom(c) => {
                let forward = c
                    .forward
                    .iter()
                    .enumerate()
                    .map(|(i, s)| expr_at(s, &format!("rule.forward[{i}]")))
                    .collect::<Result<Vec<_>>>()?;
                let inverse = match &c.inverse {
                    Some(list) => Some(
                        list.iter()
                            .enumerate()
                            .map(|(i, s)| expr_at(s, &format!("rule.inverse[{i}]")))
                            .collect::<Result<Vec<_>>>()?,
                    ),
                    None => None,
                };
                let tv = self.time_names()?;
                let tv: Vec<&str> = tv.iter().map(String::as_str).collect();
                Ok(SuperpositionRule::custom(
                    &c.name,
                    c.m,
                    c.n,
                    &tv,
                    &forward,
                    inverse.as_deref(),
                    &self.parameters,
                )?)
            }
        }
    }

    pub fn abel(&self) -> Result<AbelCoefficients> {
        let spec = Config::require(&self.abel, "abel")?;
        Ok(AbelCoefficients::new(
            expr_at(&spec.a, "abel.a")?,
            expr_at(&spec.c, "abel.c")?,
            expr_at(&spec.f, "abel.f")?,
            expr_at(&spec.g, "abel.g")?,
            spec.eps,
        )
        .with_params(self.parameters.clone()))
    }
}

/// Resolves `riccati`, `bernoulli:<nu>`, `bernoulli-printed` and `shift`.
pub fn named_rule(name: &str, n: usize) -> Result<SuperpositionRule> {
    match name {
        "riccati" => Ok(SuperpositionRule::riccati()),
        "bernoulli-printed" => Ok(SuperpositionRule::bernoulli_printed()),
        "shift" => Ok(SuperpositionRule::shift(n)),
        _ => match name.strip_prefix("bernoulli:") {
            Some(nu) => {
                let nu: f64 = nu
                    .parse()
                    .map_err(|_| PipelineError::Config(format!("bad exponent in rule '{name}'")))?;
                Ok(SuperpositionRule::bernoulli(nu)?)
            }
            None => Err(PipelineError::Config(format!(
                "unknown rule '{name}' (riccati, bernoulli:<nu>, bernoulli-printed, shift)"
            ))),
        },
    }
}
