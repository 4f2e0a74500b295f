use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{dim_error, FieldError, VectorSystem};
use crate::expr::{differentiate, parse, Expr, Program};

const INLINE_SLOTS: usize = 16;

/// Expression-backed polyvector field with exact derivatives.
///
/// Components are stored as `components[π][i]` = X^i_π.
#[derive(Clone, Debug)]
pub struct PolyField {
    time_vars: Vec<String>,
    state_vars: Vec<String>,
    params: BTreeMap<String, f64>,
    label: Option<String>,
    components: Vec<Vec<Expr>>,
    values: Vec<Vec<Program>>,
    d_state: Vec<Vec<Vec<Program>>>,
    d_time: Vec<Vec<Vec<Program>>>,
}

impl PolyField {
    /// Builds a field from `components[π][i]`.
    pub fn new(
        time_vars: &[&str],
        state_vars: &[&str],
        components: Vec<Vec<Expr>>,
        params: BTreeMap<String, f64>,
    ) -> Result<PolyField, FieldError> {
        let s = time_vars.len();
        let n = state_vars.len();
        if s == 0 {
            return Err(FieldError::Dimension("at least one time variable is required".into()));
        }
        if n == 0 {
            return Err(FieldError::Dimension("at least one state variable is required".into()));
        }
        let mut names: Vec<&str> = time_vars.iter().chain(state_vars).copied().collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(FieldError::Dimension("time and state variable names must be distinct".into()));
        }
        if components.len() != s {
            return Err(dim_error("number of time components", s, components.len()));
        }
        for row in &components {
            if row.len() != n {
                return Err(dim_error("number of state components", n, row.len()));
            }
            for e in row {
                for v in e.free_vars() {
                    let known = time_vars.contains(&v.as_str())
                        || state_vars.contains(&v.as_str())
                        || params.contains_key(&v);
                    if !known {
                        return Err(FieldError::UnboundSymbol(v));
                    }
                }
            }
        }

        let slots: Vec<&str> = time_vars.iter().chain(state_vars).copied().collect();
        let compile = |pi: usize, i: usize, e: &Expr| {
            Program::compile(e, &slots).map_err(|source| FieldError::Eval {
                pi,
                component: i,
                source,
            })
        };
        let mut values = Vec::with_capacity(s);
        let mut d_state = Vec::with_capacity(s);
        let mut d_time = Vec::with_capacity(s);
        for (pi, row) in components.iter().enumerate() {
            let mut v_row = Vec::with_capacity(n);
            let mut ds_row = Vec::with_capacity(n);
            let mut dt_row = Vec::with_capacity(n);
            for (i, e) in row.iter().enumerate() {
                let bound = e.bind(&params);
                v_row.push(compile(pi, i, &bound)?);
                let mut ds = Vec::with_capacity(n);
                for x in state_vars {
                    ds.push(compile(pi, i, &differentiate(&bound, x))?);
                }
                let mut dt = Vec::with_capacity(s);
                for tv in time_vars {
                    dt.push(compile(pi, i, &differentiate(&bound, tv))?);
                }
                ds_row.push(ds);
                dt_row.push(dt);
            }
            values.push(v_row);
            d_state.push(ds_row);
            d_time.push(dt_row);
        }

        Ok(PolyField {
            time_vars: time_vars.iter().map(|s| String::from(*s)).collect(),
            state_vars: state_vars.iter().map(|s| String::from(*s)).collect(),
            params,
            label: None,
            components,
            values,
            d_state,
            d_time,
        })
    }

    /// Parses `components[π][i]` from source text.
    pub fn parse(
        time_vars: &[&str],
        state_vars: &[&str],
        components: &[&[&str]],
        params: &[(&str, f64)],
    ) -> Result<PolyField, FieldError> {
        let mut exprs = Vec::with_capacity(components.len());
        for (pi, row) in components.iter().enumerate() {
            let mut parsed = Vec::with_capacity(row.len());
            for (i, src) in row.iter().enumerate() {
                parsed.push(parse(src).map_err(|source| FieldError::Parse {
                    pi,
                    component: i,
                    source,
                })?);
            }
            exprs.push(parsed);
        }
        let params = params.iter().map(|(k, v)| (String::from(*k), *v)).collect();
        PolyField::new(time_vars, state_vars, exprs, params)
    }

    /// Autonomous field on ℝⁿ (s = 1, time variable `_t`).
    pub fn autonomous(
        state_vars: &[&str],
        components: Vec<Expr>,
        params: BTreeMap<String, f64>,
    ) -> Result<PolyField, FieldError> {
        PolyField::new(&["_t"], state_vars, alloc::vec![components], params)
    }

    pub fn with_label(mut self, label: &str) -> Self {
        self.label = Some(String::from(label));
        self
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn time_vars(&self) -> Vec<&str> {
        self.time_vars.iter().map(String::as_str).collect()
    }

    pub fn state_vars(&self) -> Vec<&str> {
        self.state_vars.iter().map(String::as_str).collect()
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    /// Components as given, `components()[π][i]`.
    pub fn components(&self) -> &[Vec<Expr>] {
        &self.components
    }

    /// X^i_π with parameters substituted.
    pub fn bound_component(&self, pi: usize, i: usize) -> Expr {
        self.components[pi][i].bind(&self.params)
    }

    /// True when no component depends on any time variable.
    pub fn is_autonomous(&self) -> bool {
        self.components.iter().flatten().all(|e| {
            let bound = e.bind(&self.params);
            self.time_vars.iter().all(|t| !bound.depends_on(t))
        })
    }

    fn check(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<(), FieldError> {
        if pi >= self.time_vars.len() {
            return Err(dim_error("time index bound", self.time_vars.len(), pi + 1));
        }
        if t.len() != self.time_vars.len() {
            return Err(dim_error("time point", self.time_vars.len(), t.len()));
        }
        if x.len() != self.state_vars.len() {
            return Err(dim_error("state point", self.state_vars.len(), x.len()));
        }
        Ok(())
    }

    fn with_slots<R>(&self, t: &[f64], x: &[f64], f: impl FnOnce(&[f64]) -> R) -> R {
        let len = t.len() + x.len();
        if len <= INLINE_SLOTS {
            let mut buf = [0.0f64; INLINE_SLOTS];
            buf[..t.len()].copy_from_slice(t);
            buf[t.len()..len].copy_from_slice(x);
            f(&buf[..len])
        } else {
            let mut buf = Vec::with_capacity(len);
            buf.extend_from_slice(t);
            buf.extend_from_slice(x);
            f(&buf)
        }
    }
}

impl VectorSystem for PolyField {
    fn state_dim(&self) -> usize {
        self.state_vars.len()
    }

    fn time_dim(&self) -> usize {
        self.time_vars.len()
    }

    fn eval_into(&self, pi: usize, t: &[f64], x: &[f64], out: &mut [f64]) -> Result<(), FieldError> {
        self.check(pi, t, x)?;
        self.with_slots(t, x, |vals| {
            for (i, p) in self.values[pi].iter().enumerate() {
                out[i] = p.eval(vals).map_err(|source| FieldError::Eval {
                    pi,
                    component: i,
                    source,
                })?;
            }
            Ok(())
        })
    }

    fn jacobian_x(&self, pi: usize, t: &[f64], x: &[f64]) -> Result<DMatrix<f64>, FieldError> {
        self.check(pi, t, x)?;
        let n = self.state_dim();
        self.with_slots(t, x, |vals| {
            let mut jac = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    jac[(i, j)] = self.d_state[pi][i][j].eval(vals).map_err(|source| {
                        FieldError::Eval {
                            pi,
                            component: i,
                            source,
                        }
                    })?;
                }
            }
            Ok(jac)
        })
    }

    fn time_derivative(
        &self,
        pi: usize,
        wrt: usize,
        t: &[f64],
        x: &[f64],
    ) -> Result<Vec<f64>, FieldError> {
        self.check(pi, t, x)?;
        if wrt >= self.time_dim() {
            return Err(dim_error("time index bound", self.time_dim(), wrt + 1));
        }
        self.with_slots(t, x, |vals| {
            self.d_time[pi]
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    row[wrt].eval(vals).map_err(|source| FieldError::Eval {
                        pi,
                        component: i,
                        source,
                    })
                })
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::jacobian_fd;
    use alloc::vec;

    #[test]
    fn eval_square() {
        let f = PolyField::parse(&["t"], &["x1"], &[&["x1^2"]], &[]).unwrap();
        assert_eq!(f.eval(0, &[0.4], &[3.0]).unwrap(), vec![9.0]);
    }

    #[test]
    fn riccati_pde_with_unit_constant_term() {
        let f = PolyField::parse(
            &["t1", "t2"],
            &["u"],
            &[&["b1 + b2*u + b3*u^2"], &["0"]],
            &[("b1", 1.0), ("b2", 0.0), ("b3", 0.0)],
        )
        .unwrap();
        assert_eq!(f.eval(0, &[0.3, -1.0], &[5.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn rotation_jacobian() {
        let f = PolyField::parse(&["t"], &["x1", "x2"], &[&["x2", "-x1"]], &[]).unwrap();
        let j = f.jacobian_x(0, &[0.0], &[0.3, 0.8]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        let f = PolyField::parse(&["t"], &["x"], &[&["x^2"]], &[]).unwrap();
        assert_eq!(f.jacobian_x(0, &[0.0], &[3.0]).unwrap()[(0, 0)], 6.0);
    }

    #[test]
    fn analytic_jacobian_matches_finite_difference() {
        let f = PolyField::parse(&["t"], &["x"], &[&["x^eps"]], &[("eps", 2.5)]).unwrap();
        let exact = f.jacobian_x(0, &[0.0], &[1.3]).unwrap()[(0, 0)];
        let fd = jacobian_fd(&f, 0, &[0.0], &[1.3]).unwrap()[(0, 0)];
        assert!((exact - fd).abs() < 1e-7);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(
            PolyField::parse(&["t"], &["x"], &[&["x + q"]], &[]),
            Err(FieldError::UnboundSymbol(ref s)) if s == "q"
        ));
        assert!(matches!(
            PolyField::parse(&["t"], &["x"], &[&["x", "x"]], &[]),
            Err(FieldError::Dimension(_))
        ));
        assert!(matches!(
            PolyField::parse(&["t"], &["x"], &[&["2*)x"]], &[]),
            Err(FieldError::Parse { source, .. }) if source.offset == 2
        ));
        assert!(matches!(
            PolyField::parse(&["x"], &["x"], &[&["x"]], &[]),
            Err(FieldError::Dimension(_))
        ));
    }

    #[test]
    fn domain_error_carries_component() {
        let f = PolyField::parse(&["t"], &["x", "y"], &[&["x", "ln(y)"]], &[]).unwrap();
        assert!(matches!(
            f.eval(0, &[0.0], &[1.0, -1.0]),
            Err(FieldError::Eval { component: 1, .. })
        ));
    }

    #[test]
    fn time_derivative_is_exact() {
        let f = PolyField::parse(&["t1", "t2"], &["x"], &[&["sin(t1)*t2*x"], &["0"]], &[]).unwrap();
        let d = f.time_derivative(0, 0, &[0.5, 2.0], &[3.0]).unwrap()[0];
        assert_eq!(d, libm::cos(0.5) * 2.0 * 3.0);
        assert!(!f.is_autonomous());
    }
}
