//! Central finite-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Lower bound on the denominator of the relative error.
    pub floor: f64,
    /// Coordinates checked per input; `0` checks every coordinate.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            epsilon: 1e-3,
            tolerance: 1e-4,
            floor: 1e-3,
            max_coords: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub op: String,
    pub params: Vec<ParamError>,
    pub tolerance: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Check the tape's gradient of a scalar function against central
/// differences. `f` must build the same computation for any input values.
pub fn grad_check<F>(
    op: &str,
    inputs: &[(&str, Tensor)],
    f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<(Graph, Var, Vec<Var>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok((g, out, vars))
    };
    let point: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let (g, out, vars) = eval(&point)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.get_or_zeros(&g, v)).collect();
    let value = |vals: &[Tensor]| -> Result<f64> {
        let (g, out, _) = eval(vals)?;
        Ok(g.scalar(out))
    };
    check_against(op, inputs, value, &analytic, cfg)
}

/// Compare a supplied analytic gradient with central differences of `value`.
pub fn check_against<V>(
    op: &str,
    inputs: &[(&str, Tensor)],
    value: V,
    analytic: &[Vec<f64>],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    V: Fn(&[Tensor]) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut point: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut params = Vec::with_capacity(inputs.len());
    for (k, (name, t)) in inputs.iter().enumerate() {
        let n = t.len();
        let coords: Vec<usize> = if cfg.max_coords == 0 || n <= cfg.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, cfg.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst = 0.0f64;
        for &i in &coords {
            let orig = point[k].data()[i];
            point[k].data_mut()[i] = orig + cfg.epsilon;
            let plus = value(&point)?;
            point[k].data_mut()[i] = orig - cfg.epsilon;
            let minus = value(&point)?;
            point[k].data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "{op}: non-finite value perturbing {name}[{i}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * cfg.epsilon);
            worst = worst.max(relative_error(analytic[k][i], numeric, cfg.floor));
        }
        params.push(ParamError {
            name: name.to_string(),
            max_rel_error: worst,
            checked: coords.len(),
        });
    }
    let pass = params.iter().all(|p| p.max_rel_error <= cfg.tolerance);
    Ok(GradCheckReport {
        op: op.to_string(),
        params,
        tolerance: cfg.tolerance,
        pass,
    })
}
