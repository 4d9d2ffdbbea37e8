//! Proximal-gradient solvers for l1 and l1-l1 sparse coding, and the
//! Lipschitz-constant estimate that sets their step size.

use log::warn;

use crate::error::{Error, Result};
use crate::proximal::{shrink, LesitaBranch};
use crate::tensor::Tensor;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 10_000;
pub const DEFAULT_LAMBDA: f64 = 0.1;
pub const POWER_TOL: f64 = 1e-9;
pub const POWER_MAX_ITERS: usize = 1000;

/// Dense synthesis dictionary (`n_y x n_alpha`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Tensor<f64>,
}

impl Dictionary {
    pub fn new(atoms: Tensor<f64>) -> Result<Self> {
        let (r, c) = atoms.dims2()?;
        if r == 0 || c == 0 {
            return Err(Error::Shape(format!("dictionary must be non-empty, got {r}x{c}")));
        }
        if !atoms.is_finite() {
            return Err(Error::InvalidParameter(
                "dictionary entries must be finite".into(),
            ));
        }
        Ok(Self { atoms })
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::from_vec(&[rows, cols], data)?)
    }

    pub fn identity(n: usize) -> Self {
        Self {
            atoms: Tensor::identity(n),
        }
    }

    pub fn n_y(&self) -> usize {
        self.atoms.shape()[0]
    }

    pub fn n_alpha(&self) -> usize {
        self.atoms.shape()[1]
    }

    pub fn matrix(&self) -> &Tensor<f64> {
        &self.atoms
    }

    pub fn scaled(&self, c: f64) -> Self {
        let data = self.atoms.data().iter().map(|v| v * c).collect();
        Self::from_rows(self.n_y(), self.n_alpha(), data).expect("same shape")
    }

    /// `D v`
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.atoms.matvec(v)
    }

    /// `D^T r`
    pub fn apply_transpose(&self, r: &[f64]) -> Result<Vec<f64>> {
        let (ny, na) = (self.n_y(), self.n_alpha());
        if r.len() != ny {
            return Err(Error::Shape(format!(
                "D^T expects length {ny}, got {}",
                r.len()
            )));
        }
        let d = self.atoms.data();
        let mut out = vec![0.0; na];
        for (i, &ri) in r.iter().enumerate() {
            for (o, &dij) in out.iter_mut().zip(&d[i * na..(i + 1) * na]) {
                *o += dij * ri;
            }
        }
        Ok(out)
    }

    /// Gram matrix `D^T D`.
    pub fn gram(&self) -> Tensor<f64> {
        let dt = self.atoms.transpose().expect("matrix");
        dt.matmul(&self.atoms).expect("conformant")
    }
}

/// Instance of `min 0.5 ||y - D v||^2 + lambda ||v||_1`.
#[derive(Debug, Clone)]
pub struct SparseProblem {
    pub dict: Dictionary,
    pub y: Vec<f64>,
    pub lambda: f64,
}

impl SparseProblem {
    pub fn new(dict: Dictionary, y: Vec<f64>, lambda: f64) -> Result<Self> {
        validate_common(&dict, &y, lambda)?;
        Ok(Self { dict, y, lambda })
    }
}

/// Instance of `min 0.5 ||y - D v||^2 + lambda (||v||_1 + ||v - side||_1)`.
#[derive(Debug, Clone)]
pub struct SideInfoProblem {
    pub dict: Dictionary,
    pub y: Vec<f64>,
    pub lambda: f64,
    pub side: Vec<f64>,
}

impl SideInfoProblem {
    pub fn new(dict: Dictionary, y: Vec<f64>, lambda: f64, side: Vec<f64>) -> Result<Self> {
        validate_common(&dict, &y, lambda)?;
        if side.len() != dict.n_alpha() {
            return Err(Error::Shape(format!(
                "side information has length {}, dictionary has {} atoms",
                side.len(),
                dict.n_alpha()
            )));
        }
        if side.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("side information must be finite".into()));
        }
        Ok(Self {
            dict,
            y,
            lambda,
            side,
        })
    }

    /// The same data without side information.
    pub fn without_side(&self) -> SparseProblem {
        SparseProblem {
            dict: self.dict.clone(),
            y: self.y.clone(),
            lambda: self.lambda,
        }
    }
}

fn validate_common(dict: &Dictionary, y: &[f64], lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be > 0, got {lambda}"
        )));
    }
    if y.len() != dict.n_y() {
        return Err(Error::Shape(format!(
            "measurement has length {}, dictionary has {} rows",
            y.len(),
            dict.n_y()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("measurement must be finite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub solution: Vec<f64>,
    /// Objective after each iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub lipschitz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub value: f64,
    pub converged: bool,
}

/// Largest eigenvalue of `D^T D` by power iteration from the normalized
/// all-ones vector.
pub fn lipschitz(dict: &Dictionary, tol: f64, max_iters: usize) -> Result<LipschitzEstimate> {
    if dict.matrix().data().iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateInput("dictionary is all zeros".into()));
    }
    let n = dict.n_alpha();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let w = dict.apply_transpose(&dict.apply(&v)?)?;
        // Rayleigh quotient of the unit vector v
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // start vector in the null space; fall back to a basis vector sweep
            return lipschitz_restart(dict, tol, max_iters);
        }
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - estimate).abs() <= tol * next.abs() {
            return Ok(LipschitzEstimate {
                value: next.max(norm),
                converged: true,
            });
        }
        estimate = next;
    }
    warn!("power iteration did not converge in {max_iters} iterations");
    Ok(LipschitzEstimate {
        value: estimate,
        converged: false,
    })
}

fn lipschitz_restart(dict: &Dictionary, tol: f64, max_iters: usize) -> Result<LipschitzEstimate> {
    let n = dict.n_alpha();
    let col = (0..n)
        .max_by(|&a, &b| {
            let na: f64 = (0..dict.n_y()).map(|i| dict.matrix().at2(i, a).powi(2)).sum();
            let nb: f64 = (0..dict.n_y()).map(|i| dict.matrix().at2(i, b).powi(2)).sum();
            na.total_cmp(&nb)
        })
        .expect("non-empty");
    let mut v = vec![0.0; n];
    v[col] = 1.0;
    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let w = dict.apply_transpose(&dict.apply(&v)?)?;
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - estimate).abs() <= tol * next.abs() {
            return Ok(LipschitzEstimate {
                value: next.max(norm),
                converged: true,
            });
        }
        estimate = next;
    }
    Ok(LipschitzEstimate {
        value: estimate,
        converged: false,
    })
}

fn default_lipschitz(dict: &Dictionary) -> Result<f64> {
    Ok(lipschitz(dict, POWER_TOL, POWER_MAX_ITERS)?.value)
}

fn residual_sq(dict: &Dictionary, y: &[f64], alpha: &[f64]) -> Result<f64> {
    if alpha.len() != dict.n_alpha() {
        return Err(Error::Shape(format!(
            "code has length {}, dictionary has {} atoms",
            alpha.len(),
            dict.n_alpha()
        )));
    }
    let da = dict.apply(alpha)?;
    Ok(da.iter().zip(y).map(|(a, b)| (b - a).powi(2)).sum())
}

/// `0.5 ||y - D alpha||^2 + lambda ||alpha||_1`
pub fn objective_l1(problem: &SparseProblem, alpha: &[f64]) -> Result<f64> {
    let r = residual_sq(&problem.dict, &problem.y, alpha)?;
    let l1: f64 = alpha.iter().map(|a| a.abs()).sum();
    Ok(0.5 * r + problem.lambda * l1)
}

/// `0.5 ||y - D alpha||^2 + lambda (||alpha||_1 + ||alpha - side||_1)`
pub fn objective_l1l1(problem: &SideInfoProblem, alpha: &[f64]) -> Result<f64> {
    let r = residual_sq(&problem.dict, &problem.y, alpha)?;
    let pen: f64 = alpha
        .iter()
        .zip(&problem.side)
        .map(|(a, s)| a.abs() + (a - s).abs())
        .sum();
    Ok(0.5 * r + problem.lambda * pen)
}

/// Gradient step `alpha - (1/L) D^T (D alpha - y)`.
fn gradient_step(dict: &Dictionary, y: &[f64], alpha: &[f64], inv_l: f64) -> Result<Vec<f64>> {
    let mut r = dict.apply(alpha)?;
    for (ri, yi) in r.iter_mut().zip(y) {
        *ri -= yi;
    }
    let g = dict.apply_transpose(&r)?;
    Ok(alpha.iter().zip(&g).map(|(a, gi)| a - inv_l * gi).collect())
}

/// One ISTA iteration with step `1/L`.
pub fn ista_step(problem: &SparseProblem, alpha: &[f64], lipschitz: f64) -> Result<Vec<f64>> {
    let inv_l = 1.0 / lipschitz;
    let gamma = problem.lambda * inv_l;
    let u = gradient_step(&problem.dict, &problem.y, alpha, inv_l)?;
    Ok(u.into_iter().map(|v| shrink(v, gamma)).collect())
}

/// One iteration of the side-information proximal gradient method.
pub fn l1l1_step(problem: &SideInfoProblem, alpha: &[f64], lipschitz: f64) -> Result<Vec<f64>> {
    let inv_l = 1.0 / lipschitz;
    let mu = problem.lambda * inv_l;
    let u = gradient_step(&problem.dict, &problem.y, alpha, inv_l)?;
    Ok(u.into_iter()
        .zip(&problem.side)
        .map(|(v, &s)| LesitaBranch::select(v, s, mu).value(v, s, mu))
        .collect())
}

/// Runs `step` from `alpha = 0` until the relative objective change and the
/// sup-norm of the iterate change both drop below `tol`, or `max_iters`.
fn run<S, O>(
    n_alpha: usize,
    lipschitz: f64,
    max_iters: usize,
    tol: f64,
    step: S,
    objective: O,
) -> Result<SolverReport>
where
    S: Fn(&[f64]) -> Result<Vec<f64>>,
    O: Fn(&[f64]) -> Result<f64>,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol must be > 0, got {tol}")));
    }
    let mut alpha = vec![0.0; n_alpha];
    let mut prev = objective(&alpha)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters {
        let next = step(&alpha)?;
        let obj = objective(&next)?;
        let moved = next
            .iter()
            .zip(&alpha)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        iterations += 1;
        trace.push(obj);
        alpha = next;
        let rel = (prev - obj).abs() / prev.abs().max(f64::MIN_POSITIVE);
        prev = obj;
        if (rel < tol || obj == 0.0) && moved <= tol {
            break;
        }
    }
    Ok(SolverReport {
        solution: alpha,
        objective_trace: trace,
        iterations,
        lipschitz,
    })
}

/// ISTA from `alpha = 0` for the l1 problem.
pub fn ista_solve(problem: &SparseProblem, max_iters: usize, tol: f64) -> Result<SolverReport> {
    let l = default_lipschitz(&problem.dict)?;
    run(
        problem.dict.n_alpha(),
        l,
        max_iters,
        tol,
        |a| ista_step(problem, a, l),
        |a| objective_l1(problem, a),
    )
}

/// Proximal gradient with the side-information operator, from `alpha = 0`.
pub fn l1l1_solve(problem: &SideInfoProblem, max_iters: usize, tol: f64) -> Result<SolverReport> {
    let l = default_lipschitz(&problem.dict)?;
    run(
        problem.dict.n_alpha(),
        l,
        max_iters,
        tol,
        |a| l1l1_step(problem, a, l),
        |a| objective_l1l1(problem, a),
    )
}

/// `||alpha - step(alpha)||_inf` for the ISTA map.
pub fn ista_fixed_point_residual(problem: &SparseProblem, alpha: &[f64], lipschitz: f64) -> Result<f64> {
    let next = ista_step(problem, alpha, lipschitz)?;
    Ok(sup_diff(alpha, &next))
}

/// `||alpha - step(alpha)||_inf` for the side-information map.
pub fn l1l1_fixed_point_residual(
    problem: &SideInfoProblem,
    alpha: &[f64],
    lipschitz: f64,
) -> Result<f64> {
    let next = l1l1_step(problem, alpha, lipschitz)?;
    Ok(sup_diff(alpha, &next))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
