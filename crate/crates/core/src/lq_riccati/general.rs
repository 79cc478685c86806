//! Finite-horizon linear-quadratic control with control-dependent noise.
//!
//! Dynamics `dX = (A X + B u + f) dt + Σ_j D_j u dW_j`, cost
//! `E[½∫(X'QX + u'Ru) dt + ½ X_T' H X_T]`. With `K = R + Σ D_j' P D_j` the
//! value function is `½x'P_t x + x'g_t + c_t` where
//!
//! ```text
//! Ṗ = −PA − A'P − Q + P B K⁻¹ B' P,   P_T = H
//! ġ = −A'g + P B K⁻¹ B' g − P f,      g_T = 0
//! ```
//!
//! and the optimal feedback is `u = −K⁻¹B'(P x + g)`. All three are
//! integrated backwards together with classical RK4.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::ControlError;
use crate::process_sim::Curve;

pub type MatrixFn = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

#[derive(Clone)]
pub struct LqProblem {
    pub horizon: f64,
    pub a: MatrixFn,
    pub b: MatrixFn,
    pub d: Vec<MatrixFn>,
    pub q: MatrixFn,
    pub r: MatrixFn,
    pub h: DMatrix<f64>,
    pub f: VectorFn,
}

impl fmt::Debug for LqProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LqProblem")
            .field("horizon", &self.horizon)
            .field("noise_terms", &self.d.len())
            .field("h", &self.h)
            .finish_non_exhaustive()
    }
}

fn constant_matrix(m: DMatrix<f64>) -> MatrixFn {
    Arc::new(move |_| m.clone())
}

impl LqProblem {
    /// Problem with time-independent coefficients.
    #[allow(clippy::too_many_arguments)]
    pub fn constant(
        horizon: f64,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        d: Vec<DMatrix<f64>>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        h: DMatrix<f64>,
        f: DVector<f64>,
    ) -> Self {
        Self {
            horizon,
            a: constant_matrix(a),
            b: constant_matrix(b),
            d: d.into_iter().map(constant_matrix).collect(),
            q: constant_matrix(q),
            r: constant_matrix(r),
            h,
            f: Arc::new(move |_| f.clone()),
        }
    }

    fn check_dimensions(&self) -> Result<(usize, usize), ControlError> {
        let n = self.h.nrows();
        let a = (self.a)(0.0);
        let b = (self.b)(0.0);
        let m = b.ncols();
        let mut bad = Vec::new();
        if self.h.ncols() != n {
            bad.push(format!("H is {}x{}", n, self.h.ncols()));
        }
        if a.shape() != (n, n) {
            bad.push(format!("A is {:?}, expected ({n}, {n})", a.shape()));
        }
        if b.nrows() != n {
            bad.push(format!("B has {} rows, expected {n}", b.nrows()));
        }
        for (j, d) in self.d.iter().enumerate() {
            if d(0.0).shape() != (n, m) {
                bad.push(format!("D{j} is {:?}, expected ({n}, {m})", d(0.0).shape()));
            }
        }
        if (self.q)(0.0).shape() != (n, n) {
            bad.push("Q has the wrong shape".into());
        }
        if (self.r)(0.0).shape() != (m, m) {
            bad.push("R has the wrong shape".into());
        }
        if (self.f)(0.0).len() != n {
            bad.push("f has the wrong length".into());
        }
        if !bad.is_empty() {
            return Err(ControlError::Dimension(bad.join("; ")));
        }
        if (&self.h - self.h.transpose()).amax() > 1e-12 * (1.0 + self.h.amax()) {
            return Err(ControlError::Dimension("H is not symmetric".into()));
        }
        let min_eig = self.h.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-12 * (1.0 + self.h.amax()) {
            return Err(ControlError::Dimension("H is not positive semidefinite".into()));
        }
        Ok((n, m))
    }
}

/// Backward state `(P, g, c)` of the value function.
#[derive(Clone)]
struct Value {
    p: DMatrix<f64>,
    g: DVector<f64>,
    c: f64,
}

impl Value {
    fn axpy(&self, s: f64, other: &Value) -> Value {
        Value { p: &self.p + &other.p * s, g: &self.g + &other.g * s, c: self.c + other.c * s }
    }
}

/// `K⁻¹ B'` at time `t` for the given `P`, failing if `K` is not
/// positive definite.
fn gain(problem: &LqProblem, t: f64, p: &DMatrix<f64>) -> Result<DMatrix<f64>, ControlError> {
    let b = (problem.b)(t);
    let mut k = (problem.r)(t);
    for d in &problem.d {
        let dj = d(t);
        k += dj.transpose() * p * &dj;
    }
    // symmetrize before factorizing; rounding must not decide definiteness
    let k = (&k + k.transpose()) * 0.5;
    let chol = k.cholesky().ok_or(ControlError::KNotPositiveDefinite(t))?;
    Ok(chol.solve(&b.transpose()))
}

fn derivative(problem: &LqProblem, t: f64, v: &Value) -> Result<Value, ControlError> {
    let a = (problem.a)(t);
    let b = (problem.b)(t);
    let f = (problem.f)(t);
    let kb = gain(problem, t, &v.p)?;
    let pb = &v.p * &b;
    let p_dot = -(&v.p * &a) - a.transpose() * &v.p - (problem.q)(t) + &pb * &kb * &v.p;
    let g_dot = -(a.transpose() * &v.g) + &pb * (&kb * &v.g) - &v.p * &f;
    let bkb_g = &b * (&kb * &v.g);
    let c_dot = -0.5 * (2.0 * f.dot(&v.g) - v.g.dot(&bkb_g));
    Ok(Value { p: p_dot, g: g_dot, c: c_dot })
}

#[derive(Clone, Debug)]
pub struct LqSolution {
    pub times: Vec<f64>,
    pub p: Vec<DMatrix<f64>>,
    pub g: Vec<DVector<f64>>,
    /// `½∫_t^T (2f'g − g'BK⁻¹B'g) ds` at each time.
    pub cost_offset: Vec<f64>,
    problem: LqProblem,
}

impl LqSolution {
    /// Optimal control `u = −K⁻¹B'(P x + g)` at node `k`.
    pub fn feedback(&self, k: usize, x: &DVector<f64>) -> Result<DVector<f64>, ControlError> {
        let kb = gain(&self.problem, self.times[k], &self.p[k])?;
        Ok(-(kb * (&self.p[k] * x + &self.g[k])))
    }

    /// Optimal cost from state `x0` at time 0.
    pub fn optimal_cost(&self, x0: &DVector<f64>) -> f64 {
        self.cost_offset[0] + 0.5 * x0.dot(&(&self.p[0] * x0)) + x0.dot(&self.g[0])
    }

    /// Largest `‖P − P'‖_max` along the solution.
    pub fn max_asymmetry(&self) -> f64 {
        self.p.iter().map(|p| (p - p.transpose()).amax()).fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of the symmetric part of `P` along the solution.
    pub fn min_eigenvalue(&self) -> f64 {
        self.p
            .iter()
            .map(|p| ((p + p.transpose()) * 0.5).symmetric_eigen().eigenvalues.min())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Solves the problem backwards on `times` (which must start at 0 and end
/// at the horizon), with `substeps` RK4 steps per interval.
pub fn general_lq_solve(
    problem: &LqProblem,
    times: &[f64],
    substeps: usize,
) -> Result<LqSolution, ControlError> {
    let (n, _) = problem.check_dimensions()?;
    let last = times.len().wrapping_sub(1);
    if times.len() < 2
        || times[0] != 0.0
        || (times[last] - problem.horizon).abs() > 1e-12 * problem.horizon.max(1.0)
        || times.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(ControlError::BadTimes);
    }
    let substeps = substeps.max(1);
    let mut values = vec![None; times.len()];
    let mut cur = Value { p: problem.h.clone(), g: DVector::zeros(n), c: 0.0 };
    gain(problem, times[last], &cur.p)?;
    values[last] = Some(cur.clone());
    for k in (0..last).rev() {
        let h = (times[k + 1] - times[k]) / substeps as f64;
        for i in (0..substeps).rev() {
            let t1 = times[k] + (i + 1) as f64 * h;
            let t0 = times[k] + i as f64 * h;
            let th = 0.5 * (t0 + t1);
            let k1 = derivative(problem, t1, &cur)?;
            let k2 = derivative(problem, th, &cur.axpy(-0.5 * h, &k1))?;
            let k3 = derivative(problem, th, &cur.axpy(-0.5 * h, &k2))?;
            let k4 = derivative(problem, t0, &cur.axpy(-h, &k3))?;
            let incr = k1.axpy(2.0, &k2).axpy(2.0, &k3).axpy(1.0, &k4);
            cur = cur.axpy(-h / 6.0, &incr);
        }
        gain(problem, times[k], &cur.p)?;
        values[k] = Some(cur.clone());
    }
    let values: Vec<Value> = values.into_iter().map(|v| v.expect("filled")).collect();
    Ok(LqSolution {
        times: times.to_vec(),
        p: values.iter().map(|v| v.p.clone()).collect(),
        g: values.iter().map(|v| v.g.clone()).collect(),
        cost_offset: values.iter().map(|v| v.c).collect(),
        problem: problem.clone(),
    })
}

/// Scalar problem behind the expectation-optimal barriers for Black-Scholes
/// coefficients `(drift, vol)` and multiplier `mu`: the state is the
/// adjoint of the limit error, controlled through the skew.
///
/// `A = 0`, `B = b/3`, `D = σ/3`, `Q = 0`, `R = μ(σ/3)²`, `H = 2μ`, `f = 0`,
/// started from `−1/(2μ)`. Its Riccati coefficient is the closed-form `P`
/// and the optimal cost is `P_0/(8μ²)`.
pub fn expectation_problem(drift: &Curve, vol: &Curve, mu: f64, horizon: f64) -> LqProblem {
    let (b, s, s2) = (drift.clone(), vol.clone(), vol.clone());
    LqProblem {
        horizon,
        a: Arc::new(|_| DMatrix::zeros(1, 1)),
        b: Arc::new(move |t| DMatrix::from_element(1, 1, b.value_at(t) / 3.0)),
        d: vec![Arc::new(move |t| DMatrix::from_element(1, 1, s.value_at(t) / 3.0))],
        q: Arc::new(|_| DMatrix::zeros(1, 1)),
        r: Arc::new(move |t| {
            let v = s2.value_at(t) / 3.0;
            DMatrix::from_element(1, 1, mu * v * v)
        }),
        h: DMatrix::from_element(1, 1, 2.0 * mu),
        f: Arc::new(|_| DVector::zeros(1)),
    }
}
