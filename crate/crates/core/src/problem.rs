//! Problem data for the three supported classes: nonlinear programs,
//! Mayer problems with endpoint constraints, and control-constrained
//! optimal control problems on [0, 1].

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{FieldEval, ScalarField};

/// Vector-valued function given componentwise by scalar fields over a
/// shared argument space; used for dynamics f(x, u) and constraints G(u).
#[derive(Debug, Clone)]
pub struct VectorField {
    pub components: Vec<ScalarField>,
    pub arg_dim: usize,
}

impl VectorField {
    pub fn new(arg_dim: usize, components: Vec<ScalarField>) -> Result<Self> {
        for c in &components {
            if c.dim() != arg_dim {
                return Err(Error::DimensionMismatch { expected: arg_dim, got: c.dim() });
            }
        }
        Ok(VectorField { components, arg_dim })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn value(&self, arg: &DVector<f64>) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.len());
        for (i, c) in self.components.iter().enumerate() {
            v[i] = c.value(arg)?;
        }
        Ok(v)
    }

    /// Jacobian: rows are component gradients.
    pub fn jacobian(&self, arg: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.len(), self.arg_dim);
        for (i, c) in self.components.iter().enumerate() {
            let g = c.eval(arg)?.gradient;
            j.row_mut(i).copy_from(&g.transpose());
        }
        Ok(j)
    }

    pub fn evals(&self, arg: &DVector<f64>) -> Result<Vec<FieldEval>> {
        self.components.iter().map(|c| c.eval(arg)).collect()
    }
}

/// min phi(x) s.t. f(x) <= 0, g(x) = 0.
#[derive(Debug, Clone)]
pub struct NlpProblem {
    pub n: usize,
    pub objective: ScalarField,
    pub inequalities: Vec<ScalarField>,
    pub equalities: Vec<ScalarField>,
}

impl NlpProblem {
    pub fn new(
        n: usize,
        objective: ScalarField,
        inequalities: Vec<ScalarField>,
        equalities: Vec<ScalarField>,
    ) -> Result<Self> {
        for f in std::iter::once(&objective)
            .chain(inequalities.iter())
            .chain(equalities.iter())
        {
            if f.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, got: f.dim() });
            }
        }
        Ok(NlpProblem { n, objective, inequalities, equalities })
    }

    pub fn num_ineq(&self) -> usize {
        self.inequalities.len()
    }

    pub fn num_eq(&self) -> usize {
        self.equalities.len()
    }

    pub fn ineq_values(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.num_ineq());
        for (i, f) in self.inequalities.iter().enumerate() {
            v[i] = f.value(x)?;
        }
        Ok(v)
    }

    pub fn eq_values(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.num_eq());
        for (j, g) in self.equalities.iter().enumerate() {
            v[j] = g.value(x)?;
        }
        Ok(v)
    }

    /// Jacobian of the equality block, rows g_j'(x).
    pub fn eq_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.num_eq(), self.n);
        for (r, g) in self.equalities.iter().enumerate() {
            j.row_mut(r).copy_from(&g.eval(x)?.gradient.transpose());
        }
        Ok(j)
    }
}

/// Mayer problem: endpoint cost and constraints in q = (x(t0), x(t1)),
/// free dynamics xdot = f(x, u) on [t0, t1].
#[derive(Debug, Clone)]
pub struct MayerProblem {
    pub n: usize,
    pub m: usize,
    /// f(x, u), argument (x, u) in R^{n+m}.
    pub dynamics: VectorField,
    /// phi_0(q), q in R^{2n}.
    pub endpoint_cost: ScalarField,
    /// psi_j(q) = 0.
    pub endpoint_equalities: Vec<ScalarField>,
    /// phi_i(q) <= 0.
    pub endpoint_inequalities: Vec<ScalarField>,
    pub horizon: (f64, f64),
}

impl MayerProblem {
    pub fn validate(&self) -> Result<()> {
        if self.dynamics.len() != self.n || self.dynamics.arg_dim != self.n + self.m {
            return Err(Error::DimensionMismatch {
                expected: self.n + self.m,
                got: self.dynamics.arg_dim,
            });
        }
        for f in std::iter::once(&self.endpoint_cost)
            .chain(self.endpoint_equalities.iter())
            .chain(self.endpoint_inequalities.iter())
        {
            if f.dim() != 2 * self.n {
                return Err(Error::DimensionMismatch { expected: 2 * self.n, got: f.dim() });
            }
        }
        if self.horizon.1 <= self.horizon.0 {
            return Err(Error::Invalid("horizon must satisfy t0 < t1".into()));
        }
        Ok(())
    }
}

/// Control-constrained problem on [0, 1]: min F(x(0), x(1)) subject to
/// xdot = f(x, u), G(u) <= 0.
#[derive(Debug, Clone)]
pub struct OcpProblem {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub dynamics: VectorField,
    /// F(q), q = (x(0), x(1)) in R^{2n}.
    pub endpoint_cost: ScalarField,
    /// G(v) <= 0 defines the admissible control set U.
    pub control_constraints: VectorField,
}

impl OcpProblem {
    pub fn validate(&self) -> Result<()> {
        if self.dynamics.len() != self.n || self.dynamics.arg_dim != self.n + self.m {
            return Err(Error::DimensionMismatch {
                expected: self.n + self.m,
                got: self.dynamics.arg_dim,
            });
        }
        if self.endpoint_cost.dim() != 2 * self.n {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.n,
                got: self.endpoint_cost.dim(),
            });
        }
        if self.control_constraints.len() != self.k
            || self.control_constraints.arg_dim != self.m
        {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: self.control_constraints.arg_dim,
            });
        }
        self.feasible_control_probe()?;
        Ok(())
    }

    /// Checks U = {v : G(v) <= 0} nonempty by sampling; returns a feasible
    /// control value.
    pub fn feasible_control_probe(&self) -> Result<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let origin = DVector::zeros(self.m);
        if self.control_feasible(&origin)? {
            return Ok(origin);
        }
        for _ in 0..2000 {
            let v = DVector::from_fn(self.m, |_, _| rng.gen_range(-10.0..10.0));
            if self.control_feasible(&v)? {
                return Ok(v);
            }
        }
        Err(Error::Invalid("admissible control set U appears empty".into()))
    }

    pub fn control_feasible(&self, v: &DVector<f64>) -> Result<bool> {
        Ok(self.control_constraints.value(v)?.iter().all(|&g| g <= 0.0))
    }
}

/// Any of the three problem classes, as produced by the file parser.
#[derive(Debug, Clone)]
pub enum Problem {
    Nlp(NlpProblem),
    Mayer(MayerProblem),
    Ocp(OcpProblem),
}
