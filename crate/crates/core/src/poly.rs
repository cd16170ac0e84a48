//! Sparse multivariate polynomials with exact first and second derivatives.

use nalgebra::{DMatrix, DVector};

/// One monomial: `coef * prod var_i ^ pow_i`. Powers are sorted by variable
/// index and strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub powers: Vec<(usize, u32)>,
}

impl Term {
    pub fn constant(coef: f64) -> Self {
        Term { coef, powers: Vec::new() }
    }

    fn normalize(mut self) -> Self {
        self.powers.sort_by_key(|&(v, _)| v);
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(self.powers.len());
        for (v, p) in self.powers.drain(..) {
            if p == 0 {
                continue;
            }
            match merged.last_mut() {
                Some((lv, lp)) if *lv == v => *lp += p,
                _ => merged.push((v, p)),
            }
        }
        self.powers = merged;
        self
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        self.powers
            .iter()
            .fold(self.coef, |acc, &(v, p)| acc * x[v].powi(p as i32))
    }

    /// d/dx_v of the term; coefficient only (power structure handled by caller).
    fn partial(&self, var: usize) -> Option<Term> {
        let pos = self.powers.iter().position(|&(v, _)| v == var)?;
        let (v, p) = self.powers[pos];
        let mut powers = self.powers.clone();
        if p == 1 {
            powers.remove(pos);
        } else {
            powers[pos] = (v, p - 1);
        }
        Some(Term { coef: self.coef * p as f64, powers })
    }
}

/// Polynomial in `dim` variables, stored as a sum of monomials.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<Term>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<Term>) -> Self {
        let terms = terms.into_iter().map(Term::normalize).collect();
        Polynomial { dim, terms }
    }

    pub fn zero(dim: usize) -> Self {
        Polynomial { dim, terms: Vec::new() }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.terms.iter().map(|t| t.value(x)).sum()
    }

    pub fn partial(&self, var: usize) -> Polynomial {
        let terms = self.terms.iter().filter_map(|t| t.partial(var)).collect();
        Polynomial { dim: self.dim, terms }
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| self.partial(i).value(x))
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            let pi = self.partial(i);
            for j in i..self.dim {
                let v = pi.partial(j).value(x);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        h
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.powers.iter().map(|&(_, p)| p).sum())
            .max()
            .unwrap_or(0)
    }

    /// Render in the problem-file grammar using `name` to print variables.
    pub fn render(&self, name: &dyn Fn(usize) -> String) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (k, t) in self.terms.iter().enumerate() {
            let mut factors = vec![format!("{:?}", t.coef.abs())];
            for &(v, p) in &t.powers {
                if p == 1 {
                    factors.push(name(v));
                } else {
                    factors.push(format!("{}^{}", name(v), p));
                }
            }
            if k == 0 {
                if t.coef < 0.0 {
                    out.push('-');
                }
            } else {
                out.push_str(if t.coef < 0.0 { " - " } else { " + " });
            }
            out.push_str(&factors.join("*"));
        }
        out
    }
}
