//! Text format for problem files.
//!
//! ```text
//! # comment
//! class: nlp | mayer | ocp
//! dims: n[,m[,k]]
//! horizon: t0, t1            # mayer only, defaults to 0, 1
//! objective:                 # nlp: expression in x1..xn
//!   x1^2 + x2^2
//! ineq:                      # nlp: x-vars; mayer: q-vars
//!   -1*x1
//! eq:
//!   x1 + x2 - 1
//! dynamics:                  # mayer/ocp: n expressions in x1..xn, u1..um
//!   u1
//! endpoint:                  # mayer/ocp: cost expression in q1..q2n
//!   q2
//! control_ineq:              # ocp: k expressions in u1..um
//!   -1*u1
//! solution:                  # optional analytic reference, key = v1, v2, ...
//!   x = 0.5, 0.5
//! ```
//!
//! Each expression is a sum of terms `coef * var^pow * ...`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::poly::{Polynomial, Term};
use crate::problem::{MayerProblem, NlpProblem, OcpProblem, Problem, VectorField};

/// Parsed problem plus the optional analytic-solution block.
#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub problem: Problem,
    pub solution: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Copy, PartialEq)]
enum VarSpace {
    /// x1..xn
    X(usize),
    /// x1..xn, u1..um
    Xu(usize, usize),
    /// q1..q2n
    Q(usize),
    /// u1..um
    U(usize),
}

impl VarSpace {
    fn dim(self) -> usize {
        match self {
            VarSpace::X(n) => n,
            VarSpace::Xu(n, m) => n + m,
            VarSpace::Q(n2) => n2,
            VarSpace::U(m) => m,
        }
    }

    fn resolve(self, kind: char, index: usize) -> Option<usize> {
        match (self, kind) {
            (VarSpace::X(n), 'x') if (1..=n).contains(&index) => Some(index - 1),
            (VarSpace::Xu(n, _), 'x') if (1..=n).contains(&index) => Some(index - 1),
            (VarSpace::Xu(n, m), 'u') if (1..=m).contains(&index) => Some(n + index - 1),
            (VarSpace::Q(n2), 'q') if (1..=n2).contains(&index) => Some(index - 1),
            (VarSpace::U(m), 'u') if (1..=m).contains(&index) => Some(index - 1),
            _ => None,
        }
    }
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Error {
    Error::Syntax { line, col, msg: msg.into() }
}

/// Character-level parser for one expression line.
struct ExprParser<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    space: VarSpace,
    _src: &'a str,
}

impl<'a> ExprParser<'a> {
    fn new(src: &'a str, line: usize, space: VarSpace) -> Self {
        ExprParser { chars: src.chars().collect(), pos: 0, line, space, _src: src }
    }

    fn col(&self) -> usize {
        self.pos + 1
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn parse(mut self) -> Result<Polynomial> {
        let mut terms = Vec::new();
        self.skip_ws();
        let mut sign = 1.0;
        if matches!(self.peek(), Some('-')) {
            sign = -1.0;
            self.pos += 1;
        } else if matches!(self.peek(), Some('+')) {
            self.pos += 1;
        }
        loop {
            let mut term = self.parse_term()?;
            term.coef *= sign;
            terms.push(term);
            self.skip_ws();
            match self.peek() {
                None => break,
                Some('+') => {
                    sign = 1.0;
                    self.pos += 1;
                }
                Some('-') => {
                    sign = -1.0;
                    self.pos += 1;
                }
                Some(c) => {
                    return Err(syntax(self.line, self.col(), format!("unexpected character '{c}'")))
                }
            }
        }
        Ok(Polynomial::new(self.space.dim(), terms))
    }

    fn parse_term(&mut self) -> Result<Term> {
        let mut coef = 1.0;
        let mut powers = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(c) if c.is_ascii_digit() || c == '.' => {
                    coef *= self.parse_number()?;
                }
                Some(c) if c == 'x' || c == 'u' || c == 'q' => {
                    let (var, pow) = self.parse_var()?;
                    powers.push((var, pow));
                }
                _ => {
                    return Err(syntax(self.line, self.col(), "expected a coefficient or variable"))
                }
            }
            self.skip_ws();
            if matches!(self.peek(), Some('*')) {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(Term { coef, powers })
    }

    fn parse_number(&mut self) -> Result<f64> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E')
        {
            // allow exponent sign directly after e/E
            if matches!(self.peek(), Some('e' | 'E')) {
                self.pos += 1;
                if matches!(self.peek(), Some('+' | '-')) {
                    self.pos += 1;
                }
            } else {
                self.pos += 1;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>()
            .map_err(|_| syntax(self.line, start + 1, format!("malformed number '{text}'")))
    }

    fn parse_var(&mut self) -> Result<(usize, u32)> {
        let kind_col = self.col();
        let kind = self.peek().unwrap();
        self.pos += 1;
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let idx_text: String = self.chars[start..self.pos].iter().collect();
        let index: usize = idx_text
            .parse()
            .map_err(|_| syntax(self.line, kind_col, format!("variable '{kind}' needs an index")))?;
        let var = self.space.resolve(kind, index).ok_or_else(|| {
            syntax(self.line, kind_col, format!("variable {kind}{index} out of range"))
        })?;
        let mut pow = 1u32;
        if matches!(self.peek(), Some('^')) {
            self.pos += 1;
            let pstart = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
            let ptext: String = self.chars[pstart..self.pos].iter().collect();
            pow = ptext
                .parse()
                .map_err(|_| syntax(self.line, pstart + 1, "malformed exponent".to_string()))?;
        }
        Ok((var, pow))
    }
}

fn parse_expr(src: &str, line: usize, space: VarSpace) -> Result<Polynomial> {
    ExprParser::new(src, line, space).parse()
}

struct Block {
    name: String,
    name_line: usize,
    lines: Vec<(usize, String)>,
}

/// Parse a problem file. See the module docs for the grammar.
pub fn parse_problem_file(text: &str) -> Result<ProblemFile> {
    let mut class: Option<(String, usize)> = None;
    let mut dims: Option<(Vec<usize>, usize)> = None;
    let mut horizon: Option<(f64, f64)> = None;
    let mut blocks: Vec<Block> = Vec::new();

    for (lineno0, raw) in text.lines().enumerate() {
        let lineno = lineno0 + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("class:") {
            class = Some((rest.trim().to_string(), lineno));
        } else if let Some(rest) = trimmed.strip_prefix("dims:") {
            let parts: Result<Vec<usize>> = rest
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<usize>()
                        .map_err(|_| syntax(lineno, 1, format!("bad dimension '{}'", p.trim())))
                })
                .collect();
            dims = Some((parts?, lineno));
        } else if let Some(rest) = trimmed.strip_prefix("horizon:") {
            let parts: Vec<&str> = rest.split(',').map(|p| p.trim()).collect();
            if parts.len() != 2 {
                return Err(syntax(lineno, 1, "horizon needs two values"));
            }
            let t0 = parts[0]
                .parse()
                .map_err(|_| syntax(lineno, 1, "bad horizon value"))?;
            let t1 = parts[1]
                .parse()
                .map_err(|_| syntax(lineno, 1, "bad horizon value"))?;
            horizon = Some((t0, t1));
        } else if let Some(name) = trimmed.strip_suffix(':') {
            if name.contains(char::is_whitespace) {
                return Err(syntax(lineno, 1, format!("unrecognized line '{trimmed}'")));
            }
            blocks.push(Block { name: name.to_string(), name_line: lineno, lines: Vec::new() });
        } else if let Some(b) = blocks.last_mut() {
            b.lines.push((lineno, trimmed.to_string()));
        } else {
            return Err(syntax(lineno, 1, format!("unrecognized line '{trimmed}'")));
        }
    }

    let (class, class_line) =
        class.ok_or_else(|| syntax(1, 1, "missing 'class:' header"))?;
    let (dims, dims_line) = dims.ok_or_else(|| syntax(1, 1, "missing 'dims:' header"))?;

    let get = |name: &str| blocks.iter().find(|b| b.name == name);
    let known = ["objective", "ineq", "eq", "dynamics", "endpoint", "control_ineq", "solution"];
    for b in &blocks {
        if !known.contains(&b.name.as_str()) {
            return Err(syntax(b.name_line, 1, format!("unknown block '{}'", b.name)));
        }
    }

    let solution = match get("solution") {
        Some(b) => parse_solution(b)?,
        None => BTreeMap::new(),
    };

    let exprs = |b: &Block, space: VarSpace| -> Result<Vec<ScalarField>> {
        b.lines
            .iter()
            .map(|(ln, src)| parse_expr(src, *ln, space).map(ScalarField::poly))
            .collect()
    };
    let single = |b: &Block, space: VarSpace| -> Result<ScalarField> {
        if b.lines.len() != 1 {
            return Err(syntax(b.name_line, 1, format!(
                "block '{}' needs exactly one expression, got {}",
                b.name,
                b.lines.len()
            )));
        }
        let (ln, src) = &b.lines[0];
        parse_expr(src, *ln, space).map(ScalarField::poly)
    };

    let problem = match class.as_str() {
        "nlp" => {
            if dims.len() != 1 {
                return Err(syntax(dims_line, 1, "nlp needs dims: n"));
            }
            let n = dims[0];
            let space = VarSpace::X(n);
            let objective = single(
                get("objective").ok_or_else(|| syntax(class_line, 1, "nlp needs an objective block"))?,
                space,
            )?;
            let inequalities = get("ineq").map(|b| exprs(b, space)).transpose()?.unwrap_or_default();
            let equalities = get("eq").map(|b| exprs(b, space)).transpose()?.unwrap_or_default();
            Problem::Nlp(NlpProblem::new(n, objective, inequalities, equalities)?)
        }
        "mayer" => {
            if dims.len() != 2 {
                return Err(syntax(dims_line, 1, "mayer needs dims: n, m"));
            }
            let (n, m) = (dims[0], dims[1]);
            let dyn_block = get("dynamics")
                .ok_or_else(|| syntax(class_line, 1, "mayer needs a dynamics block"))?;
            let dyn_fields = exprs(dyn_block, VarSpace::Xu(n, m))?;
            if dyn_fields.len() != n {
                return Err(syntax(dyn_block.name_line, 1, format!(
                    "dynamics needs {n} expressions, got {}",
                    dyn_fields.len()
                )));
            }
            let qspace = VarSpace::Q(2 * n);
            let endpoint_cost = single(
                get("endpoint").ok_or_else(|| syntax(class_line, 1, "mayer needs an endpoint block"))?,
                qspace,
            )?;
            let endpoint_equalities =
                get("eq").map(|b| exprs(b, qspace)).transpose()?.unwrap_or_default();
            let endpoint_inequalities =
                get("ineq").map(|b| exprs(b, qspace)).transpose()?.unwrap_or_default();
            let p = MayerProblem {
                n,
                m,
                dynamics: VectorField::new(n + m, dyn_fields)?,
                endpoint_cost,
                endpoint_equalities,
                endpoint_inequalities,
                horizon: horizon.unwrap_or((0.0, 1.0)),
            };
            p.validate()?;
            Problem::Mayer(p)
        }
        "ocp" => {
            if dims.len() != 3 {
                return Err(syntax(dims_line, 1, "ocp needs dims: n, m, k"));
            }
            let (n, m, k) = (dims[0], dims[1], dims[2]);
            let dyn_block = get("dynamics")
                .ok_or_else(|| syntax(class_line, 1, "ocp needs a dynamics block"))?;
            let dyn_fields = exprs(dyn_block, VarSpace::Xu(n, m))?;
            if dyn_fields.len() != n {
                return Err(syntax(dyn_block.name_line, 1, format!(
                    "dynamics needs {n} expressions, got {}",
                    dyn_fields.len()
                )));
            }
            let endpoint_cost = single(
                get("endpoint").ok_or_else(|| syntax(class_line, 1, "ocp needs an endpoint block"))?,
                VarSpace::Q(2 * n),
            )?;
            let g_block = get("control_ineq")
                .ok_or_else(|| syntax(class_line, 1, "ocp needs a control_ineq block"))?;
            let g_fields = exprs(g_block, VarSpace::U(m))?;
            if g_fields.len() != k {
                return Err(syntax(g_block.name_line, 1, format!(
                    "control_ineq needs {k} expressions, got {}",
                    g_fields.len()
                )));
            }
            let p = OcpProblem {
                n,
                m,
                k,
                dynamics: VectorField::new(n + m, dyn_fields)?,
                endpoint_cost,
                control_constraints: VectorField::new(m, g_fields)?,
            };
            p.validate()?;
            Problem::Ocp(p)
        }
        other => return Err(syntax(class_line, 1, format!("unknown class tag '{other}'"))),
    };

    Ok(ProblemFile { problem, solution })
}

fn parse_solution(b: &Block) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (ln, src) in &b.lines {
        let (key, rest) = src
            .split_once('=')
            .ok_or_else(|| syntax(*ln, 1, "solution lines look like 'key = v1, v2'"))?;
        let values: Result<Vec<f64>> = rest
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| syntax(*ln, 1, format!("bad value '{}'", p.trim())))
            })
            .collect();
        out.insert(key.trim().to_string(), values?);
    }
    Ok(out)
}

fn render_field(f: &ScalarField, name: &dyn Fn(usize) -> String) -> String {
    match f.as_poly() {
        Some(p) => p.render(name),
        None => "0 # custom oracle, not serializable".to_string(),
    }
}

/// Serialize a problem back into the file grammar. Inverse of
/// [`parse_problem_file`] for polynomial problems.
pub fn serialize_problem(problem: &Problem) -> String {
    let xname = |v: usize| format!("x{}", v + 1);
    let qname = |v: usize| format!("q{}", v + 1);
    let uname = |v: usize| format!("u{}", v + 1);
    let mut out = String::new();
    match problem {
        Problem::Nlp(p) => {
            out.push_str(&format!("class: nlp\ndims: {}\n", p.n));
            out.push_str(&format!("objective:\n  {}\n", render_field(&p.objective, &xname)));
            if !p.inequalities.is_empty() {
                out.push_str("ineq:\n");
                for f in &p.inequalities {
                    out.push_str(&format!("  {}\n", render_field(f, &xname)));
                }
            }
            if !p.equalities.is_empty() {
                out.push_str("eq:\n");
                for f in &p.equalities {
                    out.push_str(&format!("  {}\n", render_field(f, &xname)));
                }
            }
        }
        Problem::Mayer(p) => {
            let n = p.n;
            let xuname = move |v: usize| {
                if v < n { format!("x{}", v + 1) } else { format!("u{}", v - n + 1) }
            };
            out.push_str(&format!("class: mayer\ndims: {}, {}\n", p.n, p.m));
            out.push_str(&format!("horizon: {:?}, {:?}\n", p.horizon.0, p.horizon.1));
            out.push_str("dynamics:\n");
            for f in &p.dynamics.components {
                out.push_str(&format!("  {}\n", render_field(f, &xuname)));
            }
            out.push_str(&format!("endpoint:\n  {}\n", render_field(&p.endpoint_cost, &qname)));
            if !p.endpoint_equalities.is_empty() {
                out.push_str("eq:\n");
                for f in &p.endpoint_equalities {
                    out.push_str(&format!("  {}\n", render_field(f, &qname)));
                }
            }
            if !p.endpoint_inequalities.is_empty() {
                out.push_str("ineq:\n");
                for f in &p.endpoint_inequalities {
                    out.push_str(&format!("  {}\n", render_field(f, &qname)));
                }
            }
        }
        Problem::Ocp(p) => {
            let n = p.n;
            let xuname = move |v: usize| {
                if v < n { format!("x{}", v + 1) } else { format!("u{}", v - n + 1) }
            };
            out.push_str(&format!("class: ocp\ndims: {}, {}, {}\n", p.n, p.m, p.k));
            out.push_str("dynamics:\n");
            for f in &p.dynamics.components {
                out.push_str(&format!("  {}\n", render_field(f, &xuname)));
            }
            out.push_str(&format!("endpoint:\n  {}\n", render_field(&p.endpoint_cost, &qname)));
            out.push_str("control_ineq:\n");
            for f in &p.control_constraints.components {
                out.push_str(&format!("  {}\n", render_field(f, &uname)));
            }
        }
    }
    out
}
