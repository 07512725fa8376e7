//! Differential-equation model specifications and their constraint matrices.
//!
//! A model reads `anchor + Σ_j θ_j·term_j + Σ c_k·fixedterm_k = forcing`.
//! Source text has one `;`-terminated statement per line and `#` comments:
//!
//! ```text
//! axes x, t;
//! field u;
//! exogenous v;
//! anchor D(u,t,1);
//! term th1: u*D(u,x,1);
//! term th2: D(u,x,2);
//! fixedterm -1: v*u;
//! forcing 0.42*cos(t);
//! ```
//!
//! Numeric literals may appear as factors (`term c: -1*D(u,x,2);`) so that
//! coefficients can be reported with either sign convention.
//!
//! Nonlinear products are relaxed by freezing all target-field factors but
//! one at the current coefficients, leaving each term linear in `β`.

use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::expr::{tokenize, Expr, ExprParser, Tok, Token};
use crate::linalg::SparseRows;
use crate::tensor::{BasisSpec, DerivIndex, Grid, TensorEvaluator};

/// Which field a factor reads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldRef {
    Target,
    /// Index into [`ModelSpec::exogenous`].
    Exogenous(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Factor {
    pub field: FieldRef,
    pub deriv: DerivIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Fixed(f64),
    Free(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coefficient: Coefficient,
    /// Product of numeric literals appearing among the factors.
    pub scale: f64,
    pub factors: Vec<Factor>,
}

impl Term {
    /// Position of the factor that carries `β`: the target factor with the
    /// highest total derivative order, the last one on ties.
    pub fn linear_factor(&self) -> usize {
        let mut best: Option<(usize, usize)> = None;
        for (i, f) in self.factors.iter().enumerate() {
            if f.field != FieldRef::Target {
                continue;
            }
            let order = f.deriv.total();
            if best.is_none_or(|(_, o)| order >= o) {
                best = Some((i, order));
            }
        }
        best.map(|(i, _)| i).expect("validated terms contain the target field")
    }

    /// True when the matrix of this term depends on the current `β`.
    pub fn is_nonlinear(&self) -> bool {
        self.factors.iter().filter(|f| f.field == FieldRef::Target).count() > 1
    }
}

/// A parsed and validated model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub axes: Vec<String>,
    pub field: String,
    pub exogenous: Vec<String>,
    /// The anchor term; its coefficient is always `Fixed(1.0)`.
    pub anchor: Term,
    /// Free and fixed terms in declaration order.
    pub terms: Vec<Term>,
    pub forcing: Expr,
    pub source: String,
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<Self> {
        parse_model(text)
    }

    /// Names of the free coefficients in declaration order.
    pub fn theta_names(&self) -> Vec<&str> {
        self.free_terms().map(|t| match &t.coefficient {
            Coefficient::Free(n) => n.as_str(),
            Coefficient::Fixed(_) => unreachable!(),
        })
        .collect()
    }

    pub fn free_count(&self) -> usize {
        self.free_terms().count()
    }

    fn free_terms(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter().filter(|t| matches!(t.coefficient, Coefficient::Free(_)))
    }

    fn all_terms(&self) -> impl Iterator<Item = &Term> {
        std::iter::once(&self.anchor).chain(&self.terms)
    }

    /// Highest derivative order taken along each axis.
    pub fn max_derivs(&self) -> Vec<usize> {
        let mut out = vec![0; self.axes.len()];
        for f in self.all_terms().flat_map(|t| &t.factors) {
            for (o, &d) in out.iter_mut().zip(&f.deriv.0) {
                *o = (*o).max(d);
            }
        }
        out
    }

    pub fn is_nonlinear(&self) -> bool {
        self.all_terms().any(Term::is_nonlinear)
    }

    /// Derivative indices needed by any factor.
    pub fn derivs_used(&self) -> Vec<DerivIndex> {
        let mut set: Vec<DerivIndex> = self
            .all_terms()
            .flat_map(|t| &t.factors)
            .filter(|f| f.field == FieldRef::Target)
            .map(|f| f.deriv.clone())
            .collect();
        set.sort();
        set.dedup();
        set
    }

    /// Checks that the grid axes match the declared axes by name and order.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        let names = grid.axis_names();
        if names.len() != self.axes.len() || names.iter().zip(&self.axes).any(|(a, b)| a != b) {
            return Err(Error::AxisMismatch(format!(
                "model axes ({}) differ from grid axes ({})",
                self.axes.join(", "),
                names.join(", ")
            )));
        }
        Ok(())
    }

    /// Forcing evaluated at every grid point.
    pub fn forcing_on(&self, grid: &Grid) -> Vec<f64> {
        if self.forcing.is_zero_literal() {
            return vec![0.0; grid.point_count()];
        }
        (0..grid.point_count()).map(|i| self.forcing.eval(&grid.point(i))).collect()
    }

    /// Pointwise residual `anchor + Σ coef·Π factors − forcing` given the
    /// target field derivatives and exogenous values at each point.
    ///
    /// `target(i, α)` returns `∂^α u` at point `i`; `exo[k][i]` is exogenous
    /// field `k` at point `i`.
    pub fn pointwise_residual(
        &self,
        theta: &[f64],
        points: &[Vec<f64>],
        target: impl Fn(usize, &DerivIndex) -> f64,
        exo: &[Vec<f64>],
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let product = |t: &Term| {
                t.factors.iter().fold(t.scale, |acc, f| {
                    acc * match f.field {
                        FieldRef::Target => target(i, &f.deriv),
                        FieldRef::Exogenous(k) => exo[k][i],
                    }
                })
            };
            let mut v = product(&self.anchor) - self.forcing.eval(p);
            let mut j = 0;
            for t in &self.terms {
                let c = match t.coefficient {
                    Coefficient::Fixed(c) => c,
                    Coefficient::Free(_) => {
                        j += 1;
                        theta[j - 1]
                    }
                };
                v += c * product(t);
            }
            out.push(v);
        }
        out
    }
}

/// Parses model source text.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let tokens = tokenize(text)?;
    let mut statements: Vec<&[Token]> = Vec::new();
    let mut start = 0;
    for i in 0..=tokens.len() {
        let boundary = i == tokens.len()
            || tokens[i].tok == Tok::Sym(';')
            || (i > start && tokens[i].line != tokens[i - 1].line);
        if boundary {
            if i > start {
                statements.push(&tokens[start..i]);
            }
            start = if i < tokens.len() && tokens[i].tok == Tok::Sym(';') { i + 1 } else { i };
        }
    }

    let mut b = Builder::default();
    for st in statements {
        b.statement(st)?;
    }
    b.finish(text)
}

#[derive(Default)]
struct Builder {
    axes: Option<Vec<String>>,
    field: Option<String>,
    exogenous: Vec<String>,
    anchor: Option<Term>,
    terms: Vec<Term>,
    forcing: Option<Expr>,
    names: HashSet<String>,
}

fn err_at(t: &Token, message: impl Into<String>) -> Error {
    Error::Parse { line: t.line, column: t.column, message: message.into() }
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.toks.get(self.pos)
    }

    fn last(&self) -> &'a Token {
        self.toks.get(self.pos).unwrap_or_else(|| self.toks.last().expect("statements are non-empty"))
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        err_at(self.last(), message)
    }

    fn ident(&mut self, what: &str) -> Result<(&'a Token, String)> {
        match self.peek() {
            Some(t @ Token { tok: Tok::Ident(s), .. }) => {
                self.pos += 1;
                Ok((t, s.clone()))
            }
            _ => Err(self.fail(format!("expected {what}"))),
        }
    }

    fn sym(&mut self, c: char) -> Result<()> {
        match self.peek() {
            Some(Token { tok: Tok::Sym(s), .. }) if *s == c => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.fail(format!("expected `{c}`"))),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.sym(c).is_ok()
    }

    fn number(&mut self) -> Result<f64> {
        let neg = self.eat('-');
        match self.peek() {
            Some(Token { tok: Tok::Number(v), .. }) => {
                self.pos += 1;
                Ok(if neg { -v } else { *v })
            }
            _ => Err(self.fail("expected a number")),
        }
    }

    fn end(&self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(err_at(t, "unexpected input at end of statement")),
        }
    }
}

const RESERVED: &[&str] =
    &["D", "axes", "field", "exogenous", "anchor", "term", "fixedterm", "forcing", "sin", "cos", "exp", "tanh", "atan", "pow"];

impl Builder {
    fn claim_name(&mut self, t: &Token, name: &str, what: &str) -> Result<()> {
        if RESERVED.contains(&name) {
            return Err(err_at(t, format!("`{name}` is reserved and cannot name {what}")));
        }
        if !self.names.insert(name.to_string()) {
            return Err(err_at(t, format!("duplicate name `{name}`")));
        }
        Ok(())
    }

    fn statement(&mut self, toks: &[Token]) -> Result<()> {
        let mut c = Cursor { toks, pos: 0 };
        let (kw_tok, kw) = c.ident("a statement keyword")?;
        match kw.as_str() {
            "axes" => {
                if self.axes.is_some() {
                    return Err(err_at(kw_tok, "axes declared twice"));
                }
                let mut axes = Vec::new();
                loop {
                    let (t, name) = c.ident("an axis name")?;
                    self.claim_name(t, &name, "an axis")?;
                    axes.push(name);
                    if !c.eat(',') {
                        break;
                    }
                }
                c.end()?;
                self.axes = Some(axes);
            }
            "field" => {
                if self.field.is_some() {
                    return Err(err_at(kw_tok, "only one target field may be declared"));
                }
                let (t, name) = c.ident("a field name")?;
                self.claim_name(t, &name, "a field")?;
                c.end()?;
                self.field = Some(name);
            }
            "exogenous" => loop {
                let (t, name) = c.ident("an exogenous field name")?;
                self.claim_name(t, &name, "a field")?;
                self.exogenous.push(name);
                if !c.eat(',') {
                    c.end()?;
                    break;
                }
            },
            "anchor" => {
                if self.anchor.is_some() {
                    return Err(err_at(kw_tok, "anchor declared twice"));
                }
                let (scale, factors) = self.product(&mut c)?;
                c.end()?;
                self.anchor = Some(Term { coefficient: Coefficient::Fixed(1.0), scale, factors });
            }
            "term" => {
                let (t, name) = c.ident("a coefficient name")?;
                self.claim_name(t, &name, "a coefficient")?;
                c.sym(':')?;
                let (scale, factors) = self.product(&mut c)?;
                c.end()?;
                self.terms.push(Term { coefficient: Coefficient::Free(name), scale, factors });
            }
            "fixedterm" => {
                let value = c.number()?;
                c.sym(':')?;
                let (scale, factors) = self.product(&mut c)?;
                c.end()?;
                self.terms.push(Term { coefficient: Coefficient::Fixed(value), scale, factors });
            }
            "forcing" => {
                if self.forcing.is_some() {
                    return Err(err_at(kw_tok, "forcing declared twice"));
                }
                let axes = self.require_axes(kw_tok)?;
                let vars: Vec<&str> = axes.iter().map(String::as_str).collect();
                let mut p = ExprParser { tokens: &toks[c.pos..], pos: 0, vars: &vars };
                let e = p.expr()?;
                c.pos += p.pos;
                c.end()?;
                self.forcing = Some(e);
            }
            other => return Err(err_at(kw_tok, format!("unknown statement `{other}`"))),
        }
        Ok(())
    }

    fn require_axes(&self, at: &Token) -> Result<Vec<String>> {
        self.axes.clone().ok_or_else(|| err_at(at, "axes must be declared first"))
    }

    fn product(&self, c: &mut Cursor) -> Result<(f64, Vec<Factor>)> {
        let mut scale = 1.0;
        let mut factors = Vec::new();
        loop {
            let numeric = matches!(
                c.peek().map(|t| &t.tok),
                Some(Tok::Number(_)) | Some(Tok::Sym('-'))
            );
            if numeric {
                scale *= c.number()?;
            } else {
                factors.push(self.factor(c)?);
            }
            if !c.eat('*') {
                break;
            }
        }
        if !factors.iter().any(|f| f.field == FieldRef::Target) {
            return Err(c.fail("a term must contain the target field"));
        }
        if !scale.is_finite() || scale == 0.0 {
            return Err(c.fail("numeric factor must be finite and nonzero"));
        }
        Ok((scale, factors))
    }

    fn factor(&self, c: &mut Cursor) -> Result<Factor> {
        let (t, name) = c.ident("a factor")?;
        let axes = self.require_axes(t)?;
        let field = self.field.as_deref().ok_or_else(|| err_at(t, "the target field must be declared first"))?;
        if name == field {
            return Ok(Factor { field: FieldRef::Target, deriv: DerivIndex::zero(axes.len()) });
        }
        if let Some(k) = self.exogenous.iter().position(|e| *e == name) {
            return Ok(Factor { field: FieldRef::Exogenous(k), deriv: DerivIndex::zero(axes.len()) });
        }
        if name != "D" {
            return Err(err_at(t, format!("unknown field `{name}`")));
        }
        c.sym('(')?;
        let (ft, fname) = c.ident("a field name")?;
        if fname != field {
            let why = if self.exogenous.contains(&fname) {
                format!("derivatives of exogenous field `{fname}` are not supported")
            } else {
                format!("unknown field `{fname}`")
            };
            return Err(err_at(ft, why));
        }
        let mut deriv = DerivIndex::zero(axes.len());
        loop {
            c.sym(',')?;
            let (at, axis) = c.ident("an axis name")?;
            let Some(a) = axes.iter().position(|x| *x == axis) else {
                return Err(err_at(at, format!("unknown axis `{axis}`")));
            };
            c.sym(',')?;
            let ot = c.last();
            let order = c.number()?;
            if order < 0.0 || order.fract() != 0.0 || order > 16.0 {
                return Err(err_at(ot, "derivative order must be a small nonnegative integer"));
            }
            deriv.0[a] += order as usize;
            if c.eat(')') {
                break;
            }
        }
        Ok(Factor { field: FieldRef::Target, deriv })
    }

    fn finish(self, text: &str) -> Result<ModelSpec> {
        let axes = self.axes.ok_or_else(|| Error::Model("no `axes` declaration".into()))?;
        let field = self.field.ok_or_else(|| Error::Model("no target `field` declaration".into()))?;
        let anchor = self.anchor.ok_or_else(|| Error::Model("no anchor term".into()))?;
        let spec = ModelSpec {
            axes,
            field,
            exogenous: self.exogenous,
            anchor,
            terms: self.terms,
            forcing: self.forcing.unwrap_or(Expr::Num(0.0)),
            source: text.to_string(),
        };
        if spec.free_count() == 0 {
            return Err(Error::Model("model has no free coefficient".into()));
        }
        Ok(spec)
    }
}

/// Matrices of the relaxed constraint `A_fixed β + Σ θ_j A_j β − f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrices {
    pub a_fixed: SparseRows,
    pub a_free: Vec<SparseRows>,
    pub forcing: Vec<f64>,
}

impl ConstraintMatrices {
    /// `C = A_fixed + Σ θ_j A_j`.
    pub fn combined(&self, theta: &[f64]) -> SparseRows {
        let mut c = self.a_fixed.clone();
        for (a, &t) in self.a_free.iter().zip(theta) {
            c.add_scaled(t, a);
        }
        c
    }

    /// `F(β, θ) = C β − f`.
    pub fn residual(&self, beta: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut f = self.combined(theta).mul_vec(beta);
        for (v, g) in f.iter_mut().zip(&self.forcing) {
            *v -= g;
        }
        f
    }
}

/// Collects the exogenous fields a model needs from named value vectors,
/// checking each has one value per grid point.
pub fn collect_exogenous(
    model: &ModelSpec,
    grid: &Grid,
    available: &BTreeMap<String, Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    model
        .exogenous
        .iter()
        .map(|name| {
            let v = available.get(name).ok_or_else(|| Error::MissingExogenous(name.clone()))?;
            if v.len() != grid.point_count() {
                return Err(Error::AxisMismatch(format!(
                    "exogenous field `{name}` has {} values, grid has {} points",
                    v.len(),
                    grid.point_count()
                )));
            }
            Ok(v.clone())
        })
        .collect()
}

/// Builds constraint matrices for one model on one grid, caching the basis
/// derivative matrices so that rebuilding at a new `β` only rescales rows.
#[derive(Debug)]
pub struct ConstraintBuilder {
    model: ModelSpec,
    derivs: BTreeMap<DerivIndex, SparseRows>,
    exogenous: Vec<Vec<f64>>,
    forcing: Vec<f64>,
    nrows: usize,
}

impl ConstraintBuilder {
    pub fn new(model: &ModelSpec, spec: &BasisSpec, grid: &Grid, exogenous: Vec<Vec<f64>>) -> Result<Self> {
        model.check_grid(grid)?;
        if exogenous.len() != model.exogenous.len() {
            let missing = &model.exogenous[exogenous.len().min(model.exogenous.len())..];
            return Err(Error::MissingExogenous(missing.first().cloned().unwrap_or_default()));
        }
        for (name, v) in model.exogenous.iter().zip(&exogenous) {
            if v.len() != grid.point_count() {
                return Err(Error::AxisMismatch(format!("exogenous field `{name}` does not match the grid")));
            }
        }
        let eval = TensorEvaluator::on_grid(spec, grid)?;
        let mut derivs = BTreeMap::new();
        let mut needed = model.derivs_used();
        needed.push(DerivIndex::zero(grid.ndim()));
        for alpha in needed {
            if derivs.contains_key(&alpha) {
                continue;
            }
            let m = eval.matrix(&alpha)?;
            derivs.insert(alpha, m);
        }
        Ok(Self {
            model: model.clone(),
            derivs,
            exogenous,
            forcing: model.forcing_on(grid),
            nrows: grid.point_count(),
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    /// Basis derivative matrix for `alpha`, if the model uses it.
    pub fn deriv_matrix(&self, alpha: &DerivIndex) -> Option<&SparseRows> {
        self.derivs.get(alpha)
    }

    pub fn depends_on_beta(&self) -> bool {
        self.model.is_nonlinear()
    }

    fn term_matrix(&self, term: &Term, beta: &[f64], cache: &mut BTreeMap<DerivIndex, Vec<f64>>) -> SparseRows {
        let lin = term.linear_factor();
        let base = &self.derivs[&term.factors[lin].deriv];
        let others: Vec<&Factor> =
            term.factors.iter().enumerate().filter(|&(i, _)| i != lin).map(|(_, f)| f).collect();
        if others.is_empty() && term.scale == 1.0 {
            return base.clone();
        }
        let mut scale = vec![term.scale; self.nrows];
        for f in others {
            let vals: &[f64] = match f.field {
                FieldRef::Exogenous(k) => &self.exogenous[k],
                FieldRef::Target => cache
                    .entry(f.deriv.clone())
                    .or_insert_with(|| self.derivs[&f.deriv].mul_vec(beta)),
            };
            for (s, v) in scale.iter_mut().zip(vals) {
                *s *= v;
            }
        }
        base.scale_rows(&scale)
    }

    /// Constraint matrices with frozen factors evaluated at `beta`.
    pub fn build(&self, beta: &[f64]) -> ConstraintMatrices {
        let mut cache = BTreeMap::new();
        let mut a_fixed = self.term_matrix(&self.model.anchor, beta, &mut cache);
        let mut a_free = Vec::new();
        for t in &self.model.terms {
            let m = self.term_matrix(t, beta, &mut cache);
            match t.coefficient {
                Coefficient::Fixed(c) => a_fixed.add_scaled(c, &m),
                Coefficient::Free(_) => a_free.push(m),
            }
        }
        ConstraintMatrices { a_fixed, a_free, forcing: self.forcing.clone() }
    }
}

/// One-shot construction of the constraint matrices at `beta`.
pub fn build_constraint_matrices(
    model: &ModelSpec,
    spec: &BasisSpec,
    grid: &Grid,
    exogenous: Vec<Vec<f64>>,
    beta: &[f64],
) -> Result<ConstraintMatrices> {
    if beta.len() != spec.coefficient_count() {
        return Err(Error::argument(format!(
            "coefficient vector has length {}, basis has {}",
            beta.len(),
            spec.coefficient_count()
        )));
    }
    Ok(ConstraintBuilder::new(model, spec, grid, exogenous)?.build(beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{eval_at_points, Axis, BasisOptions};

    const BURGERS: &str = "axes x, t;\nfield u;\nanchor D(u,t,1);\nterm th1: u*D(u,x,1);\nterm th2: D(u,x,2);\n";

    fn parse_err(src: &str) -> (usize, usize, String) {
        match parse_model(src) {
            Err(Error::Parse { line, column, message }) => (line, column, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parses_burgers() {
        let m = parse_model(BURGERS).unwrap();
        assert_eq!(m.axes, ["x", "t"]);
        assert_eq!(m.field, "u");
        assert_eq!(m.anchor.factors, vec![Factor { field: FieldRef::Target, deriv: DerivIndex(vec![0, 1]) }]);
        assert_eq!(m.theta_names(), ["th1", "th2"]);
        assert_eq!(m.terms[0].factors.len(), 2);
        assert_eq!(m.terms[0].linear_factor(), 1);
        assert!(m.is_nonlinear());
        assert!(m.forcing.is_zero_literal());
        assert_eq!(m.max_derivs(), [2, 1]);
    }

    #[test]
    fn single_line_source_and_comments() {
        let m = parse_model(
            "axes x, t; field u; # target\nanchor D(u,t,1); term th1: u*D(u,x,1); term th2: D(u,x,2);",
        )
        .unwrap();
        assert_eq!(m.free_count(), 2);
    }

    #[test]
    fn forcing_evaluates_on_grid() {
        let src = "axes t;\nfield x;\nanchor D(x,t,2);\nterm a: D(x,t,1);\nterm b: x;\nterm c: x*x*x;\nforcing 0.42*cos(1.0*t);\n";
        let m = parse_model(src).unwrap();
        let grid = Grid::new(vec![Axis::uniform("t", 0.0, 10.0, 11)]).unwrap();
        let f = m.forcing_on(&grid);
        for (i, v) in f.iter().enumerate() {
            assert_eq!(*v, 0.42 * (i as f64).cos());
        }
        assert_eq!(m.terms[2].linear_factor(), 2);
    }

    #[test]
    fn linear_factor_prefers_highest_order_then_last() {
        let m = parse_model("axes x;\nfield u;\nanchor D(u,x,1);\nterm a: D(u,x,2)*u;\nterm b: u*u;\n").unwrap();
        assert_eq!(m.terms[0].linear_factor(), 0);
        assert_eq!(m.terms[1].linear_factor(), 1);
    }

    #[test]
    fn numeric_factors_scale_terms() {
        let m = parse_model("axes x, t;\nfield u;\nanchor D(u,t,2);\nterm c: -1*D(u,x,2);\nterm d: 2*u*-0.5;\n").unwrap();
        assert_eq!(m.terms[0].scale, -1.0);
        assert_eq!(m.terms[1].scale, -1.0);
        let grid = Grid::new(vec![Axis::uniform("x", 0.0, 1.0, 9), Axis::uniform("t", 0.0, 1.0, 8)]).unwrap();
        let spec = BasisSpec::for_grid(&grid, &m.max_derivs(), &BasisOptions::default()).unwrap();
        let beta = pseudo_random(spec.coefficient_count(), 1);
        let cm = build_constraint_matrices(&m, &spec, &grid, vec![], &beta).unwrap();
        let b2 = crate::tensor::assemble_grid_matrix(&spec, &grid, &DerivIndex(vec![2, 0])).unwrap();
        assert_eq!(cm.a_free[0], b2.scale_rows(&vec![-1.0; grid.point_count()]));
        assert!(parse_model("axes x;\nfield u;\nanchor D(u,x,1);\nterm c: 0*u;\n").is_err());
    }

    #[test]
    fn mixed_and_fixed_terms() {
        let m = parse_model("axes x, t;\nfield u;\nanchor D(u,t,2);\nfixedterm -1.5: D(u,x,1,t,1);\nterm c: D(u,x,2);\n")
            .unwrap();
        assert_eq!(m.terms[0].coefficient, Coefficient::Fixed(-1.5));
        assert_eq!(m.terms[0].factors[0].deriv, DerivIndex(vec![1, 1]));
        assert_eq!(m.theta_names(), ["c"]);
    }

    #[test]
    fn rejects_unknown_axis_with_position() {
        let (line, column, msg) = parse_err("axes x, t;\nfield u;\nanchor D(u,t,1);\nterm a: D(u,z,1);\n");
        assert_eq!((line, column), (4, 13));
        assert!(msg.contains("axis `z`"), "{msg}");
    }

    #[test]
    fn rejects_structural_errors() {
        assert!(matches!(parse_model("axes x;\nfield u;\nterm a: u;\n"), Err(Error::Model(m)) if m.contains("anchor")));
        assert!(matches!(parse_model("axes x;\nfield u;\nanchor D(u,x,1);\n"), Err(Error::Model(_))));
        let (line, _, msg) = parse_err("axes x;\nfield u;\nanchor D(u,x,1);\nterm a: u;\nterm a: D(u,x,2);\n");
        assert_eq!(line, 5);
        assert!(msg.contains("duplicate"));
        let (line, column, _) = parse_err("axes x;\nfield u;\nanchor D(u,x,1);\nterm a u;\n");
        assert_eq!((line, column), (4, 8));
        parse_err("axes x;\nfield u;\nfield v;\n");
        parse_err("axes x;\nfield u;\nanchor D(u,x,1);\nanchor u;\n");
        parse_err("axes x;\nfield u;\nexogenous v;\nanchor D(u,x,1);\nterm a: D(v,x,1);\n");
        parse_err("axes x;\nfield u;\nexogenous v;\nanchor D(u,x,1);\nterm a: v;\n");
        parse_err("axes x;\nfield u;\nanchor D(u,x,1.5);\nterm a: u;\n");
        parse_err("axes x;\nfield u;\nanchor D(u,x,1);\nterm a: u;\nforcing y;\n");
        parse_err("axes x;\nfield u;\nanchor D(u,x,1);\nterm a: w;\n");
        parse_err("axes x;\nfield u;\nanchor D(u,x,1);\nbogus a: u;\n");
        parse_err("axes x;\nfield sin;\n");
    }

    fn burgers_setup(nx: usize, nt: usize) -> (ModelSpec, BasisSpec, Grid) {
        let m = parse_model(BURGERS).unwrap();
        let grid = Grid::new(vec![Axis::uniform("x", -1.0, 1.0, nx), Axis::uniform("t", 0.0, 1.0, nt)]).unwrap();
        let mut opts = BasisOptions::default();
        opts.knots.insert("x".into(), 7);
        opts.knots.insert("t".into(), 5);
        let spec = BasisSpec::for_grid(&grid, &m.max_derivs(), &opts).unwrap();
        (m, spec, grid)
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn burgers_matrices_match_definition() {
        let (m, spec, grid) = burgers_setup(9, 6);
        let beta = pseudo_random(spec.coefficient_count(), 3);
        let cm = build_constraint_matrices(&m, &spec, &grid, vec![], &beta).unwrap();
        let b0 = crate::tensor::assemble_grid_matrix(&spec, &grid, &DerivIndex(vec![0, 0])).unwrap();
        let b1 = crate::tensor::assemble_grid_matrix(&spec, &grid, &DerivIndex(vec![1, 0])).unwrap();
        let b2 = crate::tensor::assemble_grid_matrix(&spec, &grid, &DerivIndex(vec![2, 0])).unwrap();
        let bt = crate::tensor::assemble_grid_matrix(&spec, &grid, &DerivIndex(vec![0, 1])).unwrap();
        assert_eq!(cm.a_fixed, bt);
        assert_eq!(cm.a_free[1], b2);
        assert_eq!(cm.a_free[0], b1.scale_rows(&b0.mul_vec(&beta)));
        assert!(cm.forcing.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_matches_pointwise_evaluation() {
        let src = "axes x, t;\nfield u;\nexogenous v;\nanchor D(u,t,1);\nterm a: u*D(u,x,1);\nterm b: D(u,x,2);\nterm c: v*u;\nfixedterm 0.5: u*u*D(u,x,1,t,1)*-2;\nforcing sin(x)*exp(-t);\n";
        let m = parse_model(src).unwrap();
        let grid = Grid::new(vec![Axis::uniform("x", -1.0, 1.0, 8), Axis::uniform("t", 0.0, 2.0, 7)]).unwrap();
        let mut opts = BasisOptions::default();
        opts.knots.insert("x".into(), 6);
        opts.knots.insert("t".into(), 5);
        let spec = BasisSpec::for_grid(&grid, &m.max_derivs(), &opts).unwrap();
        let beta = pseudo_random(spec.coefficient_count(), 11);
        let v = pseudo_random(grid.point_count(), 12);
        let theta = [0.7, -0.2, 1.3];
        let mut avail = BTreeMap::new();
        avail.insert("v".to_string(), v.clone());
        let exo = collect_exogenous(&m, &grid, &avail).unwrap();
        let cm = build_constraint_matrices(&m, &spec, &grid, exo.clone(), &beta).unwrap();
        let got = cm.residual(&beta, &theta);

        let points = grid.points();
        let target = |i: usize, alpha: &DerivIndex| {
            let row = eval_at_points(&spec, &points[i..=i], alpha).unwrap();
            row.mul_vec(&beta)[0]
        };
        let want = m.pointwise_residual(&theta, &points, target, &exo);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10 * (1.0 + w.abs()), "{g} vs {w}");
        }
    }

    #[test]
    fn rebuild_is_idempotent_and_linear_models_ignore_beta() {
        let (m, spec, grid) = burgers_setup(7, 5);
        let builder = ConstraintBuilder::new(&m, &spec, &grid, vec![]).unwrap();
        let beta = pseudo_random(spec.coefficient_count(), 5);
        assert_eq!(builder.build(&beta), builder.build(&beta));

        let lin = parse_model("axes x, t;\nfield u;\nanchor D(u,t,1);\nterm a: D(u,x,1);\nterm b: D(u,x,2);\n").unwrap();
        let lb = ConstraintBuilder::new(&lin, &spec, &grid, vec![]).unwrap();
        assert!(!lb.depends_on_beta());
        let other = pseudo_random(spec.coefficient_count(), 6);
        assert_eq!(lb.build(&beta), lb.build(&other));
    }

    #[test]
    fn exogenous_errors() {
        let m = parse_model("axes x;\nfield u;\nexogenous v;\nanchor D(u,x,1);\nterm a: v*u;\n").unwrap();
        let grid = Grid::new(vec![Axis::uniform("x", 0.0, 1.0, 20)]).unwrap();
        let avail = BTreeMap::new();
        assert!(matches!(collect_exogenous(&m, &grid, &avail), Err(Error::MissingExogenous(n)) if n == "v"));
        let mut avail = BTreeMap::new();
        avail.insert("v".to_string(), vec![0.0; 19]);
        assert!(matches!(collect_exogenous(&m, &grid, &avail), Err(Error::AxisMismatch(_))));
        let spec = BasisSpec::for_grid(&grid, &m.max_derivs(), &BasisOptions::default()).unwrap();
        assert!(matches!(ConstraintBuilder::new(&m, &spec, &grid, vec![]), Err(Error::MissingExogenous(_))));
    }

    #[test]
    fn grid_axes_must_match_model() {
        let (m, spec, _) = burgers_setup(7, 5);
        let swapped = Grid::new(vec![Axis::uniform("t", 0.0, 1.0, 5), Axis::uniform("x", -1.0, 1.0, 7)]).unwrap();
        assert!(matches!(ConstraintBuilder::new(&m, &spec, &swapped, vec![]), Err(Error::AxisMismatch(_))));
    }
}
