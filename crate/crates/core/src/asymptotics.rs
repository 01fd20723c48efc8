//! Asymptotic lower bounds for simplified programs.
//!
//! A rule `f(x⃗) −c→ T [φ]` of a simplified program is turned into a *limit
//! problem*: a set of expressions each annotated with the behaviour it must
//! show along a family of valuations `σ_n` parameterized by `n ∈ ℕ` — grow
//! towards `+∞` (`+`), towards `−∞` (`−`), or converge to a positive (`+!`)
//! or negative (`−!`) constant.  A solution `σ_n` of the problem for the guard
//! conjuncts and `c⁺` proves `rc(‖x⃗σ_n‖) ∈ Ω(cσ_n)`.
//!
//! Problems are solved by a transformation calculus (limit vectors,
//! constant removal, substitution, domination of lower-degree and polynomial
//! summands) searched depth-first with backtracking, and by an encoding into
//! non-linear integer arithmetic with linear templates `x ↦ m_x·n + k_x`.
//! The bound in the input size is finally obtained by composing the growth of
//! the cost with the growth of the size of `x⃗σ_n`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::{Duration, Instant};

use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::arith::{fmt_rat, int, maps_to_int, Atom, Constraint, Expr, Guard, Monomial, Rat, Rel, Subst, Var};
use crate::program::{Program, Rule, RuleId};
use crate::smt::{Formula, Model, Smt, SmtOutcome};

/// Errors of the asymptotic analysis.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsymptoticsError {
    /// `solve_trivial` was called on a non-trivial problem.
    #[error("limit problem is not trivial: {0}")]
    NotTrivial(String),
    /// An expression mentions variables other than the family parameter.
    #[error("expression is not univariate in the family parameter: {0}")]
    NotUnivariate(String),
    /// The size expression is not a polynomial in the family parameter.
    #[error("size expression is not polynomial: {0}")]
    SizeNotPolynomial(String),
}

/// The behaviour required of an expression in a limit problem.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub enum LimitTag {
    /// Grows towards `+∞`.
    Plus,
    /// Grows towards `−∞`.
    Minus,
    /// Converges to a positive constant.
    PlusConst,
    /// Converges to a negative constant.
    MinusConst,
}

impl LimitTag {
    /// All tags in table order.
    pub const ALL: [LimitTag; 4] = [LimitTag::Plus, LimitTag::Minus, LimitTag::PlusConst, LimitTag::MinusConst];

    /// The tag of the negated expression.
    pub fn negate(self) -> LimitTag {
        match self {
            LimitTag::Plus => LimitTag::Minus,
            LimitTag::Minus => LimitTag::Plus,
            LimitTag::PlusConst => LimitTag::MinusConst,
            LimitTag::MinusConst => LimitTag::PlusConst,
        }
    }

    /// Whether the tag demands convergence to a constant.
    pub fn is_const(self) -> bool {
        matches!(self, LimitTag::PlusConst | LimitTag::MinusConst)
    }
}

impl fmt::Display for LimitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimitTag::Plus => "+",
            LimitTag::Minus => "-",
            LimitTag::PlusConst => "+!",
            LimitTag::MinusConst => "-!",
        })
    }
}

/// The tag of a limit-problem entry: fixed, or still open between `+` and `+!`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize)]
pub enum EntryTag {
    /// A committed tag.
    Fixed(LimitTag),
    /// Either `+` or `+!`; committed lazily when a rule needs a specific tag.
    Open,
}

impl EntryTag {
    /// The committed tags this entry tag admits.
    pub fn choices(self) -> Vec<LimitTag> {
        match self {
            EntryTag::Fixed(t) => vec![t],
            EntryTag::Open => vec![LimitTag::Plus, LimitTag::PlusConst],
        }
    }
}

impl fmt::Display for EntryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntryTag::Fixed(t) => write!(f, "{t}"),
            EntryTag::Open => f.write_str("+|+!"),
        }
    }
}

/// A limit problem: a set of annotated expressions.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct LimitProblem {
    entries: BTreeSet<(Expr, EntryTag)>,
}

impl LimitProblem {
    /// The empty problem.
    pub fn new() -> Self {
        LimitProblem::default()
    }

    /// Builds a problem from entries (merging open tags into compatible fixed ones).
    pub fn from_entries(es: impl IntoIterator<Item = (Expr, EntryTag)>) -> Self {
        let mut l = LimitProblem::new();
        for (e, t) in es {
            l.insert(e, t);
        }
        l
    }

    /// Adds an entry.  An open entry is absorbed by a fixed `+` or `+!`
    /// entry on the same expression, and replaced when such an entry arrives.
    pub fn insert(&mut self, e: Expr, t: EntryTag) {
        let compatible = [EntryTag::Fixed(LimitTag::Plus), EntryTag::Fixed(LimitTag::PlusConst)];
        match t {
            EntryTag::Open => {
                if compatible.iter().any(|c| self.entries.contains(&(e.clone(), *c))) {
                    return;
                }
            }
            EntryTag::Fixed(LimitTag::Plus) | EntryTag::Fixed(LimitTag::PlusConst) => {
                self.entries.remove(&(e.clone(), EntryTag::Open));
            }
            _ => {}
        }
        self.entries.insert((e, t));
    }

    /// The entries in canonical order.
    pub fn entries(&self) -> impl Iterator<Item = &(Expr, EntryTag)> {
        self.entries.iter()
    }

    /// Number of entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Whether the problem has no entries.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Variables of all entries.
    pub fn vars(&self) -> BTreeSet<Var> {
        self.entries.iter().flat_map(|(e, _)| e.vars()).collect()
    }

    /// Whether every expression is a polynomial.
    pub fn is_polynomial(&self) -> bool {
        self.entries.iter().all(|(e, _)| e.is_polynomial())
    }

    /// Whether some expression carries two incompatible tags.
    pub fn is_contradictory(&self) -> bool {
        let mut seen: BTreeMap<&Expr, EntryTag> = BTreeMap::new();
        for (e, t) in &self.entries {
            if let Some(prev) = seen.insert(e, *t) {
                if prev != *t {
                    return true;
                }
            }
        }
        false
    }

    /// Whether all expressions are variables and no variable has two tags.
    pub fn is_trivial(&self) -> bool {
        self.entries.iter().all(|(e, _)| e.as_var().is_some()) && !self.is_contradictory()
    }

    /// Applies a substitution to every expression.
    pub fn subst(&self, s: &Subst) -> LimitProblem {
        LimitProblem::from_entries(self.entries.iter().map(|(e, t)| (e.subst(s), *t)))
    }

    fn without(&self, entry: &(Expr, EntryTag)) -> LimitProblem {
        let mut l = self.clone();
        l.entries.remove(entry);
        l
    }
}

impl fmt::Display for LimitProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (e, t)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            if e.as_var().is_some() || e.as_constant().is_some_and(|c| !c.is_negative()) {
                write!(f, "{e}^{t}")?;
            } else {
                write!(f, "({e})^{t}")?;
            }
        }
        f.write_str("}")
    }
}

/// A family of valuations `σ_n`: every variable is bound to an expression in `n`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Family {
    /// The parameter.
    pub n: Var,
    /// Bindings, one per variable of the analysed rule.
    pub map: BTreeMap<Var, Expr>,
}

impl Family {
    /// The parameter variable used by all families.
    pub fn param() -> Var {
        Var::new("n")
    }

    /// An empty family.
    pub fn new() -> Self {
        Family {
            n: Family::param(),
            map: BTreeMap::new(),
        }
    }

    /// The binding of `x` (zero if unbound).
    pub fn get(&self, x: &Var) -> Expr {
        self.map.get(x).cloned().unwrap_or_else(Expr::zero)
    }

    /// The family as a substitution.
    pub fn as_subst(&self) -> Subst {
        self.map.iter().map(|(v, e)| (v.clone(), e.clone())).collect()
    }

    /// `e σ_n`.
    pub fn apply(&self, e: &Expr) -> Expr {
        e.subst(&self.as_subst())
    }

    /// The valuation at a concrete `n`.
    pub fn at(&self, n: &Rat) -> Option<Model> {
        let point: Model = [(self.n.clone(), n.clone())].into_iter().collect();
        self.map
            .iter()
            .map(|(v, e)| e.eval(&point).ok().map(|q| (v.clone(), q)))
            .collect()
    }

    /// Whether every binding is an integer-valued polynomial in `n`.
    pub fn is_integral(&self) -> bool {
        self.map
            .values()
            .all(|e| e.is_polynomial() && maps_to_int(e).unwrap_or(false))
    }
}

impl Default for Family {
    fn default() -> Self {
        Family::new()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.map.is_empty() {
            return f.write_str("(no variables)");
        }
        let parts: Vec<String> = self.map.iter().map(|(v, e)| format!("{v} = {e}")).collect();
        f.write_str(&parts.join(", "))
    }
}

/// Asymptotic classes, totally ordered by growth.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub enum AsymClass {
    /// `Ω(1)`.
    Const,
    /// `Ω(n^q)` for a positive rational `q`.
    Poly(#[serde(serialize_with = "ser_rat")] Rat),
    /// `Ω(e^(n^(1/root)))`: exponential for `root = 1`, sub-exponential otherwise.
    Exp { root: u32 },
    /// `Ω(ω)`: unbounded for bounded input size.
    Unbounded,
}

fn ser_rat<S: serde::Serializer>(q: &Rat, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_rat(q))
}

impl AsymClass {
    /// The exponential class.
    pub fn exp() -> Self {
        AsymClass::Exp { root: 1 }
    }

    /// `Poly(k)` for an integer `k` (`Const` for `k = 0`).
    pub fn poly(k: i64) -> Self {
        if k == 0 {
            AsymClass::Const
        } else {
            AsymClass::Poly(int(k))
        }
    }

    fn key(&self) -> (u8, Rat) {
        match self {
            AsymClass::Const => (0, Rat::zero()),
            AsymClass::Poly(q) => (1, q.clone()),
            AsymClass::Exp { root } => (2, Rat::new(1.into(), (*root).max(1).into())),
            AsymClass::Unbounded => (3, Rat::zero()),
        }
    }
}

impl Ord for AsymClass {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for AsymClass {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for AsymClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AsymClass::Const => f.write_str("Omega(1)"),
            AsymClass::Poly(q) if q.is_one() => f.write_str("Omega(n)"),
            AsymClass::Poly(q) if q.is_integer() => write!(f, "Omega(n^{q})"),
            AsymClass::Poly(q) => write!(f, "Omega(n^({}))", fmt_rat(q)),
            AsymClass::Exp { root: 1 } => f.write_str("EXP"),
            AsymClass::Exp { root } => write!(f, "Omega(e^(n^(1/{root})))"),
            AsymClass::Unbounded => f.write_str("Omega(omega)"),
        }
    }
}

// ---------------------------------------------------------------------------
// Limit vectors
// ---------------------------------------------------------------------------

/// Binary operations covered by the limit-vector table.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub enum LimitOp {
    Add,
    Sub,
    Mul,
}

impl fmt::Display for LimitOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LimitOp::Add => "+",
            LimitOp::Sub => "-",
            LimitOp::Mul => "*",
        })
    }
}

/// The limit behaviour of `op(g, h)` that the limit laws guarantee for every
/// pair of functions with behaviours `a` and `b`, if one is guaranteed.
pub fn combine(op: LimitOp, a: LimitTag, b: LimitTag) -> Option<LimitTag> {
    use LimitTag::*;
    match op {
        LimitOp::Add => match (a, b) {
            (Plus, Plus | PlusConst | MinusConst) | (PlusConst | MinusConst, Plus) => Some(Plus),
            (Minus, Minus | PlusConst | MinusConst) | (PlusConst | MinusConst, Minus) => Some(Minus),
            (PlusConst, PlusConst) => Some(PlusConst),
            (MinusConst, MinusConst) => Some(MinusConst),
            _ => None,
        },
        LimitOp::Sub => combine(LimitOp::Add, a, b.negate()),
        LimitOp::Mul => {
            let positive = matches!(a, Plus | PlusConst) == matches!(b, Plus | PlusConst);
            let infinite = !a.is_const() || !b.is_const();
            Some(match (infinite, positive) {
                (true, true) => Plus,
                (true, false) => Minus,
                (false, true) => PlusConst,
                (false, false) => MinusConst,
            })
        }
    }
}

/// All pairs `(•1, •2)` such that `op(g, h)` has behaviour `target` whenever
/// `g` has behaviour `•1` and `h` has behaviour `•2`, in table order.
pub fn limit_vectors(op: LimitOp, target: LimitTag) -> Vec<(LimitTag, LimitTag)> {
    let mut out = Vec::new();
    for a in LimitTag::ALL {
        for b in LimitTag::ALL {
            if combine(op, a, b) == Some(target) {
                out.push((a, b));
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Problems and trivial solutions
// ---------------------------------------------------------------------------

/// The initial limit problem of a rule: every guard conjunct with an open
/// tag, and the cost with `+` unless it is constant.  Non-strict integer
/// constraints `a ≥ 0` with integral coefficients become `(a + 1)`.
pub fn initial_problem(r: &Rule) -> LimitProblem {
    let mut l = LimitProblem::new();
    for c in r.guard.conjuncts() {
        let e = match c.rel {
            Rel::Gt => c.expr.clone(),
            Rel::Ge if crate::arith::denominator_lcm(&c.expr).is_one() && c.expr.is_polynomial() => {
                &c.expr + &Expr::one()
            }
            Rel::Ge => c.expr.clone(),
        };
        l.insert(e, EntryTag::Open);
    }
    if !r.cost.vars().is_empty() {
        l.insert(r.cost.clone(), EntryTag::Fixed(LimitTag::Plus));
    }
    l
}

/// The canonical solution of a trivial problem: `x ↦ n` for `x⁺` (and open
/// tags), `x ↦ −n` for `x⁻`, `x ↦ 1` for `x^{+!}`, `x ↦ −1` for `x^{−!}`,
/// and `x ↦ 0` for every other variable in `vars`.
pub fn solve_trivial(l: &LimitProblem, vars: &[Var]) -> Result<Family, AsymptoticsError> {
    if !l.is_trivial() {
        return Err(AsymptoticsError::NotTrivial(l.to_string()));
    }
    let n = Expr::from_var(Family::param());
    let mut fam = Family::new();
    for v in vars {
        fam.map.insert(v.clone(), Expr::zero());
    }
    for (e, t) in l.entries() {
        let x = e.as_var().expect("trivial problem");
        let val = match t {
            EntryTag::Open | EntryTag::Fixed(LimitTag::Plus) => n.clone(),
            EntryTag::Fixed(LimitTag::Minus) => -n.clone(),
            EntryTag::Fixed(LimitTag::PlusConst) => Expr::one(),
            EntryTag::Fixed(LimitTag::MinusConst) => Expr::int(-1),
        };
        fam.map.insert(x, val);
    }
    Ok(fam)
}

// ---------------------------------------------------------------------------
// Sampling checks
// ---------------------------------------------------------------------------

/// Values of a univariate expression at sample points: exact for
/// polynomials (`n ∈ {10², 10⁴, 10⁶}`), floating point for exponentials
/// (`n ∈ {10, 20, 40}`).
pub fn sample(e: &Expr, n: &Var) -> Option<[f64; 3]> {
    if e.is_polynomial() {
        let mut out = [0.0; 3];
        for (i, p) in [100i64, 10_000, 1_000_000].iter().enumerate() {
            let m: Model = [(n.clone(), int(*p))].into_iter().collect();
            out[i] = e.eval(&m).ok()?.to_f64()?;
        }
        Some(out)
    } else {
        let mut out = [0.0; 3];
        for (i, p) in [10.0, 20.0, 40.0].iter().enumerate() {
            let m: BTreeMap<Var, f64> = [(n.clone(), *p)].into_iter().collect();
            out[i] = e.eval_f64(&m).ok()?;
        }
        Some(out)
    }
}

/// Whether sampled values exhibit the behaviour of `t`.
pub fn exhibits(vals: [f64; 3], t: LimitTag) -> bool {
    let [a, b, c] = vals;
    let same = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1.0);
    match t {
        LimitTag::Plus => a > 0.0 && a < b && b < c,
        LimitTag::Minus => a < 0.0 && a > b && b > c,
        LimitTag::PlusConst => a > 0.0 && same(a, b) && same(b, c),
        LimitTag::MinusConst => a < 0.0 && same(a, b) && same(b, c),
    }
}

/// Whether the family passes the sampling check for every entry of `l`.
pub fn check_family(l: &LimitProblem, fam: &Family) -> bool {
    l.entries().all(|(e, t)| match sample(&fam.apply(e), &fam.n) {
        Some(v) => t.choices().into_iter().any(|c| exhibits(v, c)),
        None => false,
    })
}

/// Searches `n₀ ≤ 10⁶` (powers of two; at most 64 for exponential guards)
/// such that the guard holds under `σ_n` for `n ∈ {n₀, 2n₀, 10n₀}`.
pub fn guard_eventually(g: &Guard, fam: &Family) -> Option<u64> {
    let exp = g.conjuncts().iter().any(|c| !fam.apply(&c.expr).is_polynomial());
    let cap = if exp { 64 } else { 1_000_000 };
    let holds = |n: u64| -> bool {
        g.conjuncts().iter().all(|c| {
            let e = fam.apply(&c.expr);
            if exp {
                let m: BTreeMap<Var, f64> = [(fam.n.clone(), n as f64)].into_iter().collect();
                match e.eval_f64(&m) {
                    Ok(v) if c.rel == Rel::Gt => v > 0.0,
                    Ok(v) => v >= 0.0,
                    Err(_) => false,
                }
            } else {
                let m: Model = [(fam.n.clone(), Rat::from_integer(n.into()))].into_iter().collect();
                Constraint { expr: e, rel: c.rel }.holds(&m).unwrap_or(false)
            }
        })
    };
    let mut n0 = 1u64;
    while n0 <= cap {
        if holds(n0) && holds(2 * n0) && holds(10 * n0) {
            return Some(n0);
        }
        n0 *= 2;
    }
    None
}

// ---------------------------------------------------------------------------
// Classification and composition
// ---------------------------------------------------------------------------

/// The growth of `cost σ_n`; `Unbounded` when every program variable is
/// constant in the family while the cost is not.
pub fn classify_family(cost: &Expr, fam: &Family, program_vars: &[Var]) -> Result<AsymClass, AsymptoticsError> {
    let c = fam.apply(cost);
    let inner = growth(&c, &fam.n)?;
    let all_const = program_vars.iter().all(|x| fam.get(x).vars().is_empty());
    if all_const && inner != AsymClass::Const {
        return Ok(AsymClass::Unbounded);
    }
    Ok(inner)
}

/// Leading behaviour of a univariate expression in `n`.
pub fn growth(e: &Expr, n: &Var) -> Result<AsymClass, AsymptoticsError> {
    let vars = e.vars();
    if vars.iter().any(|v| v != n) {
        return Err(AsymptoticsError::NotUnivariate(e.to_string()));
    }
    let mut best = AsymClass::Const;
    let mut poly_deg = 0u32;
    let mut poly_lead_positive = true;
    for (m, c) in e.terms() {
        if m.has_pow() {
            let growing = m.factors().any(|(a, _)| match a {
                Atom::Pow { exp, .. } => exp
                    .leading()
                    .is_some_and(|(lm, lc)| !lm.is_one() && lc.is_positive()),
                Atom::Var(_) => false,
            });
            if growing && c.is_positive() {
                best = best.max(AsymClass::exp());
            }
        } else if m.degree() > poly_deg {
            poly_deg = m.degree();
            poly_lead_positive = c.is_positive();
        }
    }
    if best == AsymClass::Const && poly_deg > 0 && poly_lead_positive {
        best = AsymClass::poly(poly_deg as i64);
    }
    Ok(best)
}

/// `‖x⃗ σ_n‖ = Σ |x σ_n|` over the program variables, with each absolute
/// value resolved by the sign of the binding's leading coefficient.
pub fn size_expr(fam: &Family, program_vars: &[Var]) -> Expr {
    let mut out = Expr::zero();
    for x in program_vars {
        let e = fam.get(x);
        let neg = e.leading().is_some_and(|(_, c)| c.is_negative());
        out = if neg { &out - &e } else { &out + &e };
    }
    out
}

/// The bound in the input size: `inner` is the growth of the runtime at
/// size `size(n)`; with `size ∈ Θ(n^d)` the result is `Poly(k/d)`,
/// `Exp{root: d}`, or `Unbounded` for `d = 0`.
pub fn compose_bound(inner: &AsymClass, size: &Expr) -> Result<AsymClass, AsymptoticsError> {
    if !size.is_polynomial() {
        return Err(AsymptoticsError::SizeNotPolynomial(size.to_string()));
    }
    let d = size.total_degree();
    if d == 0 {
        return Ok(if *inner == AsymClass::Const {
            AsymClass::Const
        } else {
            AsymClass::Unbounded
        });
    }
    Ok(match inner {
        AsymClass::Const => AsymClass::Const,
        AsymClass::Poly(k) => AsymClass::Poly(k / Rat::from_integer(d.into())),
        AsymClass::Exp { root } => AsymClass::Exp { root: root * d },
        AsymClass::Unbounded => AsymClass::Unbounded,
    })
}

/// The syntactic ceiling of a cost: `Exp` for costs with exponentials,
/// `Poly(total degree)` otherwise.
pub fn ceiling(cost: &Expr) -> AsymClass {
    if !cost.is_polynomial() {
        AsymClass::exp()
    } else {
        AsymClass::poly(cost.total_degree() as i64)
    }
}

/// The base of the leading exponential of a univariate cost, e.g. `√2` for `2^(1/2*n)`.
pub fn exp_base(e: &Expr, n: &Var) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (m, c) in e.terms() {
        if !c.is_positive() {
            continue;
        }
        for (a, _) in m.factors() {
            if let Atom::Pow { base, exp } = a {
                let slope = exp.linear_coeff(n).to_f64()?;
                if exp.total_degree() == 1 && slope > 0.0 {
                    let b = base.to_f64()?.powf(slope);
                    best = Some(best.map_or(b, |x: f64| x.max(b)));
                }
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// SMT encoding
// ---------------------------------------------------------------------------

fn template_vars(x: &Var) -> (Var, Var) {
    (Var::new(format!("_m_{}", x.name())), Var::new(format!("_k_{}", x.name())))
}

fn smt_param() -> Var {
    Var::new("_n")
}

/// Coefficients `a_0, …, a_d` of `a σ_n` as a polynomial in `n`, where
/// every variable `x` is replaced by `m_x·n + k_x`.
pub fn template_coeffs(a: &Expr) -> Option<Vec<Expr>> {
    let n = Expr::from_var(smt_param());
    let s: Subst = a
        .vars()
        .into_iter()
        .map(|x| {
            let (m, k) = template_vars(&x);
            let e = &(&Expr::from_var(m) * &n) + &Expr::from_var(k);
            (x, e)
        })
        .collect();
    a.subst(&s).coeffs_in(&smt_param())
}

/// `smt(a^•)` over the template coefficients.
pub fn encode_entry(a: &Expr, t: EntryTag) -> Option<Formula> {
    let cs = template_coeffs(a)?;
    let enc = |t: LimitTag| -> Formula {
        match t {
            LimitTag::Plus | LimitTag::Minus => {
                let mut alts = Vec::new();
                for i in 1..cs.len() {
                    let lead = if t == LimitTag::Plus { cs[i].clone() } else { -cs[i].clone() };
                    let mut conj = vec![Formula::gt(lead)];
                    conj.extend(cs[i + 1..].iter().map(|c| Formula::eq0(c.clone())));
                    alts.push(Formula::and(conj));
                }
                Formula::or(alts)
            }
            LimitTag::PlusConst | LimitTag::MinusConst => {
                let c0 = if t == LimitTag::PlusConst { cs[0].clone() } else { -cs[0].clone() };
                let mut conj = vec![Formula::gt(c0)];
                conj.extend(cs[1..].iter().map(|c| Formula::eq0(c.clone())));
                Formula::and(conj)
            }
        }
    };
    Some(match t {
        EntryTag::Fixed(t) => enc(t),
        EntryTag::Open => Formula::or([enc(LimitTag::Plus), enc(LimitTag::PlusConst)]),
    })
}

/// `smt(L)`: the conjunction of all entry encodings.
pub fn encode_problem(l: &LimitProblem) -> Option<Formula> {
    let parts: Option<Vec<Formula>> = l.entries().map(|(e, t)| encode_entry(e, *t)).collect();
    Some(Formula::and(parts?))
}

fn family_from_model(vars: &BTreeSet<Var>, m: &Model) -> Family {
    let n = Expr::from_var(Family::param());
    let mut fam = Family::new();
    for x in vars {
        let (mv, kv) = template_vars(x);
        let mx = m.get(&mv).cloned().unwrap_or_else(Rat::zero);
        let kx = m.get(&kv).cloned().unwrap_or_else(Rat::zero);
        fam.map.insert(x.clone(), &n.scale(&mx) + &Expr::constant(kx));
    }
    fam
}

/// Which encoding produced an SMT solution.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub enum SmtQuery {
    /// All program variables constant (unbounded cost).
    Infinite,
    /// Cost coefficient of `n^i` positive.
    CostDegree(u32),
    /// The plain encoding.
    Plain,
}

impl fmt::Display for SmtQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmtQuery::Infinite => f.write_str("smt_inf"),
            SmtQuery::CostDegree(i) => write!(f, "smt_c,{i}"),
            SmtQuery::Plain => f.write_str("smt"),
        }
    }
}

/// Solves a polynomial limit problem by the SMT encoding.  Queries in order:
/// all program variables constant, then cost coefficient of `n^i` positive
/// for `i` from the cost degree down to 1, then the plain encoding.  The
/// cost (if non-constant) is added with tag `+` to the first two kinds.
pub fn smt_solve(
    smt: &Smt,
    l: &LimitProblem,
    cost: &Expr,
    program_vars: &[Var],
) -> Option<(Family, SmtQuery, Model)> {
    if !l.is_polynomial() || !cost.is_polynomial() {
        return None;
    }
    let base = encode_problem(l)?;
    let mut vars = l.vars();
    vars.extend(cost.vars());
    let mut queries: Vec<(SmtQuery, Formula)> = Vec::new();
    if !cost.vars().is_empty() {
        let cost_plus = encode_entry(cost, EntryTag::Fixed(LimitTag::Plus))?;
        let fixed: Vec<Formula> = program_vars
            .iter()
            .filter(|x| vars.contains(*x))
            .map(|x| Formula::eq0(Expr::from_var(template_vars(x).0)))
            .collect();
        if vars.iter().any(|v| !program_vars.contains(v)) {
            let mut conj = vec![base.clone(), cost_plus.clone()];
            conj.extend(fixed);
            queries.push((SmtQuery::Infinite, Formula::and(conj)));
        }
        let cs = template_coeffs(cost)?;
        for i in (1..cs.len()).rev() {
            let q = Formula::and([base.clone(), cost_plus.clone(), Formula::gt(cs[i].clone())]);
            queries.push((SmtQuery::CostDegree(i as u32), q));
        }
    }
    queries.push((SmtQuery::Plain, base));
    for (kind, f) in queries {
        if let SmtOutcome::Sat(m) = smt.check_sat(&f) {
            return Some((family_from_model(&vars, &m), kind, m));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// The transformation calculus
// ---------------------------------------------------------------------------

/// One transformation step.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Step {
    /// Rule name, e.g. `"(A) * (+, +!)"`.
    pub rule: String,
    /// The successor problem.
    pub problem: LimitProblem,
    /// The substitution applied (empty unless the rule is (C)).
    pub theta: Subst,
}

enum Alt {
    Replace(String, Vec<(Expr, EntryTag)>),
    Theta(String, Subst),
}

fn ground_value(e: &Expr) -> Option<f64> {
    if !e.vars().is_empty() {
        return None;
    }
    match e.as_constant() {
        Some(c) => c.to_f64(),
        None => e.eval_f64(&BTreeMap::new()).ok(),
    }
}

fn tag_fixed(t: LimitTag) -> EntryTag {
    EntryTag::Fixed(t)
}

fn split_vectors(op: LimitOp, t: LimitTag, a: &Expr, b: &Expr) -> Vec<Alt> {
    let sym = if op == LimitOp::Mul { "*" } else { "+" };
    limit_vectors(op, t)
        .into_iter()
        .map(|(t1, t2)| {
            Alt::Replace(
                format!("(A) {sym} ({t1}, {t2})"),
                vec![(a.clone(), tag_fixed(t1)), (b.clone(), tag_fixed(t2))],
            )
        })
        .collect()
}

fn const_thetas(x: &Var, values: &[i64]) -> Vec<Alt> {
    values
        .iter()
        .map(|m| {
            let s: Subst = [(x.clone(), Expr::int(*m))].into_iter().collect();
            Alt::Theta(format!("(C) {{{x}/{m}}}"), s)
        })
        .collect()
}

/// The (priority, alternatives) for expanding one entry with a committed tag;
/// `None` if the entry is a variable.
fn expand_fixed(e: &Expr, t: LimitTag) -> Option<(u8, Vec<Alt>)> {
    if e.as_var().is_some() {
        return None;
    }
    if let Some(v) = ground_value(e) {
        let ok = (t == LimitTag::PlusConst && v > 0.0) || (t == LimitTag::MinusConst && v < 0.0);
        let alts = if ok { vec![Alt::Replace("(B)".into(), vec![])] } else { vec![] };
        return Some((0, alts));
    }
    let vars = e.vars();
    let univariate = vars.len() == 1;
    if e.num_terms() >= 2 {
        if !e.is_polynomial() {
            if let Some(alt) = rule_e(e, t) {
                return Some((2, vec![alt]));
            }
        } else if univariate && matches!(t, LimitTag::Plus | LimitTag::Minus) {
            let d = e.total_degree();
            let top: Expr = e
                .terms()
                .filter(|(m, _)| m.degree() == d)
                .fold(Expr::zero(), |acc, (m, c)| &acc + &Expr::from_term(m.clone(), c.clone()));
            return Some((1, vec![Alt::Replace("(D)".into(), vec![(top, tag_fixed(t))])]));
        } else if univariate {
            let x = vars.iter().next().expect("one variable");
            let m = if t == LimitTag::PlusConst { [1, 2, -1, -2, 0] } else { [-1, -2, 1, 2, 0] };
            return Some((4, const_thetas(x, &m)));
        }
        let (m1, c1) = e.leading().expect("non-empty");
        let first = Expr::from_term(m1.clone(), c1.clone());
        let rest = e - &first;
        let prio = if univariate { 3 } else { 5 };
        return Some((prio, split_vectors(LimitOp::Add, t, &first, &rest)));
    }
    // A single term c·m.
    let (m, c) = e.leading().expect("non-ground single term");
    if !c.is_one() {
        let body = Expr::from_term(m.clone(), Rat::one());
        let t2 = if c.is_positive() { t } else { t.negate() };
        return Some((1, vec![Alt::Replace(format!("(A) * (const, {t2})"), vec![(body, tag_fixed(t2))])]));
    }
    let factors: Vec<(Atom, u32)> = m.factors().map(|(a, k)| (a.clone(), k)).collect();
    if factors.len() == 1 {
        let (a, k) = &factors[0];
        return match a {
            Atom::Var(x) => {
                // x^k with k ≥ 2 = x · x^(k−1).
                let x = Expr::from_var(x.clone());
                let rest = x.pow_u32(k - 1);
                Some((3, split_vectors(LimitOp::Mul, t, &x, &rest)))
            }
            Atom::Pow { .. } => rule_e(e, t).map(|alt| (2, vec![alt])),
        };
    }
    let (a0, k0) = &factors[0];
    let first = a0.to_expr(*k0);
    let rest = factors[1..]
        .iter()
        .fold(Expr::one(), |acc, (a, k)| &acc * &a.to_expr(*k));
    let prio = if univariate { 3 } else { 5 };
    Some((prio, split_vectors(LimitOp::Mul, t, &first, &rest)))
}

/// Rule (E): `(a^c ± b)⁺ ⤳ {(a−1)^{+!}, c⁺}` for a single exponential
/// summand `k·a^c` with `k > 0` and univariate polynomials `b`, `c` over the
/// same variable.
fn rule_e(e: &Expr, t: LimitTag) -> Option<Alt> {
    if t != LimitTag::Plus {
        return None;
    }
    let pow_terms: Vec<(&Monomial, &Rat)> = e.terms().filter(|(m, _)| m.has_pow()).collect();
    if pow_terms.len() != 1 {
        return None;
    }
    let (m, k) = pow_terms[0];
    if !k.is_positive() {
        return None;
    }
    let factors: Vec<(&Atom, u32)> = m.factors().collect();
    let (base, exp) = match factors.as_slice() {
        [(Atom::Pow { base, exp }, 1)] => (base.clone(), (**exp).clone()),
        _ => return None,
    };
    let cvars = exp.vars();
    if cvars.len() != 1 || !exp.is_polynomial() {
        return None;
    }
    let b = e - &Expr::from_term(m.clone(), k.clone());
    if !b.is_polynomial() || !b.vars().is_subset(&cvars) {
        return None;
    }
    let a1 = Expr::constant(base - Rat::one());
    Some(Alt::Replace(
        "(E)".into(),
        vec![(a1, tag_fixed(LimitTag::PlusConst)), (exp, tag_fixed(LimitTag::Plus))],
    ))
}

/// Bound-propagation substitutions: from an open entry `a` (i.e. a guard
/// conjunct `a > 0`), tightened over the integers to `p ≥ 0`, every variable
/// `x` occurring linearly in `p` with coefficient `±1` yields `θ = {x/b}`
/// where `b` is the implied minimal lower (or maximal upper) bound.
pub fn bound_candidates(l: &LimitProblem) -> Vec<Subst> {
    let mut nonconst = Vec::new();
    let mut consts = Vec::new();
    for (e, t) in l.entries() {
        if *t != EntryTag::Open || !e.is_polynomial() || e.vars().is_empty() {
            continue;
        }
        let p = Constraint::gt(e.clone()).tighten_int().expr;
        for x in p.vars() {
            let Some(cs) = p.coeffs_in(&x) else { continue };
            if cs.len() != 2 {
                continue;
            }
            let Some(k) = cs[1].as_constant() else { continue };
            // p = k·x + r ≥ 0.
            let r = &cs[0];
            let bound = if k.is_one() {
                -r.clone()
            } else if k == -Rat::one() {
                r.clone()
            } else {
                continue;
            };
            if !maps_to_int(&bound).unwrap_or(false) {
                continue;
            }
            let s: Subst = [(x.clone(), bound.clone())].into_iter().collect();
            let target = if bound.vars().is_empty() { &mut consts } else { &mut nonconst };
            if !target.contains(&s) {
                target.push(s);
            }
        }
    }
    nonconst.extend(consts);
    nonconst
}

/// All single-step successors of `l`, in priority order: bound-propagation
/// substitutions first, then the alternatives for the highest-priority
/// expandable entry ((B)/(D) and coefficient folding, (E), (A) on
/// univariate entries, (C) with small constants for variables tagged
/// `±!`, (A) on multivariate entries).
pub fn step(l: &LimitProblem) -> Vec<Step> {
    let mut out = Vec::new();
    for theta in bound_candidates(l) {
        out.push(Step {
            rule: format!("(C) {theta}"),
            problem: l.subst(&theta),
            theta,
        });
    }
    out.extend(calculus_steps(l));
    out
}

fn calculus_steps(l: &LimitProblem) -> Vec<Step> {
    let mut best: Option<(u8, &(Expr, EntryTag), Vec<Alt>)> = None;
    for entry in l.entries() {
        let (e, t) = entry;
        let mut prio = u8::MAX;
        let mut alts = Vec::new();
        let mut any = false;
        for c in t.choices() {
            if let Some((p, mut a)) = expand_fixed(e, c) {
                any = true;
                prio = prio.min(p);
                if *t == EntryTag::Open {
                    // Record the commitment in the rule name.
                    for alt in &mut a {
                        if let Alt::Replace(name, _) = alt {
                            *name = format!("{name} [commit {c}]");
                        }
                    }
                }
                alts.extend(a);
            }
        }
        if !any {
            continue;
        }
        if best.as_ref().is_none_or(|(bp, _, _)| prio < *bp) {
            best = Some((prio, entry, alts));
        }
    }
    // (C) with small constants for variables tagged ±! that still occur elsewhere.
    let const_var_prio = 4u8;
    if best.as_ref().is_none_or(|(p, _, _)| *p > const_var_prio) {
        for (e, t) in l.entries() {
            let (Some(x), EntryTag::Fixed(tag)) = (e.as_var(), t) else { continue };
            if !tag.is_const() {
                continue;
            }
            let elsewhere = l.entries().any(|(e2, _)| e2.as_var().is_none() && e2.vars().contains(&x));
            if elsewhere {
                let vals = if *tag == LimitTag::PlusConst { [1, 2] } else { [-1, -2] };
                return materialize(l, None, const_thetas(&x, &vals));
            }
        }
    }
    match best {
        Some((_, entry, alts)) => materialize(l, Some(entry), alts),
        None => Vec::new(),
    }
}

fn materialize(l: &LimitProblem, entry: Option<&(Expr, EntryTag)>, alts: Vec<Alt>) -> Vec<Step> {
    let mut out = Vec::new();
    for alt in alts {
        match alt {
            Alt::Replace(rule, repl) => {
                let mut p = l.without(entry.expect("replacement of an entry"));
                for (e, t) in repl {
                    p.insert(e, t);
                }
                out.push(Step {
                    rule,
                    problem: p,
                    theta: Subst::new(),
                });
            }
            Alt::Theta(rule, theta) => {
                let ok = theta
                    .iter()
                    .all(|(x, b)| !b.vars().contains(x) && maps_to_int(b).unwrap_or(false));
                if ok {
                    out.push(Step {
                        rule,
                        problem: l.subst(&theta),
                        theta,
                    });
                }
            }
        }
    }
    out
}

/// Composes the substitutions of a derivation with the solution of its
/// final problem: `x ↦ x θ₁ ⋯ θ_m σ_n` for every variable in `vars`.
pub fn compose_family(thetas: &[Subst], fam: &Family, vars: &[Var]) -> Family {
    let mut out = Family::new();
    let sigma = fam.as_subst();
    for x in vars {
        let mut e = Expr::from_var(x.clone());
        for th in thetas {
            e = e.subst(th);
        }
        // Variables introduced by θ and unconstrained by the final problem are 0.
        let mut s = sigma.clone();
        for v in e.vars() {
            if s.get(&v).is_none() {
                s.insert(v, Expr::zero());
            }
        }
        out.map.insert(x.clone(), e.subst(&s));
    }
    out
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

/// Budgets and switches of the search.
#[derive(Clone, Debug)]
pub struct SearchConfig {
    /// Maximal derivation length.
    pub depth_cap: usize,
    /// Maximal number of expanded problems.
    pub node_cap: usize,
    /// Maximal number of SMT attempts.
    pub smt_cap: usize,
    /// Whether polynomial problems are handed to the SMT encoding.
    pub use_smt: bool,
    /// Wall-clock budget per rule.
    pub timeout: Duration,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            depth_cap: 12,
            node_cap: 5000,
            smt_cap: 24,
            use_smt: true,
            timeout: Duration::from_secs(10),
        }
    }
}

/// Context of a search: the analysed rule's cost and variables.
#[derive(Clone, Debug)]
pub struct SearchContext<'a> {
    /// The rule's cost.
    pub cost: &'a Expr,
    /// Program variables (the input).
    pub program_vars: &'a [Var],
    /// All variables of the rule (program and temporary).
    pub rule_vars: &'a [Var],
}

/// A found solution.
#[derive(Clone, Debug)]
pub struct Solution {
    /// The family over all rule variables.
    pub family: Family,
    /// Growth of `cost σ_n` (before composing with the input size).
    pub inner: AsymClass,
    /// The bound in the input size.
    pub class: AsymClass,
    /// The derivation: one line per step.
    pub derivation: Vec<String>,
    /// Substitutions applied by (C), in order.
    pub thetas: Vec<Subst>,
    /// The SMT query and model, if the final problem was solved by SMT.
    pub smt: Option<(SmtQuery, Model)>,
}

struct Node {
    problem: LimitProblem,
    thetas: Vec<Subst>,
    trace: Vec<String>,
    depth: usize,
}

/// Depth-first search for a solution of `l0`, returning the best one found
/// (by the composed class).  The search stops early once the growth of the
/// cost reaches its syntactic ceiling or the bound is unbounded.
pub fn search(smt: &Smt, l0: &LimitProblem, ctx: &SearchContext<'_>, cfg: &SearchConfig) -> Option<Solution> {
    let deadline = Instant::now() + cfg.timeout;
    let top = ceiling(ctx.cost);
    let mut best: Option<Solution> = None;
    let mut stack = vec![Node {
        problem: l0.clone(),
        thetas: vec![],
        trace: vec![l0.to_string()],
        depth: 0,
    }];
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut nodes = 0usize;
    let mut smt_calls = 0usize;

    // Records a candidate; returns true when the search may stop.
    let record = |best: &mut Option<Solution>, node: &Node, fam: Family, smt_info: Option<(SmtQuery, Model)>| -> bool {
        let family = compose_family(&node.thetas, &fam, ctx.rule_vars);
        if !family.is_integral() {
            return false;
        }
        let Ok(inner) = classify_family(ctx.cost, &family, ctx.program_vars) else {
            return false;
        };
        let Ok(class) = compose_bound(&inner, &size_expr(&family, ctx.program_vars)) else {
            return false;
        };
        let mut derivation = node.trace.clone();
        if let Some((q, m)) = &smt_info {
            derivation.push(format!("solved by {q} with model {}", crate::smt::fmt_model(m)));
        } else {
            derivation.push(format!("trivial: {}", fam));
        }
        let done = inner >= top || class == AsymClass::Unbounded;
        if best.as_ref().is_none_or(|b| class > b.class) {
            *best = Some(Solution {
                family,
                inner,
                class,
                derivation,
                thetas: node.thetas.clone(),
                smt: smt_info,
            });
        }
        done
    };

    while let Some(node) = stack.pop() {
        nodes += 1;
        if nodes > cfg.node_cap || Instant::now() > deadline {
            break;
        }
        let key = format!("{} | {:?}", node.problem, node.thetas.iter().map(|t| t.to_string()).collect::<Vec<_>>());
        if !seen.insert(key) || node.problem.is_contradictory() {
            continue;
        }
        if node.problem.is_trivial() {
            let fam = solve_trivial(&node.problem, &[]).expect("trivial");
            if record(&mut best, &node, fam, None) {
                break;
            }
            // Alternative: commit every open variable to a constant.
            let open: Vec<Expr> = node
                .problem
                .entries()
                .filter(|(_, t)| *t == EntryTag::Open)
                .map(|(e, _)| e.clone())
                .collect();
            if !open.is_empty() {
                let mut p = node.problem.clone();
                for e in open {
                    p.insert(e, EntryTag::Fixed(LimitTag::PlusConst));
                }
                let mut trace = node.trace.clone();
                trace.push(format!("commit +! ⤳ {p}"));
                stack.push(Node {
                    problem: p,
                    thetas: node.thetas.clone(),
                    trace,
                    depth: node.depth + 1,
                });
            }
            continue;
        }
        if cfg.use_smt && smt_calls < cfg.smt_cap && node.problem.is_polynomial() {
            smt_calls += 1;
            let cost = node.thetas.iter().fold(ctx.cost.clone(), |c, th| c.subst(th));
            let pvars: Vec<Var> = ctx
                .program_vars
                .iter()
                .filter(|x| !node.thetas.iter().any(|th| th.get(x).is_some()))
                .cloned()
                .collect();
            if let Some((fam, q, m)) = smt_solve(smt, &node.problem, &cost, &pvars) {
                if record(&mut best, &node, fam, Some((q, m))) {
                    break;
                }
            }
        }
        if node.depth >= cfg.depth_cap {
            continue;
        }
        let steps = step(&node.problem);
        for s in steps.into_iter().rev() {
            let mut thetas = node.thetas.clone();
            if !s.theta.is_empty() {
                thetas.push(s.theta.clone());
            }
            let mut trace = node.trace.clone();
            trace.push(format!("⤳ {} by {}", s.problem, s.rule));
            stack.push(Node {
                problem: s.problem,
                thetas,
                trace,
                depth: node.depth + 1,
            });
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Whole programs
// ---------------------------------------------------------------------------

/// The result of the asymptotic analysis of a simplified program.
#[derive(Clone, Debug)]
pub struct BoundResult {
    /// The asymptotic lower bound.
    pub class: AsymClass,
    /// The witnessing rule, if any.
    pub rule: Option<RuleId>,
    /// Its cost (the concrete lower bound).
    pub cost: Expr,
    /// Its guard.
    pub guard: Guard,
    /// The witnessing family, if a limit problem was solved.
    pub family: Option<Family>,
    /// The derivation or SMT model.
    pub derivation: Vec<String>,
    /// For exponential bounds, the base of the leading exponential of `cost σ_n`.
    pub exp_base: Option<f64>,
}

impl BoundResult {
    /// The fallback result `Ω(1)` without a witness.
    pub fn constant() -> Self {
        BoundResult {
            class: AsymClass::Const,
            rule: None,
            cost: Expr::zero(),
            guard: Guard::truth(),
            family: None,
            derivation: vec![],
            exp_base: None,
        }
    }

    /// The witness family restricted to the given program variables, e.g. `x = n, y = 0`.
    pub fn witness(&self, program_vars: &[Var]) -> String {
        match &self.family {
            None => String::new(),
            Some(f) => program_vars
                .iter()
                .map(|x| format!("{x} = {}", f.get(x)))
                .collect::<Vec<_>>()
                .join(", "),
        }
    }
}

/// Analyses one rule of a simplified program.
pub fn analyze_rule(smt: &Smt, r: &Rule, program_vars: &[Var], cfg: &SearchConfig) -> Option<BoundResult> {
    let l0 = initial_problem(r);
    let mut rule_vars: Vec<Var> = program_vars.to_vec();
    for v in r.vars() {
        if !rule_vars.contains(&v) {
            rule_vars.push(v);
        }
    }
    let ctx = SearchContext {
        cost: &r.cost,
        program_vars,
        rule_vars: &rule_vars,
    };
    let sol = search(smt, &l0, &ctx, cfg)?;
    let base = if matches!(sol.class, AsymClass::Exp { root: 1 }) {
        exp_base(&sol.family.apply(&r.cost), &sol.family.n)
    } else {
        None
    };
    Some(BoundResult {
        class: sol.class,
        rule: Some(r.id),
        cost: r.cost.clone(),
        guard: r.guard.clone(),
        family: Some(sol.family),
        derivation: sol.derivation,
        exp_base: base,
    })
}

/// The best bound over all rules of a simplified program (ties: first rule).
pub fn best_bound(smt: &Smt, p: &Program, cfg: &SearchConfig) -> BoundResult {
    let mut best: Option<BoundResult> = None;
    for r in p.rules() {
        if let Some(res) = analyze_rule(smt, r, &p.vars, cfg) {
            if best.as_ref().is_none_or(|b| res.class > b.class) {
                best = Some(res);
            }
        }
    }
    best.unwrap_or_else(BoundResult::constant)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(s: &str) -> Var {
        Var::new(s)
    }

    fn e(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    #[test]
    fn trivial_solution() {
        let l = LimitProblem::from_entries([
            (e("x"), EntryTag::Fixed(LimitTag::Plus)),
            (e("y"), EntryTag::Fixed(LimitTag::MinusConst)),
        ]);
        let fam = solve_trivial(&l, &[v("x"), v("y"), v("tv")]).unwrap();
        assert_eq!(fam.to_string(), "tv = 0, x = n, y = -1");
        assert!(check_family(&l, &fam));
    }

    #[test]
    fn open_tags_merge() {
        let l = LimitProblem::from_entries([
            (e("x"), EntryTag::Open),
            (e("x"), EntryTag::Fixed(LimitTag::Plus)),
        ]);
        assert_eq!(l.len(), 1);
        assert!(l.is_trivial());
        let l = LimitProblem::from_entries([
            (e("x"), EntryTag::Open),
            (e("x"), EntryTag::Fixed(LimitTag::Minus)),
        ]);
        assert!(l.is_contradictory());
    }

    #[test]
    fn rule_d_then_a() {
        let l = LimitProblem::from_entries([(e("x^2 - x"), EntryTag::Fixed(LimitTag::Plus))]);
        let s = step(&l);
        assert_eq!(s[0].problem.to_string(), "{(x^2)^+}");
        let s2 = step(&s[0].problem);
        assert_eq!(s2[0].problem.to_string(), "{x^+}");
    }

    #[test]
    fn rule_e_on_fib_cost() {
        let l = LimitProblem::from_entries([(e("2^(1/2*x - 1) - 1"), EntryTag::Fixed(LimitTag::Plus))]);
        let s = calculus_steps(&l);
        assert_eq!(s[0].rule, "(E)");
        assert!(s[0].problem.to_string().contains("(1/2*x)^+"), "{}", s[0].problem);
    }

    #[test]
    fn bound_propagation_sqrt_and_rational() {
        let l = LimitProblem::from_entries([(e("x - y^2"), EntryTag::Open)]);
        let c = bound_candidates(&l);
        assert_eq!(c[0].to_string(), "{x/y^2 + 1}");
        let l = LimitProblem::from_entries([(e("1/2*x + 1 - tv"), EntryTag::Open)]);
        let c: Vec<String> = bound_candidates(&l).iter().map(|s| s.to_string()).collect();
        assert!(c.contains(&"{x/2*tv - 1}".to_string()), "{c:?}");
    }

    #[test]
    fn composition_cases() {
        let n = e("n");
        assert_eq!(compose_bound(&AsymClass::poly(4), &n).unwrap(), AsymClass::poly(4));
        assert_eq!(
            compose_bound(&AsymClass::poly(1), &e("n^2 + 1 + n")).unwrap(),
            AsymClass::Poly(crate::arith::rat(1, 2))
        );
        assert_eq!(
            compose_bound(&AsymClass::exp(), &e("n^2 + n + 1")).unwrap(),
            AsymClass::Exp { root: 2 }
        );
        assert_eq!(compose_bound(&AsymClass::poly(1), &e("2")).unwrap(), AsymClass::Unbounded);
        assert!(compose_bound(&AsymClass::poly(1), &e("2^n")).is_err());
    }

    #[test]
    fn class_order_and_display() {
        let mut cs = vec![
            AsymClass::Unbounded,
            AsymClass::exp(),
            AsymClass::Exp { root: 2 },
            AsymClass::Poly(crate::arith::rat(1, 2)),
            AsymClass::poly(2),
            AsymClass::Const,
        ];
        cs.sort();
        let shown: Vec<String> = cs.iter().map(|c| c.to_string()).collect();
        assert_eq!(
            shown,
            ["Omega(1)", "Omega(n^(1/2))", "Omega(n^2)", "Omega(e^(n^(1/2)))", "EXP", "Omega(omega)"]
        );
    }

    #[test]
    fn growth_classification() {
        let n = v("n");
        assert_eq!(growth(&e("1/8*n^4 + 1/4*n^3 + 7/8*n^2 + 7/4*n"), &n).unwrap(), AsymClass::poly(4));
        assert_eq!(growth(&e("2^(1/2*n - 1) - 1"), &n).unwrap(), AsymClass::exp());
        assert_eq!(growth(&e("3"), &n).unwrap(), AsymClass::Const);
        assert!(growth(&e("x + n"), &n).is_err());
        let b = exp_base(&e("2^(1/2*n - 1) - 1"), &n).unwrap();
        assert!((b - 2f64.sqrt()).abs() < 1e-9);
    }
}
