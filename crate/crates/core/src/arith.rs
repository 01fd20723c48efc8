//! Exact symbolic arithmetic: canonical expressions, constraints, guards and
//! substitutions over rational numbers.
//!
//! Every [`Expr`] is kept in a canonical form: a finite map from monomials to
//! non-zero rational coefficients.  A monomial is a product of *atoms*, where
//! an atom is either a variable (raised to a positive integer power) or an
//! exponential `r^e` with a rational base `r > 1` and a non-constant exponent
//! `e`.  Integer parts of constant exponent offsets are pulled into the
//! coefficient (`2^(x - 1)` is stored as `1/2 * 2^x`), so structural equality
//! coincides with semantic equality on the polynomial fragment and is stable
//! for exponentials with equal bases.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact rational number used for every coefficient.
pub type Rat = BigRational;

/// Builds the rational `n / d`.
///
/// # Panics
/// Panics if `d == 0`.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Builds the integer `n` as a rational.
pub fn int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Renders a rational as `p` or `p/q`.
pub fn fmt_rat(q: &Rat) -> String {
    if q.is_integer() {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

/// Least common multiple of all coefficient denominators of `e`.
pub fn denominator_lcm(e: &Expr) -> BigInt {
    e.terms
        .values()
        .fold(BigInt::one(), |acc, c| acc.lcm(c.denom()))
}

/// Errors raised by arithmetic operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArithError {
    /// An exponent evaluated to a non-integer value.
    #[error("exponent evaluates to the non-integer {0}")]
    NonIntegerExponent(String),
    /// An exponent evaluated to a negative value.
    #[error("exponent evaluates to the negative value {0}")]
    NegativeExponent(String),
    /// A variable was not bound by the valuation.
    #[error("variable `{0}` is not bound")]
    Unbound(String),
    /// The operation requires an exponential-free expression.
    #[error("expression `{0}` is not a polynomial")]
    NotPolynomial(String),
    /// A power whose base/exponent combination is outside the supported fragment.
    #[error("unsupported power: {0}")]
    UnsupportedPower(String),
    /// Division by zero or by a non-constant expression.
    #[error("unsupported division: {0}")]
    UnsupportedDivision(String),
    /// Textual expression could not be parsed.
    #[error("parse error at offset {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// A variable, identified by its name.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Var(pub String);

impl Var {
    /// Creates a variable with the given name.
    pub fn new(name: impl Into<String>) -> Self {
        Var(name.into())
    }

    /// The variable's name.
    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Var {
    fn from(s: &str) -> Self {
        Var::new(s)
    }
}

/// Generates a variable name with the given prefix that is not in `taken`.
pub fn fresh_var(prefix: &str, taken: &BTreeSet<Var>) -> Var {
    let mut i = 1usize;
    loop {
        let v = Var(format!("{prefix}{i}"));
        if !taken.contains(&v) {
            return v;
        }
        i += 1;
    }
}

/// A factor of a monomial.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Atom {
    /// A variable.
    Var(Var),
    /// `base^exp` with `base > 1` and an exponent whose constant part lies in `[0, 1)`.
    Pow { base: Rat, exp: Box<Expr> },
}

impl Atom {
    /// The expression `self^k`.
    pub fn to_expr(&self, k: u32) -> Expr {
        match self {
            Atom::Var(v) => Expr::from_var(v.clone()).pow_u32(k),
            Atom::Pow { base, exp } => make_exp(base, exp).expect("positive base").pow_u32(k),
        }
    }
}

/// A product of atoms with positive exponents (exponentials always carry exponent 1).
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub struct Monomial(BTreeMap<Atom, u32>);

impl Monomial {
    /// The empty product `1`.
    pub fn one() -> Self {
        Monomial(BTreeMap::new())
    }

    /// The monomial `v^1`.
    pub fn var(v: Var) -> Self {
        let mut m = BTreeMap::new();
        m.insert(Atom::Var(v), 1);
        Monomial(m)
    }

    /// Iterates over `(atom, exponent)` pairs in ascending atom order.
    pub fn factors(&self) -> impl Iterator<Item = (&Atom, u32)> {
        self.0.iter().map(|(a, e)| (a, *e))
    }

    /// Sum of all exponents (exponential atoms count once).
    pub fn degree(&self) -> u32 {
        self.0.values().sum()
    }

    /// Whether the monomial contains an exponential atom.
    pub fn has_pow(&self) -> bool {
        self.0.keys().any(|a| matches!(a, Atom::Pow { .. }))
    }

    /// Exponent of variable `v` in this monomial.
    pub fn var_exp(&self, v: &Var) -> u32 {
        self.0.get(&Atom::Var(v.clone())).copied().unwrap_or(0)
    }

    /// Splits into the polynomial part and the exponential part.
    pub fn split_pow(&self) -> (Monomial, Monomial) {
        let mut poly = BTreeMap::new();
        let mut pows = BTreeMap::new();
        for (a, e) in &self.0 {
            match a {
                Atom::Var(_) => poly.insert(a.clone(), *e),
                Atom::Pow { .. } => pows.insert(a.clone(), *e),
            };
        }
        (Monomial(poly), Monomial(pows))
    }

    /// Whether this is the constant monomial.
    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }
}

impl Ord for Monomial {
    /// Graded lexicographic order: higher total degree is larger; ties are
    /// broken by the exponent of the smallest atom where the two differ.
    fn cmp(&self, other: &Self) -> Ordering {
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            o => return o,
        }
        let mut a = self.0.iter().peekable();
        let mut b = other.0.iter().peekable();
        loop {
            match (a.peek(), b.peek()) {
                (None, None) => return Ordering::Equal,
                (Some(_), None) => return Ordering::Greater,
                (None, Some(_)) => return Ordering::Less,
                (Some((ka, ea)), Some((kb, eb))) => match ka.cmp(kb) {
                    Ordering::Less => return Ordering::Greater,
                    Ordering::Greater => return Ordering::Less,
                    Ordering::Equal => {
                        match ea.cmp(eb) {
                            Ordering::Equal => {}
                            o => return o,
                        }
                        a.next();
                        b.next();
                    }
                },
            }
        }
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A canonical arithmetic expression: a sum of monomials with rational coefficients.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Expr {
    terms: BTreeMap<Monomial, Rat>,
}

/// Builds the exponential `base^exp` in canonical form (returned as a full expression,
/// because integer parts of the exponent become a coefficient).
fn make_exp(base: &Rat, exp: &Expr) -> Result<Expr, ArithError> {
    if !base.is_positive() {
        return Err(ArithError::UnsupportedPower(format!(
            "base {} must be positive for a symbolic exponent",
            fmt_rat(base)
        )));
    }
    if base.is_one() {
        return Ok(Expr::one());
    }
    let (base, exp) = if *base < Rat::one() {
        (base.recip(), -exp.clone())
    } else {
        (base.clone(), exp.clone())
    };
    let c = exp.constant_part();
    let k = c.floor();
    let rest = &exp - &Expr::constant(k.clone());
    let kk = k.to_integer();
    let coef = pow_rat_int(&base, &kk);
    if rest.is_zero() {
        return Ok(Expr::constant(coef));
    }
    let mut m = BTreeMap::new();
    m.insert(
        Atom::Pow {
            base,
            exp: Box::new(rest),
        },
        1,
    );
    let mut terms = BTreeMap::new();
    terms.insert(Monomial(m), coef);
    Ok(Expr { terms })
}

fn pow_rat_int(base: &Rat, k: &BigInt) -> Rat {
    let n = k.abs().to_u32().expect("exponent too large");
    let p = num_traits::pow(base.clone(), n as usize);
    if k.is_negative() {
        p.recip()
    } else {
        p
    }
}

/// Multiplies two monomials, merging exponentials with equal bases.
fn mul_mono(a: &Monomial, b: &Monomial) -> Expr {
    let mut atoms = a.0.clone();
    let mut pows: Vec<(Rat, Expr)> = Vec::new();
    for (atom, e) in &b.0 {
        match atom {
            Atom::Var(_) => *atoms.entry(atom.clone()).or_insert(0) += e,
            Atom::Pow { base, exp } => {
                let existing = atoms
                    .keys()
                    .find(|k| matches!(k, Atom::Pow { base: b2, .. } if b2 == base))
                    .cloned();
                match existing {
                    Some(Atom::Pow { base: b2, exp: e2 }) => {
                        atoms.remove(&Atom::Pow {
                            base: b2.clone(),
                            exp: e2.clone(),
                        });
                        pows.push((b2, &*e2 + &**exp));
                    }
                    _ => {
                        atoms.insert(atom.clone(), 1);
                    }
                }
            }
        }
    }
    let mut out = Expr {
        terms: BTreeMap::from([(Monomial(atoms), Rat::one())]),
    };
    for (base, exp) in pows {
        out = &out * &make_exp(&base, &exp).expect("positive base");
    }
    out
}

impl Expr {
    /// The constant `0`.
    pub fn zero() -> Self {
        Expr::default()
    }

    /// The constant `1`.
    pub fn one() -> Self {
        Expr::constant(Rat::one())
    }

    /// A rational constant.
    pub fn constant(q: Rat) -> Self {
        let mut terms = BTreeMap::new();
        if !q.is_zero() {
            terms.insert(Monomial::one(), q);
        }
        Expr { terms }
    }

    /// An integer constant.
    pub fn int(n: i64) -> Self {
        Expr::constant(int(n))
    }

    /// A rational constant `n / d`.
    pub fn rat(n: i64, d: i64) -> Self {
        Expr::constant(rat(n, d))
    }

    /// A variable.
    pub fn var(v: impl Into<String>) -> Self {
        Expr::from_var(Var::new(v))
    }

    /// A variable given as a [`Var`].
    pub fn from_var(v: Var) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(Monomial::var(v), Rat::one());
        Expr { terms }
    }

    /// Builds `coef * mono`.
    pub fn from_term(mono: Monomial, coef: Rat) -> Self {
        let mut terms = BTreeMap::new();
        if !coef.is_zero() {
            terms.insert(mono, coef);
        }
        Expr { terms }
    }

    /// The exponential `base^exp` for a positive rational base.
    pub fn exp(base: Rat, exp: &Expr) -> Result<Self, ArithError> {
        make_exp(&base, exp)
    }

    /// General power `base^exp`.
    ///
    /// Supported: non-negative integer constant exponents (any base), negative
    /// integer exponents of non-zero constants, and symbolic exponents over a
    /// positive constant base.
    pub fn pow(base: &Expr, exp: &Expr) -> Result<Self, ArithError> {
        if let Some(k) = exp.as_constant() {
            if k.is_integer() {
                let ki = k.to_integer();
                if !ki.is_negative() {
                    let n = ki.to_u32().ok_or_else(|| {
                        ArithError::UnsupportedPower("exponent too large".into())
                    })?;
                    return Ok(base.pow_u32(n));
                }
                if let Some(b) = base.as_constant() {
                    if b.is_zero() {
                        return Err(ArithError::UnsupportedDivision("0^negative".into()));
                    }
                    return Ok(Expr::constant(pow_rat_int(&b, &ki)));
                }
                return Err(ArithError::NegativeExponent(fmt_rat(&k)));
            }
        }
        match base.as_constant() {
            Some(b) if b.is_positive() => make_exp(&b, exp),
            _ => Err(ArithError::UnsupportedPower(format!("({base})^({exp})"))),
        }
    }

    /// `self^n` for a natural number `n`.
    pub fn pow_u32(&self, n: u32) -> Self {
        let mut acc = Expr::one();
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    /// Multiplies by a rational constant.
    pub fn scale(&self, q: &Rat) -> Self {
        if q.is_zero() {
            return Expr::zero();
        }
        Expr {
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), c * q))
                .collect(),
        }
    }

    /// Whether this is the constant `0`.
    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// The value if this expression is a constant.
    pub fn as_constant(&self) -> Option<Rat> {
        match self.terms.len() {
            0 => Some(Rat::zero()),
            1 => {
                let (m, c) = self.terms.iter().next().unwrap();
                m.is_one().then(|| c.clone())
            }
            _ => None,
        }
    }

    /// The variable if this expression is exactly a single variable.
    pub fn as_var(&self) -> Option<Var> {
        if self.terms.len() != 1 {
            return None;
        }
        let (m, c) = self.terms.iter().next().unwrap();
        if !c.is_one() || m.0.len() != 1 {
            return None;
        }
        match m.0.iter().next().unwrap() {
            (Atom::Var(v), 1) => Some(v.clone()),
            _ => None,
        }
    }

    /// The constant term.
    pub fn constant_part(&self) -> Rat {
        self.terms
            .get(&Monomial::one())
            .cloned()
            .unwrap_or_else(Rat::zero)
    }

    /// Iterates over `(monomial, coefficient)` pairs in ascending monomial order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &Rat)> {
        self.terms.iter()
    }

    /// Number of monomials.
    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// All variables, including those occurring in exponents.
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        for m in self.terms.keys() {
            for a in m.0.keys() {
                match a {
                    Atom::Var(v) => {
                        out.insert(v.clone());
                    }
                    Atom::Pow { exp, .. } => exp.collect_vars(out),
                }
            }
        }
    }

    /// Whether no exponential atom occurs.
    pub fn is_polynomial(&self) -> bool {
        self.terms.keys().all(|m| !m.has_pow())
    }

    /// Whether the expression is a polynomial of total degree at most one.
    pub fn is_linear(&self) -> bool {
        self.terms.keys().all(|m| !m.has_pow() && m.degree() <= 1)
    }

    /// Total degree of a polynomial (exponential atoms count as degree one).
    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    /// Coefficient of the linear monomial `v` (zero if absent).
    pub fn linear_coeff(&self, v: &Var) -> Rat {
        self.terms
            .get(&Monomial::var(v.clone()))
            .cloned()
            .unwrap_or_else(Rat::zero)
    }

    /// The leading monomial (largest in graded lexicographic order) and its coefficient.
    pub fn leading(&self) -> Option<(&Monomial, &Rat)> {
        self.terms.iter().next_back()
    }

    /// Views the expression as a polynomial in `x`: returns coefficients
    /// `c_0, …, c_d` (free of `x`) with `self = Σ c_i x^i`.  Fails when `x`
    /// occurs inside an exponential.
    pub fn coeffs_in(&self, x: &Var) -> Option<Vec<Expr>> {
        let mut out: Vec<Expr> = Vec::new();
        for (m, c) in &self.terms {
            let mut rest = BTreeMap::new();
            let mut k = 0u32;
            for (a, e) in &m.0 {
                match a {
                    Atom::Var(v) if v == x => k = *e,
                    Atom::Pow { exp, .. } if exp.vars().contains(x) => return None,
                    _ => {
                        rest.insert(a.clone(), *e);
                    }
                }
            }
            let k = k as usize;
            if out.len() <= k {
                out.resize(k + 1, Expr::zero());
            }
            out[k] = &out[k] + &Expr::from_term(Monomial(rest), c.clone());
        }
        if out.is_empty() {
            out.push(Expr::zero());
        }
        Some(out)
    }

    /// Applies a substitution simultaneously and re-canonicalizes.
    pub fn subst(&self, s: &Subst) -> Expr {
        if s.is_empty() {
            return self.clone();
        }
        let mut acc = Expr::zero();
        for (m, c) in &self.terms {
            let mut t = Expr::constant(c.clone());
            for (a, e) in &m.0 {
                let img = match a {
                    Atom::Var(v) => match s.get(v) {
                        Some(img) => img.pow_u32(*e),
                        None => Expr::from_term(
                            Monomial(BTreeMap::from([(a.clone(), *e)])),
                            Rat::one(),
                        ),
                    },
                    Atom::Pow { base, exp } => {
                        make_exp(base, &exp.subst(s)).expect("positive base")
                    }
                };
                t = &t * &img;
            }
            acc = &acc + &t;
        }
        acc
    }

    /// Evaluates the expression exactly under a valuation.
    pub fn eval(&self, v: &BTreeMap<Var, Rat>) -> Result<Rat, ArithError> {
        let mut acc = Rat::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (a, e) in &m.0 {
                let val = match a {
                    Atom::Var(x) => {
                        let base = v.get(x).ok_or_else(|| ArithError::Unbound(x.0.clone()))?;
                        num_traits::pow(base.clone(), *e as usize)
                    }
                    Atom::Pow { base, exp } => {
                        let k = exp.eval(v)?;
                        if !k.is_integer() {
                            return Err(ArithError::NonIntegerExponent(fmt_rat(&k)));
                        }
                        if k.is_negative() {
                            return Err(ArithError::NegativeExponent(fmt_rat(&k)));
                        }
                        pow_rat_int(base, &k.to_integer())
                    }
                };
                t *= val;
            }
            acc += t;
        }
        Ok(acc)
    }

    /// Approximate floating-point evaluation (exponents may be non-integer).
    pub fn eval_f64(&self, v: &BTreeMap<Var, f64>) -> Result<f64, ArithError> {
        let mut acc = 0.0;
        for (m, c) in &self.terms {
            let mut t = c.to_f64().unwrap_or(f64::NAN);
            for (a, e) in &m.0 {
                let val = match a {
                    Atom::Var(x) => v
                        .get(x)
                        .ok_or_else(|| ArithError::Unbound(x.0.clone()))?
                        .powi(*e as i32),
                    Atom::Pow { base, exp } => {
                        base.to_f64().unwrap_or(f64::NAN).powf(exp.eval_f64(v)?)
                    }
                };
                t *= val;
            }
            acc += t;
        }
        Ok(acc)
    }

    /// Renames variables (a substitution by variables).
    pub fn rename(&self, m: &BTreeMap<Var, Var>) -> Expr {
        let s: Subst = m
            .iter()
            .map(|(a, b)| (a.clone(), Expr::from_var(b.clone())))
            .collect();
        self.subst(&s)
    }

    /// Parses an expression in the printing grammar (`+ - * / ^`, parentheses,
    /// integers, identifiers).  Division is only allowed by non-zero constants.
    pub fn parse(src: &str) -> Result<Expr, ArithError> {
        let mut p = ExprParser::new(src);
        let e = p.parse_sum()?;
        p.skip_ws();
        if p.pos < p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let mut first = true;
        for (m, c) in self.terms.iter().rev() {
            let neg = c.is_negative();
            let mag = c.abs();
            if first {
                if neg {
                    f.write_str("-")?;
                }
            } else if neg {
                f.write_str(" - ")?;
            } else {
                f.write_str(" + ")?;
            }
            first = false;
            f.write_str(&fmt_term(m, &mag))?;
        }
        Ok(())
    }
}

/// Renders `mag * m` for a positive magnitude.
fn fmt_term(m: &Monomial, mag: &Rat) -> String {
    if m.is_one() {
        return fmt_rat(mag);
    }
    let mut coef = mag.clone();
    let mut factors = Vec::new();
    for (a, e) in &m.0 {
        match a {
            Atom::Var(v) => {
                if *e == 1 {
                    factors.push(v.0.clone());
                } else {
                    factors.push(format!("{}^{}", v.0, e));
                }
            }
            Atom::Pow { base, exp } => {
                // Absorb a coefficient that is an integral power of the base.
                let mut exp = (**exp).clone();
                if let Some(k) = integral_log(base, &coef) {
                    if k != 0 {
                        coef = Rat::one();
                        exp = &exp + &Expr::int(k);
                    }
                }
                let b = if base.is_integer() {
                    fmt_rat(base)
                } else {
                    format!("({})", fmt_rat(base))
                };
                let e_str = if exp.as_var().is_some()
                    || exp.as_constant().is_some_and(|c| c.is_integer() && !c.is_negative())
                {
                    exp.to_string()
                } else {
                    format!("({exp})")
                };
                factors.push(format!("{b}^{e_str}"));
            }
        }
    }
    let body = factors.join("*");
    if coef.is_one() {
        body
    } else {
        format!("{}*{}", fmt_rat(&coef), body)
    }
}

/// Returns `k` with `base^k == q` for small integers `k`.
fn integral_log(base: &Rat, q: &Rat) -> Option<i64> {
    if q.is_one() {
        return Some(0);
    }
    let (mut p, step) = if q > &Rat::one() {
        (base.clone(), base.clone())
    } else {
        (base.recip(), base.recip())
    };
    let sign = if q > &Rat::one() { 1 } else { -1 };
    for k in 1..=64i64 {
        if &p == q {
            return Some(sign * k);
        }
        if (sign == 1 && &p > q) || (sign == -1 && &p < q) {
            return None;
        }
        p *= &step;
    }
    None
}

impl Add for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        let mut terms = self.terms.clone();
        for (m, c) in &rhs.terms {
            let e = terms.entry(m.clone()).or_insert_with(Rat::zero);
            *e += c;
            if e.is_zero() {
                terms.remove(m);
            }
        }
        Expr { terms }
    }
}

impl Sub for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        self + &(-rhs)
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -&self
    }
}

impl Mul for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        let mut acc = Expr::zero();
        for (m1, c1) in &self.terms {
            for (m2, c2) in &rhs.terms {
                let c = c1 * c2;
                if !m1.has_pow() && !m2.has_pow() {
                    let mut atoms = m1.0.clone();
                    for (a, e) in &m2.0 {
                        *atoms.entry(a.clone()).or_insert(0) += e;
                    }
                    acc = &acc + &Expr::from_term(Monomial(atoms), c);
                } else {
                    acc = &acc + &mul_mono(m1, m2).scale(&c);
                }
            }
        }
        acc
    }
}

macro_rules! forward_binop {
    ($tr:ident, $m:ident) => {
        impl $tr for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                (&self).$m(rhs)
            }
        }
        impl $tr<Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                self.$m(&rhs)
            }
        }
    };
}
forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);

/// Degree of a polynomial in `x`.
pub fn degree(e: &Expr, x: &Var) -> Result<u32, ArithError> {
    if !e.is_polynomial() {
        return Err(ArithError::NotPolynomial(e.to_string()));
    }
    Ok(e.terms.keys().map(|m| m.var_exp(x)).max().unwrap_or(0))
}

/// Upper bound on the number of grid points [`maps_to_int`] is willing to test.
const MAPS_TO_INT_GRID_CAP: u64 = 2_000_000;

/// Checks whether a polynomial maps all integer points to integers by testing
/// every point of the grid `{0, …, d_1+1} × … × {0, …, d_k+1}` (`d_i` is the
/// degree in the `i`-th variable).  Returns `false` (conservatively) if the
/// grid would exceed an internal size cap.
pub fn maps_to_int(e: &Expr) -> Result<bool, ArithError> {
    if !e.is_polynomial() {
        return Err(ArithError::NotPolynomial(e.to_string()));
    }
    if e.terms.values().all(|c| c.is_integer()) {
        return Ok(true);
    }
    let vars: Vec<Var> = e.vars().into_iter().collect();
    let dims: Vec<u64> = vars
        .iter()
        .map(|v| degree(e, v).map(|d| d as u64 + 2))
        .collect::<Result<_, _>>()?;
    let total = dims.iter().try_fold(1u64, |acc, d| acc.checked_mul(*d));
    match total {
        Some(t) if t <= MAPS_TO_INT_GRID_CAP => {}
        _ => return Ok(false),
    }
    let mut idx = vec![0u64; vars.len()];
    loop {
        let val: BTreeMap<Var, Rat> = vars
            .iter()
            .zip(&idx)
            .map(|(v, i)| (v.clone(), int(*i as i64)))
            .collect();
        if !e.eval(&val)?.is_integer() {
            return Ok(false);
        }
        let mut k = 0;
        loop {
            if k == idx.len() {
                return Ok(true);
            }
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// A substitution: a finite map from variables to expressions, applied simultaneously.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Subst(BTreeMap<Var, Expr>);

impl Subst {
    /// The identity substitution.
    pub fn new() -> Self {
        Subst::default()
    }

    /// Adds a binding; identity bindings are dropped.
    pub fn insert(&mut self, v: Var, e: Expr) {
        if e.as_var().as_ref() == Some(&v) {
            self.0.remove(&v);
        } else {
            self.0.insert(v, e);
        }
    }

    /// The image of `v`, if bound.
    pub fn get(&self, v: &Var) -> Option<&Expr> {
        self.0.get(v)
    }

    /// The image of `v` (`v` itself when unbound).
    pub fn image(&self, v: &Var) -> Expr {
        self.0
            .get(v)
            .cloned()
            .unwrap_or_else(|| Expr::from_var(v.clone()))
    }

    /// Whether the substitution is the identity.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Iterates over the bindings.
    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Expr)> {
        self.0.iter()
    }

    /// The domain.
    pub fn domain(&self) -> BTreeSet<Var> {
        self.0.keys().cloned().collect()
    }
}

impl FromIterator<(Var, Expr)> for Subst {
    fn from_iter<T: IntoIterator<Item = (Var, Expr)>>(iter: T) -> Self {
        let mut s = Subst::new();
        for (v, e) in iter {
            s.insert(v, e);
        }
        s
    }
}

impl fmt::Display for Subst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (v, e)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v}/{e}")?;
        }
        f.write_str("}")
    }
}

/// Applies a substitution to an expression.
pub fn apply(e: &Expr, s: &Subst) -> Expr {
    e.subst(s)
}

/// Composition with `apply(e, compose(s1, s2)) = apply(apply(e, s1), s2)`.
pub fn compose(s1: &Subst, s2: &Subst) -> Subst {
    let mut out = Subst::new();
    for (v, e) in s1.iter() {
        out.insert(v.clone(), e.subst(s2));
    }
    for (v, e) in s2.iter() {
        if s1.get(v).is_none() {
            out.insert(v.clone(), e.clone());
        }
    }
    out
}

/// Evaluates an expression under a valuation.
pub fn eval(e: &Expr, v: &BTreeMap<Var, Rat>) -> Result<Rat, ArithError> {
    e.eval(v)
}

/// Relation of a normalized constraint against zero.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum Rel {
    /// `e > 0`
    Gt,
    /// `e >= 0`
    Ge,
}

/// A comparison operator as written in source programs.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

/// A raw comparison `lhs op rhs` prior to normalization.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct RawCmp {
    pub lhs: Expr,
    pub op: CmpOp,
    pub rhs: Expr,
}

impl RawCmp {
    /// Creates a raw comparison.
    pub fn new(lhs: Expr, op: CmpOp, rhs: Expr) -> Self {
        RawCmp { lhs, op, rhs }
    }
}

/// A normalized constraint `expr > 0` or `expr >= 0`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Constraint {
    pub expr: Expr,
    pub rel: Rel,
}

impl Constraint {
    /// `e > 0`.
    pub fn gt(e: Expr) -> Self {
        Constraint { expr: e, rel: Rel::Gt }
    }

    /// `e >= 0`.
    pub fn ge(e: Expr) -> Self {
        Constraint { expr: e, rel: Rel::Ge }
    }

    /// `a > b`.
    pub fn gt2(a: &Expr, b: &Expr) -> Self {
        Constraint::gt(a - b)
    }

    /// `a >= b`.
    pub fn ge2(a: &Expr, b: &Expr) -> Self {
        Constraint::ge(a - b)
    }

    /// Logical negation (`¬(e > 0)` is `-e >= 0`, `¬(e >= 0)` is `-e > 0`).
    pub fn negate(&self) -> Constraint {
        match self.rel {
            Rel::Gt => Constraint::ge(-&self.expr),
            Rel::Ge => Constraint::gt(-&self.expr),
        }
    }

    /// Applies a substitution.
    pub fn subst(&self, s: &Subst) -> Constraint {
        Constraint {
            expr: self.expr.subst(s),
            rel: self.rel,
        }
    }

    /// Variables of the constraint.
    pub fn vars(&self) -> BTreeSet<Var> {
        self.expr.vars()
    }

    /// Truth value for a constant constraint.
    pub fn const_truth(&self) -> Option<bool> {
        self.expr.as_constant().map(|c| match self.rel {
            Rel::Gt => c.is_positive(),
            Rel::Ge => !c.is_negative(),
        })
    }

    /// Evaluates the constraint under a valuation.
    pub fn holds(&self, v: &BTreeMap<Var, Rat>) -> Result<bool, ArithError> {
        let c = self.expr.eval(v)?;
        Ok(match self.rel {
            Rel::Gt => c.is_positive(),
            Rel::Ge => !c.is_negative(),
        })
    }

    /// Over-the-integers strengthening: for a polynomial constraint whose
    /// variables all range over the integers, `p > 0` becomes `p' - 1 >= 0`
    /// where `p'` is `p` scaled to integer coefficients with the gcd of the
    /// non-constant coefficients divided out (rounding the constant down).
    pub fn tighten_int(&self) -> Constraint {
        if !self.expr.is_polynomial() {
            return self.clone();
        }
        let l = denominator_lcm(&self.expr);
        let scaled = self.expr.scale(&Rat::from_integer(l));
        let g = scaled
            .terms
            .iter()
            .filter(|(m, _)| !m.is_one())
            .fold(BigInt::zero(), |acc, (_, c)| acc.gcd(c.numer()));
        if g.is_zero() {
            return self.clone();
        }
        let gq = Rat::from_integer(g);
        let mut body = Expr::zero();
        for (m, c) in &scaled.terms {
            if !m.is_one() {
                body = &body + &Expr::from_term(m.clone(), c / &gq);
            }
        }
        let c0 = scaled.constant_part();
        let k = match self.rel {
            Rel::Ge => (c0 / &gq).floor(),
            Rel::Gt => ((c0 - Rat::one()) / &gq).floor(),
        };
        Constraint::ge(&body + &Expr::constant(k))
    }
}

impl fmt::Display for Constraint {
    /// Prints `lhs > c` with the constant moved to the right-hand side.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.expr.constant_part();
        let body = &self.expr - &Expr::constant(c.clone());
        let op = match self.rel {
            Rel::Gt => ">",
            Rel::Ge => ">=",
        };
        if body.is_zero() {
            return write!(f, "{} {} 0", fmt_rat(&c), op);
        }
        write!(f, "{} {} {}", body, op, fmt_rat(&-c))
    }
}

/// A conjunction of normalized constraints (empty means `true`).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Guard {
    conjuncts: Vec<Constraint>,
}

impl Guard {
    /// The guard `true`.
    pub fn truth() -> Self {
        Guard::default()
    }

    /// Builds a guard from constraints, dropping duplicates.
    pub fn from_constraints(cs: impl IntoIterator<Item = Constraint>) -> Self {
        let mut g = Guard::truth();
        for c in cs {
            g.push(c);
        }
        g
    }

    /// Adds a conjunct unless it is already present.
    pub fn push(&mut self, c: Constraint) {
        if !self.conjuncts.contains(&c) {
            self.conjuncts.push(c);
        }
    }

    /// The conjuncts in order.
    pub fn conjuncts(&self) -> &[Constraint] {
        &self.conjuncts
    }

    /// Number of conjuncts.
    pub fn len(&self) -> usize {
        self.conjuncts.len()
    }

    /// Whether the guard is `true`.
    pub fn is_empty(&self) -> bool {
        self.conjuncts.is_empty()
    }

    /// Conjunction of two guards.
    pub fn and(&self, other: &Guard) -> Guard {
        let mut g = self.clone();
        for c in &other.conjuncts {
            g.push(c.clone());
        }
        g
    }

    /// Applies a substitution to every conjunct.
    pub fn subst(&self, s: &Subst) -> Guard {
        Guard::from_constraints(self.conjuncts.iter().map(|c| c.subst(s)))
    }

    /// Variables of the guard.
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        for c in &self.conjuncts {
            out.extend(c.vars());
        }
        out
    }

    /// Evaluates the guard.
    pub fn holds(&self, v: &BTreeMap<Var, Rat>) -> Result<bool, ArithError> {
        for c in &self.conjuncts {
            if !c.holds(v)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Removes constant-true conjuncts; a constant-false conjunct collapses the
    /// guard to the single conjunct `-1 >= 0`.
    pub fn drop_trivial(&self) -> Guard {
        let mut out = Guard::truth();
        for c in &self.conjuncts {
            match c.const_truth() {
                Some(true) => {}
                Some(false) => return Guard::from_constraints([Constraint::ge(Expr::int(-1))]),
                None => out.push(c.clone()),
            }
        }
        out
    }

    /// Whether the guard is syntactically equal to another up to conjunct order.
    pub fn same_set(&self, other: &Guard) -> bool {
        let a: BTreeSet<&Constraint> = self.conjuncts.iter().collect();
        let b: BTreeSet<&Constraint> = other.conjuncts.iter().collect();
        a == b
    }

    /// A copy without the conjunct at `idx`.
    pub fn without(&self, idx: usize) -> Guard {
        let mut g = self.clone();
        g.conjuncts.remove(idx);
        g
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conjuncts.is_empty() {
            return f.write_str("TRUE");
        }
        for (i, c) in self.conjuncts.iter().enumerate() {
            if i > 0 {
                f.write_str(" && ")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

/// Normalizes raw comparisons to `a > 0` / `a >= 0` conjuncts.
pub fn normalize_guard(raw: &[RawCmp]) -> Guard {
    let mut g = Guard::truth();
    for r in raw {
        match r.op {
            CmpOp::Gt => g.push(Constraint::gt2(&r.lhs, &r.rhs)),
            CmpOp::Ge => g.push(Constraint::ge2(&r.lhs, &r.rhs)),
            CmpOp::Lt => g.push(Constraint::gt2(&r.rhs, &r.lhs)),
            CmpOp::Le => g.push(Constraint::ge2(&r.rhs, &r.lhs)),
            CmpOp::Eq => {
                g.push(Constraint::ge2(&r.rhs, &r.lhs));
                g.push(Constraint::ge2(&r.lhs, &r.rhs));
            }
        }
    }
    g
}

/// Recursive-descent parser for the expression grammar.
pub(crate) struct ExprParser<'a> {
    pub(crate) src: &'a str,
    pub(crate) pos: usize,
}

impl<'a> ExprParser<'a> {
    pub(crate) fn new(src: &'a str) -> Self {
        ExprParser { src, pos: 0 }
    }

    pub(crate) fn err(&self, msg: &str) -> ArithError {
        ArithError::Parse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    pub(crate) fn skip_ws(&mut self) {
        while let Some(c) = self.peek_char() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    pub(crate) fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    pub(crate) fn eat(&mut self, s: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    /// Whether the upcoming input starts with `s` (after whitespace).
    pub(crate) fn at(&mut self, s: &str) -> bool {
        self.skip_ws();
        self.src[self.pos..].starts_with(s)
    }

    pub(crate) fn ident(&mut self) -> Option<String> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let mut chars = rest.char_indices();
        match chars.next() {
            Some((_, c)) if c.is_ascii_alphabetic() || c == '_' => {}
            _ => return None,
        }
        let mut end = rest.len();
        for (i, c) in chars {
            if !(c.is_ascii_alphanumeric() || c == '_' || c == '\'' || c == '.') {
                end = i;
                break;
            }
        }
        let id = rest[..end].to_string();
        self.pos += end;
        Some(id)
    }

    fn number(&mut self) -> Option<BigInt> {
        self.skip_ws();
        let rest = &self.src[self.pos..];
        let end = rest
            .char_indices()
            .find(|(_, c)| !c.is_ascii_digit())
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if end == 0 {
            return None;
        }
        let n: BigInt = rest[..end].parse().ok()?;
        self.pos += end;
        Some(n)
    }

    pub(crate) fn parse_sum(&mut self) -> Result<Expr, ArithError> {
        let mut acc = self.parse_product()?;
        loop {
            // Do not consume the `->` / `-{` arrow of a rule.
            if self.at("->") || self.at("-{") {
                return Ok(acc);
            }
            if self.eat("+") {
                acc = &acc + &self.parse_product()?;
            } else if self.eat("-") {
                acc = &acc - &self.parse_product()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn parse_product(&mut self) -> Result<Expr, ArithError> {
        let mut acc = self.parse_unary()?;
        loop {
            if self.eat("*") {
                acc = &acc * &self.parse_unary()?;
            } else if self.eat("/") {
                let d = self.parse_unary()?;
                match d.as_constant() {
                    Some(c) if !c.is_zero() => acc = acc.scale(&c.recip()),
                    _ => return Err(ArithError::UnsupportedDivision(format!("by `{d}`"))),
                }
            } else {
                return Ok(acc);
            }
        }
    }

    fn parse_unary(&mut self) -> Result<Expr, ArithError> {
        if self.at("->") || self.at("-{") {
            return Err(self.err("expected expression"));
        }
        if self.eat("-") {
            return Ok(-self.parse_unary()?);
        }
        if self.eat("+") {
            return self.parse_unary();
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr, ArithError> {
        let base = self.parse_atom()?;
        if self.eat("^") {
            let exp = if self.eat("-") {
                -self.parse_power_operand()?
            } else {
                self.parse_power_operand()?
            };
            return Expr::pow(&base, &exp);
        }
        Ok(base)
    }

    fn parse_power_operand(&mut self) -> Result<Expr, ArithError> {
        // Right-associative: a^b^c = a^(b^c).
        self.parse_power()
    }

    fn parse_atom(&mut self) -> Result<Expr, ArithError> {
        self.skip_ws();
        if self.eat("(") {
            let e = self.parse_sum()?;
            if !self.eat(")") {
                return Err(self.err("expected `)`"));
            }
            return Ok(e);
        }
        if let Some(n) = self.number() {
            return Ok(Expr::constant(Rat::from_integer(n)));
        }
        if let Some(id) = self.ident() {
            return Ok(Expr::var(id));
        }
        Err(self.err("expected expression"))
    }
}
