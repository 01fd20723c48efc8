//! Reference semantics of integer programs and a bounded worst-case oracle.
//!
//! A configuration is a multiset of ground terms.  One evaluation step picks
//! a term, a rule with the term's root, and integer values for the rule's
//! temporary variables such that the guard holds; the term is replaced by
//! the instantiated right-hand side and the instantiated cost is paid.
//!
//! Since terms of a configuration evolve independently, the maximal cost of a
//! configuration is the sum of the maximal costs of its terms, which the
//! oracle computes by memoized depth-bounded search.

use std::collections::{BTreeMap, HashMap};

use num_traits::Zero;
use thiserror::Error;

use crate::arith::{int, Rat, Subst, Var};
use crate::program::{Program, RuleId, Term};
use crate::smt::Model;

/// A ground term: a symbol with integer arguments.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct GroundTerm {
    pub fun: String,
    pub args: Vec<Rat>,
}

impl GroundTerm {
    /// Creates a ground term from integer arguments.
    pub fn new(fun: impl Into<String>, args: &[i64]) -> Self {
        GroundTerm {
            fun: fun.into(),
            args: args.iter().map(|a| int(*a)).collect(),
        }
    }
}

/// A configuration (multiset of ground terms, kept sorted).
pub type Config = Vec<GroundTerm>;

/// Errors of a single evaluation step.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterpError {
    /// The chosen rule's guard does not hold.
    #[error("guard violated")]
    GuardViolated,
    /// The chosen term/rule combination does not exist.
    #[error("no matching term or rule")]
    NoMatch,
    /// An expression could not be evaluated to an integer argument.
    #[error("evaluation failed: {0}")]
    Eval(String),
}

/// The non-deterministic choice made by a step.
#[derive(Clone, Debug)]
pub struct Choice {
    /// Rule to apply.
    pub rule: RuleId,
    /// Index of the rewritten term in the configuration.
    pub term: usize,
    /// Values of the rule's temporary variables.
    pub temps: Model,
}

/// Search budget of [`max_cost`].
#[derive(Clone, Debug)]
pub struct RunBudget {
    /// Maximal number of consecutive steps along any path.
    pub max_steps: usize,
    /// Range `[lo, hi]` of values tried for each temporary variable.
    pub tv_range: (i64, i64),
    /// Maximal number of (term, depth) expansions.
    pub branch_cap: usize,
}

impl Default for RunBudget {
    fn default() -> Self {
        RunBudget {
            max_steps: 200,
            tv_range: (-8, 8),
            branch_cap: 200_000,
        }
    }
}

/// Result of the oracle.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaxCost {
    /// The largest run cost found (a lower bound on the derivation height).
    pub value: Rat,
    /// Whether some budget limit cut the search short.
    pub truncated: bool,
}

fn valuation(p: &Program, t: &GroundTerm, temps: &Model) -> Model {
    let mut m: Model = p.vars.iter().cloned().zip(t.args.iter().cloned()).collect();
    for (k, v) in temps {
        m.insert(k.clone(), v.clone());
    }
    m
}

fn instantiate(term: &Term, m: &Model) -> Result<GroundTerm, InterpError> {
    let mut args = Vec::with_capacity(term.args.len());
    for a in &term.args {
        let v = a.eval(m).map_err(|e| InterpError::Eval(e.to_string()))?;
        if !v.is_integer() {
            return Err(InterpError::Eval(format!("non-integer argument {v}")));
        }
        args.push(v);
    }
    Ok(GroundTerm { fun: term.fun.clone(), args })
}

/// Performs one evaluation step.
pub fn step(c: &Config, p: &Program, choice: &Choice) -> Result<(Config, Rat), InterpError> {
    let t = c.get(choice.term).ok_or(InterpError::NoMatch)?;
    let r = p.get(choice.rule).ok_or(InterpError::NoMatch)?;
    if r.root != t.fun {
        return Err(InterpError::NoMatch);
    }
    let mut m = valuation(p, t, &choice.temps);
    for v in r.temp_vars(&p.vars) {
        m.entry(v).or_insert_with(Rat::zero);
    }
    if !r.guard.holds(&m).map_err(|e| InterpError::Eval(e.to_string()))? {
        return Err(InterpError::GuardViolated);
    }
    let cost = r.cost.eval(&m).map_err(|e| InterpError::Eval(e.to_string()))?;
    let mut out: Config = c.clone();
    out.remove(choice.term);
    for rt in &r.rhs {
        if !rt.is_sink() {
            out.push(instantiate(rt, &m)?);
        }
    }
    out.sort();
    Ok((out, cost))
}

struct Search<'a> {
    p: &'a Program,
    budget: &'a RunBudget,
    memo: HashMap<(GroundTerm, usize), Rat>,
    expansions: usize,
    truncated: bool,
    temps: BTreeMap<RuleId, Vec<Var>>,
}

impl Search<'_> {
    fn term(&mut self, t: &GroundTerm, depth: usize) -> Rat {
        if t.fun == crate::program::SINK {
            return Rat::zero();
        }
        if let Some(v) = self.memo.get(&(t.clone(), depth)) {
            return v.clone();
        }
        let mut best = Rat::zero();
        let rules: Vec<RuleId> = self.p.outgoing(&t.fun);
        if depth == 0 {
            if !rules.is_empty() {
                self.truncated = true;
            }
            return best;
        }
        self.expansions += 1;
        if self.expansions > self.budget.branch_cap {
            self.truncated = true;
            return best;
        }
        for id in rules {
            let r = self.p.get(id).unwrap().clone();
            let tvs = self.temps.get(&id).cloned().unwrap_or_default();
            let (lo, hi) = self.budget.tv_range;
            let mut idx = vec![lo; tvs.len()];
            loop {
                let temps: Model = tvs.iter().cloned().zip(idx.iter().map(|v| int(*v))).collect();
                let m = valuation(self.p, t, &temps);
                if r.guard.holds(&m).unwrap_or(false) {
                    if let Ok(cost) = r.cost.eval(&m) {
                        let mut total = cost;
                        let mut ok = true;
                        for rt in &r.rhs {
                            match instantiate(rt, &m) {
                                Ok(g) => total += self.term(&g, depth - 1),
                                Err(_) => ok = false,
                            }
                        }
                        if ok && total > best {
                            best = total;
                        }
                    }
                }
                // Next temp valuation.
                let mut k = 0;
                loop {
                    if k == idx.len() {
                        break;
                    }
                    idx[k] += 1;
                    if idx[k] <= hi {
                        break;
                    }
                    idx[k] = lo;
                    k += 1;
                }
                if k == idx.len() {
                    break;
                }
            }
        }
        self.memo.insert((t.clone(), depth), best.clone());
        best
    }
}

/// Maximal cost of runs from `start` within the budget.
pub fn max_cost(p: &Program, start: &Config, budget: &RunBudget) -> MaxCost {
    let temps = p
        .rules()
        .iter()
        .map(|r| (r.id, r.temp_vars(&p.vars).into_iter().collect()))
        .collect();
    let mut s = Search {
        p,
        budget,
        memo: HashMap::new(),
        expansions: 0,
        truncated: false,
        temps,
    };
    let mut total = Rat::zero();
    for t in start {
        total += s.term(t, budget.max_steps);
    }
    MaxCost {
        value: total,
        truncated: s.truncated,
    }
}

/// Number of consecutive applications of a simple loop from a valuation,
/// choosing temporaries from `tv_range` to maximize the count (bounded by `cap`).
pub fn loop_iterations(
    p: &Program,
    rule: RuleId,
    start: &[Rat],
    tv_range: (i64, i64),
    cap: usize,
) -> usize {
    let r = p.get(rule).expect("rule exists").clone();
    let budget = RunBudget {
        max_steps: cap,
        tv_range,
        branch_cap: 1_000_000,
    };
    let mut only = Program::new(p.vars.clone(), r.root.clone());
    let mut unit = r.clone();
    unit.cost = crate::arith::Expr::one();
    only.add(unit);
    let g = GroundTerm {
        fun: r.root.clone(),
        args: start.to_vec(),
    };
    let v = max_cost(&only, &vec![g], &budget).value;
    v.to_integer().try_into().unwrap_or(usize::MAX)
}

/// Applies a substitution to ground argument values (helper for tests).
pub fn eval_update(vars: &[Var], mu: &Subst, point: &[Rat]) -> Vec<Rat> {
    let m: Model = vars.iter().cloned().zip(point.iter().cloned()).collect();
    vars.iter()
        .map(|v| mu.image(v).eval(&m).expect("update evaluates"))
        .collect()
}
