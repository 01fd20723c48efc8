//! Program simplification: repeatedly accelerates simple loops and simple
//! recursions, chains accelerated rules into their predecessors and
//! eliminates intermediate function symbols by chaining, until every rule
//! has the start symbol as its root.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::Duration;

use serde::Serialize;

use crate::arith::{Expr, Var};
use crate::metering::{find_metering, MeteringKind};
use crate::program::{Program, Rule, RuleId, RuleKind};
use crate::smt::Smt;
use crate::transform::{
    accelerate_recursion, accelerate_simple_loop, chain, instantiate, instantiate_heuristic, partial_delete,
    simplify_guard, Provenance, ProvenanceTag,
};

/// Settings of [`simplify`].
#[derive(Clone, Debug)]
pub struct PipelineConfig {
    /// Maximal number of rules; beyond it, low-priority rules are pruned.
    pub rule_cap: usize,
    /// Timeout of the solver calls made by the processors.
    pub smt_timeout: Duration,
    /// Timeout of the unsatisfiability checks of the deletion step.
    pub unsat_timeout: Duration,
    /// Maximal number of partial deletions tried per failed recursion.
    pub accel_backtrack: usize,
    /// Whether to record the proof log.
    pub keep_proof: bool,
    /// Optional external SMT-LIB2 solver for polynomial queries.
    pub smt_solver: Option<std::path::PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rule_cap: 1000,
            smt_timeout: Duration::from_secs(2),
            unsat_timeout: Duration::from_millis(500),
            accel_backtrack: 64,
            keep_proof: true,
            smt_solver: None,
        }
    }
}

/// One processor application in the proof log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ProofStep {
    /// Step of the simplification loop (e.g. `"3.1"`).
    pub step: String,
    /// Human-readable description.
    pub action: String,
}

impl fmt::Display for ProofStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.step, self.action)
    }
}

/// A successful acceleration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AccelerationRecord {
    /// The accelerated simple loop or recursion.
    pub original: RuleId,
    /// The resulting rule (after instantiation, if any).
    pub result: RuleId,
    /// The metering function, rendered.
    pub metering: String,
    /// Whether the original was a simple recursion.
    pub recursion: bool,
}

/// Result of [`simplify`].
#[derive(Clone, Debug)]
pub struct Simplified {
    /// The simplified program (every root is the start symbol).
    pub program: Program,
    /// Ordered proof log.
    pub log: Vec<ProofStep>,
    /// Every rule ever created, with provenance.
    pub history: BTreeMap<RuleId, (Rule, Provenance)>,
    /// Successful accelerations.
    pub accelerations: Vec<AccelerationRecord>,
}

struct Simplifier {
    p: Program,
    smt: Smt,
    quick: Smt,
    cfg: PipelineConfig,
    log: Vec<ProofStep>,
    history: BTreeMap<RuleId, (Rule, Provenance)>,
    accelerated: BTreeSet<RuleId>,
    records: Vec<AccelerationRecord>,
}

/// Applies the simplification loop to a well-formed program.
pub fn simplify(p: &Program, cfg: &PipelineConfig) -> Simplified {
    let mut s = Simplifier {
        p: p.clone(),
        smt: Smt {
            external: cfg.smt_solver.clone(),
            ..Smt::with_timeout(cfg.smt_timeout)
        },
        quick: Smt {
            external: cfg.smt_solver.clone(),
            ..Smt::with_timeout(cfg.unsat_timeout)
        },
        cfg: cfg.clone(),
        log: Vec::new(),
        history: p.rules().iter().map(|r| (r.id, (r.clone(), Provenance::original()))).collect(),
        accelerated: BTreeSet::new(),
        records: Vec::new(),
    };
    s.run();
    Simplified {
        program: s.p,
        log: s.log,
        history: s.history,
        accelerations: s.records,
    }
}

impl Simplifier {
    fn vars(&self) -> Vec<Var> {
        self.p.vars.clone()
    }

    fn note(&mut self, step: &str, action: String) {
        if self.cfg.keep_proof {
            self.log.push(ProofStep {
                step: step.to_string(),
                action,
            });
        }
    }

    fn show(&self, r: &Rule) -> String {
        r.display(&self.p.vars).to_string()
    }

    fn add(&mut self, step: &str, r: Rule, prov: Provenance) -> RuleId {
        debug_assert!(r.well_formed(), "processors preserve well-formedness");
        let text = self.show(&r);
        let id = self.p.add(r);
        let rule = self.p.get(id).cloned().expect("just added");
        self.note(step, format!("add #{id} ({prov}): {text}"));
        self.history.insert(id, (rule, prov));
        id
    }

    fn delete(&mut self, step: &str, id: RuleId, why: &str) {
        if self.p.get(id).is_some() {
            self.p.remove(id);
            self.accelerated.remove(&id);
            self.note(step, format!("delete #{id} ({why})"));
        }
    }

    fn non_start_rules(&self) -> bool {
        self.p.rules().iter().any(|r| r.root != self.p.start)
    }

    fn run(&mut self) {
        let mut rounds = 0usize;
        while self.non_start_rules() {
            rounds += 1;
            let before: Vec<RuleId> = self.p.ids();
            self.step1();
            self.step2();
            self.step3();
            self.steps4to6();
            self.step7();
            let after: Vec<RuleId> = self.p.ids();
            if before == after || rounds > 50 {
                // No processor applies any more: dropping the remaining
                // non-start rules is sound (deletion) and ends the loop.
                for r in self.p.rules().to_vec() {
                    if r.root != self.p.start {
                        self.delete("final", r.id, "no further progress possible");
                    }
                }
            }
        }
        self.step1();
    }

    /// Deletes rules with unsatisfiable guards or unreachable roots.
    fn step1(&mut self) {
        for r in self.p.rules().to_vec() {
            if self.quick.guard_unsat(&r.guard) {
                self.delete("1", r.id, "unsatisfiable guard");
            }
        }
        let reach = self.p.reachable();
        for r in self.p.rules().to_vec() {
            if !reach.contains(&r.root) {
                self.delete("1", r.id, "unreachable root");
            }
        }
    }

    /// Removes rhs occurrences of symbols without outgoing rules from
    /// non-tail-recursive rules.
    fn step2(&mut self) {
        loop {
            let found = self.p.rules().iter().find_map(|r| {
                if r.degree() < 2 {
                    return None;
                }
                r.rhs
                    .iter()
                    .position(|t| self.p.outgoing(&t.fun).is_empty())
                    .map(|i| (r.clone(), i))
            });
            let Some((r, i)) = found else { break };
            let keep: Vec<usize> = (0..r.degree()).filter(|&k| k != i).collect();
            let nr = partial_delete(&r, &keep, self.p.arity()).expect("strict subset");
            let sym = r.rhs[i].fun.clone();
            self.add(
                "2",
                nr,
                Provenance::derived(ProvenanceTag::PartialDeleted, vec![r.id], vec![format!("drop {sym}")]),
            );
            self.delete("2", r.id, "replaced by partial deletion");
        }
    }

    fn next_acceleration_candidate(&self) -> Option<Rule> {
        let loops = self
            .p
            .rules()
            .iter()
            .find(|r| r.classify() == RuleKind::SimpleLoop && !self.accelerated.contains(&r.id));
        loops
            .or_else(|| self.p.rules().iter().find(|r| r.classify() == RuleKind::SimpleRecursion))
            .cloned()
    }

    /// Accelerates simple loops (first) and simple recursions.
    fn step3(&mut self) {
        let vars = self.vars();
        let mut guard = 0usize;
        while let Some(r) = self.next_acceleration_candidate() {
            guard += 1;
            if guard > 10 * self.cfg.rule_cap {
                break;
            }
            match r.classify() {
                RuleKind::SimpleLoop => self.accelerate_loop(&r, &vars),
                _ => self.accelerate_rec(&r, &vars),
            }
            self.delete("3.4", r.id, "original of acceleration step");
            self.prune();
        }
    }

    fn accelerate_loop(&mut self, r: &Rule, vars: &[Var]) {
        match accelerate_simple_loop(&self.smt, r, vars) {
            Ok((acc, m, tv)) => {
                let metering = m.bound.to_string();
                let acc_id = self.add(
                    "3.1",
                    acc.clone(),
                    Provenance::derived(ProvenanceTag::Accelerated, vec![r.id], vec![format!("metering {metering}")]),
                );
                self.accelerated.insert(acc_id);
                let mut result = acc_id;
                if m.kind != MeteringKind::Unbounded {
                    if let Ok(mut inst) = instantiate(&acc, &tv, &m.bound, vars) {
                        inst.guard = simplify_guard(&self.smt, &inst.guard);
                        let id = self.add(
                            "3.2.1",
                            inst,
                            Provenance::derived(ProvenanceTag::Instantiated, vec![acc_id], vec![format!("{{{tv}/{}}}", m.bound)]),
                        );
                        self.accelerated.insert(id);
                        self.delete("3.2.2", acc_id, "instantiated");
                        result = id;
                    }
                }
                self.records.push(AccelerationRecord {
                    original: r.id,
                    result,
                    metering,
                    recursion: false,
                });
            }
            Err(e) => {
                self.note("3.1", format!("acceleration of #{} failed: {e}", r.id));
                self.instantiate_temp(r, vars);
            }
        }
    }

    fn instantiate_temp(&mut self, r: &Rule, vars: &[Var]) {
        if let Some((tv, b)) = instantiate_heuristic(&self.smt, r, vars) {
            if let Ok(inst) = instantiate(r, &tv, &b, vars) {
                self.add(
                    "3.3",
                    inst,
                    Provenance::derived(ProvenanceTag::Instantiated, vec![r.id], vec![format!("{{{tv}/{b}}}")]),
                );
            }
        }
    }

    fn accelerate_rec(&mut self, r: &Rule, vars: &[Var]) {
        let attempt = find_metering(&self.smt, r, vars)
            .map_err(|e| e.to_string())
            .and_then(|m| {
                accelerate_recursion(&self.smt, r, &m, vars.len())
                    .map(|acc| (acc, m))
                    .map_err(|e| e.to_string())
            });
        match attempt {
            Ok((acc, m)) => {
                let metering = m.bound.to_string();
                let id = self.add(
                    "3.1",
                    acc,
                    Provenance::derived(ProvenanceTag::Accelerated, vec![r.id], vec![format!("metering {metering}")]),
                );
                self.accelerated.insert(id);
                self.records.push(AccelerationRecord {
                    original: r.id,
                    result: id,
                    metering,
                    recursion: true,
                });
            }
            Err(e) => {
                self.note("3.1", format!("acceleration of #{} failed: {e}", r.id));
                if !r.temp_vars(vars).is_empty() {
                    self.instantiate_temp(r, vars);
                } else if r.degree() > 1 {
                    self.reduce_degree(r, vars);
                }
            }
        }
    }

    /// Partial deletion of a recursion that cannot be accelerated: first all
    /// distinct reductions to degree 2 that admit a metering function, and
    /// if there are none, all distinct reductions to degree 1.
    fn reduce_degree(&mut self, r: &Rule, vars: &[Var]) {
        let d = r.degree();
        let arity = vars.len();
        let mut chosen: Vec<(Vec<usize>, Rule)> = Vec::new();
        if d > 2 {
            let mut seen = BTreeSet::new();
            'outer: for i in 0..d {
                for j in i + 1..d {
                    let keep = vec![i, j];
                    let nr = partial_delete(r, &keep, arity).expect("strict subset");
                    if !seen.insert(nr.rhs.clone()) {
                        continue;
                    }
                    if seen.len() > self.cfg.accel_backtrack {
                        break 'outer;
                    }
                    if find_metering(&self.smt, &nr, vars).is_ok() {
                        chosen.push((keep, nr));
                    }
                }
            }
        }
        if chosen.is_empty() {
            let mut seen = BTreeSet::new();
            for i in 0..d {
                let nr = partial_delete(r, &[i], arity).expect("strict subset");
                if seen.insert(nr.rhs.clone()) {
                    chosen.push((vec![i], nr));
                }
            }
        }
        for (keep, nr) in chosen {
            self.add(
                "3.3",
                nr,
                Provenance::derived(ProvenanceTag::PartialDeleted, vec![r.id], vec![format!("keep {keep:?}")]),
            );
        }
    }

    /// Chains accelerated rules into their predecessors (Steps 4–6).
    fn steps4to6(&mut self) {
        let vars = self.vars();
        let mut s: BTreeSet<RuleId> = BTreeSet::new();
        while let Some(&acc_id) = self.accelerated.iter().next() {
            let Some(acc) = self.p.get(acc_id).cloned() else {
                self.accelerated.remove(&acc_id);
                continue;
            };
            let preds: Vec<Rule> = self
                .p
                .rules()
                .iter()
                .filter(|a| a.root != acc.root && a.rhs.iter().any(|t| t.fun == acc.root))
                .cloned()
                .collect();
            for pred in preds {
                let at = pred.rhs.iter().position(|t| t.fun == acc.root).expect("occurs");
                match chain(&self.smt, &pred, &acc, at, &vars) {
                    Ok(c) => {
                        self.add("5.1", c, Provenance::derived(ProvenanceTag::Chained, vec![pred.id, acc_id], vec![]));
                    }
                    Err(e) => self.note("5.1", format!("chaining #{} with #{acc_id} failed: {e}", pred.id)),
                }
                s.insert(pred.id);
            }
            self.delete("5.2", acc_id, "chained into predecessors");
            self.prune();
        }
        for id in s {
            self.delete("6", id, "chained with accelerated rules");
        }
    }

    fn incoming_from_others(&self, f: &str) -> Vec<RuleId> {
        self.p
            .rules()
            .iter()
            .filter(|r| r.root != f && r.rhs.iter().any(|t| t.fun == f))
            .map(|r| r.id)
            .collect()
    }

    /// Eliminates loop-free intermediate symbols by chaining (Step 7).
    fn step7(&mut self) {
        let vars = self.vars();
        loop {
            let mut candidates: Vec<(usize, String)> = Vec::new();
            for f in self.p.symbols() {
                if f == self.p.start || f == crate::program::SINK {
                    continue;
                }
                let out = self.p.outgoing(&f);
                if out.is_empty() {
                    continue;
                }
                let cyclic = out.iter().any(|id| {
                    let r = self.p.get(*id).expect("exists");
                    r.rhs.iter().any(|t| t.fun == f)
                });
                if cyclic {
                    continue;
                }
                let inc = self.incoming_from_others(&f);
                if !inc.is_empty() {
                    candidates.push((inc.len(), f));
                }
            }
            candidates.sort();
            let Some((_, f)) = candidates.into_iter().next() else { break };
            self.eliminate(&f, &vars);
            self.prune();
        }
    }

    /// Chains every predecessor of `f` with every rule of `f` (repeatedly,
    /// until no occurrence of `f` is left) and deletes the rules of `f`.
    /// Chained rules with unsatisfiable guards are not added; a predecessor
    /// without any satisfiable chaining is kept (with `f` left dangling).
    fn eliminate(&mut self, f: &str, vars: &[Var]) {
        let succ: Vec<Rule> = self.p.outgoing(f).iter().map(|id| self.p.get(*id).cloned().expect("exists")).collect();
        let mut work: Vec<RuleId> = self.incoming_from_others(f);
        let mut productive: BTreeSet<RuleId> = BTreeSet::new();
        let mut created = 0usize;
        while let Some(pid) = work.pop() {
            let pred = self.p.get(pid).cloned().expect("exists");
            let Some(at) = pred.rhs.iter().position(|t| t.fun == f) else { continue };
            for s in &succ {
                if created >= self.cfg.rule_cap {
                    break;
                }
                match chain(&self.smt, &pred, s, at, vars) {
                    Ok(c) if self.quick.guard_unsat(&c.guard) => {
                        self.note("7.1", format!("chaining #{} with #{} yields an unsatisfiable guard", pred.id, s.id));
                    }
                    Ok(c) => {
                        let again = c.rhs.iter().any(|t| t.fun == f);
                        let id =
                            self.add("7.1", c, Provenance::derived(ProvenanceTag::Chained, vec![pred.id, s.id], vec![]));
                        productive.insert(pred.id);
                        created += 1;
                        if again {
                            work.push(id);
                        }
                    }
                    Err(e) => self.note("7.1", format!("chaining #{} with #{} failed: {e}", pred.id, s.id)),
                }
            }
        }
        for r in self.p.rules().to_vec() {
            if r.root == f {
                self.delete("7.2", r.id, &format!("root {f} eliminated"));
            } else if productive.contains(&r.id) {
                self.delete("7.2", r.id, &format!("chained through {f}"));
            }
        }
    }

    /// Enforces the rule cap: derived rules are preferred over originals,
    /// and rules with higher-degree costs over lower-degree ones.
    fn prune(&mut self) {
        let cap = self.cfg.rule_cap.max(1);
        if self.p.len() <= cap {
            return;
        }
        let mut ranked: Vec<(bool, bool, u32, RuleId)> = self
            .p
            .rules()
            .iter()
            .map(|r| {
                let derived = self
                    .history
                    .get(&r.id)
                    .map(|(_, pr)| pr.tag != ProvenanceTag::Original)
                    .unwrap_or(false);
                (derived, !r.cost.is_polynomial(), cost_degree(&r.cost), r.id)
            })
            .collect();
        ranked.sort();
        let excess = self.p.len() - cap;
        for (_, _, _, id) in ranked.into_iter().take(excess) {
            self.delete("cap", id, "rule cap exceeded");
        }
    }
}

fn cost_degree(e: &Expr) -> u32 {
    if e.is_polynomial() {
        e.total_degree()
    } else {
        u32::MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_program;

    fn e(s: &str) -> Expr {
        Expr::parse(s).unwrap()
    }

    #[test]
    fn output_has_start_roots_only() {
        let p = parse_program(
            "f(x) -> g(x) :|: x > 0\n\
             g(x) -> g(x - 1) :|: x > 0\n\
             g(x) -> h(x) :|: x <= 0\n\
             h(x) -> NIL\n",
        )
        .unwrap();
        let s = simplify(&p, &PipelineConfig::default());
        assert!(!s.program.is_empty());
        assert!(s.program.rules().iter().all(|r| r.root == p.start));
        assert!(s
            .program
            .rules()
            .iter()
            .all(|r| r.rhs.iter().all(|t| t.fun != p.start)));
        assert!(s.program.rules().iter().any(|r| r.cost == e("x + 3")));
    }

    #[test]
    fn fib_simplifies_to_exponential() {
        let p = parse_program("fib(x) -{1}-> fib(x-1), fib(x-2) :|: x > 1\nfib(x) -{1}-> NIL :|: x <= 1\n").unwrap();
        let s = simplify(&p, &PipelineConfig::default());
        assert!(s.program.rules().iter().any(|r| !r.cost.is_polynomial()));
        assert!(s.accelerations.iter().any(|a| a.recursion));
    }

    #[test]
    fn history_parents_exist() {
        let p = parse_program(
            "f0(x,y,z,u) -> f1(x,0,z,u)\n\
             f1(x,y,z,u) -> f1(x-1,y+x,z,u) :|: x > 0\n\
             f1(x,y,z,u) -> f2(x,y,y,u) :|: x <= 0\n\
             f2(x,y,z,u) -> f3(x,y,z,z-1) :|: z > 0\n\
             f3(x,y,z,u) -> f3(x,y,z,u-tv) :|: u > 0 && tv > 0\n\
             f3(x,y,z,u) -> f2(x,y,z-1,u) :|: u <= 0\n",
        )
        .unwrap();
        let s = simplify(&p, &PipelineConfig::default());
        for (_, (_, prov)) in &s.history {
            for parent in &prov.parents {
                assert!(s.history.contains_key(parent));
            }
        }
        assert!(s.program.rules().iter().all(|r| r.root == p.start));
    }

    #[test]
    fn empty_program() {
        let p = Program::new(vec![Var::new("x")], "f");
        let s = simplify(&p, &PipelineConfig::default());
        assert!(s.program.is_empty());
    }
}
