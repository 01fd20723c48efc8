//! Human-readable and JSON rendering of analysis results and their proofs.
//!
//! A [`Report`] collects the final bound together with a list of
//! [`ProofStep`]s: the input rules, every rule the simplification added
//! (with the processor that produced it, its parents, metering function and
//! closed form), and the derivation or SMT model that solved the limit
//! problem.  Proofs are best-effort explanations, not certificates.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::asymptotics::{AsymClass, BoundResult};
use crate::pipeline::Simplified;
use crate::program::Program;
use crate::transform::ProvenanceTag;

/// Output formats.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum Format {
    #[default]
    Text,
    Json,
}

/// One explanation step.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct ProofStep {
    /// Processor or calculus rule name.
    pub kind: String,
    /// Referenced inputs (rule ids such as `#3`, or limit problems).
    pub inputs: Vec<String>,
    /// Produced outputs.
    pub outputs: Vec<String>,
    /// Explanation, naming the justifying result.
    pub justification: String,
}

/// The full report of one analysis.
#[derive(Clone, PartialEq, Debug, Serialize)]
pub struct Report {
    /// Rendered asymptotic class, e.g. `Omega(n^4)`.
    pub asymptotic: String,
    /// The concrete lower bound (cost of the witnessing rule).
    pub concrete_bound: String,
    /// The guard under which the concrete bound holds.
    pub guard: String,
    /// The witnessing family over the program variables.
    pub witness: String,
    /// For exponential bounds, a note with the concrete base.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// The proof.
    pub proof_steps: Vec<ProofStep>,
}

fn justification(tag: ProvenanceTag) -> &'static str {
    match tag {
        ProvenanceTag::Original => "input rule",
        ProvenanceTag::Accelerated => "loop acceleration: the metering function under-estimates the iterations",
        ProvenanceTag::Instantiated => "instantiation of temporary variables",
        ProvenanceTag::Chained => "chaining preserves the costs of evaluations",
        ProvenanceTag::PartialDeleted => "partial deletion of a recursion's right-hand side",
    }
}

/// Builds the report from the input program, the simplification result and
/// the asymptotic bound.
pub fn build(input: &Program, simplified: &Simplified, bound: &BoundResult) -> Report {
    let vars = &input.vars;
    let mut steps = Vec::new();
    let added: BTreeSet<usize> = simplified.history.keys().copied().collect();
    for r in input.rules() {
        if !added.contains(&r.id) {
            steps.push(ProofStep {
                kind: "Input".into(),
                inputs: vec![],
                outputs: vec![format!("#{}", r.id)],
                justification: format!("{}", r.display(vars)),
            });
        }
    }
    for (id, (rule, prov)) in &simplified.history {
        let mut text = format!("{}: {}", justification(prov.tag.clone()), rule.display(vars));
        if !prov.substitutions.is_empty() {
            text.push_str(&format!(" ({})", prov.substitutions.join(", ")));
        }
        steps.push(ProofStep {
            kind: format!("{:?}", prov.tag),
            inputs: prov.parents.iter().map(|p| format!("#{p}")).collect(),
            outputs: vec![format!("#{id}")],
            justification: text,
        });
    }
    if !bound.derivation.is_empty() {
        let rule = bound.rule.map(|r| format!("#{r}")).into_iter().collect::<Vec<_>>();
        steps.push(ProofStep {
            kind: "LimitProblem".into(),
            inputs: rule,
            outputs: vec![bound.class.to_string()],
            justification: bound.derivation.join("\n"),
        });
    }
    let note = match (&bound.class, bound.exp_base) {
        (AsymClass::Exp { root: 1 }, Some(b)) => Some(format!(">= Omega({}^n)", trunc2(b))),
        (AsymClass::Exp { root }, _) if *root > 1 => {
            Some(format!("at least sub-exponential e^(n^(1/{root})) for some e > 1"))
        }
        _ => None,
    };
    Report {
        asymptotic: bound.class.to_string(),
        concrete_bound: bound.cost.to_string(),
        guard: bound.guard.to_string(),
        witness: bound.witness(vars),
        note,
        proof_steps: steps,
    }
}

/// Truncates (never rounds up, so the printed base stays a lower bound) to two decimals.
fn trunc2(x: f64) -> String {
    format!("{:.2}", (x * 100.0).floor() / 100.0)
}

/// Renders the report deterministically.
pub fn render(r: &Report, format: Format) -> String {
    match format {
        Format::Json => serde_json::to_string_pretty(r).expect("report serializes"),
        Format::Text => {
            let mut out = String::new();
            out.push_str(&format!("Asymptotic lower bound: {}", r.asymptotic));
            if let Some(n) = &r.note {
                out.push_str(&format!("  ({n})"));
            }
            out.push('\n');
            out.push_str(&format!("Concrete bound: {} [{}]\n", r.concrete_bound, r.guard));
            if !r.witness.is_empty() {
                out.push_str(&format!("Witness: {}\n", r.witness));
            }
            out
        }
    }
}

/// Renders only the proof steps as text.
pub fn render_proof(r: &Report) -> String {
    let transformed = r.proof_steps.iter().any(|s| s.kind != "Input");
    if !transformed {
        return "no transformation applied\n".into();
    }
    let mut out = String::new();
    for s in &r.proof_steps {
        let from = if s.inputs.is_empty() {
            String::new()
        } else {
            format!(" from {}", s.inputs.join(", "))
        };
        out.push_str(&format!("[{}] {}{}:\n", s.kind, s.outputs.join(", "), from));
        for line in s.justification.lines() {
            out.push_str(&format!("    {line}\n"));
        }
    }
    out
}

/// Ids referenced by some step but not produced by any step (empty for a
/// well-formed report).
pub fn dangling_references(r: &Report) -> Vec<String> {
    let produced: BTreeSet<&String> = r.proof_steps.iter().flat_map(|s| s.outputs.iter()).collect();
    r.proof_steps
        .iter()
        .flat_map(|s| s.inputs.iter())
        .filter(|i| i.starts_with('#') && !produced.contains(i))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arith::Expr;

    #[test]
    fn empty_trace() {
        let p = Program::new(vec![], "f");
        let s = Simplified {
            program: p.clone(),
            log: vec![],
            history: Default::default(),
            accelerations: vec![],
        };
        let r = build(&p, &s, &BoundResult::constant());
        assert_eq!(render_proof(&r), "no transformation applied\n");
        assert!(render(&r, Format::Text).starts_with("Asymptotic lower bound: Omega(1)"));
        assert!(dangling_references(&r).is_empty());
    }

    #[test]
    fn json_fields() {
        let p = Program::new(vec![], "f");
        let s = Simplified {
            program: p.clone(),
            log: vec![],
            history: Default::default(),
            accelerations: vec![],
        };
        let mut b = BoundResult::constant();
        b.cost = Expr::int(3);
        let v: serde_json::Value = serde_json::from_str(&render(&build(&p, &s, &b), Format::Json)).unwrap();
        for k in ["asymptotic", "concrete_bound", "guard", "witness", "proof_steps"] {
            assert!(v.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn base_is_truncated() {
        assert_eq!(trunc2(2f64.sqrt()), "1.41");
    }
}
