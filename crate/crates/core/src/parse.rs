//! Reader for the line-oriented program format.
//!
//! ```text
//! # comment
//! START: f0
//! f0(x, y) -> f1(x, 0)
//! f1(x, y) -{x}-> f1(x - 1, y + x) :|: x > 0 && y >= 0
//! f1(x, y) -{1}-> NIL :|: x <= 0
//! ```
//!
//! A plain `->` means cost `1`; `NIL` is the empty right-hand side; `TRUE`
//! is the empty guard.  Parsing normalizes the program: all symbols get the
//! same arity (missing arguments are padded with `0` on right-hand sides),
//! left-hand sides are renamed to one canonical variable vector, non-variable
//! or repeated left-hand side arguments become equality constraints, and if
//! the start symbol occurs on a right-hand side it is renamed and a
//! zero-cost wrapper rule is added.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::arith::{normalize_guard, ArithError, CmpOp, Expr, ExprParser, RawCmp, Subst, Var};
use crate::program::{Program, Rule, Term, SINK};

/// Errors of the program reader.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    /// Malformed input text.
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    /// Well-formed text describing an invalid program.
    #[error("semantic error: {0}")]
    Semantic(String),
}

struct RawTerm {
    fun: String,
    args: Vec<Expr>,
}

struct RawRule {
    line: usize,
    lhs: RawTerm,
    cost: Expr,
    rhs: Vec<RawTerm>,
    guard: Vec<RawCmp>,
}

fn strip_comment(line: &str) -> &str {
    let mut end = line.len();
    if let Some(i) = line.find('#') {
        end = end.min(i);
    }
    if let Some(i) = line.find("//") {
        end = end.min(i);
    }
    &line[..end]
}

fn syntax(line: usize, p: &ExprParser<'_>, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        col: p.pos + 1,
        msg: msg.into(),
    }
}

fn lift(line: usize, e: ArithError, p: &ExprParser<'_>) -> ParseError {
    match e {
        ArithError::Parse { pos, msg } => ParseError::Syntax { line, col: pos + 1, msg },
        other => syntax(line, p, other.to_string()),
    }
}

fn parse_term(p: &mut ExprParser<'_>, line: usize) -> Result<RawTerm, ParseError> {
    let fun = p.ident().ok_or_else(|| syntax(line, p, "expected function symbol"))?;
    let mut args = Vec::new();
    if p.eat("(") {
        if !p.eat(")") {
            loop {
                args.push(p.parse_sum().map_err(|e| lift(line, e, p))?);
                if p.eat(")") {
                    break;
                }
                if !p.eat(",") {
                    return Err(syntax(line, p, "expected `,` or `)`"));
                }
            }
        }
    }
    Ok(RawTerm { fun, args })
}

fn parse_guard(p: &mut ExprParser<'_>, line: usize) -> Result<Vec<RawCmp>, ParseError> {
    let mut out = Vec::new();
    loop {
        if p.eat("TRUE") {
            // nothing to add
        } else {
            let lhs = p.parse_sum().map_err(|e| lift(line, e, p))?;
            let op = if p.eat("<=") {
                CmpOp::Le
            } else if p.eat(">=") {
                CmpOp::Ge
            } else if p.eat("==") || p.eat("=") {
                CmpOp::Eq
            } else if p.eat("<") {
                CmpOp::Lt
            } else if p.eat(">") {
                CmpOp::Gt
            } else {
                return Err(syntax(line, p, "expected comparison operator"));
            };
            let rhs = p.parse_sum().map_err(|e| lift(line, e, p))?;
            out.push(RawCmp::new(lhs, op, rhs));
        }
        if !(p.eat("&&") || p.eat("/\\")) {
            return Ok(out);
        }
    }
}

fn parse_rule(text: &str, line: usize) -> Result<RawRule, ParseError> {
    let mut p = ExprParser::new(text);
    let lhs = parse_term(&mut p, line)?;
    let cost = if p.eat("->") {
        Expr::int(1)
    } else if p.eat("-{") {
        let c = p.parse_sum().map_err(|e| lift(line, e, &p))?;
        if !p.eat("}->") && !(p.eat("}") && p.eat(">")) {
            return Err(syntax(line, &p, "expected `}->`"));
        }
        c
    } else {
        return Err(syntax(line, &p, "expected `->` or `-{cost}->`"));
    };
    let mut rhs = Vec::new();
    if p.eat("NIL") {
        // empty right-hand side
    } else {
        loop {
            rhs.push(parse_term(&mut p, line)?);
            if !p.eat(",") {
                break;
            }
        }
    }
    let guard = if p.eat(":|:") || p.eat("[") {
        let g = parse_guard(&mut p, line)?;
        p.eat("]");
        g
    } else {
        Vec::new()
    };
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(syntax(line, &p, "unexpected trailing input"));
    }
    Ok(RawRule { line, lhs, cost, rhs, guard })
}

/// Parses and normalizes a program.
pub fn parse_program(src: &str) -> Result<Program, ParseError> {
    let mut start: Option<String> = None;
    let mut raws = Vec::new();
    for (i, raw_line) in src.lines().enumerate() {
        let line = i + 1;
        let text = strip_comment(raw_line);
        if text.trim().is_empty() {
            continue;
        }
        let t = text.trim_start();
        if let Some(rest) = t.strip_prefix("START:") {
            let name = rest.trim();
            let mut p = ExprParser::new(name);
            match p.ident() {
                Some(id) if p.pos == name.len() => start = Some(id),
                _ => {
                    return Err(ParseError::Syntax {
                        line,
                        col: text.len() - t.len() + 7,
                        msg: "expected start symbol".into(),
                    })
                }
            }
            continue;
        }
        raws.push(parse_rule(text, line)?);
    }
    if raws.is_empty() {
        return Err(ParseError::Semantic("program has no rules".into()));
    }
    build_program(start, raws)
}

fn build_program(start: Option<String>, raws: Vec<RawRule>) -> Result<Program, ParseError> {
    // Arity consistency.
    let mut arities: BTreeMap<String, usize> = BTreeMap::new();
    let mut note = |f: &str, n: usize, line: usize| -> Result<(), ParseError> {
        if f == SINK {
            return Err(ParseError::Semantic(format!("line {line}: `{SINK}` is reserved")));
        }
        match arities.get(f) {
            Some(&m) if m != n => Err(ParseError::Semantic(format!(
                "line {line}: symbol `{f}` used with arity {n} and {m}"
            ))),
            _ => {
                arities.insert(f.to_string(), n);
                Ok(())
            }
        }
    };
    for r in &raws {
        note(&r.lhs.fun, r.lhs.args.len(), r.line)?;
        for t in &r.rhs {
            note(&t.fun, t.args.len(), r.line)?;
        }
    }
    let arity = arities.values().copied().max().unwrap_or(0);
    let start = start.unwrap_or_else(|| raws[0].lhs.fun.clone());
    if !raws.iter().any(|r| r.lhs.fun == start) {
        return Err(ParseError::Semantic(format!("start symbol `{start}` has no rules")));
    }

    // Canonical variable vector.
    let mut taken: BTreeSet<Var> = BTreeSet::new();
    for r in &raws {
        for a in r.lhs.args.iter().chain(std::iter::once(&r.cost)) {
            taken.extend(a.vars());
        }
        for t in &r.rhs {
            for a in &t.args {
                taken.extend(a.vars());
            }
        }
        for c in &r.guard {
            taken.extend(c.lhs.vars());
            taken.extend(c.rhs.vars());
        }
    }
    let first = raws.iter().find(|r| r.lhs.fun == start).unwrap();
    let mut vars: Vec<Var> = Vec::with_capacity(arity);
    for i in 0..arity {
        let cand = first.lhs.args.get(i).and_then(|a| a.as_var());
        match cand {
            Some(v) if !vars.contains(&v) => vars.push(v),
            _ => {
                let mut k = i + 1;
                let v = loop {
                    let v = Var::new(format!("x{k}"));
                    if !taken.contains(&v) && !vars.contains(&v) {
                        break v;
                    }
                    k += arity;
                };
                vars.push(v);
            }
        }
    }
    let canon: BTreeSet<Var> = vars.iter().cloned().collect();
    let mut all_names = taken.clone();
    all_names.extend(canon.iter().cloned());

    let mut prog = Program::new(vars.clone(), start.clone());
    for r in &raws {
        // Map lhs variables to canonical positions.
        let mut ren = Subst::new();
        let mut eqs: Vec<(usize, Expr)> = Vec::new();
        let mut bound: BTreeSet<Var> = BTreeSet::new();
        for (i, a) in r.lhs.args.iter().enumerate() {
            match a.as_var() {
                Some(v) if !bound.contains(&v) => {
                    bound.insert(v.clone());
                    ren.insert(v, Expr::from_var(vars[i].clone()));
                }
                _ => eqs.push((i, a.clone())),
            }
        }
        // Temporaries that clash with canonical names get fresh names.
        let mut rule_vars: BTreeSet<Var> = r.cost.vars();
        for t in &r.rhs {
            for a in &t.args {
                rule_vars.extend(a.vars());
            }
        }
        for c in &r.guard {
            rule_vars.extend(c.lhs.vars());
            rule_vars.extend(c.rhs.vars());
        }
        for (_, a) in &eqs {
            rule_vars.extend(a.vars());
        }
        for v in rule_vars {
            if !bound.contains(&v) && canon.contains(&v) {
                let fresh = crate::arith::fresh_var(&format!("{}_", v.0), &all_names);
                all_names.insert(fresh.clone());
                ren.insert(v, Expr::from_var(fresh));
            }
        }
        let mut cmps: Vec<RawCmp> = r
            .guard
            .iter()
            .map(|c| RawCmp::new(c.lhs.subst(&ren), c.op, c.rhs.subst(&ren)))
            .collect();
        for (i, a) in &eqs {
            cmps.push(RawCmp::new(Expr::from_var(vars[*i].clone()), CmpOp::Eq, a.subst(&ren)));
        }
        let rhs: Vec<Term> = r
            .rhs
            .iter()
            .map(|t| {
                let mut args: Vec<Expr> = t.args.iter().map(|a| a.subst(&ren)).collect();
                args.resize(arity, Expr::zero());
                Term::new(t.fun.clone(), args)
            })
            .collect();
        let rule = Rule::new(r.lhs.fun.clone(), r.cost.subst(&ren), rhs, normalize_guard(&cmps), arity);
        if !rule.well_formed() {
            return Err(ParseError::Semantic(format!(
                "line {}: right-hand side arguments must map integers to integers",
                r.line
            )));
        }
        prog.add(rule);
    }

    // Keep the start symbol free of incoming rules.
    if !prog.incoming(&start).is_empty() {
        let symbols = prog.symbols();
        let mut renamed = format!("{start}'");
        while symbols.contains(&renamed) {
            renamed.push('\'');
        }
        let mut out = Program::new(vars.clone(), start.clone());
        out.add(Rule::new(
            start.clone(),
            Expr::zero(),
            vec![Term::new(renamed.clone(), vars.iter().cloned().map(Expr::from_var).collect())],
            crate::arith::Guard::truth(),
            arity,
        ));
        for r in prog.rules() {
            let mut r = r.clone();
            if r.root == start {
                r.root = renamed.clone();
            }
            let rhs = r
                .rhs
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    if t.fun == start {
                        t.fun = renamed.clone();
                    }
                    t
                })
                .collect();
            r.rhs = crate::program::normalize_rhs(rhs, arity);
            out.add(r);
        }
        prog = out;
    }
    Ok(prog)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::RuleKind;

    #[test]
    fn fig1_listing() {
        let p = parse_program(
            "f0(x,y,z,u) -> f1(x,0,z,u)\n\
             f1(x,y,z,u) -> f1(x-1,y+x,z,u) :|: x > 0\n\
             f1(x,y,z,u) -> f2(x,y,y,u) :|: x <= 0\n\
             f2(x,y,z,u) -> f3(x,y,z,z-1) :|: z > 0\n\
             f3(x,y,z,u) -> f3(x,y,z,u-tv) :|: u > 0 && tv > 0\n\
             f3(x,y,z,u) -> f2(x,y,z-1,u) :|: u <= 0\n",
        )
        .unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p.start, "f0");
        assert_eq!(p.rules()[1].classify(), RuleKind::SimpleLoop);
    }

    #[test]
    fn cost_and_nil() {
        let p = parse_program(
            "fib(x) -{1}-> fib(x-1), fib(x-2) :|: x > 1\nfib(x) -{1}-> NIL :|: x <= 1\n",
        )
        .unwrap();
        // fib occurs on a right-hand side, so a wrapper rule is added.
        assert_eq!(p.len(), 3);
        assert_eq!(p.rules()[0].cost, Expr::zero());
        assert_eq!(p.rules()[1].degree(), 2);
        assert!(p.rules()[2].is_sink_rule());
        assert!(p.incoming(&p.start).is_empty());
    }

    #[test]
    fn syntax_errors_have_positions() {
        match parse_program("f(x) -> g(x\n") {
            Err(ParseError::Syntax { line, .. }) => assert_eq!(line, 1),
            r => panic!("{r:?}"),
        }
        match parse_program("f(x) -> g(x)\nf(x) => g(x)\n") {
            Err(ParseError::Syntax { line, col, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(col, 6);
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn semantic_errors() {
        assert!(matches!(parse_program("f(x) -> f(x/2)"), Err(ParseError::Semantic(_))));
        assert!(matches!(parse_program("f(x) -> g(x, x)\ng(x) -> f(x)"), Err(ParseError::Semantic(_))));
    }

    #[test]
    fn lhs_renaming_and_padding() {
        let p = parse_program("f(a, b) -> g(a + b)\ng(c) -> g(c - 1) :|: c > 0\n").unwrap();
        assert_eq!(p.vars, vec![Var::new("a"), Var::new("b")]);
        let g_loop = &p.rules()[1];
        assert_eq!(g_loop.rhs[0].args, vec![Expr::parse("a - 1").unwrap(), Expr::zero()]);
    }

    #[test]
    fn non_variable_lhs_becomes_equality() {
        let p = parse_program("f(x) -> g(x)\ng(0) -> NIL\n").unwrap();
        let g = &p.rules()[1];
        assert_eq!(g.guard.len(), 2);
    }
}
