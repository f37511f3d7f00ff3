use std::collections::{BTreeSet, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::parse::{collect_literals, parse_domain, require_type, syntax_at, typed_list, Scope};
use super::print::atom_text;
use super::sexpr::{read, SExpr};
use super::{ErrorCategory, PddlError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PddlProblem {
    pub name: String,
    pub domain: String,
    pub objects: Vec<TypedName>,
    pub init: Vec<Atom>,
    pub goal: Vec<Literal>,
}

/// Parses a problem and checks it against `domain`.
pub fn parse_problem(source: &str, domain: &PddlDomainAst) -> Result<PddlProblem, PddlError> {
    let top = read(source)?;
    let items = top.list().expect("reader returns a list at top level");
    if items.first().and_then(SExpr::atom) != Some("define") {
        return Err(syntax_at(&top, "expected (define ...)"));
    }
    let name = match items.get(1).and_then(SExpr::list) {
        Some([h, SExpr::Atom { text, .. }]) if h.atom() == Some("problem") => text.clone(),
        _ => return Err(syntax_at(&top, "expected (problem <name>)")),
    };
    let mut dom_name = None;
    let mut objects: Vec<TypedName> = Vec::new();
    let mut init = Vec::new();
    let mut goal = Vec::new();
    let mut init_e = None;
    let mut goal_e = None;
    for sec in &items[2..] {
        let parts = sec.list().ok_or_else(|| syntax_at(sec, "expected a section"))?;
        match sec.head() {
            Some(":domain") => match parts {
                [_, SExpr::Atom { text, .. }] => dom_name = Some(text.clone()),
                _ => return Err(syntax_at(sec, "expected (:domain <name>)")),
            },
            Some(":objects") => {
                for (o, ty, pos) in typed_list(&parts[1..], false)? {
                    require_type(domain, &ty, pos)?;
                    if objects.iter().any(|x| x.name == o) || domain.constant_type(&o).is_some() {
                        return Err(PddlError::semantic(
                            ErrorCategory::DuplicateDefinition,
                            pos,
                            format!("object {o} declared twice"),
                        ));
                    }
                    objects.push(TypedName { name: o, ty });
                }
            }
            Some(":init") => init_e = Some(sec),
            Some(":goal") => goal_e = Some(sec),
            Some(":requirements") => {}
            Some(h @ (":metric" | ":constraints")) => return Err(PddlError::unsupported(sec.pos(), h)),
            _ => return Err(syntax_at(sec, "unknown problem section")),
        }
    }
    let domain_ref = dom_name.ok_or_else(|| syntax_at(&top, "missing (:domain <name>)"))?;
    if domain_ref != domain.name {
        return Err(PddlError::semantic(
            ErrorCategory::UndefinedConstant,
            top.pos(),
            format!("problem refers to domain {domain_ref}, not {}", domain.name),
        ));
    }
    let scope = Scope {
        dom: domain,
        vars: &[],
        objects: &objects,
    };
    if let Some(sec) = init_e {
        let mut lits = Vec::new();
        for f in &sec.list().unwrap()[1..] {
            collect_literals(&scope, f, true, &mut lits)?;
        }
        for l in lits {
            if !l.positive {
                return Err(PddlError::unsupported(sec.pos(), "negative initial fact"));
            }
            init.push(l.atom);
        }
    }
    if let Some(sec) = goal_e {
        match sec.list().unwrap() {
            [_, g] => collect_literals(&scope, g, false, &mut goal)?,
            _ => return Err(syntax_at(sec, "expected (:goal <formula>)")),
        }
    }
    Ok(PddlProblem {
        name,
        domain: domain_ref,
        objects,
        init,
        goal,
    })
}

pub fn empty_goal_problem(domain_name: &str) -> String {
    format!("(define (problem probe) (:domain {domain_name}) (:objects) (:init) (:goal (and)))")
}

fn holds(state: &BTreeSet<Atom>, lit: &Literal) -> bool {
    let truth = if lit.atom.predicate == "=" {
        lit.atom.args[0] == lit.atom.args[1]
    } else {
        state.contains(&lit.atom)
    };
    truth == lit.positive
}

fn ground(lit: &Literal, binding: &HashMap<&str, &str>) -> Literal {
    let args = lit
        .atom
        .args
        .iter()
        .map(|t| match t {
            Term::Var(v) => Term::Const(binding[v.as_str()].to_string()),
            c => c.clone(),
        })
        .collect();
    Literal {
        positive: lit.positive,
        atom: Atom {
            predicate: lit.atom.predicate.clone(),
            args,
        },
    }
}

struct GroundAction {
    label: String,
    pre: Vec<Literal>,
    add: Vec<Atom>,
    del: Vec<Atom>,
}

fn ground_actions(domain: &PddlDomainAst, problem: &PddlProblem) -> Vec<GroundAction> {
    let universe: Vec<&TypedName> = domain.constants.iter().chain(&problem.objects).collect();
    let mut out = Vec::new();
    for a in &domain.actions {
        let candidates: Vec<Vec<&str>> = a
            .params
            .iter()
            .map(|p| {
                universe
                    .iter()
                    .filter(|o| domain.is_subtype(&o.ty, &p.ty))
                    .map(|o| o.name.as_str())
                    .collect()
            })
            .collect();
        if candidates.iter().any(Vec::is_empty) {
            continue;
        }
        let mut idx = vec![0usize; candidates.len()];
        loop {
            let binding: HashMap<&str, &str> = a
                .params
                .iter()
                .zip(&idx)
                .enumerate()
                .map(|(k, (p, &i))| (p.name.as_str(), candidates[k][i]))
                .collect();
            let mut label = format!("({}", a.name);
            for p in &a.params {
                label.push(' ');
                label.push_str(binding[p.name.as_str()]);
            }
            label.push(')');
            let pre = a.precondition.iter().map(|l| ground(l, &binding)).collect();
            let (mut add, mut del) = (Vec::new(), Vec::new());
            for l in &a.effect {
                let g = ground(l, &binding);
                if g.positive {
                    add.push(g.atom);
                } else {
                    del.push(g.atom);
                }
            }
            out.push(GroundAction { label, pre, add, del });
            if !advance(&mut idx, &candidates) {
                break;
            }
        }
    }
    out
}

// Odometer step over the candidate lists; false once every tuple was visited.
fn advance(idx: &mut [usize], candidates: &[Vec<&str>]) -> bool {
    for k in 0..idx.len() {
        idx[k] += 1;
        if idx[k] < candidates[k].len() {
            return true;
        }
        idx[k] = 0;
    }
    false
}

/// Breadth-first search over ground states. Returns the action labels of a
/// shortest plan, or `None` when no plan exists within `max_nodes` expansions.
pub fn plan_bfs(domain: &PddlDomainAst, problem: &PddlProblem, max_nodes: usize) -> Option<Vec<String>> {
    let actions = ground_actions(domain, problem);
    let start: BTreeSet<Atom> = problem.init.iter().cloned().collect();
    let goal_met = |s: &BTreeSet<Atom>| problem.goal.iter().all(|g| holds(s, g));
    let mut parent: HashMap<BTreeSet<Atom>, Option<(BTreeSet<Atom>, usize)>> = HashMap::new();
    parent.insert(start.clone(), None);
    let mut queue = VecDeque::from([start]);
    let mut expanded = 0;
    while let Some(s) = queue.pop_front() {
        if goal_met(&s) {
            let mut plan = Vec::new();
            let mut cur = s;
            while let Some(Some((prev, ai))) = parent.get(&cur).cloned() {
                plan.push(actions[ai].label.clone());
                cur = prev;
            }
            plan.reverse();
            return Some(plan);
        }
        if expanded >= max_nodes {
            return None;
        }
        expanded += 1;
        for (ai, a) in actions.iter().enumerate() {
            if !a.pre.iter().all(|l| holds(&s, l)) {
                continue;
            }
            let mut next = s.clone();
            for d in &a.del {
                next.remove(d);
            }
            next.extend(a.add.iter().cloned());
            if !parent.contains_key(&next) {
                parent.insert(next.clone(), Some((s.clone(), ai)));
                queue.push_back(next);
            }
        }
    }
    None
}

/// Parses the domain, pairs it with an empty-goal problem and solves that.
pub fn solvability_probe(domain_source: &str) -> Result<(), String> {
    let d = parse_domain(domain_source).map_err(|e| format!("domain does not parse: {e}"))?;
    let p = parse_problem(&empty_goal_problem(&d.name), &d).map_err(|e| format!("probe problem rejected: {e}"))?;
    match plan_bfs(&d, &p, 1000) {
        Some(_) => Ok(()),
        None => Err("planner found no plan for the probe problem".into()),
    }
}

/// Ground atom as text, e.g. `(at truck1 depot)`.
pub fn ground_atom_text(a: &Atom) -> String {
    atom_text(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRIPPER: &str = "(define (domain gripper) (:requirements :strips :typing)
        (:types room ball gripper)
        (:predicates (at-robby ?r - room) (at ?b - ball ?r - room) (free ?g - gripper) (carry ?o - ball ?g - gripper))
        (:action move :parameters (?from ?to - room) :precondition (at-robby ?from)
          :effect (and (at-robby ?to) (not (at-robby ?from))))
        (:action pick :parameters (?obj - ball ?room - room ?g - gripper)
          :precondition (and (at ?obj ?room) (at-robby ?room) (free ?g))
          :effect (and (carry ?obj ?g) (not (at ?obj ?room)) (not (free ?g))))
        (:action drop :parameters (?obj - ball ?room - room ?g - gripper)
          :precondition (and (carry ?obj ?g) (at-robby ?room))
          :effect (and (at ?obj ?room) (free ?g) (not (carry ?obj ?g)))))";

    #[test]
    fn bfs_finds_shortest_plan() {
        let d = parse_domain(GRIPPER).unwrap();
        let p = parse_problem(
            "(define (problem p1) (:domain gripper)
              (:objects rooma roomb - room b1 - ball left - gripper)
              (:init (at-robby rooma) (at b1 rooma) (free left))
              (:goal (and (at b1 roomb))))",
            &d,
        )
        .unwrap();
        let plan = plan_bfs(&d, &p, 10_000).unwrap();
        assert_eq!(
            plan,
            vec!["(pick b1 rooma left)", "(move rooma roomb)", "(drop b1 roomb left)"]
        );
    }

    #[test]
    fn problem_validation() {
        let d = parse_domain(GRIPPER).unwrap();
        let bad_type = parse_problem("(define (problem p) (:domain gripper) (:objects x - ghost))", &d);
        assert_eq!(bad_type.unwrap_err().category(), ErrorCategory::UndefinedType);
        let bad_obj = parse_problem("(define (problem p) (:domain gripper) (:init (at-robby nowhere)))", &d);
        assert_eq!(bad_obj.unwrap_err().category(), ErrorCategory::UndefinedConstant);
        let wrong_domain = parse_problem("(define (problem p) (:domain other))", &d);
        assert!(wrong_domain.is_err());
    }

    #[test]
    fn probe() {
        assert!(solvability_probe(GRIPPER).is_ok());
        assert!(solvability_probe("(define (domain d))").is_ok());
        assert!(solvability_probe("(define (domain d) (:predicates (p))").is_err());
    }

    #[test]
    fn unreachable_goal() {
        let d = parse_domain(GRIPPER).unwrap();
        let p = parse_problem(
            "(define (problem p) (:domain gripper) (:objects r - room b - ball) (:init) (:goal (at b r)))",
            &d,
        )
        .unwrap();
        assert_eq!(plan_bfs(&d, &p, 1000), None);
        assert_eq!(ground_atom_text(&p.goal[0].atom), "(at b r)");
    }
}
