use std::fmt::Write;

use super::ast::*;

/// Canonical text form. Re-parsing the output yields an equal AST.
pub fn print_domain(d: &PddlDomainAst) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "(define (domain {})", d.name);
    if !d.requirements.is_empty() {
        let reqs: Vec<&str> = d.requirements.iter().map(String::as_str).collect();
        let _ = writeln!(s, "  (:requirements {})", reqs.join(" "));
    }
    if !d.types.is_empty() {
        s.push_str("  (:types");
        for (t, p) in &d.types {
            let _ = write!(s, "\n    {t} - {p}");
        }
        s.push_str(")\n");
    }
    if !d.constants.is_empty() {
        s.push_str("  (:constants");
        for c in &d.constants {
            let _ = write!(s, "\n    {} - {}", c.name, c.ty);
        }
        s.push_str(")\n");
    }
    if !d.predicates.is_empty() {
        s.push_str("  (:predicates");
        for p in &d.predicates {
            let _ = write!(s, "\n    ({}{})", p.name, params(&p.params));
        }
        s.push_str(")\n");
    }
    for a in &d.actions {
        let _ = writeln!(s, "  (:action {}", a.name);
        let _ = writeln!(s, "    :parameters ({})", params(&a.params).trim_start());
        let _ = writeln!(s, "    :precondition {}", conj(&a.precondition));
        let _ = writeln!(s, "    :effect {})", conj(&a.effect));
    }
    s.push(')');
    s.push('\n');
    s
}

fn params(ps: &[TypedName]) -> String {
    ps.iter().map(|p| format!(" {} - {}", p.name, p.ty)).collect()
}

pub(super) fn atom_text(a: &Atom) -> String {
    let mut s = format!("({}", a.predicate);
    for t in &a.args {
        s.push(' ');
        s.push_str(t.name());
    }
    s.push(')');
    s
}

pub(super) fn literal_text(l: &Literal) -> String {
    if l.positive {
        atom_text(&l.atom)
    } else {
        format!("(not {})", atom_text(&l.atom))
    }
}

fn conj(ls: &[Literal]) -> String {
    let parts: Vec<String> = ls.iter().map(literal_text).collect();
    if parts.is_empty() {
        "(and)".into()
    } else {
        format!("(and {})", parts.join(" "))
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_domain;
    use super::*;

    #[test]
    fn round_trip() {
        let src = "(define (domain x) (:requirements :typing :negative-preconditions)
            (:types a - object b - a) (:constants k - b)
            (:predicates (p ?x - a) (q))
            (:action act :parameters (?x - b) :precondition (and (p ?x) (not (q)) (p k)) :effect (q))
            (:action noop))";
        let d = parse_domain(src).unwrap();
        let printed = print_domain(&d);
        let again = parse_domain(&printed).unwrap();
        assert_eq!(d, again);
        assert_eq!(print_domain(&again), printed);
    }
}
