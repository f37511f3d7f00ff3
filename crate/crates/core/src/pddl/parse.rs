use std::collections::{BTreeSet, HashSet};

use super::ast::*;
use super::sexpr::{read, SExpr};
use super::{ErrorCategory, PddlError};

const SUPPORTED_REQUIREMENTS: &[&str] = &[":strips", ":typing", ":negative-preconditions", ":equality"];
const UNSUPPORTED_SECTIONS: &[&str] = &[":functions", ":derived", ":durative-action", ":constraints", ":timeless"];
const UNSUPPORTED_CONNECTIVES: &[&str] = &[
    "or", "imply", "exists", "forall", "when", "either", "increase", "decrease", "assign", "scale-up", "scale-down",
    ">", "<", ">=", "<=",
];

/// Parses and validates a domain. Identifiers are lowercased and nested
/// conjunctions flattened.
pub fn parse_domain(source: &str) -> Result<PddlDomainAst, PddlError> {
    let top = read(source)?;
    let items = top.list().expect("reader returns a list at top level");
    if items.first().and_then(SExpr::atom) != Some("define") {
        return Err(syntax_at(&top, "expected (define ...)"));
    }
    let name = match items.get(1) {
        Some(e) if e.head() == Some("domain") => match e.list().unwrap() {
            [_, SExpr::Atom { text, .. }] => text.clone(),
            _ => return Err(syntax_at(e, "expected (domain <name>)")),
        },
        Some(e) => return Err(syntax_at(e, "expected (domain <name>)")),
        None => return Err(syntax_at(&top, "missing (domain <name>)")),
    };

    let mut requirements: Option<&SExpr> = None;
    let mut types: Option<&SExpr> = None;
    let mut constants: Option<&SExpr> = None;
    let mut predicates: Option<&SExpr> = None;
    let mut actions: Vec<&SExpr> = Vec::new();
    for sec in &items[2..] {
        let head = sec.head().ok_or_else(|| syntax_at(sec, "expected a section such as (:predicates ...)"))?;
        let slot = match head {
            ":requirements" => &mut requirements,
            ":types" => &mut types,
            ":constants" => &mut constants,
            ":predicates" => &mut predicates,
            ":action" => {
                actions.push(sec);
                continue;
            }
            h if UNSUPPORTED_SECTIONS.contains(&h) => return Err(PddlError::unsupported(sec.pos(), h)),
            h => return Err(syntax_at(sec, format!("unknown section {h}"))),
        };
        if slot.is_some() {
            return Err(PddlError::semantic(
                ErrorCategory::DuplicateDefinition,
                sec.pos(),
                format!("section {head} appears twice"),
            ));
        }
        *slot = Some(sec);
    }

    let mut dom = PddlDomainAst {
        name,
        requirements: BTreeSet::new(),
        types: Vec::new(),
        constants: Vec::new(),
        predicates: Vec::new(),
        actions: Vec::new(),
    };

    if let Some(sec) = requirements {
        for r in &sec.list().unwrap()[1..] {
            let text = r.atom().ok_or_else(|| syntax_at(r, "requirement must be a keyword"))?;
            if !text.starts_with(':') {
                return Err(syntax_at(r, format!("requirement {text} must start with ':'")));
            }
            if !SUPPORTED_REQUIREMENTS.contains(&text) {
                return Err(PddlError::unsupported(r.pos(), text));
            }
            dom.requirements.insert(text.to_string());
        }
    }

    if let Some(sec) = types {
        let mut implicit: Vec<(String, (usize, usize))> = Vec::new();
        for (t, parent, pos) in typed_list(&sec.list().unwrap()[1..], false)? {
            if t == ROOT_TYPE {
                continue;
            }
            if dom.types.iter().any(|(x, _)| *x == t) {
                return Err(PddlError::semantic(
                    ErrorCategory::DuplicateDefinition,
                    pos,
                    format!("type {t} declared twice"),
                ));
            }
            if parent != ROOT_TYPE {
                implicit.push((parent.clone(), pos));
            }
            dom.types.push((t, parent));
        }
        for (p, _) in implicit {
            if !dom.is_type_declared(&p) {
                dom.types.push((p, ROOT_TYPE.to_string()));
            }
        }
        for (t, _) in &dom.types {
            if !dom.is_subtype(t, ROOT_TYPE) || has_cycle(&dom, t) {
                return Err(PddlError::semantic(
                    ErrorCategory::TypeMismatch,
                    sec.pos(),
                    format!("type hierarchy through {t} is cyclic"),
                ));
            }
        }
    }

    if let Some(sec) = constants {
        for (c, ty, pos) in typed_list(&sec.list().unwrap()[1..], false)? {
            require_type(&dom, &ty, pos)?;
            if dom.constants.iter().any(|x| x.name == c) {
                return Err(PddlError::semantic(
                    ErrorCategory::DuplicateDefinition,
                    pos,
                    format!("constant {c} declared twice"),
                ));
            }
            dom.constants.push(TypedName { name: c, ty });
        }
    }

    if let Some(sec) = predicates {
        for p in &sec.list().unwrap()[1..] {
            let parts = p.list().ok_or_else(|| syntax_at(p, "predicate must be a list"))?;
            let pname = parts
                .first()
                .and_then(SExpr::atom)
                .ok_or_else(|| syntax_at(p, "predicate needs a name"))?;
            if pname.starts_with('?') || pname.starts_with(':') {
                return Err(syntax_at(p, format!("invalid predicate name {pname}")));
            }
            if dom.predicate(pname).is_some() {
                return Err(PddlError::semantic(
                    ErrorCategory::DuplicateDefinition,
                    p.pos(),
                    format!("predicate {pname} declared twice"),
                ));
            }
            let params = typed_params(&dom, &parts[1..])?;
            dom.predicates.push(PredicateSig {
                name: pname.to_string(),
                params,
            });
        }
    }

    for sec in actions {
        let action = parse_action(&dom, sec)?;
        if dom.action(&action.name).is_some() {
            return Err(PddlError::semantic(
                ErrorCategory::DuplicateDefinition,
                sec.pos(),
                format!("action {} declared twice", action.name),
            ));
        }
        dom.actions.push(action);
    }
    Ok(dom)
}

/// True iff the source parses with no errors of any kind.
pub fn executability(source: &str) -> bool {
    parse_domain(source).is_ok()
}

fn has_cycle(dom: &PddlDomainAst, start: &str) -> bool {
    let mut seen = HashSet::new();
    let mut cur = start;
    while let Some(p) = dom.parent_of(cur) {
        if !seen.insert(cur) {
            return true;
        }
        cur = p;
    }
    false
}

pub(super) fn syntax_at(e: &SExpr, msg: impl Into<String>) -> PddlError {
    let (l, c) = e.pos();
    PddlError::syntax(l, c, msg)
}

pub(super) fn require_type(dom: &PddlDomainAst, ty: &str, pos: (usize, usize)) -> Result<(), PddlError> {
    if dom.is_type_declared(ty) {
        Ok(())
    } else {
        Err(PddlError::semantic(
            ErrorCategory::UndefinedType,
            pos,
            format!("type {ty} is not declared"),
        ))
    }
}

/// `a b - t c` → [(a,t), (b,t), (c,object)].
pub(super) fn typed_list(items: &[SExpr], vars: bool) -> Result<Vec<(String, String, (usize, usize))>, PddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<(String, (usize, usize))> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let it = &items[i];
        match it {
            SExpr::Atom { text, .. } if text == "-" => {
                let ty = match items.get(i + 1) {
                    Some(SExpr::Atom { text, .. }) if text != "-" && !text.starts_with('?') => text.clone(),
                    Some(e) if e.head() == Some("either") => return Err(PddlError::unsupported(e.pos(), "either")),
                    Some(e) => return Err(syntax_at(e, "expected a type name after '-'")),
                    None => return Err(syntax_at(it, "expected a type name after '-'")),
                };
                if pending.is_empty() {
                    return Err(syntax_at(it, "'-' without preceding names"));
                }
                out.extend(pending.drain(..).map(|(n, p)| (n, ty.clone(), p)));
                i += 2;
                continue;
            }
            SExpr::Atom { text, .. } => {
                if vars != text.starts_with('?') {
                    let what = if vars { "a variable (?x)" } else { "a name" };
                    return Err(syntax_at(it, format!("expected {what}, found {text}")));
                }
                if vars && text.len() < 2 {
                    return Err(syntax_at(it, "empty variable name"));
                }
                pending.push((text.clone(), it.pos()));
            }
            SExpr::List { .. } => return Err(syntax_at(it, "unexpected list in typed list")),
        }
        i += 1;
    }
    out.extend(pending.into_iter().map(|(n, p)| (n, ROOT_TYPE.to_string(), p)));
    Ok(out)
}

pub(super) fn typed_params(dom: &PddlDomainAst, items: &[SExpr]) -> Result<Vec<TypedName>, PddlError> {
    let mut params: Vec<TypedName> = Vec::new();
    for (v, ty, pos) in typed_list(items, true)? {
        require_type(dom, &ty, pos)?;
        if params.iter().any(|p| p.name == v) {
            return Err(PddlError::semantic(
                ErrorCategory::DuplicateDefinition,
                pos,
                format!("variable {v} bound twice"),
            ));
        }
        params.push(TypedName { name: v, ty });
    }
    Ok(params)
}

fn parse_action(dom: &PddlDomainAst, sec: &SExpr) -> Result<ActionDef, PddlError> {
    let items = sec.list().unwrap();
    let name = match items.get(1) {
        Some(SExpr::Atom { text, .. }) if !text.starts_with(':') && !text.starts_with('?') => text.clone(),
        _ => return Err(syntax_at(sec, "action needs a name")),
    };
    let mut params_e: Option<&SExpr> = None;
    let mut pre_e: Option<&SExpr> = None;
    let mut eff_e: Option<&SExpr> = None;
    let mut i = 2;
    while i < items.len() {
        let key = items[i]
            .atom()
            .ok_or_else(|| syntax_at(&items[i], "expected :parameters, :precondition or :effect"))?;
        let val = items
            .get(i + 1)
            .ok_or_else(|| syntax_at(&items[i], format!("{key} needs a value")))?;
        let slot = match key {
            ":parameters" => &mut params_e,
            ":precondition" => &mut pre_e,
            ":effect" => &mut eff_e,
            ":duration" | ":condition" => return Err(PddlError::unsupported(items[i].pos(), key)),
            other => return Err(syntax_at(&items[i], format!("unknown action key {other}"))),
        };
        if slot.is_some() {
            return Err(PddlError::semantic(
                ErrorCategory::DuplicateDefinition,
                items[i].pos(),
                format!("{key} given twice in action {name}"),
            ));
        }
        *slot = Some(val);
        i += 2;
    }
    let params = match params_e {
        Some(e) => {
            let l = e.list().ok_or_else(|| syntax_at(e, ":parameters must be a list"))?;
            typed_params(dom, l)?
        }
        None => Vec::new(),
    };
    let scope = Scope {
        dom,
        vars: &params,
        objects: &[],
    };
    let mut precondition = Vec::new();
    if let Some(e) = pre_e {
        collect_literals(&scope, e, false, &mut precondition)?;
    }
    let mut effect = Vec::new();
    if let Some(e) = eff_e {
        collect_literals(&scope, e, true, &mut effect)?;
    }
    Ok(ActionDef {
        name,
        params,
        precondition,
        effect,
    })
}

pub(super) struct Scope<'a> {
    pub dom: &'a PddlDomainAst,
    pub vars: &'a [TypedName],
    /// Problem objects, in addition to domain constants.
    pub objects: &'a [TypedName],
}

impl Scope<'_> {
    fn term_type(&self, t: &str, e: &SExpr) -> Result<(Term, String), PddlError> {
        if t.starts_with('?') {
            return match self.vars.iter().find(|v| v.name == t) {
                Some(v) => Ok((Term::Var(t.to_string()), v.ty.clone())),
                None => Err(PddlError::semantic(
                    ErrorCategory::UndefinedConstant,
                    e.pos(),
                    format!("variable {t} is not bound by the parameters"),
                )),
            };
        }
        let ty = self
            .dom
            .constant_type(t)
            .or_else(|| self.objects.iter().find(|o| o.name == t).map(|o| o.ty.as_str()));
        match ty {
            Some(ty) => Ok((Term::Const(t.to_string()), ty.to_string())),
            None => Err(PddlError::semantic(
                ErrorCategory::UndefinedConstant,
                e.pos(),
                format!("constant {t} is not declared"),
            )),
        }
    }
}

/// Flattens a goal description or effect into literals.
pub(super) fn collect_literals(
    scope: &Scope<'_>,
    e: &SExpr,
    is_effect: bool,
    out: &mut Vec<Literal>,
) -> Result<(), PddlError> {
    let items = match e {
        SExpr::List { items, .. } => items,
        SExpr::Atom { .. } => return Err(syntax_at(e, "expected a formula in parentheses")),
    };
    let Some(head) = items.first() else {
        return Ok(());
    };
    let head_text = head.atom().ok_or_else(|| syntax_at(head, "formula must start with a name"))?;
    match head_text {
        "and" => {
            for sub in &items[1..] {
                collect_literals(scope, sub, is_effect, out)?;
            }
            Ok(())
        }
        "not" => {
            let [_, inner] = items.as_slice() else {
                return Err(syntax_at(e, "not takes exactly one argument"));
            };
            match inner.head() {
                Some(h) if h == "and" || h == "not" || UNSUPPORTED_CONNECTIVES.contains(&h) => {
                    Err(PddlError::unsupported(inner.pos(), format!("not ({h} ...)")))
                }
                _ => {
                    let atom = parse_atom(scope, inner, is_effect)?;
                    out.push(Literal { positive: false, atom });
                    Ok(())
                }
            }
        }
        h if UNSUPPORTED_CONNECTIVES.contains(&h) => Err(PddlError::unsupported(head.pos(), h)),
        _ => {
            let atom = parse_atom(scope, e, is_effect)?;
            out.push(Literal { positive: true, atom });
            Ok(())
        }
    }
}

fn parse_atom(scope: &Scope<'_>, e: &SExpr, is_effect: bool) -> Result<Atom, PddlError> {
    let items = e.list().ok_or_else(|| syntax_at(e, "expected an atom in parentheses"))?;
    let head = items
        .first()
        .ok_or_else(|| syntax_at(e, "empty atom"))?;
    let pred = head.atom().ok_or_else(|| syntax_at(head, "atom must start with a predicate name"))?;
    let mut args = Vec::new();
    let mut arg_types = Vec::new();
    for a in &items[1..] {
        let t = a.atom().ok_or_else(|| syntax_at(a, "nested term where a name was expected"))?;
        let (term, ty) = scope.term_type(t, a)?;
        args.push(term);
        arg_types.push(ty);
    }
    if pred == "=" {
        if is_effect {
            return Err(PddlError::unsupported(head.pos(), "equality in effect"));
        }
        if args.len() != 2 {
            return Err(PddlError::semantic(
                ErrorCategory::TypeMismatch,
                e.pos(),
                "= takes exactly two arguments",
            ));
        }
        return Ok(Atom {
            predicate: pred.to_string(),
            args,
        });
    }
    let sig = scope.dom.predicate(pred).ok_or_else(|| {
        PddlError::semantic(
            ErrorCategory::UndefinedConstant,
            head.pos(),
            format!("predicate {pred} is not declared"),
        )
    })?;
    if sig.params.len() != args.len() {
        return Err(PddlError::semantic(
            ErrorCategory::TypeMismatch,
            e.pos(),
            format!("{pred} expects {} arguments, got {}", sig.params.len(), args.len()),
        ));
    }
    for ((ty, p), a) in arg_types.iter().zip(&sig.params).zip(&items[1..]) {
        if !scope.dom.is_subtype(ty, &p.ty) {
            return Err(PddlError::semantic(
                ErrorCategory::TypeMismatch,
                a.pos(),
                format!("argument of type {ty} where {pred} expects {}", p.ty),
            ));
        }
    }
    Ok(Atom {
        predicate: pred.to_string(),
        args,
    })
}
