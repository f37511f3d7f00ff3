use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::ast::*;

/// Character-level edit distance (insert, delete, substitute; unit costs).
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - lev / max(|a|, |b|)` in chars; two empty strings score 1.
pub fn similarity(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ComponentF1 {
    pub f1_pred: f64,
    pub f1_param: f64,
    pub f1_precond: f64,
    pub f1_eff: f64,
    pub f1_avg: f64,
}

fn multiset<T: Ord>(items: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

fn multiset_f1<T: Ord>(gen: &BTreeMap<T, usize>, gold: &BTreeMap<T, usize>) -> f64 {
    let ng: usize = gen.values().sum();
    let nr: usize = gold.values().sum();
    if ng + nr == 0 {
        return 1.0;
    }
    let overlap: usize = gen
        .iter()
        .map(|(k, c)| (*c).min(gold.get(k).copied().unwrap_or(0)))
        .sum();
    2.0 * overlap as f64 / (ng + nr) as f64
}

type LitKey = (bool, String, Vec<String>);

fn literal_keys(a: &ActionDef, lits: &[Literal]) -> BTreeMap<LitKey, usize> {
    multiset(lits.iter().map(|l| {
        let args = l
            .atom
            .args
            .iter()
            .map(|t| match t {
                Term::Var(v) => match a.params.iter().position(|p| p.name == *v) {
                    Some(i) => format!("?{i}"),
                    None => v.clone(),
                },
                Term::Const(c) => c.clone(),
            })
            .collect();
        (l.positive, l.atom.predicate.clone(), args)
    }))
}

fn per_action(gen: &PddlDomainAst, gold: &PddlDomainAst, score: impl Fn(&ActionDef, &ActionDef) -> f64) -> f64 {
    let names: BTreeSet<&str> = gen
        .actions
        .iter()
        .chain(&gold.actions)
        .map(|a| a.name.as_str())
        .collect();
    if names.is_empty() {
        return 1.0;
    }
    let total: f64 = names
        .iter()
        .map(|n| match (gen.action(n), gold.action(n)) {
            (Some(g), Some(r)) => score(g, r),
            _ => 0.0,
        })
        .sum();
    total / names.len() as f64
}

/// Structural F1 of a generated domain against a reference, per component.
/// Actions are paired by name; an action present on only one side scores 0.
/// Variables are compared by parameter position, so renaming them is free.
pub fn component_f1(gen: &PddlDomainAst, gold: &PddlDomainAst) -> ComponentF1 {
    let preds = |d: &PddlDomainAst| {
        multiset(d.predicates.iter().map(|p| {
            let tys: Vec<String> = p.params.iter().map(|t| t.ty.clone()).collect();
            (p.name.clone(), tys)
        }))
    };
    let f1_pred = multiset_f1(&preds(gen), &preds(gold));
    let params = |a: &ActionDef| multiset(a.params.iter().enumerate().map(|(i, p)| (i, p.ty.clone())));
    let f1_param = per_action(gen, gold, |g, r| multiset_f1(&params(g), &params(r)));
    let f1_precond = per_action(gen, gold, |g, r| {
        multiset_f1(&literal_keys(g, &g.precondition), &literal_keys(r, &r.precondition))
    });
    let f1_eff = per_action(gen, gold, |g, r| {
        multiset_f1(&literal_keys(g, &g.effect), &literal_keys(r, &r.effect))
    });
    ComponentF1 {
        f1_pred,
        f1_param,
        f1_precond,
        f1_eff,
        f1_avg: (f1_pred + f1_param + f1_precond + f1_eff) / 4.0,
    }
}
