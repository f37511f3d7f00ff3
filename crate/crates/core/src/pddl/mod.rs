//! PDDL domain parsing and validation for the `:strips :typing
//! :negative-preconditions` subset, plus text similarity and component F1.

mod ast;
mod metrics;
mod parse;
mod print;
mod problem;
pub mod sexpr;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ast::*;
pub use metrics::{component_f1, levenshtein, similarity, ComponentF1};
pub use parse::{executability, parse_domain};
pub use print::print_domain;
pub use problem::{empty_goal_problem, ground_atom_text, parse_problem, plan_bfs, solvability_probe, PddlProblem};

/// Closed set of validator error classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorCategory {
    UndefinedConstant,
    TypeMismatch,
    IncorrectParentheses,
    UndefinedType,
    UnsupportedFeature,
    DuplicateDefinition,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 6] = [
        ErrorCategory::UndefinedConstant,
        ErrorCategory::TypeMismatch,
        ErrorCategory::IncorrectParentheses,
        ErrorCategory::UndefinedType,
        ErrorCategory::UnsupportedFeature,
        ErrorCategory::DuplicateDefinition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::UndefinedConstant => "undefined-constant",
            ErrorCategory::TypeMismatch => "type-mismatch",
            ErrorCategory::IncorrectParentheses => "incorrect-parentheses",
            ErrorCategory::UndefinedType => "undefined-type",
            ErrorCategory::UnsupportedFeature => "unsupported-feature",
            ErrorCategory::DuplicateDefinition => "duplicate-definition",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PddlError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("unsupported feature {feature} at {line}:{col}")]
    Unsupported { feature: String, line: usize, col: usize },
    #[error("{category} at {line}:{col}: {message}")]
    Semantic {
        category: ErrorCategory,
        message: String,
        line: usize,
        col: usize,
    },
}

impl PddlError {
    pub(crate) fn syntax(line: usize, col: usize, message: impl Into<String>) -> Self {
        PddlError::Syntax {
            line,
            col,
            message: message.into(),
        }
    }

    pub(crate) fn unsupported(pos: (usize, usize), feature: impl Into<String>) -> Self {
        PddlError::Unsupported {
            feature: feature.into(),
            line: pos.0,
            col: pos.1,
        }
    }

    pub(crate) fn semantic(category: ErrorCategory, pos: (usize, usize), message: impl Into<String>) -> Self {
        PddlError::Semantic {
            category,
            message: message.into(),
            line: pos.0,
            col: pos.1,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            PddlError::Syntax { .. } => ErrorCategory::IncorrectParentheses,
            PddlError::Unsupported { .. } => ErrorCategory::UnsupportedFeature,
            PddlError::Semantic { category, .. } => *category,
        }
    }

    pub fn position(&self) -> (usize, usize) {
        match self {
            PddlError::Syntax { line, col, .. }
            | PddlError::Unsupported { line, col, .. }
            | PddlError::Semantic { line, col, .. } => (*line, *col),
        }
    }
}
