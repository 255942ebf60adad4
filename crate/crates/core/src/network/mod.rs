//! Reaction networks: species, complexes, reactions and their kinetics.
//!
//! A network owns an ordered species list (order of first appearance in the
//! source text), a list of reactions with positive rate constants, and one
//! intensity rule per species.

mod balance;
mod parse;
mod partition;
mod tail;

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use balance::{
    balance_step, search_complex_balanced, search_complex_balanced_with,
    verify_complex_balanced, verify_complex_balanced_with_tolerance, BalanceReport,
    SearchOptions,
};
pub use parse::parse_network;
pub use partition::{
    derive_catalytic_partition, Catalysis, CatalyticLink, CatalyticPartition, PartitionFailure,
};
pub use tail::{
    autocatalytic_tail_decay, tail_decay_candidates, tail_decay_for_alpha, tail_decay_parameters,
    TailDecay,
    ALPHA_CANDIDATES,
};

/// Errors raised while building, parsing or analysing a network.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: duplicate reaction {reaction}")]
    DuplicateReaction { line: usize, reaction: String },
    #[error("line {line}: rate constant must be positive, got {value}")]
    NonPositiveRate { line: usize, value: f64 },
    #[error("line {line}: source and product complexes are identical")]
    SourceEqualsProduct { line: usize },
    #[error("line {line}: {message}")]
    InvalidKinetics { line: usize, message: String },
    #[error("network has no reactions")]
    Empty,
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("expected a vector of length {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("equilibrium entry {index} must be positive and finite, got {value}")]
    NonPositiveEquilibrium { index: usize, value: f64 },
    #[error("no complex-balanced equilibrium found after {iterations} iterations (residual {residual:.3e}): {reason}")]
    NoCertificate {
        iterations: usize,
        residual: f64,
        reason: String,
    },
    #[error("no tail-decay exponent in {{1, 1/2, 1/4}} works: {0}")]
    TailTooHeavy(String),
}

/// Stoichiometric coefficients of a complex, one entry per species.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Complex(Vec<u32>);

impl Complex {
    pub fn new(coefficients: Vec<u32>) -> Self {
        Self(coefficients)
    }

    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    /// `n` copies of species `i`.
    pub fn unit(dim: usize, i: usize, n: u32) -> Self {
        let mut c = vec![0; dim];
        c[i] = n;
        Self(c)
    }

    pub fn coefficients(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0)
    }

    /// Evaluates the monomial `c^y`.
    pub fn monomial(&self, c: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(c)
            .map(|(&y, &ci)| ci.powi(y as i32))
            .product()
    }

    fn render(&self, names: &[String]) -> String {
        let terms: Vec<String> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, &y)| y > 0)
            .map(|(i, &y)| {
                if y == 1 {
                    names[i].clone()
                } else {
                    format!("{y} {}", names[i])
                }
            })
            .collect();
        if terms.is_empty() {
            "0".to_string()
        } else {
            terms.join(" + ")
        }
    }
}

/// A single reaction `source -> product` with mass-action style rate constant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reaction {
    pub source: Complex,
    pub product: Complex,
    pub kappa: f64,
}

impl Reaction {
    /// Net change `product - source`.
    pub fn reaction_vector(&self) -> Vec<i64> {
        reaction_vector(self)
    }
}

/// Net change `product - source` of a reaction.
pub fn reaction_vector(reaction: &Reaction) -> Vec<i64> {
    reaction
        .product
        .coefficients()
        .iter()
        .zip(reaction.source.coefficients())
        .map(|(&p, &s)| i64::from(p) - i64::from(s))
        .collect()
}

/// Per-species intensity rule. Every rule vanishes on `n <= 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Theta {
    /// `theta(n) = n`.
    MassAction,
    /// `theta(n) = n^beta`, `beta > 0`.
    Power(f64),
    /// `theta(n) = sum_j c_j n (n-1) ... (n-j+1)` with `c_1, c_2, ...`.
    FallingFactorialPoly(Vec<f64>),
}

impl Theta {
    pub fn eval(&self, n: i64) -> f64 {
        if n <= 0 {
            return 0.0;
        }
        let x = n as f64;
        match self {
            Theta::MassAction => x,
            Theta::Power(beta) => x.powf(*beta),
            Theta::FallingFactorialPoly(coeffs) => {
                let mut falling = 1.0;
                let mut total = 0.0;
                for (j, c) in coeffs.iter().enumerate() {
                    falling *= x - j as f64;
                    if falling == 0.0 {
                        break;
                    }
                    total += c * falling;
                }
                total
            }
        }
    }

    /// Checks that the rule is positive on the positive integers.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Theta::MassAction => Ok(()),
            Theta::Power(beta) if beta.is_finite() && *beta > 0.0 => Ok(()),
            Theta::Power(beta) => Err(format!("power exponent must be positive, got {beta}")),
            Theta::FallingFactorialPoly(coeffs) => {
                if coeffs.is_empty() {
                    return Err("poly needs at least one coefficient".into());
                }
                if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
                    return Err("poly coefficients must be finite and non-negative".into());
                }
                if coeffs[0] <= 0.0 {
                    return Err("poly coefficient c1 must be positive so theta(1) > 0".into());
                }
                Ok(())
            }
        }
    }

    fn render(&self) -> String {
        match self {
            Theta::MassAction => "massaction".into(),
            Theta::Power(beta) => format!("power {beta}"),
            Theta::FallingFactorialPoly(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                format!("poly {}", parts.join(","))
            }
        }
    }
}

/// A validated reaction network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReactionNetwork {
    names: Vec<String>,
    reactions: Vec<Reaction>,
    kinetics: Vec<Theta>,
}

impl ReactionNetwork {
    /// Builds a network, enforcing the same rules as the text parser.
    pub fn new(
        names: Vec<String>,
        reactions: Vec<Reaction>,
        kinetics: Vec<Theta>,
    ) -> Result<Self, NetworkError> {
        let d = names.len();
        if reactions.is_empty() {
            return Err(NetworkError::Empty);
        }
        if kinetics.len() != d {
            return Err(NetworkError::DimensionMismatch {
                expected: d,
                found: kinetics.len(),
            });
        }
        let mut seen_names = HashSet::new();
        for name in &names {
            if !is_identifier(name) {
                return Err(NetworkError::Invalid(format!("bad species name {name:?}")));
            }
            if !seen_names.insert(name) {
                return Err(NetworkError::Invalid(format!("species {name} listed twice")));
            }
        }
        let mut seen = HashSet::new();
        for r in &reactions {
            if r.source.dim() != d || r.product.dim() != d {
                return Err(NetworkError::DimensionMismatch {
                    expected: d,
                    found: r.source.dim().max(r.product.dim()),
                });
            }
            if !(r.kappa > 0.0 && r.kappa.is_finite()) {
                return Err(NetworkError::NonPositiveRate {
                    line: 0,
                    value: r.kappa,
                });
            }
            if r.source == r.product {
                return Err(NetworkError::SourceEqualsProduct { line: 0 });
            }
            if !seen.insert((r.source.clone(), r.product.clone())) {
                return Err(NetworkError::DuplicateReaction {
                    line: 0,
                    reaction: format!("{} -> {}", r.source.render(&names), r.product.render(&names)),
                });
            }
        }
        for theta in &kinetics {
            theta
                .validate()
                .map_err(|message| NetworkError::InvalidKinetics { line: 0, message })?;
        }
        Ok(Self {
            names,
            reactions,
            kinetics,
        })
    }

    /// Parses the line-oriented network format.
    pub fn parse(text: &str) -> Result<Self, NetworkError> {
        parse_network(text)
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn kinetics(&self) -> &[Theta] {
        &self.kinetics
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Whether every species follows mass-action kinetics.
    pub fn is_mass_action(&self) -> bool {
        self.kinetics.iter().all(|t| *t == Theta::MassAction)
    }

    /// Distinct complexes in order of first appearance.
    pub fn complexes(&self) -> Vec<Complex> {
        let mut out: Vec<Complex> = Vec::new();
        for r in &self.reactions {
            for c in [&r.source, &r.product] {
                if !out.contains(c) {
                    out.push(c.clone());
                }
            }
        }
        out
    }

    /// Human-readable form of a reaction.
    pub fn describe(&self, reaction: &Reaction) -> String {
        format!(
            "{} -> {}",
            reaction.source.render(&self.names),
            reaction.product.render(&self.names)
        )
    }

    pub fn describe_complex(&self, complex: &Complex) -> String {
        complex.render(&self.names)
    }
}

/// Renders the network in the text format accepted by [`parse_network`].
impl fmt::Display for ReactionNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.reactions {
            writeln!(f, "{} : {}", self.describe(r), r.kappa)?;
        }
        for (name, theta) in self.names.iter().zip(&self.kinetics) {
            if *theta != Theta::MassAction {
                writeln!(f, "theta {name}: {}", theta.render())?;
            }
        }
        Ok(())
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
