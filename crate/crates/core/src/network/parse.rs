//! Line-oriented network format.
//!
//! ```text
//! # comment
//! X2 -> X1 + X2 : 1.0
//! 0 <-> X2 : 3, 4
//! 2 X1 + X2 -> 3 X1 + 2 X2 : 0.5
//! theta X1: power 2
//! ```

use std::collections::{HashMap, HashSet};

use super::{Complex, NetworkError, Reaction, ReactionNetwork, Theta};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Plus,
    Arrow,
    BiArrow,
    Colon,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> NetworkError {
    NetworkError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

fn tokenize(line_no: usize, text: &str) -> Result<Vec<Token>, NetworkError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        let starts_number = c.is_ascii_digit()
            || c == '.'
            || (c == '-' && matches!(chars.get(i + 1), Some(n) if n.is_ascii_digit() || *n == '.'));
        if starts_number {
            let start = i;
            if c == '-' {
                i += 1;
            }
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            out.push(Token {
                tok: Tok::Num(chars[start..i].iter().collect()),
                column,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                column,
            });
            continue;
        }
        let (tok, width) = match c {
            '+' => (Tok::Plus, 1),
            ':' => (Tok::Colon, 1),
            ',' => (Tok::Comma, 1),
            '-' if chars.get(i + 1) == Some(&'>') => (Tok::Arrow, 2),
            '<' if chars.get(i + 1) == Some(&'-') && chars.get(i + 2) == Some(&'>') => {
                (Tok::BiArrow, 3)
            }
            _ => return Err(syntax(line_no, column, format!("unexpected character {c:?}"))),
        };
        out.push(Token { tok, column });
        i += width;
    }
    Ok(out)
}

struct Cursor<'a> {
    line: usize,
    tokens: &'a [Token],
    pos: usize,
    end_column: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn column(&self) -> usize {
        self.peek().map_or(self.end_column, |t| t.column)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), NetworkError> {
        let column = self.column();
        match self.next() {
            Some(t) if t.tok == *want => Ok(()),
            _ => Err(syntax(self.line, column, format!("expected {what}"))),
        }
    }

    fn number(&mut self, what: &str) -> Result<(f64, usize), NetworkError> {
        let column = self.column();
        match self.next() {
            Some(Token {
                tok: Tok::Num(s), ..
            }) => s
                .parse::<f64>()
                .map(|v| (v, column))
                .map_err(|_| syntax(self.line, column, format!("malformed number {s:?}"))),
            _ => Err(syntax(self.line, column, format!("expected {what}"))),
        }
    }

    fn finish(&self) -> Result<(), NetworkError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(syntax(self.line, t.column, "unexpected trailing input")),
        }
    }
}

type SparseComplex = Vec<(String, u32)>;

fn parse_complex(cur: &mut Cursor<'_>) -> Result<SparseComplex, NetworkError> {
    if let Some(Token {
        tok: Tok::Num(s), ..
    }) = cur.peek()
    {
        let is_bare_zero = s == "0"
            && !matches!(cur.tokens.get(cur.pos + 1), Some(Token { tok: Tok::Ident(_), .. }));
        if is_bare_zero {
            cur.next();
            return Ok(Vec::new());
        }
    }
    let mut terms: SparseComplex = Vec::new();
    loop {
        let column = cur.column();
        let mut coefficient = 1u32;
        if let Some(Token {
            tok: Tok::Num(s), ..
        }) = cur.peek()
        {
            coefficient = s.parse::<u32>().map_err(|_| {
                syntax(cur.line, column, format!("coefficient {s:?} is not a non-negative integer"))
            })?;
            if coefficient == 0 {
                return Err(syntax(cur.line, column, "zero coefficient; write the empty complex as 0"));
            }
            cur.next();
        }
        let column = cur.column();
        match cur.next() {
            Some(Token {
                tok: Tok::Ident(name),
                ..
            }) => {
                if name == "theta" {
                    return Err(syntax(cur.line, column, "'theta' is reserved"));
                }
                match terms.iter_mut().find(|(n, _)| n == name) {
                    Some(entry) => entry.1 += coefficient,
                    None => terms.push((name.clone(), coefficient)),
                }
            }
            _ => return Err(syntax(cur.line, column, "expected species name")),
        }
        if matches!(cur.peek(), Some(Token { tok: Tok::Plus, .. })) {
            cur.next();
        } else {
            return Ok(terms);
        }
    }
}

struct RawReaction {
    line: usize,
    source: SparseComplex,
    product: SparseComplex,
    kappa: f64,
}

struct RawTheta {
    line: usize,
    species: String,
    rule: Theta,
}

fn parse_theta(cur: &mut Cursor<'_>) -> Result<RawTheta, NetworkError> {
    cur.next(); // the `theta` keyword
    let column = cur.column();
    let species = match cur.next() {
        Some(Token {
            tok: Tok::Ident(n), ..
        }) => n.clone(),
        _ => return Err(syntax(cur.line, column, "expected species name after 'theta'")),
    };
    cur.expect(&Tok::Colon, "':' after species name")?;
    let column = cur.column();
    let kind = match cur.next() {
        Some(Token {
            tok: Tok::Ident(k), ..
        }) => k.clone(),
        _ => return Err(syntax(cur.line, column, "expected massaction, power or poly")),
    };
    let rule = match kind.as_str() {
        "massaction" => Theta::MassAction,
        "power" => Theta::Power(cur.number("power exponent")?.0),
        "poly" => {
            let mut coeffs = vec![cur.number("poly coefficient")?.0];
            while matches!(cur.peek(), Some(Token { tok: Tok::Comma, .. })) {
                cur.next();
                coeffs.push(cur.number("poly coefficient")?.0);
            }
            Theta::FallingFactorialPoly(coeffs)
        }
        other => {
            return Err(syntax(
                cur.line,
                column,
                format!("unknown kinetics {other:?}; expected massaction, power or poly"),
            ))
        }
    };
    cur.finish()?;
    rule.validate().map_err(|message| NetworkError::InvalidKinetics {
        line: cur.line,
        message,
    })?;
    Ok(RawTheta {
        line: cur.line,
        species,
        rule,
    })
}

fn parse_reaction_line(cur: &mut Cursor<'_>) -> Result<Vec<RawReaction>, NetworkError> {
    let source = parse_complex(cur)?;
    let column = cur.column();
    let reversible = match cur.next() {
        Some(Token { tok: Tok::Arrow, .. }) => false,
        Some(Token {
            tok: Tok::BiArrow, ..
        }) => true,
        _ => return Err(syntax(cur.line, column, "expected '->' or '<->'")),
    };
    let product = parse_complex(cur)?;
    cur.expect(&Tok::Colon, "':' before rate constant")?;
    let (forward, _) = cur.number("rate constant")?;
    let backward = if reversible {
        cur.expect(&Tok::Comma, "',' between forward and backward rate constants")?;
        Some(cur.number("backward rate constant")?.0)
    } else {
        None
    };
    cur.finish()?;
    let line = cur.line;
    let mut out = vec![RawReaction {
        line,
        source: source.clone(),
        product: product.clone(),
        kappa: forward,
    }];
    if let Some(kappa) = backward {
        out.push(RawReaction {
            line,
            source: product,
            product: source,
            kappa,
        });
    }
    Ok(out)
}

/// Parses the text format into a validated [`ReactionNetwork`].
///
/// Species are indexed in order of first appearance. Errors carry 1-based
/// line numbers (and columns for syntax errors).
pub fn parse_network(text: &str) -> Result<ReactionNetwork, NetworkError> {
    let mut raw_reactions = Vec::new();
    let mut raw_thetas = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let tokens = tokenize(line_no, line)?;
        if tokens.is_empty() {
            continue;
        }
        let mut cur = Cursor {
            line: line_no,
            tokens: &tokens,
            pos: 0,
            end_column: line.chars().count() + 1,
        };
        let is_theta = matches!(&tokens[0].tok, Tok::Ident(k) if k == "theta")
            && matches!(tokens.get(1), Some(Token { tok: Tok::Ident(_), .. }))
            && matches!(tokens.get(2), Some(Token { tok: Tok::Colon, .. }));
        if is_theta {
            raw_thetas.push(parse_theta(&mut cur)?);
        } else {
            raw_reactions.extend(parse_reaction_line(&mut cur)?);
        }
    }
    if raw_reactions.is_empty() {
        return Err(NetworkError::Empty);
    }

    let mut names: Vec<String> = Vec::new();
    for r in &raw_reactions {
        for (name, _) in r.source.iter().chain(&r.product) {
            if !names.contains(name) {
                names.push(name.clone());
            }
        }
    }
    let index: HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let d = names.len();
    let densify = |sparse: &SparseComplex| {
        let mut v = vec![0u32; d];
        for (name, coefficient) in sparse {
            v[index[name.as_str()]] += coefficient;
        }
        Complex::new(v)
    };

    let mut seen = HashSet::new();
    let mut reactions = Vec::with_capacity(raw_reactions.len());
    for raw in &raw_reactions {
        if !(raw.kappa > 0.0 && raw.kappa.is_finite()) {
            return Err(NetworkError::NonPositiveRate {
                line: raw.line,
                value: raw.kappa,
            });
        }
        let source = densify(&raw.source);
        let product = densify(&raw.product);
        if source == product {
            return Err(NetworkError::SourceEqualsProduct { line: raw.line });
        }
        if !seen.insert((source.clone(), product.clone())) {
            return Err(NetworkError::DuplicateReaction {
                line: raw.line,
                reaction: format!("{} -> {}", source.render(&names), product.render(&names)),
            });
        }
        reactions.push(Reaction {
            source,
            product,
            kappa: raw.kappa,
        });
    }

    let mut kinetics = vec![Theta::MassAction; d];
    let mut assigned = HashSet::new();
    for t in raw_thetas {
        let Some(&i) = index.get(t.species.as_str()) else {
            return Err(NetworkError::InvalidKinetics {
                line: t.line,
                message: format!("species {} does not occur in any reaction", t.species),
            });
        };
        if !assigned.insert(i) {
            return Err(NetworkError::InvalidKinetics {
                line: t.line,
                message: format!("kinetics for {} given twice", t.species),
            });
        }
        kinetics[i] = t.rule;
    }
    ReactionNetwork::new(names, reactions, kinetics)
}
