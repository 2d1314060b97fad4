//! Safety specifications with quantitative (robustness) semantics.
//!
//! # Grammar
//!
//! ```text
//! spec      := or
//! or        := and ( ("|" | "||") and )*
//! and       := unary ( ("&" | "&&") unary )*
//! unary     := ("!" | "~") unary
//!            | "G" interval? unary          -- globally
//!            | "F" interval? unary          -- eventually
//!            | "(" spec ")"
//!            | predicate
//! predicate := IDENT (">" | "<") NUMBER
//! interval  := "[" NUMBER "," (NUMBER | "D") "]"
//! ```
//!
//! `D` stands for the duration of the trajectory the spec is evaluated on,
//! and an omitted interval means `[0,D]`. `G` and `F` are reserved and
//! cannot be used as channel names.
//!
//! Robustness is computed on the sample grid without interpolation:
//! `x > c` maps to `x(t) - c`, `x < c` to `c - x(t)`, negation flips the
//! sign, `&`/`|` take min/max and `G`/`F` take min/max over the window.
//! Window bounds are rounded inward to the grid. Windows that run past the
//! end of the trajectory are truncated at the last sample (the signal is
//! held at its final value).

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::space::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    Greater,
    Less,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum UpperBound {
    Time(f64),
    /// The evaluated trajectory's duration.
    Horizon,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: UpperBound,
}

impl Interval {
    pub const FULL: Interval = Interval { lower: 0.0, upper: UpperBound::Horizon };

    pub fn new(lower: f64, upper: f64) -> Self {
        Interval { lower, upper: UpperBound::Time(upper) }
    }

    fn resolve(&self, duration: f64) -> (f64, f64) {
        match self.upper {
            UpperBound::Time(b) => (self.lower, b),
            UpperBound::Horizon => (self.lower, duration),
        }
    }
}

/// Formula AST.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SafetySpec {
    Predicate {
        channel: String,
        cmp: Comparator,
        threshold: f64,
    },
    Not(Box<SafetySpec>),
    And(Box<SafetySpec>, Box<SafetySpec>),
    Or(Box<SafetySpec>, Box<SafetySpec>),
    Globally(Interval, Box<SafetySpec>),
    Eventually(Interval, Box<SafetySpec>),
}

/// Signed satisfaction margin: positive means satisfied.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Robustness(f64);

impl Robustness {
    pub(crate) fn from_finite(v: f64) -> Self {
        debug_assert!(v.is_finite());
        Robustness(v)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_violated(self) -> bool {
        self.0 < 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("syntax error at line {line}, column {column} (offset {offset}): {message}")]
pub struct ParseError {
    pub offset: usize,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl SafetySpec {
    pub fn parse(text: &str) -> Result<SafetySpec> {
        Ok(parse_spec(text)?)
    }

    pub fn predicate(channel: impl Into<String>, cmp: Comparator, threshold: f64) -> Self {
        SafetySpec::Predicate { channel: channel.into(), cmp, threshold }
    }

    pub fn not(self) -> Self {
        SafetySpec::Not(Box::new(self))
    }

    pub fn and(self, other: SafetySpec) -> Self {
        SafetySpec::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: SafetySpec) -> Self {
        SafetySpec::Or(Box::new(self), Box::new(other))
    }

    pub fn globally(interval: Interval, body: SafetySpec) -> Self {
        SafetySpec::Globally(interval, Box::new(body))
    }

    pub fn eventually(interval: Interval, body: SafetySpec) -> Self {
        SafetySpec::Eventually(interval, Box::new(body))
    }

    /// Channels referenced by predicates, in first-occurrence order.
    pub fn channels(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit(&mut |node| {
            if let SafetySpec::Predicate { channel, .. } = node {
                if !out.contains(&channel.as_str()) {
                    out.push(channel.as_str());
                }
            }
        });
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a SafetySpec)) {
        f(self);
        match self {
            SafetySpec::Predicate { .. } => {}
            SafetySpec::Not(a) | SafetySpec::Globally(_, a) | SafetySpec::Eventually(_, a) => a.visit(f),
            SafetySpec::And(a, b) | SafetySpec::Or(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Checks channel references and interval bounds against `traj`.
    pub fn check(&self, traj: &Trajectory) -> Result<()> {
        let duration = traj.duration();
        let tol = 1e-9 * traj.dt();
        let mut err = None;
        self.visit(&mut |node| {
            if err.is_some() {
                return;
            }
            match node {
                SafetySpec::Predicate { channel, .. } if traj.channel(channel).is_none() => {
                    err = Some(Error::UnknownChannel(channel.clone()));
                }
                SafetySpec::Globally(iv, _) | SafetySpec::Eventually(iv, _) => {
                    let (a, b) = iv.resolve(duration);
                    if !(a >= 0.0 && a <= b && b <= duration + tol) {
                        err = Some(Error::IntervalExceedsDuration { lower: a, upper: b, duration });
                    }
                }
                _ => {}
            }
        });
        err.map_or(Ok(()), Err)
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Greater => ">",
            Comparator::Less => "<",
        })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.upper {
            UpperBound::Time(b) => write!(f, "[{},{}]", self.lower, b),
            UpperBound::Horizon => write!(f, "[{},D]", self.lower),
        }
    }
}

impl fmt::Display for SafetySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafetySpec::Predicate { channel, cmp, threshold } => write!(f, "{channel} {cmp} {threshold}"),
            SafetySpec::Not(a) => write!(f, "!({a})"),
            SafetySpec::And(a, b) => write!(f, "({a}) & ({b})"),
            SafetySpec::Or(a, b) => write!(f, "({a}) | ({b})"),
            SafetySpec::Globally(iv, a) => write!(f, "G{iv}({a})"),
            SafetySpec::Eventually(iv, a) => write!(f, "F{iv}({a})"),
        }
    }
}

impl std::str::FromStr for SafetySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SafetySpec::parse(s)
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Gt,
    Lt,
    Not,
    And,
    Or,
}

struct Lexed {
    toks: Vec<(Tok, usize)>,
    end: usize,
}

fn locate(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(offset, |nl| offset - nl - 1) + 1;
    (line, column)
}

fn error_at(text: &str, offset: usize, message: impl Into<String>) -> ParseError {
    let (line, column) = locate(text, offset);
    ParseError { offset, line, column, message: message.into() }
}

fn lex(text: &str) -> Result<Lexed, ParseError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let single = match c {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'[' => Some(Tok::LBracket),
            b']' => Some(Tok::RBracket),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            b'>' => Some(Tok::Gt),
            b'<' => Some(Tok::Lt),
            b'!' | b'~' => Some(Tok::Not),
            _ => None,
        };
        if let Some(t) = single {
            toks.push((t, start));
            i += 1;
            continue;
        }
        match c {
            b'&' | b'|' => {
                i += 1;
                if i < bytes.len() && bytes[i] == c {
                    i += 1;
                }
                toks.push((if c == b'&' { Tok::And } else { Tok::Or }, start));
            }
            b'0'..=b'9' | b'.' | b'-' | b'+' => {
                i += 1;
                while i < bytes.len() {
                    let d = bytes[i];
                    let exp_sign = (d == b'-' || d == b'+') && matches!(bytes[i - 1], b'e' | b'E');
                    if d.is_ascii_digit() || d == b'.' || d == b'e' || d == b'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit
                    .parse()
                    .map_err(|_| error_at(text, start, format!("invalid number `{lit}`")))?;
                toks.push((Tok::Number(v), start));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.') {
                    i += 1;
                }
                toks.push((Tok::Ident(text[start..i].to_string()), start));
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(error_at(text, start, format!("unexpected character `{ch}`")));
            }
        }
    }
    Ok(Lexed { toks, end: text.len() })
}

struct Parser<'a> {
    text: &'a str,
    lexed: Lexed,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.lexed.toks.get(self.pos).map(|(t, _)| t)
    }

    fn peek2(&self) -> Option<&Tok> {
        self.lexed.toks.get(self.pos + 1).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.lexed.toks.get(self.pos).map_or(self.lexed.end, |(_, o)| *o)
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        error_at(self.text, self.offset(), message)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.lexed.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn or(&mut self) -> Result<SafetySpec, ParseError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            lhs = lhs.or(self.and()?);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<SafetySpec, ParseError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            lhs = lhs.and(self.unary()?);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<SafetySpec, ParseError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.pos += 1;
                Ok(self.unary()?.not())
            }
            Some(Tok::Ident(k)) if (k == "G" || k == "F") && matches!(self.peek2(), Some(Tok::LBracket | Tok::LParen)) => {
                let globally = k == "G";
                self.pos += 1;
                let iv = if self.peek() == Some(&Tok::LBracket) { self.interval()? } else { Interval::FULL };
                let body = self.unary()?;
                Ok(if globally { SafetySpec::globally(iv, body) } else { SafetySpec::eventually(iv, body) })
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(_)) => self.predicate(),
            Some(_) => Err(self.err("expected a formula")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn predicate(&mut self) -> Result<SafetySpec, ParseError> {
        let channel = match self.bump() {
            Some(Tok::Ident(name)) if name != "G" && name != "F" => name,
            _ => {
                self.pos -= 1;
                return Err(self.err("expected a channel name"));
            }
        };
        let cmp = match self.peek() {
            Some(Tok::Gt) => Comparator::Greater,
            Some(Tok::Lt) => Comparator::Less,
            _ => return Err(self.err("expected `>` or `<`")),
        };
        self.pos += 1;
        let threshold = self.number()?;
        Ok(SafetySpec::Predicate { channel, cmp, threshold })
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        match self.peek() {
            Some(Tok::Number(v)) if v.is_finite() => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err("expected a number")),
        }
    }

    fn interval(&mut self) -> Result<Interval, ParseError> {
        self.expect(Tok::LBracket, "`[`")?;
        let at = self.offset();
        let lower = self.number()?;
        self.expect(Tok::Comma, "`,`")?;
        let upper = match self.peek() {
            Some(Tok::Ident(d)) if d == "D" => {
                self.pos += 1;
                UpperBound::Horizon
            }
            _ => UpperBound::Time(self.number()?),
        };
        self.expect(Tok::RBracket, "`]`")?;
        let ok = lower >= 0.0
            && match upper {
                UpperBound::Time(b) => lower <= b,
                UpperBound::Horizon => true,
            };
        if !ok {
            return Err(error_at(self.text, at, "interval bounds must satisfy 0 <= a <= b"));
        }
        Ok(Interval { lower, upper })
    }
}

/// Parses the textual grammar described in the module docs.
pub fn parse_spec(text: &str) -> Result<SafetySpec, ParseError> {
    if text.trim().is_empty() {
        return Err(error_at(text, 0, "empty specification"));
    }
    let lexed = lex(text)?;
    let mut p = Parser { text, lexed, pos: 0 };
    let spec = p.or()?;
    if p.pos < p.lexed.toks.len() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Semantics
// ---------------------------------------------------------------------------

/// Window offsets `[lo, hi]` in samples for an interval.
fn window(iv: &Interval, traj: &Trajectory) -> (usize, usize) {
    let (a, b) = iv.resolve(traj.duration());
    let dt = traj.dt();
    let last = traj.steps() - 1;
    let lo = ((a / dt - 1e-9).ceil().max(0.0) as usize).min(last);
    let hi = match iv.upper {
        UpperBound::Horizon => last,
        UpperBound::Time(_) => ((b / dt + 1e-9).floor().max(0.0) as usize).min(last),
    };
    (lo, hi.max(lo))
}

/// Sliding-window extremum over `[k+lo, k+hi]` clipped to the signal end.
fn sliding(signal: &[f64], lo: usize, hi: usize, take_min: bool) -> Vec<f64> {
    let n = signal.len();
    let last = n - 1;
    let better = |a: f64, b: f64| if take_min { a <= b } else { a >= b };
    let mut out = Vec::with_capacity(n);
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut pushed = 0usize;
    for k in 0..n {
        let s = (k + lo).min(last);
        let e = (k + hi).min(last);
        while pushed <= e {
            while let Some(&back) = dq.back() {
                if better(signal[pushed], signal[back]) {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(pushed);
            pushed += 1;
        }
        while let Some(&front) = dq.front() {
            if front < s {
                dq.pop_front();
            } else {
                break;
            }
        }
        out.push(signal[*dq.front().expect("window is never empty")]);
    }
    out
}

fn signal(spec: &SafetySpec, traj: &Trajectory) -> Vec<f64> {
    match spec {
        SafetySpec::Predicate { channel, cmp, threshold } => {
            let x = traj.channel(channel).expect("checked before evaluation");
            match cmp {
                Comparator::Greater => x.iter().map(|v| v - threshold).collect(),
                Comparator::Less => x.iter().map(|v| threshold - v).collect(),
            }
        }
        SafetySpec::Not(a) => signal(a, traj).into_iter().map(|v| -v).collect(),
        SafetySpec::And(a, b) => {
            let (a, b) = (signal(a, traj), signal(b, traj));
            a.iter().zip(&b).map(|(x, y)| x.min(*y)).collect()
        }
        SafetySpec::Or(a, b) => {
            let (a, b) = (signal(a, traj), signal(b, traj));
            a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect()
        }
        SafetySpec::Globally(iv, a) => {
            let (lo, hi) = window(iv, traj);
            sliding(&signal(a, traj), lo, hi, true)
        }
        SafetySpec::Eventually(iv, a) => {
            let (lo, hi) = window(iv, traj);
            sliding(&signal(a, traj), lo, hi, false)
        }
    }
}

/// Robustness of `spec` on `traj` at the trajectory's start time.
pub fn robustness(spec: &SafetySpec, traj: &Trajectory) -> Result<Robustness> {
    spec.check(traj)?;
    Ok(Robustness(signal(spec, traj)[0]))
}

/// Robustness at every sample time.
pub fn robustness_signal(spec: &SafetySpec, traj: &Trajectory) -> Result<Vec<f64>> {
    spec.check(traj)?;
    Ok(signal(spec, traj))
}

fn holds(spec: &SafetySpec, traj: &Trajectory, k: usize) -> bool {
    let last = traj.steps() - 1;
    let range = |iv: &Interval| {
        let (lo, hi) = window(iv, traj);
        (k + lo).min(last)..=(k + hi).min(last)
    };
    match spec {
        SafetySpec::Predicate { channel, cmp, threshold } => {
            let x = traj.channel(channel).expect("checked before evaluation")[k];
            match cmp {
                Comparator::Greater => x > *threshold,
                Comparator::Less => x < *threshold,
            }
        }
        SafetySpec::Not(a) => !holds(a, traj, k),
        SafetySpec::And(a, b) => holds(a, traj, k) && holds(b, traj, k),
        SafetySpec::Or(a, b) => holds(a, traj, k) || holds(b, traj, k),
        SafetySpec::Globally(iv, a) => range(iv).all(|j| holds(a, traj, j)),
        SafetySpec::Eventually(iv, a) => range(iv).any(|j| holds(a, traj, j)),
    }
}

/// Boolean satisfaction on the same sample grid and windows.
pub fn satisfied(spec: &SafetySpec, traj: &Trajectory) -> Result<bool> {
    spec.check(traj)?;
    Ok(holds(spec, traj, 0))
}
