//! Bipartite conditional distributions `P(a,b|x,y)` and their analysis.
//!
//! A [`Behavior`] is the mathematical identity of a box type: a probability
//! table indexed `[x][y][a][b]` over finite alphabets, where Alice holds the
//! input `x` and output `a`, and Bob holds `y` and `b`. Symbols are plain
//! indices `0..size`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for entry range and per-input-pair normalization.
pub const EPS_PROB: f64 = 1e-9;
/// Default tolerance of the no-signaling check.
pub const EPS_NS: f64 = 1e-9;
/// Smallest conditioning probability accepted by [`Behavior::conditional`].
pub const EPS_DEN: f64 = 1e-12;
/// Feasibility tolerance of the locality decision.
pub const EPS_LP: f64 = 1e-7;

/// Reference counterpart input used when reading a marginal off the table.
pub const REFERENCE_INPUT: usize = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BehaviorError {
    #[error("alphabet sizes must all be at least 1")]
    EmptyAlphabet,
    #[error("table has {actual} entries but the alphabets require {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite probability at x={x} y={y} a={a} b={b}")]
    NonFinite { x: usize, y: usize, a: usize, b: usize },
    #[error("negative probability {value} at x={x} y={y} a={a} b={b}")]
    NegativeProbability {
        x: usize,
        y: usize,
        a: usize,
        b: usize,
        value: f64,
    },
    #[error("distribution for x={x} y={y} sums to {sum}, not 1")]
    NotNormalized { x: usize, y: usize, sum: f64 },
    #[error("{side} symbol {symbol} is outside the alphabet of size {size}")]
    InputOutOfRange { side: Side, symbol: usize, size: usize },
    #[error("behavior is signaling (max marginal deviation {max_violation:e})")]
    SignalingBehavior { max_violation: f64 },
    #[error("conditioning event has probability {probability:e}")]
    ZeroProbabilityCondition { probability: f64 },
    #[error("CHSH scoring needs binary inputs and outputs")]
    NotBinaryAlphabets,
    #[error("{vertices} deterministic boxes exceed the enumeration cap of {cap}")]
    TooLargeToEnumerate { vertices: u128, cap: usize },
    #[error("malformed behavior document: {0}")]
    Malformed(String),
}

/// The two parties of a box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Alice,
    Bob,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Alice => Side::Bob,
            Side::Bob => Side::Alice,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Alice => "alice",
            Side::Bob => "bob",
        }
    }

    /// Name of the wire parameter carrying this side's input (`x` or `y`).
    pub fn input_param(self) -> &'static str {
        match self {
            Side::Alice => "x",
            Side::Bob => "y",
        }
    }

    /// Name of the wire field carrying this side's output (`a` or `b`).
    pub fn output_field(self) -> &'static str {
        match self {
            Side::Alice => "a",
            Side::Bob => "b",
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "alice" => Ok(Side::Alice),
            "bob" => Ok(Side::Bob),
            other => Err(format!("unknown side `{other}`")),
        }
    }
}

/// Sizes of the four alphabets `|X|, |Y|, |A|, |B|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Alphabets {
    pub x_size: usize,
    pub y_size: usize,
    pub a_size: usize,
    pub b_size: usize,
}

impl Alphabets {
    pub const BINARY: Alphabets = Alphabets {
        x_size: 2,
        y_size: 2,
        a_size: 2,
        b_size: 2,
    };

    pub fn new(x_size: usize, y_size: usize, a_size: usize, b_size: usize) -> Result<Self, BehaviorError> {
        let alphabets = Alphabets {
            x_size,
            y_size,
            a_size,
            b_size,
        };
        alphabets.check()?;
        Ok(alphabets)
    }

    fn check(&self) -> Result<(), BehaviorError> {
        if self.x_size == 0 || self.y_size == 0 || self.a_size == 0 || self.b_size == 0 {
            return Err(BehaviorError::EmptyAlphabet);
        }
        Ok(())
    }

    pub fn is_binary(&self) -> bool {
        *self == Self::BINARY
    }

    pub fn table_len(&self) -> usize {
        self.x_size * self.y_size * self.a_size * self.b_size
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, a: usize, b: usize) -> usize {
        ((x * self.y_size + y) * self.a_size + a) * self.b_size + b
    }

    pub fn input_size(&self, side: Side) -> usize {
        match side {
            Side::Alice => self.x_size,
            Side::Bob => self.y_size,
        }
    }

    pub fn output_size(&self, side: Side) -> usize {
        match side {
            Side::Alice => self.a_size,
            Side::Bob => self.b_size,
        }
    }

    pub fn check_input(&self, side: Side, symbol: usize) -> Result<(), BehaviorError> {
        check_symbol(side, symbol, self.input_size(side))
    }

    pub fn check_output(&self, side: Side, symbol: usize) -> Result<(), BehaviorError> {
        check_symbol(side, symbol, self.output_size(side))
    }

    /// Iterates over every `(x, y, a, b)` in table order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let Alphabets {
            x_size,
            y_size,
            a_size,
            b_size,
        } = *self;
        (0..x_size).flat_map(move |x| {
            (0..y_size).flat_map(move |y| (0..a_size).flat_map(move |a| (0..b_size).map(move |b| (x, y, a, b))))
        })
    }
}

fn check_symbol(side: Side, symbol: usize, size: usize) -> Result<(), BehaviorError> {
    if symbol < size {
        Ok(())
    } else {
        Err(BehaviorError::InputOutOfRange { side, symbol, size })
    }
}

/// A probability vector over one party's output alphabet.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, BehaviorError> {
        if probs.iter().any(|p| !p.is_finite() || *p < -EPS_PROB) {
            return Err(BehaviorError::Malformed(
                "distribution has a negative or non-finite entry".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > EPS_PROB {
            return Err(BehaviorError::Malformed(format!("distribution sums to {sum}")));
        }
        Ok(Distribution(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Inverse-CDF draw: walks symbols in ascending order and returns the
    /// first whose cumulative mass exceeds `u`.
    ///
    /// `u` must lie in `[0, 1)`. When rounding leaves the total mass just
    /// below `u`, the last symbol with positive mass is returned, so a
    /// zero-probability symbol is never produced.
    pub fn sample(&self, u: f64) -> usize {
        let mut cumulative = 0.0;
        let mut last_positive = 0;
        for (symbol, &p) in self.0.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            last_positive = symbol;
            cumulative += p;
            if u < cumulative {
                return symbol;
            }
        }
        last_positive
    }
}

impl std::ops::Index<usize> for Distribution {
    type Output = f64;

    fn index(&self, symbol: usize) -> &f64 {
        &self.0[symbol]
    }
}

/// Which side of the no-signaling conditions a deviation was found on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalingWitness {
    /// Party whose marginal depends on the counterpart's input.
    pub side: Side,
    /// That party's own input.
    pub input: usize,
    /// That party's output symbol.
    pub output: usize,
    /// Two counterpart inputs under which the marginal differs most.
    pub counterpart_inputs: (usize, usize),
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoSignalingReport {
    pub passes: bool,
    pub max_violation: f64,
    pub witness: Option<SignalingWitness>,
}

/// Serialized form of a behavior: name, alphabet sizes and the flattened
/// table in x-major, then y, then a, then b order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorDocument {
    pub name: String,
    pub x_size: usize,
    pub y_size: usize,
    pub a_size: usize,
    pub b_size: usize,
    pub table: Vec<f64>,
}

/// A validated conditional distribution `P(a,b|x,y)`.
///
/// Construction checks ranges and normalization only. Signaling tables are
/// representable so they can be analyzed, but [`Behavior::marginal`] and the
/// sampling engine refuse them.
#[derive(Debug, Clone, PartialEq)]
pub struct Behavior {
    name: String,
    alphabets: Alphabets,
    table: Vec<f64>,
    no_signaling: NoSignalingReport,
}

impl Behavior {
    /// Validates a flat table against the alphabets.
    pub fn new(name: impl Into<String>, alphabets: Alphabets, table: Vec<f64>) -> Result<Self, BehaviorError> {
        alphabets.check()?;
        let expected = alphabets.table_len();
        if table.len() != expected {
            return Err(BehaviorError::DimensionMismatch {
                expected,
                actual: table.len(),
            });
        }
        for (x, y, a, b) in alphabets.cells() {
            let value = table[alphabets.index(x, y, a, b)];
            if !value.is_finite() {
                return Err(BehaviorError::NonFinite { x, y, a, b });
            }
            if value < -EPS_PROB {
                return Err(BehaviorError::NegativeProbability { x, y, a, b, value });
            }
        }
        let block = alphabets.a_size * alphabets.b_size;
        for x in 0..alphabets.x_size {
            for y in 0..alphabets.y_size {
                let start = alphabets.index(x, y, 0, 0);
                let sum: f64 = table[start..start + block].iter().sum();
                if (sum - 1.0).abs() > EPS_PROB {
                    return Err(BehaviorError::NotNormalized { x, y, sum });
                }
            }
        }
        let no_signaling = no_signaling_report(&alphabets, &table, EPS_NS);
        Ok(Behavior {
            name: name.into(),
            alphabets,
            table,
            no_signaling,
        })
    }

    /// Validates a nested `[x][y][a][b]` table.
    pub fn from_nested(
        name: impl Into<String>,
        alphabets: Alphabets,
        nested: &[Vec<Vec<Vec<f64>>>],
    ) -> Result<Self, BehaviorError> {
        alphabets.check()?;
        let mismatch = || BehaviorError::DimensionMismatch {
            expected: alphabets.table_len(),
            actual: nested.iter().flatten().flatten().map(Vec::len).sum(),
        };
        if nested.len() != alphabets.x_size {
            return Err(mismatch());
        }
        let mut flat = Vec::with_capacity(alphabets.table_len());
        for per_x in nested {
            if per_x.len() != alphabets.y_size {
                return Err(mismatch());
            }
            for per_y in per_x {
                if per_y.len() != alphabets.a_size {
                    return Err(mismatch());
                }
                for per_a in per_y {
                    if per_a.len() != alphabets.b_size {
                        return Err(mismatch());
                    }
                    flat.extend_from_slice(per_a);
                }
            }
        }
        Self::new(name, alphabets, flat)
    }

    /// Builds a table cell by cell.
    pub fn from_fn(
        name: impl Into<String>,
        alphabets: Alphabets,
        f: impl Fn(usize, usize, usize, usize) -> f64,
    ) -> Result<Self, BehaviorError> {
        alphabets.check()?;
        let table = alphabets.cells().map(|(x, y, a, b)| f(x, y, a, b)).collect();
        Self::new(name, alphabets, table)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alphabets(&self) -> Alphabets {
        self.alphabets
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    #[inline]
    pub fn prob(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        self.table[self.alphabets.index(x, y, a, b)]
    }

    /// `P(a,b|x,y)` for a fixed input pair, as a distribution over `(a, b)`
    /// flattened with `b` varying fastest.
    pub fn joint(&self, x: usize, y: usize) -> &[f64] {
        let start = self.alphabets.index(x, y, 0, 0);
        &self.table[start..start + self.alphabets.a_size * self.alphabets.b_size]
    }

    /// Whether the behavior passed the no-signaling check at [`EPS_NS`].
    pub fn is_no_signaling(&self) -> bool {
        self.no_signaling.passes
    }

    /// Checks both no-signaling conditions at tolerance `tol`.
    pub fn check_no_signaling(&self, tol: f64) -> NoSignalingReport {
        no_signaling_report(&self.alphabets, &self.table, tol)
    }

    /// Local marginal of `side` for its own `input`, read off the table at the
    /// counterpart's reference input.
    pub fn marginal(&self, side: Side, input: usize) -> Result<Distribution, BehaviorError> {
        self.require_no_signaling()?;
        self.alphabets.check_input(side, input)?;
        let al = &self.alphabets;
        let probs = match side {
            Side::Alice => (0..al.a_size)
                .map(|a| (0..al.b_size).map(|b| self.prob(input, REFERENCE_INPUT, a, b)).sum())
                .collect(),
            Side::Bob => (0..al.b_size)
                .map(|b| (0..al.a_size).map(|a| self.prob(REFERENCE_INPUT, input, a, b)).sum())
                .collect(),
        };
        Ok(Distribution(probs))
    }

    /// Distribution of the second party's output given that the first party
    /// entered `first_input` and obtained `first_output`, and the second party
    /// enters `second_input`.
    pub fn conditional(
        &self,
        first_side: Side,
        first_input: usize,
        first_output: usize,
        second_input: usize,
    ) -> Result<Distribution, BehaviorError> {
        let al = &self.alphabets;
        al.check_input(first_side, first_input)?;
        al.check_output(first_side, first_output)?;
        al.check_input(first_side.other(), second_input)?;
        let joint: Vec<f64> = match first_side {
            Side::Alice => (0..al.b_size)
                .map(|b| self.prob(first_input, second_input, first_output, b))
                .collect(),
            Side::Bob => (0..al.a_size)
                .map(|a| self.prob(second_input, first_input, a, first_output))
                .collect(),
        };
        let denominator: f64 = joint.iter().sum();
        if denominator <= EPS_DEN {
            return Err(BehaviorError::ZeroProbabilityCondition {
                probability: denominator,
            });
        }
        Ok(Distribution(joint.into_iter().map(|p| p / denominator).collect()))
    }

    /// Average CHSH payoff under uniformly distributed inputs.
    pub fn chsh_expected_payoff(&self) -> Result<f64, BehaviorError> {
        if !self.alphabets.is_binary() {
            return Err(BehaviorError::NotBinaryAlphabets);
        }
        let total: f64 = self
            .alphabets
            .cells()
            .map(|(x, y, a, b)| f64::from(chsh_payoff(x, y, a, b)) * self.prob(x, y, a, b))
            .sum();
        Ok(total / 4.0)
    }

    pub fn to_document(&self) -> BehaviorDocument {
        BehaviorDocument {
            name: self.name.clone(),
            x_size: self.alphabets.x_size,
            y_size: self.alphabets.y_size,
            a_size: self.alphabets.a_size,
            b_size: self.alphabets.b_size,
            table: self.table.clone(),
        }
    }

    pub fn from_document(doc: BehaviorDocument) -> Result<Self, BehaviorError> {
        let alphabets = Alphabets::new(doc.x_size, doc.y_size, doc.a_size, doc.b_size)?;
        Self::new(doc.name, alphabets, doc.table)
    }

    pub fn from_json(text: &str) -> Result<Self, BehaviorError> {
        let doc: BehaviorDocument = serde_json::from_str(text).map_err(|e| BehaviorError::Malformed(e.to_string()))?;
        Self::from_document(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("behavior documents always serialize")
    }

    fn require_no_signaling(&self) -> Result<(), BehaviorError> {
        if self.no_signaling.passes {
            Ok(())
        } else {
            Err(BehaviorError::SignalingBehavior {
                max_violation: self.no_signaling.max_violation,
            })
        }
    }
}

fn no_signaling_report(al: &Alphabets, table: &[f64], tol: f64) -> NoSignalingReport {
    let mut worst: Option<SignalingWitness> = None;
    let mut consider = |w: SignalingWitness| {
        if worst.is_none_or(|cur| w.deviation > cur.deviation) {
            worst = Some(w);
        }
    };

    // Alice: sum_b P(a,b|x,y) must not depend on y.
    for x in 0..al.x_size {
        for a in 0..al.a_size {
            let sums: Vec<f64> = (0..al.y_size)
                .map(|y| (0..al.b_size).map(|b| table[al.index(x, y, a, b)]).sum())
                .collect();
            if let Some((lo, hi, dev)) = spread(&sums) {
                consider(SignalingWitness {
                    side: Side::Alice,
                    input: x,
                    output: a,
                    counterpart_inputs: (lo, hi),
                    deviation: dev,
                });
            }
        }
    }
    // Bob: sum_a P(a,b|x,y) must not depend on x.
    for y in 0..al.y_size {
        for b in 0..al.b_size {
            let sums: Vec<f64> = (0..al.x_size)
                .map(|x| (0..al.a_size).map(|a| table[al.index(x, y, a, b)]).sum())
                .collect();
            if let Some((lo, hi, dev)) = spread(&sums) {
                consider(SignalingWitness {
                    side: Side::Bob,
                    input: y,
                    output: b,
                    counterpart_inputs: (lo, hi),
                    deviation: dev,
                });
            }
        }
    }

    let max_violation = worst.map_or(0.0, |w| w.deviation);
    let passes = max_violation <= tol;
    NoSignalingReport {
        passes,
        max_violation,
        witness: if passes { None } else { worst },
    }
}

/// Indices of the minimum and maximum entry and their difference.
fn spread(values: &[f64]) -> Option<(usize, usize, f64)> {
    let (mut lo, mut hi) = (0, 0);
    for (i, v) in values.iter().enumerate() {
        if *v < values[lo] {
            lo = i;
        }
        if *v > values[hi] {
            hi = i;
        }
    }
    let dev = values.get(hi)? - values[lo];
    Some((lo, hi, dev))
}

/// CHSH payoff: +1 when `a xor b == x and y`, otherwise -1.
pub fn chsh_payoff(x: usize, y: usize, a: usize, b: usize) -> i8 {
    if (x & y) == (a ^ b) {
        1
    } else {
        -1
    }
}

/// The Popescu-Rohrlich box: `a xor b = x and y` with uniform marginals.
pub fn pr_box() -> Behavior {
    Behavior::from_fn(
        "pr",
        Alphabets::BINARY,
        |x, y, a, b| if (a ^ b) == (x & y) { 0.5 } else { 0.0 },
    )
    .expect("PR box is valid")
}

/// Product of two deterministic local boxes: Alice answers `fa[x]`, Bob `fb[y]`.
pub fn local_deterministic(
    a_size: usize,
    b_size: usize,
    fa: &[usize],
    fb: &[usize],
) -> Result<Behavior, BehaviorError> {
    let alphabets = Alphabets::new(fa.len(), fb.len(), a_size, b_size)?;
    for &a in fa {
        alphabets.check_output(Side::Alice, a)?;
    }
    for &b in fb {
        alphabets.check_output(Side::Bob, b)?;
    }
    let name = format!(
        "deterministic-a{}-b{}",
        fa.iter().map(usize::to_string).collect::<String>(),
        fb.iter().map(usize::to_string).collect::<String>()
    );
    Behavior::from_fn(
        name,
        alphabets,
        |x, y, a, b| if fa[x] == a && fb[y] == b { 1.0 } else { 0.0 },
    )
}

/// Independent uniform outputs, `P = 1/4` everywhere.
pub fn uniform_box() -> Behavior {
    Behavior::from_fn("uniform", Alphabets::BINARY, |_, _, _, _| 0.25).expect("uniform box is valid")
}

/// The quantum behavior reaching the Tsirelson bound of the CHSH game:
/// `P(a,b|x,y) = (1 + (-1)^(a xor b xor xy) / sqrt 2) / 4`.
pub fn tsirelson_box() -> Behavior {
    Behavior::from_fn("tsirelson", Alphabets::BINARY, |x, y, a, b| {
        let sign = if (a ^ b ^ (x & y)) == 0 { 1.0 } else { -1.0 };
        0.25 * (1.0 + sign * std::f64::consts::FRAC_1_SQRT_2)
    })
    .expect("Tsirelson box is valid")
}

/// `v * PR + (1 - v) * uniform`.
pub fn isotropic_box(visibility: f64) -> Result<Behavior, BehaviorError> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(BehaviorError::Malformed(format!(
            "visibility {visibility} outside [0, 1]"
        )));
    }
    Behavior::from_fn(format!("isotropic-{visibility}"), Alphabets::BINARY, |x, y, a, b| {
        let pr = if (a ^ b) == (x & y) { 0.5 } else { 0.0 };
        visibility * pr + (1.0 - visibility) * 0.25
    })
}

/// Looks up a built-in behavior by name.
///
/// Accepted names: `pr`, `uniform`, `tsirelson`, `isotropic:<v>` and
/// `deterministic:<fa>,<fb>` where `fa`/`fb` are binary digit strings
/// listing each party's output per input (`deterministic:00,00` always
/// answers 0).
pub fn builtin(name: &str) -> Result<Behavior, BehaviorError> {
    let unknown = || BehaviorError::Malformed(format!("unknown built-in behavior `{name}`"));
    match name {
        "pr" => Ok(pr_box()),
        "uniform" => Ok(uniform_box()),
        "tsirelson" => Ok(tsirelson_box()),
        _ => {
            if let Some(v) = name.strip_prefix("isotropic:") {
                let v: f64 = v.parse().map_err(|_| unknown())?;
                isotropic_box(v)
            } else if let Some(spec) = name.strip_prefix("deterministic:") {
                let (fa, fb) = spec.split_once(',').ok_or_else(unknown)?;
                let digits = |s: &str| -> Result<Vec<usize>, BehaviorError> {
                    s.chars()
                        .map(|c| c.to_digit(10).map(|d| d as usize).ok_or_else(unknown))
                        .collect()
                };
                let (fa, fb) = (digits(fa)?, digits(fb)?);
                let a_size = fa.iter().copied().max().unwrap_or(0).max(1) + 1;
                let b_size = fb.iter().copied().max().unwrap_or(0).max(1) + 1;
                local_deterministic(a_size, b_size, &fa, &fb)
            } else {
                Err(unknown())
            }
        }
    }
}

/// Names accepted by [`builtin`] without parameters.
pub const BUILTIN_NAMES: [&str; 3] = ["pr", "uniform", "tsirelson"];
