//! The weighted directed graph on the positive integers that drives the
//! construction. From vertex `i` there are edges to `2i-2` (only for
//! `i >= 2`), two parallel edges to `2i-1` (plain and prime) and one edge to
//! `2i`. Paths in this graph label the wires of the stage networks.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the number of enumerated paths (and wires).
pub const DEFAULT_PATH_CAP: u128 = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    Plain,
    Prime,
}

/// One step of a path, encoded by the target offset `to - 2*from`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Step {
    /// `e_{i,2i-2}`
    Minus2,
    /// `e_{i,2i-1}`
    Minus1,
    /// `e_{i,2i-1}'`
    Minus1Prime,
    /// `e_{i,2i}`
    Zero,
}

impl Step {
    pub const ALL: [Step; 4] = [Step::Minus2, Step::Minus1, Step::Minus1Prime, Step::Zero];

    pub fn offset(self) -> u64 {
        match self {
            Step::Minus2 => 2,
            Step::Minus1 | Step::Minus1Prime => 1,
            Step::Zero => 0,
        }
    }

    pub fn variant(self) -> Variant {
        match self {
            Step::Minus1Prime => Variant::Prime,
            _ => Variant::Plain,
        }
    }

    /// Whether the contraction map of this edge carries the shift `1/(2i)`.
    pub fn is_shifted(self) -> bool {
        matches!(self, Step::Minus2 | Step::Minus1Prime)
    }

    pub fn code(self) -> &'static str {
        match self {
            Step::Minus2 => "-2",
            Step::Minus1 => "-1",
            Step::Minus1Prime => "-1'",
            Step::Zero => "0",
        }
    }

    pub fn from_code(s: &str) -> Result<Step> {
        match s.trim() {
            "-2" => Ok(Step::Minus2),
            "-1" => Ok(Step::Minus1),
            "-1'" => Ok(Step::Minus1Prime),
            "0" => Ok(Step::Zero),
            other => Err(Error::Parse(format!("unknown step code {other:?}"))),
        }
    }

    pub(crate) fn to_bits(self) -> u64 {
        match self {
            Step::Minus2 => 0,
            Step::Minus1 => 1,
            Step::Minus1Prime => 2,
            Step::Zero => 3,
        }
    }

    pub(crate) fn from_bits(b: u64) -> Step {
        Step::ALL[(b & 3) as usize]
    }

    /// Steps allowed out of vertex `i`.
    pub fn allowed(i: u64) -> &'static [Step] {
        if i == 1 {
            &Step::ALL[1..]
        } else {
            &Step::ALL
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: u64,
    pub to: u64,
    pub variant: Variant,
}

impl Edge {
    pub fn new(from: u64, to: u64, variant: Variant) -> Result<Edge> {
        let e = Edge { from, to, variant };
        e.step()?;
        Ok(e)
    }

    pub fn from_step(from: u64, step: Step) -> Result<Edge> {
        if from == 0 {
            return Err(Error::Domain("vertex index must be at least 1".into()));
        }
        if from == 1 && step == Step::Minus2 {
            return Err(Error::Domain("the edge e_{1,0} does not exist".into()));
        }
        let to = from.checked_mul(2).ok_or(Error::Overflow("edge target"))? - step.offset();
        Ok(Edge {
            from,
            to,
            variant: step.variant(),
        })
    }

    pub fn step(&self) -> Result<Step> {
        if self.from == 0 {
            return Err(Error::Domain("vertex index must be at least 1".into()));
        }
        let two = self
            .from
            .checked_mul(2)
            .ok_or(Error::Overflow("edge target"))?;
        let step = match (two.checked_sub(self.to), self.variant) {
            (Some(2), Variant::Plain) if self.from >= 2 => Step::Minus2,
            (Some(1), Variant::Plain) => Step::Minus1,
            (Some(1), Variant::Prime) => Step::Minus1Prime,
            (Some(0), Variant::Plain) => Step::Zero,
            _ => {
                return Err(Error::Domain(format!(
                    "no edge {} -> {} ({:?})",
                    self.from, self.to, self.variant
                )))
            }
        };
        Ok(step)
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prime = if self.variant == Variant::Prime {
            "'"
        } else {
            ""
        };
        write!(f, "e_{{{},{}}}{}", self.from, self.to, prime)
    }
}

/// Edges leaving vertex `i`, in step order.
pub fn out_edges(i: u64) -> Result<Vec<Edge>> {
    if i == 0 {
        return Err(Error::Domain("vertex index must be at least 1".into()));
    }
    Step::allowed(i)
        .iter()
        .map(|&s| Edge::from_step(i, s))
        .collect()
}

/// A path stored as its start vertex and step codes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Path {
    start: u64,
    steps: Vec<Step>,
}

impl Path {
    pub fn new(start: u64, steps: Vec<Step>) -> Result<Path> {
        let p = Path { start, steps };
        p.vertices()?;
        Ok(p)
    }

    pub fn empty(start: u64) -> Result<Path> {
        Path::new(start, Vec::new())
    }

    pub fn from_edges(edges: &[Edge]) -> Result<Path> {
        let Some(first) = edges.first() else {
            return Err(Error::Domain(
                "cannot infer the start of an empty edge list".into(),
            ));
        };
        let mut steps = Vec::with_capacity(edges.len());
        for (k, e) in edges.iter().enumerate() {
            if k > 0 && edges[k - 1].to != e.from {
                return Err(Error::Domain(format!(
                    "edges {} and {} do not chain",
                    edges[k - 1],
                    e
                )));
            }
            steps.push(e.step()?);
        }
        Path::new(first.from, steps)
    }

    pub fn start(&self) -> u64 {
        self.start
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `σ(0), …, σ(n)`.
    pub fn vertices(&self) -> Result<Vec<u64>> {
        if self.start == 0 {
            return Err(Error::Domain("vertex index must be at least 1".into()));
        }
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut v = self.start;
        out.push(v);
        for &s in &self.steps {
            v = Edge::from_step(v, s)?.to;
            out.push(v);
        }
        Ok(out)
    }

    pub fn terminal(&self) -> u64 {
        // Admissibility was checked on construction.
        *self.vertices().expect("admissible path").last().unwrap()
    }

    pub fn edges(&self) -> Vec<Edge> {
        let verts = self.vertices().expect("admissible path");
        self.steps
            .iter()
            .zip(verts.windows(2))
            .map(|(&s, w)| Edge {
                from: w[0],
                to: w[1],
                variant: s.variant(),
            })
            .collect()
    }

    pub fn prefix(&self, k: usize) -> Path {
        Path {
            start: self.start,
            steps: self.steps[..k.min(self.steps.len())].to_vec(),
        }
    }

    pub fn concat(&self, other: &Path) -> Result<Path> {
        if other.start != self.terminal() {
            return Err(Error::Domain(format!(
                "cannot append a path starting at {} to one ending at {}",
                other.start,
                self.terminal()
            )));
        }
        let mut steps = self.steps.clone();
        steps.extend_from_slice(&other.steps);
        Path::new(self.start, steps)
    }

    /// Comma-separated step codes, e.g. `"0,-1'"`; empty for the empty path.
    pub fn codes(&self) -> String {
        self.steps
            .iter()
            .map(|s| s.code())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse_codes(start: u64, codes: &str) -> Result<Path> {
        let steps = if codes.trim().is_empty() {
            Vec::new()
        } else {
            codes
                .split(',')
                .map(Step::from_code)
                .collect::<Result<Vec<_>>>()?
        };
        Path::new(start, steps)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return write!(f, "∅@{}", self.start);
        }
        for e in self.edges() {
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Number of admissible paths of length `n` starting at `i`.
pub fn path_count(i: u64, n: u32) -> Result<u128> {
    if i == 0 {
        return Err(Error::Domain("vertex index must be at least 1".into()));
    }
    let two_n = 1u128
        .checked_shl(n)
        .filter(|&v| n < 64 && v > 0)
        .ok_or(Error::Overflow("path count"))?;
    if i == 1 {
        (two_n + 1)
            .checked_mul(two_n)
            .map(|v| v / 2)
            .ok_or(Error::Overflow("path count"))
    } else {
        two_n
            .checked_mul(two_n)
            .ok_or(Error::Overflow("path count"))
    }
}

/// All admissible paths of length `n` from `i`, in lexicographic step order.
pub fn enumerate_paths(i: u64, n: u32, cap: u128) -> Result<Vec<Path>> {
    let count = path_count(i, n)?;
    if count > cap {
        return Err(Error::ResourceCap {
            what: "path enumeration",
            requested: count,
            cap,
        });
    }
    // Terminal vertices reach 2^n i.
    i.checked_mul(
        1u64.checked_shl(n)
            .filter(|_| n < 63)
            .ok_or(Error::Overflow("vertex"))?,
    )
    .ok_or(Error::Overflow("vertex"))?;
    let mut out = Vec::with_capacity(count as usize);
    let mut steps = Vec::with_capacity(n as usize);
    fn rec(v: u64, left: u32, start: u64, steps: &mut Vec<Step>, out: &mut Vec<Path>) {
        if left == 0 {
            out.push(Path {
                start,
                steps: steps.clone(),
            });
            return;
        }
        for &s in Step::allowed(v) {
            steps.push(s);
            rec(2 * v - s.offset(), left - 1, start, steps, out);
            steps.pop();
        }
    }
    rec(i, n, i, &mut steps, &mut out);
    Ok(out)
}

/// Positive edge weights `r_e`. The plain and prime edges into `2i-1` always
/// share a weight, so every rule is keyed by `(from, to)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightAssignment {
    Uniform(f64),
    /// `r_{i,2i-2} = alpha`, `r_{i,2i-1} = beta`, `r_{i,2i} = gamma` for every `i`.
    Stage1 {
        alpha: f64,
        beta: f64,
        gamma: f64,
    },
    Table {
        entries: BTreeMap<(u64, u64), f64>,
        default: f64,
    },
    /// Deterministic pseudo-random weights in `[lo, hi)` keyed by the edge.
    Random {
        seed: u64,
        lo: f64,
        hi: f64,
    },
}

impl WeightAssignment {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            WeightAssignment::Uniform(r) => *r > 0.0,
            WeightAssignment::Stage1 { alpha, beta, gamma } => {
                *alpha >= 0.0 && *beta > 0.0 && *gamma > 0.0
            }
            WeightAssignment::Table { entries, default } => {
                *default > 0.0 && entries.values().all(|&r| r > 0.0)
            }
            WeightAssignment::Random { lo, hi, .. } => *lo > 0.0 && hi >= lo,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("weights must be positive: {self:?}")))
        }
    }

    pub fn weight(&self, e: &Edge) -> f64 {
        self.weight_of(e.from, e.to)
    }

    pub fn weight_of(&self, from: u64, to: u64) -> f64 {
        match self {
            WeightAssignment::Uniform(r) => *r,
            WeightAssignment::Stage1 { alpha, beta, gamma } => match 2 * from - to {
                2 => *alpha,
                1 => *beta,
                _ => *gamma,
            },
            WeightAssignment::Table { entries, default } => {
                entries.get(&(from, to)).copied().unwrap_or(*default)
            }
            WeightAssignment::Random { seed, lo, hi } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(from);
                rng.set_word_pos(2 * to as u128);
                if hi > lo {
                    rng.random_range(*lo..*hi)
                } else {
                    *lo
                }
            }
        }
    }
}

/// `δ_p`: product of the edge weights along `p`; the empty path gives 1.
pub fn path_resistance(p: &Path, w: &WeightAssignment) -> f64 {
    let mut v = p.start();
    let mut prod = 1.0;
    for &s in p.steps() {
        let to = 2 * v - s.offset();
        prod *= w.weight_of(v, to);
        v = to;
    }
    prod
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailProduct {
    /// `∏_{k<K} r_{2^k i0, 2^{k+1} i0}`
    pub product: f64,
    /// `Σ_{k<K} log r_{2^k i0, 2^{k+1} i0}`
    pub log_sum: f64,
    /// Partial log-sums after each factor.
    pub partial_log_sums: Vec<f64>,
}

/// Resistance of the doubling path `i0 → 2 i0 → … → 2^K i0`.
pub fn tail_product(i0: u64, k: u32, w: &WeightAssignment) -> Result<TailProduct> {
    if i0 == 0 {
        return Err(Error::Domain("vertex index must be at least 1".into()));
    }
    let mut v = i0;
    let mut product = 1.0;
    let mut log_sum = 0.0;
    let mut partial = Vec::with_capacity(k as usize);
    for _ in 0..k {
        let to = v.checked_mul(2).ok_or(Error::Overflow("doubling path"))?;
        let r = w.weight_of(v, to);
        product *= r;
        log_sum += r.ln();
        partial.push(log_sum);
        v = to;
    }
    Ok(TailProduct {
        product,
        log_sum,
        partial_log_sums: partial,
    })
}
