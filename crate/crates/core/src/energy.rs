//! Discrete Dirichlet forms on stage networks and their continuum counterparts.
//!
//! Energies come in two conventions. The path-sum adds `δ^{-1}(u(y)-u(x))²`
//! once per wire; the ordered kernel sum adds `j(x,y)(u(x)-u(y))² μ(x)μ(y)`
//! over ordered pairs and is exactly twice the path-sum. Experiments use the
//! ordered sum.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt17;
use crate::geometry::{cells_for, node_set, phi_edge, CellMeasure, NodeSet};
use crate::index_space::{out_edges, Edge, WeightAssignment};
use crate::network::{build_network, KernelSpec, Network, Source};
use crate::quad::{adaptive, geometric_panels};
use crate::sum::{pairwise_sum, par_sum_ranges};

/// Rows per chunk in streamed pair sums.
const ROW_CHUNK: usize = 8;

/// Values on the nodes of `V_i^{(n)}`, in node-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    i: u64,
    n: u32,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(i: u64, n: u32, values: Vec<f64>) -> Result<GridFunction> {
        let expected = crate::geometry::node_count(i, n)?;
        if values.len() as u128 != expected {
            return Err(Error::Domain(format!(
                "stage ({i}, {n}) has {expected} nodes, got {} values",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "grid function value {v} is not finite"
            )));
        }
        Ok(GridFunction { i, n, values })
    }

    pub fn constant(i: u64, n: u32, c: f64) -> Result<GridFunction> {
        let len = crate::geometry::node_count(i, n)? as usize;
        GridFunction::new(i, n, vec![c; len])
    }

    /// Samples `f` at the node values of `nodes`.
    pub fn from_fn(nodes: &NodeSet, f: impl Fn(f64) -> f64) -> Result<GridFunction> {
        GridFunction::new(
            nodes.i(),
            nodes.n(),
            nodes.values().into_iter().map(f).collect(),
        )
    }

    pub fn i(&self) -> u64 {
        self.i
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_stage(&self, i: u64, n: u32) -> Result<()> {
        if (self.i, self.n) != (i, n) {
            return Err(Error::StageMismatch {
                expected_i: i,
                expected_n: n,
                got_i: self.i,
                got_n: self.n,
            });
        }
        Ok(())
    }

    /// CSV with header `node,value`; nodes as exact `num/den`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let nodes = node_set(self.i, self.n)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["node", "value"])?;
        for (k, v) in self.values.iter().enumerate() {
            w.write_record([nodes.label(k), fmt17(*v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(i: u64, n: u32, input: R) -> Result<GridFunction> {
        let nodes = node_set(i, n)?;
        let mut r = csv::Reader::from_reader(input);
        let mut values = Vec::with_capacity(nodes.len());
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Parse(format!("row {}: expected node,value", k + 1)));
            }
            if k >= nodes.len() || rec[0].trim() != nodes.label(k) {
                return Err(Error::Parse(format!(
                    "row {}: node {} does not match stage ({i}, {n}) order",
                    k + 1,
                    &rec[0]
                )));
            }
            let v: f64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {}: bad value {}", k + 1, &rec[1])))?;
            values.push(v);
        }
        GridFunction::new(i, n, values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    PathSum,
    OrderedKernelSum,
}

impl Convention {
    /// Multiplier relative to the path-sum.
    pub fn factor(self) -> f64 {
        match self {
            Convention::PathSum => 1.0,
            Convention::OrderedKernelSum => 2.0,
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::PathSum => "path-sum",
            Convention::OrderedKernelSum => "ordered-kernel-sum",
        })
    }
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Convention> {
        match s {
            "path-sum" => Ok(Convention::PathSum),
            "ordered-kernel-sum" | "ordered" => Ok(Convention::OrderedKernelSum),
            _ => Err(Error::Parse(format!("unknown energy convention {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyValue {
    pub value: f64,
    pub convention: Convention,
}

impl EnergyValue {
    fn from_path_sum(path_sum: f64, convention: Convention) -> EnergyValue {
        EnergyValue {
            value: path_sum * convention.factor(),
            convention,
        }
    }

    pub fn in_convention(self, convention: Convention) -> EnergyValue {
        EnergyValue {
            value: self.value / self.convention.factor() * convention.factor(),
            convention,
        }
    }
}

/// JSON record for an energy or moment value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub i: u64,
    pub n: u32,
    pub s: Option<f64>,
    pub convention: Convention,
    pub value: f64,
}

/// `E^{(0)}(u) = (u(1) - u(0))²` in the path-sum convention.
pub fn energy_stage0(u0: f64, u1: f64) -> EnergyValue {
    EnergyValue {
        value: (u1 - u0) * (u1 - u0),
        convention: Convention::PathSum,
    }
}

pub fn discrete_energy(
    net: &Network,
    u: &GridFunction,
    convention: Convention,
) -> Result<EnergyValue> {
    u.check_stage(net.i(), net.n())?;
    let vals = u.values();
    let wires = net.wires();
    let path_sum = par_sum_ranges(wires.len(), crate::sum::CHUNK, |r| {
        let mut acc = 0.0;
        for w in &wires[r] {
            let d = vals[w.y as usize] - vals[w.x as usize];
            acc += d * d / w.delta;
        }
        acc
    });
    Ok(EnergyValue::from_path_sum(path_sum, convention))
}

/// `Σ term(x, y)` over the wire pairs `x < y` of the stage (all pairs for
/// `i = 1`, `V_- × V_+` otherwise), without materialising wires. The
/// reduction order depends only on the node count.
pub fn stream_pairs<F>(nodes: &NodeSet, term: F) -> f64
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    let len = nodes.len();
    let (rows, first_col): (usize, Box<dyn Fn(usize) -> usize + Sync>) = if nodes.i() == 1 {
        (len.saturating_sub(1), Box::new(|a| a + 1))
    } else {
        let right = nodes.right().start;
        (nodes.left().end, Box::new(move |_| right))
    };
    par_sum_ranges(rows, ROW_CHUNK, |r| {
        let mut acc = 0.0;
        for a in r {
            let mut row = 0.0;
            for b in first_col(a)..len {
                row += term(a, b);
            }
            acc += row;
        }
        acc
    })
}

/// Energy of the kernel-driven network `δ = (j μ μ)^{-1}`, streamed over node
/// pairs. Pairs with `|x - y| ≤ cutoff` are skipped.
pub fn kernel_energy(
    i: u64,
    n: u32,
    kernel: &KernelSpec,
    u: &GridFunction,
    cutoff: f64,
    convention: Convention,
) -> Result<EnergyValue> {
    kernel.validate()?;
    u.check_stage(i, n)?;
    let nodes = node_set(i, n)?;
    let masses = cells_for(&nodes).masses_f64();
    let nums = nodes.numerators();
    let den = nodes.den() as f64;
    let vals = u.values();
    let path_sum = stream_pairs(&nodes, |a, b| {
        let dist = (nums[b] - nums[a]) as f64 / den;
        if dist <= cutoff {
            return 0.0;
        }
        let d = vals[b] - vals[a];
        let j = kernel.value(i, nums[a] as f64 / den, nums[b] as f64 / den, dist);
        j * masses[a] * masses[b] * d * d
    });
    Ok(EnergyValue::from_path_sum(path_sum, convention))
}

/// Both sides of the graph-directed recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdResidual {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

impl GdResidual {
    pub fn relative(&self) -> f64 {
        if self.lhs == 0.0 {
            self.residual
        } else {
            self.residual / self.lhs.abs()
        }
    }
}

/// Precomputed topology for checking
/// `E_i^{(n)}(u) = Σ_e r_e^{-1} E_j^{(n-1)}(u ∘ φ_e)` under many weight draws.
#[derive(Debug, Clone)]
pub struct GdRecursion {
    parent: Network,
    children: BTreeMap<u64, Network>,
    pulls: Vec<(Edge, Vec<usize>)>,
}

impl GdRecursion {
    pub fn new(i: u64, n: u32) -> Result<GdRecursion> {
        if n == 0 {
            return Err(Error::Domain("the recursion needs n ≥ 1".into()));
        }
        let unit = Source::Weights(WeightAssignment::Uniform(1.0));
        let parent = build_network(i, n, &unit)?;
        let mut children = BTreeMap::new();
        let mut pulls = Vec::new();
        for e in out_edges(i)? {
            if let std::collections::btree_map::Entry::Vacant(slot) = children.entry(e.to) {
                slot.insert(build_network(e.to, n - 1, &unit)?);
            }
            let child = &children[&e.to];
            let phi = phi_edge(&e)?;
            let map = child
                .nodes()
                .nodes()
                .iter()
                .map(|x| {
                    let y = phi.apply(x)?;
                    parent.nodes().index_of(&y).ok_or_else(|| {
                        Error::Domain(format!(
                            "φ_{e} does not map into the stage ({i}, {n}) nodes"
                        ))
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
            pulls.push((e, map));
        }
        Ok(GdRecursion {
            parent,
            children,
            pulls,
        })
    }

    pub fn check(&self, u: &GridFunction, w: &WeightAssignment) -> Result<GdResidual> {
        let source = Source::Weights(w.clone());
        let lhs = discrete_energy(&self.parent.reweighted(&source)?, u, Convention::PathSum)?.value;
        let mut reweighted = BTreeMap::new();
        for (&j, net) in &self.children {
            reweighted.insert(j, net.reweighted(&source)?);
        }
        let mut terms = Vec::with_capacity(self.pulls.len());
        for (e, map) in &self.pulls {
            let child = &reweighted[&e.to];
            let pulled = GridFunction::new(
                child.i(),
                child.n(),
                map.iter().map(|&k| u.values()[k]).collect(),
            )?;
            let energy = discrete_energy(child, &pulled, Convention::PathSum)?.value;
            terms.push(energy / w.weight(e));
        }
        let rhs = pairwise_sum(&terms);
        Ok(GdResidual {
            lhs,
            rhs,
            residual: (lhs - rhs).abs(),
        })
    }
}

pub fn gd_recursion_check(
    i: u64,
    n: u32,
    u: &GridFunction,
    w: &WeightAssignment,
) -> Result<GdResidual> {
    GdRecursion::new(i, n)?.check(u, w)
}

/// Regularity class of a continuum function on `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothness {
    Lipschitz,
    HolderHalf,
    Bounded,
    L2,
}

/// A constant piece of a piecewise-constant function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
    pub value: f64,
}

impl Piece {
    fn contains(&self, x: f64) -> bool {
        (x > self.lo || (self.lo_closed && x == self.lo))
            && (x < self.hi || (self.hi_closed && x == self.hi))
    }
}

#[derive(Clone)]
pub struct CustomFn(pub Arc<dyn Fn(f64) -> f64 + Send + Sync>);

impl fmt::Debug for CustomFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CustomFn")
    }
}

/// Functions on the physical space with exact integrals where available.
#[derive(Debug, Clone)]
pub enum ContinuumFunction {
    /// `Σ c_k x^k`, coefficients in ascending order.
    Polynomial(Vec<f64>),
    /// `scale |x - center|^alpha`, `alpha > -1`.
    AbsPower { center: f64, alpha: f64, scale: f64 },
    /// `left` on `x < at`, `right` on `x ≥ at`.
    Step { at: f64, left: f64, right: f64 },
    /// `amplitude sin(frequency x + phase)`.
    Sine {
        amplitude: f64,
        frequency: f64,
        phase: f64,
    },
    /// Zero outside the pieces; pieces are disjoint and sorted.
    PiecewiseConstant(Vec<Piece>),
    Custom {
        name: String,
        tag: Smoothness,
        f: CustomFn,
    },
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck)
}

fn poly_antiderivative(c: &[f64], x: f64) -> f64 {
    c.iter()
        .enumerate()
        .rev()
        .fold(0.0, |acc, (k, &ck)| acc * x + ck / (k + 1) as f64)
        * x
}

impl ContinuumFunction {
    pub fn linear() -> ContinuumFunction {
        ContinuumFunction::Polynomial(vec![0.0, 1.0])
    }

    pub fn constant(c: f64) -> ContinuumFunction {
        ContinuumFunction::Polynomial(vec![c])
    }

    pub fn custom(
        name: &str,
        tag: Smoothness,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> ContinuumFunction {
        ContinuumFunction::Custom {
            name: name.to_string(),
            tag,
            f: CustomFn(Arc::new(f)),
        }
    }

    /// Parses a function id: `linear`, `square`, `const:c`, `poly:c0,c1,…`,
    /// `sqrt`, `abspow:center,alpha`, `step:at`, `sin:frequency`.
    pub fn from_id(id: &str) -> Result<ContinuumFunction> {
        let (head, args) = match id.split_once(':') {
            Some((h, a)) => (h, a),
            None => (id, ""),
        };
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| {
                        Error::Parse(format!("bad number {t:?} in function id {id:?}"))
                    })
                })
                .collect()
        };
        let arity = |v: Vec<f64>, k: usize| -> Result<Vec<f64>> {
            if v.len() == k {
                Ok(v)
            } else {
                Err(Error::Parse(format!(
                    "function id {id:?} needs {k} arguments"
                )))
            }
        };
        match head {
            "linear" => Ok(ContinuumFunction::linear()),
            "square" => Ok(ContinuumFunction::Polynomial(vec![0.0, 0.0, 1.0])),
            "const" => Ok(ContinuumFunction::constant(arity(nums()?, 1)?[0])),
            "poly" => Ok(ContinuumFunction::Polynomial(nums()?)),
            "sqrt" => Ok(ContinuumFunction::AbsPower {
                center: 0.0,
                alpha: 0.5,
                scale: 1.0,
            }),
            "abspow" => {
                let v = arity(nums()?, 2)?;
                if v[1] <= -1.0 {
                    return Err(Error::Parse("abspow needs alpha > -1".into()));
                }
                Ok(ContinuumFunction::AbsPower {
                    center: v[0],
                    alpha: v[1],
                    scale: 1.0,
                })
            }
            "step" => Ok(ContinuumFunction::Step {
                at: arity(nums()?, 1)?[0],
                left: 0.0,
                right: 1.0,
            }),
            "sin" => Ok(ContinuumFunction::Sine {
                amplitude: 1.0,
                frequency: arity(nums()?, 1)?[0],
                phase: 0.0,
            }),
            _ => Err(Error::Parse(format!("unknown function id {id:?}"))),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ContinuumFunction::Polynomial(c) => poly_eval(c, x),
            ContinuumFunction::AbsPower {
                center,
                alpha,
                scale,
            } => scale * (x - center).abs().powf(*alpha),
            ContinuumFunction::Step { at, left, right } => {
                if x < *at {
                    *left
                } else {
                    *right
                }
            }
            ContinuumFunction::Sine {
                amplitude,
                frequency,
                phase,
            } => amplitude * (frequency * x + phase).sin(),
            ContinuumFunction::PiecewiseConstant(pieces) => pieces
                .iter()
                .find(|p| p.contains(x))
                .map_or(0.0, |p| p.value),
            ContinuumFunction::Custom { f, .. } => (f.0)(x),
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self {
            ContinuumFunction::Polynomial(_) | ContinuumFunction::Sine { .. } => {
                Smoothness::Lipschitz
            }
            ContinuumFunction::AbsPower { alpha, .. } => {
                if *alpha >= 1.0 || *alpha == 0.0 {
                    Smoothness::Lipschitz
                } else if *alpha >= 0.5 {
                    Smoothness::HolderHalf
                } else if *alpha > 0.0 {
                    Smoothness::Bounded
                } else {
                    Smoothness::L2
                }
            }
            ContinuumFunction::Step { .. } | ContinuumFunction::PiecewiseConstant(_) => {
                Smoothness::Bounded
            }
            ContinuumFunction::Custom { tag, .. } => *tag,
        }
    }

    /// Points where the function or its derivative may fail to be smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            ContinuumFunction::AbsPower { center, .. } => vec![*center],
            ContinuumFunction::Step { at, .. } => vec![*at],
            ContinuumFunction::PiecewiseConstant(p) => {
                let mut v: Vec<f64> = p.iter().flat_map(|p| [p.lo, p.hi]).collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            }
            _ => Vec::new(),
        }
    }

    /// Jump discontinuities as `(location, |jump|)`.
    pub fn jumps(&self) -> Vec<(f64, f64)> {
        match self {
            ContinuumFunction::Step { at, left, right } if left != right => {
                vec![(*at, (right - left).abs())]
            }
            ContinuumFunction::PiecewiseConstant(_) => {
                let mut out = Vec::new();
                for x in self.breakpoints() {
                    let (l, r) = (self.limit_left(x), self.limit_right(x));
                    if l != r {
                        out.push((x, (r - l).abs()));
                    }
                }
                out
            }
            _ => Vec::new(),
        }
    }

    fn limit_left(&self, x: f64) -> f64 {
        match self {
            ContinuumFunction::PiecewiseConstant(p) => p
                .iter()
                .find(|p| p.lo < x && x <= p.hi)
                .map_or(0.0, |p| p.value),
            _ => self.eval(x),
        }
    }

    fn limit_right(&self, x: f64) -> f64 {
        match self {
            ContinuumFunction::PiecewiseConstant(p) => p
                .iter()
                .find(|p| p.lo <= x && x < p.hi)
                .map_or(0.0, |p| p.value),
            _ => self.eval(x),
        }
    }

    /// `∫_a^b f`, exact except for custom functions.
    pub fn integral(&self, a: f64, b: f64) -> Result<f64> {
        if a == b {
            return Ok(0.0);
        }
        match self {
            ContinuumFunction::Polynomial(c) => {
                Ok(poly_antiderivative(c, b) - poly_antiderivative(c, a))
            }
            ContinuumFunction::AbsPower {
                center,
                alpha,
                scale,
            } => {
                if *alpha <= -1.0 {
                    return Err(Error::Divergent(format!(
                        "|x - {center}|^{alpha} is not integrable"
                    )));
                }
                let g = |x: f64| {
                    let t = x - center;
                    t.signum() * t.abs().powf(alpha + 1.0) / (alpha + 1.0)
                };
                Ok(scale * (g(b) - g(a)))
            }
            ContinuumFunction::Step { at, left, right } => {
                let split = at.clamp(a.min(b), a.max(b));
                let sign = if a <= b { 1.0 } else { -1.0 };
                let (lo, hi) = (a.min(b), a.max(b));
                Ok(sign * (left * (split - lo) + right * (hi - split)))
            }
            ContinuumFunction::Sine {
                amplitude,
                frequency,
                phase,
            } => {
                if *frequency == 0.0 {
                    Ok(amplitude * phase.sin() * (b - a))
                } else {
                    Ok(-amplitude / frequency
                        * ((frequency * b + phase).cos() - (frequency * a + phase).cos()))
                }
            }
            ContinuumFunction::PiecewiseConstant(pieces) => {
                let sign = if a <= b { 1.0 } else { -1.0 };
                let (lo, hi) = (a.min(b), a.max(b));
                let total: f64 = pieces
                    .iter()
                    .map(|p| p.value * (p.hi.min(hi) - p.lo.max(lo)).max(0.0))
                    .sum();
                Ok(sign * total)
            }
            ContinuumFunction::Custom { f, .. } => {
                let tol = 1e-13 * (b - a).abs();
                adaptive(|x| (f.0)(x), a, b, tol)
            }
        }
    }

    /// An upper bound for the Lipschitz constant on `[0,1]`, when known.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match self {
            ContinuumFunction::Polynomial(c) => Some(
                c.iter()
                    .enumerate()
                    .skip(1)
                    .map(|(k, ck)| k as f64 * ck.abs())
                    .sum(),
            ),
            ContinuumFunction::Sine {
                amplitude,
                frequency,
                ..
            } => Some((amplitude * frequency).abs()),
            ContinuumFunction::AbsPower {
                center,
                alpha,
                scale,
            } if *alpha >= 1.0 => {
                let reach = center.abs().max((1.0 - center).abs());
                Some((scale * alpha).abs() * reach.powf(alpha - 1.0))
            }
            _ => None,
        }
    }

    /// An upper bound for the `C^{1/2}` constant on `[0,1]`, when known.
    pub fn holder_half_bound(&self) -> Option<f64> {
        match self {
            ContinuumFunction::AbsPower { alpha, scale, .. } if *alpha == 0.5 => Some(scale.abs()),
            _ => self.lipschitz_bound(),
        }
    }
}

fn stage_cells(i: u64, n: u32) -> Result<(NodeSet, CellMeasure)> {
    let nodes = node_set(i, n)?;
    let cm = cells_for(&nodes);
    Ok((nodes, cm))
}

/// Cell averages `Avg_i^{(n)} f`.
pub fn avg(i: u64, n: u32, f: &ContinuumFunction) -> Result<GridFunction> {
    let (_, cm) = stage_cells(i, n)?;
    let values = cm
        .cells
        .par_iter()
        .map(|c| {
            let (lo, hi) = c.bounds_f64();
            Ok(f.integral(lo, hi)? / (hi - lo))
        })
        .collect::<Result<Vec<f64>>>()?;
    GridFunction::new(i, n, values)
}

/// Piecewise-constant extension `Ext_i^{(n)} u`.
pub fn ext(i: u64, n: u32, u: &GridFunction) -> Result<ContinuumFunction> {
    u.check_stage(i, n)?;
    let (_, cm) = stage_cells(i, n)?;
    let pieces = cm
        .cells
        .iter()
        .zip(u.values())
        .map(|(c, &value)| {
            let (lo, hi) = c.bounds_f64();
            Piece {
                lo,
                hi,
                lo_closed: c.lo_closed,
                hi_closed: c.hi_closed,
                value,
            }
        })
        .collect();
    Ok(ContinuumFunction::PiecewiseConstant(pieces))
}

/// Pointwise restriction `f|_{V_i^{(n)}}`.
pub fn restrict(i: u64, n: u32, f: &ContinuumFunction) -> Result<GridFunction> {
    let nodes = node_set(i, n)?;
    let mut values = Vec::with_capacity(nodes.len());
    for k in 0..nodes.len() {
        let v = f.eval(nodes.value(k));
        if !v.is_finite() {
            return Err(Error::Domain(format!(
                "function undefined at node {}",
                nodes.label(k)
            )));
        }
        values.push(v);
    }
    GridFunction::new(i, n, values)
}

/// `‖u‖²_{ℓ²(μ)}`.
pub fn grid_l2_norm_sq(u: &GridFunction) -> Result<f64> {
    let (_, cm) = stage_cells(u.i(), u.n())?;
    let terms: Vec<f64> = u
        .values()
        .iter()
        .zip(cm.masses_f64())
        .map(|(v, m)| v * v * m)
        .collect();
    Ok(pairwise_sum(&terms))
}

/// `∫ h` over the physical space of `i`, split at `breaks`.
fn integrate_physical(i: u64, breaks: &[f64], h: impl Fn(f64) -> f64, tol: f64) -> Result<f64> {
    let mut total = Vec::new();
    for (lo, hi) in crate::geometry::physical_space(i) {
        let (lo, hi) = (crate::geometry::to_f64(&lo), crate::geometry::to_f64(&hi));
        let mut pts = vec![lo, hi];
        pts.extend(breaks.iter().copied().filter(|&b| b > lo && b < hi));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        for w in pts.windows(2) {
            total.push(adaptive(&h, w[0], w[1], tol * (w[1] - w[0]))?);
        }
    }
    Ok(pairwise_sum(&total))
}

/// `‖f‖²_{L²}` over the physical space of `i`.
pub fn l2_norm_sq(i: u64, f: &ContinuumFunction) -> Result<f64> {
    if let ContinuumFunction::PiecewiseConstant(pieces) = f {
        let space: Vec<(f64, f64)> = crate::geometry::physical_space(i)
            .iter()
            .map(|(a, b)| (crate::geometry::to_f64(a), crate::geometry::to_f64(b)))
            .collect();
        let terms: Vec<f64> = pieces
            .iter()
            .map(|p| {
                let len: f64 = space
                    .iter()
                    .map(|&(a, b)| (p.hi.min(b) - p.lo.max(a)).max(0.0))
                    .sum();
                p.value * p.value * len
            })
            .collect();
        return Ok(pairwise_sum(&terms));
    }
    integrate_physical(i, &f.breakpoints(), |x| f.eval(x).powi(2), 1e-13)
}

/// `‖f - g‖²_{L²}` over the physical space of `i`.
pub fn l2_distance_sq(i: u64, f: &ContinuumFunction, g: &ContinuumFunction) -> Result<f64> {
    let mut breaks = f.breakpoints();
    breaks.extend(g.breakpoints());
    integrate_physical(i, &breaks, |x| (f.eval(x) - g.eval(x)).powi(2), 1e-13)
}

/// Energy restricted to wires longer than `cutoff`.
pub fn truncated_energy(
    net: &Network,
    u: &GridFunction,
    cutoff: f64,
    convention: Convention,
) -> Result<EnergyValue> {
    if !(cutoff >= 0.0) {
        return Err(Error::Domain(format!(
            "cutoff {cutoff} must be nonnegative"
        )));
    }
    u.check_stage(net.i(), net.n())?;
    let vals = u.values();
    let wires = net.wires();
    let path_sum = par_sum_ranges(wires.len(), crate::sum::CHUNK, |r| {
        let mut acc = 0.0;
        for w in &wires[r] {
            if net.length(w) > cutoff {
                let d = vals[w.y as usize] - vals[w.x as usize];
                acc += d * d / w.delta;
            }
        }
        acc
    });
    Ok(EnergyValue::from_path_sum(path_sum, convention))
}

/// `a_{i,δ}`: `4Λ_i (2/δ)^{1+2s}` for `i ≤ 2` and `4Λ_i b_i / i` for `i > 2`,
/// with `b_i = (1 - 2/i)^{-(1+2s)}`. Bounds the ordered truncated energy by
/// `a_{i,δ} ‖Ext u‖²_{L²}`.
pub fn truncation_constant(i: u64, kernel: &KernelSpec, cutoff: f64) -> Result<f64> {
    kernel.validate()?;
    let cap = kernel.cap_lambda_i(i);
    if i <= 2 {
        if !(cutoff > 0.0) {
            return Err(Error::Domain(
                "the truncation constant needs a positive cutoff".into(),
            ));
        }
        Ok(4.0 * cap * (2.0 / cutoff).powf(kernel.exponent()))
    } else {
        let b = (1.0 - 2.0 / i as f64).powf(-kernel.exponent());
        Ok(4.0 * cap * b / i as f64)
    }
}

/// `n_0(δ) = ⌈log₂(2/δ)⌉ + 1`.
pub fn n0(cutoff: f64) -> Result<u32> {
    if !(cutoff > 0.0) {
        return Err(Error::Domain("n0 needs a positive cutoff".into()));
    }
    Ok(((2.0 / cutoff).log2().ceil().max(0.0) as u32) + 1)
}

/// `Ē^{(n)}(Ext u)` for the piecewise-constant extended kernel: the double
/// integral over ordered pairs of distinct cells, in the ordered convention.
pub fn extended_energy_pc(
    i: u64,
    n: u32,
    kernel: &KernelSpec,
    u: &GridFunction,
) -> Result<EnergyValue> {
    kernel.validate()?;
    u.check_stage(i, n)?;
    let (nodes, cm) = stage_cells(i, n)?;
    let lens: Vec<f64> = cm
        .cells
        .iter()
        .map(|c| crate::geometry::to_f64(&c.length()))
        .collect();
    let xs = nodes.values();
    let vals = u.values();
    let len = nodes.len();
    let value = par_sum_ranges(len, ROW_CHUNK, |r| {
        let mut acc = 0.0;
        for a in r {
            let mut row = 0.0;
            for b in 0..len {
                let linked = if i == 1 {
                    a != b
                } else {
                    nodes.side(a) != nodes.side(b)
                };
                if !linked {
                    continue;
                }
                let d = vals[a] - vals[b];
                let dist = crate::geometry::to_f64(&(nodes.node(a) - nodes.node(b))).abs();
                row += kernel.value(i, xs[a], xs[b], dist) * d * d * lens[a] * lens[b];
            }
            acc += row;
        }
        acc
    });
    Ok(EnergyValue {
        value,
        convention: Convention::OrderedKernelSum,
    })
}

/// `∫_P ∫_Q |x-y|^{-1-2s} dy dx` for `P = [a,b]` left of `Q = [c,d]`.
fn separated_pair_integral(a: f64, b: f64, c: f64, d: f64, s: f64) -> f64 {
    let psi = |t: f64| {
        if s == 0.5 {
            t.ln()
        } else {
            let p = 1.0 - 2.0 * s;
            t.powf(p) / (2.0 * s * p)
        }
    };
    psi(c - a) - psi(c - b) - psi(d - a) + psi(d - b)
}

fn validate_interval(a: (f64, f64)) -> Result<()> {
    if !(a.0.is_finite() && a.1.is_finite() && a.0 <= a.1) {
        return Err(Error::Domain(format!(
            "[{}, {}] is not an interval",
            a.0, a.1
        )));
    }
    Ok(())
}

/// Pieces of a piecewise-constant function on `[a,b]`, gaps filled with zero.
fn pc_cover(pieces: &[Piece], a: f64, b: f64) -> Result<Vec<(f64, f64, f64)>> {
    let mut sorted: Vec<Piece> = pieces.to_vec();
    sorted.sort_by(|p, q| p.lo.total_cmp(&q.lo));
    let mut out = Vec::new();
    let mut at = a;
    for p in sorted {
        let (lo, hi) = (p.lo.max(a), p.hi.min(b));
        if hi <= lo {
            continue;
        }
        if lo < at {
            return Err(Error::Domain("piecewise-constant pieces overlap".into()));
        }
        if lo > at {
            out.push((at, lo, 0.0));
        }
        out.push((lo, hi, p.value));
        at = hi;
    }
    if at < b {
        out.push((at, b, 0.0));
    }
    Ok(out)
}

fn gagliardo_pc(pieces: &[Piece], s: f64, a1: (f64, f64), a2: (f64, f64)) -> Result<f64> {
    let p1 = pc_cover(pieces, a1.0, a1.1)?;
    let p2 = pc_cover(pieces, a2.0, a2.1)?;
    let terms = p1
        .par_iter()
        .map(|&(a, b, va)| {
            let mut row = 0.0;
            for &(c, d, vc) in &p2 {
                if va == vc {
                    continue;
                }
                let (l, r) = if b <= c {
                    ((a, b), (c, d))
                } else if d <= a {
                    ((c, d), (a, b))
                } else {
                    return Err(Error::Domain(
                        "overlapping pieces with different values".into(),
                    ));
                };
                if l.1 == r.0 && s >= 0.5 {
                    return Err(Error::Divergent(format!(
                        "jump at {} with s = {s} ≥ 1/2",
                        l.1
                    )));
                }
                row += (va - vc) * (va - vc) * separated_pair_integral(l.0, l.1, r.0, r.1, s);
            }
            Ok(row)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

/// `∫_{x∈X} ∫_{y∈Y, y>x} (f(x)-f(y))² (y-x)^{-1-2s}` with `X` not right of `Y`,
/// in the variables `(d, x)`, `d = y - x`.
fn ordered_block(
    f: &ContinuumFunction,
    s: f64,
    x: (f64, f64),
    y: (f64, f64),
    tol: f64,
) -> Result<f64> {
    let dmin = (y.0 - x.1).max(0.0);
    let dmax = y.1 - x.0;
    if dmax <= dmin {
        return Ok(0.0);
    }
    let mut knots = vec![dmin, dmax];
    for k in [y.0 - x.0, y.1 - x.1] {
        if k > dmin && k < dmax {
            knots.push(k);
        }
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let inner_tol = tol * 1e-3;
    let outer = |d: f64| -> f64 {
        let lo = x.0.max(y.0 - d);
        let hi = x.1.min(y.1 - d);
        if hi <= lo || d <= 0.0 {
            return 0.0;
        }
        let inner = adaptive(
            |t| {
                let diff = f.eval(t + d) - f.eval(t);
                diff * diff
            },
            lo,
            hi,
            inner_tol,
        )
        .unwrap_or(f64::NAN);
        inner * d.powf(-1.0 - 2.0 * s)
    };
    let mut parts = Vec::new();
    for (k, w) in knots.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        if k == 0 && lo == 0.0 {
            for (a, b) in geometric_panels(hi, 40) {
                parts.push(adaptive(outer, a, b, tol)?);
            }
        } else {
            parts.push(adaptive(outer, lo, hi, tol)?);
        }
    }
    let v = pairwise_sum(&parts);
    if !v.is_finite() {
        return Err(Error::Quadrature { tol, estimate: v });
    }
    Ok(v)
}

/// `[f]²_{H^s(A1,A2)} = ∫_{A1} ∫_{A2} |f(x)-f(y)|² |x-y|^{-1-2s} dy dx`.
///
/// Piecewise-constant functions use the exact antiderivative per pair of
/// pieces; everything else uses nested adaptive Gauss–Legendre quadrature in
/// the offset `y - x`, graded towards the diagonal.
pub fn gagliardo_seminorm(
    f: &ContinuumFunction,
    s: f64,
    a1: (f64, f64),
    a2: (f64, f64),
    tol: f64,
) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Domain(format!("s = {s} is outside (0,1)")));
    }
    validate_interval(a1)?;
    validate_interval(a2)?;
    if let ContinuumFunction::PiecewiseConstant(pieces) = f {
        return gagliardo_pc(pieces, s, a1, a2);
    }
    if s >= 0.5 {
        let both = |q: f64| q >= a1.0.max(a2.0) && q <= a1.1.min(a2.1);
        let touching = |q: f64| q == a1.1 && q == a2.0 || q == a2.1 && q == a1.0;
        if let Some((q, _)) = f.jumps().into_iter().find(|&(q, _)| both(q) || touching(q)) {
            return Err(Error::Divergent(format!("jump at {q} with s = {s} ≥ 1/2")));
        }
    }
    let mut pts = vec![a1.0, a1.1, a2.0, a2.1];
    let (lo, hi) = (a1.0.min(a2.0), a1.1.max(a2.1));
    pts.extend(f.breakpoints().into_iter().filter(|&b| b > lo && b < hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let elems: Vec<(f64, f64)> = pts.windows(2).map(|w| (w[0], w[1])).collect();
    let inside = |e: &(f64, f64), a: (f64, f64)| e.0 >= a.0 && e.1 <= a.1;
    let mut blocks = Vec::new();
    for (k, ek) in elems.iter().enumerate() {
        for (l, el) in elems.iter().enumerate() {
            if inside(ek, a1) && inside(el, a2) {
                blocks.push((k.min(l), k.max(l)));
            }
        }
    }
    let mut counts: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for b in blocks {
        *counts.entry(b).or_insert(0.0) += 1.0;
    }
    let keys: Vec<((usize, usize), f64)> = counts.into_iter().collect();
    let terms = keys
        .par_iter()
        .map(|&((k, l), mult)| {
            let block = ordered_block(f, s, elems[k], elems[l], tol)?;
            let factor = if k == l { 2.0 } else { mult };
            Ok(factor * block)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms))
}

/// Kernel moment of a network: for `i = 1`, `sup_x Σ_y j(x,y)|x-y|² μ(y)`;
/// for `i = 2`, `Σ_{x∈V_-} Σ_{y∈V_+} j(x,y)(y-x) μ(x)μ(y)`.
pub fn kernel_moment(net: &Network) -> Result<f64> {
    let masses = net.masses();
    match net.i() {
        1 => {
            let len = net.node_count();
            let rows: Vec<f64> = (0..len)
                .into_par_iter()
                .map(|x| {
                    let mut acc = 0.0;
                    for y in 0..len {
                        if let Some(w) = net.wire_between(x, y) {
                            let d = net.length(w);
                            acc += net.jump(w) * d * d * masses[y];
                        }
                    }
                    acc
                })
                .collect();
            Ok(rows.into_iter().fold(0.0, f64::max))
        }
        2 => {
            let wires = net.wires();
            Ok(par_sum_ranges(wires.len(), crate::sum::CHUNK, |r| {
                wires[r]
                    .iter()
                    .map(|w| {
                        net.jump(w) * net.length(w) * masses[w.x as usize] * masses[w.y as usize]
                    })
                    .sum()
            }))
        }
        i => Err(Error::Domain(format!(
            "kernel moments are defined for i ∈ {{1, 2}}, got {i}"
        ))),
    }
}

/// [`kernel_moment`] of the kernel-driven network, streamed over node pairs.
pub fn kernel_moment_streamed(i: u64, n: u32, kernel: &KernelSpec) -> Result<f64> {
    kernel.validate()?;
    let nodes = node_set(i, n)?;
    let masses = cells_for(&nodes).masses_f64();
    let nums = nodes.numerators();
    let den = nodes.den() as f64;
    let term = |a: usize, b: usize| {
        let dist = (nums[b] - nums[a]).abs() as f64 / den;
        kernel.value(i, nums[a] as f64 / den, nums[b] as f64 / den, dist) * dist
    };
    match i {
        1 => {
            let len = nodes.len();
            let rows: Vec<f64> = (0..len)
                .into_par_iter()
                .map(|x| {
                    let mut acc = 0.0;
                    for y in (0..len).filter(|&y| y != x) {
                        let dist = (nums[y] - nums[x]).abs() as f64 / den;
                        acc += term(x, y) * dist * masses[y];
                    }
                    acc
                })
                .collect();
            Ok(rows.into_iter().fold(0.0, f64::max))
        }
        2 => Ok(stream_pairs(&nodes, |a, b| {
            term(a, b) * masses[a] * masses[b]
        })),
        _ => Err(Error::Domain(format!(
            "kernel moments are defined for i ∈ {{1, 2}}, got {i}"
        ))),
    }
}

/// Continuum bound for [`kernel_moment`] by quadrature:
/// `Λ sup_x ∫_0^1 |x-y|^{1-2s} dy` for `i = 1` and
/// `Λ ∫_0^{1/2} ∫_{1/2}^1 (y-x)^{-2s} dy dx` for `i = 2`.
pub fn kernel_moment_target(i: u64, kernel: &KernelSpec, tol: f64) -> Result<f64> {
    kernel.validate()?;
    let cap = kernel.cap_lambda_i(i);
    let s = kernel.s;
    match i {
        1 => {
            let row = |x: f64| -> Result<f64> {
                let g = |y: f64| (x - y).abs().powf(1.0 - 2.0 * s);
                Ok(adaptive(g, 0.0, x, tol)? + adaptive(g, x, 1.0, tol)?)
            };
            let mut best = 0.0f64;
            for k in 0..=64 {
                best = best.max(row(k as f64 / 64.0)?);
            }
            Ok(cap * best)
        }
        2 => {
            // Offsets t = y - x run over [1/2 - x, 1 - x]; ratio-2 panels keep
            // each piece smooth as x approaches 1/2.
            let inner = |x: f64| {
                let (lo, hi) = (0.5 - x, 1.0 - x);
                if lo <= 0.0 {
                    return f64::NAN;
                }
                let mut parts = Vec::new();
                let mut a = lo;
                while a < hi {
                    let b = (2.0 * a).min(hi);
                    parts.push(adaptive(|t| t.powf(-2.0 * s), a, b, tol).unwrap_or(f64::NAN));
                    a = b;
                }
                pairwise_sum(&parts)
            };
            let mut parts = Vec::new();
            for (a, b) in geometric_panels(0.5, 40) {
                parts.push(adaptive(|t| inner(0.5 - t), a, b, tol)?);
            }
            let v = pairwise_sum(&parts);
            if !v.is_finite() {
                return Err(Error::Quadrature { tol, estimate: v });
            }
            Ok(cap * v)
        }
        _ => Err(Error::Domain(format!(
            "kernel moments are defined for i ∈ {{1, 2}}, got {i}"
        ))),
    }
}

/// `max_{x≠y} |u(x)-u(y)| / |x-y|^alpha` over node pairs.
pub fn discrete_holder_constant(points: &[f64], values: &[f64], alpha: f64) -> f64 {
    let len = points.len().min(values.len());
    (0..len)
        .into_par_iter()
        .map(|a| {
            let mut best = 0.0f64;
            for b in a + 1..len {
                let d = (points[b] - points[a]).abs();
                if d > 0.0 {
                    best = best.max((values[b] - values[a]).abs() / d.powf(alpha));
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max)
}
