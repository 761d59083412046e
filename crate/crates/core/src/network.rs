//! Stage networks, jump kernels, effective resistance and network reduction.
//!
//! A stage network has one wire per index-space path of length `n`. Wires are
//! stored once, oriented `x < y`, in a canonical order: all pairs `a < b` for
//! `i = 1` and `V_{i-} × V_{i+}` (row-major) for `i > 1`.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    cells_for, is_node_numerator, node_set_capped, parse_rational, phi_path, rational_label,
    stage_denominator, CellMeasure, NodeSet, Rational,
};
use crate::index_space::{path_count, Path, Step, WeightAssignment, DEFAULT_PATH_CAP};

/// Largest node count accepted by the dense resistance solver.
pub const DEFAULT_SOLVER_NODE_CAP: usize = 4100;

/// Multiplier applied to a kernel family as a function of `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Scale {
    One,
    ISquared,
    Constant(f64),
}

impl Scale {
    pub fn factor(&self, i: u64) -> f64 {
        match self {
            Scale::One => 1.0,
            Scale::ISquared => (i as f64) * (i as f64),
            Scale::Constant(c) => *c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// `|x-y|^{-(1+2s)}`
    Fractional,
    /// `(1 + amplitude * sin(frequency * (x+y))) |x-y|^{-(1+2s)}`
    Perturbed { amplitude: f64, frequency: f64 },
}

/// A jump-kernel family with its comparability constants `λ ≤ j |x-y|^{1+2s} ≤ Λ`
/// (before scaling by `scale(i)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub s: f64,
    pub family: KernelFamily,
    pub scale: Scale,
    pub lambda: f64,
    pub cap_lambda: f64,
}

impl KernelSpec {
    pub fn fractional(s: f64) -> KernelSpec {
        KernelSpec {
            s,
            family: KernelFamily::Fractional,
            scale: Scale::One,
            lambda: 1.0,
            cap_lambda: 1.0,
        }
    }

    pub fn perturbed(s: f64, amplitude: f64, frequency: f64) -> KernelSpec {
        KernelSpec {
            s,
            family: KernelFamily::Perturbed {
                amplitude,
                frequency,
            },
            scale: Scale::One,
            lambda: 1.0 - amplitude.abs(),
            cap_lambda: 1.0 + amplitude.abs(),
        }
    }

    pub fn with_scale(mut self, scale: Scale) -> KernelSpec {
        self.scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(Error::Domain(format!("s = {} is outside (0,1)", self.s)));
        }
        if !(self.lambda > 0.0 && self.cap_lambda >= self.lambda) {
            return Err(Error::Domain(format!(
                "comparability constants need 0 < λ ≤ Λ, got {} and {}",
                self.lambda, self.cap_lambda
            )));
        }
        if let KernelFamily::Perturbed { amplitude, .. } = self.family {
            if amplitude.abs() >= 1.0 {
                return Err(Error::Domain(
                    "perturbation amplitude must be below 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// `1 + 2s`
    pub fn exponent(&self) -> f64 {
        1.0 + 2.0 * self.s
    }

    pub fn lambda_i(&self, i: u64) -> f64 {
        self.lambda * self.scale.factor(i)
    }

    pub fn cap_lambda_i(&self, i: u64) -> f64 {
        self.cap_lambda * self.scale.factor(i)
    }

    /// Kernel value with the distance supplied separately (exact for grid points).
    pub fn value(&self, i: u64, x: f64, y: f64, dist: f64) -> f64 {
        let base = self.scale.factor(i) * dist.powf(-self.exponent());
        match self.family {
            KernelFamily::Fractional => base,
            KernelFamily::Perturbed {
                amplitude,
                frequency,
            } => (1.0 + amplitude * (frequency * (x + y)).sin()) * base,
        }
    }

    pub fn eval(&self, i: u64, x: f64, y: f64) -> f64 {
        self.value(i, x, y, (x - y).abs())
    }
}

/// Where wire resistances come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    /// `δ_σ = ∏ r_e` along the wire's path.
    Weights(WeightAssignment),
    /// `δ = (j(x,y) μ(x) μ(y))^{-1}`.
    Kernel(KernelSpec),
}

impl Source {
    pub fn validate(&self) -> Result<()> {
        match self {
            Source::Weights(w) => w.validate(),
            Source::Kernel(k) => k.validate(),
        }
    }
}

/// A wire between node indices `x < y`, with its path packed two bits per step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wire {
    pub x: u32,
    pub y: u32,
    pub code: u64,
    pub delta: f64,
}

impl Wire {
    pub fn conductance(&self) -> f64 {
        1.0 / self.delta
    }
}

fn unpack_steps(code: u64, n: u32) -> Vec<Step> {
    (0..n).map(|k| Step::from_bits(code >> (2 * k))).collect()
}

fn code_resistance(start: u64, n: u32, code: u64, w: &WeightAssignment) -> f64 {
    let mut v = start;
    let mut prod = 1.0;
    for k in 0..n {
        let s = Step::from_bits(code >> (2 * k));
        let to = 2 * v - s.offset();
        prod *= w.weight_of(v, to);
        v = to;
    }
    prod
}

fn is_wire_numerators(j: u64, m: u32, a: i64, b: i64) -> bool {
    if a >= b || !is_node_numerator(j, m, a) || !is_node_numerator(j, m, b) {
        return false;
    }
    if j == 1 {
        return true;
    }
    let two_m = 1i64 << m;
    a < two_m && b > j as i64 * two_m - two_m
}

/// Recovers the path of the wire with numerators `a < b` over `i 2^n` by
/// peeling off first edges: the preimage of a stage-`m` wire of space `i`
/// under `φ_e` must be a stage-`(m-1)` wire of the target space.
fn peel(i: u64, n: u32, mut a: i64, mut b: i64) -> Option<u64> {
    if !is_wire_numerators(i, n, a, b) {
        return None;
    }
    let mut v = i;
    let mut code = 0u64;
    for k in 0..n {
        let m = n - k;
        let half = 1i64 << (m - 1);
        let mut found = None;
        for &s in Step::allowed(v) {
            let j = 2 * v - s.offset();
            let off = if s.is_shifted() { half } else { 0 };
            if is_wire_numerators(j, m - 1, a - off, b - off) {
                found = Some((s, j, off));
                break;
            }
        }
        let (s, j, off) = found?;
        code |= s.to_bits() << (2 * k);
        v = j;
        a -= off;
        b -= off;
    }
    (a == 0 && b == v as i64).then_some(code)
}

/// The unique path whose map sends `{0,1}` onto the wire `{x,y}`.
pub fn wire_to_path(i: u64, n: u32, x: &Rational, y: &Rational) -> Result<Path> {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    let not_a_wire = || Error::NotAWire {
        i,
        n,
        x: rational_label(x),
        y: rational_label(y),
    };
    if n > 31 {
        return Err(Error::Overflow("path code"));
    }
    let den = Rational::from_integer(stage_denominator(i, n)?);
    let to_num = |r: &Rational| -> Option<i64> {
        let v = r * den;
        v.is_integer().then(|| v.to_integer())
    };
    let (a, b) = match (to_num(lo), to_num(hi)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(not_a_wire()),
    };
    let code = peel(i, n, a, b).ok_or_else(not_a_wire)?;
    Path::new(i, unpack_steps(code, n))
}

/// A stage-`(i, n)` electrical network.
#[derive(Debug, Clone)]
pub struct Network {
    i: u64,
    n: u32,
    nodes: NodeSet,
    measure: CellMeasure,
    masses: Vec<f64>,
    wires: Vec<Wire>,
}

fn wire_pairs(nodes: &NodeSet) -> Vec<(u32, u32)> {
    let len = nodes.len() as u32;
    if nodes.i() == 1 {
        (0..len)
            .flat_map(|a| (a + 1..len).map(move |b| (a, b)))
            .collect()
    } else {
        let right = nodes.right();
        nodes
            .left()
            .flat_map(|a| right.clone().map(move |b| (a as u32, b as u32)))
            .collect()
    }
}

pub fn build_network(i: u64, n: u32, source: &Source) -> Result<Network> {
    build_network_capped(i, n, source, DEFAULT_PATH_CAP)
}

pub fn build_network_capped(i: u64, n: u32, source: &Source, cap: u128) -> Result<Network> {
    let count = path_count(i, n)?;
    if count > cap {
        return Err(Error::ResourceCap {
            what: "network wires",
            requested: count,
            cap,
        });
    }
    if n > 31 {
        return Err(Error::Overflow("path code"));
    }
    source.validate()?;
    let nodes = node_set_capped(i, n, cap)?;
    let measure = cells_for(&nodes);
    let masses = measure.masses_f64();
    let nums = nodes.numerators();
    let wires = wire_pairs(&nodes)
        .into_par_iter()
        .map(|(x, y)| {
            let (a, b) = (nums[x as usize], nums[y as usize]);
            let code = peel(i, n, a, b).expect("every canonical pair is a wire");
            Wire {
                x,
                y,
                code,
                delta: 0.0,
            }
        })
        .collect();
    let mut net = Network {
        i,
        n,
        nodes,
        measure,
        masses,
        wires,
    };
    net.assign_resistances(source)?;
    Ok(net)
}

impl Network {
    fn assign_resistances(&mut self, source: &Source) -> Result<()> {
        let (i, n) = (self.i, self.n);
        let nums = self.nodes.numerators().to_vec();
        let den = self.nodes.den() as f64;
        let masses = &self.masses;
        self.wires.par_iter_mut().for_each(|w| {
            w.delta = match source {
                Source::Weights(wa) => code_resistance(i, n, w.code, wa),
                Source::Kernel(k) => {
                    let (a, b) = (nums[w.x as usize], nums[w.y as usize]);
                    let j = k.value(i, a as f64 / den, b as f64 / den, (b - a) as f64 / den);
                    1.0 / (j * masses[w.x as usize] * masses[w.y as usize])
                }
            };
        });
        if let Some(w) = self
            .wires
            .iter()
            .find(|w| !(w.delta > 0.0 && w.delta.is_finite()))
        {
            return Err(Error::Domain(format!(
                "nonpositive or infinite resistance {} on wire {{{}, {}}}",
                w.delta,
                self.label(w.x as usize),
                self.label(w.y as usize)
            )));
        }
        Ok(())
    }

    /// Same topology with resistances from another source.
    pub fn reweighted(&self, source: &Source) -> Result<Network> {
        source.validate()?;
        let mut net = self.clone();
        net.assign_resistances(source)?;
        Ok(net)
    }

    /// Same topology with explicit per-wire resistances (canonical order).
    pub fn with_resistances(&self, deltas: &[f64]) -> Result<Network> {
        if deltas.len() != self.wires.len() {
            return Err(Error::Domain("one resistance per wire is required".into()));
        }
        if deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::Domain(
                "resistances must be positive and finite".into(),
            ));
        }
        let mut net = self.clone();
        for (w, &d) in net.wires.iter_mut().zip(deltas) {
            w.delta = d;
        }
        Ok(net)
    }

    pub fn i(&self) -> u64 {
        self.i
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn nodes(&self) -> &NodeSet {
        &self.nodes
    }

    pub fn measure(&self) -> &CellMeasure {
        &self.measure
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn wires(&self) -> &[Wire] {
        &self.wires
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn wire_count(&self) -> usize {
        self.wires.len()
    }

    pub fn label(&self, k: usize) -> String {
        self.nodes.label(k)
    }

    /// Exact `|x - y|` of a wire as a float.
    pub fn length(&self, w: &Wire) -> f64 {
        let nums = self.nodes.numerators();
        (nums[w.y as usize] - nums[w.x as usize]) as f64 / self.nodes.den() as f64
    }

    /// Position of the wire `{x, y}` in canonical order.
    pub fn wire_index(&self, x: usize, y: usize) -> Option<usize> {
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        let len = self.nodes.len();
        if a == b || b >= len {
            return None;
        }
        if self.i == 1 {
            Some(a * (2 * len - a - 1) / 2 + (b - a - 1))
        } else {
            let left = self.nodes.left().end;
            if a >= left || b < left {
                return None;
            }
            Some(a * (len - left) + (b - left))
        }
    }

    pub fn wire_between(&self, x: usize, y: usize) -> Option<&Wire> {
        self.wire_index(x, y).map(|k| &self.wires[k])
    }

    pub fn path(&self, w: &Wire) -> Path {
        Path::new(self.i, unpack_steps(w.code, self.n)).expect("stored paths are admissible")
    }

    /// `j(x,y) = (δ μ(x) μ(y))^{-1}` on a wire.
    pub fn jump(&self, w: &Wire) -> f64 {
        1.0 / (w.delta * self.masses[w.x as usize] * self.masses[w.y as usize])
    }

    /// Jump kernel between arbitrary nodes; zero off the wire set.
    pub fn jump_between(&self, x: usize, y: usize) -> f64 {
        self.wire_between(x, y).map_or(0.0, |w| self.jump(w))
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.node_count()];
        for w in &self.wires {
            let c = w.conductance();
            deg[w.x as usize] += c;
            deg[w.y as usize] += c;
        }
        deg
    }

    pub fn weighted_degree(&self, x: usize) -> f64 {
        self.wires
            .iter()
            .filter(|w| w.x as usize == x || w.y as usize == x)
            .map(Wire::conductance)
            .sum()
    }

    pub fn laplacian(&self) -> Result<DMatrix<f64>> {
        check_solver_cap(self.node_count(), DEFAULT_SOLVER_NODE_CAP)?;
        let len = self.node_count();
        let mut l = DMatrix::zeros(len, len);
        for w in &self.wires {
            let (x, y, c) = (w.x as usize, w.y as usize, w.conductance());
            l[(x, y)] -= c;
            l[(y, x)] -= c;
            l[(x, x)] += c;
            l[(y, y)] += c;
        }
        Ok(l)
    }

    pub fn to_conductance_network(&self) -> ConductanceNetwork {
        let labels = (0..self.node_count()).map(|k| self.label(k)).collect();
        let mut cn = ConductanceNetwork::new(labels);
        for w in &self.wires {
            cn.adj[w.x as usize].insert(w.y as usize, w.conductance());
            cn.adj[w.y as usize].insert(w.x as usize, w.conductance());
        }
        cn
    }

    pub fn to_json(&self) -> NetworkJson {
        NetworkJson {
            i: self.i,
            n: self.n,
            nodes: (0..self.node_count()).map(|k| self.label(k)).collect(),
            wires: self
                .wires
                .iter()
                .map(|w| WireJson {
                    x: self.label(w.x as usize),
                    y: self.label(w.y as usize),
                    delta: w.delta,
                    path: self.path(w).codes(),
                })
                .collect(),
        }
    }

    pub fn from_json(doc: &NetworkJson) -> Result<Network> {
        let nodes = node_set_capped(doc.i, doc.n, DEFAULT_PATH_CAP)?;
        let labels: Vec<String> = (0..nodes.len()).map(|k| nodes.label(k)).collect();
        let parsed: Vec<String> = doc
            .nodes
            .iter()
            .map(|s| parse_rational(s).map(|r| rational_label(&r)))
            .collect::<Result<_>>()?;
        if parsed != labels {
            return Err(Error::Parse(format!(
                "node list does not match V_{}^({})",
                doc.i, doc.n
            )));
        }
        let measure = cells_for(&nodes);
        let masses = measure.masses_f64();
        let mut net = Network {
            i: doc.i,
            n: doc.n,
            nodes,
            measure,
            masses,
            wires: Vec::new(),
        };
        let expected = wire_pairs(&net.nodes).len();
        let mut slots: Vec<Option<Wire>> = vec![None; expected];
        for wj in &doc.wires {
            let x = parse_rational(&wj.x)?;
            let y = parse_rational(&wj.y)?;
            let (xi, yi) = match (net.nodes.index_of(&x), net.nodes.index_of(&y)) {
                (Some(a), Some(b)) if a < b => (a, b),
                _ => {
                    return Err(Error::Parse(format!(
                        "wire {{{}, {}}} is not an oriented node pair",
                        wj.x, wj.y
                    )))
                }
            };
            let slot = net.wire_index(xi, yi).ok_or_else(|| Error::NotAWire {
                i: doc.i,
                n: doc.n,
                x: wj.x.clone(),
                y: wj.y.clone(),
            })?;
            let path = Path::parse_codes(doc.i, &wj.path)?;
            if path.len() != doc.n as usize || phi_path(&path)?.image_of_unit()? != (x, y) {
                return Err(Error::Parse(format!(
                    "path {:?} does not map onto {{{}, {}}}",
                    wj.path, wj.x, wj.y
                )));
            }
            if !(wj.delta > 0.0 && wj.delta.is_finite()) {
                return Err(Error::Parse(format!("bad resistance {}", wj.delta)));
            }
            if slots[slot].is_some() {
                return Err(Error::Parse(format!(
                    "duplicate wire {{{}, {}}}",
                    wj.x, wj.y
                )));
            }
            let code = path
                .steps()
                .iter()
                .enumerate()
                .fold(0u64, |c, (k, s)| c | (s.to_bits() << (2 * k)));
            slots[slot] = Some(Wire {
                x: xi as u32,
                y: yi as u32,
                code,
                delta: wj.delta,
            });
        }
        net.wires = slots
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Parse("wire list is incomplete".into()))?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireJson {
    pub x: String,
    pub y: String,
    pub delta: f64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkJson {
    pub i: u64,
    pub n: u32,
    pub nodes: Vec<String>,
    pub wires: Vec<WireJson>,
}

/// Jump kernel on every wire, in canonical order.
pub fn jump_kernel(net: &Network) -> Vec<f64> {
    net.wires.iter().map(|w| net.jump(w)).collect()
}

/// Inverts [`jump_kernel`]: `δ = (j μ(x) μ(y))^{-1}`.
pub fn resistances_from_kernel(net: &Network, jumps: &[f64]) -> Vec<f64> {
    net.wires
        .iter()
        .zip(jumps)
        .map(|(w, &j)| 1.0 / (j * net.masses[w.x as usize] * net.masses[w.y as usize]))
        .collect()
}

pub fn weighted_degree(net: &Network, x: usize) -> f64 {
    net.weighted_degree(x)
}

pub fn graph_laplacian(net: &Network) -> Result<DMatrix<f64>> {
    net.laplacian()
}

/// Extremes of `j(x,y) |x-y|^{1+2s}` over the wires of `net`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Comparability {
    pub min_ratio: f64,
    pub max_ratio: f64,
}

pub fn comparability(net: &Network, s: f64) -> Comparability {
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for w in &net.wires {
        let r = net.jump(w) * net.length(w).powf(1.0 + 2.0 * s);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Comparability {
        min_ratio: lo,
        max_ratio: hi,
    }
}

fn check_solver_cap(nodes: usize, cap: usize) -> Result<()> {
    if nodes > cap {
        Err(Error::ResourceCap {
            what: "dense resistance solve",
            requested: nodes as u128,
            cap: cap as u128,
        })
    } else {
        Ok(())
    }
}

/// A general network: labelled nodes and symmetric positive conductances.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductanceNetwork {
    labels: Vec<String>,
    adj: Vec<BTreeMap<usize, f64>>,
}

impl ConductanceNetwork {
    pub fn new(labels: Vec<String>) -> ConductanceNetwork {
        let adj = vec![BTreeMap::new(); labels.len()];
        ConductanceNetwork { labels, adj }
    }

    pub fn with_nodes(count: usize) -> ConductanceNetwork {
        ConductanceNetwork::new((0..count).map(|k| k.to_string()).collect())
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, k: usize) -> &str {
        &self.labels[k]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Adds `c` in parallel with any existing conductance between `x` and `y`.
    pub fn add_conductance(&mut self, x: usize, y: usize, c: f64) -> Result<()> {
        let len = self.node_count();
        if x == y || x >= len || y >= len {
            return Err(Error::Domain(format!(
                "bad conductance endpoints ({x}, {y})"
            )));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Domain(format!(
                "conductance must be positive, got {c}"
            )));
        }
        *self.adj[x].entry(y).or_insert(0.0) += c;
        *self.adj[y].entry(x).or_insert(0.0) += c;
        Ok(())
    }

    pub fn conductance(&self, x: usize, y: usize) -> f64 {
        self.adj[x].get(&y).copied().unwrap_or(0.0)
    }

    pub fn neighbors(&self, x: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.adj[x].iter().map(|(&y, &c)| (y, c))
    }

    pub fn degree(&self, x: usize) -> f64 {
        self.adj[x].values().sum()
    }

    /// Edges `(x, y, c)` with `x < y`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (x, row) in self.adj.iter().enumerate() {
            for (&y, &c) in row.range(x + 1..) {
                out.push((x, y, c));
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        let len = self.node_count();
        if len <= 1 {
            return true;
        }
        let mut seen = vec![false; len];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &u in self.adj[v].keys() {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count == len
    }

    pub fn laplacian(&self) -> Result<DMatrix<f64>> {
        check_solver_cap(self.node_count(), DEFAULT_SOLVER_NODE_CAP)?;
        let len = self.node_count();
        let mut l = DMatrix::zeros(len, len);
        for (x, y, c) in self.edges() {
            l[(x, y)] -= c;
            l[(y, x)] -= c;
            l[(x, x)] += c;
            l[(y, y)] += c;
        }
        Ok(l)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["x", "y", "conductance"])?;
        for (x, y, c) in self.edges() {
            wtr.write_record([
                self.labels[x].as_str(),
                self.labels[y].as_str(),
                &format!("{c:.16e}"),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads an `x,y,conductance` edge list; nodes are labelled in order of
    /// first appearance.
    pub fn read_csv<R: Read>(input: R) -> Result<ConductanceNetwork> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut labels: Vec<String> = Vec::new();
        let mut index: BTreeMap<String, usize> = BTreeMap::new();
        let mut edges = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Parse("expected x,y,conductance".into()));
            }
            let mut id = |s: &str| -> usize {
                let s = s.trim().to_string();
                *index.entry(s.clone()).or_insert_with(|| {
                    labels.push(s);
                    labels.len() - 1
                })
            };
            let x = id(&rec[0]);
            let y = id(&rec[1]);
            let c: f64 = rec[2]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad conductance {:?}", &rec[2])))?;
            edges.push((x, y, c));
        }
        let mut cn = ConductanceNetwork::new(labels);
        for (x, y, c) in edges {
            cn.add_conductance(x, y, c)?;
        }
        Ok(cn)
    }
}

/// Effective resistances from a Cholesky factorisation of the Laplacian with
/// node 0 grounded.
pub struct ResistanceSolver {
    size: usize,
    chol: Option<Cholesky<f64, Dyn>>,
}

impl ResistanceSolver {
    pub fn from_laplacian(l: &DMatrix<f64>) -> Result<ResistanceSolver> {
        let size = l.nrows();
        if size <= 1 {
            return Ok(ResistanceSolver { size, chol: None });
        }
        let reduced = l.view((1, 1), (size - 1, size - 1)).into_owned();
        let chol = Cholesky::new(reduced)
            .ok_or_else(|| Error::Singular("grounded Laplacian is not positive definite".into()))?;
        Ok(ResistanceSolver {
            size,
            chol: Some(chol),
        })
    }

    pub fn for_network(net: &Network) -> Result<ResistanceSolver> {
        ResistanceSolver::from_laplacian(&net.laplacian()?)
    }

    pub fn for_conductances(cn: &ConductanceNetwork) -> Result<ResistanceSolver> {
        if !cn.is_connected() {
            return Err(Error::Singular("network is disconnected".into()));
        }
        ResistanceSolver::from_laplacian(&cn.laplacian()?)
    }

    pub fn resistance(&self, x: usize, y: usize) -> Result<f64> {
        if x >= self.size || y >= self.size {
            return Err(Error::Domain(format!("node out of range ({x}, {y})")));
        }
        if x == y {
            return Ok(0.0);
        }
        let chol = self.chol.as_ref().expect("at least two nodes");
        let mut b = DVector::zeros(self.size - 1);
        if x > 0 {
            b[x - 1] += 1.0;
        }
        if y > 0 {
            b[y - 1] -= 1.0;
        }
        let v = chol.solve(&b);
        Ok(b.dot(&v))
    }

    /// All pairwise resistances, from the inverse of the grounded Laplacian.
    pub fn all_pairs(&self) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(self.size, self.size);
        let Some(chol) = &self.chol else {
            return r;
        };
        let g = chol.inverse();
        let entry = |x: usize, y: usize| -> f64 {
            if x == 0 || y == 0 {
                0.0
            } else {
                g[(x - 1, y - 1)]
            }
        };
        for x in 0..self.size {
            for y in x + 1..self.size {
                let v = entry(x, x) + entry(y, y) - 2.0 * entry(x, y);
                r[(x, y)] = v;
                r[(y, x)] = v;
            }
        }
        r
    }
}

pub fn effective_resistance(net: &Network, x: usize, y: usize) -> Result<f64> {
    if x == y {
        return Err(Error::Domain(
            "effective resistance needs distinct nodes".into(),
        ));
    }
    ResistanceSolver::for_network(net)?.resistance(x, y)
}

pub fn effective_resistance_general(cn: &ConductanceNetwork, x: usize, y: usize) -> Result<f64> {
    if x == y {
        return Err(Error::Domain(
            "effective resistance needs distinct nodes".into(),
        ));
    }
    ResistanceSolver::for_conductances(cn)?.resistance(x, y)
}

/// Stage-1 series/parallel resistance `(α + 2β) γ / (α + 2β + γ)`.
pub fn series_parallel_stage1(alpha: f64, beta: f64, gamma: f64) -> f64 {
    let xi = alpha + 2.0 * beta;
    xi * gamma / (xi + gamma)
}

/// The `γ` with `ξ γ / (ξ + γ) = 1`, i.e. `ξ / (ξ - 1)`.
pub fn solve_matching(xi: f64) -> Result<f64> {
    if !(xi > 1.0) || !xi.is_finite() {
        return Err(Error::Domain(format!(
            "matching has no positive solution for ξ = {xi} (need ξ > 1)"
        )));
    }
    Ok(xi / (xi - 1.0))
}

/// Removes `x0` and connects its neighbours by
/// `c'(x,y) = c(x,y) + c(x,x0) c(x0,y) / c(x0)`.
pub fn star_mesh_eliminate(cn: &ConductanceNetwork, x0: usize) -> Result<ConductanceNetwork> {
    if x0 >= cn.node_count() {
        return Err(Error::Domain(format!("node {x0} out of range")));
    }
    let c0 = cn.degree(x0);
    if c0 <= 0.0 {
        return Err(Error::Singular(format!(
            "node {} has zero degree",
            cn.label(x0)
        )));
    }
    let remap = |v: usize| if v > x0 { v - 1 } else { v };
    let mut labels = cn.labels.clone();
    labels.remove(x0);
    let mut out = ConductanceNetwork::new(labels);
    for (x, y, c) in cn.edges() {
        if x != x0 && y != x0 {
            out.adj[remap(x)].insert(remap(y), c);
            out.adj[remap(y)].insert(remap(x), c);
        }
    }
    let star: Vec<(usize, f64)> = cn.neighbors(x0).collect();
    for (a, &(x, cx)) in star.iter().enumerate() {
        for &(y, cy) in &star[a + 1..] {
            let add = cx * cy / c0;
            let (p, q) = (remap(x), remap(y));
            *out.adj[p].entry(q).or_insert(0.0) += add;
            *out.adj[q].entry(p).or_insert(0.0) += add;
        }
    }
    Ok(out)
}

/// Eliminates every node except `x` and `y`; returns `1 / c(x,y)`.
pub fn reduce_to_pair(cn: &ConductanceNetwork, x: usize, y: usize) -> Result<f64> {
    if x == y || x >= cn.node_count() || y >= cn.node_count() {
        return Err(Error::Domain(format!("bad node pair ({x}, {y})")));
    }
    let mut cur = cn.clone();
    let (lx, ly) = (cn.label(x).to_string(), cn.label(y).to_string());
    while cur.node_count() > 2 {
        let victim = (0..cur.node_count())
            .find(|&k| cur.labels[k] != lx && cur.labels[k] != ly)
            .expect("a node other than the pair");
        if cur.degree(victim) == 0.0 {
            // An isolated node carries no current; drop it.
            let mut labels = cur.labels.clone();
            labels.remove(victim);
            let mut next = ConductanceNetwork::new(labels);
            for (p, q, c) in cur.edges() {
                let r = |v: usize| if v > victim { v - 1 } else { v };
                next.adj[r(p)].insert(r(q), c);
                next.adj[r(q)].insert(r(p), c);
            }
            cur = next;
        } else {
            cur = star_mesh_eliminate(&cur, victim)?;
        }
    }
    let c = cur.conductance(0, 1);
    if c <= 0.0 {
        return Err(Error::Singular(format!("{lx} and {ly} are disconnected")));
    }
    Ok(1.0 / c)
}

/// `max |R_fine(x,y) - R_coarse(x,y)|` over node pairs of the coarse network,
/// matched by label.
pub fn equivalence_residual(fine: &ConductanceNetwork, coarse: &ConductanceNetwork) -> Result<f64> {
    let map: Vec<usize> = coarse
        .labels()
        .iter()
        .map(|l| {
            fine.index_of(l)
                .ok_or_else(|| Error::Domain(format!("node {l} of the coarse network is missing")))
        })
        .collect::<Result<_>>()?;
    let rf = ResistanceSolver::for_conductances(fine)?.all_pairs();
    let rc = ResistanceSolver::for_conductances(coarse)?.all_pairs();
    let mut worst = 0.0f64;
    for a in 0..map.len() {
        for b in a + 1..map.len() {
            worst = worst.max((rf[(map[a], map[b])] - rc[(a, b)]).abs());
        }
    }
    Ok(worst)
}

/// `1 / min(deg x, deg y)`, a lower bound for `R(x,y)` across a wire.
pub fn nash_williams_bound(cn: &ConductanceNetwork, x: usize, y: usize) -> f64 {
    1.0 / cn.degree(x).min(cn.degree(y))
}
