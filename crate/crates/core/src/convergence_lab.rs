//! Experiment drivers: energy sequences in `n` and `i`, equivalence gaps,
//! recovery-sequence probes, the compactness lower bound, the local baseline
//! and per-stage resistance bounds.
//!
//! Every driver returns a [`ConvergenceReport`] holding the raw sequence, an
//! Aitken extrapolation of its tail, the analytic target when one exists, and
//! named pass/fail checks. Acceptance is judged on raw terms.

use std::fmt::Write as _;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{
    avg, ext, gagliardo_seminorm, grid_l2_norm_sq, kernel_energy, l2_distance_sq, restrict,
    truncation_constant, ContinuumFunction, Convention, GridFunction,
};
use crate::error::{Error, Result};
use crate::fmt17;
use crate::geometry::{node_set, physical_space, to_f64};
use crate::index_space::{path_count, WeightAssignment, DEFAULT_PATH_CAP};
use crate::network::{
    build_network_capped, equivalence_residual, nash_williams_bound, ConductanceNetwork,
    KernelFamily, KernelSpec, ResistanceSolver, Scale, Source, DEFAULT_SOLVER_NODE_CAP,
};

/// Kernel family selected in a config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    Fractional,
    Perturbed,
}

/// Flat experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub i: u64,
    pub n_min: u32,
    pub n_max: u32,
    pub i_values: Vec<u64>,
    pub s: f64,
    pub kernel: KernelChoice,
    pub amplitude: f64,
    pub frequency: f64,
    pub scale: Scale,
    pub weights: Option<WeightAssignment>,
    pub function: String,
    pub convention: Convention,
    pub tol: f64,
    pub quad_tol: f64,
    pub monotone_from: Option<u32>,
    pub seed: u64,
    pub samples: usize,
    pub r: f64,
    pub residual_max_n: u32,
    pub cap: u128,
    pub solver_cap: usize,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            i: 1,
            n_min: 0,
            n_max: 8,
            i_values: vec![10, 100, 1000],
            s: 0.25,
            kernel: KernelChoice::Fractional,
            amplitude: 0.5,
            frequency: 7.0,
            scale: Scale::One,
            weights: None,
            function: "linear".into(),
            convention: Convention::OrderedKernelSum,
            tol: 1e-2,
            quad_tol: 1e-10,
            monotone_from: None,
            seed: 1,
            samples: 100,
            r: 0.5,
            residual_max_n: 8,
            cap: DEFAULT_PATH_CAP,
            solver_cap: DEFAULT_SOLVER_NODE_CAP,
        }
    }
}

/// Keys accepted by [`ExperimentConfig::parse`], with defaults and meaning.
pub const CONFIG_KEYS: &[(&str, &str, &str)] = &[
    ("i", "1", "index-space vertex"),
    ("n_min", "0", "first stage"),
    ("n_max", "8", "last stage"),
    (
        "i_values",
        "10,100,1000",
        "vertices for i-limit experiments",
    ),
    ("s", "0.25", "fractional order in (0,1)"),
    ("kernel", "fractional", "fractional | perturbed"),
    ("amplitude", "0.5", "perturbation amplitude"),
    ("frequency", "7", "perturbation frequency"),
    ("scale", "one", "one | i2 | <number>"),
    ("source", "kernel", "kernel | weights (resistance bounds)"),
    (
        "weights",
        "uniform:1",
        "uniform:r | random:seed,lo,hi | stage1:a,b,g",
    ),
    (
        "function",
        "linear",
        "linear | square | const:c | poly:c0,c1,.. | sqrt | abspow:c,a | step:a | sin:w",
    ),
    (
        "convention",
        "ordered-kernel-sum",
        "ordered-kernel-sum | path-sum",
    ),
    ("tol", "0.01", "acceptance tolerance"),
    ("quad_tol", "1e-10", "quadrature tolerance"),
    (
        "monotone_from",
        "none",
        "first stage of the monotone-error check",
    ),
    ("seed", "1", "seed for random draws"),
    ("samples", "100", "random functions per stage"),
    ("r", "0.5", "local baseline resistance ratio"),
    (
        "residual_max_n",
        "8",
        "last stage of the local equivalence check",
    ),
    ("cap", "67108864", "largest number of wires or node pairs"),
    ("solver_cap", "4100", "largest node count for dense solves"),
];

/// Parses `uniform:r`, `random:seed,lo,hi` or `stage1:a,b,g`.
pub fn parse_weights(v: &str) -> Result<WeightAssignment> {
    let (head, args) = v.split_once(':').unwrap_or((v, ""));
    let nums: Vec<f64> = args
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number {t:?} in weights {v:?}")))
        })
        .collect::<Result<_>>()?;
    let w = match (head, nums.as_slice()) {
        ("uniform", [r]) => WeightAssignment::Uniform(*r),
        ("random", [seed, lo, hi]) if *seed >= 0.0 && seed.fract() == 0.0 => {
            WeightAssignment::Random {
                seed: *seed as u64,
                lo: *lo,
                hi: *hi,
            }
        }
        ("stage1", [a, b, g]) => WeightAssignment::Stage1 {
            alpha: *a,
            beta: *b,
            gamma: *g,
        },
        _ => return Err(Error::Config(format!("unrecognised weights {v:?}"))),
    };
    w.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(w)
}

/// Parses `one`, `i2` or a positive constant.
pub fn parse_scale(v: &str) -> Result<Scale> {
    match v {
        "one" => Ok(Scale::One),
        "i2" => Ok(Scale::ISquared),
        v => match v.parse::<f64>() {
            Ok(c) if c > 0.0 && c.is_finite() => Ok(Scale::Constant(c)),
            _ => Err(Error::Config(format!("unrecognised scale {v:?}"))),
        },
    }
}

fn weights_text(w: &WeightAssignment) -> String {
    match w {
        WeightAssignment::Uniform(r) => format!("uniform:{r}"),
        WeightAssignment::Random { seed, lo, hi } => format!("random:{seed},{lo},{hi}"),
        WeightAssignment::Stage1 { alpha, beta, gamma } => format!("stage1:{alpha},{beta},{gamma}"),
        WeightAssignment::Table { .. } => "table".into(),
    }
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut source_weights = false;
        let mut weights = WeightAssignment::Uniform(1.0);
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::Config(format!(
                    "line {}: {key} expects {what}, got {value:?}",
                    lineno + 1
                ))
            };
            macro_rules! num {
                ($t:ty, $what:expr) => {
                    value.parse::<$t>().map_err(|_| bad($what))?
                };
            }
            match key {
                "i" => cfg.i = num!(u64, "a positive integer"),
                "n_min" => cfg.n_min = num!(u32, "a stage"),
                "n_max" => cfg.n_max = num!(u32, "a stage"),
                "i_values" => {
                    cfg.i_values = value
                        .split(',')
                        .map(|t| {
                            t.trim()
                                .parse::<u64>()
                                .map_err(|_| bad("a list of integers"))
                        })
                        .collect::<Result<_>>()?
                }
                "s" => cfg.s = num!(f64, "a number"),
                "kernel" => {
                    cfg.kernel = match value {
                        "fractional" | "frac" => KernelChoice::Fractional,
                        "perturbed" => KernelChoice::Perturbed,
                        _ => return Err(bad("fractional or perturbed")),
                    }
                }
                "amplitude" => cfg.amplitude = num!(f64, "a number"),
                "frequency" => cfg.frequency = num!(f64, "a number"),
                "scale" => {
                    cfg.scale = parse_scale(value).map_err(|_| bad("one, i2 or a number"))?
                }
                "source" => {
                    source_weights = match value {
                        "kernel" => false,
                        "weights" => true,
                        _ => return Err(bad("kernel or weights")),
                    }
                }
                "weights" => weights = parse_weights(value)?,
                "function" => {
                    ContinuumFunction::from_id(value).map_err(|e| Error::Config(e.to_string()))?;
                    cfg.function = value.to_string();
                }
                "convention" => cfg.convention = value.parse().map_err(|_| bad("a convention"))?,
                "tol" => cfg.tol = num!(f64, "a number"),
                "quad_tol" => cfg.quad_tol = num!(f64, "a number"),
                "monotone_from" => {
                    cfg.monotone_from = if value == "none" {
                        None
                    } else {
                        Some(num!(u32, "a stage or none"))
                    }
                }
                "seed" => cfg.seed = num!(u64, "an integer"),
                "samples" => cfg.samples = num!(usize, "a count"),
                "r" => cfg.r = num!(f64, "a number"),
                "residual_max_n" => cfg.residual_max_n = num!(u32, "a stage"),
                "cap" => cfg.cap = num!(u128, "a count"),
                "solver_cap" => cfg.solver_cap = num!(usize, "a count"),
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key {key:?}",
                        lineno + 1
                    )))
                }
            }
        }
        if source_weights {
            cfg.weights = Some(weights);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.s > 0.0 && self.s < 1.0) {
            return fail(format!("s = {} is outside (0,1)", self.s));
        }
        if self.i == 0 {
            return fail("i must be at least 1".into());
        }
        if self.n_min > self.n_max {
            return fail(format!("empty stage range {}..={}", self.n_min, self.n_max));
        }
        if self.i_values.is_empty() || self.i_values.contains(&0) {
            return fail("i_values must be a nonempty list of positive integers".into());
        }
        if self.cap == 0 || self.solver_cap == 0 || self.samples == 0 {
            return fail("caps and sample counts must be positive".into());
        }
        if !(self.tol > 0.0 && self.quad_tol > 0.0) {
            return fail("tolerances must be positive".into());
        }
        if !(self.r > 0.0) {
            return fail("r must be positive".into());
        }
        self.kernel_spec()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.function().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// Canonical text form with every key.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let scale = match self.scale {
            Scale::One => "one".to_string(),
            Scale::ISquared => "i2".to_string(),
            Scale::Constant(c) => c.to_string(),
        };
        let i_values: Vec<String> = self.i_values.iter().map(u64::to_string).collect();
        let kernel = match self.kernel {
            KernelChoice::Fractional => "fractional",
            KernelChoice::Perturbed => "perturbed",
        };
        let rows: Vec<(&str, String)> = vec![
            ("i", self.i.to_string()),
            ("n_min", self.n_min.to_string()),
            ("n_max", self.n_max.to_string()),
            ("i_values", i_values.join(",")),
            ("s", self.s.to_string()),
            ("kernel", kernel.into()),
            ("amplitude", self.amplitude.to_string()),
            ("frequency", self.frequency.to_string()),
            ("scale", scale),
            (
                "source",
                if self.weights.is_some() {
                    "weights"
                } else {
                    "kernel"
                }
                .into(),
            ),
            (
                "weights",
                self.weights
                    .as_ref()
                    .map_or("uniform:1".into(), weights_text),
            ),
            ("function", self.function.clone()),
            ("convention", self.convention.to_string()),
            ("tol", self.tol.to_string()),
            ("quad_tol", self.quad_tol.to_string()),
            (
                "monotone_from",
                self.monotone_from.map_or("none".into(), |n| n.to_string()),
            ),
            ("seed", self.seed.to_string()),
            ("samples", self.samples.to_string()),
            ("r", self.r.to_string()),
            ("residual_max_n", self.residual_max_n.to_string()),
            ("cap", self.cap.to_string()),
            ("solver_cap", self.solver_cap.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        let k = match self.kernel {
            KernelChoice::Fractional => KernelSpec::fractional(self.s),
            KernelChoice::Perturbed => {
                KernelSpec::perturbed(self.s, self.amplitude, self.frequency)
            }
        };
        k.with_scale(self.scale)
    }

    pub fn function(&self) -> Result<ContinuumFunction> {
        ContinuumFunction::from_id(&self.function)
    }

    pub fn stages(&self) -> impl Iterator<Item = u32> {
        self.n_min..=self.n_max
    }
}

/// A named pass/fail check with a human-readable detail or witness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Check {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub experiment: String,
    /// `"n"` or `"i"`.
    pub grid_name: String,
    pub grid: Vec<u64>,
    pub values: Vec<f64>,
    /// Further per-row columns, each as long as `grid`.
    pub columns: Vec<(String, Vec<f64>)>,
    pub row_pass: Vec<bool>,
    pub extrapolated: Option<f64>,
    pub target: Option<f64>,
    pub target_source: String,
    pub tolerance: f64,
    pub checks: Vec<Check>,
}

impl ConvergenceReport {
    fn new(experiment: &str, grid_name: &str, tolerance: f64) -> ConvergenceReport {
        ConvergenceReport {
            experiment: experiment.to_string(),
            grid_name: grid_name.to_string(),
            grid: Vec::new(),
            values: Vec::new(),
            columns: Vec::new(),
            row_pass: Vec::new(),
            extrapolated: None,
            target: None,
            target_source: String::new(),
            tolerance,
            checks: Vec::new(),
        }
    }

    fn column(&mut self, name: &str) -> &mut Vec<f64> {
        if let Some(k) = self.columns.iter().position(|(c, _)| c == name) {
            return &mut self.columns[k].1;
        }
        self.columns.push((name.to_string(), Vec::new()));
        &mut self.columns.last_mut().unwrap().1
    }

    fn finish(mut self) -> ConvergenceReport {
        self.extrapolated = aitken(&self.values);
        self
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn column_values(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(c, _)| c == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }

    /// CSV: grid, value, extra columns, target, pass.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![self.grid_name.clone(), "value".into()];
        header.extend(self.columns.iter().map(|(c, _)| c.clone()));
        header.push("target".into());
        header.push("pass".into());
        w.write_record(&header)?;
        for (k, g) in self.grid.iter().enumerate() {
            let mut row = vec![g.to_string(), fmt17(self.values[k])];
            row.extend(self.columns.iter().map(|(_, v)| fmt17(v[k])));
            row.push(self.target.map_or(String::new(), fmt17));
            row.push(self.row_pass[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Two-column `grid value` data for gnuplot.
    pub fn write_gnuplot<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {} {}", self.grid_name, self.experiment)?;
        for (g, v) in self.grid.iter().zip(&self.values) {
            writeln!(out, "{g} {}", fmt17(*v))?;
        }
        Ok(())
    }
}

/// Aitken Δ² extrapolation of the last three terms.
pub fn aitken(xs: &[f64]) -> Option<f64> {
    if xs.len() < 3 {
        return None;
    }
    let (a, b, c) = (xs[xs.len() - 3], xs[xs.len() - 2], xs[xs.len() - 1]);
    let denom = (c - b) - (b - a);
    if denom == 0.0 || !denom.is_finite() {
        return None;
    }
    let v = c - (c - b) * (c - b) / denom;
    v.is_finite().then_some(v)
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn check_pair_cap(i: u64, n: u32, cap: u128) -> Result<()> {
    let count = path_count(i, n)?;
    if count > cap {
        return Err(Error::ResourceCap {
            what: "node pairs",
            requested: count,
            cap,
        });
    }
    Ok(())
}

/// The two blocks of the physical space as floats.
fn blocks(i: u64) -> Vec<(f64, f64)> {
    physical_space(i)
        .iter()
        .map(|(a, b)| (to_f64(a), to_f64(b)))
        .collect()
}

/// Continuum limit of the ordered energy for the exact fractional kernel:
/// `[f]²_{H^s([0,1])}` for `i = 1` and `2 [f]²_{H^s(A_-, A_+)}` for `i > 1`,
/// times `scale(i)`. `None` for perturbed kernels.
pub fn continuum_target(
    cfg: &ExperimentConfig,
    f: &ContinuumFunction,
) -> Result<Option<(f64, String)>> {
    if cfg.kernel != KernelChoice::Fractional {
        return Ok(None);
    }
    let scale = cfg.scale.factor(cfg.i);
    let s = cfg.s;
    if let ContinuumFunction::Polynomial(c) = f {
        if c.len() <= 2 && cfg.i == 1 {
            let slope = c.get(1).copied().unwrap_or(0.0);
            let v = slope * slope * 2.0 / ((2.0 - 2.0 * s) * (3.0 - 2.0 * s));
            return Ok(Some((
                scale * v,
                "closed form 2/((2-2s)(3-2s)) slope^2".into(),
            )));
        }
    }
    let v = if cfg.i == 1 {
        gagliardo_seminorm(f, s, (0.0, 1.0), (0.0, 1.0), cfg.quad_tol)?
    } else {
        let b = blocks(cfg.i);
        let (lo, hi) = if b.len() == 2 {
            (b[0], b[1])
        } else {
            ((0.0, 0.5), (0.5, 1.0))
        };
        2.0 * gagliardo_seminorm(f, s, lo, hi, cfg.quad_tol)?
    };
    let tag = if matches!(f, ContinuumFunction::PiecewiseConstant(_)) {
        "Gagliardo closed form (piecewise constant)"
    } else {
        "Gagliardo quadrature"
    };
    Ok(Some((scale * v, tag.into())))
}

/// One stage of the ellipticity sandwich: the kernel energy, the exact
/// fractional Riemann sum, and the extreme pairwise kernel ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichStage {
    pub energy: f64,
    pub fractional: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

pub fn sandwich_stage(
    i: u64,
    n: u32,
    kernel: &KernelSpec,
    u: &GridFunction,
    convention: Convention,
) -> Result<SandwichStage> {
    let exact = KernelSpec {
        family: KernelFamily::Fractional,
        ..*kernel
    };
    let energy = kernel_energy(i, n, kernel, u, 0.0, convention)?.value;
    let fractional = kernel_energy(i, n, &exact, u, 0.0, convention)?.value;
    let nodes = node_set(i, n)?;
    let nums = nodes.numerators();
    let den = nodes.den() as f64;
    let len = nodes.len();
    let rows: Vec<usize> = if i == 1 {
        (0..len.saturating_sub(1)).collect()
    } else {
        nodes.left().collect()
    };
    let (lo, hi) = rows
        .par_iter()
        .map(|&a| {
            let start = if i == 1 { a + 1 } else { nodes.right().start };
            let mut lo = f64::INFINITY;
            let mut hi = 0.0f64;
            for b in start..len {
                let (x, y) = (nums[a] as f64 / den, nums[b] as f64 / den);
                let dist = (nums[b] - nums[a]) as f64 / den;
                let r = kernel.value(i, x, y, dist) / exact.value(i, x, y, dist);
                lo = lo.min(r);
                hi = hi.max(r);
            }
            (lo, hi)
        })
        .reduce(|| (f64::INFINITY, 0.0), |p, q| (p.0.min(q.0), p.1.max(q.1)));
    Ok(SandwichStage {
        energy,
        fractional,
        min_ratio: lo,
        max_ratio: hi,
    })
}

fn energy_sequence(
    cfg: &ExperimentConfig,
    name: &str,
    grid_fn: impl Fn(u32) -> Result<GridFunction>,
) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let f = cfg.function()?;
    let kernel = cfg.kernel_spec();
    let mut rep = ConvergenceReport::new(name, "n", cfg.tol);
    let mut sandwich_ok = true;
    let mut sandwich_witness = String::new();
    let (lam, cap_lam) = (kernel.lambda, kernel.cap_lambda);
    for n in cfg.stages() {
        check_pair_cap(cfg.i, n, cfg.cap)?;
        let u = grid_fn(n)?;
        let st = sandwich_stage(cfg.i, n, &kernel, &u, cfg.convention)?;
        let slack = 1e-12 * st.fractional;
        let holds = st.min_ratio >= lam * (1.0 - 1e-12)
            && st.max_ratio <= cap_lam * (1.0 + 1e-12)
            && st.energy >= lam * st.fractional - slack
            && st.energy <= cap_lam * st.fractional + slack;
        if !holds && sandwich_ok {
            sandwich_ok = false;
            sandwich_witness = format!(
                "n={n}: ratios [{}, {}], E={}, G={}",
                st.min_ratio, st.max_ratio, st.energy, st.fractional
            );
        }
        rep.grid.push(n as u64);
        rep.values.push(st.energy);
        rep.column("fractional_sum").push(st.fractional);
        rep.column("min_kernel_ratio").push(st.min_ratio);
        rep.column("max_kernel_ratio").push(st.max_ratio);
        rep.column("l2_norm_sq").push(grid_l2_norm_sq(&u)?);
        rep.row_pass.push(holds);
    }
    rep.checks.push(Check::new(
        "ellipticity sandwich",
        sandwich_ok,
        if sandwich_ok {
            format!("λ={lam}, Λ={cap_lam} hold termwise at every stage")
        } else {
            sandwich_witness
        },
    ));
    if cfg.i > 2 {
        let a = truncation_constant(cfg.i, &kernel, 0.0)?;
        let norms = rep.column_values("l2_norm_sq").unwrap().to_vec();
        let worst = rep
            .values
            .iter()
            .zip(&norms)
            .map(|(e, m)| e / (a * m).max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        rep.checks.push(Check::new(
            "bounded-kernel estimate",
            worst <= 1.0 + 1e-12,
            format!("max E / (a_i ‖u‖²) = {worst}"),
        ));
    }
    if let Some((target, tag)) = continuum_target(cfg, &f)? {
        rep.target = Some(target);
        rep.target_source = tag;
        let errors: Vec<f64> = rep.values.iter().map(|v| (v - target).abs()).collect();
        let last = *errors.last().unwrap();
        let bound = cfg.tol * target.abs();
        rep.checks.push(Check::new(
            "final term within tolerance of target",
            last <= bound,
            format!("|E - target| = {last:e}, allowed {bound:e}"),
        ));
        if let Some(from) = cfg.monotone_from {
            let tail: Vec<f64> = rep
                .grid
                .iter()
                .zip(&errors)
                .filter(|(g, _)| **g >= from as u64)
                .map(|(_, e)| *e)
                .collect();
            rep.checks.push(Check::new(
                "error monotone decreasing",
                target == 0.0 || strictly_decreasing(&tail),
                format!("errors from n={from}: {tail:?}"),
            ));
        }
    }
    Ok(rep.finish())
}

/// `E_i^{(n)}(f|_{V_i^{(n)}})` over the stage range.
pub fn finite_energy_limit(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    let f = cfg.function()?;
    energy_sequence(cfg, "finite-energy limit", |n| restrict(cfg.i, n, &f))
}

/// `E_i^{(n)}(Avg_i^{(n)} f)` over the stage range.
pub fn density_limit(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    let f = cfg.function()?;
    energy_sequence(cfg, "density limit", |n| avg(cfg.i, n, &f))
}

/// `|E^{(n)}(f|) - E^{(n)}(Avg f)|` with both energies as columns.
pub fn equivalence_gap(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let f = cfg.function()?;
    let kernel = cfg.kernel_spec();
    let mut rep = ConvergenceReport::new("equivalence gap", "n", cfg.tol);
    for n in cfg.stages() {
        check_pair_cap(cfg.i, n, cfg.cap)?;
        let er = kernel_energy(
            cfg.i,
            n,
            &kernel,
            &restrict(cfg.i, n, &f)?,
            0.0,
            cfg.convention,
        )?
        .value;
        let ea = kernel_energy(cfg.i, n, &kernel, &avg(cfg.i, n, &f)?, 0.0, cfg.convention)?.value;
        let gap = (er - ea).abs();
        rep.grid.push(n as u64);
        rep.values.push(gap);
        rep.column("restricted_energy").push(er);
        rep.column("averaged_energy").push(ea);
        rep.row_pass.push(gap <= cfg.tol * er.abs() || gap == 0.0);
    }
    rep.target = Some(0.0);
    rep.target_source = "domains coincide on the dense class".into();
    let last = *rep.values.last().unwrap();
    let energy = *rep
        .column_values("restricted_energy")
        .unwrap()
        .last()
        .unwrap();
    rep.checks.push(Check::new(
        "final gap relative to energy",
        last <= cfg.tol * energy.abs() || last == 0.0,
        format!("gap {last:e}, energy {energy:e}, tol {}", cfg.tol),
    ));
    if let Some(from) = cfg.monotone_from {
        let tail: Vec<f64> = rep
            .grid
            .iter()
            .zip(&rep.values)
            .filter(|(g, _)| **g >= from as u64)
            .map(|(_, v)| *v)
            .collect();
        let ok = tail.iter().all(|&v| v == 0.0) || strictly_decreasing(&tail);
        rep.checks.push(Check::new(
            "gap decreasing",
            ok,
            format!("gaps from n={from}: {tail:?}"),
        ));
    }
    Ok(rep.finish())
}

/// Deterministic noise in `[-1, 1]` for a stage.
fn noise(seed: u64, n: u32, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((n as u64) << 32));
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Recovery sequence `u_n = Avg f`: checks the limsup inequality against the
/// continuum target and `Ext u_n → f` in `L²`; also runs a liminf probe on
/// `Avg f + 2^{-n} ξ_n` with bounded noise `ξ_n`.
pub fn gamma_limsup_probe(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let f = cfg.function()?;
    let kernel = cfg.kernel_spec();
    let mut rep = ConvergenceReport::new("gamma limsup probe", "n", cfg.tol);
    for n in cfg.stages() {
        check_pair_cap(cfg.i, n, cfg.cap)?;
        let u = avg(cfg.i, n, &f)?;
        let e = kernel_energy(cfg.i, n, &kernel, &u, 0.0, cfg.convention)?.value;
        let dist = l2_distance_sq(cfg.i, &ext(cfg.i, n, &u)?, &f)?;
        let damp = 2f64.powi(-(n as i32));
        let xi = noise(cfg.seed, n, u.len());
        let v = GridFunction::new(
            cfg.i,
            n,
            u.values()
                .iter()
                .zip(&xi)
                .map(|(a, b)| a + damp * b)
                .collect(),
        )?;
        let ev = kernel_energy(cfg.i, n, &kernel, &v, 0.0, cfg.convention)?.value;
        rep.grid.push(n as u64);
        rep.values.push(e);
        rep.column("l2_distance_sq").push(dist);
        rep.column("perturbed_energy").push(ev);
        rep.row_pass.push(true);
    }
    let dists = rep.column_values("l2_distance_sq").unwrap().to_vec();
    let last_dist = *dists.last().unwrap();
    rep.checks.push(Check::new(
        "Ext u_n → f in L²",
        (strictly_decreasing(&dists) || dists.iter().all(|&d| d == 0.0)) && last_dist <= cfg.tol,
        format!("‖Ext u_n - f‖² = {dists:?}"),
    ));
    if let Some((target, tag)) = continuum_target(cfg, &f)? {
        rep.target = Some(target);
        rep.target_source = tag;
        let tail = &rep.values[rep.values.len().saturating_sub(3)..];
        let limsup = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rep.checks.push(Check::new(
            "limsup E(u_n) ≤ E(f)",
            limsup <= target * (1.0 + cfg.tol) + cfg.tol * 1e-3,
            format!("tail max {limsup}, target {target}"),
        ));
        let pert = rep.column_values("perturbed_energy").unwrap();
        let ptail = &pert[pert.len().saturating_sub(3)..];
        let liminf = ptail.iter().copied().fold(f64::INFINITY, f64::min);
        rep.checks.push(Check::new(
            "liminf probe on perturbed recovery sequence",
            liminf >= target * (1.0 - cfg.tol),
            format!("tail min {liminf}, target {target}"),
        ));
        for (k, v) in rep.values.iter().enumerate() {
            rep.row_pass[k] = *v <= target * (1.0 + cfg.tol) + cfg.tol * 1e-3;
        }
    }
    Ok(rep.finish())
}

/// Random grid function with values in `[-1, 1]`.
pub fn random_grid(i: u64, n: u32, seed: u64) -> Result<GridFunction> {
    let len = crate::geometry::node_count(i, n)? as usize;
    GridFunction::new(i, n, noise(seed, n, len))
}

/// `c = min{6s(1-2s)/8, 2^{-1-2s}}`.
pub fn compactness_constant(s: f64) -> f64 {
    (6.0 * s * (1.0 - 2.0 * s) / 8.0).min(2f64.powf(-1.0 - 2.0 * s))
}

/// One side of the compactness inequality `E_1^{(n)}(u) ≥ c λ [Ext u]²_{H^s}`.
pub fn compactness_sides(n: u32, kernel: &KernelSpec, u: &GridFunction) -> Result<(f64, f64)> {
    let lhs = kernel_energy(1, n, kernel, u, 0.0, Convention::OrderedKernelSum)?.value;
    let semi = gagliardo_seminorm(&ext(1, n, u)?, kernel.s, (0.0, 1.0), (0.0, 1.0), 1e-12)?;
    Ok((
        lhs,
        compactness_constant(kernel.s) * kernel.lambda_i(1) * semi,
    ))
}

/// Checks the compactness lower bound for `samples` random functions per stage.
/// Each row holds the smallest ratio `E / (c λ [Ext u]²)` seen at that stage.
pub fn compactness_lower_bound(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    if cfg.i != 1 || cfg.s >= 0.5 {
        return Err(Error::Config(
            "the compactness bound needs i = 1 and s < 1/2".into(),
        ));
    }
    let kernel = cfg.kernel_spec();
    let mut rep = ConvergenceReport::new("compactness lower bound", "n", cfg.tol);
    let mut violations = 0usize;
    let mut witness = String::new();
    for n in cfg.stages() {
        check_pair_cap(1, n, cfg.cap)?;
        let results = (0..cfg.samples as u64)
            .into_par_iter()
            .map(|k| {
                let u = random_grid(1, n, cfg.seed.wrapping_mul(1_000_003).wrapping_add(k))?;
                let (lhs, rhs) = compactness_sides(n, &kernel, &u)?;
                Ok((k, lhs, rhs))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut min_ratio = f64::INFINITY;
        let mut stage_ok = true;
        for (k, lhs, rhs) in results {
            if rhs > 0.0 {
                min_ratio = min_ratio.min(lhs / rhs);
            }
            if lhs < rhs {
                stage_ok = false;
                violations += 1;
                if witness.is_empty() {
                    witness = format!("n={n}, sample {k}: E={lhs}, bound={rhs}");
                }
            }
        }
        rep.grid.push(n as u64);
        rep.values.push(min_ratio);
        rep.row_pass.push(stage_ok);
    }
    rep.target = Some(1.0);
    rep.target_source = format!("ratio ≥ 1 with c = {}", compactness_constant(cfg.s));
    rep.checks.push(Check::new(
        "zero violations",
        violations == 0,
        if violations == 0 {
            format!("{} samples per stage", cfg.samples)
        } else {
            format!("{violations} violations; first {witness}")
        },
    ));
    Ok(rep.finish())
}

/// `κ_i = Σ_{V_- × V_+} j μ μ` for the kernel-driven network.
pub fn kappa(i: u64, n: u32, kernel: &KernelSpec) -> Result<f64> {
    let nodes = node_set(i, n)?;
    let u = GridFunction::new(
        i,
        n,
        (0..nodes.len())
            .map(|k| if k < nodes.left().end { 0.0 } else { 1.0 })
            .collect(),
    )?;
    Ok(kernel_energy(i, n, kernel, &u, 0.0, Convention::PathSum)?.value)
}

/// `E_i^{(n)}(f|)` over `i_values` at the fixed stage `n_max`, against
/// `2|f(0) - f(1)|²`, with `κ_i` as a column.
pub fn i_limit_fixed_n(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let f = cfg.function()?;
    let kernel = cfg.kernel_spec();
    let n = cfg.n_max;
    let target = 2.0 * (f.eval(0.0) - f.eval(1.0)).powi(2);
    let mut rep = ConvergenceReport::new("i-limit at fixed n", "i", cfg.tol);
    for &i in &cfg.i_values {
        check_pair_cap(i, n, cfg.cap)?;
        let e = kernel_energy(i, n, &kernel, &restrict(i, n, &f)?, 0.0, cfg.convention)?.value;
        rep.grid.push(i);
        rep.values.push(e);
        rep.column("kappa").push(kappa(i, n, &kernel)?);
        rep.row_pass.push((e - target).abs() <= cfg.tol);
    }
    rep.target = Some(target);
    rep.target_source = "2|f(0) - f(1)|^2".into();
    let errors: Vec<f64> = rep.values.iter().map(|v| (v - target).abs()).collect();
    let last = *errors.last().unwrap();
    rep.checks.push(Check::new(
        "final term within tolerance of target",
        last <= cfg.tol,
        format!("|E - target| = {last:e}"),
    ));
    rep.checks.push(Check::new(
        "error monotone in i",
        target == 0.0 || strictly_decreasing(&errors),
        format!("errors {errors:?}"),
    ));
    let kap = *rep.column_values("kappa").unwrap().last().unwrap();
    rep.checks.push(Check::new(
        "κ_i → 1",
        (kap - 1.0).abs() <= cfg.tol,
        format!("κ = {kap}"),
    ));
    Ok(rep.finish())
}

/// `2 scale(i) ∫_0^{1/i} ∫_{1-1/i}^1 |f(x)-f(y)|² (y-x)^{-1-2s}` over `i_values`.
pub fn i_limit_continuum(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let f = cfg.function()?;
    let target = 2.0 * (f.eval(0.0) - f.eval(1.0)).powi(2);
    let mut rep = ConvergenceReport::new("i-limit of the continuum form", "i", cfg.tol);
    for &i in &cfg.i_values {
        if i < 3 {
            return Err(Error::Config("the continuum i-limit needs i ≥ 3".into()));
        }
        let h = 1.0 / i as f64;
        let g = gagliardo_seminorm(&f, cfg.s, (0.0, h), (1.0 - h, 1.0), cfg.quad_tol)?;
        let v = 2.0 * cfg.scale.factor(i) * g;
        rep.grid.push(i);
        rep.values.push(v);
        rep.row_pass.push((v - target).abs() <= cfg.tol);
    }
    rep.target = Some(target);
    rep.target_source = "2|f(0) - f(1)|^2".into();
    let last = (rep.values.last().unwrap() - target).abs();
    rep.checks.push(Check::new(
        "final term within tolerance of target",
        last <= cfg.tol,
        format!("|E - target| = {last:e}"),
    ));
    Ok(rep.finish())
}

/// Nearest-neighbour network on `V_1^{(n)}` with resistance `r^n` per link.
pub fn local_network(n: u32, r: f64) -> Result<ConductanceNetwork> {
    let nodes = node_set(1, n)?;
    let labels = (0..nodes.len()).map(|k| nodes.label(k)).collect();
    let mut cn = ConductanceNetwork::new(labels);
    let c = r.powi(-(n as i32));
    for k in 0..nodes.len() - 1 {
        cn.add_conductance(k, k + 1, c)?;
    }
    Ok(cn)
}

/// Ordered energy `2 Σ c (Δu)²` of the local network.
pub fn local_energy(n: u32, r: f64, f: &ContinuumFunction) -> Result<f64> {
    let u = restrict(1, n, f)?;
    let c = r.powi(-(n as i32));
    let terms: Vec<f64> = u
        .values()
        .windows(2)
        .map(|w| c * (w[1] - w[0]) * (w[1] - w[0]))
        .collect();
    Ok(2.0 * crate::sum::pairwise_sum(&terms))
}

/// `∫_0^1 |f'|²` for polynomials and sines.
pub fn dirichlet_integral(f: &ContinuumFunction) -> Option<f64> {
    match f {
        ContinuumFunction::Polynomial(c) => {
            let d: Vec<f64> = c
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, ck)| k as f64 * ck)
                .collect();
            let mut sq = vec![0.0; (2 * d.len()).saturating_sub(1)];
            for (a, da) in d.iter().enumerate() {
                for (b, db) in d.iter().enumerate() {
                    sq[a + b] += da * db;
                }
            }
            Some(sq.iter().enumerate().map(|(k, v)| v / (k + 1) as f64).sum())
        }
        ContinuumFunction::Sine {
            amplitude,
            frequency,
            phase,
        } => {
            let (a, w, p) = (*amplitude, *frequency, *phase);
            if w == 0.0 {
                return Some(0.0);
            }
            // ∫ a²w² cos²(wx+p) = a²w² (1/2 + (sin(2w+2p) - sin 2p) / (4w))
            Some(a * a * w * w * (0.5 + ((2.0 * w + 2.0 * p).sin() - (2.0 * p).sin()) / (4.0 * w)))
        }
        _ => None,
    }
}

/// Local baseline energies against `2 ∫|f'|²`, with the consecutive-stage
/// equivalence residual as a column (zero beyond `residual_max_n`).
pub fn local_baseline(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let f = cfg.function()?;
    let mut rep = ConvergenceReport::new("local baseline", "n", cfg.tol);
    let target = dirichlet_integral(&f).map(|d| 2.0 * d);
    let mut worst_residual = 0.0f64;
    for n in cfg.stages() {
        let e = local_energy(n, cfg.r, &f)?;
        let residual = if n < cfg.residual_max_n {
            let coarse = local_network(n, cfg.r)?;
            let fine = local_network(n + 1, cfg.r)?;
            equivalence_residual(&fine, &coarse)?
        } else {
            0.0
        };
        worst_residual = worst_residual.max(residual);
        rep.grid.push(n as u64);
        rep.values.push(e);
        rep.column("equivalence_residual").push(residual);
        rep.row_pass
            .push(target.is_none_or(|t| (e - t).abs() <= cfg.tol * t.abs().max(1.0)));
    }
    rep.checks.push(Check::new(
        "consecutive stages electrically equivalent",
        worst_residual <= 1e-12,
        format!(
            "max residual {worst_residual:e} for n < {}",
            cfg.residual_max_n
        ),
    ));
    if let Some(t) = target {
        rep.target = Some(t);
        rep.target_source = "2 ∫|f'|²".into();
        let last = (rep.values.last().unwrap() - t).abs();
        rep.checks.push(Check::new(
            "final term within tolerance of target",
            last <= cfg.tol * t.abs().max(1.0),
            format!("|E - target| = {last:e}"),
        ));
    }
    Ok(rep.finish())
}

/// Worst-case ratios of the per-stage resistance bounds on one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsStage {
    /// `max R / δ` over wires (must be ≤ 1).
    pub direct_wire: f64,
    /// `max NW / R` over wires (must be ≤ 1).
    pub nash_williams: f64,
    /// `max R / ((2^{n+1})² |x-y|^{1+2s} / λ)` over pairs, `i = 1` only.
    pub euclidean: Option<f64>,
    /// `max R(x,y) / min_z (δ(x,z) + δ(z,y))` over same-side pairs, `i > 1` only.
    pub bridge: Option<f64>,
    pub resistance_0_1: f64,
    pub violations: usize,
    pub witness: Option<String>,
}

pub fn resistance_bounds_stage(cfg: &ExperimentConfig, n: u32) -> Result<BoundsStage> {
    let i = cfg.i;
    let source = match &cfg.weights {
        Some(w) => Source::Weights(w.clone()),
        None => Source::Kernel(cfg.kernel_spec()),
    };
    let net = build_network_capped(i, n, &source, cfg.cap)?;
    if net.node_count() > cfg.solver_cap {
        return Err(Error::ResourceCap {
            what: "dense resistance solve",
            requested: net.node_count() as u128,
            cap: cfg.solver_cap as u128,
        });
    }
    let cn = net.to_conductance_network();
    let r = ResistanceSolver::for_conductances(&cn)?.all_pairs();
    let slack = 1e-12;
    let mut out = BoundsStage {
        direct_wire: 0.0,
        nash_williams: 0.0,
        euclidean: None,
        bridge: None,
        resistance_0_1: r[(0, net.node_count() - 1)],
        violations: 0,
        witness: None,
    };
    let note = |out: &mut BoundsStage, what: &str, x: usize, y: usize, ratio: f64| {
        if ratio > 1.0 + slack {
            out.violations += 1;
            if out.witness.is_none() {
                out.witness = Some(format!(
                    "{what} at ({}, {}): ratio {ratio}",
                    net.label(x),
                    net.label(y)
                ));
            }
        }
    };
    for w in net.wires() {
        let (x, y) = (w.x as usize, w.y as usize);
        let rxy = r[(x, y)];
        let a = rxy / w.delta;
        out.direct_wire = out.direct_wire.max(a);
        note(&mut out, "R ≤ δ", x, y, a);
        let b = nash_williams_bound(&cn, x, y) / rxy;
        out.nash_williams = out.nash_williams.max(b);
        note(&mut out, "Nash-Williams", x, y, b);
    }
    if cfg.weights.is_none() && i == 1 {
        let lam = cfg.kernel_spec().lambda_i(1);
        let pref = 4f64.powi(n as i32 + 1) / lam;
        let mut worst = 0.0f64;
        for w in net.wires() {
            let (x, y) = (w.x as usize, w.y as usize);
            let c = r[(x, y)] / (pref * net.length(w).powf(1.0 + 2.0 * cfg.s));
            worst = worst.max(c);
            note(&mut out, "Euclidean bound", x, y, c);
        }
        out.euclidean = Some(worst);
    }
    if i > 1 {
        let nodes = net.nodes();
        let mut worst = 0.0f64;
        let halves = [nodes.left(), nodes.right()];
        for (side, other) in [(0usize, 1usize), (1, 0)] {
            for x in halves[side].clone() {
                for y in halves[side].clone().filter(|&y| y > x) {
                    let best = halves[other]
                        .clone()
                        .map(|z| {
                            net.wire_between(x, z).unwrap().delta
                                + net.wire_between(z, y).unwrap().delta
                        })
                        .fold(f64::INFINITY, f64::min);
                    let c = r[(x, y)] / best;
                    worst = worst.max(c);
                    note(&mut out, "bridge bound", x, y, c);
                }
            }
        }
        out.bridge = Some(worst);
    }
    Ok(out)
}

/// `2 Σ_{k=0}^{n} r_{1,1}^k`, reported as a diagnostic next to `R(0,1)`.
pub fn geometric_sum_bound(w: &WeightAssignment, n: u32) -> f64 {
    let r = w.weight_of(1, 1);
    2.0 * (0..=n).map(|k| r.powi(k as i32)).sum::<f64>()
}

pub fn resistance_bounds_suite(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let mut rep = ConvergenceReport::new("resistance bounds", "n", cfg.tol);
    let mut violations = 0usize;
    let mut witness = None;
    let stages = cfg
        .stages()
        .collect::<Vec<u32>>()
        .into_par_iter()
        .map(|n| resistance_bounds_stage(cfg, n).map(|b| (n, b)))
        .collect::<Result<Vec<_>>>()?;
    for (n, b) in stages {
        rep.grid.push(n as u64);
        rep.values.push(b.resistance_0_1);
        rep.column("max_R_over_delta").push(b.direct_wire);
        rep.column("max_NW_over_R").push(b.nash_williams);
        rep.column("max_euclidean_ratio")
            .push(b.euclidean.unwrap_or(f64::NAN));
        rep.column("max_bridge_ratio")
            .push(b.bridge.unwrap_or(f64::NAN));
        if let (Some(w), 1) = (&cfg.weights, cfg.i) {
            rep.column("geometric_sum_diagnostic")
                .push(geometric_sum_bound(w, n));
        }
        rep.row_pass.push(b.violations == 0);
        violations += b.violations;
        if witness.is_none() {
            witness = b.witness;
        }
    }
    rep.target_source = "per-stage bounds".into();
    rep.checks.push(Check::new(
        "zero bound violations",
        violations == 0,
        witness.unwrap_or_else(|| "all queried pairs satisfy every bound".into()),
    ));
    Ok(rep.finish())
}

/// Samples the auxiliary assumption
/// `E^{(n)}(Avg^{(n)} Ext^{(k)} u)^{1/2} ≤ E^{(k)}(u)^{1/2}` for `n ≥ k`.
/// Each row (stage `n`) holds the largest excess over sampled `k ≤ n` and `u`.
/// Reported only; nothing is asserted.
pub fn extra_assumption_probe(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let kernel = cfg.kernel_spec();
    let mut rep = ConvergenceReport::new("auxiliary assumption probe", "n", cfg.tol);
    let samples = cfg.samples.min(10) as u64;
    for n in cfg.stages() {
        check_pair_cap(cfg.i, n, cfg.cap)?;
        let mut worst = f64::NEG_INFINITY;
        for k in cfg.n_min..=n {
            for t in 0..samples {
                let u = random_grid(cfg.i, k, cfg.seed.wrapping_add(31 * t + k as u64))?;
                let ek = kernel_energy(cfg.i, k, &kernel, &u, 0.0, cfg.convention)?.value;
                let lifted = avg(cfg.i, n, &ext(cfg.i, k, &u)?)?;
                let en = kernel_energy(cfg.i, n, &kernel, &lifted, 0.0, cfg.convention)?.value;
                worst = worst.max(en.sqrt() - ek.sqrt());
            }
        }
        rep.grid.push(n as u64);
        rep.values.push(worst);
        rep.row_pass.push(true);
    }
    rep.target_source = "diagnostic: excess of E^(n)(Avg Ext u)^(1/2) over E^(k)(u)^(1/2)".into();
    Ok(rep.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::parse(text).unwrap()
    }

    #[test]
    fn config_round_trip_and_errors() {
        let c = cfg("i = 3\nn_max = 4 # comment\nkernel = perturbed\nscale = i2\nsource = weights\nweights = random:5,0.5,2\n");
        assert_eq!(c.i, 3);
        assert_eq!(c.scale, Scale::ISquared);
        assert!(matches!(
            c.weights,
            Some(WeightAssignment::Random { seed: 5, .. })
        ));
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        for bad in [
            "s = 1.5",
            "n_min = 5\nn_max = 2",
            "bogus = 1",
            "i = x",
            "function = nope",
            "samples = 0",
            "no equals",
        ] {
            assert!(
                matches!(ExperimentConfig::parse(bad), Err(Error::Config(_))),
                "{bad}"
            );
        }
        assert_eq!(CONFIG_KEYS.len(), c.to_text().lines().count());
    }

    #[test]
    fn aitken_recovers_geometric_limits() {
        let xs: Vec<f64> = (0..6).map(|k| 3.0 + 0.5f64.powi(k)).collect();
        assert!((aitken(&xs).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(aitken(&[1.0, 2.0]), None);
    }

    #[test]
    fn finite_energy_and_density_share_the_limit() {
        let c = cfg("n_min = 4\nn_max = 9\nmonotone_from = 5");
        let fin = finite_energy_limit(&c).unwrap();
        let den = density_limit(&c).unwrap();
        assert!(fin.passed(), "{:?}", fin.checks);
        assert!(den.passed(), "{:?}", den.checks);
        assert!((fin.target.unwrap() - 8.0 / 15.0).abs() < 1e-15);
        assert!((fin.extrapolated.unwrap() - den.extrapolated.unwrap()).abs() <= 2.0 * c.tol);
        assert_eq!(fin.values.len(), fin.grid.len());
    }

    #[test]
    fn constants_give_zero_everywhere() {
        let c = cfg("function = const:2\nn_max = 4");
        assert!(finite_energy_limit(&c)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
        assert!(equivalence_gap(&c)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
        let g = gamma_limsup_probe(&c).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
        let il = i_limit_fixed_n(&cfg("function = const:2\nn_max = 2\nscale = i2")).unwrap();
        assert!(il.values.iter().all(|&v| v == 0.0));
        let loc = local_baseline(&cfg("function = const:2\nn_max = 4")).unwrap();
        assert!(loc.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bounded_kernel_estimate_for_i3() {
        let c = cfg("i = 3\nn_max = 5\nfunction = sin:4");
        let rep = finite_energy_limit(&c).unwrap();
        let check = rep
            .checks
            .iter()
            .find(|c| c.name == "bounded-kernel estimate")
            .unwrap();
        assert!(check.passed, "{check:?}");
    }

    #[test]
    fn holder_sample_for_i2_shares_the_limit() {
        let c = cfg("i = 2\nn_min = 6\nn_max = 10\nfunction = sqrt");
        let fin = finite_energy_limit(&c).unwrap();
        let den = density_limit(&c).unwrap();
        let (a, b) = (fin.last().unwrap(), den.last().unwrap());
        assert!((a - b).abs() <= 0.02 * a, "{a} vs {b}");
    }

    #[test]
    fn gap_for_bounded_function_at_i5() {
        let c = cfg("i = 5\nn_min = 2\nn_max = 7\nfunction = step:0.1\nmonotone_from = 2");
        let rep = equivalence_gap(&c).unwrap();
        assert!(rep.values.iter().all(|v| v.is_finite()));
        assert!(rep.values.last().unwrap() <= &rep.values[0]);
    }

    #[test]
    fn step_recovery_sequence_matches_closed_form() {
        let c = cfg("n_min = 4\nn_max = 10\nfunction = step:0.5");
        let rep = gamma_limsup_probe(&c).unwrap();
        let oracle = 2.0 * (8.0 * 0.5f64.sqrt() - 4.0);
        assert!((rep.target.unwrap() - oracle).abs() < 1e-6);
        let limsup = rep
            .checks
            .iter()
            .find(|c| c.name.starts_with("limsup"))
            .unwrap();
        assert!(limsup.passed, "{limsup:?}");
        let gaps: Vec<f64> = rep.values.iter().map(|v| oracle - v).collect();
        assert!(
            gaps.iter().all(|&g| g > 0.0) && strictly_decreasing(&gaps),
            "{gaps:?}"
        );
    }

    #[test]
    fn compactness_examples() {
        let rep = compactness_lower_bound(&cfg("n_min = 1\nn_max = 4\nsamples = 10")).unwrap();
        assert!(rep.passed());
        let k = KernelSpec::fractional(0.25);
        let c = GridFunction::constant(1, 3, 1.0).unwrap();
        assert_eq!(compactness_sides(3, &k, &c).unwrap(), (0.0, 0.0));
        let nodes = node_set(1, 3).unwrap();
        let ind = GridFunction::from_fn(&nodes, |x| if x < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let (lhs, rhs) = compactness_sides(3, &k, &ind).unwrap();
        assert!(lhs > rhs && rhs > 0.0, "{lhs} vs {rhs}");
    }

    #[test]
    fn i_limits() {
        let rep = i_limit_fixed_n(&cfg("n_max = 3\nscale = i2")).unwrap();
        assert!(rep.passed(), "{:?}", rep.checks);
        let cont = i_limit_continuum(&cfg("n_max = 3\nscale = i2")).unwrap();
        assert!(cont.passed(), "{:?}", cont.checks);
        let sq = i_limit_continuum(&cfg("scale = i2\nfunction = square")).unwrap();
        assert!((sq.last().unwrap() - 2.0).abs() < 1e-2);
    }

    #[test]
    fn local_baseline_closed_forms() {
        let lin = local_baseline(&cfg("n_max = 6\nresidual_max_n = 4")).unwrap();
        assert!(lin.values.iter().all(|&v| (v - 2.0).abs() < 1e-13));
        assert!(lin.passed());
        for n in 0..=8 {
            let e = local_energy(n, 0.5, &ContinuumFunction::from_id("square").unwrap()).unwrap();
            let oracle = 8.0 / 3.0 - 2.0 / (3.0 * 4f64.powi(n as i32));
            assert!((e - oracle).abs() < 1e-12);
        }
        let off = local_baseline(&cfg("n_max = 3\nr = 0.4\nresidual_max_n = 3")).unwrap();
        assert!(!off.checks[0].passed);
    }

    #[test]
    fn resistance_bounds_hold() {
        let rep = resistance_bounds_suite(&cfg("n_max = 4")).unwrap();
        assert!(rep.passed(), "{:?}", rep.checks);
        assert!((rep.values[0] - 4.0).abs() < 1e-12);
        let rep = resistance_bounds_suite(&cfg("i = 3\nn_max = 3")).unwrap();
        assert!(rep.passed(), "{:?}", rep.checks);
        let rep = resistance_bounds_suite(&cfg(
            "n_max = 3\nsource = weights\nweights = stage1:1,1,1.5",
        ))
        .unwrap();
        assert!(rep.passed());
        assert!(rep.column_values("geometric_sum_diagnostic").is_some());
    }

    #[test]
    fn extra_assumption_probe_runs() {
        let rep = extra_assumption_probe(&cfg("n_min = 1\nn_max = 3\nsamples = 2")).unwrap();
        assert_eq!(rep.values.len(), 3);
        assert!(rep.checks.is_empty());
    }

    #[test]
    fn csv_is_thread_independent() {
        let c = cfg("n_min = 2\nn_max = 7\nkernel = perturbed");
        let run = |t| {
            crate::sum::with_threads(t, || {
                let mut buf = Vec::new();
                finite_energy_limit(&c)
                    .unwrap()
                    .write_csv(&mut buf)
                    .unwrap();
                buf
            })
        };
        let one = run(1);
        assert_eq!(one, run(2));
        assert_eq!(one, run(8));
    }

    #[test]
    fn cap_is_enforced() {
        let c = cfg("n_max = 20\ncap = 1000");
        assert!(matches!(
            finite_energy_limit(&c),
            Err(Error::ResourceCap { .. })
        ));
    }
}
