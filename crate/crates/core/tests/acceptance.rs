//! Acceptance suite. Runs every criterion in sequence, prints one line per
//! criterion and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use nel_core::convergence_lab::{
    compactness_lower_bound, equivalence_gap, finite_energy_limit, i_limit_continuum,
    i_limit_fixed_n, local_baseline, local_energy, random_grid, resistance_bounds_suite,
    sandwich_stage, ConvergenceReport, ExperimentConfig,
};
use nel_core::energy::{
    kernel_moment_streamed, kernel_moment_target, ContinuumFunction, Convention, GdRecursion,
};
use nel_core::geometry::{node_set, phi_path};
use nel_core::index_space::{enumerate_paths, path_count, WeightAssignment, DEFAULT_PATH_CAP};
use nel_core::network::{
    build_network, reduce_to_pair, series_parallel_stage1, solve_matching, star_mesh_eliminate,
    wire_to_path, ConductanceNetwork, KernelSpec, ResistanceSolver, Source,
};
use nel_core::sum::with_threads;
use nel_core::Result;

const RECURSION_REL_TOL: f64 = 1e-12;
const RECURSION_DRAWS: u64 = 50;
const RECURSION_TIME: Duration = Duration::from_secs(5);
const COMBINATORICS_TIME: Duration = Duration::from_secs(10);
const MATCHING_TOL: f64 = 1e-12;
const MATCHING_VIOLATION_MIN: f64 = 1e-6;
const STAR_MESH_TOL: f64 = 1e-9;
const ENERGY_REL_TOL: f64 = 2e-2;
const ENERGY_TIME: Duration = Duration::from_secs(60);
const GAP_REL_TOL: f64 = 1e-2;
const I_LIMIT_TOL: f64 = 1e-2;
const LOCAL_TOL: f64 = 1e-12;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(text).expect("acceptance config")
}

fn failed_checks(rep: &ConvergenceReport) -> String {
    rep.checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ")
}

fn recursion() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for i in 1..=6u64 {
        for n in 1..=6u32 {
            let rec = GdRecursion::new(i, n)?;
            for d in 0..RECURSION_DRAWS {
                let seed = 1000 * i + 100 * n as u64 + d;
                let w = WeightAssignment::Random {
                    seed,
                    lo: 0.25,
                    hi: 4.0,
                };
                let u = random_grid(i, n, seed)?;
                let r = rec.check(&u, &w)?;
                worst = worst.max(r.relative());
                checked += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= RECURSION_REL_TOL && elapsed < RECURSION_TIME,
        format!("{checked} draws, max relative residual {worst:.3e}, {elapsed:.2?}"),
    )
}

fn combinatorics() -> Result<Outcome> {
    let start = Instant::now();
    let mut problems = Vec::new();
    for i in 1..=6u64 {
        for n in 0..=7u32 {
            let expected: u128 = if i == 1 {
                ((1u128 << n) + 1) * (1u128 << n) / 2
            } else {
                1u128 << (2 * n)
            };
            if path_count(i, n)? != expected {
                problems.push(format!("count ({i},{n})"));
            }
            let net = build_network(i, n, &Source::Weights(WeightAssignment::Uniform(1.0)))?;
            if net.wire_count() as u128 != expected {
                problems.push(format!("wires ({i},{n})"));
            }
            let nodes = node_set(i, n)?;
            let mut seen = vec![false; net.wire_count()];
            for p in enumerate_paths(i, n, DEFAULT_PATH_CAP)? {
                let (x, y) = phi_path(&p)?.image_of_unit()?;
                let (ix, iy) = match (nodes.index_of(&x), nodes.index_of(&y)) {
                    (Some(a), Some(b)) => (a.min(b), a.max(b)),
                    _ => {
                        problems.push(format!("endpoint off grid ({i},{n}) {}", p.codes()));
                        continue;
                    }
                };
                match net.wire_index(ix, iy) {
                    Some(k) if !seen[k] => seen[k] = true,
                    _ => problems.push(format!("not injective ({i},{n}) {}", p.codes())),
                }
                if wire_to_path(i, n, &x, &y)? != p {
                    problems.push(format!("inverse ({i},{n}) {}", p.codes()));
                }
            }
            if !seen.iter().all(|&b| b) {
                problems.push(format!("not surjective ({i},{n})"));
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        problems.is_empty() && elapsed < COMBINATORICS_TIME,
        format!(
            "i ≤ 6, n ≤ 7, {} problems{}, {elapsed:.2?}",
            problems.len(),
            problems
                .first()
                .map_or(String::new(), |p| format!(" (first: {p})"))
        ),
    )
}

fn stage1_resistance(i: u64, alpha: f64, beta: f64, gamma: f64) -> Result<f64> {
    let w = WeightAssignment::Stage1 { alpha, beta, gamma };
    let net = build_network(i, 1, &Source::Weights(w))?;
    ResistanceSolver::for_network(&net)?.resistance(0, net.node_count() - 1)
}

fn matching() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut weakest_violation = f64::INFINITY;
    for draw in 0..20u64 {
        // i = 1 has no edge to 2i-2, so its α is zero.
        let i = 1 + draw % 6;
        let alpha = if i == 1 {
            0.0
        } else {
            rng.random_range(0.1..3.0)
        };
        let beta = rng.random_range(0.5..3.0);
        let gamma = solve_matching(alpha + 2.0 * beta)?;
        let sp = series_parallel_stage1(alpha, beta, gamma);
        let r = stage1_resistance(i, alpha, beta, gamma)?;
        worst = worst.max((r - 1.0).abs()).max((sp - 1.0).abs());
        let off = gamma * rng.random_range(1.01..2.0);
        let bad = stage1_resistance(i, alpha, beta, off)?;
        weakest_violation = weakest_violation.min((bad - 1.0).abs());
    }
    outcome(
        worst <= MATCHING_TOL && weakest_violation > MATCHING_VIOLATION_MIN,
        format!("max |R - 1| = {worst:.3e}, min violator residual {weakest_violation:.3e}"),
    )
}

fn random_connected(rng: &mut ChaCha8Rng, nodes: usize) -> Result<ConductanceNetwork> {
    let mut cn = ConductanceNetwork::new((0..nodes).map(|k| format!("v{k}")).collect());
    for k in 1..nodes {
        let parent = rng.random_range(0..k);
        cn.add_conductance(parent, k, rng.random_range(0.1..10.0))?;
    }
    let extra = rng.random_range(0..=2 * nodes);
    for _ in 0..extra {
        let (x, y) = (rng.random_range(0..nodes), rng.random_range(0..nodes));
        if x != y {
            cn.add_conductance(x, y, rng.random_range(0.1..10.0))?;
        }
    }
    Ok(cn)
}

fn max_label_deviation(
    reference: &DMatrix<f64>,
    labels: &[String],
    reduced: &ConductanceNetwork,
) -> Result<f64> {
    let r = ResistanceSolver::for_conductances(reduced)?.all_pairs();
    let index: Vec<usize> = reduced
        .labels()
        .iter()
        .map(|l| labels.iter().position(|m| m == l).unwrap())
        .collect();
    let mut worst = 0.0f64;
    for a in 0..index.len() {
        for b in a + 1..index.len() {
            worst = worst.max((r[(a, b)] - reference[(index[a], index[b])]).abs());
        }
    }
    Ok(worst)
}

fn star_mesh() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_pair = 0.0f64;
    let mut worst_step = 0.0f64;
    let mut pairs = 0usize;
    for _ in 0..100 {
        let nodes = rng.random_range(2..=50);
        let cn = random_connected(&mut rng, nodes)?;
        let direct = ResistanceSolver::for_conductances(&cn)?.all_pairs();
        let pair_list: Vec<(usize, usize)> = (0..nodes)
            .flat_map(|x| (x + 1..nodes).map(move |y| (x, y)))
            .collect();
        let deviations = pair_list
            .par_iter()
            .map(|&(x, y)| Ok((reduce_to_pair(&cn, x, y)? - direct[(x, y)]).abs()))
            .collect::<Result<Vec<f64>>>()?;
        pairs += deviations.len();
        worst_pair = deviations.into_iter().fold(worst_pair, f64::max);
        let mut cur = cn.clone();
        while cur.node_count() > 2 {
            let victim = rng.random_range(0..cur.node_count());
            cur = star_mesh_eliminate(&cur, victim)?;
            worst_step = worst_step.max(max_label_deviation(&direct, cn.labels(), &cur)?);
        }
    }
    outcome(
        worst_pair <= STAR_MESH_TOL && worst_step <= STAR_MESH_TOL,
        format!(
            "{pairs} pairs, full reduction {worst_pair:.3e}, single eliminations {worst_step:.3e}"
        ),
    )
}

fn energy_convergence() -> Result<Outcome> {
    let start = Instant::now();
    let c = cfg(&format!(
        "i = 1\ns = 0.25\nfunction = linear\nconvention = ordered-kernel-sum\n\
         n_min = 4\nn_max = 12\nmonotone_from = 6\ntol = {ENERGY_REL_TOL}"
    ));
    let rep = finite_energy_limit(&c)?;
    let elapsed = start.elapsed();
    let target = 8.0 / 15.0;
    let last = rep.last().unwrap();
    let target_ok = (rep.target.unwrap() - target).abs() < 1e-15;
    outcome(
        rep.passed() && target_ok && elapsed < ENERGY_TIME,
        format!(
            "E^(12) = {last:.10}, |E - 8/15| = {:.3e}, {elapsed:.2?}{}",
            (last - target).abs(),
            if rep.passed() {
                String::new()
            } else {
                format!(", {}", failed_checks(&rep))
            }
        ),
    )
}

fn sandwich() -> Result<Outcome> {
    let kernel = KernelSpec::perturbed(0.25, 0.5, 7.0);
    let constants_ok = kernel.lambda == 0.5 && kernel.cap_lambda == 1.5;
    let mut failures = Vec::new();
    let mut stages = 0usize;
    for i in [1u64, 2, 5] {
        for f in ["linear", "sin:5", "step:0.3"] {
            let c = cfg(&format!(
                "i = {i}\ns = 0.25\nkernel = perturbed\namplitude = 0.5\nfrequency = 7\n\
                 function = {f}\nn_min = 0\nn_max = 10"
            ));
            let rep = finite_energy_limit(&c)?;
            stages += rep.grid.len();
            let check = rep
                .checks
                .iter()
                .find(|c| c.name == "ellipticity sandwich")
                .unwrap();
            if !check.passed {
                failures.push(format!("i={i} f={f}: {}", check.detail));
            }
        }
        for n in 0..=10u32 {
            let u = random_grid(i, n, 600 + n as u64)?;
            let st = sandwich_stage(i, n, &kernel, &u, Convention::OrderedKernelSum)?;
            stages += 1;
            let slack = 1e-12 * st.fractional;
            if st.energy < 0.5 * st.fractional - slack || st.energy > 1.5 * st.fractional + slack {
                failures.push(format!(
                    "i={i} n={n} random u: E={}, G={}",
                    st.energy, st.fractional
                ));
            }
        }
    }
    outcome(
        constants_ok && failures.is_empty(),
        format!(
            "{stages} stage checks, {} failures{}",
            failures.len(),
            failures
                .first()
                .map_or(String::new(), |f| format!(" (first: {f})"))
        ),
    )
}

fn gap() -> Result<Outcome> {
    let c = cfg(&format!(
        "i = 1\ns = 0.25\nfunction = linear\nn_min = 5\nn_max = 10\nmonotone_from = 5\ntol = {GAP_REL_TOL}"
    ));
    let rep = equivalence_gap(&c)?;
    let energy = rep
        .column_values("restricted_energy")
        .unwrap()
        .last()
        .copied()
        .unwrap();
    let last = rep.last().unwrap();
    outcome(
        rep.passed(),
        format!(
            "gap^(10) = {last:.3e} = {:.3e} of E{}",
            last / energy,
            if rep.passed() {
                String::new()
            } else {
                format!(", {}", failed_checks(&rep))
            }
        ),
    )
}

fn compactness() -> Result<Outcome> {
    let rep = compactness_lower_bound(&cfg(
        "i = 1\ns = 0.25\nn_min = 0\nn_max = 7\nsamples = 100\nseed = 8",
    ))?;
    let min_ratio = rep.values.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        rep.passed(),
        format!(
            "{} stages × 100 samples, min E/(cλ[Ext u]²) = {min_ratio:.4}; {}",
            rep.grid.len(),
            rep.checks[0].detail
        ),
    )
}

fn moments() -> Result<Outcome> {
    let kernel = KernelSpec::fractional(0.25);
    let mut details = Vec::new();
    let mut ok = true;
    for i in [1u64, 2] {
        let target = kernel_moment_target(i, &kernel, 1e-12)?;
        let seq = (0..=10u32)
            .map(|n| kernel_moment_streamed(i, n, &kernel))
            .collect::<Result<Vec<f64>>>()?;
        let monotone = seq.windows(2).all(|w| w[1] >= w[0]);
        let bounded = seq.iter().all(|&m| m <= target);
        ok &= monotone && bounded;
        details.push(format!(
            "i={i}: M^(10) = {:.6} ≤ {target:.6}, monotone {monotone}, bounded {bounded}",
            seq[10]
        ));
    }
    outcome(ok, details.join("; "))
}

fn i_limit() -> Result<Outcome> {
    let c = cfg(&format!(
        "s = 0.25\nscale = i2\nfunction = linear\nn_max = 3\ni_values = 10,100,1000\ntol = {I_LIMIT_TOL}\nquad_tol = 1e-12"
    ));
    let rep = i_limit_fixed_n(&c)?;
    let cont = i_limit_continuum(&c)?;
    let (e, ec) = (rep.last().unwrap(), cont.last().unwrap());
    let kappa = rep.column_values("kappa").unwrap().last().copied().unwrap();
    let agree = (e - ec).abs() <= I_LIMIT_TOL;
    outcome(
        rep.passed() && cont.passed() && agree,
        format!(
            "E_1000 = {e:.6}, κ_1000 = {kappa:.6}, continuum {ec:.6}, values {:?}{}",
            rep.values,
            if rep.passed() {
                String::new()
            } else {
                format!(", {}", failed_checks(&rep))
            }
        ),
    )
}

fn local() -> Result<Outcome> {
    let lin = ContinuumFunction::linear();
    let sq = ContinuumFunction::from_id("square")?;
    let mut exact = true;
    let mut worst_sq = 0.0f64;
    for n in 0..=16u32 {
        exact &= local_energy(n, 0.5, &lin)? == 2.0;
        let oracle = 8.0 / 3.0 - 2.0 / (3.0 * 4f64.powi(n as i32));
        worst_sq = worst_sq.max((local_energy(n, 0.5, &sq)? - oracle).abs());
    }
    let rep = local_baseline(&cfg(
        "function = linear\nr = 0.5\nn_min = 0\nn_max = 8\nresidual_max_n = 9",
    ))?;
    let worst_res = rep
        .column_values("equivalence_residual")
        .unwrap()
        .iter()
        .copied()
        .fold(0.0, f64::max);
    outcome(
        exact && worst_sq <= LOCAL_TOL && worst_res <= LOCAL_TOL && rep.passed(),
        format!("f=x exact {exact}, f=x² max error {worst_sq:.3e}, max residual {worst_res:.3e}"),
    )
}

fn bounds() -> Result<Outcome> {
    let mut details = Vec::new();
    let mut ok = true;
    for i in [1u64, 3] {
        let rep =
            resistance_bounds_suite(&cfg(&format!("i = {i}\ns = 0.25\nn_min = 0\nn_max = 6")))?;
        ok &= rep.passed();
        details.push(format!("i={i}: {}", rep.checks[0].detail));
    }
    outcome(ok, details.join("; "))
}

fn determinism() -> Result<Outcome> {
    let configs = [
        "i = 1\nn_min = 2\nn_max = 9\nkernel = perturbed",
        "i = 3\nn_min = 1\nn_max = 6\nfunction = sin:3",
    ];
    let mut identical = true;
    for text in configs {
        let c = cfg(text);
        let run = |threads| -> Result<Vec<u8>> {
            with_threads(threads, || {
                let mut buf = Vec::new();
                finite_energy_limit(&c)?.write_csv(&mut buf)?;
                Ok(buf)
            })
        };
        let one = run(1)?;
        identical &= one == run(2)? && one == run(8)?;
    }
    let seeded = cfg("i = 1\nn_min = 1\nn_max = 5\nsamples = 20\nseed = 13");
    let run = |threads| -> Result<Vec<u8>> {
        with_threads(threads, || {
            let mut buf = Vec::new();
            compactness_lower_bound(&seeded)?.write_csv(&mut buf)?;
            Ok(buf)
        })
    };
    let one = run(1)?;
    identical &= one == run(2)? && one == run(8)?;
    outcome(
        identical,
        format!("3 experiments under 1, 2 and 8 threads, identical {identical}"),
    )
}

type Criterion = (&'static str, fn() -> Result<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 13] = [
        ("graph-directed recursion", recursion),
        ("path and wire combinatorics", combinatorics),
        ("stage-1 matching", matching),
        ("star-mesh reduction", star_mesh),
        ("energy convergence", energy_convergence),
        ("ellipticity sandwich", sandwich),
        ("equivalence gap", gap),
        ("compactness bound", compactness),
        ("kernel moments", moments),
        ("i → ∞ limit", i_limit),
        ("local baseline", local),
        ("resistance bounds", bounds),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (passed, detail) = match run() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!(
            "[{}] criterion {:>2} {name}: {detail} [{:.2?}]",
            if passed { "PASS" } else { "FAIL" },
            k + 1,
            start.elapsed()
        );
    }
    println!("acceptance: {} of 13 criteria passed", 13 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
