//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when a check fails that is not listed as a known finite-depth or
//! finite-budget limitation (those still print FAIL).

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ridgeline::exec::Exec;
use ridgeline::fractal::{build_fractal, Axis, Direction};
use ridgeline::hull::{caratheodory_reduce, min_norm_point, AtomSet, MinNormCertificate};
use ridgeline::oracles::{argmax_grid_refine, po_atoms, OracleSettings};
use ridgeline::problems::{builtin, list_problems};
use ridgeline::ridge::{AtomRule, RunConfig};
use ridgeline_cli::{cmd_certify, cmd_fractal, cmd_run, Diag, FractalArgs};
use serde_json::Value;

/// A named sub-check. `known` marks checks that cannot hold at finite depth or
/// budget; they are reported but do not fail the suite.
struct Check {
    name: String,
    ok: bool,
    known: bool,
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn add(&mut self, name: impl Into<String>, ok: bool) {
        self.0.push(Check { name: name.into(), ok, known: false });
    }

    fn add_known(&mut self, name: impl Into<String>, ok: bool) {
        self.0.push(Check { name: name.into(), ok, known: true });
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn trajectory_xs(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["x"][0].as_f64().unwrap())
        .collect()
}

fn config(problem: &str, x0: f64, iters: usize) -> RunConfig {
    RunConfig {
        problem: problem.into(),
        x0: vec![x0],
        alpha0: 0.5,
        gamma: 1.0,
        iters,
        ..RunConfig::default()
    }
}

fn convex_hull_necessity(c: &mut Checks) {
    let dir = tempfile::tempdir().unwrap();
    let code = cmd_run(&config("convex_hull_necessary", 0.7, 500), dir.path()).unwrap();
    c.add("run exit 0", code == 0);
    let xs = trajectory_xs(&dir.path().join("trajectory.jsonl"));
    let min_abs = xs.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    c.add(format!("min |x_k| = {min_abs:.3e} <= 0.05"), min_abs <= 0.05);

    let cfg = RunConfig {
        problem: "convex_hull_necessary".into(),
        x0: vec![0.0],
        ..RunConfig::default()
    };
    let code = cmd_certify(&cfg, dir.path()).unwrap();
    c.add("certify exit 0", code == 0);
    let cert = read_json(&dir.path().join("certificate.json"));
    c.add("verdict critical", cert["verdict"] == true);
    let mut witness: Vec<(f64, f64)> = cert["witness"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| (w["u"][0].as_f64().unwrap(), w["lambda"].as_f64().unwrap()))
        .collect();
    witness.sort_by(|a, b| a.0.total_cmp(&b.0));
    let expected = witness.len() == 2
        && (witness[0].0 + 1.0).abs() <= 1e-9
        && (witness[1].0 - 1.0).abs() <= 1e-9
        && witness.iter().all(|w| (w.1 - 0.5).abs() <= 1e-9);
    c.add(format!("witness {witness:?}"), expected);
    let norm = cert["certificate"]["norm"].as_f64().unwrap();
    c.add(format!("min-norm {norm:.1e} <= 1e-9"), norm <= 1e-9);
    let vertex = cert["vertex_min_norm"].as_f64().unwrap();
    c.add(format!("vertex-only min-norm {vertex}"), (vertex - 1.0).abs() <= 1e-12);
}

fn envelope_gap(c: &mut Checks) {
    let p = builtin("envelope_gap").unwrap();
    let s = OracleSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut exact_zero = true;
    let mut envelope_full = true;
    for _ in 0..50 {
        let x: f64 = rng.random_range(-9.0..9.0);
        let (am, sample) = po_atoms(&p, &[x], &s).unwrap();
        exact_zero &= sample.atoms.len() == 1 && sample.atoms.atoms()[0][0].abs() <= 1e-7;
        // Envelope set: x-parts of every subgradient of F at the maximizer.
        let y = &am.maximizers[0];
        let elems = p.prog.subdiff_sample(&[x], y, 64, 0.0).unwrap().elements;
        let lo = elems.iter().map(|e| e.u[0]).fold(f64::INFINITY, f64::min);
        let hi = elems.iter().map(|e| e.u[0]).fold(f64::NEG_INFINITY, f64::max);
        envelope_full &= (lo + 1.0).abs() <= 1e-12 && (hi - 1.0).abs() <= 1e-12;
    }
    c.add("PO atoms exactly {0} at 50 x", exact_zero);
    c.add("envelope set [-1, 1] at 50 x", envelope_full);

    let dir = tempfile::tempdir().unwrap();
    let x0 = 1.37;
    cmd_run(&config("envelope_gap", x0, 200), dir.path()).unwrap();
    let xs = trajectory_xs(&dir.path().join("trajectory.jsonl"));
    c.add(format!("ridge run stationary over {} steps", xs.len()), xs.iter().all(|&x| x == x0));
    let report = read_json(&dir.path().join("report.json"));
    c.add("f_final == 0", report["f_final"].as_f64() == Some(0.0));
}

fn po_failure(c: &mut Checks) {
    let p = builtin("po_failure").unwrap();
    c.add(
        "box [0, 3]",
        p.ybox.lower == vec![0.0] && p.ybox.upper == vec![3.0],
    );
    let s = OracleSettings::default();
    let (am, sample) = po_atoms(&p, &[0.0], &s).unwrap();
    let cert = min_norm_point(&sample.atoms, s.hull_tol);
    c.add(format!("hull min-norm {:.1e} <= 1e-7", cert.norm), cert.norm <= 1e-7);
    let big = sample.atoms.atoms().iter().map(|a| a[0].abs()).fold(0.0, f64::max);
    c.add(format!("largest atom {big} >= 2.9"), big >= 2.9);
    c.add("argmax boundary flag", am.boundary_flag);

    // f from grid maximization only; zero near 0 means its Clarke set is {0}.
    let flat = (-20..=20).all(|i| {
        let x = i as f64 * 0.005;
        argmax_grid_refine(&p.prog, &[x], &p.ybox, &s).unwrap().value.abs() <= s.delta_f
    });
    c.add("grid f == 0 on [-0.1, 0.1]", flat);

    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        problem: "po_failure".into(),
        x0: vec![0.0],
        ..RunConfig::default()
    };
    cmd_certify(&cfg, dir.path()).unwrap();
    let cert = read_json(&dir.path().join("certificate.json"));
    c.add("certificate boundary warning", cert["boundary_flag"] == true);
}

fn convergence(c: &mut Checks) {
    for (id, x0) in [("smooth_saddle", 1.3), ("convex_hull_necessary", 0.7)] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config(id, x0, 2000);
        cfg.tol = 1e-6;
        cmd_run(&cfg, dir.path()).unwrap();
        let r = read_json(&dir.path().join("report.json"));
        let osc = r["oscillation"].as_f64().unwrap();
        let alpha = r["alpha_final"].as_f64().unwrap();
        c.add(format!("{id}: oscillation {osc:.2e} <= 10 alpha_final {:.2e}", 10.0 * alpha), osc <= 10.0 * alpha);
        let term = &r["certification"]["terminal"];
        let x_final = r["x_final"][0].as_f64().unwrap();
        c.add_known(
            format!("{id}: last iterate x = {x_final:.3e} certifies at 1e-6"),
            term["verdict"] == true,
        );
        let near = &r["certification"]["nearest_certified"];
        c.add_known(
            format!(
                "{id}: critical point {} within tail radius (distance {:.2e})",
                near["x"][0],
                r["certification"]["distance"].as_f64().unwrap_or(f64::NAN)
            ),
            near["verdict"] == true,
        );
    }
}

/// Simplex-grid oracle: coarse lattice over the weight simplex, then pairwise
/// weight transfers with a halving step on the squared norm.
fn simplex_grid_oracle(atoms: &[Vec<f64>]) -> f64 {
    let n = atoms.len();
    let p = atoms[0].len();
    let sq = |w: &[f64]| {
        let mut pt = vec![0.0; p];
        for (a, wi) in atoms.iter().zip(w) {
            for d in 0..p {
                pt[d] += wi * a[d];
            }
        }
        pt.iter().map(|v| v * v).sum::<f64>()
    };
    let res = if n <= 4 { 24 } else { 8 };
    let mut best = f64::INFINITY;
    let mut best_w = vec![0.0; n];
    let mut counts = vec![0usize; n];
    fn visit(
        i: usize,
        left: usize,
        res: usize,
        counts: &mut Vec<usize>,
        f: &dyn Fn(&[f64]) -> f64,
        best: &mut f64,
        best_w: &mut Vec<f64>,
    ) {
        if i + 1 == counts.len() {
            counts[i] = left;
            let w: Vec<f64> = counts.iter().map(|&k| k as f64 / res as f64).collect();
            let v = f(&w);
            if v < *best {
                *best = v;
                *best_w = w;
            }
            return;
        }
        for k in 0..=left {
            counts[i] = k;
            visit(i + 1, left - k, res, counts, f, best, best_w);
        }
    }
    visit(0, res, res, &mut counts, &sq, &mut best, &mut best_w);
    let mut step = 1.0 / res as f64;
    while step > 1e-14 {
        let mut improved = false;
        for a in 0..n {
            for b in 0..n {
                if a == b || best_w[a] <= 0.0 {
                    continue;
                }
                let t = step.min(best_w[a]);
                let mut cand = best_w.clone();
                cand[a] -= t;
                cand[b] += t;
                let v = sq(&cand);
                if v < best {
                    best = v;
                    best_w = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best.sqrt()
}

fn min_norm_equivalence(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    let mut max_support_ok = true;
    for _ in 0..500 {
        let n = rng.random_range(1..=8);
        let p = rng.random_range(1..=3);
        let shift: Vec<f64> = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
        let atoms: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|d| shift[d] + rng.random_range(-1.0..1.0)).collect())
            .collect();
        let cert = min_norm_point(&AtomSet::new(atoms.clone()).unwrap(), 1e-12);
        worst = worst.max((cert.norm - simplex_grid_oracle(&atoms)).abs());

        // Reduction of a dense random combination.
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let point: Vec<f64> = (0..p).map(|d| atoms.iter().zip(&weights).map(|(a, w)| w * a[d]).sum()).collect();
        let dense = MinNormCertificate {
            norm: point.iter().map(|v| v * v).sum::<f64>().sqrt(),
            atoms: atoms.clone(),
            weights,
            point: point.clone(),
            gap: 0.0,
            iterations: 0,
            capped: false,
        };
        for original in [&dense, &cert] {
            let red = caratheodory_reduce(original, p);
            let shift = red
                .point
                .iter()
                .zip(&original.point)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst_shift = worst_shift.max(shift);
            max_support_ok &= red.support_size() <= p + 1;
        }
    }
    c.add(format!("Wolfe vs simplex grid, worst {worst:.1e} <= 1e-4"), worst <= 1e-4);
    c.add(format!("reduction moves point {worst_shift:.1e} <= 1e-10"), worst_shift <= 1e-10);
    c.add("reduced support <= p + 1", max_support_ok);
}

fn gradient_correctness(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (id, _) in list_problems() {
        let p = builtin(id).unwrap();
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        while checked < 100 {
            let x: f64 = rng.random_range(-2.0..2.0);
            let y: f64 = rng.random_range(p.ybox.lower[0]..p.ybox.upper[0]);
            if !p.prog.is_smooth_around(&[x], &[y], 1e-6).unwrap() {
                continue;
            }
            worst = worst.max(p.prog.fd_check(&[x], &[y], 1e-6).unwrap());
            checked += 1;
        }
        c.add(format!("{id}: worst fd error {worst:.1e} <= 1e-5"), worst <= 1e-5);
    }
}

/// Exact measure of a union of integer intervals by sorting.
fn union_units(mut iv: Vec<(u64, u64)>) -> u64 {
    iv.sort();
    let mut total = 0;
    let mut reach = 0;
    for (s, e) in iv {
        let s = s.max(reach);
        if e > s {
            total += e - s;
        }
        reach = reach.max(e);
    }
    total
}

fn explicit_squares(depth: u32) -> Vec<(u64, u64)> {
    let sigma = [1u64, 3, 0, 2];
    let mut level = vec![(0u64, 0u64)];
    for _ in 0..depth {
        level = level
            .iter()
            .flat_map(|&(a, b)| (0..4).map(move |j| (4 * a + j as u64, 4 * b + sigma[j])))
            .collect();
    }
    level
}

fn fractal_suite(c: &mut Checks) {
    let exec = Exec::default();
    let mut axis_exact = true;
    let mut lens = Vec::new();
    let mut oracle_match = true;
    for depth in 0..=8 {
        let f = build_fractal(depth).unwrap();
        axis_exact &= f.axis_projection_length(Axis::X, exec) == 1.0 && f.axis_projection_length(Axis::Y, exec) == 1.0;
        let units = f.rotated_projection_units(Direction::OneTwo, exec);
        let sq = explicit_squares(depth);
        oracle_match &= units == union_units(sq.iter().map(|&(a, b)| (a + 2 * b, a + 2 * b + 3)).collect());
        lens.push(f.rotated_projection_length(Direction::OneTwo, exec));
    }
    c.add("axis projections exactly 1, depths 0..8", axis_exact);
    c.add("rotated projection matches interval oracle", oracle_match);
    c.add("rotated projection strictly decreasing", lens.windows(2).all(|w| w[1] < w[0]));
    c.add(
        format!("depth 8 / depth 0 = {:.4} <= 0.2", lens[8] / lens[0]),
        lens[8] <= 0.2 * lens[0],
    );
    let tv: Vec<f64> = (0..=6).map(|i| build_fractal(i).unwrap().min_total_variation(exec)).collect();
    c.add(
        format!("total variation {tv:?} >= depth"),
        tv.iter().enumerate().all(|(i, &t)| t >= i as f64),
    );
    let mut dichotomy = true;
    let f = build_fractal(8).unwrap();
    for level in 0..=4u32 {
        let n = 4u64.pow(level);
        for k in 0..=n {
            let expect = if k == 0 || k == n { 1 } else { 2 };
            dichotomy &= f.column_chains(k as f64 / n as f64).unwrap().chains.len() == expect;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut random = 0;
    while random < 100 {
        let x: f64 = rng.random_range(0.0..1.0);
        if (x * 4f64.powi(8)).fract() == 0.0 {
            continue;
        }
        dichotomy &= f.column_chains(x).unwrap().chains.len() == 1;
        random += 1;
    }
    c.add("pair at level <= 4 boundaries, singleton at 100 random x", dichotomy);
}

fn counterexample_trend(c: &mut Checks) {
    let mut bracket = true;
    for i in 2..=8u32 {
        let (lo, hi) = build_fractal(i).unwrap().g_chain_max_bounds(0.5).unwrap();
        let eps = 2.0 * std::f64::consts::SQRT_2 * 0.25f64.powi(i as i32);
        // The width equals eps exactly in real arithmetic.
        let slack = eps * (1.0 + 1e-12);
        bracket &= lo <= 0.5 && 0.5 <= hi && 0.5 - lo <= slack && hi - 0.5 <= slack;
    }
    c.add("chain max of g brackets 0.5 within 2 sqrt2 4^-i, i = 2..8", bracket);

    let dir = tempfile::tempdir().unwrap();
    let args = FractalArgs {
        depth_min: 2,
        depth_max: 8,
        depth_step: 2,
        diag: vec![Diag::Po, Diag::Probe],
        out: dir.path().to_path_buf(),
        ..FractalArgs::default()
    };
    cmd_fractal(&args).unwrap();
    let column = |file: &str, name: &str| -> Vec<(u32, f64)> {
        let mut r = csv::Reader::from_path(dir.path().join(file)).unwrap();
        let headers = r.headers().unwrap().clone();
        let di = headers.iter().position(|h| h == "depth").unwrap();
        let ci = headers.iter().position(|h| h == name).unwrap();
        r.records()
            .map(|rec| {
                let rec = rec.unwrap();
                (rec[di].parse().unwrap(), rec[ci].parse().unwrap())
            })
            .collect()
    };
    let po: Vec<f64> = column("po.csv", "min_norm").into_iter().map(|r| r.1).collect();
    c.add_known(
        format!("PO min-norm {po:?} strictly decreasing"),
        po.windows(2).all(|w| w[1] < w[0]),
    );
    let gaps = column("probe.csv", "max_gap");
    let at = |d: u32| gaps.iter().filter(|g| g.0 == d).map(|g| g.1).collect::<Vec<_>>();
    let (g2, g6) = (at(2), at(6));
    c.add(
        format!("probe gaps depth 2 {g2:.3?} -> depth 6 {g6:.3?} decrease"),
        !g2.is_empty() && g2.len() == g6.len() && g2.iter().zip(&g6).all(|(a, b)| b < a),
    );
}

fn determinism(c: &mut Checks) {
    let mut outputs = Vec::new();
    for _ in 0..3 {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = config("convex_hull_necessary", 0.7, 300);
        cfg.atom_rule = AtomRule::Random;
        cfg.seed = 99;
        cmd_run(&cfg, dir.path()).unwrap();
        outputs.push(fs::read(dir.path().join("trajectory.jsonl")).unwrap());
    }
    c.add(
        format!("3 runs, {} bytes each, identical", outputs[0].len()),
        !outputs[0].is_empty() && outputs.windows(2).all(|w| w[0] == w[1]),
    );
}

type Criterion = (u32, &'static str, Option<u64>, fn(&mut Checks));

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "convex hull necessity", Some(5), convex_hull_necessity),
        (2, "envelope gap", Some(2), envelope_gap),
        (3, "PO formula failure", Some(2), po_failure),
        (4, "convergence at desk scale", Some(20), convergence),
        (5, "min-norm oracle equivalence", Some(30), min_norm_equivalence),
        (6, "gradient correctness", Some(5), gradient_correctness),
        (7, "fractal suite", Some(60), fractal_suite),
        (8, "counterexample trend", Some(120), counterexample_trend),
        (9, "determinism", None, determinism),
    ];
    let mut unexpected = 0;
    for (n, name, limit, f) in criteria {
        let mut checks = Checks::default();
        let start = Instant::now();
        f(&mut checks);
        let elapsed = start.elapsed();
        if let Some(s) = limit {
            checks.add(
                format!("runtime {:.2} s < {s} s", elapsed.as_secs_f64()),
                elapsed < Duration::from_secs(s),
            );
        }
        let failed: Vec<&Check> = checks.0.iter().filter(|c| !c.ok).collect();
        let status = if failed.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {n} ({name}): {status} [{:.2} s]", elapsed.as_secs_f64());
        for c in &checks.0 {
            let tag = match (c.ok, c.known) {
                (true, _) => "ok",
                (false, true) => "FAIL (known limitation)",
                (false, false) => "FAIL",
            };
            println!("    {tag}: {}", c.name);
        }
        unexpected += failed.iter().filter(|c| !c.known).count();
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
