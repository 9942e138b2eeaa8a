//! Acceptance suite. Each test prints one `[PASS]` or `[FAIL]` line on stderr
//! and then asserts the same condition.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::{Duration, Instant};

use common::{
    compass_min, crossing_family, random_family, random_neutral_distribution, random_traceless, sorted_eigen,
    wandering_path,
};
use multipass::critical::{
    default_localmin_delta, descend_to_pseudo_minimum, qq_structure, seek_critical_point, verify_localmin_property,
    DescentOptions, Negated, SublevelConnector,
};
use multipass::critical::octopole::{check_octopole_nondegeneracy, NONDEGENERACY_TOL};
use multipass::interaction::{f_nm, interaction_expansion, quadrupole_coupling, PairInteraction};
use multipass::mountainpass::*;
use multipass::multipole::{compute_multipoles, direct_coulomb};
use multipass::so3::{haar_sample, haar_samples, retract_config, riem_hess, rot_x, seeded_rng};
use multipass::stats::{log_log_slope, zero_mean_test};
use multipass::toyquantum::*;
use multipass::{Config, MultipoleSet, Rotation};
use nalgebra::{Complex, Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};
use rand::Rng;

/// Prints the verdict line, then fails the test with the collected problems.
fn verdict(id: usize, title: &str, started: Instant, limit: Option<Duration>, summary: &str, mut problems: Vec<String>) {
    let elapsed = started.elapsed();
    if let Some(limit) = limit {
        if elapsed > limit {
            problems.push(format!("runtime {:.1} s exceeds {:.0} s", elapsed.as_secs_f64(), limit.as_secs_f64()));
        }
    }
    let tag = if problems.is_empty() { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    writeln!(err, "[{tag}] criterion {id}: {title}: {summary} ({:.1} s)", elapsed.as_secs_f64()).unwrap();
    for p in problems.iter().take(10) {
        writeln!(err, "    {p}").unwrap();
    }
    assert!(problems.is_empty(), "criterion {id} failed: {problems:?}");
}

fn random_set(rng: &mut impl Rng) -> MultipoleSet {
    compute_multipoles(&random_neutral_distribution(rng, 6), 4).unwrap()
}

fn t_shapes() -> (Config, Config) {
    let perp = Rotation::between(&Vector3::x(), &Vector3::y());
    (Config::new(2.0, Rotation::identity(), perp).unwrap(), Config::new(2.0, perp, Rotation::identity()).unwrap())
}

#[test]
fn criterion_01_dipole_critical_levels() {
    let started = Instant::now();
    let d = MultipoleSet::from_dipole(Vector3::x());
    let pair = PairInteraction::new(&d, &d, 1, 1).unwrap();
    let ascent = Negated(&pair);
    let opts = DescentOptions::default();
    let mut rng = seeded_rng(1);
    let mut values = Vec::new();
    for _ in 0..1000 {
        let start = (haar_sample(&mut rng), haar_sample(&mut rng));
        for r in [descend_to_pseudo_minimum(&pair, start, &opts), descend_to_pseudo_minimum(&ascent, start, &opts)] {
            let r = r.unwrap();
            if r.converged {
                values.push(pair.value(&r.u, &r.v));
            }
        }
        let c = seek_critical_point(&pair, start, 1e-10, 200).unwrap();
        if c.converged {
            values.push(c.value);
        }
    }
    values.sort_by(f64::total_cmp);
    let mut levels: Vec<f64> = Vec::new();
    for &v in &values {
        if levels.last().is_none_or(|l| v - l > 1e-6) {
            levels.push(v);
        }
    }
    let expected = [-2.0, -1.0, 1.0, 2.0];
    let mut problems = Vec::new();
    if levels.len() != expected.len() {
        problems.push(format!("found {} levels: {levels:?}", levels.len()));
    }
    for want in expected {
        let hits = values.iter().filter(|v| (*v - want).abs() <= 1e-6).count();
        if hits == 0 {
            problems.push(format!("level {want} not recovered"));
        }
    }
    let stray = values.iter().filter(|v| expected.iter().all(|w| (*v - w).abs() > 1e-6)).count();
    if stray > 0 {
        problems.push(format!("{stray} critical values off the expected levels"));
    }
    let summary = format!("{} critical points, levels {levels:.9?}", values.len());
    verdict(1, "dipole-dipole critical levels", started, Some(Duration::from_secs(10)), &summary, problems);
}

#[test]
fn criterion_02_expansion_order_fidelity() {
    let started = Instant::now();
    let mut rng = seeded_rng(2);
    let mut problems = Vec::new();
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let d1 = random_neutral_distribution(&mut rng, 5);
        let d2 = random_neutral_distribution(&mut rng, 5);
        let (u, v) = (haar_sample(&mut rng), haar_sample(&mut rng));
        for order in 2..=5 {
            let points: Vec<(f64, f64)> = [30.0, 60.0, 120.0, 240.0]
                .iter()
                .map(|&l| {
                    let direct = direct_coulomb(&d1, &d2, &u, &v, l).unwrap();
                    let (_, value) = interaction_expansion(&d1, &d2, &u, &v, l, order).unwrap();
                    (l, (value - direct).abs())
                })
                .collect();
            let slope = log_log_slope(&points);
            let off = (slope + (order as f64 + 2.0)).abs();
            worst = worst.max(off);
            if !(off <= 0.2) {
                problems.push(format!("pair {trial}, order {order}: slope {slope}"));
            }
        }
    }
    let summary = format!("80 fits, largest slope deviation {worst:.4}");
    verdict(2, "expansion-order fidelity", started, Some(Duration::from_secs(30)), &summary, problems);
}

fn orders_up_to_five() -> Vec<(usize, usize)> {
    (2..=5).flat_map(|t| (1..t).map(move |n| (n, t - n))).collect()
}

#[test]
fn criterion_03_haar_average_nullity() {
    let started = Instant::now();
    let mut rng = seeded_rng(3);
    let a = random_set(&mut rng);
    let b = random_set(&mut rng);
    let fixed = (haar_sample(&mut rng), haar_sample(&mut rng));
    let samples = haar_samples(33, 100_000);
    let mut problems = Vec::new();
    let mut worst = 0.0f64;
    for (n, m) in orders_up_to_five() {
        let pair = PairInteraction::new(&a, &b, n, m).unwrap();
        let over_u: Vec<f64> = samples.iter().map(|u| pair.value(u, &fixed.1)).collect();
        let over_v: Vec<f64> = samples.iter().map(|v| pair.value(&fixed.0, v)).collect();
        for (which, values) in [("U", over_u), ("V", over_v)] {
            let test = zero_mean_test(&values, 4.0);
            worst = worst.max(test.mean.abs() / test.bound);
            if !test.passed {
                problems.push(format!("({n},{m}) over {which}: mean {} bound {}", test.mean, test.bound));
            }
        }
    }
    let summary = format!("{} averages, largest |mean|/bound {worst:.3}", 2 * orders_up_to_five().len());
    verdict(3, "Haar-average nullity", started, Some(Duration::from_secs(60)), &summary, problems);
}

const SUPPORTED_CASES: [(usize, usize); 6] = [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (2, 2)];

fn octopole_gate(set: &MultipoleSet, order: usize) -> bool {
    order != 3 || check_octopole_nondegeneracy(&set.octopole, NONDEGENERACY_TOL)
}

#[test]
fn criterion_04_localmin_suite() {
    let started = Instant::now();
    let mut rng = seeded_rng(4);
    let m1 = random_set(&mut rng);
    let m2 = random_set(&mut rng);
    let mut problems = Vec::new();
    let mut notes = Vec::new();
    for (n, m) in SUPPORTED_CASES {
        if !(octopole_gate(&m1, n) && octopole_gate(&m2, m)) {
            notes.push(format!("({n},{m}) gated"));
            continue;
        }
        let delta = default_localmin_delta(n, m, &m1, &m2).unwrap();
        let report = verify_localmin_property(n, m, &m1, &m2, delta, 100_000, 4).unwrap();
        notes.push(format!("({n},{m}) {} qualifying", report.qualifying_points));
        if !report.counterexamples.is_empty() {
            problems.push(format!("({n},{m}): {} counterexamples, first {:?}", report.counterexamples.len(), report.counterexamples[0]));
        }
        if report.qualifying_points == 0 {
            problems.push(format!("({n},{m}): no sample qualified"));
        }
    }
    verdict(4, "local-minimum property", started, Some(Duration::from_secs(300)), &notes.join(", "), problems);
}

/// Random orientation pair in `{F < −δ}` found by rejection.
fn sublevel_point(pair: &PairInteraction, delta: f64, rng: &mut impl Rng) -> (Rotation, Rotation) {
    loop {
        let p = (haar_sample(rng), haar_sample(rng));
        if pair.value(&p.0, &p.1) < -delta {
            return p;
        }
    }
}

struct DisjointSets(Vec<usize>);

impl DisjointSets {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
}

/// Indices of the `k` points of `grid` closest to `x`, nearest first.
fn nearest(grid: &[Rotation], x: &Rotation, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..grid.len()).collect();
    idx.sort_by(|&a, &b| grid[a].distance(x).total_cmp(&grid[b].distance(x)));
    idx.truncate(k);
    idx
}

/// Bottleneck (minimax) values between endpoint pairs on the product of a
/// Haar grid with itself, and the largest rise of `F` across one edge.
fn graph_bottlenecks(pair: &PairInteraction, queries: &[((Rotation, Rotation), (Rotation, Rotation))]) -> (Vec<f64>, f64) {
    const GRID: usize = 600;
    const NEIGHBOURS: usize = 8;
    let grid = haar_samples(55, GRID);
    let mats: Vec<Matrix3<f64>> = grid.iter().map(|r| r.matrix()).collect();
    let mut factor_edges = Vec::new();
    for i in 0..GRID {
        for j in nearest(&grid, &grid[i], NEIGHBOURS + 1).into_iter().skip(1) {
            let (a, b) = (i.min(j), i.max(j));
            factor_edges.push((a, b));
        }
    }
    factor_edges.sort_unstable();
    factor_edges.dedup();
    let mids: Vec<Matrix3<f64>> = factor_edges.iter().map(|&(a, b)| grid[a].slerp(&grid[b], 0.5).matrix()).collect();
    let node = |i: usize, j: usize| i * GRID + j;
    let values: Vec<f64> = (0..GRID * GRID).map(|k| pair.value_matrices(&mats[k / GRID], &mats[k % GRID])).collect();
    let mut edges: Vec<(f64, usize, usize)> = Vec::with_capacity(2 * factor_edges.len() * GRID + 18 * queries.len());
    let mut rise = 0.0f64;
    for (e, &(a, b)) in factor_edges.iter().enumerate() {
        for j in 0..GRID {
            for (x, y, mid) in [
                (node(a, j), node(b, j), pair.value_matrices(&mids[e], &mats[j])),
                (node(j, a), node(j, b), pair.value_matrices(&mats[j], &mids[e])),
            ] {
                let w = values[x].max(values[y]).max(mid);
                rise = rise.max(w - values[x].min(values[y]));
                edges.push((w, x, y));
            }
        }
    }
    let base = GRID * GRID;
    for (q, (start, end)) in queries.iter().enumerate() {
        for (slot, p) in [start, end].into_iter().enumerate() {
            let id = base + 2 * q + slot;
            let fp = pair.value(&p.0, &p.1);
            for i in nearest(&grid, &p.0, 3) {
                for j in nearest(&grid, &p.1, 3) {
                    let mid = pair.value(&p.0.slerp(&grid[i], 0.5), &p.1.slerp(&grid[j], 0.5));
                    let w = fp.max(values[node(i, j)]).max(mid);
                    rise = rise.max(w - fp.min(values[node(i, j)]));
                    edges.push((w, id, node(i, j)));
                }
            }
        }
    }
    edges.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let mut sets = DisjointSets((0..base + 2 * queries.len()).collect());
    let mut answers = vec![f64::NAN; queries.len()];
    let mut open: Vec<usize> = (0..queries.len()).collect();
    for (w, x, y) in edges {
        let (rx, ry) = (sets.find(x), sets.find(y));
        if rx == ry {
            continue;
        }
        sets.0[rx] = ry;
        open.retain(|&q| {
            let joined = sets.find(base + 2 * q) == sets.find(base + 2 * q + 1);
            if joined {
                answers[q] = w;
            }
            !joined
        });
        if open.is_empty() {
            break;
        }
    }
    (answers, rise)
}

#[test]
fn criterion_05_connected_suite() {
    let started = Instant::now();
    let mut rng = seeded_rng(5);
    let m1 = random_set(&mut rng);
    let m2 = random_set(&mut rng);
    let mut problems = Vec::new();
    let mut notes = Vec::new();
    for (n, m) in SUPPORTED_CASES {
        if !(octopole_gate(&m1, n) && octopole_gate(&m2, m)) {
            notes.push(format!("({n},{m}) gated"));
            continue;
        }
        let connector = SublevelConnector::new(n, m, &m1, &m2).unwrap();
        let pair = connector.pair();
        let delta = connector.delta0() / 2.0;
        let mut queries = Vec::new();
        let mut path_maxima = Vec::new();
        let mut failures = 0;
        for k in 0..1000 {
            let start = sublevel_point(pair, delta, &mut rng);
            let end = sublevel_point(pair, delta, &mut rng);
            let path = match connector.connect(start, end, delta) {
                Ok(path) => path,
                Err(e) => {
                    failures += 1;
                    problems.push(format!("({n},{m}) pair {k}: {e}"));
                    continue;
                }
            };
            let mut top = f64::NEG_INFINITY;
            for (u, v) in &path.nodes {
                top = top.max(f_nm(&m1, &m2, u, v, n, m).unwrap());
            }
            if !(top < -delta) {
                failures += 1;
                problems.push(format!("({n},{m}) pair {k}: node value {top} not below −{delta}"));
            }
            if queries.len() < 50 {
                queries.push((start, end));
                path_maxima.push(top);
            }
        }
        let (bottlenecks, rise) = graph_bottlenecks(pair, &queries);
        for (q, (&b, &top)) in bottlenecks.iter().zip(&path_maxima).enumerate() {
            if !(b < -delta + rise) {
                problems.push(format!("({n},{m}) query {q}: graph bottleneck {b} not below −δ + {rise} = {}", -delta + rise));
            }
            if !(top >= b - rise) {
                problems.push(format!("({n},{m}) query {q}: path maximum {top} below graph bottleneck {b} − {rise}"));
            }
        }
        let worst_b = bottlenecks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        notes.push(format!("({n},{m}) δ={delta:.3e} failures {failures} worst bottleneck {worst_b:.3e} rise {rise:.3e}"));
    }
    verdict(5, "sublevel connectedness", started, Some(Duration::from_secs(600)), &notes.join("; "), problems);
}

/// Dense brute-force extremum of `sign · f` over `SO(3)`: the Haar grid,
/// then a cubic grid of step 0.008 and half-width 0.08 in exponential
/// coordinates around each of the eight best grid points.
fn local_grid_extremum(f: impl Fn(&Rotation) -> f64, grid: &[(Rotation, Matrix3<f64>)], values: &[f64], sign: f64) -> (f64, Rotation) {
    const HALF: i32 = 10;
    const STEP: f64 = 0.008;
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.select_nth_unstable_by(8, |&a, &b| (sign * values[a]).total_cmp(&(sign * values[b])));
    let mut best = (values[order[0]], grid[order[0]].0);
    for &k in &order[..8] {
        for i in -HALF..=HALF {
            for j in -HALF..=HALF {
                for l in -HALF..=HALF {
                    let r = grid[k].0 * Rotation::exp(&(Vector3::new(i as f64, j as f64, l as f64) * STEP));
                    let fr = f(&r);
                    if sign * fr < sign * best.0 {
                        best = (fr, r);
                    }
                }
            }
        }
    }
    best
}

#[test]
fn criterion_06_quadrupole_structure() {
    let started = Instant::now();
    let dense: Vec<(Rotation, Matrix3<f64>)> = haar_samples(66, 500_000).into_iter().map(|r| (r, r.matrix())).collect();
    let mut rng = seeded_rng(6);
    let mut problems = Vec::new();
    let (mut coarse, mut fine, mut triple, mut decpath) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for trial in 0..100 {
        let q1 = random_traceless(&mut rng);
        let q2 = random_traceless(&mut rng);
        let u = haar_sample(&mut rng);
        let um = u.matrix();
        let pair = PairInteraction::new(&MultipoleSet::from_quadrupole(q1), &MultipoleSet::from_quadrupole(q2), 2, 2).unwrap();
        let s = qq_structure(&q1, &q2, &u.inverse()).unwrap();
        let values: Vec<f64> = dense.iter().map(|(_, vm)| pair.value_matrices(&um, vm)).collect();
        let lo = local_grid_extremum(|v| pair.value(&u, v), &dense, &values, 1.0);
        let hi = local_grid_extremum(|v| pair.value(&u, v), &dense, &values, -1.0);
        let refined_lo = compass_min(|v| pair.value(&u, v), lo.1, lo.0);
        let refined_hi = -compass_min(|v| -pair.value(&u, v), hi.1, -hi.0);
        for (name, exact, sampled, refined) in [("g_min", s.g_min, lo.0, refined_lo), ("h_max", s.h_max, hi.0, refined_hi)] {
            coarse = coarse.max((exact - sampled).abs());
            fine = fine.max((exact - refined).abs());
            if !((exact - sampled).abs() <= 1e-3) {
                problems.push(format!("pair {trial} {name}: {exact} vs sampled {sampled}"));
            }
            if !((exact - refined).abs() <= 1e-6) {
                problems.push(format!("pair {trial} {name}: {exact} vs refined {refined}"));
            }
        }
        if s.g_min > lo.0 + 1e-12 || s.h_max < hi.0 - 1e-12 {
            problems.push(format!("pair {trial}: a sample lies outside [g_min, h_max]"));
        }
        // A_132 + A_213 + A_321: the three transpositions.
        let sum = s.critical_values[1] + s.critical_values[2] + s.critical_values[5];
        triple = triple.max(sum.abs());
        if !(sum.abs() <= 1e-10) {
            problems.push(format!("pair {trial}: transposition sum {sum}"));
        }
        // Rotating V about a shared eigenvector moves F along sin²θ between two pairings.
        let (a, frame) = sorted_eigen(&quadrupole_coupling(&(um * q1 * um.transpose())), false);
        let (b, w) = sorted_eigen(&q2, true);
        let v0 = Rotation::from_matrix(&(frame * w.transpose())).unwrap();
        let base: f64 = (0..3).map(|r| a[r] * b[r]).sum::<f64>() / 3.0;
        for axis in 0..3 {
            let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
            let swapped = base + (a[i] * b[j] + a[j] * b[i] - a[i] * b[i] - a[j] * b[j]) / 3.0;
            let dir: Vector3<f64> = frame.column(axis).into();
            for step in 0..8 {
                let theta = step as f64 * PI / 7.0;
                let f = pair.value(&u, &(Rotation::exp(&(dir * theta)) * v0));
                let residual = (f - base + (base - swapped) * theta.sin().powi(2)).abs();
                decpath = decpath.max(residual);
                if !(residual < 1e-9) {
                    problems.push(format!("pair {trial} axis {axis} θ {theta}: residual {residual}"));
                }
            }
        }
    }
    let summary = format!(
        "max |error| sampled {coarse:.2e}, refined {fine:.2e}; transposition sum {triple:.1e}; exchange residual {decpath:.1e}"
    );
    verdict(6, "quadrupole structure", started, None, &summary, problems);
}

#[test]
fn criterion_07_surgery_soundness() {
    let started = Instant::now();
    const L_STAR: f64 = 30.0;
    let vdw = ModelEnergy::new(-1.0, -1.5, MultipoleSet::default(), MultipoleSet::default(), CvdwModel::constant(1.0), 5);
    let perp = Rotation::between(&Vector3::x(), &Vector3::y());
    let classes: [(&str, ModelEnergy); 3] = [("vdW-only", vdw), ("dipole", dipole_test_model()), ("quadrupole", quadrupole_test_model())];
    let mut rng = seeded_rng(7);
    let mut problems = Vec::new();
    let mut notes = Vec::new();
    for (name, model) in classes {
        let s = model.surface().unwrap();
        let mut worst_gain = f64::NEG_INFINITY;
        for k in 0..100 {
            let angles: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
            let (a, b) = match name {
                "vdW-only" => (
                    Config { l: 1.0, u: haar_sample(&mut rng), v: haar_sample(&mut rng) },
                    Config { l: 1.5, u: haar_sample(&mut rng), v: haar_sample(&mut rng) },
                ),
                // Head-to-tail minima, each dipole spun about its axis.
                "dipole" => (
                    Config::new(2.0, rot_x(angles[0]), rot_x(angles[1])).unwrap(),
                    Config::new(2.0, rot_x(angles[2]), rot_x(angles[3])).unwrap(),
                ),
                // T-shaped minima, turned about the separation axis and spun about each quadrupole axis.
                _ => (
                    Config::new(2.0, rot_x(angles[4]) * rot_x(angles[0]), rot_x(angles[4]) * perp * rot_x(angles[1])).unwrap(),
                    Config::new(2.0, rot_x(angles[5]) * perp * rot_x(angles[2]), rot_x(angles[5]) * rot_x(angles[3])).unwrap(),
                ),
            };
            let path = wandering_path(&s, &mut rng, a, b, DEFAULT_NODES, 1e4);
            let (out, report) = match surgery(&s, &path, L_STAR) {
                Ok(r) => r,
                Err(e) => {
                    problems.push(format!("{name} path {k}: {e}"));
                    continue;
                }
            };
            let after = out.nodes.iter().map(|c| s.energy(c).unwrap()).fold(f64::NEG_INFINITY, f64::max);
            let before_nodes = path.nodes.iter().map(|c| s.energy(c).unwrap()).fold(f64::NEG_INFINITY, f64::max);
            worst_gain = worst_gain.max(after - report.max_energy_before);
            if !((out.max_separation() - L_STAR).abs() <= 1e-9) {
                problems.push(format!("{name} path {k}: max L {}", out.max_separation()));
            }
            if !(after <= report.max_energy_before + SURGERY_SLACK) {
                problems.push(format!("{name} path {k}: max energy {after} after vs {} before", report.max_energy_before));
            }
            if !(report.max_energy_before >= before_nodes && (report.max_energy_after - after).abs() <= 1e-12) {
                problems.push(format!("{name} path {k}: report maxima disagree with re-evaluated energies"));
            }
        }
        notes.push(format!("{name} worst max-energy change {worst_gain:.2e}"));
    }
    verdict(7, "surgery soundness", started, Some(Duration::from_secs(300)), &notes.join(", "), problems);
}

#[test]
fn criterion_08_toy_vdw() {
    let started = Instant::now();
    let mut rng = seeded_rng(8);
    let mut problems = Vec::new();
    let mut lowest = f64::INFINITY;
    for trial in 0..5 {
        let a = random_molecule(&mut rng, 3 + trial % 3);
        let b = random_molecule(&mut rng, 2 + trial % 2);
        let report = check_vdw_positivity(&a, &b, 1000, 80 + trial as u64);
        lowest = lowest.min(report.min_value);
        if !(report.violations.is_empty() && report.bound_failures == 0 && report.min_value > 0.0) {
            problems.push(format!(
                "generic pair {trial}: {} vanishing, {} bound failures, min {}",
                report.violations.len(),
                report.bound_failures,
                report.min_value
            ));
        }
    }
    // Scalar dipoles leave no excited part: the coefficient vanishes but never goes negative.
    let h = random_hermitian(&mut rng, 3);
    let scalar = |s: f64| CMatrix::identity(3, 3) * Complex::from(s);
    let a = ToyMolecule::new(h.clone(), [scalar(0.3), scalar(-1.0), scalar(0.5)]).unwrap();
    let b = ToyMolecule::new(h, [scalar(1.0), scalar(0.2), scalar(0.0)]).unwrap();
    let degenerate = check_vdw_positivity(&a, &b, 1000, 88);
    if !(degenerate.min_value >= 0.0) {
        problems.push(format!("scalar dipoles: min {}", degenerate.min_value));
    }

    let za = [Complex::new(0.8, 0.1), Complex::new(-0.2, 0.6), Complex::new(0.3, -0.4)];
    let zb = [Complex::new(0.1, -0.7), Complex::new(0.5, 0.5), Complex::new(-0.6, 0.2)];
    let (ga, gb) = (0.9, 1.7);
    let (a, b) = (two_level_molecule(ga, za), two_level_molecule(gb, zb));
    let mut closed_err = 0.0f64;
    for _ in 0..1000 {
        let (u, v) = (haar_sample(&mut rng), haar_sample(&mut rng));
        let (um, vm) = (u.matrix(), v.matrix());
        let pa: Vec<C64> = (0..3).map(|r| (0..3).map(|c| za[c] * um[(r, c)]).sum()).collect();
        let pb: Vec<C64> = (0..3).map(|r| (0..3).map(|c| zb[c] * vm[(r, c)]).sum()).collect();
        let amp = pa[0] * pb[0] * -2.0 + pa[1] * pb[1] + pa[2] * pb[2];
        let closed = amp.norm_sqr() / (ga + gb);
        closed_err = closed_err.max((cvdw_pair(&a, &b, &u, &v, None, None).unwrap().value - closed).abs());
    }
    if !(closed_err <= 1e-10) {
        problems.push(format!("two-level closed form off by {closed_err}"));
    }

    let mut spread = 0.0f64;
    for _ in 0..100 {
        let ms = [random_molecule(&mut rng, 3), random_molecule(&mut rng, 2), random_molecule(&mut rng, 3)];
        let rs = [haar_sample(&mut rng), haar_sample(&mut rng), haar_sample(&mut rng)];
        let eij = haar_sample(&mut rng).apply(&Vector3::x());
        let eik = haar_sample(&mut rng).apply(&Vector3::x());
        let w = three_body_w([&ms[0], &ms[1], &ms[2]], [&rs[0], &rs[1], &rs[2]], &eij, &eik).unwrap();
        spread = spread.max(w.spread() / w.value().norm().max(1.0));
    }
    if !(spread <= 1e-10) {
        problems.push(format!("three-body forms disagree by {spread}"));
    }

    let mut top = f64::NEG_INFINITY;
    for _ in 0..100 {
        let ms = vec![random_molecule(&mut rng, 2), random_molecule(&mut rng, 3), random_molecule(&mut rng, 2)];
        let rs = vec![haar_sample(&mut rng), haar_sample(&mut rng), haar_sample(&mut rng)];
        let xs: Vec<Vector3<f64>> =
            (0..3).map(|_| haar_sample(&mut rng).apply(&Vector3::x()) * rng.random_range(3.0..6.0)).collect();
        top = top.max(full_correction(&ms, &rs, &xs).unwrap().total);
    }
    if !(top <= 0.0) {
        problems.push(format!("full correction reaches {top}"));
    }
    let summary = format!(
        "min C {lowest:.3e}, closed-form error {closed_err:.1e}, three-body spread {spread:.1e}, max full correction {top:.3e}"
    );
    verdict(8, "toy van der Waals coefficient", started, None, &summary, problems);
}

#[test]
fn criterion_09_path_dressing() {
    let started = Instant::now();
    const EPS: f64 = 1e-3;
    let mut rng = seeded_rng(9);
    let mut problems = Vec::new();
    let mut margin = f64::INFINITY;
    for k in 0..50 {
        let fam = if k % 2 == 0 {
            random_family(&mut rng, 8)
        } else {
            let crossing = rng.random_range(0.2..0.8);
            crossing_family(&mut rng, 8, crossing)
        };
        let out = match dress_path(&fam, None, None, EPS) {
            Ok(out) => out,
            Err(e) => {
                problems.push(format!("family {k}: {e}"));
                continue;
            }
        };
        let lowest = |t: f64| hermitian_eigen(&fam.at(t)).0[0];
        let grid_max = (0..=2000).map(|i| lowest(i as f64 / 2000.0)).fold(f64::NEG_INFINITY, f64::max);
        let max_e = out.nodes.iter().map(|n| lowest(n.t)).fold(grid_max, f64::max);
        for node in &out.nodes {
            let x = CVector::from_iterator(node.state.len(), node.state.iter().map(|z| Complex::new(z[0], z[1])));
            let rayleigh = x.dotc(&(fam.at(node.t) * &x)).re / x.norm_squared();
            margin = margin.min(max_e + EPS - rayleigh);
            if !(rayleigh <= max_e + EPS) {
                problems.push(format!("family {k} t {}: Rayleigh {rayleigh} above {max_e} + eps", node.t));
            }
            if !((x.norm() - 1.0).abs() < 1e-10) {
                problems.push(format!("family {k} t {}: norm {}", node.t, x.norm()));
            }
        }
    }
    let summary = format!("50 families, smallest margin below max E + eps {margin:.3e}");
    verdict(9, "path dressing", started, Some(Duration::from_secs(60)), &summary, problems);
}

/// Finite-difference Hessian restricted to the complement of the common spin
/// about the separation axis and each axial quadrupole's own spin.
fn reduced_fd_spectrum(s: &EnergySurface, tau: &Config) -> Vec<f64> {
    let h = riem_hess(|c: &Config| s.energy(c).unwrap(), tau, 1e-3).unwrap();
    let h = (h + h.transpose()) * 0.5;
    let wu = tau.u.inverse().apply(&Vector3::x());
    let wv = tau.v.inverse().apply(&Vector3::x());
    let spins = [
        SVector::<f64, 7>::from_column_slice(&[0.0, wu.x, wu.y, wu.z, wv.x, wv.y, wv.z]),
        SVector::<f64, 7>::from_column_slice(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        SVector::<f64, 7>::from_column_slice(&[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
    ];
    let mut basis: Vec<SVector<f64, 7>> = Vec::new();
    for mut t in spins.into_iter().chain((0..7).map(|k| SVector::<f64, 7>::ith(k, 1.0))) {
        for b in &basis {
            t -= b * b.dot(&t);
        }
        if t.norm() > 1e-6 {
            basis.push(t.normalize());
        }
    }
    let complement = SMatrix::<f64, 7, 4>::from_columns(&basis[3..7]);
    let reduced = complement.transpose() * h * complement;
    let mut eig: Vec<f64> = SymmetricEigen::new(reduced).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    eig
}

#[test]
fn criterion_10_transition_state_morse_count() {
    let started = Instant::now();
    let s = quadrupole_test_model().surface().unwrap();
    let (a, b) = t_shapes();
    let init = DiscretePath::geodesic(&s, &a, &b, 64).unwrap();
    let r = minmax_optimize(&s, &init, &MinmaxOptions { iters: 500, ..MinmaxOptions::default() }).unwrap();
    let ts = transition_state(&s, &r.path).unwrap();
    let fd = reduced_fd_spectrum(&s, &ts.tau);
    let scale = fd.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let fd_negative = fd.iter().filter(|&&e| e < -1e-6 * scale).count();
    let mut problems = Vec::new();
    if !ts.refined {
        problems.push(format!("saddle not refined, gradient {}", ts.grad_norm));
    }
    if ts.negative_count != 1 {
        problems.push(format!("{} negative eigenvalues in {:?}", ts.negative_count, ts.reduced_spectrum));
    }
    if fd_negative != 1 {
        problems.push(format!("finite-difference oracle finds {fd_negative} negative eigenvalues in {fd:?}"));
    }
    for sign in [1.0, -1.0] {
        let step: Vec<f64> = ts.lowest_mode.iter().map(|c| sign * 0.05 * c).collect();
        if !(s.energy(&retract_config(&ts.tau, &step)).unwrap() < ts.energy) {
            problems.push(format!("energy does not drop along {sign:+} lowest mode"));
        }
    }
    let summary = format!(
        "E = {:.6}, gradient {:.1e}, {} symmetry modes, reduced spectrum {:.4?}, oracle {:.4?}",
        ts.energy, ts.grad_norm, ts.symmetry_modes, ts.reduced_spectrum, fd
    );
    verdict(10, "transition-state Morse count", started, None, &summary, problems);
}
