use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use spinelink_cli::report::Report;
use spinelink_cli::{execute, Layout, RunConfig, PIPELINE};
use spinelink_core::assignment::Assignment;
use spinelink_core::classifier::make_folds;
use spinelink_core::features::path::path_cost_units;
use spinelink_core::features::{read_feature_table, rank_features, RawFeatures, N_RAW};
use spinelink_core::grammar::{allowed_transition, validate_chain, GrammarSymbol::*};
use spinelink_core::linker::CandidateTree;
use spinelink_core::metrics::{build_line_graph, f_beta, simulate_fragmentation, simulate_proofreading, ConfusionCounts, GraphContext};
use spinelink_core::synthgen::{generate_phantom, PhantomConfig};
use spinelink_core::volume::{
    read_manifest, read_volume, write_volume, Connectivity, LabelVolume, Manifest, ObjectEntry, ProbabilityGrid, SynapseRecord,
    Voxel, VoxelResolution, Window,
};
use spinelink_core::workflow::{spine_groups, training_examples};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    check(t < limit, format!("took {t:.2?}, limit {limit:?}"))
}

fn c1_f_beta() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (tp, fp, fn_) = (rng.random_range(1..200i64), rng.random_range(0..200i64), rng.random_range(0..200i64));
        let got: f64 = f_beta(ConfusionCounts::new(tp, fp, fn_).unwrap(), 1.0).map_err(|e| e.to_string())?;
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fn_) as f64;
        worst = worst.max((got - 2.0 * p * r / (p + r)).abs());
    }
    check(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    let c = ConfusionCounts::new(8, 2, 4).unwrap();
    check(f_beta(c, Ratio::from_integer(1i64)) == Ok(Ratio::new(16, 22)), "beta=1 worked example")?;
    check(f_beta(c, Ratio::from_integer(2i64)) == Ok(Ratio::new(40, 58)), "beta=2 worked example")?;
    within(start, Duration::from_secs(1))?;
    Ok(format!("max |f1 - 2PR/(P+R)| = {worst:.1e}, 16/22 and 40/58 exact"))
}

struct Micro {
    objects: Vec<ObjectEntry>,
    synapses: Vec<SynapseRecord<f64>>,
    assignment: Assignment,
}

/// At most 2 shaft units, 2 axon units and 2 spines, so at most 6 units.
fn micro(rng: &mut ChaCha8Rng) -> Micro {
    let mut objects = Vec::new();
    let mut id = 1;
    let mut take = |symbol, group_id, objects: &mut Vec<ObjectEntry>| {
        objects.push(ObjectEntry { id, symbol, group_id });
        id += 1;
        id - 1
    };
    let shafts: Vec<u64> = (0..rng.random_range(1..4)).map(|_| take(Shaft, 10 + rng.random_range(0..2), &mut objects)).collect();
    let axons: Vec<u64> = (0..rng.random_range(1..4))
        .map(|_| {
            let s = if rng.random_bool(0.5) { Axon } else { Bouton };
            take(s, 20 + rng.random_range(0..2), &mut objects)
        })
        .collect();
    let spines: Vec<u64> = (0..rng.random_range(0..3)).map(|i| take(Spine, 30 + i, &mut objects)).collect();
    let mut assignment = Assignment::new();
    for &s in &spines {
        match rng.random_range(0..3) {
            0 => assignment.unassign(s),
            1 => {}
            _ => assignment.link(s, shafts[rng.random_range(0..shafts.len())]),
        }
    }
    let dendritic: Vec<u64> = spines.iter().chain(&shafts).copied().collect();
    let synapses = (0..rng.random_range(0..=10u64))
        .map(|i| SynapseRecord {
            id: 100 + i,
            centroid: [0.0; 3],
            spine_id: dendritic[rng.random_range(0..dendritic.len())],
            axon_side_id: axons[rng.random_range(0..axons.len())],
        })
        .collect();
    Micro { objects, synapses, assignment }
}

/// All pairs of synapses, connected when any endpoint objects are reachable
/// through same-group non-spine objects or assignment links.
fn brute_edges(m: &Micro) -> (BTreeSet<(u64, u64)>, usize) {
    let ids: Vec<u64> = m.objects.iter().map(|o| o.id).collect();
    let adjacent = |a: &ObjectEntry, b: &ObjectEntry| {
        (a.group_id == b.group_id && a.symbol != Spine && b.symbol != Spine)
            || m.assignment.shaft_of(a.id) == Some(b.id)
            || m.assignment.shaft_of(b.id) == Some(a.id)
    };
    let mut comp: BTreeMap<u64, usize> = BTreeMap::new();
    let mut n_units = 0;
    for &s in &ids {
        if comp.contains_key(&s) {
            continue;
        }
        let mut q = VecDeque::from([s]);
        comp.insert(s, n_units);
        while let Some(v) = q.pop_front() {
            let ov = m.objects.iter().find(|o| o.id == v).unwrap();
            for ou in &m.objects {
                if !comp.contains_key(&ou.id) && adjacent(ov, ou) {
                    comp.insert(ou.id, n_units);
                    q.push_back(ou.id);
                }
            }
        }
        n_units += 1;
    }
    let mut edges = BTreeSet::new();
    for a in &m.synapses {
        for b in &m.synapses {
            let ea = [comp[&a.spine_id], comp[&a.axon_side_id]];
            let eb = [comp[&b.spine_id], comp[&b.axon_side_id]];
            if a.id < b.id && ea.iter().any(|x| eb.contains(x)) {
                edges.insert((a.id, b.id));
            }
        }
    }
    (edges, n_units)
}

fn c2_line_graph() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut total_edges = 0;
    for case in 0..200 {
        let m = micro(&mut rng);
        let (oracle, units) = brute_edges(&m);
        check(units <= 6 && m.synapses.len() <= 10, format!("case {case} exceeds the instance bounds"))?;
        let g = build_line_graph(&m.assignment, &m.synapses, &m.objects).map_err(|e| e.to_string())?;
        check(g.edges == oracle, format!("case {case}: {:?} != {:?}", g.edges, oracle))?;
        total_edges += oracle.len();
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("200 instances, {total_edges} edges, all equal"))
}

fn bellman_ford(grid: &ProbabilityGrid<f64>, window: &Window, start: &[Voxel], goal: &[Voxel]) -> u64 {
    let ext = window.extent();
    let lo = window.lo;
    let idx = |v: Voxel| (v[0] - lo[0]) + ext[0] * ((v[1] - lo[1]) + ext[1] * (v[2] - lo[2]));
    let cells: Vec<Voxel> = (0..ext[2])
        .flat_map(|z| (0..ext[1]).flat_map(move |y| (0..ext[0]).map(move |x| [lo[0] + x, lo[1] + y, lo[2] + z])))
        .collect();
    let p = grid.resolution().pitch();
    let mut dist = vec![u64::MAX; cells.len()];
    for &s in start.iter().filter(|s| window.contains(**s)) {
        dist[idx(s)] = 0;
    }
    let mut changed = true;
    while changed {
        changed = false;
        for &v in &cells {
            let dv = dist[idx(v)];
            if dv == u64::MAX {
                continue;
            }
            for d in (0..27).filter(|&d| d != 13) {
                let off = [d % 3, (d / 3) % 3, d / 9].map(|c| c as i64 - 1);
                let u = [0, 1, 2].map(|k| v[k] as i64 + off[k]);
                if u.iter().any(|&c| c < 0) || !window.contains(u.map(|c| c as usize)) {
                    continue;
                }
                let u = u.map(|c| c as usize);
                let len = (0..3).map(|k| (off[k] as f64 * p[k]).powi(2)).sum::<f64>().sqrt();
                let w = ((len * ((grid.get(v) + grid.get(u)) / 2.0).max(1e-6) * 1e9).round() as u64).max(1);
                if dv + w < dist[idx(u)] {
                    dist[idx(u)] = dv + w;
                    changed = true;
                }
            }
        }
    }
    goal.iter().filter(|g| window.contains(**g)).map(|g| dist[idx(*g)]).min().unwrap_or(u64::MAX)
}

fn c3_dijkstra() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = [20, 20, 5];
    let res = VoxelResolution::new(5.0, 5.0, 45.0).unwrap();
    let mut unreachable = 0;
    for case in 0..50 {
        let data: Vec<f64> = (0..2000).map(|_| if rng.random_bool(0.15) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let grid = ProbabilityGrid::from_vec(dims, data, res).unwrap();
        let window = if case % 4 == 3 {
            Window::new([rng.random_range(0..20), rng.random_range(0..20), 2], [2, 3, 1], dims).unwrap()
        } else {
            Window::full(dims)
        };
        let pick = |rng: &mut ChaCha8Rng| -> Vec<Voxel> {
            let n = rng.random_range(1..4);
            (0..n).map(|_| [rng.random_range(0..20), rng.random_range(0..20), rng.random_range(0..5)]).collect()
        };
        let (s, g) = (pick(&mut rng), pick(&mut rng));
        let oracle = bellman_ford(&grid, &window, &s, &g);
        let got = path_cost_units(&s, &[g], &grid, &window, Connectivity::Full26).map_err(|e| e.to_string())?[0];
        check(got == oracle, format!("case {case}: {got} != {oracle}"))?;
        unreachable += usize::from(oracle == u64::MAX);
    }
    check(unreachable > 0, "no disconnected case exercised")?;
    within(start, Duration::from_secs(30))?;
    Ok(format!("50 grids equal, {unreachable} disconnected cases share the sentinel"))
}

fn c4_grammar() -> Outcome {
    let symbols = [CellBody, Axon, Shaft, Spine, Bouton, Synapse, VolumeEdge];
    let productions = [
        (CellBody, Axon),
        (CellBody, Shaft),
        (CellBody, Synapse),
        (CellBody, VolumeEdge),
        (Axon, Bouton),
        (Axon, VolumeEdge),
        (Shaft, Spine),
        (Shaft, Synapse),
        (Shaft, VolumeEdge),
        (Bouton, Synapse),
        (Bouton, VolumeEdge),
        (Spine, Synapse),
        (Spine, VolumeEdge),
    ];
    let mut unordered_true = BTreeSet::new();
    for a in symbols {
        for b in symbols {
            let expect = a == b || productions.contains(&(a, b)) || productions.contains(&(b, a));
            check(allowed_transition(a, b) == expect, format!("{a}-{b}"))?;
            if expect {
                unordered_true.insert((a.min(b), a.max(b)));
            }
        }
    }
    check(unordered_true.len() == 20, format!("{} true pairs", unordered_true.len()))?;
    let chain = [Synapse, Bouton, Axon, CellBody, Shaft, Spine, Synapse];
    check(validate_chain(&chain) == Ok(true), "Y-B-A-C-D-S-Y rejected")?;
    check(validate_chain(&[Spine, Axon]) == Ok(false), "S-A accepted")?;
    Ok("49 pairs, 13 productions + 7 self pairs, chain valid, S-A rejected".into())
}

fn c5_fragmentation() -> Outcome {
    let start = Instant::now();
    let fractions: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let mut summary = Vec::new();
    for seed in 1..=5u64 {
        let p = generate_phantom(&PhantomConfig::<f64> { seed, ..Default::default() }).map_err(|e| e.to_string())?;
        let n_spines = p.spine_ids().len();
        check(n_spines >= 50, format!("seed {seed}: {n_spines} spines"))?;
        let ctx = GraphContext { synapses: &p.manifest.synapses, objects: &p.manifest.objects, truth: &p.truth };
        let curve = simulate_fragmentation(&ctx, &fractions, 100, seed).map_err(|e| e.to_string())?;
        check(curve.points[0].mean_f1 == 1.0, format!("seed {seed}: f1(0) = {}", curve.points[0].mean_f1))?;
        for w in curve.points.windows(2) {
            check(w[1].mean_f1 <= w[0].mean_f1, format!("seed {seed}: rises at fraction {}", w[1].fraction))?;
        }
        summary.push(format!("{:.3}", curve.points.last().unwrap().mean_f1));
    }
    within(start, Duration::from_secs(120))?;
    Ok(format!("5 seeds non-increasing, f1(1.0) = [{}]", summary.join(", ")))
}

fn c6_degree_collapse() -> Outcome {
    let p = generate_phantom(&PhantomConfig::<f64>::default()).map_err(|e| e.to_string())?;
    let spines: BTreeSet<u64> = p.spine_ids().into_iter().collect();
    check(p.manifest.synapses.iter().all(|s| spines.contains(&s.spine_id)), "a synapse is not spine-mediated")?;
    let truth = build_line_graph(&p.truth, &p.manifest.synapses, &p.manifest.objects).map_err(|e| e.to_string())?;
    let mut detached = Assignment::new();
    for &s in &spines {
        detached.unassign(s);
    }
    let cut = build_line_graph(&detached, &p.manifest.synapses, &p.manifest.objects).map_err(|e| e.to_string())?;
    let group: BTreeMap<u64, u64> = p.manifest.objects.iter().map(|o| (o.id, o.group_id)).collect();
    let syn = &p.manifest.synapses;
    let mut oracle = 0;
    for (i, a) in syn.iter().enumerate() {
        for b in &syn[i + 1..] {
            oracle += usize::from(group[&a.axon_side_id] == group[&b.axon_side_id] || a.spine_id == b.spine_id);
        }
    }
    check(cut.edge_count() == oracle, format!("{} detached edges, oracle {oracle}", cut.edge_count()))?;
    let ratio = truth.average_degree() / cut.average_degree();
    check(ratio >= 3.0, format!("degree ratio {ratio:.2}"))?;
    Ok(format!(
        "degree {:.2} -> {:.2} (x{ratio:.2}), {} detached edges equal the axon-side oracle",
        truth.average_degree(),
        cut.average_degree(),
        oracle
    ))
}

fn run_pipeline(dir: &Path) -> Result<(), String> {
    let cfg = RunConfig { data_dir: Some(dir.to_path_buf()), ..Default::default() };
    execute(&PIPELINE, &cfg, false).map(|_| ()).map_err(|e| e.to_string())
}

fn c7_linking(dir: &Path) -> Outcome {
    let start = Instant::now();
    run_pipeline(dir)?;
    let report: Report = serde_json::from_str(&std::fs::read_to_string(Layout::new(dir).report_json()).unwrap()).unwrap();
    let c = &report.classifier;
    let b = &report.nearest_baseline;
    let rate = |r: &spinelink_core::linker::TopKReport, k| r.rows.iter().find(|row| row.k == k).unwrap().rate;
    check(c.n_spines >= 50, format!("{} trees", c.n_spines))?;
    check(c.truth_in_window_rate >= 0.95, format!("in window {:.3}", c.truth_in_window_rate))?;
    check(rate(c, 1) >= 0.70, format!("top-1 {:.3}", rate(c, 1)))?;
    check(rate(c, 3) >= 0.90, format!("top-3 {:.3}", rate(c, 3)))?;
    check(rate(c, 1) >= rate(b, 1), format!("top-1 {:.3} below baseline {:.3}", rate(c, 1), rate(b, 1)))?;
    within(start, Duration::from_secs(300))?;
    Ok(format!(
        "{} trees, in window {:.3}, top-1 {:.3}, top-3 {:.3}, baseline top-1 {:.3}",
        c.n_spines,
        c.truth_in_window_rate,
        rate(c, 1),
        rate(c, 3),
        rate(b, 1)
    ))
}

fn c8_proofreading(dir: &Path) -> Outcome {
    let l = Layout::new(dir);
    let trees: Vec<CandidateTree<f64>> = serde_json::from_str(&std::fs::read_to_string(l.trees()).unwrap()).unwrap();
    let manifest: Manifest<f64> = read_manifest(l.fragmented().manifest).map_err(|e| e.to_string())?;
    let truth: Assignment = serde_json::from_str(&std::fs::read_to_string(l.fragmented().truth).unwrap()).unwrap();
    let ctx = GraphContext { synapses: &manifest.synapses, objects: &manifest.objects, truth: &truth };
    let max = trees.iter().map(|t| t.candidates.len()).max().unwrap_or(0);
    let ks: Vec<usize> = (0..=max).collect();
    let points = simulate_proofreading(&ctx, &trees, &ks).map_err(|e| e.to_string())?;
    for w in points.windows(2) {
        check(w[1].f1 >= w[0].f1, format!("f1 drops at k = {}", w[1].k))?;
    }
    let all_in = trees.iter().all(|t| t.candidates.iter().any(|c| truth.shaft_of(t.spine_id) == Some(c.shaft_id)));
    let last = points.last().unwrap().f1;
    if all_in {
        check(last == 1.0, format!("f1 {last} at k = {max}"))?;
    }
    let report: Report = serde_json::from_str(&std::fs::read_to_string(l.report_json()).unwrap()).unwrap();
    let row = |m: &str| report.graph.iter().find(|r| r.method == m).unwrap().f1;
    let (auto, none) = (row("spanning forest"), row("all detached"));
    check(auto > none, format!("automated {auto:.4} not above detached {none:.4}"))?;
    Ok(format!("k = 0..{max} non-decreasing, f1({max}) = {last}, automated {auto:.4} > detached {none:.4}"))
}

const REPORT_FILES: [&str; 13] = [
    "candidates.json",
    "features.csv",
    "model.json",
    "scores.csv",
    "trees.json",
    "assignment.json",
    "ranked.csv",
    "report.json",
    "report.md",
    "topk.csv",
    "graph_f1.csv",
    "curve.csv",
    "curve.svg",
];

fn c9_determinism(first: &Path, second: &Path) -> Outcome {
    run_pipeline(second)?;
    for f in REPORT_FILES {
        let a = std::fs::read(first.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(second.join(f)).map_err(|e| format!("{f}: {e}"))?;
        check(a == b, format!("{f} differs between runs"))?;
    }
    let l = Layout::new(first);
    let rows = read_feature_table::<f64, _>(std::fs::File::open(l.features()).unwrap()).map_err(|e| e.to_string())?;
    let manifest: Manifest<f64> = read_manifest(l.fragmented().manifest).map_err(|e| e.to_string())?;
    let truth: Assignment = serde_json::from_str(&std::fs::read_to_string(l.fragmented().truth).unwrap()).unwrap();
    let examples = training_examples(&rows, &spine_groups(&manifest, Some(&truth)));
    let plan = make_folds(&examples).map_err(|e| e.to_string())?;
    for (k, fold) in plan.folds.iter().enumerate() {
        check(fold.train_groups.is_disjoint(&fold.test_groups), format!("fold {k} leaks"))?;
        let test: BTreeSet<u64> = examples.iter().filter(|e| fold.test_groups.contains(&e.group_id)).map(|e| e.spine_id).collect();
        let train: BTreeSet<u64> = examples.iter().filter(|e| fold.train_groups.contains(&e.group_id)).map(|e| e.spine_id).collect();
        check(test.is_disjoint(&train), format!("fold {k} shares spines"))?;
    }
    let mut by_spine: BTreeMap<u64, Vec<[f64; N_RAW]>> = BTreeMap::new();
    for r in &rows {
        by_spine.entry(r.spine_id).or_default().push(r.values[..N_RAW].try_into().unwrap());
    }
    let transforms: [fn(f64) -> f64; 2] = [|x| 2.0 * x + 1.0, |x| x * x * x];
    let mut checked = 0;
    for raws in by_spine.values() {
        let base = rank_features(&raws.iter().map(|a| RawFeatures::from_array(*a)).collect::<Vec<_>>());
        for col in 0..N_RAW {
            for t in transforms {
                let moved: Vec<RawFeatures<f64>> = raws
                    .iter()
                    .map(|a| {
                        let mut a = *a;
                        a[col] = t(a[col]);
                        RawFeatures::from_array(a)
                    })
                    .collect();
                check(rank_features(&moved) == base, format!("ranks moved under a transform of column {col}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{} files byte-identical, {} folds disjoint, {checked} rank checks exact",
        REPORT_FILES.len(),
        plan.folds.len()
    ))
}

fn c10_format() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sha = |p: &Path| Sha256::digest(std::fs::read(p).unwrap()).to_vec();
    for case in 0..20 {
        let dims = match case {
            0 => [1, 1, 1],
            1 => [7, 3, 2],
            2 => [1, 9, 4],
            _ => [rng.random_range(1..24), rng.random_range(1..24), rng.random_range(1..12)],
        };
        let n = dims.iter().product();
        let res = VoxelResolution::new(rng.random_range(1.0..10.0), rng.random_range(1.0..10.0), rng.random_range(20.0..60.0)).unwrap();
        let data = (0..n).map(|_| if rng.random_bool(0.5) { rng.random::<u64>() >> rng.random_range(0..64) } else { 0 }).collect();
        let vol = LabelVolume::from_vec(dims, data, res).unwrap();
        let (a, b) = (dir.path().join("a.sntg"), dir.path().join("b.sntg"));
        write_volume(&vol, &a).map_err(|e| e.to_string())?;
        let back: LabelVolume<f64> = read_volume(&a).map_err(|e| e.to_string())?;
        write_volume(&back, &b).map_err(|e| e.to_string())?;
        check(back.dims() == dims && back.as_slice() == vol.as_slice(), format!("case {case}: contents differ"))?;
        check(sha(&a) == sha(&b), format!("case {case}: hashes differ"))?;
    }
    Ok("20 volumes, write(read(write(v))) hash-identical".into())
}

fn main() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 f-beta", Box::new(c1_f_beta)),
        ("2 line graph oracle", Box::new(c2_line_graph)),
        ("3 path cost oracle", Box::new(c3_dijkstra)),
        ("4 grammar table", Box::new(c4_grammar)),
        ("5 fragmentation curve", Box::new(c5_fragmentation)),
        ("6 degree collapse", Box::new(c6_degree_collapse)),
        ("7 linking quality", Box::new(|| c7_linking(first.path()))),
        ("8 proofreading", Box::new(|| c8_proofreading(first.path()))),
        ("9 determinism and leakage", Box::new(|| c9_determinism(first.path(), second.path()))),
        ("10 format round trip", Box::new(c10_format)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("criterion {name:<28} PASS  {t:>9.2?}  {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {name:<28} FAIL  {t:>9.2?}  {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
