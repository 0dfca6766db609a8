use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spinelink_core::features::path::{path_cost_units, units_to_cost};
use spinelink_core::features::path_cost;
use spinelink_core::volume::{Connectivity, ProbabilityGrid, Voxel, VoxelResolution, Window};

/// Relax every edge until nothing changes.
fn bellman_ford(grid: &ProbabilityGrid<f64>, window: &Window, start: &[Voxel], goal: &[Voxel]) -> u64 {
    let ext = window.extent();
    let lo = window.lo;
    let n = ext[0] * ext[1] * ext[2];
    let at = |i: usize| [lo[0] + i % ext[0], lo[1] + (i / ext[0]) % ext[1], lo[2] + i / (ext[0] * ext[1])];
    let idx = |v: Voxel| (v[0] - lo[0]) + ext[0] * ((v[1] - lo[1]) + ext[1] * (v[2] - lo[2]));
    let p = grid.resolution().pitch();
    let mut dist = vec![u64::MAX; n];
    for &s in start {
        if window.contains(s) {
            dist[idx(s)] = 0;
        }
    }
    loop {
        let mut changed = false;
        for i in 0..n {
            if dist[i] == u64::MAX {
                continue;
            }
            let v = at(i);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx, dy, dz) == (0, 0, 0) {
                            continue;
                        }
                        let u = [v[0] as i64 + dx, v[1] as i64 + dy, v[2] as i64 + dz];
                        if u.iter().any(|&c| c < 0) {
                            continue;
                        }
                        let u = u.map(|c| c as usize);
                        if !window.contains(u) {
                            continue;
                        }
                        let len = ((dx as f64 * p[0]).powi(2) + (dy as f64 * p[1]).powi(2) + (dz as f64 * p[2]).powi(2)).sqrt();
                        let mean = ((grid.get(v) + grid.get(u)) / 2.0).max(1e-6);
                        let w = ((len * mean * 1e9).round() as u64).max(1);
                        let j = idx(u);
                        if dist[i] + w < dist[j] {
                            dist[j] = dist[i] + w;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    goal.iter().filter(|g| window.contains(**g)).map(|g| dist[idx(*g)]).min().unwrap_or(u64::MAX)
}

fn random_set(rng: &mut ChaCha8Rng, dims: [usize; 3], n: usize) -> Vec<Voxel> {
    (0..n).map(|_| [rng.random_range(0..dims[0]), rng.random_range(0..dims[1]), rng.random_range(0..dims[2])]).collect()
}

#[test]
fn dijkstra_equals_bellman_ford_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let dims = [20, 20, 5];
    let res = VoxelResolution::new(4.0, 4.0, 40.0).unwrap();
    let mut disconnected = 0;
    for case in 0..50 {
        let data: Vec<f64> = (0..2000)
            .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) })
            .collect();
        let grid = ProbabilityGrid::from_vec(dims, data, res).unwrap();
        let window = if case % 5 == 4 {
            Window::new([rng.random_range(0..20), rng.random_range(0..20), 2], [3, 3, 1], dims).unwrap()
        } else {
            Window::full(dims)
        };
        let (ns, ng) = (rng.random_range(1..4), rng.random_range(1..4));
        let start = random_set(&mut rng, dims, ns);
        let goal = random_set(&mut rng, dims, ng);
        let oracle = bellman_ford(&grid, &window, &start, &goal);
        let got = path_cost_units(&start, &[goal.clone()], &grid, &window, Connectivity::Full26).unwrap()[0];
        assert_eq!(got, oracle, "case {case}");
        let cost: f64 = path_cost(&start, &goal, &grid, &window, Connectivity::Full26).unwrap();
        assert_eq!(cost, units_to_cost::<f64>(oracle));
        disconnected += usize::from(oracle == u64::MAX);
        if oracle == u64::MAX {
            assert!(cost.is_infinite());
        }
    }
    assert!(disconnected > 0, "no case exercised the unreachable sentinel");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn path_cost_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [9, 8, 4];
        let res = VoxelResolution::new(3.0, 5.0, 30.0).unwrap();
        let data: Vec<f32> = (0..9 * 8 * 4).map(|_| rng.random_range(0.0..1.0)).collect();
        let grid = ProbabilityGrid::from_vec(dims, data, res.cast()).unwrap();
        let a = random_set(&mut rng, dims, 3);
        let b = random_set(&mut rng, dims, 2);
        let w = Window::full(dims);
        prop_assert_eq!(
            path_cost(&a, &b, &grid, &w, Connectivity::Full26).unwrap(),
            path_cost(&b, &a, &grid, &w, Connectivity::Full26).unwrap()
        );
    }
}
