mod common;

use common::*;
use panoptic_core::imagecore::{InstanceMap, LabeledInstances, Raster, SemanticMap};
use panoptic_core::metrics::evaluate;
use panoptic_core::postprocess::*;
use panoptic_core::rng;
use proptest::prelude::*;
use rand::Rng;

fn plane(h: usize, w: usize, data: Vec<f64>) -> Raster<f64> {
    Raster::from_vec(h, w, 1, data).unwrap()
}

fn ws_cfg(classes: usize, seed: f64, fg: f64, min_seed: usize) -> WatershedConfig {
    WatershedConfig { seed: vec![seed; classes], foreground: vec![fg; classes], min_seed_area: min_seed }
}

/// Minimax path costs by fixed-point relaxation. For each seed label, the
/// cost of reaching pixel q is the smallest, over 8-connected foreground
/// paths from that seed, of the highest elevation on the path before q.
/// Returns the label with the unique smallest cost per pixel, or `None`
/// where costs tie or no seed reaches.
fn minimax_oracle(elev: &[f64], fg: &[bool], seeds: &InstanceMap) -> Vec<Option<u32>> {
    let (h, w) = (seeds.height(), seeds.width());
    let labels = seeds.ids();
    let nbrs = |i: usize| {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        let mut v = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if (dy, dx) != (0, 0) && ny >= 0 && nx >= 0 && ny < h as isize && nx < w as isize {
                    v.push(ny as usize * w + nx as usize);
                }
            }
        }
        v
    };
    let mut costs = Vec::new();
    for &l in &labels {
        // inclusive cost: max elevation along the best path including the pixel
        let mut inc = vec![f64::INFINITY; h * w];
        for i in 0..h * w {
            if seeds.labels()[i] == l {
                inc[i] = elev[i];
            }
        }
        loop {
            let mut changed = false;
            for i in 0..h * w {
                if !fg[i] || seeds.labels()[i] != 0 {
                    continue;
                }
                let best = nbrs(i).into_iter().map(|n| inc[n]).fold(f64::INFINITY, f64::min);
                let c = best.max(elev[i]);
                if c < inc[i] {
                    inc[i] = c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        let exc: Vec<f64> = (0..h * w).map(|i| nbrs(i).into_iter().map(|n| inc[n]).fold(f64::INFINITY, f64::min)).collect();
        costs.push(exc);
    }
    (0..h * w)
        .map(|i| {
            if seeds.labels()[i] != 0 {
                return Some(seeds.labels()[i]);
            }
            if !fg[i] {
                return None;
            }
            let mut order: Vec<(f64, u32)> = labels.iter().zip(&costs).map(|(&l, c)| (c[i], l)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0));
            match order.as_slice() {
                [] => None,
                [(c, l)] => c.is_finite().then_some(*l),
                [(c0, l0), (c1, _), ..] => (c0.is_finite() && c0 < c1).then_some(*l0),
            }
        })
        .collect()
}

fn check_against_oracle(p_int: &Raster<f64>, p_bnd: &Raster<f64>, cfg: &WatershedConfig) -> usize {
    let (h, w) = (p_int.height(), p_int.width());
    let cm = SemanticMap::from_vec(h, w, cfg.seed.len(), vec![1; h * w]).unwrap();
    let out = watershed_instances(p_int, p_bnd, &cm, cfg).unwrap();
    let sd = seeds(p_int, &cm, cfg).unwrap();
    let elev: Vec<f64> = p_int.data().iter().map(|v| -v).collect();
    let fg: Vec<bool> = (0..h * w).map(|i| p_int.data()[i] + p_bnd.data()[i] >= cfg.foreground[1]).collect();
    let oracle = minimax_oracle(&elev, &fg, &sd);
    let mut checked = 0;
    for i in 0..h * w {
        let l = out.labels()[i];
        assert!(l == 0 || fg[i], "labeled pixel {i} outside foreground");
        if sd.labels()[i] != 0 {
            assert_eq!(l, sd.labels()[i], "seed pixel {i} relabeled");
        }
        if !fg[i] {
            continue;
        }
        if let Some(want) = oracle[i] {
            assert_eq!(l, want, "pixel {i}");
            checked += 1;
        }
    }
    checked
}

#[test]
fn two_bumps_split_at_the_valley_ridge() {
    let (h, w) = (9, 9);
    let bump = |y: f64, x: f64, cy: f64, cx: f64| (-((y - cy).powi(2) + (x - cx).powi(2)) / 3.0).exp();
    let data: Vec<f64> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            0.95 * bump(y, x, 4.0, 1.5).max(bump(y, x, 4.0, 6.5))
        })
        .collect();
    let p_int = plane(h, w, data);
    let p_bnd = plane(h, w, vec![0.1; h * w]);
    let cfg = ws_cfg(2, 0.7, 0.3, 2);
    let out = watershed_instances(&p_int, &p_bnd, &SemanticMap::from_vec(h, w, 2, vec![1; h * w]).unwrap(), &cfg).unwrap();
    assert_eq!(out.num_instances(), 2);
    assert_ne!(out.get(4, 1), out.get(4, 7));
    let checked = check_against_oracle(&p_int, &p_bnd, &cfg);
    assert!(checked > 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn watershed_matches_minimax_oracle(seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let (h, w) = (9, 9);
        // smooth-ish random field: sum of a few random bumps plus noise
        let bumps: Vec<(f64, f64, f64)> = (0..r.random_range(1..5)).map(|_| (r.random_range(0.0..9.0), r.random_range(0.0..9.0), r.random_range(0.5..1.0))).collect();
        let data: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let v = bumps.iter().map(|&(cy, cx, a)| a * (-((y - cy).powi(2) + (x - cx).powi(2)) / 4.0).exp()).fold(0.0, f64::max);
                (v + r.random_range(0.0..0.05)).min(1.0)
            })
            .collect();
        let p_int = plane(h, w, data);
        let p_bnd = plane(h, w, (0..h * w).map(|_| r.random_range(0.0..0.2)).collect());
        check_against_oracle(&p_int, &p_bnd, &ws_cfg(2, 0.6, 0.3, 1));
    }

    /// Raising the seed threshold shrinks the seed pixel set.
    #[test]
    fn higher_seed_threshold_keeps_seed_pixels_nested(seed in any::<u64>(), t in 0.3f64..0.7, dt in 0.0f64..0.3) {
        let mut r = rng::seeded(seed);
        let p = plane(8, 8, (0..64).map(|_| r.random::<f64>()).collect());
        let cm = SemanticMap::from_vec(8, 8, 2, vec![1; 64]).unwrap();
        let lo = seeds(&p, &cm, &ws_cfg(2, t, 0.1, 1)).unwrap();
        let hi = seeds(&p, &cm, &ws_cfg(2, t + dt, 0.1, 1)).unwrap();
        for i in 0..64 {
            prop_assert!(hi.labels()[i] == 0 || lo.labels()[i] != 0);
        }
    }

    #[test]
    fn filter_is_idempotent(seed in any::<u64>(), min_area in 1usize..6, sol in 0.0f64..1.0, fill in any::<bool>()) {
        let mut r = rng::seeded(seed);
        let li = random_instances(&mut r, 10, 10, 6, 5, 3);
        let cfg = FilterConfig { min_area: vec![min_area; 3], max_area: vec![40; 3], min_solidity: vec![sol; 3] };
        let stages = FilterStages { fill_holes: fill, size: true, solidity: true };
        let once = filter_instances(&li.map, &li.classes, &cfg, stages).unwrap();
        let twice = filter_instances(&once, &li.classes, &cfg, stages).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn class_assignment_matches_brute_force_and_ignores_global_scale(seed in any::<u64>(), exp in -4i32..5) {
        let mut r = rng::seeded(seed);
        let li = random_instances(&mut r, 6, 6, 4, 4, 2);
        let c = 4;
        let mut probs = Raster::<f64>::zeros(6, 6, c);
        for i in 0..36 {
            let raw: Vec<f64> = (0..c).map(|_| r.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            probs.pixel_mut(i).iter_mut().zip(&raw).for_each(|(p, v)| *p = v / s);
        }
        let got = assign_classes(&li.map, &probs).unwrap();
        for l in li.map.ids() {
            let sums: Vec<f64> = (1..c).map(|k| (0..36).filter(|&i| li.map.labels()[i] == l).map(|i| probs.pixel(i)[k]).sum()).collect();
            let mut best = 0;
            for k in 1..sums.len() {
                if sums[k] > sums[best] {
                    best = k;
                }
            }
            prop_assert_eq!(got[&l] as usize, best + 1);
        }
        let factor = 2f64.powi(exp);
        let mut scaled = probs.clone();
        scaled.data_mut().iter_mut().for_each(|v| *v *= factor);
        prop_assert_eq!(assign_classes(&li.map, &scaled).unwrap(), got);
    }
}

#[test]
fn raising_seed_threshold_can_split_a_seed() {
    // the seed count is not monotone: a saddle splits one seed into two
    let p = plane(1, 5, vec![0.9, 0.9, 0.5, 0.9, 0.9]);
    let cm = SemanticMap::from_vec(1, 5, 2, vec![1; 5]).unwrap();
    assert_eq!(seeds(&p, &cm, &ws_cfg(2, 0.4, 0.1, 1)).unwrap().num_instances(), 1);
    assert_eq!(seeds(&p, &cm, &ws_cfg(2, 0.6, 0.1, 1)).unwrap().num_instances(), 2);
}

/// One-hot planes from ground truth, with a few spurious speckles.
fn item(seed: u64) -> ValidationItem<f64> {
    use panoptic_core::synth::{generate, SceneConfig};
    use panoptic_core::targets::encode_three_label;
    let t = generate::<f64>(&SceneConfig { height: 32, width: 32, seed, ..SceneConfig::default() }).unwrap();
    let (h, w) = (32, 32);
    let mut sem = Raster::zeros(h, w, 7);
    let mut tri = Raster::zeros(h, w, 3);
    let tl = encode_three_label(&t.instances.map, 1);
    for i in 0..h * w {
        sem.pixel_mut(i)[t.semantic.classes()[i] as usize] = 1.0;
        tri.pixel_mut(i)[tl.labels()[i] as usize] = 1.0;
    }
    let mut r = rng::seeded(seed);
    for _ in 0..3 {
        let i = r.random_range(0..h * w);
        if t.instances.map.labels()[i] == 0 {
            tri.pixel_mut(i).copy_from_slice(&[0.0, 1.0, 0.0]);
            sem.pixel_mut(i).copy_from_slice(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }
    ValidationItem { semantic: sem, three_label: tri, truth: t.instances }
}

#[test]
fn grid_search_examples() {
    let items: Vec<_> = (0..4).map(item).collect();
    let base = PostprocessConfig { fill_holes: true, ..PostprocessConfig::default() };
    let single = grid_search(std::slice::from_ref(&base), &items, Objective::Mpq, None).unwrap();
    assert_eq!(single.best_index, 0);

    // speckles are single pixels; a minimum area of 3 removes them, 1 keeps them
    let mut keep = base.clone();
    keep.filter.min_area = vec![1; 7];
    keep.watershed.min_seed_area = 1;
    let mut drop = keep.clone();
    drop.filter.min_area = vec![3; 7];
    let res = grid_search(&[keep.clone(), drop.clone()], &items, Objective::Mpq, None).unwrap();
    assert_eq!(res.best_index, 1);
    assert!(res.scores[1] > res.scores[0]);

    // table scores agree with an independent evaluation of each candidate
    for (cand, &score) in [keep, drop].iter().zip(&res.scores) {
        let pairs: Vec<(LabeledInstances, LabeledInstances)> =
            items.iter().map(|it| (postprocess(&it.semantic, &it.three_label, cand).unwrap(), it.truth.clone())).collect();
        assert_eq!(evaluate(&pairs, 7, None).unwrap().pq.mpq, score);
    }

    assert!(grid_search::<f64>(&[base.clone()], &[], Objective::Mpq, None).is_err());
    assert!(grid_search(&[], &items, Objective::Mpq, None).is_err());
}

#[test]
fn coordinate_search_never_lowers_the_score() {
    let items: Vec<_> = (0..4).map(item).collect();
    let mut base = PostprocessConfig::default();
    base.filter.min_area = vec![1; 7];
    base.watershed.min_seed_area = 1;
    let start = evaluate_config(&items, &base, Objective::Mpq, None).unwrap();
    let grid = ParameterGrid { min_area: vec![1, 3, 6], seed: vec![0.55, 0.8], ..ParameterGrid::default() };
    let (best, score, rows) = coordinate_search(&base, &grid, &items, Objective::Mpq, None, 1).unwrap();
    assert!(score >= start);
    assert_eq!(evaluate_config(&items, &best, Objective::Mpq, None).unwrap(), score);
    assert!(!rows.is_empty());
}

#[test]
fn output_is_independent_of_thread_count() {
    let items: Vec<_> = (0..6).map(item).collect();
    let cfg = PostprocessConfig::default();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            use rayon::prelude::*;
            items.par_iter().map(|it| postprocess(&it.semantic, &it.three_label, &cfg).unwrap()).collect::<Vec<_>>()
        })
    };
    assert_eq!(run(1), run(4));
}
