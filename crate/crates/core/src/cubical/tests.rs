use std::collections::VecDeque;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_volume(dims: Dims, seed: u64) -> Volume3D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume3D::from_fn(dims, |_, _, _| rng.random::<f32>()).unwrap()
}

/// Quantised values force many ties.
fn random_tied_volume(dims: Dims, seed: u64, levels: u32) -> Volume3D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume3D::from_fn(dims, |_, _, _| rng.random_range(0..levels) as f32 / levels as f32).unwrap()
}

fn indicator(dims: Dims, inside: impl Fn(usize, usize, usize) -> bool) -> Volume3D {
    Volume3D::from_fn(dims, |x, y, z| if inside(x, y, z) { 0.0 } else { 1.0 }).unwrap()
}

#[test]
fn single_voxel() {
    let v = Volume3D::new([1, 1, 1], vec![0.3]).unwrap();
    let d = compute_persistence(&v, Filtration::Sublevel, &[0]).unwrap();
    assert_eq!(d.pairs, vec![PersistencePair::new(0, 0.3, f32::INFINITY)]);
    let o = oracle_persistence(&v, Filtration::Sublevel).unwrap();
    assert_eq!(o.pairs, d.pairs);
}

#[test]
fn two_minima_merge() {
    let v = Volume3D::new([3, 3, 1], vec![0., 1., 0., 1., 1., 1., 1., 1., 1.]).unwrap();
    let d = compute_persistence(&v, Filtration::Sublevel, &[0]).unwrap();
    let expected = PersistenceDiagram {
        mode: Filtration::Sublevel,
        pairs: vec![
            PersistencePair::new(0, 0.0, f32::INFINITY),
            PersistencePair::new(0, 0.0, 1.0),
        ],
        source_dims: [3, 3, 1],
    };
    assert!(d.same_pairs(&expected));
    let o = oracle_persistence(&v, Filtration::Sublevel).unwrap();
    let o0 = PersistenceDiagram {
        pairs: o.pairs_of_dim(0).copied().collect(),
        ..o
    };
    assert!(o0.same_pairs(&expected));
}

#[test]
fn two_vertex_merge_has_no_finite_pair() {
    let v = Volume3D::new([2, 1, 1], vec![0.2, 0.7]).unwrap();
    let o = oracle_persistence(&v, Filtration::Sublevel).unwrap();
    assert_eq!(o.pairs, vec![PersistencePair::new(0, 0.2, f32::INFINITY)]);
}

#[test]
fn empty_dim_set_rejected() {
    let v = Volume3D::filled([2, 2, 2], 0.0).unwrap();
    assert!(compute_persistence(&v, Filtration::Sublevel, &[]).is_err());
    assert!(compute_persistence(&v, Filtration::Sublevel, &[3]).is_err());
}

#[test]
fn oracle_size_guard() {
    let v = Volume3D::filled([8, 8, 9], 0.0).unwrap();
    assert!(matches!(
        oracle_persistence(&v, Filtration::Sublevel),
        Err(Error::TooLarge { .. })
    ));
}

#[test]
fn solid_block_betti() {
    let v = indicator([5, 5, 5], |x, y, z| (1..4).contains(&x) && (1..4).contains(&y) && (1..4).contains(&z));
    assert_eq!(betti_numbers(&v, 0.5, Filtration::Sublevel), [1, 0, 0]);
}

#[test]
fn hollow_shell_betti() {
    let v = indicator([5, 5, 5], |x, y, z| {
        let inside = [x, y, z].iter().all(|c| (1..4).contains(c));
        inside && (x, y, z) != (2, 2, 2)
    });
    assert_eq!(betti_numbers(&v, 0.5, Filtration::Sublevel), [1, 0, 1]);
    let o = oracle_persistence(&v, Filtration::Sublevel).unwrap();
    assert_eq!(betti_from_diagram(&o, 0.5), [1, 0, 1]);
}

#[test]
fn square_ring_betti() {
    let v = indicator([5, 5, 3], |x, y, z| {
        z == 1 && (1..4).contains(&x) && (1..4).contains(&y) && (x, y) != (2, 2)
    });
    assert_eq!(betti_numbers(&v, 0.5, Filtration::Sublevel), [1, 1, 0]);
    let o = oracle_persistence(&v, Filtration::Sublevel).unwrap();
    assert_eq!(betti_from_diagram(&o, 0.5), [1, 1, 0]);
}

/// Thick square annulus with its core loop removed: a torus surface.
fn hollow_torus() -> Volume3D {
    indicator([9, 9, 5], |x, y, z| {
        let body = (1..8).contains(&x) && (1..8).contains(&y) && (1..4).contains(&z) && !(x == 4 && y == 4);
        let core = z == 2
            && (((x == 2 || x == 6) && (2..7).contains(&y)) || ((y == 2 || y == 6) && (2..7).contains(&x)));
        body && !core
    })
}

#[test]
fn hollow_torus_betti() {
    let v = hollow_torus();
    assert_eq!(betti_numbers(&v, 0.5, Filtration::Sublevel), [1, 2, 1]);
    let o = oracle_persistence(&v, Filtration::Sublevel).unwrap();
    assert_eq!(betti_from_diagram(&o, 0.5), [1, 2, 1]);
}

#[test]
fn superlevel_betti_of_cavity() {
    // High-valued shell around a low-valued centre: one cavity above 0.5.
    let v = Volume3D::from_fn([5, 5, 5], |x, y, z| {
        let inside = [x, y, z].iter().all(|c| (1..4).contains(c));
        if inside && (x, y, z) != (2, 2, 2) {
            1.0
        } else {
            0.0
        }
    })
    .unwrap();
    assert_eq!(betti_numbers(&v, 0.5, Filtration::Superlevel), [1, 0, 1]);
}

#[test]
fn low_persistence_filter() {
    let d = PersistenceDiagram {
        mode: Filtration::Sublevel,
        pairs: vec![PersistencePair::new(1, 0.0, 0.1), PersistencePair::new(1, 0.0, 5.0)],
        source_dims: [1, 1, 1],
    };
    let f = filter_low_persistence(&d, 0.5).unwrap();
    assert_eq!(f.pairs, vec![PersistencePair::new(1, 0.0, 5.0)]);
    assert_eq!(filter_low_persistence(&d, 0.0).unwrap(), d);
    let e = PersistenceDiagram {
        pairs: vec![PersistencePair::new(0, 0.0, f32::INFINITY)],
        ..d.clone()
    };
    assert_eq!(filter_low_persistence(&e, 1e9).unwrap(), e);
    assert!(filter_low_persistence(&d, -1.0).is_err());
}

#[test]
fn csv_round_trip() {
    let v = random_volume([4, 3, 3], 9);
    let d = compute_persistence(&v, Filtration::Superlevel, &[0, 1, 2]).unwrap();
    let mut buf = Vec::new();
    write_diagram_csv(&d, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("dim,birth,death\n"));
    assert!(text.contains(",inf\n"));
    let back = read_diagram_csv(&buf[..], Filtration::Superlevel, v.dims()).unwrap();
    assert!(back.same_pairs(&d));
    assert!(read_diagram_csv(&b"a,b,c\n"[..], Filtration::Sublevel, [1, 1, 1]).is_err());
}

#[test]
fn engine_matches_oracle_on_random_volumes() {
    for seed in 0..100 {
        let v = random_volume([4, 4, 4], seed);
        for mode in [Filtration::Sublevel, Filtration::Superlevel] {
            let fast = compute_persistence(&v, mode, &[0, 1, 2]).unwrap();
            let slow = oracle_persistence(&v, mode).unwrap();
            assert!(fast.same_pairs(&slow), "seed {seed} {mode}:\n{:?}\n{:?}", fast.sorted_pairs(), slow.sorted_pairs());
        }
    }
}

#[test]
fn engine_matches_oracle_with_ties_and_flat_grids() {
    let shapes = [[4, 4, 4], [8, 8, 1], [1, 7, 5], [6, 1, 1], [3, 5, 7], [2, 2, 2]];
    for (i, dims) in shapes.into_iter().enumerate() {
        for seed in 0..20 {
            let v = random_tied_volume(dims, 1000 + seed + 100 * i as u64, 3);
            for mode in [Filtration::Sublevel, Filtration::Superlevel] {
                let fast = compute_persistence(&v, mode, &[0, 1, 2]).unwrap();
                let slow = oracle_persistence(&v, mode).unwrap();
                assert!(fast.same_pairs(&slow), "dims {dims:?} seed {seed} {mode}");
            }
        }
    }
}

#[test]
fn dimension_subsets_are_restrictions() {
    let v = random_volume([5, 4, 3], 77);
    let all = compute_persistence(&v, Filtration::Sublevel, &[0, 1, 2]).unwrap();
    for d in 0u8..3 {
        let only = compute_persistence(&v, Filtration::Sublevel, &[d]).unwrap();
        let expected = PersistenceDiagram {
            pairs: all.pairs_of_dim(d).copied().collect(),
            ..all.clone()
        };
        assert!(only.same_pairs(&expected));
    }
}

/// Cell counts of the thresholded complex.
fn euler_characteristic(v: &Volume3D, t: f32) -> i64 {
    let [nx, ny, nz] = v.dims();
    let mut chi = 0i64;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                for dz in 0..=(z + 1 < nz) as usize {
                    for dy in 0..=(y + 1 < ny) as usize {
                        for dx in 0..=(x + 1 < nx) as usize {
                            let mut m = f32::NEG_INFINITY;
                            for cz in 0..=dz {
                                for cy in 0..=dy {
                                    for cx in 0..=dx {
                                        m = m.max(v.get(x + cx, y + cy, z + cz));
                                    }
                                }
                            }
                            if m <= t {
                                chi += if (dx + dy + dz) % 2 == 0 { 1 } else { -1 };
                            }
                        }
                    }
                }
            }
        }
    }
    chi
}

/// Components of `{f <= t}` whose minimum equals `t`, summed over levels.
fn components_born_per_level(v: &Volume3D) -> usize {
    let mut levels: Vec<f32> = v.data().to_vec();
    levels.sort_by(f32::total_cmp);
    levels.dedup();
    let [nx, ny, nz] = v.dims();
    let mut total = 0;
    for &t in &levels {
        let mut seen = vec![false; v.len()];
        for start in 0..v.len() {
            if seen[start] || v.data()[start] > t {
                continue;
            }
            let mut min = f32::INFINITY;
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(i) = queue.pop_front() {
                min = min.min(v.data()[i]);
                let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
                let mut nb = Vec::new();
                if x > 0 { nb.push(i - 1); }
                if x + 1 < nx { nb.push(i + 1); }
                if y > 0 { nb.push(i - nx); }
                if y + 1 < ny { nb.push(i + nx); }
                if z > 0 { nb.push(i - nx * ny); }
                if z + 1 < nz { nb.push(i + nx * ny); }
                for j in nb {
                    if !seen[j] && v.data()[j] <= t {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            if min == t {
                total += 1;
            }
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn superlevel_is_flipped_sublevel_of_negation(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, seed in 0u64..10_000) {
        let v = random_volume([nx, ny, nz], seed);
        let neg = v.map(|x| -x).unwrap();
        let sup = compute_persistence(&v, Filtration::Superlevel, &[0, 1, 2]).unwrap();
        let sub = compute_persistence(&neg, Filtration::Sublevel, &[0, 1, 2]).unwrap();
        let flipped = PersistenceDiagram { mode: Filtration::Superlevel, pairs: flip(sub.pairs), source_dims: sub.source_dims };
        prop_assert!(sup.same_pairs(&flipped));
    }

    #[test]
    fn euler_characteristic_matches_betti(nx in 1usize..6, ny in 1usize..6, nz in 1usize..6, seed in 0u64..10_000, t in 0.0f32..1.0) {
        let v = random_tied_volume([nx, ny, nz], seed, 5);
        let b = betti_numbers(&v, t, Filtration::Sublevel);
        prop_assert_eq!(b[0] as i64 - b[1] as i64 + b[2] as i64, euler_characteristic(&v, t));
    }

    #[test]
    fn shift_equivariance(seed in 0u64..10_000, k in -8i32..8) {
        // Dyadic values and shifts keep the arithmetic exact.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = Volume3D::from_fn([4, 3, 4], |_, _, _| rng.random_range(0..64) as f32 / 64.0).unwrap();
        let c = k as f32 / 4.0;
        let shifted = v.map(|x| x + c).unwrap();
        let d = compute_persistence(&v, Filtration::Sublevel, &[0, 1, 2]).unwrap();
        let s = compute_persistence(&shifted, Filtration::Sublevel, &[0, 1, 2]).unwrap();
        let moved = PersistenceDiagram {
            pairs: d.pairs.iter().map(|p| PersistencePair::new(p.dim, p.birth + c, p.death + c)).collect(),
            ..d.clone()
        };
        prop_assert!(s.same_pairs(&moved));
    }

    #[test]
    fn dim0_count_matches_component_births(nx in 1usize..6, ny in 1usize..6, nz in 1usize..5, seed in 0u64..10_000) {
        let v = random_tied_volume([nx, ny, nz], seed, 4);
        let d = compute_persistence(&v, Filtration::Sublevel, &[0]).unwrap();
        prop_assert_eq!(d.count(0), components_born_per_level(&v));
    }
}
