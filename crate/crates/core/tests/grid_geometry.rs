use proptest::prelude::*;
use rainfield::grid::{build_network_weights, trace_segment, GridSpec, LinkSegment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Liang-Barsky clip of a segment against an axis-aligned box; returns the
/// clipped length.
fn clipped_length(grid: &GridSpec, s: [f64; 2], e: [f64; 2]) -> f64 {
    let lo = grid.origin;
    let hi = [
        grid.origin[0] + grid.width as f64 * grid.spacing[0],
        grid.origin[1] + grid.height as f64 * grid.spacing[1],
    ];
    let d = [e[0] - s[0], e[1] - s[1]];
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for axis in 0..2 {
        if d[axis] == 0.0 {
            if s[axis] < lo[axis] || s[axis] > hi[axis] {
                return 0.0;
            }
            continue;
        }
        let a = (lo[axis] - s[axis]) / d[axis];
        let b = (hi[axis] - s[axis]) / d[axis];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 - t0).max(0.0) * d[0].hypot(d[1])
}

/// Per-cell lengths by midpoint sampling of `n` equal sub-intervals; exact up
/// to one sub-interval per cell boundary.
fn sampled_lengths(grid: &GridSpec, seg: &LinkSegment, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; grid.cells()];
    let step = seg.length() / n as f64;
    for k in 0..n {
        let p = seg.point_at((k as f64 + 0.5) / n as f64);
        if let Some((r, c)) = grid.locate(p) {
            out[grid.index(r, c)] += step;
        }
    }
    out
}

#[test]
fn illustrated_six_by_four_matrix() {
    // 4 rows x 6 columns, rows as printed.
    let expected = [
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.3, 0.7, 0.0],
        [0.0, 0.0, 1.1, 0.9, 0.0, 0.0],
        [0.3, 1.2, 0.0, 0.0, 0.0, 0.0],
    ];
    let grid = GridSpec::unit(4, 6);
    let seg = LinkSegment::new([0.25, 3.25], [4.1, 1.0]);
    let w = trace_segment(&grid, &seg).unwrap();
    for (r, row) in expected.iter().enumerate() {
        for (c, want) in row.iter().enumerate() {
            let got = (w.get(r, c) * 10.0).round() / 10.0;
            assert_eq!(got, *want, "cell ({r},{c}) = {}", w.get(r, c));
        }
    }
    assert!((w.total_inside - seg.length()).abs() < 1e-12);
}

#[test]
fn conservation_on_random_segments() {
    let grid = GridSpec::new(36, 48, [3.0, -2.0], [1.0, 1.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0_f64;
    for _ in 0..100_000 {
        // endpoints up to 10 cells outside the domain so clipping is exercised
        let p = |rng: &mut ChaCha8Rng| [rng.random_range(-7.0..61.0), rng.random_range(-12.0..44.0)];
        let (s, e) = (p(&mut rng), p(&mut rng));
        let seg = LinkSegment::new(s, e);
        if seg.length() < 1e-6 {
            continue;
        }
        let w = trace_segment(&grid, &seg).unwrap();
        let want = clipped_length(&grid, s, e);
        let total: f64 = w.entries.iter().map(|e| e.length).sum();
        assert!(w.entries.iter().all(|e| e.length > 0.0));
        if want > 1e-9 {
            worst = worst.max((total - want).abs() / want);
        } else {
            assert!(total < 1e-9);
        }
    }
    assert!(worst <= 1e-10, "worst relative error {worst:e}");
}

#[test]
fn per_cell_lengths_match_point_sampling() {
    let grid = GridSpec::unit(12, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let s = [rng.random_range(-0.5..15.5), rng.random_range(-0.5..11.5)];
        let e = [rng.random_range(-0.5..15.5), rng.random_range(-0.5..11.5)];
        let seg = LinkSegment::new(s, e);
        let dense = trace_segment(&grid, &seg).unwrap().to_dense(&grid);
        let sampled = sampled_lengths(&grid, &seg, 100_000);
        for (a, b) in dense.iter().zip(&sampled) {
            assert!((a - b).abs() <= 1e-3, "{a} vs {b}");
        }
    }
}

#[test]
fn corner_diagonal_conserves_length() {
    let grid = GridSpec::unit(5, 5);
    let seg = LinkSegment::new([-0.5, -0.5], [4.5, 4.5]);
    let w = trace_segment(&grid, &seg).unwrap();
    assert_eq!(w.nnz(), 5);
    for e in &w.entries {
        assert_eq!(e.row, e.col);
        assert!((e.length - 2f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn network_trivial_cases() {
    let grid = GridSpec::unit(6, 6);
    assert!(build_network_weights(&grid, &[]).unwrap().is_empty());
    let seg = LinkSegment::new([0.1, 0.2], [4.3, 3.9]);
    assert_eq!(build_network_weights(&grid, &[seg]).unwrap(), vec![trace_segment(&grid, &seg).unwrap()]);
}

fn same_cells(a: &rainfield::grid::LinkWeights, b: &rainfield::grid::LinkWeights, grid: &GridSpec, tol: f64) -> bool {
    a.to_dense(grid).iter().zip(b.to_dense(grid)).all(|(x, y)| (x - y).abs() <= tol)
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    (-3.0..20.0_f64, -3.0..15.0_f64).prop_map(|(x, y)| [x, y])
}

proptest! {
    #[test]
    fn inside_segments_conserve_length(x0 in -0.5..16.5_f64, y0 in -0.5..11.5_f64, x1 in -0.5..16.5_f64, y1 in -0.5..11.5_f64) {
        let grid = GridSpec::unit(12, 17);
        let seg = LinkSegment::new([x0, y0], [x1, y1]);
        prop_assume!(seg.length() > 1e-6);
        let w = trace_segment(&grid, &seg).unwrap();
        prop_assert!((w.total_inside - seg.length()).abs() <= 1e-10 * seg.length());
        prop_assert!(w.nnz() <= grid.height + grid.width + 1);
    }

    #[test]
    fn reversal_invariance(s in point(), e in point()) {
        let grid = GridSpec::unit(12, 17);
        let seg = LinkSegment::new(s, e);
        prop_assume!(seg.length() > 1e-6);
        let a = trace_segment(&grid, &seg).unwrap();
        let b = trace_segment(&grid, &seg.reversed()).unwrap();
        prop_assert!(same_cells(&a, &b, &grid, 1e-12));
    }

    #[test]
    fn translation_covariance(s in point(), e in point(), dx in -50.0..50.0_f64, dy in -50.0..50.0_f64) {
        let grid = GridSpec::unit(12, 17);
        let moved = GridSpec::new(12, 17, [-0.5 + dx, -0.5 + dy], [1.0, 1.0]).unwrap();
        let seg = LinkSegment::new(s, e);
        prop_assume!(seg.length() > 1e-6);
        let shifted = LinkSegment::new([s[0] + dx, s[1] + dy], [e[0] + dx, e[1] + dy]);
        let a = trace_segment(&grid, &seg).unwrap();
        let b = trace_segment(&moved, &shifted).unwrap();
        prop_assert!(same_cells(&a, &b, &grid, 1e-9));
    }

    #[test]
    fn lattice_segments_are_robust(c0 in 0..13_i32, r0 in 0..9_i32, c1 in 0..13_i32, r1 in 0..9_i32) {
        // endpoints on grid corners: every crossing is a duplicate candidate
        let grid = GridSpec::unit(8, 12);
        let seg = LinkSegment::new([c0 as f64 - 0.5, r0 as f64 - 0.5], [c1 as f64 - 0.5, r1 as f64 - 0.5]);
        prop_assume!(seg.length() > 0.0);
        let w = trace_segment(&grid, &seg).unwrap();
        prop_assert!(w.entries.iter().all(|e| e.length > 0.0 && e.length.is_finite()));
        let want = clipped_length(&grid, seg.start, seg.end);
        // segments lying on the outer boundary have zero interior length
        prop_assert!((w.total_inside - want).abs() <= 1e-10 * want.max(1.0) || (r0 == r1 && (r0 == 0 || r0 == 8)) || (c0 == c1 && (c0 == 0 || c0 == 12)));
    }

    #[test]
    fn network_is_order_equivariant(pts in proptest::collection::vec((point(), point()), 1..12), rot in 0usize..12) {
        let grid = GridSpec::unit(12, 17);
        let segs: Vec<_> = pts.iter().map(|(s, e)| LinkSegment::new(*s, *e)).filter(|s| s.length() > 1e-6).collect();
        prop_assume!(!segs.is_empty());
        let k = rot % segs.len();
        let mut rotated = segs.clone();
        rotated.rotate_left(k);
        let mut a = build_network_weights(&grid, &segs).unwrap();
        let b = build_network_weights(&grid, &rotated).unwrap();
        a.rotate_left(k);
        prop_assert_eq!(a, b);
    }
}
