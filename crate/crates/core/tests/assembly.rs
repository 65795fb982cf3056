use fracdiff::assembly::{assemble_interaction, assemble_stiffness, assemble_tail, oracle_assemble};
use fracdiff::kernel::Kernel;
use fracdiff::mesh::Mesh;
use fracdiff::quadrature::adaptive;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn unit(n: usize) -> Mesh {
    Mesh::uniform(0.0, 1.0, n, 0.0).unwrap()
}

fn max_relative(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax();
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn fast_assembly_matches_oracle_off_the_grid_of_exponents() {
    for s in [0.15, 0.45, 0.8] {
        let mesh = unit(6);
        let k = Kernel::fractional(s).unwrap();
        let fast = assemble_stiffness(&mesh, &k, 8).unwrap().stiffness;
        let slow = oracle_assemble(&mesh, &k, 1e-8).unwrap();
        let dev = max_relative(&fast, &slow);
        assert!(dev < 1e-6, "s = {s}: deviation {dev:e}");
    }
}

#[test]
fn truncated_kernel_matches_oracle() {
    let mesh = Mesh::uniform(0.0, 1.0, 8, 0.25).unwrap();
    let k = Kernel::truncated_fractional(0.4, 0.25).unwrap();
    let fast = assemble_stiffness(&mesh, &k, 8).unwrap().stiffness;
    let slow = oracle_assemble(&mesh, &k, 1e-11).unwrap();
    let dev = max_relative(&fast, &slow);
    assert!(dev < 1e-6, "deviation {dev:e}");
}

#[test]
fn far_entries_decay_with_distance() {
    let mesh = unit(16);
    let a = oracle_assemble(&mesh, &Kernel::fractional(0.5).unwrap(), 1e-11).unwrap();
    for i in 0..a.nrows() {
        let mut last = f64::INFINITY;
        for j in i + 2..a.ncols() {
            let v = a[(i, j)];
            assert!(v < 0.0, "entry ({i}, {j}) = {v}");
            assert!(v.abs() < last, "no decay at ({i}, {j})");
            last = v.abs();
        }
    }
}

#[test]
fn doubling_the_quadrature_order_barely_moves_entries() {
    for s in [0.3, 0.7] {
        let mesh = unit(16);
        let k = Kernel::fractional(s).unwrap();
        let a8 = assemble_stiffness(&mesh, &k, 8).unwrap().stiffness;
        let a16 = assemble_stiffness(&mesh, &k, 16).unwrap().stiffness;
        let dev = max_relative(&a8, &a16);
        assert!(dev < 1e-8, "s = {s}: change {dev:e}");
    }
}

/// `∫_{R \ (a, b)} k(x, z) dz` by adaptive quadrature: a unit stretch next
/// to each edge directly, the rest after `z - edge = t^{-1/s}`, which makes
/// the far-field integrand vanish linearly at `t = 0`.
fn tail_by_quadrature(k: &Kernel, x: f64, (a, b): (f64, f64)) -> f64 {
    let q = 1.0 / k.s();
    let half = |edge: f64, dir: f64| {
        let near = adaptive(|z| k.eval(x, edge + dir * z).unwrap(), &[0.0, 1.0], 1e-15, 1e-13, 5000).unwrap();
        let far = adaptive(
            |t: f64| {
                if t <= 0.0 {
                    return 0.0;
                }
                let z = edge + dir * t.powf(-q);
                k.eval(x, z).unwrap() * q * t.powf(-q - 1.0)
            },
            &[0.0, 1.0],
            1e-15,
            1e-13,
            5000,
        )
        .unwrap();
        near + far
    };
    half(b, 1.0) + half(a, -1.0)
}

#[test]
fn tail_integral_matches_quadrature() {
    for s in [0.2, 0.5, 0.8] {
        let k = Kernel::fractional(s).unwrap().with_constant(1.7).unwrap();
        for x in [0.05, 0.3, 0.5, 0.91] {
            let closed = k.tail_integral(x, (0.0, 1.0)).unwrap();
            let numeric = tail_by_quadrature(&k, x, (0.0, 1.0));
            assert!(
                (closed - numeric).abs() < 1e-9 * closed,
                "s = {s}, x = {x}: {closed} vs {numeric}"
            );
        }
    }
}

#[test]
fn tail_matrix_matches_quadrature() {
    let mesh = unit(5);
    let k = Kernel::fractional(0.35).unwrap();
    let tail = assemble_tail(&mesh, &k, 8).unwrap();
    let nodes = mesh.nodes();
    let hat = |i: usize, x: f64| {
        let (l, c, r) = (nodes[i - 1], nodes[i], nodes[i + 1]);
        if x <= l || x >= r {
            0.0
        } else if x <= c {
            (x - l) / (c - l)
        } else {
            (r - x) / (r - c)
        }
    };
    for (p, &i) in mesh.free_nodes().iter().enumerate() {
        for (q, &j) in mesh.free_nodes().iter().enumerate() {
            let f = |x: f64| {
                let v = hat(i, x) * hat(j, x);
                if v == 0.0 {
                    0.0
                } else {
                    2.0 * v * k.tail_integral(x, (0.0, 1.0)).unwrap()
                }
            };
            let expect = adaptive(f, nodes, 1e-14, 1e-12, 5000).unwrap();
            assert!(
                (tail[(p, q)] - expect).abs() <= 1e-9 * expect.abs().max(1e-12),
                "({p}, {q}): {} vs {expect}",
                tail[(p, q)]
            );
        }
    }
}

#[test]
fn wide_truncation_reproduces_the_interaction_part() {
    let mesh = unit(8);
    let frac = assemble_interaction(&mesh, &Kernel::fractional(0.6).unwrap(), 8).unwrap();
    let wide = assemble_interaction(&mesh, &Kernel::truncated_fractional(0.6, 3.0).unwrap(), 8).unwrap();
    assert!(max_relative(&wide, &frac) < 1e-13);
    // The full fractional matrix adds the tail, which only strengthens it.
    let full = assemble_stiffness(&mesh, &Kernel::fractional(0.6).unwrap(), 8).unwrap().stiffness;
    let diff = &full - &frac;
    assert!(diff.symmetric_eigen().eigenvalues.min() > 0.0);
}

#[test]
fn collar_beyond_the_horizon_changes_nothing() {
    let k = Kernel::truncated_fractional(0.5, 0.25).unwrap();
    let narrow = assemble_stiffness(&Mesh::uniform(0.0, 1.0, 16, 0.25).unwrap(), &k, 8).unwrap();
    let wide = assemble_stiffness(&Mesh::uniform(0.0, 1.0, 16, 0.5).unwrap(), &k, 8).unwrap();
    assert_eq!(narrow.n_free(), wide.n_free());
    let dev = (&narrow.stiffness - &wide.stiffness).amax();
    assert!(dev <= 1e-12, "change {dev:e}");
}

#[test]
fn result_does_not_depend_on_thread_count() {
    let mesh = unit(64);
    let k = Kernel::fractional(0.3).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| assemble_stiffness(&mesh, &k, 8).unwrap().stiffness)
    };
    let one = run(1);
    for threads in [2, 3] {
        assert_eq!(one, run(threads), "{threads} threads");
    }
}

#[test]
fn eigenvalue_floor_is_stable_under_refinement() {
    for s in [0.3, 0.7] {
        let k = Kernel::fractional(s).unwrap();
        let lambdas: Vec<f64> = [8, 16, 32, 64]
            .iter()
            .map(|&n| assemble_stiffness(&unit(n), &k, 8).unwrap().smallest_generalized_eigenvalue())
            .collect();
        for w in lambdas.windows(2) {
            assert!(w[1] > 0.0);
            assert!((w[1] / w[0] - 1.0).abs() < 0.1, "s = {s}: {lambdas:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn stiffness_is_spd_with_negative_far_couplings(s in 0.05f64..0.95, n in 2usize..14, c in 0.1f64..5.0) {
        let k = Kernel::fractional(s).unwrap().with_constant(c).unwrap();
        let sys = assemble_stiffness(&unit(n), &k, 8).unwrap();
        prop_assert!(sys.asymmetry() <= 1e-12);
        prop_assert!(sys.cholesky().is_ok());
        let a = &sys.stiffness;
        for i in 0..a.nrows() {
            prop_assert!(a[(i, i)] > 0.0);
            for j in i + 2..a.ncols() {
                prop_assert!(a[(i, j)] < 0.0);
            }
        }
    }

    #[test]
    fn stiffness_scales_with_the_constant(s in 0.05f64..0.95, n in 2usize..10, c in 0.1f64..5.0) {
        let base = assemble_stiffness(&unit(n), &Kernel::fractional(s).unwrap(), 8).unwrap().stiffness;
        let scaled = assemble_stiffness(&unit(n), &Kernel::fractional(s).unwrap().with_constant(c).unwrap(), 8)
            .unwrap()
            .stiffness;
        prop_assert!(max_relative(&scaled, &(base * c)) < 1e-13);
    }
}
