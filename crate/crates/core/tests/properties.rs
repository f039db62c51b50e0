//! Cross-module invariants under randomized inputs: difference-operator fixed
//! points, duality round trips, profile reindexing invariance, and the
//! postconditions of regularization and extraction.

use proptest::prelude::*;

use transverse::extract::{extract_variety, regularize, ExtractConfig, SearchMode};
use transverse::grid::{from_lss, gen_from_bilinear, Ambient2, BilinearMapSpec, TransverseSet};
use transverse::linalg::{random_subspace_rng, FieldSpec, MatP, Subspace, VecP};
use transverse::lss::LinearSubspaceSystem;
use transverse::rng::stream;
use transverse::variety::ContainmentCertificate;

fn planted(p: u16, n: u16, r: usize, seed: u64) -> TransverseSet {
    let ambient = Ambient2::new(p, n, n).unwrap();
    let spec = BilinearMapSpec {
        ambient,
        r,
        dim_u: None,
        dim_v: None,
    };
    gen_from_bilinear(&spec, seed).unwrap().set
}

/// A random invertible matrix over F_p^n, for reindexing arguments.
fn random_gl(p: u16, n: u16, seed: u64) -> MatP {
    let mut rng = stream(seed, "properties-gl");
    loop {
        use rand::Rng;
        let field = FieldSpec::new(p, n).unwrap();
        let cols: Vec<VecP> = (0..n).map(|_| rng.gen_range(0..field.size())).collect();
        let m = MatP::from_cols(p, n, &cols);
        if m.rank() == usize::from(n) {
            return m;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn difference_operators_fix_planted_sets(
        p in prop::sample::select(vec![2u16, 3]),
        n in 2u16..=4,
        r in 1usize..=2,
        seed in 0u64..1000,
    ) {
        let t = planted(p, n, r, seed);
        let grid = t.to_gridset();
        prop_assert_eq!(grid.dhor(), grid.clone());
        prop_assert_eq!(grid.dver(), grid);
    }

    #[test]
    fn lss_duality_round_trips(
        p in prop::sample::select(vec![2u16, 3]),
        n in 2u16..=4,
        r in 1usize..=2,
        seed in 0u64..1000,
    ) {
        let t = planted(p, n, r, seed);
        let h = t.ambient().h();
        let sys = LinearSubspaceSystem::from_transverse(&t, &Subspace::full(h)).unwrap();
        prop_assert!(sys.validate().is_ok());
        prop_assert_eq!(from_lss(&sys).unwrap(), t);
    }

    #[test]
    fn restricted_systems_validate(
        p in prop::sample::select(vec![2u16, 3]),
        n in 2u16..=4,
        r in 1usize..=2,
        seed in 0u64..1000,
        dim_v in 1u16..=4,
    ) {
        let t = planted(p, n, r, seed);
        let h = t.ambient().h();
        let mut rng = stream(seed, "properties-restrict");
        let v = random_subspace_rng(h, dim_v.min(n), &mut rng).unwrap();
        let sys = LinearSubspaceSystem::from_transverse(&t, &v).unwrap();
        prop_assert!(sys.validate().is_ok());
        prop_assert!(sys.check_scaling().is_ok());
    }

    #[test]
    fn profile_is_invariant_under_reindexing(
        p in prop::sample::select(vec![2u16, 3]),
        n in 2u16..=3,
        r in 1usize..=2,
        seed in 0u64..1000,
        d in 0usize..=2,
    ) {
        let t = planted(p, n, r, seed);
        let h = t.ambient().h();
        let sys = LinearSubspaceSystem::from_transverse(&t, &Subspace::full(h)).unwrap();
        let m = random_gl(p, n, seed);
        let table = (0..sys.group().size())
            .map(|x| sys.subspace_at(m.apply(x)).clone())
            .collect();
        let relabeled = LinearSubspaceSystem::new(
            sys.u_basis().clone(),
            sys.v_basis().clone(),
            table,
        ).unwrap();
        let a = sys.quasirandomness_profile(d);
        let b = relabeled.quasirandomness_profile(d);
        prop_assert_eq!(a.eps1(), b.eps1());
        prop_assert_eq!(a.eps2(), b.eps2());
    }

    #[test]
    fn serialization_round_trips(
        p in prop::sample::select(vec![2u16, 3]),
        n in 2u16..=3,
        r in 1usize..=2,
        seed in 0u64..1000,
    ) {
        let t = planted(p, n, r, seed);
        prop_assert_eq!(TransverseSet::from_json(&t.to_json()).unwrap(), t.clone());
        let grid = t.to_gridset();
        prop_assert_eq!(
            transverse::grid::GridSet::from_json(&grid.to_json()).unwrap(),
            grid
        );
        let h = t.ambient().h();
        let sys = LinearSubspaceSystem::from_transverse(&t, &Subspace::full(h)).unwrap();
        let back = LinearSubspaceSystem::from_json(&sys.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, sys);
    }

    #[test]
    fn regularize_postconditions_hold(
        n in 3u16..=4,
        r in 1usize..=2,
        seed in 0u64..1000,
        exhaustive in proptest::bool::ANY,
    ) {
        let t = planted(2, n, r, seed);
        let mode = if exhaustive {
            SearchMode::Exhaustive
        } else {
            SearchMode::Sampled { retries: 64 }
        };
        let eps = 0.1;
        let out = regularize(&t, eps, seed, mode).unwrap();
        prop_assert!(out.d as u32 <= out.d0_formula);
        prop_assert!(out.d as u32 <= out.d0_tight);
        prop_assert!(out.d <= usize::from(out.v.dim()));
        // Exact counts witness properties (i) and (ii) at the returned level.
        let u = out.u_size as f64;
        prop_assert!(u - out.exact_slices as f64 <= eps * u);
        prop_assert!(u * u - out.exact_pairs as f64 <= 3.0 * eps * u * u);
    }

    #[test]
    fn extraction_output_is_always_contained(
        n in 2u16..=4,
        r in 1usize..=2,
        seed in 0u64..1000,
    ) {
        let t = planted(2, n, r, seed);
        let config = ExtractConfig { eps: 0.1, seed, ..ExtractConfig::default() };
        let out = extract_variety(&t, &config).unwrap();
        // Independent re-check, cell by cell, against the original set.
        let cells = out.variety.enumerate().unwrap();
        let mut members = 0u64;
        for x in t.ambient().g().all_vectors() {
            for y in t.ambient().h().all_vectors() {
                if cells.contains(x, y) {
                    prop_assert!(t.contains(x, y), "({x}, {y}) escaped the set");
                    members += 1;
                }
            }
        }
        match out.certificate {
            ContainmentCertificate::Exhaustive { member_cells } => {
                prop_assert_eq!(member_cells, members);
            }
            ContainmentCertificate::Sampled { .. } => {
                prop_assert!(false, "tiny grids must certify exhaustively");
            }
        }
        // The variety's trivial lower bound holds: the zero row and column.
        prop_assert!(cells.contains(0, 0));
    }
}
