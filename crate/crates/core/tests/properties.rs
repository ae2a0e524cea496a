use proptest::prelude::*;

use eholod::correctors::{build_multiscale_space, element_corrector, EnrichmentMode, LodContext, GLOBAL_PATCH};
use eholod::finescale::{CoefficientField, CoefficientKind, FineSpace};
use eholod::linalg::norm2;
use eholod::mesh::{CartesianMesh, NestedRefinement};
use eholod::spaces::CoarseSpaces;

fn spaces(dim: usize, p: usize) -> (FineSpace, CoarseSpaces<f64>) {
    let refinement = NestedRefinement::new(CartesianMesh::unit(dim, 3).unwrap(), 5).unwrap();
    let cs = CoarseSpaces::new(&refinement, p).unwrap();
    (FineSpace::new(refinement, 4), cs)
}

fn context(dim: usize, p: usize, seed: u64) -> LodContext<f64> {
    let (fine, cs) = spaces(dim, p);
    let mesh = fine.mesh().clone();
    let values = CoefficientField::generate(CoefficientKind::Random, dim, mesh.mesh_size(), (0.1, 1.0), seed, 1.0)
        .unwrap()
        .sample(&mesh)
        .unwrap();
    LodContext::new(fine, cs, values).unwrap()
}

fn fine_vector(space: &FineSpace, raw: &[f64]) -> Vec<f64> {
    let free: Vec<f64> = (0..space.dof_count()).map(|i| raw[i % raw.len()] * (1.0 + i as f64).sin()).collect();
    space.extend(&free)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kernels_of_both_projections_agree(
        dim in 1usize..=2,
        p in 0usize..=2,
        raw in prop::collection::vec(-1.0f64..1.0, 8..32),
    ) {
        let (space, cs) = spaces(dim, p);
        let v = fine_vector(&space, &raw);
        prop_assume!(norm2(&v) > 1e-8);
        // Removing the moments with bubbles lands in ker Π_H.
        let w: Vec<f64> = v.iter().zip(cs.bubble_combination(&cs.project_vh(&v))).map(|(a, b)| a - b).collect();
        prop_assert!(norm2(&cs.project_vh(&w)) <= 1e-12 * norm2(&v));
        prop_assert!(norm2(&cs.stabilized_interpolate(&w)) <= 1e-8 * norm2(&w).max(norm2(&v)));
        // And Π_H Π^x = Π_H, so ker Π^x ⊆ ker Π_H.
        let a = cs.project_vh(&cs.stabilized_interpolate(&v));
        let b = cs.project_vh(&v);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12 * norm2(&b).max(1.0)));
    }

    #[test]
    fn projections_are_idempotent(
        dim in 1usize..=2,
        p in 0usize..=2,
        raw in prop::collection::vec(-1.0f64..1.0, 8..32),
    ) {
        let (space, cs) = spaces(dim, p);
        let v = fine_vector(&space, &raw);
        let c = cs.project_vh(&v);
        let again = cs.project_function(|x| cs.eval_vh(&c, x), p + 2);
        prop_assert!(c.iter().zip(&again).all(|(x, y)| (x - y).abs() <= 1e-12 * norm2(&c).max(1.0)));
        let pv = cs.stabilized_interpolate(&v);
        let ppv = cs.stabilized_interpolate(&pv);
        let d: Vec<f64> = pv.iter().zip(&ppv).map(|(x, y)| x - y).collect();
        prop_assert!(norm2(&d) <= 1e-10 * norm2(&pv).max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn correctors_lie_in_w(
        dim in 1usize..=2,
        p in 0usize..=1,
        seed in 0u64..1000,
        k in 0usize..9,
        ell in prop::sample::select(vec![1usize, 2, GLOBAL_PATCH]),
        raw in prop::collection::vec(-1.0f64..1.0, 8..16),
    ) {
        let ctx = context(dim, p, seed);
        let k = k % ctx.spaces().refinement().coarse().element_count();
        let v = fine_vector(ctx.fine(), &raw);
        let c = element_corrector(&ctx, k, ell, &v).unwrap().to_dense(ctx.fine().node_count());
        prop_assert!(norm2(&ctx.spaces().project_vh(&c)) <= 1e-10 * norm2(&c).max(1e-300));
    }

    #[test]
    fn enrichment_keeps_support_and_lies_in_w(
        dim in 1usize..=2,
        seed in 0u64..1000,
        ell in 1usize..=2,
    ) {
        let ctx = context(dim, 1, seed);
        let ms = build_multiscale_space(&ctx, 2, ell, EnrichmentMode::Practical).unwrap();
        for c in ms.columns().iter().filter(|c| c.level > 0) {
            let base = ms.column(0, c.element, c.local).unwrap();
            prop_assert_eq!(&c.values.indices, &base.values.indices);
            let full = c.values.to_dense(ctx.fine().node_count());
            prop_assert!(norm2(&ctx.spaces().project_vh(&full)) <= 1e-10 * norm2(&full));
        }
    }
}
