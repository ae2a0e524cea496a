use eholod_demo::{basis_levels, compare, decay_fractions};

#[test]
fn basis_profile_has_one_curve_per_level() {
    let (x, coefficient, levels) = basis_levels(16, 1, 2, 2, 3, 8, 0).unwrap();
    assert_eq!(levels.len(), 3);
    assert_eq!(x.len(), 257);
    assert_eq!(coefficient.len(), x.len());
    assert!(coefficient.iter().all(|&a| (0.1..=1.0).contains(&a)));
    // Zero outside the patch of two layers around element 8 = [0.5, 0.5625].
    for level in &levels {
        assert_eq!(level.len(), x.len());
        for (xi, v) in x.iter().zip(level) {
            if *xi < 6.0 / 16.0 - 1e-12 || *xi > 11.0 / 16.0 + 1e-12 {
                assert_eq!(*v, 0.0);
            }
        }
    }
}

#[test]
fn decay_fractions_decrease() {
    let (corrected, enriched) = decay_fractions(16, 0, 1).unwrap();
    for f in [&corrected, &enriched] {
        assert!(f.windows(2).all(|w| w[1] <= w[0] + 1e-14));
        assert!(f[4] < 1e-2 * f[1]);
    }
}

#[test]
fn multiscale_solution_tracks_reference() {
    let c = compare(8, 1, 1, 3, 1).unwrap();
    assert_eq!(c.dof_ms, 32);
    assert!(c.relative_error < 0.05, "{}", c.relative_error);
    assert_eq!(c.reference.len(), c.multiscale.len());
}

#[test]
fn invalid_input_is_reported() {
    assert!(basis_levels(7, 1, 1, 1, 1, 0, 0).is_err());
    assert!(basis_levels(8, 1, 1, 1, 1, 8, 0).is_err());
    assert!(compare(8, 1, 1, 0, 1).is_err());
}
