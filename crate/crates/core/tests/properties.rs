use std::path::Path;

use gradshield::bounds::reconstruction_lower_bound;
use gradshield::defense::{
    apply_defense, encrypted_count, prolong, restrict, select_mask, BinaryMatrix, DefendedGradient,
    EncryptionMask, MaskStrategy,
};
use gradshield::harness::PlotSeries;
use gradshield::utility::{critical_noise, CriticalNoise};
use proptest::prelude::*;

fn gradient() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 1..80)
}

proptest! {
    #[test]
    fn mask_partitions_coordinates(g in gradient(), z in 0.0f64..=1.0, seed: u64, random: bool) {
        let strategy = if random { MaskStrategy::Random } else { MaskStrategy::Magnitude };
        let mask = select_mask(&g, z, &strategy, seed).unwrap();
        let dim = g.len();
        prop_assert_eq!(mask.visible_count(), dim - encrypted_count(z, dim));
        let mut all: Vec<usize> = mask.unencrypted().to_vec();
        all.extend(mask.encrypted());
        all.sort_unstable();
        prop_assert_eq!(all, (0..dim).collect::<Vec<_>>());
    }

    #[test]
    fn magnitude_mask_hides_the_largest(g in gradient(), z in 0.0f64..=1.0) {
        let mask = select_mask(&g, z, &MaskStrategy::Magnitude, 0).unwrap();
        let smallest_hidden = mask.encrypted().iter().map(|&j| g[j].abs()).fold(f64::INFINITY, f64::min);
        let largest_visible = mask.unencrypted().iter().map(|&j| g[j].abs()).fold(0.0, f64::max);
        prop_assert!(smallest_hidden >= largest_visible);
    }

    #[test]
    fn magnitude_masks_are_nested(g in gradient(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let wide = select_mask(&g, lo, &MaskStrategy::Magnitude, 0).unwrap();
        let narrow = select_mask(&g, hi, &MaskStrategy::Magnitude, 0).unwrap();
        prop_assert!(narrow.unencrypted().iter().all(|j| wide.unencrypted().contains(j)));
    }

    #[test]
    fn restrict_prolong_round_trip(g in gradient(), z in 0.0f64..=1.0) {
        let mask = select_mask(&g, z, &MaskStrategy::Magnitude, 0).unwrap();
        let u = restrict(&g, &mask).unwrap();
        prop_assert_eq!(restrict(&prolong(&u, &mask).unwrap(), &mask).unwrap(), u.clone());
        let y = prolong(&u, &mask).unwrap();
        for j in 0..g.len() {
            let expect = if mask.unencrypted().contains(&j) { g[j] } else { 0.0 };
            prop_assert_eq!(y[j], expect);
        }
    }

    #[test]
    fn operator_identities(g in gradient(), z in 0.0f64..=1.0, seed: u64) {
        let mask = select_mask(&g, z, &MaskStrategy::Random, seed).unwrap();
        let r = mask.restriction_matrix();
        let p = mask.prolongation_matrix();
        let id = BinaryMatrix::identity(mask.visible_count());
        prop_assert_eq!(&r.matmul(&r.transpose()), &id);
        prop_assert_eq!(&p, &r.transpose());
        prop_assert_eq!(&r.matmul(&p), &id);
        let ppt = p.matmul(&p.transpose());
        prop_assert!(ppt.is_diagonal());
        for j in 0..g.len() {
            prop_assert_eq!(ppt.get(j, j), u32::from(mask.unencrypted().contains(&j)));
        }
    }

    #[test]
    fn mask_text_round_trips(g in gradient(), z in 0.0f64..=1.0) {
        let mask = select_mask(&g, z, &MaskStrategy::Magnitude, 0).unwrap();
        prop_assert_eq!(EncryptionMask::from_text(&mask.to_text()).unwrap(), mask);
    }

    #[test]
    fn defended_gradient_bytes_round_trip(g in gradient(), z in 0.0f64..=1.0, sigma in 0.0f64..1.0, seed: u64) {
        let mask = select_mask(&g, z, &MaskStrategy::Magnitude, 0).unwrap();
        let defended = apply_defense(&g, &mask, sigma, seed).unwrap();
        let back = DefendedGradient::from_bytes(Path::new("mem"), &defended.to_bytes()).unwrap();
        prop_assert_eq!(back, defended);
    }

    #[test]
    fn noiseless_defense_is_projection(g in gradient(), z in 0.0f64..=1.0) {
        let mask = select_mask(&g, z, &MaskStrategy::Magnitude, 0).unwrap();
        let defended = apply_defense(&g, &mask, 0.0, 1).unwrap();
        prop_assert_eq!(defended.y().to_vec(), prolong(&restrict(&g, &mask).unwrap(), &mask).unwrap());
    }

    #[test]
    fn bound_falls_with_exposure_and_rises_with_noise(
        e1 in 1e-6f64..10.0, e2 in 1e-6f64..10.0, s1 in 1e-3f64..1.0, s2 in 1e-3f64..1.0, z in 0.0f64..0.9,
    ) {
        let b = |e: f64, s: f64| reconstruction_lower_bound(16, 103, z, s, e, 1.0).unwrap().bound.value();
        let (elo, ehi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(b(elo, s1) >= b(ehi, s1));
        let (slo, shi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(b(e1, shi) >= b(e1, slo));
    }

    #[test]
    fn critical_noise_is_linear_in_alignment(
        b in 1e-6f64..10.0, mu in 1e-6f64..10.0, n in 1usize..20, d in 1usize..2000, scale in 0.1f64..10.0,
    ) {
        let one = critical_noise(b, mu, n, d, 0.05).unwrap();
        let scaled = critical_noise(b * scale, mu, n, d, 0.05).unwrap();
        match (one, scaled) {
            (CriticalNoise::Threshold(x), CriticalNoise::Threshold(y)) => {
                prop_assert!((y - scale * x).abs() <= 1e-12 * y.abs());
            }
            other => prop_assert!(false, "unexpected {:?}", other),
        }
        let more = critical_noise(b, mu, n, d + 1, 0.05).unwrap().value();
        prop_assert!(more < one.value());
    }

    #[test]
    fn plot_series_round_trips(ys in prop::collection::vec(-1e6f64..1e6, 0..30), start in -100.0f64..100.0) {
        let points: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (start + i as f64 * 0.5, y)).collect();
        let s = PlotSeries::new("series", "x", "y", points, "abc").unwrap();
        prop_assert_eq!(PlotSeries::parse(&s.to_text()).unwrap(), s);
    }
}
