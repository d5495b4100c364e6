use critedge::criticality::{alpha_from_chi, chi, verify_criticality};
use critedge::flow::derive_b0;
use critedge::flow::partition::{check_matching, greedy_matching, match_partitions};
use critedge::generate::random_critical_atoms;
use critedge::spectra::{
    eta_integral, hermitization, hermitization_singular_values, k_tuple_sum, rescale, sample_matrix, singular_values,
    unrescale, Model, TestFunction,
};
use critedge::{DeformationSpectrum, Error, C64};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn point() -> impl Strategy<Value = C64> {
    (0.1f64..3.0, 0.0f64..std::f64::consts::TAU).prop_map(|(r, t)| C64::from_polar(r, t))
}

fn spectrum() -> impl Strategy<Value = DeformationSpectrum> {
    prop::collection::vec((point(), 1u64..6), 1..8).prop_map(|atoms| {
        let (eigs, mults) = atoms.into_iter().unzip();
        DeformationSpectrum::new(eigs, mults).unwrap()
    })
}

fn partition(n: usize, labels: Vec<usize>, start: usize) -> Vec<Vec<usize>> {
    let m = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut out = vec![Vec::new(); m];
    for (k, l) in labels.into_iter().enumerate().take(n) {
        out[l].push(start + k);
    }
    out.retain(|b| !b.is_empty());
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectrum_files_round_trip(spec in spectrum()) {
        let text = serde_json::to_string(&spec).unwrap();
        let back: DeformationSpectrum = serde_json::from_str(&text).unwrap();
        prop_assert!(back.same_multiset(&spec));
        prop_assert_eq!(back.n(), spec.n());
    }

    #[test]
    fn collapsing_keeps_the_multiset(spec in spectrum()) {
        let doubled = DeformationSpectrum::new(
            spec.eigenvalues().iter().chain(spec.eigenvalues()).copied().collect(),
            spec.multiplicities().iter().chain(spec.multiplicities()).copied().collect(),
        ).unwrap();
        let c = doubled.collapsed();
        prop_assert_eq!(c.n(), 2 * spec.n());
        prop_assert!(c.support_size() <= spec.len());
        prop_assert_eq!(doubled.expanded().len() as u64, doubled.n());
    }

    #[test]
    fn rescaling_is_inverted(points in prop::collection::vec(point(), 1..20), g in point(), n in 2u64..10_000) {
        let back = unrescale(&rescale(&points, n, g), n, g);
        for (a, b) in points.iter().zip(&back) {
            prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
        }
    }

    #[test]
    fn k_tuple_sums_ignore_order(mut points in prop::collection::vec(point(), 1..9), k in 1usize..4, seed in 0u64..1000) {
        let f = TestFunction::RadialBump { radius: 2.0 };
        let before = k_tuple_sum(&points, k, &f);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        points.shuffle(&mut rng);
        let after = k_tuple_sum(&points, k, &f);
        prop_assert!((before - after).abs() <= 1e-12 * before.abs().max(1.0));
    }

    #[test]
    fn eta_integral_is_minus_log_square(s in 1e-6f64..50.0) {
        prop_assert!((eta_integral(s) + (s * s).ln()).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hermitization_is_self_adjoint_with_paired_spectrum(seed in 0u64..10_000, z in point(), n in 2usize..12) {
        let x = sample_matrix(Model::Ginibre, n, seed).unwrap();
        let h = hermitization(&x, z);
        for i in 0..2 * n {
            for j in 0..2 * n {
                prop_assert_eq!(h[(i, j)], h[(j, i)].conj());
            }
        }
        let direct = singular_values(&x, z).unwrap();
        let paired = hermitization_singular_values(&x, z).unwrap();
        for (a, b) in direct.iter().zip(&paired) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn generated_spectra_are_critical(seed in 0u64..10_000, atoms in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_critical_atoms(&mut rng, 64, atoms).unwrap();
        let frak_c = a.norm().max(a.inverse_norm()) * 1.01;
        let report = verify_criticality(&a, frak_c, 1e-9).unwrap();
        prop_assert!(report.is_critical, "{report:?}");
        let (b, _) = derive_b0(&a).unwrap();
        let x = chi(&b).unwrap().value;
        prop_assert!((alpha_from_chi(x) - report.alpha).abs() < 1e-9);
    }

    #[test]
    fn greedy_matchings_pass_the_audit(
        n1 in 1usize..60,
        n2 in 1usize..60,
        l1 in prop::collection::vec(0usize..6, 60),
        l2 in prop::collection::vec(0usize..6, 60),
    ) {
        let s1 = partition(n1, l1, 0);
        let s2 = partition(n2, l2, 1000);
        match greedy_matching(&s1, &s2) {
            Ok(m) => prop_assert_eq!(check_matching(&s1, &s2, &m, None), Ok(())),
            Err(e) => prop_assert!(matches!(e, Error::PairingInfeasible(_)), "{e}"),
        }
    }

    #[test]
    fn bounded_ratio_matchings_pass_the_audit(
        extra1 in 0usize..400,
        extra2 in 0usize..400,
        l1 in prop::collection::vec(0usize..3, 600),
        l2 in prop::collection::vec(0usize..3, 600),
    ) {
        let c = 0.5;
        let (n1, n2) = (144 + extra1, 144 + extra2);
        let s1 = partition(n1, l1, 0);
        let s2 = partition(n2, l2, 1000);
        match match_partitions(&s1, &s2, c) {
            Ok(m) => prop_assert_eq!(check_matching(&s1, &s2, &m, Some(c)), Ok(())),
            Err(e) => prop_assert!(matches!(e, Error::SizePreconditionFailed(_)), "{e}"),
        }
    }
}
