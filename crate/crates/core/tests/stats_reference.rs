//! Statistics checked against values frozen from an independent
//! implementation (scipy / statsmodels) before this crate was written.

use newswatch::stats::*;
use proptest::prelude::*;

const G1: [f64; 8] = [0.12, 0.35, 0.08, 0.5, 0.22, 0.31, 0.05, 0.4];
const G2: [f64; 7] = [0.9, 1.4, 0.7, 1.1, 2.3, 0.85, 1.6];
const G3: [f64; 9] = [1.2, 0.95, 2.8, 1.75, 1.3, 3.1, 0.6, 1.9, 2.2];

fn sig4(actual: f64, expected: f64) -> bool {
    (actual - expected).abs() <= 5e-5 * expected.abs()
}

fn groups() -> Vec<Vec<f64>> {
    vec![G1.to_vec(), G2.to_vec(), G3.to_vec()]
}

#[test]
fn welch_anova_reference() {
    let r = welch_anova(&groups()).unwrap();
    assert!(sig4(r.f, 21.955428254674118), "{r:?}");
    assert_eq!(r.df1, 2);
    assert!(sig4(r.df2, 10.16521642730404), "{r:?}");
    assert!(sig4(r.p, 0.0002044528029192607), "{r:?}");
}

#[test]
fn pairwise_reference() {
    let expected = [
        (-4.639607936046159, 6.899659201433594, 0.002462198365681454, 0.004924396731362908),
        (-5.266288185795548, 8.674756049084177, 0.0005826791779263838, 0.0017480375337791514),
        (-1.4056397462827706, 13.745988762679291, 0.18202963830300833, 0.18202963830300833),
    ];
    let tests = posthoc_pairwise(&groups()).unwrap();
    assert_eq!(tests.len(), 3);
    for (t, (tt, df, p, adj)) in tests.iter().zip(expected) {
        assert!(sig4(t.t, tt) && sig4(t.df, df) && sig4(t.p_raw, p) && sig4(t.p_adjusted, adj), "{t:?}");
    }
}

#[test]
fn special_function_reference() {
    let cases = [
        (0.5, 0.5, 0.3, 0.36901011956554536),
        (2.0, 3.0, 0.4, 0.5247999999999999),
        (10.0, 20.0, 0.35, 0.5923866636639051),
        (50.0, 0.5, 0.99, 0.3173043978741973),
        (1.5, 40.0, 0.01, 0.1526920611519988),
    ];
    for (a, b, x, expected) in cases {
        let got = betainc(a, b, x);
        assert!((got - expected).abs() < 1e-10, "I_{x}({a},{b}) = {got}, expected {expected}");
    }
    assert!(sig4(f_sf(3.7, 2.0, 20.5), 0.042465280025743214));
    assert!(sig4(f_sf(102.03, 2.0, 214.28), 7.425293024543976e-32));
}

#[test]
fn separated_groups_are_significant() {
    let base: Vec<f64> = (0..30).map(|i| ((i * 37 % 17) as f64) / 17.0).collect();
    let sd = {
        let m = base.iter().sum::<f64>() / 30.0;
        (base.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 29.0).sqrt()
    };
    let shifted: Vec<f64> = base.iter().map(|v| v + 10.0 * sd).collect();
    let third: Vec<f64> = base.iter().map(|v| v * 1.3 + 20.0 * sd).collect();
    let tests = posthoc_pairwise(&[base, shifted, third]).unwrap();
    assert!(tests.iter().all(|t| t.p_adjusted < 1e-3), "{tests:?}");
}

fn sample_groups() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 2..15), 2..5).prop_filter("non-constant groups", |gs| {
        gs.iter().all(|g| {
            let m = g.iter().sum::<f64>() / g.len() as f64;
            g.iter().map(|v| (v - m).powi(2)).sum::<f64>() > 1e-6
        })
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #[test]
    fn welch_is_affine_invariant(gs in sample_groups(), shift in -100.0f64..100.0, scale in 0.01f64..100.0) {
        let base = welch_anova(&gs).unwrap();
        let moved: Vec<Vec<f64>> = gs.iter().map(|g| g.iter().map(|v| v * scale + shift).collect()).collect();
        let r = welch_anova(&moved).unwrap();
        prop_assert!(rel(base.f, r.f) < 1e-9);
        prop_assert!(rel(base.df2, r.df2) < 1e-9);
        prop_assert!(rel(base.p, r.p) < 1e-9 || (base.p - r.p).abs() < 1e-15);
    }

    #[test]
    fn betainc_complement(a in 0.5f64..50.0, b in 0.5f64..50.0, x in 0.0001f64..0.9999) {
        let s = betainc(a, b, x) + betainc(b, a, 1.0 - x);
        prop_assert!((s - 1.0).abs() < 1e-12, "sum {}", s);
    }

    #[test]
    fn holm_dominates_raw(ps in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let adj = holm_adjust(&ps);
        let mut order: Vec<usize> = (0..ps.len()).collect();
        order.sort_by(|&i, &j| ps[i].total_cmp(&ps[j]));
        for (i, (&p, &q)) in ps.iter().zip(&adj).enumerate() {
            prop_assert!(q >= p && q <= 1.0, "index {}", i);
        }
        for w in order.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
    }

    #[test]
    fn kappa_is_symmetric(pairs in prop::collection::vec((0u8..4, 0u8..4), 1..200)) {
        let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let k1 = cohen_kappa(&a, &b).unwrap();
        let k2 = cohen_kappa(&b, &a).unwrap();
        prop_assert!((k1 - k2).abs() < 1e-12);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&k1));
    }
}

fn shifted_copies(pattern: &[f64], means: &[f64]) -> Vec<Vec<f64>> {
    means.iter().map(|m| pattern.iter().map(|v| v + m).collect()).collect()
}

#[test]
fn equal_variance_two_groups_match_classic_anova() {
    let gs = shifted_copies(&[-1.5, -0.5, 0.0, 0.7, 1.3], &[0.0, 0.8]);
    let w = welch_anova(&gs).unwrap();
    let c = classic_anova(&gs).unwrap();
    assert!(rel(w.f, c.f) < 1e-12, "{w:?} {c:?}");
}

#[test]
fn equal_variance_many_groups_converge_to_classic_anova() {
    // For g > 2 groups the Welch denominator exceeds 1 by
    // 2(g-2)(g-1) / (g(g+1)(n-1)) when variances and sizes are equal, so
    // agreement within 1e-6 needs n in the hundreds of thousands.
    let n: usize = 400_000;
    let pattern: Vec<f64> = (0..n).map(|i| ((i * 7919) % 1013) as f64 / 1013.0).collect();
    let gs = shifted_copies(&pattern, &[0.0, 0.004, -0.002]);
    let w = welch_anova(&gs).unwrap();
    let c = classic_anova(&gs).unwrap();
    assert!(rel(w.f, c.f) < 1e-6, "{w:?} {c:?}");
    let g = 3.0;
    let gap = 2.0 * (g - 2.0) * (g - 1.0) / (g * (g + 1.0) * (n as f64 - 1.0));
    assert!((c.f / w.f - 1.0 - gap).abs() < 1e-12);
}
