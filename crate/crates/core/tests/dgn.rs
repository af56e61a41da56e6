use gvdiff_core::dgn::{gate_from_noise, sample_gate, GateMode};
use gvdiff_core::numerics::rng::{GATE_EPSILON, GATE_UNIFORM};
use gvdiff_core::numerics::RngStream;
use proptest::prelude::*;

/// Logistic CDF written out directly, independent of the crate's sigmoid.
fn logistic_cdf(r: f64) -> f64 {
    1.0 / (1.0 + (-r).exp())
}

#[test]
fn hard_gate_rate_follows_logistic_cdf() {
    let mut eps = RngStream::new(21, GATE_EPSILON);
    let mut uni = RngStream::new(21, GATE_UNIFORM);
    let draws = 100_000;
    let open = (0..draws)
        .filter(|_| sample_gate(0, 2.0, GateMode::Train, &mut eps, &mut uni).hard == 1.0)
        .count();
    let mean = open as f64 / draws as f64;
    assert!((logistic_cdf(2.0) - 0.8808).abs() < 1e-4);
    assert!((mean - 0.8808).abs() < 0.005, "{mean}");
}

#[test]
fn infer_mode_is_deterministic() {
    let mut eps = RngStream::new(1, GATE_EPSILON);
    let mut uni = RngStream::new(1, GATE_UNIFORM);
    for r in [-1.0, -1e-12, 0.0, 0.4] {
        let a = sample_gate(3, r, GateMode::Infer, &mut eps, &mut uni);
        assert_eq!(a.value, if r >= 0.0 { 1.0 } else { 0.0 });
        assert_eq!(a, sample_gate(3, r, GateMode::Infer, &mut eps, &mut uni));
    }
    // Infer mode draws nothing.
    assert_eq!(eps.counter(), RngStream::new(1, GATE_EPSILON).counter());
}

proptest! {
    #[test]
    fn soft_gate_strictly_inside_unit_interval(r in -30.0f64..30.0, e in -5.0f64..5.0) {
        let d = gate_from_noise(0, r, e, 0.7, GateMode::Train);
        prop_assert!(d.soft > 0.0 && d.soft < 1.0);
        prop_assert_eq!(d.value, d.soft);
    }

    #[test]
    fn gates_are_monotone_in_noised_relevance(a in -20.0f64..20.0, delta in 1e-6f64..5.0) {
        let lo = gate_from_noise(0, a, 0.0, 0.9, GateMode::Train);
        let hi = gate_from_noise(0, a + delta, 0.0, 0.9, GateMode::Train);
        prop_assert!(hi.soft > lo.soft);
        prop_assert!(hi.hard >= lo.hard);
    }

    #[test]
    fn hard_path_carries_no_gradient(r in -10.0f64..10.0, e in -3.0f64..3.0, n in 0.0f64..0.5) {
        let d = gate_from_noise(0, r, e, n, GateMode::Train);
        prop_assert_eq!(d.value, d.hard);
        prop_assert_eq!(d.dvalue_drelevance(), 0.0);
    }
}
