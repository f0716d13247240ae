use proptest::prelude::*;
use svkit::dspfeat::WaveBuffer;
use svkit::qmf::{estimate_snr, qmf_vector, DMode, SnrConfig};
use svkit::trialdata::UtteranceMeta;

fn meta(id: &str, dur: f64, snr: f64) -> UtteranceMeta {
    UtteranceMeta { id: id.into(), duration_seconds: dur, snr_db: Some(snr), speaker: None }
}

/// 200 Hz tone (an exact number of periods per 25 ms frame) with amplitude 1
/// on a contiguous block covering `loud_share` of the buffer, 0.01 elsewhere.
fn gated_tone(loud_share: f64) -> WaveBuffer {
    let n = 16_000;
    let loud = (n as f64 * loud_share) as usize;
    let s = (0..n)
        .map(|i| {
            let amp = if i < loud { 1.0 } else { 0.01 };
            amp * (2.0 * std::f64::consts::PI * 200.0 * i as f64 / 16_000.0).sin()
        })
        .collect();
    WaveBuffer::new(s, 16_000).unwrap()
}

#[test]
fn gated_tone_is_forty_db() {
    // Frames straddling the gate pull the top-30% mean slightly down.
    let snr = estimate_snr(&gated_tone(0.3), &SnrConfig::default()).unwrap();
    assert!((snr - 40.0).abs() < 0.5, "{snr}");
    // With a wider loud block every top-30% frame is fully loud.
    let snr = estimate_snr(&gated_tone(0.35), &SnrConfig::default()).unwrap();
    assert!((snr - 40.0).abs() < 1e-9, "{snr}");
}

#[test]
fn snr_ignores_gain() {
    let w = gated_tone(0.3);
    let base = estimate_snr(&w, &SnrConfig::default()).unwrap();
    for g in [0.001, 0.5, 3.0, 100.0] {
        let scaled = estimate_snr(&w.scaled(g), &SnrConfig::default()).unwrap();
        assert!((scaled - base).abs() <= 1e-6);
    }
}

proptest! {
    #[test]
    fn swapping_sides_swaps_slots(a in 0.1f64..60.0, b in 0.1f64..60.0, se in -10.0f64..40.0, st in -10.0f64..40.0, log_product in any::<bool>()) {
        let mode = if log_product { DMode::LogProduct } else { DMode::Duplicate };
        let x = qmf_vector(&meta("x", a, se), &meta("y", b, st), mode).unwrap().0;
        let y = qmf_vector(&meta("y", b, st), &meta("x", a, se), mode).unwrap().0;
        prop_assert_eq!((x[0], x[1]), (y[1], y[0]));
        prop_assert_eq!((x[4], x[5]), (y[5], y[4]));
        prop_assert!((x[2] - y[2]).abs() <= 1e-15);
        prop_assert!((x[3] - y[3]).abs() <= 1e-15);
    }

    #[test]
    fn total_duration_slot_bounds(a in 0.1f64..60.0, b in 0.1f64..60.0, extra in 0.01f64..10.0) {
        let q = qmf_vector(&meta("x", a, 0.0), &meta("y", b, 0.0), DMode::Duplicate).unwrap().0;
        prop_assert!(q[2] >= (2.0 * a.min(b)).ln());
        prop_assert_eq!(q[2], q[3]);
        let longer = qmf_vector(&meta("x", a + extra, 0.0), &meta("y", b, 0.0), DMode::Duplicate).unwrap().0;
        prop_assert!(longer[2] > q[2]);
    }
}
