use pd_lstm::features::{build_sequence, DenoiseConfig};
use pd_lstm::stl::{multi_decompose, scale_windows, DEFAULT_WINDOWS};
use pd_lstm::synth::{generate_signal, BurstSpec, SynthSpec};

fn finest_window_counts(start: f64, end: f64) -> Vec<f64> {
    let n = 8000;
    let mut spec = SynthSpec {
        seed: 17,
        ..SynthSpec::desk_default(n)
    };
    spec.pd_bursts = vec![BurstSpec {
        start_fraction: start,
        end_fraction: end,
        ..BurstSpec::desk_default(n)
    }];
    let generated = generate_signal(&spec).unwrap();
    let windows = scale_windows(&DEFAULT_WINDOWS, n);
    let set = multi_decompose(0, &generated.signal, &windows).unwrap();
    let seq = build_sequence(&set, 4, &DenoiseConfig::default()).unwrap();
    seq.steps.iter().map(|s| s[0]).collect()
}

#[test]
fn burst_inside_second_quarter_dominates_its_peak_count() {
    let counts = finest_window_counts(0.26, 0.36);
    for k in [0, 2, 3] {
        assert!(counts[1] > counts[k], "peak counts per quarter {counts:?}");
    }
}

#[test]
fn burst_straddling_a_boundary_lifts_both_quarters() {
    let counts = finest_window_counts(0.2, 0.3);
    for hot in [0, 1] {
        for cold in [2, 3] {
            assert!(counts[hot] > counts[cold], "peak counts per quarter {counts:?}");
        }
    }
}
