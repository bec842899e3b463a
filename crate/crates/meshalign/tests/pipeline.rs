//! Pipeline-level contracts that need many alignment runs.

use meshalign::aligner::{align, AlignConfig};
use meshalign::evalkit::{synth_pair, textured_image};

/// Coarse-to-fine contract: the correction the second global layer applies
/// is smaller (RMS corner motion) than the first layer's on at least 90%
/// of a 50-pair synthetic suite.
#[test]
fn layer_two_residual_is_smaller_than_layer_one() {
    let cfg = AlignConfig {
        working_resolution: 64,
        refine_iters: 15,
        grid_rows: 4,
        grid_cols: 4,
        ..AlignConfig::default()
    };
    let n = 50usize;
    let mut smaller = 0usize;
    for i in 0..n {
        let src = textured_image(200, 200, 1, 5000 + (i / 2) as u64);
        let pair = synth_pair(&src, 8.0, 128, 5100 + i as u64).unwrap();
        let result = align(&pair.reference, &pair.target, &cfg, None).unwrap();
        let [r1, r2] = result.stage_residual_rms;
        if r2 < r1 {
            smaller += 1;
        }
    }
    assert!(
        smaller * 10 >= n * 9,
        "layer-2 residual smaller on only {smaller}/{n} pairs"
    );
    println!("coarse-to-fine residual contract: {smaller}/{n}");
}
