//! Generate a small synthetic dataset and print its statistics.
//!
//! ```bash
//! cargo run --release --example synth_dataset
//! ```

use contour_inpaint::data::{
    make_sample, save_dataset, DatasetMeta, Regime, RegimeTag, SampleConfig,
};

fn main() -> contour_inpaint::Result<()> {
    let cfg = SampleConfig::default(); // 64x64 scenes, default brush
    let out = std::env::temp_dir().join("contour-inpaint-dataset");

    let mut samples = Vec::new();
    for k in 0..16u64 {
        let regime = if k % 2 == 0 {
            Regime::Overlap
        } else {
            Regime::NonOverlap
        };
        samples.push(make_sample(&cfg, regime, k)?);
    }

    for (k, s) in samples.iter().enumerate() {
        let fg = s.seg.0.iter().filter(|&&v| v == 1).count();
        let contour_px = s.contour_gt.0.iter().filter(|&&v| v == 1.0).count();
        println!(
            "sample {k:02}: hole ratio {:.3}, foreground px {fg}, contour px {contour_px}",
            s.hole.area_ratio()
        );
    }

    let meta = DatasetMeta {
        version: 1,
        seed: 0,
        regime: RegimeTag::Mixed,
        config_hash: "example".into(),
        count: samples.len(),
    };
    save_dataset(&out, &samples, &meta, true)?;
    println!("dataset written to {}", out.display());
    Ok(())
}
