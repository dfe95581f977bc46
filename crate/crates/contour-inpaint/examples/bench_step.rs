use contour_inpaint::data::{SampleConfig, ScenePool};
use contour_inpaint::trainer::*;
use std::time::Instant;

fn main() {
    let cfg = SampleConfig::default(); // canvas 64
    let pool = ScenePool::synth(&cfg, 20, 1).unwrap();

    // contour trainer, desk profile: 64x64, mult 0.25, batch 8
    let tcfg = ContourTrainCfg {
        optim: OptimConfig { batch_size: 8, steps: 10, ..OptimConfig::default() },
        curriculum: CurriculumSchedule { boundaries: (5, 8) }, // cross stages quickly
        ..ContourTrainCfg::default()
    };
    let mut t = ContourTrainer::new(tcfg, "bench".into()).unwrap();
    let t0 = Instant::now();
    run_training(&mut t, &pool, 5, None, None).unwrap();
    let stage1 = t0.elapsed().as_secs_f64() / 5.0;
    let t1 = Instant::now();
    run_training(&mut t, &pool, 10, None, None).unwrap();
    let stage23 = t1.elapsed().as_secs_f64() / 5.0;
    println!("contour: stage1 {:.3}s/step, stage2+3 {:.3}s/step", stage1, stage23);

    let icfg = ImageTrainCfg {
        optim: OptimConfig { batch_size: 8, steps: 10, ..OptimConfig::default() },
        curriculum: CurriculumSchedule { boundaries: (5, 8) },
        guided: true,
        ..ImageTrainCfg::default()
    };
    let mut it = ImageTrainer::new(icfg, "bench".into()).unwrap();
    let t0 = Instant::now();
    run_training(&mut it, &pool, 5, None, None).unwrap();
    let stage1 = t0.elapsed().as_secs_f64() / 5.0;
    let t1 = Instant::now();
    run_training(&mut it, &pool, 10, None, None).unwrap();
    let stage23 = t1.elapsed().as_secs_f64() / 5.0;
    println!("image:   stage1 {:.3}s/step, stage2+3 {:.3}s/step", stage1, stage23);
}
