//! Curriculum scheduling, Adam optimization, checkpointing and the training
//! loops for the contour module, the image module and joint fine-tuning.

mod adam;
mod checkpoint;
mod curriculum;
mod loops;

pub use adam::{adam_step, OptimConfig};
pub use checkpoint::{Checkpoint, CkptMeta, ModelMeta, RngState, FORMAT_VERSION};
pub use curriculum::{curriculum_state, curriculum_weights, CurriculumSchedule, CurriculumState};
pub use loops::{
    assemble_batch, batch_from_samples, load_contour_model, load_image_model, run_training, Batch,
    ContourTrainCfg, ContourTrainer, ImageTrainCfg, ImageTrainer, JointMode, JointTrainCfg,
    JointTrainer, TrainLogRow, TrainerLoop,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SampleConfig, ScenePool, SceneConfig};

    fn tiny_pool() -> ScenePool {
        let cfg = SampleConfig {
            scene: SceneConfig {
                canvas: 32,
                ..SceneConfig::default()
            },
            ..SampleConfig::default()
        };
        ScenePool::synth(&cfg, 4, 7).unwrap()
    }

    fn tiny_contour_cfg(steps: usize) -> ContourTrainCfg {
        ContourTrainCfg {
            optim: OptimConfig {
                batch_size: 2,
                steps,
                ..OptimConfig::default()
            },
            curriculum: CurriculumSchedule { boundaries: (2, 4) },
            width_mult: 0.125,
            canvas: 32,
            seed: 5,
            ..ContourTrainCfg::default()
        }
    }

    #[test]
    fn contour_smoke_run_and_checkpoint_roundtrip() {
        let pool = tiny_pool();
        let mut t = ContourTrainer::new(tiny_contour_cfg(6), "hash".into()).unwrap();
        let rows = run_training(&mut t, &pool, 6, None, None).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(rows.iter().all(|r| r.is_finite()));
        // stages follow the schedule
        assert_eq!(rows[0].adv_weight, 0.0);
        assert_eq!(rows[2].adv_weight, 0.01);
        assert_eq!(rows[4].adv_weight, 1.0);

        let ckpt = t.to_checkpoint().unwrap();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(bytes, back.to_bytes().unwrap());
        let mut t2 = ContourTrainer::from_checkpoint(&back).unwrap();
        assert_eq!(t2.step, 6);
        let ckpt2 = t2.to_checkpoint().unwrap();
        assert_eq!(bytes, ckpt2.to_bytes().unwrap(), "load->save not bitwise");
    }

    #[test]
    fn resume_matches_uninterrupted_trajectory() {
        let pool = tiny_pool();
        let cfg = tiny_contour_cfg(10);
        let mut full = ContourTrainer::new(cfg.clone(), "h".into()).unwrap();
        let full_rows = run_training(&mut full, &pool, 10, None, None).unwrap();

        let mut first = ContourTrainer::new(cfg, "h".into()).unwrap();
        run_training(&mut first, &pool, 5, None, None).unwrap();
        let ckpt = first.to_checkpoint().unwrap();
        let mut resumed = ContourTrainer::from_checkpoint(&ckpt).unwrap();
        let tail = run_training(&mut resumed, &pool, 10, None, None).unwrap();
        for (a, b) in full_rows[5..].iter().zip(&tail) {
            assert_eq!(a.content_loss, b.content_loss, "step {}", a.step);
            assert_eq!(a.d_loss, b.d_loss);
            assert_eq!(a.g_adv_loss, b.g_adv_loss);
        }
    }

    #[test]
    fn image_pretrain_to_finetune_first_layer_reinit() {
        let pool = tiny_pool();
        let pre_cfg = ImageTrainCfg {
            optim: OptimConfig {
                batch_size: 2,
                steps: 3,
                ..OptimConfig::default()
            },
            curriculum: CurriculumSchedule { boundaries: (1, 2) },
            width_mult: 0.125,
            canvas: 32,
            seed: 3,
            guided: false,
        };
        let mut pre = ImageTrainer::new(pre_cfg.clone(), "h".into()).unwrap();
        run_training(&mut pre, &pool, 3, None, None).unwrap();
        let pre_ckpt = pre.to_checkpoint().unwrap();

        let fine_cfg = ImageTrainCfg {
            guided: true,
            ..pre_cfg
        };
        let mut fine = ImageTrainer::from_pretrained(&pre_ckpt, fine_cfg, "h".into()).unwrap();

        // every non-first-layer parameter must be bitwise equal to pretrain
        let pre_map: std::collections::HashMap<String, ndarray::ArrayD<f32>> = pre_ckpt
            .tensors
            .iter()
            .filter(|(n, _)| n.starts_with("model/"))
            .map(|(n, t)| (n.clone(), t.clone()))
            .collect();
        let mut checked = 0;
        fine.model.gen.visit_params("gen", &mut |name, p| {
            if !name.starts_with("gen.coarse.0.") && !name.starts_with("gen.refine_b1.0.")
                && !name.starts_with("gen.refine_b2.0.")
            {
                let want = &pre_map[&format!("model/{name}")];
                assert_eq!(&p.value, want, "{name} not copied bitwise");
                checked += 1;
            }
        });
        assert!(checked > 10);

        // first layers have the new channel count
        assert_eq!(fine.model.gen.coarse.first_layer_in_channels(), 5);

        // and the fine-tuned model can still step
        run_training(&mut fine, &pool, 2, None, None).unwrap();
    }

    #[test]
    fn joint_mode_updates_contour_and_fixed_mode_freezes_it() {
        let pool = tiny_pool();
        let ccfg = tiny_contour_cfg(2);
        let mut ct = ContourTrainer::new(ccfg, "h".into()).unwrap();
        run_training(&mut ct, &pool, 2, None, None).unwrap();
        let contour_ckpt = ct.to_checkpoint().unwrap();

        let icfg = ImageTrainCfg {
            optim: OptimConfig {
                batch_size: 2,
                steps: 2,
                ..OptimConfig::default()
            },
            curriculum: CurriculumSchedule { boundaries: (1, 2) },
            width_mult: 0.125,
            canvas: 32,
            seed: 4,
            guided: true,
        };
        let mut it = ImageTrainer::new(icfg, "h".into()).unwrap();
        run_training(&mut it, &pool, 2, None, None).unwrap();
        let image_ckpt = it.to_checkpoint().unwrap();

        for (mode, expect_change) in [(JointMode::Joint, true), (JointMode::FixedContour, false)] {
            let jcfg = JointTrainCfg {
                optim: OptimConfig {
                    batch_size: 2,
                    steps: 1,
                    ..OptimConfig::default()
                },
                curriculum: CurriculumSchedule { boundaries: (10, 20) },
                canvas: 32,
                seed: 9,
                mode,
            };
            let mut jt = JointTrainer::new(&contour_ckpt, &image_ckpt, jcfg, "h".into()).unwrap();
            let before: Vec<ndarray::ArrayD<f32>> = {
                let mut v = Vec::new();
                jt.contour.gen.visit_params("gen", &mut |_, p| v.push(p.value.clone()));
                v
            };
            run_training(&mut jt, &pool, 1, None, None).unwrap();
            let mut changed = false;
            let mut idx = 0;
            jt.contour.gen.visit_params("gen", &mut |_, p| {
                if p.value != before[idx] {
                    changed = true;
                }
                idx += 1;
            });
            assert_eq!(changed, expect_change, "mode {mode:?}");
        }
    }

    #[test]
    fn determinism_same_config_same_trajectory() {
        let pool = tiny_pool();
        let cfg = tiny_contour_cfg(4);
        let mut a = ContourTrainer::new(cfg.clone(), "h".into()).unwrap();
        let mut b = ContourTrainer::new(cfg, "h".into()).unwrap();
        let ra = run_training(&mut a, &pool, 4, None, None).unwrap();
        let rb = run_training(&mut b, &pool, 4, None, None).unwrap();
        assert_eq!(ra, rb);
    }
}
