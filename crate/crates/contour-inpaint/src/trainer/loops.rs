//! Training loops: alternating discriminator/generator updates under the
//! curriculum, deterministic given (config, seed), resumable from bitwise
//! checkpoints. One discriminator step and one generator step per iteration;
//! discriminator updates are skipped while the adversarial weight is zero.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array4, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, OptimConfig};
use super::checkpoint::{Checkpoint, CkptMeta, ModelMeta, RngState, FORMAT_VERSION};
use super::curriculum::{curriculum_state, curriculum_weights, CurriculumSchedule};
use crate::contour::{
    focal_contour_loss_grad, g_adv_loss_grad, hinge_d_loss_grad, ContourLossConfig, ContourModel,
};
use crate::data::{SampleSource, TrainingSample};
use crate::error::{Error, Result};
use crate::inpaint::{composite, image_content_loss_grad, ImageModel};
use crate::nn::{concat_channels, slice_channels, InpaintGenerator, PatchDiscriminator};

const INIT_STREAM: u64 = 0x494e_4954; // distinct rng stream for weight init

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub stage: u8,
    pub content_weight: f64,
    pub adv_weight: f64,
    pub content_loss: f64,
    pub g_adv_loss: f64,
    pub d_loss: f64,
}

impl TrainLogRow {
    pub const CSV_HEADER: &'static str =
        "step,stage,content_weight,adv_weight,content_loss,g_adv_loss,d_loss";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.step,
            self.stage,
            self.content_weight,
            self.adv_weight,
            self.content_loss,
            self.g_adv_loss,
            self.d_loss
        )
    }

    pub fn is_finite(&self) -> bool {
        self.content_loss.is_finite() && self.g_adv_loss.is_finite() && self.d_loss.is_finite()
    }
}

/// Batched training tensors, NCHW f32.
pub struct Batch {
    pub image: Array4<f32>,
    pub image_in: Array4<f32>,
    pub contour_gt: Array4<f32>,
    pub contour_in: Array4<f32>,
    pub hole: Array4<f32>,
    pub seg: Array4<f32>,
}

pub fn assemble_batch(
    source: &dyn SampleSource,
    rng: &mut ChaCha8Rng,
    batch_size: usize,
) -> Result<Batch> {
    let samples: Vec<TrainingSample> = (0..batch_size)
        .map(|_| source.draw(rng))
        .collect::<Result<_>>()?;
    batch_from_samples(&samples)
}

pub fn batch_from_samples(samples: &[TrainingSample]) -> Result<Batch> {
    let (h, w) = samples
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?
        .canvas();
    let b = samples.len();
    let mut batch = Batch {
        image: Array4::zeros((b, 3, h, w)),
        image_in: Array4::zeros((b, 3, h, w)),
        contour_gt: Array4::zeros((b, 1, h, w)),
        contour_in: Array4::zeros((b, 1, h, w)),
        hole: Array4::zeros((b, 1, h, w)),
        seg: Array4::zeros((b, 1, h, w)),
    };
    for (k, s) in samples.iter().enumerate() {
        if s.canvas() != (h, w) {
            return Err(Error::Shape("mixed canvas sizes in one batch".into()));
        }
        for c in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    batch.image[[k, c, i, j]] = s.image[[c, i, j]];
                    batch.image_in[[k, c, i, j]] = s.image_in[[c, i, j]];
                }
            }
        }
        for i in 0..h {
            for j in 0..w {
                batch.contour_gt[[k, 0, i, j]] = s.contour_gt.0[[i, j]];
                batch.contour_in[[k, 0, i, j]] = s.contour_in.0[[i, j]];
                batch.hole[[k, 0, i, j]] = s.hole.0[[i, j]] as f32;
                batch.seg[[k, 0, i, j]] = s.seg.0[[i, j]] as f32;
            }
        }
    }
    Ok(batch)
}

/// Anything `run_training` can drive.
pub trait TrainerLoop {
    fn train_step(&mut self, source: &dyn SampleSource) -> Result<TrainLogRow>;
    fn to_checkpoint(&mut self) -> Result<Checkpoint>;
    fn current_step(&self) -> usize;
}

/// Drive a trainer to `target_step` (absolute, so resumed runs line up),
/// appending CSV rows. On divergence a diagnostic checkpoint is written to
/// `diag_path` before the error propagates.
pub fn run_training(
    trainer: &mut dyn TrainerLoop,
    source: &dyn SampleSource,
    target_step: usize,
    log_path: Option<&Path>,
    diag_path: Option<&Path>,
) -> Result<Vec<TrainLogRow>> {
    let mut log_file = match log_path {
        Some(p) => {
            if let Some(parent) = p.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::file_io(parent, e))?;
                }
            }
            let fresh = !p.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::file_io(p, e))?;
            if fresh {
                writeln!(f, "{}", TrainLogRow::CSV_HEADER).map_err(|e| Error::file_io(p, e))?;
            }
            Some(f)
        }
        None => None,
    };
    let mut rows = Vec::new();
    while trainer.current_step() < target_step {
        match trainer.train_step(source) {
            Ok(row) => {
                if let Some(f) = log_file.as_mut() {
                    writeln!(f, "{}", row.to_csv()).map_err(Error::Io)?;
                }
                rows.push(row);
            }
            Err(e) => {
                if let Some(p) = diag_path {
                    if let Ok(ckpt) = trainer.to_checkpoint() {
                        let _ = ckpt.write_to(p);
                    }
                }
                return Err(e);
            }
        }
    }
    Ok(rows)
}

// --- checkpoint plumbing shared by all trainers ---------------------------

fn collect_model(
    ns: &str,
    gen: &mut InpaintGenerator<f32>,
    disc: &mut PatchDiscriminator<f32>,
    out: &mut Vec<(String, ArrayD<f32>)>,
) {
    let mut params: Vec<(String, ArrayD<f32>, Option<(ArrayD<f32>, ArrayD<f32>)>)> = Vec::new();
    {
        let mut grab = |name: String, p: &mut crate::nn::Param<f32>| {
            let adam = match (&p.adam_m, &p.adam_v) {
                (Some(m), Some(v)) => Some((m.clone(), v.clone())),
                _ => None,
            };
            params.push((name, p.value.clone(), adam));
        };
        gen.visit_params(&format!("{ns}gen"), &mut grab);
        disc.visit_params(&format!("{ns}disc"), &mut grab);
    }
    for (name, value, adam) in params {
        out.push((format!("model/{name}"), value));
        if let Some((m, v)) = adam {
            out.push((format!("adam_m/{name}"), m));
            out.push((format!("adam_v/{name}"), v));
        }
    }
    disc.visit_sn_states(&format!("{ns}disc"), &mut |n, s| {
        out.push((format!("sn_u/{n}"), s.u.clone().into_dyn()));
        out.push((format!("sn_v/{n}"), s.v.clone().into_dyn()));
    });
}

fn restore_model(
    ckpt: &Checkpoint,
    ns: &str,
    gen: &mut InpaintGenerator<f32>,
    disc: &mut PatchDiscriminator<f32>,
) -> Result<()> {
    let map: HashMap<&str, &ArrayD<f32>> = ckpt
        .tensors
        .iter()
        .map(|(n, t)| (n.as_str(), t))
        .collect();
    let mut missing: Vec<String> = Vec::new();
    let mut bad_shape: Vec<String> = Vec::new();
    {
        let mut apply = |name: String, p: &mut crate::nn::Param<f32>| {
            match map.get(format!("model/{name}").as_str()) {
                Some(t) => {
                    if t.shape() != p.value.shape() {
                        bad_shape.push(name.clone());
                    } else {
                        p.value = (*t).clone();
                    }
                }
                None => missing.push(name.clone()),
            }
            if let (Some(m), Some(v)) = (
                map.get(format!("adam_m/{name}").as_str()),
                map.get(format!("adam_v/{name}").as_str()),
            ) {
                p.adam_m = Some((*m).clone());
                p.adam_v = Some((*v).clone());
            }
        };
        gen.visit_params(&format!("{ns}gen"), &mut apply);
        disc.visit_params(&format!("{ns}disc"), &mut apply);
    }
    if !missing.is_empty() || !bad_shape.is_empty() {
        return Err(Error::Checkpoint(format!(
            "incompatible checkpoint: missing {missing:?}, shape mismatch {bad_shape:?}"
        )));
    }
    let mut sn_err = None;
    disc.visit_sn_states(&format!("{ns}disc"), &mut |n, s| {
        match (
            map.get(format!("sn_u/{n}").as_str()),
            map.get(format!("sn_v/{n}").as_str()),
        ) {
            (Some(u), Some(v)) => {
                s.u = (*u).clone().into_dimensionality().expect("sn_u is a vector");
                s.v = (*v).clone().into_dimensionality().expect("sn_v is a vector");
            }
            _ => sn_err = Some(n),
        }
    });
    if let Some(n) = sn_err {
        return Err(Error::Checkpoint(format!(
            "missing spectral-norm state for {n}"
        )));
    }
    Ok(())
}

// --- contour trainer -------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContourTrainCfg {
    pub optim: OptimConfig,
    pub curriculum: CurriculumSchedule,
    pub loss: ContourLossConfig,
    pub width_mult: f64,
    pub canvas: usize,
    pub seed: u64,
}

impl Default for ContourTrainCfg {
    fn default() -> Self {
        ContourTrainCfg {
            optim: OptimConfig::default(),
            curriculum: CurriculumSchedule {
                boundaries: (3000, 6000),
            },
            loss: ContourLossConfig::default(),
            width_mult: 0.25,
            canvas: 64,
            seed: 0,
        }
    }
}

pub struct ContourTrainer {
    pub model: ContourModel<f32>,
    pub cfg: ContourTrainCfg,
    pub config_hash: String,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub adam_t_gen: usize,
    pub adam_t_disc: usize,
}

impl ContourTrainer {
    pub fn new(cfg: ContourTrainCfg, config_hash: String) -> Result<Self> {
        cfg.optim.validate()?;
        cfg.loss.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_STREAM);
        let model = ContourModel::new(cfg.width_mult, &mut init_rng)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(ContourTrainer {
            model,
            cfg,
            config_hash,
            rng,
            step: 0,
            adam_t_gen: 0,
            adam_t_disc: 0,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: ContourTrainCfg = serde_json::from_value(ckpt.meta.train_cfg.clone())?;
        let ModelMeta::Contour { gen, disc } = &ckpt.meta.model else {
            return Err(Error::Checkpoint("not a contour checkpoint".into()));
        };
        let mut dummy = ChaCha8Rng::seed_from_u64(0);
        let mut model = ContourModel::from_config(gen.clone(), disc.clone(), &mut dummy)?;
        restore_model(ckpt, "", &mut model.gen, &mut model.disc)?;
        Ok(ContourTrainer {
            model,
            cfg,
            config_hash: ckpt.meta.config_hash.clone(),
            rng: ckpt.meta.rng.restore()?,
            step: ckpt.meta.step,
            adam_t_gen: ckpt.meta.adam_t_gen,
            adam_t_disc: ckpt.meta.adam_t_disc,
        })
    }
}

impl TrainerLoop for ContourTrainer {
    fn train_step(&mut self, source: &dyn SampleSource) -> Result<TrainLogRow> {
        let (cw, aw) = curriculum_weights(self.step, &self.cfg.curriculum);
        let batch = assemble_batch(source, &mut self.rng, self.cfg.optim.batch_size)?;
        self.model.zero_grads();

        let (out, cache) = self
            .model
            .forward(&batch.image_in, &batch.contour_in, &batch.hole)?;
        let (l_coarse, g_coarse) =
            focal_contour_loss_grad(&out.coarse, &batch.contour_gt, &batch.hole, &self.cfg.loss)?;
        let (l_refined, g_refined) = focal_contour_loss_grad(
            &out.refined,
            &batch.contour_gt,
            &batch.hole,
            &self.cfg.loss,
        )?;
        let content = (l_coarse + l_refined) as f64;

        let mut d_loss = 0.0f64;
        let mut g_adv = 0.0f64;
        let mut d_ref_adv: Option<Array4<f32>> = None;
        if aw > 0.0 {
            // discriminator update: real pair (image, gt contour), fake pair
            // (image, refined contour); generator untouched here
            self.model.disc.power_iterate();
            let real_in = concat_channels(&[&batch.image, &batch.contour_gt]);
            let fake_in = concat_channels(&[&batch.image, &out.refined]);
            let (s_real, cache_r) = self.model.disc.forward(&real_in);
            let (s_fake, cache_f) = self.model.disc.forward(&fake_in);
            let (dl, g_real, g_fake) = hinge_d_loss_grad(&s_real, &s_fake);
            d_loss = dl as f64;
            self.model.disc.backward(&cache_r, &g_real);
            self.model.disc.backward(&cache_f, &g_fake);
            self.adam_t_disc += 1;
            let t = self.adam_t_disc;
            let oc = self.cfg.optim;
            self.model
                .disc
                .visit_params("disc", &mut |_, p| adam_step(p, t, &oc));

            // generator adversarial pass against the updated discriminator;
            // discriminator gradients accumulated here are dropped at the
            // next zero_grads
            let (s_fake2, cache_f2) = self.model.disc.forward(&fake_in);
            let (ga, dscore) = g_adv_loss_grad(&s_fake2);
            g_adv = ga as f64;
            let dx = self.model.disc.backward(&cache_f2, &dscore);
            let aw32 = aw as f32;
            d_ref_adv = Some(slice_channels(&dx, 3, 4).mapv(|v| v * aw32));
        }

        let cw32 = cw as f32;
        let gc = g_coarse.mapv(|v| v * cw32);
        let gr = g_refined.mapv(|v| v * cw32);
        self.model.backward(&cache, &gc, &gr, d_ref_adv.as_ref());
        self.adam_t_gen += 1;
        let t = self.adam_t_gen;
        let oc = self.cfg.optim;
        self.model
            .gen
            .visit_params("gen", &mut |_, p| adam_step(p, t, &oc));

        let row = TrainLogRow {
            step: self.step,
            stage: curriculum_state(self.step, &self.cfg.curriculum).stage,
            content_weight: cw,
            adv_weight: aw,
            content_loss: content,
            g_adv_loss: g_adv,
            d_loss,
        };
        if !row.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                what: "contour loss".into(),
            });
        }
        self.step += 1;
        Ok(row)
    }

    fn to_checkpoint(&mut self) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        collect_model("", &mut self.model.gen, &mut self.model.disc, &mut tensors);
        Ok(Checkpoint {
            meta: CkptMeta {
                format_version: FORMAT_VERSION,
                phase: "contour".into(),
                step: self.step,
                adam_t_gen: self.adam_t_gen,
                adam_t_disc: self.adam_t_disc,
                curriculum: curriculum_state(self.step, &self.cfg.curriculum),
                optim: self.cfg.optim,
                rng: RngState::capture(&self.rng),
                config_hash: self.config_hash.clone(),
                model: ModelMeta::Contour {
                    gen: self.model.gen.cfg.clone(),
                    disc: self.model.disc.cfg.clone(),
                },
                train_cfg: serde_json::to_value(&self.cfg)?,
            },
            tensors,
        })
    }

    fn current_step(&self) -> usize {
        self.step
    }
}

// --- image trainer ---------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageTrainCfg {
    pub optim: OptimConfig,
    pub curriculum: CurriculumSchedule,
    pub width_mult: f64,
    pub canvas: usize,
    pub seed: u64,
    /// Whether the model takes the completed contour as an input channel.
    pub guided: bool,
}

impl Default for ImageTrainCfg {
    fn default() -> Self {
        ImageTrainCfg {
            optim: OptimConfig::default(),
            curriculum: CurriculumSchedule {
                boundaries: (3000, 6000),
            },
            width_mult: 0.25,
            canvas: 64,
            seed: 0,
            guided: true,
        }
    }
}

pub struct ImageTrainer {
    pub model: ImageModel<f32>,
    pub cfg: ImageTrainCfg,
    pub config_hash: String,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub adam_t_gen: usize,
    pub adam_t_disc: usize,
}

/// Names of the parameters that read network input and therefore change
/// shape when the contour channel is added.
fn is_first_layer_param(name: &str) -> bool {
    name == "gen.coarse.0.w"
        || name == "gen.coarse.0.b"
        || name == "gen.refine_b1.0.w"
        || name == "gen.refine_b1.0.b"
        || name == "gen.refine_b2.0.w"
        || name == "gen.refine_b2.0.b"
}

impl ImageTrainer {
    pub fn new(cfg: ImageTrainCfg, config_hash: String) -> Result<Self> {
        cfg.optim.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ INIT_STREAM);
        let model = ImageModel::new(cfg.width_mult, cfg.guided, &mut init_rng)?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(ImageTrainer {
            model,
            cfg,
            config_hash,
            rng,
            step: 0,
            adam_t_gen: 0,
            adam_t_disc: 0,
        })
    }

    /// Start a fine-tuning phase from a pretraining checkpoint. If the input
    /// channel counts differ (a contour channel was added), the first layer
    /// of each encoder is freshly initialized and every other parameter is
    /// copied; any other mismatch is an error.
    pub fn from_pretrained(
        ckpt: &Checkpoint,
        cfg: ImageTrainCfg,
        config_hash: String,
    ) -> Result<Self> {
        let ModelMeta::Image { .. } = &ckpt.meta.model else {
            return Err(Error::Checkpoint("not an image checkpoint".into()));
        };
        let mut trainer = ImageTrainer::new(cfg, config_hash)?;
        let map: HashMap<&str, &ArrayD<f32>> = ckpt
            .tensors
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        let mut errors: Vec<String> = Vec::new();
        {
            let mut apply = |name: String, p: &mut crate::nn::Param<f32>| {
                match map.get(format!("model/{name}").as_str()) {
                    Some(t) if t.shape() == p.value.shape() => {
                        p.value = (*t).clone();
                    }
                    Some(_) | None if is_first_layer_param(&name) => {
                        // keep the fresh initialization
                    }
                    Some(_) => errors.push(format!("{name}: shape mismatch beyond first layer")),
                    None => errors.push(format!("{name}: missing in checkpoint")),
                }
            };
            trainer.model.gen.visit_params("gen", &mut apply);
            trainer.model.disc.visit_params("disc", &mut apply);
        }
        if !errors.is_empty() {
            return Err(Error::Checkpoint(format!(
                "incompatible pretraining checkpoint: {errors:?}"
            )));
        }
        // discriminator shape is unchanged; carry its power-iteration state
        let mut sn_missing = false;
        trainer.model.disc.visit_sn_states("disc", &mut |n, s| {
            match (
                map.get(format!("sn_u/{n}").as_str()),
                map.get(format!("sn_v/{n}").as_str()),
            ) {
                (Some(u), Some(v)) => {
                    s.u = (*u).clone().into_dimensionality().expect("sn_u vector");
                    s.v = (*v).clone().into_dimensionality().expect("sn_v vector");
                }
                _ => sn_missing = true,
            }
        });
        if sn_missing {
            return Err(Error::Checkpoint(
                "pretraining checkpoint lacks spectral-norm state".into(),
            ));
        }
        Ok(trainer)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: ImageTrainCfg = serde_json::from_value(ckpt.meta.train_cfg.clone())?;
        let ModelMeta::Image { guided, gen, disc } = &ckpt.meta.model else {
            return Err(Error::Checkpoint("not an image checkpoint".into()));
        };
        let mut dummy = ChaCha8Rng::seed_from_u64(0);
        let mut model = ImageModel {
            gen: InpaintGenerator::new(gen.clone(), &mut dummy)?,
            disc: PatchDiscriminator::new(disc.clone(), &mut dummy)?,
            guided: *guided,
        };
        restore_model(ckpt, "", &mut model.gen, &mut model.disc)?;
        Ok(ImageTrainer {
            model,
            cfg,
            config_hash: ckpt.meta.config_hash.clone(),
            rng: ckpt.meta.rng.restore()?,
            step: ckpt.meta.step,
            adam_t_gen: ckpt.meta.adam_t_gen,
            adam_t_disc: ckpt.meta.adam_t_disc,
        })
    }
}

impl TrainerLoop for ImageTrainer {
    fn train_step(&mut self, source: &dyn SampleSource) -> Result<TrainLogRow> {
        let (cw, aw) = curriculum_weights(self.step, &self.cfg.curriculum);
        let batch = assemble_batch(source, &mut self.rng, self.cfg.optim.batch_size)?;
        self.model.zero_grads();

        // teacher forcing: isolated image training conditions on the
        // ground-truth contour
        let contour = self.cfg.guided.then_some(&batch.contour_gt);
        let (out, cache) = self.model.forward(&batch.image_in, contour, &batch.hole)?;
        let (content, g_coarse, g_refined) = image_content_loss_grad(&out, &batch.image)?;
        let content = content as f64;

        let mut d_loss = 0.0f64;
        let mut g_adv = 0.0f64;
        let mut d_ref_adv: Option<Array4<f32>> = None;
        if aw > 0.0 {
            self.model.disc.power_iterate();
            let fake_img = composite(&out.refined, &batch.image_in, &batch.hole);
            let real_in = concat_channels(&[&batch.image, &batch.hole]);
            let fake_in = concat_channels(&[&fake_img, &batch.hole]);
            let (s_real, cache_r) = self.model.disc.forward(&real_in);
            let (s_fake, cache_f) = self.model.disc.forward(&fake_in);
            let (dl, g_real, g_fake) = hinge_d_loss_grad(&s_real, &s_fake);
            d_loss = dl as f64;
            self.model.disc.backward(&cache_r, &g_real);
            self.model.disc.backward(&cache_f, &g_fake);
            self.adam_t_disc += 1;
            let t = self.adam_t_disc;
            let oc = self.cfg.optim;
            self.model
                .disc
                .visit_params("disc", &mut |_, p| adam_step(p, t, &oc));

            let (s_fake2, cache_f2) = self.model.disc.forward(&fake_in);
            let (ga, dscore) = g_adv_loss_grad(&s_fake2);
            g_adv = ga as f64;
            let dx = self.model.disc.backward(&cache_f2, &dscore);
            // through the composite: only hole pixels reach the generator
            let aw32 = aw as f32;
            let mut d_ref = slice_channels(&dx, 0, 3);
            let (b, c, h, w) = d_ref.dim();
            for bi in 0..b {
                for ci in 0..c {
                    for i in 0..h {
                        for j in 0..w {
                            let m = batch.hole[[bi, 0, i, j]];
                            d_ref[[bi, ci, i, j]] *= m * aw32;
                        }
                    }
                }
            }
            d_ref_adv = Some(d_ref);
        }

        let cw32 = cw as f32;
        let gc = g_coarse.mapv(|v| v * cw32);
        let gr = g_refined.mapv(|v| v * cw32);
        let _ = self.model.backward(&cache, &gc, &gr, d_ref_adv.as_ref());
        self.adam_t_gen += 1;
        let t = self.adam_t_gen;
        let oc = self.cfg.optim;
        self.model
            .gen
            .visit_params("gen", &mut |_, p| adam_step(p, t, &oc));

        let row = TrainLogRow {
            step: self.step,
            stage: curriculum_state(self.step, &self.cfg.curriculum).stage,
            content_weight: cw,
            adv_weight: aw,
            content_loss: content,
            g_adv_loss: g_adv,
            d_loss,
        };
        if !row.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                what: "image loss".into(),
            });
        }
        self.step += 1;
        Ok(row)
    }

    fn to_checkpoint(&mut self) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        collect_model("", &mut self.model.gen, &mut self.model.disc, &mut tensors);
        Ok(Checkpoint {
            meta: CkptMeta {
                format_version: FORMAT_VERSION,
                phase: if self.cfg.guided {
                    "image_finetune".into()
                } else {
                    "image_pretrain".into()
                },
                step: self.step,
                adam_t_gen: self.adam_t_gen,
                adam_t_disc: self.adam_t_disc,
                curriculum: curriculum_state(self.step, &self.cfg.curriculum),
                optim: self.cfg.optim,
                rng: RngState::capture(&self.rng),
                config_hash: self.config_hash.clone(),
                model: ModelMeta::Image {
                    guided: self.model.guided,
                    gen: self.model.gen.cfg.clone(),
                    disc: self.model.disc.cfg.clone(),
                },
                train_cfg: serde_json::to_value(&self.cfg)?,
            },
            tensors,
        })
    }

    fn current_step(&self) -> usize {
        self.step
    }
}

// --- joint fine-tuning ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointMode {
    /// Contour parameters frozen; only the image module trains.
    FixedContour,
    /// Image losses backpropagate through the predicted contour into the
    /// contour generator (the default).
    Joint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointTrainCfg {
    pub optim: OptimConfig,
    pub curriculum: CurriculumSchedule,
    pub canvas: usize,
    pub seed: u64,
    pub mode: JointMode,
}

impl Default for JointTrainCfg {
    fn default() -> Self {
        JointTrainCfg {
            optim: OptimConfig::default(),
            curriculum: CurriculumSchedule {
                boundaries: (3000, 6000),
            },
            canvas: 64,
            seed: 0,
            mode: JointMode::Joint,
        }
    }
}

pub struct JointTrainer {
    pub contour: ContourModel<f32>,
    pub image: ImageModel<f32>,
    pub cfg: JointTrainCfg,
    pub config_hash: String,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub adam_t_img_gen: usize,
    pub adam_t_img_disc: usize,
    pub adam_t_contour: usize,
}

impl JointTrainer {
    /// Assemble from separately trained contour and (guided) image
    /// checkpoints.
    pub fn new(
        contour_ckpt: &Checkpoint,
        image_ckpt: &Checkpoint,
        cfg: JointTrainCfg,
        config_hash: String,
    ) -> Result<Self> {
        cfg.optim.validate()?;
        let contour = ContourTrainer::from_checkpoint(contour_ckpt)?.model;
        let image = ImageTrainer::from_checkpoint(image_ckpt)?.model;
        if !image.guided {
            return Err(Error::Checkpoint(
                "joint fine-tuning requires a contour-guided image model".into(),
            ));
        }
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(JointTrainer {
            contour,
            image,
            cfg,
            config_hash,
            rng,
            step: 0,
            adam_t_img_gen: 0,
            adam_t_img_disc: 0,
            adam_t_contour: 0,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cfg: JointTrainCfg = serde_json::from_value(ckpt.meta.train_cfg.clone())?;
        let ModelMeta::Joint {
            contour_gen,
            contour_disc,
            image_gen,
            image_disc,
        } = &ckpt.meta.model
        else {
            return Err(Error::Checkpoint("not a joint checkpoint".into()));
        };
        let mut dummy = ChaCha8Rng::seed_from_u64(0);
        let mut contour =
            ContourModel::from_config(contour_gen.clone(), contour_disc.clone(), &mut dummy)?;
        restore_model(ckpt, "contour/", &mut contour.gen, &mut contour.disc)?;
        let mut image = ImageModel {
            gen: InpaintGenerator::new(image_gen.clone(), &mut dummy)?,
            disc: PatchDiscriminator::new(image_disc.clone(), &mut dummy)?,
            guided: true,
        };
        restore_model(ckpt, "image/", &mut image.gen, &mut image.disc)?;
        Ok(JointTrainer {
            contour,
            image,
            cfg,
            config_hash: ckpt.meta.config_hash.clone(),
            rng: ckpt.meta.rng.restore()?,
            step: ckpt.meta.step,
            adam_t_img_gen: ckpt.meta.adam_t_gen,
            adam_t_img_disc: ckpt.meta.adam_t_disc,
            adam_t_contour: ckpt.meta.adam_t_gen,
        })
    }

    /// Contour handed to the image module: detected contour outside holes,
    /// soft prediction inside (gradients flow through the hole region).
    fn composite_contour(
        contour_in: &Array4<f32>,
        refined: &Array4<f32>,
        hole: &Array4<f32>,
    ) -> Array4<f32> {
        let mut out = contour_in.clone();
        ndarray::Zip::from(&mut out)
            .and(refined)
            .and(hole)
            .for_each(|o, &r, &h| {
                if h > 0.0 {
                    *o = r;
                }
            });
        out
    }
}

impl TrainerLoop for JointTrainer {
    fn train_step(&mut self, source: &dyn SampleSource) -> Result<TrainLogRow> {
        let (cw, aw) = curriculum_weights(self.step, &self.cfg.curriculum);
        let batch = assemble_batch(source, &mut self.rng, self.cfg.optim.batch_size)?;
        self.contour.zero_grads();
        self.image.zero_grads();

        let (cout, ccache) = self
            .contour
            .forward(&batch.image_in, &batch.contour_in, &batch.hole)?;
        let ccomp = Self::composite_contour(&batch.contour_in, &cout.refined, &batch.hole);
        let (iout, icache) = self
            .image
            .forward(&batch.image_in, Some(&ccomp), &batch.hole)?;
        let (content, g_coarse, g_refined) = image_content_loss_grad(&iout, &batch.image)?;
        let content = content as f64;

        let mut d_loss = 0.0f64;
        let mut g_adv = 0.0f64;
        let mut d_ref_adv: Option<Array4<f32>> = None;
        if aw > 0.0 {
            self.image.disc.power_iterate();
            let fake_img = composite(&iout.refined, &batch.image_in, &batch.hole);
            let real_in = concat_channels(&[&batch.image, &batch.hole]);
            let fake_in = concat_channels(&[&fake_img, &batch.hole]);
            let (s_real, cache_r) = self.image.disc.forward(&real_in);
            let (s_fake, cache_f) = self.image.disc.forward(&fake_in);
            let (dl, g_real, g_fake) = hinge_d_loss_grad(&s_real, &s_fake);
            d_loss = dl as f64;
            self.image.disc.backward(&cache_r, &g_real);
            self.image.disc.backward(&cache_f, &g_fake);
            self.adam_t_img_disc += 1;
            let t = self.adam_t_img_disc;
            let oc = self.cfg.optim;
            self.image
                .disc
                .visit_params("disc", &mut |_, p| adam_step(p, t, &oc));

            let (s_fake2, cache_f2) = self.image.disc.forward(&fake_in);
            let (ga, dscore) = g_adv_loss_grad(&s_fake2);
            g_adv = ga as f64;
            let dx = self.image.disc.backward(&cache_f2, &dscore);
            let aw32 = aw as f32;
            let mut d_ref = slice_channels(&dx, 0, 3);
            ndarray::Zip::from(&mut d_ref)
                .and(&broadcast_hole(&batch.hole, 3))
                .for_each(|d, &m| *d *= m * aw32);
            d_ref_adv = Some(d_ref);
        }

        let cw32 = cw as f32;
        let gc = g_coarse.mapv(|v| v * cw32);
        let gr = g_refined.mapv(|v| v * cw32);
        let ib = self.image.backward(&icache, &gc, &gr, d_ref_adv.as_ref());
        self.adam_t_img_gen += 1;
        let t = self.adam_t_img_gen;
        let oc = self.cfg.optim;
        self.image
            .gen
            .visit_params("gen", &mut |_, p| adam_step(p, t, &oc));

        if self.cfg.mode == JointMode::Joint {
            let d_ccomp = ib
                .d_contour
                .ok_or_else(|| Error::Contract("guided model returned no contour grad".into()))?;
            // composite passes gradient to the refined contour inside holes
            let mut d_cref = d_ccomp;
            ndarray::Zip::from(&mut d_cref)
                .and(&batch.hole)
                .for_each(|d, &h| {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                });
            let zero_coarse = Array4::<f32>::zeros(cout.coarse.dim());
            self.contour.backward(&ccache, &zero_coarse, &d_cref, None);
            self.adam_t_contour += 1;
            let t = self.adam_t_contour;
            self.contour
                .gen
                .visit_params("gen", &mut |_, p| adam_step(p, t, &oc));
        }

        let row = TrainLogRow {
            step: self.step,
            stage: curriculum_state(self.step, &self.cfg.curriculum).stage,
            content_weight: cw,
            adv_weight: aw,
            content_loss: content,
            g_adv_loss: g_adv,
            d_loss,
        };
        if !row.is_finite() {
            return Err(Error::Diverged {
                step: self.step,
                what: "joint loss".into(),
            });
        }
        self.step += 1;
        Ok(row)
    }

    fn to_checkpoint(&mut self) -> Result<Checkpoint> {
        let mut tensors = Vec::new();
        collect_model(
            "contour/",
            &mut self.contour.gen,
            &mut self.contour.disc,
            &mut tensors,
        );
        collect_model(
            "image/",
            &mut self.image.gen,
            &mut self.image.disc,
            &mut tensors,
        );
        Ok(Checkpoint {
            meta: CkptMeta {
                format_version: FORMAT_VERSION,
                phase: "joint".into(),
                step: self.step,
                adam_t_gen: self.adam_t_img_gen,
                adam_t_disc: self.adam_t_img_disc,
                curriculum: curriculum_state(self.step, &self.cfg.curriculum),
                optim: self.cfg.optim,
                rng: RngState::capture(&self.rng),
                config_hash: self.config_hash.clone(),
                model: ModelMeta::Joint {
                    contour_gen: self.contour.gen.cfg.clone(),
                    contour_disc: self.contour.disc.cfg.clone(),
                    image_gen: self.image.gen.cfg.clone(),
                    image_disc: self.image.disc.cfg.clone(),
                },
                train_cfg: serde_json::to_value(&self.cfg)?,
            },
            tensors,
        })
    }

    fn current_step(&self) -> usize {
        self.step
    }
}

fn broadcast_hole(hole: &Array4<f32>, channels: usize) -> Array4<f32> {
    let (b, _, h, w) = hole.dim();
    let mut out = Array4::<f32>::zeros((b, channels, h, w));
    for bi in 0..b {
        for c in 0..channels {
            for i in 0..h {
                for j in 0..w {
                    out[[bi, c, i, j]] = hole[[bi, 0, i, j]];
                }
            }
        }
    }
    out
}

/// Restore just the models out of checkpoints (for inference).
pub fn load_contour_model(ckpt: &Checkpoint) -> Result<ContourModel<f32>> {
    match &ckpt.meta.model {
        ModelMeta::Contour { gen, disc } => {
            let mut dummy = ChaCha8Rng::seed_from_u64(0);
            let mut model = ContourModel::from_config(gen.clone(), disc.clone(), &mut dummy)?;
            restore_model(ckpt, "", &mut model.gen, &mut model.disc)?;
            Ok(model)
        }
        ModelMeta::Joint {
            contour_gen,
            contour_disc,
            ..
        } => {
            let mut dummy = ChaCha8Rng::seed_from_u64(0);
            let mut model =
                ContourModel::from_config(contour_gen.clone(), contour_disc.clone(), &mut dummy)?;
            restore_model(ckpt, "contour/", &mut model.gen, &mut model.disc)?;
            Ok(model)
        }
        ModelMeta::Image { .. } => Err(Error::Checkpoint(
            "checkpoint holds an image model, not a contour model".into(),
        )),
    }
}

pub fn load_image_model(ckpt: &Checkpoint) -> Result<ImageModel<f32>> {
    match &ckpt.meta.model {
        ModelMeta::Image { guided, gen, disc } => {
            let mut dummy = ChaCha8Rng::seed_from_u64(0);
            let mut model = ImageModel {
                gen: InpaintGenerator::new(gen.clone(), &mut dummy)?,
                disc: PatchDiscriminator::new(disc.clone(), &mut dummy)?,
                guided: *guided,
            };
            restore_model(ckpt, "", &mut model.gen, &mut model.disc)?;
            Ok(model)
        }
        ModelMeta::Joint {
            image_gen,
            image_disc,
            ..
        } => {
            let mut dummy = ChaCha8Rng::seed_from_u64(0);
            let mut model = ImageModel {
                gen: InpaintGenerator::new(image_gen.clone(), &mut dummy)?,
                disc: PatchDiscriminator::new(image_disc.clone(), &mut dummy)?,
                guided: true,
            };
            restore_model(ckpt, "image/", &mut model.gen, &mut model.disc)?;
            Ok(model)
        }
        ModelMeta::Contour { .. } => Err(Error::Checkpoint(
            "checkpoint holds a contour model, not an image model".into(),
        )),
    }
}
