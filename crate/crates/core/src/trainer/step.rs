use vessel_nn::{Adam, Tensor};

use super::config::{AblationLevel, DiscInput, InferenceNet, ModelConfig, TrainerConfig};
use super::ema::{ema_decay, ema_update, lambda_cons, param_hash};
use super::inference::Segmenter;
use crate::data::{images_to_tensor, masks_to_tensor, Batch};
use crate::error::{Error, Result};
use crate::losses::{adversarial_grads, bce_grad, consistency_grad, dice_grad, supervised_grad, total_loss, ConsistencyInputs, ConsistencyParts, LossBreakdown};
use crate::networks::{Discriminator, Student, StudentGrads, Teacher};
use crate::rng::{RngStreams, Stream};
use crate::types::RasterImage;
use crate::unveiling::{mc_sample, unveil_batch};

/// Student, optional teacher and discriminator, their optimizers and the
/// random streams: everything a training run mutates.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: ModelConfig,
    pub cfg: TrainerConfig,
    pub student: Student,
    pub teacher: Option<Teacher>,
    pub disc: Option<Discriminator>,
    pub opt_student: Adam,
    pub opt_disc: Adam,
    pub rng: RngStreams,
    /// Completed epochs; also the epoch index of the step in progress.
    pub epoch: usize,
    /// Completed optimisation steps.
    pub step: u64,
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn add_scaled(dst: &mut [f32], src: &[f64], scale: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += (s * scale) as f32;
    }
}

impl Trainer {
    pub fn new(model: &ModelConfig, cfg: &TrainerConfig, seed: u64) -> Result<Self> {
        model.validate()?;
        cfg.validate(model)?;
        let mut rng = RngStreams::new(seed);
        let student = Student::new(&model.student_spec(), rng.get(Stream::Init));
        let teacher = cfg.ablation.has_teacher().then(|| Teacher::from_student(&student, &model.teacher));
        let disc = cfg.ablation.discriminator().map(|kind| {
            let channels = match kind {
                DiscInput::Mask => 1,
                DiscInput::Feature => model.unet.bottleneck_channels(),
            };
            Discriminator::new(channels, &model.discriminator, rng.get(Stream::Init))
        });
        Ok(Self {
            model: model.clone(),
            cfg: cfg.clone(),
            student,
            teacher,
            disc,
            opt_student: Adam::new(cfg.lr, cfg.beta1, cfg.beta2),
            opt_disc: Adam::new(cfg.disc_lr, cfg.beta1, cfg.beta2),
            rng,
            epoch: 0,
            step: 0,
        })
    }

    pub fn level(&self) -> AblationLevel {
        self.cfg.ablation
    }

    pub fn lambda_cons(&self) -> f64 {
        if self.level().has_teacher() {
            lambda_cons(self.epoch, self.cfg.ramp_epochs)
        } else {
            0.0
        }
    }

    pub fn ema_decay(&self) -> f64 {
        ema_decay(self.epoch, self.cfg.ema_cap)
    }

    /// The network used for validation and export.
    pub fn segmenter(&self) -> Segmenter {
        match (self.cfg.inference, &self.teacher) {
            (InferenceNet::Student, _) | (InferenceNet::Auto, None) => Segmenter::Student(self.student.clone()),
            (_, Some(t)) => Segmenter::Teacher(t.clone()),
            (InferenceNet::Teacher, None) => unreachable!("validated at construction"),
        }
    }

    fn hashes(&self) -> [Option<String>; 3] {
        [
            Some(param_hash(&self.student)),
            self.teacher.as_ref().map(param_hash),
            self.disc.as_ref().map(param_hash),
        ]
    }

    fn check_untouched(before: &[Option<String>; 3], after: &[Option<String>; 3], skip: usize, phase: &str) -> Result<()> {
        const NAMES: [&str; 3] = ["student", "teacher", "discriminator"];
        for i in (0..3).filter(|&i| i != skip) {
            if before[i] != after[i] {
                return Err(Error::Invariant(format!("{phase} modified the {}", NAMES[i])));
            }
        }
        Ok(())
    }

    /// One optimisation step: student update, discriminator update on
    /// detached inputs, then the EMA teacher update.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossBreakdown> {
        let level = self.level();
        let b_l = batch.labeled.len();
        if b_l == 0 {
            return Err(Error::EmptyDataset("batch has no labeled patches".into()));
        }
        let use_u = level.uses_unlabeled() && !batch.unlabeled.is_empty();
        let b_u = if use_u { batch.unlabeled.len() } else { 0 };
        let mut imgs: Vec<&RasterImage> = batch.labeled.iter().map(|(i, _)| i).collect();
        imgs.extend(batch.unlabeled.iter().take(b_u));
        let x = images_to_tensor(&imgs);
        let y = masks_to_tensor(&batch.labeled.iter().map(|(_, m)| m).collect::<Vec<_>>());
        let verify = self.cfg.verify_isolation;
        let before = verify.then(|| self.hashes());

        let pert = self.student.sample_perturbation(self.rng.get(Stream::Noise));
        let n_aux = if level.tri_decoder() { b_l } else { 0 };
        let (out, cache) = self.student.forward(&x, n_aux, true, &pert, self.rng.get(Stream::Noise));

        // Supervised term, averaged over labeled patches.
        let mut g_main = Tensor::zeros(out.main.shape());
        let aux_shape = [b_l, 1, x.h(), x.w()];
        let (mut g_noise, mut g_drop) = (Tensor::zeros(aux_shape), Tensor::zeros(aux_shape));
        let mut l_sup = 0.0;
        let inv_l = 1.0 / b_l as f64;
        for i in 0..b_l {
            let yi = y.sample(i);
            if let (Some(n), Some(d)) = (&out.noise, &out.dropout) {
                let (l, [gm, gn, gd]) = supervised_grad([out.main.sample(i), n.sample(i), d.sample(i)], yi);
                add_scaled(g_main.sample_mut(i), &gm, inv_l);
                add_scaled(g_noise.sample_mut(i), &gn, inv_l);
                add_scaled(g_drop.sample_mut(i), &gd, inv_l);
                l_sup += l * inv_l;
            } else {
                let (lb, gb) = bce_grad(out.main.sample(i), yi);
                let (ld, gd) = dice_grad(out.main.sample(i), yi);
                add_scaled(g_main.sample_mut(i), &gb, inv_l);
                add_scaled(g_main.sample_mut(i), &gd, inv_l);
                l_sup += (lb + ld) * inv_l;
            }
        }

        // Consistency against the teacher on unlabeled patches.
        let lambda = self.lambda_cons();
        let mut cons = ConsistencyParts::default();
        let mut z_teacher = None;
        if let (Some(t), true) = (&self.teacher, use_u) {
            let x_u = x.slice_batch(b_l, b_u);
            let (p_t, z_t) = t.forward(&x_u, None);
            let unveiled = level.unveiling().then(|| {
                let samples = mc_sample(t, &imgs[b_l..], self.cfg.unveil.k, &self.cfg.augment.soft, self.rng.get(Stream::MonteCarlo));
                unveil_batch(&samples, self.cfg.unveil.entropy, self.cfg.unveil.norm)
            });
            let zeros = vec![0.0f32; x.h() * x.w()];
            let inv_u = 1.0 / b_u as f64;
            for j in 0..b_u {
                let (y_w, i_vessel) = match &unveiled {
                    Some(u) => (u.y_w.sample(j), u.i_vessel.sample(j)),
                    None => (p_t.sample(j), &zeros[..]),
                };
                let inp = ConsistencyInputs { student: out.main.sample(b_l + j), teacher: p_t.sample(j), y_w, i_vessel };
                let (parts, g) = consistency_grad(&inp, self.cfg.alpha_balance, self.cfg.mse_target, level.unveiling());
                cons.l_cons += parts.l_cons * inv_u;
                cons.l_cons_mse += parts.l_cons_mse * inv_u;
                cons.l_cons_dist += parts.l_cons_dist * inv_u;
                add_scaled(g_main.sample_mut(b_l + j), &g, lambda * inv_u);
            }
            z_teacher = Some(z_t);
        }

        // Adversarial term through the frozen discriminator.
        let mut l_adv = 0.0;
        let mut g_z = None;
        let mut detached = None;
        if let (Some(d), Some(kind), true) = (&self.disc, level.discriminator(), use_u) {
            let (real, fake_adv, fake_disc) = match kind {
                DiscInput::Mask => {
                    let fake = out.main.slice_batch(b_l, b_u);
                    (y.clone(), fake.clone(), fake)
                }
                DiscInput::Feature => {
                    let z_t = z_teacher.clone().expect("feature levels have a teacher");
                    let fake_adv = if self.cfg.adv_unlabeled_via_student { out.z.slice_batch(b_l, b_u) } else { z_t.clone() };
                    (out.z.slice_batch(0, b_l), fake_adv, z_t)
                }
            };
            let (p, dc) = d.forward(&Tensor::concat_batch(&[&real, &fake_adv]), true)?;
            let n_real = b_l * p.sample_len();
            let adv = adversarial_grads(&p.data()[..n_real], &p.data()[n_real..]);
            l_adv = adv.l_adv;
            let mut dp = to_f32(&adv.adv_lab);
            dp.extend(to_f32(&adv.adv_unlab));
            let dx = d.input_grad(dc, &Tensor::from_vec(p.shape(), dp));
            match kind {
                DiscInput::Mask => {
                    for j in 0..b_u {
                        for (g, &v) in g_main.sample_mut(b_l + j).iter_mut().zip(dx.sample(b_l + j)) {
                            *g += v;
                        }
                    }
                }
                DiscInput::Feature => {
                    let mut gz = Tensor::zeros(out.z.shape());
                    let keep = if self.cfg.adv_unlabeled_via_student { b_l + b_u } else { b_l };
                    for i in 0..keep {
                        gz.sample_mut(i).copy_from_slice(dx.sample(i));
                    }
                    g_z = Some(gz);
                }
            }
            detached = Some((real, fake_disc));
        }

        let grads = StudentGrads {
            main: Some(g_main),
            noise: out.noise.is_some().then_some(g_noise),
            dropout: out.dropout.is_some().then_some(g_drop),
            z: g_z,
        };
        self.student.backward(cache, grads);
        for (name, value) in [("l_sup", l_sup), ("l_cons", cons.l_cons), ("l_adv", l_adv)] {
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(name));
            }
        }
        self.opt_student.step(&mut self.student);
        if let Some(b) = &before {
            let after = self.hashes();
            Self::check_untouched(b, &after, 0, "student update")?;
        }

        // Discriminator update on detached inputs.
        let mut l_disc = 0.0;
        let before = (verify && detached.is_some()).then(|| self.hashes_without_disc());
        if let (Some(d), Some((real, fake))) = (self.disc.as_mut(), detached) {
            let (p, dc) = d.forward(&Tensor::concat_batch(&[&real, &fake]), true)?;
            let n_real = b_l * p.sample_len();
            let adv = adversarial_grads(&p.data()[..n_real], &p.data()[n_real..]);
            l_disc = adv.l_disc;
            let mut dp = to_f32(&adv.disc_lab);
            dp.extend(to_f32(&adv.disc_unlab));
            d.backward(dc, &Tensor::from_vec(p.shape(), dp));
            self.opt_disc.step(d);
        }
        if let Some(b) = before {
            if b != self.hashes_without_disc() {
                return Err(Error::Invariant("discriminator update modified the student or teacher".into()));
            }
        }

        let decay = self.ema_decay();
        if let Some(t) = self.teacher.as_mut() {
            let disc_before = verify.then(|| self.disc.as_ref().map(param_hash));
            ema_update(t, &self.student, decay)?;
            if let Some(b) = disc_before {
                if b != self.disc.as_ref().map(param_hash) {
                    return Err(Error::Invariant("teacher update modified the discriminator".into()));
                }
            }
        }
        self.step += 1;
        total_loss(l_sup, cons, l_adv, l_disc, lambda, self.cfg.alpha_balance)
    }

    fn hashes_without_disc(&self) -> (String, Option<String>) {
        (param_hash(&self.student), self.teacher.as_ref().map(param_hash))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::AugmentationSpec;
    use crate::networks::{DiscriminatorSpec, UNetSpec};
    use crate::types::BinaryMask;
    use rand::{Rng, SeedableRng};
    use vessel_nn::Module;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_model() -> ModelConfig {
        ModelConfig {
            unet: UNetSpec { depth: 2, base_filters: 4, ..Default::default() },
            discriminator: DiscriminatorSpec { base_filters: 4, slope: 0.2 },
            ..Default::default()
        }
    }

    pub(crate) fn tiny_cfg(level: AblationLevel) -> TrainerConfig {
        TrainerConfig {
            patch_size: 32,
            patch_stride: 32,
            batch_labeled: 2,
            batch_unlabeled: 2,
            ablation: level,
            lr: 1e-3,
            disc_lr: 1e-3,
            ramp_epochs: 0.0,
            unveil: crate::unveiling::UnveilSpec { k: 3, ..Default::default() },
            augment: AugmentationSpec::default(),
            verify_isolation: true,
            ..Default::default()
        }
    }

    pub(crate) fn tiny_batch(seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = |rng: &mut ChaCha8Rng| RasterImage::new(32, 32, 3, (0..32 * 32 * 3).map(|_| rng.gen()).collect()).unwrap();
        let labeled = (0..2)
            .map(|_| {
                let i = img(&mut rng);
                let m = BinaryMask::from_fn(32, 32, |r, c| i.get(r, c, 1) > 0.6);
                (i, m)
            })
            .collect();
        Batch { labeled, unlabeled: (0..2).map(|_| img(&mut rng)).collect() }
    }

    #[test]
    fn every_level_steps_with_consistent_breakdown() {
        for level in [AblationLevel::SupervisedOnly, AblationLevel::I, AblationLevel::II, AblationLevel::III, AblationLevel::IV, AblationLevel::V] {
            let mut t = Trainer::new(&tiny_model(), &tiny_cfg(level), 3).unwrap();
            assert_eq!(t.teacher.is_some(), level.has_teacher());
            for s in 0..2 {
                let b = t.train_step(&tiny_batch(s)).unwrap();
                assert!((b.total - (b.l_sup + b.lambda_cons * b.l_cons + b.l_adv)).abs() < 1e-9, "{level:?}");
                assert!((b.l_cons - (b.alpha_balance * b.l_cons_mse + b.l_cons_dist)).abs() < 1e-9);
                assert_eq!(b.l_cons_dist > 0.0, level.unveiling(), "{level:?}");
                assert!(b.l_cons_mse > 0.0 || !level.has_teacher());
                assert_eq!(b.l_adv > 0.0, level.discriminator().is_some(), "{level:?}");
                if !level.has_teacher() {
                    assert_eq!((b.l_cons, b.lambda_cons), (0.0, 0.0));
                }
            }
            assert_eq!(t.step, 2);
        }
    }

    #[test]
    fn first_epoch_teacher_equals_student() {
        let mut t = Trainer::new(&tiny_model(), &tiny_cfg(AblationLevel::V), 4).unwrap();
        t.train_step(&tiny_batch(0)).unwrap();
        let mut expected = Vec::new();
        t.student.visit_teacher_path(&mut |n, p| expected.push((n.to_string(), p.value.clone())));
        let mut got = Vec::new();
        t.teacher.as_ref().unwrap().visit("", &mut |n, p| got.push((n.to_string(), p.value.clone())));
        assert_eq!(got, expected);
    }

    #[test]
    fn steps_are_deterministic() {
        let run = || {
            let mut t = Trainer::new(&tiny_model(), &tiny_cfg(AblationLevel::V), 5).unwrap();
            (0..3).map(|s| t.train_step(&tiny_batch(s)).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn supervised_loss_decreases_on_a_fixed_batch() {
        let mut cfg = tiny_cfg(AblationLevel::SupervisedOnly);
        cfg.lr = 3e-3;
        let mut t = Trainer::new(&tiny_model(), &cfg, 6).unwrap();
        let b = tiny_batch(9);
        let first = t.train_step(&b).unwrap().l_sup;
        let mut last = first;
        for _ in 0..40 {
            last = t.train_step(&b).unwrap().l_sup;
        }
        assert!(last < 0.7 * first, "{first} -> {last}");
    }
}
