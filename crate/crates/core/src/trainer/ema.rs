use sha2::{Digest, Sha256};
use vessel_nn::Module;

use crate::error::{Error, Result};
use crate::networks::{Student, Teacher};

/// `min(1 - 1 / (epoch + 1), cap)`.
pub fn ema_decay(epoch: usize, cap: f64) -> f64 {
    (1.0 - 1.0 / (epoch as f64 + 1.0)).min(cap)
}

/// Gaussian ramp `exp(-5 (1 - e / E)^2)` reaching 1 at `E` epochs.
pub fn lambda_cons(epoch: usize, ramp_epochs: f64) -> f64 {
    if ramp_epochs <= 0.0 {
        return 1.0;
    }
    let t = (epoch as f64 / ramp_epochs).min(1.0);
    (-5.0 * (1.0 - t) * (1.0 - t)).exp()
}

/// `theta_t <- decay * theta_t + (1 - decay) * theta_s` over every parameter
/// and buffer of the teacher, paired by name with the student's encoder and
/// main decoder.
pub fn ema_update(teacher: &mut Teacher, student: &Student, decay: f64) -> Result<()> {
    let mut source = Vec::new();
    student.visit_teacher_path(&mut |name, p| source.push((name.to_string(), p.shape().to_vec(), p.value.clone())));
    let mut idx = 0;
    let mut err = None;
    teacher.visit_mut("", &mut |name, p| {
        if err.is_some() {
            return;
        }
        match source.get(idx) {
            Some((n, shape, values)) if n == name && shape == p.shape() => {
                for (t, &s) in p.value.iter_mut().zip(values) {
                    *t = (decay * *t as f64 + (1.0 - decay) * s as f64) as f32;
                }
            }
            other => {
                let found = other.map(|(n, s, _)| format!("{n} {s:?}")).unwrap_or_else(|| "nothing".into());
                err = Some(Error::shape("ema parameter", format!("{name} {:?}", p.shape()), found));
            }
        }
        idx += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if idx != source.len() {
        return Err(Error::shape("ema parameter count", source.len(), idx));
    }
    Ok(())
}

/// SHA-256 over every parameter name, shape and value of a module.
pub fn param_hash<M: Module + ?Sized>(module: &M) -> String {
    let mut h = Sha256::new();
    module.visit("", &mut |name, p| {
        h.update(name.as_bytes());
        for d in p.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in &p.value {
            h.update(v.to_le_bytes());
        }
    });
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{StudentSpec, TeacherSpec, UNetSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> (Student, Teacher) {
        let spec = StudentSpec { unet: UNetSpec { depth: 2, base_filters: 2, ..Default::default() }, ..Default::default() };
        let s = Student::new(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        let other = Student::new(&spec, &mut ChaCha8Rng::seed_from_u64(1));
        (s, Teacher::from_student(&other, &TeacherSpec::default()))
    }

    #[test]
    fn decay_landmarks() {
        assert_eq!(ema_decay(0, 0.95), 0.0);
        assert_eq!(ema_decay(4, 0.95), 0.8);
        assert_eq!(ema_decay(19, 0.95), 0.95);
        assert_eq!(ema_decay(1000, 0.95), 0.95);
    }

    #[test]
    fn ramp_landmarks() {
        assert_eq!(lambda_cons(30, 30.0), 1.0);
        assert_eq!(lambda_cons(90, 30.0), 1.0);
        assert!((lambda_cons(0, 30.0) - (-5.0f64).exp()).abs() < 1e-15);
        assert!((lambda_cons(15, 30.0) - (-1.25f64).exp()).abs() < 1e-15);
        assert_eq!(lambda_cons(0, 0.0), 1.0);
    }

    #[test]
    fn zero_decay_copies_student_bitwise() {
        let (s, mut t) = pair();
        let mut expected = Vec::new();
        s.visit_teacher_path(&mut |n, p| expected.push((n.to_string(), p.value.clone())));
        let values = |t: &Teacher| {
            let mut got = Vec::new();
            t.visit("", &mut |n, p| got.push((n.to_string(), p.value.clone())));
            got
        };
        assert_ne!(values(&t), expected);
        ema_update(&mut t, &s, 0.0).unwrap();
        assert_eq!(values(&t), expected);
    }

    #[test]
    fn unit_decay_keeps_teacher() {
        let (s, mut t) = pair();
        let before = param_hash(&t);
        ema_update(&mut t, &s, 1.0).unwrap();
        assert_eq!(param_hash(&t), before);
    }

    #[test]
    fn blend_arithmetic() {
        let (mut s, mut t) = pair();
        s.visit_mut("", &mut |_, p| p.value.iter_mut().for_each(|v| *v = 1.0));
        t.visit_mut("", &mut |_, p| p.value.iter_mut().for_each(|v| *v = 0.0));
        ema_update(&mut t, &s, 0.95).unwrap();
        t.visit("", &mut |_, p| assert!(p.value.iter().all(|&v| v == 0.05f64 as f32)));
    }

    #[test]
    fn incongruent_shapes_are_rejected() {
        let (_, mut t) = pair();
        let spec = StudentSpec { unet: UNetSpec { depth: 2, base_filters: 3, ..Default::default() }, ..Default::default() };
        let wide = Student::new(&spec, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(ema_update(&mut t, &wide, 0.5), Err(Error::ShapeMismatch { .. })));
    }
}
