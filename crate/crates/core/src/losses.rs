//! Loss terms and their gradients with respect to predicted probabilities.
//!
//! The slice functions return `(value, dvalue/dinput)` in `f64` and accept
//! `f32` or `f64` inputs; the map-level wrappers validate shapes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, ProbMap};

pub const BCE_EPS: f64 = 1e-7;
pub const DICE_SMOOTH: f64 = 1.0;

fn check_len(what: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(what, a, b));
    }
    Ok(())
}

fn check_dims(what: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::shape(what, format!("{}x{}", a.0, a.1), format!("{}x{}", b.0, b.1)));
    }
    Ok(())
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
/// The gradient is zero where the clamp is active.
pub fn bce_grad<P: Copy + Into<f64>, T: Copy + Into<f64>>(p: &[P], y: &[T]) -> (f64, Vec<f64>) {
    assert_eq!(p.len(), y.len(), "bce operands");
    let n = p.len() as f64;
    let mut loss = 0.0;
    let grad = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let (raw, y) = (p.into(), y.into());
            let q = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
            if raw < BCE_EPS || raw > 1.0 - BCE_EPS {
                0.0
            } else {
                (-y / q + (1.0 - y) / (1.0 - q)) / n
            }
        })
        .collect();
    (loss / n, grad)
}

/// `1 - (2 sum(p y) + s) / (sum p + sum y + s)`.
pub fn dice_grad<P: Copy + Into<f64>, T: Copy + Into<f64>>(p: &[P], y: &[T]) -> (f64, Vec<f64>) {
    assert_eq!(p.len(), y.len(), "dice operands");
    let (mut inter, mut sp, mut sy) = (0.0, 0.0, 0.0);
    for (&p, &y) in p.iter().zip(y) {
        let (p, y) = (p.into(), y.into());
        inter += p * y;
        sp += p;
        sy += y;
    }
    let num = 2.0 * inter + DICE_SMOOTH;
    let den = sp + sy + DICE_SMOOTH;
    let grad = y.iter().map(|&y| -(2.0 * y.into() * den - num) / (den * den)).collect();
    (1.0 - num / den, grad)
}

/// Mean squared difference; the gradient is with respect to `p` only.
pub fn mse_grad<P: Copy + Into<f64>, T: Copy + Into<f64>>(p: &[P], target: &[T]) -> (f64, Vec<f64>) {
    weighted_mse_grad(p, target, None::<&[f64]>)
}

fn weighted_mse_grad<P: Copy + Into<f64>, T: Copy + Into<f64>, W: Copy + Into<f64>>(
    p: &[P],
    target: &[T],
    weight: Option<&[W]>,
) -> (f64, Vec<f64>) {
    assert_eq!(p.len(), target.len(), "mse operands");
    let n = p.len() as f64;
    let mut loss = 0.0;
    let grad = p
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (&p, &t))| {
            let w = weight.map_or(1.0, |w| w[i].into());
            let d = p.into() - t.into();
            loss += w * d * d;
            2.0 * w * d / n
        })
        .collect();
    (loss / n, grad)
}

/// Average of BCE plus Dice over the three decoder outputs. Returns one
/// gradient per output.
pub fn supervised_grad<P: Copy + Into<f64>, T: Copy + Into<f64>>(preds: [&[P]; 3], y: &[T]) -> (f64, [Vec<f64>; 3]) {
    let mut total = 0.0;
    let grads = preds.map(|p| {
        let (b, gb) = bce_grad(p, y);
        let (d, gd) = dice_grad(p, y);
        total += b + d;
        gb.iter().zip(&gd).map(|(a, b)| (a + b) / 3.0).collect()
    });
    (total / 3.0, grads)
}

/// Which target the MSE half of the consistency loss compares against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseTarget {
    /// The teacher's deterministic prediction.
    #[default]
    Teacher,
    /// The unveiled prediction `y_w`.
    Unveiled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyParts {
    pub l_cons: f64,
    pub l_cons_mse: f64,
    pub l_cons_dist: f64,
}

/// Inputs to the consistency loss for one image. Teacher-side maps are
/// constants: no gradient is returned for them.
pub struct ConsistencyInputs<'a, P> {
    pub student: &'a [P],
    pub teacher: &'a [P],
    pub y_w: &'a [P],
    pub i_vessel: &'a [P],
}

/// `alpha * mse + dist` where `dist` is the `(1 - I_vessel)`-weighted squared
/// distance to `y_w`. With `include_dist = false` the distance term is zero.
pub fn consistency_grad<P: Copy + Into<f64>>(
    inp: &ConsistencyInputs<'_, P>,
    alpha_balance: f64,
    target: MseTarget,
    include_dist: bool,
) -> (ConsistencyParts, Vec<f64>) {
    let n = inp.student.len();
    for len in [inp.teacher.len(), inp.y_w.len(), inp.i_vessel.len()] {
        assert_eq!(len, n, "consistency operands");
    }
    let mse_target = match target {
        MseTarget::Teacher => inp.teacher,
        MseTarget::Unveiled => inp.y_w,
    };
    let (mse, gm) = mse_grad(inp.student, mse_target);
    let (dist, gd) = if include_dist {
        let w: Vec<f64> = inp.i_vessel.iter().map(|&i| 1.0 - i.into()).collect();
        weighted_mse_grad(inp.student, inp.y_w, Some(&w))
    } else {
        (0.0, vec![0.0; n])
    };
    let grad = gm.iter().zip(&gd).map(|(m, d)| alpha_balance * m + d).collect();
    (ConsistencyParts { l_cons: alpha_balance * mse + dist, l_cons_mse: mse, l_cons_dist: dist }, grad)
}

/// Mean BCE of a patch map against a constant label.
pub fn bce_target<P: Copy + Into<f64>>(d: &[P], target: f64) -> (f64, Vec<f64>) {
    bce_grad(d, &vec![target; d.len()])
}

/// Adversarial and discriminator objectives with their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialLosses {
    pub l_adv: f64,
    pub l_disc: f64,
    /// Gradients of `l_adv` with respect to each map.
    pub adv_lab: Vec<f64>,
    pub adv_unlab: Vec<f64>,
    /// Gradients of `l_disc` with respect to each map.
    pub disc_lab: Vec<f64>,
    pub disc_unlab: Vec<f64>,
}

/// Labeled-domain maps are "real" (label 1). The discriminator wants the
/// unlabeled maps at 0; the adversarial term wants both at 1.
pub fn adversarial_grads<P: Copy + Into<f64>>(d_lab: &[P], d_unlab: &[P]) -> AdversarialLosses {
    let (real, g_real) = bce_target(d_lab, 1.0);
    let (fake, g_fake) = bce_target(d_unlab, 0.0);
    let (fool, g_fool) = bce_target(d_unlab, 1.0);
    let half = |g: &[f64]| g.iter().map(|v| v / 2.0).collect::<Vec<_>>();
    AdversarialLosses {
        l_adv: (real + fool) / 2.0,
        l_disc: (real + fake) / 2.0,
        adv_lab: half(&g_real),
        adv_unlab: half(&g_fool),
        disc_lab: half(&g_real),
        disc_unlab: half(&g_fake),
    }
}

pub fn bce(p: &ProbMap, y: &BinaryMask) -> Result<f64> {
    check_dims("bce operands", p.dims(), y.dims())?;
    Ok(bce_grad(p.probs(), &y.to_f32()).0)
}

pub fn dice_loss(p: &ProbMap, y: &BinaryMask) -> Result<f64> {
    check_dims("dice operands", p.dims(), y.dims())?;
    Ok(dice_grad(p.probs(), &y.to_f32()).0)
}

pub fn supervised_loss(main: &ProbMap, noise: &ProbMap, dropout: &ProbMap, y: &BinaryMask) -> Result<f64> {
    for p in [main, noise, dropout] {
        check_dims("supervised operands", p.dims(), y.dims())?;
    }
    Ok(supervised_grad([main.probs(), noise.probs(), dropout.probs()], &y.to_f32()).0)
}

pub fn consistency_loss(
    student: &ProbMap,
    teacher: &ProbMap,
    y_w: &ProbMap,
    i_vessel: &[f64],
    alpha_balance: f64,
    target: MseTarget,
) -> Result<ConsistencyParts> {
    check_dims("consistency operands", student.dims(), teacher.dims())?;
    check_dims("consistency operands", student.dims(), y_w.dims())?;
    check_len("consistency weight", student.probs().len(), i_vessel.len())?;
    if i_vessel.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::RangeViolation("I_vessel must lie in [0, 1]".into()));
    }
    let f = |m: &ProbMap| m.probs().iter().map(|&v| v as f64).collect::<Vec<f64>>();
    let (s, t, w) = (f(student), f(teacher), f(y_w));
    let inp = ConsistencyInputs { student: &s, teacher: &t, y_w: &w, i_vessel };
    Ok(consistency_grad(&inp, alpha_balance, target, true).0)
}

/// `(l_adv, l_disc)` for a pair of discriminator maps.
pub fn adversarial_pair_losses(d_lab: &[f32], d_unlab: &[f32]) -> Result<(f64, f64)> {
    check_len("discriminator maps", d_lab.len(), d_unlab.len())?;
    if d_lab.iter().chain(d_unlab).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::RangeViolation("discriminator outputs must lie in [0, 1]".into()));
    }
    let a = adversarial_grads(d_lab, d_unlab);
    Ok((a.l_adv, a.l_disc))
}

/// Component losses of one step and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sup: f64,
    pub l_cons_mse: f64,
    pub l_cons_dist: f64,
    pub l_cons: f64,
    pub l_adv: f64,
    pub l_disc: f64,
    pub total: f64,
    pub lambda_cons: f64,
    pub alpha_balance: f64,
}

/// Combines the parts into `l_sup + lambda_cons * l_cons + l_adv`.
pub fn total_loss(l_sup: f64, cons: ConsistencyParts, l_adv: f64, l_disc: f64, lambda_cons: f64, alpha_balance: f64) -> Result<LossBreakdown> {
    let parts = [
        ("l_sup", l_sup),
        ("l_cons_mse", cons.l_cons_mse),
        ("l_cons_dist", cons.l_cons_dist),
        ("l_cons", cons.l_cons),
        ("l_adv", l_adv),
        ("l_disc", l_disc),
        ("lambda_cons", lambda_cons),
    ];
    if let Some((name, _)) = parts.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLoss(name));
    }
    Ok(LossBreakdown {
        l_sup,
        l_cons_mse: cons.l_cons_mse,
        l_cons_dist: cons.l_cons_dist,
        l_cons: cons.l_cons,
        l_adv,
        l_disc,
        total: l_sup + lambda_cons * cons.l_cons + l_adv,
        lambda_cons,
        alpha_balance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(h: usize, w: usize, v: &[f32]) -> ProbMap {
        ProbMap::new(h, w, v.to_vec()).unwrap()
    }

    fn mask(h: usize, w: usize, v: &[f32]) -> BinaryMask {
        BinaryMask::from_values(h, w, v).unwrap()
    }

    #[test]
    fn bce_landmarks() {
        let y = mask(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(bce(&y.to_prob(), &y).unwrap() <= 1e-6);
        assert!((bce(&ProbMap::filled(2, 2, 0.5), &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let v = bce(&map(1, 2, &[0.9, 0.1]), &mask(1, 2, &[1.0, 0.0])).unwrap();
        let oracle = -((0.9f32 as f64).ln() + (1.0 - 0.1f32 as f64).ln()) / 2.0;
        assert!((v - oracle).abs() < 1e-12 && (v - 0.1054).abs() < 1e-4);
    }

    #[test]
    fn dice_landmarks() {
        let y = mask(2, 3, &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(dice_loss(&y.to_prob(), &y).unwrap(), 0.0);
        let other = mask(2, 3, &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        assert!((dice_loss(&other.to_prob(), &y).unwrap() - (1.0 - 1.0 / 7.0)).abs() < 1e-15);
        assert_eq!(dice_loss(&ProbMap::filled(2, 3, 0.0), &BinaryMask::zeros(2, 3)).unwrap(), 0.0);
    }

    #[test]
    fn supervised_averages_decoders() {
        let y = mask(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let p = map(2, 2, &[0.8, 0.3, 0.1, 0.6]);
        let single = bce(&p, &y).unwrap() + dice_loss(&p, &y).unwrap();
        assert!((supervised_loss(&p, &p, &p, &y).unwrap() - single).abs() < 1e-15);
        assert!(supervised_loss(&y.to_prob(), &y.to_prob(), &y.to_prob(), &y).unwrap() < 1e-6);

        let [a, b, c] = [0.2f32, 0.5, 0.7].map(|v| ProbMap::filled(2, 2, v));
        let per: Vec<f64> = [&a, &b, &c].iter().map(|p| bce(p, &y).unwrap() + dice_loss(p, &y).unwrap()).collect();
        let mean = per.iter().sum::<f64>() / 3.0;
        assert!((supervised_loss(&a, &b, &c, &y).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let y = BinaryMask::zeros(2, 2);
        assert!(matches!(bce(&ProbMap::filled(2, 3, 0.5), &y), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(dice_loss(&ProbMap::filled(3, 2, 0.5), &y), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(adversarial_pair_losses(&[0.5], &[0.5, 0.5]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn consistency_landmarks() {
        let p = map(2, 2, &[0.2, 0.4, 0.6, 0.8]);
        let zero = [0.0; 4];
        assert_eq!(consistency_loss(&p, &p, &p, &zero, 0.5, MseTarget::Teacher).unwrap().l_cons, 0.0);
        let one = ProbMap::filled(2, 2, 1.0);
        let nil = ProbMap::filled(2, 2, 0.0);
        let parts = consistency_loss(&one, &nil, &nil, &[1.0; 4], 0.5, MseTarget::Teacher).unwrap();
        assert_eq!(parts.l_cons_dist, 0.0);
        let parts = consistency_loss(&one, &nil, &nil, &zero, 0.5, MseTarget::Teacher).unwrap();
        assert_eq!((parts.l_cons_mse, parts.l_cons_dist, parts.l_cons), (1.0, 1.0, 1.5));
        let t = map(2, 2, &[0.1, 0.1, 0.9, 0.5]);
        let parts = consistency_loss(&p, &t, &t, &zero, 0.5, MseTarget::Teacher).unwrap();
        assert!((parts.l_cons - 1.5 * parts.l_cons_mse).abs() < 1e-15);
    }

    #[test]
    fn adversarial_landmarks() {
        let (adv, disc) = adversarial_pair_losses(&[1.0 - 1e-7; 4], &[1e-7; 4]).unwrap();
        assert!(disc < 1e-6 && adv > 5.0);
        let (adv, disc) = adversarial_pair_losses(&[0.5; 4], &[0.5; 4]).unwrap();
        assert!((adv - std::f64::consts::LN_2).abs() < 1e-12 && adv == disc);
        let (adv, disc) = adversarial_pair_losses(&[0.9; 4], &[0.9; 4]).unwrap();
        let p = 0.9f32 as f64;
        assert!((adv + p.ln()).abs() < 1e-12 && (adv - 0.1054).abs() < 1e-4);
        assert!((disc - (-p.ln() - (1.0 - p).ln()) / 2.0).abs() < 1e-12 && (disc - 1.2040).abs() < 1e-4);
    }

    #[test]
    fn total_loss_arithmetic() {
        let cons = ConsistencyParts { l_cons: 2.0, l_cons_mse: 2.0, l_cons_dist: 1.0 };
        assert_eq!(total_loss(1.0, cons, 3.0, 0.0, 0.5, 0.5).unwrap().total, 5.0);
        assert_eq!(total_loss(1.0, cons, 3.0, 0.0, 0.0, 0.5).unwrap().total, 4.0);
        assert_eq!(total_loss(0.0, ConsistencyParts::default(), 0.0, 0.0, 1.0, 0.5).unwrap().total, 0.0);
        assert!(matches!(total_loss(f64::NAN, cons, 0.0, 0.0, 1.0, 0.5), Err(Error::NonFiniteLoss("l_sup"))));
    }

    /// Central differences in `f64` against every analytic gradient entry.
    fn check_grad(x: &[f64], f: impl Fn(&[f64]) -> (f64, Vec<f64>)) {
        let (_, g) = f(x);
        for i in 0..x.len() {
            let h = 1e-6;
            let mut a = x.to_vec();
            a[i] += h;
            let mut b = x.to_vec();
            b[i] -= h;
            let numeric = (f(&a).0 - f(&b).0) / (2.0 * h);
            let rel = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4 || (g[i] - numeric).abs() < 1e-9, "entry {i}: analytic {} numeric {numeric}", g[i]);
        }
    }

    fn toy(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let y = (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { 0.0 }).collect();
        (p, y)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            let (p, y) = toy(seed, 16);
            check_grad(&p, |x| bce_grad(x, &y));
            check_grad(&p, |x| dice_grad(x, &y));
            let (q, _) = toy(seed + 100, 16);
            let (r, _) = toy(seed + 200, 16);
            check_grad(&p, |x| {
                let (v, g) = supervised_grad([x, &q, &r], &y);
                (v, g[0].clone())
            });
            let (t, _) = toy(seed + 300, 16);
            let (w, _) = toy(seed + 400, 16);
            let (iv, _) = toy(seed + 500, 16);
            for target in [MseTarget::Teacher, MseTarget::Unveiled] {
                check_grad(&p, |x| {
                    let inp = ConsistencyInputs { student: x, teacher: &t, y_w: &w, i_vessel: &iv };
                    let (parts, g) = consistency_grad(&inp, 0.5, target, true);
                    (parts.l_cons, g)
                });
            }
            check_grad(&p, |x| {
                let a = adversarial_grads(x, &q);
                (a.l_adv, a.adv_lab)
            });
            check_grad(&q, |x| {
                let a = adversarial_grads(&p, x);
                (a.l_adv, a.adv_unlab)
            });
            check_grad(&q, |x| {
                let a = adversarial_grads(&p, x);
                (a.l_disc, a.disc_unlab)
            });
        }
    }

    proptest! {
        #[test]
        fn losses_are_permutation_invariant(seed in 0u64..500, shift in 1usize..16) {
            let (p, y) = toy(seed, 16);
            let rot = |v: &[f64]| { let mut r = v.to_vec(); r.rotate_left(shift); r };
            let (pr, yr) = (rot(&p), rot(&y));
            prop_assert!((bce_grad(&p, &y).0 - bce_grad(&pr, &yr).0).abs() < 1e-12);
            prop_assert!((dice_grad(&p, &y).0 - dice_grad(&pr, &yr).0).abs() < 1e-12);
            prop_assert!((mse_grad(&p, &y).0 - mse_grad(&pr, &yr).0).abs() < 1e-12);
        }

        #[test]
        fn breakdown_invariants_hold(s in 0.0f64..5.0, m in 0.0f64..1.0, d in 0.0f64..1.0, a in 0.0f64..3.0, lam in 0.0f64..1.0, alpha in 0.0f64..1.0) {
            let cons = ConsistencyParts { l_cons: alpha * m + d, l_cons_mse: m, l_cons_dist: d };
            let b = total_loss(s, cons, a, 0.7, lam, alpha).unwrap();
            prop_assert!((b.total - (b.l_sup + b.lambda_cons * b.l_cons + b.l_adv)).abs() < 1e-12);
            prop_assert!((b.l_cons - (b.alpha_balance * b.l_cons_mse + b.l_cons_dist)).abs() < 1e-12);
        }
    }
}
