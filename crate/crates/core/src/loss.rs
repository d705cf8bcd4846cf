//! Soft-Jaccard losses and their analytic gradients.
//!
//! Targets are passed as probability maps so binary masks (via
//! [`BinaryMask::to_prob`](crate::BinaryMask::to_prob)) and soft targets share
//! one code path.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::raster::{ensure_same_dims, LossCoefficients, ProbMap};
use crate::scalar::Real;

/// Guard applied to predictions before any logarithm.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Soft Jaccard plus binary cross entropy; the lesion loss.
    JaccardBce,
    /// Squared-sum Jaccard; the attribute loss.
    ModifiedJaccard,
}

struct Sums<T> {
    inter: T,
    t: T,
    p: T,
    t2: T,
    p2: T,
}

fn sums<T: Real>(t: &[T], p: &[T]) -> Sums<T> {
    let mut s = Sums {
        inter: T::zero(),
        t: T::zero(),
        p: T::zero(),
        t2: T::zero(),
        p2: T::zero(),
    };
    for (&a, &b) in t.iter().zip(p) {
        s.inter += a * b;
        s.t += a;
        s.p += b;
        s.t2 += a * a;
        s.p2 += b * b;
    }
    s
}

fn clip<T: Real>(v: T) -> T {
    let eps = T::of(BCE_EPSILON);
    v.max(eps).min(T::one() - eps)
}

fn bce<T: Real>(t: &[T], p: &[T]) -> T {
    let mut acc = T::zero();
    for (&a, &b) in t.iter().zip(p) {
        let q = clip(b);
        acc += a * q.ln() + (T::one() - a) * (T::one() - q).ln();
    }
    -acc / T::of(t.len() as f64)
}

/// `1 - (I + alpha) / (St + Sp - I + beta)` on the unclipped predictions.
pub fn soft_jaccard_term<T: Real>(y_t: &ProbMap<T>, y_p: &ProbMap<T>, c: &LossCoefficients<T>) -> Result<T> {
    ensure_same_dims(y_t.dims(), y_p.dims())?;
    let s = sums(y_t.data(), y_p.data());
    Ok(T::one() - (s.inter + c.alpha()) / (s.t + s.p - s.inter + c.beta()))
}

pub fn bce_term<T: Real>(y_t: &ProbMap<T>, y_p: &ProbMap<T>) -> Result<T> {
    ensure_same_dims(y_t.dims(), y_p.dims())?;
    Ok(bce(y_t.data(), y_p.data()))
}

pub fn jaccard_bce_loss<T: Real>(y_t: &ProbMap<T>, y_p: &ProbMap<T>, c: &LossCoefficients<T>) -> Result<T> {
    Ok(soft_jaccard_term(y_t, y_p, c)? + bce(y_t.data(), y_p.data()))
}

/// `1 - (I + alpha) / (St² + Sp² - I + beta)`; within `[0, 1]` for binary
/// targets when `alpha = 0`, `beta = 1`.
pub fn modified_jaccard_loss<T: Real>(y_t: &ProbMap<T>, y_p: &ProbMap<T>, c: &LossCoefficients<T>) -> Result<T> {
    ensure_same_dims(y_t.dims(), y_p.dims())?;
    let s = sums(y_t.data(), y_p.data());
    Ok(T::one() - (s.inter + c.alpha()) / (s.t2 + s.p2 - s.inter + c.beta()))
}

pub fn loss<T: Real>(kind: LossKind, y_t: &ProbMap<T>, y_p: &ProbMap<T>, c: &LossCoefficients<T>) -> Result<T> {
    match kind {
        LossKind::JaccardBce => jaccard_bce_loss(y_t, y_p, c),
        LossKind::ModifiedJaccard => modified_jaccard_loss(y_t, y_p, c),
    }
}

/// Analytic derivative of the loss with respect to each prediction, in row-major order.
///
/// The cross-entropy part is zero wherever the clip is active.
pub fn loss_gradient<T: Real>(
    kind: LossKind,
    y_t: &ProbMap<T>,
    y_p: &ProbMap<T>,
    c: &LossCoefficients<T>,
) -> Result<Vec<T>> {
    ensure_same_dims(y_t.dims(), y_p.dims())?;
    let (t, p) = (y_t.data(), y_p.data());
    let s = sums(t, p);
    let num = s.inter + c.alpha();
    let two = T::of(2.0);
    Ok(match kind {
        LossKind::JaccardBce => {
            let d = s.t + s.p - s.inter + c.beta();
            let d2 = d * d;
            let n = T::of(t.len() as f64);
            let eps = T::of(BCE_EPSILON);
            t.iter()
                .zip(p)
                .map(|(&ti, &pi)| {
                    let dj = -(ti * d - num * (T::one() - ti)) / d2;
                    let db = if pi > eps && pi < T::one() - eps {
                        -(ti / pi - (T::one() - ti) / (T::one() - pi)) / n
                    } else {
                        T::zero()
                    };
                    dj + db
                })
                .collect()
        }
        LossKind::ModifiedJaccard => {
            let d = s.t2 + s.p2 - s.inter + c.beta();
            let d2 = d * d;
            t.iter()
                .zip(p)
                .map(|(&ti, &pi)| -(ti * d - num * (two * pi - ti)) / d2)
                .collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(v: &[f64]) -> ProbMap<f64> {
        ProbMap::new(v.len(), 1, v.to_vec()).unwrap()
    }

    fn c(a: f64, b: f64) -> LossCoefficients<f64> {
        LossCoefficients::new(a, b).unwrap()
    }

    #[test]
    fn jaccard_bce_examples() {
        let y = m(&[1.0, 0.0, 1.0, 0.0]);
        assert!(jaccard_bce_loss(&y, &y, &c(1.0, 1.0)).unwrap().abs() < 1e-6);
        let z = m(&[0.0; 4]);
        assert!(jaccard_bce_loss(&z, &z, &c(1.0, 1.0)).unwrap().abs() < 1e-6);
        let l = jaccard_bce_loss(&m(&[1.0, 0.0]), &m(&[0.8, 0.2]), &c(1.0, 1.0)).unwrap();
        let expected = 1.0 - 1.8 / 2.2 - 0.8f64.ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.4050).abs() < 5e-5, "{l}");
    }

    #[test]
    fn modified_jaccard_examples() {
        let att = c(0.0, 1.0);
        let z = m(&[0.0; 5]);
        assert_eq!(modified_jaccard_loss(&z, &z, &att).unwrap(), 1.0);
        let y = m(&[1.0, 1.0, 0.0]);
        assert!((modified_jaccard_loss(&y, &y, &att).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let l = modified_jaccard_loss(&m(&[1.0, 1.0, 0.0, 0.0]), &m(&[0.5, 1.0, 0.5, 0.0]), &att).unwrap();
        assert_eq!(l, 0.5);
    }

    #[test]
    fn f32_agrees_with_f64() {
        let t = [1.0, 0.0, 1.0, 1.0];
        let p = [0.7, 0.1, 0.4, 0.99];
        let t32 = ProbMap::<f32>::new(4, 1, t.iter().map(|v| *v as f32).collect()).unwrap();
        let p32 = ProbMap::<f32>::new(4, 1, p.iter().map(|v| *v as f32).collect()).unwrap();
        let l32 = jaccard_bce_loss(&t32, &p32, &LossCoefficients::lesion()).unwrap();
        let l64 = jaccard_bce_loss(&m(&t), &m(&p), &LossCoefficients::lesion()).unwrap();
        assert!((f64::from(l32) - l64).abs() < 1e-5);
    }

    #[test]
    fn shape_mismatch() {
        assert!(jaccard_bce_loss(&m(&[0.0; 3]), &m(&[0.0; 4]), &c(1.0, 1.0)).is_err());
        assert!(loss_gradient(LossKind::ModifiedJaccard, &m(&[0.0; 3]), &m(&[0.0; 4]), &c(0.0, 1.0)).is_err());
    }

    fn fd_check(kind: LossKind, t: &[f64], p: &[f64], co: &LossCoefficients<f64>, only_jaccard: bool) {
        let h = 1e-4;
        let yt = m(t);
        let g = loss_gradient(kind, &yt, &m(p), co).unwrap();
        // the J term is also defined slightly outside [0, 1], so evaluate on raw slices
        let jaccard = |q: &[f64]| {
            let s = sums(t, q);
            match kind {
                LossKind::JaccardBce => 1.0 - (s.inter + co.alpha()) / (s.t + s.p - s.inter + co.beta()),
                LossKind::ModifiedJaccard => 1.0 - (s.inter + co.alpha()) / (s.t2 + s.p2 - s.inter + co.beta()),
            }
        };
        let with_bce = kind == LossKind::JaccardBce && !only_jaccard;
        let mut q = p.to_vec();
        for i in 0..p.len() {
            q[i] = p[i] + h;
            let mut up = jaccard(&q);
            q[i] = p[i] - h;
            let mut down = jaccard(&q);
            q[i] = p[i];
            if with_bce {
                // cross entropy is a per-pixel sum; only pixel i changes
                let n = p.len() as f64;
                up += bce(&t[i..=i], &[p[i] + h]) / n;
                down += bce(&t[i..=i], &[p[i] - h]) / n;
            }
            let fd = (up - down) / (2.0 * h);
            let tol = (1e-4 * fd.abs()).max(1e-6);
            assert!((g[i] - fd).abs() <= tol, "component {i}: analytic {} vs fd {fd}", g[i]);
        }
    }

    #[test]
    fn gradient_at_all_zeros() {
        let z = [0.0; 9];
        fd_check(LossKind::ModifiedJaccard, &z, &z, &c(0.0, 1.0), false);
        fd_check(LossKind::ModifiedJaccard, &z, &z, &c(1.0, 1.0), false);
    }

    #[test]
    fn gradient_at_perfect_prediction() {
        let y = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let co = c(1.0, 1.0);
        let g = loss_gradient(LossKind::JaccardBce, &m(&y), &m(&y), &co).unwrap();
        // clipped everywhere, so only the Jaccard part remains
        fd_check(LossKind::JaccardBce, &y, &y, &co, true);
        assert!(g.iter().all(|v| v.is_finite()));
        let near: Vec<f64> = y.iter().map(|v| if *v > 0.5 { 0.999 } else { 0.001 }).collect();
        fd_check(LossKind::JaccardBce, &y, &near, &co, false);
        let gn = loss_gradient(LossKind::JaccardBce, &m(&y), &m(&near), &co).unwrap();
        // cross-entropy pull toward the targets: negative on positives, positive on negatives
        for (gi, ti) in gn.iter().zip(y) {
            assert!(if ti > 0.5 { *gi < 0.0 } else { *gi > 0.0 });
        }
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(prop::bool::ANY, 32 * 32),
            prop::collection::vec(0.05f64..0.95, 32 * 32),
        )
            .prop_map(|(t, p)| (t.into_iter().map(|b| b as u8 as f64).collect(), p))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn gradients_match_finite_differences((t, p) in instance()) {
            fd_check(LossKind::JaccardBce, &t, &p, &LossCoefficients::lesion(), false);
            fd_check(LossKind::ModifiedJaccard, &t, &p, &LossCoefficients::attribute(), false);
        }
    }

    proptest! {
        #[test]
        fn modified_jaccard_bounded(
            (t, p) in (1usize..64).prop_flat_map(|n| (
                prop::collection::vec(prop::bool::ANY, n),
                prop::collection::vec(0.0f64..=1.0, n),
            ))
        ) {
            let t: Vec<f64> = t.into_iter().map(|b| b as u8 as f64).collect();
            let l = modified_jaccard_loss(&m(&t), &m(&p), &LossCoefficients::attribute()).unwrap();
            prop_assert!((0.0..=1.0).contains(&l));
            let j = jaccard_bce_loss(&m(&t), &m(&p), &LossCoefficients::lesion()).unwrap();
            prop_assert!(j >= 0.0 && j.is_finite());
        }

        #[test]
        fn permutation_equivariance(
            (t, p, seed) in (2usize..40).prop_flat_map(|n| (
                prop::collection::vec(prop::bool::ANY, n),
                prop::collection::vec(0.0f64..=1.0, n),
                any::<u64>(),
            ))
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let t: Vec<f64> = t.into_iter().map(|b| b as u8 as f64).collect();
            let mut order: Vec<usize> = (0..t.len()).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let tp: Vec<f64> = order.iter().map(|i| t[*i]).collect();
            let pp: Vec<f64> = order.iter().map(|i| p[*i]).collect();
            for (kind, co) in [(LossKind::JaccardBce, LossCoefficients::lesion()), (LossKind::ModifiedJaccard, LossCoefficients::attribute())] {
                let l = loss(kind, &m(&t), &m(&p), &co).unwrap();
                let lp = loss(kind, &m(&tp), &m(&pp), &co).unwrap();
                prop_assert!((l - lp).abs() < 1e-12);
                let g = loss_gradient(kind, &m(&t), &m(&p), &co).unwrap();
                let gp = loss_gradient(kind, &m(&tp), &m(&pp), &co).unwrap();
                for (k, i) in order.iter().enumerate() {
                    prop_assert!((gp[k] - g[*i]).abs() <= 1e-12 * g[*i].abs().max(1.0));
                }
            }
        }
    }
}
