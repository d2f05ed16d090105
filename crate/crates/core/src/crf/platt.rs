//! Logistic calibration of score margins into probabilities (Platt scaling,
//! fitted with the damped Newton iteration of Lin, Weng & Keerthi).

/// Fitted map margin → p(label = 1) = sigmoid(a·margin + b).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub a: f64,
    pub b: f64,
}

impl Calibration {
    pub fn probability(&self, margin: f64) -> f64 {
        sigmoid(self.a * margin + self.b).clamp(1e-12, 1.0 - 1e-12)
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Fit (a, b) on held-out (margin, truth) pairs. Targets are the usual
/// smoothed frequencies; the slope is clamped nonnegative so probabilities
/// never invert the margin ordering. Falls back to (1, 0) when the fit
/// degenerates (e.g. a single-class calibration set).
pub fn fit_calibration(margins: &[f64], truths: &[bool]) -> Calibration {
    assert_eq!(margins.len(), truths.len());
    if margins.is_empty() {
        return Calibration { a: 1.0, b: 0.0 };
    }
    let n_pos = truths.iter().filter(|&&t| t).count() as f64;
    let n_neg = margins.len() as f64 - n_pos;
    let hi = (n_pos + 1.0) / (n_pos + 2.0);
    let lo = 1.0 / (n_neg + 2.0);
    let targets: Vec<f64> = truths.iter().map(|&t| if t { hi } else { lo }).collect();

    // Newton with backtracking on the cross-entropy in (a, b). The classic
    // derivation fits p = 1/(1+exp(A·m + B)); flip signs at the end.
    let mut a = 0.0f64;
    let mut b = ((n_neg + 1.0) / (n_pos + 1.0)).ln();
    let eps = 1e-12;
    let min_step = 1e-10;

    let fval = |a: f64, b: f64| -> f64 {
        margins
            .iter()
            .zip(&targets)
            .map(|(&m, &t)| {
                let f = a * m + b;
                if f >= 0.0 {
                    t * f + (1.0 + (-f).exp()).ln()
                } else {
                    (t - 1.0) * f + (1.0 + f.exp()).ln()
                }
            })
            .sum()
    };
    let mut current = fval(a, b);

    for _ in 0..100 {
        let (mut h11, mut h22) = (eps, eps);
        let (mut h21, mut g1, mut g2) = (0.0f64, 0.0f64, 0.0f64);
        for (&m, &t) in margins.iter().zip(&targets) {
            let f = a * m + b;
            let (p, q) = if f >= 0.0 {
                let e = (-f).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = f.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += m * m * d2;
            h22 += d2;
            h21 += m * d2;
            let d1 = t - p;
            g1 += m * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let expected = g1 * da + g2 * db;

        let mut step = 1.0f64;
        loop {
            let (na, nb) = (a + step * da, b + step * db);
            let next = fval(na, nb);
            if next < current + 1e-4 * step * expected {
                a = na;
                b = nb;
                current = next;
                break;
            }
            step /= 2.0;
            if step < min_step {
                break;
            }
        }
        if step < min_step {
            break;
        }
    }

    let slope = -a;
    let intercept = -b;
    if !slope.is_finite() || !intercept.is_finite() {
        return Calibration { a: 1.0, b: 0.0 };
    }
    Calibration {
        a: slope.max(0.0),
        b: intercept,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((sigmoid(3.0) + sigmoid(-3.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(800.0) <= 1.0);
        assert!(sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn fit_recovers_a_logistic_relationship() {
        let mut rng = crate::seed::rng(5);
        let margins: Vec<f64> = (0..4000).map(|_| rng.random_range(-4.0..4.0)).collect();
        let truths: Vec<bool> = margins
            .iter()
            .map(|&m| rng.random_range(0.0..1.0) < sigmoid(2.0 * m - 0.5))
            .collect();
        let cal = fit_calibration(&margins, &truths);
        assert!((cal.a - 2.0).abs() < 0.3, "slope {}", cal.a);
        assert!((cal.b + 0.5).abs() < 0.3, "intercept {}", cal.b);
    }

    #[test]
    fn probability_is_monotone_in_margin() {
        let cal = fit_calibration(
            &[-2.0, -1.0, 0.5, 1.5, 2.5, -0.4, 3.0, -3.0],
            &[false, false, true, true, true, false, true, false],
        );
        let mut prev = 0.0;
        for i in -20..=20 {
            let p = cal.probability(i as f64 / 4.0);
            assert!(p >= prev);
            assert!((1e-12..=1.0 - 1e-12).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn degenerate_single_class_set_still_yields_finite_parameters() {
        let cal = fit_calibration(&[0.5, 1.0, 2.0], &[true, true, true]);
        assert!(cal.a.is_finite() && cal.b.is_finite());
        assert!(cal.a >= 0.0);
    }
}
