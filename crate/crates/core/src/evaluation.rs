//! At-least-non-targeted scoring.
//!
//! Each (adversarial image, model) pair is worth 1 when the model predicts
//! the target label, 0.5 when it predicts any other wrong label and 0 when it
//! still predicts the true label. A model's score is the mean over images.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::model::Classifier;
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    TargetedSuccess,
    NonTargetedOnly,
    Fail,
}

impl Outcome {
    pub fn value(self) -> f64 {
        match self {
            Outcome::TargetedSuccess => 1.0,
            Outcome::NonTargetedOnly => 0.5,
            Outcome::Fail => 0.0,
        }
    }
}

pub fn classify_outcome(pred: usize, y_true: usize, y_target: usize) -> Outcome {
    if pred == y_target {
        Outcome::TargetedSuccess
    } else if pred == y_true {
        Outcome::Fail
    } else {
        Outcome::NonTargetedOnly
    }
}

/// Mean outcome value, as a fraction in `[0, 1]`.
pub fn score(outcomes: &[Outcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::NoOutcomes);
    }
    Ok(outcomes.iter().map(|o| o.value()).sum::<f64>() / outcomes.len() as f64)
}

/// Whether the attacker had gradient access to a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    WhiteBox,
    BlackBox,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::WhiteBox => "white",
            Protocol::BlackBox => "black",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" | "white-box" | "whitebox" => Ok(Protocol::WhiteBox),
            "black" | "black-box" | "blackbox" => Ok(Protocol::BlackBox),
            other => Err(Error::Config(alloc::format!("unknown protocol `{other}`"))),
        }
    }
}

/// A/B/C percentages for one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelScore {
    pub model_id: String,
    pub protocol: Protocol,
    /// non-targeted success with targeted failure, %
    pub a: f64,
    /// targeted success, %
    pub b: f64,
    /// score, %
    pub c: f64,
    pub images: usize,
}

impl ModelScore {
    pub fn from_outcomes(model_id: impl Into<String>, protocol: Protocol, outcomes: &[Outcome]) -> Result<Self> {
        let c = score(outcomes)? * 100.0;
        let n = outcomes.len() as f64;
        let count = |want: Outcome| outcomes.iter().filter(|&&o| o == want).count() as f64;
        Ok(ModelScore {
            model_id: model_id.into(),
            protocol,
            a: count(Outcome::NonTargetedOnly) / n * 100.0,
            b: count(Outcome::TargetedSuccess) / n * 100.0,
            c,
            images: outcomes.len(),
        })
    }

    /// Misclassification rate (targeted or not), %.
    pub fn fooled(&self) -> f64 {
        self.a + self.b
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreReport {
    pub rows: Vec<ModelScore>,
}

impl ScoreReport {
    pub fn get(&self, model_id: &str) -> Option<&ModelScore> {
        self.rows.iter().find(|r| r.model_id == model_id)
    }
}

/// Predictions of every model on every image, and the resulting report.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `predictions[model][image]`
    pub predictions: Vec<Vec<usize>>,
    pub report: ScoreReport,
}

/// Scores `adversarial` images on each model with clean forward passes.
///
/// `attack_members` lists the ids of the models whose gradients were used to
/// craft the images; a black-box model among them is a protocol violation.
pub fn evaluate_run(
    adversarial: &[Tensor],
    y_true: &[usize],
    y_target: &[usize],
    models: &[(&Classifier, Protocol)],
    attack_members: &[&str],
) -> Result<Evaluation> {
    if adversarial.len() != y_true.len() || adversarial.len() != y_target.len() {
        return Err(Error::Config(alloc::format!(
            "{} images, {} true labels, {} target labels",
            adversarial.len(),
            y_true.len(),
            y_target.len()
        )));
    }
    for (model, protocol) in models {
        if *protocol == Protocol::BlackBox && attack_members.contains(&model.id()) {
            return Err(Error::ProtocolViolation {
                model: model.id().to_string(),
            });
        }
    }
    let mut predictions = Vec::with_capacity(models.len());
    let mut rows = Vec::with_capacity(models.len());
    for (model, protocol) in models {
        let preds = adversarial
            .iter()
            .map(|x| model.predict(x))
            .collect::<Result<Vec<_>>>()?;
        let outcomes: Vec<_> = preds
            .iter()
            .zip(y_true.iter().zip(y_target))
            .map(|(&p, (&t, &g))| classify_outcome(p, t, g))
            .collect();
        rows.push(ModelScore::from_outcomes(model.id(), *protocol, &outcomes)?);
        predictions.push(preds);
    }
    Ok(Evaluation {
        predictions,
        report: ScoreReport { rows },
    })
}

/// Rounds half away from zero to `decimals` places, for presentation only.
pub fn round_half_away(value: f64, decimals: u32) -> f64 {
    let scale = libm::pow(10.0, decimals as f64);
    // shave representation error so 13.15 (stored as 13.1499...) rounds up
    let scaled = value * scale;
    let nudged = scaled + scaled.signum() * 1e-9;
    libm::round(nudged) / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, RobustnessTag};
    use crate::Shape;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn outcome_cases_and_values() {
        assert_eq!(classify_outcome(3, 1, 3), Outcome::TargetedSuccess);
        assert_eq!(classify_outcome(1, 1, 3), Outcome::Fail);
        assert_eq!(classify_outcome(5, 1, 3), Outcome::NonTargetedOnly);
        assert_eq!(Outcome::TargetedSuccess.value(), 1.0);
        assert_eq!(Outcome::NonTargetedOnly.value(), 0.5);
        assert_eq!(Outcome::Fail.value(), 0.0);
    }

    fn outcomes(a: usize, b: usize, n: usize) -> Vec<Outcome> {
        let mut v = vec![Outcome::NonTargetedOnly; a];
        v.extend(vec![Outcome::TargetedSuccess; b]);
        v.extend(vec![Outcome::Fail; n - a - b]);
        v
    }

    #[test]
    fn score_matches_known_triples() {
        // 18.3% / 4.0% over 1000 images
        let s = ModelScore::from_outcomes("m", Protocol::WhiteBox, &outcomes(183, 40, 1000)).unwrap();
        assert!((s.c - 13.15).abs() < 1e-9);
        let s = ModelScore::from_outcomes("m", Protocol::WhiteBox, &outcomes(720, 1, 1000)).unwrap();
        assert!((s.c - 36.1).abs() < 1e-9);
        assert_eq!(score(&[Outcome::TargetedSuccess; 7]).unwrap(), 1.0);
        assert_eq!(score(&[]), Err(Error::NoOutcomes));
    }

    #[test]
    fn presentation_rounding() {
        assert_eq!(round_half_away(13.15, 1), 13.2);
        assert_eq!(round_half_away(-2.25, 1), -2.3);
        assert_eq!(round_half_away(26.95, 2), 26.95);
        assert_eq!(round_half_away(0.04, 1), 0.0);
    }

    fn constant_model(id: &str, class: usize) -> Classifier {
        let mut bias = vec![0.0; 3];
        bias[class] = 1.0;
        Classifier::new(
            id,
            Shape::new(vec![2]).unwrap(),
            vec![Layer::Dense {
                weight: Tensor::zeros(&Shape::new(vec![3, 2]).unwrap()),
                bias: Tensor::new(vec![3], bias).unwrap(),
            }],
            RobustnessTag::Easy,
        )
        .unwrap()
    }

    #[test]
    fn evaluate_single_image() {
        let m = constant_model("m", 2);
        let x = vec![Tensor::full(&Shape::new(vec![2]).unwrap(), 0.5)];
        let eval = evaluate_run(&x, &[0], &[2], &[(&m, Protocol::WhiteBox)], &["m"]).unwrap();
        let row = &eval.report.rows[0];
        assert_eq!((row.a, row.b, row.c), (0.0, 100.0, 100.0));
        assert_eq!(eval.predictions, vec![vec![2]]);
        let clean = evaluate_run(&x, &[2], &[1], &[(&m, Protocol::WhiteBox)], &["m"]).unwrap();
        let row = &clean.report.rows[0];
        assert_eq!((row.a, row.b, row.c), (0.0, 0.0, 0.0));
    }

    #[test]
    fn black_box_member_is_rejected() {
        let m = constant_model("held", 0);
        let x = vec![Tensor::full(&Shape::new(vec![2]).unwrap(), 0.5)];
        let err = evaluate_run(&x, &[0], &[1], &[(&m, Protocol::BlackBox)], &["held"]).unwrap_err();
        assert_eq!(err, Error::ProtocolViolation { model: "held".into() });
        assert!(evaluate_run(&x, &[0], &[1], &[(&m, Protocol::BlackBox)], &["other"]).is_ok());
    }

    fn arb_outcome() -> impl Strategy<Value = Outcome> {
        prop_oneof![
            Just(Outcome::TargetedSuccess),
            Just(Outcome::NonTargetedOnly),
            Just(Outcome::Fail)
        ]
    }

    proptest! {
        #[test]
        fn score_identity_and_permutation_invariance(
            mut v in proptest::collection::vec(arb_outcome(), 1..200),
            seed in any::<u64>(),
        ) {
            let s = ModelScore::from_outcomes("m", Protocol::WhiteBox, &v).unwrap();
            prop_assert!((s.c - (s.b + s.a / 2.0)).abs() <= 1e-9);
            prop_assert!(s.a + s.b <= 100.0 + 1e-9);
            let before = score(&v).unwrap();
            let k = (seed as usize) % v.len();
            v.rotate_left(k);
            v.reverse();
            prop_assert!((score(&v).unwrap() - before).abs() <= 1e-12);
        }

        #[test]
        fn classification_partitions_predictions(pred in 0usize..10, t in 0usize..10, d in 1usize..10) {
            let target = (t + d) % 10;
            let o = classify_outcome(pred, t, target);
            let hits = [pred == target, pred == t, pred != t && pred != target];
            prop_assert_eq!(hits.iter().filter(|&&h| h).count(), 1);
            let expected = if hits[0] { Outcome::TargetedSuccess } else if hits[1] { Outcome::Fail } else { Outcome::NonTargetedOnly };
            prop_assert_eq!(o, expected);
        }
    }
}
