use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Classifier;
use crate::attack::project_linf;
use crate::data::Dataset;
use crate::{Error, Result, Tensor};

/// Minibatch SGD settings.
///
/// With `adversarial` set, every batch also contains an FGSM example at
/// `adv_epsilon` for each clean sample, crafted against the current weights.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adversarial: bool,
    pub adv_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 0.05,
            seed: 0,
            adversarial: false,
            adv_epsilon: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.adversarial && !(self.adv_epsilon > 0.0 && self.adv_epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "adv_epsilon must be positive, got {}",
                self.adv_epsilon
            )));
        }
        Ok(())
    }
}

pub fn train(model: Classifier, data: &Dataset, cfg: &TrainConfig) -> Result<Classifier> {
    Ok(train_with_history(model, data, cfg)?.0)
}

/// Trains and returns the mean clean training loss measured after each epoch.
pub fn train_with_history(
    mut model: Classifier,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    data.images()[0].expect_shape(model.input_shape())?;
    if let Some(&label) = data.labels().iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::InvalidLabel {
            label,
            num_classes: model.num_classes(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut slots = zero_slots(&model);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            for slot in slots.iter_mut().flatten() {
                slot.0.as_mut_slice().fill(0.0);
                slot.1.as_mut_slice().fill(0.0);
            }
            let mut count = 0usize;
            for &i in batch {
                let (image, label) = data.get(i).expect("index in range");
                if cfg.adversarial {
                    let adv = fgsm_example(&model, image, label, cfg.adv_epsilon)?;
                    model.backprop(&adv, label, Some(&mut slots))?;
                    count += 1;
                }
                model.backprop(image, label, Some(&mut slots))?;
                count += 1;
            }
            let step = cfg.learning_rate / count as f64;
            for (layer, slot) in model.layers_mut().iter_mut().zip(&slots) {
                if let (Some((w, b)), Some((gw, gb))) = (layer.params_mut(), slot.as_ref()) {
                    w.add_scaled(gw, -step)?;
                    b.add_scaled(gb, -step)?;
                }
            }
        }
        history.push(mean_loss(&model, data)?);
    }
    Ok((model, history))
}

fn zero_slots(model: &Classifier) -> Vec<Option<(Tensor, Tensor)>> {
    model
        .layers()
        .iter()
        .map(|l| {
            l.params()
                .map(|(w, b)| (Tensor::zeros(w.shape()), Tensor::zeros(b.shape())))
        })
        .collect()
}

fn mean_loss(model: &Classifier, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for (image, label) in data.iter() {
        total += model.loss(image, label)?;
    }
    Ok(total / data.len() as f64)
}

fn fgsm_example(model: &Classifier, image: &Tensor, label: usize, epsilon: f64) -> Result<Tensor> {
    let (_, grad) = model.backprop(image, label, None)?;
    let mut adv = image.clone();
    for (x, g) in adv.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *x += epsilon * sign(*g);
    }
    project_linf(&mut adv, image, epsilon);
    Ok(adv)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, RobustnessTag};
    use crate::Shape;
    use alloc::vec;
    use rand::Rng;

    /// Two well separated clusters in a 1x2x2 image.
    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let base = if label == 0 { [0.9, 0.8, 0.1, 0.2] } else { [0.1, 0.2, 0.9, 0.8] };
            let data = base.iter().map(|b| b + rng.gen_range(-0.05..0.05)).collect();
            images.push(Tensor::new(vec![1, 2, 2], data).unwrap());
            labels.push(label);
        }
        Dataset::new(images, labels, 2).unwrap()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 0.5,
            seed: 5,
            adversarial: false,
            adv_epsilon: 0.1,
        }
    }

    #[test]
    fn one_epoch_separates_toy_set() {
        let data = separable(64, 1);
        let shape = Shape::new(vec![1, 2, 2]).unwrap();
        let model = Architecture::Mlp { hidden: 8 }
            .build("toy", &shape, 2, RobustnessTag::Easy, 2)
            .unwrap();
        let model = train(model, &data, &cfg()).unwrap();
        assert_eq!(model.accuracy(&data).unwrap(), 1.0);
    }

    #[test]
    fn loss_is_monotone_on_toy_set() {
        let data = separable(64, 2);
        let shape = Shape::new(vec![1, 2, 2]).unwrap();
        let model = Architecture::Mlp { hidden: 8 }
            .build("toy", &shape, 2, RobustnessTag::Easy, 4)
            .unwrap();
        let cfg = TrainConfig {
            epochs: 12,
            learning_rate: 0.1,
            ..cfg()
        };
        let (_, history) = train_with_history(model, &data, &cfg).unwrap();
        for pair in history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6, "{history:?}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = separable(32, 3);
        let shape = Shape::new(vec![1, 2, 2]).unwrap();
        let build = || {
            Architecture::Cnn { channels: 2 }
                .build("toy", &shape, 2, RobustnessTag::Easy, 8)
                .unwrap()
        };
        let cfg = TrainConfig {
            epochs: 3,
            adversarial: true,
            ..cfg()
        };
        let a = train(build(), &data, &cfg).unwrap();
        let b = train(build(), &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let shape = Shape::new(vec![1, 2, 2]).unwrap();
        let model = Architecture::Mlp { hidden: 2 }
            .build("toy", &shape, 2, RobustnessTag::Easy, 0)
            .unwrap();
        let data = separable(4, 0);
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..cfg()
        };
        assert!(matches!(train(model.clone(), &data, &bad), Err(Error::Config(_))));
        let three = Dataset::new(data.images().to_vec(), vec![0, 1, 2, 0], 3).unwrap();
        assert!(matches!(
            train(model, &three, &cfg()),
            Err(Error::InvalidLabel { label: 2, .. })
        ));
    }
}
