use bast_core::attack::{gaussian_kernel, AttackBudget, DiversityConfig, UpdateRule};
use bast_core::data::Dataset;
use bast_core::ensemble::{run_strategy, AttackTask, BastSchedule, EnsembleSpec, Strategy};
use bast_core::evaluation::{evaluate_run, Protocol};
use bast_core::model::{train, Architecture, Classifier, RobustnessTag, TrainConfig};
use bast_core::{Shape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shape() -> Shape {
    Shape::new(vec![1, 6, 6]).unwrap()
}

/// Bright left half is class 0, bright right half class 1, else class 2.
fn toy(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = i % 3;
        let data = (0..36)
            .map(|p| {
                let left = p % 6 < 3;
                let lit = match label {
                    0 => left,
                    1 => !left,
                    _ => p / 6 < 3,
                };
                (if lit { 0.7 } else { 0.3 }) + rng.gen_range(-0.1..0.1)
            })
            .collect();
        images.push(Tensor::new(vec![1, 6, 6], data).unwrap());
        labels.push(label);
    }
    Dataset::new(images, labels, 3).unwrap()
}

fn models() -> Vec<Classifier> {
    let data = toy(120, 1);
    let cfg = TrainConfig {
        epochs: 15,
        learning_rate: 0.2,
        ..TrainConfig::default()
    };
    let mk = |arch: Architecture, id: &str, tag, seed| {
        let m = arch.build(id, &shape(), 3, tag, seed).unwrap();
        train(m, &data, &TrainConfig { seed, adversarial: tag == RobustnessTag::Robust, ..cfg.clone() }).unwrap()
    };
    vec![
        mk(Architecture::Mlp { hidden: 8 }, "e0", RobustnessTag::Easy, 1),
        mk(Architecture::Cnn { channels: 2 }, "e1", RobustnessTag::Easy, 2),
        mk(Architecture::Mlp { hidden: 8 }, "r0", RobustnessTag::Robust, 3),
        mk(Architecture::Mlp { hidden: 6 }, "held", RobustnessTag::Easy, 4),
    ]
}

#[test]
fn trained_toy_models_learn_the_task() {
    let test = toy(60, 9);
    for m in models() {
        assert!(m.accuracy(&test).unwrap() > 0.9, "{}", m.id());
    }
}

#[test]
fn every_strategy_runs_end_to_end_without_touching_the_held_out_model() {
    let models = models();
    let spec = EnsembleSpec::new(vec![&models[0], &models[1]], vec![&models[2]]).unwrap();
    let test = toy(12, 5);
    let eps = 0.1;
    let kernel = gaussian_kernel(3, 1.0).unwrap();
    for strategy in Strategy::ALL {
        models[3].reset_gradient_queries();
        let mut adv = Vec::new();
        for (i, (x, y)) in test.iter().enumerate() {
            let task = AttackTask {
                x: x.clone(),
                y_true: y,
                y_target: (y + 1) % 3,
                budget: AttackBudget::new(eps, 10).unwrap(),
                diversity: DiversityConfig::default(),
                kernel: Some(kernel.clone()),
                seed: i as u64,
            };
            let schedule = BastSchedule::new(2, 1).unwrap().with_outer_iterations(7);
            let out = run_strategy(strategy, &task, &spec, &schedule).unwrap();
            assert!(out.linf_distance(x).unwrap() <= eps);
            adv.push(out);
        }
        assert_eq!(models[3].gradient_queries(), 0, "{strategy}");
        let y_true = test.labels().to_vec();
        let y_target: Vec<usize> = y_true.iter().map(|y| (y + 1) % 3).collect();
        let roster: Vec<(&Classifier, Protocol)> = models
            .iter()
            .map(|m| (m, if m.id() == "held" { Protocol::BlackBox } else { Protocol::WhiteBox }))
            .collect();
        let members: Vec<&str> = spec.members().iter().map(|m| m.id()).collect();
        let eval = evaluate_run(&adv, &y_true, &y_target, &roster, &members).unwrap();
        for row in &eval.report.rows {
            assert!((row.c - (row.b + row.a / 2.0)).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn outputs_stay_in_the_ball_and_the_unit_box(
        pixels in proptest::collection::vec(0.0f64..=1.0, 36),
        eps in 0.001f64..0.5,
        iterations in 1usize..5,
        sign in any::<bool>(),
        which in 0usize..5,
        seed in any::<u64>(),
    ) {
        let e = Architecture::Mlp { hidden: 5 }.build("e", &shape(), 3, RobustnessTag::Easy, seed).unwrap();
        let r = Architecture::Cnn { channels: 2 }.build("r", &shape(), 3, RobustnessTag::Robust, seed ^ 1).unwrap();
        let spec = EnsembleSpec::new(vec![&e], vec![&r]).unwrap();
        let x = Tensor::new(vec![1, 6, 6], pixels).unwrap();
        let rule = if sign { UpdateRule::Sign } else { UpdateRule::ClipRound { bound: 2.0 } };
        let task = AttackTask {
            x: x.clone(),
            y_true: 0,
            y_target: 2,
            budget: AttackBudget::new(eps, iterations).unwrap().with_update_rule(rule).with_alpha(eps),
            diversity: DiversityConfig::default(),
            kernel: None,
            seed,
        };
        let strategy = [Strategy::Bagging, Strategy::Stacking, Strategy::Bast, Strategy::WithoutStacking, Strategy::WithoutBagging][which];
        let schedule = BastSchedule::new(1, 1).unwrap().with_outer_iterations(iterations);
        let out = run_strategy(strategy, &task, &spec, &schedule).unwrap();
        prop_assert!(out.linf_distance(&x).unwrap() <= eps);
        prop_assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
