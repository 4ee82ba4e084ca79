use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sari_core::neural::{Activation, Dense, Mlp};
use sari_core::sari::{
    augment, deform, deformation_field, retrain, train, train_with_report, SariAssistant, SariConfig, SariMeta,
    SariModel, LOG_VAR_MIN,
};
use sari_core::sim::{run_episode, Engagement, EpisodeConfig, GaussianOperator, GoalTask, Task};
use sari_core::types::{distance, Action, Dataset, Interaction, State};

/// Proportional-control demonstration from `start` toward `goal` with small Gaussian command noise.
fn line_demo(start: &[f64], goal: &[f64], steps: usize, noise: f64, seed: u64) -> Interaction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = start.to_vec();
    let (mut states, mut actions) = (Vec::new(), Vec::new());
    for _ in 0..steps {
        let a: Vec<f64> = s
            .iter()
            .zip(goal)
            .map(|(x, g)| (g - x + noise * rng.sample::<f64, _>(StandardNormal)).clamp(-1.0, 1.0))
            .collect();
        states.push(s.clone());
        s = s.iter().zip(&a).map(|(x, v)| x + 0.1 * v).collect();
        actions.push(a);
    }
    Interaction::from_rows(&states, &actions, 0.1, 0.0, Some(format!("goal {goal:?}"))).unwrap()
}

fn small_config(seed: u64) -> SariConfig {
    let mut cfg = SariConfig { hidden_width: 24, ..SariConfig::default() };
    cfg.train.epochs = 60;
    cfg.train.seed = seed;
    cfg.discriminator_epochs = Some(120);
    cfg
}

fn one_goal_data() -> Dataset {
    let demos = (0..5).map(|k| line_demo(&[0.0, 0.0], &[0.5, 0.3], 40, 0.05, k)).collect();
    Dataset::new(demos).unwrap()
}

/// Model with constant-output networks: encoder emits `latent`, policy emits `action`, discriminator emits `logits`.
fn constant_model(d: usize, dz: usize, latent: Vec<f64>, action: Vec<f64>, logits: Vec<f64>, beta_max: f64) -> SariModel {
    let constant = |inputs: usize, b: Vec<f64>| {
        let w = vec![vec![0.0; inputs]; b.len()];
        Mlp::from_layers(vec![Dense::new(w, b).unwrap()], Activation::Tanh, 0.0).unwrap()
    };
    let hyper = SariConfig { d_z: dz, beta_max, ..SariConfig::default() };
    let meta = SariMeta { d, dz, dt: 0.1, beta_max, seed: 0, hyper };
    SariModel::from_parts(constant(2 * d, latent), constant(d + dz, action), constant(2 * d, logits), meta).unwrap()
}

fn pair(s: &[f64], a: &[f64]) -> (State, Action) {
    (State::at(s.to_vec()).unwrap(), Action::human(a.to_vec()).unwrap())
}

#[test]
fn mean_encoding_is_deterministic() {
    let model = SariModel::untrained(2, 0.1, &small_config(3)).unwrap();
    let (s, a) = pair(&[0.1, -0.2], &[0.4, 0.3]);
    assert_eq!(model.encode(&s, &a).unwrap(), model.encode(&s, &a).unwrap());
}

#[test]
fn sampled_latent_collapses_at_the_variance_floor() {
    let model = constant_model(2, 2, vec![0.3, -0.7, -500.0, -500.0], vec![0.0, 0.0], vec![0.0, 0.0], 1.0);
    let (s, a) = pair(&[0.0, 0.0], &[1.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let floor_sd = (0.5 * LOG_VAR_MIN).exp();
    for _ in 0..100 {
        let t = model.encode_sample(&s, &a, &mut rng).unwrap();
        assert_eq!(t.log_var, vec![LOG_VAR_MIN; 2]);
        for (z, m) in t.z.iter().zip(&t.mean) {
            assert!((z - m).abs() < 6.0 * floor_sd);
        }
    }
}

#[test]
fn arbitration_examples() {
    let (s, a) = pair(&[0.2], &[0.5]);

    let zero = constant_model(1, 2, vec![0.0; 4], vec![0.0], vec![0.0, 0.0], 1.0);
    assert_eq!(zero.confidence(&s, &a).unwrap(), 0.5);
    let d = zero.arbitrate(&s, &a).unwrap();
    assert_eq!(d.gain.beta(), 0.5);
    assert_eq!(d.a_r.vel(), &[0.0]);

    let sure = constant_model(1, 2, vec![0.0; 4], vec![0.4], vec![0.0, 9f64.ln()], 0.6);
    assert!((sure.confidence(&s, &a).unwrap() - 0.9).abs() < 1e-12);
    assert_eq!(sure.arbitrate(&s, &a).unwrap().gain.beta(), 0.6);

    let off = sure.with_beta_max(0.0).unwrap();
    assert_eq!(off.arbitrate(&s, &a).unwrap().gain.beta(), 0.0);
}

proptest! {
    #[test]
    fn gain_never_exceeds_cap(
        seed in 0u64..500,
        beta_max in 0.0f64..=1.0,
        s in prop::collection::vec(-3.0f64..3.0, 2),
        a in prop::collection::vec(-3.0f64..3.0, 2),
    ) {
        let mut cfg = SariConfig { hidden_width: 8, beta_max, ..SariConfig::default() };
        cfg.train.seed = seed;
        let model = SariModel::untrained(2, 0.1, &cfg).unwrap();
        let (s, a) = pair(&s, &a);
        let c = model.confidence(&s, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&c));
        let d = model.arbitrate(&s, &a).unwrap();
        prop_assert!(d.gain.beta() <= d.gain.beta_max());
        prop_assert!(d.gain.beta() <= beta_max);
    }
}

#[test]
fn augment_examples() {
    let data = Dataset::new(vec![line_demo(&[0.0], &[0.5], 12, 0.0, 0)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(augment(&data, 0, 0.01, &mut rng).unwrap(), data);

    let five = augment(&data, 5, 0.01, &mut rng).unwrap();
    assert_eq!(five.len(), 6);
    assert_eq!(five.total_pairs(), 72);
    assert_eq!(five.interactions()[0], data.interactions()[0]);

    let quiet = augment(&data, 3, 1e-300, &mut rng).unwrap();
    for copy in quiet.interactions() {
        for (p, q) in copy.pairs().iter().zip(data.interactions()[0].pairs()) {
            assert!(distance(p.state().coords(), q.state().coords()) < 1e-250);
            assert!(distance(p.human_action().vel(), q.human_action().vel()) < 1e-250);
        }
    }
}

#[test]
fn zero_deformation_keeps_states() {
    let demo = line_demo(&[0.0, 0.0], &[0.4, 0.2], 20, 0.02, 4);
    let same = deform(&demo, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(same.state_rows(), demo.state_rows());
}

#[test]
fn deformation_preserves_length_and_dt_and_moves_endpoints() {
    let demo = line_demo(&[0.0, 0.0], &[0.4, 0.2], 25, 0.02, 5);
    for seed in 0..20 {
        let bent = deform(&demo, 0.2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(bent.len(), demo.len());
        assert_eq!(bent.dt(), demo.dt());
        let first = distance(bent.state_rows()[0].as_slice(), demo.state_rows()[0].as_slice());
        let last = distance(bent.state_rows()[24].as_slice(), demo.state_rows()[24].as_slice());
        assert!(first > 0.0 && last > 0.0);
    }
}

#[test]
fn too_short_interactions_cannot_deform() {
    let demo = line_demo(&[0.0], &[0.4], 3, 0.0, 0);
    assert!(deform(&demo, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

fn second_difference_energy(m: &DMatrix<f64>) -> f64 {
    let mut e = 0.0;
    for t in 1..m.nrows() - 1 {
        for c in 0..m.ncols() {
            let v = m[(t + 1, c)] - 2.0 * m[(t, c)] + m[(t - 1, c)];
            e += v * v;
        }
    }
    e
}

#[test]
fn deformations_are_smoother_than_white_noise() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = 10 + (seed as usize % 30);
        let delta = deformation_field(t, 2, 0.2, &mut rng).unwrap();
        let white = DMatrix::from_fn(t, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let white = &white * (delta.norm() / white.norm());
        assert!(second_difference_energy(&delta) < second_difference_energy(&white), "seed {seed}");
    }
}

#[test]
fn deformed_actions_integrate_the_displacement() {
    // Unassisted demos: states are the integral of actions, so deformed ones must stay consistent.
    let demo = line_demo(&[0.0, 0.0], &[0.4, 0.2], 30, 0.0, 6);
    let bent = deform(&demo, 0.15, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let s = bent.state_rows();
    let a = bent.action_rows();
    for k in 0..s.len() - 1 {
        for c in 0..2 {
            assert!((s[k + 1][c] - s[k][c] - 0.1 * a[k][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn training_is_deterministic_and_label_blind() {
    let data = one_goal_data();
    let mut cfg = small_config(7);
    cfg.train.epochs = 5;
    cfg.discriminator_epochs = Some(5);
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.to_json(), b.to_json());

    let unlabeled = Dataset::new(data.interactions().iter().map(|i| i.clone().with_label(None)).collect()).unwrap();
    let relabeled = Dataset::new(
        data.interactions().iter().map(|i| i.clone().with_label(Some("something else".into()))).collect(),
    )
    .unwrap();
    assert_eq!(train(&unlabeled, &cfg).unwrap().to_json(), a.to_json());
    assert_eq!(train(&relabeled, &cfg).unwrap().to_json(), a.to_json());

    assert_eq!(retrain(&a, &data).unwrap().to_json(), a.to_json());
    let round = SariModel::from_json(&a.to_json()).unwrap();
    assert_eq!(round, a);
}

#[test]
fn robot_actions_never_reach_the_model() {
    // Two episodes with identical human input but different assistance produce identical training data.
    let data = one_goal_data();
    let mut cfg = small_config(2);
    cfg.train.epochs = 5;
    cfg.discriminator_epochs = Some(5);
    let model = train(&data, &cfg).unwrap();
    let (s, a) = pair(&[0.1, 0.05], &[0.4, 0.25]);
    let before = (model.encode(&s, &a).unwrap(), model.confidence(&s, &a).unwrap());
    let mut assistant = SariAssistant::new(Arc::new(model.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    use sari_core::sim::Assistant;
    for _ in 0..10 {
        let d = assistant.decide(&s, &a, &mut rng).unwrap();
        assert_eq!(d.z_used.as_ref().unwrap(), &before.0);
        assert_eq!(d.gain.beta(), before.1.min(model.beta_max()));
    }
}

#[test]
fn training_loss_drops_tenfold_on_one_goal() {
    // Noise-free demonstrations so the floor is set by augmentation noise alone.
    let demos = (0..5).map(|k| line_demo(&[0.0, 0.0], &[0.5, 0.3], 40, 0.0, k)).collect();
    let data = Dataset::new(demos).unwrap();
    let mut cfg = small_config(0);
    cfg.discriminator_epochs = Some(1);
    let (_, report) = train_with_report(&data, &cfg).unwrap();
    let last = *report.policy_loss.last().unwrap();
    assert!(last < report.initial_policy_loss / 10.0, "{} -> {last}", report.initial_policy_loss);
}

#[test]
fn one_goal_model_reaches_after_release() {
    let mut cfg = small_config(0);
    cfg.hidden_width = 32;
    cfg.train.epochs = 100;
    let model = Arc::new(train(&one_goal_data(), &cfg).unwrap());
    let task = Task::Goal(GoalTask::new("goal", vec![0.5, 0.3]));
    let episode = EpisodeConfig { max_steps: 150, stop_on_success: false, ..EpisodeConfig::default() };
    let mut errors = Vec::new();
    for seed in 0..5 {
        let mut human = GaussianOperator::isotropic(task.clone(), 0.05, Engagement::ReleaseAfter { seconds: 0.5 }).unwrap();
        let mut assistant = SariAssistant::new(model.clone());
        let start = State::at(vec![0.0, 0.0]).unwrap();
        let log = run_episode(&mut assistant, &mut human, &task, &start, &episode, seed).unwrap();
        errors.push(distance(&log.outcome.final_state, &[0.5, 0.3]));
    }
    assert!(errors.iter().all(|e| *e < 0.1), "final errors {errors:?}");
}

#[test]
fn assistance_points_toward_the_demonstrated_goal() {
    let demos = (0..5).map(|k| line_demo(&[0.0], &[0.5], 30, 0.0, k)).collect();
    let data = Dataset::new(demos).unwrap();
    let model = train(&data, &small_config(1)).unwrap();
    let (s, a) = pair(&[0.0], &[0.5]);
    let z = model.encode(&s, &a).unwrap().z;
    let a_r = model.assist_action(&s, &z).unwrap();
    // Within 30 degrees of +x in one dimension means the same sign.
    assert!(a_r.vel()[0] > 0.0, "{:?}", a_r.vel());
    assert_eq!(model.assist_action(&s, &z).unwrap(), a_r);
}

#[test]
fn two_goal_encodings_separate() {
    let mut demos: Vec<Interaction> = (0..5).map(|k| line_demo(&[0.0, 0.0], &[0.5, 0.4], 40, 0.05, k)).collect();
    demos.extend((0..5).map(|k| line_demo(&[0.0, 0.0], &[-0.5, 0.4], 40, 0.05, 10 + k)));
    let data = Dataset::new(demos).unwrap();
    let model = train(&data, &small_config(5)).unwrap();

    let mut points: Vec<(Vec<f64>, bool)> = Vec::new();
    for (k, goal) in [[0.5, 0.4], [-0.5, 0.4]].iter().enumerate() {
        for seed in 0..3 {
            let held_out = line_demo(&[0.0, 0.0], goal, 40, 0.05, 100 + seed);
            for p in held_out.pairs().iter().take(20) {
                points.push((model.encode(p.state(), p.human_action()).unwrap().z, k == 0));
            }
        }
    }
    let accuracy = best_linear_split(&points);
    assert!(accuracy > 0.9, "accuracy {accuracy}");
}

/// Accuracy of the best threshold along the difference of class means.
fn best_linear_split(points: &[(Vec<f64>, bool)]) -> f64 {
    let dz = points[0].0.len();
    let mean = |label: bool| -> Vec<f64> {
        let members: Vec<_> = points.iter().filter(|p| p.1 == label).collect();
        (0..dz).map(|c| members.iter().map(|p| p.0[c]).sum::<f64>() / members.len() as f64).collect()
    };
    let (m1, m0) = (mean(true), mean(false));
    let dir: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
    let mut proj: Vec<(f64, bool)> =
        points.iter().map(|(z, l)| (z.iter().zip(&dir).map(|(a, b)| a * b).sum(), *l)).collect();
    proj.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = proj.len();
    let positives = proj.iter().filter(|p| p.1).count();
    let mut best = positives.max(n - positives);
    let mut below_neg = 0;
    let mut below_pos = 0;
    for p in &proj {
        if p.1 {
            below_pos += 1;
        } else {
            below_neg += 1;
        }
        best = best.max(below_neg + (positives - below_pos)).max(below_pos + (n - positives - below_neg));
    }
    best as f64 / n as f64
}
