use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sari_core::sari::{SariAssistant, SariConfig, SariModel};
use sari_core::sim::{
    random_goals, run_episode, standard_worlds, world, Engagement, EpisodeConfig, EpisodeLog, GaussianOperator,
    GoalTask, HumanSource, NoAssist, Observation, SilentHuman, SkillTask, Task, GOAL_RADIUS,
};
use sari_core::types::{distance, step, Action, State};

fn goal_task(g: &[f64]) -> Task {
    Task::Goal(GoalTask::new("g", g.to_vec()))
}

#[test]
fn noiseless_operator_examples() {
    let mut op = GaussianOperator::new(goal_task(&[1.0]), DMatrix::zeros(1, 1), 1.0, Engagement::Always).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = State::at(vec![0.0]).unwrap();
    assert_eq!(op.sample(&s, &mut rng).unwrap().vel(), &[1.0]);
    let far = State::at(vec![-3.0]).unwrap();
    assert_eq!(op.sample(&far, &mut rng).unwrap().vel(), &[1.0]);
}

#[test]
fn operator_mean_matches_target_direction() {
    let g = [0.3, -0.2, 0.1];
    let sigma = 0.2;
    let mut op = GaussianOperator::isotropic(goal_task(&g), sigma, Engagement::Always).unwrap();
    let s = State::at(vec![0.0, 0.0, 0.0]).unwrap();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mean = [0.0; 3];
    for _ in 0..n {
        let a = op.sample(&s, &mut rng).unwrap();
        for c in 0..3 {
            mean[c] += a.vel()[c] / n as f64;
        }
    }
    let err = distance(&mean, &g);
    let tol = 3.0 * sigma / (n as f64).sqrt() * 3f64.sqrt();
    assert!(err < tol, "{mean:?} vs {g:?}: {err} >= {tol}");
}

#[test]
fn skill_operator_advances_waypoints() {
    let skill = Task::Skill(SkillTask::new("s", vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.5, 0.5]]).unwrap());
    let mut op = GaussianOperator::new(skill, DMatrix::zeros(2, 2), 1.0, Engagement::Always).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // Near the first waypoint the target is the second.
    let a = op.sample(&State::at(vec![0.01, 0.0]).unwrap(), &mut rng).unwrap();
    assert!(a.vel()[0] > 0.0 && a.vel()[1] == 0.0);
    // After reaching the second it turns toward the third.
    let a = op.sample(&State::at(vec![0.5, 0.01]).unwrap(), &mut rng).unwrap();
    assert!(a.vel()[0].abs() < 1e-12 && a.vel()[1] > 0.0);
}

#[test]
fn skill_rejects_degenerate_paths() {
    assert!(SkillTask::new("one", vec![vec![0.0]]).is_err());
    assert!(SkillTask::new("repeat", vec![vec![0.0], vec![0.0]]).is_err());
}

#[test]
fn unassisted_noiseless_episode_succeeds() {
    let task = goal_task(&[0.4, -0.3]);
    let mut op = GaussianOperator::new(task.clone(), DMatrix::zeros(2, 2), 1.0, Engagement::Always).unwrap();
    let start = State::at(vec![0.0, 0.0]).unwrap();
    let log = run_episode(&mut NoAssist { d: 2 }, &mut op, &task, &start, &EpisodeConfig::default(), 0).unwrap();
    assert!(log.outcome.success);
    assert!(distance(&log.outcome.final_state, &[0.4, -0.3]) <= GOAL_RADIUS);
}

#[test]
fn silent_human_without_assistance_never_moves() {
    let task = goal_task(&[0.4, -0.3]);
    let start = State::at(vec![0.1, 0.2]).unwrap();
    let cfg = EpisodeConfig { max_steps: 50, ..EpisodeConfig::default() };
    let log = run_episode(&mut NoAssist { d: 2 }, &mut SilentHuman, &task, &start, &cfg, 0).unwrap();
    assert_eq!(log.len(), 50);
    assert_eq!(log.outcome.final_state, vec![0.1, 0.2]);
    assert!(!log.outcome.success);
}

#[test]
fn zero_cap_matches_no_assistance_step_for_step() {
    let mut cfg = SariConfig { hidden_width: 8, ..SariConfig::default() };
    cfg.train.seed = 3;
    let model = SariModel::untrained(2, 0.1, &cfg).unwrap().with_beta_max(0.0).unwrap();
    let task = goal_task(&[0.5, 0.5]);
    let start = State::at(vec![0.0, 0.0]).unwrap();
    let ecfg = EpisodeConfig { max_steps: 60, ..EpisodeConfig::default() };
    let mut op = GaussianOperator::isotropic(task.clone(), 0.1, Engagement::Always).unwrap();
    let capped = run_episode(&mut SariAssistant::new(Arc::new(model)), &mut op, &task, &start, &ecfg, 9).unwrap();
    let plain = run_episode(&mut NoAssist { d: 2 }, &mut op, &task, &start, &ecfg, 9).unwrap();
    assert_eq!(capped.interaction, plain.interaction);
    assert_eq!(capped.outcome, plain.outcome);
    assert!(capped.betas.iter().all(|b| *b == 0.0));
}

#[test]
fn log_reconstructs_states_and_round_trips() {
    let mut cfg = SariConfig { hidden_width: 8, ..SariConfig::default() };
    cfg.train.seed = 1;
    let model = Arc::new(SariModel::untrained(2, 0.1, &cfg).unwrap());
    let w = world("drawer", 0).unwrap();
    let task = w.tasks[0].clone();
    let start = w.start_for(&task).unwrap();
    let mut op = GaussianOperator::isotropic(task.clone(), 0.05, Engagement::ReleaseAfter { seconds: 1.0 }).unwrap();
    let ecfg = EpisodeConfig { max_steps: 80, ..EpisodeConfig::default() };
    let log = run_episode(&mut SariAssistant::new(model), &mut op, &task, &start, &ecfg, 2).unwrap();

    assert_eq!(log.robot_actions.len(), log.len());
    assert_eq!(log.blended.len(), log.len());
    assert_eq!(log.interaction.len(), log.len());
    let pairs = log.interaction.pairs();
    for k in 0..log.len() {
        let next = step(pairs[k].state(), &log.blended[k], log.dt()).unwrap();
        let expected: &[f64] = if k + 1 < log.len() { pairs[k + 1].state().coords() } else { &log.outcome.final_state };
        assert_eq!(next.coords(), expected);
    }

    let back = EpisodeLog::from_json(&log.to_json()).unwrap();
    assert_eq!(back, log);
}

#[test]
fn catalog_properties() {
    let worlds = standard_worlds(0);
    assert!(worlds.len() >= 5);
    assert_eq!(random_goals(20, 7), random_goals(20, 7));
    assert_ne!(random_goals(20, 7), random_goals(20, 8));
    let kitchen = world("kitchen8", 0).unwrap();
    assert_eq!(kitchen.tasks.len(), 8);
    for s in kitchen.skills() {
        assert!(s.waypoints.len() >= 3);
    }
    assert!(world("nowhere", 0).is_err());
}

#[test]
fn every_catalog_goal_is_reachable() {
    for w in standard_worlds(3) {
        for task in w.tasks.iter().chain(&w.novel) {
            let mut op = GaussianOperator::new(task.clone(), DMatrix::zeros(w.d, w.d), 1.0, Engagement::Always).unwrap();
            let start = w.start_for(task).unwrap();
            let log = run_episode(&mut NoAssist { d: w.d }, &mut op, task, &start, &EpisodeConfig::default(), 0).unwrap();
            assert!(log.outcome.success, "{} / {}", w.name, task.name());
        }
    }
}

#[test]
fn release_after_goes_silent() {
    let task = goal_task(&[1.0]);
    let mut op = GaussianOperator::isotropic(task, 0.0, Engagement::ReleaseAfter { seconds: 0.5 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let early = State::new(vec![0.0], 0.4).unwrap();
    let late = State::new(vec![0.0], 0.5).unwrap();
    let obs = |s| Observation { state: s, last_assist: None };
    assert_eq!(op.act(&obs(&early), &mut rng).unwrap().vel(), &[1.0]);
    assert_eq!(op.act(&obs(&late), &mut rng).unwrap(), Action::zero(1, sari_core::types::ActionKind::Human));
}

#[test]
fn satisficing_operator_yields_to_good_assistance() {
    let task = goal_task(&[1.0, 0.0]);
    let engagement = Engagement::Satisficing { cos_threshold: 0.9, speed_fraction: 0.5 };
    let mut op = GaussianOperator::isotropic(task, 0.0, engagement).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = State::at(vec![0.0, 0.0]).unwrap();
    let helpful = [0.8, 0.05];
    let opposing = [-0.8, 0.0];
    let quiet = op.act(&Observation { state: &s, last_assist: Some(&helpful) }, &mut rng).unwrap();
    assert_eq!(quiet.norm(), 0.0);
    let loud = op.act(&Observation { state: &s, last_assist: Some(&opposing) }, &mut rng).unwrap();
    assert_eq!(loud.vel(), &[1.0, 0.0]);
}

#[test]
fn dimension_mismatch_is_rejected_before_stepping() {
    let task = goal_task(&[1.0]);
    let mut op = GaussianOperator::isotropic(task.clone(), 0.1, Engagement::Always).unwrap();
    let start = State::at(vec![0.0]).unwrap();
    assert!(run_episode(&mut NoAssist { d: 2 }, &mut op, &task, &start, &EpisodeConfig::default(), 0).is_err());
}
