use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sari_core::sari::{train, SariModel};
use sari_core::sim::{demonstrations, world, Engagement, EpisodeConfig, GaussianOperator, Task};
use sari_core::types::{Dataset, State};
use sari_teleop::session::{model_path, DATASET_FILE};
use sari_teleop::{serve, ClientMsg, Frame, Mode, ServeConfig, ServerMsg, Service, SessionConfig, StateFrame};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const WAIT: Duration = Duration::from_secs(120);

fn config(world: &str, hz: f64) -> ServeConfig {
    ServeConfig {
        addr: SocketAddr::from(([127, 0, 0, 1], 0)),
        world: world.into(),
        fresh: true,
        hz,
        ..ServeConfig::default()
    }
}

async fn connect(svc: &Service) -> Ws {
    connect_async(format!("ws://{}/ws", svc.addr)).await.unwrap().0
}

async fn next(ws: &mut Ws) -> Frame {
    loop {
        let msg = tokio::time::timeout(WAIT, ws.next()).await.expect("frame in time").unwrap().unwrap();
        if let Message::Text(t) = msg {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn send(ws: &mut Ws, msg: &ClientMsg) {
    ws.send(Message::Text(serde_json::to_string(msg).unwrap().into())).await.unwrap();
}

async fn next_state(ws: &mut Ws) -> StateFrame {
    loop {
        if let ServerMsg::State(s) = next(ws).await.msg {
            return s;
        }
    }
}

async fn next_error(ws: &mut Ws) -> String {
    loop {
        match next(ws).await.msg {
            ServerMsg::Error { msg } => return msg,
            ServerMsg::State(_) | ServerMsg::World { .. } => continue,
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[tokio::test]
async fn world_first_then_a_gapless_silent_stream() {
    let svc = serve(config("drawer", 100.0)).await.unwrap();
    let mut ws = connect(&svc).await;
    let first = next(&mut ws).await;
    assert_eq!(first.seq, 0);
    let ServerMsg::World { goals, skills } = first.msg else { panic!("world frame first") };
    assert_eq!(skills[0].name, "drawer");
    assert!(goals.iter().any(|g| g.name == "cup"));
    let mut last_t: Option<f64> = None;
    for k in 1..=30 {
        let f = next(&mut ws).await;
        assert_eq!(f.seq, k);
        let ServerMsg::State(s) = f.msg else { panic!("state frame") };
        assert_eq!(s.s, vec![0.0, 0.0]);
        assert_eq!(s.beta, 0.0);
        assert_eq!(s.mode, Mode::Idle);
        if let Some(t) = last_t {
            assert!((s.t - t - 0.1f64).abs() < 1e-9);
        }
        last_t = Some(s.t);
    }
    svc.shutdown().await;
}

#[tokio::test]
async fn bad_input_gets_an_error_frame_and_the_session_continues() {
    let svc = serve(config("drawer", 100.0)).await.unwrap();
    let mut ws = connect(&svc).await;
    ws.send(Message::Text("{not json".into())).await.unwrap();
    assert!(next_error(&mut ws).await.contains("malformed"));
    send(&mut ws, &ClientMsg::Cmd { seq: Some(1), ah: vec![0.1, 0.0, 0.0] }).await;
    assert!(next_error(&mut ws).await.contains("expected 2"));
    send(&mut ws, &ClientMsg::Retrain).await;
    assert!(next_error(&mut ws).await.contains("no recorded"));
    send(&mut ws, &ClientMsg::EpisodeStart { task: "drawer".into() }).await;
    loop {
        let s = next_state(&mut ws).await;
        if s.mode == Mode::Running {
            break;
        }
    }
    send(&mut ws, &ClientMsg::Retrain).await;
    assert!(next_error(&mut ws).await.contains("end the episode"));
    svc.shutdown().await;
}

#[tokio::test]
async fn later_connections_are_spectators() {
    let svc = serve(config("drawer", 100.0)).await.unwrap();
    let mut op = connect(&svc).await;
    next(&mut op).await;
    let mut viewer = connect(&svc).await;
    assert!(matches!(next(&mut viewer).await.msg, ServerMsg::World { .. }));
    send(&mut viewer, &ClientMsg::Cmd { seq: None, ah: vec![1.0, 0.0] }).await;
    assert!(next_error(&mut viewer).await.contains("read-only"));
    for _ in 0..5 {
        let f = next(&mut viewer).await;
        let ServerMsg::State(s) = f.msg else { panic!("state frame") };
        assert_eq!(s.s, vec![0.0, 0.0]);
    }
    drop(op);
    // The spectator takes over once the operator leaves.
    let mut moved = false;
    for _ in 0..200 {
        send(&mut viewer, &ClientMsg::Cmd { seq: None, ah: vec![0.5, 0.0] }).await;
        if let ServerMsg::State(s) = next(&mut viewer).await.msg {
            if s.s[0] > 0.0 {
                moved = true;
                break;
            }
        }
    }
    assert!(moved);
    svc.shutdown().await;
}

#[tokio::test]
async fn a_busy_port_fails_at_startup() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let cfg = ServeConfig { addr: held.local_addr().unwrap(), ..config("drawer", 10.0) };
    assert!(serve(cfg).await.is_err());
}

#[tokio::test]
async fn a_model_or_fresh_start_is_required() {
    let cfg = ServeConfig { fresh: false, ..config("drawer", 10.0) };
    assert!(serve(cfg).await.is_err());
}

fn demo_model(w: &str, task: &str, n: usize, seed: u64) -> SariModel {
    let w = world(w, 0).unwrap();
    let t = w.task(task).unwrap();
    let dcfg = EpisodeConfig { max_steps: 40, stop_on_success: false, ..EpisodeConfig::default() };
    let demos = demonstrations(&w, t, 0.05, n, &dcfg, seed).unwrap();
    train(&Dataset::new(demos).unwrap(), &SessionConfig::default().train).unwrap()
}

#[tokio::test]
async fn demo_like_commands_earn_assistance_within_ten_ticks() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("center.json");
    std::fs::write(&path, demo_model("table3", "center", 5, 3).to_json()).unwrap();
    let cfg = ServeConfig { model: Some(path), fresh: false, ..config("table3", 20.0) };
    let svc = serve(cfg).await.unwrap();
    let mut ws = connect(&svc).await;
    let g = [0.05, 0.75];
    send(&mut ws, &ClientMsg::EpisodeStart { task: "center".into() }).await;
    let mut betas = Vec::new();
    while betas.len() < 10 {
        let s = next_state(&mut ws).await;
        if s.mode != Mode::Running {
            continue;
        }
        betas.push(s.beta);
        let ah: Vec<f64> = (0..2).map(|i| (g[i] - s.s[i]).clamp(-1.0, 1.0)).collect();
        send(&mut ws, &ClientMsg::Cmd { seq: Some(betas.len() as u64), ah }).await;
    }
    assert!(betas.iter().any(|&b| b > 0.5), "betas {betas:?}");
    svc.shutdown().await;
}

/// Drives one episode with a simulated operator reacting to each state frame.
async fn record_episode(ws: &mut Ws, task: &Task, seed: u64, ticks: usize, seq: &mut u64) {
    let mut op = GaussianOperator::isotropic(task.clone(), 0.05, Engagement::Always).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    send(ws, &ClientMsg::EpisodeStart { task: task.name().into() }).await;
    let mut n = 0;
    while n < ticks {
        let s = next_state(ws).await;
        if s.mode != Mode::Running {
            continue;
        }
        let a = op.sample(&State::new(s.s.clone(), s.t).unwrap(), &mut rng).unwrap();
        *seq += 1;
        send(ws, &ClientMsg::Cmd { seq: Some(*seq), ah: a.vel().to_vec() }).await;
        n += 1;
    }
    send(ws, &ClientMsg::EpisodeEnd).await;
}

async fn retrain_and_wait(ws: &mut Ws) -> u64 {
    send(ws, &ClientMsg::Retrain).await;
    loop {
        match next(ws).await.msg {
            ServerMsg::RetrainDone { model_id } => return model_id,
            ServerMsg::RetrainFailed { msg } | ServerMsg::Error { msg } => panic!("retrain: {msg}"),
            _ => {}
        }
    }
}

fn replayed_mean_beta(dir: &Path, model_id: u64, demo: &Dataset) -> f64 {
    let text = std::fs::read_to_string(model_path(dir, model_id)).unwrap();
    let m = SariModel::from_json(&text).unwrap();
    let pairs: Vec<_> = demo.interactions().iter().flat_map(|i| i.pairs()).collect();
    pairs.iter().map(|p| m.arbitrate(p.state(), p.human_action()).unwrap().gain.beta()).sum::<f64>()
        / pairs.len() as f64
}

#[tokio::test]
async fn assistance_grows_with_recorded_episodes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServeConfig {
        data_dir: Some(dir.path().to_path_buf()),
        session: SessionConfig { hold_ticks: 3, ..SessionConfig::default() },
        ..config("drawer", 40.0)
    };
    let svc = serve(cfg).await.unwrap();
    let mut ws = connect(&svc).await;
    let w = world("drawer", 0).unwrap();
    let task = w.task("drawer").unwrap().clone();
    let dcfg = EpisodeConfig { max_steps: 40, stop_on_success: false, ..EpisodeConfig::default() };
    let held_out = Dataset::new(demonstrations(&w, &task, 0.05, 1, &dcfg, 999).unwrap()).unwrap();

    let mut seq = 0;
    let mut betas = vec![0.0];
    for (round, episodes) in [(1, 0..3), (2, 3..6)] {
        for k in episodes {
            record_episode(&mut ws, &task, k, 40, &mut seq).await;
        }
        assert_eq!(retrain_and_wait(&mut ws).await, round);
        betas.push(replayed_mean_beta(dir.path(), round, &held_out));
    }
    assert!(betas.windows(2).all(|w| w[1] > w[0]), "mean beta across retrains {betas:?}");

    let text = std::fs::read_to_string(dir.path().join(DATASET_FILE)).unwrap();
    let stored = Dataset::from_jsonl(&text).unwrap();
    assert_eq!(stored.len(), 6);
    for i in stored.interactions() {
        assert_eq!(i.label(), Some("drawer"));
        assert!(i.len() >= 40, "episode of {} pairs", i.len());
    }
    svc.shutdown().await;
}
