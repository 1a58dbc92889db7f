use std::net::SocketAddr;
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

use psn::env::{ActionId, EnvKind};
use psn::session::{HumanInput, SessionConfig};
use psn::zpd::ZpdCheckpoint;
use psn_server::{router, Control, ServerOptions, SessionHandle};

type Client = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn start() -> SocketAddr {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(ServerOptions::default())).await.unwrap() });
    addr
}

async fn connect(addr: SocketAddr) -> Client {
    tokio_tungstenite::connect_async(format!("ws://{addr}/ws")).await.unwrap().0
}

async fn send(ws: &mut Client, v: Value) {
    ws.send(Message::Text(v.to_string())).await.unwrap();
}

async fn recv(ws: &mut Client) -> Value {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next()).await.expect("server went quiet");
        if let Message::Text(t) = msg.unwrap().unwrap() {
            return serde_json::from_str(&t).unwrap();
        }
    }
}

async fn recv_type(ws: &mut Client, kind: &str) -> Value {
    loop {
        let v = recv(ws).await;
        if v["type"] == kind {
            return v;
        }
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unassisted_inputs_execute_verbatim() {
    let addr = start().await;
    let mut ws = connect(addr).await;
    send(&mut ws, json!({"type":"open","cfg":{"env":"minilander","strategy":"none","tick_hz":60}})).await;
    let opened = recv(&mut ws).await;
    assert_eq!(opened["type"], "opened");
    assert_eq!(opened["version"], 1);
    assert_eq!(opened["num_actions"], 4);

    let mut frames = 0;
    let mut k = 0usize;
    while frames < 500 {
        let v = recv(&mut ws).await;
        if v["type"] != "frame" {
            continue;
        }
        assert_eq!(v["executed"], v["human"]);
        assert_eq!(v["alpha_eff"], 0.0);
        frames += 1;
        if v["terminal"] != "none" {
            send(&mut ws, json!({"type":"reset"})).await;
        }
        k += 1;
        let action = [0, 3, 1, 3, 2][k % 5];
        send(&mut ws, json!({"type":"input","action": action, "ts": k})).await;
    }
    send(&mut ws, json!({"type":"close"})).await;
    assert_eq!(recv_type(&mut ws, "closed").await["type"], "closed");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn full_learnability_hands_control_to_the_human() {
    let dir = tempfile::tempdir().unwrap();
    let phi = dir.path().join("phi_one.json");
    ZpdCheckpoint::constant(EnvKind::GridTrack, 1.0).unwrap().save(&phi).unwrap();
    let addr = start().await;
    let mut ws = connect(addr).await;
    send(&mut ws, json!({"type":"open","cfg":{"env":"gridtrack","strategy":"psn","tick_hz":60,"phi_checkpoint":phi}})).await;
    assert_eq!(recv(&mut ws).await["type"], "opened");

    let script = [1, 0, 3, 0, 2, 0, 1];
    let mut checked = 0;
    let mut k = 0;
    while checked < 100 {
        let v = recv_type(&mut ws, "frame").await;
        assert_eq!(v["executed"], v["human"]);
        assert_eq!(v["alpha_eff"], 0.0);
        assert_eq!(v["phi"], 1.0);
        checked += 1;
        if v["terminal"] != "none" {
            send(&mut ws, json!({"type":"reset"})).await;
        }
        k += 1;
        let action = script[k % script.len()];
        send(&mut ws, json!({"type":"input","action": action, "ts": k})).await;
    }

    send(&mut ws, json!({"type":"heatmap","axes":["x","y"]})).await;
    let h = recv_type(&mut ws, "heatmap").await;
    assert_eq!(h["axes"], json!([0, 1]));
    assert!(h["grid"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()).all(|c| c == 1.0));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_requests_get_structured_errors() {
    let addr = start().await;
    let mut ws = connect(addr).await;
    send(&mut ws, json!({"type":"input","action":1,"ts":0})).await;
    assert_eq!(recv(&mut ws).await["type"], "error");
    send(&mut ws, json!({"type":"open","cfg":{"env":"gridtrack","strategy":"psn","phi_checkpoint":"/missing/phi.json"}}))
        .await;
    let e = recv(&mut ws).await;
    assert_eq!(e["type"], "error");
    assert!(e["msg"].as_str().unwrap().contains("phi.json"));
    send(&mut ws, json!({"type":"open","cfg":{"env":"gridtrack","strategy":"none","tick_hz":500}})).await;
    assert_eq!(recv(&mut ws).await["type"], "error");
    ws.send(Message::Text("{not json".into())).await.unwrap();
    assert_eq!(recv(&mut ws).await["type"], "error");

    // a good open after failures still works
    send(&mut ws, json!({"type":"open","cfg":{"env":"gridtrack","strategy":"none"}})).await;
    assert_eq!(recv(&mut ws).await["type"], "opened");
    send(&mut ws, json!({"type":"input","action":9,"ts":0})).await;
    assert_eq!(recv_type(&mut ws, "error").await["type"], "error");
}

/// The tick loop keeps its rate while one subscriber reads far slower than frames arrive.
#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn cadence_holds_under_a_slow_consumer() {
    let hz = 20.0;
    let cfg = SessionConfig {
        env: EnvKind::GridTrack,
        strategy: psn::assist::Strategy::None,
        tick_hz: hz,
        ..SessionConfig::default()
    };
    let handle = tokio::task::spawn_blocking(move || SessionHandle::spawn(cfg, &ServerOptions { frame_buffer: 4 }))
        .await
        .unwrap()
        .unwrap();
    let mut slow = handle.subscribe();
    let mut monitor = handle.subscribe();
    // coasting at the start cell lasts the whole 100-tick episode
    assert!(handle.send(Control::Input(HumanInput { action: ActionId(0), ts: 0 })));

    let slow_task = tokio::spawn(async move {
        let mut lagged = 0;
        for _ in 0..20 {
            match slow.recv().await {
                Err(tokio::sync::broadcast::error::RecvError::Lagged(n)) => lagged += n,
                Err(_) => break,
                Ok(_) => {}
            }
            tokio::time::sleep(Duration::from_millis(250)).await;
        }
        lagged
    });

    let n = 100;
    let mut stamps = Vec::with_capacity(n);
    let mut ticks = Vec::with_capacity(n);
    while stamps.len() < n {
        let f = monitor.recv().await.unwrap();
        stamps.push(Instant::now());
        ticks.push(f.t);
    }
    assert!(ticks.windows(2).all(|w| w[1] == w[0] + 1), "monitor skipped frames: {ticks:?}");
    let span = (stamps[n - 1] - stamps[0]).as_secs_f64();
    let expected = (n - 1) as f64 / hz;
    assert!((span - expected).abs() <= 0.05 * expected, "{n} frames spanned {span:.3}s, expected {expected:.3}s");
    assert!(slow_task.await.unwrap() > 0, "slow consumer never lagged");
    tokio::task::spawn_blocking(move || handle.close()).await.unwrap();
}
