#![allow(dead_code)]

use std::net::TcpListener;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use serde_json::Value;
use somnoline_core::edf::synth::{SynthRecording, SynthSignal};
use somnoline_pipeline::{ManualClock, Storage};
use somnoline_service::{Platform, Role, ServiceConfig, User, UserDirectory};

pub const SECRET: &str = "internal-test-secret";

pub fn users() -> Vec<User> {
    vec![
        User::new("alice", "A", Role::Technologist, "pw-alice"),
        User::new("anna", "A", Role::Technologist, "pw-anna"),
        User::new("bob", "B", Role::Technologist, "pw-bob"),
        User::new("carl", "C", Role::Technologist, "pw-carl"),
        User::new("root", "HQ", Role::Admin, "pw-root"),
    ]
}

/// A running service on an ephemeral port with a manual clock.
pub struct TestService {
    pub base: String,
    pub platform: Arc<Platform>,
    pub clock: Arc<ManualClock>,
    pub config: ServiceConfig,
    pub dir: tempfile::TempDir,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestService {
    pub fn start() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let users_file = dir.path().join("users.json");
        UserDirectory::save(&users(), &users_file).unwrap();
        let config = ServiceConfig::new(dir.path().join("store"), users_file, SECRET);
        Self::start_with(dir, config)
    }

    pub fn start_with(dir: tempfile::TempDir, config: ServiceConfig) -> Self {
        let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 3, 4, 8, 0, 0).unwrap()));
        let platform = Platform::open(&config, clock.clone()).unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.set_nonblocking(true).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let p = platform.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).unwrap();
                somnoline_service::serve(listener, p, async {
                    rx.await.ok();
                })
                .await
                .unwrap();
            });
        });
        TestService {
            base,
            platform,
            clock,
            config,
            dir,
            shutdown: Some(tx),
            thread: Some(thread),
        }
    }

    pub fn storage(&self) -> Storage {
        self.platform.storage.clone()
    }

    pub fn stop(mut self) -> (tempfile::TempDir, ServiceConfig) {
        self.halt();
        let dir = std::mem::replace(&mut self.dir, tempfile::tempdir().unwrap());
        (dir, self.config.clone())
    }

    fn halt(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            tx.send(()).ok();
        }
        if let Some(t) = self.thread.take() {
            t.join().unwrap();
        }
    }

    pub fn client(&self) -> Client {
        Client::new(&self.base)
    }
}

impl Drop for TestService {
    fn drop(&mut self) {
        self.halt();
    }
}

pub struct Reply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn error_code(&self) -> String {
        self.json()["error"].as_str().unwrap_or_default().to_owned()
    }
}

#[derive(Clone)]
pub struct Client {
    agent: ureq::Agent,
    pub base: String,
}

impl Client {
    pub fn new(base: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        Client {
            agent,
            base: base.to_owned(),
        }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Reply {
        let mut resp = resp.unwrap();
        let headers = resp
            .headers()
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_str().unwrap_or_default().to_owned()))
            .collect();
        let status = resp.status().as_u16();
        let body = resp.body_mut().with_config().limit(u64::MAX).read_to_vec().unwrap();
        Reply { status, headers, body }
    }

    pub fn get(&self, path: &str, token: Option<&str>) -> Reply {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        Self::finish(req.call())
    }

    pub fn post_json(&self, path: &str, token: Option<&str>, headers: &[(&str, &str)], body: &Value) -> Reply {
        let mut req = self.agent.post(format!("{}{path}", self.base));
        if let Some(t) = token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        Self::finish(req.send_json(body))
    }

    pub fn internal(&self, path: &str, body: &Value) -> Reply {
        self.post_json(path, None, &[("X-Internal-Secret", SECRET)], body)
    }

    pub fn upload(&self, token: &str, bytes: &[u8], headers: &[(&str, &str)]) -> Reply {
        let mut req = self
            .agent
            .post(format!("{}/recordings", self.base))
            .header("Authorization", format!("Bearer {token}"))
            .header("Content-Type", "application/octet-stream");
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        Self::finish(req.send(bytes))
    }

    pub fn login(&self, user: &str) -> String {
        let r = self.post_json(
            "/auth/login",
            None,
            &[],
            &serde_json::json!({"username": user, "secret": format!("pw-{user}")}),
        );
        assert_eq!(r.status, 200, "{}", r.text());
        r.json()["token"].as_str().unwrap().to_owned()
    }

    /// Polls a recording until it reaches `state` or the deadline passes.
    pub fn wait_for_state(&self, token: &str, id: &str, state: &str, within: Duration) -> Value {
        let deadline = std::time::Instant::now() + within;
        loop {
            let r = self.get(&format!("/recordings/{id}"), Some(token));
            let v = r.json();
            if v["state"] == state || std::time::Instant::now() > deadline {
                return v;
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

/// Three 3-minute nights; 30 s records of a 100 Hz EEG channel plus EMG noise.
pub fn three_nights() -> SynthRecording {
    SynthRecording {
        nights: vec![6, 6, 6],
        signals: vec![
            SynthSignal::sine("EEG C4-M1", 3000, 2.0, 80.0),
            SynthSignal::noise("EMG chin", 300, 10.0, 3),
        ],
        ..SynthRecording::three_nights()
    }
}

pub fn three_night_bytes() -> Vec<u8> {
    somnoline_core::edf::write_recording(&three_nights().build()).unwrap()
}
