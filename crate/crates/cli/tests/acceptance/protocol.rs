use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use hpo_core::algorithm::{AlgorithmSpec, RandomSearchOptions};
use hpo_core::protocol::ResultsDocument;
use hpo_core::results::canonical_json;
use hpo_core::{ParameterDef, Study, StudyConfig};
use hpo_server::{start, ExternalJobs, ExternalOutcome, ExternalScheduler, RunReport, RunnerConfig};
use reqwest::blocking::Client;
use reqwest::StatusCode;

use crate::Verdict;

struct Server {
    base: String,
    jobs: ExternalJobs,
    thread: JoinHandle<RunReport>,
    http: Client,
}

impl Server {
    fn launch() -> Self {
        let config = StudyConfig {
            parameters: vec![
                ParameterDef::continuous_log("learning_rate", 1e-4, 1e-2),
                ParameterDef::discrete("num_units", 32, 128),
                ParameterDef::choice("activation", ["relu", "tanh", "sigmoid"]),
            ],
            algorithm: AlgorithmSpec::RandomSearch(RandomSearchOptions { max_num_trials: Some(2) }),
            lower_is_better: false,
        };
        let study = Study::new(config, 2024).expect("valid study");
        let scheduler = ExternalScheduler::new();
        let jobs = scheduler.jobs();
        let runner = RunnerConfig {
            max_concurrent: 1,
            poll_interval: Duration::from_millis(20),
            bind: "127.0.0.1:0".parse().unwrap(),
            ..RunnerConfig::default()
        };
        let (tx, rx) = mpsc::channel::<SocketAddr>();
        let thread = std::thread::spawn(move || {
            tokio::runtime::Runtime::new().unwrap().block_on(async move {
                let handle = start(study, Box::new(scheduler), &runner).await.expect("server starts");
                tx.send(handle.addr()).unwrap();
                handle.wait().await
            })
        });
        let addr = rx.recv().expect("server address");
        Self { base: format!("http://{addr}"), jobs, thread, http: Client::new() }
    }

    fn wait_submitted(&self, n: usize) -> Result<(), String> {
        let started = Instant::now();
        while self.jobs.submitted().len() < n {
            ensure!(started.elapsed() < Duration::from_secs(5), "trial {n} was never submitted");
            std::thread::sleep(Duration::from_millis(5));
        }
        Ok(())
    }

    fn get(&self, path: &str) -> (StatusCode, String) {
        let resp = self.http.get(format!("{}{path}", self.base)).send().expect("request");
        (resp.status(), resp.text().expect("body"))
    }

    fn post(&self, path: &str, body: Option<&str>) -> (StatusCode, String) {
        let mut req = self.http.post(format!("{}{path}", self.base));
        if let Some(body) = body {
            req = req.header("content-type", "application/json").body(body.to_string());
        }
        let resp = req.send().expect("request");
        (resp.status(), resp.text().expect("body"))
    }
}

fn golden(name: &str, actual: &str) -> Result<(), String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../server/tests/golden").join(name);
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("golden {name}: {e}"))?;
    ensure!(actual == expected.trim_end_matches('\n'), "{name}: body {actual} differs from golden");
    Ok(())
}

fn expect(what: &str, got: (StatusCode, String), status: StatusCode) -> Result<String, String> {
    ensure!(got.0 == status, "{what}: status {} (expected {status}), body {}", got.0, got.1);
    Ok(got.1)
}

pub fn conformance() -> Verdict {
    let server = Server::launch();
    server.wait_submitted(1)?;
    let mut checks = 0;
    let mut step = |what: &str, got: (StatusCode, String), status: StatusCode| {
        checks += 1;
        expect(what, got, status)
    };

    let trial = step("GET trial", server.get("/api/trials/1"), StatusCode::OK)?;
    golden("trial_1.json", &trial)?;
    ensure!(step("GET trial again", server.get("/api/trials/1"), StatusCode::OK)? == trial, "trial fetch is not idempotent");
    golden("unknown_trial.json", &step("GET unknown trial", server.get("/api/trials/999"), StatusCode::NOT_FOUND)?)?;

    let obs = "/api/trials/1/observations";
    let first = r#"{"trial_id":1,"iteration":0,"objective":0.91,"context":{"loss":0.31}}"#;
    ensure!(step("POST observation", server.post(obs, Some(first)), StatusCode::ACCEPTED)?.is_empty(), "202 with a body");
    let second = r#"{"trial_id":1,"iteration":1,"objective":0.93,"context":{"loss":0.27}}"#;
    step("POST observation", server.post(obs, Some(second)), StatusCode::ACCEPTED)?;
    let nan = r#"{"trial_id":1,"iteration":2,"objective":"NaN","context":{}}"#;
    golden("non_finite_objective.json", &step("POST NaN", server.post(obs, Some(nan)), StatusCode::BAD_REQUEST)?)?;
    step("POST malformed", server.post(obs, Some("{\"trial_id\":1,")), StatusCode::BAD_REQUEST)?;
    let elsewhere = r#"{"trial_id":999,"iteration":0,"objective":0.5}"#;
    step("POST unknown trial", server.post("/api/trials/999/observations", Some(elsewhere)), StatusCode::NOT_FOUND)?;

    ensure!(step("GET stop flag", server.get("/api/trials/1/stop"), StatusCode::OK)? == r#"{"stop":false}"#, "stop flag set early");
    let snapshot = step("GET results", server.get("/api/results"), StatusCode::OK)?;
    ensure!(step("GET results again", server.get("/api/results"), StatusCode::OK)? == snapshot, "repeated snapshots differ");
    golden("results_running.json", &snapshot)?;

    step("POST stop", server.post("/api/trials/1/stop", None), StatusCode::ACCEPTED)?;
    step("POST stop again", server.post("/api/trials/1/stop", None), StatusCode::ACCEPTED)?;
    ensure!(server.get("/api/trials/1/stop").1 == r#"{"stop":true}"#, "stop flag not raised");
    let late = r#"{"trial_id":1,"iteration":3,"objective":0.95}"#;
    golden("terminal_trial.json", &step("POST after stop", server.post(obs, Some(late)), StatusCode::CONFLICT)?)?;
    step("GET stopped trial", server.get("/api/trials/1"), StatusCode::GONE)?;
    step("POST stop unknown", server.post("/api/trials/999/stop", None), StatusCode::NOT_FOUND)?;

    server.wait_submitted(2)?;
    step("GET trial 2", server.get("/api/trials/2"), StatusCode::OK)?;
    let report = r#"{"trial_id":2,"iteration":0,"objective":0.88}"#;
    step("POST trial 2", server.post("/api/trials/2/observations", Some(report)), StatusCode::ACCEPTED)?;
    server.jobs.finish(2, ExternalOutcome::Success);
    let started = Instant::now();
    while !server.thread.is_finished() {
        ensure!(started.elapsed() < Duration::from_secs(5), "run never finished");
        std::thread::sleep(Duration::from_millis(10));
    }
    let report = server.thread.join().map_err(|_| "server thread panicked")?;
    golden("results_final.json", &canonical_json(&ResultsDocument::from_study(&report.study)))?;
    Ok(format!("{checks} exchanges matched status codes; 6 bodies byte-equal to golden files"))
}
