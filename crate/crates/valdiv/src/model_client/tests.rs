use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread::JoinHandle;
use std::time::Duration;

use super::judge::parse_verdict;
use super::*;
use crate::enumerate::{ConditionalModel, EnumerateError, LeafLabel, LeafLabeler};

fn record(prefix: &[&str], candidates: &[(&str, f64)]) -> DistributionRecord {
    DistributionRecord {
        prefix: prefix.iter().map(|s| s.to_string()).collect(),
        candidates: candidates
            .iter()
            .map(|&(token, logprob)| Candidate {
                token: token.to_string(),
                logprob,
            })
            .collect(),
        metadata: None,
    }
}

#[test]
fn interner_numbers_tokens_in_encounter_order() {
    let interner = TokenInterner::new();
    assert_eq!(interner.intern("b"), 0);
    assert_eq!(interner.intern("a"), 1);
    assert_eq!(interner.intern("b"), 0);
    assert_eq!(interner.len(), 2);
    assert_eq!(interner.name(1).as_deref(), Some("a"));
    assert_eq!(interner.get("a"), Some(1));
    assert_eq!(interner.decode(&[1, 0]).unwrap(), vec!["a", "b"]);
    assert!(matches!(
        interner.decode(&[7]),
        Err(ClientError::UnknownTokenId { id: 7 })
    ));
}

#[test]
fn file_round_trip_reproduces_probabilities() {
    let records = vec![
        record(&[], &[("a", -0.3), ("b", -1.1), ("c", -2.7)]),
        record(&["a"], &[("b", 0.25), ("a", -0.4)]),
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("conds.jsonl");
    save_distributions(&path, &records).unwrap();
    let model = load_distributions(&path).unwrap();
    assert_eq!(model.records(), 2);

    // softmax of the captured logprobs, by hand
    let z: f64 = [-0.3f64, -1.1, -2.7].iter().map(|l| l.exp()).sum();
    let root = model.distribution(&[]).unwrap();
    for (rank, logprob) in [(0usize, -0.3f64), (1, -1.1), (2, -2.7)] {
        assert!((root.prob(rank) - logprob.exp() / z).abs() < 1e-12);
    }
    // interner saw a, b, c in that order
    assert_eq!(root.tokens().unwrap(), &[0, 1, 2]);

    let a = model.interner().get("a").unwrap();
    let after_a = model.distribution(&[a]).unwrap();
    // candidates arrive unsorted; ranked form puts b first
    assert_eq!(after_a.token(0), model.interner().get("b"));
    let z: f64 = (0.25f64).exp() + (-0.4f64).exp();
    assert!((after_a.prob(0) - (0.25f64).exp() / z).abs() < 1e-12);
}

#[test]
fn unknown_prefix_is_a_missing_prefix_error() {
    let model = FileModel::from_records(&[record(&[], &[("a", 0.0)])]).unwrap();
    assert!(matches!(
        model.distribution(&[3]),
        Err(EnumerateError::MissingPrefix { .. })
    ));
}

#[test]
fn load_reports_real_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.jsonl");

    std::fs::write(
        &path,
        "{\"prefix\":[],\"candidates\":[{\"token\":\"a\",\"logprob\":0.0}]}\nnot json\n",
    )
    .unwrap();
    assert!(matches!(
        load_distributions(&path),
        Err(ClientError::MalformedLine { line: 2, .. })
    ));

    let good = "{\"prefix\":[],\"candidates\":[{\"token\":\"a\",\"logprob\":0.0}]}";
    std::fs::write(&path, format!("{good}\n\n{good}\n")).unwrap();
    assert!(matches!(
        load_distributions(&path),
        Err(ClientError::DuplicatePrefix { line: 3 })
    ));

    std::fs::write(&path, "{\"prefix\":[],\"candidates\":[]}\n").unwrap();
    assert!(matches!(
        load_distributions(&path),
        Err(ClientError::BadRecord { line: 1, .. })
    ));

    assert!(matches!(
        load_distributions(dir.path().join("absent.jsonl")),
        Err(ClientError::Io { .. })
    ));
}

#[test]
fn records_reject_bad_candidates() {
    let nan = FileModel::from_records(&[record(&[], &[("a", f64::NAN)])]);
    assert!(matches!(nan, Err(ClientError::BadRecord { line: 1, .. })));

    let dup = FileModel::from_records(&[record(&[], &[("a", 0.0), ("a", -1.0)])]);
    match dup {
        Err(ClientError::BadRecord { line: 1, detail }) => assert!(detail.contains("repeats")),
        other => panic!("expected duplicate-candidate rejection, got {other:?}"),
    }
}

#[test]
fn endpoint_config_from_env() {
    std::env::set_var("MCT_A_URL", "http://127.0.0.1:1/x");
    std::env::set_var("MCT_A_AUTH_TOKEN", "secret");
    std::env::set_var("MCT_A_TIMEOUT_MS", "1500");
    std::env::set_var("MCT_A_MAX_IN_FLIGHT", "2");
    let config = EndpointConfig::from_env("MCT_A").unwrap();
    assert_eq!(config.url, "http://127.0.0.1:1/x");
    assert_eq!(config.auth_token.as_deref(), Some("secret"));
    assert_eq!(config.timeout, Duration::from_millis(1500));
    assert_eq!(config.max_in_flight, 2);
    assert_eq!(config.max_retries, 3);

    assert!(matches!(
        EndpointConfig::from_env("MCT_UNSET"),
        Err(ClientError::MissingEnv { .. })
    ));

    std::env::set_var("MCT_B_URL", "http://127.0.0.1:1/x");
    std::env::set_var("MCT_B_TIMEOUT_MS", "soon");
    assert!(matches!(
        EndpointConfig::from_env("MCT_B"),
        Err(ClientError::BadEnv { .. })
    ));
}

/// One scripted exchange: how the server should treat one connection.
enum Scripted {
    Reply { status: u16, body: String },
    StallMs(u64),
}

fn reply(status: u16, body: &str) -> Scripted {
    Scripted::Reply {
        status,
        body: body.to_string(),
    }
}

/// Serves the script one connection at a time and collects request bodies.
fn mock_server(script: Vec<Scripted>) -> (String, JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for step in script {
            let (stream, _) = listener.accept().unwrap();
            bodies.push(serve_one(stream, step));
        }
        bodies
    });
    (url, handle)
}

fn serve_one(stream: TcpStream, step: Scripted) -> String {
    let mut reader = BufReader::new(stream);
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                content_length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).unwrap();
    let request = String::from_utf8(body).unwrap();

    match step {
        Scripted::Reply { status, body } => {
            let mut stream = reader.into_inner();
            // writes to an already-timed-out client are fine to fail
            let _ = stream.write_all(
                format!(
                    "HTTP/1.1 {status} Scripted\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .as_bytes(),
            );
        }
        Scripted::StallMs(ms) => {
            std::thread::sleep(Duration::from_millis(ms));
        }
    }
    request
}

/// Config pointed at a mock, with fast retries so tests stay quick.
fn test_config(url: &str) -> EndpointConfig {
    let mut config = EndpointConfig::new(url);
    config.timeout = Duration::from_millis(2000);
    config.max_retries = 1;
    config.backoff = Duration::from_millis(5);
    config
}

const CANDIDATES_AB: &str =
    "{\"candidates\":[{\"token\":\"a\",\"logprob\":-0.5},{\"token\":\"b\",\"logprob\":-1.5}]}";

#[test]
fn remote_model_round_trip_and_wire_shape() {
    let (url, handle) = mock_server(vec![reply(200, CANDIDATES_AB)]);
    let model = RemoteModel::new(test_config(&url), 5);
    let dist = model.distribution(&[]).unwrap();

    let z: f64 = (-0.5f64).exp() + (-1.5f64).exp();
    assert!((dist.prob(0) - (-0.5f64).exp() / z).abs() < 1e-12);
    assert_eq!(
        model.interner().name(dist.token(0).unwrap()).as_deref(),
        Some("a")
    );

    let bodies = handle.join().unwrap();
    assert_eq!(bodies, vec!["{\"prefix\":[],\"top\":5}".to_string()]);
}

#[test]
fn remote_model_sorts_unsorted_candidates() {
    let unsorted =
        "{\"candidates\":[{\"token\":\"low\",\"logprob\":-4.0},{\"token\":\"high\",\"logprob\":-0.1}]}";
    let (url, handle) = mock_server(vec![reply(200, unsorted)]);
    let model = RemoteModel::new(test_config(&url), 2);
    let dist = model.distribution(&[]).unwrap();
    assert_eq!(
        model.interner().name(dist.token(0).unwrap()).as_deref(),
        Some("high")
    );
    assert!(dist.prob(0) > dist.prob(1));
    handle.join().unwrap();
}

#[test]
fn remote_model_sends_decoded_prefix() {
    let (url, handle) = mock_server(vec![reply(200, CANDIDATES_AB), reply(200, CANDIDATES_AB)]);
    let model = RemoteModel::new(test_config(&url), 3);
    let first = model.intern("first");
    let second = model.intern("second");
    model.distribution(&[first, second]).unwrap();
    model.distribution(&[second]).unwrap();
    let bodies = handle.join().unwrap();
    assert_eq!(bodies[0], "{\"prefix\":[\"first\",\"second\"],\"top\":3}");
    assert_eq!(bodies[1], "{\"prefix\":[\"second\"],\"top\":3}");
}

#[test]
fn unknown_prefix_ids_fail_locally() {
    // no server needed: decoding fails before any request is sent
    let model = RemoteModel::new(test_config("http://127.0.0.1:1/"), 3);
    match model.distribution(&[9]) {
        Err(EnumerateError::Model { remote, detail }) => {
            assert!(!remote);
            assert!(detail.contains("9"));
        }
        other => panic!("expected a local model error, got {other:?}"),
    }
}

#[test]
fn transient_failure_is_retried_then_succeeds() {
    let (url, handle) = mock_server(vec![reply(500, "overloaded"), reply(200, CANDIDATES_AB)]);
    let model = RemoteModel::new(test_config(&url), 2);
    assert!(model.distribution(&[]).is_ok());
    assert_eq!(handle.join().unwrap().len(), 2);
}

#[test]
fn retry_budget_exhaustion_reports_status() {
    let (url, handle) = mock_server(vec![reply(500, "x"), reply(503, "y")]);
    let model = RemoteModel::new(test_config(&url), 2);
    match model.query(&[]) {
        Err(ClientError::Status { code, .. }) => assert_eq!(code, 503),
        other => panic!("expected a status error, got {other:?}"),
    }
    assert_eq!(handle.join().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, handle) = mock_server(vec![reply(404, "no such model")]);
    let model = RemoteModel::new(test_config(&url), 2);
    match model.distribution(&[]) {
        Err(EnumerateError::Model {
            remote: true,
            detail,
        }) => {
            assert!(detail.contains("404"), "{detail}");
        }
        other => panic!("expected a remote model error, got {other:?}"),
    }
    // exactly one request: 4xx must not burn the retry budget
    assert_eq!(handle.join().unwrap().len(), 1);
}

#[test]
fn timeout_budget_exhaustion_is_distinct() {
    let (url, handle) = mock_server(vec![Scripted::StallMs(500), Scripted::StallMs(500)]);
    let mut config = test_config(&url);
    config.timeout = Duration::from_millis(50);
    let model = RemoteModel::new(config, 2);
    match model.query(&[]) {
        Err(ClientError::Timeout { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("expected a timeout error, got {other:?}"),
    }
    handle.join().unwrap();
}

#[test]
fn truncated_and_malformed_bodies_are_schema_errors() {
    for body in ["{\"candidates\":[{\"token\":\"a\",", "{\"unrelated\":1}"] {
        let (url, handle) = mock_server(vec![reply(200, body)]);
        let model = RemoteModel::new(test_config(&url), 2);
        match model.query(&[]) {
            Err(ClientError::Schema { .. }) => {}
            other => panic!("expected a schema error for {body:?}, got {other:?}"),
        }
        // fatal on first sight, no retry
        assert_eq!(handle.join().unwrap().len(), 1);
    }

    let empty = "{\"candidates\":[]}";
    let (url, handle) = mock_server(vec![reply(200, empty)]);
    let model = RemoteModel::new(test_config(&url), 2);
    assert!(matches!(model.query(&[]), Err(ClientError::Schema { .. })));
    handle.join().unwrap();
}

#[test]
fn prompt_template_carries_both_slots() {
    assert!(JUDGE_PROMPT_TEMPLATE.contains("{question}"));
    assert!(JUDGE_PROMPT_TEMPLATE.contains("{shot}"));
    let filled = judge_prompt("What is 2+2?", "Four.");
    assert!(filled.contains("What is 2+2?"));
    assert!(filled.contains("Four."));
    assert!(!filled.contains("{question}"));
    assert!(!filled.contains("{shot}"));
}

#[test]
fn verdict_parsing_extracts_first_balanced_object() {
    let wrapped = "Sure! Here is my verdict:\n{\"reason\":\"solid { } answer\",\"grammar\":10,\"semantic\":9,\"overall\":9}\nHope that helps.";
    let verdict = parse_verdict(wrapped).unwrap().unwrap();
    assert_eq!(verdict.grammar, 10);
    assert_eq!(verdict.reason, "solid { } answer");
    assert!(verdict.passes(9));
    assert!(!verdict.passes(10));

    // stray braces that fail to parse are skipped, later object wins
    let noisy = "{oops} then {\"reason\":\"r\",\"grammar\":9,\"semantic\":9,\"overall\":10}";
    assert_eq!(parse_verdict(noisy).unwrap().unwrap().overall, 10);

    assert_eq!(parse_verdict("no json here").unwrap(), None);

    let out_of_range = "{\"reason\":\"r\",\"grammar\":11,\"semantic\":9,\"overall\":9}";
    assert!(matches!(
        parse_verdict(out_of_range),
        Err(ClientError::Schema { .. })
    ));
    let missing_field = "{\"reason\":\"r\",\"grammar\":9}";
    assert!(matches!(
        parse_verdict(missing_field),
        Err(ClientError::Schema { .. })
    ));
}

fn judge_reply(text: &str) -> String {
    serde_json::to_string(&serde_json::json!({ "text": text })).unwrap()
}

#[test]
fn judge_labels_with_the_all_scores_rule() {
    let script = vec![
        reply(
            200,
            &judge_reply("{\"reason\":\"ok\",\"grammar\":10,\"semantic\":9,\"overall\":9}"),
        ),
        reply(
            200,
            &judge_reply("{\"reason\":\"typo\",\"grammar\":8,\"semantic\":10,\"overall\":10}"),
        ),
        reply(200, &judge_reply("I refuse to answer in JSON.")),
    ];
    let (url, handle) = mock_server(script);
    let client = JudgeClient::new(test_config(&url), 9).unwrap();

    assert_eq!(client.label("q", "good").unwrap(), LeafLabel::Valid);
    // one score below threshold sinks the whole verdict
    assert_eq!(client.label("q", "typo'd").unwrap(), LeafLabel::Invalid);
    assert_eq!(client.label("q", "shrug").unwrap(), LeafLabel::Unlabeled);

    let bodies = handle.join().unwrap();
    assert!(bodies[0].contains("strict language quality judge"));
    assert!(bodies[0].contains("good"));
}

#[test]
fn judge_outcomes_expose_verdicts() {
    let (url, handle) = mock_server(vec![
        reply(
            200,
            &judge_reply("{\"reason\":\"fine\",\"grammar\":9,\"semantic\":9,\"overall\":9}"),
        ),
        reply(200, &judge_reply("hm")),
    ]);
    let client = JudgeClient::new(test_config(&url), 9).unwrap();
    match client.judge("q", "g").unwrap() {
        JudgeOutcome::Scored(v) => assert_eq!(v.reason, "fine"),
        other => panic!("expected a scored outcome, got {other:?}"),
    }
    match client.judge("q", "g").unwrap() {
        JudgeOutcome::Unscored { reply } => assert_eq!(reply, "hm"),
        other => panic!("expected an unscored outcome, got {other:?}"),
    }
    handle.join().unwrap();

    assert!(matches!(
        JudgeClient::new(test_config("http://127.0.0.1:1/"), 0),
        Err(ClientError::BadThreshold { value: 0 })
    ));
}

#[test]
fn judge_labeler_decodes_and_propagates_labels() {
    let (url, handle) = mock_server(vec![reply(
        200,
        &judge_reply("{\"reason\":\"ok\",\"grammar\":9,\"semantic\":9,\"overall\":9}"),
    )]);
    let client = JudgeClient::new(test_config(&url), 9).unwrap();
    let interner = TokenInterner::new();
    let the = interner.intern("the");
    let cat = interner.intern("cat");
    let labeler = JudgeLabeler::new(&client, &interner, "describe a pet", " ");

    assert_eq!(labeler.label(&[the, cat]).unwrap(), LeafLabel::Valid);
    let bodies = handle.join().unwrap();
    assert!(bodies[0].contains("the cat"));

    // unknown ids fail before any request, as a local error
    assert!(matches!(
        labeler.label(&[99]),
        Err(EnumerateError::Model { remote: false, .. })
    ));
}

#[test]
fn judge_transport_failures_surface_as_remote_errors() {
    // nothing listens on this port
    let mut config = EndpointConfig::new("http://127.0.0.1:9/");
    config.max_retries = 0;
    config.timeout = Duration::from_millis(200);
    config.backoff = Duration::from_millis(1);
    let client = JudgeClient::new(config, 9).unwrap();
    let interner = TokenInterner::new();
    let tok = interner.intern("x");
    let labeler = JudgeLabeler::new(&client, &interner, "q", "");
    assert!(matches!(
        labeler.label(&[tok]),
        Err(EnumerateError::Model { remote: true, .. })
    ));
}
