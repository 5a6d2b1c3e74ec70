use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::thread;

use edgeplan::advisor::{Advisor, AdvisorError, RemoteAdvisor, RemoteSettings, ReplyBody, ReplyKind};
use edgeplan::registry::TaskKind;

/// Serves the given status and body once per response, capturing each
/// request body.
fn serve(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut request = vec![0; length];
            reader.read_exact(&mut request).unwrap();
            bodies.push(String::from_utf8(request).unwrap());
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
        bodies
    });
    (url, handle)
}

fn chat(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}

fn settings(endpoint: &str, retries: u32) -> RemoteSettings {
    RemoteSettings {
        max_retries: retries,
        retry_backoff_s: 0.0,
        timeout_s: 5.0,
        ..RemoteSettings::new(endpoint, "test-model")
    }
}

#[test]
fn parses_the_chat_reply() {
    let (url, server) = serve(vec![(200, chat("Sure: {\"tasks\": [{\"task\": \"vqa\"}]}"))]);
    let advisor = RemoteAdvisor::with_api_key(settings(&url, 0), Some("k".into())).unwrap();
    let reply = advisor.ask("### Request\nWhat color is the car?", ReplyKind::Plan).unwrap();
    match reply.body {
        ReplyBody::Plan(d) => assert_eq!(d.tasks[0].task, TaskKind::Vqa),
        other => panic!("{other:?}"),
    }
    let sent: serde_json::Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["messages"][0]["role"], "user");
    assert!(sent["messages"][0]["content"].as_str().unwrap().contains("What color"));
}

#[test]
fn retries_server_errors() {
    let (url, server) = serve(vec![(503, "{}".into()), (200, chat("NO_CHANGE"))]);
    let advisor = RemoteAdvisor::with_api_key(settings(&url, 1), None).unwrap();
    assert_eq!(advisor.ask("ctx", ReplyKind::FlProposal).unwrap().body, ReplyBody::NoChange);
    assert_eq!(server.join().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, server) = serve(vec![(401, "{\"error\": \"bad key\"}".into())]);
    let advisor = RemoteAdvisor::with_api_key(settings(&url, 3), None).unwrap();
    assert!(matches!(advisor.ask("ctx", ReplyKind::Plan), Err(AdvisorError::Transport(_))));
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn prose_without_json_is_malformed() {
    let (url, server) = serve(vec![(200, chat("I would rather not."))]);
    let advisor = RemoteAdvisor::with_api_key(settings(&url, 0), None).unwrap();
    assert!(matches!(advisor.ask("ctx", ReplyKind::Plan), Err(AdvisorError::MalformedReply(_))));
    server.join().unwrap();
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    // Bind then drop to get a port nobody listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let advisor = RemoteAdvisor::with_api_key(settings(&format!("http://127.0.0.1:{port}"), 0), None).unwrap();
    assert!(matches!(advisor.ask("ctx", ReplyKind::Plan), Err(AdvisorError::Transport(_))));
}
