//! Stand-in evaluator speaking the NDJSON line protocol on stdin/stdout.
//!
//! It scores assignments deterministically (a saturating function of hashed
//! per-slot qualities, so scores are monotone in the assignment), and a few
//! flags make it misbehave on purpose so protocol handling can be tested:
//!
//!   --hello-version N    advertise protocol version N (default 1)
//!   --name S             advertise name S
//!   --sleep-ms N         sleep before answering each eval
//!   --error-on-eval      answer every eval with an error payload
//!   --fixed-score X      answer every eval with exactly X
//!   --malformed-after N  emit garbage instead of the (N+1)-th eval reply

use std::io::{BufRead, Write};

use rcas_core::objective::fnv1a;
use serde_json::{json, Value};

struct Flags {
    hello_version: u64,
    name: String,
    sleep_ms: u64,
    error_on_eval: bool,
    fixed_score: Option<f64>,
    malformed_after: Option<u64>,
}

fn parse_flags() -> Flags {
    let mut flags = Flags {
        hello_version: 1,
        name: "echo-evaluator".to_string(),
        sleep_ms: 0,
        error_on_eval: false,
        fixed_score: None,
        malformed_after: None,
    };
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut i = 0;
    while i < args.len() {
        let take_value = |i: usize| -> &str {
            args.get(i + 1).unwrap_or_else(|| {
                eprintln!("echo-evaluator: {} needs a value", args[i]);
                std::process::exit(2);
            })
        };
        match args[i].as_str() {
            "--hello-version" => {
                flags.hello_version = take_value(i).parse().expect("--hello-version wants an integer");
                i += 2;
            }
            "--name" => {
                flags.name = take_value(i).to_string();
                i += 2;
            }
            "--sleep-ms" => {
                flags.sleep_ms = take_value(i).parse().expect("--sleep-ms wants an integer");
                i += 2;
            }
            "--error-on-eval" => {
                flags.error_on_eval = true;
                i += 1;
            }
            "--fixed-score" => {
                flags.fixed_score = Some(take_value(i).parse().expect("--fixed-score wants a number"));
                i += 2;
            }
            "--malformed-after" => {
                flags.malformed_after = Some(take_value(i).parse().expect("--malformed-after wants an integer"));
                i += 2;
            }
            other => {
                eprintln!("echo-evaluator: unknown flag {other}");
                std::process::exit(2);
            }
        }
    }
    flags
}

/// Deterministic quality in [0.1, 0.5] per (position, type) slot.
fn slot_quality(position: u64, block: u64) -> f64 {
    let h = fnv1a(
        position
            .to_le_bytes()
            .into_iter()
            .chain(block.to_le_bytes()),
    );
    0.1 + 0.4 * ((h % 1000) as f64 / 999.0)
}

fn score(assignment: &[Value]) -> f64 {
    let mut mass = 0.0;
    for slot in assignment {
        let p = slot.get("position").and_then(Value::as_u64).unwrap_or(0);
        let b = slot.get("type").and_then(Value::as_u64).unwrap_or(0);
        mass += slot_quality(p, b);
    }
    1.0 - (-mass / 2.0).exp()
}

fn main() {
    let flags = parse_flags();
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let mut evals_answered: u64 = 0;

    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let Ok(msg): Result<Value, _> = serde_json::from_str(&line) else {
            // unreadable input: report and keep listening
            let _ = writeln!(out, "{}", json!({"error": "unparseable request"}));
            let _ = out.flush();
            continue;
        };
        match msg.get("cmd").and_then(Value::as_str) {
            Some("hello") => {
                let reply = json!({
                    "cmd": "hello",
                    "version": flags.hello_version,
                    "name": flags.name,
                });
                let _ = writeln!(out, "{reply}");
                let _ = out.flush();
            }
            Some("shutdown") => break,
            Some("eval") | None => {
                if flags.sleep_ms > 0 {
                    std::thread::sleep(std::time::Duration::from_millis(flags.sleep_ms));
                }
                let id = msg.get("id").cloned().unwrap_or(Value::Null);
                if let Some(n) = flags.malformed_after {
                    if evals_answered >= n {
                        let _ = writeln!(out, "this line is not JSON {{");
                        let _ = out.flush();
                        continue;
                    }
                }
                evals_answered += 1;
                let reply = if flags.error_on_eval {
                    json!({"id": id, "error": "synthetic failure requested by flag"})
                } else {
                    let acc = flags.fixed_score.unwrap_or_else(|| {
                        let slots = msg
                            .get("assignment")
                            .and_then(Value::as_array)
                            .cloned()
                            .unwrap_or_default();
                        score(&slots)
                    });
                    json!({"id": id, "accuracy": acc})
                };
                let _ = writeln!(out, "{reply}");
                let _ = out.flush();
            }
            Some(_) => {
                // unknown command: ignore, per the protocol's lenient reads
            }
        }
    }
}
