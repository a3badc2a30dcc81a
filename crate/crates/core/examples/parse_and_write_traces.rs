//! Round-trips a trace file and shows how malformed records are reported.
//!
//! Run with `cargo run --example parse_and_write_traces`.

use instab::synth::SynthConfig;
use instab::trace::{parse_traces, write_trace_file, parse_trace_file, ParseOptions};

fn main() -> instab::Result<()> {
    let dir = std::env::temp_dir().join("instab-parse-example");
    std::fs::create_dir_all(&dir).map_err(|e| instab::Error::io(&dir, e))?;
    let path = dir.join("traces.jsonl");

    let corpus = instab::synth::generate(&SynthConfig::two_population(5, 3))?;
    write_trace_file(&path, &corpus.traces)?;
    let back = parse_trace_file(&path)?;
    assert_eq!(back, corpus.traces);
    println!("{} traces round-tripped through {}", back.len(), path.display());
    println!("first line: {:.120}...", back[0].to_json_line());

    let bad = r#"{"id":"x","dataset":"d","model":"m","decoding":{"temperature":0.0,"top_p":1.0,"seed":0},"steps":[[[1,0.2]]],"label":{"correct":true,"predicted":"","reference":""},"output_text":null}"#;
    match parse_traces(bad.as_bytes(), ParseOptions::default()) {
        Ok(_) => println!("unexpectedly accepted"),
        Err(e) => println!("rejected: {}", e.to_json()),
    }
    Ok(())
}
