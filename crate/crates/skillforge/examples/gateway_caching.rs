//! The completion gateway: deterministic response caching, sample-level
//! cache keys, and client-side rate limiting.
//!
//! ```sh
//! cargo run -p skillforge --example gateway_caching
//! ```
//!
//! Every sample of every request is cached on disk under a content hash of
//! the full request (model, messages, decode parameters) plus the sample
//! index. Re-running a pipeline with the same prompts costs zero backend
//! calls — which is also what makes reruns reproducible, token-cheap, and
//! resumable after a crash.

use std::sync::Arc;

use skillforge::gateway::{
    cache_key, ChatMessage, CompletionRequest, FakeClock, Gateway, MatchMode, ScriptEntry,
    ScriptMatcher, ScriptedBackend, TokenBucket,
};

fn backend() -> Result<ScriptedBackend, String> {
    ScriptedBackend::new(vec![ScriptEntry {
        matcher: ScriptMatcher {
            mode: MatchMode::Contains,
            text: "capital of France".into(),
        },
        responses: vec!["Paris.".into(), "It is Paris.".into()],
    }])
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cache_dir = tempfile::tempdir()?;

    let request = CompletionRequest {
        model: "demo".into(),
        messages: vec![ChatMessage::user("What is the capital of France?")],
        temperature: 0.7,
        max_output_tokens: 64,
        n_samples: 2,
    };

    // Cold gateway: both samples come from the backend and land in the cache.
    let gateway = Gateway::builder(Arc::new(backend()?))
        .cache_dir(cache_dir.path())
        .build()?;
    let response = gateway.complete(&request)?;
    println!(
        "cold run:  samples {:?}, provenance {:?}, backend calls {}",
        response.samples,
        response.provenance,
        gateway.transport_calls()
    );

    // Fresh gateway, same cache directory: everything is served from disk.
    let gateway = Gateway::builder(Arc::new(backend()?))
        .cache_dir(cache_dir.path())
        .build()?;
    let response = gateway.complete(&request)?;
    println!(
        "warm run:  samples {:?}, provenance {:?}, backend calls {}",
        response.samples,
        response.provenance,
        gateway.transport_calls()
    );

    // Interrupted runs resume at sample granularity: cache writes are
    // atomic, so a crash leaves whole per-sample entries behind. Simulate
    // one by evicting a single sample file — the survivor still hits and
    // only the missing sample is re-fetched.
    std::fs::remove_file(
        cache_dir
            .path()
            .join(format!("{}.json", cache_key(&request, 0))),
    )?;
    let gateway = Gateway::builder(Arc::new(backend()?))
        .cache_dir(cache_dir.path())
        .build()?;
    let response = gateway.complete(&request)?;
    println!(
        "partial:   samples {:?}, provenance {:?}, backend calls {}",
        response.samples,
        response.provenance,
        gateway.transport_calls()
    );

    // A different sample count is a different decode — n_samples is hashed
    // into the key — so widening the request re-fetches all three samples...
    let gateway = Gateway::builder(Arc::new(backend()?))
        .cache_dir(cache_dir.path())
        .build()?;
    let mut widened = request.clone();
    widened.n_samples = 3;
    let response = gateway.complete(&widened)?;
    println!(
        "widened:   {} samples, provenance {:?}, backend calls {}",
        response.samples.len(),
        response.provenance,
        gateway.transport_calls()
    );

    // ...and re-running the widened request is then free.
    let gateway = Gateway::builder(Arc::new(backend()?))
        .cache_dir(cache_dir.path())
        .build()?;
    let response = gateway.complete(&widened)?;
    println!(
        "rerun:     {} samples, provenance {:?}, backend calls {}",
        response.samples.len(),
        response.provenance,
        gateway.transport_calls()
    );

    // Client-side rate limiting, driven by a fake clock so the example does
    // not actually sleep: at 2 requests per minute, tokens replenish every
    // 30 simulated seconds.
    let clock = FakeClock::default();
    let bucket = TokenBucket::new(2, &clock);
    for i in 1..=3 {
        bucket.acquire(&clock);
        println!(
            "rate limit: request {i} admitted at t={:?} on the fake clock",
            clock.elapsed()
        );
    }

    Ok(())
}
