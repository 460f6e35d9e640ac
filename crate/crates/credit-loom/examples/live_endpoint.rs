//! Run one debate round against a live OpenAI-compatible endpoint.
//!
//! Point CREDIT_LOOM_BASE_URL at any /chat/completions server (vLLM,
//! llama.cpp, Ollama's compatibility layer, ...), optionally set
//! CREDIT_LOOM_MODEL and CREDIT_LOOM_API_KEY, then:
//!
//!   cargo run --example live_endpoint
//!
//! Without CREDIT_LOOM_BASE_URL the example explains itself and exits.

use credit_loom::datastore::{OptionTexts, TaskInstance};
use credit_loom::gateway::{Gateway, HttpClient};
use credit_loom::protocol::{run_round, DecodingSettings, PromptSet, SharedState, SystemTopology};
use credit_loom::{extract_answer, OptionLabel};

fn main() -> credit_loom::Result<()> {
    let Ok(base_url) = std::env::var("CREDIT_LOOM_BASE_URL") else {
        println!("set CREDIT_LOOM_BASE_URL (e.g. http://localhost:8000/v1) to run this example;");
        println!("CREDIT_LOOM_MODEL selects the model name, CREDIT_LOOM_API_KEY the bearer token.");
        return Ok(());
    };
    let model = std::env::var("CREDIT_LOOM_MODEL").unwrap_or_else(|_| "default-model".to_string());

    let topology = SystemTopology::new(vec!["planner".into(), "skeptic".into()], 1)?;
    let prompts = PromptSet::defaults(&topology);
    let instance = TaskInstance {
        instance_id: "live-1".into(),
        question: "Which planet is known as the Red Planet?".into(),
        options: OptionTexts::new("Venus", "Mars", "Jupiter", "Mercury"),
        gold: OptionLabel::B,
        category: None,
    };

    let gateway = Gateway::live(HttpClient::new(&base_url, &model))
        .with_retries(2, std::time::Duration::from_millis(250));
    let transcript = run_round(
        &topology,
        &instance,
        &SharedState::initial(),
        1,
        &prompts,
        &gateway,
        &DecodingSettings::default(),
    )?;

    println!("question: {}", instance.question);
    for utterance in &transcript.utterances {
        println!("\n[{}]\n{}", utterance.role_id, utterance.text);
        println!("-> extracted answer: {}", extract_answer(&utterance.text));
    }
    let stats = gateway.stats();
    println!(
        "\n{} completions served over {} network calls",
        stats.served, stats.backend_calls
    );
    Ok(())
}
