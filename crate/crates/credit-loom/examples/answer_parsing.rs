//! The deterministic answer-extraction rule on tricky inputs: first
//! standalone A/B/C/D token wins, anything else is Invalid and scores 0.
//!
//! Run with: cargo run --example answer_parsing

use credit_loom::{extract_answer, score_exact, OptionLabel};

fn main() {
    let cases = [
        "The answer is B.",
        "Both A and C tempt me, but C is right",
        "ABCD are the options; answer: D",
        "no letter here",
        "(C) because the derivative vanishes",
        "I'd grade this a B+ effort, final answer: A",
        "CAB drivers know the fastest route is D",
        "A",
    ];
    println!("{:<55} extracted", "text");
    for text in cases {
        println!("{:<55} {}", format!("{text:?}"), extract_answer(text));
    }

    let gold = OptionLabel::B;
    println!("\nscoring against gold {gold}:");
    for pred in [OptionLabel::B, OptionLabel::C, OptionLabel::Invalid] {
        println!(
            "  predicted {:<8} -> {}",
            pred.to_string(),
            score_exact(pred, gold).unwrap()
        );
    }
}
