//! Drive the simulated user with a scripted mock model: it answers a
//! clarifying question, then judges a system response, and the rule
//! classifier labels the feedback polarity.
//!
//! Run with: cargo run --example simulate_user

use std::sync::Arc;

use convsearch::client::MockClient;
use convsearch::model::{
    ConversationState, Discourse, InformationNeed, Move, SystemUtterance, Utterance,
};
use convsearch::simulate::{should_continue, Simulator};

fn main() -> convsearch::Result<()> {
    // In production the simulator calls a completion endpoint; the mock
    // replays a fixed script, which keeps every run byte-identical.
    let client = Arc::new(MockClient::new([
        "Yes, I mean the efficiency of rooftop panels.",
        "That's not what I asked for, what about heat?",
        "Thank you, that was helpful.",
    ]));
    let simulator = Simulator::new(client);

    let in_need = InformationNeed {
        conversation_id: "c1".into(),
        turn: 1,
        description: "How does extreme heat change the efficiency of a solar panel?".into(),
    };
    let mut state = ConversationState::new("c1", 2);
    state.append_move(Move::User(Utterance::new(
        Discourse::Query,
        "solar panel efficiency",
        1,
    )))?;

    // Answering a clarifying question does not consume patience.
    let cq = SystemUtterance::clarifying_question("Are you interested in solar or wind?", 1);
    state.append_move(Move::System(cq.clone()))?;
    let answer = simulator.answer_clarifying(&in_need, &cq, &state)?;
    state.append_move(Move::User(answer.clone()))?;
    println!("clarifying answer: {}", answer.text);
    println!("patience after answer: {}\n", state.patience);

    // Feedback consumes patience and is classified by the rule cascade.
    let response = SystemUtterance::response(
        "Solar panel efficiency has improved steadily.",
        1,
        vec!["p01".into()],
    );
    state.append_move(Move::System(response.clone()))?;
    for _ in 0..2 {
        let (feedback, label) = simulator.give_feedback(&in_need, &response, &state)?;
        state.append_move(Move::User(feedback.clone()))?;
        println!("feedback:  {}", feedback.text);
        println!("label:     {label:?}");
        println!("patience:  {}", state.patience);
        println!("continue:  {}\n", should_continue(&state, &label, true));
    }

    println!("transcript:\n{}", state.serialize_transcript());
    Ok(())
}
