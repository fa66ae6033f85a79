//! Synthetic conversations shared by the integration tests.
#![allow(dead_code)]

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use agentmem::benchkit::{BenchSample, Session, Turn};

const NOUNS: [&str; 48] = [
    "violin", "harbor", "glacier", "pottery", "falcon", "meadow", "lantern", "canyon", "orchid", "tractor",
    "saffron", "compass", "quartz", "bakery", "kayak", "tundra", "mosaic", "juniper", "anchor", "pyramid",
    "walnut", "comet", "ferry", "tapestry", "cactus", "pelican", "marble", "volcano", "sonnet", "bicycle",
    "lagoon", "cinnamon", "telescope", "origami", "bamboo", "cathedral", "hammock", "avalanche", "tulip",
    "chess", "waffle", "sailboat", "prairie", "fountain", "raccoon", "muffin", "trumpet", "lighthouse",
];

const ANSWERS: [&str; 10] =
    ["tangerine", "obsidian", "marigold", "sapphire", "cobalt", "emerald", "vermilion", "turquoise", "amber", "ivory"];

pub const NEEDLE_QUESTION: &str = "What is my gym locker code?";

pub struct NeedleConversation {
    pub sample: BenchSample,
    pub answer: String,
    pub evidence_session: usize,
    /// Text of the planted message.
    pub needle_text: String,
}

fn distractor_session(rng: &mut ChaCha8Rng) -> [String; 4] {
    let mut words = NOUNS.to_vec();
    words.shuffle(rng);
    let (a, b, c) = (words[0], words[1], words[2]);
    [
        format!("Thinking about the {a}, the {b} and the {c}."),
        format!("The {a}, the {b} and the {c} sound fun."),
        format!("The {c} goes with the {a} and the {b}."),
        format!("So {a}, {b} and {c} it is."),
    ]
}

fn needle_session(answer: &str) -> [String; 4] {
    [
        format!("My gym locker code is {answer}."),
        format!("Got it, your gym locker code is {answer}."),
        "The gym locker sits near the pool.".to_string(),
        "A gym locker near the pool is handy.".to_string(),
    ]
}

pub fn base_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 9, 0, 0).unwrap()
}

/// Conversation `j` of the needle corpus: `sessions` sessions of two turn
/// pairs each, one of which plants a fact. Distractor sessions never use the
/// needle's words.
pub fn needle_conversation(j: usize, sessions: usize, seed: u64) -> NeedleConversation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (j as u64).wrapping_mul(0x9e37_79b9));
    let answer = format!("{}{}", ANSWERS[j % ANSWERS.len()], j);
    // keep the evidence out of the last five sessions so it has left short-term
    let evidence_session = (j * 7) % (sessions.saturating_sub(5).max(1));
    let sessions_vec = (0..sessions)
        .map(|s| {
            let lines = if s == evidence_session { needle_session(&answer) } else { distractor_session(&mut rng) };
            Session {
                session_id: format!("c{j}-s{s}"),
                timestamp: base_time() + Duration::hours(s as i64 * 6),
                turns: lines
                    .iter()
                    .enumerate()
                    .map(|(i, t)| Turn { speaker: if i % 2 == 0 { "user".into() } else { "assistant".into() }, text: t.clone() })
                    .collect(),
            }
        })
        .collect();
    NeedleConversation {
        needle_text: needle_session(&answer)[0].clone(),
        sample: BenchSample {
            sample_id: format!("needle-{j}"),
            sessions: sessions_vec,
            question: NEEDLE_QUESTION.to_string(),
            gold_answer: answer.clone(),
            category: "single-hop".into(),
            evidence_session_ids: [format!("c{j}-s{evidence_session}")].into_iter().collect(),
        },
        answer,
        evidence_session,
    }
}

/// Random chatter for stress ingestion.
pub fn random_line(rng: &mut ChaCha8Rng) -> String {
    use rand::Rng;
    let n = rng.gen_range(1..12);
    (0..n).map(|_| *NOUNS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}
