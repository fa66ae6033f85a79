//! Benchmark samples and dataset adapters.
//!
//! The canonical form is a JSON array of [`BenchSample`]. Adapters read the
//! public LongMemEval (`longmemeval_*.json`) and LoCoMo (`locomo10.json`)
//! release layouts.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::BenchError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSample {
    pub sample_id: String,
    pub sessions: Vec<Session>,
    pub question: String,
    #[serde(rename = "answer")]
    pub gold_answer: String,
    pub category: String,
    pub evidence_session_ids: BTreeSet<String>,
}

impl BenchSample {
    pub fn validate(&self) -> Result<(), BenchError> {
        let err = |field: &str, message: String| BenchError::Schema {
            sample: self.sample_id.clone(),
            field: field.to_string(),
            message,
        };
        if self.sample_id.is_empty() {
            return Err(err("sample_id", "empty".into()));
        }
        if self.question.trim().is_empty() {
            return Err(err("question", "empty".into()));
        }
        let mut ids = HashSet::new();
        for s in &self.sessions {
            if !ids.insert(s.session_id.as_str()) {
                return Err(err("sessions.session_id", format!("duplicate session `{}`", s.session_id)));
            }
        }
        if let Some(missing) = self.evidence_session_ids.iter().find(|e| !ids.contains(e.as_str())) {
            return Err(err("evidence_session_ids", format!("`{missing}` is not among the sessions")));
        }
        Ok(())
    }

    pub fn session_ids(&self) -> Vec<&str> {
        self.sessions.iter().map(|s| s.session_id.as_str()).collect()
    }

    pub fn turn_count(&self) -> usize {
        self.sessions.iter().map(|s| s.turns.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Canonical,
    LongMemEval,
    Locomo,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "canonical" => Ok(Self::Canonical),
            "longmemeval" => Ok(Self::LongMemEval),
            "locomo" => Ok(Self::Locomo),
            other => Err(format!("unknown dataset format `{other}` (canonical, longmemeval, locomo)")),
        }
    }
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Vec<BenchSample>, BenchError> {
    let raw = std::fs::read_to_string(path)?;
    parse_dataset(&raw, format)
}

pub fn parse_dataset(raw: &str, format: DatasetFormat) -> Result<Vec<BenchSample>, BenchError> {
    let samples = match format {
        DatasetFormat::Canonical => serde_json::from_str::<Vec<BenchSample>>(raw).map_err(|e| BenchError::Parse(e.to_string()))?,
        DatasetFormat::LongMemEval => from_longmemeval(&parse_value(raw)?)?,
        DatasetFormat::Locomo => from_locomo(&parse_value(raw)?)?,
    };
    for s in &samples {
        s.validate()?;
    }
    Ok(samples)
}

pub fn write_canonical(path: &Path, samples: &[BenchSample]) -> Result<(), BenchError> {
    let body = serde_json::to_string_pretty(samples).map_err(|e| BenchError::Parse(e.to_string()))?;
    std::fs::write(path, body + "\n")?;
    Ok(())
}

fn parse_value(raw: &str) -> Result<Value, BenchError> {
    serde_json::from_str(raw).map_err(|e| BenchError::Parse(e.to_string()))
}

fn schema(sample: &str, field: &str, message: impl Into<String>) -> BenchError {
    BenchError::Schema { sample: sample.to_string(), field: field.to_string(), message: message.into() }
}

fn field<'a>(obj: &'a Value, sample: &str, name: &str) -> Result<&'a Value, BenchError> {
    obj.get(name).ok_or_else(|| schema(sample, name, "missing"))
}

fn str_field(obj: &Value, sample: &str, name: &str) -> Result<String, BenchError> {
    match field(obj, sample, name)? {
        Value::String(s) => Ok(s.clone()),
        other => Err(schema(sample, name, format!("expected a string, found {other}"))),
    }
}

/// Answers are sometimes numbers in the releases.
fn answer_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Null => String::new(),
        other => other.to_string(),
    }
}

const LME_DATE: &str = "%Y/%m/%d (%a) %H:%M";

fn parse_lme_date(s: &str) -> Option<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s.trim(), LME_DATE).ok().map(|n| n.and_utc())
}

/// LongMemEval: one object per question with a `haystack_sessions` history.
pub fn from_longmemeval(v: &Value) -> Result<Vec<BenchSample>, BenchError> {
    let items = v.as_array().ok_or_else(|| schema("", "(root)", "expected an array of questions"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let id = item.get("question_id").and_then(Value::as_str).map(str::to_string).unwrap_or_else(|| format!("#{i}"));
            let ids = field(item, &id, "haystack_session_ids")?
                .as_array()
                .ok_or_else(|| schema(&id, "haystack_session_ids", "expected an array"))?;
            let dates = field(item, &id, "haystack_dates")?
                .as_array()
                .ok_or_else(|| schema(&id, "haystack_dates", "expected an array"))?;
            let sessions = field(item, &id, "haystack_sessions")?
                .as_array()
                .ok_or_else(|| schema(&id, "haystack_sessions", "expected an array"))?;
            if ids.len() != sessions.len() || dates.len() != sessions.len() {
                return Err(schema(&id, "haystack_sessions", "length differs from haystack_session_ids/haystack_dates"));
            }
            let mut out = Vec::with_capacity(sessions.len());
            for ((sid, date), turns) in ids.iter().zip(dates).zip(sessions) {
                let session_id = sid.as_str().ok_or_else(|| schema(&id, "haystack_session_ids", "expected strings"))?;
                let timestamp = date
                    .as_str()
                    .and_then(parse_lme_date)
                    .ok_or_else(|| schema(&id, "haystack_dates", format!("unparseable date {date}")))?;
                let turns = turns
                    .as_array()
                    .ok_or_else(|| schema(&id, "haystack_sessions", "expected arrays of turns"))?
                    .iter()
                    .map(|t| {
                        Ok(Turn {
                            speaker: str_field(t, &id, "role")?,
                            text: str_field(t, &id, "content")?,
                        })
                    })
                    .collect::<Result<Vec<_>, BenchError>>()?;
                out.push(Session { session_id: session_id.to_string(), timestamp, turns });
            }
            let evidence = field(item, &id, "answer_session_ids")?
                .as_array()
                .ok_or_else(|| schema(&id, "answer_session_ids", "expected an array"))?
                .iter()
                .map(|e| e.as_str().map(str::to_string).ok_or_else(|| schema(&id, "answer_session_ids", "expected strings")))
                .collect::<Result<BTreeSet<_>, _>>()?;
            Ok(BenchSample {
                sample_id: id.clone(),
                sessions: out,
                question: str_field(item, &id, "question")?,
                gold_answer: answer_text(field(item, &id, "answer")?),
                category: str_field(item, &id, "question_type")?,
                evidence_session_ids: evidence,
            })
        })
        .collect()
}

/// Inverse of [`from_longmemeval`] for the fields it reads.
pub fn to_longmemeval(samples: &[BenchSample]) -> Value {
    Value::Array(
        samples
            .iter()
            .map(|s| {
                serde_json::json!({
                    "question_id": s.sample_id,
                    "question_type": s.category,
                    "question": s.question,
                    "answer": s.gold_answer,
                    "haystack_session_ids": s.sessions.iter().map(|x| &x.session_id).collect::<Vec<_>>(),
                    "haystack_dates": s.sessions.iter().map(|x| x.timestamp.format(LME_DATE).to_string()).collect::<Vec<_>>(),
                    "haystack_sessions": s.sessions.iter().map(|x| {
                        x.turns.iter().map(|t| serde_json::json!({"role": t.speaker, "content": t.text})).collect::<Vec<_>>()
                    }).collect::<Vec<_>>(),
                    "answer_session_ids": s.evidence_session_ids,
                })
            })
            .collect(),
    )
}

/// LoCoMo question categories as numbered in the release.
pub fn locomo_category(n: i64) -> String {
    match n {
        1 => "multi-hop".into(),
        2 => "temporal".into(),
        3 => "open-domain".into(),
        4 => "single-hop".into(),
        5 => "adversarial".into(),
        other => format!("category-{other}"),
    }
}

fn parse_locomo_date(s: &str) -> Option<DateTime<Utc>> {
    // e.g. "1:56 pm on 8 May, 2023"
    let norm = s.trim().replace(" am ", " AM ").replace(" pm ", " PM ");
    NaiveDateTime::parse_from_str(&norm, "%l:%M %p on %e %B, %Y")
        .or_else(|_| NaiveDateTime::parse_from_str(&norm, "%I:%M %p on %d %B, %Y"))
        .ok()
        .map(|n| n.and_utc())
}

/// LoCoMo: one conversation with many QA pairs; each QA becomes a sample
/// sharing the conversation's sessions. Evidence ids `D<n>:<turn>` map to
/// `session_<n>`.
pub fn from_locomo(v: &Value) -> Result<Vec<BenchSample>, BenchError> {
    let convs = v.as_array().ok_or_else(|| schema("", "(root)", "expected an array of conversations"))?;
    let mut out = Vec::new();
    for (ci, conv) in convs.iter().enumerate() {
        let cid = conv.get("sample_id").and_then(Value::as_str).map(str::to_string).unwrap_or_else(|| format!("conv-{ci}"));
        let body = field(conv, &cid, "conversation")?
            .as_object()
            .ok_or_else(|| schema(&cid, "conversation", "expected an object"))?;
        let mut numbered: Vec<(u32, &str)> = body
            .keys()
            .filter_map(|k| k.strip_prefix("session_").and_then(|n| n.parse::<u32>().ok()).map(|n| (n, k.as_str())))
            .collect();
        numbered.sort();
        let mut sessions = Vec::new();
        for (n, key) in numbered {
            let date_key = format!("{key}_date_time");
            let date = body
                .get(&date_key)
                .and_then(Value::as_str)
                .ok_or_else(|| schema(&cid, &date_key, "missing"))?;
            let timestamp = parse_locomo_date(date).ok_or_else(|| schema(&cid, &date_key, format!("unparseable date `{date}`")))?;
            let turns = body[key]
                .as_array()
                .ok_or_else(|| schema(&cid, key, "expected an array of turns"))?
                .iter()
                .map(|t| Ok(Turn { speaker: str_field(t, &cid, "speaker")?, text: str_field(t, &cid, "text")? }))
                .collect::<Result<Vec<_>, BenchError>>()?;
            sessions.push(Session { session_id: format!("session_{n}"), timestamp, turns });
        }
        let qa = field(conv, &cid, "qa")?.as_array().ok_or_else(|| schema(&cid, "qa", "expected an array"))?;
        for (qi, q) in qa.iter().enumerate() {
            let sid = format!("{cid}#q{qi}");
            let gold = q.get("answer").or_else(|| q.get("adversarial_answer")).map(answer_text).unwrap_or_default();
            let evidence = q
                .get("evidence")
                .and_then(Value::as_array)
                .map(|ev| {
                    ev.iter()
                        .filter_map(Value::as_str)
                        .filter_map(|d| d.trim().strip_prefix('D').and_then(|r| r.split(':').next()).map(|n| format!("session_{n}")))
                        .collect::<BTreeSet<_>>()
                })
                .unwrap_or_default();
            out.push(BenchSample {
                sample_id: sid.clone(),
                sessions: sessions.clone(),
                question: str_field(q, &sid, "question")?,
                gold_answer: gold,
                category: locomo_category(q.get("category").and_then(Value::as_i64).unwrap_or(0)),
                evidence_session_ids: evidence,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    pub(crate) fn sample(id: &str, n: usize, evidence: &[usize]) -> BenchSample {
        BenchSample {
            sample_id: id.into(),
            sessions: (0..n)
                .map(|i| Session {
                    session_id: format!("{id}-s{i}"),
                    timestamp: Utc.with_ymd_and_hms(2023, 5, 1 + i as u32 % 28, 10, 30, 0).unwrap(),
                    turns: vec![
                        Turn { speaker: "user".into(), text: format!("session {i} question") },
                        Turn { speaker: "assistant".into(), text: format!("session {i} reply") },
                    ],
                })
                .collect(),
            question: "what?".into(),
            gold_answer: "that".into(),
            category: "single-session-user".into(),
            evidence_session_ids: evidence.iter().map(|i| format!("{id}-s{i}")).collect(),
        }
    }

    #[test]
    fn canonical_order_preserved() {
        let raw = serde_json::to_string(&vec![sample("a", 2, &[0]), sample("b", 3, &[2])]).unwrap();
        let got = parse_dataset(&raw, DatasetFormat::Canonical).unwrap();
        assert_eq!(got.iter().map(|s| s.sample_id.as_str()).collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn dangling_evidence_names_the_field() {
        let mut s = sample("a", 2, &[0]);
        s.evidence_session_ids.insert("nope".into());
        let raw = serde_json::to_string(&vec![s]).unwrap();
        match parse_dataset(&raw, DatasetFormat::Canonical) {
            Err(BenchError::Schema { field, .. }) => assert_eq!(field, "evidence_session_ids"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn longmemeval_roundtrip() {
        let samples = vec![sample("q1", 4, &[2]), sample("q2", 3, &[0])];
        let native = to_longmemeval(&samples);
        let back = from_longmemeval(&native).unwrap();
        assert_eq!(back, samples);
        assert_eq!(native[0]["haystack_dates"][0], "2023/05/01 (Mon) 10:30");
    }

    #[test]
    fn longmemeval_missing_field() {
        let mut native = to_longmemeval(&[sample("q1", 2, &[0])]);
        native[0].as_object_mut().unwrap().remove("question_type");
        match from_longmemeval(&native) {
            Err(BenchError::Schema { field, sample, .. }) => {
                assert_eq!(field, "question_type");
                assert_eq!(sample, "q1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn locomo_layout() {
        let raw = serde_json::json!([{
            "sample_id": "conv-26",
            "conversation": {
                "speaker_a": "Caroline",
                "speaker_b": "Melanie",
                "session_1_date_time": "1:56 pm on 8 May, 2023",
                "session_1": [{"speaker": "Caroline", "dia_id": "D1:1", "text": "Hey Mel!"}],
                "session_2_date_time": "10:37 am on 27 June, 2023",
                "session_2": [{"speaker": "Melanie", "dia_id": "D2:1", "text": "I went camping."}]
            },
            "qa": [
                {"question": "Where did Melanie go?", "answer": "camping", "evidence": ["D2:1"], "category": 4},
                {"question": "When?", "answer": 2023, "evidence": ["D2:1"], "category": 2}
            ]
        }]);
        let got = from_locomo(&raw).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].sessions[0].timestamp, Utc.with_ymd_and_hms(2023, 5, 8, 13, 56, 0).unwrap());
        assert_eq!(got[0].sessions[1].timestamp, Utc.with_ymd_and_hms(2023, 6, 27, 10, 37, 0).unwrap());
        assert_eq!(got[0].category, "single-hop");
        assert_eq!(got[1].gold_answer, "2023");
        assert_eq!(got[0].evidence_session_ids, BTreeSet::from(["session_2".to_string()]));
    }
}
