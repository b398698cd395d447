//! Deterministic toy benchmark shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use gramscore::formats::{write_jsonl, QuestionRecord, ResponseRecord};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CANDIDATES_PER_QUESTION: usize = 40;

pub struct ToyQuestion {
    pub id: &'static str,
    pub subject: &'static str,
    pub words: &'static [&'static str],
    pub rules: &'static str,
}

pub const QUESTIONS: [ToyQuestion; 3] = [
    ToyQuestion {
        id: "q1",
        subject: "physics",
        words: &[
            "超伝導は",
            "低い温度で",
            "電気抵抗が",
            "ゼロになる",
            "現象である。",
            "外部の磁場を",
            "排除する",
            "効果も知られる。",
        ],
        rules: "\"温度\"\n2\tANY(\"抵抗\", \"ゼロ\")\nALL(\"磁場\", NOT(\"熱\"))\n",
    },
    ToyQuestion {
        id: "q2",
        subject: "physics",
        words: &[
            "光というものは",
            "粒子としての",
            "波としての",
            "二つの性質を",
            "あわせ持ち、",
            "干渉の現象や",
            "回折の現象を",
            "はっきり示す。",
        ],
        rules: "\"波\"\n\"粒子\"\nANY(\"干渉\", \"回折\")\n",
    },
    ToyQuestion {
        id: "q3",
        subject: "history",
        words: &[
            "江戸幕府は",
            "徳川家康が",
            "江戸に開いた",
            "武家政権で、",
            "約二百六十年",
            "長く続いた。",
            "鎖国の政策や",
            "参勤交代が",
            "行われた。",
        ],
        rules: "\"徳川\"\n3\tALL(\"江戸\", \"幕府\")\n\"鎖国\"\n",
    },
];

/// Words drawn from `words` until the text reaches `target` characters.
pub fn compose(words: &[&str], target: usize, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::new();
    while out.chars().count() < target {
        out.push_str(words[rng.random_range(0..words.len())]);
    }
    out
}

pub struct ToyPaths {
    pub questions: PathBuf,
    pub candidates: PathBuf,
    pub drop_rules: PathBuf,
    pub rules: PathBuf,
    pub responses: PathBuf,
}

fn record(question_id: &str, model: &str, text: String) -> ResponseRecord {
    ResponseRecord {
        question_id: question_id.into(),
        model: model.into(),
        text,
        temperature: None,
        trial: None,
    }
}

/// Writes questions, candidates, drop rules, helpfulness rules and a
/// response file for three models (`alpha` on topic, `noise` random
/// characters, `silent` empty answers) under `dir`.
pub fn write_toy(dir: &Path) -> ToyPaths {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_901);
    let paths = ToyPaths {
        questions: dir.join("questions.jsonl"),
        candidates: dir.join("candidates.jsonl"),
        drop_rules: dir.join("drop"),
        rules: dir.join("rules"),
        responses: dir.join("responses.jsonl"),
    };
    std::fs::create_dir_all(&paths.drop_rules).unwrap();
    std::fs::create_dir_all(&paths.rules).unwrap();

    let questions: Vec<QuestionRecord> = QUESTIONS
        .iter()
        .map(|q| QuestionRecord {
            question_id: q.id.into(),
            subject: q.subject.into(),
            question: format!("{}について説明せよ。", q.words[0]),
            sample_answer: q.words.concat(),
        })
        .collect();
    write_jsonl(&paths.questions, &questions).unwrap();

    let mut candidates = Vec::new();
    for q in &QUESTIONS {
        for i in 0..CANDIDATES_PER_QUESTION {
            let target = rng.random_range(70..=130);
            let mut text = compose(q.words, target, &mut rng);
            if i == 0 {
                text.push_str("時計は関係ない。");
            }
            candidates.push(record(q.id, &format!("gen-{}", i % 4), text));
        }
        std::fs::write(paths.rules.join(format!("{}.rules", q.id)), q.rules).unwrap();
    }
    write_jsonl(&paths.candidates, &candidates).unwrap();
    std::fs::write(
        paths.drop_rules.join("q1.drop"),
        "# clock answers are off topic\n\"時計\"\n",
    )
    .unwrap();

    let mut responses = Vec::new();
    for q in &QUESTIONS {
        for _ in 0..3 {
            let target = rng.random_range(90..=110);
            responses.push(record(q.id, "alpha", compose(q.words, target, &mut rng)));
            let noise: String = (0..rng.random_range(20..=120))
                .map(|_| char::from(b'a' + rng.random_range(0..26u8)))
                .collect();
            responses.push(record(q.id, "noise", noise));
            responses.push(record(q.id, "silent", String::new()));
        }
    }
    write_jsonl(&paths.responses, &responses).unwrap();
    paths
}
