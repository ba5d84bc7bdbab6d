//! Benchmark cases: scripted turns plus routing, execution and response
//! ground truth, and the generator behind the bundled corpus.
//!
//! Case families (200 cases): chat, single tool, domain agent,
//! cross-domain (two tools in one request), long-horizon (more than eight
//! turns) and ambiguous (a vague search answered on a clarification).
//! Every label is keyword-separable, so the rule classifier can reach them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use dualtrack_core::augmentation::ToolDescriptor;
use dualtrack_core::router::Mode;
use dualtrack_core::text::tokenize;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const LONG_HORIZON_MIN_TURNS: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedTurn {
    pub text: String,
    /// The turn answers a clarification asked by an earlier turn's task.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clarification_answer: bool,
}

impl ScriptedTurn {
    pub fn say(text: impl Into<String>) -> Self {
        Self { text: text.into(), clarification_answer: false }
    }

    pub fn answer(text: impl Into<String>) -> Self {
        Self { text: text.into(), clarification_answer: true }
    }
}

/// One tool invocation; argument values are plain strings.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
}

impl ToolCall {
    pub fn new(tool: &str, args: &[(&str, &str)]) -> Self {
        Self { tool: tool.into(), args: args.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }

    /// Key-sorted, with every value reduced to lowercased alphanumeric tokens.
    pub fn canonical(&self) -> ToolCall {
        ToolCall {
            tool: self.tool.clone(),
            args: self.args.iter().map(|(k, v)| (k.clone(), canonical_value(v))).collect(),
        }
    }
}

pub fn canonical_value(v: &str) -> String {
    tokenize(v).join(" ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseTags {
    #[serde(default)]
    pub unambiguous: bool,
    #[serde(default)]
    pub long_horizon: bool,
    #[serde(default)]
    pub cross_domain: bool,
    #[serde(default)]
    pub ambiguous: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkCase {
    pub case_id: String,
    /// User profile loaded into memory before the first turn.
    #[serde(default)]
    pub profile: BTreeMap<String, String>,
    pub turns: Vec<ScriptedTurn>,
    /// Expected mode per turn.
    pub routing_gt: Vec<Mode>,
    /// Acceptable sets of calls over the whole case; empty for chat-only
    /// cases.
    #[serde(default)]
    pub execution_gt: Vec<Vec<ToolCall>>,
    /// Key information points the case's deliverables must convey.
    #[serde(default)]
    pub response_gt: Vec<String>,
    pub tags: CaseTags,
}

impl BenchmarkCase {
    /// Highest tier among the expected modes.
    pub fn tier(&self) -> u8 {
        self.routing_gt.iter().map(|m| m.tier()).max().unwrap_or(1)
    }
}

fn case_problems(case: &BenchmarkCase, catalog: &BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    let id = &case.case_id;
    if case.turns.is_empty() {
        out.push(format!("{id}: no turns"));
    }
    if case.routing_gt.len() != case.turns.len() {
        out.push(format!("{id}: {} routing labels for {} turns", case.routing_gt.len(), case.turns.len()));
    }
    for call in case.execution_gt.iter().flatten() {
        if !catalog.contains(&call.tool) {
            out.push(format!("{id}: ground-truth tool '{}' is not in the catalog", call.tool));
        }
    }
    if case.execution_gt.iter().any(Vec::is_empty) {
        out.push(format!("{id}: empty execution variant"));
    }
    if case.tags.long_horizon && case.turns.len() < LONG_HORIZON_MIN_TURNS {
        out.push(format!("{id}: long-horizon case has only {} turns", case.turns.len()));
    }
    if case.tags.cross_domain {
        let distinct = |v: &Vec<ToolCall>| v.iter().map(|c| c.tool.as_str()).collect::<BTreeSet<_>>().len();
        if !case.execution_gt.iter().any(|v| distinct(v) >= 2) {
            out.push(format!("{id}: cross-domain case names fewer than two tools"));
        }
    }
    if case.tags.ambiguous && !case.turns.iter().any(|t| t.clarification_answer) {
        out.push(format!("{id}: ambiguous case has no clarification answer"));
    }
    if case.tags.ambiguous && case.tags.unambiguous {
        out.push(format!("{id}: tagged both ambiguous and unambiguous"));
    }
    out
}

/// Check every case against the catalog; lists all offending cases.
pub fn validate_corpus(cases: &[BenchmarkCase], catalog: &[ToolDescriptor]) -> Result<()> {
    let tools: BTreeSet<String> = catalog.iter().map(|d| d.tool_id.clone()).collect();
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for c in cases {
        if !seen.insert(c.case_id.as_str()) {
            problems.push(format!("{}: duplicate case id", c.case_id));
        }
        problems.extend(case_problems(c, &tools));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(HarnessError::Corpus(problems))
    }
}

pub fn load_corpus(path: &Path) -> Result<Vec<BenchmarkCase>> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn save_corpus(cases: &[BenchmarkCase], path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(cases)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

/// The bundled corpus, compiled in.
pub fn bundled_corpus() -> Vec<BenchmarkCase> {
    serde_json::from_str(include_str!("../data/corpus.json")).expect("bundled corpus parses")
}

// ---------------------------------------------------------------------------
// Generator

const CITIES: &[&str] = &[
    "Tokyo",
    "Kyoto",
    "Osaka",
    "Paris",
    "London",
    "Seoul",
    "Sydney",
    "Berlin",
    "Rome",
    "Bangkok",
    "Singapore",
    "Barcelona",
    "Toronto",
    "Shanghai",
    "Chengdu",
    "Hangzhou",
];
const DATES: &[&str] = &["tomorrow", "friday", "this weekend", "monday", "next week", "saturday"];
const COMPANIES: &[(&str, &str)] = &[
    ("Apple", "AAPL"),
    ("Tesla", "TSLA"),
    ("Baidu", "BIDU"),
    ("Google", "GOOGL"),
    ("Microsoft", "MSFT"),
    ("Amazon", "AMZN"),
    ("Nvidia", "NVDA"),
];
const HOBBIES: &[&str] = &["Basketball", "Hiking", "Jazz", "Painting", "Chess", "Cycling"];
const SUBJECTS: &[&str] =
    &["a sleepy cat", "a red lighthouse", "the night sky", "a mountain lake", "an old bicycle", "a bowl of ramen"];
const SONG_SUBJECTS: &[&str] = &["the ocean", "summer rain", "a quiet morning", "city lights", "old friends"];
const QUERIES: &[&str] = &[
    "sourdough bread",
    "quantum computing",
    "electric cars",
    "jazz history",
    "chess openings",
    "coffee brewing",
    "solar panels",
    "sleep habits",
];
const VIDEO_TOPICS: &[&str] = &[
    "cooking",
    "hiking",
    "guitar",
    "basketball",
    "chess",
    "painting",
    "yoga",
    "gardening",
    "coding",
    "skiing",
    "baking",
    "photography",
];
const CHAT_LINES: &[&str] = &[
    "Hello there",
    "How are you today",
    "I had a long day at work",
    "Tell me a joke",
    "What do you think about rainy days",
    "Thanks so much",
    "That sounds lovely",
    "I'm feeling a bit tired",
    "Good morning",
    "What should I cook tonight",
    "I just got back from the gym",
    "Do you like books",
    "My sister visited me today",
    "I can't decide what to watch tonight",
    "It was a pretty good day",
    "Tell me something interesting",
];

fn pick<T: Copy>(xs: &[T], i: usize) -> T {
    xs[i % xs.len()]
}

fn profile(i: usize) -> BTreeMap<String, String> {
    let mut p = BTreeMap::new();
    p.insert("City".to_string(), pick(CITIES, i + 3).to_string());
    p.insert("Hobby".to_string(), pick(HOBBIES, i).to_string());
    if i.is_multiple_of(2) {
        p.insert("Dislikes".to_string(), "Raw Fish".to_string());
    }
    p
}

/// One tool turn: utterance, call, and a key point its result must carry.
struct ToolTurn {
    text: String,
    call: ToolCall,
    point: String,
}

fn tool_turn(kind: usize, i: usize, home_city: &str) -> ToolTurn {
    match kind % 6 {
        0 => {
            let city = pick(CITIES, i);
            let date = pick(DATES, i);
            ToolTurn {
                text: format!("What's the weather in {city} {date}?"),
                call: ToolCall::new("weather", &[("city", city), ("date", date)]),
                point: format!("Weather in {city}"),
            }
        }
        1 => {
            let (name, sym) = pick(COMPANIES, i);
            ToolTurn {
                text: format!("How is {name} stock doing?"),
                call: ToolCall::new("stock_quote", &[("symbol", sym)]),
                point: sym.to_string(),
            }
        }
        2 => {
            let date = pick(DATES, i + 1);
            ToolTurn {
                text: format!("What's on my calendar {date}?"),
                call: ToolCall::new("calendar", &[("date", date)]),
                point: format!("on {date}"),
            }
        }
        3 => {
            let subject = pick(SUBJECTS, i);
            ToolTurn {
                text: format!("Draw a picture of {subject}"),
                call: ToolCall::new("image_gen", &[("prompt", subject)]),
                point: "Generated a image".to_string(),
            }
        }
        4 => {
            let subject = pick(SONG_SUBJECTS, i);
            ToolTurn {
                text: format!("Compose a song about {subject}"),
                call: ToolCall::new("music_gen", &[("prompt", subject)]),
                point: "Generated a music clip".to_string(),
            }
        }
        _ => {
            if i.is_multiple_of(2) {
                let query = pick(QUERIES, i);
                ToolTurn {
                    text: format!("Search for {query}"),
                    call: ToolCall::new("search", &[("query", query)]),
                    point: "Top result".to_string(),
                }
            } else {
                // City comes from the user's profile.
                let date = pick(DATES, i);
                ToolTurn {
                    text: format!("Will I need an umbrella? What's the forecast {date}"),
                    call: ToolCall::new("weather", &[("city", home_city), ("date", date)]),
                    point: format!("Weather in {home_city}"),
                }
            }
        }
    }
}

fn chat_case(n: usize) -> BenchmarkCase {
    let len = 1 + n % 3;
    let turns: Vec<ScriptedTurn> = (0..len).map(|k| ScriptedTurn::say(pick(CHAT_LINES, n * 3 + k))).collect();
    BenchmarkCase {
        case_id: format!("chat-{n:03}"),
        profile: profile(n),
        routing_gt: vec![Mode::Chat; turns.len()],
        turns,
        execution_gt: vec![],
        response_gt: vec![],
        tags: CaseTags { unambiguous: true, ..Default::default() },
    }
}

fn tool_case(n: usize) -> BenchmarkCase {
    let p = profile(n);
    let t = tool_turn(n, n / 6, &p["City"]);
    let mut variants = vec![vec![t.call.clone()]];
    if t.call.tool == "weather" {
        // The date is optional for a weather lookup.
        let mut no_date = t.call.clone();
        no_date.args.remove("date");
        variants.push(vec![no_date]);
    }
    BenchmarkCase {
        case_id: format!("tool-{n:03}"),
        profile: p,
        turns: vec![ScriptedTurn::say(t.text)],
        routing_gt: vec![Mode::Tool],
        execution_gt: variants,
        response_gt: vec![t.point],
        tags: CaseTags { unambiguous: true, ..Default::default() },
    }
}

fn trip_calls(dest: &str, origin: Option<&str>, date: Option<&str>, hobby: &str, hotel: Option<&str>) -> Vec<ToolCall> {
    let mut flight = ToolCall::new("flight_search", &[("dest", dest)]);
    if let Some(o) = origin {
        flight.args.insert("origin".into(), o.into());
    }
    if let Some(d) = date {
        flight.args.insert("date".into(), d.into());
    }
    let mut calls = vec![
        flight,
        ToolCall::new("activity_search", &[("dest", dest), ("interest", hobby)]),
        ToolCall::new("dining_search", &[("dest", dest)]),
    ];
    if let Some(h) = hotel {
        calls.push(ToolCall::new("hotel_book", &[("type", h)]));
    }
    calls
}

fn agent_case(n: usize) -> BenchmarkCase {
    let p = profile(n);
    let hobby = p["Hobby"].clone();
    let dislikes_raw_fish = p.contains_key("Dislikes");
    let (text, calls, points) = match n % 6 {
        0..=2 => {
            let dest = pick(CITIES, n / 2);
            let (text, origin, date, hotel) = match n % 3 {
                0 => (format!("Plan a trip to {dest}"), None, None, None),
                1 => {
                    let origin = pick(CITIES, n / 2 + 5);
                    let date = pick(DATES, n);
                    (format!("Plan a trip from {origin} to {dest} {date}"), Some(origin), Some(date), None)
                }
                _ => {
                    let (kw, ty) = pick(&[("onsen", "Onsen"), ("ryokan", "Ryokan"), ("hostel", "Hostel")], n);
                    (format!("Plan a trip to {dest} and book a {kw}"), None, None, Some(ty))
                }
            };
            let mut points = vec![format!("to {dest}"), format!("{hobby} game at {dest}")];
            if dest == "Tokyo" && dislikes_raw_fish {
                points.push("Wagyu Beef".into());
            }
            (text, trip_calls(dest, origin, date, &hobby, hotel), points)
        }
        3 => {
            let dest = pick(CITIES, n / 6);
            let text = format!("I need dining advice, recommend a restaurant with great cuisine in {dest}");
            let call = ToolCall::new("dining_search", &[("dest", dest)]);
            let point =
                if dest == "Tokyo" && dislikes_raw_fish { "Wagyu Beef".to_string() } else { "Top pick".to_string() };
            (text, vec![call], vec![point])
        }
        4 => {
            let text = pick(
                &[
                    "I have symptoms of a cold, should I see a doctor",
                    "What medical advice is there for flu symptoms",
                    "Should I consult a doctor about my sleep",
                ],
                n,
            );
            let call = ToolCall::new("search", &[("query", &canonical_value(text))]);
            (text.to_string(), vec![call], vec!["Top result".into()])
        }
        _ => {
            let text = pick(
                &[
                    "I need legal advice about tenant rights",
                    "Can a lawyer help with my rent contract",
                    "What legal rights does a tenant have",
                ],
                n,
            );
            let call = ToolCall::new("search", &[("query", &canonical_value(text))]);
            (text.to_string(), vec![call], vec!["Tenant rights".into()])
        }
    };
    BenchmarkCase {
        case_id: format!("agent-{n:03}"),
        profile: p,
        turns: vec![ScriptedTurn::say(text)],
        routing_gt: vec![Mode::Agent],
        execution_gt: vec![calls],
        response_gt: points,
        tags: CaseTags { unambiguous: true, ..Default::default() },
    }
}

fn cross_domain_case(n: usize) -> BenchmarkCase {
    let city = pick(CITIES, n + 2);
    let date = pick(DATES, n + 3);
    let (name, sym) = pick(COMPANIES, n);
    let subject = pick(SUBJECTS, n + 1);
    let song = pick(SONG_SUBJECTS, n);
    let weather = ToolCall::new("weather", &[("city", city), ("date", date)]);
    let calendar = ToolCall::new("calendar", &[("date", date)]);
    let stock = ToolCall::new("stock_quote", &[("symbol", sym)]);
    let (text, calls, points) = match n % 5 {
        0 => (
            format!("What's the weather in {city} {date} and what's on my calendar?"),
            vec![weather, calendar],
            vec![format!("Weather in {city}"), format!("on {date}")],
        ),
        1 => (
            format!("How is {name} stock doing and what's the weather in {city} {date}?"),
            vec![weather, stock],
            vec![format!("Weather in {city}"), sym.to_string()],
        ),
        2 => (
            format!("What's on my calendar {date}, and draw a picture of {subject}"),
            vec![calendar, ToolCall::new("image_gen", &[("prompt", subject)])],
            vec![format!("on {date}"), "Generated a image".into()],
        ),
        3 => (
            format!("Check {name} stock and compose a song about {song}"),
            vec![stock, ToolCall::new("music_gen", &[("prompt", song)])],
            vec![sym.to_string(), "Generated a music clip".into()],
        ),
        _ => (
            format!("What's the weather in {city} {date}, and draw a picture of {subject}"),
            vec![weather, ToolCall::new("image_gen", &[("prompt", subject)])],
            vec![format!("Weather in {city}"), "Generated a image".into()],
        ),
    };
    BenchmarkCase {
        case_id: format!("cross-{n:03}"),
        profile: profile(n),
        turns: vec![ScriptedTurn::say(text)],
        routing_gt: vec![Mode::Agent],
        execution_gt: vec![calls],
        response_gt: points,
        tags: CaseTags { unambiguous: true, cross_domain: true, ..Default::default() },
    }
}

fn long_horizon_case(n: usize) -> BenchmarkCase {
    let p = profile(n);
    let len = LONG_HORIZON_MIN_TURNS + n % 4;
    let mut turns = Vec::new();
    let mut routing = Vec::new();
    let mut calls: BTreeSet<ToolCall> = BTreeSet::new();
    let mut points = Vec::new();
    for k in 0..len {
        if k % 3 == 1 {
            let t = tool_turn(n + k, n + k * 7, &p["City"]);
            turns.push(ScriptedTurn::say(t.text));
            routing.push(Mode::Tool);
            calls.insert(t.call);
            points.push(t.point);
        } else {
            turns.push(ScriptedTurn::say(pick(CHAT_LINES, n * 5 + k)));
            routing.push(Mode::Chat);
        }
    }
    points.sort();
    points.dedup();
    BenchmarkCase {
        case_id: format!("long-{n:03}"),
        profile: p,
        turns,
        routing_gt: routing,
        execution_gt: vec![calls.into_iter().collect()],
        response_gt: points,
        tags: CaseTags { unambiguous: true, long_horizon: true, ..Default::default() },
    }
}

fn ambiguous_case(n: usize) -> BenchmarkCase {
    let topic = pick(VIDEO_TOPICS, n);
    let opener =
        pick(&["Find that video from last month", "Can you find that video from last month"], n / VIDEO_TOPICS.len());
    let answer =
        if n < VIDEO_TOPICS.len() { format!("The {topic} one") } else { format!("It was the one about {topic}") };
    BenchmarkCase {
        case_id: format!("ambig-{n:03}"),
        profile: profile(n),
        turns: vec![ScriptedTurn::say(opener), ScriptedTurn::answer(answer)],
        routing_gt: vec![Mode::Tool, Mode::Chat],
        execution_gt: vec![vec![ToolCall::new("search", &[("query", "that video from last month")])]],
        response_gt: vec![format!("about {topic}")],
        tags: CaseTags { ambiguous: true, ..Default::default() },
    }
}

/// The bundled corpus: 40 chat, 50 tool, 30 agent, 30 cross-domain,
/// 30 long-horizon and 20 ambiguous cases.
pub fn generate_corpus() -> Vec<BenchmarkCase> {
    let mut cases = Vec::with_capacity(200);
    cases.extend((0..40).map(chat_case));
    cases.extend((0..50).map(tool_case));
    cases.extend((0..30).map(agent_case));
    cases.extend((0..30).map(cross_domain_case));
    cases.extend((0..30).map(long_horizon_case));
    cases.extend((0..20).map(ambiguous_case));
    cases
}
