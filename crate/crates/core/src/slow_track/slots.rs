//! Keyword tables and gazetteer slot extraction used by the reference
//! classifier and planner templates.

use serde_json::{json, Value};

use crate::augmentation::Args;
use crate::text::{contains_phrase, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ToolIntent {
    Weather,
    StockQuote,
    Calendar,
    Search,
    ImageGen,
    MusicGen,
}

impl ToolIntent {
    pub const ALL: [ToolIntent; 6] = [
        ToolIntent::Weather,
        ToolIntent::StockQuote,
        ToolIntent::Calendar,
        ToolIntent::Search,
        ToolIntent::ImageGen,
        ToolIntent::MusicGen,
    ];

    pub fn tool_id(self) -> &'static str {
        match self {
            ToolIntent::Weather => "weather",
            ToolIntent::StockQuote => "stock_quote",
            ToolIntent::Calendar => "calendar",
            ToolIntent::Search => "search",
            ToolIntent::ImageGen => "image_gen",
            ToolIntent::MusicGen => "music_gen",
        }
    }

    pub fn keywords(self) -> &'static [&'static str] {
        match self {
            ToolIntent::Weather => &["weather", "forecast", "temperature"],
            ToolIntent::StockQuote => &["stock", "stocks", "share price"],
            ToolIntent::Calendar => &["calendar", "schedule", "meeting", "appointment"],
            ToolIntent::Search => &["search", "look up", "find", "video"],
            ToolIntent::ImageGen => &["draw", "picture", "image", "illustration"],
            ToolIntent::MusicGen => &["song", "music", "melody"],
        }
    }

    /// Short domain label used in acknowledgements.
    pub fn domain(self) -> &'static str {
        match self {
            ToolIntent::Weather => "the weather",
            ToolIntent::StockQuote => "the share price",
            ToolIntent::Calendar => "your calendar",
            ToolIntent::Search => "that search",
            ToolIntent::ImageGen => "your image",
            ToolIntent::MusicGen => "your music clip",
        }
    }

    pub fn from_tool_id(tool: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|i| i.tool_id() == tool)
    }
}

/// Keywords marking a complex, multi-step domain request.
pub const AGENT_KEYWORDS: &[&str] = &[
    "plan",
    "trip",
    "itinerary",
    "travel",
    "vacation",
    "consult",
    "advice",
    "legal",
    "lawyer",
    "medical",
    "doctor",
    "symptom",
    "symptoms",
];

pub fn detect_tool_intents(utterance: &str) -> Vec<ToolIntent> {
    ToolIntent::ALL.into_iter().filter(|i| i.keywords().iter().any(|k| contains_phrase(utterance, k))).collect()
}

pub fn agent_keywords_in(utterance: &str) -> Vec<&'static str> {
    AGENT_KEYWORDS.iter().copied().filter(|k| contains_phrase(utterance, k)).collect()
}

pub const CITIES: &[&str] = &[
    "Tokyo",
    "Kyoto",
    "Osaka",
    "Beijing",
    "Shanghai",
    "Hangzhou",
    "Chengdu",
    "Paris",
    "London",
    "New York",
    "Seoul",
    "Sydney",
    "Berlin",
    "Rome",
    "Bangkok",
    "Singapore",
    "Barcelona",
    "Toronto",
];

pub const DATES: &[&str] = &[
    "today",
    "tomorrow",
    "monday",
    "tuesday",
    "wednesday",
    "thursday",
    "friday",
    "saturday",
    "sunday",
    "this weekend",
    "next week",
];

pub const COMPANIES: &[(&str, &str)] = &[
    ("apple", "AAPL"),
    ("tesla", "TSLA"),
    ("baidu", "BIDU"),
    ("google", "GOOGL"),
    ("microsoft", "MSFT"),
    ("amazon", "AMZN"),
    ("nvidia", "NVDA"),
];

pub const HOTEL_TYPES: &[(&str, &str)] =
    &[("onsen", "Onsen"), ("ryokan", "Ryokan"), ("hostel", "Hostel"), ("hotel", "Hotel"), ("stay", "Hotel")];

fn phrase_positions(tokens: &[String], phrase: &str) -> Option<usize> {
    let pat = tokenize(phrase);
    if pat.is_empty() || pat.len() > tokens.len() {
        return None;
    }
    tokens.windows(pat.len()).position(|w| w == pat.as_slice())
}

/// Cities mentioned, ordered by position: (token index, canonical name).
pub fn find_cities(utterance: &str) -> Vec<(usize, &'static str)> {
    let tokens = tokenize(utterance);
    let mut found: Vec<(usize, &'static str)> =
        CITIES.iter().filter_map(|c| phrase_positions(&tokens, c).map(|p| (p, *c))).collect();
    found.sort();
    found
}

/// Destination: a city introduced by "to", "in", "visit" or "at", otherwise
/// the first city named.
pub fn extract_destination(utterance: &str) -> Option<String> {
    let tokens = tokenize(utterance);
    let cities = find_cities(utterance);
    cities
        .iter()
        .find(|(p, _)| *p > 0 && matches!(tokens[*p - 1].as_str(), "to" | "in" | "visit" | "at"))
        .or_else(|| cities.first())
        .map(|(_, c)| c.to_string())
}

pub fn extract_origin(utterance: &str) -> Option<String> {
    let tokens = tokenize(utterance);
    find_cities(utterance).into_iter().find(|(p, _)| *p > 0 && tokens[*p - 1] == "from").map(|(_, c)| c.to_string())
}

pub fn extract_date(utterance: &str) -> Option<String> {
    let tokens = tokenize(utterance);
    DATES.iter().filter_map(|d| phrase_positions(&tokens, d).map(|p| (p, *d))).min().map(|(_, d)| d.to_string())
}

pub fn extract_ticker(utterance: &str) -> Option<String> {
    COMPANIES.iter().find(|(name, _)| contains_phrase(utterance, name)).map(|(_, t)| t.to_string())
}

pub fn extract_hotel_type(utterance: &str) -> Option<String> {
    HOTEL_TYPES.iter().find(|(kw, _)| contains_phrase(utterance, kw)).map(|(_, t)| t.to_string())
}

const QUERY_TRIGGERS: &[&str] = &["search for", "search", "look up", "find"];

/// Search query: normalized text after the first trigger phrase, or the
/// whole normalized utterance.
pub fn extract_query(utterance: &str) -> String {
    let tokens = tokenize(utterance);
    for trig in QUERY_TRIGGERS {
        if let Some(p) = phrase_positions(&tokens, trig) {
            let rest = &tokens[p + tokenize(trig).len()..];
            if !rest.is_empty() {
                return rest.join(" ");
            }
        }
    }
    tokens.join(" ")
}

/// Generation prompt: text after the first "of" or "about", or the whole
/// normalized utterance.
pub fn extract_prompt(utterance: &str) -> String {
    let tokens = tokenize(utterance);
    match tokens.iter().position(|t| t == "of" || t == "about") {
        Some(p) if p + 1 < tokens.len() => tokens[p + 1..].join(" "),
        _ => tokens.join(" "),
    }
}

/// Arguments for a single-tool intent. `home_city` fills a missing city.
pub fn intent_args(intent: ToolIntent, utterance: &str, home_city: Option<&str>) -> Args {
    let mut args = Args::new();
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            args.insert(k.to_string(), Value::String(v));
        }
    };
    match intent {
        ToolIntent::Weather => {
            put("city", extract_destination(utterance).or_else(|| home_city.map(str::to_string)));
            put("date", extract_date(utterance));
        }
        ToolIntent::StockQuote => put("symbol", extract_ticker(utterance)),
        ToolIntent::Calendar => put("date", Some(extract_date(utterance).unwrap_or_else(|| "today".into()))),
        ToolIntent::Search => put("query", Some(extract_query(utterance))),
        ToolIntent::ImageGen | ToolIntent::MusicGen => put("prompt", Some(extract_prompt(utterance))),
    }
    args
}

pub fn str_arg(v: &str) -> Value {
    json!(v)
}
