//! Simulated tools with deterministic canned content.

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde_json::{json, Value};

use super::descriptor::{ArgSpec, LatencyModel, ToolDescriptor, ValueType};
use super::envelope::ExecutionEnvelope;
use super::registry::{stable_hash, ToolHandler};
use crate::text::TermVector;

/// Tools whose results are media artifacts worth surfacing mid-task.
pub const MEDIA_TOOLS: &[&str] = &["image_gen", "music_gen"];

const SEARCH_STOPWORDS: &[&str] = &[
    "a", "an", "the", "that", "this", "from", "for", "of", "to", "in", "on", "me", "my", "i", "is", "it", "and", "or",
    "with", "about", "what", "which", "please", "up", "find", "search", "look",
];

fn spec(pairs: &[(&str, ArgSpec)]) -> BTreeMap<String, ArgSpec> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

const fn req(ty: ValueType) -> ArgSpec {
    ArgSpec::required(ty)
}

const fn opt(ty: ValueType) -> ArgSpec {
    ArgSpec::optional(ty)
}

use ValueType::{List, String as Str};

fn descriptor(
    id: &str,
    description: &str,
    args: &[(&str, ArgSpec)],
    result: &[(&str, ArgSpec)],
    latency: LatencyModel,
) -> ToolDescriptor {
    ToolDescriptor {
        tool_id: id.into(),
        description: description.into(),
        arg_schema: spec(args),
        result_schema: spec(result),
        latency_model: latency,
        failure_rate: 0.0,
        endpoint: None,
    }
}

/// Descriptors of every built-in tool with default latency models:
/// interactive lookups are fixed, search and media generation heavy-tailed.
pub fn builtin_descriptors() -> Vec<ToolDescriptor> {
    let fixed = |ms| LatencyModel::Fixed { ms };
    let summary = [("summary", req(Str))];
    let with_candidates = [("summary", req(Str)), ("candidates", req(List))];
    vec![
        descriptor(
            "search",
            "web and video search",
            &[("query", req(Str))],
            &with_candidates,
            LatencyModel::Lognormal { mu: 5.5, sigma: 1.2 },
        ),
        descriptor(
            "weather",
            "current weather and forecast for a city",
            &[("city", req(Str)), ("date", opt(Str))],
            &summary,
            fixed(200),
        ),
        descriptor("stock_quote", "latest share price for a ticker", &[("symbol", req(Str))], &summary, fixed(150)),
        descriptor("calendar", "calendar entries for a date", &[("date", req(Str))], &summary, fixed(150)),
        descriptor(
            "flight_search",
            "flights to a destination",
            &[("dest", req(Str)), ("origin", opt(Str)), ("date", opt(Str))],
            &[("summary", req(Str)), ("arrival", req(Str))],
            fixed(400),
        ),
        descriptor(
            "hotel_book",
            "book accommodation of a given type",
            &[("type", req(Str)), ("dest", opt(Str))],
            &summary,
            fixed(350),
        ),
        descriptor(
            "activity_search",
            "things to do at a destination",
            &[("dest", req(Str)), ("interest", opt(Str))],
            &[("summary", req(Str)), ("selection", req(Str))],
            fixed(300),
        ),
        descriptor(
            "dining_search",
            "restaurants at a destination",
            &[("dest", req(Str)), ("near", opt(Str)), ("arrival", opt(Str))],
            &with_candidates,
            fixed(250),
        ),
        descriptor(
            "image_gen",
            "generate an image from a prompt",
            &[("prompt", req(Str))],
            &[("summary", req(Str)), ("artifact", req(Str))],
            LatencyModel::Lognormal { mu: 6.5, sigma: 0.6 },
        ),
        descriptor(
            "music_gen",
            "generate a short music clip from a prompt",
            &[("prompt", req(Str))],
            &[("summary", req(Str)), ("artifact", req(Str))],
            LatencyModel::Lognormal { mu: 6.5, sigma: 0.6 },
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinTool {
    Search,
    Weather,
    StockQuote,
    Calendar,
    FlightSearch,
    HotelBook,
    ActivitySearch,
    DiningSearch,
    ImageGen,
    MusicGen,
    /// Any other descriptor: echoes its arguments as the result.
    Echo,
}

impl BuiltinTool {
    pub fn for_descriptor(d: &ToolDescriptor) -> Self {
        match d.tool_id.as_str() {
            "search" => Self::Search,
            "weather" => Self::Weather,
            "stock_quote" => Self::StockQuote,
            "calendar" => Self::Calendar,
            "flight_search" => Self::FlightSearch,
            "hotel_book" => Self::HotelBook,
            "activity_search" => Self::ActivitySearch,
            "dining_search" => Self::DiningSearch,
            "image_gen" => Self::ImageGen,
            "music_gen" => Self::MusicGen,
            _ => Self::Echo,
        }
    }
}

fn arg<'a>(env: &'a ExecutionEnvelope, name: &str) -> &'a str {
    env.args.get(name).and_then(Value::as_str).unwrap_or("")
}

fn pick<'a>(options: &[&'a str], key: &str) -> &'a str {
    options[(stable_hash(key) % options.len() as u64) as usize]
}

fn candidate(name: &str, tags: &[&str], score: f64) -> Value {
    json!({"name": name, "tags": tags, "score": score})
}

struct Doc {
    title: &'static str,
    tags: &'static [&'static str],
}

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

const DOCS: &[Doc] = &[
    Doc { title: "Electric cars buying guide", tags: &["electric", "cars", "ev"] },
    Doc { title: "Quantum computing explained", tags: &["quantum", "computing", "physics"] },
    Doc { title: "Marathon training plan for beginners", tags: &["marathon", "running", "training"] },
    Doc { title: "Sourdough bread starter basics", tags: &["sourdough", "bread", "baking"] },
    Doc { title: "A short history of jazz", tags: &["jazz", "history", "music"] },
    Doc { title: "Common cold versus flu symptoms", tags: &["cold", "flu", "symptoms"] },
    Doc { title: "Tenant rights when renting an apartment", tags: &["tenant", "rights", "rent"] },
    Doc { title: "Learning Rust ownership", tags: &["rust", "programming", "ownership"] },
    Doc { title: "Best basketball drills for shooting", tags: &["basketball", "drills", "shooting"] },
    Doc { title: "Solar panel installation costs", tags: &["solar", "panels", "energy"] },
    Doc { title: "Houseplants that survive low light", tags: &["houseplants", "plants", "light"] },
    Doc { title: "Beginner guide to meditation", tags: &["meditation", "mindfulness", "stress"] },
    Doc { title: "Black hole image explained", tags: &["black", "hole", "astronomy"] },
    Doc { title: "Budget tips for college students", tags: &["budget", "money", "students"] },
    Doc { title: "Chess openings for beginners", tags: &["chess", "openings", "strategy"] },
    Doc { title: "Dinosaur fossils discovered in Mongolia", tags: &["dinosaur", "fossils", "paleontology"] },
    Doc { title: "Coffee brewing methods compared", tags: &["coffee", "brewing", "espresso"] },
    Doc { title: "World cup final highlights", tags: &["world", "cup", "football"] },
    Doc { title: "Volcano eruption in Iceland", tags: &["volcano", "iceland", "eruption"] },
    Doc { title: "Sleep hygiene habits", tags: &["sleep", "insomnia", "habits"] },
];

fn search(query: &str) -> Value {
    let q: String = crate::text::tokenize(query)
        .into_iter()
        .filter(|t| !SEARCH_STOPWORDS.contains(&t.as_str()))
        .collect::<Vec<_>>()
        .join(" ");
    let qv = TermVector::from_text(&q);
    let mut hits: Vec<(String, Vec<String>, f64)> = Vec::new();
    for topic in VIDEO_TOPICS {
        let name = format!("Video from last month about {topic}");
        let tags = vec!["video".to_string(), "last month".to_string(), topic.to_string()];
        let score = qv.cosine(&TermVector::from_text(&format!("video last month {topic}")));
        hits.push((name, tags, score));
    }
    for d in DOCS {
        let text = format!("{} {}", d.title, d.tags.join(" "));
        let score = qv.cosine(&TermVector::from_text(&text));
        hits.push((d.title.to_string(), d.tags.iter().map(|t| t.to_string()).collect(), score));
    }
    hits.retain(|h| h.2 > 0.0);
    // Stable sort keeps corpus order among equal scores.
    hits.sort_by(|a, b| b.2.total_cmp(&a.2));
    hits.truncate(20);
    let candidates: Vec<Value> =
        hits.iter().map(|(n, t, s)| json!({"name": n, "tags": t, "score": (s * 1e6).round() / 1e6})).collect();
    let summary = match hits.first() {
        Some(h) => format!("Top result: {}", h.0),
        None => format!("No results for '{query}'"),
    };
    let selection = hits.first().map(|h| h.0.clone()).unwrap_or_default();
    json!({"summary": summary, "candidates": candidates, "selection": selection})
}

fn dining(dest: &str) -> Value {
    let candidates = if dest.eq_ignore_ascii_case("tokyo") {
        vec![
            candidate("Sushi Omakase", &["raw fish", "seafood"], 0.92),
            candidate("Wagyu Beef", &["beef", "grill"], 0.88),
            candidate("Ramen Alley", &["noodles", "pork"], 0.81),
        ]
    } else {
        vec![
            candidate(&format!("{dest} Oyster Bar"), &["raw fish", "seafood"], 0.9),
            candidate(&format!("{dest} Steakhouse"), &["beef", "grill"], 0.86),
            candidate("Garden Bistro", &["vegetarian"], 0.8),
        ]
    };
    let top = candidates[0]["name"].as_str().unwrap_or_default().to_string();
    json!({
        "summary": format!("Top pick: {top}"),
        "candidates": candidates,
        "selection": top,
    })
}

impl BuiltinTool {
    fn compute(self, env: &ExecutionEnvelope) -> Value {
        match self {
            Self::Search => search(arg(env, "query")),
            Self::Weather => {
                let city = arg(env, "city");
                let key = city.to_lowercase();
                let cond = pick(&["sunny", "cloudy", "light rain", "windy", "clear"], &key);
                let temp = 5 + stable_hash(&format!("t:{key}")) % 25;
                json!({
                    "city": city,
                    "condition": cond,
                    "temp_c": temp,
                    "summary": format!("Weather in {city}: {cond}, {temp}°C"),
                })
            }
            Self::StockQuote => {
                let sym = arg(env, "symbol").to_uppercase();
                let h = stable_hash(&sym);
                let cents = 5_000 + h % 40_000;
                let change = (h / 40_000 % 61) as f64 / 10.0 - 3.0;
                let price = format!("{}.{:02}", cents / 100, cents % 100);
                json!({
                    "symbol": sym,
                    "price": price,
                    "change_pct": change,
                    "summary": format!("{sym} is trading at {price} ({change:+.1}%)"),
                })
            }
            Self::Calendar => {
                let date = arg(env, "date");
                let items = ["team standup", "dentist appointment", "lunch with Sam", "project review", "gym session"];
                let n = 1 + stable_hash(date) % 3;
                let start = stable_hash(&format!("c:{date}")) % items.len() as u64;
                let chosen: Vec<&str> = (0..n).map(|i| items[((start + i) % items.len() as u64) as usize]).collect();
                json!({
                    "date": date,
                    "entries": chosen,
                    "summary": format!("{n} entries on {date}: {}", chosen.join(", ")),
                })
            }
            Self::FlightSearch => {
                let dest = arg(env, "dest");
                let h = stable_hash(&dest.to_lowercase());
                let airline = pick(&["NH", "JL", "CA", "MU", "UA", "LH"], &dest.to_lowercase());
                let flight = format!("{airline}-{}", 100 + h % 900);
                let dep_h = 7 + h % 10;
                let arr_h = dep_h + 3 + (h >> 8) % 5;
                let arrival = format!("{arr_h:02}:{:02}", (h >> 16) % 60);
                json!({
                    "dest": dest,
                    "flight": flight,
                    "departs": format!("{dep_h:02}:10"),
                    "arrival": arrival,
                    "summary": format!("Flight {flight} to {dest}, arriving {arrival}"),
                })
            }
            Self::HotelBook => {
                let ty = arg(env, "type");
                let dest = arg(env, "dest");
                let id = format!("HB-{:06}", stable_hash(&format!("{ty}|{dest}")) % 1_000_000);
                let place = if dest.is_empty() { String::new() } else { format!(" in {dest}") };
                json!({
                    "booking_id": id,
                    "type": ty,
                    "summary": format!("Booked a {ty} stay{place} (ref {id})"),
                })
            }
            Self::ActivitySearch => {
                let dest = arg(env, "dest");
                let interest = arg(env, "interest");
                let selection = if interest.is_empty() {
                    let generic = ["Old town walking tour", "Harbor cruise", "City museum pass", "Night market visit"];
                    pick(&generic, &dest.to_lowercase()).to_string()
                } else {
                    let mut chars = interest.chars();
                    let cap: String = chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default();
                    format!("{cap} game at {dest} Arena")
                };
                json!({
                    "dest": dest,
                    "selection": selection,
                    "summary": format!("Activity: {selection}"),
                })
            }
            Self::DiningSearch => dining(arg(env, "dest")),
            Self::ImageGen | Self::MusicGen => {
                let prompt = arg(env, "prompt");
                let (kind, prefix) = if self == Self::ImageGen { ("image", "img") } else { ("music clip", "aud") };
                let artifact = format!("{prefix}-{:08x}", stable_hash(prompt) as u32);
                json!({
                    "artifact": artifact,
                    "summary": format!("Generated a {kind} for '{prompt}' ({artifact})"),
                })
            }
            Self::Echo => {
                let mut obj = serde_json::Map::new();
                for (k, v) in &env.args {
                    obj.insert(k.clone(), v.clone());
                }
                obj.insert("summary".into(), json!(format!("{} done", env.tool_id)));
                Value::Object(obj)
            }
        }
    }
}

#[async_trait]
impl ToolHandler for BuiltinTool {
    async fn call(&self, envelope: &ExecutionEnvelope) -> Result<Value, String> {
        Ok(self.compute(envelope))
    }
}
