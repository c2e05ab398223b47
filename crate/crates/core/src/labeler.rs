//! Stage 3b: prompt construction, language-model clients, and label
//! parsing.
//!
//! The model sees one focus object per segment: its observations plus the
//! gripper lines, substituted into a fixed prompt at `[OBSERVATIONS]`. A
//! reply carries a reasoning preamble delimited by `***`, then a JSON
//! object with `tasks` (semicolon-delimited) and `confidence`
//! (comma-delimited, 0 to 10).

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::registry::ObjectRegistry;
use crate::signals::{Observation, ObservationKind, ObservationLog};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("label client failed after {attempts} attempts: {message}")]
    Client { attempts: u32, message: String },
    #[error("no JSON object found in response: {raw}")]
    NoJson { raw: String },
    #[error("malformed response: {message}; raw: {raw}")]
    Malformed { message: String, raw: String },
    #[error("{tasks} tasks but {confidences} confidences")]
    CountMismatch { tasks: usize, confidences: usize },
    #[error("confidence {0} outside [0, 10]")]
    ConfidenceRange(f64),
    #[error("nothing to label: no observations for object {object_id} in [{start}, {end}]")]
    EmptyObservations { object_id: u32, start: u64, end: u64 },
    #[error("no confident label: all {0} candidate tasks below the confidence floor")]
    NoConfidentLabel(usize),
    #[error("granularity aggregation needs at least 2 segments, got {0}")]
    TooFewSegments(usize),
    #[error("client selected a task not in the choice list: {0:?}")]
    OffListChoice(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// A text-completion backend. Implementations must be usable from one
/// in-flight call at a time per episode; mock implementations are fully
/// offline and deterministic.
pub trait LabelClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, LabelError>;
}

/// HTTP client speaking a minimal chat protocol: the request body is
/// `{model, messages: [{role, content}], temperature}`, the response body
/// `{content}`. Three attempts with exponential backoff.
pub struct HttpLabelClient {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    content: String,
}

impl HttpLabelClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpLabelClient {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 0.0,
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl LabelClient for HttpLabelClient {
    fn complete(&self, prompt: &str) -> Result<String, LabelError> {
        let body = ChatRequest {
            model: &self.model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: self.temperature,
        };
        let mut last_err = String::new();
        for attempt in 0..self.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            let result = self
                .client
                .post(&self.endpoint)
                .timeout(self.timeout)
                .json(&body)
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json::<ChatResponse>());
            match result {
                Ok(resp) => return Ok(resp.content),
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(LabelError::Client { attempts: self.max_attempts, message: last_err })
    }
}

// ---------------------------------------------------------------------------
// prompt templates

/// Main per-segment prompt; the focus object's observations replace
/// `[OBSERVATIONS]`.
pub const MAIN_PROMPT: &str = r#"You will be provided with observations of a robot interaction with an environment, delimited by triple quotes.
Determine the task the robot could have solved. The robot can only solve one task. If the observations indicate that the robot interacted with multiple objects, focus on the most frequent and precise observations.
Follow these guidelines:
Step 1: Answer what objects appear in the observation. List all objects. Then, determine the object for which the observations align the best.
Step 2: Determine the object movement and the resulting object relations. Think about where the object and its relational objects are located in the scene on a global scale. Think step by step and list the locations and relations of all objects. Explain the object movements.
Step 3: Determine what tasks result in the object relations from Step 2.
Step 4: Output tasks that accomplish the observations as short instructions. Focus on simple, single-step tasks that only require interaction with the determined object from Step 1. Focus on tasks that include changing the object relation and moving the object.
Example tasks: "Place the pot to the left of the fruit"; "Slide the dishrag to the bottom of the table next to the towel"; "Pick up the spoon and place it at the bottom left of the table"; "Put the pot to the right of the fruit"; "Move the pot forward and to the left"; "Turn on stove"; "Open the microwave"; "Relocate the knife inside the sink".
Follow the steps above. Explain your reasoning. Output the reasoning delimited by ***.
After, produce your output as JSON. The format should be:
{
"tasks": "The determined tasks, delimited by semicolons. Output 4 different, diverse task instructions. The instructions should cover all observations and each include different observations. Example: Place the pot to the left of the fruit; Move the pot backward and to the right; Relocate the pot at the left of the table to the center of the table; Lift up the pot and place it next to the spoon;",
"confidence": "A confidence score for each task between 0 and 10, delimited by commas. Be pessimistic."
}
Observations: ```[OBSERVATIONS]```"#;

/// Environment-level task proposal prompt; canonical object names replace
/// `[OBJECT_LIST]`.
pub const TASK_LIST_PROMPT: &str = r#"You will be provided with a list of objects observed by a robot. Based on the objects, give possible instructions to the robot. Infer the type of environment from the provided objects.
Follow these guidelines:
- Keep the instructions simple. Focus on tasks that only require a single step.
- Include tasks like placing an object inside another object or moving the object. Only for movable objects.
- Dont assume the presence of any objects not listed.
Output at least 20 possible instructions delimited by comma.
Here are a few examples: "Place the tin can to the left of the pot.", "Move the dishrag to the bottom of the table next to the towel", "Put the pot to the right of the fruit", "Turn on stove", "Open the microwave"
The following objects are in the environment: [OBJECT_LIST]"#;

/// Granularity-aggregation prompt; low-level labels and their observations
/// replace `[SEGMENTS]`.
pub const AGGREGATE_PROMPT: &str = r#"You will be provided with a sequence of low-level tasks a robot performed, in order, together with the observations each task was derived from, delimited by triple quotes.
Determine the single high-level task the robot accomplished by performing all of the low-level tasks in order.
Explain your reasoning. Output the reasoning delimited by ***.
After, produce your output as JSON. The format should be:
{
"tasks": "The determined high-level tasks, delimited by semicolons.",
"confidence": "A confidence score for each task between 0 and 10, delimited by commas. Be pessimistic."
}
Tasks and observations: ```[SEGMENTS]```"#;

/// Multiple-choice prompt; the candidate task list replaces `[CHOICES]`
/// and the focus observations replace `[OBSERVATIONS]`.
pub const MULTIPLE_CHOICE_PROMPT: &str = r#"You will be provided with observations of a robot interaction with an environment, delimited by triple quotes, and a list of candidate tasks.
Select up to two tasks from the list that best match the observations. Output the selected tasks verbatim.
Produce your output as JSON. The format should be:
{
"tasks": "The selected tasks, delimited by semicolons.",
"confidence": "A confidence score for each task between 0 and 10, delimited by commas."
}
Candidate tasks: [CHOICES]
Observations: ```[OBSERVATIONS]```"#;

/// Renders one observation as a prompt line.
fn observation_line(obs: &Observation) -> String {
    format!("Frame {}: {}", obs.frame_index, obs.text)
}

/// Observations for the focus object within `[start, end]`, plus gripper
/// lines, chronologically ordered.
pub fn focus_observations(
    log: &ObservationLog,
    start: u64,
    end: u64,
    focus: u32,
) -> Vec<&Observation> {
    log.observations
        .iter()
        .filter(|o| o.frame_index >= start && o.frame_index <= end)
        .filter(|o| {
            o.object_id == focus
                || matches!(o.kind, ObservationKind::GripperNear | ObservationKind::GripperClose)
        })
        .collect()
}

/// Builds the per-segment prompt around the focus object. Errors when the
/// segment holds no observation of the focus object itself.
pub fn build_object_prompt(
    log: &ObservationLog,
    segment: (u64, u64),
    focus: u32,
) -> Result<String, LabelError> {
    let (start, end) = segment;
    let obs = focus_observations(log, start, end, focus);
    if !obs.iter().any(|o| o.object_id == focus) {
        return Err(LabelError::EmptyObservations { object_id: focus, start, end });
    }
    let block: Vec<String> = obs.iter().map(|o| observation_line(o)).collect();
    Ok(MAIN_PROMPT.replace("[OBSERVATIONS]", &block.join("\n")))
}

/// Environment task-list prompt from the registry's canonical names, in
/// registry order.
pub fn build_task_list_prompt(registry: &ObjectRegistry) -> String {
    let names: Vec<&str> =
        registry.entries.iter().map(|e| e.canonical_name.as_str()).collect();
    TASK_LIST_PROMPT.replace("[OBJECT_LIST]", &names.join(", "))
}

// ---------------------------------------------------------------------------
// response parsing

fn balanced_json_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_string {
            match c {
                '\\' if !escaped => escaped = true,
                '"' if !escaped => in_string = false,
                _ => escaped = false,
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

#[derive(Deserialize)]
struct LabelJson {
    tasks: String,
    confidence: String,
}

/// Parses a model reply into `(tasks, confidences)`. Everything before the
/// first `{` after the last `***` is discarded as reasoning; tasks split
/// on semicolons, confidences on commas; counts must match and confidences
/// must lie in `[0, 10]`.
pub fn parse_label_response(raw: &str) -> Result<(Vec<String>, Vec<f64>), LabelError> {
    let tail = match raw.rfind("***") {
        Some(pos) => &raw[pos + 3..],
        None => raw,
    };
    let json = balanced_json_object(tail).ok_or_else(|| LabelError::NoJson { raw: raw.into() })?;
    let parsed: LabelJson = serde_json::from_str(json).map_err(|e| LabelError::Malformed {
        message: e.to_string(),
        raw: raw.into(),
    })?;
    let tasks: Vec<String> = parsed
        .tasks
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let confidences: Vec<f64> = parsed
        .confidence
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>().map_err(|e| LabelError::Malformed {
                message: format!("bad confidence {s:?}: {e}"),
                raw: raw.into(),
            })
        })
        .collect::<Result<_, _>>()?;
    if tasks.len() != confidences.len() {
        return Err(LabelError::CountMismatch {
            tasks: tasks.len(),
            confidences: confidences.len(),
        });
    }
    if tasks.is_empty() {
        return Err(LabelError::Malformed { message: "no tasks in reply".into(), raw: raw.into() });
    }
    for &c in &confidences {
        if !(c.is_finite() && (0.0..=10.0).contains(&c)) {
            return Err(LabelError::ConfidenceRange(c));
        }
    }
    Ok((tasks, confidences))
}

/// Renders `(tasks, confidences)` back into the reply JSON; the inverse of
/// [`parse_label_response`] on well-formed values.
pub fn render_label_response(tasks: &[String], confidences: &[f64]) -> String {
    let conf: Vec<String> = confidences
        .iter()
        .map(|c| {
            if c.fract() == 0.0 {
                format!("{}", *c as i64)
            } else {
                format!("{c}")
            }
        })
        .collect();
    serde_json::json!({
        "tasks": tasks.join("; "),
        "confidence": conf.join(","),
    })
    .to_string()
}

// ---------------------------------------------------------------------------
// segment labeling

/// A labeled `(start, end)` window with instruction candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSegment {
    pub start_frame: u64,
    pub end_frame: u64,
    pub focus_object_id: u32,
    pub tasks: Vec<String>,
    /// Confidences in 0..=10, aligned with `tasks`.
    pub confidences: Vec<f64>,
    /// True when more than one task survived confidence filtering.
    pub ambiguous: bool,
}

impl LabeledSegment {
    pub fn validate(&self) -> Result<(), LabelError> {
        if self.end_frame <= self.start_frame {
            return Err(LabelError::Malformed {
                message: format!(
                    "segment end {} must exceed start {}",
                    self.end_frame, self.start_frame
                ),
                raw: String::new(),
            });
        }
        if self.tasks.len() != self.confidences.len() {
            return Err(LabelError::CountMismatch {
                tasks: self.tasks.len(),
                confidences: self.confidences.len(),
            });
        }
        if self.tasks.is_empty() {
            return Err(LabelError::NoConfidentLabel(0));
        }
        Ok(())
    }
}

/// Labels one segment: builds the focus prompt, calls the client, parses
/// the reply, and drops tasks below `min_conf`. Errors when nothing
/// survives the confidence floor. The prompt window extends `trail` frames
/// past the segment end so that confirmations that settle just after the
/// keystate (state majorities, relation stability) stay visible; the
/// returned segment keeps the given bounds.
pub fn label_segment(
    log: &ObservationLog,
    segment: (u64, u64),
    focus: u32,
    client: &dyn LabelClient,
    min_conf: f64,
    trail: u64,
) -> Result<LabeledSegment, LabelError> {
    let prompt = build_object_prompt(log, (segment.0, segment.1 + trail), focus)?;
    let raw = client.complete(&prompt)?;
    let (tasks, confidences) = parse_label_response(&raw)?;
    let total = tasks.len();
    let mut kept_tasks = Vec::new();
    let mut kept_conf = Vec::new();
    for (t, c) in tasks.into_iter().zip(confidences) {
        if c >= min_conf {
            kept_tasks.push(t);
            kept_conf.push(c);
        }
    }
    if kept_tasks.is_empty() {
        return Err(LabelError::NoConfidentLabel(total));
    }
    let ambiguous = kept_tasks.len() > 1;
    Ok(LabeledSegment {
        start_frame: segment.0,
        end_frame: segment.1,
        focus_object_id: focus,
        tasks: kept_tasks,
        confidences: kept_conf,
        ambiguous,
    })
}

/// Combines at least two consecutive labeled segments into one high-level
/// segment spanning them all, by prompting with every constituent label
/// and its observations in order.
pub fn aggregate_granularity(
    segments: &[LabeledSegment],
    log: &ObservationLog,
    client: &dyn LabelClient,
    min_conf: f64,
) -> Result<LabeledSegment, LabelError> {
    if segments.len() < 2 {
        return Err(LabelError::TooFewSegments(segments.len()));
    }
    let mut block = String::new();
    for (i, seg) in segments.iter().enumerate() {
        block.push_str(&format!("Task {}: {}\n", i + 1, seg.tasks.join("; ")));
        for obs in focus_observations(log, seg.start_frame, seg.end_frame, seg.focus_object_id)
        {
            block.push_str(&observation_line(obs));
            block.push('\n');
        }
    }
    let prompt = AGGREGATE_PROMPT.replace("[SEGMENTS]", block.trim_end());
    let raw = client.complete(&prompt)?;
    let (tasks, confidences) = parse_label_response(&raw)?;
    let total = tasks.len();
    let (mut kept_tasks, mut kept_conf) = (Vec::new(), Vec::new());
    for (t, c) in tasks.into_iter().zip(confidences) {
        if c >= min_conf {
            kept_tasks.push(t);
            kept_conf.push(c);
        }
    }
    if kept_tasks.is_empty() {
        return Err(LabelError::NoConfidentLabel(total));
    }
    let ambiguous = kept_tasks.len() > 1;
    Ok(LabeledSegment {
        start_frame: segments.first().unwrap().start_frame,
        end_frame: segments.last().unwrap().end_frame,
        focus_object_id: segments.last().unwrap().focus_object_id,
        tasks: kept_tasks,
        confidences: kept_conf,
        ambiguous,
    })
}

/// Asks the client to pick tasks from a fixed list; returns one or two
/// list entries verbatim. More than two replies truncate with a warning;
/// an off-list reply is an error.
pub fn multiple_choice(
    log: &ObservationLog,
    segment: (u64, u64),
    focus: u32,
    choices: &[String],
    client: &dyn LabelClient,
) -> Result<Vec<String>, LabelError> {
    assert!(!choices.is_empty(), "choice list must be non-empty");
    let obs = focus_observations(log, segment.0, segment.1, focus);
    let block: Vec<String> = obs.iter().map(|o| observation_line(o)).collect();
    let prompt = MULTIPLE_CHOICE_PROMPT
        .replace("[CHOICES]", &choices.join("; "))
        .replace("[OBSERVATIONS]", &block.join("\n"));
    let raw = client.complete(&prompt)?;
    let (mut tasks, _) = parse_label_response(&raw)?;
    if tasks.len() > 2 {
        log::warn!("client selected {} tasks, truncating to the first 2", tasks.len());
        tasks.truncate(2);
    }
    for t in &tasks {
        if !choices.iter().any(|c| c == t) {
            return Err(LabelError::OffListChoice(t.clone()));
        }
    }
    Ok(tasks)
}

// ---------------------------------------------------------------------------
// label file: one segment per line
// start, end, object, tasks (; joined), confidences (, joined), ambiguous

pub fn save_segments(
    segments: &[LabeledSegment],
    path: impl AsRef<Path>,
) -> Result<(), LabelError> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in segments {
        s.validate()?;
        let conf: Vec<String> = s
            .confidences
            .iter()
            .map(|c| {
                if c.fract() == 0.0 {
                    format!("{}", *c as i64)
                } else {
                    format!("{c}")
                }
            })
            .collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            s.start_frame,
            s.end_frame,
            s.focus_object_id,
            s.tasks.join(";"),
            conf.join(","),
            s.ambiguous,
        ));
    }
    std::fs::write(path, out).map_err(|source| LabelError::Io { path: path.into(), source })
}

pub fn load_segments(path: impl AsRef<Path>) -> Result<Vec<LabeledSegment>, LabelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| LabelError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| LabelError::Parse { path: path.into(), line: i + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(err(format!("expected 6 fields, got {}", fields.len())));
        }
        let seg = LabeledSegment {
            start_frame: fields[0].parse().map_err(|e| err(format!("bad start: {e}")))?,
            end_frame: fields[1].parse().map_err(|e| err(format!("bad end: {e}")))?,
            focus_object_id: fields[2].parse().map_err(|e| err(format!("bad object: {e}")))?,
            tasks: fields[3].split(';').map(str::to_string).collect(),
            confidences: fields[4]
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| err(format!("bad confidence: {e}"))))
                .collect::<Result<_, _>>()?,
            ambiguous: fields[5].parse().map_err(|e| err(format!("bad flag: {e}")))?,
        };
        seg.validate()?;
        out.push(seg);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{ObjectEntry, ObjectProperties};

    struct FixedClient(String);
    impl LabelClient for FixedClient {
        fn complete(&self, _prompt: &str) -> Result<String, LabelError> {
            Ok(self.0.clone())
        }
    }

    fn obs(frame: u64, object_id: u32, kind: ObservationKind, text: &str) -> Observation {
        Observation { frame_index: frame, object_id, kind, text: text.into(), confidence: 1.0 }
    }

    fn sample_log() -> ObservationLog {
        ObservationLog {
            observations: vec![
                obs(5, 1, ObservationKind::Movement, "pot moved to the left of fork"),
                obs(7, 2, ObservationKind::Movement, "fork moved right"),
                obs(9, 1, ObservationKind::GripperNear, "The gripper was close to pot"),
                obs(30, 1, ObservationKind::Movement, "pot moved up"),
            ],
        }
    }

    #[test]
    fn prompt_contains_only_focus_and_gripper_lines() {
        let log = sample_log();
        let prompt = build_object_prompt(&log, (0, 20), 1).unwrap();
        assert!(prompt.contains("Frame 5: pot moved to the left of fork"));
        assert!(prompt.contains("Frame 9: The gripper was close to pot"));
        assert!(!prompt.contains("fork moved right"));
        assert!(!prompt.contains("pot moved up")); // outside window
        assert!(prompt.starts_with("You will be provided with observations"));
    }

    #[test]
    fn empty_observation_window_is_an_error() {
        let log = sample_log();
        assert!(matches!(
            build_object_prompt(&log, (100, 200), 1),
            Err(LabelError::EmptyObservations { .. })
        ));
    }

    #[test]
    fn task_list_prompt_joins_names_in_registry_order() {
        let mk = |id: u32, name: &str| ObjectEntry {
            object_id: id,
            canonical_name: name.into(),
            synonyms: vec![],
            color: "x".into(),
            properties: ObjectProperties::default(),
            is_surface: false,
            representative_confidence: 0.0,
        };
        let reg = ObjectRegistry { entries: vec![mk(0, "pot"), mk(1, "stove")], surface_id: None };
        let prompt = build_task_list_prompt(&reg);
        assert!(prompt.ends_with(": pot, stove"), "{prompt}");
        let single = ObjectRegistry { entries: vec![mk(0, "pot")], surface_id: None };
        assert!(build_task_list_prompt(&single).ends_with(": pot"));
    }

    #[test]
    fn parse_plain_json_reply() {
        let raw = r#"{"tasks":"Open the drawer; Pull the drawer open","confidence":"9,7"}"#;
        let (tasks, conf) = parse_label_response(raw).unwrap();
        assert_eq!(tasks, vec!["Open the drawer", "Pull the drawer open"]);
        assert_eq!(conf, vec![9.0, 7.0]);
    }

    #[test]
    fn parse_strips_reasoning_preamble() {
        let raw = "*** Step 1: the pot moved. {not json} *** \n{\"tasks\":\"Move the pot left\",\"confidence\":\"8\"}";
        let (tasks, conf) = parse_label_response(raw).unwrap();
        assert_eq!(tasks, vec!["Move the pot left"]);
        assert_eq!(conf, vec![8.0]);
    }

    #[test]
    fn parse_count_mismatch_errors() {
        let raw = r#"{"tasks":"a; b; c","confidence":"9,7"}"#;
        assert!(matches!(
            parse_label_response(raw),
            Err(LabelError::CountMismatch { tasks: 3, confidences: 2 })
        ));
    }

    #[test]
    fn parse_rejects_out_of_range_confidence() {
        let raw = r#"{"tasks":"a","confidence":"11"}"#;
        assert!(matches!(parse_label_response(raw), Err(LabelError::ConfidenceRange(_))));
    }

    #[test]
    fn parse_rejects_missing_json() {
        assert!(matches!(
            parse_label_response("no json here"),
            Err(LabelError::NoJson { .. })
        ));
    }

    #[test]
    fn parse_render_round_trip() {
        let tasks = vec!["Open the drawer".to_string(), "Pull the drawer open".to_string()];
        let conf = vec![9.0, 7.5];
        let raw = render_label_response(&tasks, &conf);
        let (t, c) = parse_label_response(&raw).unwrap();
        assert_eq!(t, tasks);
        assert_eq!(c, conf);
    }

    #[test]
    fn trailing_semicolon_tolerated() {
        let raw = r#"{"tasks":"Move the pot;","confidence":"6,"}"#;
        let (tasks, conf) = parse_label_response(raw).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(conf.len(), 1);
    }

    #[test]
    fn label_segment_filters_by_confidence() {
        let log = sample_log();
        let client = FixedClient(
            r#"{"tasks":"Move the pot to the left; Wave at the camera","confidence":"9,3"}"#
                .into(),
        );
        let seg = label_segment(&log, (0, 20), 1, &client, 6.0, 0).unwrap();
        assert_eq!(seg.tasks, vec!["Move the pot to the left"]);
        assert!(!seg.ambiguous);
    }

    #[test]
    fn label_segment_all_below_floor_errors() {
        let log = sample_log();
        let client = FixedClient(r#"{"tasks":"a; b","confidence":"3,2"}"#.into());
        assert!(matches!(
            label_segment(&log, (0, 20), 1, &client, 6.0, 0),
            Err(LabelError::NoConfidentLabel(2))
        ));
    }

    #[test]
    fn label_segment_two_retained_is_ambiguous() {
        let log = sample_log();
        let client = FixedClient(r#"{"tasks":"a; b","confidence":"9,8"}"#.into());
        let seg = label_segment(&log, (0, 20), 1, &client, 6.0, 0).unwrap();
        assert!(seg.ambiguous);
        assert_eq!(seg.tasks.len(), 2);
    }

    #[test]
    fn aggregation_requires_two_segments() {
        let log = sample_log();
        let client = FixedClient(r#"{"tasks":"high level","confidence":"9"}"#.into());
        let seg = LabeledSegment {
            start_frame: 0,
            end_frame: 10,
            focus_object_id: 1,
            tasks: vec!["open drawer".into()],
            confidences: vec![9.0],
            ambiguous: false,
        };
        assert!(matches!(
            aggregate_granularity(&[seg], &log, &client, 6.0),
            Err(LabelError::TooFewSegments(1))
        ));
    }

    #[test]
    fn aggregation_spans_all_inputs() {
        let log = sample_log();
        let client = FixedClient(r#"{"tasks":"Fetch the pot","confidence":"9"}"#.into());
        let mk = |s: u64, e: u64, task: &str| LabeledSegment {
            start_frame: s,
            end_frame: e,
            focus_object_id: 1,
            tasks: vec![task.into()],
            confidences: vec![9.0],
            ambiguous: false,
        };
        let high = aggregate_granularity(
            &[mk(0, 10, "open drawer"), mk(10, 20, "take pot"), mk(20, 32, "close drawer")],
            &log,
            &client,
            6.0,
        )
        .unwrap();
        assert_eq!((high.start_frame, high.end_frame), (0, 32));
        assert_eq!(high.tasks, vec!["Fetch the pot"]);
    }

    #[test]
    fn multiple_choice_verbatim_and_truncation() {
        let log = sample_log();
        let choices: Vec<String> =
            vec!["Move the pot".into(), "Open the drawer".into(), "Wave".into()];
        let exact = FixedClient(r#"{"tasks":"Move the pot","confidence":"9"}"#.into());
        assert_eq!(
            multiple_choice(&log, (0, 20), 1, &choices, &exact).unwrap(),
            vec!["Move the pot"]
        );
        let three =
            FixedClient(r#"{"tasks":"Move the pot; Open the drawer; Wave","confidence":"9,8,7"}"#.into());
        assert_eq!(multiple_choice(&log, (0, 20), 1, &choices, &three).unwrap().len(), 2);
        let off = FixedClient(r#"{"tasks":"Dance","confidence":"9"}"#.into());
        assert!(matches!(
            multiple_choice(&log, (0, 20), 1, &choices, &off),
            Err(LabelError::OffListChoice(_))
        ));
    }

    #[test]
    fn segments_file_round_trips() {
        let segs = vec![
            LabeledSegment {
                start_frame: 0,
                end_frame: 30,
                focus_object_id: 2,
                tasks: vec!["Open the drawer".into(), "Pull the drawer open".into()],
                confidences: vec![9.0, 7.5],
                ambiguous: true,
            },
            LabeledSegment {
                start_frame: 30,
                end_frame: 61,
                focus_object_id: 1,
                tasks: vec!["Move the pot left".into()],
                confidences: vec![8.0],
                ambiguous: false,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.tsv");
        save_segments(&segs, &p).unwrap();
        assert_eq!(load_segments(&p).unwrap(), segs);
    }
}
