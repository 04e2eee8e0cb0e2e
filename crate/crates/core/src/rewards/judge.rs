//! The six-aspect rubric judge.
//!
//! [`heuristic_judge`] is a deterministic scorer over element sets. A
//! [`RemoteJudge`] posts both element sets to an external scoring service and
//! falls back to the heuristic whenever the call fails.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{color_score, layout_score, text_score, type_score};
use crate::chartlang::{ElementSet, ExecError};

/// Aspect scores out of 20/10/20/20/20/10.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RubricScore {
    pub chart_types: f64,
    pub layout: f64,
    pub text: f64,
    pub data: f64,
    pub style: f64,
    pub clarity: f64,
    pub total: f64,
}

impl RubricScore {
    fn from_aspects(chart_types: f64, layout: f64, text: f64, data: f64, style: f64, clarity: f64) -> Self {
        RubricScore {
            chart_types,
            layout,
            text,
            data,
            style,
            clarity,
            total: chart_types + layout + text + data + style + clarity,
        }
    }

    /// Total scaled to [0, 1].
    pub fn scaled(&self) -> f64 {
        self.total / 100.0
    }
}

fn series_similarity(pred: &[f64], reference: &[f64]) -> f64 {
    let n = pred.len().min(reference.len());
    if n == 0 {
        return 0.0;
    }
    let mean_abs = pred.iter().zip(reference).map(|(p, r)| (p - r).abs()).sum::<f64>() / n as f64;
    let shape = n as f64 / pred.len().max(reference.len()) as f64;
    (1.0 - mean_abs / crate::chartlang::Value::MAX).max(0.0) * shape
}

fn data_match(pred: &ElementSet, reference: &ElementSet) -> f64 {
    if reference.subplots.is_empty() {
        return 1.0;
    }
    let pd = pred.data_by_index();
    let total: f64 = reference
        .data_by_index()
        .iter()
        .map(|(i, r)| pd.get(i).map_or(0.0, |p| series_similarity(p, r)))
        .sum();
    total / reference.subplots.len() as f64
}

fn flag_match(pred: &ElementSet, reference: &ElementSet) -> f64 {
    if reference.subplots.is_empty() {
        return 1.0;
    }
    let pf = pred.style_flags();
    let hits: usize = reference
        .style_flags()
        .iter()
        .map(|(i, (g, l))| match pf.get(i) {
            Some((pg, pl)) => (pg == g) as usize + (pl == l) as usize,
            None => 0,
        })
        .sum();
    hits as f64 / (2 * reference.subplots.len()) as f64
}

pub fn heuristic_judge(pred: Result<&ElementSet, &ExecError>, reference: &ElementSet) -> RubricScore {
    let Ok(pred) = pred else {
        return RubricScore::default();
    };
    RubricScore::from_aspects(
        20.0 * type_score(pred, reference),
        10.0 * layout_score(pred.layout, reference.layout),
        20.0 * text_score(pred, reference),
        20.0 * data_match(pred, reference),
        20.0 * (0.5 * color_score(pred, reference) + 0.5 * flag_match(pred, reference)),
        (10.0 - 2.0 * pred.overlap_count as f64).max(0.0),
    )
}

/// Element-set object as sent to a remote judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireElementSet {
    pub layout: [u8; 2],
    pub types: Vec<String>,
    pub texts: Vec<String>,
    pub colors: Vec<[u8; 3]>,
    pub data_by_index: BTreeMap<String, Vec<f64>>,
    pub style_flags: BTreeMap<String, [bool; 2]>,
    pub overlap_count: u32,
}

impl From<&ElementSet> for WireElementSet {
    fn from(es: &ElementSet) -> Self {
        WireElementSet {
            layout: [es.layout.0, es.layout.1],
            types: es.types().iter().map(|t| t.name().to_string()).collect(),
            texts: es.texts().iter().map(|w| w.as_str().to_string()).collect(),
            colors: es.colors(),
            data_by_index: es.data_by_index().into_iter().map(|(i, d)| (i.to_string(), d)).collect(),
            style_flags: es
                .style_flags()
                .into_iter()
                .map(|(i, (g, l))| (i.to_string(), [g, l]))
                .collect(),
            overlap_count: es.overlap_count,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRequest {
    pub pred: WireElementSet,
    #[serde(rename = "ref")]
    pub reference: WireElementSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireAspects {
    pub chart_types: i64,
    pub layout: i64,
    pub text: i64,
    pub data: i64,
    pub style: i64,
    pub clarity: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireReply {
    pub aspects: WireAspects,
    pub total: i64,
}

impl WireReply {
    fn is_consistent(&self) -> bool {
        let a = &self.aspects;
        let bounded = [
            (a.chart_types, 20),
            (a.layout, 10),
            (a.text, 20),
            (a.data, 20),
            (a.style, 20),
            (a.clarity, 10),
        ]
        .iter()
        .all(|&(v, max)| (0..=max).contains(&v));
        let sum = a.chart_types + a.layout + a.text + a.data + a.style + a.clarity;
        bounded && sum == self.total
    }
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

/// HTTP adapter for an external judge.
///
/// The request body is `{"pred": …, "ref": …}` and the reply must be
/// `{"aspects": {…six integers…}, "total": n}`. Transport failures, timeouts and
/// inconsistent replies fall back to [`heuristic_judge`] and bump
/// [`RemoteJudge::fallbacks`].
pub struct RemoteJudge {
    endpoint: String,
    agent: ureq::Agent,
    slots: Slots,
    fallbacks: AtomicU64,
}

impl RemoteJudge {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Self {
        RemoteJudge {
            endpoint: endpoint.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            slots: Slots {
                free: Mutex::new(max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            fallbacks: AtomicU64::new(0),
        }
    }

    pub fn fallbacks(&self) -> u64 {
        self.fallbacks.load(Ordering::SeqCst)
    }

    fn request(&self, pred: &ElementSet, reference: &ElementSet) -> Result<WireReply, String> {
        let body = WireRequest {
            pred: pred.into(),
            reference: reference.into(),
        };
        let _slot = self.slots.acquire();
        let resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| e.to_string())?;
        let reply: WireReply = resp.into_json().map_err(|e| e.to_string())?;
        if reply.is_consistent() {
            Ok(reply)
        } else {
            Err(format!("inconsistent reply {reply:?}"))
        }
    }

    /// Scaled judge score in [0, 1].
    pub fn score(&self, pred: Result<&ElementSet, &ExecError>, reference: &ElementSet) -> f64 {
        let Ok(p) = pred else {
            return 0.0;
        };
        match self.request(p, reference) {
            Ok(reply) => reply.total as f64 / 100.0,
            Err(e) => {
                self.fallbacks.fetch_add(1, Ordering::SeqCst);
                log::warn!("remote judge at {} failed ({e}); using heuristic", self.endpoint);
                heuristic_judge(pred, reference).scaled()
            }
        }
    }
}

/// Which judge backs the model-based reward.
#[derive(Clone, Default)]
pub enum Judge {
    #[default]
    Heuristic,
    Remote(Arc<RemoteJudge>),
}

impl Judge {
    pub fn score(&self, pred: Result<&ElementSet, &ExecError>, reference: &ElementSet) -> f64 {
        match self {
            Judge::Heuristic => heuristic_judge(pred, reference).scaled(),
            Judge::Remote(r) => r.score(pred, reference),
        }
    }

    pub fn is_remote(&self) -> bool {
        matches!(self, Judge::Remote(_))
    }
}

impl std::fmt::Debug for Judge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Judge::Heuristic => f.write_str("Heuristic"),
            Judge::Remote(r) => write!(f, "Remote({})", r.endpoint),
        }
    }
}
