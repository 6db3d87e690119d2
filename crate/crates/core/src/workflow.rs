//! Scan workflow over the ten regions (five per lung, right lung first),
//! two orthogonal recordings per region, with a patient reposition before
//! the posterior regions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::View;
use crate::torso::{Posture, Side};

pub const REGIONS: u8 = 5;
pub const TOTAL_VIEWS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Setup,
    Scanning,
    RepositionProne,
    Complete,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Complete | Phase::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Substate {
    Approach,
    Contact,
    Search,
    RecordPerp,
    RecordPar,
    RegionDone,
}

impl Substate {
    /// View being recorded in this substate.
    pub fn recording_view(self) -> Option<View> {
        match self {
            Substate::RecordPerp => Some(View::Perpendicular),
            Substate::RecordPar => Some(View::Parallel),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum WorkflowEvent {
    ContactMade {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        region: Option<u8>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        side: Option<Side>,
    },
    FeaturesFound,
    RecordingDone { view: View, duration_s: f64 },
    ArcTransitDone,
    RepositionConfirmed,
    Abort { reason: String },
}

impl WorkflowEvent {
    pub fn contact() -> Self {
        WorkflowEvent::ContactMade { region: None, side: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WorkflowEvent::ContactMade { .. } => "contact_made",
            WorkflowEvent::FeaturesFound => "features_found",
            WorkflowEvent::RecordingDone { .. } => "recording_done",
            WorkflowEvent::ArcTransitDone => "arc_transit_done",
            WorkflowEvent::RepositionConfirmed => "reposition_confirmed",
            WorkflowEvent::Abort { .. } => "abort",
        }
    }
}

/// One accepted transition, as written to the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t_s: f64,
    pub event: String,
    pub region: u8,
    pub side: Side,
    pub substate_before: Substate,
    pub substate_after: Substate,
    pub phase_before: Phase,
    pub phase_after: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowState {
    pub phase: Phase,
    pub region: u8,
    pub side: Side,
    pub substate: Substate,
    pub posture: Posture,
    pub completed: BTreeSet<(u8, Side, View)>,
    pub started_at: Option<f64>,
    pub updated_at: Option<f64>,
    /// Unordered training mode; such sessions are not protocol scans.
    pub free_scan: bool,
    pub min_recording_s: f64,
    pub abort_reason: Option<String>,
}

/// Protocol order of the (region, side) pairs.
pub const ORDER: [(u8, Side); 10] = [
    (1, Side::Right),
    (2, Side::Right),
    (3, Side::Right),
    (4, Side::Right),
    (1, Side::Left),
    (2, Side::Left),
    (3, Side::Left),
    (4, Side::Left),
    (5, Side::Right),
    (5, Side::Left),
];

impl WorkflowState {
    pub fn new(free_scan: bool, min_recording_s: f64) -> Self {
        Self {
            phase: Phase::Setup,
            region: 1,
            side: Side::Right,
            substate: Substate::Approach,
            posture: Posture::Supine,
            completed: BTreeSet::new(),
            started_at: None,
            updated_at: None,
            free_scan,
            min_recording_s,
            abort_reason: None,
        }
    }

    pub fn is_complete(&self, region: u8, side: Side) -> bool {
        View::BOTH.iter().all(|&v| self.completed.contains(&(region, side, v)))
    }

    /// Region that follows the current one in protocol order.
    fn next_in_order(&self) -> Option<(u8, Side)> {
        let i = ORDER.iter().position(|&r| r == (self.region, self.side))?;
        ORDER.get(i + 1).copied()
    }

    /// Names of the events accepted in this state.
    pub fn expected_events(&self) -> Vec<&'static str> {
        let mut out = match (self.phase, self.substate) {
            (Phase::Complete | Phase::Aborted, _) => return Vec::new(),
            (Phase::RepositionProne, _) => vec!["reposition_confirmed"],
            (_, Substate::Approach) => vec!["contact_made"],
            (_, Substate::Contact | Substate::Search) => vec!["features_found"],
            (_, Substate::RecordPerp | Substate::RecordPar) => vec!["recording_done"],
            (_, Substate::RegionDone) if self.free_scan => vec!["contact_made", "reposition_confirmed"],
            (_, Substate::RegionDone) => match (self.region, self.side) {
                (2, _) => vec!["arc_transit_done"],
                _ => vec!["contact_made"],
            },
        };
        out.push("abort");
        out
    }

    fn reject(&self, event: &WorkflowEvent, why: &str) -> Error {
        Error::Protocol(format!(
            "{} not accepted in {:?}/{:?} at region {} {}{}; expected one of [{}]",
            event.name(),
            self.phase,
            self.substate,
            self.region,
            self.side.as_str(),
            if why.is_empty() { String::new() } else { format!(" ({why})") },
            self.expected_events().join(", ")
        ))
    }

    /// Pure transition: the successor state and its log record, or a
    /// protocol error with `self` untouched.
    pub fn advance(&self, event: &WorkflowEvent, t_s: f64) -> Result<(WorkflowState, Transition)> {
        if let Some(prev) = self.updated_at {
            if !(t_s > prev) {
                return Err(Error::Protocol(format!(
                    "{} at t={t_s} does not follow previous event at t={prev}",
                    event.name()
                )));
            }
        }
        if self.phase.is_terminal() {
            return Err(self.reject(event, "session is over"));
        }
        let mut next = self.clone();
        use Substate::*;
        use WorkflowEvent as E;
        match (self.phase, self.substate, event) {
            (_, _, E::Abort { reason }) => {
                next.phase = Phase::Aborted;
                next.abort_reason = Some(reason.clone());
            }
            (Phase::RepositionProne, _, E::RepositionConfirmed) => {
                next.phase = Phase::Scanning;
                next.posture = Posture::Prone;
                next.substate = Approach;
            }
            (Phase::RepositionProne, _, _) => return Err(self.reject(event, "")),
            (_, Approach, E::ContactMade { region, side }) => {
                self.check_target(event, *region, *side, self.region, self.side)?;
                next.phase = Phase::Scanning;
                next.substate = Contact;
            }
            (_, Contact | Search, E::FeaturesFound) => next.substate = RecordPerp,
            (_, RecordPerp | RecordPar, E::RecordingDone { view, duration_s }) => {
                let want = self.substate.recording_view().expect("recording substate");
                if *view != want {
                    return Err(self.reject(event, &format!("recording {} expected", want.as_str())));
                }
                if !(*duration_s >= self.min_recording_s) {
                    return Err(self.reject(
                        event,
                        &format!("recording lasted {duration_s} s, needs {} s", self.min_recording_s),
                    ));
                }
                next.completed.insert((self.region, self.side, *view));
                next.substate = if self.substate == RecordPerp { RecordPar } else { RegionDone };
                if next.substate == RegionDone {
                    next.finish_region();
                }
            }
            (_, RegionDone, E::ContactMade { region, side }) if self.free_scan => {
                let (r, s) = match (region, side) {
                    (Some(r), Some(s)) => (*r, *s),
                    _ => return Err(self.reject(event, "free scan needs region and side")),
                };
                if !(1..=REGIONS).contains(&r) || self.is_complete(r, s) {
                    return Err(self.reject(event, "region unknown or already scanned"));
                }
                if Posture::required_for(r) != self.posture {
                    return Err(self.reject(event, "posture does not suit the region"));
                }
                next.region = r;
                next.side = s;
                next.substate = Contact;
            }
            (_, RegionDone, E::RepositionConfirmed) if self.free_scan => {
                next.posture = match self.posture {
                    Posture::Supine => Posture::Prone,
                    Posture::Prone => Posture::Supine,
                };
            }
            (_, RegionDone, E::ContactMade { region, side }) if self.region != 2 => {
                let (r, s) = self.next_in_order().ok_or_else(|| self.reject(event, ""))?;
                self.check_target(event, *region, *side, r, s)?;
                next.region = r;
                next.side = s;
                // sliding within one side keeps contact but needs a new search
                next.substate = if s == self.side && r != 5 { Search } else { Contact };
            }
            (_, RegionDone, E::ArcTransitDone) if self.region == 2 => {
                next.region = 3;
                next.substate = Contact;
            }
            _ => return Err(self.reject(event, "")),
        }
        if next.started_at.is_none() {
            next.started_at = Some(t_s);
        }
        next.updated_at = Some(t_s);
        let tr = Transition {
            t_s,
            event: event.name().to_string(),
            region: self.region,
            side: self.side,
            substate_before: self.substate,
            substate_after: next.substate,
            phase_before: self.phase,
            phase_after: next.phase,
        };
        Ok((next, tr))
    }

    fn check_target(&self, event: &WorkflowEvent, region: Option<u8>, side: Option<Side>, r: u8, s: Side) -> Result<()> {
        if region.is_some_and(|x| x != r) || side.is_some_and(|x| x != s) {
            return Err(self.reject(event, &format!("next region is {r} {}", s.as_str())));
        }
        Ok(())
    }

    fn finish_region(&mut self) {
        if self.completed.len() == TOTAL_VIEWS {
            self.phase = Phase::Complete;
        } else if !self.free_scan && (self.region, self.side) == (4, Side::Left) {
            self.phase = Phase::RepositionProne;
            self.region = 5;
            self.side = Side::Right;
            self.substate = Substate::Approach;
        }
    }

    /// Apply an event in place; on error the state is unchanged.
    pub fn apply(&mut self, event: &WorkflowEvent, t_s: f64) -> Result<Transition> {
        let (next, tr) = self.advance(event, t_s)?;
        *self = next;
        Ok(tr)
    }

    /// 5 × 2 × 2 completion matrix indexed `[region − 1][side][view]`.
    pub fn completion_matrix(&self) -> [[[bool; 2]; 2]; 5] {
        let mut m = [[[false; 2]; 2]; 5];
        for &(r, s, v) in &self.completed {
            m[(r - 1) as usize][s.index()][v.index()] = true;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    pub region: u8,
    pub side: Side,
    pub view: View,
    pub first_seq: u64,
    pub last_seq: u64,
    pub frames: u64,
    pub duration_s: f64,
    pub mean_force_n: f64,
    pub max_force_n: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordingIndex {
    pub entries: Vec<RecordingEntry>,
}

impl RecordingIndex {
    pub fn push(&mut self, e: RecordingEntry) -> Result<()> {
        if let Some(last) = self.entries.last() {
            if e.first_seq <= last.last_seq {
                return Err(Error::State(format!(
                    "recording frames {}..{} overlap the previous recording",
                    e.first_seq, e.last_seq
                )));
            }
        }
        self.entries.push(e);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionForce {
    pub region: u8,
    pub side: Side,
    pub mean_force_n: f64,
    pub max_force_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub protocol: bool,
    pub phase: Phase,
    pub completed_views: usize,
    pub completion: [[[bool; 2]; 2]; 5],
    pub region_force: Vec<RegionForce>,
    pub recording_max_force_n: f64,
    pub duration_s: f64,
    pub abort_reason: Option<String>,
}

pub fn session_report(state: &WorkflowState, index: &RecordingIndex) -> Result<SessionSummary> {
    if !state.phase.is_terminal() {
        return Err(Error::State(format!("session still in {:?}", state.phase)));
    }
    let mut region_force = Vec::new();
    for &(r, s) in &ORDER {
        let entries: Vec<&RecordingEntry> = index.entries.iter().filter(|e| e.region == r && e.side == s).collect();
        if entries.is_empty() {
            continue;
        }
        let frames: u64 = entries.iter().map(|e| e.frames).sum();
        let mean = entries.iter().map(|e| e.mean_force_n * e.frames as f64).sum::<f64>() / frames.max(1) as f64;
        let max = entries.iter().map(|e| e.max_force_n).fold(0.0, f64::max);
        region_force.push(RegionForce {
            region: r,
            side: s,
            mean_force_n: mean,
            max_force_n: max,
        });
    }
    let duration_s = match (state.started_at, state.updated_at) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    Ok(SessionSummary {
        protocol: !state.free_scan,
        phase: state.phase,
        completed_views: state.completed.len(),
        completion: state.completion_matrix(),
        recording_max_force_n: region_force.iter().map(|r| r.max_force_n).fold(0.0, f64::max),
        region_force,
        duration_s,
        abort_reason: state.abort_reason.clone(),
    })
}

/// Event sequence that walks the whole protocol, one event per second.
pub fn full_protocol_events(recording_s: f64) -> Vec<WorkflowEvent> {
    let rec = |view| WorkflowEvent::RecordingDone {
        view,
        duration_s: recording_s,
    };
    let mut out = Vec::new();
    for (i, &(r, _)) in ORDER.iter().enumerate() {
        match (i, r) {
            (0, _) => out.push(WorkflowEvent::contact()),
            (_, 3) => out.push(WorkflowEvent::ArcTransitDone),
            (8, _) => {
                out.push(WorkflowEvent::RepositionConfirmed);
                out.push(WorkflowEvent::contact());
            }
            _ => out.push(WorkflowEvent::contact()),
        }
        out.push(WorkflowEvent::FeaturesFound);
        out.push(rec(View::Perpendicular));
        out.push(rec(View::Parallel));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn run(events: &[WorkflowEvent]) -> Result<WorkflowState> {
        let mut s = WorkflowState::new(false, 5.0);
        for (i, e) in events.iter().enumerate() {
            s.apply(e, (i + 1) as f64)?;
        }
        Ok(s)
    }

    #[test]
    fn full_protocol_completes() {
        let s = run(&full_protocol_events(5.0)).unwrap();
        assert_eq!(s.phase, Phase::Complete);
        assert_eq!(s.completed.len(), 20);
        assert!(s.completion_matrix().iter().flatten().flatten().all(|&b| b));
    }

    #[test]
    fn first_transitions() {
        let mut s = WorkflowState::new(false, 5.0);
        let tr = s.apply(&WorkflowEvent::contact(), 1.0).unwrap();
        assert_eq!((s.phase, s.substate), (Phase::Scanning, Substate::Contact));
        assert_eq!(tr.substate_before, Substate::Approach);
        s.apply(&WorkflowEvent::FeaturesFound, 2.0).unwrap();
        s.apply(
            &WorkflowEvent::RecordingDone {
                view: View::Perpendicular,
                duration_s: 5.0,
            },
            3.0,
        )
        .unwrap();
        assert_eq!(s.substate, Substate::RecordPar);
    }

    #[test]
    fn arc_transit_moves_to_lateral_region() {
        let events = full_protocol_events(5.0);
        // up to region 2 right done
        let s = run(&events[..8]).unwrap();
        assert_eq!((s.region, s.substate), (2, Substate::RegionDone));
        assert!(s.expected_events().contains(&"arc_transit_done"));
        let mut s2 = s.clone();
        assert!(s2.apply(&WorkflowEvent::contact(), 100.0).is_err());
        assert_eq!(s2, s);
        s2.apply(&WorkflowEvent::ArcTransitDone, 100.0).unwrap();
        assert_eq!((s2.region, s2.side, s2.substate), (3, Side::Right, Substate::Contact));
    }

    #[test]
    fn reposition_required_before_posterior() {
        let events = full_protocol_events(5.0);
        let i = events.iter().position(|e| *e == WorkflowEvent::RepositionConfirmed).unwrap();
        let s = run(&events[..i]).unwrap();
        assert_eq!(s.phase, Phase::RepositionProne);
        let err = s.advance(&WorkflowEvent::contact(), 1e6).unwrap_err();
        assert!(err.to_string().contains("reposition_confirmed"));
    }

    #[test]
    fn short_recording_and_wrong_view_rejected() {
        let mut s = run(&full_protocol_events(5.0)[..2]).unwrap();
        let before = s.clone();
        let short = WorkflowEvent::RecordingDone {
            view: View::Perpendicular,
            duration_s: 4.99,
        };
        assert!(s.apply(&short, 10.0).is_err());
        let wrong = WorkflowEvent::RecordingDone {
            view: View::Parallel,
            duration_s: 5.0,
        };
        assert!(s.apply(&wrong, 10.0).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn timestamps_must_increase() {
        let mut s = WorkflowState::new(false, 5.0);
        s.apply(&WorkflowEvent::contact(), 1.0).unwrap();
        assert!(s.apply(&WorkflowEvent::FeaturesFound, 1.0).is_err());
        assert!(s.apply(&WorkflowEvent::FeaturesFound, 1.5).is_ok());
    }

    #[test]
    fn explicit_target_is_checked() {
        let mut s = WorkflowState::new(false, 5.0);
        let wrong = WorkflowEvent::ContactMade {
            region: Some(3),
            side: None,
        };
        assert!(s.apply(&wrong, 1.0).is_err());
        let right = WorkflowEvent::ContactMade {
            region: Some(1),
            side: Some(Side::Right),
        };
        assert!(s.apply(&right, 1.0).is_ok());
    }

    #[test]
    fn reports() {
        let s = WorkflowState::new(false, 5.0);
        assert!(matches!(session_report(&s, &RecordingIndex::default()), Err(Error::State(_))));
        let mut s = s;
        s.apply(
            &WorkflowEvent::Abort {
                reason: "VAS termination".into(),
            },
            0.5,
        )
        .unwrap();
        let r = session_report(&s, &RecordingIndex::default()).unwrap();
        assert_eq!(r.completed_views, 0);
        assert_eq!(r.duration_s, 0.0);
        assert_eq!(r.abort_reason.as_deref(), Some("VAS termination"));
    }

    #[test]
    fn free_scan_any_order() {
        let mut s = WorkflowState::new(true, 5.0);
        let mut t = 0.0;
        let mut step = |s: &mut WorkflowState, e: WorkflowEvent| {
            t += 1.0;
            s.apply(&e, t).unwrap();
        };
        let rec = |v| WorkflowEvent::RecordingDone { view: v, duration_s: 5.0 };
        step(&mut s, WorkflowEvent::contact());
        let mut order: Vec<(u8, Side)> = ORDER.to_vec();
        order.reverse();
        order.retain(|&r| r != (1, Side::Right));
        for v in View::BOTH {
            if v == View::Perpendicular {
                step(&mut s, WorkflowEvent::FeaturesFound);
            }
            step(&mut s, rec(v));
        }
        // supine regions in reverse order, then reposition for region 5
        for &(r, side) in order.iter().filter(|(r, _)| *r != 5) {
            step(&mut s, WorkflowEvent::ContactMade { region: Some(r), side: Some(side) });
            step(&mut s, WorkflowEvent::FeaturesFound);
            step(&mut s, rec(View::Perpendicular));
            step(&mut s, rec(View::Parallel));
        }
        step(&mut s, WorkflowEvent::RepositionConfirmed);
        for side in [Side::Left, Side::Right] {
            step(&mut s, WorkflowEvent::ContactMade { region: Some(5), side: Some(side) });
            step(&mut s, WorkflowEvent::FeaturesFound);
            step(&mut s, rec(View::Perpendicular));
            step(&mut s, rec(View::Parallel));
        }
        assert_eq!(s.phase, Phase::Complete);
    }

    fn random_event(rng: &mut ChaCha8Rng) -> WorkflowEvent {
        match rng.random_range(0..7) {
            0 => WorkflowEvent::contact(),
            1 => WorkflowEvent::FeaturesFound,
            2 | 3 => WorkflowEvent::RecordingDone {
                view: if rng.random_bool(0.5) { View::Perpendicular } else { View::Parallel },
                duration_s: rng.random_range(3.0..7.0),
            },
            4 => WorkflowEvent::ArcTransitDone,
            5 => WorkflowEvent::RepositionConfirmed,
            _ => {
                if rng.random_bool(0.05) {
                    WorkflowEvent::Abort { reason: "test".into() }
                } else {
                    WorkflowEvent::contact()
                }
            }
        }
    }

    /// Random walks, biased toward legal events so that many reach the end.
    #[test]
    fn no_path_completes_with_fewer_than_twenty_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut completed_runs = 0;
        for _ in 0..10_000 {
            let mut s = WorkflowState::new(rng.random_bool(0.2), 5.0);
            let mut t = 0.0;
            for _ in 0..1000 {
                t += 0.5;
                let e = random_event(&mut rng);
                let before = s.clone();
                match s.apply(&e, t) {
                    Ok(_) => {}
                    Err(_) => assert_eq!(s, before),
                }
                if s.phase == Phase::Complete {
                    assert_eq!(s.completed.len(), TOTAL_VIEWS);
                    completed_runs += 1;
                    break;
                }
                if s.phase == Phase::Aborted {
                    break;
                }
            }
        }
        assert!(completed_runs > 0);
    }

    proptest! {
        #[test]
        fn replaying_transitions_reproduces_state(cut in 0usize..42) {
            let events = full_protocol_events(5.0);
            let cut = cut.min(events.len());
            let a = run(&events[..cut]).unwrap();
            let b = run(&events[..cut]).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
