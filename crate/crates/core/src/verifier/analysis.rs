//! Analyses of bug traces: context switches taken, lifespans of switches and
//! conflicting yield pairs.

use std::collections::BTreeSet;
use std::ops::Range;

use super::{Event, Trace};
use crate::lang::{GuardId, Location};

/// Guards of the yields at which the trace switched context.
pub fn cs_of(t: &Trace) -> BTreeSet<GuardId> {
    cs_of_events(&t.events)
}

pub(crate) fn cs_of_events(events: &[Event]) -> BTreeSet<GuardId> {
    events.iter().filter_map(Event::took_switch_at).collect()
}

/// Indices of the events strictly after `switch` and strictly before the
/// switching thread's next event (or the end of the trace).
pub fn lifespan_range(events: &[Event], switch: usize) -> Range<usize> {
    let Some(ev) = events.get(switch) else {
        return 0..0;
    };
    let start = switch + 1;
    let end = events[start..]
        .iter()
        .position(|e| e.thread == ev.thread)
        .map_or(events.len(), |k| start + k);
    start..end
}

/// Locations executed during the lifespan of the switch at `switch`.
pub fn lifespan(t: &Trace, switch: usize) -> BTreeSet<Location> {
    t.events[lifespan_range(&t.events, switch)]
        .iter()
        .map(|e| e.loc.clone())
        .collect()
}

/// Conflict pairs `(g1, g2)`: the trace switches at `g1`, and during that
/// switch's lifespan another thread executes code governed by the yield
/// guarded by `g2` (its most recent yield up to that point, which may be the
/// event itself).
pub fn wcs_of(t: &Trace) -> BTreeSet<(GuardId, GuardId)> {
    let ev = &t.events;
    let mut out = BTreeSet::new();
    for (i, e) in ev.iter().enumerate() {
        let Some(g1) = e.took_switch_at() else {
            continue;
        };
        for j in lifespan_range(ev, i) {
            let th = ev[j].thread;
            let last_yield = ev[..=j].iter().rev().find(|x| x.thread == th && x.is_yield);
            if let Some(g2) = last_yield.and_then(|y| y.guard) {
                out.insert((g1, g2));
            }
        }
    }
    out
}

/// Second components of the conflict pairs whose first component is in `s`.
pub fn wcs_restricted(t: &Trace, s: &BTreeSet<GuardId>) -> BTreeSet<GuardId> {
    wcs_of(t)
        .into_iter()
        .filter(|(a, _)| s.contains(a))
        .map(|(_, b)| b)
        .collect()
}
