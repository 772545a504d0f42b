use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::model::{Action, BehaviorLog, LogRecord, NfModel, ObjKind};
use crate::packet::{CoreId, Field, IfaceId, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub id: u64,
    pub seq: LogRecord,
    pub par: Option<LogRecord>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EquivalenceReport {
    pub compared: usize,
    pub mismatch_count: usize,
    /// The first divergent packets, in sequential log order.
    pub mismatches: Vec<Mismatch>,
}

impl EquivalenceReport {
    pub fn equivalent(&self) -> bool {
        self.mismatch_count == 0
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.equivalent() {
            return writeln!(f, "equivalent: {} packets compared", self.compared);
        }
        writeln!(
            f,
            "NOT equivalent: {} of {} packets diverge",
            self.mismatch_count, self.compared
        )?;
        for m in &self.mismatches {
            writeln!(f, "  packet {}: {}", m.id, m.reason)?;
            writeln!(f, "    sequential: {:?} {:?}", m.seq.action, m.seq.header)?;
            match &m.par {
                Some(p) => writeln!(f, "    parallel (core {}): {:?} {:?}", p.core, p.action, p.header)?,
                None => writeln!(f, "    parallel: missing")?,
            }
        }
        Ok(())
    }
}

/// Flow of every packet: replies belong to the flow of the packet they
/// answer, other packets to their arrival interface and 5-tuple.
pub fn flow_ids(trace: &Trace) -> HashMap<u64, u64> {
    let mut tuples: HashMap<(IfaceId, u8, u32, u16, u32, u16), u64> = HashMap::new();
    let mut out = HashMap::with_capacity(trace.len());
    for p in &trace.packets {
        let inherited = p.reply_to.and_then(|r| out.get(&r).copied());
        let id = inherited.unwrap_or_else(|| {
            let h = &p.header;
            let key = (p.iface, h.proto, h.ipv4_src, h.sport, h.ipv4_dst, h.dport);
            let n = tuples.len() as u64;
            *tuples.entry(key).or_insert(n)
        });
        out.insert(p.id, id);
    }
    out
}

/// Output fields compared up to renaming.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Abstraction {
    pub fields: Vec<(IfaceId, Field)>,
    /// A flow idle for longer than this may come back under a new name.
    pub idle_reset: Option<u64>,
}

impl Abstraction {
    pub fn none() -> Self {
        Self::default()
    }

    /// The model's declared abstractions; renamings may restart after the
    /// shortest expiry period of its index allocators.
    pub fn of(model: &NfModel) -> Self {
        Abstraction {
            fields: model.abstractions.clone(),
            idle_reset: model
                .objects
                .iter()
                .filter(|o| o.kind == ObjKind::Dchain)
                .map(|o| o.expiry)
                .min(),
        }
    }
}

struct Usage {
    flow: u64,
    seq: u64,
    first: usize,
    last: usize,
}

/// Compares two logs packet by packet.
///
/// Actions and forwarded headers must match exactly, except `abstraction`
/// fields on the listed output interfaces. Those may differ by a renaming
/// that is consistent within each flow session and never gives two sessions
/// served by the same core, at overlapping times, one value where the
/// sequential run gave them different ones. A session ends when its flow is
/// idle for longer than `abstraction.idle_reset`.
pub fn check_equivalence(
    seq: &BehaviorLog,
    par: &BehaviorLog,
    trace: &Trace,
    abstraction: &Abstraction,
    k: usize,
) -> EquivalenceReport {
    let flows = flow_ids(trace);
    let mut sessions: HashMap<u64, u64> = HashMap::with_capacity(trace.len());
    {
        let mut last: HashMap<u64, (u64, u64)> = HashMap::new();
        let mut next = 0u64;
        for p in &trace.packets {
            let flow = flows[&p.id];
            let s = match last.get(&flow) {
                Some(&(t, s)) if abstraction.idle_reset.is_none_or(|r| p.time.saturating_sub(t) <= r) => s,
                _ => {
                    next += 1;
                    next
                }
            };
            last.insert(flow, (p.time, s));
            sessions.insert(p.id, s);
        }
    }
    let by_id: HashMap<u64, &LogRecord> = par.records.iter().map(|r| (r.id, r)).collect();
    let mut report = EquivalenceReport::default();
    let fail = |report: &mut EquivalenceReport, s: &LogRecord, p: Option<&LogRecord>, reason: String| {
        report.mismatch_count += 1;
        if report.mismatches.len() < k {
            report.mismatches.push(Mismatch {
                id: s.id,
                seq: s.clone(),
                par: p.cloned(),
                reason,
            });
        }
    };
    let mut forward: HashMap<(u64, IfaceId, Field, u64), u64> = HashMap::new();
    let mut backward: HashMap<(u64, IfaceId, Field, u64), u64> = HashMap::new();
    let mut usage: HashMap<(CoreId, IfaceId, Field, u64), Vec<Usage>> = HashMap::new();
    for (pos, s) in seq.records.iter().enumerate() {
        report.compared += 1;
        let Some(&p) = by_id.get(&s.id) else {
            fail(&mut report, s, None, "missing from the parallel log".into());
            continue;
        };
        if s.action != p.action {
            fail(&mut report, s, Some(p), "different action".into());
            continue;
        }
        let Action::Forward(out) = s.action else {
            continue;
        };
        let flow = sessions.get(&s.id).copied().unwrap_or(u64::MAX);
        let mut bad = Vec::new();
        for f in Field::ALL {
            let (sv, pv) = (s.header.raw(f), p.header.raw(f));
            if !abstraction.fields.contains(&(out, f)) {
                if sv != pv {
                    bad.push(format!("{f} differs"));
                }
                continue;
            }
            let fw = *forward.entry((flow, out, f, sv)).or_insert(pv);
            let bw = *backward.entry((flow, out, f, pv)).or_insert(sv);
            if fw != pv || bw != sv {
                bad.push(format!("{f} renamed inconsistently within a flow"));
                continue;
            }
            let list = usage.entry((p.core, out, f, pv)).or_default();
            match list.iter_mut().find(|u| u.flow == flow && u.seq == sv) {
                Some(u) => u.last = pos,
                None => list.push(Usage {
                    flow,
                    seq: sv,
                    first: pos,
                    last: pos,
                }),
            }
        }
        if !bad.is_empty() {
            fail(&mut report, s, Some(p), bad.join(", "));
        }
    }
    // renamings that merge concurrent flows on one core
    let mut clashes: Vec<(usize, String)> = Vec::new();
    for ((core, iface, f, pv), list) in &usage {
        for (a, x) in list.iter().enumerate() {
            for y in &list[a + 1..] {
                if x.flow != y.flow && x.seq != y.seq && x.first <= y.last && y.first <= x.last {
                    clashes.push((
                        x.first.max(y.first),
                        format!(
                            "{f} value {pv} on interface {iface} is shared by two concurrent flows on core {core}"
                        ),
                    ));
                }
            }
        }
    }
    clashes.sort();
    for (pos, reason) in clashes {
        let s = &seq.records[pos];
        fail(&mut report, s, by_id.get(&s.id).copied(), reason);
    }
    report
}
