//! Model to deployable RSS configuration: sharding analysis, then either key
//! synthesis and verification or the lock-based fallback.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keygen::{
    score_distribution, select_fieldsets, synthesize_keys, uniform_flows, verify_keys, DistributionScore,
    KeySearchConfig, VerificationReport,
};
use crate::model::NfModel;
use crate::packet::IfaceId;
use crate::rss::{NicProfile, RssConfigBundle};
use crate::sharding::{analyze_sharding, emit_constraints, PairConstraintSet, Reason, Rule, SolveOptions, Verdict};
use crate::sim::lock_mode_bundle;

pub const REPORT_BEGIN: &str = "----- BEGIN MACHINE-READABLE REPORT -----";
pub const REPORT_END: &str = "----- END MACHINE-READABLE REPORT -----";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Shared-nothing when feasible, locks otherwise.
    Auto,
    SharedNothing,
    Locks,
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Strategy::Auto),
            "shared-nothing" => Ok(Strategy::SharedNothing),
            "locks" => Ok(Strategy::Locks),
            _ => Err(Error::Invalid(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Deployment {
    SharedNothing,
    /// No state needs sharding; keys only balance load.
    LoadBalance,
    Locks,
}

impl fmt::Display for Deployment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Deployment::SharedNothing => "shared-nothing",
            Deployment::LoadBalance => "load-balance",
            Deployment::Locks => "locks",
        })
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub strategy: Strategy,
    pub solve: SolveOptions,
    /// Key length and table size are taken from the NIC profile.
    pub keys: KeySearchConfig,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            strategy: Strategy::Auto,
            solve: SolveOptions::default(),
            keys: KeySearchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub nf: String,
    pub verdict: Verdict,
    pub deployment: Deployment,
    /// Rule that decided the verdict.
    pub rule: Option<Rule>,
    pub reasons: Vec<Reason>,
    /// Sharding fields per interface name.
    pub sharding: BTreeMap<String, Vec<String>>,
    pub constraints: PairConstraintSet,
    pub constraints_text: String,
    pub fieldsets: BTreeMap<IfaceId, String>,
    pub bundle: RssConfigBundle,
    pub verification: Option<VerificationReport>,
    pub score: Option<DistributionScore>,
}

pub fn run_pipeline(model: &NfModel, profile: &NicProfile, opts: &PipelineOptions) -> Result<AnalysisReport> {
    profile.validate()?;
    let keys = KeySearchConfig {
        key_bytes: profile.key_bytes,
        table_size: profile.table_size,
        ..opts.keys.clone()
    };
    let analysis = analyze_sharding(model, profile, &opts.solve);
    let diagnosis = analysis.diagnosis;
    let rule = match &analysis.solution {
        Some(s) if diagnosis.verdict == Verdict::SharedNothing => Some(s.rule()),
        _ => diagnosis.reasons.iter().map(|r| r.rule).filter(|r| *r >= Rule::R3).max(),
    };
    let feasible = diagnosis.verdict != Verdict::Infeasible;
    let names = |fields: &BTreeMap<IfaceId, Vec<crate::sharding::FieldBits>>| {
        fields
            .iter()
            .map(|(i, bits)| (model.iface_name(*i), bits.iter().map(|b| b.to_string()).collect()))
            .collect()
    };

    if opts.strategy == Strategy::Locks || !feasible {
        if !feasible && opts.strategy == Strategy::SharedNothing {
            let reasons: Vec<String> = diagnosis.reasons.iter().map(|r| r.to_string()).collect();
            return Err(Error::Invalid(format!(
                "shared-nothing is infeasible for `{}`: {}",
                model.name,
                reasons.join("; ")
            )));
        }
        let bundle = lock_mode_bundle(model, profile, keys.cores, keys.seed)?;
        let score = score_distribution(&bundle.with_cores(keys.score_cores)?, &uniform_flows(keys.score_flows, keys.seed))?;
        return Ok(AnalysisReport {
            nf: model.name.clone(),
            verdict: diagnosis.verdict,
            deployment: Deployment::Locks,
            rule,
            reasons: diagnosis.reasons,
            sharding: analysis.solution.as_ref().map(|s| names(&s.fields)).unwrap_or_default(),
            constraints: PairConstraintSet::default(),
            constraints_text: String::new(),
            fieldsets: bundle
                .interfaces
                .iter()
                .map(|(i, c)| (*i, c.fieldset.to_string()))
                .collect(),
            bundle,
            verification: None,
            score: Some(score),
        });
    }

    let constraints = match &analysis.solution {
        Some(s) => emit_constraints(s, model),
        None => PairConstraintSet {
            interfaces: model.iface_ids(),
            pairs: Vec::new(),
        },
    };
    let fieldsets = select_fieldsets(&constraints, profile)?;
    let bundle = synthesize_keys(&constraints, &fieldsets, &keys)?;
    let verification = verify_keys(&bundle, &constraints, keys.verify_samples, keys.seed);
    let score = score_distribution(&bundle.with_cores(keys.score_cores)?, &uniform_flows(keys.score_flows, keys.seed))?;
    let constraints_text = constraints.display(model).to_string();
    Ok(AnalysisReport {
        nf: model.name.clone(),
        verdict: diagnosis.verdict,
        deployment: if constraints.is_empty() {
            Deployment::LoadBalance
        } else {
            Deployment::SharedNothing
        },
        rule,
        reasons: diagnosis.reasons,
        sharding: analysis.solution.as_ref().map(|s| names(&s.fields)).unwrap_or_default(),
        constraints_text,
        constraints,
        fieldsets: fieldsets.iter().map(|(i, f)| (*i, f.to_string())).collect(),
        bundle,
        verification: Some(verification),
        score: Some(score),
    })
}

impl AnalysisReport {
    /// Human-readable summary followed by the delimited JSON form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "NF {}", self.nf);
        let _ = write!(out, "verdict: {}", self.verdict);
        if let Some(r) = self.rule {
            let _ = write!(out, " ({r})");
        }
        let _ = writeln!(out, "\ndeployment: {}", self.deployment);
        if !self.sharding.is_empty() {
            out.push_str("sharding fields:\n");
            for (iface, fields) in &self.sharding {
                let _ = writeln!(out, "  {iface}: {}", fields.join(", "));
            }
        }
        if !self.reasons.is_empty() {
            out.push_str("justification:\n");
            for r in &self.reasons {
                let _ = writeln!(out, "  {r}");
            }
        }
        if !self.constraints_text.is_empty() {
            out.push_str("constraints:\n");
            for line in self.constraints_text.lines() {
                let _ = writeln!(out, "  {line}");
            }
        }
        out.push_str("field sets:\n");
        for (iface, fs) in &self.fieldsets {
            let _ = writeln!(out, "  {iface}: {fs}");
        }
        for (iface, cfg) in &self.bundle.interfaces {
            let _ = writeln!(out, "key {iface}: {} ({} bits set)", cfg.key.to_hex(), cfg.key.count_ones());
        }
        if let Some(v) = &self.verification {
            let _ = writeln!(out, "verification: {v}");
        }
        if let Some(s) = &self.score {
            let _ = writeln!(out, "distribution: max/mean {:.3} on {} cores", s.max_mean, s.shares.len());
        }
        out.push_str(REPORT_BEGIN);
        out.push('\n');
        out.push_str(&serde_json::to_string_pretty(self).expect("reports serialize"));
        out.push('\n');
        out.push_str(REPORT_END);
        out.push('\n');
        out
    }

    /// Reads the machine-readable section of `to_text` output.
    pub fn from_text(text: &str) -> Result<Self> {
        let start = text
            .find(REPORT_BEGIN)
            .ok_or_else(|| Error::Parse("no machine-readable report section".into()))?
            + REPORT_BEGIN.len();
        let end = text[start..]
            .find(REPORT_END)
            .ok_or_else(|| Error::Parse("unterminated machine-readable report section".into()))?;
        Ok(serde_json::from_str(&text[start..start + end])?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    fn opts() -> PipelineOptions {
        PipelineOptions {
            keys: KeySearchConfig {
                verify_samples: 2000,
                ..KeySearchConfig::default()
            },
            ..PipelineOptions::default()
        }
    }

    fn run(name: &str, o: &PipelineOptions) -> Result<AnalysisReport> {
        let m = corpus::bundled().into_iter().find(|e| e.name == name).unwrap().model().unwrap();
        run_pipeline(&m, &NicProfile::e810(), o)
    }

    #[test]
    fn fw_gets_two_verified_keys() {
        let r = run("fw", &opts()).unwrap();
        assert_eq!(r.deployment, Deployment::SharedNothing);
        assert_eq!(r.bundle.interfaces.len(), 2);
        assert!(r.verification.as_ref().unwrap().is_sound());
        assert!(r.score.as_ref().unwrap().passes(1.5));
    }

    #[test]
    fn lb_falls_back_to_locks() {
        let r = run("lb", &opts()).unwrap();
        assert_eq!(r.deployment, Deployment::Locks);
        assert_eq!(r.verdict, Verdict::Infeasible);
        assert!(!r.reasons.is_empty());
        let strict = PipelineOptions {
            strategy: Strategy::SharedNothing,
            ..opts()
        };
        assert!(run("lb", &strict).is_err());
    }

    #[test]
    fn nop_only_balances_load() {
        let r = run("nop", &opts()).unwrap();
        assert_eq!(r.deployment, Deployment::LoadBalance);
        assert_eq!(r.bundle.interfaces.len(), 2);
    }

    #[test]
    fn report_round_trips_through_text() {
        let r = run("cl", &opts()).unwrap();
        let back = AnalysisReport::from_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert!(verify_keys(&back.bundle, &back.constraints, 1000, 3).is_sound());
    }
}
