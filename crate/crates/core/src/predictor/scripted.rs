//! Deterministic rule-driven completion backend.
//!
//! Reads the rendered prompt, recognises which template produced it and
//! answers from a [`Script`]: fixed zero-shot confidences per edge, and local
//! updates that shift the rendered prior toward the experiment's outcome by
//! a relation-specific step. Responses go through the normal parser, so the
//! whole text path is exercised without a model.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendError, CompletionBackend};

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("invalid script: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Script {
    /// Signed zero-shot confidence per `"A->B"` edge, each in `±1..=100`.
    #[serde(default)]
    pub zero_shot: BTreeMap<String, i32>,
    /// Used for edges missing from `zero_shot`.
    pub zero_shot_default: i32,
    /// Shift applied by parent-update prompts (target shares the parent).
    pub parent_update_step: i32,
    /// Shift applied by child-update prompts (target shares the child).
    pub child_update_step: i32,
    /// Verbatim reply to experiment-selection prompts.
    #[serde(default)]
    pub selection_response: Option<String>,
    /// Verbatim reply to global-update prompts.
    #[serde(default)]
    pub global_response: Option<String>,
}

impl Script {
    pub fn validate(&self) -> Result<(), ScriptError> {
        let check = |what: &str, v: i32| {
            if v == 0 || v.abs() > 100 {
                Err(ScriptError::Invalid(format!("{what}: confidence {v} must be in ±1..=100")))
            } else {
                Ok(())
            }
        };
        check("zero_shot_default", self.zero_shot_default)?;
        for (edge, v) in &self.zero_shot {
            if !edge.contains("->") {
                return Err(ScriptError::Invalid(format!("edge key {edge:?} is not of the form A->B")));
            }
            check(edge, *v)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let s: Script = serde_json::from_str(text).map_err(|e| ScriptError::Invalid(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Debug)]
pub struct ScriptedBackend {
    script: Script,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Result<Self, ScriptError> {
        script.validate()?;
        Ok(ScriptedBackend { script })
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    fn respond(&self, prompt: &str) -> Option<String> {
        if let Some(c) = zero_shot_re().captures(prompt) {
            let key = format!("{}->{}", &c[1], &c[2]);
            let v = self.script.zero_shot.get(&key).copied().unwrap_or(self.script.zero_shot_default);
            return Some(emit(if v >= 0 { "YES" } else { "NO" }, v.unsigned_abs()));
        }
        if let Some(c) = update_re().captures(prompt) {
            let feedback_present = !c[1].trim_start().starts_with("(NOT");
            let prior = notation_value(&c[2])?;
            let step = if prompt.contains("experimental child") {
                self.script.parent_update_step
            } else {
                self.script.child_update_step
            };
            let out = (prior + if feedback_present { step } else { -step }).clamp(-100, 100);
            let word = if out >= 0 { "PARENT" } else { "NOT CAUSAL" };
            return Some(emit(word, out.unsigned_abs().max(1)));
        }
        if prompt.contains("<experiments>") {
            return self.script.selection_response.clone();
        }
        if prompt.contains("<revisions>") {
            return self.script.global_response.clone();
        }
        None
    }
}

fn emit(word: &str, confidence: u32) -> String {
    format!("Scripted answer.\n<decision>{word}</decision> <confidence>{confidence}</confidence>")
}

fn zero_shot_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^Now, you must determine whether (.+) is a causal parent of (.+)\.$").expect("regex")
    })
}

fn update_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"From one experiment you have discovered\n(.*)\n(?s:.*?)Consider the predicted edge\n\n(.*)\n")
            .expect("regex")
    })
}

/// Signed value of `(A->B,C)` / `(NOT A->B, C)`.
fn notation_value(s: &str) -> Option<i32> {
    let s = s.trim();
    let magnitude: i32 = s.rsplit(',').next()?.trim().trim_end_matches(')').trim().parse().ok()?;
    Some(if s.starts_with("(NOT ") { -magnitude } else { magnitude })
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, prompt: &str, _sample_index: usize) -> Result<String, BackendError> {
        Ok(self.respond(prompt).unwrap_or_else(|| "No scripted answer for this prompt.".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeLabel, Pair, SignedConfidence, VariableSet};
    use crate::predictor::prompts::{render_update_prompt, render_zero_shot_prompt};
    use crate::predictor::{parse_assessment, LocalUpdateContext, PromptContext, Relation};

    fn script() -> Script {
        Script {
            zero_shot: BTreeMap::from([("A->B".to_string(), 35)]),
            zero_shot_default: -80,
            parent_update_step: 30,
            child_update_step: 20,
            selection_response: None,
            global_response: None,
        }
    }

    #[test]
    fn answers_zero_shot_by_edge() {
        let v = VariableSet::from_names("t", [("A", ""), ("B", ""), ("C", "")]).unwrap();
        let b = ScriptedBackend::new(script()).unwrap();
        let ask = |p: Pair| {
            let prompt = render_zero_shot_prompt(&PromptContext::for_pair(&v, p).unwrap()).unwrap();
            parse_assessment(&b.complete(&prompt, 0).unwrap()).unwrap().signed()
        };
        assert_eq!(ask(Pair::new(0, 1)), 35.0);
        assert_eq!(ask(Pair::new(1, 0)), -80.0);
    }

    #[test]
    fn shifts_rendered_prior() {
        let v = VariableSet::from_names("t", [("A", ""), ("B", ""), ("C", "")]).unwrap();
        let b = ScriptedBackend::new(script()).unwrap();
        let mut ctx = LocalUpdateContext {
            variables: &v,
            experiment: Pair::new(0, 1),
            revealed: EdgeLabel::Absent,
            experiment_prior: SignedConfidence::new(35.0),
            target: Pair::new(0, 2),
            target_confidence: SignedConfidence::new(-40.4),
            relation: Relation::SharesParent,
        };
        let run = |ctx: &LocalUpdateContext<'_>| {
            parse_assessment(&b.complete(&render_update_prompt(ctx).unwrap(), 0).unwrap()).unwrap().signed()
        };
        assert_eq!(run(&ctx), -70.0);
        ctx.revealed = EdgeLabel::Present;
        assert_eq!(run(&ctx), -10.0);
        ctx.target = Pair::new(2, 1);
        ctx.relation = Relation::SharesChild;
        assert_eq!(run(&ctx), -20.0);
        ctx.target_confidence = SignedConfidence::new(-20.0);
        assert_eq!(run(&ctx), 1.0);
    }

    #[test]
    fn rejects_bad_scripts() {
        let mut s = script();
        s.zero_shot_default = 0;
        assert!(ScriptedBackend::new(s).is_err());
        let mut s = script();
        s.zero_shot.insert("AB".into(), 10);
        assert!(s.validate().is_err());
    }
}
