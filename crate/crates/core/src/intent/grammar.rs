//! Closed grammar for operator intents.
//!
//! ```text
//! intent   := task [ "and" action ] { modifier }
//! task     := ("predict" | "detect") [ "cell-edge" | "cell" ] "congestion"
//! action   := "reserve" PCT [ "of" ] ( "prb" | "prbs" | "physical resource blocks" )
//!             "for" CLASS ( "users" | "ues" )
//! CLASS    := "edge" | "cell-edge" | "center" | "cell-center" | "all"
//! modifier := [ "and" ] ( "with" [ "a" ] PCT "threshold"
//!                       | "within" NUMBER "ms" )
//! PCT      := NUMBER "%"
//! ```
//!
//! Matching is case-insensitive and ignores trailing punctuation. Anything
//! outside the grammar yields a [`ClarificationRequest`]; values the grammar
//! does not mention take the documented defaults in [`super::defaults`].

use super::{
    ActionSpec, ActionType, ClarificationRequest, IntentOutcome, IntentText, ProvisioningSpec, TargetClass,
};

const AMBIGUOUS_GOALS: [&str; 6] = ["protect", "improve", "optimize", "optimise", "help", "prioritize"];

fn tokenize(raw: &str) -> Vec<String> {
    let lower = raw.to_lowercase();
    let mut out = Vec::new();
    for word in lower.split_whitespace() {
        let word = word.trim_matches(|c: char| matches!(c, ',' | '.' | '!' | '?' | ';' | ':' | '"' | '\''));
        if word.is_empty() {
            continue;
        }
        match word.strip_suffix('%') {
            Some(num) if !num.is_empty() => {
                out.push(num.to_string());
                out.push("%".to_string());
            }
            _ => out.push(word.to_string()),
        }
    }
    out
}

struct Cursor<'a> {
    toks: &'a [String],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).map(String::as_str)
    }

    fn eat(&mut self, word: &str) -> bool {
        if self.peek() == Some(word) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_any(&mut self, words: &[&str]) -> Option<&'a str> {
        let tok = self.peek()?;
        if words.contains(&tok) {
            self.pos += 1;
            Some(tok)
        } else {
            None
        }
    }

    fn number(&mut self) -> Option<f64> {
        let v = self.peek()?.parse::<f64>().ok().filter(|v| v.is_finite())?;
        self.pos += 1;
        Some(v)
    }

    fn percent(&mut self) -> Option<f64> {
        let save = self.pos;
        match (self.number(), self.eat("%")) {
            (Some(v), true) => Some(v / 100.0),
            _ => {
                self.pos = save;
                None
            }
        }
    }

    fn done(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

fn clarify(phrase: impl Into<String>, candidates: &[&str]) -> IntentOutcome {
    IntentOutcome::Clarify(ClarificationRequest {
        ambiguous_phrase: phrase.into(),
        candidate_interpretations: candidates.iter().map(|s| s.to_string()).collect(),
    })
}

fn unsupported(raw: &str) -> IntentOutcome {
    clarify(
        raw.trim(),
        &[
            "predict congestion (monitor only)",
            "predict congestion and reserve 20% PRBs for edge users",
        ],
    )
}

/// Parse an intent. Pure: the result depends only on the text.
pub fn parse_intent(text: &IntentText) -> IntentOutcome {
    let raw = text.as_str();
    let toks = tokenize(raw);
    let mut cur = Cursor { toks: &toks, pos: 0 };

    if cur.eat_any(&["predict", "detect"]).is_none() {
        if let Some(goal) = toks.iter().find(|t| AMBIGUOUS_GOALS.contains(&t.as_str())) {
            let phrase = toks.iter().skip_while(|t| *t != goal).cloned().collect::<Vec<_>>().join(" ");
            return clarify(
                phrase,
                &[
                    "congestion: predict congestion and reserve PRBs for the affected users",
                    "interference: detect and mitigate inter-cell interference",
                    "handover: prevent handover failures at the cell edge",
                ],
            );
        }
        return unsupported(raw);
    }
    cur.eat_any(&["cell-edge", "cell"]);
    if !cur.eat("congestion") {
        return unsupported(raw);
    }

    let mut spec = ProvisioningSpec::monitor_only();
    let mut seen_action = false;
    let mut seen_threshold = false;
    let mut seen_budget = false;

    while !cur.done() {
        cur.eat("and");
        if cur.eat("reserve") {
            if seen_action {
                return unsupported(raw);
            }
            seen_action = true;
            let Some(fraction) = cur.percent() else {
                return clarify(
                    "reserve PRBs",
                    &[
                        "reserve 10% PRBs for edge users",
                        "reserve 20% PRBs for edge users",
                        "reserve 30% PRBs for edge users",
                    ],
                );
            };
            cur.eat("of");
            let unit = cur.eat_any(&["prb", "prbs"]).is_some()
                || (cur.eat("physical") && cur.eat("resource") && cur.eat_any(&["blocks", "block"]).is_some());
            if !unit {
                return unsupported(raw);
            }
            if !cur.eat("for") {
                return clarify(
                    "reserve PRBs for whom",
                    &["for edge users", "for center users", "for all users"],
                );
            }
            let target = match cur.eat_any(&["edge", "cell-edge", "center", "cell-center", "all"]) {
                Some("edge" | "cell-edge") => TargetClass::Edge,
                Some("center" | "cell-center") => TargetClass::Center,
                Some(_) => TargetClass::All,
                None => return unsupported(raw),
            };
            if cur.eat_any(&["users", "ues", "user", "ue"]).is_none() {
                return unsupported(raw);
            }
            spec.action = Some(ActionSpec { kind: ActionType::ReservePrb, fraction, target_class: target });
        } else if cur.eat("with") {
            cur.eat("a");
            let (Some(thr), true) = (cur.percent(), cur.eat("threshold")) else {
                return unsupported(raw);
            };
            if seen_threshold {
                return unsupported(raw);
            }
            seen_threshold = true;
            spec.label_rule.threshold_fraction = thr;
        } else if cur.eat("within") {
            let (Some(ms), true) = (cur.number(), cur.eat("ms")) else {
                return unsupported(raw);
            };
            if seen_budget {
                return unsupported(raw);
            }
            seen_budget = true;
            spec.latency_budget_ms = ms;
        } else {
            return unsupported(raw);
        }
    }
    IntentOutcome::Spec(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intent::{defaults, Metric};
    use proptest::prelude::*;

    fn parse(s: &str) -> IntentOutcome {
        parse_intent(&IntentText::new(s).unwrap())
    }

    fn spec(s: &str) -> ProvisioningSpec {
        match parse(s) {
            IntentOutcome::Spec(spec) => spec,
            other => panic!("expected spec for {s:?}, got {other:?}"),
        }
    }

    #[test]
    fn demo_intent() {
        let s = spec("predict congestion and reserve 20% PRBs for edge users");
        assert_eq!(s, ProvisioningSpec::demo());
        assert_eq!(s.label_rule.threshold_fraction, 0.80);
        let action = s.action.unwrap();
        assert_eq!((action.fraction, action.target_class), (0.20, TargetClass::Edge));
    }

    #[test]
    fn minimal_intent_is_monitor_only_with_defaults() {
        let s = spec("predict congestion");
        assert!(s.action.is_none());
        assert_eq!(s.label_rule.horizon_intervals, defaults::HORIZON_INTERVALS);
        assert_eq!(s.latency_budget_ms, 10.0);
        assert_eq!(s.metrics.iter().copied().collect::<Vec<_>>(), vec![Metric::PrbAllocation, Metric::Snr]);
    }

    #[test]
    fn protect_edge_users_asks_for_clarification() {
        let IntentOutcome::Clarify(req) = parse("protect cell-edge users") else {
            panic!("expected clarification");
        };
        assert_eq!(req.ambiguous_phrase, "protect cell-edge users");
        let joined = req.candidate_interpretations.join("|");
        for topic in ["congestion", "interference", "handover"] {
            assert!(joined.contains(topic), "{joined}");
        }
    }

    #[test]
    fn case_punctuation_and_modifiers() {
        let s = spec("Detect cell-edge congestion, and reserve 15 % of physical resource blocks for cell-edge UEs within 5 ms.");
        assert_eq!(s.action.unwrap().fraction, 0.15);
        assert_eq!(s.latency_budget_ms, 5.0);
        let s = spec("predict congestion with a 85% threshold");
        assert_eq!(s.label_rule.threshold_fraction, 0.85);
    }

    #[test]
    fn incomplete_action_clauses_clarify() {
        assert!(matches!(parse("predict congestion and reserve PRBs"), IntentOutcome::Clarify(_)));
        assert!(matches!(parse("predict congestion and reserve 20% PRBs"), IntentOutcome::Clarify(_)));
        assert!(matches!(parse("predict congestion and reserve 20% PRBs for martians"), IntentOutcome::Clarify(_)));
        assert!(matches!(parse("reduce congestion"), IntentOutcome::Clarify(_)));
        assert!(matches!(parse("predict congestion tomorrow"), IntentOutcome::Clarify(_)));
    }

    #[test]
    fn out_of_range_values_parse_but_fail_validation() {
        let s = spec("predict congestion and reserve 90% PRBs for edge users");
        assert!(crate::intent::validate_spec(s).is_err());
    }

    proptest! {
        // Strings without the task keywords never produce a spec.
        #[test]
        fn no_guessing(s in "[a-z ,.%0-9-]{1,60}") {
            prop_assume!(!s.trim().is_empty());
            prop_assume!(!s.contains("predict") && !s.contains("detect"));
            let out = parse(&s);
            prop_assert!(matches!(out, IntentOutcome::Clarify(ref c) if c.candidate_interpretations.len() >= 2));
        }

        #[test]
        fn parser_is_pure(s in "[a-zA-Z %0-9]{1,60}") {
            prop_assume!(!s.trim().is_empty());
            prop_assert_eq!(parse(&s), parse(&s));
        }
    }
}
