mod common;

use std::time::Instant;

use proptest::prelude::*;

use orchestra::baselines::optimal_value;
use orchestra::domain::{TagDim, TagValue, TagVector};
use orchestra::sim::{BetaShape, Modifier, ToolSpec};

fn rate(t: &ToolSpec, fake: bool, tags: &TagVector) -> f64 {
    let mut r = if fake { t.base_tpr } else { t.base_tnr };
    for m in &t.modifiers {
        if tags.get(m.tag.dim) == m.tag.value {
            r += m.delta;
        }
    }
    r.clamp(0.01, 0.99)
}

/// Accuracy of the posterior-threshold rule after calling every tool,
/// summed over all 2^M verdict patterns.
fn brute_force(registry: &[ToolSpec], tags: &TagVector, p_fake: f64) -> f64 {
    let m = registry.len();
    let mut total = 0.0;
    for pattern in 0..1u32 << m {
        let (mut pf, mut pr) = (p_fake, 1.0 - p_fake);
        for (i, t) in registry.iter().enumerate() {
            let says_fake = pattern >> i & 1 == 1;
            let tpr = rate(t, true, tags);
            let tnr = rate(t, false, tags);
            pf *= if says_fake { tpr } else { 1.0 - tpr };
            pr *= if says_fake { 1.0 - tnr } else { tnr };
        }
        total += pf.max(pr);
    }
    total
}

fn all_cells(sizes: [usize; 3]) -> Vec<TagVector> {
    let mut v = Vec::new();
    for a in 0..sizes[0] {
        for b in 0..sizes[1] {
            for c in 0..sizes[2] {
                v.push(TagVector::new(a as u8, b as u8, c as u8));
            }
        }
    }
    v
}

#[test]
fn backward_induction_matches_enumeration_on_the_complement_scenario() {
    let scenario = common::complement();
    let registry = scenario.registry(None).unwrap();
    let p = scenario.config.p_fake;
    let start = Instant::now();
    let cells = all_cells(scenario.schema().sizes());
    assert_eq!(cells.len(), 36);
    for tags in &cells {
        let dp = optimal_value(&registry, tags, p, 0.0).unwrap().value;
        let bf = brute_force(&registry, tags, p);
        assert!((dp - bf).abs() < 1e-12, "{tags:?}: {dp} vs {bf}");
    }
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

fn tool(id: usize, tpr: f64, tnr: f64, modifiers: Vec<Modifier>) -> ToolSpec {
    ToolSpec {
        tool_id: id,
        stream_id: id as u64,
        name: format!("t{id}"),
        base_tpr: tpr,
        base_tnr: tnr,
        modifiers,
        emits_confidence: false,
        conf_correct: BetaShape::CORRECT_DEFAULT,
        conf_incorrect: BetaShape::INCORRECT_DEFAULT,
    }
}

fn arb_registry() -> impl Strategy<Value = Vec<ToolSpec>> {
    let modifier = (0usize..3, 0u8..3, -0.4f64..0.4).prop_map(|(d, v, delta)| Modifier {
        tag: TagValue::new(TagDim::ALL[d], v),
        delta,
    });
    prop::collection::vec((0.3f64..1.0, 0.3f64..1.0, prop::collection::vec(modifier, 0..3)), 0..6)
        .prop_map(|ts| {
            ts.into_iter()
                .enumerate()
                .map(|(i, (tpr, tnr, mods))| tool(i, tpr, tnr, mods))
                .collect()
        })
}

proptest! {
    #[test]
    fn free_calls_reach_the_enumerated_value(
        registry in arb_registry(),
        p in 0.0f64..=1.0,
        tags in (0u8..3, 0u8..3, 0u8..3),
    ) {
        let tags = TagVector::new(tags.0, tags.1, tags.2);
        let dp = optimal_value(&registry, &tags, p, 0.0).unwrap().value;
        prop_assert!((dp - brute_force(&registry, &tags, p)).abs() < 1e-12);
    }

    #[test]
    fn costly_calls_lie_between_prior_and_free_value(
        registry in arb_registry(),
        p in 0.0f64..=1.0,
        cost in 0.0f64..0.3,
    ) {
        let tags = TagVector::new(0, 0, 0);
        let v = optimal_value(&registry, &tags, p, cost).unwrap().value;
        prop_assert!(v >= p.max(1.0 - p) - 1e-12);
        prop_assert!(v <= brute_force(&registry, &tags, p) + 1e-12);
    }
}
